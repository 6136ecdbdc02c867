//! Single-file checkpoint: a magic string, a JSON header (model config,
//! vocabulary, label names), then named parameter blocks of row-major
//! 64-bit floats. Writing is fully deterministic.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{BaseModelParams, ConvBank, ModelConfig, NoiseLayer};
use crate::text::{LabelMap, Vocab};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"LNCKPT1\n";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Vec<String>,
    labels: Vec<String>,
    has_noise: bool,
}

#[derive(Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub labels: LabelMap,
    pub params: BaseModelParams,
    pub noise: Option<NoiseLayer>,
}

pub fn save_checkpoint(
    path: &Path,
    config: &ModelConfig,
    vocab: &Vocab,
    labels: &LabelMap,
    params: &BaseModelParams,
    noise: Option<&NoiseLayer>,
) -> Result<()> {
    let header = Header {
        config: config.clone(),
        vocab: vocab.tokens().to_vec(),
        labels: labels.names().to_vec(),
        has_noise: noise.is_some(),
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| Error::Checkpoint(format!("header serialization: {}", e)))?;

    let mut blocks: Vec<(String, usize, usize, &[f64])> = Vec::new();
    blocks.push((
        "embedding".into(),
        params.embedding.rows(),
        params.embedding.cols(),
        params.embedding.as_slice(),
    ));
    for (i, bank) in params.banks.iter().enumerate() {
        blocks.push((
            format!("conv{}.filters", i),
            bank.filters.rows(),
            bank.filters.cols(),
            bank.filters.as_slice(),
        ));
        blocks.push((format!("conv{}.bias", i), bank.bias.len(), 1, &bank.bias));
    }
    blocks.push((
        "dense.w".into(),
        params.dense_w.rows(),
        params.dense_w.cols(),
        params.dense_w.as_slice(),
    ));
    blocks.push(("dense.b".into(), params.dense_b.len(), 1, &params.dense_b));
    if let Some(n) = noise {
        blocks.push((
            "noise.psi".into(),
            n.psi.rows(),
            n.psi.cols(),
            n.psi.as_slice(),
        ));
    }

    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    w.write_all(&(blocks.len() as u64).to_le_bytes())?;
    for (name, rows, cols, data) in blocks {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u64).to_le_bytes())?;
        w.write_all(name_bytes)?;
        w.write_all(&(rows as u64).to_le_bytes())?;
        w.write_all(&(cols as u64).to_le_bytes())?;
        for v in data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint(format!("{}: too short for magic", path.display())))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: bad magic, not a checkpoint",
            path.display()
        )));
    }
    let header_len = read_u64(&mut r)? as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)?;
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Checkpoint(format!("header parse: {}", e)))?;

    let n_blocks = read_u64(&mut r)? as usize;
    let mut blocks: Vec<(String, Matrix)> = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        let name_len = read_u64(&mut r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Checkpoint("block name is not UTF-8".into()))?;
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        let mut data = vec![0.0f64; rows * cols];
        for v in &mut data {
            let mut buf = [0u8; 8];
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        blocks.push((name, Matrix::from_vec(rows, cols, data)?));
    }

    let take = |name: &str, blocks: &mut Vec<(String, Matrix)>| -> Result<Matrix> {
        let pos = blocks
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing block {:?}", name)))?;
        Ok(blocks.remove(pos).1)
    };

    let config = header.config;
    config.validate()?;
    let mut blocks = blocks;
    let embedding = take("embedding", &mut blocks)?;
    if embedding.rows() != header.vocab.len() || embedding.cols() != config.d {
        return Err(Error::Checkpoint(format!(
            "embedding block is {}x{}, header wants {}x{}",
            embedding.rows(),
            embedding.cols(),
            header.vocab.len(),
            config.d
        )));
    }
    let mut banks = Vec::with_capacity(config.windows.len());
    for (i, &width) in config.windows.iter().enumerate() {
        let filters = take(&format!("conv{}.filters", i), &mut blocks)?;
        let bias = take(&format!("conv{}.bias", i), &mut blocks)?;
        if filters.rows() != config.feature_maps || filters.cols() != config.d * width {
            return Err(Error::Checkpoint(format!("conv{} filter shape mismatch", i)));
        }
        banks.push(ConvBank {
            width,
            filters,
            bias: bias.as_slice().to_vec(),
        });
    }
    let dense_w = take("dense.w", &mut blocks)?;
    let dense_b = take("dense.b", &mut blocks)?.as_slice().to_vec();
    if dense_w.rows() != config.k || dense_w.cols() != config.feature_dim() || dense_b.len() != config.k
    {
        return Err(Error::Checkpoint("dense block shape mismatch".into()));
    }
    if header.labels.len() != config.k {
        return Err(Error::Checkpoint(format!(
            "{} label names for k={}",
            header.labels.len(),
            config.k
        )));
    }
    let noise = if header.has_noise {
        let psi = take("noise.psi", &mut blocks)?;
        if psi.rows() != config.k || psi.cols() != config.k {
            return Err(Error::Checkpoint("noise.psi shape mismatch".into()));
        }
        Some(NoiseLayer {
            psi,
            init_mode: config.noise_init,
            gain: config.gain,
        })
    } else {
        None
    };

    let params = BaseModelParams {
        embedding,
        banks,
        dense_w,
        dense_b,
        dropout_keep: config.dropout_keep,
    };
    Ok(Checkpoint {
        config,
        vocab: Vocab::from_tokens(header.vocab),
        labels: LabelMap::from_names(header.labels),
        params,
        noise,
    })
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Checkpoint("truncated checkpoint".into()))?;
    Ok(u64::from_le_bytes(buf))
}
