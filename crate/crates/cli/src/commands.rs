//! Command implementations behind the CLI binary. Each command is a pure
//! function of (inputs, flags, seed): reruns produce byte-identical
//! artifacts, and partial outputs are removed on failure.

use crate::config::{DataConfig, ExperimentConfig, NoiseSpecKind};
use crate::output::OutGuard;
use anyhow::{anyhow, bail, Result};
use labelnoise_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use labelnoise_core::matrix::Matrix;
use labelnoise_core::model::{
    init_noise_layer, response_matrix, BaseModelParams, ModelConfig, NoiseLayer,
};
use labelnoise_core::noise::{
    build_custom_noise, build_random_noise, build_uniform_noise, frobenius_norm, matrix_to_csv,
    pearson, read_matrix_csv, sample_noisy_labels, TransitionMatrix,
};
use labelnoise_core::probe::linear_probe;
use labelnoise_core::rng::{stream, stream_indexed, Rng, Stream};
use labelnoise_core::text::{
    encode_dataset, init_embeddings, length_percentile, load_tsv, make_synthetic_corpus,
    write_tsv, LabelMap, LabeledDataset, RawExample, Split, SyntheticSpec, Vocab,
};
use labelnoise_core::train::{
    evaluate_clean, extract_features, train, FeatureKind, RunRecord, TrainConfig, TrainStreams,
};
use serde::Serialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

// ---------------------------------------------------------------------------
// corrupt

#[derive(Debug, Clone)]
pub struct NoiseCliSpec {
    pub kind: NoiseSpecKind,
    pub p: Option<f64>,
    pub k: Option<usize>,
    pub matrix: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct CorruptReport {
    pub examples: usize,
    pub flips: usize,
    pub flip_fraction: f64,
    pub out: PathBuf,
    pub phi_csv: PathBuf,
}

/// Draws noisy labels for a 2-column TSV and writes the 3-column result
/// plus the exact transition matrix used.
pub fn cmd_corrupt(
    input: &Path,
    spec: &NoiseCliSpec,
    seed: u64,
    out: &Path,
) -> Result<CorruptReport> {
    let examples = load_tsv(input)?;
    if examples.iter().any(|e| e.noisy_label.is_some()) {
        bail!(
            "{}: already a 3-column corrupted file",
            input.display()
        );
    }
    let labels = LabelMap::from_examples(&examples);
    let k = labels.len();
    if let Some(flag_k) = spec.k {
        if flag_k != k {
            bail!(
                "--k {} does not match the {} labels found in {}",
                flag_k,
                k,
                input.display()
            );
        }
    }
    let mut rng = stream(seed, Stream::Corruption);
    let phi = build_phi(spec, k, &mut rng)?;

    let clean: Vec<usize> = examples
        .iter()
        .map(|e| labels.get(&e.label).expect("label interned"))
        .collect();
    let noisy = sample_noisy_labels(&clean, &phi, &mut rng)?;
    let flips = clean.iter().zip(noisy.iter()).filter(|(a, b)| a != b).count();

    let corrupted: Vec<RawExample> = examples
        .iter()
        .zip(noisy.iter())
        .map(|(e, &n)| RawExample {
            label: e.label.clone(),
            noisy_label: Some(labels.name(n).to_string()),
            text: e.text.clone(),
        })
        .collect();

    let phi_csv = out.with_extension("phi.csv");
    let mut guard = OutGuard::new();
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    write_tsv(out, &corrupted)?;
    guard.track(out);
    phi.write_csv(&phi_csv)?;
    guard.track(&phi_csv);
    guard.commit();

    Ok(CorruptReport {
        examples: examples.len(),
        flips,
        flip_fraction: flips as f64 / examples.len() as f64,
        out: out.to_path_buf(),
        phi_csv,
    })
}

fn build_phi(spec: &NoiseCliSpec, k: usize, rng: &mut Rng) -> Result<TransitionMatrix> {
    match spec.kind {
        NoiseSpecKind::Uniform => {
            let p = spec.p.ok_or_else(|| anyhow!("--p is required for uniform noise"))?;
            Ok(build_uniform_noise(k, p)?)
        }
        NoiseSpecKind::Random => {
            let p = spec.p.ok_or_else(|| anyhow!("--p is required for random noise"))?;
            Ok(build_random_noise(k, p, rng)?)
        }
        NoiseSpecKind::Custom => {
            let path = spec
                .matrix
                .as_ref()
                .ok_or_else(|| anyhow!("--matrix is required for custom noise"))?;
            let entries = read_matrix_csv(path)?;
            if entries.rows() != k {
                bail!(
                    "{}: matrix is {}x{} but the data has {} labels",
                    path.display(),
                    entries.rows(),
                    entries.cols(),
                    k
                );
            }
            let (phi, renormalized) = build_custom_noise(&entries)?;
            if renormalized {
                eprintln!(
                    "warning: {}: columns renormalized to sum to 1",
                    path.display()
                );
            }
            Ok(phi)
        }
    }
}

// ---------------------------------------------------------------------------
// make-synthetic

#[derive(Debug, Serialize)]
pub struct SyntheticPaths {
    pub train: PathBuf,
    pub dev: PathBuf,
    pub test: PathBuf,
}

pub fn cmd_make_synthetic(spec: &SyntheticSpec, seed: u64, out_dir: &Path) -> Result<SyntheticPaths> {
    let mut rng = stream(seed, Stream::Synthetic);
    let corpus = make_synthetic_corpus(spec, &mut rng)?;
    std::fs::create_dir_all(out_dir)?;
    let paths = SyntheticPaths {
        train: out_dir.join("train.tsv"),
        dev: out_dir.join("dev.tsv"),
        test: out_dir.join("test.tsv"),
    };
    let mut guard = OutGuard::new();
    write_tsv(&paths.train, &corpus.train)?;
    guard.track(&paths.train);
    write_tsv(&paths.dev, &corpus.dev)?;
    guard.track(&paths.dev);
    write_tsv(&paths.test, &corpus.test)?;
    guard.track(&paths.test);
    guard.commit();
    Ok(paths)
}

// ---------------------------------------------------------------------------
// train

#[derive(Debug, Serialize)]
pub struct TrainSummary {
    pub variant: String,
    pub master_seed: u64,
    pub repeats: usize,
    pub test_acc: Vec<f64>,
    pub mean_test_acc: f64,
    pub std_test_acc: f64,
}

#[derive(Debug)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub test_acc: f64,
    pub record: RunRecord,
    pub checkpoint: PathBuf,
}

#[derive(Debug)]
pub struct TrainArtifacts {
    pub out_dir: PathBuf,
    pub runs: Vec<RunArtifacts>,
    pub summary: TrainSummary,
}

struct PreparedData {
    labels: LabelMap,
    vocab: Vocab,
    t_fixed: usize,
    train: LabeledDataset,
    dev: LabeledDataset,
    test: LabeledDataset,
    embeddings_path: Option<PathBuf>,
    precorrupted: bool,
}

fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let (raw_train, raw_dev, raw_test, embeddings_path, min_count, default_t) = match &cfg.data {
        DataConfig::Synthetic(spec) => {
            let mut rng = stream(cfg.seed, Stream::Synthetic);
            let corpus = make_synthetic_corpus(spec, &mut rng)?;
            (
                corpus.train,
                corpus.dev,
                corpus.test,
                None,
                1,
                Some(spec.sentence_len),
            )
        }
        DataConfig::Files {
            train,
            dev,
            test,
            embeddings,
            min_count,
        } => (
            load_tsv(train)?,
            load_tsv(dev)?,
            load_tsv(test)?,
            embeddings.clone(),
            *min_count,
            None,
        ),
    };

    let labels = LabelMap::from_examples(&raw_train);
    if labels.len() < 2 {
        bail!("training data holds a single label");
    }
    let t_fixed = cfg
        .t_fixed
        .or(default_t)
        .unwrap_or_else(|| length_percentile(&raw_train, 0.95));
    let vocab = Vocab::build(raw_train.iter().map(|e| e.text.as_str()), min_count)?;

    let train = encode_dataset(&raw_train, &labels, &vocab, t_fixed, Split::Train)?;
    let dev = encode_dataset(&raw_dev, &labels, &vocab, t_fixed, Split::Dev)?;
    let test = encode_dataset(&raw_test, &labels, &vocab, t_fixed, Split::Test)?;

    let precorrupted = train.has_noisy_labels();
    if precorrupted != dev.has_noisy_labels() {
        bail!("train and dev files disagree on noisy-label columns");
    }
    if precorrupted && cfg.noise.is_some() {
        bail!("input files are already corrupted; drop the [noise] section");
    }
    Ok(PreparedData {
        labels,
        vocab,
        t_fixed,
        train,
        dev,
        test,
        embeddings_path,
        precorrupted,
    })
}

fn corruption_for_repeat(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    repeat: u64,
) -> Result<(LabeledDataset, LabeledDataset, Option<TransitionMatrix>)> {
    let k = data.labels.len();
    match &cfg.noise {
        Some(section) => {
            let mut rng = stream_indexed(cfg.seed, Stream::Corruption, repeat);
            let spec = NoiseCliSpec {
                kind: section.kind,
                p: section.p,
                k: Some(k),
                matrix: section.matrix.clone(),
            };
            let phi = build_phi(&spec, k, &mut rng)?;
            let train = labelnoise_core::noise::corrupt_labels(&data.train, &phi, &mut rng)?;
            let dev = labelnoise_core::noise::corrupt_labels(&data.dev, &phi, &mut rng)?;
            Ok((train, dev, Some(phi)))
        }
        None if data.precorrupted => Ok((data.train.clone(), data.dev.clone(), None)),
        None => {
            // Clean training: the loss still reads the noisy slot.
            let mut train = data.train.clone();
            let mut dev = data.dev.clone();
            for s in train.sentences.iter_mut().chain(dev.sentences.iter_mut()) {
                s.noisy_label = Some(s.label);
            }
            Ok((train, dev, None))
        }
    }
}

pub fn cmd_train(cfg: &ExperimentConfig, out_dir: &Path) -> Result<TrainArtifacts> {
    let data = prepare_data(cfg)?;
    let k = data.labels.len();
    let gain = cfg.gain.unwrap_or(k as f64);
    let model_cfg = ModelConfig {
        d: cfg.d,
        t_fixed: data.t_fixed,
        windows: cfg.windows.clone(),
        feature_maps: cfg.feature_maps,
        k,
        dropout_keep: cfg.dropout_keep,
        lambda: cfg.lambda,
        noise_init: cfg.variant.noise_init(),
        gain,
    };
    model_cfg.validate()?;
    let train_cfg = TrainConfig {
        optimizer: cfg.optimizer,
        batch_size: cfg.batch_size,
        max_epochs: cfg.max_epochs,
        patience: cfg.patience,
    };
    train_cfg.validate()?;

    std::fs::create_dir_all(out_dir)?;
    let mut guard = OutGuard::new();
    guard.write_str(&out_dir.join("config.ini"), &cfg.to_config_string())?;

    let mut runs = Vec::with_capacity(cfg.repeats);
    for r in 0..cfg.repeats as u64 {
        let rep_dir = if cfg.repeats == 1 {
            out_dir.to_path_buf()
        } else {
            out_dir.join(format!("rep{}", r))
        };
        std::fs::create_dir_all(&rep_dir)?;

        let (train_set, dev_set, phi) = corruption_for_repeat(cfg, &data, r)?;

        let mut init_rng = stream_indexed(cfg.seed, Stream::Init, r);
        let embedding = init_embeddings(
            &data.vocab,
            cfg.d,
            data.embeddings_path.as_deref(),
            &mut init_rng,
        )?;
        let params = BaseModelParams::init(&model_cfg, embedding, &mut init_rng)?;
        let noise_layer: Option<NoiseLayer> = if cfg.variant.uses_noise_layer() {
            Some(init_noise_layer(
                k,
                model_cfg.noise_init,
                gain,
                phi.as_ref(),
                &mut init_rng,
            )?)
        } else {
            None
        };

        let mut streams = TrainStreams {
            shuffle: stream_indexed(cfg.seed, Stream::Shuffle, r),
            dropout: stream_indexed(cfg.seed, Stream::Dropout, r),
        };
        let outcome = train(
            &train_set,
            &dev_set,
            Some(&data.test),
            params,
            noise_layer,
            &model_cfg,
            &train_cfg,
            &mut streams,
        )?;
        let test_acc = evaluate_clean(&data.test, &outcome.params)?;

        guard.write_str(&rep_dir.join("metrics.jsonl"), &outcome.record.to_jsonl())?;
        let ckpt_path = rep_dir.join("checkpoint.bin");
        save_checkpoint(
            &ckpt_path,
            &model_cfg,
            &data.vocab,
            &data.labels,
            &outcome.params,
            outcome.noise.as_ref(),
        )?;
        guard.track(&ckpt_path);
        if let Some(nl) = &outcome.noise {
            guard.write_str(&rep_dir.join("psi.csv"), &matrix_to_csv(&nl.psi))?;
        }
        if let Some(phi) = &phi {
            guard.write_str(&rep_dir.join("phi.csv"), &matrix_to_csv(phi.phi()))?;
        }
        let features = extract_features(&train_set, &outcome.params, FeatureKind::Pooled)?;
        guard.write_str(
            &rep_dir.join("features.csv"),
            &features_csv(&features, &train_set),
        )?;

        runs.push(RunArtifacts {
            dir: rep_dir,
            test_acc,
            record: outcome.record,
            checkpoint: ckpt_path,
        });
    }

    let accs: Vec<f64> = runs.iter().map(|r| r.test_acc).collect();
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    let var = accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / accs.len() as f64;
    let summary = TrainSummary {
        variant: cfg.variant.as_str().to_string(),
        master_seed: cfg.seed,
        repeats: cfg.repeats,
        test_acc: accs,
        mean_test_acc: mean,
        std_test_acc: var.sqrt(),
    };
    guard.write_str(
        &out_dir.join("summary.json"),
        &format!("{}\n", serde_json::to_string_pretty(&summary)?),
    )?;
    guard.commit();

    Ok(TrainArtifacts {
        out_dir: out_dir.to_path_buf(),
        runs,
        summary,
    })
}

fn features_csv(features: &Matrix, dataset: &LabeledDataset) -> String {
    let mut s = String::new();
    s.push_str("clean_label,noisy_label");
    for j in 0..features.cols() {
        let _ = write!(s, ",f{}", j);
    }
    s.push('\n');
    for (i, sent) in dataset.sentences.iter().enumerate() {
        let noisy = sent
            .noisy_label
            .map(|n| n.to_string())
            .unwrap_or_else(|| sent.label.to_string());
        let _ = write!(s, "{},{}", sent.label, noisy);
        for v in features.row(i) {
            let _ = write!(s, ",{}", v);
        }
        s.push('\n');
    }
    s
}

// ---------------------------------------------------------------------------
// eval

#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub test_acc: f64,
    pub examples: usize,
}

pub fn cmd_eval(checkpoint: &Path, test: &Path) -> Result<EvalReport> {
    let ckpt = load_checkpoint(checkpoint)?;
    let test_set = encode_test_set(&ckpt, test)?;
    let test_acc = evaluate_clean(&test_set, &ckpt.params)?;
    Ok(EvalReport {
        test_acc,
        examples: test_set.len(),
    })
}

fn encode_test_set(ckpt: &Checkpoint, test: &Path) -> Result<LabeledDataset> {
    let raw = load_tsv(test)?;
    for e in &raw {
        if ckpt.labels.get(&e.label).is_none() {
            bail!(
                "{}: label {:?} not in the checkpoint's {} classes",
                test.display(),
                e.label,
                ckpt.labels.len()
            );
        }
    }
    Ok(encode_dataset(
        &raw,
        &ckpt.labels,
        &ckpt.vocab,
        ckpt.config.t_fixed,
        Split::Test,
    )?)
}

// ---------------------------------------------------------------------------
// inspect-noise

#[derive(Debug)]
pub struct InspectReport {
    pub psi_fro: f64,
    pub psi_csv: String,
    pub response_csv: String,
    pub pearson_with_true: Option<f64>,
}

pub fn cmd_inspect_noise(checkpoint: &Path, true_matrix: Option<&Path>) -> Result<InspectReport> {
    let ckpt = load_checkpoint(checkpoint)?;
    let noise = ckpt
        .noise
        .as_ref()
        .ok_or_else(|| anyhow!("{}: no noise layer in this checkpoint", checkpoint.display()))?;
    let response = response_matrix(&noise.psi)?;
    let pearson_with_true = match true_matrix {
        Some(path) => {
            let phi = TransitionMatrix::read_csv(path)?;
            Some(pearson(&response, phi.phi())?)
        }
        None => None,
    };
    Ok(InspectReport {
        psi_fro: frobenius_norm(&noise.psi),
        psi_csv: matrix_to_csv(&noise.psi),
        response_csv: matrix_to_csv(&response),
        pearson_with_true,
    })
}

// ---------------------------------------------------------------------------
// probe

#[derive(Debug, Serialize)]
pub struct ProbeReport {
    pub a_noisy: f64,
    pub a_true: f64,
    pub b_noisy: f64,
    pub b_true: f64,
}

impl ProbeReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("model,targets,accuracy\n");
        let _ = writeln!(s, "a,noisy,{}", self.a_noisy);
        let _ = writeln!(s, "a,true,{}", self.a_true);
        let _ = writeln!(s, "b,noisy,{}", self.b_noisy);
        let _ = writeln!(s, "b,true,{}", self.b_true);
        s
    }
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_probe(
    checkpoint_a: &Path,
    checkpoint_b: &Path,
    train_path: &Path,
    test_path: &Path,
    kind: FeatureKind,
    c: f64,
    epochs: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<ProbeReport> {
    let a = load_checkpoint(checkpoint_a)?;
    let b = load_checkpoint(checkpoint_b)?;
    if a.vocab.tokens() != b.vocab.tokens() || a.labels.names() != b.labels.names() {
        bail!("checkpoints were trained on different vocabularies or label sets");
    }
    let raw_train = load_tsv(train_path)?;
    if raw_train.iter().any(|e| e.noisy_label.is_none()) {
        bail!(
            "{}: probe needs the 3-column corrupted training file (clean, noisy, text)",
            train_path.display()
        );
    }
    let train_set = encode_dataset(
        &raw_train,
        &a.labels,
        &a.vocab,
        a.config.t_fixed,
        Split::Train,
    )?;
    let test_set = encode_test_set(&a, test_path)?;

    let noisy_targets: Vec<usize> = train_set
        .sentences
        .iter()
        .map(|s| s.noisy_label.expect("checked above"))
        .collect();
    let true_targets: Vec<usize> = train_set.sentences.iter().map(|s| s.label).collect();
    let test_targets: Vec<usize> = test_set.sentences.iter().map(|s| s.label).collect();

    std::fs::create_dir_all(out_dir)?;
    let mut guard = OutGuard::new();
    let cell = |ckpt: &Checkpoint, targets: &[usize]| -> Result<f64> {
        let train_feats = extract_features(&train_set, &ckpt.params, kind)?;
        let test_feats = extract_features(&test_set, &ckpt.params, kind)?;
        // Every cell replays the same probe stream so identical checkpoints
        // give identical rows.
        let mut rng = stream(seed, Stream::Probe);
        Ok(linear_probe(
            &train_feats,
            targets,
            &test_feats,
            &test_targets,
            c,
            epochs,
            &mut rng,
        )?)
    };
    let report = ProbeReport {
        a_noisy: cell(&a, &noisy_targets)?,
        a_true: cell(&a, &true_targets)?,
        b_noisy: cell(&b, &noisy_targets)?,
        b_true: cell(&b, &true_targets)?,
    };

    let feats_a = extract_features(&train_set, &a.params, kind)?;
    guard.write_str(&out_dir.join("features_a.csv"), &features_csv(&feats_a, &train_set))?;
    let feats_b = extract_features(&train_set, &b.params, kind)?;
    guard.write_str(&out_dir.join("features_b.csv"), &features_csv(&feats_b, &train_set))?;
    guard.write_str(&out_dir.join("probe.csv"), &report.to_csv())?;
    guard.commit();
    Ok(report)
}
