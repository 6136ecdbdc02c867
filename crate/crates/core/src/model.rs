//! The base text classifier (embedding → temporal convolutions → ReLU →
//! max-over-time → dropout → dense → softmax) and the noise-adaptation
//! layer stacked on top of its probability output. Training optimizes the
//! noisy-label cross-entropy plus an L2 penalty on the noise layer; test
//! time drops the noise layer and reads the base output directly.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::noise::TransitionMatrix;
use crate::ops;
use crate::rng::Rng;
use crate::tape::GradTape;
use crate::text::EncodedSentence;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseInit {
    IdentityGain,
    TrueDistribution,
    Random,
}

impl std::fmt::Display for NoiseInit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NoiseInit::IdentityGain => write!(f, "identity_gain"),
            NoiseInit::TrueDistribution => write!(f, "true_distribution"),
            NoiseInit::Random => write!(f, "random"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d: usize,
    pub t_fixed: usize,
    pub windows: Vec<usize>,
    pub feature_maps: usize,
    pub k: usize,
    pub dropout_keep: f64,
    pub lambda: f64,
    pub noise_init: NoiseInit,
    pub gain: f64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidArg("model needs k >= 2".into()));
        }
        if self.d == 0 || self.feature_maps == 0 || self.windows.is_empty() {
            return Err(Error::InvalidArg(
                "model needs d, feature_maps and windows all nonzero".into(),
            ));
        }
        if self.windows.iter().any(|&w| w == 0 || w > self.t_fixed) {
            return Err(Error::InvalidArg(format!(
                "every window must be in [1, t_fixed={}]",
                self.t_fixed
            )));
        }
        if !(self.dropout_keep > 0.0 && self.dropout_keep <= 1.0) {
            return Err(Error::InvalidArg("dropout keep-probability outside (0, 1]".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::InvalidArg("lambda must be nonnegative".into()));
        }
        if self.noise_init == NoiseInit::IdentityGain && self.gain <= 0.0 {
            return Err(Error::InvalidArg("identity-gain init needs gain > 0".into()));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_maps * self.windows.len()
    }
}

/// One filter bank: `feature_maps` filters of shape d×width, each stored as
/// one row (layout (dim, offset) → dim*width + offset).
#[derive(Debug, Clone)]
pub struct ConvBank {
    pub width: usize,
    pub filters: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BaseModelParams {
    pub embedding: Matrix,
    pub banks: Vec<ConvBank>,
    pub dense_w: Matrix,
    pub dense_b: Vec<f64>,
    pub dropout_keep: f64,
}

impl BaseModelParams {
    /// Filters and dense weights ~ Uniform(−s, s) with
    /// s = sqrt(6 / (fan_in + fan_out)); biases zero. The embedding table
    /// comes in pre-initialized.
    pub fn init(cfg: &ModelConfig, embedding: Matrix, rng: &mut Rng) -> Result<BaseModelParams> {
        cfg.validate()?;
        if embedding.cols() != cfg.d {
            return Err(Error::DimMismatch(format!(
                "embedding has {} dims, config wants {}",
                embedding.cols(),
                cfg.d
            )));
        }
        let f = cfg.feature_maps;
        let mut banks = Vec::with_capacity(cfg.windows.len());
        for &w in &cfg.windows {
            let fan_in = cfg.d * w;
            let s = (6.0 / (fan_in + f) as f64).sqrt();
            let filters = Matrix::from_fn(f, fan_in, |_, _| rng.gen_range(-s..s));
            banks.push(ConvBank {
                width: w,
                filters,
                bias: vec![0.0; f],
            });
        }
        let feat = cfg.feature_dim();
        let s = (6.0 / (feat + cfg.k) as f64).sqrt();
        let dense_w = Matrix::from_fn(cfg.k, feat, |_, _| rng.gen_range(-s..s));
        Ok(BaseModelParams {
            embedding,
            banks,
            dense_w,
            dense_b: vec![0.0; cfg.k],
            dropout_keep: cfg.dropout_keep,
        })
    }

    pub fn k(&self) -> usize {
        self.dense_w.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.dense_w.cols()
    }

    pub fn is_finite(&self) -> bool {
        self.embedding.is_finite()
            && self.dense_w.is_finite()
            && self.dense_b.iter().all(|v| v.is_finite())
            && self
                .banks
                .iter()
                .all(|b| b.filters.is_finite() && b.bias.iter().all(|v| v.is_finite()))
    }
}

/// Trainable K×K matrix mapping base-class probabilities to noisy-label
/// logits (softmax applied on top).
#[derive(Debug, Clone)]
pub struct NoiseLayer {
    pub psi: Matrix,
    pub init_mode: NoiseInit,
    pub gain: f64,
}

/// identity_gain → gain·I; true_distribution → elementwise log(Φ + 1e−12),
/// so a one-hot base output reproduces the matching Φ column through the
/// softmax; random → Uniform(−1/K, 1/K).
pub fn init_noise_layer(
    k: usize,
    mode: NoiseInit,
    gain: f64,
    phi: Option<&TransitionMatrix>,
    rng: &mut Rng,
) -> Result<NoiseLayer> {
    if k < 2 {
        return Err(Error::InvalidArg("noise layer needs k >= 2".into()));
    }
    let psi = match mode {
        NoiseInit::IdentityGain => {
            if gain <= 0.0 {
                return Err(Error::InvalidArg(format!(
                    "identity-gain init needs gain > 0, got {}",
                    gain
                )));
            }
            let mut m = Matrix::identity(k);
            m.scale(gain);
            m
        }
        NoiseInit::TrueDistribution => {
            let phi = phi.ok_or_else(|| {
                Error::InvalidArg("true-distribution init requires the injected noise matrix".into())
            })?;
            if phi.k() != k {
                return Err(Error::DimMismatch(format!(
                    "noise matrix is {}x{}, layer wants {}",
                    phi.k(),
                    phi.k(),
                    k
                )));
            }
            Matrix::from_fn(k, k, |i, j| (phi.phi().get(i, j) + 1e-12).ln())
        }
        NoiseInit::Random => {
            let s = 1.0 / k as f64;
            Matrix::from_fn(k, k, |_, _| rng.gen_range(-s..s))
        }
    };
    Ok(NoiseLayer {
        psi,
        init_mode: mode,
        gain,
    })
}

/// Everything the evaluation-mode forward pass produces.
#[derive(Debug, Clone)]
pub struct ForwardDetail {
    /// Concatenated max-over-time features, the dense layer's input.
    pub pooled: Vec<f64>,
    /// Pre-softmax dense outputs.
    pub logits: Vec<f64>,
    /// Base-model class probabilities.
    pub probs: Vec<f64>,
}

/// Direct (tape-free) forward pass. In training mode one dropout mask is
/// drawn from the rng; evaluation mode is deterministic.
pub fn forward_detail(
    tokens: &[usize],
    params: &BaseModelParams,
    train_mode: bool,
    rng: &mut Rng,
) -> Result<ForwardDetail> {
    let d = params.embedding.cols();
    let t_len = tokens.len();
    if t_len == 0 {
        return Err(Error::EmptyInput("sentence".into()));
    }
    let mut x = Matrix::zeros(d, t_len);
    for (t, &ix) in tokens.iter().enumerate() {
        if ix >= params.embedding.rows() {
            return Err(Error::InvalidArg(format!(
                "token index {} outside vocabulary of {}",
                ix,
                params.embedding.rows()
            )));
        }
        for i in 0..d {
            x.set(i, t, params.embedding.get(ix, i));
        }
    }
    let mut pooled = Vec::with_capacity(params.feature_dim());
    for bank in &params.banks {
        let fm = ops::conv_forward(&x, &bank.filters, &bank.bias, bank.width)?;
        let mut act = fm;
        for v in act.as_mut_slice() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let (maxes, _) = ops::max_over_time(&act)?;
        pooled.extend(maxes);
    }
    let (dropped, _) = ops::dropout_forward(&pooled, params.dropout_keep, train_mode, rng)?;
    let logits = ops::affine_forward(&params.dense_w, &params.dense_b, &dropped)?;
    let probs = ops::softmax(&logits)?;
    Ok(ForwardDetail {
        pooled,
        logits,
        probs,
    })
}

/// Base-model class probabilities p(y | X; Θ).
pub fn forward_base(
    tokens: &[usize],
    params: &BaseModelParams,
    train_mode: bool,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    Ok(forward_detail(tokens, params, train_mode, rng)?.probs)
}

/// softmax(Ψ · p) for an already-computed base probability vector.
pub fn noisy_from_probs(psi: &Matrix, probs: &[f64]) -> Result<Vec<f64>> {
    ops::softmax(&psi.matvec(probs)?)
}

/// The noise layer's softmax response: column j is softmax(Ψ·e_j), the
/// noisy-label distribution produced for a one-hot base output. Columns
/// sum to 1 by construction.
pub fn response_matrix(psi: &Matrix) -> Result<Matrix> {
    let k = psi.rows();
    if psi.cols() != k {
        return Err(Error::DimMismatch(format!(
            "response matrix needs a square Ψ, got {}x{}",
            psi.rows(),
            psi.cols()
        )));
    }
    let mut out = Matrix::zeros(k, k);
    for j in 0..k {
        let onehot: Vec<f64> = (0..k).map(|i| if i == j { 1.0 } else { 0.0 }).collect();
        let col = noisy_from_probs(psi, &onehot)?;
        for i in 0..k {
            out.set(i, j, col[i]);
        }
    }
    Ok(out)
}

/// Noisy-label probabilities: softmax(Ψ · p(y|X;Θ)). Ψ multiplies the base
/// probability vector, not the logits.
pub fn forward_noisy(
    tokens: &[usize],
    params: &BaseModelParams,
    noise: &NoiseLayer,
    train_mode: bool,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let probs = forward_base(tokens, params, train_mode, rng)?;
    noisy_from_probs(&noise.psi, &probs)
}

/// Lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Evaluation-mode base prediction; the noise layer plays no part.
pub fn predict_clean(tokens: &[usize], params: &BaseModelParams) -> Result<usize> {
    let mut rng = crate::rng::stream(0, crate::rng::Stream::Dropout);
    let probs = forward_base(tokens, params, false, &mut rng)?;
    Ok(argmax(&probs))
}

/// Exact class-conditional marginalization Φ · p — the closed-form noisy
/// predictor, kept separate from the learned softmax(Ψ·p) head.
pub fn marginalize_reference(phi: &TransitionMatrix, base_probs: &[f64]) -> Result<Vec<f64>> {
    phi.phi().matvec(base_probs)
}

/// Gradients for every parameter block, shaped like the parameters.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub embedding: Matrix,
    pub banks: Vec<(Matrix, Vec<f64>)>,
    pub dense_w: Matrix,
    pub dense_b: Vec<f64>,
    pub psi: Option<Matrix>,
}

/// Mean noisy-label cross-entropy over the batch plus (λ/2)·‖Ψ‖_F², with
/// gradients for all of Θ and (when stacked) Ψ. The regularizer never
/// touches Θ. Each example consumes one dropout mask in training mode.
pub fn loss(
    batch: &[&EncodedSentence],
    params: &BaseModelParams,
    noise: Option<&NoiseLayer>,
    lambda: f64,
    train_mode: bool,
    dropout_rng: &mut Rng,
) -> Result<(f64, ModelGrads)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("loss batch".into()));
    }
    let mut tape = GradTape::new();
    let emb = tape.leaf_matrix(&params.embedding);
    let bank_nodes: Vec<(usize, crate::tape::NodeId, crate::tape::NodeId)> = params
        .banks
        .iter()
        .map(|b| {
            (
                b.width,
                tape.leaf_matrix(&b.filters),
                tape.leaf_vector(&b.bias),
            )
        })
        .collect();
    let dense_w = tape.leaf_matrix(&params.dense_w);
    let dense_b = tape.leaf_vector(&params.dense_b);
    let psi = noise.map(|n| tape.leaf_matrix(&n.psi));

    let mut example_losses = Vec::with_capacity(batch.len());
    for ex in batch {
        let target = ex.noisy_label.ok_or_else(|| {
            Error::MissingNoisyLabels("training batch requires noisy labels".into())
        })?;
        let x = tape.gather_columns(emb, &ex.tokens)?;
        let mut pools = Vec::with_capacity(bank_nodes.len());
        for &(width, filters, bias) in &bank_nodes {
            let fm = tape.conv(x, filters, bias, width)?;
            let act = tape.relu(fm)?;
            pools.push(tape.max_over_time(act)?);
        }
        let features = tape.concat(&pools)?;
        let kept = tape.dropout(features, params.dropout_keep, train_mode, dropout_rng)?;
        let logits = tape.affine(dense_w, dense_b, kept)?;
        let base_probs = tape.softmax(logits)?;
        let final_probs = match psi {
            Some(psi) => {
                let scores = tape.matvec(psi, base_probs)?;
                tape.softmax(scores)?
            }
            None => base_probs,
        };
        example_losses.push(tape.cross_entropy(final_probs, target)?);
    }
    let mut total = tape.mean_scalars(&example_losses)?;
    if let Some(psi) = psi {
        if lambda != 0.0 {
            let reg = tape.frob_penalty(psi, lambda);
            total = tape.add_scalars(total, reg);
        }
    }

    let value = tape.scalar(total);
    if !value.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    let grads = tape.backward(total)?;
    let banks = params
        .banks
        .iter()
        .zip(bank_nodes.iter())
        .map(|(b, &(_, fid, bid))| {
            (
                grads.matrix(fid, b.filters.rows(), b.filters.cols()),
                grads.vector(bid, b.bias.len()),
            )
        })
        .collect();
    Ok((
        value,
        ModelGrads {
            embedding: grads.matrix(emb, params.embedding.rows(), params.embedding.cols()),
            banks,
            dense_w: grads.matrix(dense_w, params.dense_w.rows(), params.dense_w.cols()),
            dense_b: grads.vector(dense_b, params.dense_b.len()),
            psi: psi.map(|p| grads.matrix(p, params.k(), params.k())),
        },
    ))
}

/// Named views over every trainable block, in a fixed order shared with
/// `grad_blocks`. Optimizers key their state by this order.
pub fn param_blocks_mut<'a>(
    params: &'a mut BaseModelParams,
    noise: Option<&'a mut NoiseLayer>,
) -> Vec<(String, &'a mut [f64])> {
    let mut blocks: Vec<(String, &mut [f64])> = Vec::new();
    blocks.push(("embedding".into(), params.embedding.as_mut_slice()));
    for (i, bank) in params.banks.iter_mut().enumerate() {
        blocks.push((format!("conv{}.filters", i), bank.filters.as_mut_slice()));
        blocks.push((format!("conv{}.bias", i), bank.bias.as_mut_slice()));
    }
    blocks.push(("dense.w".into(), params.dense_w.as_mut_slice()));
    blocks.push(("dense.b".into(), params.dense_b.as_mut_slice()));
    if let Some(n) = noise {
        blocks.push(("noise.psi".into(), n.psi.as_mut_slice()));
    }
    blocks
}

pub fn grad_blocks(grads: &ModelGrads) -> Vec<(String, &[f64])> {
    let mut blocks: Vec<(String, &[f64])> = Vec::new();
    blocks.push(("embedding".into(), grads.embedding.as_slice()));
    for (i, (filters, bias)) in grads.banks.iter().enumerate() {
        blocks.push((format!("conv{}.filters", i), filters.as_slice()));
        blocks.push((format!("conv{}.bias", i), bias.as_slice()));
    }
    blocks.push(("dense.w".into(), grads.dense_w.as_slice()));
    blocks.push(("dense.b".into(), grads.dense_b.as_slice()));
    if let Some(psi) = &grads.psi {
        blocks.push(("noise.psi".into(), psi.as_slice()));
    }
    blocks
}

/// All trainable values as one flat vector (gradient-checking support).
pub fn flatten_params(params: &BaseModelParams, noise: Option<&NoiseLayer>) -> Vec<f64> {
    let mut flat = Vec::new();
    flat.extend_from_slice(params.embedding.as_slice());
    for bank in &params.banks {
        flat.extend_from_slice(bank.filters.as_slice());
        flat.extend_from_slice(&bank.bias);
    }
    flat.extend_from_slice(params.dense_w.as_slice());
    flat.extend_from_slice(&params.dense_b);
    if let Some(n) = noise {
        flat.extend_from_slice(n.psi.as_slice());
    }
    flat
}

pub fn flatten_grads(grads: &ModelGrads) -> Vec<f64> {
    let mut flat = Vec::new();
    for (_, block) in grad_blocks(grads) {
        flat.extend_from_slice(block);
    }
    flat
}

pub fn set_params_from_flat(
    params: &mut BaseModelParams,
    noise: Option<&mut NoiseLayer>,
    flat: &[f64],
) -> Result<()> {
    let mut offset = 0;
    for (_, block) in param_blocks_mut(params, noise) {
        if offset + block.len() > flat.len() {
            return Err(Error::DimMismatch("flat parameter vector too short".into()));
        }
        block.copy_from_slice(&flat[offset..offset + block.len()]);
        offset += block.len();
    }
    if offset != flat.len() {
        return Err(Error::DimMismatch(format!(
            "flat parameter vector has {} values, model holds {}",
            flat.len(),
            offset
        )));
    }
    Ok(())
}
