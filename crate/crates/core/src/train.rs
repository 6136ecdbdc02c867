//! Optimizers and the minibatch training loop with corrupted-validation
//! early stopping, plus clean-test evaluation and feature extraction.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{
    self, argmax, BaseModelParams, ModelConfig, ModelGrads, NoiseLayer,
};
use crate::rng::Rng;
use crate::text::LabeledDataset;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerKind {
    Adadelta { rho: f64, eps: f64 },
    Sgd { lr: f64, momentum: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adadelta {
            rho: 0.95,
            eps: 1e-6,
        }
    }
}

impl OptimizerKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            OptimizerKind::Adadelta { rho, eps } => {
                if !(rho > 0.0 && rho < 1.0) {
                    return Err(Error::InvalidArg(format!("adadelta rho {} outside (0, 1)", rho)));
                }
                if eps <= 0.0 {
                    return Err(Error::InvalidArg("adadelta eps must be positive".into()));
                }
            }
            OptimizerKind::Sgd { lr, .. } => {
                if lr <= 0.0 {
                    return Err(Error::InvalidArg("sgd learning rate must be positive".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct AdadeltaState {
    pub accum_grad: Vec<f64>,
    pub accum_update: Vec<f64>,
}

/// One Adadelta update:
///   E[g²] ← ρ·E[g²] + (1−ρ)·g²
///   Δx = −(RMS[Δx]/RMS[g])·g with RMS[v] = sqrt(E[v²]+ε)
///   E[Δx²] ← ρ·E[Δx²] + (1−ρ)·Δx²
pub fn adadelta_step(
    param: &mut [f64],
    grad: &[f64],
    state: &mut AdadeltaState,
    rho: f64,
    eps: f64,
) -> Result<()> {
    if grad.len() != param.len() {
        return Err(Error::DimMismatch(format!(
            "adadelta: {} grads for {} params",
            grad.len(),
            param.len()
        )));
    }
    if state.accum_grad.is_empty() {
        state.accum_grad = vec![0.0; param.len()];
        state.accum_update = vec![0.0; param.len()];
    }
    if state.accum_grad.len() != param.len() {
        return Err(Error::DimMismatch("adadelta state shape mismatch".into()));
    }
    for i in 0..param.len() {
        let g = grad[i];
        state.accum_grad[i] = rho * state.accum_grad[i] + (1.0 - rho) * g * g;
        let update = -((state.accum_update[i] + eps).sqrt() / (state.accum_grad[i] + eps).sqrt()) * g;
        state.accum_update[i] = rho * state.accum_update[i] + (1.0 - rho) * update * update;
        param[i] += update;
    }
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct SgdState {
    pub velocity: Vec<f64>,
}

/// v ← momentum·v + g; param −= lr·v. momentum = 0 is plain SGD.
pub fn sgd_step(
    param: &mut [f64],
    grad: &[f64],
    state: &mut SgdState,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if grad.len() != param.len() {
        return Err(Error::DimMismatch(format!(
            "sgd: {} grads for {} params",
            grad.len(),
            param.len()
        )));
    }
    if state.velocity.is_empty() {
        state.velocity = vec![0.0; param.len()];
    }
    if state.velocity.len() != param.len() {
        return Err(Error::DimMismatch("sgd state shape mismatch".into()));
    }
    for i in 0..param.len() {
        state.velocity[i] = momentum * state.velocity[i] + grad[i];
        param[i] -= lr * state.velocity[i];
    }
    Ok(())
}

enum BlockState {
    Adadelta(AdadeltaState),
    Sgd(SgdState),
}

/// Optimizer with state keyed per parameter tensor, in the fixed block
/// order of `model::param_blocks_mut`.
pub struct Optimizer {
    kind: OptimizerKind,
    state: Vec<(String, BlockState)>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Result<Optimizer> {
        kind.validate()?;
        Ok(Optimizer {
            kind,
            state: Vec::new(),
        })
    }

    pub fn step(
        &mut self,
        params: &mut BaseModelParams,
        noise: Option<&mut NoiseLayer>,
        grads: &ModelGrads,
    ) -> Result<()> {
        let blocks = model::param_blocks_mut(params, noise);
        let grad_blocks = model::grad_blocks(grads);
        if blocks.len() != grad_blocks.len() {
            return Err(Error::DimMismatch(format!(
                "{} parameter blocks but {} gradient blocks",
                blocks.len(),
                grad_blocks.len()
            )));
        }
        if self.state.is_empty() {
            for (name, _) in &blocks {
                let st = match self.kind {
                    OptimizerKind::Adadelta { .. } => BlockState::Adadelta(AdadeltaState::default()),
                    OptimizerKind::Sgd { .. } => BlockState::Sgd(SgdState::default()),
                };
                self.state.push((name.clone(), st));
            }
        }
        for (((pname, param), (gname, grad)), (sname, st)) in blocks
            .into_iter()
            .zip(grad_blocks.into_iter())
            .zip(self.state.iter_mut())
        {
            if pname != gname || pname != *sname {
                return Err(Error::DimMismatch(format!(
                    "block order mismatch: param {:?}, grad {:?}, state {:?}",
                    pname, gname, sname
                )));
            }
            match (&self.kind, st) {
                (OptimizerKind::Adadelta { rho, eps }, BlockState::Adadelta(ref mut s)) => {
                    adadelta_step(param, grad, s, *rho, *eps)?;
                }
                (OptimizerKind::Sgd { lr, momentum }, BlockState::Sgd(ref mut s)) => {
                    sgd_step(param, grad, s, *lr, *momentum)?;
                }
                _ => return Err(Error::InvalidArg("optimizer state kind mismatch".into())),
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::default(),
            batch_size: 50,
            max_epochs: 50,
            patience: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArg("batch_size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::InvalidArg("patience must be at least 1".into()));
        }
        self.optimizer.validate()
    }
}

/// Per-epoch metrics; serialized as JSON lines.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_acc: f64,
    pub test_acc: Option<f64>,
    pub psi_fro: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct RunRecord {
    pub epochs: Vec<EpochStats>,
    /// Index of the epoch whose snapshot was returned (lowest on ties).
    pub best_epoch: Option<usize>,
    /// Ψ of the returned snapshot, when a noise layer was stacked.
    pub final_psi: Option<Matrix>,
}

impl RunRecord {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e).expect("epoch stats serialize"));
            out.push('\n');
        }
        out
    }
}

pub struct TrainStreams {
    pub shuffle: Rng,
    pub dropout: Rng,
}

pub struct TrainOutcome {
    pub params: BaseModelParams,
    pub noise: Option<NoiseLayer>,
    pub record: RunRecord,
}

/// Minibatch training with early stopping on noisy-dev accuracy.
///
/// Each epoch shuffles the training set (dedicated stream), walks
/// minibatches keeping the final partial batch, and updates Θ (and Ψ when
/// stacked). Dev accuracy is measured against the corrupted dev labels with
/// the noisy head in evaluation mode; the best-dev snapshot is returned.
/// `test_set`, when given, is evaluated per epoch for the run record only —
/// it never influences stopping.
pub fn train(
    train_set: &LabeledDataset,
    dev_set: &LabeledDataset,
    test_set: Option<&LabeledDataset>,
    init_params: BaseModelParams,
    init_noise: Option<NoiseLayer>,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    streams: &mut TrainStreams,
) -> Result<TrainOutcome> {
    train_cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyInput("training set".into()));
    }
    if !train_set.has_noisy_labels() || !dev_set.has_noisy_labels() {
        return Err(Error::MissingNoisyLabels(
            "train and dev sets must carry noisy labels".into(),
        ));
    }

    let mut params = init_params;
    let mut noise = init_noise;
    let mut optimizer = Optimizer::new(train_cfg.optimizer)?;
    let n = train_set.len();

    let mut best_params = params.clone();
    let mut best_noise = noise.clone();
    let mut best_dev = f64::NEG_INFINITY;
    let mut best_epoch: Option<usize> = None;
    let mut since_best = 0usize;
    let mut record = RunRecord::default();

    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..train_cfg.max_epochs {
        order.shuffle(&mut streams.shuffle);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(train_cfg.batch_size) {
            let batch: Vec<&crate::text::EncodedSentence> =
                chunk.iter().map(|&i| &train_set.sentences[i]).collect();
            let (value, grads) = model::loss(
                &batch,
                &params,
                noise.as_ref(),
                model_cfg.lambda,
                true,
                &mut streams.dropout,
            )?;
            loss_sum += value * batch.len() as f64;
            optimizer.step(&mut params, noise.as_mut(), &grads)?;
        }
        let train_loss = loss_sum / n as f64;
        let dev_acc = noisy_dev_accuracy(dev_set, &params, noise.as_ref())?;
        let test_acc = match test_set {
            Some(t) => Some(evaluate_clean(t, &params)?),
            None => None,
        };
        let psi_fro = noise.as_ref().map(|nl| nl.psi.frobenius_norm());
        record.epochs.push(EpochStats {
            epoch,
            train_loss,
            dev_acc,
            test_acc,
            psi_fro,
        });

        if dev_acc > best_dev {
            best_dev = dev_acc;
            best_epoch = Some(epoch);
            best_params = params.clone();
            best_noise = noise.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= train_cfg.patience {
                break;
            }
        }
    }

    record.best_epoch = best_epoch;
    record.final_psi = best_noise.as_ref().map(|nl| nl.psi.clone());
    Ok(TrainOutcome {
        params: best_params,
        noise: best_noise,
        record,
    })
}

/// Accuracy of the noisy head (base head when no noise layer is stacked)
/// against the corrupted dev labels, evaluation mode.
pub fn noisy_dev_accuracy(
    dev_set: &LabeledDataset,
    params: &BaseModelParams,
    noise: Option<&NoiseLayer>,
) -> Result<f64> {
    if dev_set.is_empty() {
        return Err(Error::EmptyInput("dev set".into()));
    }
    let mut rng = crate::rng::stream(0, crate::rng::Stream::Dropout);
    let mut hits = 0usize;
    for s in &dev_set.sentences {
        let target = s
            .noisy_label
            .ok_or_else(|| Error::MissingNoisyLabels("dev example".into()))?;
        let probs = model::forward_base(&s.tokens, params, false, &mut rng)?;
        let pred = match noise {
            Some(nl) => argmax(&model::noisy_from_probs(&nl.psi, &probs)?),
            None => argmax(&probs),
        };
        if pred == target {
            hits += 1;
        }
    }
    Ok(hits as f64 / dev_set.len() as f64)
}

/// Fraction of clean test labels recovered by the base model alone.
pub fn evaluate_clean(test_set: &LabeledDataset, params: &BaseModelParams) -> Result<f64> {
    if test_set.is_empty() {
        return Err(Error::EmptyInput("evaluation set".into()));
    }
    let mut hits = 0usize;
    for s in &test_set.sentences {
        if model::predict_clean(&s.tokens, params)? == s.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / test_set.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    /// Concatenated max-over-time vector, the dense layer's input.
    Pooled,
    /// Pre-softmax dense outputs.
    Logits,
}

/// Evaluation-mode features for every example, one row each, in dataset
/// order.
pub fn extract_features(
    dataset: &LabeledDataset,
    params: &BaseModelParams,
    kind: FeatureKind,
) -> Result<Matrix> {
    let dim = match kind {
        FeatureKind::Pooled => params.feature_dim(),
        FeatureKind::Logits => params.k(),
    };
    let mut out = Matrix::zeros(dataset.len(), dim);
    let mut rng = crate::rng::stream(0, crate::rng::Stream::Dropout);
    for (i, s) in dataset.sentences.iter().enumerate() {
        let detail = model::forward_detail(&s.tokens, params, false, &mut rng)?;
        let row = match kind {
            FeatureKind::Pooled => detail.pooled,
            FeatureKind::Logits => detail.logits,
        };
        out.row_mut(i).copy_from_slice(&row);
    }
    Ok(out)
}
