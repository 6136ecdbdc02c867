//! Multiclass linear probe over frozen features: one-vs-rest hinge loss
//! with an L2 penalty of strength 1/C (liblinear convention), trained by
//! stochastic subgradient descent with the fixed schedule lr_t = 1/(1+t)
//! per epoch.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::Rng;
use rand::seq::SliceRandom;

/// Trains on (features, targets) and reports accuracy on the held-out
/// test features against their labels.
pub fn linear_probe(
    train_features: &Matrix,
    train_targets: &[usize],
    test_features: &Matrix,
    test_targets: &[usize],
    c: f64,
    epochs: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let probe = fit(train_features, train_targets, c, epochs, rng)?;
    probe.accuracy(test_features, test_targets)
}

#[derive(Debug, Clone)]
pub struct LinearProbe {
    /// K×dim weight rows plus per-class bias.
    weights: Matrix,
    bias: Vec<f64>,
}

impl LinearProbe {
    pub fn predict(&self, features: &[f64]) -> Result<usize> {
        let mut scores = self.weights.matvec(features)?;
        for (s, b) in scores.iter_mut().zip(self.bias.iter()) {
            *s += b;
        }
        Ok(crate::model::argmax(&scores))
    }

    pub fn accuracy(&self, features: &Matrix, targets: &[usize]) -> Result<f64> {
        if features.rows() != targets.len() {
            return Err(Error::DimMismatch(format!(
                "{} feature rows for {} targets",
                features.rows(),
                targets.len()
            )));
        }
        if targets.is_empty() {
            return Err(Error::EmptyInput("probe evaluation set".into()));
        }
        let mut hits = 0usize;
        for (i, &t) in targets.iter().enumerate() {
            if self.predict(features.row(i))? == t {
                hits += 1;
            }
        }
        Ok(hits as f64 / targets.len() as f64)
    }
}

pub fn fit(
    features: &Matrix,
    targets: &[usize],
    c: f64,
    epochs: usize,
    rng: &mut Rng,
) -> Result<LinearProbe> {
    if features.rows() != targets.len() {
        return Err(Error::DimMismatch(format!(
            "{} feature rows for {} targets",
            features.rows(),
            targets.len()
        )));
    }
    if targets.is_empty() {
        return Err(Error::EmptyInput("probe training set".into()));
    }
    if c <= 0.0 {
        return Err(Error::InvalidArg("probe C must be positive".into()));
    }
    let k = targets.iter().max().unwrap() + 1;
    let distinct = {
        let mut seen = vec![false; k];
        for &t in targets {
            seen[t] = true;
        }
        seen.iter().filter(|&&s| s).count()
    };
    if distinct < 2 {
        return Err(Error::InvalidArg(
            "probe targets contain a single class".into(),
        ));
    }

    let n = features.rows();
    let dim = features.cols();
    // Per-sample L2 shrink so the total penalty is (1/(2C))·‖w‖² in the
    // liblinear sense.
    let reg = 1.0 / (c * n as f64);
    let mut weights = Matrix::zeros(k, dim);
    let mut bias = vec![0.0; k];
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..epochs {
        let lr = 1.0 / (1.0 + epoch as f64);
        order.shuffle(rng);
        for &i in &order {
            let x = features.row(i);
            for class in 0..k {
                let y = if targets[i] == class { 1.0 } else { -1.0 };
                let row = weights.row(class);
                let mut score = bias[class];
                for (w, xi) in row.iter().zip(x.iter()) {
                    score += w * xi;
                }
                let margin = y * score;
                let shrink = 1.0 - lr * reg;
                let row = weights.row_mut(class);
                if margin < 1.0 {
                    for (w, xi) in row.iter_mut().zip(x.iter()) {
                        *w = *w * shrink + lr * y * xi;
                    }
                    bias[class] += lr * y;
                } else {
                    for w in row.iter_mut() {
                        *w *= shrink;
                    }
                }
            }
        }
    }
    Ok(LinearProbe { weights, bias })
}
