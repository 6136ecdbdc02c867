//! Class-conditional label-noise distributions, corruption sampling, and
//! the matrix diagnostics used to study a learned noise layer.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::Rng;
use crate::text::{LabeledDataset, Split};
use rand::Rng as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

const COLUMN_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    Uniform,
    Random,
    Custom,
}

impl std::fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NoiseKind::Uniform => write!(f, "uniform"),
            NoiseKind::Random => write!(f, "random"),
            NoiseKind::Custom => write!(f, "custom"),
        }
    }
}

/// Column-stochastic K×K matrix; entry (i, j) is P(noisy = i | clean = j).
#[derive(Debug, Clone)]
pub struct TransitionMatrix {
    k: usize,
    phi: Matrix,
    kind: NoiseKind,
    p: Option<f64>,
}

impl TransitionMatrix {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn phi(&self) -> &Matrix {
        &self.phi
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn flip_parameter(&self) -> Option<f64> {
        self.p
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.phi.column(j)
    }

    fn validate(phi: &Matrix) -> Result<()> {
        for j in 0..phi.cols() {
            let mut sum = 0.0;
            for i in 0..phi.rows() {
                let v = phi.get(i, j);
                if !(0.0..=1.0 + COLUMN_SUM_TOL).contains(&v) {
                    return Err(Error::InvalidArg(format!(
                        "transition entry ({}, {}) = {} outside [0, 1]",
                        i, j, v
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > COLUMN_SUM_TOL {
                return Err(Error::InvalidArg(format!(
                    "column {} sums to {}, expected 1",
                    j, sum
                )));
            }
        }
        Ok(())
    }

    /// Writes K rows of K comma-separated values (round-trip exact).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_matrix_csv(path, &self.phi)
    }

    /// Loads a matrix written by `write_csv`, re-checking column sums.
    pub fn read_csv(path: &Path) -> Result<TransitionMatrix> {
        let m = read_matrix_csv(path)?;
        if m.rows() != m.cols() {
            return Err(Error::DimMismatch(format!(
                "transition matrix must be square, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        for j in 0..m.cols() {
            let sum: f64 = (0..m.rows()).map(|i| m.get(i, j)).sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidArg(format!(
                    "{}: column {} sums to {}, not column-stochastic",
                    path.display(),
                    j,
                    sum
                )));
            }
        }
        Ok(TransitionMatrix {
            k: m.rows(),
            phi: m,
            kind: NoiseKind::Custom,
            p: None,
        })
    }
}

pub fn write_matrix_csv(path: &Path, m: &Matrix) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    write!(w, "{}", matrix_to_csv(m))?;
    w.flush()?;
    Ok(())
}

pub fn matrix_to_csv(m: &Matrix) -> String {
    let mut out = String::new();
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{}", v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn read_matrix_csv(path: &Path) -> Result<Matrix> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: format!("bad float {:?}", field),
            })?;
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput(format!("{}", path.display())));
    }
    Matrix::from_rows(&rows)
}

/// Φ = (1−p)·I + (p/K)·ones. Diagonal is exactly 1−p+p/K.
pub fn build_uniform_noise(k: usize, p: f64) -> Result<TransitionMatrix> {
    check_k_p(k, p)?;
    let off = p / k as f64;
    let diag = (1.0 - p) + off;
    let phi = Matrix::from_fn(k, k, |i, j| if i == j { diag } else { off });
    TransitionMatrix::validate(&phi)?;
    Ok(TransitionMatrix {
        k,
        phi,
        kind: NoiseKind::Uniform,
        p: Some(p),
    })
}

/// Φ = (1−p)·I + p·Δ, where each column of Δ has a zero diagonal entry and
/// its off-diagonal entries are drawn uniformly from the unit simplex
/// (normalized i.i.d. standard exponentials). Diagonal is exactly 1−p.
pub fn build_random_noise(k: usize, p: f64, rng: &mut Rng) -> Result<TransitionMatrix> {
    check_k_p(k, p)?;
    let mut phi = Matrix::zeros(k, k);
    for j in 0..k {
        let mut exps = Vec::with_capacity(k - 1);
        for _ in 0..k - 1 {
            let u: f64 = rng.gen::<f64>();
            exps.push(-(1.0 - u).ln());
        }
        let total: f64 = exps.iter().sum();
        let mut e = exps.into_iter();
        for i in 0..k {
            if i == j {
                phi.set(i, j, 1.0 - p);
            } else {
                let w = if total > 0.0 {
                    e.next().unwrap() / total
                } else {
                    // All exponentials zero cannot happen with continuous
                    // draws; split evenly if it ever does.
                    1.0 / (k - 1) as f64
                };
                phi.set(i, j, p * w);
            }
        }
    }
    TransitionMatrix::validate(&phi)?;
    Ok(TransitionMatrix {
        k,
        phi,
        kind: NoiseKind::Random,
        p: Some(p),
    })
}

fn check_k_p(k: usize, p: f64) -> Result<()> {
    if k < 2 {
        return Err(Error::InvalidArg(format!("noise model needs k >= 2, got {}", k)));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArg(format!("flip probability {} outside [0, 1]", p)));
    }
    Ok(())
}

/// A custom (e.g. per-class) noise matrix. Columns are normalized to sum
/// to 1; the returned flag is true when the input needed renormalization
/// beyond the silent [0.99, 1.01] tolerance.
pub fn build_custom_noise(entries: &Matrix) -> Result<(TransitionMatrix, bool)> {
    if entries.rows() != entries.cols() {
        return Err(Error::DimMismatch(format!(
            "custom noise matrix must be square, got {}x{}",
            entries.rows(),
            entries.cols()
        )));
    }
    let k = entries.rows();
    if k < 2 {
        return Err(Error::InvalidArg("noise model needs k >= 2".into()));
    }
    let mut phi = Matrix::zeros(k, k);
    let mut renormalized = false;
    for j in 0..k {
        let mut sum = 0.0;
        for i in 0..k {
            let v = entries.get(i, j);
            if v < 0.0 {
                return Err(Error::InvalidArg(format!(
                    "custom noise entry ({}, {}) = {} is negative",
                    i, j, v
                )));
            }
            sum += v;
        }
        if sum == 0.0 {
            return Err(Error::InvalidArg(format!("custom noise column {} is all zero", j)));
        }
        if !(0.99..=1.01).contains(&sum) {
            renormalized = true;
        }
        for i in 0..k {
            phi.set(i, j, entries.get(i, j) / sum);
        }
    }
    TransitionMatrix::validate(&phi)?;
    Ok((
        TransitionMatrix {
            k,
            phi,
            kind: NoiseKind::Custom,
            p: None,
        },
        renormalized,
    ))
}

/// Draws one noisy label per clean label by inverse-CDF on a single uniform
/// draw, consuming exactly one draw per label.
pub fn sample_noisy_labels(labels: &[usize], phi: &TransitionMatrix, rng: &mut Rng) -> Result<Vec<usize>> {
    let k = phi.k();
    let mut noisy = Vec::with_capacity(labels.len());
    for &y in labels {
        if y >= k {
            return Err(Error::LabelOutOfRange { label: y, k });
        }
        let u: f64 = rng.gen::<f64>();
        let mut cum = 0.0;
        let mut drawn = k - 1;
        for i in 0..k {
            cum += phi.phi().get(i, y);
            if u < cum {
                drawn = i;
                break;
            }
        }
        noisy.push(drawn);
    }
    Ok(noisy)
}

/// Returns a copy of the dataset with noisy labels drawn i.i.d. from the
/// transition matrix. Clean labels are retained; test splits are refused.
pub fn corrupt_labels(
    dataset: &LabeledDataset,
    phi: &TransitionMatrix,
    rng: &mut Rng,
) -> Result<LabeledDataset> {
    if dataset.split == Split::Test {
        return Err(Error::InvalidArg("test labels are never corrupted".into()));
    }
    if dataset.k != phi.k() {
        return Err(Error::DimMismatch(format!(
            "dataset has {} classes, noise matrix has {}",
            dataset.k,
            phi.k()
        )));
    }
    let labels: Vec<usize> = dataset.sentences.iter().map(|s| s.label).collect();
    let noisy = sample_noisy_labels(&labels, phi, rng)?;
    let mut out = dataset.clone();
    for (s, n) in out.sentences.iter_mut().zip(noisy) {
        s.noisy_label = Some(n);
    }
    Ok(out)
}

/// Each column divided by its sum; entries keep their sign.
pub fn column_normalize(m: &Matrix) -> Result<Matrix> {
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for j in 0..m.cols() {
        let sum: f64 = (0..m.rows()).map(|i| m.get(i, j)).sum();
        if sum == 0.0 {
            return Err(Error::InvalidArg(format!("column {} sums to zero", j)));
        }
        for i in 0..m.rows() {
            out.set(i, j, m.get(i, j) / sum);
        }
    }
    Ok(out)
}

/// Pearson correlation of the flattened entries of two same-shaped matrices.
pub fn pearson(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(Error::DimMismatch(format!(
            "pearson: {}x{} vs {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let n = a.as_slice().len();
    if n < 2 {
        return Err(Error::InvalidArg("pearson needs at least 2 entries".into()));
    }
    let mean = |m: &Matrix| m.as_slice().iter().sum::<f64>() / n as f64;
    let (ma, mb) = (mean(a), mean(b));
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.as_slice().iter().zip(b.as_slice().iter()) {
        let dx = x - ma;
        let dy = y - mb;
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::InvalidArg("pearson undefined for a constant matrix".into()));
    }
    Ok(cov / (va.sqrt() * vb.sqrt()))
}

pub fn frobenius_norm(m: &Matrix) -> f64 {
    m.frobenius_norm()
}
