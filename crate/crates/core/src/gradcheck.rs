//! Central-difference verification of analytic gradients.

use crate::error::{Error, Result};

/// Outcome of one gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_coord: usize,
    pub coords_checked: usize,
    pub passed: bool,
}

/// Compares `analytic` to (f(θ+h)−f(θ−h))/2h coordinate by coordinate.
///
/// `f` must be deterministic in `params` (callers replaying stochastic
/// passes must pin their RNG streams). `coords` selects a subset of
/// coordinates; `None` checks all of them.
pub fn grad_check<F>(
    mut f: F,
    params: &[f64],
    analytic: &[f64],
    step: f64,
    tol: f64,
    coords: Option<&[usize]>,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if step <= 0.0 {
        return Err(Error::InvalidArg(format!("step {} must be positive", step)));
    }
    if analytic.len() != params.len() {
        return Err(Error::DimMismatch(format!(
            "analytic gradient length {} vs {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..params.len()).collect();
            &all
        }
    };

    let mut theta = params.to_vec();
    let mut max_rel_err = 0.0;
    let mut worst_coord = 0;
    for &i in coords {
        if i >= params.len() {
            return Err(Error::InvalidArg(format!(
                "coordinate {} outside {} parameters",
                i,
                params.len()
            )));
        }
        let orig = theta[i];
        theta[i] = orig + step;
        let up = f(&theta)?;
        theta[i] = orig - step;
        let down = f(&theta)?;
        theta[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!(
                "objective at perturbed coordinate {}",
                i
            )));
        }
        let numeric = (up - down) / (2.0 * step);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        let rel = (numeric - analytic[i]).abs() / denom;
        if rel > max_rel_err {
            max_rel_err = rel;
            worst_coord = i;
        }
    }
    Ok(GradCheckReport {
        max_rel_err,
        worst_coord,
        coords_checked: coords.len(),
        passed: max_rel_err <= tol,
    })
}
