//! Small statistical helpers: goodness of fit and block jackknife.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson chi-square test of observed bin counts against expected counts.
///
/// Adjacent bins are merged until every merged bin expects at least
/// `min_expected` events. `fitted_params` is subtracted from the degrees of
/// freedom along with the normalisation constraint.
pub fn chi_square_gof(
    observed: &[f64],
    expected: &[f64],
    min_expected: f64,
    fitted_params: usize,
) -> ChiSquareTest {
    assert_eq!(observed.len(), expected.len());
    let mut merged: Vec<(f64, f64)> = Vec::new();
    let (mut o_acc, mut e_acc) = (0.0, 0.0);
    for (&o, &e) in observed.iter().zip(expected) {
        o_acc += o;
        e_acc += e;
        if e_acc >= min_expected {
            merged.push((o_acc, e_acc));
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    if e_acc > 0.0 || o_acc > 0.0 {
        match merged.last_mut() {
            Some(last) => {
                last.0 += o_acc;
                last.1 += e_acc;
            }
            None => merged.push((o_acc, e_acc)),
        }
    }
    let statistic: f64 = merged.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    let dof = merged.len().saturating_sub(1 + fitted_params).max(1);
    let p_value = ChiSquared::new(dof as f64)
        .map(|d| d.sf(statistic))
        .unwrap_or(f64::NAN);
    ChiSquareTest {
        statistic,
        dof,
        p_value,
    }
}

/// Delete-one jackknife standard error from leave-one-out estimates.
pub fn jackknife_se(leave_one_out: &[f64]) -> f64 {
    let k = leave_one_out.len();
    if k < 2 {
        return f64::NAN;
    }
    let mean = leave_one_out.iter().sum::<f64>() / k as f64;
    let ss: f64 = leave_one_out.iter().map(|v| (v - mean).powi(2)).sum();
    ((k as f64 - 1.0) / k as f64 * ss).sqrt()
}

/// Delete-one jackknife covariance of several estimates.
/// `replicates[b][i]` is estimate `i` computed with block `b` left out.
pub fn jackknife_covariance(replicates: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = replicates.len();
    let p = replicates.first().map_or(0, Vec::len);
    if k < 2 {
        return vec![vec![f64::NAN; p]; p];
    }
    let mean: Vec<f64> = (0..p)
        .map(|i| replicates.iter().map(|r| r[i]).sum::<f64>() / k as f64)
        .collect();
    let scale = (k as f64 - 1.0) / k as f64;
    (0..p)
        .map(|i| {
            (0..p)
                .map(|j| {
                    scale
                        * replicates
                            .iter()
                            .map(|r| (r[i] - mean[i]) * (r[j] - mean[j]))
                            .sum::<f64>()
                })
                .collect()
        })
        .collect()
}

/// Generalised chi-square `rᵀ Σ⁻¹ r` of residuals with covariance `Σ`.
///
/// When `Σ` is itself estimated from `replicates` resamples its inverse is
/// biased high; it is scaled by `(n − p − 2)/(n − 1)`, which requires more
/// replicates than residuals plus two. Pass `None` for a known covariance.
pub fn correlated_chi_square(
    residuals: &[f64],
    cov: &[Vec<f64>],
    replicates: Option<usize>,
) -> Result<f64> {
    let p = residuals.len();
    if cov.len() != p || cov.iter().any(|row| row.len() != p) {
        return Err(Error::invalid(format!("covariance is not {p}x{p}")));
    }
    let debias = match replicates {
        Some(n) if n > p + 2 => (n - p - 2) as f64 / (n - 1) as f64,
        Some(n) => {
            return Err(Error::DegenerateInput(format!(
                "{n} resamples cannot support a {p}x{p} covariance"
            )))
        }
        None => 1.0,
    };
    let m = DMatrix::from_fn(p, p, |i, j| cov[i][j]);
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::DegenerateInput("covariance is not positive definite".into()))?;
    let r = DVector::from_column_slice(residuals);
    let x = chol.solve(&r);
    Ok(debias * r.dot(&x))
}

/// Splits `n` items into at most `max_blocks` contiguous, nearly equal blocks.
pub fn block_ranges(n: usize, max_blocks: usize) -> Vec<std::ops::Range<usize>> {
    let k = max_blocks.min(n).max(1);
    (0..k)
        .map(|i| (i * n / k)..((i + 1) * n / k))
        .filter(|r| !r.is_empty())
        .collect()
}
