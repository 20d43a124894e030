//! Prediction error metrics over a set of test times.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result, TsgError};

/// Denominator guard for the relative error.
pub const RE_GUARD: f64 = 1e-12;

/// Mean over samples of the Euclidean error norm (not squared).
pub fn mse(truth: &[DVector<f64>], pred: &[DVector<f64>]) -> Result<f64> {
    check(truth, pred)?;
    let sum: f64 = truth.iter().zip(pred).map(|(y, p)| (y - p).norm()).sum();
    Ok(sum / truth.len() as f64)
}

/// `||Y_pred - Y||_F / ||Y||_F`.
pub fn re(truth: &[DVector<f64>], pred: &[DVector<f64>]) -> Result<f64> {
    check(truth, pred)?;
    let den: f64 = truth.iter().map(|y| y.norm_squared()).sum::<f64>().sqrt();
    if den < RE_GUARD {
        return Err(TsgError::Numerical(format!("relative error undefined: ||Y||_F = {den:e}")));
    }
    let num: f64 = truth.iter().zip(pred).map(|(y, p)| (y - p).norm_squared()).sum::<f64>().sqrt();
    Ok(num / den)
}

fn check(truth: &[DVector<f64>], pred: &[DVector<f64>]) -> Result<()> {
    if truth.is_empty() || truth.len() != pred.len() || truth.iter().zip(pred).any(|(a, b)| a.len() != b.len()) {
        return dim_err("truth and prediction must be nonempty with matching shapes");
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub re: f64,
    /// Mean Euclidean error of each node's coordinate triple.
    pub per_node: Vec<f64>,
}

impl Metrics {
    pub fn compute(truth: &[DVector<f64>], pred: &[DVector<f64>]) -> Result<Self> {
        let (mse, re) = (mse(truth, pred)?, re(truth, pred)?);
        let n_nodes = truth[0].len() / 3;
        let mut per_node = vec![0.0; n_nodes];
        for (y, p) in truth.iter().zip(pred) {
            for (i, acc) in per_node.iter_mut().enumerate() {
                *acc += (y.fixed_rows::<3>(3 * i) - p.fixed_rows::<3>(3 * i)).norm();
            }
        }
        per_node.iter_mut().for_each(|v| *v /= truth.len() as f64);
        Ok(Self { mse, re, per_node })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn mse_averages_norms() {
        let y = [v(&[0.0, 0.0, 0.0]), v(&[0.0, 0.0, 0.0])];
        let p = [v(&[1.0, 0.0, 0.0]), v(&[0.0, 3.0, 0.0])];
        assert_eq!(mse(&y, &p).unwrap(), 2.0);
        assert_eq!(mse(&y[..1], &p[..1]).unwrap(), 1.0);
    }

    #[test]
    fn re_reference_values() {
        let y = [v(&[1.0, -2.0, 0.5])];
        assert_eq!(re(&y, &y).unwrap(), 0.0);
        assert_eq!(re(&y, &[&y[0] * 2.0]).unwrap(), 1.0);
        assert_eq!(re(&y, &[v(&[0.0; 3])]).unwrap(), 1.0);
        assert!(re(&[v(&[0.0; 3])], &[v(&[1.0; 3])]).is_err());
    }
}
