//! RMSE between matrices and Monte Carlo aggregation.

use ndarray::ArrayView2;
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::error::{Error, Result};

/// `sqrt(||x - x_ref||_F^2 / numel)`.
pub fn rmse(x: ArrayView2<f64>, x_ref: ArrayView2<f64>) -> Result<f64> {
    if x.dim() != x_ref.dim() {
        return Err(Error::ShapeMismatch {
            left: x.dim(),
            right: x_ref.dim(),
        });
    }
    let n = x.len();
    if n == 0 {
        return Ok(0.0);
    }
    let sq: f64 = x
        .iter()
        .zip(x_ref.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((sq / n as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation (divisor `n - 1`).
    pub std_dev: f64,
    pub runs: usize,
}

pub fn monte_carlo_summary(values: &[f64]) -> Result<Summary> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InsufficientRuns { needed: 2, got: n });
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    Ok(Summary {
        mean,
        std_dev: var.sqrt(),
        runs: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignTest {
    /// Pairs where `candidate < baseline`.
    pub wins: usize,
    /// Pairs where `candidate > baseline`.
    pub losses: usize,
    pub ties: usize,
    /// `P(X >= wins)` for `X ~ Binomial(wins + losses, 1/2)`.
    pub p_value: f64,
}

/// One-sided paired sign test of "candidate is smaller than baseline".
/// Ties are discarded.
pub fn sign_test_less(candidate: &[f64], baseline: &[f64]) -> Result<SignTest> {
    if candidate.len() != baseline.len() {
        return Err(Error::ShapeMismatch {
            left: (candidate.len(), 1),
            right: (baseline.len(), 1),
        });
    }
    let (mut wins, mut losses, mut ties) = (0, 0, 0);
    for (c, b) in candidate.iter().zip(baseline) {
        if c < b {
            wins += 1;
        } else if c > b {
            losses += 1;
        } else {
            ties += 1;
        }
    }
    let n = wins + losses;
    let p_value = if n == 0 || wins == 0 {
        1.0
    } else {
        let dist = Binomial::new(0.5, n as u64).expect("valid binomial");
        dist.sf(wins as u64 - 1)
    };
    Ok(SignTest {
        wins,
        losses,
        ties,
        p_value,
    })
}
