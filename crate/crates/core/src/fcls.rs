//! Fully constrained least squares: `min ||y - M a||^2` subject to `a >= 0`
//! and `1'a = 1`, for one pixel against one fixed endmember matrix.
//!
//! The sum-to-one constraint is folded into the objective by appending a
//! heavily weighted all-ones row to `M` (and the same weight to `y`). The
//! resulting nonnegative least squares problem is solved with a
//! Lawson-Hanson active-set method operating on the `P x P` normal
//! equations, and the solution is finally rescaled onto the simplex.

use crate::error::{Error, Result};
use crate::spectral::{EndmemberMatrix, Spectrum};

/// Weight of the sum-to-one row relative to the largest endmember entry.
pub const SUM_TO_ONE_WEIGHT: f64 = 1e3;

/// Outer active-set iterations allowed per endmember.
const ITERATIONS_PER_ENDMEMBER: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct FclsSolution {
    pub abundances: Vec<f64>,
    /// `||y - M a||^2` for the returned (renormalized) abundances.
    pub residual_sq: f64,
    pub iterations: usize,
}

/// Per-matrix precomputation shared by every pixel solved against the same
/// endmember matrix.
#[derive(Debug, Clone)]
pub struct FclsSolver<'a> {
    em: &'a EndmemberMatrix,
    /// Gram matrix of the augmented system, row-major `P x P`.
    gram: Vec<f64>,
    delta_sq: f64,
    pivot_tol: f64,
}

impl<'a> FclsSolver<'a> {
    pub fn new(em: &'a EndmemberMatrix) -> Result<Self> {
        let p = em.num_endmembers();
        if p == 0 || em.bands() == 0 {
            return Err(Error::DimensionMismatch("empty endmember matrix".into()));
        }
        if p >= 2 {
            let first = em.column(0);
            if em.columns().skip(1).all(|c| c == first) {
                return Err(Error::DegenerateColumns { iterations: 0 });
            }
        }

        let scale = em
            .columns()
            .flatten()
            .fold(0.0_f64, |acc, v| acc.max(v.abs()));
        let scale = if scale > 0.0 { scale } else { 1.0 };
        let delta = SUM_TO_ONE_WEIGHT * scale;
        let delta_sq = delta * delta;

        let mut gram = vec![0.0; p * p];
        for i in 0..p {
            for j in i..p {
                let g = dot(em.column(i), em.column(j)) + delta_sq;
                gram[i * p + j] = g;
                gram[j * p + i] = g;
            }
        }
        let max_diag = (0..p).map(|i| gram[i * p + i]).fold(0.0, f64::max);
        Ok(Self {
            em,
            gram,
            delta_sq,
            pivot_tol: 1e-13 * max_diag,
        })
    }

    pub fn endmembers(&self) -> &EndmemberMatrix {
        self.em
    }

    pub fn solve(&self, pixel: &[f64]) -> Result<FclsSolution> {
        let em = self.em;
        let p = em.num_endmembers();
        if pixel.len() != em.bands() {
            return Err(Error::DimensionMismatch(format!(
                "pixel has {} bands, endmembers have {}",
                pixel.len(),
                em.bands()
            )));
        }

        let rhs: Vec<f64> = em
            .columns()
            .map(|c| dot(c, pixel) + self.delta_sq)
            .collect();
        let grad_tol = 1e-12 * rhs.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
        let max_iterations = ITERATIONS_PER_ENDMEMBER * p;

        let mut x = vec![0.0; p];
        let mut passive = vec![false; p];
        let mut blocked = vec![false; p];
        let mut iterations = 0;
        let mut w = vec![0.0; p];

        loop {
            // w = A'b - A'A x: negative gradient of the augmented objective.
            for (j, wj) in w.iter_mut().enumerate() {
                let gx: f64 = (0..p).map(|k| self.gram[j * p + k] * x[k]).sum();
                *wj = rhs[j] - gx;
            }
            // Strict comparison keeps the lowest index among ties.
            let mut entering: Option<usize> = None;
            for j in 0..p {
                if passive[j] || blocked[j] || w[j] <= grad_tol {
                    continue;
                }
                if entering.is_none_or(|e| w[j] > w[e]) {
                    entering = Some(j);
                }
            }
            let Some(j) = entering else { break };

            passive[j] = true;
            let mut first_pass = true;
            loop {
                let idx: Vec<usize> = (0..p).filter(|&i| passive[i]).collect();
                let z = self.solve_passive(&rhs, &idx);
                if first_pass {
                    // Reject a candidate that is linearly dependent on the
                    // passive set or would enter with a non-positive value.
                    let pos = idx.iter().position(|&i| i == j).unwrap();
                    match &z {
                        Some(z) if z[pos] > 0.0 => {}
                        _ => {
                            passive[j] = false;
                            blocked[j] = true;
                            break;
                        }
                    }
                    first_pass = false;
                    iterations += 1;
                    if iterations > max_iterations {
                        return Err(Error::DegenerateColumns {
                            iterations: max_iterations,
                        });
                    }
                    blocked.iter_mut().for_each(|b| *b = false);
                }
                // Principal submatrices of a positive definite passive Gram
                // stay positive definite, so later solves cannot fail.
                let z = z.ok_or(Error::DegenerateColumns { iterations })?;

                if z.iter().all(|&v| v > 0.0) {
                    for (&i, &v) in idx.iter().zip(&z) {
                        x[i] = v;
                    }
                    break;
                }

                // Move from x toward z until the first passive variable hits zero.
                let mut alpha = f64::INFINITY;
                let mut leaving = idx[0];
                for (&i, &v) in idx.iter().zip(&z) {
                    if v <= 0.0 {
                        let t = x[i] / (x[i] - v);
                        if t < alpha {
                            alpha = t;
                            leaving = i;
                        }
                    }
                }
                for (&i, &v) in idx.iter().zip(&z) {
                    x[i] += alpha * (v - x[i]);
                }
                x[leaving] = 0.0;
                for &i in &idx {
                    if x[i] <= 0.0 {
                        x[i] = 0.0;
                        passive[i] = false;
                    }
                }
            }
        }

        let sum: f64 = x.iter().sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::DegenerateColumns { iterations });
        }
        x.iter_mut().for_each(|v| *v /= sum);
        let residual_sq = residual_sq(em, pixel, &x);
        Ok(FclsSolution {
            abundances: x,
            residual_sq,
            iterations,
        })
    }

    /// Unconstrained least squares restricted to the columns in `idx`, via
    /// Cholesky on the corresponding Gram block. `None` when the block is
    /// numerically singular.
    fn solve_passive(&self, rhs: &[f64], idx: &[usize]) -> Option<Vec<f64>> {
        let p = self.em.num_endmembers();
        let n = idx.len();
        let mut chol = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..=r {
                let mut s = self.gram[idx[r] * p + idx[c]];
                for k in 0..c {
                    s -= chol[r * n + k] * chol[c * n + k];
                }
                if r == c {
                    if s <= self.pivot_tol {
                        return None;
                    }
                    chol[r * n + r] = s.sqrt();
                } else {
                    chol[r * n + c] = s / chol[c * n + c];
                }
            }
        }
        let mut z: Vec<f64> = idx.iter().map(|&i| rhs[i]).collect();
        for r in 0..n {
            for k in 0..r {
                z[r] -= chol[r * n + k] * z[k];
            }
            z[r] /= chol[r * n + r];
        }
        for r in (0..n).rev() {
            for k in r + 1..n {
                z[r] -= chol[k * n + r] * z[k];
            }
            z[r] /= chol[r * n + r];
        }
        Some(z)
    }
}

/// Solve one pixel against one endmember matrix.
pub fn fcls_solve(pixel: &Spectrum, em: &EndmemberMatrix) -> Result<FclsSolution> {
    FclsSolver::new(em)?.solve(&pixel.values)
}

/// `||y - M a||^2`.
pub fn residual_sq(em: &EndmemberMatrix, pixel: &[f64], abundances: &[f64]) -> f64 {
    em.mix(abundances)
        .iter()
        .zip(pixel)
        .map(|(m, y)| (y - m) * (y - m))
        .sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
