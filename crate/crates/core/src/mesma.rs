//! Exhaustive multiple-endmember search: every pixel is unmixed against each
//! endmember matrix in the Cartesian product of the library classes and the
//! minimum-residual model is kept.

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fcls::FclsSolver;
use crate::spectral::{validate_library, AbundanceMap, EndmemberMatrix, HyperImage, SpectralLibrary};

pub const DEFAULT_COMBINATION_CAP: u128 = 1_000_000;

/// Pixels handed to one worker at a time. Each chunk walks the full model
/// sequence, so the per-model setup is amortized over the chunk.
const PIXEL_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy)]
pub struct MesmaOptions {
    pub combination_cap: u128,
}

impl Default for MesmaOptions {
    fn default() -> Self {
        Self {
            combination_cap: DEFAULT_COMBINATION_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MesmaResult {
    pub abundances: AbundanceMap,
    /// `N x P` member indices, one column per class.
    pub selections: Array2<usize>,
    /// Per-pixel squared reconstruction error of the selected model.
    pub residuals: Vec<f64>,
    pub models_evaluated: usize,
}

impl MesmaResult {
    /// Reconstructed pixels `M_n a_n`, one row per pixel.
    pub fn reconstruct(&self, lib: &SpectralLibrary) -> Result<Array2<f64>> {
        let n = self.selections.nrows();
        let mut out = Array2::zeros((n, lib.bands()));
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            let sel: Vec<usize> = self.selections.row(i).to_vec();
            let em = EndmemberMatrix::from_library(lib, &sel)?;
            let a = self.abundances.values().row(i).to_vec();
            for (o, v) in row.iter_mut().zip(em.mix(&a)) {
                *o = v;
            }
        }
        Ok(out)
    }
}

/// Lexicographic odometer over `(j_1, ..., j_P)` with `j_k < sizes[k]`.
#[derive(Debug, Clone)]
pub struct SelectionIter {
    sizes: Vec<usize>,
    next: Option<Vec<usize>>,
}

impl SelectionIter {
    pub fn new(sizes: &[usize]) -> Self {
        let next = if sizes.iter().all(|&s| s > 0) {
            Some(vec![0; sizes.len()])
        } else {
            None
        };
        Self {
            sizes: sizes.to_vec(),
            next,
        }
    }
}

impl Iterator for SelectionIter {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        for k in (0..succ.len()).rev() {
            succ[k] += 1;
            if succ[k] < self.sizes[k] {
                self.next = Some(succ);
                return Some(current);
            }
            succ[k] = 0;
        }
        Some(current)
    }
}

/// Lazily built endmember matrices in lexicographic selection order.
pub struct ModelIter<'a> {
    lib: &'a SpectralLibrary,
    selections: SelectionIter,
}

impl Iterator for ModelIter<'_> {
    type Item = EndmemberMatrix;

    fn next(&mut self) -> Option<EndmemberMatrix> {
        let sel = self.selections.next()?;
        Some(EndmemberMatrix::from_library(self.lib, &sel).expect("selection within class sizes"))
    }
}

/// `prod_k C_k`, checked against `cap`.
pub fn model_count(lib: &SpectralLibrary, cap: u128) -> Result<usize> {
    let count = lib
        .class_sizes()
        .iter()
        .try_fold(1u128, |acc, &c| acc.checked_mul(c as u128))
        .unwrap_or(u128::MAX);
    if count > cap || count > usize::MAX as u128 {
        return Err(Error::CombinationOverflow { count, cap });
    }
    Ok(count as usize)
}

/// Every endmember matrix that can be drawn from `lib`, one member per class.
pub fn enumerate_models(lib: &SpectralLibrary, cap: u128) -> Result<ModelIter<'_>> {
    validate_library(lib)?;
    model_count(lib, cap)?;
    Ok(ModelIter {
        lib,
        selections: SelectionIter::new(&lib.class_sizes()),
    })
}

pub fn mesma_unmix(img: &HyperImage, lib: &SpectralLibrary) -> Result<MesmaResult> {
    mesma_unmix_with(img, lib, &MesmaOptions::default())
}

/// Runs on the current rayon pool; results do not depend on its size.
pub fn mesma_unmix_with(
    img: &HyperImage,
    lib: &SpectralLibrary,
    opts: &MesmaOptions,
) -> Result<MesmaResult> {
    validate_library(lib)?;
    if img.bands() != lib.bands() {
        return Err(Error::DimensionMismatch(format!(
            "image has {} bands, library has {}",
            img.bands(),
            lib.bands()
        )));
    }
    let models = model_count(lib, opts.combination_cap)?;
    let p = lib.num_classes();
    let n = img.num_pixels();

    let starts: Vec<usize> = (0..n).step_by(PIXEL_CHUNK).collect();
    let chunks: Vec<Vec<Best>> = starts
        .par_iter()
        .map(|&start| search_chunk(img, lib, start..(start + PIXEL_CHUNK).min(n)))
        .collect::<Result<_>>()?;

    let mut abundances = Array2::zeros((n, p));
    let mut selections = Array2::zeros((n, p));
    let mut residuals = Vec::with_capacity(n);
    for (i, best) in chunks.into_iter().flatten().enumerate() {
        for k in 0..p {
            abundances[[i, k]] = best.abundances[k];
            selections[[i, k]] = best.selection[k];
        }
        residuals.push(best.residual_sq);
    }
    Ok(MesmaResult {
        abundances: AbundanceMap::new(abundances)?,
        selections,
        residuals,
        models_evaluated: models,
    })
}

#[derive(Debug, Clone)]
struct Best {
    residual_sq: f64,
    abundances: Vec<f64>,
    selection: Vec<usize>,
}

fn search_chunk(
    img: &HyperImage,
    lib: &SpectralLibrary,
    pixels: std::ops::Range<usize>,
) -> Result<Vec<Best>> {
    let mut best: Vec<Option<Best>> = vec![None; pixels.len()];
    for sel in SelectionIter::new(&lib.class_sizes()) {
        let em = EndmemberMatrix::from_library(lib, &sel)?;
        let solver = FclsSolver::new(&em)?;
        for (slot, n) in best.iter_mut().zip(pixels.clone()) {
            let sol = solver.solve(img.pixel(n))?;
            // Strict improvement only: the earliest (lexicographically
            // smallest) selection wins ties.
            if slot.as_ref().is_none_or(|b| sol.residual_sq < b.residual_sq) {
                *slot = Some(Best {
                    residual_sq: sol.residual_sq,
                    abundances: sol.abundances,
                    selection: sel.clone(),
                });
            }
        }
    }
    Ok(best.into_iter().map(|b| b.expect("at least one model")).collect())
}
