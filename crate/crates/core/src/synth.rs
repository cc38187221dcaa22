//! Synthetic library-mismatch benchmark.
//!
//! Each class gets a smooth base shape (a sum of Gaussian bumps). Two
//! disjoint pools of signatures are drawn around it: pool 1 builds the scene
//! after a random gain/offset per signature, pool 2 supplies the library
//! available to the unmixing methods. Pixels mix one random pool-1
//! signature per class with Dirichlet abundances, and white Gaussian noise
//! is added at a target image-wide SNR.

use ndarray::Array2;
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derived_rng, stream, Rng as StreamRng};
use crate::spectral::{AbundanceMap, HyperImage, MaterialClass, SpectralLibrary, Spectrum};

/// Pool spectra are kept inside this band.
const POOL_RANGE: (f64, f64) = (0.05, 0.95);
/// Scene spectra after the gain/offset are clipped to this band.
const SCENE_CLIP: (f64, f64) = (0.0, 1.25);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub endmembers: usize,
    pub bands: usize,
    pub pixels: usize,
    pub pool1_size: usize,
    pub pool2_size: usize,
    pub library_subset_size: usize,
    pub gain_range: (f64, f64),
    pub offset_range: (f64, f64),
    pub dirichlet_concentration: Vec<f64>,
    /// `None` disables noise.
    pub snr_db: Option<f64>,
    /// Spread of the per-signature brightness factor around 1 within a pool.
    pub pool_gain_spread: f64,
    /// Spread of the per-signature level shift within a pool.
    pub pool_offset_spread: f64,
    /// Amplitude of the smooth shape perturbation within a pool.
    pub pool_shape_noise: f64,
    pub seed: u64,
    /// Seed of the class base shapes; fixed across Monte Carlo realizations.
    pub shape_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            endmembers: 3,
            bands: 198,
            pixels: 500,
            pool1_size: 20,
            pool2_size: 14,
            library_subset_size: 5,
            gain_range: (0.75, 1.25),
            offset_range: (-0.15, 0.15),
            dirichlet_concentration: vec![5.0; 3],
            snr_db: Some(30.0),
            pool_gain_spread: 0.15,
            pool_offset_spread: 0.03,
            pool_shape_noise: 0.02,
            seed: 0,
            shape_seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.endmembers < 2 {
            return bad(format!("need at least 2 endmembers, got {}", self.endmembers));
        }
        if self.bands < 1 || self.pixels < 1 {
            return bad("bands and pixels must be positive".into());
        }
        if self.pool1_size < 1 || self.pool2_size < self.library_subset_size || self.library_subset_size < 1 {
            return bad(format!(
                "pool sizes ({}, {}) must cover the library subset size {}",
                self.pool1_size, self.pool2_size, self.library_subset_size
            ));
        }
        if !(self.gain_range.0 <= self.gain_range.1) || !(self.offset_range.0 <= self.offset_range.1) {
            return bad("gain/offset ranges must be ordered".into());
        }
        if self.dirichlet_concentration.len() != self.endmembers
            || self.dirichlet_concentration.iter().any(|a| !(*a > 0.0))
        {
            return bad(format!(
                "need {} positive Dirichlet concentrations",
                self.endmembers
            ));
        }
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                return bad("snr_db must be finite (use no-noise instead)".into());
            }
        }
        for (name, v) in [
            ("pool_gain_spread", self.pool_gain_spread),
            ("pool_offset_spread", self.pool_offset_spread),
            ("pool_shape_noise", self.pool_shape_noise),
        ] {
            if !(v >= 0.0) {
                return bad(format!("{name} must be >= 0"));
            }
        }
        Ok(())
    }
}

/// Per-class signature pools.
pub type Pools = Vec<Vec<Spectrum>>;

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub image: HyperImage,
    /// Noise-free pixels.
    pub clean: Array2<f64>,
    pub true_abundances: AbundanceMap,
    /// Pool 1 after the gain/offset perturbation.
    pub scene_pools: Pools,
    pub library: SpectralLibrary,
    /// `N x P` indices into `scene_pools`.
    pub true_selections: Array2<usize>,
    /// Realized `10 log10(||clean||^2 / ||noise||^2)`; infinite without noise.
    pub realized_snr_db: f64,
}

pub fn material_name(k: usize) -> String {
    format!("class_{k}")
}

fn bump(center: f64, width: f64, b: usize) -> f64 {
    let d = (b as f64 - center) / width;
    (-0.5 * d * d).exp()
}

/// Sum of `count` random Gaussian bumps over `l` bands.
fn smooth_curve(rng: &mut StreamRng, l: usize, count: usize, amp: (f64, f64), width: (f64, f64)) -> Vec<f64> {
    let lf = l as f64;
    let bumps: Vec<(f64, f64, f64)> = (0..count)
        .map(|_| {
            (
                rng.random_range(0.0..lf.max(1.0)),
                rng.random_range(width.0 * lf..=width.1 * lf).max(1.0),
                rng.random_range(amp.0..=amp.1),
            )
        })
        .collect();
    (0..l)
        .map(|b| bumps.iter().map(|&(c, w, a)| a * bump(c, w, b)).sum())
        .collect()
}

/// Class-characteristic base shape, rescaled into a class-specific
/// sub-band of `[0.1, 0.85]`.
pub fn base_shape(cfg: &SynthConfig, class: usize) -> Vec<f64> {
    let mut rng = derived_rng(cfg.shape_seed, stream::SHAPES, class as u64);
    let count = rng.random_range(3..=6);
    let curve = smooth_curve(&mut rng, cfg.bands, count, (-1.0, 1.0), (0.05, 0.25));
    let lo = rng.random_range(0.1..0.35);
    let hi = rng.random_range(0.55..0.85);
    let (min, max) = curve
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = max - min;
    curve
        .iter()
        .map(|v| {
            if span > 0.0 {
                lo + (v - min) / span * (hi - lo)
            } else {
                0.5 * (lo + hi)
            }
        })
        .collect()
}

/// Draws `pool1_size + pool2_size` variants of each class shape and splits
/// them into two disjoint pools.
pub fn make_base_pools(cfg: &SynthConfig) -> Result<(Pools, Pools)> {
    cfg.validate()?;
    let mut pool1 = Vec::with_capacity(cfg.endmembers);
    let mut pool2 = Vec::with_capacity(cfg.endmembers);
    for k in 0..cfg.endmembers {
        let base = base_shape(cfg, k);
        let mut rng = derived_rng(cfg.seed, stream::POOLS, k as u64);
        let total = cfg.pool1_size + cfg.pool2_size;
        let mut members: Vec<Spectrum> = Vec::with_capacity(total);
        while members.len() < total {
            let gain = 1.0 + cfg.pool_gain_spread * rng.random_range(-1.0..=1.0);
            let shift = cfg.pool_offset_spread * rng.random_range(-1.0..=1.0);
            let count = rng.random_range(2..=3);
            let wiggle = smooth_curve(
                &mut rng,
                cfg.bands,
                count,
                (-cfg.pool_shape_noise, cfg.pool_shape_noise),
                (0.05, 0.2),
            );
            let values: Vec<f64> = base
                .iter()
                .zip(&wiggle)
                .map(|(b, w)| (gain * b + shift + w).clamp(POOL_RANGE.0, POOL_RANGE.1))
                .collect();
            // Pools must be disjoint as sets of vectors.
            if members.iter().all(|m| m.values != values) {
                members.push(Spectrum::labeled(values, material_name(k)));
            }
        }
        let second = members.split_off(cfg.pool1_size);
        pool1.push(members);
        pool2.push(second);
    }
    Ok((pool1, pool2))
}

/// One gain/offset pair per signature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub gain: f64,
    pub offset: f64,
}

impl Affine {
    pub fn apply(&self, s: &Spectrum) -> Spectrum {
        Spectrum {
            values: s
                .values
                .iter()
                .map(|v| (self.gain * v + self.offset).clamp(SCENE_CLIP.0, SCENE_CLIP.1))
                .collect(),
            label: s.label.clone(),
            origin: s.origin,
        }
    }
}

/// Draws an independent `g ~ U(gain_range)`, `o ~ U(offset_range)` per
/// signature and applies `g m + o`, clipped to `[0, 1.25]`.
pub fn apply_mismatch(pool: &[Spectrum], cfg: &SynthConfig, rng: &mut StreamRng) -> (Vec<Spectrum>, Vec<Affine>) {
    let transforms: Vec<Affine> = pool
        .iter()
        .map(|_| Affine {
            gain: uniform(rng, cfg.gain_range),
            offset: uniform(rng, cfg.offset_range),
        })
        .collect();
    let out = pool.iter().zip(&transforms).map(|(s, t)| t.apply(s)).collect();
    (out, transforms)
}

fn uniform(rng: &mut StreamRng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Dirichlet draw via normalized Gamma variates.
pub fn sample_dirichlet(rng: &mut StreamRng, alpha: &[f64]) -> Vec<f64> {
    loop {
        let g: Vec<f64> = alpha
            .iter()
            .map(|&a| Gamma::new(a, 1.0).expect("positive shape").sample(rng))
            .collect();
        let s: f64 = g.iter().sum();
        if s > 0.0 && s.is_finite() {
            return g.into_iter().map(|v| v / s).collect();
        }
    }
}

pub fn synthesize_image(cfg: &SynthConfig) -> Result<SynthDataset> {
    let (pool1, pool2) = make_base_pools(cfg)?;
    let p = cfg.endmembers;
    let l = cfg.bands;
    let n = cfg.pixels;

    let scene_pools: Pools = pool1
        .iter()
        .enumerate()
        .map(|(k, pool)| {
            let mut rng = derived_rng(cfg.seed, stream::MISMATCH, k as u64);
            apply_mismatch(pool, cfg, &mut rng).0
        })
        .collect();

    let mut rng = derived_rng(cfg.seed, stream::SCENE, 0);
    let mut abundances = Array2::zeros((n, p));
    let mut selections = Array2::zeros((n, p));
    let mut clean = Array2::zeros((n, l));
    for i in 0..n {
        let a = sample_dirichlet(&mut rng, &cfg.dirichlet_concentration);
        for k in 0..p {
            let j = rng.random_range(0..cfg.pool1_size);
            selections[[i, k]] = j;
            abundances[[i, k]] = a[k];
            let sig = &scene_pools[k][j].values;
            for b in 0..l {
                clean[[i, b]] += a[k] * sig[b];
            }
        }
    }

    let mut observed = clean.clone();
    let realized_snr_db = match cfg.snr_db {
        None => f64::INFINITY,
        Some(snr) => {
            let signal_power = clean.iter().map(|v| v * v).sum::<f64>() / clean.len() as f64;
            let sigma = (signal_power / 10f64.powf(snr / 10.0)).sqrt();
            let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
            let mut noise_energy = 0.0;
            for v in observed.iter_mut() {
                let e = normal.sample(&mut rng);
                noise_energy += e * e;
                *v += e;
            }
            10.0 * (signal_power * clean.len() as f64 / noise_energy).log10()
        }
    };

    let classes = pool2
        .iter()
        .enumerate()
        .map(|(k, pool)| {
            let mut rng = derived_rng(cfg.seed, stream::LIBRARY, k as u64);
            let mut idx = sample_indices(&mut rng, pool.len(), cfg.library_subset_size).into_vec();
            idx.sort_unstable();
            MaterialClass::new(material_name(k), idx.iter().map(|&j| pool[j].clone()).collect())
        })
        .collect();

    Ok(SynthDataset {
        image: HyperImage::new(observed)?,
        clean,
        true_abundances: AbundanceMap::new(abundances)?,
        scene_pools,
        library: SpectralLibrary::new(classes)?,
        true_selections: selections,
        realized_snr_db,
    })
}
