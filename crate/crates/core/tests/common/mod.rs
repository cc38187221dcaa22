//! Reference implementations used as oracles by the integration and
//! acceptance tests. None of them share code paths with the solvers.

#![allow(dead_code)]

use mesma_aug::fcls::fcls_solve;
use mesma_aug::spectral::{EndmemberMatrix, HyperImage, SpectralLibrary, Spectrum};
use mesma_aug::vae::{
    build_architecture, elbo_gradients, elbo_loss, init_params, kink_margin, layer, VaeModel,
};
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

/// Exhaustive search over the simplex lattice with spacing `step` for
/// P in {2, 3}. Returns the best lattice point and its squared residual.
pub fn simplex_grid_search(columns: &[Vec<f64>], y: &[f64], step: f64) -> (Vec<f64>, f64) {
    let p = columns.len();
    assert!(p == 2 || p == 3, "grid oracle supports P = 2 or 3");
    // ||y - Ma||^2 = a'Ga - 2 b'a + y'y
    let mut g = [[0.0; 3]; 3];
    let mut b = [0.0; 3];
    for i in 0..p {
        b[i] = columns[i].iter().zip(y).map(|(m, v)| m * v).sum();
        for j in 0..p {
            g[i][j] = columns[i].iter().zip(&columns[j]).map(|(u, v)| u * v).sum();
        }
    }
    let yy: f64 = y.iter().map(|v| v * v).sum();
    let obj = |a: &[f64; 3]| {
        let mut s = yy;
        for i in 0..p {
            s -= 2.0 * b[i] * a[i];
            for j in 0..p {
                s += a[i] * g[i][j] * a[j];
            }
        }
        s
    };
    let n = (1.0 / step).round() as usize;
    let mut best = (f64::INFINITY, [0.0; 3]);
    for i in 0..=n {
        if p == 2 {
            let a = [i as f64 / n as f64, (n - i) as f64 / n as f64, 0.0];
            let r = obj(&a);
            if r < best.0 {
                best = (r, a);
            }
            continue;
        }
        for j in 0..=(n - i) {
            let a = [i as f64 / n as f64, j as f64 / n as f64, (n - i - j) as f64 / n as f64];
            let r = obj(&a);
            if r < best.0 {
                best = (r, a);
            }
        }
    }
    (best.1[..p].to_vec(), best.0)
}

/// Per-pixel outcome of the materialized search.
pub struct BruteForce {
    pub selections: Vec<Vec<usize>>,
    pub residuals: Vec<f64>,
    pub abundances: Vec<Vec<f64>>,
}

/// Every model written out as an explicit list, scored independently per
/// pixel; ties go to the first model in lexicographic order.
pub fn brute_force_mesma(img: &HyperImage, lib: &SpectralLibrary) -> BruteForce {
    let mut models: Vec<Vec<usize>> = vec![vec![]];
    for class in &lib.classes {
        models = models
            .into_iter()
            .flat_map(|prefix| {
                (0..class.members.len()).map(move |j| {
                    let mut m = prefix.clone();
                    m.push(j);
                    m
                })
            })
            .collect();
    }
    let mut out = BruteForce {
        selections: vec![],
        residuals: vec![],
        abundances: vec![],
    };
    for n in 0..img.num_pixels() {
        let y = Spectrum::new(img.pixel(n).to_vec());
        let mut best: Option<(f64, Vec<usize>, Vec<f64>)> = None;
        for m in &models {
            let em = EndmemberMatrix::from_library(lib, m).unwrap();
            let sol = fcls_solve(&y, &em).unwrap();
            if best.as_ref().is_none_or(|b| sol.residual_sq < b.0) {
                best = Some((sol.residual_sq, m.clone(), sol.abundances));
            }
        }
        let (r, sel, a) = best.unwrap();
        out.selections.push(sel);
        out.residuals.push(r);
        out.abundances.push(a);
    }
    out
}

/// Random network with small nonzero biases plus a batch and noise.
pub fn random_vae_case(
    rng: &mut impl Rng,
    l: usize,
    k: usize,
    b: usize,
) -> (VaeModel, Array2<f64>, Array2<f64>) {
    let arch = build_architecture(l, k).unwrap();
    let mut params = init_params(&arch, rng);
    for lay in 0..layer::COUNT {
        for v in params.bias_mut(lay) {
            *v = rng.random_range(-0.1..0.1);
        }
    }
    let batch = Array2::from_shape_simple_fn((b, l), || rng.random::<f64>());
    let noise = Array2::from_shape_simple_fn((b, k), || rng.sample(StandardNormal));
    (VaeModel::new(arch, params), batch, noise)
}

/// Outcome of a central-difference check over every parameter.
pub struct GradCheck {
    pub params: usize,
    /// Largest `|g - fd| / max(1e-6, 1e-4 |g|)`; the check passes below 1.
    pub worst_ratio: f64,
}

/// Returns `None` when some ReLU pre-activation lies within `margin` of
/// its kink, where a central difference is not meaningful.
pub fn central_difference_check(
    model: &mut VaeModel,
    batch: &Array2<f64>,
    noise: &Array2<f64>,
    kl_weight: f64,
    h: f64,
    margin: f64,
) -> Option<GradCheck> {
    if kink_margin(model, batch.view(), noise.view()).unwrap() < margin {
        return None;
    }
    let (_, grads) = elbo_gradients(model, batch.view(), noise.view(), kl_weight).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..model.params.len() {
        let orig = model.params.as_slice()[i];
        model.params.as_mut_slice()[i] = orig + h;
        let plus = elbo_loss(model, batch.view(), noise.view(), kl_weight).unwrap().total;
        model.params.as_mut_slice()[i] = orig - h;
        let minus = elbo_loss(model, batch.view(), noise.view(), kl_weight).unwrap().total;
        model.params.as_mut_slice()[i] = orig;
        let fd = (plus - minus) / (2.0 * h);
        let g = grads.as_slice()[i];
        worst = worst.max((g - fd).abs() / 1e-6f64.max(1e-4 * g.abs()));
    }
    Some(GradCheck {
        params: model.params.len(),
        worst_ratio: worst,
    })
}

/// Random FCLS instance: P columns in [0, 1]^L and a pixel in [0, 1]^L.
pub fn random_fcls_instance(rng: &mut impl Rng, p: usize, l: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let cols = (0..p)
        .map(|_| (0..l).map(|_| rng.random::<f64>()).collect())
        .collect();
    let y = (0..l).map(|_| rng.random::<f64>()).collect();
    (cols, y)
}

/// Random library with the given class sizes, all entries in [0, 1].
pub fn random_library(rng: &mut impl Rng, sizes: &[usize], l: usize) -> SpectralLibrary {
    use mesma_aug::spectral::MaterialClass;
    SpectralLibrary::new(
        sizes
            .iter()
            .enumerate()
            .map(|(k, &c)| {
                MaterialClass::new(
                    format!("m{k}"),
                    (0..c)
                        .map(|_| Spectrum::new((0..l).map(|_| rng.random::<f64>()).collect()))
                        .collect(),
                )
            })
            .collect(),
    )
    .unwrap()
}

pub fn random_image(rng: &mut impl Rng, n: usize, l: usize) -> HyperImage {
    HyperImage::new(Array2::from_shape_simple_fn((n, l), || rng.random::<f64>())).unwrap()
}

/// Elementwise double-loop RMSE.
pub fn rmse_loop(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let (r, c) = a.dim();
    let mut acc = 0.0;
    for i in 0..r {
        for j in 0..c {
            acc += (a[[i, j]] - b[[i, j]]).powi(2);
        }
    }
    (acc / (r * c) as f64).sqrt()
}
