//! Library augmentation: decode `N_s` latent draws per class through that
//! class's trained generator, append them to the class, then run MESMA on
//! the enlarged library.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::mesma::{mesma_unmix_with, MesmaOptions, MesmaResult};
use crate::rng::{derived_rng, stream};
use crate::spectral::{validate_library, HyperImage, Origin, SpectralLibrary, Spectrum};
use crate::vae::{decode, VaeModel};

/// Returns a copy of `lib` where class `k` gains `n_samples` decoded
/// signatures after its original members.
///
/// Class `k` draws from its own stream derived from `(seed, k)`, so the
/// first `n` synthetic members are the same for every `n_samples >= n`.
pub fn augment_library(
    lib: &SpectralLibrary,
    models: &[VaeModel],
    n_samples: usize,
    seed: u64,
) -> Result<SpectralLibrary> {
    validate_library(lib)?;
    if models.len() != lib.num_classes() {
        return Err(Error::ModelMismatch(format!(
            "{} models for {} classes",
            models.len(),
            lib.num_classes()
        )));
    }
    let l = lib.bands();
    let mut out = lib.clone();
    for (k, (class, model)) in out.classes.iter_mut().zip(models).enumerate() {
        if model.arch.input_dim != l {
            return Err(Error::ModelMismatch(format!(
                "model for class {k} produces {} bands, library has {l}",
                model.arch.input_dim
            )));
        }
        let mut rng = derived_rng(seed, stream::AUGMENT, k as u64);
        for draw in 0..n_samples {
            let z: Vec<f64> = (0..model.arch.latent_dim)
                .map(|_| rng.sample(StandardNormal))
                .collect();
            let mut s: Spectrum = decode(model, &z)?;
            s.label = Some(class.material.clone());
            s.origin = Origin::Synthetic { class: k, draw };
            class.members.push(s);
        }
    }
    Ok(out)
}

/// MESMA against the augmented library. Returns the augmented library too.
pub fn run_augmented_mesma(
    img: &HyperImage,
    lib: &SpectralLibrary,
    models: &[VaeModel],
    n_samples: usize,
    seed: u64,
    opts: &MesmaOptions,
) -> Result<(MesmaResult, SpectralLibrary)> {
    let augmented = augment_library(lib, models, n_samples, seed)?;
    let result = mesma_unmix_with(img, &augmented, opts)?;
    Ok((result, augmented))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesma::mesma_unmix;
    use crate::rng::rng_from;
    use crate::spectral::MaterialClass;
    use crate::vae::{train_vae, TrainConfig};
    use ndarray::Array2;

    fn setup(l: usize, c: usize) -> (SpectralLibrary, Vec<VaeModel>) {
        let mut rng = rng_from(77);
        let classes: Vec<MaterialClass> = (0..3)
            .map(|k| {
                MaterialClass::new(
                    format!("m{k}"),
                    (0..c)
                        .map(|_| {
                            let g: f64 = rng.random_range(0.8..1.2);
                            Spectrum::new(
                                (0..l)
                                    .map(|b| g * (0.2 + 0.1 * k as f64 + 0.1 * ((b + 3 * k) as f64 / 4.0).sin()))
                                    .collect(),
                            )
                        })
                        .collect(),
                )
            })
            .collect();
        let lib = SpectralLibrary::new(classes).unwrap();
        let models = lib
            .classes
            .iter()
            .enumerate()
            .map(|(k, class)| {
                train_vae(
                    &class.members,
                    &TrainConfig {
                        epochs: 30,
                        seed: k as u64,
                        ..TrainConfig::default()
                    },
                )
                .unwrap()
            })
            .collect();
        (lib, models)
    }

    #[test]
    fn zero_samples_is_identity() {
        let (lib, models) = setup(12, 5);
        assert_eq!(augment_library(&lib, &models, 0, 1).unwrap(), lib);
    }

    #[test]
    fn grows_each_class_and_keeps_originals_first() {
        let (lib, models) = setup(12, 5);
        let aug = augment_library(&lib, &models, 3, 9).unwrap();
        assert_eq!(aug.class_sizes(), vec![8, 8, 8]);
        assert_eq!(crate::mesma::model_count(&aug, u128::MAX).unwrap(), 512);
        for (orig, new) in lib.classes.iter().zip(&aug.classes) {
            assert_eq!(&new.members[..5], &orig.members[..]);
            for (d, s) in new.members[5..].iter().enumerate() {
                assert!(matches!(s.origin, Origin::Synthetic { draw, .. } if draw == d));
                assert!(s.values.iter().all(|&v| v > 0.0 && v < 1.0));
            }
        }
        assert_eq!(aug, augment_library(&lib, &models, 3, 9).unwrap());
        assert_ne!(aug, augment_library(&lib, &models, 3, 10).unwrap());
    }

    #[test]
    fn draws_are_prefix_stable() {
        let (lib, models) = setup(12, 5);
        let a3 = augment_library(&lib, &models, 3, 4).unwrap();
        let a6 = augment_library(&lib, &models, 6, 4).unwrap();
        for (c3, c6) in a3.classes.iter().zip(&a6.classes) {
            assert_eq!(&c6.members[..8], &c3.members[..]);
        }
    }

    #[test]
    fn model_mismatch() {
        let (lib, mut models) = setup(12, 5);
        let (_, other) = setup(10, 5);
        assert!(augment_library(&lib, &models[..2], 1, 0).is_err());
        models[1] = other[1].clone();
        assert!(matches!(
            augment_library(&lib, &models, 1, 0),
            Err(Error::ModelMismatch(_))
        ));
    }

    #[test]
    fn augmented_residuals_never_exceed_plain() {
        let (lib, models) = setup(12, 4);
        let mut rng = rng_from(5);
        let img = HyperImage::new(Array2::from_shape_simple_fn((40, 12), || rng.random_range(0.1..0.6))).unwrap();
        let plain = mesma_unmix(&img, &lib).unwrap();
        let (same, _) = run_augmented_mesma(&img, &lib, &models, 0, 3, &MesmaOptions::default()).unwrap();
        assert_eq!(same, plain);
        let (aug, _) = run_augmented_mesma(&img, &lib, &models, 2, 3, &MesmaOptions::default()).unwrap();
        for (a, p) in aug.residuals.iter().zip(&plain.residuals) {
            assert!(a <= p);
        }
    }
}
