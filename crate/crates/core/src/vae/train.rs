use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{build_architecture, elbo_gradients, Adam, EpochLog, VaeArchitecture, VaeModel, VaeParams};
use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::spectral::{clip_to_unit, Spectrum};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub kl_weight: f64,
    pub latent_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            kl_weight: 1.0,
            latent_dim: super::DEFAULT_LATENT_DIM,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidConfig("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0) || !(self.kl_weight >= 0.0) {
            return Err(Error::InvalidConfig(
                "epsilon must be > 0 and kl_weight >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(arch: &VaeArchitecture, rng: &mut impl Rng) -> VaeParams {
    let mut params = VaeParams::zeros(arch);
    for layer in 0..super::layer::COUNT {
        let s = params.shape(layer);
        let bound = (6.0 / (s.inputs + s.outputs) as f64).sqrt();
        for w in params.weights_mut(layer) {
            *w = rng.random_range(-bound..bound);
        }
    }
    params
}

/// Full-batch training: one Adam step per epoch over the whole class.
/// Inputs are clipped to `[0, 1]` to match the sigmoid output range.
pub fn train_vae(class_spectra: &[Spectrum], cfg: &TrainConfig) -> Result<VaeModel> {
    cfg.validate()?;
    if class_spectra.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 training spectra, got {}",
            class_spectra.len()
        )));
    }
    let l = class_spectra[0].bands();
    let mut batch = Array2::zeros((class_spectra.len(), l));
    for (i, s) in class_spectra.iter().enumerate() {
        if s.bands() != l {
            return Err(Error::MismatchedBandCount {
                class: 0,
                member: i,
                expected: l,
                found: s.bands(),
            });
        }
        let (clipped, _) = clip_to_unit(s)?;
        batch.row_mut(i).assign(&ndarray::ArrayView1::from(&clipped.values));
    }

    let arch = build_architecture(l, cfg.latent_dim)?;
    let mut rng = rng_from(cfg.seed);
    let mut model = VaeModel::new(arch, init_params(&arch, &mut rng));
    let mut adam = Adam::new(
        model.params.len(),
        cfg.learning_rate,
        cfg.beta1,
        cfg.beta2,
        cfg.epsilon,
    );
    let k = arch.latent_dim;
    for epoch in 0..cfg.epochs {
        let noise = Array2::from_shape_simple_fn((batch.nrows(), k), || rng.sample(StandardNormal));
        let (loss, grads) = elbo_gradients(&model, batch.view(), noise.view(), cfg.kl_weight)
            .map_err(|e| match e {
                Error::NonFiniteLoss { .. } => Error::NonFiniteLoss { epoch },
                other => other,
            })?;
        model.training_log.push(EpochLog {
            loss: loss.total,
            reconstruction: loss.reconstruction,
            kl: loss.kl,
        });
        adam.step(model.params.as_mut_slice(), grads.as_slice());
        if model.params.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss { epoch });
        }
    }
    Ok(model)
}
