//! Small fully connected variational autoencoder, one per endmember class,
//! with hand-written backpropagation.
//!
//! ```text
//! encoder:  x (L) -> ReLU h1 -> ReLU h2 -> ReLU h3 -> { mean (K), log-variance (K) }
//! sample:   z = mean + exp(log_var / 2) * eps,  eps ~ N(0, I_K)
//! decoder:  z (K) -> ReLU h3' -> ReLU h2' -> ReLU h1' -> sigmoid (L)
//! loss:     mean_b [ ||x - x_hat||^2 + kl_weight * KL(q(z|x) || N(0, I)) ]
//! ```
//!
//! Hidden widths: `h1 = ceil(1.2 L) + 5`, `h2 = max(ceil(L/4), K+2) + 3`,
//! `h3 = max(ceil(L/10), K+1)`; the decoder mirrors them.

mod adam;
mod io;
mod train;

use ndarray::ArrayView2;

use crate::error::{Error, Result};
use crate::spectral::Spectrum;

pub use adam::Adam;
pub use io::{load_model, read_model, save_model, write_model, FORMAT_VERSION};
pub use train::{init_params, train_vae, TrainConfig};

/// Log-variance head output is clamped to this range before use.
pub const LOG_VAR_CLAMP: f64 = 10.0;

pub const DEFAULT_LATENT_DIM: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VaeArchitecture {
    pub input_dim: usize,
    pub latent_dim: usize,
    /// Encoder hidden widths, input side first.
    pub encoder_widths: [usize; 3],
    /// Decoder hidden widths, latent side first.
    pub decoder_widths: [usize; 3],
}

pub fn build_architecture(input_dim: usize, latent_dim: usize) -> Result<VaeArchitecture> {
    if input_dim < 1 || latent_dim < 1 || latent_dim >= input_dim {
        return Err(Error::InvalidDimensions(format!(
            "need 1 <= K < L, got L={input_dim}, K={latent_dim}"
        )));
    }
    let l = input_dim;
    let k = latent_dim;
    let wide = (6 * l).div_ceil(5) + 5;
    let mid = l.div_ceil(4).max(k + 2) + 3;
    let narrow = l.div_ceil(10).max(k + 1);
    Ok(VaeArchitecture {
        input_dim,
        latent_dim,
        encoder_widths: [wide, mid, narrow],
        decoder_widths: [narrow, mid, wide],
    })
}

/// Layer indices into [`VaeParams`].
pub mod layer {
    pub const ENCODER: [usize; 3] = [0, 1, 2];
    pub const MEAN: usize = 3;
    pub const LOG_VAR: usize = 4;
    pub const DECODER: [usize; 3] = [5, 6, 7];
    pub const OUTPUT: usize = 8;
    pub const COUNT: usize = 9;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
    offset: usize,
}

impl LayerShape {
    fn weight_len(&self) -> usize {
        self.inputs * self.outputs
    }

    fn len(&self) -> usize {
        self.weight_len() + self.outputs
    }
}

impl VaeArchitecture {
    /// `(inputs, outputs)` of every affine layer, in parameter order.
    pub fn layer_dims(&self) -> [(usize, usize); layer::COUNT] {
        let [e1, e2, e3] = self.encoder_widths;
        let [d1, d2, d3] = self.decoder_widths;
        let (l, k) = (self.input_dim, self.latent_dim);
        [
            (l, e1),
            (e1, e2),
            (e2, e3),
            (e3, k),
            (e3, k),
            (k, d1),
            (d1, d2),
            (d2, d3),
            (d3, l),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// All weights and biases in one flat buffer. Each layer stores its weight
/// matrix row-major (`outputs x inputs`) followed by its bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeParams {
    values: Vec<f64>,
    shapes: Vec<LayerShape>,
}

impl VaeParams {
    pub fn zeros(arch: &VaeArchitecture) -> Self {
        let mut offset = 0;
        let shapes = arch
            .layer_dims()
            .iter()
            .map(|&(inputs, outputs)| {
                let s = LayerShape {
                    inputs,
                    outputs,
                    offset,
                };
                offset += s.len();
                s
            })
            .collect();
        Self {
            values: vec![0.0; offset],
            shapes,
        }
    }

    pub fn from_values(arch: &VaeArchitecture, values: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(arch);
        if values.len() != p.values.len() {
            return Err(Error::ModelMismatch(format!(
                "expected {} parameters, got {}",
                p.values.len(),
                values.len()
            )));
        }
        p.values = values;
        Ok(p)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn shape(&self, layer: usize) -> LayerShape {
        self.shapes[layer]
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        let s = self.shapes[layer];
        &self.values[s.offset..s.offset + s.weight_len()]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        let s = self.shapes[layer];
        &self.values[s.offset + s.weight_len()..s.offset + s.len()]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        let s = self.shapes[layer];
        &mut self.values[s.offset..s.offset + s.weight_len()]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [f64] {
        let s = self.shapes[layer];
        &mut self.values[s.offset + s.weight_len()..s.offset + s.len()]
    }

    fn affine(&self, layer: usize, input: &[f64]) -> Vec<f64> {
        let s = self.shapes[layer];
        let w = self.weights(layer);
        self.bias(layer)
            .iter()
            .enumerate()
            .map(|(o, b)| {
                let row = &w[o * s.inputs..(o + 1) * s.inputs];
                b + row.iter().zip(input).map(|(a, x)| a * x).sum::<f64>()
            })
            .collect()
    }

    /// Accumulate weight/bias gradients of `layer` for upstream gradient
    /// `delta` and return the gradient with respect to `input`.
    fn affine_backward(
        &self,
        grads: &mut VaeParams,
        layer: usize,
        input: &[f64],
        delta: &[f64],
    ) -> Vec<f64> {
        let s = self.shapes[layer];
        let w = self.weights(layer);
        let mut d_input = vec![0.0; s.inputs];
        {
            let gw = grads.weights_mut(layer);
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = o * s.inputs;
                for i in 0..s.inputs {
                    gw[row + i] += d * input[i];
                    d_input[i] += w[row + i] * d;
                }
            }
        }
        for (gb, d) in grads.bias_mut(layer).iter_mut().zip(delta) {
            *gb += d;
        }
        d_input
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub loss: f64,
    pub reconstruction: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel {
    pub arch: VaeArchitecture,
    pub params: VaeParams,
    pub training_log: Vec<EpochLog>,
}

impl VaeModel {
    pub fn new(arch: VaeArchitecture, params: VaeParams) -> Self {
        Self {
            arch,
            params,
            training_log: Vec::new(),
        }
    }
}

/// Batch-averaged loss terms. `kl` is unweighted; `total` includes the
/// weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub reconstruction: f64,
    pub kl: f64,
}

fn relu(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x.max(0.0)).collect()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Forward activations of one sample, kept for backpropagation.
struct Trace {
    enc_act: [Vec<f64>; 3],
    mean: Vec<f64>,
    log_var_raw: Vec<f64>,
    log_var: Vec<f64>,
    sigma: Vec<f64>,
    z: Vec<f64>,
    dec_act: [Vec<f64>; 3],
    out: Vec<f64>,
}

fn encode(params: &VaeParams, x: &[f64]) -> ([Vec<f64>; 3], Vec<f64>, Vec<f64>) {
    let h1 = relu(params.affine(layer::ENCODER[0], x));
    let h2 = relu(params.affine(layer::ENCODER[1], &h1));
    let h3 = relu(params.affine(layer::ENCODER[2], &h2));
    let mean = params.affine(layer::MEAN, &h3);
    let log_var_raw = params.affine(layer::LOG_VAR, &h3);
    ([h1, h2, h3], mean, log_var_raw)
}

fn decode_trace(params: &VaeParams, z: &[f64]) -> ([Vec<f64>; 3], Vec<f64>) {
    let d1 = relu(params.affine(layer::DECODER[0], z));
    let d2 = relu(params.affine(layer::DECODER[1], &d1));
    let d3 = relu(params.affine(layer::DECODER[2], &d2));
    let out = params
        .affine(layer::OUTPUT, &d3)
        .into_iter()
        .map(sigmoid)
        .collect();
    ([d1, d2, d3], out)
}

fn forward(params: &VaeParams, x: &[f64], eps: &[f64]) -> Trace {
    let (enc_act, mean, log_var_raw) = encode(params, x);
    let log_var: Vec<f64> = log_var_raw
        .iter()
        .map(|v| v.clamp(-LOG_VAR_CLAMP, LOG_VAR_CLAMP))
        .collect();
    let sigma: Vec<f64> = log_var.iter().map(|v| (0.5 * v).exp()).collect();
    let z: Vec<f64> = mean
        .iter()
        .zip(&sigma)
        .zip(eps)
        .map(|((m, s), e)| m + s * e)
        .collect();
    let (dec_act, out) = decode_trace(params, &z);
    Trace {
        enc_act,
        mean,
        log_var_raw,
        log_var,
        sigma,
        z,
        dec_act,
        out,
    }
}

fn sample_terms(trace: &Trace, x: &[f64]) -> (f64, f64) {
    let recon = x
        .iter()
        .zip(&trace.out)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let kl = 0.5
        * trace
            .mean
            .iter()
            .zip(&trace.log_var)
            .map(|(m, lv)| m * m + lv.exp() - lv - 1.0)
            .sum::<f64>();
    (recon, kl)
}

fn check_batch(
    model: &VaeModel,
    batch: &ArrayView2<f64>,
    noise: &ArrayView2<f64>,
) -> Result<()> {
    let (l, k) = (model.arch.input_dim, model.arch.latent_dim);
    if batch.nrows() == 0 || batch.ncols() != l {
        return Err(Error::DimensionMismatch(format!(
            "batch is {:?}, model expects rows of {l}",
            batch.dim()
        )));
    }
    if noise.dim() != (batch.nrows(), k) {
        return Err(Error::DimensionMismatch(format!(
            "noise is {:?}, expected ({}, {k})",
            noise.dim(),
            batch.nrows()
        )));
    }
    Ok(())
}

fn row(view: &ArrayView2<f64>, i: usize) -> Vec<f64> {
    view.row(i).to_vec()
}

/// Negative ELBO (up to constants) averaged over the batch, with the
/// reparameterization noise supplied explicitly (`B x K`).
pub fn elbo_loss(
    model: &VaeModel,
    batch: ArrayView2<f64>,
    noise: ArrayView2<f64>,
    kl_weight: f64,
) -> Result<LossBreakdown> {
    check_batch(model, &batch, &noise)?;
    let b = batch.nrows() as f64;
    let (mut recon, mut kl) = (0.0, 0.0);
    for i in 0..batch.nrows() {
        let x = row(&batch, i);
        let trace = forward(&model.params, &x, &row(&noise, i));
        let (r, k) = sample_terms(&trace, &x);
        recon += r;
        kl += k;
    }
    let out = LossBreakdown {
        total: (recon + kl_weight * kl) / b,
        reconstruction: recon / b,
        kl: kl / b,
    };
    if !out.total.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: 0 });
    }
    Ok(out)
}

/// Loss and its exact gradient with respect to every parameter.
pub fn elbo_gradients(
    model: &VaeModel,
    batch: ArrayView2<f64>,
    noise: ArrayView2<f64>,
    kl_weight: f64,
) -> Result<(LossBreakdown, VaeParams)> {
    check_batch(model, &batch, &noise)?;
    let params = &model.params;
    let mut grads = VaeParams::zeros(&model.arch);
    let b = batch.nrows() as f64;
    let scale = 1.0 / b;
    let (mut recon, mut kl) = (0.0, 0.0);

    for i in 0..batch.nrows() {
        let x = row(&batch, i);
        let eps = row(&noise, i);
        let t = forward(params, &x, &eps);
        let (r, k) = sample_terms(&t, &x);
        recon += r;
        kl += k;

        // Output: d/dpre of (x - sigmoid(pre))^2.
        let delta: Vec<f64> = t
            .out
            .iter()
            .zip(&x)
            .map(|(o, xv)| -2.0 * (xv - o) * o * (1.0 - o) * scale)
            .collect();
        let mut d = params.affine_backward(&mut grads, layer::OUTPUT, &t.dec_act[2], &delta);
        for stage in (0..3).rev() {
            // ReLU subgradient is 0 at 0; activation > 0 iff pre-activation > 0.
            for (dv, a) in d.iter_mut().zip(&t.dec_act[stage]) {
                if *a <= 0.0 {
                    *dv = 0.0;
                }
            }
            let input = if stage == 0 { &t.z } else { &t.dec_act[stage - 1] };
            d = params.affine_backward(&mut grads, layer::DECODER[stage], input, &d);
        }
        let d_z = d;

        let d_mean: Vec<f64> = d_z
            .iter()
            .zip(&t.mean)
            .map(|(dz, m)| dz + kl_weight * m * scale)
            .collect();
        let d_log_var_raw: Vec<f64> = (0..d_z.len())
            .map(|j| {
                let lv = t.log_var[j];
                let d_lv =
                    d_z[j] * eps[j] * 0.5 * t.sigma[j] + kl_weight * 0.5 * (lv.exp() - 1.0) * scale;
                if (-LOG_VAR_CLAMP..=LOG_VAR_CLAMP).contains(&t.log_var_raw[j]) {
                    d_lv
                } else {
                    0.0
                }
            })
            .collect();

        let h3 = &t.enc_act[2];
        let mut d = params.affine_backward(&mut grads, layer::MEAN, h3, &d_mean);
        let d_from_var = params.affine_backward(&mut grads, layer::LOG_VAR, h3, &d_log_var_raw);
        d.iter_mut().zip(&d_from_var).for_each(|(a, b)| *a += b);
        for stage in (0..3).rev() {
            for (dv, a) in d.iter_mut().zip(&t.enc_act[stage]) {
                if *a <= 0.0 {
                    *dv = 0.0;
                }
            }
            let input = if stage == 0 { &x } else { &t.enc_act[stage - 1] };
            d = params.affine_backward(&mut grads, layer::ENCODER[stage], input, &d);
        }
    }

    let loss = LossBreakdown {
        total: (recon + kl_weight * kl) / b,
        reconstruction: recon / b,
        kl: kl / b,
    };
    if !loss.total.is_finite() || grads.values.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteLoss { epoch: 0 });
    }
    Ok((loss, grads))
}

/// Decoder output for latent code `z`.
pub fn decode(model: &VaeModel, z: &[f64]) -> Result<Spectrum> {
    if z.len() != model.arch.latent_dim {
        return Err(Error::DimensionMismatch(format!(
            "latent code has {} entries, model expects {}",
            z.len(),
            model.arch.latent_dim
        )));
    }
    let (_, out) = decode_trace(&model.params, z);
    Ok(Spectrum::new(out))
}

/// Smallest distance of any ReLU pre-activation (or log-variance clamp
/// boundary) from its kink, over the batch. Finite-difference checks are
/// only meaningful when this is well above the step size.
pub fn kink_margin(model: &VaeModel, batch: ArrayView2<f64>, noise: ArrayView2<f64>) -> Result<f64> {
    check_batch(model, &batch, &noise)?;
    let p = &model.params;
    let mut margin = f64::INFINITY;
    let mut track = |pre: &[f64]| {
        margin = pre.iter().fold(margin, |m, v| m.min(v.abs()));
    };
    for i in 0..batch.nrows() {
        let x = row(&batch, i);
        let t = forward(p, &x, &row(&noise, i));
        track(&p.affine(layer::ENCODER[0], &x));
        track(&p.affine(layer::ENCODER[1], &t.enc_act[0]));
        track(&p.affine(layer::ENCODER[2], &t.enc_act[1]));
        track(&p.affine(layer::DECODER[0], &t.z));
        track(&p.affine(layer::DECODER[1], &t.dec_act[0]));
        track(&p.affine(layer::DECODER[2], &t.dec_act[1]));
        let clamp_gap: Vec<f64> = t
            .log_var_raw
            .iter()
            .map(|v| LOG_VAR_CLAMP - v.abs())
            .collect();
        track(&clamp_gap);
    }
    Ok(margin)
}

/// Posterior mean and (clamped) log-variance for one input spectrum.
pub fn encode_posterior(model: &VaeModel, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.len() != model.arch.input_dim {
        return Err(Error::DimensionMismatch(format!(
            "input has {} bands, model expects {}",
            x.len(),
            model.arch.input_dim
        )));
    }
    let (_, mean, raw) = encode(&model.params, x);
    let lv = raw
        .into_iter()
        .map(|v| v.clamp(-LOG_VAR_CLAMP, LOG_VAR_CLAMP))
        .collect();
    Ok((mean, lv))
}
