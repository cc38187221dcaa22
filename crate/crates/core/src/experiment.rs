//! Monte Carlo driver for the synthetic library-mismatch study: per
//! realization, generate a dataset, unmix it with FCLS (class-mean
//! endmembers), MESMA (original library) and MESMA on the VAE-augmented
//! library, and score each against the ground truth.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::augment_library;
use crate::error::{Error, Result};
use crate::fcls::FclsSolver;
use crate::mesma::{mesma_unmix_with, MesmaOptions, MesmaResult, DEFAULT_COMBINATION_CAP};
use crate::metrics::{monte_carlo_summary, rmse, Summary};
use crate::rng::{derive_seed, stream};
use crate::spectral::{AbundanceMap, EndmemberMatrix, HyperImage, SpectralLibrary};
use crate::synth::{synthesize_image, SynthConfig, SynthDataset};
use crate::vae::{train_vae, TrainConfig, VaeModel};

/// Training length used by the experiment runner. 50 full-batch steps on a
/// 5-member class barely move the decoder off its initialization.
pub const EXPERIMENT_EPOCHS: usize = 1000;
/// At unit KL weight the posterior collapses and every draw decodes to the
/// class mean.
pub const EXPERIMENT_KL_WEIGHT: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub runs: usize,
    pub seed: u64,
    /// Synthetic signatures added per class by the proposed method.
    pub n_samples: usize,
    /// N_s values for the sweep.
    pub sweep: Vec<usize>,
    pub combination_cap: u128,
    pub synth: SynthConfig,
    #[serde(with = "train_serde")]
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            runs: 50,
            seed: 1,
            n_samples: 3,
            sweep: vec![0, 1, 2, 3, 4, 5, 6],
            combination_cap: DEFAULT_COMBINATION_CAP,
            synth: SynthConfig::default(),
            train: TrainConfig {
                epochs: EXPERIMENT_EPOCHS,
                kl_weight: EXPERIMENT_KL_WEIGHT,
                ..TrainConfig::default()
            },
        }
    }
}

mod train_serde {
    use super::TrainConfig;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Repr {
        epochs: usize,
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
        seed: u64,
        kl_weight: f64,
        latent_dim: usize,
    }

    pub fn serialize<S: Serializer>(t: &TrainConfig, s: S) -> Result<S::Ok, S::Error> {
        Repr {
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            seed: t.seed,
            kl_weight: t.kl_weight,
            latent_dim: t.latent_dim,
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<TrainConfig, D::Error> {
        let r = Repr::deserialize(d)?;
        Ok(TrainConfig {
            epochs: r.epochs,
            learning_rate: r.learning_rate,
            beta1: r.beta1,
            beta2: r.beta2,
            epsilon: r.epsilon,
            seed: r.seed,
            kl_weight: r.kl_weight,
            latent_dim: r.latent_dim,
        })
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.runs < 1 {
            return Err(Error::InvalidConfig("runs must be >= 1".into()));
        }
        self.synth.validate()?;
        self.train.validate()
    }

    fn mesma_options(&self) -> MesmaOptions {
        MesmaOptions {
            combination_cap: self.combination_cap,
        }
    }

    /// Synthetic-data config of realization `run`.
    pub fn realization(&self, run: usize) -> SynthConfig {
        SynthConfig {
            seed: derive_seed(self.seed, stream::REALIZATION, run as u64),
            ..self.synth.clone()
        }
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
            v.trim().parse().map_err(|_| format!("cannot parse {v:?}"))
        }
        fn list<T: std::str::FromStr>(v: &str) -> std::result::Result<Vec<T>, String> {
            v.split(',').filter(|s| !s.trim().is_empty()).map(num).collect()
        }
        let s = &mut self.synth;
        let t = &mut self.train;
        match key {
            "runs" => self.runs = num(value)?,
            "seed" => self.seed = num(value)?,
            "ns" | "n_samples" => self.n_samples = num(value)?,
            "sweep" | "ns_list" => self.sweep = list(value)?,
            "combination_cap" => self.combination_cap = num(value)?,
            "endmembers" => {
                s.endmembers = num(value)?;
                if s.dirichlet_concentration.len() != s.endmembers {
                    let a = s.dirichlet_concentration.first().copied().unwrap_or(5.0);
                    s.dirichlet_concentration = vec![a; s.endmembers];
                }
            }
            "bands" => s.bands = num(value)?,
            "pixels" => s.pixels = num(value)?,
            "pool1_size" => s.pool1_size = num(value)?,
            "pool2_size" => s.pool2_size = num(value)?,
            "library_size" | "library_subset_size" => s.library_subset_size = num(value)?,
            "gain_min" => s.gain_range.0 = num(value)?,
            "gain_max" => s.gain_range.1 = num(value)?,
            "offset_min" => s.offset_range.0 = num(value)?,
            "offset_max" => s.offset_range.1 = num(value)?,
            "dirichlet" => {
                let v: Vec<f64> = list(value)?;
                s.dirichlet_concentration = if v.len() == 1 {
                    vec![v[0]; s.endmembers]
                } else {
                    v
                };
            }
            "snr_db" => {
                s.snr_db = match value.trim() {
                    "none" | "inf" | "off" => None,
                    v => Some(num(v)?),
                }
            }
            "pool_gain_spread" => s.pool_gain_spread = num(value)?,
            "pool_offset_spread" => s.pool_offset_spread = num(value)?,
            "pool_shape_noise" => s.pool_shape_noise = num(value)?,
            "shape_seed" => s.shape_seed = num(value)?,
            "epochs" => t.epochs = num(value)?,
            "learning_rate" => t.learning_rate = num(value)?,
            "beta1" => t.beta1 = num(value)?,
            "beta2" => t.beta2 = num(value)?,
            "adam_epsilon" => t.epsilon = num(value)?,
            "kl_weight" => t.kl_weight = num(value)?,
            "latent_dim" => t.latent_dim = num(value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Parses flat `key = value` text (`#` starts a comment) on top of the
    /// defaults.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                message,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected key=value, got {line:?}")))?;
            cfg.set(k.trim(), v.trim()).map_err(parse_err)?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Serializes back to the `key = value` form accepted by [`parse`](Self::parse).
    pub fn to_key_values(&self) -> String {
        let s = &self.synth;
        let t = &self.train;
        let join = |v: &[String]| v.join(",");
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("runs", self.runs.to_string());
        kv("seed", self.seed.to_string());
        kv("ns", self.n_samples.to_string());
        kv("sweep", join(&self.sweep.iter().map(|v| v.to_string()).collect::<Vec<_>>()));
        kv("combination_cap", self.combination_cap.to_string());
        kv("endmembers", s.endmembers.to_string());
        kv("bands", s.bands.to_string());
        kv("pixels", s.pixels.to_string());
        kv("pool1_size", s.pool1_size.to_string());
        kv("pool2_size", s.pool2_size.to_string());
        kv("library_size", s.library_subset_size.to_string());
        kv("gain_min", format!("{:?}", s.gain_range.0));
        kv("gain_max", format!("{:?}", s.gain_range.1));
        kv("offset_min", format!("{:?}", s.offset_range.0));
        kv("offset_max", format!("{:?}", s.offset_range.1));
        kv(
            "dirichlet",
            join(&s.dirichlet_concentration.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>()),
        );
        kv("snr_db", s.snr_db.map_or("none".into(), |v| format!("{v:?}")));
        kv("pool_gain_spread", format!("{:?}", s.pool_gain_spread));
        kv("pool_offset_spread", format!("{:?}", s.pool_offset_spread));
        kv("pool_shape_noise", format!("{:?}", s.pool_shape_noise));
        kv("shape_seed", s.shape_seed.to_string());
        kv("epochs", t.epochs.to_string());
        kv("learning_rate", format!("{:?}", t.learning_rate));
        kv("beta1", format!("{:?}", t.beta1));
        kv("beta2", format!("{:?}", t.beta2));
        kv("adam_epsilon", format!("{:?}", t.epsilon));
        kv("kl_weight", format!("{:?}", t.kl_weight));
        kv("latent_dim", t.latent_dim.to_string());
        out
    }
}

/// RMSE of abundances and reconstructed pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub rmse_a: f64,
    pub rmse_y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub realized_snr_db: f64,
    pub fcls: Scores,
    pub mesma: Scores,
    pub proposed: Scores,
    /// Augmented residual <= plain residual at every pixel.
    pub residuals_monotone: bool,
    /// `(N_s, RMSE_A)` for each requested sweep value.
    pub sweep: Vec<(usize, f64)>,
}

/// FCLS of every pixel against one fixed endmember matrix.
pub fn fcls_unmix(img: &HyperImage, em: &EndmemberMatrix) -> Result<(AbundanceMap, Vec<f64>)> {
    if img.bands() != em.bands() {
        return Err(Error::DimensionMismatch(format!(
            "image has {} bands, endmembers have {}",
            img.bands(),
            em.bands()
        )));
    }
    let solver = FclsSolver::new(em)?;
    let sols = (0..img.num_pixels())
        .into_par_iter()
        .map(|n| solver.solve(img.pixel(n)))
        .collect::<Result<Vec<_>>>()?;
    let p = em.num_endmembers();
    let mut a = Array2::zeros((img.num_pixels(), p));
    let mut residuals = Vec::with_capacity(sols.len());
    for (n, s) in sols.into_iter().enumerate() {
        for k in 0..p {
            a[[n, k]] = s.abundances[k];
        }
        residuals.push(s.residual_sq);
    }
    Ok((AbundanceMap::new(a)?, residuals))
}

/// Trains one VAE per library class, class `k` seeded from `(seed, k)`.
pub fn train_class_models(lib: &SpectralLibrary, train: &TrainConfig, seed: u64) -> Result<Vec<VaeModel>> {
    lib.classes
        .par_iter()
        .enumerate()
        .map(|(k, class)| {
            let cfg = TrainConfig {
                seed: derive_seed(seed, stream::VAE_TRAIN, k as u64),
                ..train.clone()
            };
            train_vae(&class.members, &cfg)
        })
        .collect()
}

/// Seed of the latent draws that go with models trained from `seed`.
pub fn augmentation_seed(seed: u64) -> u64 {
    derive_seed(seed, stream::AUGMENT, 0)
}

fn score_mesma(ds: &SynthDataset, lib: &SpectralLibrary, res: &MesmaResult) -> Result<Scores> {
    Ok(Scores {
        rmse_a: rmse(res.abundances.values().view(), ds.true_abundances.values().view())?,
        rmse_y: rmse(res.reconstruct(lib)?.view(), ds.image.pixels().view())?,
    })
}

/// One Monte Carlo realization.
pub fn run_realization(cfg: &ExperimentConfig, run: usize) -> Result<RunRecord> {
    let synth = cfg.realization(run);
    let ds = synthesize_image(&synth)?;
    let opts = cfg.mesma_options();

    let means = EndmemberMatrix::from_columns(&ds.library.class_means())?;
    let (fcls_a, _) = fcls_unmix(&ds.image, &means)?;
    let mut fcls_y = Array2::zeros(ds.image.pixels().raw_dim());
    for (n, mut row) in fcls_y.rows_mut().into_iter().enumerate() {
        let mix = means.mix(&fcls_a.values().row(n).to_vec());
        row.iter_mut().zip(mix).for_each(|(o, v)| *o = v);
    }
    let fcls = Scores {
        rmse_a: rmse(fcls_a.values().view(), ds.true_abundances.values().view())?,
        rmse_y: rmse(fcls_y.view(), ds.image.pixels().view())?,
    };

    let plain = mesma_unmix_with(&ds.image, &ds.library, &opts)?;
    let mesma = score_mesma(&ds, &ds.library, &plain)?;

    let models = train_class_models(&ds.library, &cfg.train, synth.seed)?;
    let aug_seed = augmentation_seed(synth.seed);

    let augmented = augment_library(&ds.library, &models, cfg.n_samples, aug_seed)?;
    let aug_res = mesma_unmix_with(&ds.image, &augmented, &opts)?;
    let proposed = score_mesma(&ds, &augmented, &aug_res)?;
    let residuals_monotone = aug_res
        .residuals
        .iter()
        .zip(&plain.residuals)
        .all(|(a, p)| a <= p);

    let mut sweep = Vec::with_capacity(cfg.sweep.len());
    for &ns in &cfg.sweep {
        let rmse_a = if ns == cfg.n_samples {
            proposed.rmse_a
        } else {
            let lib = augment_library(&ds.library, &models, ns, aug_seed)?;
            let res = mesma_unmix_with(&ds.image, &lib, &opts)?;
            rmse(res.abundances.values().view(), ds.true_abundances.values().view())?
        };
        sweep.push((ns, rmse_a));
    }

    Ok(RunRecord {
        run,
        seed: synth.seed,
        realized_snr_db: ds.realized_snr_db,
        fcls,
        mesma,
        proposed,
        residuals_monotone,
        sweep,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: &'static str,
    pub rmse_a: Summary,
    pub rmse_y: Summary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub runs: Vec<RunRecord>,
    pub methods: Vec<MethodSummary>,
    /// `(N_s, RMSE_A summary)`.
    pub sweep: Vec<(usize, Summary)>,
}

/// Runs every realization on the current rayon pool. Output does not
/// depend on the pool size.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    if cfg.runs < 2 {
        return Err(Error::InsufficientRuns {
            needed: 2,
            got: cfg.runs,
        });
    }
    let runs = (0..cfg.runs)
        .into_par_iter()
        .map(|r| run_realization(cfg, r))
        .collect::<Result<Vec<_>>>()?;
    summarize(runs)
}

pub fn summarize(runs: Vec<RunRecord>) -> Result<ExperimentReport> {
    let col = |f: &dyn Fn(&RunRecord) -> f64| -> Result<Summary> {
        monte_carlo_summary(&runs.iter().map(f).collect::<Vec<_>>())
    };
    let methods = vec![
        MethodSummary {
            method: "FCLS",
            rmse_a: col(&|r| r.fcls.rmse_a)?,
            rmse_y: col(&|r| r.fcls.rmse_y)?,
        },
        MethodSummary {
            method: "MESMA",
            rmse_a: col(&|r| r.mesma.rmse_a)?,
            rmse_y: col(&|r| r.mesma.rmse_y)?,
        },
        MethodSummary {
            method: "Proposed",
            rmse_a: col(&|r| r.proposed.rmse_a)?,
            rmse_y: col(&|r| r.proposed.rmse_y)?,
        },
    ];
    let sweep_len = runs.first().map_or(0, |r| r.sweep.len());
    let sweep = (0..sweep_len)
        .map(|i| Ok((runs[0].sweep[i].0, col(&|r| r.sweep[i].1)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport {
        runs,
        methods,
        sweep,
    })
}

fn fmt_value(v: f64, scaled: bool) -> String {
    if scaled {
        format!("{:.4}", v * 1e3)
    } else {
        format!("{v:.9e}")
    }
}

impl ExperimentReport {
    /// Method x metric table; `scaled` multiplies values by 10^3.
    pub fn results_csv(&self, scaled: bool) -> String {
        let mut out = String::from("method,rmse_a_mean,rmse_a_sd,rmse_y_mean,rmse_y_sd\n");
        for m in &self.methods {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                m.method,
                fmt_value(m.rmse_a.mean, scaled),
                fmt_value(m.rmse_a.std_dev, scaled),
                fmt_value(m.rmse_y.mean, scaled),
                fmt_value(m.rmse_y.std_dev, scaled)
            );
        }
        out
    }

    pub fn sweep_csv(&self, scaled: bool) -> String {
        let mut out = String::from("ns,rmse_a_mean,rmse_a_sd\n");
        for (ns, s) in &self.sweep {
            let _ = writeln!(out, "{ns},{},{}", fmt_value(s.mean, scaled), fmt_value(s.std_dev, scaled));
        }
        out
    }

    pub fn runs_csv(&self) -> String {
        let mut out = String::from(
            "run,seed,snr_db,fcls_rmse_a,fcls_rmse_y,mesma_rmse_a,mesma_rmse_y,proposed_rmse_a,proposed_rmse_y,residuals_monotone",
        );
        if let Some(r) = self.runs.first() {
            for (ns, _) in &r.sweep {
                let _ = write!(out, ",rmse_a_ns{ns}");
            }
        }
        out.push('\n');
        for r in &self.runs {
            let _ = write!(
                out,
                "{},{},{:.6},{:e},{:e},{:e},{:e},{:e},{:e},{}",
                r.run,
                r.seed,
                r.realized_snr_db,
                r.fcls.rmse_a,
                r.fcls.rmse_y,
                r.mesma.rmse_a,
                r.mesma.rmse_y,
                r.proposed.rmse_a,
                r.proposed.rmse_y,
                r.residuals_monotone
            );
            for (_, v) in &r.sweep {
                let _ = write!(out, ",{v:e}");
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.runs = 7;
        cfg.synth.snr_db = None;
        cfg.synth.gain_range = (0.8, 1.2);
        cfg.train.kl_weight = 0.25;
        cfg.sweep = vec![0, 2, 5];
        let text = cfg.to_key_values();
        assert_eq!(ExperimentConfig::parse(&text, "x").unwrap(), cfg);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "runs = 3\n# comment\n\nbogus = 1\n";
        match ExperimentConfig::parse(text, "cfg.txt") {
            Err(Error::Parse { line: 4, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            ExperimentConfig::parse("runs: 3", "c"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            ExperimentConfig::parse("\nruns = three", "c"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn dirichlet_scalar_broadcasts() {
        let cfg = ExperimentConfig::parse("endmembers = 4\ndirichlet = 2.5", "c").unwrap();
        assert_eq!(cfg.synth.dirichlet_concentration, vec![2.5; 4]);
    }
}
