use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mesma_aug::augment::augment_library;
use mesma_aug::experiment::{
    augmentation_seed, fcls_unmix, run_experiment, train_class_models, ExperimentConfig,
};
use mesma_aug::io;
use mesma_aug::mesma::{mesma_unmix_with, MesmaOptions, DEFAULT_COMBINATION_CAP};
use mesma_aug::spectral::{EndmemberMatrix, SpectralLibrary};
use mesma_aug::vae::{load_model, save_model, TrainConfig, VaeModel};
use mesma_aug::{Error, ErrorCategory};

/// Exit codes by error category; clap uses 2 for usage errors.
fn exit_code(cat: ErrorCategory) -> u8 {
    match cat {
        ErrorCategory::Io => 3,
        ErrorCategory::Validation => 4,
        ErrorCategory::Numerical => 5,
        ErrorCategory::Config => 6,
    }
}

type CliResult<T> = std::result::Result<T, Error>;

#[derive(Parser)]
#[command(name = "mesma-aug", version, about = "MESMA unmixing with VAE-augmented spectral libraries")]
struct Cli {
    /// Worker threads (0 = all cores). Results do not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo study on synthetic data: FCLS vs MESMA vs augmented MESMA.
    SynthExperiment(ExperimentArgs),
    /// Mean RMSE_A of augmented MESMA for a list of N_s values.
    NsSweep {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Comma-separated N_s values.
        #[arg(long, value_delimiter = ',', default_values_t = [0usize, 1, 2, 3, 4, 5, 6])]
        ns_list: Vec<usize>,
    },
    /// Unmix an image CSV against a library CSV.
    Unmix {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        library: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Mesma)]
        mode: Mode,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, default_value_t = 3)]
        ns: usize,
        #[arg(long, default_value_t = DEFAULT_COMBINATION_CAP)]
        combination_cap: u128,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Train one generator per library class and save them.
    TrainVae {
        #[arg(long)]
        library: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Append decoded signatures to each class using saved generators.
    AugmentLib {
        #[arg(long)]
        library: PathBuf,
        /// Directory holding class_<k>.vae files written by train-vae.
        #[arg(long)]
        models: PathBuf,
        #[arg(long, default_value_t = 3)]
        ns: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Fcls,
    Mesma,
    Augmented,
}

#[derive(Args)]
struct ExperimentArgs {
    /// key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra key=value overrides, applied after the file and flags.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    ns: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    combination_cap: Option<u128>,
    /// Report table values multiplied by 10^3.
    #[arg(long)]
    scaled: bool,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    learning_rate: f64,
    #[arg(long, default_value_t = TrainConfig::default().kl_weight)]
    kl_weight: f64,
}

impl TrainArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            kl_weight: self.kl_weight,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }
}

impl ExperimentArgs {
    fn config(&self) -> CliResult<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.runs {
            cfg.runs = v;
        }
        if let Some(v) = self.ns {
            cfg.n_samples = v;
        }
        if let Some(v) = self.epochs {
            cfg.train.epochs = v;
        }
        if let Some(v) = self.combination_cap {
            cfg.combination_cap = v;
        }
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("override {kv:?} is not key=value")))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|m| Error::InvalidConfig(format!("override {kv:?}: {m}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn model_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("class_{k}.vae"))
}

fn save_models(models: &[VaeModel], lib: &SpectralLibrary, dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    let mut log = String::from("class,material,epoch,loss,reconstruction,kl\n");
    for (k, (m, material)) in models.iter().zip(lib.materials()).enumerate() {
        save_model(m, model_path(dir, k))?;
        for (e, l) in m.training_log.iter().enumerate() {
            log.push_str(&format!(
                "{k},{material},{e},{:e},{:e},{:e}\n",
                l.loss, l.reconstruction, l.kl
            ));
        }
    }
    fs::write(dir.join("training_log.csv"), log)?;
    Ok(())
}

fn synth_experiment(args: &ExperimentArgs, sweep: Option<&[usize]>) -> CliResult<()> {
    let mut cfg = args.config()?;
    if let Some(list) = sweep {
        cfg.sweep = list.to_vec();
    }
    fs::create_dir_all(&args.out_dir)?;
    let report = run_experiment(&cfg)?;
    fs::write(args.out_dir.join("config.txt"), cfg.to_key_values())?;
    fs::write(args.out_dir.join("runs.csv"), report.runs_csv())?;
    if sweep.is_some() {
        let table = report.sweep_csv(args.scaled);
        fs::write(args.out_dir.join("sweep.csv"), &table)?;
        print!("{table}");
    } else {
        let table = report.results_csv(args.scaled);
        fs::write(args.out_dir.join("results.csv"), &table)?;
        print!("{table}");
    }
    Ok(())
}

fn unmix(
    image: &Path,
    library: &Path,
    mode: Mode,
    train: &TrainArgs,
    ns: usize,
    combination_cap: u128,
    out_dir: &Path,
) -> CliResult<()> {
    let img = io::read_image(image)?;
    let lib = io::read_library(library)?;
    fs::create_dir_all(out_dir)?;
    let opts = MesmaOptions { combination_cap };
    let materials = lib.materials();
    match mode {
        Mode::Fcls => {
            let em = EndmemberMatrix::from_columns(&lib.class_means())?;
            let (a, residuals) = fcls_unmix(&img, &em)?;
            io::write_abundances(a.values(), &materials, out_dir.join("abundances.csv"))?;
            io::write_residuals(&residuals, out_dir.join("residuals.csv"))?;
            println!("models_evaluated: 1");
        }
        Mode::Mesma => {
            let res = mesma_unmix_with(&img, &lib, &opts)?;
            io::write_mesma_outputs(&res, &lib, out_dir)?;
            println!("models_evaluated: {}", res.models_evaluated);
        }
        Mode::Augmented => {
            let models = train_class_models(&lib, &train.config(), train.seed)?;
            let aug = augment_library(&lib, &models, ns, augmentation_seed(train.seed))?;
            let res = mesma_unmix_with(&img, &aug, &opts)?;
            io::write_mesma_outputs(&res, &aug, out_dir)?;
            io::write_library(&aug, true, out_dir.join("augmented_library.csv"))?;
            save_models(&models, &lib, &out_dir.join("models"))?;
            println!("models_evaluated: {}", res.models_evaluated);
        }
    }
    Ok(())
}

fn train_vae_cmd(library: &Path, train: &TrainArgs, out_dir: &Path) -> CliResult<()> {
    let lib = io::read_library(library)?;
    let models = train_class_models(&lib, &train.config(), train.seed)?;
    save_models(&models, &lib, out_dir)?;
    for (m, material) in models.iter().zip(lib.materials()) {
        let first = m.training_log.first().map_or(f64::NAN, |l| l.loss);
        let last = m.training_log.last().map_or(f64::NAN, |l| l.loss);
        println!("{material}: loss {first:.6} -> {last:.6}");
    }
    Ok(())
}

fn augment_cmd(library: &Path, models_dir: &Path, ns: usize, seed: u64, out_dir: &Path) -> CliResult<()> {
    let lib = io::read_library(library)?;
    let models = (0..lib.num_classes())
        .map(|k| load_model(model_path(models_dir, k)))
        .collect::<CliResult<Vec<_>>>()?;
    let aug = augment_library(&lib, &models, ns, augmentation_seed(seed))?;
    fs::create_dir_all(out_dir)?;
    io::write_library(&aug, true, out_dir.join("augmented_library.csv"))?;
    println!("classes: {:?}", aug.class_sizes());
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::SynthExperiment(args) => synth_experiment(args, None),
        Command::NsSweep { exp, ns_list } => synth_experiment(exp, Some(ns_list)),
        Command::Unmix {
            image,
            library,
            mode,
            train,
            ns,
            combination_cap,
            out_dir,
        } => unmix(image, library, *mode, train, *ns, *combination_cap, out_dir),
        Command::TrainVae {
            library,
            train,
            out_dir,
        } => train_vae_cmd(library, train, out_dir),
        Command::AugmentLib {
            library,
            models,
            ns,
            seed,
            out_dir,
        } => augment_cmd(library, models, *ns, *seed, out_dir),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: category=config message=\"{e}\"");
            return ExitCode::from(exit_code(ErrorCategory::Config));
        }
    };
    let start = Instant::now();
    let outcome = pool.install(|| run(&cli));
    match outcome {
        Ok(()) => {
            println!("wall_time_s: {:.3}", start.elapsed().as_secs_f64());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let cat = e.category();
            eprintln!("error: category={} message=\"{e}\"", cat.as_str());
            ExitCode::from(exit_code(cat))
        }
    }
}
