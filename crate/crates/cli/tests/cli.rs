use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mesma_aug::io;
use mesma_aug::spectral::{MaterialClass, SpectralLibrary};
use mesma_aug::synth::{synthesize_image, SynthConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mesma-aug"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small dataset written as image.csv / library.csv under `dir`.
fn small_dataset(dir: &Path) {
    let cfg = SynthConfig {
        bands: 24,
        pixels: 40,
        ..SynthConfig::default()
    };
    let ds = synthesize_image(&cfg).unwrap();
    io::export_dataset(&ds, &cfg, dir).unwrap();
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn singleton_library_mesma_matches_fcls() {
    let tmp = tempfile::tempdir().unwrap();
    small_dataset(tmp.path());
    let lib = io::read_library(tmp.path().join("library.csv")).unwrap();
    let single = SpectralLibrary::new(
        lib.class_means()
            .into_iter()
            .zip(lib.materials())
            .map(|(s, m)| MaterialClass::new(m, vec![s]))
            .collect(),
    )
    .unwrap();
    let lib_path = tmp.path().join("single.csv");
    io::write_library(&single, false, &lib_path).unwrap();

    let image = tmp.path().join("image.csv");
    let (a, b) = (tmp.path().join("fcls"), tmp.path().join("mesma"));
    ok(&["unmix", "--image", p(&image), "--library", p(&lib_path), "--mode", "fcls", "--out-dir", p(&a)]);
    let stdout = ok(&["unmix", "--image", p(&image), "--library", p(&lib_path), "--mode", "mesma", "--out-dir", p(&b)]);
    assert!(stdout.contains("models_evaluated: 1"));
    assert!(stdout.contains("wall_time_s"));
    assert_eq!(read(&a, "abundances.csv"), read(&b, "abundances.csv"));
    assert_eq!(read(&a, "residuals.csv"), read(&b, "residuals.csv"));
}

#[test]
fn augmented_with_zero_samples_matches_mesma() {
    let tmp = tempfile::tempdir().unwrap();
    small_dataset(tmp.path());
    let image = tmp.path().join("image.csv");
    let lib = tmp.path().join("library.csv");
    let (a, b) = (tmp.path().join("mesma"), tmp.path().join("aug"));
    let s = ok(&["unmix", "--image", p(&image), "--library", p(&lib), "--mode", "mesma", "--out-dir", p(&a)]);
    assert!(s.contains("models_evaluated: 125"));
    ok(&[
        "unmix", "--image", p(&image), "--library", p(&lib), "--mode", "augmented", "--ns", "0", "--epochs", "5",
        "--out-dir", p(&b),
    ]);
    for f in ["abundances.csv", "selections.csv", "residuals.csv"] {
        assert_eq!(read(&a, f), read(&b, f), "{f}");
    }
    assert!(b.join("models/class_0.vae").exists());
    assert!(read(&b, "augmented_library.csv").starts_with("material,synthetic,band_0"));
}

#[test]
fn train_then_augment_matches_unmix_export() {
    let tmp = tempfile::tempdir().unwrap();
    small_dataset(tmp.path());
    let image = tmp.path().join("image.csv");
    let lib = tmp.path().join("library.csv");
    let models = tmp.path().join("models");
    let aug = tmp.path().join("aug");
    let un = tmp.path().join("unmix");
    let common = ["--seed", "11", "--epochs", "20"];
    let mut args = vec!["train-vae", "--library", p(&lib), "--out-dir", p(&models)];
    args.extend(common);
    ok(&args);
    assert!(read(&models, "training_log.csv").lines().count() == 1 + 3 * 20);
    ok(&["augment-lib", "--library", p(&lib), "--models", p(&models), "--ns", "2", "--seed", "11", "--out-dir", p(&aug)]);
    let mut args = vec!["unmix", "--image", p(&image), "--library", p(&lib), "--mode", "augmented", "--ns", "2", "--out-dir", p(&un)];
    args.extend(common);
    ok(&args);
    assert_eq!(read(&aug, "augmented_library.csv"), read(&un, "augmented_library.csv"));
    let back = io::read_library(aug.join("augmented_library.csv")).unwrap();
    assert_eq!(back.class_sizes(), vec![7, 7, 7]);
}

#[test]
fn missing_file_and_bad_input_exit_differently() {
    let tmp = tempfile::tempdir().unwrap();
    small_dataset(tmp.path());
    let image = tmp.path().join("image.csv");
    let missing = run(&["unmix", "--image", p(&image), "--library", p(&tmp.path().join("nope.csv"))]);
    let bad_lib = tmp.path().join("bad.csv");
    fs::write(&bad_lib, "material,band_0\nsoil,abc\n").unwrap();
    let invalid = run(&["unmix", "--image", p(&image), "--library", p(&bad_lib)]);
    let (m, v) = (missing.status.code().unwrap(), invalid.status.code().unwrap());
    assert_ne!(m, 0);
    assert_ne!(v, 0);
    assert_ne!(m, v);
    assert!(String::from_utf8_lossy(&missing.stderr).contains("category=io"));
    let err = String::from_utf8_lossy(&invalid.stderr);
    assert!(err.contains("category=validation") && err.contains("bad.csv:2:"), "{err}");

    let cfg = tmp.path().join("cfg.txt");
    fs::write(&cfg, "runs = 2\nbands = twelve\n").unwrap();
    let out = run(&["synth-experiment", "--config", p(&cfg), "--out-dir", p(tmp.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("cfg.txt:2:"));
}

#[test]
fn synth_experiment_is_deterministic_across_threads() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.txt");
    fs::write(&cfg, "runs = 3\nbands = 20\npixels = 60\n").unwrap();
    let mut tables = Vec::new();
    for (i, threads) in ["1", "4", "4"].iter().enumerate() {
        let out = tmp.path().join(format!("o{i}"));
        ok(&[
            "synth-experiment", "--config", p(&cfg), "--epochs", "30", "--seed", "5", "--threads", threads,
            "--out-dir", p(&out),
        ]);
        tables.push((read(&out, "results.csv"), read(&out, "runs.csv")));
    }
    assert_eq!(tables[0], tables[1]);
    assert_eq!(tables[1], tables[2]);
    let header: Vec<&str> = tables[0].0.lines().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(header, ["method", "FCLS", "MESMA", "Proposed"]);
}

#[test]
fn ns_sweep_zero_row_is_mesma() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sw");
    ok(&[
        "ns-sweep", "--runs", "2", "--set", "bands=16", "--set", "pixels=30", "--epochs", "20", "--ns-list", "0,2",
        "--out-dir", p(&out),
    ]);
    let runs = read(&out, "runs.csv");
    let header: Vec<&str> = runs.lines().next().unwrap().split(',').collect();
    let mesma = header.iter().position(|h| *h == "mesma_rmse_a").unwrap();
    let ns0 = header.iter().position(|h| *h == "rmse_a_ns0").unwrap();
    for line in runs.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[mesma], f[ns0]);
    }
    assert_eq!(read(&out, "sweep.csv").lines().count(), 3);
}
