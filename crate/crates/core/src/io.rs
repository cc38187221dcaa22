//! CSV readers and writers for libraries, images and unmixing outputs, the
//! image sidecar, and synthetic dataset export.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mesma::MesmaResult;
use crate::spectral::{HyperImage, MaterialClass, Origin, SpectralLibrary, Spectrum};
use crate::synth::{SynthConfig, SynthDataset};

fn parse_err(path: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        message: message.into(),
    }
}

fn parse_f64(path: &str, line: usize, field: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("not a number: {field:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("non-finite value {field:?}")));
    }
    Ok(v)
}

fn parse_bool(path: &str, line: usize, field: &str) -> Result<bool> {
    match field.trim() {
        "1" | "true" | "TRUE" | "True" => Ok(true),
        "0" | "false" | "FALSE" | "False" | "" => Ok(false),
        other => Err(parse_err(path, line, format!("bad synthetic flag {other:?}"))),
    }
}

fn reader(text: &[u8]) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text)
}

/// Parses library CSV text. Header is `material,[synthetic,]band_0,...`.
pub fn parse_library(text: &str, origin: &str) -> Result<SpectralLibrary> {
    let mut rdr = reader(text.as_bytes());
    let mut records = rdr.records();
    let header = match records.next() {
        Some(r) => r?,
        None => return Err(parse_err(origin, 1, "empty file")),
    };
    if header.get(0) != Some("material") {
        return Err(parse_err(origin, 1, "first column must be `material`"));
    }
    let has_flag = header.get(1) == Some("synthetic");
    let first_band = if has_flag { 2 } else { 1 };
    let bands = header.len() - first_band;
    if bands == 0 {
        return Err(parse_err(origin, 1, "no band columns"));
    }

    let mut order: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut members: Vec<Vec<Spectrum>> = Vec::new();
    let mut synth_count: Vec<usize> = Vec::new();
    for rec in records {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        if rec.len() != header.len() {
            return Err(parse_err(
                origin,
                line,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        let material = rec.get(0).unwrap_or_default().to_string();
        if material.is_empty() {
            return Err(parse_err(origin, line, "empty material name"));
        }
        let synthetic = has_flag && parse_bool(origin, line, rec.get(1).unwrap_or_default())?;
        let values = (first_band..rec.len())
            .map(|i| parse_f64(origin, line, &rec[i]))
            .collect::<Result<Vec<_>>>()?;
        let k = *index.entry(material.clone()).or_insert_with(|| {
            order.push(material.clone());
            members.push(Vec::new());
            synth_count.push(0);
            order.len() - 1
        });
        let mut s = Spectrum::labeled(values, material);
        if synthetic {
            s.origin = Origin::Synthetic {
                class: k,
                draw: synth_count[k],
            };
            synth_count[k] += 1;
        }
        members[k].push(s);
    }
    let classes = order
        .into_iter()
        .zip(members)
        .map(|(m, s)| MaterialClass::new(m, s))
        .collect();
    SpectralLibrary::new(classes)
}

pub fn read_library(path: impl AsRef<Path>) -> Result<SpectralLibrary> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_library(&text, &path.display().to_string())
}

fn band_header(bands: usize) -> impl Iterator<Item = String> {
    (0..bands).map(|b| format!("band_{b}"))
}

/// Library CSV. With `flag_synthetic` a `synthetic` column (0/1) follows
/// the material name.
pub fn write_library_to<W: Write>(lib: &SpectralLibrary, flag_synthetic: bool, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["material".to_string()];
    if flag_synthetic {
        header.push("synthetic".into());
    }
    header.extend(band_header(lib.bands()));
    w.write_record(&header)?;
    for class in &lib.classes {
        for s in &class.members {
            let mut row = vec![class.material.clone()];
            if flag_synthetic {
                row.push(if s.origin.is_synthetic() { "1" } else { "0" }.into());
            }
            row.extend(s.values.iter().map(|v| format!("{v:?}")));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_library(lib: &SpectralLibrary, flag_synthetic: bool, path: impl AsRef<Path>) -> Result<()> {
    write_library_to(lib, flag_synthetic, fs::File::create(path)?)
}

/// `<image path>.meta`.
pub fn sidecar_path(image: &Path) -> PathBuf {
    let mut s = image.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageMeta {
    pub rows: usize,
    pub cols: usize,
    pub bands: usize,
}

pub fn parse_meta(text: &str, origin: &str) -> Result<ImageMeta> {
    let (mut rows, mut cols, mut bands) = (None, None, None);
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| parse_err(origin, i + 1, "expected key=value"))?;
        let v: usize = v
            .trim()
            .parse()
            .map_err(|_| parse_err(origin, i + 1, format!("bad integer {:?}", v.trim())))?;
        match k.trim() {
            "rows" => rows = Some(v),
            "cols" => cols = Some(v),
            "L" | "bands" => bands = Some(v),
            other => return Err(parse_err(origin, i + 1, format!("unknown key {other:?}"))),
        }
    }
    match (rows, cols, bands) {
        (Some(rows), Some(cols), Some(bands)) => Ok(ImageMeta { rows, cols, bands }),
        _ => Err(parse_err(origin, 0, "sidecar needs rows, cols and L")),
    }
}

/// Pixel-per-row CSV; a leading `band_*` header row is optional.
pub fn parse_image(text: &str, origin: &str) -> Result<Array2<f64>> {
    let mut rdr = reader(text.as_bytes());
    let mut data = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(i + 1, |p| p.line() as usize);
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        if i == 0 && rec.get(0).is_some_and(|f| f.starts_with("band")) {
            width = Some(rec.len());
            continue;
        }
        match width {
            Some(w) if w != rec.len() => {
                return Err(parse_err(origin, line, format!("expected {w} fields, found {}", rec.len())))
            }
            _ => width = Some(rec.len()),
        }
        for f in rec.iter() {
            data.push(parse_f64(origin, line, f)?);
        }
        rows += 1;
    }
    let width = width.ok_or_else(|| parse_err(origin, 1, "empty image"))?;
    if rows == 0 {
        return Err(parse_err(origin, 1, "image has no pixels"));
    }
    Array2::from_shape_vec((rows, width), data).map_err(|e| Error::InvalidDimensions(e.to_string()))
}

/// Reads an image, applying `<path>.meta` when present.
pub fn read_image(path: impl AsRef<Path>) -> Result<HyperImage> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let pixels = parse_image(&text, &path.display().to_string())?;
    let img = HyperImage::new(pixels)?;
    let side = sidecar_path(path);
    if !side.exists() {
        return Ok(img);
    }
    let meta = parse_meta(&fs::read_to_string(&side)?, &side.display().to_string())?;
    if meta.bands != img.bands() {
        return Err(Error::DimensionMismatch(format!(
            "sidecar says L = {}, image has {} bands",
            meta.bands,
            img.bands()
        )));
    }
    img.with_dims(meta.rows, meta.cols)
}

fn write_matrix<W: Write>(header: &[String], m: &Array2<f64>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in m.rows() {
        w.write_record(row.iter().map(|v| format!("{v:?}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the image and, if it has spatial dims, its sidecar.
pub fn write_image(img: &HyperImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let header: Vec<String> = band_header(img.bands()).collect();
    write_matrix(&header, img.pixels(), fs::File::create(path)?)?;
    if let Some((rows, cols)) = img.dims() {
        fs::write(
            sidecar_path(path),
            format!("rows={rows}\ncols={cols}\nL={}\n", img.bands()),
        )?;
    }
    Ok(())
}

/// Pixel x material abundance CSV with material names as header.
pub fn write_abundances(values: &Array2<f64>, materials: &[&str], path: impl AsRef<Path>) -> Result<()> {
    let header: Vec<String> = materials.iter().map(|m| m.to_string()).collect();
    write_matrix(&header, values, fs::File::create(path)?)
}

pub fn read_abundances(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let mut text = String::new();
    fs::File::open(path)?.read_to_string(&mut text)?;
    let body = text.split_once('\n').map_or("", |(_, b)| b);
    parse_image(body, &path.display().to_string())
}

/// Per-pixel member indices (0-based within each class).
pub fn write_selections(sel: &Array2<usize>, materials: &[&str], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(materials)?;
    for row in sel.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_residuals(residuals: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["pixel", "residual_sq"])?;
    for (n, r) in residuals.iter().enumerate() {
        w.write_record([n.to_string(), format!("{r:?}")])?;
    }
    w.flush()?;
    Ok(())
}

/// Abundance, selection and residual CSVs of a MESMA run into `dir`.
pub fn write_mesma_outputs(res: &MesmaResult, lib: &SpectralLibrary, dir: &Path) -> Result<()> {
    let materials = lib.materials();
    write_abundances(res.abundances.values(), &materials, dir.join("abundances.csv"))?;
    write_selections(&res.selections, &materials, dir.join("selections.csv"))?;
    write_residuals(&res.residuals, dir.join("residuals.csv"))
}

#[derive(Serialize)]
struct Manifest<'a> {
    generator: &'static str,
    crate_version: &'static str,
    config: &'a SynthConfig,
    realized_snr_db: f64,
    pixels: usize,
    bands: usize,
    files: [&'static str; 5],
}

/// Writes `image.csv`, `clean.csv`, `library.csv`, `abundances.csv`,
/// `selections.csv` and `manifest.json` into `dir`.
pub fn export_dataset(ds: &SynthDataset, cfg: &SynthConfig, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_image(&ds.image, dir.join("image.csv"))?;
    let band_names: Vec<String> = band_header(ds.image.bands()).collect();
    write_matrix(&band_names, &ds.clean, fs::File::create(dir.join("clean.csv"))?)?;
    write_library(&ds.library, false, dir.join("library.csv"))?;
    let materials = ds.library.materials();
    write_abundances(ds.true_abundances.values(), &materials, dir.join("abundances.csv"))?;
    write_selections(&ds.true_selections, &materials, dir.join("selections.csv"))?;
    let manifest = Manifest {
        generator: "mesma-aug synth",
        crate_version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        realized_snr_db: ds.realized_snr_db,
        pixels: ds.image.num_pixels(),
        bands: ds.image.bands(),
        files: ["image.csv", "clean.csv", "library.csv", "abundances.csv", "selections.csv"],
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Reads the generating config back from a dataset manifest.
pub fn read_manifest_config(path: impl AsRef<Path>) -> Result<SynthConfig> {
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path)?)?;
    Ok(serde_json::from_value(v["config"].clone())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::synthesize_image;

    const LIB: &str = "material,band_0,band_1\nsoil,0.1,0.2\nveg,0.5,0.6\nsoil,0.3,0.4\n";

    #[test]
    fn library_groups_by_first_appearance() {
        let lib = parse_library(LIB, "t").unwrap();
        assert_eq!(lib.materials(), vec!["soil", "veg"]);
        assert_eq!(lib.class_sizes(), vec![2, 1]);
        assert_eq!(lib.classes[0].members[1].values, vec![0.3, 0.4]);
    }

    #[test]
    fn library_round_trip_with_flag() {
        let mut lib = parse_library(LIB, "t").unwrap();
        lib.classes[1].members.push(Spectrum {
            values: vec![0.1 + 0.2, 1.0 / 3.0],
            label: Some("veg".into()),
            origin: Origin::Synthetic { class: 1, draw: 0 },
        });
        let mut buf = Vec::new();
        write_library_to(&lib, true, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("material,synthetic,band_0,band_1\n"));
        assert_eq!(parse_library(&text, "t").unwrap(), lib);

        let mut plain = Vec::new();
        write_library_to(&lib, false, &mut plain).unwrap();
        let back = parse_library(std::str::from_utf8(&plain).unwrap(), "t").unwrap();
        assert!(back.classes[1].members.iter().all(|s| !s.origin.is_synthetic()));
    }

    #[test]
    fn library_errors_name_the_line() {
        let bad = "material,band_0,band_1\nsoil,0.1,0.2\nveg,0.5\n";
        assert!(matches!(parse_library(bad, "t"), Err(Error::Parse { line: 3, .. })));
        let bad = "material,band_0\nsoil,0.1\nsoil,abc\n";
        assert!(matches!(parse_library(bad, "t"), Err(Error::Parse { line: 3, .. })));
        let bad = "name,band_0\nsoil,0.1\n";
        assert!(matches!(parse_library(bad, "t"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_library("", "t"), Err(Error::Parse { .. })));
    }

    #[test]
    fn image_header_is_optional() {
        let a = parse_image("band_0,band_1\n0.1,0.2\n0.3,0.4\n", "t").unwrap();
        let b = parse_image("0.1,0.2\n0.3,0.4\n", "t").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), (2, 2));
        assert!(matches!(
            parse_image("0.1,0.2\n0.3\n", "t"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn sidecar_parsing() {
        let m = parse_meta("rows=2\ncols = 3\nL=4\n", "m").unwrap();
        assert_eq!(m, ImageMeta { rows: 2, cols: 3, bands: 4 });
        assert!(matches!(parse_meta("rows=2\ncols=x\n", "m"), Err(Error::Parse { line: 2, .. })));
        assert!(parse_meta("rows=2\n", "m").is_err());
    }

    #[test]
    fn image_file_round_trip_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let px = Array2::from_shape_fn((6, 3), |(i, j)| (i * 3 + j) as f64 / 17.0);
        let img = HyperImage::new(px).unwrap().with_dims(2, 3).unwrap();
        let path = dir.path().join("img.csv");
        write_image(&img, &path).unwrap();
        assert!(sidecar_path(&path).exists());
        assert_eq!(read_image(&path).unwrap(), img);

        fs::write(sidecar_path(&path), "rows=2\ncols=3\nL=5\n").unwrap();
        assert!(matches!(read_image(&path), Err(Error::DimensionMismatch(_))));
        assert!(matches!(read_image(dir.path().join("nope.csv")), Err(Error::Io(_))));
    }

    #[test]
    fn dataset_export_round_trips() {
        let cfg = SynthConfig {
            bands: 20,
            pixels: 30,
            ..SynthConfig::default()
        };
        let ds = synthesize_image(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        export_dataset(&ds, &cfg, dir.path()).unwrap();
        assert_eq!(read_manifest_config(dir.path().join("manifest.json")).unwrap(), cfg);
        assert_eq!(read_image(dir.path().join("image.csv")).unwrap(), ds.image);
        assert_eq!(read_library(dir.path().join("library.csv")).unwrap(), ds.library);
        let a = read_abundances(dir.path().join("abundances.csv")).unwrap();
        assert_eq!(&a, ds.true_abundances.values());
    }
}
