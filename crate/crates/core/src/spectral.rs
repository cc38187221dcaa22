//! Shared domain types: spectra, libraries, images, endmember matrices and
//! abundance maps, plus validation helpers.

use std::collections::HashSet;

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};

/// Absolute tolerance on abundance row sums.
pub const SIMPLEX_TOL: f64 = 1e-6;

/// Where a library signature came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Origin {
    /// Measured / supplied signature.
    #[default]
    Original,
    /// Decoded from a generative model.
    Synthetic { class: usize, draw: usize },
}

impl Origin {
    pub fn is_synthetic(&self) -> bool {
        matches!(self, Origin::Synthetic { .. })
    }
}

/// One reflectance vector over `L` bands.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub label: Option<String>,
    pub origin: Origin,
}

impl Spectrum {
    pub fn new(values: Vec<f64>) -> Self {
        Self {
            values,
            label: None,
            origin: Origin::Original,
        }
    }

    pub fn labeled(values: Vec<f64>, label: impl Into<String>) -> Self {
        Self {
            values,
            label: Some(label.into()),
            origin: Origin::Original,
        }
    }

    pub fn bands(&self) -> usize {
        self.values.len()
    }
}

/// Clamp every value into `[0, 1]`, returning the clamped spectrum and the
/// number of entries that moved.
pub fn clip_to_unit(spec: &Spectrum) -> Result<(Spectrum, usize)> {
    if let Some(band) = spec.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue {
            class: 0,
            member: 0,
            band,
        });
    }
    let mut clipped = 0;
    let values = spec
        .values
        .iter()
        .map(|&v| {
            let c = v.clamp(0.0, 1.0);
            if c != v {
                clipped += 1;
            }
            c
        })
        .collect();
    Ok((
        Spectrum {
            values,
            label: spec.label.clone(),
            origin: spec.origin,
        },
        clipped,
    ))
}

/// One material's bundle of candidate signatures.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialClass {
    pub material: String,
    pub members: Vec<Spectrum>,
}

impl MaterialClass {
    pub fn new(material: impl Into<String>, members: Vec<Spectrum>) -> Self {
        Self {
            material: material.into(),
            members,
        }
    }
}

/// Ordered list of material bundles. Member order is insertion order and is
/// significant: MESMA tie-breaking depends on it.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralLibrary {
    pub classes: Vec<MaterialClass>,
}

impl SpectralLibrary {
    /// Builds and validates a library.
    pub fn new(classes: Vec<MaterialClass>) -> Result<Self> {
        let lib = Self { classes };
        validate_library(&lib)?;
        Ok(lib)
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Band count of the first signature (0 for an empty library).
    pub fn bands(&self) -> usize {
        self.classes
            .iter()
            .flat_map(|c| c.members.first())
            .map(Spectrum::bands)
            .next()
            .unwrap_or(0)
    }

    pub fn class_sizes(&self) -> Vec<usize> {
        self.classes.iter().map(|c| c.members.len()).collect()
    }

    pub fn materials(&self) -> Vec<&str> {
        self.classes.iter().map(|c| c.material.as_str()).collect()
    }

    /// Element-wise mean of each class, in class order.
    pub fn class_means(&self) -> Vec<Spectrum> {
        self.classes
            .iter()
            .map(|c| {
                let l = c.members.first().map_or(0, Spectrum::bands);
                let mut mean = vec![0.0; l];
                for m in &c.members {
                    for (acc, v) in mean.iter_mut().zip(&m.values) {
                        *acc += v;
                    }
                }
                let n = c.members.len() as f64;
                mean.iter_mut().for_each(|v| *v /= n);
                Spectrum::labeled(mean, c.material.clone())
            })
            .collect()
    }
}

/// Checks the library invariants: at least two classes, unique ids, no empty
/// class, a common band count and finite values everywhere.
pub fn validate_library(lib: &SpectralLibrary) -> Result<()> {
    if lib.classes.len() < 2 {
        return Err(Error::TooFewClasses(lib.classes.len()));
    }
    let mut seen = HashSet::new();
    for c in &lib.classes {
        if !seen.insert(c.material.as_str()) {
            return Err(Error::DuplicateMaterial(c.material.clone()));
        }
    }
    let expected = lib.bands();
    for (ci, c) in lib.classes.iter().enumerate() {
        if c.members.is_empty() {
            return Err(Error::EmptyClass {
                class: ci,
                material: c.material.clone(),
            });
        }
        for (mi, m) in c.members.iter().enumerate() {
            if m.bands() != expected || expected == 0 {
                return Err(Error::MismatchedBandCount {
                    class: ci,
                    member: mi,
                    expected,
                    found: m.bands(),
                });
            }
            if let Some(band) = m.values.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue {
                    class: ci,
                    member: mi,
                    band,
                });
            }
        }
    }
    Ok(())
}

/// `N x L` matrix of observed reflectances, one pixel per row.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperImage {
    pixels: Array2<f64>,
    dims: Option<(usize, usize)>,
}

impl HyperImage {
    pub fn new(pixels: Array2<f64>) -> Result<Self> {
        if let Some(pos) = pixels.iter().position(|v| !v.is_finite()) {
            let l = pixels.ncols().max(1);
            return Err(Error::NonFiniteValue {
                class: 0,
                member: pos / l,
                band: pos % l,
            });
        }
        // Row slices are handed to the solvers directly.
        let pixels = if pixels.is_standard_layout() {
            pixels
        } else {
            pixels.as_standard_layout().into_owned()
        };
        Ok(Self { pixels, dims: None })
    }

    pub fn with_dims(mut self, rows: usize, cols: usize) -> Result<Self> {
        if rows * cols != self.num_pixels() {
            return Err(Error::DimensionMismatch(format!(
                "{rows} x {cols} spatial grid does not hold {} pixels",
                self.num_pixels()
            )));
        }
        self.dims = Some((rows, cols));
        Ok(self)
    }

    pub fn num_pixels(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn bands(&self) -> usize {
        self.pixels.ncols()
    }

    pub fn dims(&self) -> Option<(usize, usize)> {
        self.dims
    }

    pub fn pixels(&self) -> &Array2<f64> {
        &self.pixels
    }

    pub fn pixel(&self, n: usize) -> &[f64] {
        self.pixels
            .row(n)
            .to_slice()
            .expect("standard layout rows are contiguous")
    }
}

/// One candidate endmember matrix: column `k` is member `selection[k]` of
/// library class `k`. Stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EndmemberMatrix {
    data: Vec<f64>,
    bands: usize,
    selection: Vec<usize>,
}

impl EndmemberMatrix {
    /// Assemble the matrix for `selection` from a validated library.
    pub fn from_library(lib: &SpectralLibrary, selection: &[usize]) -> Result<Self> {
        if selection.len() != lib.num_classes() {
            return Err(Error::DimensionMismatch(format!(
                "selection has {} entries for {} classes",
                selection.len(),
                lib.num_classes()
            )));
        }
        let bands = lib.bands();
        let mut data = Vec::with_capacity(bands * selection.len());
        for (k, (&j, class)) in selection.iter().zip(&lib.classes).enumerate() {
            let member = class.members.get(j).ok_or_else(|| {
                Error::DimensionMismatch(format!(
                    "class {k} has {} members, index {j} requested",
                    class.members.len()
                ))
            })?;
            data.extend_from_slice(&member.values);
        }
        Ok(Self {
            data,
            bands,
            selection: selection.to_vec(),
        })
    }

    /// Build from explicit columns. The selection is recorded as `0..P`.
    pub fn from_columns(columns: &[Spectrum]) -> Result<Self> {
        let bands = columns.first().map_or(0, Spectrum::bands);
        if columns.is_empty() || bands == 0 {
            return Err(Error::DimensionMismatch(
                "endmember matrix needs at least one non-empty column".into(),
            ));
        }
        let mut data = Vec::with_capacity(bands * columns.len());
        for (k, c) in columns.iter().enumerate() {
            if c.bands() != bands {
                return Err(Error::MismatchedBandCount {
                    class: k,
                    member: 0,
                    expected: bands,
                    found: c.bands(),
                });
            }
            data.extend_from_slice(&c.values);
        }
        Ok(Self {
            data,
            bands,
            selection: (0..columns.len()).collect(),
        })
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn num_endmembers(&self) -> usize {
        self.selection.len()
    }

    pub fn selection(&self) -> &[usize] {
        &self.selection
    }

    pub fn column(&self, k: usize) -> &[f64] {
        &self.data[k * self.bands..(k + 1) * self.bands]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.bands)
    }

    /// `M a`.
    pub fn mix(&self, abundances: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.bands];
        for (col, &a) in self.columns().zip(abundances) {
            for (o, v) in out.iter_mut().zip(col) {
                *o += a * v;
            }
        }
        out
    }
}

/// `N x P` abundance matrix with simplex-constrained rows.
#[derive(Debug, Clone, PartialEq)]
pub struct AbundanceMap {
    values: Array2<f64>,
}

impl AbundanceMap {
    /// Wraps `values` after checking every row against the simplex.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        check_simplex(&values, SIMPLEX_TOL)?;
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.values
    }

    pub fn num_pixels(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_endmembers(&self) -> usize {
        self.values.ncols()
    }
}

/// Shared simplex assertion: every row nonnegative (down to `-tol`) and
/// summing to one within `tol`.
pub fn check_simplex(values: &Array2<f64>, tol: f64) -> Result<()> {
    for (n, row) in values.rows().into_iter().enumerate() {
        check_simplex_row(row, tol).map_err(|msg| {
            Error::DimensionMismatch(format!("abundance row {n} off the simplex: {msg}"))
        })?;
    }
    Ok(())
}

fn check_simplex_row(row: ArrayView1<f64>, tol: f64) -> std::result::Result<(), String> {
    if let Some(v) = row.iter().find(|v| !v.is_finite() || **v < -tol) {
        return Err(format!("entry {v}"));
    }
    let sum: f64 = row.sum();
    if (sum - 1.0).abs() > tol {
        return Err(format!("row sum {sum}"));
    }
    Ok(())
}
