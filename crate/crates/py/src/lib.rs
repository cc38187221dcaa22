//! Python bindings. Matrices cross the boundary as lists of lists of floats
//! (one inner list per pixel or signature).

use ndarray::Array2;
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use mesma_aug::augment;
use mesma_aug::experiment::fcls_unmix;
use mesma_aug::mesma::{self, MesmaOptions, DEFAULT_COMBINATION_CAP};
use mesma_aug::spectral::{EndmemberMatrix, HyperImage, MaterialClass, SpectralLibrary, Spectrum};
use mesma_aug::synth::{self, SynthConfig};
use mesma_aug::vae::{self, TrainConfig};
use mesma_aug::{io, metrics, Error, ErrorCategory};

fn py_err(e: Error) -> PyErr {
    let msg = format!("{}: {e}", e.category().as_str());
    match e.category() {
        ErrorCategory::Io => PyIOError::new_err(msg),
        ErrorCategory::Numerical => PyArithmeticError::new_err(msg),
        ErrorCategory::Validation | ErrorCategory::Config => PyValueError::new_err(msg),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for mesma_aug::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn to_array(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Array2::from_shape_vec((n, width), rows.into_iter().flatten().collect())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_rows<T: Clone>(a: &Array2<T>) -> Vec<Vec<T>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Spectral library: named classes of equal-length signatures.
#[pyclass(name = "Library", module = "mesma_aug", skip_from_py_object)]
#[derive(Clone)]
struct PyLibrary {
    inner: SpectralLibrary,
}

#[pymethods]
impl PyLibrary {
    #[new]
    fn new(materials: Vec<String>, members: Vec<Vec<Vec<f64>>>) -> PyResult<Self> {
        if materials.len() != members.len() {
            return Err(PyValueError::new_err("one member list per material"));
        }
        let classes = materials
            .into_iter()
            .zip(members)
            .map(|(m, spectra)| {
                let s = spectra.into_iter().map(|v| Spectrum::labeled(v, m.clone())).collect();
                MaterialClass::new(m, s)
            })
            .collect();
        Ok(Self {
            inner: SpectralLibrary::new(classes).py()?,
        })
    }

    #[staticmethod]
    fn from_csv(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: io::read_library(path).py()?,
        })
    }

    #[pyo3(signature = (path, flag_synthetic = false))]
    fn to_csv(&self, path: &str, flag_synthetic: bool) -> PyResult<()> {
        io::write_library(&self.inner, flag_synthetic, path).py()
    }

    #[getter]
    fn bands(&self) -> usize {
        self.inner.bands()
    }

    #[getter]
    fn materials(&self) -> Vec<String> {
        self.inner.materials().into_iter().map(String::from).collect()
    }

    fn class_sizes(&self) -> Vec<usize> {
        self.inner.class_sizes()
    }

    /// Members of class `k` as lists of floats.
    fn members(&self, k: usize) -> PyResult<Vec<Vec<f64>>> {
        let class = self
            .inner
            .classes
            .get(k)
            .ok_or_else(|| PyValueError::new_err(format!("no class {k}")))?;
        Ok(class.members.iter().map(|s| s.values.clone()).collect())
    }

    /// Per-member synthetic flags of class `k`.
    fn synthetic_flags(&self, k: usize) -> PyResult<Vec<bool>> {
        let class = self
            .inner
            .classes
            .get(k)
            .ok_or_else(|| PyValueError::new_err(format!("no class {k}")))?;
        Ok(class.members.iter().map(|s| s.origin.is_synthetic()).collect())
    }

    fn class_means(&self) -> Vec<Vec<f64>> {
        self.inner.class_means().into_iter().map(|s| s.values).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.num_classes()
    }

    fn __repr__(&self) -> String {
        format!(
            "Library(materials={:?}, sizes={:?}, bands={})",
            self.inner.materials(),
            self.inner.class_sizes(),
            self.inner.bands()
        )
    }
}

/// Trained per-class generator.
#[pyclass(name = "VaeModel", module = "mesma_aug", from_py_object)]
#[derive(Clone)]
struct PyVaeModel {
    inner: vae::VaeModel,
}

#[pymethods]
impl PyVaeModel {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: vae::load_model(path).py()?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        vae::save_model(&self.inner, path).py()
    }

    fn decode(&self, z: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(vae::decode(&self.inner, &z).py()?.values)
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.arch.input_dim
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.inner.arch.latent_dim
    }

    /// `(loss, reconstruction, kl)` per epoch.
    #[getter]
    fn training_log(&self) -> Vec<(f64, f64, f64)> {
        self.inner
            .training_log
            .iter()
            .map(|l| (l.loss, l.reconstruction, l.kl))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "VaeModel(input_dim={}, latent_dim={}, epochs={})",
            self.inner.arch.input_dim,
            self.inner.arch.latent_dim,
            self.inner.training_log.len()
        )
    }
}

/// Abundances and squared residual of `y` against endmember `columns`.
#[pyfunction]
fn fcls_solve(y: Vec<f64>, columns: Vec<Vec<f64>>) -> PyResult<(Vec<f64>, f64)> {
    let cols: Vec<Spectrum> = columns.into_iter().map(Spectrum::new).collect();
    let em = EndmemberMatrix::from_columns(&cols).py()?;
    let sol = mesma_aug::fcls::fcls_solve(&Spectrum::new(y), &em).py()?;
    Ok((sol.abundances, sol.residual_sq))
}

/// FCLS of every pixel against the class means of `library`.
#[pyfunction]
fn fcls_unmix_means<'py>(py: Python<'py>, pixels: Vec<Vec<f64>>, library: &PyLibrary) -> PyResult<Bound<'py, PyDict>> {
    let img = HyperImage::new(to_array(pixels)?).py()?;
    let em = EndmemberMatrix::from_columns(&library.inner.class_means()).py()?;
    let (a, residuals) = fcls_unmix(&img, &em).py()?;
    let d = PyDict::new(py);
    d.set_item("abundances", to_rows(a.values()))?;
    d.set_item("residuals", residuals)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (pixels, library, combination_cap = None))]
fn mesma_unmix<'py>(
    py: Python<'py>,
    pixels: Vec<Vec<f64>>,
    library: &PyLibrary,
    combination_cap: Option<u128>,
) -> PyResult<Bound<'py, PyDict>> {
    let img = HyperImage::new(to_array(pixels)?).py()?;
    let opts = MesmaOptions {
        combination_cap: combination_cap.unwrap_or(DEFAULT_COMBINATION_CAP),
    };
    let res = py
        .detach(|| mesma::mesma_unmix_with(&img, &library.inner, &opts))
        .py()?;
    let d = PyDict::new(py);
    d.set_item("abundances", to_rows(res.abundances.values()))?;
    d.set_item("selections", to_rows(&res.selections))?;
    d.set_item("residuals", res.residuals.clone())?;
    d.set_item("models_evaluated", res.models_evaluated)?;
    Ok(d)
}

/// Hidden-layer widths `(encoder, decoder)`.
#[pyfunction]
#[pyo3(signature = (input_dim, latent_dim = vae::DEFAULT_LATENT_DIM))]
fn build_architecture(input_dim: usize, latent_dim: usize) -> PyResult<(Vec<usize>, Vec<usize>)> {
    let a = vae::build_architecture(input_dim, latent_dim).py()?;
    Ok((a.encoder_widths.to_vec(), a.decoder_widths.to_vec()))
}

#[pyfunction]
#[pyo3(signature = (spectra, epochs = 50, seed = 0, kl_weight = 1.0, learning_rate = 1e-3, latent_dim = vae::DEFAULT_LATENT_DIM))]
fn train_vae(
    py: Python<'_>,
    spectra: Vec<Vec<f64>>,
    epochs: usize,
    seed: u64,
    kl_weight: f64,
    learning_rate: f64,
    latent_dim: usize,
) -> PyResult<PyVaeModel> {
    let cfg = TrainConfig {
        epochs,
        seed,
        kl_weight,
        learning_rate,
        latent_dim,
        ..TrainConfig::default()
    };
    let spectra: Vec<Spectrum> = spectra.into_iter().map(Spectrum::new).collect();
    let inner = py.detach(|| vae::train_vae(&spectra, &cfg)).py()?;
    Ok(PyVaeModel { inner })
}

#[pyfunction]
fn augment_library(library: &PyLibrary, models: Vec<PyVaeModel>, n_samples: usize, seed: u64) -> PyResult<PyLibrary> {
    let models: Vec<vae::VaeModel> = models.into_iter().map(|m| m.inner).collect();
    Ok(PyLibrary {
        inner: augment::augment_library(&library.inner, &models, n_samples, seed).py()?,
    })
}

/// Synthetic mismatch dataset. Returns image, clean image, abundances,
/// library and realized SNR.
#[pyfunction]
#[pyo3(signature = (seed = 0, bands = 198, pixels = 500, snr_db = Some(30.0)))]
fn synthesize<'py>(
    py: Python<'py>,
    seed: u64,
    bands: usize,
    pixels: usize,
    snr_db: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = SynthConfig {
        seed,
        bands,
        pixels,
        snr_db,
        ..SynthConfig::default()
    };
    let ds = synth::synthesize_image(&cfg).py()?;
    let d = PyDict::new(py);
    d.set_item("image", to_rows(ds.image.pixels()))?;
    d.set_item("clean", to_rows(&ds.clean))?;
    d.set_item("abundances", to_rows(ds.true_abundances.values()))?;
    d.set_item("library", PyLibrary { inner: ds.library })?;
    d.set_item("realized_snr_db", ds.realized_snr_db)?;
    Ok(d)
}

#[pyfunction]
fn rmse(x: Vec<Vec<f64>>, x_ref: Vec<Vec<f64>>) -> PyResult<f64> {
    metrics::rmse(to_array(x)?.view(), to_array(x_ref)?.view()).py()
}

#[pymodule]
#[pyo3(name = "mesma_aug")]
fn mesma_aug_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLibrary>()?;
    m.add_class::<PyVaeModel>()?;
    m.add_function(wrap_pyfunction!(fcls_solve, m)?)?;
    m.add_function(wrap_pyfunction!(fcls_unmix_means, m)?)?;
    m.add_function(wrap_pyfunction!(mesma_unmix, m)?)?;
    m.add_function(wrap_pyfunction!(build_architecture, m)?)?;
    m.add_function(wrap_pyfunction!(train_vae, m)?)?;
    m.add_function(wrap_pyfunction!(augment_library, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
