//! Python bindings: masking, metrics, perturbations and the run commands.

use std::path::PathBuf;

use mpft_core::dataset::{load_rgb, synth_dataset, SynthSpec};
use mpft_core::eval::metrics::{self, ScoredSet};
use mpft_core::eval::perturb::{self, PerturbationSpec};
use mpft_core::report::config::RunConfig;
use mpft_core::report::{self, Command};
use mpft_core::seed;
use mpft_core::tensor::Tensor;
use mpft_core::texmask::{self, MaskStrategy, PatchGrid, RatioInterval, TamVariant};
use mpft_core::trainer::{self, TrainConfig};
use mpft_core::Error;
use ndarray::{Array2, Array3};
use pyo3::exceptions::{PyFileNotFoundError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::MissingFile(p) => PyFileNotFoundError::new_err(p.display().to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_py_json(py: Python<'_>, v: &impl serde::Serialize) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| py_err(e.into()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn plane(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != w) {
        return Err(PyValueError::new_err("ragged rows"));
    }
    Array2::from_shape_vec((h, w), rows.into_iter().flatten().collect()).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Channel-first nested list `[c][y][x]`.
fn tensor(chw: Vec<Vec<Vec<f64>>>) -> PyResult<Tensor> {
    let planes = chw.into_iter().map(plane).collect::<PyResult<Vec<_>>>()?;
    let (h, w) = planes.first().map_or((0, 0), Array2::dim);
    if planes.iter().any(|p| p.dim() != (h, w)) {
        return Err(PyValueError::new_err("channels differ in shape"));
    }
    Ok(Array3::from_shape_fn((planes.len(), h, w), |(c, y, x)| planes[c][[y, x]]))
}

fn nested(t: &Tensor) -> Vec<Vec<Vec<f64>>> {
    t.outer_iter()
        .map(|p| p.rows().into_iter().map(|r| r.to_vec()).collect())
        .collect()
}

#[pyfunction]
fn local_texture_diversity(patch: Vec<Vec<f64>>) -> PyResult<f64> {
    texmask::local_texture_diversity(plane(patch)?.view()).map_err(py_err)
}

/// Patch indices in descending texture-diversity order.
#[pyfunction]
fn rank_patches(image: Vec<Vec<Vec<f64>>>, patch_size: usize) -> PyResult<Vec<usize>> {
    let x = tensor(image)?;
    let (_, h, w) = x.dim();
    let grid = PatchGrid::new(h, w, patch_size).map_err(py_err)?;
    let div = texmask::texture_diversity_map(&x, &grid).map_err(py_err)?;
    texmask::rank_patches(&div).map_err(py_err)
}

#[pyclass(name = "MaskConfig", frozen)]
struct PyMaskConfig {
    inner: texmask::MaskConfig,
}

#[pymethods]
impl PyMaskConfig {
    #[new]
    #[pyo3(signature = (strategy="tam", variant="high", patch_size=14, ratio=(0.6, 0.8)))]
    fn new(strategy: &str, variant: &str, patch_size: usize, ratio: (f64, f64)) -> PyResult<Self> {
        let strategy: MaskStrategy = strategy.parse().map_err(py_err)?;
        let variant: TamVariant = variant.parse().map_err(py_err)?;
        let inner = texmask::MaskConfig {
            strategy,
            variant,
            patch_size,
            ratio_interval: RatioInterval::new(ratio.0, ratio.1).map_err(py_err)?,
        };
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn label(&self) -> String {
        self.inner.label()
    }

    #[getter]
    fn patch_size(&self) -> usize {
        self.inner.patch_size
    }

    #[getter]
    fn ratio(&self) -> (f64, f64) {
        (self.inner.ratio_interval.lo(), self.inner.ratio_interval.hi())
    }

    fn __repr__(&self) -> String {
        format!("MaskConfig({}, p={}, ratio={:?})", self.inner.label(), self.inner.patch_size, self.ratio())
    }
}

#[pyclass(name = "BinaryMask", frozen)]
struct PyBinaryMask {
    inner: texmask::BinaryMask,
}

#[pymethods]
impl PyBinaryMask {
    /// `[y][x]` with 0 where pixels are masked.
    #[getter]
    fn grid(&self) -> Vec<Vec<u8>> {
        self.inner.grid().rows().into_iter().map(|r| r.to_vec()).collect()
    }

    #[getter]
    fn masked_patch_indices(&self) -> Vec<usize> {
        self.inner.masked_patch_indices().to_vec()
    }

    #[getter]
    fn sampled_ratio(&self) -> f64 {
        self.inner.sampled_ratio()
    }

    #[getter]
    fn realized_ratio(&self) -> f64 {
        self.inner.realized_ratio()
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.inner.dims()
    }

    fn save(&self, png_path: PathBuf) -> PyResult<()> {
        self.inner.save(&png_path).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "BinaryMask({}x{}, {} patches masked)",
            self.inner.dims().0,
            self.inner.dims().1,
            self.inner.masked_patch_indices().len()
        )
    }
}

#[pyfunction]
fn generate_mask(image: Vec<Vec<Vec<f64>>>, config: &PyMaskConfig, seed: u64) -> PyResult<PyBinaryMask> {
    let x = tensor(image)?;
    let inner = texmask::generate_mask(&x, &config.inner, &mut seed::rng(seed)).map_err(py_err)?;
    Ok(PyBinaryMask { inner })
}

#[pyfunction]
fn apply_mask(image: Vec<Vec<Vec<f64>>>, mask: &PyBinaryMask) -> PyResult<Vec<Vec<Vec<f64>>>> {
    let x = tensor(image)?;
    Ok(nested(&texmask::apply_mask(&x, &mask.inner).map_err(py_err)?))
}

#[pyfunction]
#[pyo3(signature = (scores, labels, threshold=0.5))]
fn accuracy(scores: Vec<f64>, labels: Vec<u8>, threshold: f64) -> PyResult<f64> {
    let set = ScoredSet::new("py", scores, labels).map_err(py_err)?;
    metrics::accuracy(&set, threshold).map_err(py_err)
}

#[pyfunction]
fn average_precision(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    let set = ScoredSet::new("py", scores, labels).map_err(py_err)?;
    metrics::average_precision(&set).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (epoch, learning_rate, decay_step=1, decay_factor=0.5))]
fn lr_at(epoch: usize, learning_rate: f64, decay_step: usize, decay_factor: f64) -> f64 {
    let cfg = TrainConfig {
        learning_rate,
        lr_decay_step: decay_step,
        lr_decay_factor: decay_factor,
        ..TrainConfig::default()
    };
    trainer::lr_at(epoch, &cfg)
}

/// Writes the synthetic dataset and returns the manifest path.
#[pyfunction]
#[pyo3(signature = (out_dir, image_size=32, train_count=800, test_count_per_subset=400, seed=0))]
fn synth(out_dir: PathBuf, image_size: usize, train_count: usize, test_count_per_subset: usize, seed: u64) -> PyResult<PathBuf> {
    let spec = SynthSpec {
        image_size,
        train_count,
        test_count_per_subset,
        seed,
        ..SynthSpec::default()
    };
    synth_dataset(&spec, &out_dir).map_err(py_err)?;
    Ok(out_dir.join("manifest.json"))
}

/// Perturbs an 8-bit image file and returns the drawn parameters.
#[pyfunction]
fn perturb_image(py: Python<'_>, src: PathBuf, dst: PathBuf, kind: &str, seed: u64) -> PyResult<Py<PyAny>> {
    let spec = PerturbationSpec::new(kind.parse().map_err(py_err)?, seed);
    let img = load_rgb(&src).map_err(py_err)?;
    let (out, rec) = perturb::perturb(&img, &spec, &mut seed::rng(seed)).map_err(py_err)?;
    out.save(&dst).map_err(|e| py_err(e.into()))?;
    to_py_json(py, &rec)
}

/// Runs one CLI command; `overrides` maps dotted keys to JSON text.
#[pyfunction]
#[pyo3(signature = (command, out, config=None, seed=None, overrides=Vec::new()))]
fn run(
    py: Python<'_>,
    command: &str,
    out: PathBuf,
    config: Option<PathBuf>,
    seed: Option<u64>,
    overrides: Vec<(String, String)>,
) -> PyResult<Py<PyAny>> {
    let cmd: Command = command.parse().map_err(py_err)?;
    let cfg = RunConfig::resolve(config.as_deref(), seed, &overrides).map_err(py_err)?;
    let outcome = report::run_command(cmd, &cfg, &out).map_err(py_err)?;
    to_py_json(py, &outcome.outputs)
}

#[pymodule]
pub fn mpft(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMaskConfig>()?;
    m.add_class::<PyBinaryMask>()?;
    m.add_function(wrap_pyfunction!(local_texture_diversity, m)?)?;
    m.add_function(wrap_pyfunction!(rank_patches, m)?)?;
    m.add_function(wrap_pyfunction!(generate_mask, m)?)?;
    m.add_function(wrap_pyfunction!(apply_mask, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(average_precision, m)?)?;
    m.add_function(wrap_pyfunction!(lr_at, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(perturb_image, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
