//! Python bindings. Images are 2-D `float64` arrays (rows × columns),
//! sinograms are views × detectors, patch matrices are `n × N`.

use nalgebra::DMatrix;
use numpy::ndarray::Array2;
use numpy::{IntoPyArray, PyArray2, PyReadonlyArray2};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use mcst::ct_sim::{self, NoiseModel, ParallelBeamProjector, ScanGeometry, Sinogram, WeightedScan};
use mcst::mcst::ModelBundle;
use mcst::patching::{self, PatchGeometry};
use mcst::recon::{self, EpConfig, ReconConfig};
use mcst::training::{self, TrainConfig};
use mcst::{io, Image};

fn to_py(e: mcst::Error) -> PyErr {
    match e {
        mcst::Error::Io(e) => PyIOError::new_err(e.to_string()),
        mcst::Error::Numerical(_) => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn image_in(a: &PyReadonlyArray2<'_, f64>) -> PyResult<Image> {
    let view = a.as_array();
    let (h, w) = view.dim();
    Image::from_vec(h, w, view.iter().copied().collect()).map_err(to_py)
}

fn image_out<'py>(py: Python<'py>, img: &Image) -> Bound<'py, PyArray2<f64>> {
    Array2::from_shape_vec(img.dims(), img.as_slice().to_vec())
        .expect("image buffer matches its shape")
        .into_pyarray(py)
}

fn sinogram_in(a: &PyReadonlyArray2<'_, f64>) -> PyResult<Sinogram> {
    let view = a.as_array();
    let (v, b) = view.dim();
    Sinogram::from_vec(v, b, view.iter().copied().collect()).map_err(to_py)
}

fn sinogram_out<'py>(py: Python<'py>, s: &Sinogram) -> Bound<'py, PyArray2<f64>> {
    Array2::from_shape_vec((s.n_views(), s.n_detectors()), s.as_slice().to_vec())
        .expect("sinogram buffer matches its shape")
        .into_pyarray(py)
}

fn matrix_in(a: &PyReadonlyArray2<'_, f64>) -> DMatrix<f64> {
    let view = a.as_array();
    let (r, c) = view.dim();
    DMatrix::from_fn(r, c, |i, j| view[[i, j]])
}

fn matrix_out<'py>(py: Python<'py>, m: &DMatrix<f64>) -> Bound<'py, PyArray2<f64>> {
    Array2::from_shape_fn(m.shape(), |(i, j)| m[(i, j)]).into_pyarray(py)
}

/// Parallel-beam scan geometry with a cached projector.
#[pyclass(name = "Geometry", frozen)]
struct PyGeometry {
    projector: ParallelBeamProjector,
}

impl PyGeometry {
    fn geom(&self) -> &ScanGeometry {
        self.projector.geometry()
    }
}

#[pymethods]
impl PyGeometry {
    #[new]
    #[pyo3(signature = (views, detectors, size, pixel_mm = 2.0, det_mm = 2.0))]
    fn new(views: usize, detectors: usize, size: usize, pixel_mm: f64, det_mm: f64) -> PyResult<Self> {
        let geom = ScanGeometry::parallel(views, detectors, det_mm, pixel_mm, size, size).map_err(to_py)?;
        Ok(Self {
            projector: ParallelBeamProjector::new(geom),
        })
    }

    #[getter]
    fn views(&self) -> usize {
        self.geom().n_views
    }

    #[getter]
    fn detectors(&self) -> usize {
        self.geom().n_detectors
    }

    #[getter]
    fn size(&self) -> usize {
        self.geom().image_height
    }

    /// Line integrals of an image in HU.
    fn project<'py>(&self, py: Python<'py>, image: PyReadonlyArray2<'py, f64>) -> PyResult<Bound<'py, PyArray2<f64>>> {
        let img = image_in(&image)?;
        let s = py.detach(|| self.projector.project(&img)).map_err(to_py)?;
        Ok(sinogram_out(py, &s))
    }

    /// Adjoint of `project`.
    fn back_project<'py>(
        &self,
        py: Python<'py>,
        sinogram: PyReadonlyArray2<'py, f64>,
    ) -> PyResult<Bound<'py, PyArray2<f64>>> {
        let s = sinogram_in(&sinogram)?;
        let img = py.detach(|| self.projector.back_project(&s)).map_err(to_py)?;
        Ok(image_out(py, &img))
    }

    /// Filtered backprojection with the Hann-windowed ramp.
    fn fbp<'py>(&self, py: Python<'py>, sinogram: PyReadonlyArray2<'py, f64>) -> PyResult<Bound<'py, PyArray2<f64>>> {
        let s = sinogram_in(&sinogram)?;
        let img = ct_sim::fbp(&s, self.geom()).map_err(to_py)?;
        Ok(image_out(py, &img))
    }

    fn __repr__(&self) -> String {
        let g = self.geom();
        format!(
            "Geometry(views={}, detectors={}, size={}, pixel_mm={}, det_mm={})",
            g.n_views, g.n_detectors, g.image_height, g.pixel_spacing, g.detector_spacing
        )
    }
}

/// A trained multi-layer model.
#[pyclass(name = "Model", frozen)]
struct PyModel {
    inner: ModelBundle,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: io::read_model(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        io::write_model(path, &self.inner).map_err(to_py)
    }

    #[getter]
    fn layers(&self) -> usize {
        self.inner.layers()
    }

    #[getter]
    fn patch_side(&self) -> usize {
        self.inner.patch_side()
    }

    #[getter]
    fn clusters(&self) -> Vec<usize> {
        self.inner.clusters_per_layer()
    }

    #[getter]
    fn thresholds(&self) -> Vec<f64> {
        self.inner.thresholds().to_vec()
    }

    fn transform<'py>(&self, py: Python<'py>, layer: usize, cluster: usize) -> PyResult<Bound<'py, PyArray2<f64>>> {
        if layer >= self.inner.layers() || cluster >= self.inner.clusters(layer) {
            return Err(PyValueError::new_err(format!("no transform ({layer}, {cluster})")));
        }
        Ok(matrix_out(py, self.inner.transform(layer, cluster)))
    }

    /// Largest ‖ΩΩᵀ − I‖_F over all transforms.
    fn max_unitarity_error(&self) -> f64 {
        self.inner.max_unitarity_error()
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(layers={}, clusters={:?}, patch_side={})",
            self.inner.layers(),
            self.inner.clusters_per_layer(),
            self.inner.patch_side()
        )
    }
}

#[pyfunction]
#[pyo3(signature = (name, size, seed = 0))]
fn phantom<'py>(py: Python<'py>, name: &str, size: usize, seed: u64) -> PyResult<Bound<'py, PyArray2<f64>>> {
    let img = if name == "random-head" {
        ct_sim::render_ellipses(&ct_sim::random_head_ellipses(seed), size, size)
    } else {
        ct_sim::Phantom::by_name(name, None)
            .and_then(|p| p.render(size, size))
            .map_err(to_py)?
    };
    Ok(image_out(py, &img))
}

/// Draws noisy counts for clean line integrals and returns `(y, weights)`.
#[pyfunction]
#[pyo3(signature = (line_integrals, i0 = 1e4, sigma2 = 25.0, seed = 0))]
fn simulate<'py>(
    py: Python<'py>,
    line_integrals: PyReadonlyArray2<'py, f64>,
    i0: f64,
    sigma2: f64,
    seed: u64,
) -> PyResult<(Bound<'py, PyArray2<f64>>, Bound<'py, PyArray2<f64>>)> {
    let clean = sinogram_in(&line_integrals)?;
    let noise = NoiseModel::new(i0, sigma2, seed).map_err(to_py)?;
    let (y, w) = ct_sim::simulate_counts(&clean, &noise)
        .and_then(|c| ct_sim::counts_to_sinogram(&c, &noise))
        .map_err(to_py)?;
    let w = Sinogram::from_vec(y.n_views(), y.n_detectors(), w).map_err(to_py)?;
    Ok((sinogram_out(py, &y), sinogram_out(py, &w)))
}

#[pyfunction]
#[pyo3(signature = (image, patch_side = 8, stride = 1))]
fn extract_patches<'py>(
    py: Python<'py>,
    image: PyReadonlyArray2<'py, f64>,
    patch_side: usize,
    stride: usize,
) -> PyResult<Bound<'py, PyArray2<f64>>> {
    let img = image_in(&image)?;
    let geom = PatchGeometry::for_image(&img, patch_side, stride).map_err(to_py)?;
    let p = patching::extract_patches(&img, &geom).map_err(to_py)?;
    Ok(matrix_out(py, p.data()))
}

/// Sums patch columns back into an image (adjoint of `extract_patches`).
#[pyfunction]
#[pyo3(signature = (columns, height, width, patch_side = 8, stride = 1))]
fn aggregate_patches<'py>(
    py: Python<'py>,
    columns: PyReadonlyArray2<'py, f64>,
    height: usize,
    width: usize,
    patch_side: usize,
    stride: usize,
) -> PyResult<Bound<'py, PyArray2<f64>>> {
    let geom = PatchGeometry::new(height, width, patch_side, stride).map_err(to_py)?;
    let img = patching::aggregate_patches(&matrix_in(&columns), &geom).map_err(to_py)?;
    Ok(image_out(py, &img))
}

/// Learns a model from an `n × N` patch matrix. Returns the model and the
/// objective after every recorded step (initial value first).
#[pyfunction]
#[pyo3(signature = (patches, clusters, eta, iterations, seed = 0, kmeans_iters = 20))]
fn train(
    py: Python<'_>,
    patches: PyReadonlyArray2<'_, f64>,
    clusters: Vec<usize>,
    eta: Vec<f64>,
    iterations: usize,
    seed: u64,
    kmeans_iters: usize,
) -> PyResult<(PyModel, Vec<f64>)> {
    let data = matrix_in(&patches);
    let side = (data.nrows() as f64).sqrt().round() as usize;
    let mut cfg = TrainConfig::new(clusters, eta, iterations, seed);
    cfg.patch_side = side;
    cfg.kmeans_iters = kmeans_iters;
    let (model, trace) = py.detach(|| training::train(&data, &cfg)).map_err(to_py)?;
    Ok((PyModel { inner: model }, trace.objectives().collect()))
}

fn weighted_scan(geometry: &PyGeometry, y: &Sinogram, weights: &Sinogram) -> PyResult<WeightedScan> {
    if y.n_views() != weights.n_views() || y.n_detectors() != weights.n_detectors() {
        return Err(PyValueError::new_err("y and weights differ in shape"));
    }
    WeightedScan::new(&geometry.projector, y.as_slice().to_vec(), weights.as_slice().to_vec()).map_err(to_py)
}

/// PWLS-MCST. Returns the image and the objective after each outer iteration.
#[pyfunction]
#[pyo3(signature = (geometry, y, weights, model, beta, gamma, x0, outer = 100, inner = 2, warm_start = false, stride = 1))]
#[allow(clippy::too_many_arguments)]
fn reconstruct_mcst<'py>(
    py: Python<'py>,
    geometry: &PyGeometry,
    y: PyReadonlyArray2<'py, f64>,
    weights: PyReadonlyArray2<'py, f64>,
    model: &PyModel,
    beta: f64,
    gamma: Vec<f64>,
    x0: PyReadonlyArray2<'py, f64>,
    outer: usize,
    inner: usize,
    warm_start: bool,
    stride: usize,
) -> PyResult<(Bound<'py, PyArray2<f64>>, Vec<f64>)> {
    let scan = weighted_scan(geometry, &sinogram_in(&y)?, &sinogram_in(&weights)?)?;
    let x0 = image_in(&x0)?;
    let mut cfg = ReconConfig::new(beta, gamma, outer, inner);
    cfg.warm_start = warm_start;
    cfg.stride = stride;
    let (img, trace) = py
        .detach(|| recon::pwls_mcst(&geometry.projector, &scan, &model.inner, &cfg, &x0))
        .map_err(to_py)?;
    let objective = trace.records.iter().map(|r| r.after_coding).collect();
    Ok((image_out(py, &img), objective))
}

/// PWLS with the edge-preserving potential. Returns the image and the
/// objective after each step.
#[pyfunction]
#[pyo3(signature = (geometry, y, weights, beta, x0, delta = 20.0, iterations = 200))]
#[allow(clippy::too_many_arguments)]
fn reconstruct_ep<'py>(
    py: Python<'py>,
    geometry: &PyGeometry,
    y: PyReadonlyArray2<'py, f64>,
    weights: PyReadonlyArray2<'py, f64>,
    beta: f64,
    x0: PyReadonlyArray2<'py, f64>,
    delta: f64,
    iterations: usize,
) -> PyResult<(Bound<'py, PyArray2<f64>>, Vec<f64>)> {
    let scan = weighted_scan(geometry, &sinogram_in(&y)?, &sinogram_in(&weights)?)?;
    let x0 = image_in(&x0)?;
    let cfg = EpConfig::new(beta, delta, iterations);
    let (img, objective) = py
        .detach(|| recon::pwls_ep(&geometry.projector, &scan, &cfg, &x0))
        .map_err(to_py)?;
    Ok((image_out(py, &img), objective))
}

/// RMSE, by default over the inscribed circle.
#[pyfunction]
#[pyo3(signature = (estimate, truth, roi_circle = true))]
fn rmse(estimate: PyReadonlyArray2<'_, f64>, truth: PyReadonlyArray2<'_, f64>, roi_circle: bool) -> PyResult<f64> {
    let (e, t) = (image_in(&estimate)?, image_in(&truth)?);
    let roi = if roi_circle {
        recon::circular_roi(t.height(), t.width())
    } else {
        vec![true; t.len()]
    };
    recon::rmse_roi(&e, &t, &roi).map_err(to_py)
}

#[pyfunction]
fn ssim(estimate: PyReadonlyArray2<'_, f64>, truth: PyReadonlyArray2<'_, f64>) -> PyResult<f64> {
    recon::ssim(&image_in(&estimate)?, &image_in(&truth)?).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (r, alpha = 1.999))]
fn rho_schedule(r: usize, alpha: f64) -> f64 {
    recon::rho_schedule(r, alpha)
}

#[pyfunction]
fn read_image<'py>(py: Python<'py>, path: &str) -> PyResult<Bound<'py, PyArray2<f64>>> {
    Ok(image_out(py, &io::read_image(path).map_err(to_py)?))
}

#[pyfunction]
fn write_image(path: &str, image: PyReadonlyArray2<'_, f64>) -> PyResult<()> {
    io::write_image(path, &image_in(&image)?).map_err(to_py)
}

/// Runs the full experiment described by a TOML config; returns
/// `(method, rmse, ssim)` rows.
#[pyfunction]
fn run_experiment(py: Python<'_>, config: &str, out_dir: &str) -> PyResult<Vec<(String, f64, f64)>> {
    let cfg = mcst::config::ExperimentConfig::load(config).map_err(to_py)?;
    let report = py
        .detach(|| mcst::experiment::run_experiment(&cfg, std::path::Path::new(out_dir)))
        .map_err(to_py)?;
    Ok(report
        .scores
        .iter()
        .map(|s| (s.method.to_string(), s.rmse, s.ssim))
        .collect())
}

#[pymodule]
fn mcst_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyGeometry>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(phantom, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(extract_patches, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate_patches, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct_mcst, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct_ep, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(rho_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(read_image, m)?)?;
    m.add_function(wrap_pyfunction!(write_image, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
