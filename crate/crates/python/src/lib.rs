//! Python bindings for the `skyhdr` crate.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use skyhdr::capture::{self, BracketPlan, SyntheticCameraConfig};
use skyhdr::glare::{self, RegionOfInterest};
use skyhdr::response::{self, SolverConfig};
use skyhdr::thermo::{self, CoolerState, PlantConfig, PlantModel, Thresholds};
use skyhdr::tonemap::{self, TonemapConfig};
use skyhdr::{fusion, imageio, scene, PixelFlag};

fn err(e: skyhdr::Error) -> PyErr {
    match e {
        skyhdr::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// 8-bit interleaved RGB image.
#[pyclass(name = "RasterImage", module = "skyhdr_py", frozen, from_py_object)]
#[derive(Clone)]
pub struct PyRasterImage(skyhdr::RasterImage8);

#[pymethods]
impl PyRasterImage {
    #[new]
    fn new(width: usize, height: usize, data: Vec<u8>) -> PyResult<Self> {
        skyhdr::RasterImage8::new(width, height, data).map(Self).map_err(err)
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        imageio::read_ldr(path).map(Self).map_err(err)
    }

    /// Writes PNG for a `.png` path and binary PPM otherwise.
    fn write(&self, path: PathBuf) -> PyResult<()> {
        imageio::write_ldr(&self.0, path).map_err(err)
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height()
    }

    #[getter]
    fn data<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, self.0.data())
    }

    fn pixel(&self, x: usize, y: usize) -> PyResult<(u8, u8, u8)> {
        if x >= self.0.width() || y >= self.0.height() {
            return Err(PyValueError::new_err(format!("pixel ({x}, {y}) is outside the image")));
        }
        let [r, g, b] = self.0.pixel(x, y);
        Ok((r, g, b))
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        format!("RasterImage({}x{})", self.0.width(), self.0.height())
    }
}

/// Same-sized images with strictly increasing shutter times.
#[pyclass(name = "ExposureStack", module = "skyhdr_py", frozen)]
pub struct PyExposureStack(skyhdr::ExposureStack);

#[pymethods]
impl PyExposureStack {
    #[new]
    fn new(images: Vec<PyRasterImage>, shutter_times_s: Vec<f64>) -> PyResult<Self> {
        let images = images.into_iter().map(|i| i.0).collect();
        skyhdr::ExposureStack::new(images, shutter_times_s).map(Self).map_err(err)
    }

    #[getter]
    fn shutter_times_s(&self) -> Vec<f64> {
        self.0.shutter_times_s().to_vec()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

/// Per-channel log response `g(z)` with `g(128) = 0`.
#[pyclass(name = "ResponseCurve", module = "skyhdr_py", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyResponseCurve(skyhdr::ResponseCurve);

#[pymethods]
impl PyResponseCurve {
    #[new]
    fn new(channels: [[f64; 256]; 3]) -> PyResult<Self> {
        skyhdr::ResponseCurve::new(channels).map(Self).map_err(err)
    }

    #[staticmethod]
    fn power_law(gamma: f64) -> PyResult<Self> {
        skyhdr::ResponseCurve::power_law(gamma).map(Self).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        response::load_curve(path).map(Self).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        response::save_curve(&self.0, path).map_err(err)
    }

    fn to_table(&self) -> String {
        response::format_curve_table(&self.0)
    }

    fn g(&self, channel: usize, z: u8) -> PyResult<f64> {
        if channel >= 3 {
            return Err(PyValueError::new_err("channel must be 0, 1 or 2"));
        }
        Ok(self.0.g(channel, z))
    }

    fn channel(&self, channel: usize) -> PyResult<Vec<f64>> {
        if channel >= 3 {
            return Err(PyValueError::new_err("channel must be 0, 1 or 2"));
        }
        Ok(self.0.channel(channel).to_vec())
    }
}

fn flag_name(f: PixelFlag) -> &'static str {
    match f {
        PixelFlag::Valid => "valid",
        PixelFlag::OverExposed => "over",
        PixelFlag::UnderExposed => "under",
    }
}

/// Per-pixel log radiance with validity flags.
#[pyclass(name = "RadianceMap", module = "skyhdr_py", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyRadianceMap(skyhdr::RadianceMap);

#[pymethods]
impl PyRadianceMap {
    /// Reads a PFM and its `.mask.pgm` sidecar; a missing sidecar marks every
    /// pixel valid.
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        let (map, warnings) = imageio::read_radiance(path).map_err(err)?;
        for w in warnings {
            log_warning(&w);
        }
        Ok(Self(map))
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        imageio::write_radiance(&self.0, path).map_err(err)
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height()
    }

    fn valid_count(&self) -> usize {
        self.0.valid_count()
    }

    fn ln_e(&self, x: usize, y: usize, c: usize) -> PyResult<f64> {
        self.check(x, y, c)?;
        Ok(self.0.ln_e(x, y, c))
    }

    fn radiance(&self, x: usize, y: usize, c: usize) -> PyResult<f64> {
        self.check(x, y, c)?;
        Ok(self.0.radiance(x, y, c))
    }

    /// `"valid"`, `"over"` or `"under"`.
    fn flag(&self, x: usize, y: usize) -> PyResult<&'static str> {
        self.check(x, y, 0)?;
        Ok(flag_name(self.0.flag(x, y)))
    }

    /// Flat list of ln E in row-major, channel-interleaved order.
    fn ln_values(&self) -> Vec<f64> {
        self.0.ln_values().to_vec()
    }
}

impl PyRadianceMap {
    fn check(&self, x: usize, y: usize, c: usize) -> PyResult<()> {
        if x >= self.0.width() || y >= self.0.height() || c >= 3 {
            return Err(PyValueError::new_err(format!("index ({x}, {y}, {c}) is outside the map")));
        }
        Ok(())
    }
}

fn log_warning(w: &imageio::LoadWarning) {
    let imageio::LoadWarning::MissingMask(p) = w;
    eprintln!("warning: no mask at {}, treating every pixel as valid", p.display());
}

#[pyfunction]
fn weight(z: u8) -> f64 {
    skyhdr::weight(z)
}

#[pyfunction]
fn shutter_time_for_ev(base_s: f64, ev_offset: f64) -> PyResult<f64> {
    skyhdr::shutter_time_for_ev(base_s, ev_offset).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (base_shutter_s, ev_offsets = capture::DEFAULT_EV_OFFSETS.to_vec()))]
fn plan_bracket(base_shutter_s: f64, ev_offsets: Vec<f64>) -> PyResult<Vec<f64>> {
    let plan = BracketPlan::new(base_shutter_s, ev_offsets, "smallest").map_err(err)?;
    Ok(capture::plan_bracket(&plan))
}

#[pyfunction]
#[pyo3(signature = (stack, lambda_ = 100.0, sample_count = 256, seed = 0))]
fn select_samples(stack: &PyExposureStack, lambda_: f64, sample_count: usize, seed: u64) -> PyResult<Vec<(usize, usize)>> {
    let config = SolverConfig { lambda: lambda_, sample_count, seed };
    Ok(response::select_samples(&stack.0, &config).map_err(err)?.points().to_vec())
}

#[pyfunction]
#[pyo3(signature = (stack, lambda_ = 100.0, sample_count = 256, seed = 0))]
fn solve_response(stack: &PyExposureStack, lambda_: f64, sample_count: usize, seed: u64) -> PyResult<PyResponseCurve> {
    let config = SolverConfig { lambda: lambda_, sample_count, seed };
    let plan = response::select_samples(&stack.0, &config).map_err(err)?;
    response::solve_response(&stack.0, &plan, &config).map(PyResponseCurve).map_err(err)
}

#[pyfunction]
fn fuse(py: Python<'_>, stack: &PyExposureStack, curve: &PyResponseCurve) -> PyResult<PyRadianceMap> {
    py.detach(|| fusion::fuse(&stack.0, &curve.0)).map(PyRadianceMap).map_err(err)
}

#[pyfunction]
fn fusion_report<'py>(py: Python<'py>, map: &PyRadianceMap) -> PyResult<Bound<'py, PyDict>> {
    let r = fusion::fusion_report(&map.0).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("valid_pixel_fraction", r.valid_pixel_fraction)?;
    d.set_item("channel_bits", r.channel_bits.to_vec())?;
    d.set_item("dynamic_range_bits", r.dynamic_range_bits)?;
    Ok(d)
}

#[pyfunction]
fn equalize_global(map: &PyRadianceMap) -> PyResult<PyRasterImage> {
    tonemap::equalize_global(&map.0).map(PyRasterImage).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (map, tiles_x = 8, tiles_y = 8, clip_limit = 0.01))]
fn equalize_adaptive(map: &PyRadianceMap, tiles_x: usize, tiles_y: usize, clip_limit: f64) -> PyResult<PyRasterImage> {
    let config = TonemapConfig { tiles_x, tiles_y, clip_limit };
    tonemap::equalize_adaptive(&map.0, &config).map(PyRasterImage).map_err(err)
}

fn roi_or_full(img: &skyhdr::RasterImage8, roi: Option<(usize, usize, usize, usize)>) -> RegionOfInterest {
    match roi {
        Some((x, y, w, h)) => RegionOfInterest::new(x, y, w, h),
        None => RegionOfInterest::full(img),
    }
}

/// Returns `{"saturated": n, "total": n, "fraction": f}` for the region
/// `(x, y, w, h)`, or the whole image.
#[pyfunction]
#[pyo3(signature = (img, roi = None, threshold = glare::DEFAULT_THRESHOLD))]
fn saturation_report<'py>(
    py: Python<'py>,
    img: &PyRasterImage,
    roi: Option<(usize, usize, usize, usize)>,
    threshold: u8,
) -> PyResult<Bound<'py, PyDict>> {
    let r = glare::saturation_report(&img.0, &roi_or_full(&img.0, roi), threshold).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("saturated", r.saturated_count)?;
    d.set_item("total", r.total_count)?;
    d.set_item("fraction", r.saturated_fraction)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (img, roi = None, threshold = glare::DEFAULT_THRESHOLD))]
fn render_overlay(img: &PyRasterImage, roi: Option<(usize, usize, usize, usize)>, threshold: u8) -> PyResult<PyRasterImage> {
    glare::render_overlay(&img.0, &roi_or_full(&img.0, roi), threshold).map(PyRasterImage).map_err(err)
}

/// The reference sky-and-sun radiance field, spanning 15 stops.
#[pyfunction]
fn sun_scene(width: usize, height: usize) -> PyResult<PyRadianceMap> {
    scene::sun_scene(width, height).map(|(_, m)| PyRadianceMap(m)).map_err(err)
}

/// Box `(x, y, w, h)` around the sun of the reference scene.
#[pyfunction]
fn circumsolar_roi(width: usize, height: usize) -> (usize, usize, usize, usize) {
    let r = scene::SkyScene::new(width, height).circumsolar_roi();
    (r.x, r.y, r.width, r.height)
}

#[pyfunction]
#[pyo3(signature = (scene, shutter_s, gamma = 2.2, noise_sigma = 0.0, seed = 0))]
fn synth_capture(scene: &PyRadianceMap, shutter_s: f64, gamma: f64, noise_sigma: f64, seed: u64) -> PyResult<PyRasterImage> {
    let config = SyntheticCameraConfig { true_gamma: gamma, scene: scene.0.clone(), noise_sigma, seed };
    capture::synth_capture(&config, shutter_s).map(PyRasterImage).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (on, temp_c, t_on = 37.0, t_off = 32.0, t_max = 40.0))]
fn controller_step(on: bool, temp_c: f64, t_on: f64, t_off: f64, t_max: f64) -> PyResult<bool> {
    let th = Thresholds::new(t_on, t_off, t_max).map_err(err)?;
    let state = if on { CoolerState::On } else { CoolerState::Off };
    Ok(thermo::controller_step(state, temp_c, &th).is_on())
}

/// Simulates a calibrated enclosure and returns the trace columns with the
/// summary statistics.
#[pyfunction]
#[pyo3(signature = (model = "sealed", hours = 24.0, dt = 1.0))]
fn simulate_thermo<'py>(py: Python<'py>, model: &str, hours: f64, dt: f64) -> PyResult<Bound<'py, PyDict>> {
    let model: PlantModel = model.parse().map_err(err)?;
    let plant = PlantConfig { dt, ..PlantConfig::for_model(model) };
    let trace = thermo::simulate(&plant, &Thresholds::default(), hours * 3600.0).map_err(err)?;
    let s = thermo::analyze_trace(&trace).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("t_s", trace.samples().iter().map(|x| x.t_s).collect::<Vec<_>>())?;
    d.set_item("temp_c", trace.samples().iter().map(|x| x.temp_c).collect::<Vec<_>>())?;
    d.set_item("cooler_on", trace.samples().iter().map(|x| x.cooler_on).collect::<Vec<_>>())?;
    d.set_item("max_c", s.max_c)?;
    d.set_item("min_c", s.min_c)?;
    d.set_item("total_variation_c", s.total_variation_c)?;
    d.set_item("duty_fraction", s.duty_fraction)?;
    Ok(d)
}

#[pymodule]
fn skyhdr_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRasterImage>()?;
    m.add_class::<PyExposureStack>()?;
    m.add_class::<PyResponseCurve>()?;
    m.add_class::<PyRadianceMap>()?;
    m.add_function(wrap_pyfunction!(weight, m)?)?;
    m.add_function(wrap_pyfunction!(shutter_time_for_ev, m)?)?;
    m.add_function(wrap_pyfunction!(plan_bracket, m)?)?;
    m.add_function(wrap_pyfunction!(select_samples, m)?)?;
    m.add_function(wrap_pyfunction!(solve_response, m)?)?;
    m.add_function(wrap_pyfunction!(fuse, m)?)?;
    m.add_function(wrap_pyfunction!(fusion_report, m)?)?;
    m.add_function(wrap_pyfunction!(equalize_global, m)?)?;
    m.add_function(wrap_pyfunction!(equalize_adaptive, m)?)?;
    m.add_function(wrap_pyfunction!(saturation_report, m)?)?;
    m.add_function(wrap_pyfunction!(render_overlay, m)?)?;
    m.add_function(wrap_pyfunction!(sun_scene, m)?)?;
    m.add_function(wrap_pyfunction!(circumsolar_roi, m)?)?;
    m.add_function(wrap_pyfunction!(synth_capture, m)?)?;
    m.add_function(wrap_pyfunction!(controller_step, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_thermo, m)?)?;
    Ok(())
}
