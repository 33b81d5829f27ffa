//! Python bindings: images, maps, kernels, registration and the bench tools.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use slidereg::bench;
use slidereg::geometry::io::{read_map_json, read_pgm, write_map_json, write_pgm};
use slidereg::geometry::{DeformationMap, GridGeometry, LandmarkSet, ScalarImage};
use slidereg::kernels::{KernelFamily, KernelSpec};
use slidereg::registration::{self, RegistrationConfig};

create_exception!(slidereg_py, NumericalError, PyRuntimeError);

fn to_py(e: slidereg::Error) -> PyErr {
    if e.is_numerical() {
        NumericalError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "Image", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyImage(ScalarImage);

#[pymethods]
impl PyImage {
    #[new]
    #[pyo3(signature = (dims, values, spacing=None))]
    fn new(dims: Vec<usize>, values: Vec<f64>, spacing: Option<Vec<f64>>) -> PyResult<Self> {
        let g = match spacing {
            Some(s) => GridGeometry::with_spacing(&dims, &s),
            None => GridGeometry::unit(&dims),
        }
        .map_err(to_py)?;
        ScalarImage::new(g, values).map(PyImage).map_err(to_py)
    }

    #[staticmethod]
    fn read_pgm(path: PathBuf) -> PyResult<Self> {
        read_pgm(path).map(PyImage).map_err(to_py)
    }

    fn write_pgm(&self, path: PathBuf) -> PyResult<()> {
        write_pgm(&self.0, path).map_err(to_py)
    }

    #[getter]
    fn dims(&self) -> Vec<usize> {
        self.0.geometry().dims().to_vec()
    }

    #[getter]
    fn spacing(&self) -> Vec<f64> {
        self.0.geometry().spacing().to_vec()
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.0.values().to_vec()
    }

    fn __repr__(&self) -> String {
        format!("Image(dims={:?})", self.0.geometry().dims())
    }
}

#[pyclass(name = "DeformationMap", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyMap(DeformationMap);

#[pymethods]
impl PyMap {
    #[staticmethod]
    fn read_json(path: PathBuf) -> PyResult<Self> {
        read_map_json(path).map(PyMap).map_err(to_py)
    }

    fn write_json(&self, path: PathBuf) -> PyResult<()> {
        write_map_json(&self.0, path).map_err(to_py)
    }

    /// Mapped physical position of `point`.
    fn apply(&self, point: Vec<f64>) -> PyResult<Vec<f64>> {
        let d = self.0.geometry().ndim();
        if point.len() != d {
            return Err(PyValueError::new_err(format!("expected a {d}-D point")));
        }
        Ok(self.0.apply(&point)[..d].to_vec())
    }

    #[getter]
    fn direction(&self) -> &'static str {
        match self.0.direction() {
            slidereg::geometry::Direction::Forward => "forward",
            slidereg::geometry::Direction::Inverse => "inverse",
        }
    }

    #[getter]
    fn displacements(&self) -> Vec<f64> {
        self.0.displacements()
    }

    fn transition_width(&self, axis: usize, position: f64) -> PyResult<f64> {
        bench::transition_width(&self.0, axis, position).map_err(to_py)
    }

    fn min_jacobian_det(&self) -> f64 {
        slidereg::flow::min_jacobian_det(&self.0)
    }
}

#[pyclass(name = "Kernel", frozen)]
struct PyKernel(KernelSpec);

#[pymethods]
impl PyKernel {
    #[new]
    #[pyo3(signature = (family, scale, window=9))]
    fn new(family: &str, scale: f64, window: usize) -> PyResult<Self> {
        let family = match family {
            "gaussian" => KernelFamily::Gaussian,
            "wendland" | "wendland_c0_mult" => KernelFamily::WendlandC0Mult,
            other => return Err(PyValueError::new_err(format!("unknown kernel family {other:?}"))),
        };
        KernelSpec::new(family, scale, window).map(PyKernel).map_err(to_py)
    }

    fn value(&self, x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
        slidereg::kernels::eval(&self.0, &x, &y).map_err(to_py)
    }

    /// Partial derivative with respect to `y[i]`.
    fn partial(&self, i: usize, x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
        slidereg::kernels::eval_partial(&self.0, i, &x, &y).map_err(to_py)
    }

    fn mixed(&self, i: usize, x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
        slidereg::kernels::eval_mixed(&self.0, i, &x, &y).map_err(to_py)
    }
}

#[pyclass(name = "RegistrationResult", frozen)]
struct PyResultObj {
    #[pyo3(get)]
    warped: PyImage,
    #[pyo3(get)]
    forward: PyMap,
    #[pyo3(get)]
    inverse: PyMap,
    #[pyo3(get)]
    iterations: usize,
    #[pyo3(get)]
    converged: bool,
    #[pyo3(get)]
    stagnated: bool,
    /// Rows of (E_S, E_R, sparsity, total).
    #[pyo3(get)]
    energy_trace: Vec<(f64, f64, f64, f64)>,
}

/// Registers `template` onto `reference`; `config` is a JSON document.
#[pyfunction]
fn register(py: Python<'_>, template: &PyImage, reference: &PyImage, config: &str) -> PyResult<PyResultObj> {
    let cfg: RegistrationConfig = serde_json::from_str(config).map_err(json_err)?;
    let (t, r) = (template.0.clone(), reference.0.clone());
    let res = py
        .detach(move || registration::optimize(&cfg, &t, &r))
        .map_err(to_py)?;
    Ok(PyResultObj {
        warped: PyImage(res.warped.clone()),
        forward: PyMap(res.flow.forward().clone()),
        inverse: PyMap(res.flow.inverse().clone()),
        iterations: res.iterations_used,
        converged: res.converged,
        stagnated: res.stagnated,
        energy_trace: res.energy_trace.iter().map(|e| (e.e_s, e.e_r, e.sparsity, e.total)).collect(),
    })
}

#[pyfunction]
fn ssd(a: &PyImage, b: &PyImage) -> PyResult<f64> {
    registration::ssd(&a.0, &b.0).map_err(to_py)
}

type Pair = (PyImage, PyImage, PyMap, PyMap, Option<Vec<Vec<f64>>>, Option<Vec<Vec<f64>>>);

fn pair(p: bench::SyntheticPair) -> Pair {
    let pts = |l: Option<LandmarkSet>| l.map(|l| l.zero_based());
    (
        PyImage(p.template),
        PyImage(p.reference),
        PyMap(p.forward),
        PyMap(p.inverse),
        pts(p.template_landmarks),
        pts(p.reference_landmarks),
    )
}

/// `(template, reference, forward, inverse, template_landmarks, reference_landmarks)`.
#[pyfunction]
#[pyo3(signature = (size=64, shift=5.0, blur=true))]
fn gen_rectangle(size: usize, shift: f64, blur: bool) -> PyResult<Pair> {
    bench::gen_rectangle(size, shift, blur).map(pair).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (size=64, angle=5.0, blur=true))]
fn gen_wheel(size: usize, angle: f64, blur: bool) -> PyResult<Pair> {
    bench::gen_wheel(size, angle, blur).map(pair).map_err(to_py)
}

/// Mean landmark distance in mm; landmarks are zero-based voxel indices.
#[pyfunction]
#[pyo3(signature = (ref_lms, tpl_lms, spacing, map=None))]
fn tre(ref_lms: Vec<Vec<f64>>, tpl_lms: Vec<Vec<f64>>, spacing: Vec<f64>, map: Option<&PyMap>) -> PyResult<f64> {
    let r = LandmarkSet::new(ref_lms, 0).map_err(to_py)?;
    let t = LandmarkSet::new(tpl_lms, 0).map_err(to_py)?;
    bench::tre(&r, &t, &spacing, map.map(|m| &m.0)).map_err(to_py)
}

/// Forward map and deformed-grid image of a single-momentum demo.
#[pyfunction]
#[pyo3(signature = (kind, magnitude=3.0))]
fn demo(kind: &str, magnitude: f64) -> PyResult<(PyMap, PyImage)> {
    let kind = kind.parse().map_err(to_py)?;
    let d = bench::demo_momentum(kind, magnitude).map_err(to_py)?;
    Ok((PyMap(d.flow.forward().clone()), PyImage(d.grid_image)))
}

/// Runs a switching scenario (JSON) and returns the report as JSON.
#[pyfunction]
fn nonsmooth_check(scenario: &str) -> PyResult<String> {
    let sc: slidereg::nonsmooth::Scenario = serde_json::from_str(scenario).map_err(json_err)?;
    let report = slidereg::nonsmooth::run_scenario(&sc).map_err(to_py)?;
    serde_json::to_string(&report).map_err(json_err)
}

/// Runs an experiment spec (JSON) and returns the metrics report as JSON.
#[pyfunction]
fn run_experiment(py: Python<'_>, spec: &str) -> PyResult<String> {
    let spec: bench::ExperimentSpec = serde_json::from_str(spec).map_err(json_err)?;
    let report = py.detach(move || bench::run_experiment(&spec)).map_err(to_py)?;
    serde_json::to_string(&report).map_err(json_err)
}

#[pymodule]
pub fn slidereg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("NumericalError", m.py().get_type::<NumericalError>())?;
    m.add_class::<PyImage>()?;
    m.add_class::<PyMap>()?;
    m.add_class::<PyKernel>()?;
    m.add_class::<PyResultObj>()?;
    m.add_function(wrap_pyfunction!(register, m)?)?;
    m.add_function(wrap_pyfunction!(ssd, m)?)?;
    m.add_function(wrap_pyfunction!(gen_rectangle, m)?)?;
    m.add_function(wrap_pyfunction!(gen_wheel, m)?)?;
    m.add_function(wrap_pyfunction!(tre, m)?)?;
    m.add_function(wrap_pyfunction!(demo, m)?)?;
    m.add_function(wrap_pyfunction!(nonsmooth_check, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
