//! Python bindings: cuboids, distances, scene fitting, evaluation and synthetic scenes.

use cubefit::camera::{backproject, DepthMap, Intrinsics};
use cubefit::robust::{EmConfig, FitConfig, InlierMode, InlierParams};
use cubefit::synth::{make_scene, SceneOptions};
use nalgebra::{Point3, Vector3};
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn to_py(e: cubefit::Error) -> PyErr {
    if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn to_points(raw: Vec<[f64; 3]>) -> Vec<Point3<f64>> {
    raw.into_iter().map(Point3::from).collect()
}

/// Oriented box: half extents, axis-angle rotation and translation in the camera frame.
#[pyclass(name = "Cuboid", from_py_object)]
#[derive(Clone)]
pub struct PyCuboid {
    inner: cubefit::Cuboid,
}

#[pymethods]
impl PyCuboid {
    #[new]
    #[pyo3(signature = (half_extents, axis_angle = [0.0; 3], translation = [0.0; 3]))]
    fn new(half_extents: [f64; 3], axis_angle: [f64; 3], translation: [f64; 3]) -> PyResult<Self> {
        let inner = cubefit::Cuboid::from_axis_angle(
            Vector3::from(half_extents),
            Vector3::from(axis_angle),
            Vector3::from(translation),
        );
        inner.validate().map_err(to_py)?;
        Ok(PyCuboid { inner })
    }

    #[getter]
    fn half_extents(&self) -> [f64; 3] {
        self.inner.half_extents.into()
    }

    #[getter]
    fn axis_angle(&self) -> [f64; 3] {
        self.inner.axis_angle().into()
    }

    #[getter]
    fn translation(&self) -> [f64; 3] {
        self.inner.translation.into()
    }

    /// Row-major rotation matrix.
    #[getter]
    fn rotation(&self) -> [[f64; 3]; 3] {
        let m = self.inner.rotation.matrix();
        [0, 1, 2].map(|r| [m[(r, 0)], m[(r, 1)], m[(r, 2)]])
    }

    fn diameter(&self) -> f64 {
        self.inner.diameter()
    }

    fn distance(&self, point: [f64; 3]) -> f64 {
        cubefit::point_to_cuboid_distance(&self.inner, &Point3::from(point))
    }

    fn __repr__(&self) -> String {
        let a = self.inner.half_extents;
        let t = self.inner.translation;
        format!(
            "Cuboid(half_extents=[{:.4}, {:.4}, {:.4}], translation=[{:.4}, {:.4}, {:.4}])",
            a.x, a.y, a.z, t.x, t.y, t.z
        )
    }
}

fn unwrap(cuboids: &[PyCuboid]) -> Vec<cubefit::Cuboid> {
    cuboids.iter().map(|c| c.inner.clone()).collect()
}

fn wrap(cuboids: Vec<cubefit::Cuboid>) -> Vec<PyCuboid> {
    cuboids.into_iter().map(|inner| PyCuboid { inner }).collect()
}

#[pyfunction]
fn point_to_cuboid_distance(cuboid: &PyCuboid, point: [f64; 3]) -> f64 {
    cuboid.distance(point)
}

/// Occlusion-aware distance of `point` to a cuboid set (`inf` for an empty set).
#[pyfunction]
fn occlusion_aware_distance(cuboids: Vec<PyCuboid>, point: [f64; 3]) -> f64 {
    cubefit::occlusion_aware_distance(&unwrap(&cuboids), &Point3::from(point))
}

/// Camera intrinsics as a dict with `fx, fy, cx, cy, width, height`.
#[derive(FromPyObject)]
struct PyIntrinsics {
    #[pyo3(item)]
    fx: f64,
    #[pyo3(item)]
    fy: f64,
    #[pyo3(item)]
    cx: f64,
    #[pyo3(item)]
    cy: f64,
    #[pyo3(item)]
    width: usize,
    #[pyo3(item)]
    height: usize,
}

impl PyIntrinsics {
    fn get(&self) -> PyResult<Intrinsics> {
        let k = Intrinsics {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
        };
        k.validate().map_err(to_py)?;
        Ok(k)
    }
}

fn depth_map(rows: Vec<Vec<f64>>) -> PyResult<DepthMap> {
    let height = rows.len();
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(PyValueError::new_err("depth rows differ in length"));
    }
    DepthMap::new(width, height, rows.concat()).map_err(to_py)
}

/// Camera-frame points of every valid depth pixel.
#[pyfunction]
fn backproject_depth(depth: Vec<Vec<f64>>, intrinsics: PyIntrinsics) -> PyResult<Vec<[f64; 3]>> {
    let cloud = backproject(&depth_map(depth)?, &intrinsics.get()?).map_err(to_py)?;
    Ok(cloud.points.iter().map(|p| p.coords.into()).collect())
}

/// Sequentially fits cuboids to a point cloud (uniform sampling weights).
#[pyfunction]
#[pyo3(signature = (
    points, *, seed = 0, hypotheses = 4096, max_cuboids = 8, tau = 0.004, beta = 5.0,
    tau_c_mult = 2.0, theta = None, plain_inliers = false, refine_em = false
))]
#[allow(clippy::too_many_arguments)]
fn fit_scene(
    py: Python<'_>,
    points: Vec<[f64; 3]>,
    seed: u64,
    hypotheses: usize,
    max_cuboids: usize,
    tau: f64,
    beta: f64,
    tau_c_mult: f64,
    theta: Option<f64>,
    plain_inliers: bool,
    refine_em: bool,
) -> PyResult<Vec<PyCuboid>> {
    let inlier = InlierParams::new(tau, beta, tau_c_mult);
    let cfg = FitConfig {
        hypotheses,
        max_cuboids,
        seed,
        stopping_theta: theta,
        inlier,
        mode: if plain_inliers {
            InlierMode::Plain
        } else {
            InlierMode::OcclusionAware
        },
        refine_em: refine_em.then(|| EmConfig::for_inliers(&inlier)),
        ..FitConfig::default()
    };
    let pts = to_points(points);
    let fit = py.detach(|| cubefit::fit_scene(&pts, None, &cfg)).map_err(to_py)?;
    Ok(wrap(fit.cuboids))
}

/// Scores cuboids against a depth map; returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (depth, intrinsics, cuboids, bounds = vec![0.20, 0.05]))]
fn evaluate<'py>(
    py: Python<'py>,
    depth: Vec<Vec<f64>>,
    intrinsics: PyIntrinsics,
    cuboids: Vec<PyCuboid>,
    bounds: Vec<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let depth = depth_map(depth)?;
    let k = intrinsics.get()?;
    let models = unwrap(&cuboids);
    let r = py
        .detach(|| cubefit::evaluate(&depth, &k, &models, &bounds))
        .map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("num_primitives", r.num_primitives)?;
    out.set_item("coverage_percent", r.coverage_percent)?;
    out.set_item("mean_oa_all", r.mean_oa_all)?;
    out.set_item("mean_oa_covered", r.mean_oa_covered)?;
    let auc = PyDict::new(py);
    for &b in &bounds {
        auc.set_item(b, r.auc[&cubefit::metrics::bound_key(b)])?;
    }
    out.set_item("auc", auc)?;
    out.set_item("num_points", r.num_points)?;
    out.set_item("num_covered", r.num_covered)?;
    Ok(out)
}

/// Random synthetic scene: `(depth rows, intrinsics dict, cuboids)`.
#[pyfunction]
#[pyo3(signature = (k = 3, seed = 7, width = 640, height = 480, noise = 0.0))]
fn synth_scene<'py>(
    py: Python<'py>,
    k: usize,
    seed: u64,
    width: usize,
    height: usize,
    noise: f64,
) -> PyResult<(Vec<Vec<f64>>, Bound<'py, PyDict>, Vec<PyCuboid>)> {
    let f = 525.0 * width as f64 / 640.0;
    let intr = Intrinsics {
        fx: f,
        fy: f,
        cx: (width as f64 - 1.0) / 2.0,
        cy: (height as f64 - 1.0) / 2.0,
        width,
        height,
    };
    intr.validate().map_err(to_py)?;
    let opts = SceneOptions {
        depth_noise: noise,
        ..SceneOptions::new(k)
    };
    let scene = make_scene(&opts, &intr, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(to_py)?;
    let rows = scene.depth.values.chunks(width).map(<[f64]>::to_vec).collect();
    let kd = PyDict::new(py);
    kd.set_item("fx", intr.fx)?;
    kd.set_item("fy", intr.fy)?;
    kd.set_item("cx", intr.cx)?;
    kd.set_item("cy", intr.cy)?;
    kd.set_item("width", width)?;
    kd.set_item("height", height)?;
    Ok((rows, kd, wrap(scene.cuboids)))
}

#[pymodule]
#[pyo3(name = "cubefit")]
fn cubefit_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCuboid>()?;
    m.add_function(wrap_pyfunction!(point_to_cuboid_distance, m)?)?;
    m.add_function(wrap_pyfunction!(occlusion_aware_distance, m)?)?;
    m.add_function(wrap_pyfunction!(backproject_depth, m)?)?;
    m.add_function(wrap_pyfunction!(fit_scene, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(synth_scene, m)?)?;
    Ok(())
}
