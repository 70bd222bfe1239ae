//! Sampled occlusion-aware distance for superquadrics (superellipsoids).

use nalgebra::{Point3, Rotation3, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{backproject, DepthMap, Intrinsics};
use crate::error::{Error, Result};
use crate::geometry::Ray;
use crate::metrics::{assemble_report, coverage_with, EvalReport};

pub const DEFAULT_LOS_SAMPLES: usize = 64;
pub const DEFAULT_SURFACE_SAMPLES: usize = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub struct Superquadric {
    pub eps1: f64,
    pub eps2: f64,
    pub half_extents: Vector3<f64>,
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
}

impl Superquadric {
    pub fn new(eps: (f64, f64), half_extents: Vector3<f64>, axis_angle: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Superquadric {
            eps1: eps.0,
            eps2: eps.1,
            half_extents,
            rotation: Rotation3::new(axis_angle),
            translation,
        }
    }

    pub fn sphere(radius: f64, center: Vector3<f64>) -> Self {
        Superquadric::new((1.0, 1.0), Vector3::repeat(radius), Vector3::zeros(), center)
    }

    pub fn validate(&self) -> Result<()> {
        let eps_ok = |e: f64| e > 0.0 && e <= 2.0;
        if !(eps_ok(self.eps1) && eps_ok(self.eps2)) {
            return Err(Error::InvalidInput(format!(
                "superquadric exponents must lie in (0, 2], got ({}, {})",
                self.eps1, self.eps2
            )));
        }
        if !self.half_extents.iter().all(|&a| a > 0.0 && a.is_finite()) {
            return Err(Error::InvalidInput("superquadric extents must be positive".into()));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("superquadric translation".into()));
        }
        Ok(())
    }

    pub fn to_local(&self, y: &Point3<f64>) -> Vector3<f64> {
        self.rotation.inverse_transform_vector(&(y.coords - self.translation))
    }

    /// Inside-outside function in the local frame.
    pub fn inside_outside_local(&self, p: &Vector3<f64>) -> f64 {
        let a = &self.half_extents;
        let xy = (p.x / a.x).abs().powf(2.0 / self.eps2) + (p.y / a.y).abs().powf(2.0 / self.eps2);
        xy.powf(self.eps2 / self.eps1) + (p.z / a.z).abs().powf(2.0 / self.eps1) - 1.0
    }

    /// Surface point and outward normal (local frame) at angles `(η, ω)`.
    pub fn surface_local(&self, eta: f64, omega: f64) -> (Vector3<f64>, Vector3<f64>) {
        let a = &self.half_extents;
        let (e1, e2) = (self.eps1, self.eps2);
        let (ce, se) = (eta.cos(), eta.sin());
        let (cw, sw) = (omega.cos(), omega.sin());
        let p = Vector3::new(
            a.x * spow(ce, e1) * spow(cw, e2),
            a.y * spow(ce, e1) * spow(sw, e2),
            a.z * spow(se, e1),
        );
        let n = Vector3::new(
            spow(ce, 2.0 - e1) * spow(cw, 2.0 - e2) / a.x,
            spow(ce, 2.0 - e1) * spow(sw, 2.0 - e2) / a.y,
            spow(se, 2.0 - e1) / a.z,
        );
        (p, n)
    }

    /// Radius of a sphere around the centre containing the shape.
    pub fn bounding_radius(&self) -> f64 {
        self.half_extents.norm()
    }
}

/// `sign(x) |x|^e`.
#[inline]
fn spow(x: f64, e: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.signum() * x.abs().powf(e)
    }
}

/// JSON form of a superquadric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuperquadricRecord {
    pub eps: [f64; 2],
    pub size: [f64; 3],
    pub rotation_axis_angle: [f64; 3],
    pub translation: [f64; 3],
}

impl From<&Superquadric> for SuperquadricRecord {
    fn from(s: &Superquadric) -> Self {
        let r = s.rotation.scaled_axis();
        SuperquadricRecord {
            eps: [s.eps1, s.eps2],
            size: s.half_extents.into(),
            rotation_axis_angle: r.into(),
            translation: s.translation.into(),
        }
    }
}

impl TryFrom<SuperquadricRecord> for Superquadric {
    type Error = Error;

    fn try_from(r: SuperquadricRecord) -> Result<Self> {
        let s = Superquadric::new(
            (r.eps[0], r.eps[1]),
            Vector3::from(r.size),
            Vector3::from(r.rotation_axis_angle),
            Vector3::from(r.translation),
        );
        s.validate()?;
        Ok(s)
    }
}

impl Serialize for Superquadric {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        SuperquadricRecord::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Superquadric {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        Superquadric::try_from(SuperquadricRecord::deserialize(deserializer)?).map_err(serde::de::Error::custom)
    }
}

pub fn sq_inside_outside(s: &Superquadric, y: &Point3<f64>) -> f64 {
    s.inside_outside_local(&s.to_local(y))
}

/// `n` surface samples with uniformly drawn angles, as camera-frame
/// `(point, outward unit normal)` pairs.
pub fn sq_sample_surface<R: Rng + ?Sized>(s: &Superquadric, n: usize, rng: &mut R) -> Vec<(Point3<f64>, Vector3<f64>)> {
    use std::f64::consts::{FRAC_PI_2, PI};
    (0..n)
        .map(|_| {
            let eta = -FRAC_PI_2 + PI * rng.random::<f64>();
            let omega = -PI + 2.0 * PI * rng.random::<f64>();
            let (p, nrm) = s.surface_local(eta, omega);
            let nrm = nrm.try_normalize(0.0).unwrap_or(Vector3::z());
            (Point3::from(s.rotation * p + s.translation), s.rotation * nrm)
        })
        .collect()
}

/// True when `f_sq` changes sign along `k/L · y`, `k = 1..L`; zero values are skipped.
pub fn sq_occludes(s: &Superquadric, y: &Point3<f64>, los_samples: usize) -> bool {
    let mut prev: Option<bool> = None;
    for k in 1..=los_samples {
        let f = sq_inside_outside(s, &Point3::from(y.coords * (k as f64 / los_samples as f64)));
        if f == 0.0 {
            continue;
        }
        let positive = f > 0.0;
        if prev.is_some_and(|p| p != positive) {
            return true;
        }
        prev = Some(positive);
    }
    false
}

/// Superquadrics with their precomputed visible surface samples.
pub struct SampledScene {
    shapes: Vec<Superquadric>,
    visible: Vec<Vec<Point3<f64>>>,
    los_samples: usize,
}

impl SampledScene {
    pub fn new(shapes: &[Superquadric], n_surface: usize, los_samples: usize, seed: u64) -> Result<Self> {
        if n_surface == 0 || los_samples < 2 {
            return Err(Error::InvalidInput("need surface and line-of-sight samples".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut visible = Vec::with_capacity(shapes.len());
        for s in shapes {
            s.validate()?;
            let cam_local = s.to_local(&Point3::origin());
            let cam_outside = s.inside_outside_local(&cam_local) > 0.0;
            let camera = Point3::origin();
            visible.push(
                sq_sample_surface(s, n_surface, &mut rng)
                    .into_iter()
                    .filter(|(p, n)| !(cam_outside && (p - camera).dot(n) > 0.0))
                    .map(|(p, _)| p)
                    .collect(),
            );
        }
        Ok(SampledScene {
            shapes: shapes.to_vec(),
            visible,
            los_samples,
        })
    }

    /// Distance to the nearest visible sample of shape `i`; `None` when every
    /// sample is invisible.
    pub fn distance(&self, i: usize, y: &Point3<f64>) -> Option<f64> {
        self.visible[i].iter().map(|p| (p - y).norm()).min_by(f64::total_cmp)
    }

    /// `max(min_h d_sq, max_h χ d_sq)`; `+∞` when no shape has a visible sample.
    pub fn oa_distance(&self, y: &Point3<f64>) -> f64 {
        let mut nearest = f64::INFINITY;
        let mut occluding = 0.0f64;
        for (i, s) in self.shapes.iter().enumerate() {
            let Some(d) = self.distance(i, y) else { continue };
            nearest = nearest.min(d);
            if sq_occludes(s, y, self.los_samples) {
                occluding = occluding.max(d);
            }
        }
        nearest.max(occluding)
    }

    pub fn oa_distances(&self, points: &[Point3<f64>]) -> Vec<f64> {
        points.par_iter().map(|y| self.oa_distance(y)).collect()
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }
}

/// Occlusion-aware distance of one point to a superquadric set.
pub fn sq_oa_distance(shapes: &[Superquadric], y: &Point3<f64>, n_surface: usize, los_samples: usize) -> Result<f64> {
    Ok(SampledScene::new(shapes, n_surface, los_samples, 0)?.oa_distance(y))
}

/// Whether a ray passes through the interior of `s`, probed at `steps` points
/// across its bounding sphere.
pub fn sq_ray_hits(s: &Superquadric, ray: &Ray, steps: usize) -> bool {
    let c = s.translation;
    let d = ray.direction.into_inner();
    let oc = ray.origin.coords - c;
    let r = s.bounding_radius();
    let b = oc.dot(&d);
    let disc = b * b - (oc.norm_squared() - r * r);
    if disc < 0.0 {
        return false;
    }
    let root = disc.sqrt();
    let (enter, exit) = ((-b - root).max(0.0), -b + root);
    if exit <= 0.0 {
        return false;
    }
    (0..=steps).any(|k| {
        let t = enter + (exit - enter) * k as f64 / steps as f64;
        sq_inside_outside(s, &ray.at(t)) < 0.0
    })
}

/// Metric report for a superquadric set; distances use `n_surface` samples per
/// shape and coverage probes each pixel ray at 256 points.
pub fn evaluate_superquadrics(
    depth: &DepthMap,
    k: &Intrinsics,
    shapes: &[Superquadric],
    bounds: &[f64],
    n_surface: usize,
    los_samples: usize,
) -> Result<EvalReport> {
    let cloud = backproject(depth, k)?;
    let scene = SampledScene::new(shapes, n_surface, los_samples, 0)?;
    let distances = scene.oa_distances(&cloud.points);
    let (percent, mask) = coverage_with(depth, k, |ray| shapes.iter().any(|s| sq_ray_hits(s, ray, 256)))?;
    assemble_report(shapes.len(), &distances, &cloud.pixels, percent, &mask, bounds)
}
