//! Scene-level evaluation of a primitive set against a depth map.

use std::collections::BTreeMap;

use nalgebra::Point3;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::camera::{backproject, DepthMap, Intrinsics};
use crate::error::{Error, Result};
use crate::geometry::{occlusion_aware_distance, ray_cuboid_intersect, Cuboid, Ray};

pub const DEFAULT_BOUNDS: [f64; 2] = [0.20, 0.05];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub num_primitives: usize,
    pub coverage_percent: f64,
    /// `+∞` when there are no primitives.
    #[serde(with = "maybe_infinite")]
    pub mean_oa_all: f64,
    pub mean_oa_covered: f64,
    /// AUC in percent, keyed by the bound in meters.
    pub auc: BTreeMap<String, f64>,
    pub num_points: usize,
    pub num_covered: usize,
}

/// Writes `+∞` as the string `"uncovered"`; finite values as numbers.
mod maybe_infinite {
    use super::*;

    const MARKER: &str = "uncovered";

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if *v == f64::INFINITY {
            s.serialize_str(MARKER)
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == MARKER => Ok(f64::INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("unexpected distance marker {s:?}"))),
        }
    }
}

/// Key used for a bound in [`EvalReport::auc`].
pub fn bound_key(bound: f64) -> String {
    format!("{bound}")
}

/// Occlusion-aware distance of every point; `+∞` for an empty set.
pub fn oa_distances(points: &[Point3<f64>], cuboids: &[Cuboid]) -> Vec<f64> {
    points
        .par_iter()
        .map(|y| occlusion_aware_distance(cuboids, y))
        .collect()
}

/// Area under the recall curve up to `bound`, in percent: `100/(b N) Σ_{d<b} (b - d)`.
pub fn auc(distances: &[f64], bound: f64) -> Result<f64> {
    if !(bound > 0.0 && bound.is_finite()) {
        return Err(Error::InvalidInput(format!("AUC bound must be positive, got {bound}")));
    }
    if distances.is_empty() {
        return Ok(0.0);
    }
    let area: f64 = distances.iter().filter(|&&d| d < bound).map(|&d| bound - d.max(0.0)).sum();
    Ok(100.0 * area / (bound * distances.len() as f64))
}

/// Pixels whose centre ray hits any primitive, and the covered share of
/// valid-depth pixels in percent.
pub fn coverage_with<F>(depth: &DepthMap, k: &Intrinsics, hits: F) -> Result<(f64, Vec<bool>)>
where
    F: Fn(&Ray) -> bool + Sync,
{
    depth.check_matches(k)?;
    let w = depth.width;
    let mask: Vec<bool> = (0..w * depth.height)
        .into_par_iter()
        .map(|i| hits(&k.pixel_ray(i % w, i / w)))
        .collect();
    let valid = depth.valid_count();
    let covered = mask
        .iter()
        .zip(&depth.values)
        .filter(|(&m, &z)| m && DepthMap::is_valid_value(z))
        .count();
    let percent = if valid == 0 { 0.0 } else { 100.0 * covered as f64 / valid as f64 };
    Ok((percent, mask))
}

pub fn coverage(depth: &DepthMap, k: &Intrinsics, cuboids: &[Cuboid]) -> Result<(f64, Vec<bool>)> {
    coverage_with(depth, k, |ray| cuboids.iter().any(|h| ray_cuboid_intersect(h, ray).is_some()))
}

/// Mean over the entries selected by `mask`, 0 when none is selected.
pub fn covered_mean(distances: &[f64], mask: &[bool]) -> Result<f64> {
    if distances.len() != mask.len() {
        return Err(Error::InvalidInput("mask and distances differ in length".into()));
    }
    let (sum, count) = distances
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, c), (&d, _)| (s + d, c + 1));
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Assembles a report from precomputed per-point distances and the pixel coverage
/// mask. `pixels[i]` is the linear pixel index of point `i`.
pub fn assemble_report(
    num_primitives: usize,
    distances: &[f64],
    pixels: &[usize],
    coverage_percent: f64,
    mask: &[bool],
    bounds: &[f64],
) -> Result<EvalReport> {
    let covered: Vec<bool> = pixels.iter().map(|&p| mask[p]).collect();
    let mean_oa_all = if num_primitives == 0 {
        f64::INFINITY
    } else if distances.is_empty() {
        0.0
    } else {
        distances.iter().sum::<f64>() / distances.len() as f64
    };
    let mut auc_map = BTreeMap::new();
    for &b in bounds {
        auc_map.insert(bound_key(b), auc(distances, b)?);
    }
    Ok(EvalReport {
        num_primitives,
        coverage_percent,
        mean_oa_all,
        mean_oa_covered: covered_mean(distances, &covered)?,
        auc: auc_map,
        num_points: distances.len(),
        num_covered: covered.iter().filter(|&&c| c).count(),
    })
}

pub fn evaluate(depth: &DepthMap, k: &Intrinsics, cuboids: &[Cuboid], bounds: &[f64]) -> Result<EvalReport> {
    let cloud = backproject(depth, k)?;
    let distances = oa_distances(&cloud.points, cuboids);
    let (percent, mask) = coverage(depth, k, cuboids)?;
    assemble_report(cuboids.len(), &distances, &cloud.pixels, percent, &mask, bounds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn riemann_auc(d: &[f64], b: f64, steps: usize) -> f64 {
        let mut acc = 0.0;
        for s in 0..steps {
            let t = (s as f64 + 0.5) * b / steps as f64;
            acc += d.iter().filter(|&&x| x <= t).count() as f64 / d.len() as f64;
        }
        100.0 * acc / steps as f64
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.0; 5], 0.2).unwrap(), 100.0);
        assert_eq!(auc(&[0.3, 0.2, f64::INFINITY], 0.2).unwrap(), 0.0);
        assert_eq!(auc(&[0.0, 1.0], 0.05).unwrap(), 50.0);
        assert!((auc(&[0.05], 0.20).unwrap() - 75.0).abs() < 1e-12);
        assert!(auc(&[0.1], 0.0).is_err());
    }

    #[test]
    fn auc_matches_riemann_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let d: Vec<f64> = (0..200).map(|_| rng.random::<f64>() * 0.3).collect();
            let exact = auc(&d, 0.2).unwrap();
            assert!((exact - riemann_auc(&d, 0.2, 10_000)).abs() < 0.01);
        }
    }

    #[test]
    fn covered_mean_examples() {
        assert_eq!(covered_mean(&[0.1, 0.5, 0.3], &[true, false, true]).unwrap(), 0.2);
        assert_eq!(covered_mean(&[0.1], &[false]).unwrap(), 0.0);
        assert!(covered_mean(&[0.1], &[]).is_err());
    }

    #[test]
    fn empty_model_report() {
        let k = Intrinsics {
            fx: 50.0,
            fy: 50.0,
            cx: 15.5,
            cy: 11.5,
            width: 32,
            height: 24,
        };
        let depth = DepthMap::new(32, 24, vec![2.0; 32 * 24]).unwrap();
        let r = evaluate(&depth, &k, &[], &DEFAULT_BOUNDS).unwrap();
        assert_eq!(r.num_primitives, 0);
        assert_eq!(r.coverage_percent, 0.0);
        assert!(r.auc.values().all(|&a| a == 0.0));
        assert_eq!(r.mean_oa_all, f64::INFINITY);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"uncovered\""));
        assert_eq!(serde_json::from_str::<EvalReport>(&json).unwrap(), r);
    }

    #[test]
    fn wall_covers_everything() {
        let k = Intrinsics {
            fx: 50.0,
            fy: 50.0,
            cx: 15.5,
            cy: 11.5,
            width: 32,
            height: 24,
        };
        let wall = Cuboid::axis_aligned(Vector3::new(10.0, 10.0, 0.1), Vector3::new(0.0, 0.0, 2.1));
        let depth = crate::synth::render_depth(&[wall.clone()], &k).unwrap();
        let r = evaluate(&depth, &k, &[wall], &DEFAULT_BOUNDS).unwrap();
        assert_eq!(r.coverage_percent, 100.0);
        assert!(r.mean_oa_all < 1e-9);
        assert!(r.auc.values().all(|&a| (a - 100.0).abs() < 1e-6));
        let back: EvalReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
