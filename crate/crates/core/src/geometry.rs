//! Cuboid primitives and the distance / visibility kernel.
//!
//! All quantities live in the camera frame: the camera centre is the origin and
//! the optical axis points along `+z`. A cuboid is stored as half-extents plus a
//! rigid pose; a camera-frame point `y` maps into the cuboid frame as
//! `ŷ = Rᵀ (y - t)`, where the box occupies `|ŷ_c| <= a_c`.

use nalgebra::{Point3, Rotation3, Unit, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance (meters) for "the intersection lies on the cuboid".
pub const SURFACE_TOLERANCE: f64 = 1e-9;

/// One of the six faces of a cuboid, in the fixed order `+x, -x, +y, -y, +z, -z`
/// (indices 1 through 6).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    PosX,
    NegX,
    PosY,
    NegY,
    PosZ,
    NegZ,
}

impl Side {
    pub const ALL: [Side; 6] = [
        Side::PosX,
        Side::NegX,
        Side::PosY,
        Side::NegY,
        Side::PosZ,
        Side::NegZ,
    ];

    /// 1-based index of the face.
    pub fn index(self) -> usize {
        self as usize + 1
    }

    pub fn from_index(i: usize) -> Option<Side> {
        Side::ALL.get(i.wrapping_sub(1)).copied()
    }

    /// Cuboid-frame axis orthogonal to the face.
    pub fn axis(self) -> usize {
        self as usize / 2
    }

    /// `+1` for the positive face of the axis, `-1` for the negative one.
    pub fn sign(self) -> f64 {
        if self as usize % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Outward normal in the cuboid frame.
    pub fn normal(self) -> Vector3<f64> {
        let mut n = Vector3::zeros();
        n[self.axis()] = self.sign();
        n
    }
}

/// Oriented box: half-extents `(a_x, a_y, a_z)` and the pose mapping the cuboid
/// frame into the camera frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Cuboid {
    pub half_extents: Vector3<f64>,
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
}

impl Cuboid {
    pub fn new(half_extents: Vector3<f64>, rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Cuboid {
            half_extents,
            rotation,
            translation,
        }
    }

    pub fn axis_aligned(half_extents: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Cuboid::new(half_extents, Rotation3::identity(), translation)
    }

    /// Build from the serialized axis-angle vector `r = θu`.
    pub fn from_axis_angle(half_extents: Vector3<f64>, axis_angle: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Cuboid::new(half_extents, Rotation3::new(axis_angle), translation)
    }

    /// Axis-angle vector with angle in `[0, π]`.
    pub fn axis_angle(&self) -> Vector3<f64> {
        self.rotation.scaled_axis()
    }

    /// Checks finiteness, positive extents and that the rotation is proper.
    pub fn validate(&self) -> Result<()> {
        let finite = self.half_extents.iter().all(|v| v.is_finite())
            && self.translation.iter().all(|v| v.is_finite())
            && self.rotation.matrix().iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("cuboid parameters".into()));
        }
        if self.half_extents.iter().any(|&a| a <= 0.0) {
            return Err(Error::InvalidInput(format!(
                "half-extents must be positive, got {:?}",
                self.half_extents.as_slice()
            )));
        }
        let m = self.rotation.matrix();
        let ortho = (m.transpose() * m - nalgebra::Matrix3::identity()).abs().max();
        if ortho >= 1e-9 || (m.determinant() - 1.0).abs() >= 1e-9 {
            return Err(Error::InvalidInput("rotation is not a proper rotation matrix".into()));
        }
        Ok(())
    }

    /// Camera-frame point into the cuboid frame.
    #[inline]
    pub fn to_local(&self, y: &Point3<f64>) -> Vector3<f64> {
        self.rotation.inverse_transform_vector(&(y.coords - self.translation))
    }

    #[inline]
    pub fn to_camera(&self, local: &Vector3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * local + self.translation)
    }

    /// Camera centre expressed in the cuboid frame, `ĉ = -Rᵀ t`.
    #[inline]
    pub fn camera_local(&self) -> Vector3<f64> {
        -self.rotation.inverse_transform_vector(&self.translation)
    }

    /// Length of the space diagonal.
    pub fn diameter(&self) -> f64 {
        2.0 * self.half_extents.norm()
    }

    pub fn contains(&self, y: &Point3<f64>) -> bool {
        let p = self.to_local(y);
        (0..3).all(|c| p[c].abs() <= self.half_extents[c])
    }

    /// The eight corners, ordered by the sign pattern of `(x, y, z)` with `x`
    /// varying slowest: `(-,-,-), (-,-,+), (-,+,-), ...`.
    pub fn corners(&self) -> [Point3<f64>; 8] {
        let a = self.half_extents;
        std::array::from_fn(|k| {
            let sx = if k & 4 != 0 { 1.0 } else { -1.0 };
            let sy = if k & 2 != 0 { 1.0 } else { -1.0 };
            let sz = if k & 1 != 0 { 1.0 } else { -1.0 };
            self.to_camera(&Vector3::new(sx * a.x, sy * a.y, sz * a.z))
        })
    }

    /// Area of one face.
    pub fn face_area(&self, side: Side) -> f64 {
        let (u, v) = other_axes(side.axis());
        4.0 * self.half_extents[u] * self.half_extents[v]
    }

    /// Face centre in the camera frame.
    pub fn face_center(&self, side: Side) -> Point3<f64> {
        let mut local = Vector3::zeros();
        local[side.axis()] = side.sign() * self.half_extents[side.axis()];
        self.to_camera(&local)
    }

    /// Outward face normal in the camera frame.
    pub fn face_normal(&self, side: Side) -> Vector3<f64> {
        self.rotation * side.normal()
    }

    /// Point on `side` at face coordinates `(s, t) ∈ [-1, 1]²` (cuboid frame).
    pub fn face_point_local(&self, side: Side, s: f64, t: f64) -> Vector3<f64> {
        let (u, v) = other_axes(side.axis());
        let mut p = Vector3::zeros();
        p[side.axis()] = side.sign() * self.half_extents[side.axis()];
        p[u] = s * self.half_extents[u];
        p[v] = t * self.half_extents[v];
        p
    }

    /// Area-uniform random points on the surface.
    pub fn sample_surface<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Point3<f64>> {
        let areas: Vec<f64> = Side::ALL.iter().map(|&s| self.face_area(s)).collect();
        let total: f64 = areas.iter().sum();
        (0..n)
            .map(|_| {
                let mut pick = rng.random::<f64>() * total;
                let mut side = Side::NegZ;
                for (k, &area) in areas.iter().enumerate() {
                    if pick < area {
                        side = Side::ALL[k];
                        break;
                    }
                    pick -= area;
                }
                let s = rng.random::<f64>() * 2.0 - 1.0;
                let t = rng.random::<f64>() * 2.0 - 1.0;
                self.to_camera(&self.face_point_local(side, s, t))
            })
            .collect()
    }
}

/// The two axes spanning a face orthogonal to `axis`, in increasing order.
#[inline]
pub fn other_axes(axis: usize) -> (usize, usize) {
    match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    }
}

/// Squared surface distance for a point already in the cuboid frame.
#[inline]
pub fn distance_sq_local(a: &Vector3<f64>, p: &Vector3<f64>) -> f64 {
    let mut inner = f64::INFINITY;
    let mut outer = 0.0;
    for c in 0..3 {
        let gap = a[c] - p[c].abs();
        inner = inner.min(gap);
        if gap < 0.0 {
            outer += gap * gap;
        }
    }
    let inner = inner.max(0.0);
    inner * inner + outer
}

/// Squared distance to the closed face `side`, point in the cuboid frame.
#[inline]
pub fn side_distance_sq_local(a: &Vector3<f64>, p: &Vector3<f64>, side: Side) -> f64 {
    let c = side.axis();
    let (u, v) = other_axes(c);
    let dn = p[c] - side.sign() * a[c];
    let du = (p[u].abs() - a[u]).max(0.0);
    let dv = (p[v].abs() - a[v]).max(0.0);
    dn * dn + du * du + dv * dv
}

/// Whether the segment from `p` towards the camera `cam` (both cuboid frame)
/// crosses face `side` at a point on the cuboid, with parameter `0 < λ <= 1`.
#[inline]
pub fn occludes_local(a: &Vector3<f64>, cam: &Vector3<f64>, p: &Vector3<f64>, side: Side) -> bool {
    let c = side.axis();
    let v = cam - p;
    if v[c] == 0.0 {
        return false;
    }
    let lambda = (side.sign() * a[c] - p[c]) / v[c];
    if !(lambda > 0.0 && lambda <= 1.0) {
        return false;
    }
    let (u, w) = other_axes(c);
    let eu = ((p[u] + lambda * v[u]).abs() - a[u]).max(0.0);
    let ew = ((p[w] + lambda * v[w]).abs() - a[w]).max(0.0);
    (eu * eu + ew * ew).sqrt() <= SURFACE_TOLERANCE
}

/// Euclidean distance from `y` to the surface of `h` (zero exactly on the surface,
/// positive both inside and outside).
pub fn point_to_cuboid_distance(h: &Cuboid, y: &Point3<f64>) -> f64 {
    distance_sq_local(&h.half_extents, &h.to_local(y)).sqrt()
}

/// Euclidean distance from `y` to the closed rectangular face `side`.
pub fn point_to_side_distance(h: &Cuboid, y: &Point3<f64>, side: Side) -> f64 {
    side_distance_sq_local(&h.half_extents, &h.to_local(y), side).sqrt()
}

/// Whether face `side` of `h` lies on the line of sight between `y` and the camera.
///
/// A point exactly on the face plane (`λ = 0`) is not occluded by it, and a line of
/// sight parallel to the plane never is.
pub fn occludes(h: &Cuboid, y: &Point3<f64>, side: Side) -> bool {
    occludes_local(&h.half_extents, &h.camera_local(), &h.to_local(y), side)
}

/// Largest face distance among all faces occluding `y`; zero if none does.
pub fn occlusion_distance(cuboids: &[Cuboid], y: &Point3<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for h in cuboids {
        let cam = h.camera_local();
        let p = h.to_local(y);
        for side in Side::ALL {
            if occludes_local(&h.half_extents, &cam, &p, side) {
                worst = worst.max(side_distance_sq_local(&h.half_extents, &p, side).sqrt());
            }
        }
    }
    worst
}

/// `max(min_h d(h, y), d_o(M, y))`, or `+∞` when `cuboids` is empty.
pub fn occlusion_aware_distance(cuboids: &[Cuboid], y: &Point3<f64>) -> f64 {
    if cuboids.is_empty() {
        return f64::INFINITY;
    }
    let nearest = cuboids
        .iter()
        .map(|h| point_to_cuboid_distance(h, y))
        .fold(f64::INFINITY, f64::min);
    nearest.max(occlusion_distance(cuboids, y))
}

/// Half-line with unit direction.
#[derive(Clone, Debug, PartialEq)]
pub struct Ray {
    pub origin: Point3<f64>,
    pub direction: Unit<Vector3<f64>>,
}

impl Ray {
    pub fn new(origin: Point3<f64>, direction: Vector3<f64>) -> Self {
        Ray {
            origin,
            direction: Unit::new_normalize(direction),
        }
    }

    pub fn at(&self, s: f64) -> Point3<f64> {
        self.origin + self.direction.as_ref() * s
    }
}

/// Smallest `s >= 0` with `origin + s·direction` on or inside `h` (slab test).
pub fn ray_cuboid_intersect(h: &Cuboid, ray: &Ray) -> Option<f64> {
    let o = h.to_local(&ray.origin);
    let d = h.rotation.inverse_transform_vector(ray.direction.as_ref());
    let mut enter: f64 = 0.0;
    let mut exit = f64::INFINITY;
    for c in 0..3 {
        let a = h.half_extents[c];
        if d[c] == 0.0 {
            if o[c].abs() > a {
                return None;
            }
            continue;
        }
        let s1 = (-a - o[c]) / d[c];
        let s2 = (a - o[c]) / d[c];
        let (near, far) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
        enter = enter.max(near);
        exit = exit.min(far);
        if enter > exit {
            return None;
        }
    }
    Some(enter)
}

/// Symmetric mean surface-to-surface distance between two cuboids, estimated from
/// `n` area-uniform samples on each.
///
/// Parameter vectors of cuboids are not comparable directly (24 proper symmetries
/// plus axis relabelings describe the same box), so tests compare surfaces.
pub fn canonical_surface_discrepancy(h1: &Cuboid, h2: &Cuboid, n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let one_way = |from: &Cuboid, to: &Cuboid, rng: &mut ChaCha8Rng| {
        let samples = from.sample_surface(n, rng);
        samples.iter().map(|p| point_to_cuboid_distance(to, p)).sum::<f64>() / n.max(1) as f64
    };
    let forward = one_way(h1, h2, &mut rng);
    let backward = one_way(h2, h1, &mut rng);
    0.5 * (forward + backward)
}

/// JSON form of a cuboid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CuboidRecord {
    pub size: [f64; 3],
    pub rotation_axis_angle: [f64; 3],
    pub translation: [f64; 3],
}

impl From<&Cuboid> for CuboidRecord {
    fn from(h: &Cuboid) -> Self {
        let r = h.axis_angle();
        CuboidRecord {
            size: [h.half_extents.x, h.half_extents.y, h.half_extents.z],
            rotation_axis_angle: [r.x, r.y, r.z],
            translation: [h.translation.x, h.translation.y, h.translation.z],
        }
    }
}

impl TryFrom<CuboidRecord> for Cuboid {
    type Error = Error;

    fn try_from(rec: CuboidRecord) -> Result<Self> {
        let h = Cuboid::from_axis_angle(
            Vector3::from(rec.size),
            Vector3::from(rec.rotation_axis_angle),
            Vector3::from(rec.translation),
        );
        h.validate()?;
        Ok(h)
    }
}

impl Serialize for Cuboid {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        CuboidRecord::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Cuboid {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rec = CuboidRecord::deserialize(deserializer)?;
        Cuboid::try_from(rec).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn unit() -> Cuboid {
        Cuboid::axis_aligned(Vector3::new(1.0, 1.0, 1.0), Vector3::zeros())
    }

    fn box_b() -> Cuboid {
        Cuboid::axis_aligned(Vector3::new(0.5, 0.5, 0.5), Vector3::new(0.0, 0.0, 2.0))
    }

    fn p(x: f64, y: f64, z: f64) -> Point3<f64> {
        Point3::new(x, y, z)
    }

    #[test]
    fn cuboid_distance_examples() {
        let h = unit();
        assert_eq!(point_to_cuboid_distance(&h, &p(0.5, 0.0, 0.0)), 0.5);
        assert_eq!(point_to_cuboid_distance(&h, &p(2.0, 0.0, 0.0)), 1.0);
        assert!((point_to_cuboid_distance(&h, &p(2.0, 2.0, 2.0)) - 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(point_to_cuboid_distance(&h, &p(1.0, 1.0, 1.0)), 0.0);
    }

    #[test]
    fn side_distance_examples() {
        let h = unit();
        assert_eq!(point_to_side_distance(&h, &p(2.0, 0.0, 0.0), Side::PosX), 1.0);
        assert_eq!(point_to_side_distance(&h, &p(0.0, 0.0, 0.0), Side::PosX), 1.0);
        assert!((point_to_side_distance(&h, &p(2.0, 3.0, 0.0), Side::PosX) - 5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn side_indexing_is_fixed() {
        let idx: Vec<usize> = Side::ALL.iter().map(|s| s.index()).collect();
        assert_eq!(idx, vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(Side::from_index(1), Some(Side::PosX));
        assert_eq!(Side::from_index(6), Some(Side::NegZ));
        assert_eq!(Side::from_index(0), None);
        assert_eq!(Side::from_index(7), None);
        assert_eq!(Side::NegY.normal(), Vector3::new(0.0, -1.0, 0.0));
    }

    #[test]
    fn occlusion_examples() {
        let b = box_b();
        assert!(occludes(&b, &p(0.0, 0.0, 4.0), Side::PosZ));
        assert!(occludes(&b, &p(0.0, 0.0, 4.0), Side::NegZ));
        for side in Side::ALL {
            assert!(!occludes(&b, &p(0.0, 0.0, 1.0), side));
            assert!(!occludes(&b, &p(3.0, 0.0, 4.0), side));
        }
    }

    #[test]
    fn point_on_occluding_plane_is_not_self_flagged() {
        let b = box_b();
        // On the front face: λ = 0 for the -z plane.
        for side in Side::ALL {
            assert!(!occludes(&b, &p(0.1, 0.1, 1.5), side));
        }
    }

    #[test]
    fn occlusion_distance_examples() {
        let b = box_b();
        assert_eq!(occlusion_distance(&[b.clone()], &p(0.0, 0.0, 4.0)), 2.5);
        assert_eq!(occlusion_distance(&[b.clone()], &p(0.0, 0.0, 1.0)), 0.0);
        assert_eq!(occlusion_distance(&[], &p(1.0, 2.0, 3.0)), 0.0);
    }

    #[test]
    fn occlusion_aware_distance_examples() {
        let m = [box_b()];
        assert_eq!(occlusion_aware_distance(&m, &p(0.0, 0.0, 1.5)), 0.0);
        assert_eq!(occlusion_aware_distance(&m, &p(0.0, 0.0, 4.0)), 2.5);
        assert_eq!(occlusion_aware_distance(&m, &p(2.0, 0.0, 2.0)), 1.5);
        assert_eq!(occlusion_aware_distance(&[], &p(1.0, 2.0, 3.0)), f64::INFINITY);
    }

    #[test]
    fn ray_examples() {
        let b = box_b();
        let hit = ray_cuboid_intersect(&b, &Ray::new(Point3::origin(), Vector3::z()));
        assert_eq!(hit, Some(1.5));
        assert_eq!(ray_cuboid_intersect(&b, &Ray::new(Point3::origin(), Vector3::x())), None);
        let hit = ray_cuboid_intersect(&unit(), &Ray::new(p(0.0, 0.0, -3.0), Vector3::z()));
        assert_eq!(hit, Some(2.0));
    }

    #[test]
    fn ray_starting_inside_hits_at_zero() {
        let hit = ray_cuboid_intersect(&unit(), &Ray::new(p(0.2, 0.0, 0.0), Vector3::new(1.0, 1.0, 0.0)));
        assert_eq!(hit, Some(0.0));
    }

    #[test]
    fn discrepancy_identity_and_symmetry() {
        let h = Cuboid::from_axis_angle(
            Vector3::new(0.3, 0.7, 1.1),
            Vector3::new(0.2, -0.4, 0.9),
            Vector3::new(0.5, -0.2, 3.0),
        );
        assert!(canonical_surface_discrepancy(&h, &h, 500, 3) < 1e-12);
        // Relabel axes: rotate the frame by 90° about z and swap x/y extents.
        let relabeled = Cuboid::new(
            Vector3::new(0.7, 0.3, 1.1),
            h.rotation * Rotation3::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2),
            h.translation,
        );
        assert!(canonical_surface_discrepancy(&h, &relabeled, 500, 3) < 1e-12);
    }

    #[test]
    fn json_layout() {
        let h = Cuboid::from_axis_angle(Vector3::new(1.0, 2.0, 0.5), Vector3::new(0.0, 0.0, 0.5), Vector3::new(1.0, 2.0, 3.0));
        let v: serde_json::Value = serde_json::to_value(&h).unwrap();
        assert_eq!(v["size"], serde_json::json!([1.0, 2.0, 0.5]));
        assert_eq!(v["translation"], serde_json::json!([1.0, 2.0, 3.0]));
        let back: Cuboid = serde_json::from_value(v).unwrap();
        assert!((back.rotation.matrix() - h.rotation.matrix()).abs().max() < 1e-12);
    }

    #[test]
    fn rejects_nonpositive_extents() {
        let rec = CuboidRecord {
            size: [1.0, 0.0, 1.0],
            rotation_axis_angle: [0.0; 3],
            translation: [0.0; 3],
        };
        assert!(Cuboid::try_from(rec).is_err());
    }

    #[test]
    fn corners_are_signed_extents() {
        let h = Cuboid::axis_aligned(Vector3::new(1.0, 2.0, 3.0), Vector3::new(10.0, 0.0, 0.0));
        let c = h.corners();
        assert_eq!(c[0], p(9.0, -2.0, -3.0));
        assert_eq!(c[7], p(11.0, 2.0, 3.0));
    }
}
