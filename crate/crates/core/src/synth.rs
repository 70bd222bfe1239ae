//! Synthetic scenes: random cuboids, visibility-weighted surface sampling, depth
//! rendering and complete scene generation. Used as the ground-truth oracle for
//! the solver and the pipeline.

use nalgebra::{Point3, Rotation3, Unit, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::camera::{backproject, DepthMap, Intrinsics, PointCloud};
use crate::error::{Error, Result};
use crate::geometry::{ray_cuboid_intersect, Cuboid, Ray, Side};

/// Rejection-resampling budget per cuboid in [`make_scene`].
pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

/// Parameter ranges for random cuboids (meters, camera frame).
#[derive(Clone, Debug, PartialEq)]
pub struct SynthRanges {
    pub size: [f64; 2],
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub z: [f64; 2],
    /// Rotation angle range; the axis direction has components drawn from `U(0, 1)`.
    pub angle: [f64; 2],
}

impl Default for SynthRanges {
    fn default() -> Self {
        SynthRanges {
            size: [0.01, 2.0],
            x: [-5.0, 5.0],
            y: [-5.0, 5.0],
            z: [0.5, 10.0],
            angle: [-std::f64::consts::PI, std::f64::consts::PI],
        }
    }
}

impl SynthRanges {
    pub fn validate(&self) -> Result<()> {
        let ordered = [self.size, self.x, self.y, self.z, self.angle]
            .iter()
            .all(|r| r[0] <= r[1] && r[0].is_finite() && r[1].is_finite());
        if !ordered {
            return Err(Error::InvalidInput("synthetic ranges must be finite [lo, hi] pairs".into()));
        }
        if self.size[0] <= 0.0 {
            return Err(Error::InvalidInput("minimum synthetic size must be positive".into()));
        }
        if self.z[0] <= 0.0 {
            return Err(Error::InvalidInput("synthetic cuboids must lie in front of the camera".into()));
        }
        Ok(())
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        range[0] + (range[1] - range[0]) * rng.random::<f64>()
    }
}

/// Draws a cuboid with uniform half-extents and translation and a random
/// axis-angle rotation.
pub fn random_cuboid<R: Rng + ?Sized>(ranges: &SynthRanges, rng: &mut R) -> Result<Cuboid> {
    ranges.validate()?;
    let extents = Vector3::from_fn(|_, _| uniform(rng, ranges.size));
    let translation = Vector3::new(uniform(rng, ranges.x), uniform(rng, ranges.y), uniform(rng, ranges.z));
    let direction = Vector3::from_fn(|_, _| rng.random::<f64>());
    let angle = uniform(rng, ranges.angle);
    let rotation = match Unit::try_new(direction, 1e-12) {
        Some(axis) => Rotation3::from_axis_angle(&axis, angle),
        None => Rotation3::identity(),
    };
    Ok(Cuboid::new(extents, rotation, translation))
}

/// Faces of `h` facing the camera, with their sampling weight
/// `area · cos(angle of incidence)` evaluated at the face centre.
pub fn visible_faces(h: &Cuboid) -> Vec<(Side, f64)> {
    Side::ALL
        .iter()
        .filter_map(|&side| {
            let centre = h.face_center(side);
            let to_camera = -centre.coords;
            let dist = to_camera.norm();
            if dist == 0.0 {
                return None;
            }
            let cos = h.face_normal(side).dot(&to_camera) / dist;
            (cos > 0.0).then(|| (side, h.face_area(side) * cos))
        })
        .collect()
}

/// Samples `n` points on the camera-facing sides of `h`.
///
/// A side is chosen with probability proportional to its area times the cosine of
/// the angle of incidence; the point is uniform on that side and is kept only if
/// the camera ray through it hits the cuboid there first.
pub fn sample_visible_points<R: Rng + ?Sized>(h: &Cuboid, n: usize, rng: &mut R) -> Result<Vec<Point3<f64>>> {
    if h.contains(&Point3::origin()) {
        return Err(Error::InvalidInput("camera lies inside the cuboid".into()));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let faces = visible_faces(h);
    let total: f64 = faces.iter().map(|f| f.1).sum();
    if faces.is_empty() || !(total > 0.0) {
        return Err(Error::Degenerate("no cuboid side faces the camera".into()));
    }

    let mut out = Vec::with_capacity(n);
    let mut rejected = 0usize;
    while out.len() < n {
        let mut pick = rng.random::<f64>() * total;
        let mut side = faces[faces.len() - 1].0;
        for &(s, w) in &faces {
            if pick < w {
                side = s;
                break;
            }
            pick -= w;
        }
        let s = rng.random::<f64>() * 2.0 - 1.0;
        let t = rng.random::<f64>() * 2.0 - 1.0;
        let p = h.to_camera(&h.face_point_local(side, s, t));
        let range = p.coords.norm();
        let first_hit = ray_cuboid_intersect(h, &Ray::new(Point3::origin(), p.coords));
        match first_hit {
            Some(hit) if (hit - range).abs() <= 1e-6 => out.push(p),
            _ => {
                rejected += 1;
                if rejected > 1000 * n {
                    return Err(Error::Degenerate("visible-face samples keep failing the ray check".into()));
                }
            }
        }
    }
    Ok(out)
}

/// Nearest hit of the ray through `(u, v)`: `(index into cuboids, z-depth)`.
pub fn first_hit(cuboids: &[Cuboid], k: &Intrinsics, u: usize, v: usize) -> Option<(usize, f64)> {
    let dir = k.pixel_direction(u, v);
    let ray = Ray::new(Point3::origin(), dir);
    let scale = ray.direction.z;
    cuboids
        .iter()
        .enumerate()
        .filter_map(|(i, h)| ray_cuboid_intersect(h, &ray).map(|s| (i, s * scale)))
        .fold(None, |best: Option<(usize, f64)>, cand| match best {
            Some(b) if b.1 <= cand.1 => Some(b),
            _ => Some(cand),
        })
}

/// Per-pixel index of the visible cuboid (`None` where no cuboid is hit).
pub fn render_labels(cuboids: &[Cuboid], k: &Intrinsics) -> (DepthMap, Vec<Option<usize>>) {
    let mut depth = DepthMap::empty(k.width, k.height);
    let mut labels = vec![None; k.width * k.height];
    for v in 0..k.height {
        for u in 0..k.width {
            if let Some((i, z)) = first_hit(cuboids, k, u, v) {
                depth.values[v * k.width + u] = z;
                labels[v * k.width + u] = Some(i);
            }
        }
    }
    (depth, labels)
}

/// z-depth of the nearest cuboid surface per pixel; `0` (invalid) where nothing is hit.
pub fn render_depth(cuboids: &[Cuboid], k: &Intrinsics) -> Result<DepthMap> {
    k.validate()?;
    Ok(render_labels(cuboids, k).0)
}

#[derive(Clone, Debug)]
pub struct SceneOptions {
    pub num_cuboids: usize,
    pub ranges: SynthRanges,
    /// Each cuboid must be the visible surface for at least this fraction of the
    /// valid pixels.
    pub min_pixel_fraction: f64,
    /// Reject candidates whose bounding sphere overlaps an earlier cuboid's.
    pub separated: bool,
    /// Standard deviation (meters) of Gaussian noise added to valid depths.
    pub depth_noise: f64,
}

impl SceneOptions {
    pub fn new(num_cuboids: usize) -> Self {
        SceneOptions {
            num_cuboids,
            ranges: SynthRanges::default(),
            min_pixel_fraction: 0.01,
            separated: false,
            depth_noise: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthScene {
    pub cuboids: Vec<Cuboid>,
    pub depth: DepthMap,
    pub cloud: PointCloud,
}

fn pixel_shares(labels: &[Option<usize>], count: usize) -> (Vec<usize>, usize) {
    let mut shares = vec![0; count];
    let mut valid = 0;
    for l in labels.iter().flatten() {
        shares[*l] += 1;
        valid += 1;
    }
    (shares, valid)
}

fn roughly_visible(h: &Cuboid, k: &Intrinsics) -> bool {
    if h.contains(&Point3::origin()) || h.translation.z <= 0.0 {
        return false;
    }
    match k.project(&Point3::from(h.translation)) {
        Some((u, v)) => u >= 0.0 && v >= 0.0 && u <= (k.width - 1) as f64 && v <= (k.height - 1) as f64,
        None => false,
    }
}

/// Generates a scene of `num_cuboids` cuboids, renders it and backprojects it.
///
/// Candidates are resampled until every cuboid is visible in at least
/// `min_pixel_fraction` of the valid pixels.
pub fn make_scene<R: Rng + ?Sized>(opts: &SceneOptions, k: &Intrinsics, rng: &mut R) -> Result<SynthScene> {
    if opts.num_cuboids == 0 {
        return Err(Error::InvalidInput("a scene needs at least one cuboid".into()));
    }
    opts.ranges.validate()?;
    k.validate()?;

    let mut cuboids: Vec<Cuboid> = Vec::with_capacity(opts.num_cuboids);
    let mut labels = Vec::new();
    let mut depth = DepthMap::empty(k.width, k.height);
    while cuboids.len() < opts.num_cuboids {
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let cand = random_cuboid(&opts.ranges, rng)?;
            if !roughly_visible(&cand, k) {
                continue;
            }
            if opts.separated {
                let r = cand.half_extents.norm();
                let overlaps = cuboids
                    .iter()
                    .any(|h| (h.translation - cand.translation).norm() < r + h.half_extents.norm());
                if overlaps {
                    continue;
                }
            }
            let mut trial = cuboids.clone();
            trial.push(cand);
            let (d, l) = render_labels(&trial, k);
            let (shares, valid) = pixel_shares(&l, trial.len());
            let ok = valid > 0 && shares.iter().all(|&s| s as f64 >= opts.min_pixel_fraction * valid as f64);
            if ok {
                cuboids = trial;
                depth = d;
                labels = l;
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Degenerate(format!(
                "could not place cuboid {} within {MAX_PLACEMENT_ATTEMPTS} attempts",
                cuboids.len() + 1
            )));
        }
    }
    debug_assert_eq!(labels.len(), k.width * k.height);

    if opts.depth_noise > 0.0 {
        let noise = Normal::new(0.0, opts.depth_noise).map_err(|e| Error::InvalidInput(e.to_string()))?;
        for z in depth.values.iter_mut().filter(|z| DepthMap::is_valid_value(**z)) {
            *z = (*z + noise.sample(rng)).max(1e-6);
        }
    }
    let cloud = backproject(&depth, k)?;
    Ok(SynthScene { cuboids, depth, cloud })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{occlusion_aware_distance, point_to_cuboid_distance};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_k() -> Intrinsics {
        Intrinsics {
            fx: 80.0,
            fy: 80.0,
            cx: 39.5,
            cy: 29.5,
            width: 80,
            height: 60,
        }
    }

    #[test]
    fn random_cuboid_is_reproducible() {
        let r = SynthRanges::default();
        let a = random_cuboid(&r, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = random_cuboid(&r, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_size_range_is_constant() {
        let r = SynthRanges {
            size: [0.7, 0.7],
            ..SynthRanges::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let h = random_cuboid(&r, &mut rng).unwrap();
            assert_eq!(h.half_extents, Vector3::new(0.7, 0.7, 0.7));
        }
    }

    #[test]
    fn random_cuboid_stays_in_range() {
        let r = SynthRanges::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let h = random_cuboid(&r, &mut rng).unwrap();
            assert!(h.half_extents.iter().all(|&a| (0.01..=2.0).contains(&a)));
            assert!((0.5..=10.0).contains(&h.translation.z));
            assert!(h.axis_angle().norm() <= std::f64::consts::PI + 1e-12);
        }
    }

    #[test]
    fn frontal_box_samples_only_front_face() {
        let h = Cuboid::axis_aligned(Vector3::new(0.5, 0.5, 0.5), Vector3::new(0.0, 0.0, 3.0));
        let pts = sample_visible_points(&h, 500, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert!(pts.iter().all(|p| (p.z - 2.5).abs() < 1e-9));
    }

    #[test]
    fn samples_lie_on_visible_surface() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ranges = SynthRanges::default();
        let mut total = 0;
        while total < 10_000 {
            let h = random_cuboid(&ranges, &mut rng).unwrap();
            if h.contains(&Point3::origin()) {
                continue;
            }
            let pts = sample_visible_points(&h, 500, &mut rng).unwrap();
            for p in &pts {
                assert!(point_to_cuboid_distance(&h, p) < 1e-9);
                let hit = ray_cuboid_intersect(&h, &Ray::new(Point3::origin(), p.coords)).unwrap();
                assert!((hit - p.coords.norm()).abs() < 1e-6);
            }
            total += pts.len();
        }
    }

    #[test]
    fn zero_samples_and_camera_inside() {
        let h = Cuboid::axis_aligned(Vector3::new(0.5, 0.5, 0.5), Vector3::new(0.0, 0.0, 3.0));
        assert!(sample_visible_points(&h, 0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().is_empty());
        let around = Cuboid::axis_aligned(Vector3::new(1.0, 1.0, 1.0), Vector3::zeros());
        assert!(sample_visible_points(&around, 3, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn render_examples() {
        let k = small_k();
        let empty = render_depth(&[], &k).unwrap();
        assert_eq!(empty.valid_count(), 0);
        let h = Cuboid::axis_aligned(Vector3::new(0.5, 0.5, 0.5), Vector3::new(0.0, 0.0, 2.0));
        let d = render_depth(&[h.clone()], &k).unwrap();
        assert!((d.get(40, 30) - 1.5).abs() < 1e-12);
        let cloud = backproject(&d, &k).unwrap();
        assert!(!cloud.is_empty());
        for p in &cloud.points {
            assert!(occlusion_aware_distance(&[h.clone()], p) < 1e-6);
        }
    }

    #[test]
    fn scene_is_reproducible_and_every_cuboid_visible() {
        let k = small_k();
        let mut opts = SceneOptions::new(3);
        opts.ranges.x = [-1.5, 1.5];
        opts.ranges.y = [-1.0, 1.0];
        opts.ranges.z = [3.0, 6.0];
        opts.ranges.size = [0.2, 0.8];
        let a = make_scene(&opts, &k, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = make_scene(&opts, &k, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a.depth, b.depth);
        assert_eq!(a.cuboids.len(), 3);
        let (_, labels) = render_labels(&a.cuboids, &k);
        let (shares, valid) = pixel_shares(&labels, 3);
        assert!(shares.iter().all(|&s| s as f64 >= 0.01 * valid as f64));
    }
}
