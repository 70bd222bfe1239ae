//! Pinhole camera model, depth maps and backprojection.
//!
//! Pixel `(u, v)` has its centre at integer coordinates; depth values are metric
//! z-depth, not distance along the ray.

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Ray;

/// Largest depth (meters) accepted as a valid measurement.
pub const MAX_VALID_DEPTH: f64 = 1e4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidInput("focal lengths must be positive".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput("image dimensions must be nonzero".into()));
        }
        let inside_x = self.cx >= 0.0 && self.cx <= (self.width - 1) as f64;
        let inside_y = self.cy >= 0.0 && self.cy <= (self.height - 1) as f64;
        if !(inside_x && inside_y) {
            return Err(Error::InvalidInput("principal point lies outside the image".into()));
        }
        Ok(())
    }

    /// Typical VGA RGB-D intrinsics (focal length 525 px).
    pub fn vga() -> Self {
        Intrinsics {
            fx: 525.0,
            fy: 525.0,
            cx: 319.5,
            cy: 239.5,
            width: 640,
            height: 480,
        }
    }

    /// Direction through the pixel centre, scaled to unit z.
    #[inline]
    pub fn pixel_direction(&self, u: usize, v: usize) -> Vector3<f64> {
        Vector3::new((u as f64 - self.cx) / self.fx, (v as f64 - self.cy) / self.fy, 1.0)
    }

    pub fn pixel_ray(&self, u: usize, v: usize) -> Ray {
        Ray::new(Point3::origin(), self.pixel_direction(u, v))
    }

    /// Camera-frame point seen at pixel `(u, v)` with depth `z`.
    #[inline]
    pub fn backproject_pixel(&self, u: usize, v: usize, z: f64) -> Point3<f64> {
        Point3::from(self.pixel_direction(u, v) * z)
    }

    /// Continuous pixel coordinates of a camera-frame point (`None` behind the camera).
    pub fn project(&self, p: &Point3<f64>) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }
}

/// Row-major depth image in meters. Non-finite or non-positive entries are invalid.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "depth map of {width}x{height} needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        Ok(DepthMap { width, height, values })
    }

    /// All-invalid map.
    pub fn empty(width: usize, height: usize) -> Self {
        DepthMap {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.values[v * self.width + u]
    }

    #[inline]
    pub fn is_valid_value(z: f64) -> bool {
        z.is_finite() && z > 0.0 && z < MAX_VALID_DEPTH
    }

    pub fn is_valid(&self, u: usize, v: usize) -> bool {
        Self::is_valid_value(self.get(u, v))
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|&&z| Self::is_valid_value(z)).count()
    }

    pub fn check_matches(&self, k: &Intrinsics) -> Result<()> {
        if self.width != k.width || self.height != k.height {
            return Err(Error::InvalidInput(format!(
                "depth map is {}x{} but intrinsics describe {}x{}",
                self.width, self.height, k.width, k.height
            )));
        }
        Ok(())
    }
}

/// Point cloud obtained from a depth map, with the source pixel of each point.
#[derive(Clone, Debug, Default)]
pub struct PointCloud {
    pub points: Vec<Point3<f64>>,
    /// Linear pixel index `v * width + u` of every point.
    pub pixels: Vec<usize>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Keeps at most `max_points` points by uniform stride over the pixel order.
    pub fn subsample(&self, max_points: usize) -> PointCloud {
        let n = self.points.len();
        if max_points == 0 || n <= max_points {
            return self.clone();
        }
        let stride = n.div_ceil(max_points);
        PointCloud {
            points: self.points.iter().step_by(stride).copied().collect(),
            pixels: self.pixels.iter().step_by(stride).copied().collect(),
        }
    }
}

/// Backprojects every valid pixel: `((u - cx) z / fx, (v - cy) z / fy, z)`.
pub fn backproject(depth: &DepthMap, k: &Intrinsics) -> Result<PointCloud> {
    depth.check_matches(k)?;
    let mut cloud = PointCloud::default();
    for v in 0..depth.height {
        for u in 0..depth.width {
            let z = depth.get(u, v);
            if DepthMap::is_valid_value(z) {
                cloud.points.push(k.backproject_pixel(u, v, z));
                cloud.pixels.push(v * depth.width + u);
            }
        }
    }
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k() -> Intrinsics {
        Intrinsics {
            fx: 100.0,
            fy: 120.0,
            cx: 10.0,
            cy: 8.0,
            width: 200,
            height: 20,
        }
    }

    #[test]
    fn backprojection_examples() {
        let k = k();
        assert_eq!(k.backproject_pixel(10, 8, 2.0), Point3::new(0.0, 0.0, 2.0));
        assert_eq!(k.backproject_pixel(110, 8, 3.0), Point3::new(3.0, 0.0, 3.0));
    }

    #[test]
    fn invalid_pixels_are_skipped() {
        let k = Intrinsics {
            width: 3,
            height: 1,
            cx: 1.0,
            cy: 0.0,
            ..k()
        };
        let depth = DepthMap::new(3, 1, vec![1.0, f64::NAN, -2.0]).unwrap();
        let cloud = backproject(&depth, &k).unwrap();
        assert_eq!(cloud.pixels, vec![0]);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let depth = DepthMap::empty(5, 5);
        assert!(backproject(&depth, &k()).is_err());
        assert!(DepthMap::new(2, 2, vec![1.0; 3]).is_err());
    }

    #[test]
    fn projection_inverts_backprojection() {
        let k = k();
        let p = k.backproject_pixel(37, 5, 4.25);
        let (u, v) = k.project(&p).unwrap();
        assert!((u - 37.0).abs() < 1e-12 && (v - 5.0).abs() < 1e-12);
    }

    #[test]
    fn subsample_uses_uniform_stride() {
        let cloud = PointCloud {
            points: (0..10).map(|i| Point3::new(i as f64, 0.0, 1.0)).collect(),
            pixels: (0..10).collect(),
        };
        assert_eq!(cloud.subsample(4).pixels, vec![0, 3, 6, 9]);
        assert_eq!(cloud.subsample(0).len(), 10);
    }

    #[test]
    fn intrinsics_validation() {
        assert!(k().validate().is_ok());
        assert!(Intrinsics { fx: 0.0, ..k() }.validate().is_err());
        assert!(Intrinsics { cx: 500.0, ..k() }.validate().is_err());
    }
}
