//! Abstraction of depth images into sets of oriented cuboids.
//!
//! The pipeline backprojects a depth map to a point cloud, then repeatedly samples
//! minimal point sets, fits a cuboid to each with a small gradient-based solver and
//! keeps the hypothesis that most increases an occlusion-aware inlier count. See
//! [`robust::fit_scene`].

pub mod camera;
pub mod error;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod robust;
pub mod solver;
pub mod superquadric;
pub mod synth;

pub use camera::{backproject, DepthMap, Intrinsics, PointCloud};
pub use error::{Error, Result};
pub use geometry::{occlusion_aware_distance, occlusion_distance, point_to_cuboid_distance, Cuboid, Ray, Side};
pub use metrics::{evaluate, EvalReport};
pub use robust::{fit_scene, FitConfig, InlierParams, SceneFit, WeightMaps};
pub use solver::{fit_minimal, solver_jacobian, MinimalSet, SolverOptions};
pub use superquadric::Superquadric;
