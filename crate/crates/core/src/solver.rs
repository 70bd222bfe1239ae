//! Numerical minimal solver: fits one cuboid to a handful of points by minimising
//! the size-regularised residual `F(y, h) = d(h, y)² · (a_x + a_y + a_z)`, and the
//! implicit-function linearisation of the fitted pose with respect to the points.

use nalgebra::{DMatrix, DVector, Matrix3, Point3, Rotation3, Vector3, SVD};

use crate::error::{Error, Result};
use crate::geometry::Cuboid;

/// Points the solver fits a single cuboid to.
#[derive(Clone, Debug, PartialEq)]
pub struct MinimalSet {
    points: Vec<Point3<f64>>,
}

impl MinimalSet {
    pub const MIN_SIZE: usize = 6;

    pub fn new(points: Vec<Point3<f64>>) -> Result<Self> {
        if points.len() < Self::MIN_SIZE {
            return Err(Error::InvalidInput(format!(
                "minimal set needs at least {} points, got {}",
                Self::MIN_SIZE,
                points.len()
            )));
        }
        if points.iter().any(|p| !p.coords.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite("minimal set point".into()));
        }
        Ok(MinimalSet { points })
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverOptions {
    pub iterations: usize,
    pub step_size: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            iterations: 50,
            step_size: 0.01,
            a_min: 1e-3,
            a_max: 2.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.a_min > 0.0 && self.a_min < self.a_max) {
            return Err(Error::InvalidInput(format!(
                "size bounds must satisfy 0 < a_min < a_max, got [{}, {}]",
                self.a_min, self.a_max
            )));
        }
        if self.iterations == 0 || !(self.step_size > 0.0) {
            return Err(Error::InvalidInput("solver needs >= 1 iteration and a positive step".into()));
        }
        Ok(())
    }

    pub fn clamp_size(&self, a: f64) -> f64 {
        a.clamp(self.a_min, self.a_max)
    }
}

/// Solver parameter vector `(a_x, a_y, a_z, r_x, r_y, r_z, t_x, t_y, t_z)`; the
/// rotation is the axis-angle vector so the optimiser works in a flat space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CuboidParams {
    pub half_extents: Vector3<f64>,
    pub axis_angle: Vector3<f64>,
    pub translation: Vector3<f64>,
}

impl CuboidParams {
    pub fn from_cuboid(h: &Cuboid) -> Self {
        CuboidParams {
            half_extents: h.half_extents,
            axis_angle: h.axis_angle(),
            translation: h.translation,
        }
    }

    pub fn to_cuboid(&self) -> Cuboid {
        Cuboid::from_axis_angle(self.half_extents, self.axis_angle, self.translation)
    }

    fn to_array(self) -> [f64; 9] {
        let mut out = [0.0; 9];
        out[..3].copy_from_slice(self.half_extents.as_slice());
        out[3..6].copy_from_slice(self.axis_angle.as_slice());
        out[6..].copy_from_slice(self.translation.as_slice());
        out
    }

    fn from_array(v: &[f64; 9]) -> Self {
        CuboidParams {
            half_extents: Vector3::new(v[0], v[1], v[2]),
            axis_angle: Vector3::new(v[3], v[4], v[5]),
            translation: Vector3::new(v[6], v[7], v[8]),
        }
    }
}

/// Result of [`fit_minimal`].
#[derive(Clone, Debug)]
pub struct MinimalFit {
    pub cuboid: Cuboid,
    /// Exact optimiser parameters (the axis-angle here is not re-normalised).
    pub params: CuboidParams,
    pub residual_l1: f64,
    pub initial_residual_l1: f64,
    /// The SVD initialisation was rank-deficient and fell back to identity rotation.
    pub degenerate_init: bool,
}

/// Initial estimate and whether it had to fall back to the identity rotation.
#[derive(Clone, Debug)]
pub struct InitialEstimate {
    pub cuboid: Cuboid,
    pub degenerate: bool,
}

/// Per-point residuals `F(y_k, h) = d(h, y_k)² · (a_x + a_y + a_z)`.
pub fn objective_residuals(points: &[Point3<f64>], h: &Cuboid) -> Vec<f64> {
    let scale = h.half_extents.sum();
    points
        .iter()
        .map(|y| crate::geometry::distance_sq_local(&h.half_extents, &h.to_local(y)) * scale)
        .collect()
}

fn residual_l1(points: &[Point3<f64>], h: &Cuboid) -> f64 {
    objective_residuals(points, h).iter().sum()
}

/// Centroid translation, principal-axes rotation and max-abs half-extents.
pub fn init_estimate(set: &MinimalSet, opts: &SolverOptions) -> Result<InitialEstimate> {
    let pts = set.points();
    let n = pts.len() as f64;
    let centroid = pts.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) / n;
    let centered = DMatrix::from_fn(pts.len(), 3, |i, j| pts[i][j] - centroid[j]);
    let svd = SVD::new(centered, false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Degenerate("SVD did not produce right singular vectors".into()))?;
    let sigma_max = svd.singular_values.max();

    let (rotation, degenerate) = if !(sigma_max > 1e-12) || v_t.nrows() < 3 {
        (Rotation3::identity(), true)
    } else {
        // Columns of V are the principal axes; flip the last one for a proper rotation.
        let mut v: Matrix3<f64> = v_t.fixed_view::<3, 3>(0, 0).transpose();
        if v.determinant() < 0.0 {
            let flipped = -v.column(2);
            v.set_column(2, &flipped);
        }
        (Rotation3::from_matrix_unchecked(v), false)
    };

    let mut extents = Vector3::zeros();
    for p in pts {
        let local = rotation.inverse_transform_vector(&(p.coords - centroid));
        for c in 0..3 {
            extents[c] = f64::max(extents[c], local[c].abs());
        }
    }
    extents.apply(|a| *a = opts.clamp_size(*a));

    Ok(InitialEstimate {
        cuboid: Cuboid::new(extents, rotation, centroid),
        degenerate,
    })
}

/// Derivatives `∂R/∂r_i` of the axis-angle exponential map.
pub fn rotation_derivatives(r: &Vector3<f64>) -> [Matrix3<f64>; 3] {
    let theta_sq = r.norm_squared();
    if theta_sq < 1e-16 {
        return std::array::from_fn(|i| Vector3::ith(i, 1.0).cross_matrix());
    }
    let rot = Rotation3::new(*r).into_inner();
    let skew = r.cross_matrix();
    std::array::from_fn(|i| {
        let e = Vector3::ith(i, 1.0);
        let w = r.cross(&((Matrix3::identity() - rot) * e));
        (skew * r[i] + w.cross_matrix()) * rot / theta_sq
    })
}

/// Squared surface distance in the cuboid frame together with its gradients with
/// respect to the local point and to the half-extents. Kinks of `max(·, 0)` and
/// `|·|` take subgradient zero.
pub(crate) fn distance_sq_grad_local(a: &Vector3<f64>, p: &Vector3<f64>) -> (f64, Vector3<f64>, Vector3<f64>) {
    let mut d_sq = 0.0;
    let mut g_p = Vector3::zeros();
    let mut g_a = Vector3::zeros();

    let mut inner_axis = 0;
    let mut inner = f64::INFINITY;
    for c in 0..3 {
        let gap = a[c] - p[c].abs();
        if gap < inner {
            inner = gap;
            inner_axis = c;
        }
        if gap < 0.0 {
            let excess = -gap;
            d_sq += excess * excess;
            g_p[c] += 2.0 * excess * sign0(p[c]);
            g_a[c] -= 2.0 * excess;
        }
    }
    if inner > 0.0 {
        let c = inner_axis;
        d_sq += inner * inner;
        g_p[c] -= 2.0 * inner * sign0(p[c]);
        g_a[c] += 2.0 * inner;
    }
    (d_sq, g_p, g_a)
}

#[inline]
fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `‖F‖₁` and its gradient with respect to the nine solver parameters.
pub fn objective_gradient(points: &[Point3<f64>], params: &CuboidParams) -> (f64, [f64; 9]) {
    let a = params.half_extents;
    let rot = Rotation3::new(params.axis_angle);
    let d_rot = rotation_derivatives(&params.axis_angle);
    let scale = a.sum();

    let mut total_sq = 0.0;
    let mut g_a = Vector3::zeros();
    let mut g_r = Vector3::zeros();
    let mut g_t = Vector3::zeros();
    for y in points {
        let rel = y.coords - params.translation;
        let local = rot.inverse_transform_vector(&rel);
        let (d_sq, gp, ga) = distance_sq_grad_local(&a, &local);
        total_sq += d_sq;
        g_a += ga * scale;
        g_t -= rot * gp * scale;
        for i in 0..3 {
            g_r[i] += scale * rel.dot(&(d_rot[i] * gp));
        }
    }
    // d/da_c of the regulariser multiplies every squared distance.
    g_a.add_scalar_mut(total_sq);

    let mut grad = [0.0; 9];
    grad[..3].copy_from_slice(g_a.as_slice());
    grad[3..6].copy_from_slice(g_r.as_slice());
    grad[6..].copy_from_slice(g_t.as_slice());
    (total_sq * scale, grad)
}

/// Fits a cuboid to `set`, starting from [`init_estimate`].
pub fn fit_minimal(set: &MinimalSet, opts: &SolverOptions) -> Result<MinimalFit> {
    opts.validate()?;
    let init = init_estimate(set, opts)?;
    let mut fit = fit_minimal_from(set.points(), &init.cuboid, opts)?;
    fit.degenerate_init = init.degenerate;
    Ok(fit)
}

/// Runs the first-order optimiser from a given start and returns the iterate with
/// the smallest `‖F‖₁` (the start included).
pub fn fit_minimal_from(points: &[Point3<f64>], init: &Cuboid, opts: &SolverOptions) -> Result<MinimalFit> {
    let start = CuboidParams::from_cuboid(init);
    let mut x = start.to_array();
    for v in &mut x[..3] {
        *v = opts.clamp_size(*v);
    }
    let mut m = [0.0; 9];
    let mut v = [0.0; 9];

    let (initial, _) = objective_gradient(points, &CuboidParams::from_array(&x));
    if !initial.is_finite() {
        return Err(Error::NonFinite("initial solver residual".into()));
    }
    let mut best = (initial, x);

    let mut b1_pow = 1.0;
    let mut b2_pow = 1.0;
    for iter in 0..opts.iterations {
        let (_, grad) = objective_gradient(points, &CuboidParams::from_array(&x));
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("solver gradient at iteration {iter}")));
        }
        b1_pow *= opts.beta1;
        b2_pow *= opts.beta2;
        for k in 0..9 {
            m[k] = opts.beta1 * m[k] + (1.0 - opts.beta1) * grad[k];
            v[k] = opts.beta2 * v[k] + (1.0 - opts.beta2) * grad[k] * grad[k];
            let m_hat = m[k] / (1.0 - b1_pow);
            let v_hat = v[k] / (1.0 - b2_pow);
            x[k] -= opts.step_size * m_hat / (v_hat.sqrt() + opts.epsilon);
        }
        for a in &mut x[..3] {
            *a = opts.clamp_size(*a);
        }
        let (value, _) = objective_gradient(points, &CuboidParams::from_array(&x));
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("solver residual at iteration {iter}")));
        }
        if value < best.0 {
            best = (value, x);
        }
    }

    let params = CuboidParams::from_array(&best.1);
    let cuboid = params.to_cuboid();
    Ok(MinimalFit {
        residual_l1: residual_l1(points, &cuboid).min(best.0),
        initial_residual_l1: initial,
        cuboid,
        params,
        degenerate_init: false,
    })
}

/// Linearisation `∂(r, t)/∂S` of a fitted pose with respect to its input points.
///
/// Rows are `(r_x, r_y, r_z, t_x, t_y, t_z)`; columns are `(y_1x, y_1y, y_1z, y_2x, ...)`.
/// Size parameters are masked out, so no size derivatives exist.
#[derive(Clone, Debug)]
pub struct PoseJacobian {
    pub matrix: DMatrix<f64>,
    /// Condition number of the masked residual Jacobian `∂e/∂(r, t)`.
    pub condition: f64,
}

impl PoseJacobian {
    /// Derivative of the pose row block with respect to point `k` (6×3).
    pub fn point_block(&self, k: usize) -> nalgebra::SMatrix<f64, 6, 3> {
        self.matrix.fixed_view::<6, 3>(0, 3 * k).into_owned()
    }
}

/// Signed surface distance in the cuboid frame and its gradient (the outward normal
/// of the closest surface region).
pub(crate) fn signed_distance_grad_local(a: &Vector3<f64>, p: &Vector3<f64>) -> (f64, Vector3<f64>) {
    let excess = Vector3::from_fn(|c, _| (p[c].abs() - a[c]).max(0.0));
    let outside = excess.norm();
    if outside > 0.0 {
        let g = Vector3::from_fn(|c, _| if p[c] < 0.0 { -excess[c] } else { excess[c] } / outside);
        return (outside, g);
    }
    let mut axis = 0;
    let mut gap = f64::INFINITY;
    for c in 0..3 {
        let g = a[c] - p[c].abs();
        if g < gap {
            gap = g;
            axis = c;
        }
    }
    let mut g = Vector3::zeros();
    g[axis] = if p[axis] < 0.0 { -1.0 } else { 1.0 };
    (-gap, g)
}

/// Implicit-function derivative of the pose of a converged fit `h` of `set`.
///
/// The optimality condition is expressed through the signed point-to-surface
/// residuals, which share the zero set of `F` but keep non-vanishing derivatives at
/// the solution (the derivatives of `F = d²·Σa` are identically zero there). The
/// masked residual Jacobian is inverted with a truncated SVD pseudo-inverse.
pub fn solver_jacobian(set: &MinimalSet, h: &Cuboid) -> Result<PoseJacobian> {
    let pts = set.points();
    let c = pts.len();
    let r = h.axis_angle();
    let rot = Rotation3::new(r);
    let d_rot = rotation_derivatives(&r);

    let mut j_pose = DMatrix::zeros(c, 6);
    let mut j_points = DMatrix::zeros(c, 3 * c);
    for (k, y) in pts.iter().enumerate() {
        let rel = y.coords - h.translation;
        let local = rot.inverse_transform_vector(&rel);
        let (_, g) = signed_distance_grad_local(&h.half_extents, &local);
        let normal = rot * g;
        for i in 0..3 {
            j_pose[(k, i)] = rel.dot(&(d_rot[i] * g));
            j_pose[(k, 3 + i)] = -normal[i];
            j_points[(k, 3 * k + i)] = normal[i];
        }
    }

    let svd = SVD::new(j_pose, true, true);
    let sigma = &svd.singular_values;
    let sigma_max = sigma.max();
    let sigma_min = sigma.min();
    let condition = if sigma.len() < 6 || sigma_min <= 0.0 {
        f64::INFINITY
    } else {
        sigma_max / sigma_min
    };
    if !(condition <= 1e8) {
        return Err(Error::Degenerate(format!(
            "pose Jacobian is rank-deficient (condition number {condition:.3e})"
        )));
    }
    let pinv = svd
        .pseudo_inverse(1e-8 * sigma_max)
        .map_err(|e| Error::Degenerate(e.to_string()))?;
    Ok(PoseJacobian {
        matrix: -(pinv * j_points),
        condition,
    })
}

/// Signed point-to-surface distances of `points` to `h`.
pub fn signed_residuals(points: &[Point3<f64>], h: &Cuboid) -> Vec<f64> {
    points
        .iter()
        .map(|y| signed_distance_grad_local(&h.half_extents, &h.to_local(y)).0)
        .collect()
}

/// Re-solves the pose of `start` for `points` with the sizes held fixed, by
/// Gauss-Newton on the signed residuals with a forward-difference Jacobian.
pub fn refit_pose(points: &[Point3<f64>], start: &Cuboid, iterations: usize) -> Result<Cuboid> {
    let a = start.half_extents;
    let build = |x: &[f64; 6]| {
        Cuboid::from_axis_angle(a, Vector3::new(x[0], x[1], x[2]), Vector3::new(x[3], x[4], x[5]))
    };
    let r0 = start.axis_angle();
    let mut x = [r0.x, r0.y, r0.z, start.translation.x, start.translation.y, start.translation.z];
    let h = 1e-7;
    for _ in 0..iterations {
        let e = DVector::from_vec(signed_residuals(points, &build(&x)));
        if e.norm() < 1e-14 {
            break;
        }
        let mut jac = DMatrix::zeros(points.len(), 6);
        for j in 0..6 {
            let mut xp = x;
            xp[j] += h;
            let ep = DVector::from_vec(signed_residuals(points, &build(&xp)));
            jac.set_column(j, &((ep - &e) / h));
        }
        let step = SVD::new(jac, true, true)
            .solve(&e, 1e-12)
            .map_err(|m| Error::Degenerate(m.to_string()))?;
        for j in 0..6 {
            x[j] -= step[j];
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("pose refit".into()));
        }
    }
    Ok(build(&x))
}

/// Central-difference estimate of `∂(r, t)/∂S`, re-solving the pose for each
/// perturbed point coordinate.
pub fn finite_difference_jacobian(set: &MinimalSet, h: &Cuboid, step: f64) -> Result<DMatrix<f64>> {
    let pts = set.points();
    let mut out = DMatrix::zeros(6, 3 * pts.len());
    let pose = |c: &Cuboid| {
        let r = c.axis_angle();
        nalgebra::Vector6::new(r.x, r.y, r.z, c.translation.x, c.translation.y, c.translation.z)
    };
    for k in 0..pts.len() {
        for i in 0..3 {
            let mut plus = pts.to_vec();
            let mut minus = pts.to_vec();
            plus[k][i] += step;
            minus[k][i] -= step;
            let hp = refit_pose(&plus, h, 20)?;
            let hm = refit_pose(&minus, h, 20)?;
            out.set_column(3 * k + i, &((pose(&hp) - pose(&hm)) / (2.0 * step)));
        }
    }
    Ok(out)
}

/// One comparison of [`solver_jacobian`] with [`finite_difference_jacobian`].
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct GradCheckTrial {
    pub trial: usize,
    pub relative_error: f64,
    pub condition: f64,
}

/// Compares the analytic and finite-difference pose Jacobians on `trials` random
/// non-degenerate minimal sets drawn from the visible surfaces of synthetic cuboids
/// (the true cuboid is an exact fit of its own samples).
pub fn gradient_check(trials: usize, seed: u64) -> Result<Vec<GradCheckTrial>> {
    use crate::synth::{random_cuboid, sample_visible_points, SynthRanges};
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let ranges = SynthRanges {
        size: [0.1, 1.0],
        ..SynthRanges::default()
    };
    let mut out = Vec::with_capacity(trials);
    let mut attempts = 0;
    while out.len() < trials {
        attempts += 1;
        if attempts > 100 * trials.max(1) {
            return Err(Error::Degenerate("could not draw non-degenerate minimal sets".into()));
        }
        let h = random_cuboid(&ranges, &mut rng)?;
        if h.contains(&Point3::origin()) {
            continue;
        }
        let set = MinimalSet::new(sample_visible_points(&h, MinimalSet::MIN_SIZE, &mut rng)?)?;
        let Ok(analytic) = solver_jacobian(&set, &h) else { continue };
        let numeric = finite_difference_jacobian(&set, &h, 1e-6)?;
        out.push(GradCheckTrial {
            trial: out.len(),
            relative_error: (&analytic.matrix - &numeric).norm() / numeric.norm().max(1e-300),
            condition: analytic.condition,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{random_cuboid, sample_visible_points, SynthRanges};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set(points: Vec<Point3<f64>>) -> MinimalSet {
        MinimalSet::new(points).unwrap()
    }

    fn cube_face_points() -> Vec<Point3<f64>> {
        vec![
            Point3::new(1.0, 0.2, -0.3),
            Point3::new(-1.0, -0.2, 0.3),
            Point3::new(0.3, 1.0, 0.1),
            Point3::new(-0.3, -1.0, -0.1),
            Point3::new(0.1, -0.4, 1.0),
            Point3::new(-0.1, 0.4, -1.0),
        ]
    }

    #[test]
    fn minimal_set_requires_six_points() {
        assert!(MinimalSet::new(vec![Point3::origin(); 5]).is_err());
        assert!(MinimalSet::new(vec![Point3::new(f64::NAN, 0.0, 0.0); 6]).is_err());
    }

    #[test]
    fn residual_examples() {
        let unit = Cuboid::axis_aligned(Vector3::new(1.0, 1.0, 1.0), Vector3::zeros());
        assert_eq!(objective_residuals(&[Point3::new(2.0, 0.0, 0.0)], &unit), vec![3.0]);
        assert!(objective_residuals(&cube_face_points(), &unit).iter().all(|&r| r == 0.0));
        let big = Cuboid::axis_aligned(Vector3::new(2.0, 2.0, 2.0), Vector3::zeros());
        let on_big: Vec<_> = cube_face_points().iter().map(|p| Point3::from(p.coords * 2.0)).collect();
        assert!(objective_residuals(&on_big, &big).iter().all(|&r| r == 0.0));
    }

    #[test]
    fn init_on_symmetric_set() {
        let opts = SolverOptions::default();
        let init = init_estimate(&set(cube_face_points()), &opts).unwrap();
        assert!(!init.degenerate);
        assert!(init.cuboid.translation.norm() < 1e-15);
        let m = init.cuboid.rotation.matrix();
        assert!((m.determinant() - 1.0).abs() < 1e-12);
        assert!(objective_residuals(&cube_face_points(), &init.cuboid).iter().all(|r| r.is_finite()));
        // Every point lies inside or on the initial box.
        for p in cube_face_points() {
            let local = init.cuboid.to_local(&p);
            for c in 0..3 {
                assert!(local[c].abs() <= init.cuboid.half_extents[c] + 1e-12);
            }
        }
    }

    #[test]
    fn init_is_translation_equivariant() {
        let opts = SolverOptions::default();
        let shift = Vector3::new(1.0, 2.0, 3.0);
        let a = init_estimate(&set(cube_face_points()), &opts).unwrap();
        let moved: Vec<_> = cube_face_points().iter().map(|p| p + shift).collect();
        let b = init_estimate(&set(moved), &opts).unwrap();
        assert!((b.cuboid.translation - a.cuboid.translation - shift).norm() < 1e-12);
        assert!((b.cuboid.half_extents - a.cuboid.half_extents).norm() < 1e-12);
    }

    #[test]
    fn coincident_points_fall_back_to_identity() {
        let opts = SolverOptions::default();
        let init = init_estimate(&set(vec![Point3::new(1.0, 1.0, 1.0); 6]), &opts).unwrap();
        assert!(init.degenerate);
        assert_eq!(init.cuboid.rotation, Rotation3::identity());
        assert!(init.cuboid.half_extents.iter().all(|&a| a == opts.a_min));
        let fit = fit_minimal(&set(vec![Point3::new(1.0, 1.0, 1.0); 6]), &opts).unwrap();
        assert!(fit.degenerate_init);
    }

    #[test]
    fn rotation_derivatives_match_finite_differences() {
        for r in [Vector3::new(0.3, -0.7, 1.1), Vector3::new(1e-3, 2e-3, 0.0), Vector3::new(2.5, 0.5, -1.0)] {
            let analytic = rotation_derivatives(&r);
            for i in 0..3 {
                let h = 1e-6;
                let e = Vector3::ith(i, h);
                let fd = (Rotation3::new(r + e).into_inner() - Rotation3::new(r - e).into_inner()) / (2.0 * h);
                assert!((fd - analytic[i]).abs().max() < 1e-8, "r={r:?} i={i}");
            }
        }
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        // Points off the surface in smooth regions (away from kinks).
        let pts = vec![
            Point3::new(0.9, 0.1, 2.2),
            Point3::new(-0.35, 0.2, 2.05),
            Point3::new(0.1, 0.75, 1.7),
            Point3::new(0.05, -0.1, 1.3),
            Point3::new(0.4, 0.3, 2.9),
            Point3::new(-0.6, -0.5, 2.4),
        ];
        let params = CuboidParams {
            half_extents: Vector3::new(0.5, 0.6, 0.7),
            axis_angle: Vector3::new(0.2, -0.1, 0.3),
            translation: Vector3::new(0.05, 0.02, 2.1),
        };
        let (_, grad) = objective_gradient(&pts, &params);
        let x = params.to_array();
        for k in 0..9 {
            let h = 1e-7;
            let mut plus = x;
            let mut minus = x;
            plus[k] += h;
            minus[k] -= h;
            let fp = objective_gradient(&pts, &CuboidParams::from_array(&plus)).0;
            let fm = objective_gradient(&pts, &CuboidParams::from_array(&minus)).0;
            let fd = (fp - fm) / (2.0 * h);
            let rel = (fd - grad[k]).abs() / fd.abs().max(1e-3);
            assert!(rel < 1e-5, "param {k}: analytic {} vs fd {fd}", grad[k]);
        }
    }

    #[test]
    fn exact_start_is_a_fixed_point() {
        let unit = Cuboid::from_axis_angle(Vector3::new(1.0, 0.5, 0.8), Vector3::new(0.1, 0.2, 0.3), Vector3::new(0.0, 0.0, 3.0));
        let pts: Vec<_> = cube_face_points()
            .iter()
            .map(|p| unit.to_camera(&p.coords.component_mul(&unit.half_extents)))
            .collect();
        let fit = fit_minimal_from(&pts, &unit, &SolverOptions::default()).unwrap();
        assert!(fit.residual_l1 < 1e-9);
    }

    #[test]
    fn coplanar_points_collapse_to_min_thickness() {
        let opts = SolverOptions::default();
        let pts = vec![
            Point3::new(0.0, 0.0, 2.0),
            Point3::new(0.3, 0.0, 2.0),
            Point3::new(0.0, 0.2, 2.0),
            Point3::new(0.3, 0.2, 2.0),
            Point3::new(0.15, 0.05, 2.0),
            Point3::new(0.1, 0.15, 2.0),
        ];
        let fit = fit_minimal(&set(pts.clone()), &opts).unwrap();
        assert_eq!(fit.cuboid.half_extents.min(), opts.a_min);
        assert!(objective_residuals(&pts, &fit.cuboid).iter().all(|&r| r < 1e-6));
    }

    #[test]
    fn fit_never_worse_than_init_and_respects_clamps() {
        let opts = SolverOptions::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ranges = SynthRanges::default();
        for _ in 0..30 {
            let truth = random_cuboid(&ranges, &mut rng).unwrap();
            let pts = sample_visible_points(&truth, 6, &mut rng).unwrap();
            let fit = fit_minimal(&set(pts), &opts).unwrap();
            assert!(fit.residual_l1 <= fit.initial_residual_l1);
            for &a in fit.cuboid.half_extents.iter() {
                assert!(a >= opts.a_min && a <= opts.a_max);
            }
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let opts = SolverOptions::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth = random_cuboid(&SynthRanges::default(), &mut rng).unwrap();
        let pts = sample_visible_points(&truth, 6, &mut rng).unwrap();
        let a = fit_minimal(&set(pts.clone()), &opts).unwrap();
        let b = fit_minimal(&set(pts), &opts).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn jacobian_rejects_degenerate_sets() {
        // All six points on one face: rotation about the face normal is unobservable.
        let h = Cuboid::axis_aligned(Vector3::new(0.5, 0.5, 0.5), Vector3::new(0.0, 0.0, 3.0));
        let pts: Vec<_> = (0..6)
            .map(|k| Point3::new(-0.4 + 0.15 * k as f64, 0.1 * (k % 3) as f64, 2.5))
            .collect();
        assert!(matches!(solver_jacobian(&set(pts), &h), Err(Error::Degenerate(_))));
    }

    #[test]
    fn refit_recovers_pose_after_small_shift() {
        let h = Cuboid::from_axis_angle(Vector3::new(0.4, 0.3, 0.5), Vector3::new(0.2, 0.1, -0.3), Vector3::new(0.2, 0.1, 3.0));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts = sample_visible_points(&h, 6, &mut rng).unwrap();
        let start = Cuboid::new(h.half_extents, h.rotation, h.translation + Vector3::new(1e-4, -2e-4, 1e-4));
        if solver_jacobian(&set(pts.clone()), &h).is_ok() {
            let back = refit_pose(&pts, &start, 20).unwrap();
            assert!(signed_residuals(&pts, &back).iter().all(|e| e.abs() < 1e-9));
        }
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        let trials = gradient_check(5, 2).unwrap();
        let mut errs: Vec<f64> = trials.iter().map(|t| t.relative_error).collect();
        errs.sort_by(f64::total_cmp);
        assert!(errs[2] < 0.05, "median relative error {}", errs[2]);
    }
}
