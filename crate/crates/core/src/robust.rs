//! Occlusion-aware sequential RANSAC.
//!
//! Points are scored against every side of every cuboid: a side either explains a
//! point (positive score), occludes it (negative score) or is unrelated (score near
//! zero). The scene-level inlier count drives both hypothesis selection and the
//! information-criterion stopping rule.

use nalgebra::{Point3, Rotation3, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{occludes_local, side_distance_sq_local, Cuboid, Side};
use crate::solver::{distance_sq_grad_local, fit_minimal, rotation_derivatives, MinimalSet, SolverOptions};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InlierParams {
    /// Inlier threshold on squared distances (m²).
    pub tau: f64,
    /// Softness of the sigmoid.
    pub beta: f64,
    /// Squared distance above which the occlusion penalty grows linearly.
    pub tau_c: f64,
}

impl Default for InlierParams {
    fn default() -> Self {
        InlierParams::new(0.004, 5.0, 2.0)
    }
}

impl InlierParams {
    /// `tau_c = tau_c_mult · tau`.
    pub fn new(tau: f64, beta: f64, tau_c_mult: f64) -> Self {
        InlierParams {
            tau,
            beta,
            tau_c: tau * tau_c_mult,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.beta > 0.0 && self.tau_c >= self.tau) {
            return Err(Error::InvalidInput(format!(
                "inlier parameters need tau > 0, beta > 0, tau_c >= tau (got {self:?})"
            )));
        }
        Ok(())
    }

    /// Slope and intercept of the linear branch of [`leaky_occlusion`].
    fn leaky_line(&self) -> (f64, f64) {
        let s = sigmoid(self.beta * self.tau_c / self.tau - self.beta);
        let slope = self.beta / self.tau * s * (1.0 - s);
        (slope, s - slope * self.tau_c)
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Soft inlier score of a squared distance: `1 - σ(β d/τ - β)`.
pub fn soft_inlier(d_sq: f64, p: &InlierParams) -> f64 {
    sigmoid(p.beta - p.beta * d_sq / p.tau)
}

/// Occlusion penalty: `1 - f_I(d)` below `tau_c`, continued linearly (with matching
/// value and slope) above it.
pub fn leaky_occlusion(d_sq: f64, p: &InlierParams) -> f64 {
    if d_sq < p.tau_c {
        sigmoid(p.beta * d_sq / p.tau - p.beta)
    } else {
        let (m, b) = p.leaky_line();
        m * d_sq + b
    }
}

/// How the inlier score treats occlusions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum InlierMode {
    #[default]
    OcclusionAware,
    /// Nearest-side soft inlier only; occluding sides are not penalised.
    Plain,
}

/// Running min/max of side scores over all sides of a set of cuboids.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Extremes {
    min: f64,
    max: f64,
}

impl Extremes {
    const EMPTY: Extremes = Extremes {
        min: f64::INFINITY,
        max: f64::NEG_INFINITY,
    };

    #[inline]
    fn merge(self, other: Extremes) -> Extremes {
        Extremes {
            min: self.min.min(other.min),
            max: self.max.max(other.max),
        }
    }

    /// The combined score: the most negative side if any side occludes, otherwise
    /// the best side; zero for an empty set.
    #[inline]
    fn value(self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            0.0
        } else if self.min < 0.0 {
            self.min
        } else {
            self.max
        }
    }
}

/// Precomputed per-cuboid quantities for scoring many points.
struct ScoringView<'a> {
    h: &'a Cuboid,
    camera: Vector3<f64>,
}

impl<'a> ScoringView<'a> {
    fn new(h: &'a Cuboid) -> Self {
        ScoringView {
            h,
            camera: h.camera_local(),
        }
    }

    /// Extremes of the side scores `f_I(d_i²) - χ_o · f_O(d_i²)` over the six sides.
    #[inline]
    fn extremes(&self, y: &Point3<f64>, p: &InlierParams, mode: InlierMode) -> Extremes {
        let a = &self.h.half_extents;
        let local = self.h.to_local(y);
        let mut nearest = f64::INFINITY;
        let mut min_occluded = f64::INFINITY;
        let mut max_occluded = f64::NEG_INFINITY;
        let mut farthest = 0.0f64;
        for side in Side::ALL {
            let d_sq = side_distance_sq_local(a, &local, side);
            if mode == InlierMode::OcclusionAware && occludes_local(a, &self.camera, &local, side) {
                let f = soft_inlier(d_sq, p) - leaky_occlusion(d_sq, p);
                min_occluded = min_occluded.min(f);
                max_occluded = max_occluded.max(f);
            } else {
                nearest = nearest.min(d_sq);
                farthest = farthest.max(d_sq);
            }
        }
        let mut ext = Extremes {
            min: min_occluded,
            max: max_occluded,
        };
        if nearest.is_finite() {
            ext = ext.merge(Extremes {
                min: soft_inlier(farthest, p),
                max: soft_inlier(nearest, p),
            });
        }
        ext
    }
}

/// Occlusion-aware inlier score of one point with respect to a set of cuboids.
pub fn occlusion_aware_inlier(y: &Point3<f64>, cuboids: &[Cuboid], p: &InlierParams) -> f64 {
    point_score(y, cuboids, p, InlierMode::OcclusionAware)
}

pub fn point_score(y: &Point3<f64>, cuboids: &[Cuboid], p: &InlierParams, mode: InlierMode) -> f64 {
    cuboids
        .iter()
        .map(|h| ScoringView::new(h).extremes(y, p, mode))
        .fold(Extremes::EMPTY, Extremes::merge)
        .value()
}

/// Soft inlier count `Σ_y f_OAI(y, M)`.
pub fn inlier_count(points: &[Point3<f64>], cuboids: &[Cuboid], p: &InlierParams) -> f64 {
    points.iter().map(|y| occlusion_aware_inlier(y, cuboids, p)).sum()
}

/// Incremental scorer: keeps the per-point side extremes of the accepted cuboids so
/// a hypothesis is scored in one pass over the points.
pub struct InlierScorer<'a> {
    points: &'a [Point3<f64>],
    params: InlierParams,
    mode: InlierMode,
    state: Vec<Extremes>,
    total: f64,
}

impl<'a> InlierScorer<'a> {
    pub fn new(points: &'a [Point3<f64>], params: InlierParams, mode: InlierMode) -> Self {
        InlierScorer {
            points,
            params,
            mode,
            state: vec![Extremes::EMPTY; points.len()],
            total: 0.0,
        }
    }

    pub fn with_cuboids(points: &'a [Point3<f64>], params: InlierParams, mode: InlierMode, cuboids: &[Cuboid]) -> Self {
        let mut s = Self::new(points, params, mode);
        for h in cuboids {
            s.add(h);
        }
        s
    }

    /// `I_c(Y, M)` for the cuboids added so far.
    pub fn count(&self) -> f64 {
        self.total
    }

    /// Current per-point scores.
    pub fn scores(&self) -> Vec<f64> {
        self.state.iter().map(|e| e.value()).collect()
    }

    /// `I_c(Y, M ∪ {h}) - I_c(Y, M)`.
    pub fn gain(&self, h: &Cuboid) -> f64 {
        let view = ScoringView::new(h);
        let with: f64 = self
            .points
            .iter()
            .zip(&self.state)
            .map(|(y, s)| s.merge(view.extremes(y, &self.params, self.mode)).value())
            .sum();
        with - self.total
    }

    pub fn add(&mut self, h: &Cuboid) {
        let view = ScoringView::new(h);
        for (y, s) in self.points.iter().zip(self.state.iter_mut()) {
            *s = s.merge(view.extremes(y, &self.params, self.mode));
        }
        self.total = self.state.iter().map(|e| e.value()).sum();
    }
}

/// Q per-point sampling distributions and the categorical distribution over them.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMaps {
    maps: Vec<Vec<f64>>,
    selection: Vec<f64>,
    cumulative: Vec<Vec<f64>>,
}

impl WeightMaps {
    pub fn new(maps: Vec<Vec<f64>>, selection: Vec<f64>) -> Result<Self> {
        if maps.is_empty() || maps.len() != selection.len() {
            return Err(Error::InvalidInput(format!(
                "need one selection weight per map ({} maps, {} weights)",
                maps.len(),
                selection.len()
            )));
        }
        let n = maps[0].len();
        if maps.iter().any(|m| m.len() != n) {
            return Err(Error::InvalidInput("weight maps differ in length".into()));
        }
        let bad = |w: &f64| !w.is_finite() || *w < 0.0;
        if maps.iter().flatten().any(bad) || selection.iter().any(bad) {
            return Err(Error::InvalidInput("weights must be finite and nonnegative".into()));
        }
        let q_sum: f64 = selection.iter().sum();
        if (q_sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("selection weights sum to {q_sum}, expected 1")));
        }
        let cumulative = maps.iter().map(|m| prefix_sums(m)).collect();
        Ok(WeightMaps {
            maps,
            selection,
            cumulative,
        })
    }

    /// A single uniform map over `n` points.
    pub fn uniform(n: usize) -> Self {
        WeightMaps::new(vec![vec![1.0; n]], vec![1.0]).expect("uniform weights are valid")
    }

    pub fn num_points(&self) -> usize {
        self.maps[0].len()
    }

    pub fn maps(&self) -> &[Vec<f64>] {
        &self.maps
    }

    pub fn selection(&self) -> &[f64] {
        &self.selection
    }

    /// Zeroes the weights of points with `keep[i] == false`; a map left with fewer
    /// than `min_support` positive weights is kept unmasked.
    pub fn masked(&self, keep: &[bool], min_support: usize) -> WeightMaps {
        let maps = self
            .maps
            .iter()
            .map(|m| {
                let masked: Vec<f64> = m.iter().zip(keep).map(|(&w, &k)| if k { w } else { 0.0 }).collect();
                if masked.iter().filter(|&&w| w > 0.0).count() >= min_support {
                    masked
                } else {
                    m.clone()
                }
            })
            .collect();
        WeightMaps::new(maps, self.selection.clone()).expect("masking preserves validity")
    }
}

fn prefix_sums(w: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    w.iter()
        .map(|&x| {
            acc += x;
            acc
        })
        .collect()
}

fn draw_categorical<R: Rng + ?Sized>(cumulative: &[f64], rng: &mut R) -> Option<usize> {
    let total = *cumulative.last()?;
    if !(total > 0.0) {
        return None;
    }
    let target = rng.random::<f64>() * total;
    let idx = cumulative.partition_point(|&c| c <= target);
    // Guard against landing on a trailing zero-weight entry through rounding.
    let idx = idx.min(cumulative.len() - 1);
    let weight = cumulative[idx] - if idx == 0 { 0.0 } else { cumulative[idx - 1] };
    if weight > 0.0 {
        Some(idx)
    } else {
        (0..cumulative.len())
            .rev()
            .find(|&i| cumulative[i] - if i == 0 { 0.0 } else { cumulative[i - 1] } > 0.0)
    }
}

/// `size` distinct indices drawn proportionally to `weights` (which must have at
/// least `size` positive entries).
fn draw_distinct<R: Rng + ?Sized>(weights: &[f64], cumulative: &[f64], size: usize, rng: &mut R) -> Vec<usize> {
    let mut picked: Vec<usize> = Vec::with_capacity(size);
    let mut rejections = 0;
    while picked.len() < size && rejections < 1000 * size {
        let i = draw_categorical(cumulative, rng).expect("support checked by caller");
        if picked.contains(&i) {
            rejections += 1;
        } else {
            picked.push(i);
        }
    }
    // Heavily skewed weights: finish with exact sequential draws over the remainder.
    while picked.len() < size {
        let rest: Vec<f64> = weights
            .iter()
            .enumerate()
            .map(|(i, &x)| if picked.contains(&i) { 0.0 } else { x })
            .collect();
        let i = draw_categorical(&prefix_sums(&rest), rng).expect("support checked by caller");
        picked.push(i);
    }
    picked
}

fn pick_map<R: Rng + ?Sized>(w: &WeightMaps, size: usize, rng: &mut R) -> Result<usize> {
    let q = prefix_sums(&w.selection);
    let map = draw_categorical(&q, rng).ok_or_else(|| Error::InvalidInput("selection weights are all zero".into()))?;
    let support = w.maps[map].iter().filter(|&&x| x > 0.0).count();
    if support < size {
        return Err(Error::InvalidInput(format!(
            "weight map {map} has {support} positive entries, need {size}"
        )));
    }
    Ok(map)
}

/// Two-stage sampling: pick a map according to the selection weights, then draw
/// `size` distinct point indices from it.
pub fn sample_minimal_set<R: Rng + ?Sized>(w: &WeightMaps, size: usize, rng: &mut R) -> Result<Vec<usize>> {
    let map = pick_map(w, size, rng)?;
    Ok(draw_distinct(&w.maps[map], &w.cumulative[map], size, rng))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    pub minimal_set_size: usize,
    pub hypotheses: usize,
    pub max_cuboids: usize,
    /// Overrides the `9 · ln n` acceptance threshold.
    pub stopping_theta: Option<f64>,
    pub seed: u64,
    pub inlier: InlierParams,
    pub solver: SolverOptions,
    pub mode: InlierMode,
    /// After each accepted cuboid, stop sampling points it already explains
    /// (score above 0.5) or occludes.
    pub suppress_explained: bool,
    /// Refine the cuboid set with EM after each acceptance.
    pub refine_em: Option<EmConfig>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            minimal_set_size: 6,
            hypotheses: 4096,
            max_cuboids: 8,
            stopping_theta: None,
            seed: 0,
            inlier: InlierParams::default(),
            solver: SolverOptions::default(),
            mode: InlierMode::OcclusionAware,
            suppress_explained: true,
            refine_em: None,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.minimal_set_size < MinimalSet::MIN_SIZE {
            return Err(Error::InvalidInput(format!(
                "minimal set size must be at least {}",
                MinimalSet::MIN_SIZE
            )));
        }
        if self.hypotheses == 0 || self.max_cuboids == 0 {
            return Err(Error::InvalidInput("need at least one hypothesis and one cuboid".into()));
        }
        self.inlier.validate()?;
        self.solver.validate()
    }
}

/// A candidate cuboid and the inlier count it would add.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub cuboid: Cuboid,
    pub inlier_gain: f64,
}

/// Acceptance threshold `Θ = 9 · ln n`, unless overridden.
pub fn stopping_threshold(n: usize, cfg: &FitConfig) -> f64 {
    cfg.stopping_theta.unwrap_or_else(|| 9.0 * (n.max(1) as f64).ln())
}

/// Independent random stream for hypothesis `index` of `round`.
pub fn hypothesis_rng(seed: u64, round: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((round as u64) << 32) ^ index as u64);
    rng
}

/// Best candidate by inlier gain; ties go to the lowest index. `None` entries are
/// skipped.
pub fn select_best(scorer: &InlierScorer<'_>, candidates: &[Option<Cuboid>]) -> Option<Hypothesis> {
    let gains: Vec<Option<f64>> = candidates
        .par_iter()
        .map(|c| c.as_ref().map(|h| scorer.gain(h)))
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (i, g) in gains.iter().enumerate() {
        if let Some(g) = *g {
            if best.is_none_or(|(_, b)| g > b) {
                best = Some((i, g));
            }
        }
    }
    best.map(|(i, g)| Hypothesis {
        cuboid: candidates[i].clone().expect("scored candidate exists"),
        inlier_gain: g,
    })
}

fn sample_and_fit(
    points: &[Point3<f64>],
    weights: &WeightMaps,
    cfg: &FitConfig,
    round: usize,
    index: usize,
) -> Result<Option<Cuboid>> {
    let mut rng = hypothesis_rng(cfg.seed, round, index);
    let idx = sample_minimal_set(weights, cfg.minimal_set_size, &mut rng)?;
    let set = MinimalSet::new(idx.iter().map(|&i| points[i]).collect())?;
    Ok(match fit_minimal(&set, &cfg.solver) {
        Ok(fit) if !fit.degenerate_init => Some(fit.cuboid),
        _ => None,
    })
}

/// Samples and fits `cfg.hypotheses` cuboids and returns the one with the largest
/// inlier gain over the current scorer state.
pub fn generate_and_select(
    scorer: &InlierScorer<'_>,
    weights: &WeightMaps,
    cfg: &FitConfig,
    round: usize,
) -> Result<Hypothesis> {
    let points = scorer.points;
    if points.len() < cfg.minimal_set_size {
        return Err(Error::InvalidInput(format!(
            "scene has {} points, fewer than the minimal set size {}",
            points.len(),
            cfg.minimal_set_size
        )));
    }
    if weights.num_points() != points.len() {
        return Err(Error::InvalidInput("weight maps do not match the point count".into()));
    }
    let candidates = (0..cfg.hypotheses)
        .into_par_iter()
        .map(|j| sample_and_fit(points, weights, cfg, round, j))
        .collect::<Result<Vec<_>>>()?;
    select_best(scorer, &candidates).ok_or_else(|| Error::Degenerate("every hypothesis fit was degenerate".into()))
}

/// Outcome of one round of the sequential loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundDiagnostics {
    pub round: usize,
    pub gain: f64,
    pub theta: f64,
    pub accepted: bool,
    pub cuboid: Cuboid,
}

#[derive(Clone, Debug)]
pub struct SceneFit {
    pub cuboids: Vec<Cuboid>,
    pub rounds: Vec<RoundDiagnostics>,
}

/// Sequentially adds the best hypothesis while it raises the inlier count by more
/// than `Θ`, up to `cfg.max_cuboids` cuboids.
pub fn fit_scene(points: &[Point3<f64>], weights: Option<&WeightMaps>, cfg: &FitConfig) -> Result<SceneFit> {
    cfg.validate()?;
    if points.is_empty() {
        return Err(Error::InvalidInput("cannot fit an empty point set".into()));
    }
    let uniform;
    let weights = match weights {
        Some(w) => w,
        None => {
            uniform = WeightMaps::uniform(points.len());
            &uniform
        }
    };
    let theta = stopping_threshold(points.len(), cfg);
    let mut scorer = InlierScorer::new(points, cfg.inlier, cfg.mode);
    let mut cuboids = Vec::new();
    let mut rounds = Vec::new();

    for round in 0..cfg.max_cuboids {
        let effective = if cfg.suppress_explained && !cuboids.is_empty() {
            let keep: Vec<bool> = scorer.scores().iter().map(|&s| (0.0..=0.5).contains(&s)).collect();
            weights.masked(&keep, cfg.minimal_set_size)
        } else {
            weights.clone()
        };
        let hyp = generate_and_select(&scorer, &effective, cfg, round)?;
        let accepted = hyp.inlier_gain > theta;
        rounds.push(RoundDiagnostics {
            round,
            gain: hyp.inlier_gain,
            theta,
            accepted,
            cuboid: hyp.cuboid.clone(),
        });
        if !accepted {
            break;
        }
        cuboids.push(hyp.cuboid);
        match &cfg.refine_em {
            Some(em) => {
                cuboids = em_refine(points, &cuboids, em, &cfg.solver)?.cuboids;
                scorer = InlierScorer::with_cuboids(points, cfg.inlier, cfg.mode, &cuboids);
            }
            None => scorer.add(cuboids.last().expect("just pushed")),
        }
    }
    Ok(SceneFit { cuboids, rounds })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmConfig {
    /// Shared standard deviation of the point-to-surface likelihood (m).
    pub sigma: f64,
    pub iterations: usize,
    pub step_size: f64,
    /// Distance, in units of `sigma`, at which a point is as likely to belong to no
    /// cuboid as to its nearest one. `None` assigns every point to some cuboid.
    pub outlier_sigmas: Option<f64>,
}

impl EmConfig {
    pub fn for_inliers(p: &InlierParams) -> Self {
        EmConfig {
            sigma: p.tau.sqrt(),
            ..EmConfig::default()
        }
    }
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            sigma: 0.004f64.sqrt(),
            iterations: 50,
            step_size: 1e-3,
            outlier_sigmas: Some(3.0),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EmResult {
    pub cuboids: Vec<Cuboid>,
    pub q_initial: f64,
    pub q_final: f64,
}

/// Association posteriors `p((h, y) ∈ V | M)` under a uniform prior; rows are
/// points, the last column (when present) is the "no cuboid" class.
pub fn em_posteriors(points: &[Point3<f64>], cuboids: &[Cuboid], em: &EmConfig) -> Vec<Vec<f64>> {
    let two_var = 2.0 * em.sigma * em.sigma;
    points
        .iter()
        .map(|y| {
            let mut logits: Vec<f64> = cuboids
                .iter()
                .map(|h| -crate::geometry::distance_sq_local(&h.half_extents, &h.to_local(y)) / two_var)
                .collect();
            if let Some(k) = em.outlier_sigmas {
                logits.push(-(k * em.sigma).powi(2) / two_var);
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = exp.iter().sum();
            exp.into_iter().map(|e| e / z).collect()
        })
        .collect()
}

type PoseParams = (Vector3<f64>, Vector3<f64>, Vector3<f64>);

/// Mean expected log-likelihood `Q(M'|M) / |Y|` and its gradient.
fn em_objective(
    points: &[Point3<f64>],
    params: &[PoseParams],
    post: &[Vec<f64>],
    sigma: f64,
) -> (f64, Vec<[Vector3<f64>; 3]>) {
    let var = sigma * sigma;
    let log_norm = -0.5 * (2.0 * std::f64::consts::PI * var).ln();
    let n = points.len().max(1) as f64;
    let mut q = 0.0;
    let mut grads = Vec::with_capacity(params.len());
    for (j, (a, r, t)) in params.iter().enumerate() {
        let rot = Rotation3::new(*r);
        let d_rot = rotation_derivatives(r);
        let mut g = [Vector3::zeros(); 3];
        for (y, w) in points.iter().zip(post) {
            let wj = w[j];
            if wj == 0.0 {
                continue;
            }
            let rel = y.coords - t;
            let local = rot.inverse_transform_vector(&rel);
            let (d_sq, gp, ga) = distance_sq_grad_local(a, &local);
            q += wj * (log_norm - d_sq / (2.0 * var));
            let c = -wj / (2.0 * var);
            g[0] += ga * c;
            for i in 0..3 {
                g[1][i] += c * rel.dot(&(d_rot[i] * gp));
            }
            g[2] -= rot * gp * c;
        }
        for v in &mut g {
            *v /= n;
        }
        grads.push(g);
    }
    (q / n, grads)
}

/// EM refinement of a cuboid set: posteriors from `cuboids`, then gradient ascent
/// on the expected log-likelihood, returning the best iterate.
pub fn em_refine(points: &[Point3<f64>], cuboids: &[Cuboid], em: &EmConfig, clamp: &SolverOptions) -> Result<EmResult> {
    if cuboids.is_empty() {
        return Err(Error::InvalidInput("EM refinement needs at least one cuboid".into()));
    }
    if !(em.sigma > 0.0) {
        return Err(Error::InvalidInput("EM sigma must be positive".into()));
    }
    let post = em_posteriors(points, cuboids, em);
    let mut params: Vec<PoseParams> = cuboids
        .iter()
        .map(|h| (h.half_extents, h.axis_angle(), h.translation))
        .collect();
    let (q0, mut grads) = em_objective(points, &params, &post, em.sigma);
    if !q0.is_finite() {
        return Err(Error::NonFinite("EM objective".into()));
    }
    let mut best = (q0, params.clone());
    for _ in 0..em.iterations {
        for ((a, r, t), g) in params.iter_mut().zip(&grads) {
            *a += g[0] * em.step_size;
            a.apply(|v| *v = clamp.clamp_size(*v));
            *r += g[1] * em.step_size;
            *t += g[2] * em.step_size;
        }
        let (q, g) = em_objective(points, &params, &post, em.sigma);
        if !q.is_finite() {
            return Err(Error::NonFinite("EM objective".into()));
        }
        if q > best.0 {
            best = (q, params.clone());
        }
        grads = g;
    }
    Ok(EmResult {
        cuboids: best
            .1
            .iter()
            .map(|(a, r, t)| Cuboid::from_axis_angle(*a, *r, *t))
            .collect(),
        q_initial: q0,
        q_final: best.0,
    })
}
