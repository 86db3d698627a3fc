//! Discrete-time spatial birth-death point process on a buffered window.
//!
//! Each generation is `X_k = S_k ∪ B_k ∪ I_k`: survivors of the previous
//! generation (kept independently with a logistic probability in a fixed
//! covariate), offspring clusters (per-parent Poisson counts, uniform on the
//! Euclidean disc `b(u, omega)`), and homogeneous Poisson immigrants. The
//! process is simulated on the observation window dilated by
//! `buffer_factor * omega * K`, so dynamics inside the window are unaffected
//! by the artificial boundary up to the horizon.
//!
//! The per-cube likelihood score decomposes over the unit cubes covering the
//! observation window; every cube's contribution depends only on the points
//! and covariate inside the cube dilated by `omega`, which the tests pin
//! down bit-exactly.

use std::collections::{HashMap, HashSet};

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use thiserror::Error;

use crate::car::inference::ScoreField;
use crate::lattice::{cover_window, CubeRegion, Lattice, LatticePoint, Window};
use crate::numerics::{RngStream, StreamTag};

#[derive(Debug, Error)]
pub enum BdError {
    #[error("window must be planar (d=2), got d={0}")]
    NotPlanar(usize),
    #[error("disc radius omega must be positive, got {0}")]
    OmegaNonPositive(f64),
    #[error("{name} must be nonnegative, got {value}")]
    NegativeRate { name: &'static str, value: f64 },
    #[error("buffer factor must be nonnegative, got {0}")]
    NegativeBuffer(f64),
    #[error("quadrature subdivision must be at least 4, got {0}")]
    QuadratureTooSmall(usize),
    #[error("horizon K must be at least 1")]
    ZeroHorizon,
    #[error("survival probability degenerates at ({x:.3}, {y:.3}): linear predictor {eta:.3e}")]
    SurvivalDegenerate { x: f64, y: f64, eta: f64 },
    #[error("point {id} at ({x:.3}, {y:.3}) lies outside the simulation region")]
    PointOutsideRegion { id: u64, x: f64, y: f64 },
    #[error("cube-disc overlap requires a unit cube, got side {0}")]
    NonUnitCube(f64),
    #[error("birth intensity vanishes at an observed birth (id {id}, generation {k}); the model cannot explain the data with rho = 0 and no covering parent")]
    ModelInconsistency { k: usize, id: u64 },
    #[error("independence range check needs at least {need} replicates, got {got}")]
    NotEnoughReplicates { got: usize, need: usize },
    #[error("replicate {index} does not share the common initial pattern")]
    MixedInitialPatterns { index: usize },
    #[error("window too small for the range check: maximal cube separation {max_sep:.2} <= 2K*omega = {needed:.2}")]
    WindowTooSmall { max_sep: f64, needed: f64 },
    #[error("point counts in cube {0:?} are degenerate (zero variance) over the replicates")]
    DegenerateCounts(LatticePoint),
    #[error("covariate grid is empty or irregular")]
    BadCovariateGrid,
}

/// Generation label of a point inside one pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointLabel {
    Initial,
    Survivor,
    Offspring,
    Immigrant,
}

impl PointLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            PointLabel::Initial => "initial",
            PointLabel::Survivor => "survivor",
            PointLabel::Offspring => "offspring",
            PointLabel::Immigrant => "immigrant",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "initial" => Some(PointLabel::Initial),
            "survivor" => Some(PointLabel::Survivor),
            "offspring" => Some(PointLabel::Offspring),
            "immigrant" => Some(PointLabel::Immigrant),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BdPoint {
    pub id: u64,
    pub parent: Option<u64>,
    pub x: f64,
    pub y: f64,
    pub birth_time: u32,
    pub label: PointLabel,
}

/// A finite planar point set, kept sorted by id so that every iteration over
/// it is deterministic.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointPattern {
    points: Vec<BdPoint>,
}

impl PointPattern {
    pub fn new(mut points: Vec<BdPoint>) -> Self {
        points.sort_by_key(|p| p.id);
        PointPattern { points }
    }

    pub fn empty() -> Self {
        PointPattern { points: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[BdPoint] {
        &self.points
    }

    pub fn max_id(&self) -> Option<u64> {
        self.points.iter().map(|p| p.id).max()
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.points.iter().map(|p| p.id)
    }

    /// Points lying in the closed unit cube centered at `center`.
    pub fn count_in_unit_cube(&self, center: &LatticePoint) -> usize {
        let cx = center.0[0] as f64;
        let cy = center.0[1] as f64;
        self.points
            .iter()
            .filter(|p| (p.x - cx).abs() <= 0.5 && (p.y - cy).abs() <= 0.5)
            .count()
    }
}

/// Deterministic covariate field `Z(v)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariate {
    Constant(f64),
    /// `Z(x, y) = intercept + gx * x + gy * y`
    Linear { intercept: f64, gx: f64, gy: f64 },
    Grid(CovariateGrid),
}

impl Covariate {
    pub fn value(&self, x: f64, y: f64) -> f64 {
        match self {
            Covariate::Constant(c) => *c,
            Covariate::Linear { intercept, gx, gy } => intercept + gx * x + gy * y,
            Covariate::Grid(g) => g.nearest(x, y),
        }
    }
}

/// Regular-grid covariate with nearest-cell lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateGrid {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// row-major over (x index, y index)
    values: Vec<f64>,
}

impl CovariateGrid {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>, values: Vec<f64>) -> Result<Self, BdError> {
        if xs.is_empty() || ys.is_empty() || values.len() != xs.len() * ys.len() {
            return Err(BdError::BadCovariateGrid);
        }
        Ok(CovariateGrid { xs, ys, values })
    }

    /// Builds a grid from scattered (x, y, z) triples on a regular lattice.
    pub fn from_triples(mut triples: Vec<(f64, f64, f64)>) -> Result<Self, BdError> {
        if triples.is_empty() {
            return Err(BdError::BadCovariateGrid);
        }
        triples.sort_by(|a, b| (a.0, a.1).partial_cmp(&(b.0, b.1)).unwrap());
        let mut xs: Vec<f64> = Vec::new();
        let mut ys: Vec<f64> = Vec::new();
        for &(x, y, _) in &triples {
            if xs.last().map_or(true, |&last| last < x) {
                xs.push(x);
            }
            if !ys.contains(&y) {
                ys.push(y);
            }
        }
        ys.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if triples.len() != xs.len() * ys.len() {
            return Err(BdError::BadCovariateGrid);
        }
        let mut values = vec![f64::NAN; triples.len()];
        for (x, y, z) in triples {
            let ix = xs.iter().position(|&v| v == x).unwrap();
            let iy = ys.iter().position(|&v| v == y).unwrap();
            values[ix * ys.len() + iy] = z;
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(BdError::BadCovariateGrid);
        }
        Ok(CovariateGrid { xs, ys, values })
    }

    fn nearest_index(grid: &[f64], v: f64) -> usize {
        match grid.binary_search_by(|p| p.partial_cmp(&v).unwrap()) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) if i == grid.len() => grid.len() - 1,
            Err(i) => {
                if (v - grid[i - 1]).abs() <= (grid[i] - v).abs() {
                    i - 1
                } else {
                    i
                }
            }
        }
    }

    pub fn nearest(&self, x: f64, y: f64) -> f64 {
        let ix = Self::nearest_index(&self.xs, x);
        let iy = Self::nearest_index(&self.ys, y);
        self.values[ix * self.ys.len() + iy]
    }
}

/// Model parameters for the birth-death process.
#[derive(Debug, Clone)]
pub struct BdSpec {
    /// Observation window `W` (planar).
    pub window: Window,
    /// The simulation region is `W` dilated by `buffer_factor * omega * K`.
    pub buffer_factor: f64,
    /// Euclidean disc radius of the offspring clusters.
    pub omega: f64,
    /// Offspring intensity per unit area on the disc.
    pub alpha_b: f64,
    /// Immigrant intensity per unit area.
    pub rho: f64,
    /// Logistic survival coefficients `(theta_s0, theta_s1)`.
    pub surv: (f64, f64),
    pub covariate: Covariate,
    /// Horizon `K`.
    pub horizon: usize,
    /// Subcells per axis for cube integrals.
    pub quadrature: usize,
}

/// Parameters the score is evaluated at: `(log alpha_b, theta_s0, theta_s1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BdTheta {
    pub log_alpha_b: f64,
    pub s0: f64,
    pub s1: f64,
}

impl BdTheta {
    pub fn as_array(&self) -> [f64; 3] {
        [self.log_alpha_b, self.s0, self.s1]
    }

    pub fn from_slice(s: &[f64]) -> Self {
        BdTheta { log_alpha_b: s[0], s0: s[1], s1: s[2] }
    }
}

fn logistic(eta: f64) -> f64 {
    1.0 / (1.0 + (-eta).exp())
}

/// Linear predictor bound beyond which the survival probability is flagged
/// as degenerate (logistic(30) is within 1e-13 of 1).
const SURVIVAL_ETA_BOUND: f64 = 30.0;

/// A validated spec with its buffered simulation region and window cover.
#[derive(Debug, Clone)]
pub struct ValidBdSpec {
    spec: BdSpec,
    region: Window,
    cover: Lattice,
}

pub fn validate_bd(spec: BdSpec) -> Result<ValidBdSpec, Vec<BdError>> {
    let mut errors = Vec::new();
    if spec.window.dim() != 2 {
        errors.push(BdError::NotPlanar(spec.window.dim()));
        return Err(errors);
    }
    if !(spec.omega > 0.0) {
        errors.push(BdError::OmegaNonPositive(spec.omega));
    }
    if spec.alpha_b < 0.0 {
        errors.push(BdError::NegativeRate { name: "alpha_b", value: spec.alpha_b });
    }
    if spec.rho < 0.0 {
        errors.push(BdError::NegativeRate { name: "rho", value: spec.rho });
    }
    if spec.buffer_factor < 0.0 {
        errors.push(BdError::NegativeBuffer(spec.buffer_factor));
    }
    if spec.quadrature < 4 {
        errors.push(BdError::QuadratureTooSmall(spec.quadrature));
    }
    if spec.horizon == 0 {
        errors.push(BdError::ZeroHorizon);
    }
    if !errors.is_empty() {
        return Err(errors);
    }

    let margin = spec.buffer_factor * spec.omega * spec.horizon as f64;
    let region = spec.window.dilate(margin).expect("window stays nonempty");

    // survival probability must stay inside (0,1) across the region
    let samples = 33;
    'outer: for i in 0..=samples {
        for j in 0..=samples {
            let x = region.lower()[0]
                + (region.upper()[0] - region.lower()[0]) * i as f64 / samples as f64;
            let y = region.lower()[1]
                + (region.upper()[1] - region.lower()[1]) * j as f64 / samples as f64;
            let eta = spec.surv.0 + spec.surv.1 * spec.covariate.value(x, y);
            if !eta.is_finite() || eta.abs() > SURVIVAL_ETA_BOUND {
                errors.push(BdError::SurvivalDegenerate { x, y, eta });
                break 'outer;
            }
        }
    }
    if !errors.is_empty() {
        return Err(errors);
    }

    let cover = cover_window(&spec.window);
    Ok(ValidBdSpec { spec, region, cover })
}

impl ValidBdSpec {
    pub fn spec(&self) -> &BdSpec {
        &self.spec
    }

    /// Buffered simulation region.
    pub fn region(&self) -> &Window {
        &self.region
    }

    /// Cubes covering the observation window, in lattice order.
    pub fn window_cover(&self) -> &Lattice {
        &self.cover
    }

    pub fn survival_prob(&self, x: f64, y: f64) -> f64 {
        logistic(self.spec.surv.0 + self.spec.surv.1 * self.spec.covariate.value(x, y))
    }

    /// The generating parameters in score coordinates.
    pub fn generating_theta(&self) -> BdTheta {
        BdTheta {
            log_alpha_b: self.spec.alpha_b.ln(),
            s0: self.spec.surv.0,
            s1: self.spec.surv.1,
        }
    }

    pub fn check_inside_region(&self, pattern: &PointPattern) -> Result<(), BdError> {
        for p in pattern.points() {
            if !self.region.contains(&[p.x, p.y]) {
                return Err(BdError::PointOutsideRegion { id: p.id, x: p.x, y: p.y });
            }
        }
        Ok(())
    }

    /// Homogeneous Poisson initial pattern of the given intensity on the
    /// buffered region.
    pub fn sample_initial(&self, intensity: f64, stream: &RngStream) -> PointPattern {
        let mut rng = stream.with_tag(StreamTag::Init).rng();
        let area = self.region.volume();
        let n = sample_poisson(&mut rng, intensity * area);
        let (lo, hi) = (self.region.lower().to_vec(), self.region.upper().to_vec());
        let mut points = Vec::with_capacity(n);
        for id in 0..n {
            let x = lo[0] + rng.gen::<f64>() * (hi[0] - lo[0]);
            let y = lo[1] + rng.gen::<f64>() * (hi[1] - lo[1]);
            points.push(BdPoint {
                id: id as u64,
                parent: None,
                x,
                y,
                birth_time: 0,
                label: PointLabel::Initial,
            });
        }
        PointPattern::new(points)
    }
}

fn sample_poisson<R: Rng>(rng: &mut R, mean: f64) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    let dist = Poisson::new(mean).expect("positive finite mean");
    dist.sample(rng) as usize
}

/// Uniform grid over point indices used for disc-range queries; rebuilt per
/// generation, immutable afterwards.
pub(crate) struct GridIndex {
    cell: f64,
    map: HashMap<(i64, i64), Vec<usize>>,
}

impl GridIndex {
    pub(crate) fn build(points: &[BdPoint], cell: f64) -> Self {
        let mut map: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            let key = ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64);
            map.entry(key).or_default().push(i);
        }
        GridIndex { cell, map }
    }

    /// Indices of points within Chebyshev distance `radius` of `(x, y)`,
    /// in ascending index order.
    pub(crate) fn chebyshev_candidates(&self, x: f64, y: f64, radius: f64) -> Vec<usize> {
        let r = (radius / self.cell).ceil() as i64 + 1;
        let cx = (x / self.cell).floor() as i64;
        let cy = (y / self.cell).floor() as i64;
        let mut out = Vec::new();
        for dx in -r..=r {
            for dy in -r..=r {
                if let Some(v) = self.map.get(&(cx + dx, cy + dy)) {
                    out.extend_from_slice(v);
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// Number of parents whose disc covers `(x, y)`: Euclidean distance
/// at most `omega`, counted over the full slice.
fn count_covering(parents: &[BdPoint], idx: &GridIndex, x: f64, y: f64, omega: f64) -> usize {
    idx.chebyshev_candidates(x, y, omega)
        .into_iter()
        .filter(|&i| {
            let p = &parents[i];
            (p.x - x).powi(2) + (p.y - y).powi(2) <= omega * omega
        })
        .count()
}

/// Conditional birth intensity `rho + alpha_b * #\{u in xPrev: |v-u| <= omega\}`.
pub fn birth_intensity(spec: &ValidBdSpec, x_prev: &PointPattern, v: (f64, f64)) -> f64 {
    let omega = spec.spec.omega;
    let n = x_prev
        .points()
        .iter()
        .filter(|p| (p.x - v.0).powi(2) + (p.y - v.1).powi(2) <= omega * omega)
        .count();
    spec.spec.rho + spec.spec.alpha_b * n as f64
}

/// Midpoint-rule quadrature of the disc indicator over a unit cube: the
/// fraction of the `G x G` subcell centers lying within Euclidean distance
/// `omega` of `u`, as an area. Worst-case relative error on boundary-crossing
/// cells is O(1/G).
pub fn cube_disc_overlap(
    spec: &ValidBdSpec,
    cube: &CubeRegion,
    u: (f64, f64),
) -> Result<f64, BdError> {
    if (cube.side - 1.0).abs() > 1e-12 {
        return Err(BdError::NonUnitCube(cube.side));
    }
    let g = spec.spec.quadrature;
    let cx = cube.center.0[0] as f64;
    let cy = cube.center.0[1] as f64;
    Ok(unit_cube_disc_overlap(cx, cy, u.0, u.1, spec.spec.omega, g))
}

/// Shared kernel: counts subcell centers inside the disc row by row. Each
/// row reduces to an index interval computed from the disc's half-width,
/// then the interval ends are verified against the exact predicate so the
/// result is bit-identical to the naive double loop.
fn unit_cube_disc_overlap(cx: f64, cy: f64, ux: f64, uy: f64, omega: f64, g: usize) -> f64 {
    let lo_x = cx - 0.5;
    let lo_y = cy - 0.5;
    let step = 1.0 / g as f64;
    let omega2 = omega * omega;
    let inside = |i: i64, dy2: f64| -> bool {
        if i < 0 || i >= g as i64 {
            return false;
        }
        let x = lo_x + (i as f64 + 0.5) * step;
        let dx = x - ux;
        dx * dx + dy2 <= omega2
    };
    let mut count: u64 = 0;
    for row in 0..g {
        let y = lo_y + (row as f64 + 0.5) * step;
        let dy = y - uy;
        let dy2 = dy * dy;
        if dy2 > omega2 {
            continue;
        }
        let half = (omega2 - dy2).sqrt();
        // candidate index interval for |x - ux| <= half
        let mut i_min = ((ux - half - lo_x) / step - 0.5).ceil() as i64;
        let mut i_max = ((ux + half - lo_x) / step - 0.5).floor() as i64;
        // exact-predicate fixup for sqrt rounding at the interval ends
        while inside(i_min - 1, dy2) {
            i_min -= 1;
        }
        while i_min <= i_max && !inside(i_min, dy2) {
            i_min += 1;
        }
        while inside(i_max + 1, dy2) {
            i_max += 1;
        }
        while i_max >= i_min && !inside(i_max, dy2) {
            i_max -= 1;
        }
        let lo = i_min.clamp(0, g as i64);
        let hi = i_max.min(g as i64 - 1);
        if hi >= lo {
            count += (hi - lo + 1) as u64;
        }
    }
    count as f64 * step * step
}

/// One full trajectory: the initial pattern and `K` generations.
#[derive(Debug, Clone, PartialEq)]
pub struct BdPath {
    pub x0: PointPattern,
    pub generations: Vec<PointPattern>,
}

impl BdPath {
    pub fn horizon(&self) -> usize {
        self.generations.len()
    }

    /// Pattern at generation `k` (0 = initial).
    pub fn generation(&self, k: usize) -> &PointPattern {
        if k == 0 {
            &self.x0
        } else {
            &self.generations[k - 1]
        }
    }
}

/// Advances one generation. Survivors keep their ids; offspring and
/// immigrants get fresh ids above every id seen in `x_prev`.
pub fn simulate_step(
    spec: &ValidBdSpec,
    x_prev: &PointPattern,
    k: usize,
    stream: &RngStream,
) -> Result<PointPattern, BdError> {
    spec.check_inside_region(x_prev)?;
    let step_stream = stream.child(k as u64);
    let mut next_id = x_prev.max_id().map_or(0, |m| m + 1);
    let mut points: Vec<BdPoint> = Vec::new();

    // survivors, in id order
    let mut survival_rng = step_stream.with_tag(StreamTag::Survival).rng();
    for p in x_prev.points() {
        let keep = survival_rng.gen::<f64>() < spec.survival_prob(p.x, p.y);
        if keep {
            let mut q = p.clone();
            q.label = PointLabel::Survivor;
            points.push(q);
        }
    }

    // offspring clusters, parents in id order
    let mean_offspring = spec.spec.alpha_b * std::f64::consts::PI * spec.spec.omega.powi(2);
    let mut count_rng = step_stream.with_tag(StreamTag::OffspringCount).rng();
    let mut loc_rng = step_stream.with_tag(StreamTag::OffspringLocation).rng();
    for p in x_prev.points() {
        let n = sample_poisson(&mut count_rng, mean_offspring);
        for _ in 0..n {
            let radius = spec.spec.omega * loc_rng.gen::<f64>().sqrt();
            let angle = 2.0 * std::f64::consts::PI * loc_rng.gen::<f64>();
            let x = p.x + radius * angle.cos();
            let y = p.y + radius * angle.sin();
            // offspring falling outside the buffered region are clipped away
            if spec.region.contains(&[x, y]) {
                points.push(BdPoint {
                    id: next_id,
                    parent: Some(p.id),
                    x,
                    y,
                    birth_time: k as u32,
                    label: PointLabel::Offspring,
                });
                next_id += 1;
            }
        }
    }

    // immigrants
    let mut imm_rng = step_stream.with_tag(StreamTag::Immigrant).rng();
    let n_imm = sample_poisson(&mut imm_rng, spec.spec.rho * spec.region.volume());
    let (lo, hi) = (spec.region.lower(), spec.region.upper());
    for _ in 0..n_imm {
        let x = lo[0] + imm_rng.gen::<f64>() * (hi[0] - lo[0]);
        let y = lo[1] + imm_rng.gen::<f64>() * (hi[1] - lo[1]);
        points.push(BdPoint {
            id: next_id,
            parent: None,
            x,
            y,
            birth_time: k as u32,
            label: PointLabel::Immigrant,
        });
        next_id += 1;
    }

    Ok(PointPattern::new(points))
}

/// Simulates the full horizon from `x0`.
pub fn simulate_path(
    spec: &ValidBdSpec,
    x0: &PointPattern,
    stream: &RngStream,
) -> Result<BdPath, BdError> {
    let mut generations = Vec::with_capacity(spec.spec.horizon);
    let mut current = x0.clone();
    for k in 1..=spec.spec.horizon {
        current = simulate_step(spec, &current, k, stream)?;
        generations.push(current.clone());
    }
    Ok(BdPath { x0: x0.clone(), generations })
}

/// Per-cube likelihood score contributions, q = 3:
/// component 0 is the birth score in `log alpha_b`, components 1 and 2 the
/// logistic survival score in `(theta_s0, theta_s1)`.
pub fn score_field(
    spec: &ValidBdSpec,
    path: &BdPath,
    theta: &BdTheta,
) -> Result<ScoreField, BdError> {
    let cover = spec.window_cover();
    let cube_index: HashMap<&LatticePoint, usize> =
        cover.points().iter().enumerate().map(|(i, p)| (p, i)).collect();
    let omega = spec.spec.omega;
    let rho = spec.spec.rho;
    let alpha = theta.log_alpha_b.exp();
    let horizon = path.horizon();
    let mut field = ScoreField::zeroed(horizon, cover.len(), 3);

    for k in 1..=horizon {
        let parents = path.generation(k - 1);
        let current = path.generation(k);
        let parent_idx = GridIndex::build(parents.points(), omega.max(0.25));
        let survivor_ids: HashSet<u64> = current
            .points()
            .iter()
            .filter(|p| p.label == PointLabel::Survivor)
            .map(|p| p.id)
            .collect();

        // birth terms at observed births, in id order
        for p in current.points() {
            if !matches!(p.label, PointLabel::Offspring | PointLabel::Immigrant) {
                continue;
            }
            let Some(cube) = cube_of(&cube_index, p.x, p.y) else { continue };
            let n_cov = count_covering(parents.points(), &parent_idx, p.x, p.y, omega);
            let lambda = rho + alpha * n_cov as f64;
            if lambda <= 0.0 {
                return Err(BdError::ModelInconsistency { k, id: p.id });
            }
            field.value_mut(k, cube)[0] += alpha * n_cov as f64 / lambda;
        }

        // integral compensator: each parent meets the cubes within omega of
        // its disc; parents iterate in id order so per-cube accumulation
        // order is reproducible
        let reach = omega + 0.5;
        for p in parents.points() {
            let lx = (p.x - reach).ceil() as i64;
            let ux = (p.x + reach).floor() as i64;
            let ly = (p.y - reach).ceil() as i64;
            let uy = (p.y + reach).floor() as i64;
            for cx in lx..=ux {
                for cy in ly..=uy {
                    let center = LatticePoint(vec![cx, cy]);
                    let Some(&cube) = cube_index.get(&center) else { continue };
                    let overlap =
                        unit_cube_disc_overlap(cx as f64, cy as f64, p.x, p.y, omega, spec.spec.quadrature);
                    if overlap > 0.0 {
                        field.value_mut(k, cube)[0] -= alpha * overlap;
                    }
                }
            }
        }

        // survival score over previous-generation points, in id order
        for p in parents.points() {
            let Some(cube) = cube_of(&cube_index, p.x, p.y) else { continue };
            let z = spec.spec.covariate.value(p.x, p.y);
            let prob = logistic(theta.s0 + theta.s1 * z);
            let s = if survivor_ids.contains(&p.id) { 1.0 } else { 0.0 };
            let e = field.value_mut(k, cube);
            e[1] += s - prob;
            e[2] += (s - prob) * z;
        }
    }
    Ok(field)
}

/// Assigns a point to the cube of its rounded coordinates; `None` when that
/// cube is outside the window cover. Ties at half-integers round away from
/// zero, matching `f64::round`.
fn cube_of(index: &HashMap<&LatticePoint, usize>, x: f64, y: f64) -> Option<usize> {
    let center = LatticePoint(vec![x.round() as i64, y.round() as i64]);
    index.get(&center).copied()
}

/// Correlation of point counts in one cube pair over the replicates.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PairCorr {
    pub cube_a: LatticePoint,
    pub cube_b: LatticePoint,
    /// Chebyshev set distance between the two closed cubes.
    pub separation: f64,
    pub corr: f64,
    /// 4-standard-error band around zero under independence.
    pub band: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct RangeCheckReport {
    pub replicates: usize,
    /// Pair beyond the `2 K omega` independence range.
    pub far: PairCorr,
    /// Positive-control pair within interaction range.
    pub near: PairCorr,
    pub self_corr: f64,
    pub far_independent: bool,
    pub near_dependent: bool,
}

const RANGE_CHECK_MIN_REPLICATES: usize = 500;

fn pair_corr(
    paths: &[BdPath],
    k: usize,
    a: &LatticePoint,
    b: &LatticePoint,
) -> Result<(f64, f64), BdError> {
    let n = paths.len() as f64;
    let counts: Vec<(f64, f64)> = paths
        .iter()
        .map(|p| {
            let g = p.generation(k);
            (g.count_in_unit_cube(a) as f64, g.count_in_unit_cube(b) as f64)
        })
        .collect();
    let ma = counts.iter().map(|c| c.0).sum::<f64>() / n;
    let mb = counts.iter().map(|c| c.1).sum::<f64>() / n;
    let mut va = 0.0;
    let mut vb = 0.0;
    let mut cab = 0.0;
    for (x, y) in &counts {
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
        cab += (x - ma) * (y - mb);
    }
    if va == 0.0 {
        return Err(BdError::DegenerateCounts(a.clone()));
    }
    if vb == 0.0 {
        return Err(BdError::DegenerateCounts(b.clone()));
    }
    Ok((cab / (va.sqrt() * vb.sqrt()), 4.0 / n.sqrt()))
}

fn cube_set_distance(a: &LatticePoint, b: &LatticePoint) -> f64 {
    let d = crate::lattice::chebyshev_dist_points(a, b);
    (d - 1.0).max(0.0)
}

/// Empirical check of the `d(A, B) > 2 K omega` independence range at the
/// final generation: a far cube pair must show correlation within a 4-SE
/// band of zero, and a near pair (the positive control) must exceed it.
pub fn independence_range_check(
    spec: &ValidBdSpec,
    paths: &[BdPath],
) -> Result<RangeCheckReport, BdError> {
    if paths.len() < RANGE_CHECK_MIN_REPLICATES {
        return Err(BdError::NotEnoughReplicates {
            got: paths.len(),
            need: RANGE_CHECK_MIN_REPLICATES,
        });
    }
    for (index, p) in paths.iter().enumerate() {
        if p.x0 != paths[0].x0 {
            return Err(BdError::MixedInitialPatterns { index });
        }
    }
    let k = spec.spec.horizon;
    let needed = 2.0 * k as f64 * spec.spec.omega;
    let cover = spec.window_cover();
    // far pair: opposite corners along x in the middle row
    let ys: Vec<i64> = cover.points().iter().map(|p| p.0[1]).collect();
    let xs: Vec<i64> = cover.points().iter().map(|p| p.0[0]).collect();
    let y_mid = ys[ys.len() / 2];
    let x_min = *xs.iter().min().unwrap();
    let x_max = *xs.iter().max().unwrap();
    let far_a = LatticePoint(vec![x_min, y_mid]);
    let far_b = LatticePoint(vec![x_max, y_mid]);
    let max_sep = cube_set_distance(&far_a, &far_b);
    if max_sep <= needed {
        return Err(BdError::WindowTooSmall { max_sep, needed });
    }
    // near pair at the window center: set distance 1 when 2*omega > 1,
    // adjacent cubes otherwise
    let x_c = (x_min + x_max) / 2;
    let near_gap: i64 = if 2.0 * spec.spec.omega > 1.0 { 2 } else { 1 };
    let near_a = LatticePoint(vec![x_c, y_mid]);
    let near_b = LatticePoint(vec![x_c + near_gap, y_mid]);

    let (far_corr, band) = pair_corr(paths, k, &far_a, &far_b)?;
    let (near_corr, _) = pair_corr(paths, k, &near_a, &near_b)?;
    let (self_corr, _) = pair_corr(paths, k, &far_a, &far_a)?;

    Ok(RangeCheckReport {
        replicates: paths.len(),
        far: PairCorr {
            cube_a: far_a.clone(),
            cube_b: far_b,
            separation: max_sep,
            corr: far_corr,
            band,
        },
        near: PairCorr {
            cube_a: near_a.clone(),
            cube_b: near_b,
            separation: cube_set_distance(&near_a, &LatticePoint(vec![x_c + near_gap, y_mid])),
            corr: near_corr,
            band,
        },
        self_corr,
        far_independent: far_corr.abs() <= band,
        near_dependent: near_corr.abs() > band,
    })
}

/// Fraction of replicates whose final generation is empty (soft diagnostic,
/// reported rather than asserted).
pub fn extinction_fraction(paths: &[BdPath]) -> f64 {
    if paths.is_empty() {
        return 0.0;
    }
    let empty = paths
        .iter()
        .filter(|p| p.generation(p.horizon()).is_empty())
        .count();
    empty as f64 / paths.len() as f64
}
