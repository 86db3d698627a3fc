//! Pseudo-likelihood score for the conditional autoregression, the summed
//! statistic `T`, its analytic covariance, and parameter estimation by
//! solving the estimating equations.
//!
//! Each node/time contribution is `E_k(l) = eps_k(l) * (xi_temp(l), xi_spat(l))`
//! with residual `eps_k = Q (X_k - beta xi_temp)`. The model text also writes
//! `eps ~ Q^{-1/2} Z`, but only the `Q (X - beta xi_temp)` reading reproduces
//! the covariance identities (`lambda^(2) = 2 K trace(B_0^2)` and the
//! `Q^{1/2} B_0 Q^{-1/2}` quadratic form), so that reading is implemented
//! throughout.

use nalgebra::{DMatrix, DVector};
use std::sync::OnceLock;
use thiserror::Error;

use crate::car::{CarError, CarPath, ValidCarSpec};
use crate::numerics::newton::{self, NewtonError, NewtonOptions, NewtonTraceEntry};
use crate::numerics::{cholesky, spd_inv_sqrt, NumericsError, SymMatrix};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("time {k} out of range 1..={horizon}")]
    TimeOutOfRange { k: usize, horizon: usize },
    #[error("path state has {got} nodes, spec has {expected}")]
    NodeMismatch { got: usize, expected: usize },
    #[error("precision not positive definite at gamma={gamma}: pivot {pivot}")]
    PrecisionNotSpd { gamma: f64, pivot: usize },
    #[error("score field contains a non-finite entry at (k={k}, node={node})")]
    NonFinite { k: usize, node: usize },
    #[error("unstable spec refused: companion spectral radius {radius:.4} >= 1")]
    Unstable { radius: f64 },
    #[error(transparent)]
    Car(#[from] CarError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// The array of q-dimensional conditionally centered contributions
/// `E_k(l)` for one realized path, stored k-major then node-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreField {
    horizon: usize,
    nodes: usize,
    components: usize,
    values: Vec<f64>,
}

impl ScoreField {
    pub fn zeroed(horizon: usize, nodes: usize, components: usize) -> Self {
        ScoreField {
            horizon,
            nodes,
            components,
            values: vec![0.0; horizon * nodes * components],
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn components(&self) -> usize {
        self.components
    }

    fn offset(&self, k: usize, node: usize) -> usize {
        debug_assert!((1..=self.horizon).contains(&k));
        ((k - 1) * self.nodes + node) * self.components
    }

    /// Contribution vector at time `k` (1-based) and node index `node`.
    pub fn value(&self, k: usize, node: usize) -> &[f64] {
        let o = self.offset(k, node);
        &self.values[o..o + self.components]
    }

    pub fn value_mut(&mut self, k: usize, node: usize) -> &mut [f64] {
        let o = self.offset(k, node);
        &mut self.values[o..o + self.components]
    }

    /// Sum over the lattice at time `k`, in lattice order.
    pub fn per_step_sum(&self, k: usize) -> Vec<f64> {
        let mut acc = vec![0.0; self.components];
        for node in 0..self.nodes {
            let v = self.value(k, node);
            for (a, x) in acc.iter_mut().zip(v) {
                *a += x;
            }
        }
        acc
    }

    pub fn ensure_finite(&self) -> Result<(), ScoreError> {
        for k in 1..=self.horizon {
            for node in 0..self.nodes {
                if self.value(k, node).iter().any(|v| !v.is_finite()) {
                    return Err(ScoreError::NonFinite { k, node });
                }
            }
        }
        Ok(())
    }
}

/// `T = sum_k sum_l E_k(l)`, accumulated k-major with the lattice order as
/// the inner fold, so the result is bit-stable across runs.
pub fn score_total(field: &ScoreField) -> DVector<f64> {
    let mut acc = vec![0.0; field.components()];
    for k in 1..=field.horizon() {
        let step = field.per_step_sum(k);
        for (a, x) in acc.iter_mut().zip(&step) {
            *a += x;
        }
    }
    DVector::from_vec(acc)
}

/// Where a covariance matrix came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaProvenance {
    Analytic,
    ReplicateEstimated,
}

/// Eigenvalues may dip this far below zero (relative to the largest) before
/// a replicate-estimated sigma is rejected.
const PSD_NOISE_TOL: f64 = 1e-10;

/// The q x q covariance of `T`, with its symmetric inverse square root
/// computed lazily on first use.
#[derive(Debug)]
pub struct SigmaMatrix {
    matrix: SymMatrix,
    provenance: SigmaProvenance,
    inv_sqrt: OnceLock<Result<SymMatrix, String>>,
}

impl Clone for SigmaMatrix {
    fn clone(&self) -> Self {
        SigmaMatrix {
            matrix: self.matrix.clone(),
            provenance: self.provenance,
            inv_sqrt: OnceLock::new(),
        }
    }
}

impl SigmaMatrix {
    pub fn new(matrix: SymMatrix, provenance: SigmaProvenance) -> Result<Self, NumericsError> {
        let n = matrix.order();
        let eig = nalgebra::SymmetricEigen::try_new(matrix.as_matrix().clone(), 1e-12, 100 * n)
            .ok_or(NumericsError::Convergence { max_iter: 100 * n })?;
        let scale = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
        for (index, &ev) in eig.eigenvalues.iter().enumerate() {
            if ev < -PSD_NOISE_TOL * scale {
                return Err(NumericsError::NumericallySingular { index, value: ev });
            }
        }
        Ok(SigmaMatrix {
            matrix,
            provenance,
            inv_sqrt: OnceLock::new(),
        })
    }

    pub fn from_diagonal(diag: &[f64], provenance: SigmaProvenance) -> Result<Self, NumericsError> {
        Self::new(
            SymMatrix::from_diagonal(&DVector::from_row_slice(diag)),
            provenance,
        )
    }

    pub fn order(&self) -> usize {
        self.matrix.order()
    }

    pub fn provenance(&self) -> SigmaProvenance {
        self.provenance
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        self.matrix.as_matrix()
    }

    /// Symmetric inverse square root, cached after the first call.
    pub fn inv_sqrt(&self) -> Result<&SymMatrix, NumericsError> {
        let computed = self
            .inv_sqrt
            .get_or_init(|| spd_inv_sqrt(&self.matrix).map_err(|e| e.to_string()));
        match computed {
            Ok(s) => Ok(s),
            Err(msg) => Err(NumericsError::SingularSigma(msg.clone())),
        }
    }
}

/// Temporal drift `xi_temp(k-1) = sum_j B_j X_{k-j}` with zero padding
/// before time 0; `k` is 1-based.
pub fn xi_temp(spec: &ValidCarSpec, path: &CarPath, k: usize) -> Result<DVector<f64>, ScoreError> {
    check_path(spec, path, k)?;
    let n = spec.n();
    let mut xi = DVector::<f64>::zeros(n);
    for j in 1..=spec.temporal_order() {
        let t = k as isize - j as isize;
        if let Some(x) = path.state_at(t) {
            xi += &spec.spec().b[j] * x;
        }
    }
    Ok(xi)
}

/// Spatial residual field `xi_spat(k) = B_0 (X_k - beta xi_temp)` evaluated
/// at an arbitrary `beta` (the value being scored need not equal the
/// generating one).
pub fn xi_spat_at(
    spec: &ValidCarSpec,
    path: &CarPath,
    k: usize,
    beta: f64,
) -> Result<DVector<f64>, ScoreError> {
    let xi = xi_temp(spec, path, k)?;
    let x = path.state_at(k as isize).expect("checked by xi_temp");
    Ok(&spec.spec().b[0] * (x - xi * beta))
}

/// `xi_spat` at the spec's own beta.
pub fn xi_spat(spec: &ValidCarSpec, path: &CarPath, k: usize) -> Result<DVector<f64>, ScoreError> {
    xi_spat_at(spec, path, k, spec.beta())
}

/// Residual `eps_k = Q (X_k - beta xi_temp)` at the spec's own parameters.
pub fn residual(spec: &ValidCarSpec, path: &CarPath, k: usize) -> Result<DVector<f64>, ScoreError> {
    let xi = xi_temp(spec, path, k)?;
    let x = path.state_at(k as isize).expect("checked by xi_temp");
    Ok(spec.precision().as_matrix() * (x - xi * spec.beta()))
}

fn check_path(spec: &ValidCarSpec, path: &CarPath, k: usize) -> Result<(), ScoreError> {
    if path.x0.len() != spec.n() {
        return Err(ScoreError::NodeMismatch {
            got: path.x0.len(),
            expected: spec.n(),
        });
    }
    if k == 0 || k > path.horizon() {
        return Err(ScoreError::TimeOutOfRange {
            k,
            horizon: path.horizon(),
        });
    }
    Ok(())
}

/// Precision matrix at a trial gamma: `Q(gamma) = A (I - gamma B_0)`.
/// Fails when the trial point leaves the positive-definite region.
pub fn precision_at(spec: &ValidCarSpec, gamma: f64) -> Result<SymMatrix, ScoreError> {
    let n = spec.n();
    let a = DMatrix::from_diagonal(&spec.spec().a);
    let q = &a * (DMatrix::identity(n, n) - &spec.spec().b[0] * gamma);
    let sym = SymMatrix::with_tolerance((&q + q.transpose()) * 0.5, 1.0).expect("square");
    match cholesky(&sym) {
        Ok(_) => Ok(sym),
        Err(NumericsError::NotSpd { pivot, .. }) => {
            Err(ScoreError::PrecisionNotSpd { gamma, pivot })
        }
        Err(e) => Err(ScoreError::Numerics(e)),
    }
}

/// All contributions `E_k(l)` for a path, evaluated at the supplied
/// `(beta, gamma)` (gamma enters only through the precision inside the
/// residual). q = 2: component 0 pairs the residual with `xi_temp`,
/// component 1 with `xi_spat`.
pub fn score_field(
    spec: &ValidCarSpec,
    path: &CarPath,
    beta: f64,
    gamma: f64,
) -> Result<ScoreField, ScoreError> {
    check_path(spec, path, 1)?;
    let q = precision_at(spec, gamma)?;
    let n = spec.n();
    let horizon = path.horizon();
    let b0 = &spec.spec().b[0];
    let mut field = ScoreField::zeroed(horizon, n, 2);
    for k in 1..=horizon {
        let xi = xi_temp(spec, path, k)?;
        let x = path.state_at(k as isize).expect("in range");
        let centered = x - &xi * beta;
        let eps = q.as_matrix() * &centered;
        let xs = b0 * &centered;
        for node in 0..n {
            let e = field.value_mut(k, node);
            e[0] = eps[node] * xi[node];
            e[1] = eps[node] * xs[node];
        }
    }
    field.ensure_finite()?;
    Ok(field)
}

/// Analytic covariance of `T` together with its reported lower bound.
#[derive(Debug, Clone)]
pub struct SigmaAnalytic {
    pub sigma: SigmaMatrix,
    pub lambda1: f64,
    pub lambda2: f64,
    /// `K * trace(B_1^2)`, the printed lower bound for `lambda1`.
    pub lambda1_lower_bound: f64,
    pub bound_satisfied: bool,
}

/// `trace(M N)` as the literal double sum `sum_{l,j} M_lj N_jl`.
fn trace_product(m: &DMatrix<f64>, n_mat: &DMatrix<f64>) -> f64 {
    let mut acc = 0.0;
    for l in 0..m.nrows() {
        for j in 0..m.ncols() {
            acc += m[(l, j)] * n_mat[(j, l)];
        }
    }
    acc
}

/// `lambda1 = sum_k E[(xi_temp)' Q xi_temp]` computed by propagating the
/// mean and covariance of the companion state through the recursion. Valid
/// for every beta, including 0.
pub fn lambda1_via_recursion(spec: &ValidCarSpec, x0: &DVector<f64>, horizon: usize) -> f64 {
    let n = spec.n();
    let r = spec.temporal_order();
    let f = spec.companion_matrix();
    let q = spec.precision().as_matrix();
    let q_inv = spec.covariance();
    // G = [B_1 ... B_r] maps the companion state to xi_temp
    let mut g = DMatrix::<f64>::zeros(n, r * n);
    for j in 1..=r {
        g.view_mut((0, (j - 1) * n), (n, n)).copy_from(&spec.spec().b[j]);
    }
    // companion-state moments: W_0 = (x0, 0, ..., 0), P_0 = 0
    let mut mean = DVector::<f64>::zeros(r * n);
    mean.rows_mut(0, n).copy_from(x0);
    let mut cov = DMatrix::<f64>::zeros(r * n, r * n);
    let mut lambda1 = 0.0;
    for _k in 1..=horizon {
        // xi_temp(k-1) = G W_{k-1}
        let xi_mean = &g * &mean;
        let xi_cov = &g * &cov * g.transpose();
        lambda1 += trace_product(q, &xi_cov) + (xi_mean.transpose() * q * &xi_mean)[(0, 0)];
        // advance: W_k = F W_{k-1} + H Q^{-1/2} Z_k
        mean = &f * mean;
        let mut next = &f * cov * f.transpose();
        next.view_mut((0, 0), (n, n))
            .zip_apply(&q_inv, |c, qi| *c += qi);
        cov = next;
    }
    lambda1
}

/// `lambda1` by the printed propagator formula, requiring `beta != 0`:
/// `beta^2 lambda1 = sum_k [ sum_{j=1}^{k-1} trace(Q C_j Q^{-1} C_j') +
/// x0' C_k' Q C_k x0 ]`.
fn lambda1_via_propagators(spec: &ValidCarSpec, x0: &DVector<f64>, horizon: usize) -> f64 {
    let q = spec.precision().as_matrix();
    let q_inv = spec.covariance();
    let mut props = spec.propagators();
    let mut total = 0.0;
    // sum_k sum_{j=1}^{k-1} t_j rearranged as sum_j (K - j) t_j
    for j in 1..horizon {
        let cj = props.get(j);
        let t_j = trace_product(&(q * cj * &q_inv), &cj.transpose().into_owned());
        total += (horizon - j) as f64 * t_j;
    }
    for k in 1..=horizon {
        let y = props.get(k) * x0;
        total += (y.transpose() * q * &y)[(0, 0)];
    }
    total / (spec.beta() * spec.beta())
}

/// Diagonal analytic covariance `diag(lambda1, lambda2)` of `T` over `K`
/// steps conditional on `x0`, with `lambda2 = 2 K trace(B_0^2)`. Unstable
/// specs are refused.
pub fn sigma_analytic(
    spec: &ValidCarSpec,
    x0: &DVector<f64>,
    horizon: usize,
) -> Result<SigmaAnalytic, ScoreError> {
    if !spec.is_stable() {
        return Err(ScoreError::Unstable {
            radius: spec.companion_radius(),
        });
    }
    if x0.len() != spec.n() {
        return Err(ScoreError::NodeMismatch {
            got: x0.len(),
            expected: spec.n(),
        });
    }
    let b0 = &spec.spec().b[0];
    let b1 = &spec.spec().b[1];
    let lambda2 = 2.0 * horizon as f64 * trace_product(b0, b0);
    let lambda1 = if spec.beta() != 0.0 {
        lambda1_via_propagators(spec, x0, horizon)
    } else {
        lambda1_via_recursion(spec, x0, horizon)
    };
    let lower = horizon as f64 * trace_product(b1, b1);
    let sigma = SigmaMatrix::from_diagonal(&[lambda1, lambda2], SigmaProvenance::Analytic)?;
    Ok(SigmaAnalytic {
        sigma,
        lambda1,
        lambda2,
        lambda1_lower_bound: lower,
        bound_satisfied: lambda1 >= lower,
    })
}

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("score evaluation failed: {0}")]
    Score(#[from] ScoreError),
    #[error("estimating equations are degenerate: {0}")]
    SingularSystem(NewtonError),
    #[error("trial point left the SPD region and step halving failed: {0}")]
    LeftSpdRegion(NewtonError),
    #[error("no convergence: {0}")]
    NonConvergence(NewtonError),
}

impl EstimateError {
    pub fn newton_trace(&self) -> &[NewtonTraceEntry] {
        match self {
            EstimateError::Score(_) => &[],
            EstimateError::SingularSystem(e)
            | EstimateError::LeftSpdRegion(e)
            | EstimateError::NonConvergence(e) => e.trace(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Estimate {
    pub beta_hat: f64,
    pub gamma_hat: f64,
    pub iterations: usize,
    pub score_norm: f64,
    pub converged: bool,
    pub trace: Vec<NewtonTraceEntry>,
}

/// Solves `T(beta, gamma) = 0` by damped Newton with a central
/// finite-difference Jacobian. Convergence at
/// `||T||_inf <= 1e-8 * K * |D_n|` or an infinity-norm step below 1e-12;
/// trial gammas outside the SPD region trigger step halving (at most 30).
pub fn estimate_params(
    spec: &ValidCarSpec,
    path: &CarPath,
    init: (f64, f64),
) -> Result<Estimate, EstimateError> {
    let horizon = path.horizon();
    let scale = (horizon * spec.n()) as f64;
    let opts = NewtonOptions {
        residual_tol: 1e-8 * scale,
        ..NewtonOptions::default()
    };
    let f = |params: &[f64]| {
        let field =
            score_field(spec, path, params[0], params[1]).map_err(|e| e.to_string())?;
        Ok(score_total(&field))
    };
    // fail fast if the starting point is outside the SPD region
    precision_at(spec, init.1)?;
    match newton::solve(f, &[init.0, init.1], &opts) {
        Ok(res) => Ok(Estimate {
            beta_hat: res.params[0],
            gamma_hat: res.params[1],
            iterations: res.iterations,
            score_norm: res.residual_norm,
            converged: res.converged,
            trace: res.trace,
        }),
        Err(e @ NewtonError::SingularJacobian { .. })
        | Err(e @ NewtonError::JacobianEvaluation { .. }) => {
            Err(EstimateError::SingularSystem(e))
        }
        Err(e @ NewtonError::StepRejected { .. })
        | Err(e @ NewtonError::InitialEvaluation(_)) => Err(EstimateError::LeftSpdRegion(e)),
        Err(e @ NewtonError::MaxIterations { .. }) => Err(EstimateError::NonConvergence(e)),
    }
}
