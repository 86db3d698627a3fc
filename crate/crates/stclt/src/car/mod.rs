//! The spatio-temporal conditional autoregressive Gaussian model.
//!
//! A field `X_k` on a finite lattice evolves as
//! `X_k = beta * xi_temp(k-1) + noise`, where `xi_temp(k-1) = sum_j B_j X_{k-j}`
//! carries the temporal memory (order `r`, states before time 0 are zero) and
//! the noise is a Gaussian Markov random field with precision
//! `Q = A (I - gamma B_0)`. Stacking `r` consecutive states turns the model
//! into a first-order system with companion matrix `F`; the top-left block of
//! `F^j` is the propagator `C_j` that drives every conditional moment.

pub mod inference;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::lattice::Lattice;
use crate::numerics::{cholesky, spectral_radius, NumericsError, RngStream, SpdFactor, StreamTag, SymMatrix};

/// Tolerance for the required symmetry of `A B_0` (relative to its largest
/// entry).
pub const COUPLING_SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum CarError {
    #[error("a has {got} entries, lattice has {expected}")]
    WeightLength { got: usize, expected: usize },
    #[error("a({index}) = {value} is not strictly positive")]
    NonPositiveWeight { index: usize, value: f64 },
    #[error("expected {expected} coupling matrices (B_0..B_r), got {got}")]
    CouplingCount { got: usize, expected: usize },
    #[error("B_{j} is {rows}x{cols}, lattice has {expected} nodes")]
    CouplingShape { j: usize, rows: usize, cols: usize, expected: usize },
    #[error("temporal order must be at least 1")]
    ZeroTemporalOrder,
    #[error("B_0 has nonzero diagonal entry {value} at index {index}")]
    NonzeroDiagonal { index: usize, value: f64 },
    #[error("A B_0 is asymmetric: relative asymmetry {rel:.3e} at ({i},{j})")]
    AsymmetricCoupling { i: usize, j: usize, rel: f64 },
    #[error("precision not positive definite: nonpositive pivot at index {pivot}")]
    NotPositiveDefinite { pivot: usize },
    #[error("conditional moments need k > l, got l={l}, k={k}")]
    NonCausalTimes { l: usize, k: usize },
    #[error("lagged covariance needs l <= k, got l={l}, k={k}")]
    BadCovTimes { l: usize, k: usize },
    #[error("state vector has {got} entries, lattice has {expected}")]
    StateLength { got: usize, expected: usize },
    #[error("path has {len} steps, requested time {k}")]
    TimeOutOfRange { k: usize, len: usize },
    #[error("horizon K must be at least 1")]
    ZeroHorizon,
    #[error("unstable spec refused: companion spectral radius {radius:.4} >= 1")]
    Unstable { radius: f64 },
    #[error("numerics failure: {0}")]
    Numerics(#[from] NumericsError),
}

/// Full parametrization of the model before validation.
#[derive(Debug, Clone)]
pub struct CarSpec {
    pub lattice: Lattice,
    /// Temporal order `r >= 1`.
    pub temporal_order: usize,
    /// Conditional precisions `a(l) > 0`, one per node.
    pub a: DVector<f64>,
    /// Coupling matrices `B_0..B_r` in lattice order; `B_0` is spatial.
    pub b: Vec<DMatrix<f64>>,
    pub beta: f64,
    pub gamma: f64,
}

impl CarSpec {
    pub fn n(&self) -> usize {
        self.lattice.len()
    }
}

/// A spec whose invariants were checked. Holds the assembled precision
/// matrix, its Cholesky factor, and the companion stability diagnostic.
/// Instability is a flag rather than an error: simulation still runs, but
/// the Monte Carlo harness refuses unstable specs.
#[derive(Debug, Clone)]
pub struct ValidCarSpec {
    spec: CarSpec,
    precision: SymMatrix,
    chol: SpdFactor,
    companion_radius: f64,
}

/// One simulated trajectory: the initial field and `K` subsequent states.
#[derive(Debug, Clone)]
pub struct CarPath {
    pub x0: DVector<f64>,
    pub states: Vec<DVector<f64>>,
    /// Stream that generated the noise, kept for reproducibility metadata.
    pub origin: Option<RngStream>,
}

impl CarPath {
    pub fn horizon(&self) -> usize {
        self.states.len()
    }

    /// State at time `k` with the zero-padding convention: `k = 0` is `x0`,
    /// negative times are zero fields.
    pub fn state_at(&self, k: isize) -> Option<&DVector<f64>> {
        if k <= 0 {
            if k == 0 {
                Some(&self.x0)
            } else {
                None
            }
        } else {
            self.states.get(k as usize - 1)
        }
    }
}

/// Checks every spec invariant and returns all violations, not just the
/// first. On success the precision matrix is factored once and cached.
pub fn validate_spec(spec: CarSpec) -> Result<ValidCarSpec, Vec<CarError>> {
    let n = spec.n();
    let mut errors = Vec::new();

    if spec.temporal_order == 0 {
        errors.push(CarError::ZeroTemporalOrder);
    }
    if spec.a.len() != n {
        errors.push(CarError::WeightLength { got: spec.a.len(), expected: n });
    } else {
        for (index, &value) in spec.a.iter().enumerate() {
            if !(value > 0.0) {
                errors.push(CarError::NonPositiveWeight { index, value });
            }
        }
    }
    if spec.b.len() != spec.temporal_order + 1 {
        errors.push(CarError::CouplingCount {
            got: spec.b.len(),
            expected: spec.temporal_order + 1,
        });
    }
    for (j, bj) in spec.b.iter().enumerate() {
        if bj.nrows() != n || bj.ncols() != n {
            errors.push(CarError::CouplingShape {
                j,
                rows: bj.nrows(),
                cols: bj.ncols(),
                expected: n,
            });
        }
    }
    if !errors.is_empty() {
        return Err(errors);
    }

    let b0 = &spec.b[0];
    for index in 0..n {
        let value = b0[(index, index)];
        if value != 0.0 {
            errors.push(CarError::NonzeroDiagonal { index, value });
        }
    }

    // symmetry of A B_0, relative to the largest entry of A B_0
    let a_mat = DMatrix::from_diagonal(&spec.a);
    let ab0 = &a_mat * b0;
    let scale = ab0.amax().max(f64::MIN_POSITIVE);
    let mut worst: Option<(usize, usize, f64)> = None;
    for i in 0..n {
        for j in (i + 1)..n {
            let rel = (ab0[(i, j)] - ab0[(j, i)]).abs() / scale;
            if rel > COUPLING_SYMMETRY_TOL && worst.map_or(true, |(_, _, w)| rel > w) {
                worst = Some((i, j, rel));
            }
        }
    }
    if let Some((i, j, rel)) = worst {
        errors.push(CarError::AsymmetricCoupling { i, j, rel });
    }

    // Q = A (I - gamma B_0), symmetrized, must admit a Cholesky factor
    let q_raw = &a_mat * (DMatrix::identity(n, n) - b0 * spec.gamma);
    let precision = SymMatrix::with_tolerance(q_raw, COUPLING_SYMMETRY_TOL.max(1e-9))
        .unwrap_or_else(|_| {
            // asymmetry was already recorded above; force-symmetrize so the
            // SPD check can still run and report independently
            let m = &a_mat * (DMatrix::identity(n, n) - b0 * spec.gamma);
            SymMatrix::with_tolerance((&m + m.transpose()) * 0.5, 1.0).expect("square")
        });
    let chol = match cholesky(&precision) {
        Ok(f) => Some(f),
        Err(NumericsError::NotSpd { pivot, .. }) => {
            errors.push(CarError::NotPositiveDefinite { pivot });
            None
        }
        Err(e) => {
            errors.push(CarError::Numerics(e));
            None
        }
    };

    let companion = companion_matrix_of(&spec);
    let companion_radius = match spectral_radius(&companion) {
        Ok(r) => r,
        Err(e) => {
            errors.push(CarError::Numerics(e));
            f64::NAN
        }
    };

    if !errors.is_empty() {
        return Err(errors);
    }
    Ok(ValidCarSpec {
        spec,
        precision,
        chol: chol.expect("checked above"),
        companion_radius,
    })
}

fn companion_matrix_of(spec: &CarSpec) -> DMatrix<f64> {
    let n = spec.n();
    let r = spec.temporal_order;
    let mut f = DMatrix::<f64>::zeros(r * n, r * n);
    for j in 1..=r {
        let block = &spec.b[j] * spec.beta;
        f.view_mut((0, (j - 1) * n), (n, n)).copy_from(&block);
    }
    for j in 1..r {
        f.view_mut((j * n, (j - 1) * n), (n, n))
            .copy_from(&DMatrix::identity(n, n));
    }
    f
}

impl ValidCarSpec {
    pub fn spec(&self) -> &CarSpec {
        &self.spec
    }

    pub fn n(&self) -> usize {
        self.spec.n()
    }

    pub fn temporal_order(&self) -> usize {
        self.spec.temporal_order
    }

    pub fn beta(&self) -> f64 {
        self.spec.beta
    }

    pub fn gamma(&self) -> f64 {
        self.spec.gamma
    }

    /// `Q = A (I - gamma B_0)`, symmetrized.
    pub fn precision(&self) -> &SymMatrix {
        &self.precision
    }

    pub fn precision_factor(&self) -> &SpdFactor {
        &self.chol
    }

    /// Spectral radius of the companion matrix.
    pub fn companion_radius(&self) -> f64 {
        self.companion_radius
    }

    /// Stability gate used by the Monte Carlo harness.
    pub fn is_stable(&self) -> bool {
        self.companion_radius < 1.0
    }

    /// Block companion matrix of order `r * n`: first block row
    /// `(beta B_1, ..., beta B_r)`, identity sub-diagonal.
    pub fn companion_matrix(&self) -> DMatrix<f64> {
        companion_matrix_of(&self.spec)
    }

    /// Propagator cache rooted at this spec.
    pub fn propagators(&self) -> Propagators {
        Propagators::new(self)
    }

    /// `C_j`: the top-left block of `F^j` (convenience for one-off lags).
    pub fn propagator(&self, j: usize) -> DMatrix<f64> {
        let mut props = self.propagators();
        props.get(j).clone()
    }

    /// `Q^{-1}` as a dense matrix.
    pub fn covariance(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut inv = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let e = DVector::from_fn(n, |i, _| if i == j { 1.0 } else { 0.0 });
            inv.set_column(j, &self.chol.solve(&e));
        }
        inv
    }

    /// Temporal drift `xi_temp` at step `k >= 1` given the (zero-padded)
    /// history in `states`, where `states(k)` must resolve times `k-1..k-r`.
    fn xi_temp_from<'a, F>(&self, k: usize, state: F) -> DVector<f64>
    where
        F: Fn(isize) -> Option<&'a DVector<f64>>,
    {
        let n = self.n();
        let mut xi = DVector::<f64>::zeros(n);
        for j in 1..=self.temporal_order() {
            let t = k as isize - j as isize;
            if let Some(x) = state(t) {
                xi += &self.spec.b[j] * x;
            }
        }
        xi
    }

    /// Simulates `K` steps from `x0` by the one-step recursion; noise is
    /// drawn through the precision Cholesky (`L^T x = z`), which is
    /// distributionally identical to applying `Q^{-1/2}`.
    pub fn simulate_path(
        &self,
        x0: &DVector<f64>,
        horizon: usize,
        stream: &RngStream,
    ) -> Result<CarPath, CarError> {
        let n = self.n();
        if x0.len() != n {
            return Err(CarError::StateLength { got: x0.len(), expected: n });
        }
        if horizon == 0 {
            return Err(CarError::ZeroHorizon);
        }
        let mut states: Vec<DVector<f64>> = Vec::with_capacity(horizon);
        for k in 1..=horizon {
            let xi = {
                let states_ref = &states;
                self.xi_temp_from(k, |t| {
                    if t < 0 {
                        None
                    } else if t == 0 {
                        Some(x0)
                    } else {
                        states_ref.get(t as usize - 1)
                    }
                })
            };
            let z = DVector::from_vec(
                stream.child(k as u64).with_tag(StreamTag::Noise).normals(n),
            );
            let noise = self.chol.solve_lower_transpose(&z);
            states.push(xi * self.spec.beta + noise);
        }
        Ok(CarPath { x0: x0.clone(), states, origin: Some(stream.clone()) })
    }

    /// Exact Gaussian conditional moments of `X_k` given the state at time
    /// `l < k`, under the embedding that the companion state at time `l` is
    /// `(x_l, 0, ..., 0)` (the pre-history is zero, matching the model's
    /// zero-padding convention):
    /// mean `C_{k-l} x_l`, covariance `sum_{j=0}^{k-l-1} C_j Q^{-1} C_j^T`.
    pub fn conditional_moments(
        &self,
        xl: &DVector<f64>,
        l: usize,
        k: usize,
    ) -> Result<(DVector<f64>, DMatrix<f64>), CarError> {
        if k <= l {
            return Err(CarError::NonCausalTimes { l, k });
        }
        if xl.len() != self.n() {
            return Err(CarError::StateLength { got: xl.len(), expected: self.n() });
        }
        let lag = k - l;
        let mut props = self.propagators();
        let mean = props.get(lag) * xl;
        let q_inv = self.covariance();
        let n = self.n();
        let mut cov = DMatrix::<f64>::zeros(n, n);
        for j in 0..lag {
            let cj = props.get(j);
            cov += cj * &q_inv * cj.transpose();
        }
        Ok((mean, cov))
    }

    /// The printed lagged-covariance formula
    /// `(sum_{j=1}^{k-l} C_j Q^{-1} C_j^T) C_m^T` for `l <= k`, `m >= 0`,
    /// implemented verbatim (empty sum at `k = l`). Used by the mixing
    /// diagnostics for decay-rate fits.
    pub fn lagged_cov(&self, l: usize, k: usize, m: usize) -> Result<DMatrix<f64>, CarError> {
        if l > k {
            return Err(CarError::BadCovTimes { l, k });
        }
        let n = self.n();
        let mut props = self.propagators();
        let q_inv = self.covariance();
        let mut acc = DMatrix::<f64>::zeros(n, n);
        for j in 1..=(k - l) {
            let cj = props.get(j);
            acc += cj * &q_inv * cj.transpose();
        }
        let cm_t = props.get(m).transpose();
        Ok(acc * cm_t)
    }
}

/// Incrementally computed propagators `C_j = top-left block of F^j`,
/// cached by repeated multiplication of the companion matrix (which may be
/// non-symmetric or defective, so no eigendecomposition is attempted).
pub struct Propagators {
    companion: DMatrix<f64>,
    /// running power `F^p` where `p = blocks.len() - 1`
    power: DMatrix<f64>,
    blocks: Vec<DMatrix<f64>>,
    n: usize,
}

impl Propagators {
    fn new(spec: &ValidCarSpec) -> Self {
        let n = spec.n();
        let companion = spec.companion_matrix();
        let dim = companion.nrows();
        Propagators {
            companion,
            power: DMatrix::identity(dim, dim),
            blocks: vec![DMatrix::identity(n, n)],
            n,
        }
    }

    pub fn get(&mut self, j: usize) -> &DMatrix<f64> {
        while self.blocks.len() <= j {
            self.power = &self.power * &self.companion;
            let block = self.power.view((0, 0), (self.n, self.n)).into_owned();
            self.blocks.push(block);
        }
        &self.blocks[j]
    }
}
