//! Experiment configuration: JSON schema, validation, and construction of
//! model objects from structural stanzas. Unknown keys are rejected
//! everywhere so config typos fail fast.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::birthdeath::{validate_bd, BdSpec, Covariate, CovariateGrid, PointPattern, ValidBdSpec};
use crate::car::{validate_spec, CarSpec, ValidCarSpec};
use crate::harness::{Regime, RegimeSchedule};
use crate::lattice::{cover_window, Window};
use crate::numerics::{RngStream, StreamTag};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config schema error: {0}")]
    Schema(String),
    #[error("config invalid: {0}")]
    Invalid(String),
}

fn format_list<E: std::fmt::Display>(errors: &[E]) -> String {
    errors
        .iter()
        .map(|e| e.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// Failures while turning a config into model objects: schema/IO problems
/// are config errors, invariant violations are model-validation errors.
#[derive(Debug, thiserror::Error)]
pub enum BuildError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("model validation failed: {}", format_list(.0))]
    Car(Vec<crate::car::CarError>),
    #[error("model validation failed: {}", format_list(.0))]
    Bd(Vec<crate::birthdeath::BdError>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub regime: Option<RegimeConfig>,
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Replicates for diagnose runs (the regime stanza carries its own).
    #[serde(default)]
    pub replicates: Option<usize>,
    #[serde(default)]
    pub workers: Option<usize>,
    /// Extra exponent in the `(6 + epsilon)`-moment diagnostic.
    #[serde(default)]
    pub epsilon: Option<f64>,
    /// Final-level KS threshold used by the strict verdict.
    #[serde(default)]
    pub ks_threshold: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ModelConfig {
    Car(CarConfig),
    Birthdeath(BdConfig),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CarConfig {
    /// Temporal order r.
    pub r: usize,
    pub beta: f64,
    pub gamma: f64,
    pub lattice: LatticeConfig,
    pub coefficients: CarCoefficients,
    pub x0: X0Config,
    /// Horizon K for single-path commands (the regime ladder supplies its
    /// own per level).
    #[serde(default)]
    pub horizon: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LatticeConfig {
    /// Integer grid {0..m-1}^dim.
    Grid {
        m: usize,
        #[serde(default = "default_dim")]
        dim: usize,
    },
    /// Cover of an explicit window by unit cubes.
    Window { lower: Vec<f64>, upper: Vec<f64> },
}

fn default_dim() -> usize {
    2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CarCoefficients {
    /// Matrices given row-major; `b` lists B_0..B_r.
    Explicit { a: Vec<f64>, b: Vec<Vec<f64>> },
    /// 2(d)-neighbor coupling on the grid: B_0 has `b0_coupling` on lattice
    /// neighbors, B_1 is `b1_self` on the diagonal plus `b1_neighbor` on
    /// neighbors; higher B_j are zero.
    NearestNeighbor {
        a: f64,
        b0_coupling: f64,
        b1_self: f64,
        b1_neighbor: f64,
    },
    /// Complete-graph spatial coupling: every off-diagonal of B_0 equals
    /// `b0_coupling`; B_1 = `b1_self` I.
    DenseUniform {
        a: f64,
        b0_coupling: f64,
        b1_self: f64,
    },
    /// Geometrically decaying long-range coupling
    /// `b_0(l, j) = b0_scale * b0_decay^d(l,j)`; B_1 = `b1_self` I.
    PowerDecay {
        a: f64,
        b0_scale: f64,
        b0_decay: f64,
        b1_self: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum X0Config {
    Constant { value: f64 },
    StandardNormal,
    File { path: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BdConfig {
    pub window: WindowConfig,
    #[serde(default = "default_buffer")]
    pub buffer_factor: f64,
    pub omega: f64,
    pub alpha_b: f64,
    pub rho: f64,
    /// Logistic survival coefficients (theta_s0, theta_s1).
    pub survival: (f64, f64),
    pub covariate: CovariateConfig,
    pub horizon: usize,
    #[serde(default = "default_quadrature")]
    pub quadrature: usize,
    pub initial: InitialConfig,
}

fn default_buffer() -> f64 {
    1.0
}

fn default_quadrature() -> usize {
    64
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovariateConfig {
    Constant { value: f64 },
    Linear { intercept: f64, gx: f64, gy: f64 },
    /// Regular grid loaded from a CSV of x,y,z rows.
    Grid { path: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    Poisson { intensity: f64 },
    File { path: PathBuf },
    Empty,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeConfig {
    pub regime: Regime,
    pub levels: Vec<RegimeLevelConfig>,
    pub replicates: usize,
    #[serde(default)]
    pub trunc_a: Option<f64>,
    #[serde(default)]
    pub trunc_b: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeLevelConfig {
    /// Horizon K at this level.
    pub k: usize,
    /// Grid points per axis (autoregression) or window side (birth-death).
    pub size: usize,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let config: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| ConfigError::Schema(e.to_string()))?;
        Ok(config)
    }

    pub fn schedule(&self) -> Option<RegimeSchedule> {
        self.regime.as_ref().map(|r| RegimeSchedule {
            regime: r.regime,
            levels: r
                .levels
                .iter()
                .map(|l| crate::harness::LevelSize {
                    horizon: l.k,
                    size: l.size,
                })
                .collect(),
            replicates: r.replicates,
            trunc_a: r.trunc_a,
            trunc_b: r.trunc_b,
        })
    }
}

fn grid_lattice(m: usize, dim: usize) -> Result<crate::lattice::Lattice, ConfigError> {
    if m == 0 || dim == 0 {
        return Err(ConfigError::Invalid("grid needs m >= 1 and dim >= 1".into()));
    }
    let lower = vec![0.0; dim];
    let upper = vec![m as f64 - 1.0 + 0.25; dim];
    // the quarter-cube margin keeps exactly {0..m-1} per axis
    let window = Window::new(
        lower.iter().map(|v| v - 0.25).collect(),
        upper,
    )
    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(cover_window(&window))
}

impl CarConfig {
    /// Builds the lattice, honoring a ladder size override (grid lattices
    /// only; explicit windows cannot be resized).
    pub fn lattice(&self, size_override: Option<usize>) -> Result<crate::lattice::Lattice, ConfigError> {
        match (&self.lattice, size_override) {
            (LatticeConfig::Grid { m, dim }, None) => grid_lattice(*m, *dim),
            (LatticeConfig::Grid { m: _, dim }, Some(size)) => grid_lattice(size, *dim),
            (LatticeConfig::Window { lower, upper }, None) => {
                let w = Window::new(lower.clone(), upper.clone())
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                Ok(cover_window(&w))
            }
            (LatticeConfig::Window { .. }, Some(_)) => Err(ConfigError::Invalid(
                "regime ladders need a structural (grid) lattice, not an explicit window".into(),
            )),
        }
    }

    /// Assembles and validates the full spec at an optional ladder size.
    pub fn build(&self, size_override: Option<usize>) -> Result<ValidCarSpec, BuildError> {
        let lattice = self.lattice(size_override)?;
        let n = lattice.len();
        let (a, b) = match &self.coefficients {
            CarCoefficients::Explicit { a, b } => {
                let mut mats = Vec::with_capacity(b.len());
                for (j, flat) in b.iter().enumerate() {
                    if flat.len() != n * n {
                        return Err(BuildError::Config(ConfigError::Invalid(format!(
                            "coefficient matrix {j} has {} entries, lattice needs {}",
                            flat.len(),
                            n * n
                        ))));
                    }
                    mats.push(DMatrix::from_row_slice(n, n, flat));
                }
                (DVector::from_vec(a.clone()), mats)
            }
            CarCoefficients::NearestNeighbor {
                a,
                b0_coupling,
                b1_self,
                b1_neighbor,
            } => {
                let mut b0 = DMatrix::zeros(n, n);
                let mut b1 = DMatrix::zeros(n, n);
                for i in 0..n {
                    b1[(i, i)] = *b1_self;
                    for j in 0..n {
                        if i != j
                            && crate::lattice::chebyshev_dist_points(
                                lattice.point(i),
                                lattice.point(j),
                            ) == 1.0
                            && manhattan(lattice.point(i), lattice.point(j)) == 1
                        {
                            b0[(i, j)] = *b0_coupling;
                            b1[(i, j)] = *b1_neighbor;
                        }
                    }
                }
                let mut mats = vec![b0, b1];
                mats.truncate(self.r + 1);
                while mats.len() < self.r + 1 {
                    mats.push(DMatrix::zeros(n, n));
                }
                (DVector::from_element(n, *a), mats)
            }
            CarCoefficients::DenseUniform {
                a,
                b0_coupling,
                b1_self,
            } => {
                let mut b0 = DMatrix::from_element(n, n, *b0_coupling);
                for i in 0..n {
                    b0[(i, i)] = 0.0;
                }
                let b1 = DMatrix::identity(n, n) * *b1_self;
                let mut mats = vec![b0, b1];
                while mats.len() < self.r + 1 {
                    mats.push(DMatrix::zeros(n, n));
                }
                (DVector::from_element(n, *a), mats)
            }
            CarCoefficients::PowerDecay {
                a,
                b0_scale,
                b0_decay,
                b1_self,
            } => {
                let mut b0 = DMatrix::zeros(n, n);
                for i in 0..n {
                    for j in 0..n {
                        if i != j {
                            let d = crate::lattice::chebyshev_dist_points(
                                lattice.point(i),
                                lattice.point(j),
                            );
                            b0[(i, j)] = b0_scale * b0_decay.powf(d);
                        }
                    }
                }
                let b1 = DMatrix::identity(n, n) * *b1_self;
                let mut mats = vec![b0, b1];
                while mats.len() < self.r + 1 {
                    mats.push(DMatrix::zeros(n, n));
                }
                (DVector::from_element(n, *a), mats)
            }
        };
        validate_spec(CarSpec {
            lattice,
            temporal_order: self.r,
            a,
            b,
            beta: self.beta,
            gamma: self.gamma,
        })
        .map_err(BuildError::Car)
    }

    /// Initial field: deterministic given the init stream.
    pub fn initial_state(
        &self,
        n: usize,
        stream: &RngStream,
    ) -> Result<DVector<f64>, ConfigError> {
        match &self.x0 {
            X0Config::Constant { value } => Ok(DVector::from_element(n, *value)),
            X0Config::StandardNormal => Ok(DVector::from_vec(stream.normals(n))),
            X0Config::File { path } => {
                let values = super::io::read_state_csv(path)
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                if values.len() != n {
                    return Err(ConfigError::Invalid(format!(
                        "x0 file has {} values, lattice has {n}",
                        values.len()
                    )));
                }
                Ok(DVector::from_vec(values))
            }
        }
    }
}

fn manhattan(p: &crate::lattice::LatticePoint, q: &crate::lattice::LatticePoint) -> i64 {
    p.0.iter().zip(&q.0).map(|(a, b)| (a - b).abs()).sum()
}

impl BdConfig {
    pub fn build(
        &self,
        size_override: Option<usize>,
        horizon_override: Option<usize>,
    ) -> Result<ValidBdSpec, BuildError> {
        let window = match size_override {
            Some(size) => Window::new(vec![0.0, 0.0], vec![size as f64, size as f64])
                .expect("positive size"),
            None => Window::new(self.window.lower.clone(), self.window.upper.clone())
                .map_err(|e| ConfigError::Invalid(e.to_string()))?,
        };
        let covariate = match &self.covariate {
            CovariateConfig::Constant { value } => Covariate::Constant(*value),
            CovariateConfig::Linear { intercept, gx, gy } => Covariate::Linear {
                intercept: *intercept,
                gx: *gx,
                gy: *gy,
            },
            CovariateConfig::Grid { path } => {
                let triples = super::io::read_covariate_csv(path)
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                Covariate::Grid(
                    CovariateGrid::from_triples(triples).map_err(|e| BuildError::Bd(vec![e]))?,
                )
            }
        };
        validate_bd(BdSpec {
            window,
            buffer_factor: self.buffer_factor,
            omega: self.omega,
            alpha_b: self.alpha_b,
            rho: self.rho,
            surv: self.survival,
            covariate,
            horizon: horizon_override.unwrap_or(self.horizon),
            quadrature: self.quadrature,
        })
        .map_err(BuildError::Bd)
    }

    pub fn initial_pattern(
        &self,
        spec: &ValidBdSpec,
        stream: &RngStream,
    ) -> Result<PointPattern, ConfigError> {
        match &self.initial {
            InitialConfig::Poisson { intensity } => {
                Ok(spec.sample_initial(*intensity, &stream.with_tag(StreamTag::Init)))
            }
            InitialConfig::Empty => Ok(PointPattern::empty()),
            InitialConfig::File { path } => {
                let pattern = super::io::read_initial_pattern_csv(path)
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                spec.check_inside_region(&pattern)
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                Ok(pattern)
            }
        }
    }
}
