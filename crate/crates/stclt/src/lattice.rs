//! Integer-lattice geometry shared by both models: the Chebyshev metric,
//! closed unit cubes `c(l)`, cube regions, and window-to-lattice covers.
//!
//! Every matrix in the autoregressive model indexes rows and columns by the
//! lattice ordering defined here (lexicographic on coordinates), so the
//! ordering is part of the public contract.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LatticeError {
    #[error("dimension mismatch: left has {left}, right has {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("set distance requires nonempty sets")]
    EmptySet,
    #[error("window has empty interior on axis {axis}: lower {lower} >= upper {upper}")]
    EmptyWindow { axis: usize, lower: f64, upper: f64 },
    #[error("cube side must be positive, got {0}")]
    NonPositiveSide(f64),
    #[error("duplicate lattice point at position {0}")]
    DuplicatePoint(usize),
    #[error("lattice point has dimension {got}, expected {expected}")]
    PointDimension { got: usize, expected: usize },
}

/// A point of `Z^d`, usable as a map key.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LatticePoint(pub Vec<i64>);

impl LatticePoint {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&c| c as f64).collect()
    }
}

impl From<Vec<i64>> for LatticePoint {
    fn from(coords: Vec<i64>) -> Self {
        LatticePoint(coords)
    }
}

/// A finite ordered set of lattice points. The ordering is stable
/// (lexicographic when built by [`cover_window`]) and defines the row/column
/// indexing of all matrices built over the lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    dim: usize,
    points: Vec<LatticePoint>,
}

impl Lattice {
    /// Builds a lattice from an explicit point list, preserving order.
    pub fn new(dim: usize, points: Vec<LatticePoint>) -> Result<Self, LatticeError> {
        for (i, p) in points.iter().enumerate() {
            if p.dim() != dim {
                return Err(LatticeError::PointDimension {
                    got: p.dim(),
                    expected: dim,
                });
            }
            // O(n^2) scan; lattices here stay in the low thousands.
            if points[..i].contains(p) {
                return Err(LatticeError::DuplicatePoint(i));
            }
        }
        Ok(Lattice { dim, points })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[LatticePoint] {
        &self.points
    }

    pub fn point(&self, idx: usize) -> &LatticePoint {
        &self.points[idx]
    }

    /// Index of a point in the lattice ordering, if present.
    pub fn index_of(&self, p: &LatticePoint) -> Option<usize> {
        self.points.iter().position(|q| q == p)
    }

    /// Chebyshev diameter of the point set, 0 for singletons.
    pub fn diameter(&self) -> f64 {
        let mut best = 0.0f64;
        for (i, p) in self.points.iter().enumerate() {
            for q in &self.points[i + 1..] {
                let d = chebyshev_dist_points(p, q);
                if d > best {
                    best = d;
                }
            }
        }
        best
    }
}

/// A closed axis-aligned cube of sidelength `side` centered at a lattice point.
#[derive(Debug, Clone, PartialEq)]
pub struct CubeRegion {
    pub center: LatticePoint,
    pub side: f64,
}

impl CubeRegion {
    pub fn new(center: LatticePoint, side: f64) -> Result<Self, LatticeError> {
        if !(side > 0.0) {
            return Err(LatticeError::NonPositiveSide(side));
        }
        Ok(CubeRegion { center, side })
    }

    /// The unit cube `c(l)` used by window covers and score decompositions.
    pub fn unit(center: LatticePoint) -> Self {
        CubeRegion { center, side: 1.0 }
    }
}

/// An axis-aligned box in continuous coordinates with nonempty interior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Window {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, LatticeError> {
        if lower.len() != upper.len() {
            return Err(LatticeError::DimensionMismatch {
                left: lower.len(),
                right: upper.len(),
            });
        }
        for (axis, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo < hi) {
                return Err(LatticeError::EmptyWindow {
                    axis,
                    lower: lo,
                    upper: hi,
                });
            }
        }
        Ok(Window { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| hi - lo)
            .product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&xi, (&lo, &hi))| lo <= xi && xi <= hi)
    }

    /// The window grown by `margin` on every side.
    pub fn dilate(&self, margin: f64) -> Result<Window, LatticeError> {
        Window::new(
            self.lower.iter().map(|lo| lo - margin).collect(),
            self.upper.iter().map(|hi| hi + margin).collect(),
        )
    }
}

/// `max_i |x_i - y_i|` over paired coordinates.
pub fn chebyshev_dist(x: &[f64], y: &[f64]) -> Result<f64, LatticeError> {
    if x.len() != y.len() {
        return Err(LatticeError::DimensionMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    Ok(x.iter()
        .zip(y)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// Chebyshev distance between two lattice points (never fails on equal dims).
pub fn chebyshev_dist_points(p: &LatticePoint, q: &LatticePoint) -> f64 {
    p.0.iter()
        .zip(&q.0)
        .map(|(a, b)| (a - b).abs() as f64)
        .fold(0.0, f64::max)
}

/// `min` of [`chebyshev_dist`] over all cross pairs of two nonempty sets.
pub fn set_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64, LatticeError> {
    if a.is_empty() || b.is_empty() {
        return Err(LatticeError::EmptySet);
    }
    let mut best = f64::INFINITY;
    for x in a {
        for y in b {
            let d = chebyshev_dist(x, y)?;
            if d < best {
                best = d;
            }
        }
    }
    Ok(best)
}

/// All integer points whose unit cube `c(l)` overlaps the window in a set of
/// positive measure, in lexicographic order. A cube that only touches the
/// window boundary is excluded, so `[-0.5, 0.5]^d` covers exactly `{0}^d`.
pub fn cover_window(w: &Window) -> Lattice {
    let d = w.dim();
    // c(l) = [l-1/2, l+1/2] overlaps [lo, hi] iff l > lo - 1/2 and l < hi + 1/2.
    let lo: Vec<i64> = w
        .lower
        .iter()
        .map(|&x| (x - 0.5).floor() as i64 + 1)
        .collect();
    let hi: Vec<i64> = w
        .upper
        .iter()
        .map(|&x| (x + 0.5).ceil() as i64 - 1)
        .collect();
    let mut points = Vec::new();
    let mut cur = lo.clone();
    'outer: loop {
        points.push(LatticePoint(cur.clone()));
        // lexicographic increment with the last axis fastest
        for axis in (0..d).rev() {
            if cur[axis] < hi[axis] {
                cur[axis] += 1;
                continue 'outer;
            }
            cur[axis] = lo[axis];
            if axis == 0 {
                break 'outer;
            }
        }
    }
    Lattice { dim: d, points }
}

/// True iff `x` lies in the closed cube, i.e. within Chebyshev distance
/// `side/2` of the center.
pub fn cube_contains(c: &CubeRegion, x: &[f64]) -> Result<bool, LatticeError> {
    let center = c.center.coords_f64();
    let d = chebyshev_dist(&center, x)?;
    Ok(d <= c.side / 2.0)
}
