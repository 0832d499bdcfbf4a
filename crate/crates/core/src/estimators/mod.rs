//! Regression estimators and the fitted hyperplane model.

mod cnls;
mod constraints;
mod linear;
mod local;
mod sckls;
mod summary;

pub use cnls::{cnls_fit, cnls_fit_with, min_norm_gradients};
pub use constraints::{afriat_violation, ShapeConstraints};
pub use linear::{monotone_linear_fit, ols_fit, sign_constrained_fit, LinearFit};
pub use local::{local_linear_fit, local_linear_fit_ridge, LocalDesign, LocalLinearFit};
pub use sckls::{sckls_fit, sckls_fit_with_design, sckls_qp, ScklsOptions};
pub use summary::{marginal_stats, mpss, percentile, MarginalColumn, MarginalTable, Mpss, DEFAULT_PERCENTILES};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::EvalGrid;
use crate::kernel::{BandwidthSpec, Kernel};
use crate::linalg::Matrix;
use crate::qp::{KktResiduals, QpStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Curvature {
    Concave,
    Convex,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Monotonicity {
    Increasing,
    Decreasing,
    Free,
}

/// What a bound applies to at every evaluation point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundTarget {
    /// The fitted value `a_i`.
    Value,
    /// The partial derivative `b_ik`.
    Gradient(usize),
}

/// `lower ≤ target ≤ upper` at every evaluation point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointwiseBound {
    pub target: BoundTarget,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub curvature: Curvature,
    pub monotonicity: Vec<Monotonicity>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bounds: Vec<PointwiseBound>,
}

impl ShapeSpec {
    pub fn new(curvature: Curvature, monotonicity: Vec<Monotonicity>) -> Self {
        Self { curvature, monotonicity, bounds: Vec::new() }
    }

    pub fn concave_increasing(d: usize) -> Self {
        Self::new(Curvature::Concave, vec![Monotonicity::Increasing; d])
    }

    pub fn convex_increasing(d: usize) -> Self {
        Self::new(Curvature::Convex, vec![Monotonicity::Increasing; d])
    }

    pub fn with_bound(mut self, bound: PointwiseBound) -> Self {
        self.bounds.push(bound);
        self
    }

    pub fn dim(&self) -> usize {
        self.monotonicity.len()
    }

    pub fn is_trivial(&self) -> bool {
        self.curvature == Curvature::None
            && self.monotonicity.iter().all(|m| *m == Monotonicity::Free)
            && self.bounds.is_empty()
    }

    /// Parses names such as `concave-increasing`, `convex`, `increasing`.
    pub fn parse(name: &str, d: usize) -> Result<Self> {
        let (curv, mono) = match name {
            "concave-increasing" => (Curvature::Concave, Monotonicity::Increasing),
            "concave-decreasing" => (Curvature::Concave, Monotonicity::Decreasing),
            "convex-increasing" => (Curvature::Convex, Monotonicity::Increasing),
            "convex-decreasing" => (Curvature::Convex, Monotonicity::Decreasing),
            "concave" => (Curvature::Concave, Monotonicity::Free),
            "convex" => (Curvature::Convex, Monotonicity::Free),
            "increasing" => (Curvature::None, Monotonicity::Increasing),
            "decreasing" => (Curvature::None, Monotonicity::Decreasing),
            other => return Err(Error::InvalidParameter(format!("unknown shape '{other}'"))),
        };
        Ok(Self::new(curv, vec![mono; d]))
    }

    pub(crate) fn check(&self, d: usize) -> Result<()> {
        if self.monotonicity.len() != d {
            return Err(Error::Dimension(format!(
                "shape lists {} monotonicity entries for {d} inputs",
                self.monotonicity.len()
            )));
        }
        for b in &self.bounds {
            if let BoundTarget::Gradient(k) = b.target {
                if k >= d {
                    return Err(Error::Dimension(format!("bound on gradient {k} with d = {d}")));
                }
            }
            if let (Some(lo), Some(hi)) = (b.lower, b.upper) {
                if lo > hi {
                    return Err(Error::InvalidParameter(format!("bound {lo} > {hi}")));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for ShapeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let curv = match self.curvature {
            Curvature::Concave => Some("concave"),
            Curvature::Convex => Some("convex"),
            Curvature::None => None,
        };
        let mono = match self.monotonicity.first() {
            Some(m) if self.monotonicity.iter().all(|x| x == m) => match m {
                Monotonicity::Increasing => Some("increasing"),
                Monotonicity::Decreasing => Some("decreasing"),
                Monotonicity::Free => None,
            },
            Some(_) => Some("mixed"),
            None => None,
        };
        match (curv, mono) {
            (Some(c), Some(m)) => write!(f, "{c}-{m}"),
            (Some(c), None) => write!(f, "{c}"),
            (None, Some(m)) => write!(f, "{m}"),
            (None, None) => write!(f, "unconstrained"),
        }
    }
}

impl FromStr for Curvature {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concave" => Ok(Self::Concave),
            "convex" => Ok(Self::Convex),
            "none" => Ok(Self::None),
            other => Err(Error::InvalidParameter(format!("unknown curvature '{other}'"))),
        }
    }
}

/// Solver report attached to a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Constrained weighted sum of squared residuals.
    pub objective: f64,
    /// Same criterion at the unconstrained local-linear fit, when it exists.
    pub unconstrained_objective: Option<f64>,
    pub status: QpStatus,
    pub kkt: KktResiduals,
    pub rounds: usize,
    /// Afriat rows in the final QP.
    pub afriat_rows: usize,
    /// Size of the full Afriat family.
    pub afriat_family: usize,
    pub iterations: usize,
    /// True when the unconstrained fit already met every constraint.
    pub unconstrained_feasible: bool,
}

/// Intercepts and gradients anchored at evaluation points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperplaneModel {
    pub grid: EvalGrid,
    pub a: Vec<f64>,
    /// m x d gradients.
    pub b: Matrix,
    pub shape: ShapeSpec,
    pub bandwidth: Option<BandwidthSpec>,
    pub kernel: Option<Kernel>,
    pub diagnostics: FitDiagnostics,
}

impl HyperplaneModel {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.b.ncols()
    }

    /// Value of plane `i` at `x`.
    #[inline]
    pub fn plane_value(&self, i: usize, x: &[f64]) -> f64 {
        let xi = self.grid.points().row(i);
        let bi = self.b.row(i);
        let mut v = self.a[i];
        for k in 0..x.len() {
            v += (x[k] - xi[k]) * bi[k];
        }
        v
    }

    /// Index of the plane that supplies the prediction at `x`; ties go to
    /// the lowest index.
    pub fn active_plane(&self, x: &[f64]) -> usize {
        match self.shape.curvature {
            Curvature::Concave | Curvature::Convex => {
                let concave = self.shape.curvature == Curvature::Concave;
                let mut best = 0;
                let mut best_v = self.plane_value(0, x);
                for i in 1..self.len() {
                    let v = self.plane_value(i, x);
                    if (concave && v < best_v) || (!concave && v > best_v) {
                        best = i;
                        best_v = v;
                    }
                }
                best
            }
            Curvature::None => {
                let pts = self.grid.points();
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for i in 0..self.len() {
                    let d: f64 = pts.row(i).iter().zip(x).map(|(p, q)| (p - q) * (p - q)).sum();
                    if d < best_d {
                        best = i;
                        best_d = d;
                    }
                }
                best
            }
        }
    }

    /// Concave: minimum of the planes. Convex: maximum. No curvature: the
    /// plane of the nearest evaluation point.
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.plane_value(self.active_plane(x), x)
    }

    pub fn predict_many(&self, points: &Matrix) -> Vec<f64> {
        points.rows_iter().map(|r| self.predict(r)).collect()
    }
}

/// Standalone form of [`HyperplaneModel::predict`].
pub fn predict(model: &HyperplaneModel, x: &[f64]) -> f64 {
    model.predict(x)
}
