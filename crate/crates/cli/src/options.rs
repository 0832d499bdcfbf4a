//! Parsing of the compact option strings shared by several commands.

use std::str::FromStr;

use serde::Serialize;

use sckls_core::estimators::{BoundTarget, PointwiseBound, ShapeSpec};
use sckls_core::grid::{convex_hull_filter, percentile_grid, uniform_grid, EvalGrid, KdeBandwidth};
use sckls_core::kernel::{
    default_bandwidth_candidates, default_k_candidates, loocv_bandwidth_scores, loocv_k_scores, rule_of_thumb,
    BandwidthSpec, Kernel,
};
use sckls_core::simulation::grid_counts;
use sckls_core::{Error, Matrix, Result};

fn bad(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

fn list<T: FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',').map(|v| v.trim().parse::<T>().map_err(|_| bad(format!("cannot read '{v}' in {what} '{s}'")))).collect()
}

/// `auto`, `data`, `uniform:K` or `percentile:K`, where `K` is one count for
/// every dimension or `K1xK2x...`.
#[derive(Debug, Clone, PartialEq)]
pub enum GridOpt {
    Auto,
    Data,
    Uniform(Vec<usize>),
    Percentile(Vec<usize>),
}

fn counts(s: &str) -> Result<Vec<usize>> {
    s.split('x').map(|v| v.trim().parse().map_err(|_| bad(format!("bad grid count '{v}'")))).collect()
}

impl FromStr for GridOpt {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "auto" => Ok(GridOpt::Auto),
            None if s == "data" => Ok(GridOpt::Data),
            Some(("uniform", c)) => Ok(GridOpt::Uniform(counts(c)?)),
            Some(("percentile", c)) => Ok(GridOpt::Percentile(counts(c)?)),
            _ => Err(bad(format!("grid '{s}': expected auto, data, uniform:K or percentile:K"))),
        }
    }
}

impl GridOpt {
    fn per_dim(c: &[usize], d: usize) -> Result<Vec<usize>> {
        match c.len() {
            1 => Ok(vec![c[0]; d]),
            k if k == d => Ok(c.to_vec()),
            k => Err(bad(format!("{k} grid counts for {d} inputs"))),
        }
    }

    pub fn build(&self, x: &Matrix, hull_filter: bool) -> Result<EvalGrid> {
        let d = x.ncols();
        let grid = match self {
            GridOpt::Auto => uniform_grid(x, &grid_counts(x.nrows().min(400), d))?,
            GridOpt::Data => EvalGrid::from_points(x.clone()),
            GridOpt::Uniform(c) => uniform_grid(x, &Self::per_dim(c, d)?)?,
            GridOpt::Percentile(c) => percentile_grid(x, &Self::per_dim(c, d)?, &KdeBandwidth::Silverman)?,
        };
        if hull_filter {
            convex_hull_filter(&grid, x)
        } else {
            Ok(grid)
        }
    }
}

/// `auto` (leave-one-out over fixed bandwidths), `fixed:h` or
/// `fixed:h1,h2,...`, `knn:auto` or `knn:K`.
#[derive(Debug, Clone, PartialEq)]
pub enum BandwidthOpt {
    Auto,
    Fixed(Vec<f64>),
    KnnAuto,
    Knn(usize),
}

impl FromStr for BandwidthOpt {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "auto" => Ok(BandwidthOpt::Auto),
            Some(("fixed", h)) => Ok(BandwidthOpt::Fixed(list(h, "bandwidth")?)),
            Some(("knn", "auto")) => Ok(BandwidthOpt::KnnAuto),
            Some(("knn", k)) => Ok(BandwidthOpt::Knn(k.trim().parse().map_err(|_| bad(format!("bad k '{k}'")))?)),
            _ => Err(bad(format!("bandwidth '{s}': expected auto, fixed:h, knn:auto or knn:K"))),
        }
    }
}

/// How a bandwidth was chosen, for reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandwidthChoice {
    pub method: String,
    pub selected: BandwidthSpec,
    /// Leave-one-out candidates and scores, empty for a given bandwidth.
    pub candidates: Vec<BandwidthSpec>,
    pub scores: Vec<f64>,
}

/// Candidate knobs for leave-one-out selection.
#[derive(Debug, Clone, Default)]
pub struct CvOpts {
    /// Multipliers of the rule-of-thumb bandwidth vector.
    pub multipliers: Option<Vec<f64>>,
    pub ks: Option<Vec<usize>>,
}

impl CvOpts {
    pub fn parse(cv_grid: Option<&str>, knn_k: Option<&str>) -> Result<Self> {
        Ok(Self {
            multipliers: cv_grid.map(|s| list(s, "--cv-grid")).transpose()?,
            ks: knn_k.map(|s| list(s, "--knn-k")).transpose()?,
        })
    }

    pub fn fixed_candidates(&self, x: &Matrix) -> Vec<Vec<f64>> {
        match &self.multipliers {
            Some(mult) => {
                let base = rule_of_thumb(x);
                mult.iter().map(|m| base.iter().map(|h| h * m).collect()).collect()
            }
            None => default_bandwidth_candidates(x),
        }
    }

    pub fn k_candidates(&self, n: usize, d: usize) -> Vec<usize> {
        self.ks.clone().unwrap_or_else(|| default_k_candidates(n, d))
    }
}

impl BandwidthOpt {
    pub fn resolve(&self, x: &Matrix, y: &[f64], kernel: Kernel, cv: &CvOpts) -> Result<BandwidthChoice> {
        let d = x.ncols();
        let given = |method: &str, spec: BandwidthSpec| -> Result<BandwidthChoice> {
            spec.validate(d, x.nrows())?;
            Ok(BandwidthChoice { method: method.into(), selected: spec, candidates: Vec::new(), scores: Vec::new() })
        };
        match self {
            BandwidthOpt::Fixed(h) => {
                let h = if h.len() == 1 { vec![h[0]; d] } else { h.clone() };
                given("fixed", BandwidthSpec::Fixed(h))
            }
            BandwidthOpt::Knn(k) => given("knn", BandwidthSpec::Knn(*k)),
            BandwidthOpt::Auto => {
                let cands = cv.fixed_candidates(x);
                let s = loocv_bandwidth_scores(x, y, &cands, kernel)?;
                if !s.scores[s.best].is_finite() {
                    return Err(Error::Identification("every bandwidth candidate gives a singular local fit".into()));
                }
                Ok(BandwidthChoice {
                    method: "loocv".into(),
                    selected: BandwidthSpec::Fixed(cands[s.best].clone()),
                    candidates: cands.into_iter().map(BandwidthSpec::Fixed).collect(),
                    scores: s.scores,
                })
            }
            BandwidthOpt::KnnAuto => {
                let ks = cv.k_candidates(x.nrows(), d);
                let s = loocv_k_scores(x, y, &ks, kernel)?;
                if !s.scores[s.best].is_finite() {
                    return Err(Error::Identification("every k candidate gives a singular local fit".into()));
                }
                Ok(BandwidthChoice {
                    method: "loocv-knn".into(),
                    selected: BandwidthSpec::Knn(ks[s.best]),
                    candidates: ks.into_iter().map(BandwidthSpec::Knn).collect(),
                    scores: s.scores,
                })
            }
        }
    }
}

/// `value:lo:hi` or `bK:lo:hi`; either end may be empty.
pub fn parse_bound(s: &str) -> Result<PointwiseBound> {
    let parts: Vec<&str> = s.split(':').collect();
    let [target, lo, hi] = parts[..] else {
        return Err(bad(format!("bound '{s}': expected TARGET:LO:HI")));
    };
    let target = match target {
        "value" => BoundTarget::Value,
        t => match t.strip_prefix('b').and_then(|k| k.parse::<usize>().ok()) {
            Some(k) if k >= 1 => BoundTarget::Gradient(k - 1),
            _ => return Err(bad(format!("bound target '{t}': expected value or b1, b2, ..."))),
        },
    };
    let end = |v: &str| -> Result<Option<f64>> {
        if v.trim().is_empty() {
            Ok(None)
        } else {
            v.trim().parse().map(Some).map_err(|_| bad(format!("bad bound value '{v}'")))
        }
    };
    Ok(PointwiseBound { target, lower: end(lo)?, upper: end(hi)? })
}

pub fn shape_with_bounds(name: &str, d: usize, bounds: &[String]) -> Result<ShapeSpec> {
    let mut shape = ShapeSpec::parse(name, d)?;
    for b in bounds {
        shape = shape.with_bound(parse_bound(b)?);
    }
    Ok(shape)
}

pub fn parse_kernel(s: &str) -> Result<Kernel> {
    s.parse()
}

pub fn parse_f64_list(s: &str, what: &str) -> Result<Vec<f64>> {
    list(s, what)
}

pub fn parse_usize_list(s: &str, what: &str) -> Result<Vec<usize>> {
    list(s, what)
}
