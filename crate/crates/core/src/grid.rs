//! Evaluation-point sets and their lattice adjacency.

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::linalg::{affine_rank, sample_sd, Matrix};
use crate::lp::phase_one_residual;

/// Residual below which a point counts as inside the hull.
pub const HULL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridProvenance {
    Uniform,
    Percentile,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalGrid {
    points: Matrix,
    /// Per-dimension counts of the full lattice, first dimension slowest.
    lattice_shape: Option<Vec<usize>>,
    /// Lattice cell of each surviving point; absent when nothing was filtered.
    kept_index: Option<Vec<usize>>,
    provenance: GridProvenance,
}

impl EvalGrid {
    /// Wraps arbitrary points (no lattice structure).
    pub fn from_points(points: Matrix) -> Self {
        Self { points, lattice_shape: None, kept_index: None, provenance: GridProvenance::External }
    }

    /// Builds a full lattice from per-dimension coordinate lists.
    pub fn from_axes(axes: &[Vec<f64>], provenance: GridProvenance) -> Self {
        let d = axes.len();
        let shape: Vec<usize> = axes.iter().map(Vec::len).collect();
        let total: usize = shape.iter().product();
        let mut data = Vec::with_capacity(total * d);
        for cell in 0..total {
            let idx = unravel(cell, &shape);
            data.extend(idx.iter().zip(axes).map(|(&i, ax)| ax[i]));
        }
        let points = Matrix::from_vec(total, d, data).expect("lattice size is consistent");
        Self { points, lattice_shape: Some(shape), kept_index: None, provenance }
    }

    pub fn points(&self) -> &Matrix {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn provenance(&self) -> GridProvenance {
        self.provenance
    }

    pub fn lattice_shape(&self) -> Option<&[usize]> {
        self.lattice_shape.as_deref()
    }

    pub fn kept_index(&self) -> Option<&[usize]> {
        self.kept_index.as_deref()
    }

    /// Lattice cell of point `i`.
    pub fn lattice_cell(&self, i: usize) -> usize {
        self.kept_index.as_ref().map_or(i, |k| k[i])
    }

    /// Keeps the listed point indices (ascending), preserving lattice bookkeeping.
    pub fn retain_indices(&self, keep: &[usize]) -> Self {
        let kept_index =
            self.lattice_shape.as_ref().map(|_| keep.iter().map(|&i| self.lattice_cell(i)).collect::<Vec<_>>());
        Self {
            points: self.points.select_rows(keep),
            lattice_shape: self.lattice_shape.clone(),
            kept_index,
            provenance: self.provenance,
        }
    }

    /// One row per point: `x1,...,xd`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let header: Vec<String> = (1..=self.dim()).map(|k| format!("x{k}")).collect();
        w.write_record(&header)?;
        for r in self.points.rows_iter() {
            w.write_record(r.iter().map(|v| format!("{v:?}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn unravel(mut cell: usize, shape: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for k in (0..shape.len()).rev() {
        idx[k] = cell % shape[k];
        cell /= shape[k];
    }
    idx
}

fn ravel(idx: &[usize], shape: &[usize]) -> usize {
    idx.iter().zip(shape).fold(0, |acc, (&i, &s)| acc * s + i)
}

fn check_counts(x: &Matrix, counts: &[usize]) -> Result<Vec<(f64, f64)>> {
    if counts.len() != x.ncols() {
        return Err(Error::Dimension(format!("{} grid counts for {} input dimensions", counts.len(), x.ncols())));
    }
    if let Some(c) = counts.iter().find(|&&c| c < 2) {
        return Err(Error::InvalidParameter(format!("grid count {c} is below 2")));
    }
    if x.nrows() == 0 || !x.all_finite() {
        return Err(Error::NonFinite("grid data"));
    }
    let ranges = x.column_ranges();
    for (k, (lo, hi)) in ranges.iter().enumerate() {
        if !(hi > lo) {
            return Err(Error::ConstantColumn { column: k });
        }
    }
    Ok(ranges)
}

/// Equally spaced lattice from the per-dimension min to max of `x`.
pub fn uniform_grid(x: &Matrix, counts: &[usize]) -> Result<EvalGrid> {
    let ranges = check_counts(x, counts)?;
    let axes: Vec<Vec<f64>> = ranges
        .iter()
        .zip(counts)
        .map(|(&(lo, hi), &c)| {
            (0..c).map(|i| if i + 1 == c { hi } else { lo + (hi - lo) * i as f64 / (c - 1) as f64 }).collect()
        })
        .collect();
    Ok(EvalGrid::from_axes(&axes, GridProvenance::Uniform))
}

/// Bandwidth of the per-dimension density estimate behind percentile grids.
#[derive(Debug, Clone, PartialEq)]
pub enum KdeBandwidth {
    /// `1.06 * sd * n^(-1/5)`
    Silverman,
    Fixed(Vec<f64>),
}

fn std_normal_cdf(t: f64) -> f64 {
    0.5 * erfc(-t / std::f64::consts::SQRT_2)
}

/// Quantiles of a Gaussian KDE on `[lo, hi]`, endpoints included. Kernel mass
/// that would spill past either edge is reflected back inside.
fn kde_quantiles(values: &[f64], bw: f64, lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let inv = 1.0 / bw;
    let n = values.len() as f64;
    let cdf = |t: f64| {
        values
            .iter()
            .map(|v| {
                std_normal_cdf((t - v) * inv)
                    + std_normal_cdf((t - 2.0 * lo + v) * inv)
                    + std_normal_cdf((t - 2.0 * hi + v) * inv)
            })
            .sum::<f64>()
            / n
    };
    let (f_lo, f_hi) = (cdf(lo), cdf(hi));
    let mut out = Vec::with_capacity(count);
    out.push(lo);
    for k in 1..count - 1 {
        let target = f_lo + (f_hi - f_lo) * k as f64 / (count - 1) as f64;
        let (mut a, mut b) = (lo, hi);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if cdf(mid) < target {
                a = mid;
            } else {
                b = mid;
            }
            if b - a <= 1e-13 * (hi - lo) {
                break;
            }
        }
        out.push(0.5 * (a + b));
    }
    out.push(hi);
    out
}

/// Lattice whose per-dimension coordinates sit at equally spaced quantiles
/// of a Gaussian kernel density estimate between the observed min and max.
pub fn percentile_grid(x: &Matrix, counts: &[usize], kde: &KdeBandwidth) -> Result<EvalGrid> {
    let ranges = check_counts(x, counts)?;
    let n = x.nrows() as f64;
    let mut axes = Vec::with_capacity(x.ncols());
    for (k, (&(lo, hi), &c)) in ranges.iter().zip(counts).enumerate() {
        let values = x.column_values(k);
        let bw = match kde {
            KdeBandwidth::Silverman => 1.06 * sample_sd(&values) * n.powf(-0.2),
            KdeBandwidth::Fixed(h) => {
                *h.get(k).ok_or_else(|| Error::Dimension(format!("KDE bandwidth missing for dimension {k}")))?
            }
        };
        if !(bw > 0.0) {
            return Err(Error::InvalidParameter(format!("KDE bandwidth {bw} must be positive")));
        }
        let axis = kde_quantiles(&values, bw, lo, hi, c);
        if axis.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter(format!(
                "percentile grid in dimension {k} is not strictly increasing"
            )));
        }
        axes.push(axis);
    }
    Ok(EvalGrid::from_axes(&axes, GridProvenance::Percentile))
}

/// Convex-hull membership by linear feasibility on normalized coordinates.
pub struct HullTester {
    rows: Vec<Vec<f64>>,
    lo: Vec<f64>,
    scale: Vec<f64>,
}

impl HullTester {
    pub fn new(x: &Matrix) -> Result<Self> {
        let d = x.ncols();
        if x.nrows() < d + 1 {
            return Err(Error::InvalidParameter(format!("hull needs at least d + 1 = {} points", d + 1)));
        }
        if affine_rank(x, 1e-12) < d {
            return Err(Error::DegenerateHull);
        }
        let ranges = x.column_ranges();
        let lo: Vec<f64> = ranges.iter().map(|r| r.0).collect();
        let scale: Vec<f64> = ranges.iter().map(|r| 1.0 / (r.1 - r.0)).collect();
        // constraint rows: sum lambda = 1, sum lambda x_k = p_k
        let mut rows = vec![vec![1.0; x.nrows()]];
        for k in 0..d {
            rows.push(x.rows_iter().map(|r| (r[k] - lo[k]) * scale[k]).collect());
        }
        Ok(Self { rows, lo, scale })
    }

    pub fn residual(&self, p: &[f64]) -> f64 {
        let mut b = vec![1.0];
        b.extend(p.iter().zip(&self.lo).zip(&self.scale).map(|((v, l), s)| (v - l) * s));
        phase_one_residual(&self.rows, &b)
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        self.residual(p) <= HULL_TOLERANCE
    }
}

/// Keeps the grid points inside or on the convex hull of `x`, in order.
pub fn convex_hull_filter(grid: &EvalGrid, x: &Matrix) -> Result<EvalGrid> {
    if grid.dim() != x.ncols() {
        return Err(Error::Dimension(format!("grid has {} coordinates, data has {}", grid.dim(), x.ncols())));
    }
    let hull = HullTester::new(x)?;
    let keep: Vec<usize> = (0..grid.len()).filter(|&i| hull.contains(grid.points.row(i))).collect();
    Ok(grid.retain_indices(&keep))
}

/// Ordered pairs `(i, l)` of adjacent grid points.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyPairs {
    pub pairs: Vec<(usize, usize)>,
}

impl AdjacencyPairs {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn unordered_count(&self) -> usize {
        self.pairs.iter().filter(|(i, l)| i < l).count()
    }
}

/// Moore neighbourhood on the lattice: index offsets in {-1, 0, 1}, not all
/// zero. Pairs touching a filtered-out cell are dropped.
pub fn adjacency_pairs(grid: &EvalGrid) -> Result<AdjacencyPairs> {
    let shape = grid.lattice_shape.as_ref().ok_or(Error::NotLattice)?;
    let d = shape.len();
    let total: usize = shape.iter().product();
    let mut point_of_cell = vec![usize::MAX; total];
    for i in 0..grid.len() {
        point_of_cell[grid.lattice_cell(i)] = i;
    }
    let offsets: Vec<Vec<isize>> = (0..3usize.pow(d as u32))
        .map(|code| {
            let mut c = code;
            (0..d)
                .map(|_| {
                    let o = (c % 3) as isize - 1;
                    c /= 3;
                    o
                })
                .collect()
        })
        .filter(|o: &Vec<isize>| o.iter().any(|&v| v != 0))
        .collect();
    let mut pairs = Vec::new();
    for i in 0..grid.len() {
        let idx = unravel(grid.lattice_cell(i), shape);
        for off in &offsets {
            let mut nb = Vec::with_capacity(d);
            let mut inside = true;
            for ((&a, &o), &s) in idx.iter().zip(off).zip(shape) {
                let v = a as isize + o;
                if v < 0 || v >= s as isize {
                    inside = false;
                    break;
                }
                nb.push(v as usize);
            }
            if !inside {
                continue;
            }
            let l = point_of_cell[ravel(&nb, shape)];
            if l != usize::MAX {
                pairs.push((i, l));
            }
        }
    }
    pairs.sort_unstable();
    Ok(AdjacencyPairs { pairs })
}
