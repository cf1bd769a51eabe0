//! Ground truth for the PDE pipeline: exact discrete transport between
//! atomized measures, the 1D north-west-corner rule, and a direct projected
//! descent on the objective over densities of `Z`.

mod network_simplex;

use ndarray::Array2;
use serde::Serialize;

use crate::cost::{objective_unchecked, term1_row, term2_col, CandidateQ, Instance};
use crate::error::{Error, Result};
use crate::grid::{Density2D, Grid1D, POSITIVITY_FLOOR};

/// Largest `n_source * n_target` accepted by [`exact_ot`].
pub const SIZE_GUARD: usize = 10_000_000;

/// Sweeps and tolerance of the marginal projection in the direct minimizer.
pub const PROJECTION_SWEEPS: usize = 50;
pub const PROJECTION_TOL: f64 = 1e-10;

/// Weighted point masses in the plane, weights summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomizedMeasure {
    points: Vec<[f64; 2]>,
    weights: Vec<f64>,
}

impl AtomizedMeasure {
    /// Weights must be finite, nonnegative and sum to 1 within 1e-9; they
    /// are rescaled to sum to 1 exactly (up to round-off).
    pub fn new(points: Vec<[f64; 2]>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() || points.is_empty() {
            return Err(Error::InvalidMeasure(format!(
                "{} points and {} weights",
                points.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidMeasure(format!("weight {w} is not finite and nonnegative")));
        }
        if points.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidMeasure("non-finite point coordinate".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidMeasure(format!("weights sum to {total}")));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { points, weights })
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn mean(&self) -> [f64; 2] {
        let mut m = [0.0; 2];
        for (p, w) in self.points.iter().zip(&self.weights) {
            m[0] += w * p[0];
            m[1] += w * p[1];
        }
        m
    }
}

/// Splits the domain of `d` into `nx * ny` equal cells and puts the mass of
/// each cell at its centre. Cell masses are exact integrals of the bilinear
/// interpolant of `d`.
pub fn atomize(d: &Density2D, nx: usize, ny: usize) -> Result<AtomizedMeasure> {
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidMeasure(format!("{nx} x {ny} atoms")));
    }
    let cells = |g: &Grid1D, n: usize| -> Vec<(f64, Vec<(usize, f64)>)> {
        let w = (g.hi() - g.lo()) / n as f64;
        (0..n)
            .map(|k| {
                let a = g.lo() + k as f64 * w;
                let b = if k + 1 == n { g.hi() } else { a + w };
                (0.5 * (a + b), g.hat_integrals(a, b))
            })
            .collect()
    };
    let (cx, cy) = (cells(d.gx(), nx), cells(d.gy(), ny));
    let v = d.values();
    let mut points = Vec::with_capacity(nx * ny);
    let mut weights = Vec::with_capacity(nx * ny);
    for (x, hx) in &cx {
        for (y, hy) in &cy {
            let mut m = 0.0;
            for &(i, wi) in hx {
                for &(j, wj) in hy {
                    m += wi * wj * v[[i, j]];
                }
            }
            points.push([*x, *y]);
            weights.push(m);
        }
    }
    let total: f64 = weights.iter().sum();
    let weights = weights.into_iter().map(|w| w / total).collect();
    AtomizedMeasure::new(points, weights)
}

/// Sparse nonnegative `n_source x n_target` matrix; absent entries are 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    n_source: usize,
    n_target: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TransportPlan {
    pub fn n_source(&self) -> usize {
        self.n_source
    }

    pub fn n_target(&self) -> usize {
        self.n_target
    }

    /// Positive entries `(source, target, mass)` in row-major order.
    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries
            .binary_search_by(|e| (e.0, e.1).cmp(&(i, j)))
            .map_or(0.0, |k| self.entries[k].2)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.n_source];
        for &(i, _, x) in &self.entries {
            s[i] += x;
        }
        s
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.n_target];
        for &(_, j, x) in &self.entries {
            s[j] += x;
        }
        s
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.n_source, self.n_target));
        for &(i, j, x) in &self.entries {
            m[[i, j]] = x;
        }
        m
    }
}

/// Optimal plan with its primal cost and a dual lower bound.
#[derive(Debug, Clone)]
pub struct OtSolution {
    pub plan: TransportPlan,
    pub cost: f64,
    pub dual_bound: f64,
    pub pivots: usize,
}

fn sq_dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Exact squared-Euclidean transport between two atomized measures by
/// network simplex, certified by a primal-dual gap of at most
/// `1e-9 * cost` (plus 1e-14 absolute, for zero-cost problems).
pub fn exact_ot(src: &AtomizedMeasure, dst: &AtomizedMeasure) -> Result<OtSolution> {
    let (m, n) = (src.len(), dst.len());
    if m.saturating_mul(n) > SIZE_GUARD {
        return Err(Error::SizeGuard {
            n_source: m,
            n_target: n,
            limit: SIZE_GUARD,
        });
    }
    // zero-weight atoms carry no flow and only slow the solver down
    let keep = |w: &[f64]| -> Vec<usize> { (0..w.len()).filter(|&k| w[k] > 0.0).collect() };
    let (si, dj) = (keep(src.weights()), keep(dst.weights()));
    let sp: Vec<[f64; 2]> = si.iter().map(|&k| src.points[k]).collect();
    let dp: Vec<[f64; 2]> = dj.iter().map(|&k| dst.points[k]).collect();
    let supply: Vec<f64> = si.iter().map(|&k| src.weights[k]).collect();
    let demand: Vec<f64> = dj.iter().map(|&k| dst.weights[k]).collect();
    let cost = |i: usize, j: usize| sq_dist(&sp[i], &dp[j]);
    let flows = network_simplex::solve(&supply, &demand, &cost)?;
    let gap = flows.primal - flows.dual;
    let bound = 1e-9 * flows.primal.abs() + 1e-14;
    if gap > bound {
        return Err(Error::CertificateFailed { gap, bound });
    }
    let entries = flows.entries.into_iter().map(|(i, j, x)| (si[i], dj[j], x)).collect();
    Ok(OtSolution {
        plan: TransportPlan {
            n_source: m,
            n_target: n,
            entries,
        },
        cost: flows.primal,
        dual_bound: flows.dual,
        pivots: flows.pivots,
    })
}

/// Squared 1D transport cost by the north-west-corner rule, which pairs
/// equal quantiles. Both point lists must be sorted ascending.
pub fn exact_ot_1d(src_weights: &[f64], src_points: &[f64], dst_weights: &[f64], dst_points: &[f64]) -> f64 {
    debug_assert!(src_points.windows(2).all(|w| w[0] <= w[1]));
    debug_assert!(dst_points.windows(2).all(|w| w[0] <= w[1]));
    let (mut i, mut j) = (0, 0);
    let (mut a, mut b) = (
        src_weights.first().copied().unwrap_or(0.0),
        dst_weights.first().copied().unwrap_or(0.0),
    );
    let mut cost = 0.0;
    while i < src_weights.len() && j < dst_weights.len() {
        let m = a.min(b);
        cost += m * (src_points[i] - dst_points[j]).powi(2);
        a -= m;
        b -= m;
        if a <= 0.0 {
            i += 1;
            a = src_weights.get(i).copied().unwrap_or(0.0);
        }
        if b <= 0.0 {
            j += 1;
            b = dst_weights.get(j).copied().unwrap_or(0.0);
        }
    }
    cost
}

/// Outcome of [`minimize_objective_direct`]. The candidate lives on the
/// `Z` grids of `instance`, which is the coarse instance that was optimized.
#[derive(Debug, Clone)]
pub struct DirectResult {
    pub instance: Instance,
    pub candidate: CandidateQ,
    pub value: f64,
    pub initial_value: f64,
    pub iterations: usize,
}

/// Resamples `inst` onto `nx x ny` grids (the `Z` grids and the matching
/// axes of `f` and `f~`); returns a clone when the sizes already match.
pub fn coarsen(inst: &Instance, nx: usize, ny: usize) -> Result<Instance> {
    let (gx, gy) = inst.z_grids();
    if gx.n() == nx && gy.n() == ny && inst.f().gy().n() == ny && inst.f_tilde().gx().n() == nx {
        return Ok(inst.clone());
    }
    let f = inst.f().resample(Grid1D::new(0.0, 1.0, nx)?, Grid1D::new(0.0, 1.0, ny)?)?;
    let ft = inst.f_tilde().resample(Grid1D::new(1.0, 2.0, nx)?, Grid1D::new(1.0, 2.0, ny)?)?;
    Ok(Instance::new(f, ft)?.with_marginal_tol(inst.marginal_tol()))
}

/// Projected descent on the objective, started from the independent
/// coupling `f1 (x) f~2` of the coarsened instance. Grid sizes are capped
/// at 33 per axis.
pub fn minimize_objective_direct(inst: &Instance, nx: usize, ny: usize, iters: usize) -> Result<DirectResult> {
    if !(3..=33).contains(&nx) || !(3..=33).contains(&ny) {
        return Err(Error::InvalidConfig(format!(
            "direct minimization needs 3..=33 nodes per axis, got {nx} x {ny}"
        )));
    }
    let coarse = coarsen(inst, nx, ny)?;
    let start = coarse.independent_candidate()?;
    minimize_objective_from(&coarse, &start, iters)
}

/// Projected descent from a feasible `start` on the grids of `inst`.
///
/// Each step takes a forward-difference gradient of the objective in the
/// nodal values, projects it onto the tangent space of the marginal
/// constraints, backtracks until the objective decreases, then floors and
/// rescales the trial back onto the marginals.
pub fn minimize_objective_from(inst: &Instance, start: &CandidateQ, iters: usize) -> Result<DirectResult> {
    let (gx, gy) = inst.z_grids();
    let (nx, ny) = (gx.n(), gy.n());
    if !(start.q().gx().approx_eq(&gx) && start.q().gy().approx_eq(&gy)) {
        return Err(Error::DomainMismatch("start candidate grids differ from the instance's Z grids".into()));
    }
    let (wx, wy) = (gx.trapezoid_weights(), gy.trapezoid_weights());
    let (sx, sy): (f64, f64) = (wx.iter().sum(), wy.iter().sum());
    let mut q = start.q().values().clone();
    let initial_value = objective_unchecked(inst, &q);
    let mut value = initial_value;
    let mut step = f64::NAN;
    let mut iterations = 0;
    let mut grad = Array2::<f64>::zeros((nx, ny));

    for _ in 0..iters {
        // forward differences, recomputing only the row and column terms
        // that a single nodal value enters
        let columns: Vec<Vec<f64>> = (0..ny).map(|j| q.column(j).to_vec()).collect();
        let rows: Vec<Vec<f64>> = (0..nx).map(|i| q.row(i).to_vec()).collect();
        let base1: Vec<f64> = (0..ny).map(|j| term1_row(inst, j, &columns[j])).collect();
        let base2: Vec<f64> = (0..nx).map(|i| term2_col(inst, i, &rows[i])).collect();
        for i in 0..nx {
            let mut row = rows[i].clone();
            for j in 0..ny {
                let mut col = columns[j].clone();
                let h = 1e-6 * q[[i, j]].max(1e-3);
                col[i] += h;
                row[j] += h;
                let d1 = term1_row(inst, j, &col) - base1[j];
                let d2 = term2_col(inst, i, &row) - base2[i];
                row[j] = rows[i][j];
                grad[[i, j]] = (wy[j] * d1 + wx[i] * d2) / (h * wx[i] * wy[j]);
            }
        }
        // weighted double centring keeps both marginals fixed to first order
        let rmean: Vec<f64> = (0..nx).map(|i| (0..ny).map(|j| wy[j] * grad[[i, j]]).sum::<f64>() / sy).collect();
        let cmean: Vec<f64> = (0..ny).map(|j| (0..nx).map(|i| wx[i] * grad[[i, j]]).sum::<f64>() / sx).collect();
        let total: f64 = (0..nx).map(|i| wx[i] * rmean[i]).sum::<f64>() / sx;
        let dir = Array2::from_shape_fn((nx, ny), |(i, j)| grad[[i, j]] - rmean[i] - cmean[j] + total);
        let dmax = dir.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if dmax < 1e-12 {
            break;
        }
        if !step.is_finite() {
            let qmean = q.iter().sum::<f64>() / (nx * ny) as f64;
            step = 0.25 * qmean / dmax;
        } else {
            step *= 2.0;
        }
        let mut accepted = None;
        let mut any_feasible = false;
        let mut worst_defect: f64 = 0.0;
        for _ in 0..40 {
            let mut trial = Array2::from_shape_fn((nx, ny), |(i, j)| (q[[i, j]] - step * dir[[i, j]]).max(POSITIVITY_FLOOR));
            let defect = inst.project_marginals(&mut trial, PROJECTION_SWEEPS, PROJECTION_TOL);
            if defect <= inst.marginal_tol() {
                any_feasible = true;
                let v = objective_unchecked(inst, &trial);
                if v < value {
                    accepted = Some((trial, v));
                    break;
                }
            } else {
                worst_defect = worst_defect.max(defect);
            }
            step *= 0.5;
        }
        match accepted {
            Some((trial, v)) => {
                let gain = value - v;
                q = trial;
                value = v;
                iterations += 1;
                if gain <= 1e-14 * value.abs() {
                    break;
                }
            }
            None if !any_feasible => return Err(Error::FloorSaturation { defect: worst_defect }),
            None => break,
        }
    }
    let candidate = if iterations == 0 {
        start.clone()
    } else {
        CandidateQ::new(inst, Density2D::new(gx, gy, q)?)?
    };
    Ok(DirectResult {
        instance: inst.clone(),
        candidate,
        value,
        initial_value,
        iterations,
    })
}

/// Result summary shared by the CLI and the validation harness.
#[derive(Debug, Clone, Serialize)]
pub struct OracleSummary {
    pub atoms: usize,
    pub cost: f64,
    pub dual_bound: f64,
    pub pivots: usize,
}

impl From<&OtSolution> for OracleSummary {
    fn from(s: &OtSolution) -> Self {
        Self {
            atoms: s.plan.n_source(),
            cost: s.cost,
            dual_bound: s.dual_bound,
            pivots: s.pivots,
        }
    }
}
