//! Transport costs: the 1D quantile distance, the shift and split identities,
//! the objective over densities of `Z`, the function `M`, corner
//! perturbations and coupling reconstruction.
//!
//! Throughout, `f` lives on `[0,1]^2`, `f~` on `[1,2]^2`, and a candidate `q`
//! for the law of `Z = (X1, X~2)` on `[0,1] x [1,2]`, gridded by the x-grid of
//! `f` and the y-grid of `f~`.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conditional::{ConditionalQuantile, Which, QUANTILE_CLAMP};
use crate::error::{Error, Result};
use crate::grid::{
    cumulative_along, cumulative_trapezoid, diff1, marginal, mixed_xy, normalize, trapezoid, Axis,
    Density2D, Grid1D, Marginal1D, ScalarField2D, POSITIVITY_FLOOR,
};

pub const DEFAULT_MARGINAL_TOL: f64 = 1e-8;
pub const DEFAULT_QUANTILE_POINTS: usize = 4096;

/// A transport problem between `P` (density `f`) and the shifted target `P~`
/// (density `f~`), with marginals and conditional quantile maps.
#[derive(Debug, Clone)]
pub struct Instance {
    f: Density2D,
    f_tilde: Density2D,
    f1: Marginal1D,
    f2: Marginal1D,
    f1_tilde: Marginal1D,
    f2_tilde: Marginal1D,
    g1: ConditionalQuantile,
    g2: ConditionalQuantile,
    g1_tilde: ConditionalQuantile,
    g2_tilde: ConditionalQuantile,
    marginal_tol: f64,
}

fn check_domain(d: &Density2D, lo: f64, name: &str) -> Result<()> {
    let ok = |g: &Grid1D| (g.lo() - lo).abs() < 1e-12 && (g.hi() - lo - 1.0).abs() < 1e-12;
    if ok(d.gx()) && ok(d.gy()) {
        Ok(())
    } else {
        Err(Error::DomainMismatch(format!(
            "{name} must live on [{lo}, {}]^2, got [{}, {}] x [{}, {}]",
            lo + 1.0,
            d.gx().lo(),
            d.gx().hi(),
            d.gy().lo(),
            d.gy().hi()
        )))
    }
}

impl Instance {
    /// Builds an instance from `f` on `[0,1]^2` and `f~` on `[1,2]^2`. Both
    /// are normalized.
    pub fn new(f: Density2D, f_tilde: Density2D) -> Result<Self> {
        check_domain(&f, 0.0, "f")?;
        check_domain(&f_tilde, 1.0, "f~")?;
        let f = normalize(&f)?;
        let f_tilde = normalize(&f_tilde)?;
        Ok(Self {
            f1: marginal(&f, Axis::X),
            f2: marginal(&f, Axis::Y),
            f1_tilde: marginal(&f_tilde, Axis::X),
            f2_tilde: marginal(&f_tilde, Axis::Y),
            g1: ConditionalQuantile::new(&f, Which::FirstGivenSecond),
            g2: ConditionalQuantile::new(&f, Which::SecondGivenFirst),
            g1_tilde: ConditionalQuantile::new(&f_tilde, Which::FirstGivenSecond),
            g2_tilde: ConditionalQuantile::new(&f_tilde, Which::SecondGivenFirst),
            f,
            f_tilde,
            marginal_tol: DEFAULT_MARGINAL_TOL,
        })
    }

    /// Builds an instance from `P` and `Q`, both on `[0,1]^2`, by shifting `Q`
    /// by `(1, 1)`.
    pub fn from_pq(p: Density2D, q: Density2D) -> Result<Self> {
        check_domain(&q, 0.0, "q")?;
        Self::new(p, q.shifted(1.0, 1.0))
    }

    pub fn with_marginal_tol(mut self, tol: f64) -> Self {
        self.marginal_tol = tol;
        self
    }

    pub fn marginal_tol(&self) -> f64 {
        self.marginal_tol
    }

    pub fn f(&self) -> &Density2D {
        &self.f
    }

    pub fn f_tilde(&self) -> &Density2D {
        &self.f_tilde
    }

    pub fn f1(&self) -> &Marginal1D {
        &self.f1
    }

    pub fn f2(&self) -> &Marginal1D {
        &self.f2
    }

    pub fn f1_tilde(&self) -> &Marginal1D {
        &self.f1_tilde
    }

    pub fn f2_tilde(&self) -> &Marginal1D {
        &self.f2_tilde
    }

    pub fn g1(&self) -> &ConditionalQuantile {
        &self.g1
    }

    pub fn g2(&self) -> &ConditionalQuantile {
        &self.g2
    }

    pub fn g1_tilde(&self) -> &ConditionalQuantile {
        &self.g1_tilde
    }

    pub fn g2_tilde(&self) -> &ConditionalQuantile {
        &self.g2_tilde
    }

    /// Grids of densities of `Z`.
    pub fn z_grids(&self) -> (Grid1D, Grid1D) {
        (*self.f.gx(), *self.f_tilde.gy())
    }

    /// `f1 (x) f~2`, the independent coupling of the two `Z` marginals.
    pub fn independent_candidate(&self) -> Result<CandidateQ> {
        let (gx, gy) = self.z_grids();
        let (a, b) = (self.f1.values(), self.f2_tilde.values());
        let values = Array2::from_shape_fn((gx.n(), gy.n()), |(i, j)| a[i] * b[j]);
        CandidateQ::new(self, Density2D::new(gx, gy, values)?)
    }

    /// Largest deviation of the trapezoid marginals of `values` (on the `Z`
    /// grids) from `f1` and `f~2`.
    pub fn marginal_defect(&self, values: &Array2<f64>) -> f64 {
        let (gx, gy) = self.z_grids();
        let (wx, wy) = (gx.trapezoid_weights(), gy.trapezoid_weights());
        let mut defect: f64 = 0.0;
        for i in 0..gx.n() {
            let row: f64 = (0..gy.n()).map(|j| wy[j] * values[[i, j]]).sum();
            defect = defect.max((row - self.f1.values()[i]).abs());
        }
        for j in 0..gy.n() {
            let col: f64 = (0..gx.n()).map(|i| wx[i] * values[[i, j]]).sum();
            defect = defect.max((col - self.f2_tilde.values()[j]).abs());
        }
        defect
    }

    /// Alternating row and column rescaling towards the marginals `f1`, `f~2`.
    /// Stops after `max_sweeps` or once the defect is at most `tol`; returns
    /// the final defect.
    pub fn project_marginals(&self, values: &mut Array2<f64>, max_sweeps: usize, tol: f64) -> f64 {
        let (gx, gy) = self.z_grids();
        let (wx, wy) = (gx.trapezoid_weights(), gy.trapezoid_weights());
        let mut defect = self.marginal_defect(values);
        for _ in 0..max_sweeps {
            if defect <= tol {
                break;
            }
            for i in 0..gx.n() {
                let row: f64 = (0..gy.n()).map(|j| wy[j] * values[[i, j]]).sum();
                let s = self.f1.values()[i] / row;
                values.row_mut(i).mapv_inplace(|v| v * s);
            }
            for j in 0..gy.n() {
                let col: f64 = (0..gx.n()).map(|i| wx[i] * values[[i, j]]).sum();
                let s = self.f2_tilde.values()[j] / col;
                values.column_mut(j).mapv_inplace(|v| v * s);
            }
            defect = self.marginal_defect(values);
        }
        defect
    }
}

/// A density for `Z` satisfying the marginal constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateQ {
    q: Density2D,
}

impl CandidateQ {
    pub fn new(inst: &Instance, q: Density2D) -> Result<Self> {
        let (gx, gy) = inst.z_grids();
        if !(q.gx().approx_eq(&gx) && q.gy().approx_eq(&gy)) {
            return Err(Error::DomainMismatch("candidate grids differ from the instance's Z grids".into()));
        }
        let defect = inst.marginal_defect(q.values());
        if defect > inst.marginal_tol {
            return Err(Error::MarginalViolation {
                defect,
                tol: inst.marginal_tol,
            });
        }
        Ok(Self { q })
    }

    pub(crate) fn new_unchecked(q: Density2D) -> Self {
        Self { q }
    }

    pub fn q(&self) -> &Density2D {
        &self.q
    }

    pub fn into_density(self) -> Density2D {
        self.q
    }
}

/// `sqrt(int_0^1 |F^-1(t) - F~^-1(t)|^2 dt)` with the default quantile grid.
pub fn krw_1d_distance(m: &Marginal1D, m_tilde: &Marginal1D) -> f64 {
    krw_1d_distance_with(m, m_tilde, DEFAULT_QUANTILE_POINTS)
}

pub fn krw_1d_distance_with(m: &Marginal1D, m_tilde: &Marginal1D, n_t: usize) -> f64 {
    let n_t = n_t.max(2);
    let gaps: Vec<f64> = (0..n_t)
        .map(|k| {
            let t = k as f64 / (n_t - 1) as f64;
            let a = m.quantile(t).expect("level in [0, 1]");
            let b = m_tilde.quantile(t).expect("level in [0, 1]");
            (a - b) * (a - b)
        })
        .collect();
    trapezoid(&gaps, 1.0 / (n_t - 1) as f64).max(0.0).sqrt()
}

/// Recovers `E|X - Y|^2` for `(P, Q)` from the cost between `P` and `Q`
/// shifted by `(1, 1)`.
pub fn shift_cost_relation(ex1: f64, ey1: f64, ex2: f64, ey2: f64, cost_shifted: f64) -> f64 {
    cost_shifted + 2.0 * ex1 - 2.0 * ey1 + 2.0 * ex2 - 2.0 * ey2 - 2.0
}

/// Largest violation of `|X - X~|^2 = |X - Z|^2 + |Z - X~|^2` with
/// `Z = (x1, x~2)` over samples `(x1, x2, x~1, x~2)`.
pub fn split_check(samples: &[[f64; 4]]) -> f64 {
    samples
        .iter()
        .map(|&[x1, x2, xt1, xt2]| {
            let lhs = (x1 - xt1).powi(2) + (x2 - xt2).powi(2);
            let xz = (x2 - xt2).powi(2);
            let zxt = (x1 - xt1).powi(2);
            (lhs - (xz + zxt)).abs()
        })
        .fold(0.0, f64::max)
}

/// Inner ratio guard: round-off plus the marginal tolerance relative to the
/// marginal value being divided by.
fn ratio(num: f64, den: f64, marginal_tol: f64, strict: bool, i: usize, j: usize) -> Result<f64> {
    let r = num / den;
    let slack = QUANTILE_CLAMP + marginal_tol / den;
    if strict && !(-slack..=1.0 + slack).contains(&r) {
        return Err(Error::QuantileRange { ratio: r, i, j });
    }
    Ok(r.clamp(0.0, 1.0))
}

/// Conditional ranks of `q` along each axis: `R1 = int_0^x q / f~2(y)` and
/// `R2 = int_1^y q / f1(x)`, clamped to `[0, 1]`.
fn inner_ratios(inst: &Instance, q: &ScalarField2D, strict: bool) -> Result<(Array2<f64>, Array2<f64>)> {
    let cx = cumulative_along(q, Axis::X);
    let cy = cumulative_along(q, Axis::Y);
    let (nx, ny) = q.values().dim();
    let mut r1 = Array2::zeros((nx, ny));
    let mut r2 = Array2::zeros((nx, ny));
    let tol = inst.marginal_tol;
    for i in 0..nx {
        for j in 0..ny {
            r1[[i, j]] = ratio(cx.get(i, j), inst.f2_tilde.values()[j], tol, strict, i, j)?;
            r2[[i, j]] = ratio(cy.get(i, j), inst.f1.values()[i], tol, strict, i, j)?;
        }
    }
    Ok((r1, r2))
}

/// First term restricted to the row at `y_j`:
/// `sum_i w_i (x_i - G~1(R1, y_j))^2 q(x_i, y_j)`.
pub(crate) fn term1_row(inst: &Instance, j: usize, column: &[f64]) -> f64 {
    let (gx, gy) = inst.z_grids();
    let h = gx.spacing();
    let y = gy.node(j);
    let den = inst.f2_tilde.values()[j];
    let cum = cumulative_trapezoid(column, h);
    let vals: Vec<f64> = (0..gx.n())
        .map(|i| {
            let r = (cum[i] / den).clamp(0.0, 1.0);
            let g = inst.g1_tilde.quantile(r, y).expect("clamped level");
            (gx.node(i) - g).powi(2) * column[i]
        })
        .collect();
    trapezoid(&vals, h)
}

/// Second term restricted to the column at `x_i`:
/// `sum_j w_j (y_j - G2(x_i, R2))^2 q(x_i, y_j)`.
pub(crate) fn term2_col(inst: &Instance, i: usize, row: &[f64]) -> f64 {
    let (gx, gy) = inst.z_grids();
    let h = gy.spacing();
    let x = gx.node(i);
    let den = inst.f1.values()[i];
    let cum = cumulative_trapezoid(row, h);
    let vals: Vec<f64> = (0..gy.n())
        .map(|j| {
            let r = (cum[j] / den).clamp(0.0, 1.0);
            let g = inst.g2.quantile(r, x).expect("clamped level");
            (gy.node(j) - g).powi(2) * row[j]
        })
        .collect();
    trapezoid(&vals, h)
}

/// Objective without the feasibility checks; ratios are clamped silently.
pub(crate) fn objective_unchecked(inst: &Instance, values: &Array2<f64>) -> f64 {
    let (gx, gy) = inst.z_grids();
    let (wx, wy) = (gx.trapezoid_weights(), gy.trapezoid_weights());
    let mut total = 0.0;
    for j in 0..gy.n() {
        let column = values.column(j).to_vec();
        total += wy[j] * term1_row(inst, j, &column);
    }
    for i in 0..gx.n() {
        let row = values.row(i).to_vec();
        total += wx[i] * term2_col(inst, i, &row);
    }
    total
}

/// The cost `E|X - Z|^2 + E|Z - X~|^2` of the conditional quantile couplings
/// induced by `cand`.
pub fn objective(inst: &Instance, cand: &CandidateQ) -> Result<f64> {
    let defect = inst.marginal_defect(cand.q.values());
    if defect > inst.marginal_tol {
        return Err(Error::MarginalViolation {
            defect,
            tol: inst.marginal_tol,
        });
    }
    inner_ratios(inst, cand.q.as_field(), true)?;
    Ok(objective_unchecked(inst, cand.q.values()))
}

/// Pieces of `M` for one candidate: the edge integrals and the integrand of
/// the double integral.
struct MParts {
    edge_x: Vec<f64>,
    edge_y: Vec<f64>,
    bracket: ScalarField2D,
}

fn m_parts(inst: &Instance, cand: &CandidateQ) -> Result<MParts> {
    let defect = inst.marginal_defect(cand.q.values());
    if defect > inst.marginal_tol {
        return Err(Error::MarginalViolation {
            defect,
            tol: inst.marginal_tol,
        });
    }
    let (gx, gy) = inst.z_grids();
    let (r1, r2) = inner_ratios(inst, cand.q.as_field(), true)?;
    let r1f = ScalarField2D::new(gx, gy, r1)?;
    let r2f = ScalarField2D::new(gx, gy, r2)?;
    let d1 = diff1(&r1f, Axis::Y)?;
    let d2 = diff1(&r2f, Axis::X)?;
    let mut bracket = ScalarField2D::zeros(gx, gy);
    for i in 0..gx.n() {
        let x = gx.node(i);
        for j in 0..gy.n() {
            let y = gy.node(j);
            let gt = inst.g1_tilde.quantile_with_derivatives(r1f.get(i, j), y)?;
            let g = inst.g2.quantile_with_derivatives(r2f.get(i, j), x)?;
            bracket.values_mut()[[i, j]] =
                gt.ds * d1.get(i, j) + gt.dcond + g.ds * d2.get(i, j) + g.dcond;
        }
    }
    // edge integrands: G~1 along y = 1 and G2 along x = 0
    let y0 = gy.node(0);
    let x0 = gx.node(0);
    let along_x: Vec<f64> = (0..gx.n())
        .map(|i| inst.g1_tilde.quantile(r1f.get(i, 0), y0))
        .collect::<Result<_>>()?;
    let along_y: Vec<f64> = (0..gy.n())
        .map(|j| inst.g2.quantile(r2f.get(0, j), x0))
        .collect::<Result<_>>()?;
    Ok(MParts {
        edge_x: cumulative_trapezoid(&along_x, gx.spacing()),
        edge_y: cumulative_trapezoid(&along_y, gy.spacing()),
        bracket,
    })
}

fn m_closed_form(inst: &Instance, parts: &MParts) -> ScalarField2D {
    let (gx, gy) = inst.z_grids();
    let mut out = ScalarField2D::zeros(gx, gy);
    for i in 0..gx.n() {
        let x = gx.node(i);
        for j in 0..gy.n() {
            let y = gy.node(j);
            out.values_mut()[[i, j]] = x * x + y * y - 2.0 * parts.edge_x[i] - 2.0 * parts.edge_y[j];
        }
    }
    out
}

/// The function `M` whose mixed partial is minus twice the stationarity
/// bracket; the bracket is expanded by the chain rule.
pub fn m_field(inst: &Instance, cand: &CandidateQ) -> Result<ScalarField2D> {
    let parts = m_parts(inst, cand)?;
    let double = cumulative_along(&cumulative_along(&parts.bracket, Axis::X), Axis::Y);
    let mut m = m_closed_form(inst, &parts);
    m.values_mut().zip_mut_with(double.values(), |a, b| *a -= 2.0 * b);
    Ok(m)
}

/// Largest gap between `M` and its closed form at a stationary candidate,
/// which drops the double integral.
pub fn m_closed_form_residual(inst: &Instance, cand: &CandidateQ) -> Result<f64> {
    let parts = m_parts(inst, cand)?;
    let closed = m_closed_form(inst, &parts);
    let m = m_field(inst, cand)?;
    Ok(m
        .values()
        .iter()
        .zip(closed.values())
        .fold(0.0, |acc, (a, b)| acc.max((a - b).abs())))
}

/// Mixed partial of `M`, which vanishes at a stationary candidate.
pub fn m_mixed_partial(inst: &Instance, cand: &CandidateQ) -> Result<ScalarField2D> {
    mixed_xy(&m_field(inst, cand)?)
}

/// The four-square perturbation: `+delta` on `[a, a+eps] x [b, b+eps]` and
/// `[a1, a1+eps] x [b1, b1+eps]`, `-delta` on the two cross squares.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CornerPerturbation {
    pub a: f64,
    pub a1: f64,
    pub b: f64,
    pub b1: f64,
    pub eps: f64,
    pub delta: f64,
}

impl CornerPerturbation {
    pub fn validate(&self, gx: &Grid1D, gy: &Grid1D) -> Result<()> {
        let Self { a, a1, b, b1, eps, delta } = *self;
        let checks = [
            (eps > 0.0, "eps must be positive"),
            (delta.is_finite(), "delta must be finite"),
            (gx.lo() < a && a + eps < a1 && a1 + eps < gx.hi(), "x squares must be disjoint and inside the domain"),
            (gy.lo() < b && b + eps < b1 && b1 + eps < gy.hi(), "y squares must be disjoint and inside the domain"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::GeometryInvalid(format!("{msg}: {self:?}"))),
            None => Ok(()),
        }
    }

    /// Random valid geometry with side between 6% and 20% of the domain.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, gx: &Grid1D, gy: &Grid1D, delta: f64) -> Self {
        let frac = rng.random_range(0.06..0.2);
        let (a, a1, eps_x) = random_pair(rng, gx, frac);
        let (b, b1, _) = random_pair(rng, gy, frac * (gx.hi() - gx.lo()) / (gy.hi() - gy.lo()));
        Self {
            a,
            a1,
            b,
            b1,
            eps: eps_x,
            delta,
        }
    }
}

fn random_pair<R: Rng + ?Sized>(rng: &mut R, g: &Grid1D, frac: f64) -> (f64, f64, f64) {
    let len = g.hi() - g.lo();
    let eps = frac * len;
    let gaps: [f64; 3] = [
        rng.random_range(0.1..1.0),
        rng.random_range(0.1..1.0),
        rng.random_range(0.1..1.0),
    ];
    let scale = (len - 2.0 * eps) / gaps.iter().sum::<f64>();
    let a = g.lo() + gaps[0] * scale;
    let a1 = a + eps + gaps[1] * scale;
    (a, a1, eps)
}

/// Length of the overlap of `[a, b]` with the trapezoid dual cell of each
/// node.
fn dual_cell_overlap(g: &Grid1D, a: f64, b: f64) -> Vec<f64> {
    let h = g.spacing();
    (0..g.n())
        .map(|i| {
            let c0 = (g.node(i) - 0.5 * h).max(g.lo());
            let c1 = (g.node(i) + 0.5 * h).min(g.hi());
            (b.min(c1) - a.max(c0)).max(0.0)
        })
        .collect()
}

/// Adds `delta * xi` to the candidate. Each square is spread over the grid by
/// its overlap with the trapezoid cells, so marginals are unchanged.
pub fn apply_perturbation(cand: &CandidateQ, pert: &CornerPerturbation) -> Result<CandidateQ> {
    let (gx, gy) = (*cand.q.gx(), *cand.q.gy());
    pert.validate(&gx, &gy)?;
    let (wx, wy) = (gx.trapezoid_weights(), gy.trapezoid_weights());
    let xa = dual_cell_overlap(&gx, pert.a, pert.a + pert.eps);
    let xa1 = dual_cell_overlap(&gx, pert.a1, pert.a1 + pert.eps);
    let yb = dual_cell_overlap(&gy, pert.b, pert.b + pert.eps);
    let yb1 = dual_cell_overlap(&gy, pert.b1, pert.b1 + pert.eps);
    let mut values = cand.q.values().clone();
    for i in 0..gx.n() {
        for j in 0..gy.n() {
            let xi = xa[i] * yb[j] + xa1[i] * yb1[j] - xa[i] * yb1[j] - xa1[i] * yb[j];
            if xi != 0.0 {
                let v = values[[i, j]] + pert.delta * xi / (wx[i] * wy[j]);
                if v < POSITIVITY_FLOOR {
                    return Err(Error::PositivityViolated { value: v });
                }
                values[[i, j]] = v;
            }
        }
    }
    Ok(CandidateQ::new_unchecked(Density2D::new(gx, gy, values)?))
}

/// A point `Z` with its images `X` under `P` and `X~` under `P~`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingPair {
    pub x: [f64; 2],
    pub x_tilde: [f64; 2],
}

/// Maps each `Z = (x, y)` to `X = (x, G2(x, F_q(y|x)))` and
/// `X~ = (G~1(F_q(x|y), y), y)`.
pub fn reconstruct_coupling(inst: &Instance, cand: &CandidateQ, points: &[(f64, f64)]) -> Result<Vec<CouplingPair>> {
    let first = ConditionalQuantile::new(&cand.q, Which::FirstGivenSecond);
    let second = ConditionalQuantile::new(&cand.q, Which::SecondGivenFirst);
    points
        .iter()
        .map(|&(x, y)| {
            let sx = first.cond_cdf(x, y)?;
            let sy = second.cond_cdf(y, x)?;
            Ok(CouplingPair {
                x: [x, inst.g2.quantile(sy, x)?],
                x_tilde: [inst.g1_tilde.quantile(sx, y)?, y],
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(lo: f64, n: usize) -> Grid1D {
        Grid1D::new(lo, lo + 1.0, n).unwrap()
    }

    fn density(lo: f64, n: usize, f: impl Fn(f64, f64) -> f64) -> Density2D {
        Density2D::from_fn(unit(lo, n), unit(lo, n), f).unwrap()
    }

    fn uniform_instance(n: usize) -> Instance {
        Instance::new(density(0.0, n, |_, _| 1.0), density(1.0, n, |_, _| 1.0)).unwrap()
    }

    fn tg(m: f64) -> impl Fn(f64) -> f64 {
        move |t| (-0.5 * ((t - m) / 0.2).powi(2)).exp()
    }

    fn gauss_instance(n: usize) -> Instance {
        let (a, b, c, d) = (tg(0.5), tg(0.4), tg(1.5), tg(1.6));
        Instance::new(density(0.0, n, |x, y| a(x) * b(y)), density(1.0, n, |x, y| c(x) * d(y))).unwrap()
    }

    fn bilinear_instance(n: usize) -> Instance {
        Instance::new(
            density(0.0, n, |x, y| 1.0 + 0.5 * (2.0 * x - 1.0) * (2.0 * y - 1.0)),
            density(1.0, n, |x, y| 1.0 - 0.3 * (2.0 * x - 3.0) * (2.0 * y - 3.0)),
        )
        .unwrap()
    }

    fn marginal_of(lo: f64, n: usize, f: impl Fn(f64) -> f64) -> Marginal1D {
        let g = Grid1D::new(lo, lo + 1.0, n).unwrap();
        Marginal1D::from_values(g, g.nodes().into_iter().map(f).collect()).unwrap()
    }

    #[test]
    fn krw_translation_identity_and_triangular() {
        let u0 = marginal_of(0.0, 65, |_| 1.0);
        let u1 = marginal_of(1.0, 65, |_| 1.0);
        assert_abs_diff_eq!(krw_1d_distance(&u0, &u1), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(krw_1d_distance(&u0, &u0), 0.0, epsilon = 1e-12);
        // int_0^1 (t - sqrt t)^2 dt = 1/3 - 4/5 + 1/2 = 1/30
        let tri = marginal_of(0.0, 1025, |t| 2.0 * t);
        let d = krw_1d_distance(&u0, &tri);
        assert!((d * d - 1.0 / 30.0).abs() / (1.0 / 30.0) < 1e-3, "{}", d * d);
    }

    #[test]
    fn krw_is_symmetric() {
        let a = marginal_of(0.0, 129, |t| 1.0 + 0.8 * (t - 0.5));
        let b = marginal_of(0.0, 65, |t| tg(0.3)(t));
        let c = marginal_of(1.0, 97, |t| 2.0 - t);
        assert_abs_diff_eq!(krw_1d_distance(&a, &b), krw_1d_distance(&b, &a), epsilon = 1e-12);
        assert!(krw_1d_distance(&a, &c) <= krw_1d_distance(&a, &b) + krw_1d_distance(&b, &c) + 1e-12);
        assert!(krw_1d_distance(&b, &c) <= krw_1d_distance(&b, &a) + krw_1d_distance(&a, &c) + 1e-12);
    }

    #[test]
    fn shift_relation_examples() {
        assert_eq!(shift_cost_relation(0.5, 0.5, 0.5, 0.5, 2.0), 0.0);
        assert_abs_diff_eq!(shift_cost_relation(0.5, 0.6, 0.4, 0.4, 2.04), 2.04 - 0.2 - 2.0 + 0.0, epsilon = 1e-15);
    }

    #[test]
    fn split_identity() {
        assert_eq!(split_check(&[[0.0, 0.0, 2.0, 2.0]]), 0.0);
        assert_eq!((0.0f64 - 2.0).powi(2) * 2.0, 8.0);
        assert!(split_check(&[[0.3, 0.7, 1.2, 1.9]]) <= 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<[f64; 4]> = (0..1000)
            .map(|_| {
                [
                    rng.random_range(0.0..1.0),
                    rng.random_range(0.0..1.0),
                    rng.random_range(1.0..2.0),
                    rng.random_range(1.0..2.0),
                ]
            })
            .collect();
        assert!(split_check(&samples) <= 1e-12);
    }

    #[test]
    fn uniform_objective_is_two() {
        let inst = uniform_instance(17);
        let q = inst.independent_candidate().unwrap();
        assert_abs_diff_eq!(objective(&inst, &q).unwrap(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn product_objective_is_sum_of_1d_distances() {
        let inst = gauss_instance(65);
        let q = inst.independent_candidate().unwrap();
        let expected = krw_1d_distance(inst.f1(), inst.f1_tilde()).powi(2)
            + krw_1d_distance(inst.f2(), inst.f2_tilde()).powi(2);
        let got = objective(&inst, &q).unwrap();
        assert!((got - expected).abs() / expected < 1e-3, "{got} vs {expected}");
    }

    #[test]
    fn infeasible_candidates_are_rejected() {
        let inst = bilinear_instance(17);
        let (gx, gy) = inst.z_grids();
        let q = Density2D::from_fn(gx, gy, |x, _| 0.5 + x).unwrap();
        assert!(matches!(CandidateQ::new(&inst, q), Err(Error::MarginalViolation { .. })));
        let q = inst.independent_candidate().unwrap();
        let loose = inst.clone().with_marginal_tol(1e-30);
        let tight = CandidateQ::new_unchecked(
            Density2D::new(gx, gy, q.q().values().mapv(|v| v * (1.0 + 1e-6))).unwrap(),
        );
        assert!(matches!(objective(&loose, &tight), Err(Error::MarginalViolation { .. })));
    }

    #[test]
    fn objective_is_nonnegative_and_bounded_below_by_separate_1d_costs() {
        let inst = bilinear_instance(17);
        let q = inst.independent_candidate().unwrap();
        let v = objective(&inst, &q).unwrap();
        assert!(v >= 0.0);
        // each conditional coupling costs at least the 1D optimum of its
        // marginals
        let lower = krw_1d_distance(inst.f1(), inst.f1_tilde()).powi(2)
            + krw_1d_distance(inst.f2(), inst.f2_tilde()).powi(2);
        assert!(v >= lower - 1e-9);
    }

    #[test]
    fn uniform_m_field_and_closed_form() {
        let inst = uniform_instance(33);
        let q = inst.independent_candidate().unwrap();
        let m = m_field(&inst, &q).unwrap();
        let (gx, gy) = inst.z_grids();
        for i in 0..gx.n() {
            for j in 0..gy.n() {
                let (x, y) = (gx.node(i), gy.node(j));
                // x^2 + y^2 - 2 int_0^x (1 + s) ds - 2 int_1^y (t - 1) dt
                assert_abs_diff_eq!(m.get(i, j), -2.0 * x + 2.0 * y - 1.0, epsilon = 1e-12);
            }
        }
        assert_abs_diff_eq!(m.get(0, 0), 1.0, epsilon = 1e-14);
        assert!(m_closed_form_residual(&inst, &q).unwrap() <= 1e-8);
        assert!(m_mixed_partial(&inst, &q).unwrap().max_abs() <= 1e-10);
    }

    #[test]
    fn product_bracket_vanishes() {
        let inst = gauss_instance(33);
        let q = inst.independent_candidate().unwrap();
        assert!(m_closed_form_residual(&inst, &q).unwrap() <= 1e-8);
    }

    #[test]
    fn perturbation_preserves_marginals_and_raises_uniform_cost() {
        let inst = uniform_instance(33);
        let q = inst.independent_candidate().unwrap();
        let pert = CornerPerturbation {
            a: 0.2,
            a1: 0.6,
            b: 1.2,
            b1: 1.6,
            eps: 0.1,
            delta: 0.1,
        };
        let moved = apply_perturbation(&q, &pert).unwrap();
        assert!(inst.marginal_defect(moved.q().values()) <= 1e-10);
        assert!(objective(&inst, &moved).unwrap() > objective(&inst, &q).unwrap());
        let zero = apply_perturbation(&q, &CornerPerturbation { delta: 0.0, ..pert }).unwrap();
        assert_eq!(zero, q);
    }

    #[test]
    fn perturbation_guards() {
        let inst = uniform_instance(17);
        let q = inst.independent_candidate().unwrap();
        let bad = CornerPerturbation {
            a: 0.5,
            a1: 0.55,
            b: 1.2,
            b1: 1.6,
            eps: 0.1,
            delta: 0.1,
        };
        assert!(matches!(apply_perturbation(&q, &bad), Err(Error::GeometryInvalid(_))));
        let deep = CornerPerturbation {
            a: 0.2,
            a1: 0.6,
            b: 1.2,
            b1: 1.6,
            eps: 0.1,
            delta: 2.0,
        };
        assert!(matches!(apply_perturbation(&q, &deep), Err(Error::PositivityViolated { .. })));
    }

    #[test]
    fn uniform_coupling_is_a_translation() {
        let inst = uniform_instance(17);
        let q = inst.independent_candidate().unwrap();
        let pair = reconstruct_coupling(&inst, &q, &[(0.3, 1.7)]).unwrap()[0];
        assert_abs_diff_eq!(pair.x[0], 0.3, epsilon = 1e-14);
        assert_abs_diff_eq!(pair.x[1], 0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(pair.x_tilde[0], 1.3, epsilon = 1e-12);
        assert_abs_diff_eq!(pair.x_tilde[1], 1.7, epsilon = 1e-14);
    }

    #[test]
    fn product_coupling_ignores_the_other_coordinate() {
        let inst = gauss_instance(33);
        let q = inst.independent_candidate().unwrap();
        let pairs = reconstruct_coupling(&inst, &q, &[(0.4, 1.2), (0.4, 1.5), (0.4, 1.9)]).unwrap();
        for p in &pairs[1..] {
            assert_abs_diff_eq!(p.x_tilde[0], pairs[0].x_tilde[0], epsilon = 1e-12);
        }
    }

    #[test]
    fn monte_carlo_coupling_cost_matches_objective() {
        let inst = bilinear_instance(33);
        let q = inst.independent_candidate().unwrap();
        // sample Z from q: x from its X-marginal, then y given x
        let mx = marginal(q.q(), Axis::X);
        let cond = ConditionalQuantile::new(q.q(), Which::SecondGivenFirst);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let points: Vec<(f64, f64)> = (0..100_000)
            .map(|_| {
                let x = mx.quantile(rng.random_range(0.0..1.0)).unwrap();
                let y = cond.quantile(rng.random_range(0.0..1.0), x).unwrap();
                (x, y)
            })
            .collect();
        let pairs = reconstruct_coupling(&inst, &q, &points).unwrap();
        let mc: f64 = pairs
            .iter()
            .zip(&points)
            .map(|(p, &(x, y))| (p.x[1] - y).powi(2) + (p.x_tilde[0] - x).powi(2))
            .sum::<f64>()
            / points.len() as f64;
        let obj = objective(&inst, &q).unwrap();
        assert!((mc - obj).abs() / obj < 0.01, "mc {mc} objective {obj}");
    }

    proptest! {
        #[test]
        fn random_perturbations_keep_marginals(seed in 0u64..1000, delta in -0.05f64..0.05) {
            let inst = uniform_instance(33);
            let q = inst.independent_candidate().unwrap();
            let (gx, gy) = inst.z_grids();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pert = CornerPerturbation::random(&mut rng, &gx, &gy, delta);
            prop_assert!(pert.validate(&gx, &gy).is_ok());
            let moved = apply_perturbation(&q, &pert).unwrap();
            prop_assert!(inst.marginal_defect(moved.q().values()) <= 1e-10);
            prop_assert!(objective(&inst, &moved).unwrap() >= 0.0);
        }

        #[test]
        fn split_check_is_algebraic(s in proptest::array::uniform4(0.0f64..2.0)) {
            prop_assert!(split_check(&[s]) <= 1e-12);
        }
    }
}
