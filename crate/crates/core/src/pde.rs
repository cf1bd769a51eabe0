//! The quasi-linear elliptic Dirichlet problem for the distribution function
//! `F(x, y) = int_0^x int_1^y p` of `Z`, solved by damped Picard iteration.
//!
//! The equation is `A F_xx + B F_yy = C` with
//! `A = 1 / f(x, G2(x, F_x / f1))`, `B = 1 / f~(G~1(F_y / f~2, y), y)` and a
//! right-hand side built from the conditioning derivatives of the quantile
//! maps and the log-derivatives of the marginals.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::cost::{m_closed_form_residual, m_field, objective, CandidateQ, Instance};
use crate::error::{Error, Result};
use crate::grid::{diff1, diff1_1d, diff2_1d, mixed_xy, Axis, Density2D, ScalarField2D, POSITIVITY_FLOOR};
use crate::linsolve::{self, FivePoint};

/// Residual maxima are taken over nodes at least this fraction of each side
/// away from the boundary.
pub const RESIDUAL_CORE: f64 = 0.125;

/// Largest share of mass, in percent, that flooring the recovered density may
/// remove.
pub const MAX_FLOORED_PERCENT: f64 = 1.0;

/// Allowed excursion of `F_x / f1` and `F_y / f~2` outside `[0, 1]` before
/// clamping. Where the conditional rank is near 0 or 1 the differencing
/// error of `F` alone can exceed round-off.
pub const RATIO_SLACK: f64 = 1e-2;

/// Halvings of the damped step tried before a guard violation is fatal.
pub const MAX_STEP_HALVINGS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialGuess {
    /// `F(x, 2) * F(1, y)`, the distribution function of the independent
    /// coupling of the two marginals.
    Independence,
    /// Bilinear blend of the four boundary curves.
    Transfinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub nx: usize,
    pub ny: usize,
    pub omega: f64,
    pub picard_tol: f64,
    pub picard_max_iters: usize,
    pub linear_tol: f64,
    pub linear_max_iters: usize,
    pub initial_guess: InitialGuess,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            nx: 65,
            ny: 65,
            omega: 0.7,
            picard_tol: 1e-8,
            picard_max_iters: 200,
            linear_tol: 1e-10,
            linear_max_iters: 20_000,
            initial_guess: InitialGuess::Independence,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.nx < 3 || self.ny < 3 {
            return bad("grid sizes must be at least 3");
        }
        if !(self.omega > 0.0 && self.omega <= 1.0) {
            return bad("omega must lie in (0, 1]");
        }
        if !(self.picard_tol > 0.0 && self.linear_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.picard_max_iters == 0 || self.linear_max_iters == 0 {
            return bad("iteration limits must be positive");
        }
        Ok(())
    }
}

/// Grid values of `F` on the `Z` grids.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionF {
    field: ScalarField2D,
}

impl DistributionF {
    pub fn new(field: ScalarField2D) -> Self {
        Self { field }
    }

    /// Dirichlet data with a zero interior: `F(0, y) = F(x, 1) = 0`,
    /// `F(x, 2) = int_0^x f1` and `F(1, y) = int_1^y f~2`.
    pub fn boundary(inst: &Instance) -> Self {
        let (gx, gy) = inst.z_grids();
        let (nx, ny) = (gx.n(), gy.n());
        let mut v = Array2::zeros((nx, ny));
        for i in 0..nx {
            v[[i, ny - 1]] = inst.f1().cdf()[i];
        }
        for j in 0..ny {
            v[[nx - 1, j]] = inst.f2_tilde().cdf()[j];
        }
        Self {
            field: ScalarField2D::new(gx, gy, v).expect("shape matches grids"),
        }
    }

    pub fn initial(inst: &Instance, guess: InitialGuess) -> Self {
        let mut f = Self::boundary(inst);
        let v = f.field.values_mut();
        let (nx, ny) = v.dim();
        let top: Vec<f64> = (0..nx).map(|i| v[[i, ny - 1]]).collect();
        let right: Vec<f64> = (0..ny).map(|j| v[[nx - 1, j]]).collect();
        for i in 1..nx - 1 {
            for j in 1..ny - 1 {
                v[[i, j]] = match guess {
                    InitialGuess::Independence => top[i] * right[j],
                    InitialGuess::Transfinite => {
                        // left and bottom edges are zero
                        let u = i as f64 / (nx - 1) as f64;
                        let w = j as f64 / (ny - 1) as f64;
                        u * right[j] + w * top[i] - u * w * top[nx - 1]
                    }
                };
            }
        }
        f
    }

    pub fn field(&self) -> &ScalarField2D {
        &self.field
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.field.get(i, j)
    }

    /// Adjacent node pairs along either axis where `F` decreases by more than
    /// round-off.
    pub fn monotone_violations(&self) -> usize {
        let v = self.field.values();
        let (nx, ny) = v.dim();
        let mut count = 0;
        for i in 0..nx {
            for j in 0..ny {
                if i + 1 < nx && v[[i + 1, j]] < v[[i, j]] - 1e-12 {
                    count += 1;
                }
                if j + 1 < ny && v[[i, j + 1]] < v[[i, j]] - 1e-12 {
                    count += 1;
                }
            }
        }
        count
    }
}

/// Coefficients of the frozen linear problem `A F_xx + B F_yy = C`.
#[derive(Debug, Clone, PartialEq)]
pub struct PdeCoefficients {
    pub a: ScalarField2D,
    pub b: ScalarField2D,
    pub c: ScalarField2D,
}

impl PdeCoefficients {
    /// Smallest leading coefficient over interior nodes.
    pub fn min_leading(&self) -> f64 {
        let (nx, ny) = self.a.values().dim();
        let mut m = f64::INFINITY;
        for i in 1..nx - 1 {
            for j in 1..ny - 1 {
                m = m.min(self.a.get(i, j)).min(self.b.get(i, j));
            }
        }
        m
    }
}

/// Marginals implied by the boundary data of `F`: first and second
/// differences of `F(., 2)` and `F(1, .)`.
struct EdgeMarginals {
    f1: Vec<f64>,
    df1: Vec<f64>,
    f2: Vec<f64>,
    df2: Vec<f64>,
}

fn edge_marginals(f: &ScalarField2D) -> EdgeMarginals {
    let (nx, ny) = f.values().dim();
    let top: Vec<f64> = (0..nx).map(|i| f.get(i, ny - 1)).collect();
    let right: Vec<f64> = (0..ny).map(|j| f.get(nx - 1, j)).collect();
    let (hx, hy) = (f.gx().spacing(), f.gy().spacing());
    EdgeMarginals {
        f1: diff1_1d(&top, hx),
        df1: diff2_1d(&top, hx),
        f2: diff1_1d(&right, hy),
        df2: diff2_1d(&right, hy),
    }
}

fn checked_ratio(num: f64, den: f64, i: usize, j: usize) -> Result<f64> {
    let r = num / den;
    if !(-RATIO_SLACK..=1.0 + RATIO_SLACK).contains(&r) {
        return Err(Error::QuantileRange { ratio: r, i, j });
    }
    Ok(r.clamp(0.0, 1.0))
}

fn check_grids(inst: &Instance, f: &DistributionF) -> Result<()> {
    let (gx, gy) = inst.z_grids();
    if f.field.gx().approx_eq(&gx) && f.field.gy().approx_eq(&gy) {
        Ok(())
    } else {
        Err(Error::DomainMismatch("F is not on the instance's Z grids".into()))
    }
}

/// Copies the nearest interior value onto each boundary node.
fn extend_to_boundary(v: &mut Array2<f64>) {
    let (nx, ny) = v.dim();
    for i in 0..nx {
        for j in 0..ny {
            if i == 0 || j == 0 || i == nx - 1 || j == ny - 1 {
                let ii = i.clamp(1, nx - 2);
                let jj = j.clamp(1, ny - 2);
                v[[i, j]] = v[[ii, jj]];
            }
        }
    }
}

/// Freezes the coefficients at `f`, using central differences of `F` and the
/// marginals implied by its boundary data.
pub fn assemble_coefficients(inst: &Instance, f: &DistributionF) -> Result<PdeCoefficients> {
    check_grids(inst, f)?;
    let field = &f.field;
    let (gx, gy) = (*field.gx(), *field.gy());
    let (nx, ny) = (gx.n(), gy.n());
    let (hx, hy) = (gx.spacing(), gy.spacing());
    let em = edge_marginals(field);
    let mut a = Array2::zeros((nx, ny));
    let mut b = Array2::zeros((nx, ny));
    let mut c = Array2::zeros((nx, ny));
    for i in 1..nx - 1 {
        let x = gx.node(i);
        for j in 1..ny - 1 {
            let y = gy.node(j);
            let fx = (field.get(i + 1, j) - field.get(i - 1, j)) / (2.0 * hx);
            let fy = (field.get(i, j + 1) - field.get(i, j - 1)) / (2.0 * hy);
            let rx = checked_ratio(fx, em.f1[i], i, j)?;
            let ry = checked_ratio(fy, em.f2[j], i, j)?;
            let g = inst.g2().quantile_with_derivatives(rx, x)?;
            let gt = inst.g1_tilde().quantile_with_derivatives(ry, y)?;
            let ca = g.ds / inst.f1().values()[i];
            let cb = gt.ds / inst.f2_tilde().values()[j];
            a[[i, j]] = ca;
            b[[i, j]] = cb;
            c[[i, j]] = -gt.dcond - g.dcond + cb * (em.df2[j] / em.f2[j]) * fy + ca * (em.df1[i] / em.f1[i]) * fx;
        }
    }
    extend_to_boundary(&mut a);
    extend_to_boundary(&mut b);
    extend_to_boundary(&mut c);
    Ok(PdeCoefficients {
        a: ScalarField2D::new(gx, gy, a)?,
        b: ScalarField2D::new(gx, gy, b)?,
        c: ScalarField2D::new(gx, gy, c)?,
    })
}

/// Solves the frozen problem with the boundary values of `boundary`; its
/// interior is used as the starting guess.
pub fn linear_elliptic_solve(
    coeffs: &PdeCoefficients,
    boundary: &DistributionF,
    linear_tol: f64,
    linear_max_iters: usize,
) -> Result<DistributionF> {
    linear_step(coeffs, boundary, linear_tol, linear_max_iters).map(|(f, _)| f)
}

fn linear_step(
    coeffs: &PdeCoefficients,
    boundary: &DistributionF,
    linear_tol: f64,
    linear_max_iters: usize,
) -> Result<(DistributionF, usize)> {
    if !coeffs.a.same_grids(&boundary.field) {
        return Err(Error::DomainMismatch("coefficients and boundary data are on different grids".into()));
    }
    let op = FivePoint {
        a: coeffs.a.values(),
        b: coeffs.b.values(),
        hx: boundary.field.gx().spacing(),
        hy: boundary.field.gy().spacing(),
    };
    let out = linsolve::solve(&op, coeffs.c.values(), boundary.field.values(), linear_tol, linear_max_iters)?;
    log::trace!(
        "linear solve: {} iterations, relative residual {:e}",
        out.iterations,
        out.relative_residual
    );
    let field = ScalarField2D::new(*boundary.field.gx(), *boundary.field.gy(), out.solution)?;
    Ok((DistributionF::new(field), out.iterations))
}

/// Left side of the stationarity condition
/// `d/dy G~1(F_y / f~2, y) + d/dx G2(x, F_x / f1)` at interior nodes, expanded
/// by the chain rule; boundary nodes are zero.
pub fn hh_residual(inst: &Instance, f: &DistributionF) -> Result<ScalarField2D> {
    check_grids(inst, f)?;
    let field = &f.field;
    let (gx, gy) = (*field.gx(), *field.gy());
    let (nx, ny) = (gx.n(), gy.n());
    let em = edge_marginals(field);
    let fx = diff1(field, Axis::X)?;
    let fy = diff1(field, Axis::Y)?;
    let mut rx = Array2::zeros((nx, ny));
    let mut ry = Array2::zeros((nx, ny));
    for i in 0..nx {
        for j in 0..ny {
            let interior = i > 0 && j > 0 && i < nx - 1 && j < ny - 1;
            if interior {
                rx[[i, j]] = checked_ratio(fx.get(i, j), em.f1[i], i, j)?;
                ry[[i, j]] = checked_ratio(fy.get(i, j), em.f2[j], i, j)?;
            } else {
                rx[[i, j]] = (fx.get(i, j) / em.f1[i]).clamp(0.0, 1.0);
                ry[[i, j]] = (fy.get(i, j) / em.f2[j]).clamp(0.0, 1.0);
            }
        }
    }
    let rx = ScalarField2D::new(gx, gy, rx)?;
    let ry = ScalarField2D::new(gx, gy, ry)?;
    let drx = diff1(&rx, Axis::X)?;
    let dry = diff1(&ry, Axis::Y)?;
    let mut out = ScalarField2D::zeros(gx, gy);
    for i in 1..nx - 1 {
        let x = gx.node(i);
        for j in 1..ny - 1 {
            let y = gy.node(j);
            let g = inst.g2().quantile_with_derivatives(rx.get(i, j), x)?;
            let gt = inst.g1_tilde().quantile_with_derivatives(ry.get(i, j), y)?;
            out.values_mut()[[i, j]] = gt.ds * dry.get(i, j) + gt.dcond + g.ds * drx.get(i, j) + g.dcond;
        }
    }
    Ok(out)
}

/// Density of `Z` recovered from `F`, with what it took to make it feasible.
#[derive(Debug, Clone)]
pub struct RecoveredDensity {
    pub candidate: CandidateQ,
    /// Mass removed by flooring negative values, in percent of the positive
    /// mass.
    pub floored_percent: f64,
    /// Marginal defect of the floored mixed difference before projection.
    pub raw_marginal_defect: f64,
}

/// `p = F_xy` by the cross stencil, floored at the positivity floor and
/// rescaled onto the marginal constraints.
pub fn recover_density(inst: &Instance, f: &DistributionF) -> Result<RecoveredDensity> {
    check_grids(inst, f)?;
    let p = mixed_xy(&f.field)?;
    let (gx, gy) = (*p.gx(), *p.gy());
    let (wx, wy) = (gx.trapezoid_weights(), gy.trapezoid_weights());
    let (mut negative, mut positive) = (0.0, 0.0);
    for ((i, j), v) in p.values().indexed_iter() {
        let w = wx[i] * wy[j];
        if *v < 0.0 {
            negative -= w * v;
        } else {
            positive += w * v;
        }
    }
    let floored_percent = if positive > 0.0 { 100.0 * negative / positive } else { 100.0 };
    if floored_percent > MAX_FLOORED_PERCENT {
        return Err(Error::NegativeMassExcessive {
            percent: floored_percent,
        });
    }
    let mut values = p.values().mapv(|v| v.max(POSITIVITY_FLOOR));
    let raw_marginal_defect = inst.marginal_defect(&values);
    let defect = inst.project_marginals(&mut values, 1000, 1e-13);
    if defect > inst.marginal_tol() {
        return Err(Error::MarginalViolation {
            defect,
            tol: inst.marginal_tol(),
        });
    }
    Ok(RecoveredDensity {
        candidate: CandidateQ::new(inst, Density2D::new(gx, gy, values)?)?,
        floored_percent,
        raw_marginal_defect,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub converged: bool,
    pub iterations: usize,
    pub final_update_norm: f64,
    /// Total inner iterations of the linear solver.
    pub linear_iterations: usize,
    /// Damped steps halved because the next iterate left the quantile domain.
    pub step_halvings: usize,
    /// Largest stationarity residual over the interior core.
    pub hh_residual_max: f64,
    /// Largest mixed partial of `M` over the interior core.
    pub mixed_m_residual_max: f64,
    pub closed_form_m_residual: f64,
    /// Leading-coefficient bound of the instance data.
    pub ellipticity_margin: f64,
    /// Smallest leading coefficient over all iterates.
    pub min_coefficient: f64,
    pub cost: f64,
    pub monotone_violations: usize,
    pub floored_percent: f64,
    pub raw_marginal_defect: f64,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub f: DistributionF,
    pub p: Option<CandidateQ>,
    pub m: Option<ScalarField2D>,
    pub hh: Option<ScalarField2D>,
    pub report: SolveReport,
}

/// Damped Picard iteration from the configured initial guess.
///
/// When the iteration limit is hit the partial solution is returned inside
/// `Error::PicardStalled`.
pub fn picard_solve(inst: &Instance, cfg: &SolverConfig) -> Result<Solution> {
    cfg.validate()?;
    let (gx, gy) = inst.z_grids();
    if gx.n() != cfg.nx || gy.n() != cfg.ny {
        return Err(Error::InvalidConfig(format!(
            "config asks for {} x {} but the instance grid is {} x {}",
            cfg.nx,
            cfg.ny,
            gx.n(),
            gy.n()
        )));
    }
    let margin = crate::conditional::ellipticity_margin(inst.g1_tilde(), inst.g2());
    if margin <= 1e-6 {
        log::warn!("ellipticity margin {margin:e} is not safely positive; continuing");
    }

    let mut f = DistributionF::initial(inst, cfg.initial_guess);
    let mut coeffs = assemble_coefficients(inst, &f)?;
    let mut min_coefficient = f64::INFINITY;
    let mut linear_iterations = 0;
    let mut step_halvings = 0;
    let mut update = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.picard_max_iters {
        iterations += 1;
        let lead = coeffs.min_leading();
        min_coefficient = min_coefficient.min(lead);
        let (next, its) = linear_step(&coeffs, &f, cfg.linear_tol, cfg.linear_max_iters)?;
        linear_iterations += its;
        let old = f.field.values();
        let diff = next.field.values() - old;
        // convergence is judged on the nominal damped step
        update = cfg.omega * diff.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        // halve the step while the new iterate leaves the quantile domain
        let mut omega = cfg.omega;
        let mut halvings = 0;
        let (stepped, stepped_coeffs) = loop {
            let trial = DistributionF::new(ScalarField2D::new(gx, gy, old + &(&diff * omega))?);
            match assemble_coefficients(inst, &trial) {
                Ok(c) => break (trial, c),
                Err(Error::QuantileRange { .. }) if halvings < MAX_STEP_HALVINGS => {
                    halvings += 1;
                    omega *= 0.5;
                }
                Err(e) => return Err(e),
            }
        };
        if halvings > 0 {
            log::debug!("picard {iterations}: step halved {halvings} times to {omega}");
        }
        step_halvings += halvings;
        f = stepped;
        coeffs = stepped_coeffs;
        log::debug!("picard {iterations}: update {update:e}, min coefficient {lead:e}");
        if update <= cfg.picard_tol {
            converged = true;
            break;
        }
    }

    let mut report = SolveReport {
        converged,
        iterations,
        final_update_norm: update,
        linear_iterations,
        step_halvings,
        hh_residual_max: f64::NAN,
        mixed_m_residual_max: f64::NAN,
        closed_form_m_residual: f64::NAN,
        ellipticity_margin: margin,
        min_coefficient,
        cost: f64::NAN,
        monotone_violations: f.monotone_violations(),
        floored_percent: f64::NAN,
        raw_marginal_defect: f64::NAN,
    };
    let diagnostics = diagnose(inst, &f, &mut report);
    let (p, m, hh) = match diagnostics {
        Ok(d) => d,
        Err(e) if converged => return Err(e),
        Err(e) => {
            log::warn!("diagnostics of the stalled iterate failed: {e}");
            (None, None, None)
        }
    };
    let solution = Solution { f, p, m, hh, report };
    if converged {
        Ok(solution)
    } else {
        Err(Error::PicardStalled(Box::new(solution)))
    }
}

type Diagnostics = (Option<CandidateQ>, Option<ScalarField2D>, Option<ScalarField2D>);

fn diagnose(inst: &Instance, f: &DistributionF, report: &mut SolveReport) -> Result<Diagnostics> {
    let hh = hh_residual(inst, f)?;
    report.hh_residual_max = hh.max_abs_core(RESIDUAL_CORE);
    let rec = recover_density(inst, f)?;
    report.floored_percent = rec.floored_percent;
    report.raw_marginal_defect = rec.raw_marginal_defect;
    report.cost = objective(inst, &rec.candidate)?;
    let m = m_field(inst, &rec.candidate)?;
    report.mixed_m_residual_max = mixed_xy(&m)?.max_abs_core(RESIDUAL_CORE);
    report.closed_form_m_residual = m_closed_form_residual(inst, &rec.candidate)?;
    Ok((Some(rec.candidate), Some(m), Some(hh)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid1D;
    use approx::assert_abs_diff_eq;

    fn zgrids(n: usize) -> (Grid1D, Grid1D) {
        (Grid1D::new(0.0, 1.0, n).unwrap(), Grid1D::new(1.0, 2.0, n).unwrap())
    }

    fn uniform_instance(n: usize) -> Instance {
        let g0 = Grid1D::new(0.0, 1.0, n).unwrap();
        let g1 = Grid1D::new(1.0, 2.0, n).unwrap();
        Instance::new(
            Density2D::from_fn(g0, g0, |_, _| 1.0).unwrap(),
            Density2D::from_fn(g1, g1, |_, _| 1.0).unwrap(),
        )
        .unwrap()
    }

    fn bilinear_instance(n: usize) -> Instance {
        let g0 = Grid1D::new(0.0, 1.0, n).unwrap();
        let g1 = Grid1D::new(1.0, 2.0, n).unwrap();
        Instance::new(
            Density2D::from_fn(g0, g0, |x, y| 1.0 + 0.5 * (2.0 * x - 1.0) * (2.0 * y - 1.0)).unwrap(),
            Density2D::from_fn(g1, g1, |x, y| 1.0 - 0.3 * (2.0 * x - 3.0) * (2.0 * y - 3.0)).unwrap(),
        )
        .unwrap()
    }

    fn constant(n: usize, v: f64) -> ScalarField2D {
        let (gx, gy) = zgrids(n);
        ScalarField2D::from_fn(gx, gy, |_, _| v)
    }

    fn translation_f(n: usize) -> DistributionF {
        let (gx, gy) = zgrids(n);
        DistributionF::new(ScalarField2D::from_fn(gx, gy, |x, y| x * (y - 1.0)))
    }

    #[test]
    fn boundary_data_matches_marginals() {
        let inst = bilinear_instance(17);
        let b = DistributionF::boundary(&inst);
        for k in 0..17 {
            assert_eq!(b.get(0, k), 0.0);
            assert_eq!(b.get(k, 0), 0.0);
        }
        assert_eq!(b.get(16, 16), 1.0);
        let f = DistributionF::initial(&inst, InitialGuess::Transfinite);
        for k in 0..17 {
            assert_eq!(f.get(k, 16), b.get(k, 16));
            assert_eq!(f.get(16, k), b.get(16, k));
        }
    }

    #[test]
    fn uniform_coefficients_at_translation() {
        let inst = uniform_instance(17);
        let c = assemble_coefficients(&inst, &translation_f(17)).unwrap();
        for v in c.a.values().iter().chain(c.b.values()) {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-12);
        }
        assert!(c.c.max_abs() < 1e-12);
    }

    #[test]
    fn cold_start_coefficients_are_finite_and_positive() {
        let inst = bilinear_instance(33);
        for guess in [InitialGuess::Independence, InitialGuess::Transfinite] {
            let c = assemble_coefficients(&inst, &DistributionF::initial(&inst, guess)).unwrap();
            assert!(c.min_leading() > 0.0);
            assert!(c.c.values().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn harmonic_bilinear_data_is_reproduced() {
        let n = 17;
        let exact = translation_f(n);
        let mut start = exact.clone();
        let (gx, gy) = zgrids(n);
        // zero interior
        let mut v = start.field.values().clone();
        for i in 1..n - 1 {
            for j in 1..n - 1 {
                v[[i, j]] = 0.0;
            }
        }
        start = DistributionF::new(ScalarField2D::new(gx, gy, v).unwrap());
        let coeffs = PdeCoefficients {
            a: constant(n, 1.0),
            b: constant(n, 1.0),
            c: constant(n, 0.0),
        };
        let got = linear_elliptic_solve(&coeffs, &start, 1e-13, 10_000).unwrap();
        for (a, b) in got.field.values().iter().zip(exact.field.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-11);
        }
    }

    #[test]
    fn quadratic_manufactured_solution_is_exact() {
        let n = 33;
        let (gx, gy) = zgrids(n);
        let exact = ScalarField2D::from_fn(gx, gy, |x, y| x * x + (y - 1.0).powi(2));
        let coeffs = PdeCoefficients {
            a: constant(n, 1.0),
            b: constant(n, 1.0),
            c: constant(n, 4.0),
        };
        let got = linear_elliptic_solve(&coeffs, &DistributionF::new(exact.clone()), 1e-14, 10_000);
        // warm start at the exact answer converges immediately; start cold too
        let mut cold = exact.values().clone();
        for i in 1..n - 1 {
            for j in 1..n - 1 {
                cold[[i, j]] = 0.0;
            }
        }
        let cold = DistributionF::new(ScalarField2D::new(gx, gy, cold).unwrap());
        let cold = linear_elliptic_solve(&coeffs, &cold, 1e-14, 10_000).unwrap();
        for f in [got.unwrap(), cold] {
            for (a, b) in f.field.values().iter().zip(exact.values()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn residual_vanishes_for_uniform_translation() {
        let inst = uniform_instance(17);
        assert!(hh_residual(&inst, &translation_f(17)).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn uniform_density_is_recovered() {
        let inst = uniform_instance(17);
        let rec = recover_density(&inst, &translation_f(17)).unwrap();
        for v in rec.candidate.q().values() {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-12);
        }
        assert_eq!(rec.floored_percent, 0.0);
    }

    #[test]
    fn non_monotone_f_is_rejected() {
        let inst = uniform_instance(17);
        let (gx, gy) = zgrids(17);
        let f = ScalarField2D::from_fn(gx, gy, |x, y| {
            x * (y - 1.0) + 0.05 * (6.0 * std::f64::consts::PI * x).sin() * (6.0 * std::f64::consts::PI * (y - 1.0)).sin()
        });
        let f = DistributionF::new(f);
        assert!(f.monotone_violations() > 0);
        assert!(matches!(
            recover_density(&inst, &f),
            Err(Error::NegativeMassExcessive { .. })
        ));
    }

    #[test]
    fn ratio_guard_tolerates_slack_but_not_gross_excursions() {
        let inst = uniform_instance(17);
        let (gx, gy) = zgrids(17);
        let h = gx.spacing();
        // lowering F(x_8, y_1) makes the central F_x at (x_7, y_1) equal -e
        let dented = |e: f64| {
            let mut f = ScalarField2D::from_fn(gx, gy, |x, y| x * (y - 1.0));
            f.values_mut()[[8, 1]] = gx.node(6) * h - 2.0 * h * e;
            DistributionF::new(f)
        };
        assert!(assemble_coefficients(&inst, &dented(0.5 * RATIO_SLACK)).is_ok());
        assert!(matches!(
            assemble_coefficients(&inst, &dented(10.0 * RATIO_SLACK)),
            Err(Error::QuantileRange { i: 7, j: 1, .. })
        ));
    }

    #[test]
    fn uniform_picard_converges_to_translation() {
        let inst = uniform_instance(33);
        let cfg = SolverConfig {
            nx: 33,
            ny: 33,
            omega: 1.0,
            ..SolverConfig::default()
        };
        let sol = picard_solve(&inst, &cfg).unwrap();
        assert!(sol.report.iterations <= 3);
        assert_abs_diff_eq!(sol.report.cost, 2.0, epsilon = 1e-3);
        let exact = translation_f(33);
        for (a, b) in sol.f.field.values().iter().zip(exact.field.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6);
        }
    }

    #[test]
    fn single_iteration_limit_stalls_with_partial_report() {
        let inst = bilinear_instance(17);
        let cfg = SolverConfig {
            nx: 17,
            ny: 17,
            picard_max_iters: 1,
            ..SolverConfig::default()
        };
        match picard_solve(&inst, &cfg) {
            Err(Error::PicardStalled(sol)) => {
                assert_eq!(sol.report.iterations, 1);
                assert!(!sol.report.converged);
                assert!(sol.report.final_update_norm > cfg.picard_tol);
            }
            other => panic!("expected a stall, got {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        let bad = SolverConfig {
            omega: 1.5,
            ..SolverConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::InvalidConfig(_))));
        let inst = uniform_instance(17);
        assert!(matches!(
            picard_solve(&inst, &SolverConfig::default()),
            Err(Error::InvalidConfig(_))
        ));
    }
}
