//! Acceptance criteria as runnable checks with deterministic reports.
//!
//! Solves are cached per preset and grid size, so criteria that share a
//! solution do not repeat it.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost::{
    apply_perturbation, krw_1d_distance, m_closed_form_residual, objective, shift_cost_relation, split_check,
    CornerPerturbation, Instance,
};
use crate::error::{Error, Result};
use crate::grid::{Grid1D, Marginal1D, ScalarField2D};
use crate::oracle::{atomize, exact_ot, exact_ot_1d, minimize_objective_direct};
use crate::pde::{linear_elliptic_solve, picard_solve, DistributionF, PdeCoefficients, Solution, SolverConfig};
use crate::presets::Preset;

/// Residuals at or below this are round-off; refinement ratios of such
/// values carry no information.
pub const ROUNDOFF_FLOOR: f64 = 1e-9;

pub const COARSE: usize = 33;
pub const FINE: usize = 65;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Skip => "skip",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionResult {
    pub id: u32,
    pub name: &'static str,
    pub status: Status,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationConfig {
    pub seed: u64,
    /// Runs the criteria that need the network simplex or the direct
    /// minimizer; they are skipped otherwise.
    pub oracle: bool,
    /// Atoms per axis for the discrete oracle. The extrapolated oracle also
    /// uses `3/2` of this.
    pub oracle_atoms: usize,
    pub direct_iters: usize,
    /// Damping and tolerances for every solve; grid sizes are set per
    /// criterion.
    pub solver: SolverConfig,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            oracle: true,
            oracle_atoms: 32,
            direct_iters: 100,
            solver: SolverConfig::default(),
        }
    }
}

pub const CRITERIA: [(u32, &str); 11] = [
    (1, "uniform end-to-end"),
    (2, "product-gauss optimum"),
    (3, "bilinear oracle agreement"),
    (4, "stationarity"),
    (5, "residual convergence"),
    (6, "closed-form M"),
    (7, "algebraic identities"),
    (8, "1D agreement"),
    (9, "ellipticity"),
    (10, "manufactured solutions"),
    (11, "determinism"),
];

type SolveCache = RefCell<BTreeMap<(Preset, usize), Rc<(Instance, Solution)>>>;

pub struct Validator {
    cfg: ValidationConfig,
    solves: SolveCache,
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn verdict(ok: bool) -> Status {
    if ok {
        Status::Pass
    } else {
        Status::Fail
    }
}

impl Validator {
    pub fn new(cfg: ValidationConfig) -> Self {
        Self {
            cfg,
            solves: RefCell::new(BTreeMap::new()),
        }
    }

    pub fn config(&self) -> &ValidationConfig {
        &self.cfg
    }

    fn solve(&self, preset: Preset, n: usize) -> Result<Rc<(Instance, Solution)>> {
        if let Some(s) = self.solves.borrow().get(&(preset, n)) {
            return Ok(s.clone());
        }
        let inst = preset.instance(n, n)?;
        let cfg = SolverConfig {
            nx: n,
            ny: n,
            ..self.cfg.solver.clone()
        };
        let sol = picard_solve(&inst, &cfg)?;
        let entry = Rc::new((inst, sol));
        self.solves.borrow_mut().insert((preset, n), entry.clone());
        Ok(entry)
    }

    fn rng(&self, salt: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.cfg.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(salt))
    }

    /// Every criterion in order. Determinism (11) repeats 1 to 10 on a fresh
    /// validator, so it roughly doubles the run time.
    pub fn run_all(&self) -> Vec<CriterionResult> {
        (1..=11).map(|id| self.run(id)).collect()
    }

    pub fn run(&self, id: u32) -> CriterionResult {
        let name = CRITERIA
            .iter()
            .find(|c| c.0 == id)
            .map_or("unknown", |c| c.1);
        let outcome = match id {
            1 => self.uniform_end_to_end(),
            2 => self.product_gauss(),
            3 if !self.cfg.oracle => Ok((Status::Skip, "oracle disabled".to_string())),
            3 => self.bilinear_oracle(),
            4 => self.stationarity(),
            5 => self.residual_convergence(),
            6 => self.closed_form_m(),
            7 if !self.cfg.oracle => Ok((Status::Skip, "oracle disabled".to_string())),
            7 => self.identities(),
            8 => self.one_d_agreement(),
            9 => self.ellipticity(),
            10 => manufactured(),
            11 => Ok(self.determinism()),
            _ => Err(Error::InvalidConfig(format!("no criterion {id}"))),
        };
        let (status, detail) = outcome.unwrap_or_else(|e| (Status::Fail, format!("error: {e}")));
        CriterionResult { id, name, status, detail }
    }

    fn determinism(&self) -> (Status, String) {
        let first = render_table(&(1..=10).map(|id| self.run(id)).collect::<Vec<_>>());
        let fresh = Validator::new(self.cfg.clone());
        let second = render_table(&(1..=10).map(|id| fresh.run(id)).collect::<Vec<_>>());
        match first.lines().zip(second.lines()).position(|(a, b)| a != b) {
            None if first == second => (Status::Pass, format!("two runs with seed {} agree byte for byte", self.cfg.seed)),
            Some(k) => (Status::Fail, format!("runs differ at line {}", k + 1)),
            None => (Status::Fail, "runs differ in length".to_string()),
        }
    }

    fn uniform_end_to_end(&self) -> Result<(Status, String)> {
        let s = self.solve(Preset::Uniform, COARSE)?;
        let (_, sol) = &*s;
        let field = sol.f.field();
        let (gx, gy) = (field.gx(), field.gy());
        let mut err: f64 = 0.0;
        for i in 0..gx.n() {
            for j in 0..gy.n() {
                err = err.max((field.get(i, j) - gx.node(i) * (gy.node(j) - 1.0)).abs());
            }
        }
        let r = &sol.report;
        let ok = r.iterations <= 5 && err <= 1e-6 && (r.cost - 2.0).abs() <= 1e-3;
        Ok((
            verdict(ok),
            format!("iterations {} max|F - x(y-1)| {:.3e} cost {:.9}", r.iterations, err, r.cost),
        ))
    }

    fn product_gauss(&self) -> Result<(Status, String)> {
        let s = self.solve(Preset::ProductGauss, FINE)?;
        let (inst, sol) = &*s;
        let p = sol.p.as_ref().ok_or_else(|| Error::InvalidConfig("no recovered density".into()))?;
        let product = inst.independent_candidate()?;
        let perr = p
            .q()
            .values()
            .iter()
            .zip(product.q().values())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let exact = krw_1d_distance(inst.f1(), inst.f1_tilde()).powi(2) + krw_1d_distance(inst.f2(), inst.f2_tilde()).powi(2);
        let gap = rel(sol.report.cost, exact);
        Ok((
            verdict(perr <= 1e-3 && gap <= 0.01),
            format!(
                "max|p - f1 f~2| {:.3e} cost {:.9} vs 1D sum {:.9} (rel {:.3e})",
                perr, sol.report.cost, exact, gap
            ),
        ))
    }

    fn bilinear_oracle(&self) -> Result<(Status, String)> {
        let s = self.solve(Preset::Bilinear, COARSE)?;
        let (inst, sol) = &*s;
        let n = self.cfg.oracle_atoms;
        let ot = exact_ot(&atomize(inst.f(), n, n)?, &atomize(inst.f_tilde(), n, n)?)?;
        let direct = minimize_objective_direct(inst, COARSE, COARSE, self.cfg.direct_iters)?;
        let (ga, gb) = (rel(sol.report.cost, ot.cost), rel(sol.report.cost, direct.value));
        Ok((
            verdict(ga <= 0.02 && gb <= 0.02),
            format!(
                "pde {:.9} oracle {:.9} (rel {:.3e}) direct {:.9} (rel {:.3e})",
                sol.report.cost, ot.cost, ga, direct.value, gb
            ),
        ))
    }

    fn stationarity(&self) -> Result<(Status, String)> {
        let mut rng = self.rng(4);
        let mut worst = f64::INFINITY;
        let mut parts = Vec::new();
        for preset in Preset::ALL {
            let s = self.solve(preset, COARSE)?;
            let (inst, sol) = &*s;
            let p = sol.p.as_ref().ok_or_else(|| Error::InvalidConfig("no recovered density".into()))?;
            let base = objective(inst, p)?;
            let (gx, gy) = inst.z_grids();
            let mut min_diff = f64::INFINITY;
            for k in 0..100 {
                let delta = if k % 2 == 0 { 1e-3 } else { -1e-3 };
                let pert = CornerPerturbation::random(&mut rng, &gx, &gy, delta);
                let moved = apply_perturbation(p, &pert)?;
                min_diff = min_diff.min(objective(inst, &moved)? - base);
            }
            worst = worst.min(min_diff);
            parts.push(format!("{preset} {min_diff:.3e}"));
        }
        Ok((
            verdict(worst >= -1e-6),
            format!("min objective change {}", parts.join(", ")),
        ))
    }

    fn residual_convergence(&self) -> Result<(Status, String)> {
        let mut ok = true;
        let mut parts = Vec::new();
        let (hc, hf) = (1.0 / (COARSE - 1) as f64, 1.0 / (FINE - 1) as f64);
        for preset in Preset::ALL {
            let coarse = self.solve(preset, COARSE)?;
            let fine = self.solve(preset, FINE)?;
            let pairs = [
                ("hh", coarse.1.report.hh_residual_max, fine.1.report.hh_residual_max),
                ("mixM", coarse.1.report.mixed_m_residual_max, fine.1.report.mixed_m_residual_max),
            ];
            for (label, rc, rf) in pairs {
                // C is measured on the coarse grid, so the coarse bound holds by
                // construction and the fine one asks for second-order decay
                let c = rc / (hc * hc);
                let bound_ok = rc <= 1e-3f64.max(c * hc * hc) && rf <= 1e-3f64.max(c * hf * hf);
                let shrink_ok = (rc <= ROUNDOFF_FLOOR && rf <= ROUNDOFF_FLOOR) || rc >= 3.0 * rf;
                ok &= bound_ok && shrink_ok;
                parts.push(format!("{preset} {label} {rc:.3e} -> {rf:.3e}"));
            }
        }
        Ok((verdict(ok), parts.join(", ")))
    }

    fn closed_form_m(&self) -> Result<(Status, String)> {
        let mut rng = self.rng(6);
        let mut ok = true;
        let mut parts = Vec::new();
        for preset in Preset::ALL {
            let s = self.solve(preset, FINE)?;
            let (inst, sol) = &*s;
            let p = sol.p.as_ref().ok_or_else(|| Error::InvalidConfig("no recovered density".into()))?;
            let r0 = m_closed_form_residual(inst, p)?;
            let (gx, gy) = inst.z_grids();
            // redraw until the perturbation keeps the density above the floor
            let mut moved = None;
            for _ in 0..100 {
                let pert = CornerPerturbation::random(&mut rng, &gx, &gy, 0.05);
                if let Ok(c) = apply_perturbation(p, &pert) {
                    moved = Some(c);
                    break;
                }
            }
            let moved = moved.ok_or(Error::PositivityViolated { value: 0.05 })?;
            let r1 = m_closed_form_residual(inst, &moved)?;
            ok &= r0 <= 1e-3 && r1 >= 10.0 * r0;
            parts.push(format!("{preset} {r0:.3e} perturbed {r1:.3e}"));
        }
        Ok((verdict(ok), parts.join(", ")))
    }

    fn identities(&self) -> Result<(Status, String)> {
        let mut rng = self.rng(7);
        let samples: Vec<[f64; 4]> = (0..1000)
            .map(|_| std::array::from_fn(|_| rng.random_range(-2.0..3.0)))
            .collect();
        let split = split_check(&samples);

        let s = self.solve(Preset::Bilinear, FINE)?;
        let (inst, sol) = &*s;
        let from_pde = shift_cost_relation(
            inst.f1().mean(),
            inst.f1_tilde().mean() - 1.0,
            inst.f2().mean(),
            inst.f2_tilde().mean() - 1.0,
            sol.report.cost,
        );
        // the atomized cost converges like h^2, so extrapolate from two sizes
        let (p, q) = (Preset::Bilinear.p_density(FINE, FINE)?, Preset::Bilinear.q_density(FINE, FINE)?);
        let n1 = self.cfg.oracle_atoms;
        let n2 = n1 * 3 / 2;
        let w = |n: usize| -> Result<f64> { Ok(exact_ot(&atomize(&p, n, n)?, &atomize(&q, n, n)?)?.cost) };
        let (w1, w2) = (w(n1)?, w(n2)?);
        let (s1, s2) = ((n1 * n1) as f64, (n2 * n2) as f64);
        let oracle = (s2 * w2 - s1 * w1) / (s2 - s1);
        let gap = rel(from_pde, oracle);
        Ok((
            verdict(split <= 1e-12 && gap <= 0.02),
            format!(
                "split {:.3e} W2^2(P,Q) from pde {:.6e} oracle {:.6e} ({n1}: {:.6e}, {n2}: {:.6e}) rel {:.3e}",
                split, from_pde, oracle, w1, w2, gap
            ),
        ))
    }

    fn one_d_agreement(&self) -> Result<(Status, String)> {
        let atoms = 1000;
        let g = Grid1D::new(0.0, 1.0, atoms + 1)?;
        let uniform = Marginal1D::from_values(g, vec![1.0; atoms + 1])?;
        let triangular = Marginal1D::from_values(g, g.nodes().iter().map(|x| 2.0 * x).collect())?;
        let krw = krw_1d_distance(&uniform, &triangular).powi(2);
        let centres: Vec<f64> = (0..atoms).map(|k| (k as f64 + 0.5) / atoms as f64).collect();
        let uw = vec![1.0 / atoms as f64; atoms];
        let tw: Vec<f64> = (0..atoms)
            .map(|k| {
                let (a, b) = (k as f64 / atoms as f64, (k + 1) as f64 / atoms as f64);
                b * b - a * a
            })
            .collect();
        let ot = exact_ot_1d(&uw, &centres, &tw, &centres);
        let gap = rel(krw, ot);
        Ok((
            verdict(gap <= 0.005),
            format!("krw^2 {:.9e} exact_ot_1d {:.9e} rel {:.3e} (continuum 1/30)", krw, ot, gap),
        ))
    }

    fn ellipticity(&self) -> Result<(Status, String)> {
        let mut ok = true;
        let mut parts = Vec::new();
        for preset in Preset::ALL {
            for n in [COARSE, FINE] {
                let s = self.solve(preset, n)?;
                let r = &s.1.report;
                ok &= r.ellipticity_margin > 0.0 && r.min_coefficient > 0.0;
                parts.push(format!(
                    "{preset}@{n} margin {:.4e} min coefficient {:.4e}",
                    r.ellipticity_margin, r.min_coefficient
                ));
            }
        }
        Ok((verdict(ok), parts.join(", ")))
    }
}

/// Max-norm error of the frozen solver on `u` with leading coefficients
/// `a`, `b` on an `n x n` grid over `[0,1] x [1,2]`.
fn manufactured_error(
    n: usize,
    u: impl Fn(f64, f64) -> f64,
    lap: impl Fn(f64, f64) -> f64,
    tol: f64,
) -> Result<f64> {
    let (gx, gy) = (Grid1D::new(0.0, 1.0, n)?, Grid1D::new(1.0, 2.0, n)?);
    let a = ScalarField2D::from_fn(gx, gy, |x, y| 1.0 + 0.3 * x * y);
    let b = ScalarField2D::from_fn(gx, gy, |x, _| 2.0 + x.cos());
    let c = ScalarField2D::from_fn(gx, gy, &lap);
    let exact = ScalarField2D::from_fn(gx, gy, &u);
    let mut start = exact.clone();
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            start.values_mut()[[i, j]] = 0.0;
        }
    }
    let coeffs = PdeCoefficients { a, b, c };
    let sol = linear_elliptic_solve(&coeffs, &DistributionF::new(start), tol, 100_000)?;
    Ok(sol
        .field()
        .values()
        .iter()
        .zip(exact.values())
        .fold(0.0f64, |m, (s, e)| m.max((s - e).abs())))
}

fn manufactured() -> Result<(Status, String)> {
    let a = |x: f64, y: f64| 1.0 + 0.3 * x * y;
    let b = |x: f64, _y: f64| 2.0 + x.cos();
    // the five-point stencil is exact on quadratics
    let quad = |x: f64, y: f64| x * x + 0.5 * x * y - 0.75 * y * y + x - 2.0;
    let quad_c = |x: f64, y: f64| 2.0 * a(x, y) - 1.5 * b(x, y);
    let eq = manufactured_error(COARSE, quad, quad_c, 1e-14)?;
    let sine = |x: f64, y: f64| (2.0 * x + 1.3 * y).sin();
    let sine_c = |x: f64, y: f64| -(4.0 * a(x, y) + 1.69 * b(x, y)) * (2.0 * x + 1.3 * y).sin();
    let errs = [COARSE, FINE, 129]
        .iter()
        .map(|&n| manufactured_error(n, sine, sine_c, 1e-13))
        .collect::<Result<Vec<_>>>()?;
    let orders = [(errs[0] / errs[1]).log2(), (errs[1] / errs[2]).log2()];
    Ok((
        verdict(eq <= 1e-10 && orders.iter().all(|o| *o >= 1.9)),
        format!(
            "quadratic {:.3e} sine {:.3e} {:.3e} {:.3e} orders {:.3} {:.3}",
            eq, errs[0], errs[1], errs[2], orders[0], orders[1]
        ),
    ))
}

/// Renders results as an aligned table, one row per criterion.
pub fn render_table(results: &[CriterionResult]) -> String {
    let mut out = String::new();
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    for r in results {
        out.push_str(&format!("C{:<3} {:<width$}  {}  {}\n", r.id, r.name, r.status, r.detail));
    }
    out
}
