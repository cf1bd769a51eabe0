//! The four subcommands. Each writes `config.toml` (the resolved config) and
//! `report.txt` into the output directory and returns the exit code.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use mk_plane::validation::{render_table, Status, Validator};
use mk_plane::{
    atomize, exact_ot, exact_ot_1d, krw_1d_distance, minimize_objective_direct, picard_solve, shift_cost_relation,
    Density2D, Error, Grid1D, Instance, Marginal1D, Solution,
};

use crate::config::{RunConfig, Source};
use crate::error::{CliError, Result};
use crate::grid_io::{read_density, write_grid, GridKind};
use crate::report::Report;

/// Largest direct-minimizer grid per axis.
const DIRECT_MAX: usize = 33;

fn fit(d: Density2D, lo: f64, nx: usize, ny: usize) -> Result<Density2D> {
    if d.gx().n() == nx && d.gy().n() == ny {
        return Ok(d);
    }
    log::info!("resampling {}x{} density onto {nx}x{ny}", d.gx().n(), d.gy().n());
    Ok(d.resample(Grid1D::new(lo, lo + 1.0, nx)?, Grid1D::new(lo, lo + 1.0, ny)?)?)
}

pub fn load_instance(cfg: &RunConfig) -> Result<Instance> {
    let (nx, ny) = (cfg.solver.nx, cfg.solver.ny);
    let inst = match cfg.instance.source()? {
        Source::Preset(p) => p.instance(nx, ny)?,
        Source::Pq { p, q } => {
            Instance::from_pq(fit(read_density(p)?, 0.0, nx, ny)?, fit(read_density(q)?, 0.0, nx, ny)?)?
        }
        Source::PTilde { p, p_tilde } => {
            Instance::new(fit(read_density(p)?, 0.0, nx, ny)?, fit(read_density(p_tilde)?, 1.0, nx, ny)?)?
        }
    };
    Ok(inst)
}

/// Converts a cost against the shifted target into the quantity reported as
/// `w2_squared`: `W2^2(P, Q)` when `Q` was given, the cost itself otherwise.
fn to_target(cfg: &RunConfig, inst: &Instance, cost: f64) -> f64 {
    if cfg.instance.has_q() {
        shift_cost_relation(
            inst.f1().mean(),
            inst.f1_tilde().mean() - 1.0,
            inst.f2().mean(),
            inst.f2_tilde().mean() - 1.0,
            cost,
        )
    } else {
        cost
    }
}

fn describe(report: &mut Report, cfg: &RunConfig) {
    match cfg.instance.source().expect("validated config") {
        Source::Preset(p) => report.put("instance", p),
        Source::Pq { p, q } => {
            report.put("instance", "files");
            report.put("p_file", p.display());
            report.put("q_file", q.display());
        }
        Source::PTilde { p, p_tilde } => {
            report.put("instance", "files");
            report.put("p_file", p.display());
            report.put("p_tilde_file", p_tilde.display());
        }
    }
    report.put("target", if cfg.instance.has_q() { "Q" } else { "P~" });
    report.put("nx", cfg.solver.nx);
    report.put("ny", cfg.solver.ny);
}

fn prepare_out(cfg: &RunConfig) -> Result<()> {
    let dir = &cfg.output.dir;
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join("config.toml");
    fs::write(&path, cfg.to_toml()).map_err(|e| CliError::io(&path, e))
}

fn finish(cfg: &RunConfig, report: &Report) -> Result<()> {
    let text = report.render();
    let path = cfg.output.dir.join("report.txt");
    fs::write(&path, &text).map_err(|e| CliError::io(&path, e))?;
    print!("{text}");
    Ok(())
}

fn write_dumps(dir: &Path, sol: &Solution) -> Result<()> {
    write_grid(&dir.join("F.txt"), GridKind::Field, sol.f.field())?;
    if let Some(p) = &sol.p {
        write_grid(&dir.join("p.txt"), GridKind::Density, p.q().as_field())?;
    }
    if let Some(m) = &sol.m {
        write_grid(&dir.join("M.txt"), GridKind::Field, m)?;
    }
    if let Some(hh) = &sol.hh {
        write_grid(&dir.join("hh.txt"), GridKind::Field, hh)?;
    }
    Ok(())
}

pub fn run_solve(cfg: &RunConfig) -> Result<u8> {
    prepare_out(cfg)?;
    let inst = load_instance(cfg)?;
    log::info!("solving on {}x{}", cfg.solver.nx, cfg.solver.ny);
    let (sol, code) = match picard_solve(&inst, &cfg.solver) {
        Ok(sol) => (sol, 0),
        Err(Error::PicardStalled(sol)) => (*sol, 2),
        Err(e) => return Err(e.into()),
    };
    let r = &sol.report;
    let mut report = Report::new("solve");
    describe(&mut report, cfg);
    report.put("omega", cfg.solver.omega);
    report.put("converged", r.converged);
    report.put("iterations", r.iterations);
    report.put("final_update_norm", r.final_update_norm);
    report.put("linear_iterations", r.linear_iterations);
    report.put("step_halvings", r.step_halvings);
    report.put("ellipticity_margin", r.ellipticity_margin);
    report.put("min_coefficient", r.min_coefficient);
    report.put("hh_residual_max", r.hh_residual_max);
    report.put("mixed_m_residual_max", r.mixed_m_residual_max);
    report.put("closed_form_m_residual", r.closed_form_m_residual);
    report.put("monotone_violations", r.monotone_violations);
    report.put("floored_percent", r.floored_percent);
    report.put("raw_marginal_defect", r.raw_marginal_defect);
    report.put("cost", r.cost);
    let w2sq = to_target(cfg, &inst, r.cost);
    report.put("w2_squared", w2sq);
    report.put("w2", w2sq.max(0.0).sqrt());
    if cfg.validation.oracle && code == 0 {
        let a = cfg.validation.oracle_atoms;
        log::info!("oracle on {a}x{a} atoms");
        let ot = exact_ot(&atomize(inst.f(), a, a)?, &atomize(inst.f_tilde(), a, a)?)?;
        report.put("oracle.atoms", a);
        report.put("oracle.cost", ot.cost);
        report.put("oracle.rel_gap", (r.cost - ot.cost).abs() / ot.cost);
    }
    write_dumps(&cfg.output.dir, &sol)?;
    finish(cfg, &report)?;
    Ok(code)
}

pub fn run_validate(cfg: &RunConfig) -> Result<u8> {
    prepare_out(cfg)?;
    let vcfg = cfg.validation_config();
    let mut report = Report::new("validate");
    report.put("seed", vcfg.seed);
    report.put("oracle", vcfg.oracle);
    report.put("oracle_atoms", vcfg.oracle_atoms);
    report.put("direct_iters", vcfg.direct_iters);
    report.put("omega", vcfg.solver.omega);
    report.put("picard_tol", format!("{:e}", vcfg.solver.picard_tol));
    report.put("linear_tol", format!("{:e}", vcfg.solver.linear_tol));
    let results = Validator::new(vcfg).run_all();
    let count = |s: Status| results.iter().filter(|r| r.status == s).count();
    let failed = count(Status::Fail);
    report.put("passed", count(Status::Pass));
    report.put("failed", failed);
    report.put("skipped", count(Status::Skip));
    report.set_table(render_table(&results));
    finish(cfg, &report)?;
    Ok(if failed == 0 { 0 } else { 1 })
}

/// Cell-midpoint atoms of a marginal, weighted by its cumulative table.
fn marginal_atoms(m: &Marginal1D) -> (Vec<f64>, Vec<f64>) {
    let g = m.grid();
    let points = (0..g.n() - 1).map(|k| g.node(k) + 0.5 * g.spacing()).collect();
    let weights = m.cdf().windows(2).map(|w| w[1] - w[0]).collect();
    (weights, points)
}

pub fn run_distance1d(cfg: &RunConfig) -> Result<u8> {
    prepare_out(cfg)?;
    let inst = load_instance(cfg)?;
    let mut report = Report::new("distance1d");
    describe(&mut report, cfg);
    let unshift = |m: &Marginal1D| -> Result<Marginal1D> {
        if cfg.instance.has_q() {
            Ok(Marginal1D::from_values(m.grid().shifted(-1.0), m.values().to_vec())?)
        } else {
            Ok(m.clone())
        }
    };
    let mut total = 0.0;
    for (axis, m, t) in [("x", inst.f1(), inst.f1_tilde()), ("y", inst.f2(), inst.f2_tilde())] {
        let t = unshift(t)?;
        let d = krw_1d_distance(m, &t);
        let ((wa, pa), (wb, pb)) = (marginal_atoms(m), marginal_atoms(&t));
        report.put(&format!("{axis}.krw"), d);
        report.put(&format!("{axis}.krw_squared"), d * d);
        report.put(&format!("{axis}.atomized_squared"), exact_ot_1d(&wa, &pa, &wb, &pb));
        total += d * d;
    }
    // the sum is W2^2 of the product coupling's marginals, a lower bound for the 2D value
    report.put("sum_krw_squared", total);
    finish(cfg, &report)?;
    Ok(0)
}

pub fn run_oracle(cfg: &RunConfig) -> Result<u8> {
    prepare_out(cfg)?;
    let inst = load_instance(cfg)?;
    let a = cfg.validation.oracle_atoms;
    let mut report = Report::new("oracle");
    describe(&mut report, cfg);
    log::info!("network simplex on {a}x{a} atoms");
    let (src, dst) = (atomize(inst.f(), a, a)?, atomize(inst.f_tilde(), a, a)?);
    let ot = exact_ot(&src, &dst)?;
    report.put("oracle.atoms", a);
    report.put("oracle.cost", ot.cost);
    report.put("oracle.dual_bound", ot.dual_bound);
    report.put("oracle.pivots", ot.pivots);
    report.put("oracle.plan_entries", ot.plan.entries().len());
    report.put("oracle.w2_squared", to_target(cfg, &inst, ot.cost));

    let (nx, ny) = (cfg.solver.nx.min(DIRECT_MAX), cfg.solver.ny.min(DIRECT_MAX));
    log::info!("direct minimizer on {nx}x{ny}");
    let direct = minimize_objective_direct(&inst, nx, ny, cfg.validation.direct_iters)?;
    report.put("direct.nx", nx);
    report.put("direct.ny", ny);
    report.put("direct.initial_value", direct.initial_value);
    report.put("direct.value", direct.value);
    report.put("direct.iterations", direct.iterations);

    let shift = if cfg.instance.has_q() { 1.0 } else { 0.0 };
    let mut plan = String::from("# x1 x2 y1 y2 mass\n");
    for &(i, j, mass) in ot.plan.entries() {
        let (x, y) = (src.points()[i], dst.points()[j]);
        writeln!(plan, "{} {} {} {} {}", x[0], x[1], y[0] - shift, y[1] - shift, mass).expect("writing to a String");
    }
    let path = cfg.output.dir.join("plan.txt");
    fs::write(&path, plan).map_err(|e| CliError::io(&path, e))?;
    finish(cfg, &report)?;
    Ok(0)
}
