//! End-to-end properties of the PDE pipeline and its agreement with the
//! oracles.

use ndarray::Array2;

use mk_plane::oracle::minimize_objective_from;
use mk_plane::{
    atomize, exact_ot, krw_1d_distance, picard_solve, CandidateQ, Density2D,
    DistributionF, Grid1D, Instance, Preset, Solution, SolverConfig,
};

fn solve(inst: &Instance, n: usize) -> Solution {
    let cfg = SolverConfig {
        nx: n,
        ny: n,
        ..Default::default()
    };
    picard_solve(inst, &cfg).expect("presets converge")
}

/// The instance seen through the isometry `u -> 2 - (u2, u1)` applied to
/// both sides, with the roles of `P` and `P~` exchanged.
fn reflected(inst: &Instance) -> Instance {
    let flip = |d: &Density2D, lo: f64| {
        let v = d.values();
        let (n, m) = v.dim();
        let g = |k: usize| Grid1D::new(lo, lo + 1.0, k).unwrap();
        Density2D::new(g(m), g(n), Array2::from_shape_fn((m, n), |(i, j)| v[[n - 1 - j, m - 1 - i]])).unwrap()
    };
    Instance::new(flip(inst.f_tilde(), 0.0), flip(inst.f(), 1.0)).unwrap()
}

/// `F` of the reflected instance predicted from `F`: with `Z' = (2 - Z2, 2 - Z1)`,
/// `F'(x, y) = 1 - F1(2 - y) - F2(2 - x) + F(2 - y, 2 - x)`.
fn reflect_f(f: &DistributionF) -> Array2<f64> {
    let v = f.field().values();
    let (nx, ny) = v.dim();
    Array2::from_shape_fn((ny, nx), |(i, j)| {
        let (a, b) = (ny - 1 - j, nx - 1 - i);
        1.0 - v[[a, ny - 1]] - v[[nx - 1, b]] + v[[a, b]]
    })
}

fn max_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

#[test]
fn reflection_maps_solutions_onto_each_other() {
    for preset in [Preset::Uniform, Preset::Bilinear, Preset::ProductGauss] {
        let inst = preset.instance(33, 33).unwrap();
        let sol = solve(&inst, 33);
        let sol_r = solve(&reflected(&inst), 33);
        let d = max_diff(sol_r.f.field().values(), &reflect_f(&sol.f));
        assert!(d <= 1e-6, "{preset}: {d:e}");
        assert!((sol.report.cost - sol_r.report.cost).abs() <= 1e-6, "{preset}");
    }
}

#[test]
fn symmetric_gaussian_is_its_own_reflection() {
    let g = Grid1D::new(0.0, 1.0, 33).unwrap();
    let f = Density2D::from_fn(g, g, |x, y| {
        let (u, v) = ((x - 0.45) / 0.25, (y - 0.6) / 0.25);
        (-0.5 * (u * u + v * v - 0.3 * u * v)).exp()
    })
    .unwrap();
    let base = Instance::new(f.clone(), f.shifted(1.0, 1.0)).unwrap();
    // the reflection of (f, anything) has f~ = flip(f); pair that with f
    let inst = Instance::new(f, reflected(&base).f_tilde().clone()).unwrap();
    let sol = solve(&inst, 33);
    let d = max_diff(sol.f.field().values(), &reflect_f(&sol.f));
    assert!(d <= 1e-6, "{d:e}");
}

#[test]
fn dirichlet_data_is_untouched() {
    for preset in Preset::ALL {
        let inst = preset.instance(33, 33).unwrap();
        let sol = solve(&inst, 33);
        let (got, want) = (sol.f.field().values(), DistributionF::boundary(&inst));
        let want = want.field().values();
        let (nx, ny) = got.dim();
        for i in 0..nx {
            for j in 0..ny {
                if i == 0 || j == 0 || i == nx - 1 || j == ny - 1 {
                    assert_eq!(got[[i, j]], want[[i, j]], "{preset} at ({i}, {j})");
                }
            }
        }
    }
}

#[test]
fn oracle_gap_shrinks_under_refinement() {
    let gap = |n: usize| {
        let inst = Preset::Bilinear.instance(n, n).unwrap();
        let pde = solve(&inst, n).report.cost;
        let atoms = n - 1;
        let ot = exact_ot(&atomize(inst.f(), atoms, atoms).unwrap(), &atomize(inst.f_tilde(), atoms, atoms).unwrap())
            .unwrap()
            .cost;
        (pde - ot).abs()
    };
    let (g17, g33) = (gap(17), gap(33));
    assert!(g33 < 0.5 * g17, "{g17:e} -> {g33:e}");
}

#[test]
fn krw_triangle_inequality_on_preset_marginals() {
    let insts: Vec<Instance> = Preset::ALL.iter().map(|p| p.instance(65, 65).unwrap()).collect();
    for axis_x in [true, false] {
        let m: Vec<_> = insts.iter().map(|i| if axis_x { i.f1() } else { i.f2() }).collect();
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    let (ab, bc, ac) = (
                        krw_1d_distance(m[a], m[b]),
                        krw_1d_distance(m[b], m[c]),
                        krw_1d_distance(m[a], m[c]),
                    );
                    assert!(ac <= ab + bc + 1e-12, "{a} {b} {c}");
                }
            }
        }
    }
}

#[test]
fn direct_descent_finds_the_product_optimum() {
    let inst = Preset::ProductGauss.instance(17, 17).unwrap();
    let (gx, gy) = inst.z_grids();
    // a strongly coupled start, rescaled back onto the marginals
    let product = inst.independent_candidate().unwrap();
    let mut values = Array2::from_shape_fn((gx.n(), gy.n()), |(i, j)| {
        let (x, y) = (gx.node(i), gy.node(j));
        product.q().get(i, j) * (1.0 + 0.8 * (2.0 * x - 1.0) * (2.0 * y - 3.0))
    });
    assert!(inst.project_marginals(&mut values, 1000, 1e-13) <= 1e-12);
    let start = CandidateQ::new(&inst, Density2D::new(gx, gy, values).unwrap()).unwrap();
    let r = minimize_objective_from(&inst, &start, 200).unwrap();
    let optimum =
        krw_1d_distance(inst.f1(), inst.f1_tilde()).powi(2) + krw_1d_distance(inst.f2(), inst.f2_tilde()).powi(2);
    assert!(r.value <= r.initial_value);
    assert!(r.initial_value > optimum + 5e-4, "start {} optimum {}", r.initial_value, optimum);
    assert!((r.value - optimum).abs() <= 0.01 * optimum, "{} vs {}", r.value, optimum);
}
