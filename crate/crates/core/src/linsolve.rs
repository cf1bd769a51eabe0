//! Jacobi-preconditioned BiCGSTAB for the five-point operator
//! `A d2x + B d2y` with Dirichlet data.

use ndarray::Array2;

use crate::error::{Error, Result};

pub(crate) struct FivePoint<'a> {
    pub a: &'a Array2<f64>,
    pub b: &'a Array2<f64>,
    pub hx: f64,
    pub hy: f64,
}

pub(crate) struct LinearOutcome {
    pub solution: Array2<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
}

impl FivePoint<'_> {
    fn dims(&self) -> (usize, usize) {
        let (nx, ny) = self.a.dim();
        (nx - 2, ny - 2)
    }

    fn apply(&self, u: &[f64], out: &mut [f64]) {
        let (mx, my) = self.dims();
        let (cx, cy) = (1.0 / (self.hx * self.hx), 1.0 / (self.hy * self.hy));
        for a in 0..mx {
            for b in 0..my {
                let k = a * my + b;
                let (i, j) = (a + 1, b + 1);
                let (ca, cb) = (self.a[[i, j]] * cx, self.b[[i, j]] * cy);
                let mut v = -2.0 * (ca + cb) * u[k];
                if a > 0 {
                    v += ca * u[k - my];
                }
                if a + 1 < mx {
                    v += ca * u[k + my];
                }
                if b > 0 {
                    v += cb * u[k - 1];
                }
                if b + 1 < my {
                    v += cb * u[k + 1];
                }
                out[k] = v;
            }
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        let (mx, my) = self.dims();
        let (cx, cy) = (1.0 / (self.hx * self.hx), 1.0 / (self.hy * self.hy));
        let mut d = Vec::with_capacity(mx * my);
        for a in 0..mx {
            for b in 0..my {
                d.push(-2.0 * (self.a[[a + 1, b + 1]] * cx + self.b[[a + 1, b + 1]] * cy));
            }
        }
        d
    }

    /// Right-hand side with the Dirichlet neighbours of `field` moved over.
    fn rhs(&self, c: &Array2<f64>, field: &Array2<f64>) -> Vec<f64> {
        let (nx, ny) = field.dim();
        let (mx, my) = self.dims();
        let (cx, cy) = (1.0 / (self.hx * self.hx), 1.0 / (self.hy * self.hy));
        let mut r = Vec::with_capacity(mx * my);
        for i in 1..nx - 1 {
            for j in 1..ny - 1 {
                let (ca, cb) = (self.a[[i, j]] * cx, self.b[[i, j]] * cy);
                let mut v = c[[i, j]];
                if i == 1 {
                    v -= ca * field[[0, j]];
                }
                if i == nx - 2 {
                    v -= ca * field[[nx - 1, j]];
                }
                if j == 1 {
                    v -= cb * field[[i, 0]];
                }
                if j == ny - 2 {
                    v -= cb * field[[i, ny - 1]];
                }
                r.push(v);
            }
        }
        r
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solves for the interior of `field`, whose boundary entries are the
/// Dirichlet data and whose interior is the starting guess.
pub(crate) fn solve(
    op: &FivePoint<'_>,
    c: &Array2<f64>,
    field: &Array2<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<LinearOutcome> {
    let (nx, ny) = field.dim();
    let (mx, my) = op.dims();
    let m = mx * my;
    let rhs = op.rhs(c, field);
    let inv_diag: Vec<f64> = op.diagonal().iter().map(|d| 1.0 / d).collect();
    let mut x: Vec<f64> = Vec::with_capacity(m);
    for i in 1..nx - 1 {
        for j in 1..ny - 1 {
            x.push(field[[i, j]]);
        }
    }
    let b_norm = {
        let n = norm(&rhs);
        if n > 0.0 {
            n
        } else {
            1.0
        }
    };
    let mut scratch = vec![0.0; m];
    let mut r = vec![0.0; m];
    let mut iterations = 0;
    let mut v = vec![0.0; m];
    let mut p = vec![0.0; m];
    let mut p_hat = vec![0.0; m];
    let mut s = vec![0.0; m];
    let mut s_hat = vec![0.0; m];
    let mut t = vec![0.0; m];

    // each pass restarts from the true residual, so the recursively updated
    // one cannot drift away from it unnoticed
    let true_rel = loop {
        op.apply(&x, &mut scratch);
        for k in 0..m {
            r[k] = rhs[k] - scratch[k];
        }
        let true_rel = norm(&r) / b_norm;
        if true_rel <= tol || iterations >= max_iters || !true_rel.is_finite() {
            break true_rel;
        }
        let mut rel = true_rel;
        let r_hat = r.clone();
        let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
        v.iter_mut().for_each(|e| *e = 0.0);
        p.iter_mut().for_each(|e| *e = 0.0);
        while rel > tol && iterations < max_iters {
            iterations += 1;
            let rho_new = dot(&r_hat, &r);
            if rho_new.abs() < 1e-300 || omega == 0.0 {
                break;
            }
            let beta = (rho_new / rho) * (alpha / omega);
            rho = rho_new;
            for k in 0..m {
                p[k] = r[k] + beta * (p[k] - omega * v[k]);
                p_hat[k] = inv_diag[k] * p[k];
            }
            op.apply(&p_hat, &mut v);
            let denom = dot(&r_hat, &v);
            if denom == 0.0 {
                break;
            }
            alpha = rho / denom;
            for k in 0..m {
                s[k] = r[k] - alpha * v[k];
            }
            if norm(&s) / b_norm <= tol {
                for k in 0..m {
                    x[k] += alpha * p_hat[k];
                }
                break;
            }
            for k in 0..m {
                s_hat[k] = inv_diag[k] * s[k];
            }
            op.apply(&s_hat, &mut t);
            let tt = dot(&t, &t);
            omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
            for k in 0..m {
                x[k] += alpha * p_hat[k] + omega * s_hat[k];
                r[k] = s[k] - omega * t[k];
            }
            rel = norm(&r) / b_norm;
            if !rel.is_finite() {
                break;
            }
        }
    };
    if !(true_rel.is_finite() && true_rel <= tol) {
        return Err(Error::LinearSolveDiverged {
            residual: true_rel,
            iterations,
        });
    }
    let mut solution = field.clone();
    for a in 0..mx {
        for b in 0..my {
            solution[[a + 1, b + 1]] = x[a * my + b];
        }
    }
    Ok(LinearOutcome {
        solution,
        iterations,
        relative_residual: true_rel,
    })
}
