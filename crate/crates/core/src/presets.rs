//! Built-in problem instances.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cost::Instance;
use crate::error::{Error, Result};
use crate::grid::{Density2D, Grid1D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// `P` and `Q` uniform on the unit square.
    Uniform,
    /// Products of truncated Gaussians with standard deviation 0.2, means
    /// `(0.5, 0.4)` for `P` and `(0.5, 0.6)` for `Q`.
    ProductGauss,
    /// `P = 1 + 0.5 (2x-1)(2y-1)`, `Q = 1 - 0.3 (2x-1)(2y-1)`.
    Bilinear,
}

const GAUSS_SD: f64 = 0.2;

fn bump(t: f64, mean: f64) -> f64 {
    (-0.5 * ((t - mean) / GAUSS_SD).powi(2)).exp()
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Uniform, Preset::ProductGauss, Preset::Bilinear];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Uniform => "uniform",
            Preset::ProductGauss => "product-gauss",
            Preset::Bilinear => "bilinear",
        }
    }

    /// Unnormalized density of `P` on `[0,1]^2`.
    pub fn p_value(self, x: f64, y: f64) -> f64 {
        match self {
            Preset::Uniform => 1.0,
            Preset::ProductGauss => bump(x, 0.5) * bump(y, 0.4),
            Preset::Bilinear => 1.0 + 0.5 * (2.0 * x - 1.0) * (2.0 * y - 1.0),
        }
    }

    /// Unnormalized density of `Q` on `[0,1]^2`, before the shift.
    pub fn q_value(self, x: f64, y: f64) -> f64 {
        match self {
            Preset::Uniform => 1.0,
            Preset::ProductGauss => bump(x, 0.5) * bump(y, 0.6),
            Preset::Bilinear => 1.0 - 0.3 * (2.0 * x - 1.0) * (2.0 * y - 1.0),
        }
    }

    fn unit_grids(nx: usize, ny: usize) -> Result<(Grid1D, Grid1D)> {
        Ok((Grid1D::new(0.0, 1.0, nx)?, Grid1D::new(0.0, 1.0, ny)?))
    }

    pub fn p_density(self, nx: usize, ny: usize) -> Result<Density2D> {
        let (gx, gy) = Self::unit_grids(nx, ny)?;
        Density2D::from_fn(gx, gy, |x, y| self.p_value(x, y))?.normalize()
    }

    pub fn q_density(self, nx: usize, ny: usize) -> Result<Density2D> {
        let (gx, gy) = Self::unit_grids(nx, ny)?;
        Density2D::from_fn(gx, gy, |x, y| self.q_value(x, y))?.normalize()
    }

    /// Instance on an `nx` by `ny` grid for `P` and for the shifted `Q`.
    pub fn instance(self, nx: usize, ny: usize) -> Result<Instance> {
        Instance::from_pq(self.p_density(nx, ny)?, self.q_density(nx, ny)?)
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown preset `{s}` (expected uniform, product-gauss or bilinear)")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{marginal, Axis};
    use approx::assert_abs_diff_eq;

    #[test]
    fn names_round_trip() {
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
        assert!("gauss".parse::<Preset>().is_err());
    }

    #[test]
    fn bilinear_x_marginals_are_flat() {
        let inst = Preset::Bilinear.instance(17, 17).unwrap();
        for v in inst.f1().values().iter().chain(inst.f2_tilde().values()) {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn gaussian_marginal_is_proportional_to_the_truncated_density() {
        // the product factor in y integrates to a constant, so the trapezoid
        // marginal is exactly proportional to the 1D bump at every node, and
        // the proportionality constant converges to the truncated-normal
        // normalizer at second order
        let err = |n: usize| {
            let d = Preset::ProductGauss.p_density(n, n).unwrap();
            let m = marginal(&d, Axis::X);
            let g = m.grid();
            let ratios: Vec<f64> = (0..n).map(|i| m.values()[i] / bump(g.node(i), 0.5)).collect();
            let spread = ratios.iter().fold(0.0f64, |a, r| a.max((r - ratios[0]).abs()));
            assert!(spread <= 1e-12 * ratios[0], "spread {spread}");
            // closed-form normalizer: sd * sqrt(2 pi) * (Phi(2.5) - Phi(-2.5))
            let z = 0.2 * (2.0 * std::f64::consts::PI).sqrt() * 0.987_580_669_348_447_7;
            (1.0 / ratios[0] - z).abs()
        };
        let (e1, e2) = (err(33), err(65));
        assert!(e1 < 1e-4 && e1 / e2 > 3.5, "{e1} {e2}");
    }
}
