//! Conditional CDFs of a gridded density and their inverses in the first
//! argument, with partial derivatives of the inverses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{cumulative_along, marginal, Axis, Density2D, Grid1D, Marginal1D, ScalarField2D};
use crate::grid::POSITIVITY_FLOOR;

/// Arguments to `quantile` within this distance of `[0, 1]` are clamped.
pub const QUANTILE_CLAMP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Which {
    /// Law of the first coordinate given the second; inverts along `x`.
    FirstGivenSecond,
    /// Law of the second coordinate given the first; inverts along `y`.
    SecondGivenFirst,
}

impl Which {
    /// Axis along which the CDF is taken and inverted.
    pub fn primary_axis(self) -> Axis {
        match self {
            Which::FirstGivenSecond => Axis::X,
            Which::SecondGivenFirst => Axis::Y,
        }
    }
}

/// Conditional CDF table of a density along one axis, normalized per slice,
/// with the marginal of the conditioning axis.
#[derive(Debug, Clone)]
pub struct ConditionalQuantile {
    source: Density2D,
    which: Which,
    cdf_table: ScalarField2D,
    marginal: Marginal1D,
}

impl ConditionalQuantile {
    pub fn new(source: &Density2D, which: Which) -> Self {
        let axis = which.primary_axis();
        let mut table = cumulative_along(source.as_field(), axis);
        let (np, nc) = match axis {
            Axis::X => (source.gx().n(), source.gy().n()),
            Axis::Y => (source.gy().n(), source.gx().n()),
        };
        {
            let v = table.values_mut();
            for c in 0..nc {
                let idx = |p: usize| match axis {
                    Axis::X => [p, c],
                    Axis::Y => [c, p],
                };
                let total = v[idx(np - 1)];
                for p in 0..np {
                    v[idx(p)] /= total;
                }
                v[idx(np - 1)] = 1.0;
            }
        }
        Self {
            source: source.clone(),
            which,
            cdf_table: table,
            marginal: marginal(source, axis.other()),
        }
    }

    pub fn which(&self) -> Which {
        self.which
    }

    pub fn source(&self) -> &Density2D {
        &self.source
    }

    pub fn cdf_table(&self) -> &ScalarField2D {
        &self.cdf_table
    }

    /// Marginal of the conditioning axis.
    pub fn marginal(&self) -> &Marginal1D {
        &self.marginal
    }

    pub fn primary_grid(&self) -> &Grid1D {
        self.cdf_table.grid(self.which.primary_axis())
    }

    pub fn conditioning_grid(&self) -> &Grid1D {
        self.cdf_table.grid(self.which.primary_axis().other())
    }

    fn table(&self, p: usize, c: usize) -> f64 {
        match self.which {
            Which::FirstGivenSecond => self.cdf_table.get(p, c),
            Which::SecondGivenFirst => self.cdf_table.get(c, p),
        }
    }

    fn density(&self, primary: f64, conditioning: f64) -> f64 {
        match self.which {
            Which::FirstGivenSecond => self.source.value_at_clamped(primary, conditioning),
            Which::SecondGivenFirst => self.source.value_at_clamped(conditioning, primary),
        }
    }

    fn node_density(&self, p: usize, c: usize) -> f64 {
        match self.which {
            Which::FirstGivenSecond => self.source.get(p, c),
            Which::SecondGivenFirst => self.source.get(c, p),
        }
    }

    /// The CDF at a conditioning value, as the blend of its two neighbouring
    /// table rows.
    fn row(&self, conditioning: f64) -> impl Fn(usize) -> f64 + '_ {
        let (l, lam) = self.conditioning_grid().locate(conditioning);
        move |p| {
            let lo = self.table(p, l);
            if lam == 0.0 {
                lo
            } else {
                (1.0 - lam) * lo + lam * self.table(p, l + 1)
            }
        }
    }

    /// Coefficients `(a, b, c)` of the CDF `a + b t + c t^2` on primary cell
    /// `k`, `t` in `[0, 1]`. Each table row integrates the linear interpolant
    /// of its slice density, so the CDF is C1 along the primary axis and
    /// agrees with the trapezoid table at nodes.
    fn cell(&self, k: usize, conditioning: f64) -> (f64, f64, f64) {
        let (l, lam) = self.conditioning_grid().locate(conditioning);
        let slice = |c: usize| {
            let a = self.table(k, c);
            let rise = self.table(k + 1, c) - a;
            let (d0, d1) = (self.node_density(k, c), self.node_density(k + 1, c));
            let rho = (d1 - d0) / (d0 + d1);
            (a, rise * (1.0 - rho), rise * rho)
        };
        let lo = slice(l);
        if lam == 0.0 {
            return lo;
        }
        let hi = slice(l + 1);
        (
            (1.0 - lam) * lo.0 + lam * hi.0,
            (1.0 - lam) * lo.1 + lam * hi.1,
            (1.0 - lam) * lo.2 + lam * hi.2,
        )
    }

    pub fn cond_cdf(&self, primary: f64, conditioning: f64) -> Result<f64> {
        self.primary_grid().check(primary)?;
        self.conditioning_grid().check(conditioning)?;
        Ok(self.cond_cdf_clamped(primary, conditioning))
    }

    fn cond_cdf_clamped(&self, primary: f64, conditioning: f64) -> f64 {
        let (k, t) = self.primary_grid().locate(primary);
        let (a, b, c) = self.cell(k, conditioning);
        (a + t * (b + c * t)).clamp(0.0, 1.0)
    }

    /// Inverse of the conditional CDF in its first argument at level `s`.
    pub fn quantile(&self, s: f64, conditioning: f64) -> Result<f64> {
        self.conditioning_grid().check(conditioning)?;
        let s = clamp_level(s)?;
        Ok(self.quantile_clamped(s, conditioning))
    }

    fn quantile_clamped(&self, s: f64, conditioning: f64) -> f64 {
        let g = self.primary_grid();
        let n = g.n();
        let row = self.row(conditioning);
        // bisection for the cell with row(k) <= s <= row(k + 1)
        let (mut lo, mut hi) = (0usize, n - 1);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if row(mid) <= s {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (a, b, c) = self.cell(lo, conditioning);
        let r = (s - a).max(0.0);
        // root of c t^2 + b t = r in the cancellation-free form
        let disc = (b * b + 4.0 * c * r).max(0.0);
        let den = b + disc.sqrt();
        let t = if den > 0.0 { (2.0 * r / den).clamp(0.0, 1.0) } else { 0.0 };
        if t == 1.0 {
            g.node(lo + 1)
        } else {
            g.node(lo) + t * g.spacing()
        }
    }

    /// Derivative of the quantile in its level argument.
    pub fn quantile_ds(&self, s: f64, conditioning: f64) -> Result<f64> {
        let v = self.quantile(s, conditioning)?;
        self.ds_at(v, conditioning)
    }

    fn ds_at(&self, v: f64, conditioning: f64) -> Result<f64> {
        let dens = self.density(v, conditioning);
        if dens < POSITIVITY_FLOOR {
            return Err(Error::DegenerateDensity {
                primary: v,
                conditioning,
                value: dens,
            });
        }
        Ok(self.marginal.value_at(conditioning) / dens)
    }

    /// Derivative of the quantile in the conditioning argument, by implicit
    /// differentiation with a finite difference of the CDF.
    pub fn quantile_dcond(&self, s: f64, conditioning: f64) -> Result<f64> {
        let v = self.quantile(s, conditioning)?;
        let ds = self.ds_at(v, conditioning)?;
        Ok(-self.cdf_dcond(v, conditioning) * ds)
    }

    /// Quantile with both derivatives, sharing one inversion.
    pub fn quantile_with_derivatives(&self, s: f64, conditioning: f64) -> Result<QuantilePoint> {
        let value = self.quantile(s, conditioning)?;
        let ds = self.ds_at(value, conditioning)?;
        Ok(QuantilePoint {
            value,
            ds,
            dcond: -self.cdf_dcond(value, conditioning) * ds,
        })
    }

    fn cdf_dcond(&self, primary: f64, conditioning: f64) -> f64 {
        let cg = self.conditioning_grid();
        let h = cg.spacing();
        let (lo, hi) = (cg.lo(), cg.hi());
        let up = (conditioning + h).min(hi);
        let down = (conditioning - h).max(lo);
        (self.cond_cdf_clamped(primary, up) - self.cond_cdf_clamped(primary, down)) / (up - down)
    }
}

/// A quantile value with its level and conditioning derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantilePoint {
    pub value: f64,
    pub ds: f64,
    pub dcond: f64,
}

fn clamp_level(s: f64) -> Result<f64> {
    if !(-QUANTILE_CLAMP..=1.0 + QUANTILE_CLAMP).contains(&s) {
        return Err(Error::OutOfRange {
            value: s,
            lo: 0.0,
            hi: 1.0,
        });
    }
    Ok(s.clamp(0.0, 1.0))
}

/// Smallest sampled value of the two leading coefficients
/// `ds(G~1) / f~2` and `ds(G2) / f1`.
///
/// Levels are sampled at every node of each conditional CDF row and on a
/// uniform grid of 65 levels, at every conditioning node.
pub fn ellipticity_margin(cq_tilde_1: &ConditionalQuantile, cq_2: &ConditionalQuantile) -> f64 {
    let mut margin = f64::INFINITY;
    for cq in [cq_tilde_1, cq_2] {
        let cg = *cq.conditioning_grid();
        let np = cq.primary_grid().n();
        for c in 0..cg.n() {
            let y = cg.node(c);
            let m = cq.marginal.value_at(y);
            let levels = (0..np).map(|p| cq.table(p, c)).chain((0..=64).map(|k| k as f64 / 64.0));
            for s in levels {
                let v = cq.quantile_clamped(s, y);
                let ds = m / cq.density(v, y).max(POSITIVITY_FLOOR);
                margin = margin.min(ds / m);
            }
        }
    }
    margin
}
