//! Uniform grids, grid-valued densities and fields, and the quadrature and
//! finite-difference primitives shared by the rest of the crate.
//!
//! Quadrature is the composite trapezoid rule throughout. Cumulative integrals
//! are piecewise linear between nodes, so a CDF table built here and its
//! linear-interpolation inverse are exact inverses of each other on the grid.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound enforced on every density value at ingestion.
pub const POSITIVITY_FLOOR: f64 = 1e-12;

/// Fractional distances below this are snapped onto the nearest node when
/// locating a point, so node queries hit node values exactly.
const NODE_SNAP: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    pub fn other(self) -> Axis {
        match self {
            Axis::X => Axis::Y,
            Axis::Y => Axis::X,
        }
    }
}

/// Uniform grid on `[lo, hi]` with `n` nodes, node `i` at `lo + i * h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    lo: f64,
    hi: f64,
    n: usize,
}

impl Grid1D {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
            return Err(Error::InvalidGrid(format!("need lo < hi, got [{lo}, {hi}]")));
        }
        if n < 3 {
            return Err(Error::InvalidGrid(format!("need at least 3 nodes, got {n}")));
        }
        Ok(Self { lo, hi, n })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.hi
        } else {
            self.lo + (self.hi - self.lo) * i as f64 / (self.n - 1) as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }

    /// Same grid translated by `by`.
    pub fn shifted(&self, by: f64) -> Grid1D {
        Grid1D {
            lo: self.lo + by,
            hi: self.hi + by,
            n: self.n,
        }
    }

    pub fn approx_eq(&self, other: &Grid1D) -> bool {
        let tol = 1e-12 * (1.0 + self.lo.abs().max(self.hi.abs()));
        self.n == other.n && (self.lo - other.lo).abs() <= tol && (self.hi - other.hi).abs() <= tol
    }

    /// Trapezoid weights; node `i` carries the length of its dual cell.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let h = self.spacing();
        let mut w = vec![h; self.n];
        w[0] = 0.5 * h;
        w[self.n - 1] = 0.5 * h;
        w
    }

    /// Whether `x` lies in the domain up to a relative round-off allowance.
    pub fn contains(&self, x: f64) -> bool {
        let tol = 1e-12 * (self.hi - self.lo);
        x >= self.lo - tol && x <= self.hi + tol
    }

    pub(crate) fn check(&self, x: f64) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::OutOfRange {
                value: x,
                lo: self.lo,
                hi: self.hi,
            })
        }
    }

    /// Cell index `k` in `0..n-1` and local coordinate `t` in `[0, 1]` with
    /// `x = node(k) + t * h`. Points outside the domain are clamped.
    pub(crate) fn locate(&self, x: f64) -> (usize, f64) {
        let mut u = ((x - self.lo) / self.spacing()).clamp(0.0, (self.n - 1) as f64);
        let r = u.round();
        if (u - r).abs() < NODE_SNAP {
            u = r;
        }
        let k = (u.floor() as usize).min(self.n - 2);
        (k, u - k as f64)
    }

    /// Integral over `[a, b]` of each hat basis function that overlaps it,
    /// as `(node, weight)` pairs.
    pub(crate) fn hat_integrals(&self, a: f64, b: f64) -> Vec<(usize, f64)> {
        let h = self.spacing();
        let a = a.max(self.lo);
        let b = b.min(self.hi);
        let mut out = Vec::new();
        if b <= a {
            return out;
        }
        let (k0, _) = self.locate(a);
        let (k1, t1) = self.locate(b);
        let k_end = if t1 == 0.0 && k1 > 0 { k1 - 1 } else { k1 };
        let mut acc = vec![0.0; self.n];
        for k in k0..=k_end.min(self.n - 2) {
            let xl = self.node(k);
            let c0 = a.max(xl);
            let c1 = b.min(self.node(k + 1));
            if c1 <= c0 {
                continue;
            }
            // local coordinates in [0, 1]; hat_k = 1 - s, hat_{k+1} = s
            let s0 = (c0 - xl) / h;
            let s1 = (c1 - xl) / h;
            let len = c1 - c0;
            let mean_s = 0.5 * (s0 + s1);
            acc[k] += len * (1.0 - mean_s);
            acc[k + 1] += len * mean_s;
        }
        for (i, w) in acc.into_iter().enumerate() {
            if w != 0.0 {
                out.push((i, w));
            }
        }
        out
    }
}

/// Composite trapezoid integral of nodal values with spacing `h`.
pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let inner: f64 = values[1..n - 1].iter().sum();
    h * (inner + 0.5 * (values[0] + values[n - 1]))
}

/// Running trapezoid integral, first entry zero.
pub fn cumulative_trapezoid(values: &[f64], h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in values.windows(2) {
        acc += 0.5 * h * (w[0] + w[1]);
        out.push(acc);
    }
    out
}

/// Second-order first derivative of nodal values: central inside, one-sided
/// three-point at the ends.
pub fn diff1_1d(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        d[i] = (values[i + 1] - values[i - 1]) / (2.0 * h);
    }
    d[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * h);
    d[n - 1] = (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * h);
    d
}

/// Second derivative: central inside; four-point one-sided at the ends when
/// available, three-point otherwise.
pub fn diff2_1d(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    let h2 = h * h;
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        d[i] = (values[i + 1] - 2.0 * values[i] + values[i - 1]) / h2;
    }
    if n >= 4 {
        d[0] = (2.0 * values[0] - 5.0 * values[1] + 4.0 * values[2] - values[3]) / h2;
        d[n - 1] =
            (2.0 * values[n - 1] - 5.0 * values[n - 2] + 4.0 * values[n - 3] - values[n - 4]) / h2;
    } else {
        d[0] = d[1];
        d[n - 1] = d[n - 2];
    }
    d
}

/// Real-valued field on a tensor grid, `values[[i, j]]` at `(x_i, y_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField2D {
    gx: Grid1D,
    gy: Grid1D,
    values: Array2<f64>,
}

impl ScalarField2D {
    pub fn new(gx: Grid1D, gy: Grid1D, values: Array2<f64>) -> Result<Self> {
        if values.dim() != (gx.n(), gy.n()) {
            return Err(Error::InvalidGrid(format!(
                "values are {:?} but grids are {} x {}",
                values.dim(),
                gx.n(),
                gy.n()
            )));
        }
        Ok(Self { gx, gy, values })
    }

    pub fn zeros(gx: Grid1D, gy: Grid1D) -> Self {
        Self {
            gx,
            gy,
            values: Array2::zeros((gx.n(), gy.n())),
        }
    }

    pub fn from_fn(gx: Grid1D, gy: Grid1D, f: impl Fn(f64, f64) -> f64) -> Self {
        let xs = gx.nodes();
        let ys = gy.nodes();
        let values = Array2::from_shape_fn((gx.n(), gy.n()), |(i, j)| f(xs[i], ys[j]));
        Self { gx, gy, values }
    }

    pub fn gx(&self) -> &Grid1D {
        &self.gx
    }

    pub fn gy(&self) -> &Grid1D {
        &self.gy
    }

    pub fn grid(&self, axis: Axis) -> &Grid1D {
        match axis {
            Axis::X => &self.gx,
            Axis::Y => &self.gy,
        }
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[[i, j]]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest magnitude over nodes at least `margin` (a fraction of each side)
    /// away from the boundary.
    pub fn max_abs_core(&self, margin: f64) -> f64 {
        let (ilo, ihi) = core_range(self.gx.n(), margin);
        let (jlo, jhi) = core_range(self.gy.n(), margin);
        let mut m: f64 = 0.0;
        for i in ilo..=ihi {
            for j in jlo..=jhi {
                m = m.max(self.values[[i, j]].abs());
            }
        }
        m
    }

    /// Largest magnitude over interior nodes (boundary excluded).
    pub fn max_abs_interior(&self) -> f64 {
        let mut m: f64 = 0.0;
        for i in 1..self.gx.n() - 1 {
            for j in 1..self.gy.n() - 1 {
                m = m.max(self.values[[i, j]].abs());
            }
        }
        m
    }

    /// Bilinear interpolation; points outside the domain are an error.
    pub fn interpolate(&self, x: f64, y: f64) -> Result<f64> {
        self.gx.check(x)?;
        self.gy.check(y)?;
        Ok(self.interpolate_clamped(x, y))
    }

    pub(crate) fn interpolate_clamped(&self, x: f64, y: f64) -> f64 {
        let (k, t) = self.gx.locate(x);
        let (l, s) = self.gy.locate(y);
        let v = &self.values;
        (1.0 - t) * ((1.0 - s) * v[[k, l]] + s * v[[k, l + 1]])
            + t * ((1.0 - s) * v[[k + 1, l]] + s * v[[k + 1, l + 1]])
    }

    /// Trapezoid integral over the whole rectangle.
    pub fn integral(&self) -> f64 {
        let wx = self.gx.trapezoid_weights();
        let wy = self.gy.trapezoid_weights();
        let mut total = 0.0;
        for i in 0..self.gx.n() {
            let mut row = 0.0;
            for j in 0..self.gy.n() {
                row += wy[j] * self.values[[i, j]];
            }
            total += wx[i] * row;
        }
        total
    }

    pub fn same_grids(&self, other: &ScalarField2D) -> bool {
        self.gx.approx_eq(&other.gx) && self.gy.approx_eq(&other.gy)
    }

    pub(crate) fn lane(&self, axis: Axis, k: usize) -> Vec<f64> {
        match axis {
            Axis::X => self.values.column(k).to_vec(),
            Axis::Y => self.values.row(k).to_vec(),
        }
    }

    fn map_lanes(&self, axis: Axis, op: impl Fn(&[f64], f64) -> Vec<f64>) -> ScalarField2D {
        let h = self.grid(axis).spacing();
        let mut out = Array2::zeros(self.values.dim());
        match axis {
            Axis::X => {
                for j in 0..self.gy.n() {
                    let lane = op(&self.lane(Axis::X, j), h);
                    for (i, v) in lane.into_iter().enumerate() {
                        out[[i, j]] = v;
                    }
                }
            }
            Axis::Y => {
                for i in 0..self.gx.n() {
                    let lane = op(&self.lane(Axis::Y, i), h);
                    for (j, v) in lane.into_iter().enumerate() {
                        out[[i, j]] = v;
                    }
                }
            }
        }
        ScalarField2D {
            gx: self.gx,
            gy: self.gy,
            values: out,
        }
    }
}

fn core_range(n: usize, margin: f64) -> (usize, usize) {
    let k = ((margin * (n - 1) as f64) - 1e-9).ceil().max(1.0) as usize;
    let k = k.min((n - 1) / 2);
    (k, n - 1 - k)
}

/// Strictly positive density on a tensor grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Density2D {
    field: ScalarField2D,
}

impl Density2D {
    /// Validates positivity; values in `(0, POSITIVITY_FLOOR)` are raised to
    /// the floor.
    pub fn new(gx: Grid1D, gy: Grid1D, mut values: Array2<f64>) -> Result<Self> {
        for ((i, j), v) in values.indexed_iter_mut() {
            if !v.is_finite() || *v <= 0.0 {
                return Err(Error::NonPositiveDensity { i, j, value: *v });
            }
            if *v < POSITIVITY_FLOOR {
                *v = POSITIVITY_FLOOR;
            }
        }
        Ok(Self {
            field: ScalarField2D::new(gx, gy, values)?,
        })
    }

    pub fn from_fn(gx: Grid1D, gy: Grid1D, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let field = ScalarField2D::from_fn(gx, gy, f);
        Self::new(gx, gy, field.into_values())
    }

    pub fn gx(&self) -> &Grid1D {
        self.field.gx()
    }

    pub fn gy(&self) -> &Grid1D {
        self.field.gy()
    }

    pub fn values(&self) -> &Array2<f64> {
        self.field.values()
    }

    pub fn as_field(&self) -> &ScalarField2D {
        &self.field
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.field.get(i, j)
    }

    pub fn mass(&self) -> f64 {
        self.field.integral()
    }

    pub fn value_at(&self, x: f64, y: f64) -> Result<f64> {
        self.field.interpolate(x, y)
    }

    pub(crate) fn value_at_clamped(&self, x: f64, y: f64) -> f64 {
        self.field.interpolate_clamped(x, y)
    }

    /// Resample onto other grids by bilinear interpolation.
    pub fn resample(&self, gx: Grid1D, gy: Grid1D) -> Result<Density2D> {
        if !(self.gx().contains(gx.lo()) && self.gx().contains(gx.hi()))
            || !(self.gy().contains(gy.lo()) && self.gy().contains(gy.hi()))
        {
            return Err(Error::DomainMismatch(
                "resampling grid leaves the density's domain".into(),
            ));
        }
        Density2D::from_fn(gx, gy, |x, y| self.value_at_clamped(x, y))
    }

    /// Same values on grids translated by `(dx, dy)`.
    pub fn shifted(&self, dx: f64, dy: f64) -> Density2D {
        Density2D {
            field: ScalarField2D {
                gx: self.gx().shifted(dx),
                gy: self.gy().shifted(dy),
                values: self.values().clone(),
            },
        }
    }

    pub fn normalize(&self) -> Result<Density2D> {
        normalize(self)
    }
}

/// Rescale to unit trapezoid mass.
pub fn normalize(d: &Density2D) -> Result<Density2D> {
    let mass = d.mass();
    if !(mass.is_finite() && mass > 0.0) {
        return Err(Error::NonPositiveDensity {
            i: 0,
            j: 0,
            value: mass,
        });
    }
    let values = d.values().mapv(|v| v / mass);
    Density2D::new(*d.gx(), *d.gy(), values)
}

/// A one-dimensional density with its cumulative table.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginal1D {
    grid: Grid1D,
    values: Vec<f64>,
    cdf: Vec<f64>,
}

impl Marginal1D {
    /// Builds the cumulative table from nodal density values. The table is
    /// divided by its last entry so it ends exactly at 1.
    pub fn from_values(grid: Grid1D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n() {
            return Err(Error::InvalidGrid(format!(
                "{} values on a {}-node grid",
                values.len(),
                grid.n()
            )));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::NonPositiveDensity { i, j: 0, value: *v });
        }
        let mut cdf = cumulative_trapezoid(&values, grid.spacing());
        let total = cdf[grid.n() - 1];
        if total <= 0.0 {
            return Err(Error::NonPositiveDensity {
                i: 0,
                j: 0,
                value: total,
            });
        }
        for c in cdf.iter_mut() {
            *c /= total;
        }
        cdf[grid.n() - 1] = 1.0;
        if cdf.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid("cumulative table is not strictly increasing".into()));
        }
        Ok(Self { grid, values, cdf })
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cdf(&self) -> &[f64] {
        &self.cdf
    }

    pub fn value_at(&self, x: f64) -> f64 {
        let (k, t) = self.grid.locate(x);
        (1.0 - t) * self.values[k] + t * self.values[k + 1]
    }

    pub fn cdf_at(&self, x: f64) -> f64 {
        let (k, t) = self.grid.locate(x);
        (1.0 - t) * self.cdf[k] + t * self.cdf[k + 1]
    }

    /// Inverse of the cumulative table at level `t` in `[0, 1]`.
    pub fn quantile(&self, t: f64) -> Result<f64> {
        interp1_monotone(&self.cdf, &self.grid.nodes(), t)
    }

    pub fn mean(&self) -> f64 {
        let xs = self.grid.nodes();
        let first: Vec<f64> = xs.iter().zip(&self.values).map(|(x, v)| x * v).collect();
        trapezoid(&first, self.grid.spacing()) / trapezoid(&self.values, self.grid.spacing())
    }
}

/// Trapezoid marginal of `d`: axis `X` integrates out `y` and lives on `gx`.
pub fn marginal(d: &Density2D, axis: Axis) -> Marginal1D {
    let (grid, other) = match axis {
        Axis::X => (*d.gx(), *d.gy()),
        Axis::Y => (*d.gy(), *d.gx()),
    };
    let w = other.trapezoid_weights();
    let values: Vec<f64> = (0..grid.n())
        .map(|k| {
            let lane = d.as_field().lane(axis.other(), k);
            lane.iter().zip(&w).map(|(v, w)| v * w).sum()
        })
        .collect();
    Marginal1D::from_values(grid, values).expect("positive density has a valid marginal")
}

/// Running trapezoid integral of `f` along `axis` from the lower domain edge.
pub fn cumulative_along(f: &ScalarField2D, axis: Axis) -> ScalarField2D {
    f.map_lanes(axis, cumulative_trapezoid)
}

fn require_nodes(f: &ScalarField2D, axis: Axis, min: usize) -> Result<()> {
    let n = f.grid(axis).n();
    if n < min {
        return Err(Error::GridTooSmall { axis, n, min });
    }
    Ok(())
}

pub fn diff1(f: &ScalarField2D, axis: Axis) -> Result<ScalarField2D> {
    require_nodes(f, axis, 3)?;
    Ok(f.map_lanes(axis, diff1_1d))
}

pub fn diff2(f: &ScalarField2D, axis: Axis) -> Result<ScalarField2D> {
    require_nodes(f, axis, 3)?;
    Ok(f.map_lanes(axis, diff2_1d))
}

/// Mixed derivative as the composition of first differences; in the interior
/// this is the four-point cross stencil.
pub fn mixed_xy(f: &ScalarField2D) -> Result<ScalarField2D> {
    diff1(&diff1(f, Axis::X)?, Axis::Y)
}

/// Piecewise-linear interpolation through `(xs, ys)` with `xs` strictly
/// increasing. `x` must lie in `[xs[0], xs[last]]`.
pub fn interp1_monotone(xs: &[f64], ys: &[f64], x: f64) -> Result<f64> {
    let n = xs.len();
    debug_assert_eq!(n, ys.len());
    let (lo, hi) = (xs[0], xs[n - 1]);
    if !(x >= lo && x <= hi) {
        return Err(Error::OutOfRange { value: x, lo, hi });
    }
    // last k with xs[k] <= x, kept inside the final cell
    let k = match xs.partition_point(|v| *v <= x) {
        0 => 0,
        p => (p - 1).min(n - 2),
    };
    let t = (x - xs[k]) / (xs[k + 1] - xs[k]);
    let v = ys[k] + t * (ys[k + 1] - ys[k]);
    Ok(v.clamp(ys[k].min(ys[k + 1]), ys[k].max(ys[k + 1])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn unit(n: usize) -> Grid1D {
        Grid1D::new(0.0, 1.0, n).unwrap()
    }

    #[test]
    fn grid_rejects_degenerate_input() {
        assert!(Grid1D::new(0.0, 1.0, 2).is_err());
        assert!(Grid1D::new(1.0, 1.0, 5).is_err());
        let g = Grid1D::new(1.0, 2.0, 5).unwrap();
        assert_eq!(g.node(4), 2.0);
        assert_abs_diff_eq!(g.spacing(), 0.25);
    }

    #[test]
    fn normalize_constant_field() {
        let d = Density2D::from_fn(unit(7), unit(9), |_, _| 2.0).unwrap();
        let n = normalize(&d).unwrap();
        for v in n.values() {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn normalize_is_identity_on_normalized_input() {
        let d = Density2D::from_fn(unit(17), unit(17), |x, y| 1.0 + 0.5 * (2.0 * x - 1.0) * (2.0 * y - 1.0))
            .unwrap();
        let n = normalize(&d).unwrap();
        assert_abs_diff_eq!(d.mass(), 1.0, epsilon = 1e-12);
        for (a, b) in d.values().iter().zip(n.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn normalize_bilinear_product_with_richardson_check() {
        // 4xy integrates to 1; the trapezoid rule is exact on bilinear
        // functions, so both resolutions and their extrapolation agree.
        let coarse = Density2D::from_fn(unit(17), unit(17), |x, y| 4.0 * x * y + 1e-3).unwrap();
        let fine = Density2D::from_fn(unit(33), unit(33), |x, y| 4.0 * x * y + 1e-3).unwrap();
        let richardson = (4.0 * fine.mass() - coarse.mass()) / 3.0;
        assert_abs_diff_eq!(fine.mass(), 1.001, epsilon = 1e-12);
        assert_abs_diff_eq!(richardson, 1.001, epsilon = 1e-12);
        assert_abs_diff_eq!(normalize(&fine).unwrap().mass(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn nonpositive_values_are_rejected_and_tiny_ones_floored() {
        let mut v = Array2::from_elem((5, 5), 1.0);
        v[[2, 3]] = 0.0;
        assert!(matches!(
            Density2D::new(unit(5), unit(5), v.clone()),
            Err(Error::NonPositiveDensity { i: 2, j: 3, .. })
        ));
        v[[2, 3]] = 1e-300;
        let d = Density2D::new(unit(5), unit(5), v).unwrap();
        assert_eq!(d.get(2, 3), POSITIVITY_FLOOR);
    }

    #[test]
    fn uniform_marginal_and_cdf() {
        let d = normalize(&Density2D::from_fn(unit(11), unit(11), |_, _| 3.0).unwrap()).unwrap();
        let m = marginal(&d, Axis::X);
        for (i, (v, c)) in m.values().iter().zip(m.cdf()).enumerate() {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(*c, i as f64 / 10.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn odd_factor_drops_out_of_the_marginal() {
        let d = Density2D::from_fn(unit(21), unit(21), |x, y| 1.0 + 0.5 * (2.0 * x - 1.0) * (2.0 * y - 1.0))
            .unwrap();
        for v in marginal(&d, Axis::X).values() {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn cumulative_of_uniform_and_first_slice() {
        let d = Density2D::from_fn(unit(9), unit(5), |_, _| 1.0).unwrap();
        let c = cumulative_along(d.as_field(), Axis::X);
        for i in 0..9 {
            for j in 0..5 {
                assert_abs_diff_eq!(c.get(i, j), i as f64 / 8.0, epsilon = 1e-14);
            }
        }
        let c = cumulative_along(d.as_field(), Axis::Y);
        for i in 0..9 {
            assert_eq!(c.get(i, 0), 0.0);
        }
    }

    #[test]
    fn cumulative_matches_bilinear_antiderivative() {
        // f = 1 + 0.5(2x-1)(2y-1) is linear in y, so the trapezoid cumulative
        // is exact: at x = 0.25 it equals y - 0.25 (y^2 - y).
        let d = Density2D::from_fn(unit(33), unit(33), |x, y| 1.0 + 0.5 * (2.0 * x - 1.0) * (2.0 * y - 1.0))
            .unwrap();
        let c = cumulative_along(d.as_field(), Axis::Y);
        let i = 8; // x = 0.25
        for j in 0..33 {
            let y = j as f64 / 32.0;
            assert_abs_diff_eq!(c.get(i, j), y - 0.25 * (y * y - y), epsilon = 1e-13);
        }
    }

    #[test]
    fn differences_are_exact_on_low_degree_polynomials() {
        let f = ScalarField2D::from_fn(unit(9), unit(7), |x, y| x * y);
        let d = diff1(&f, Axis::X).unwrap();
        for i in 0..9 {
            for j in 0..7 {
                assert_abs_diff_eq!(d.get(i, j), j as f64 / 6.0, epsilon = 1e-12);
            }
        }
        let f = ScalarField2D::from_fn(unit(9), unit(7), |x, _| x * x);
        let d = diff2(&f, Axis::X).unwrap();
        for i in 0..9 {
            assert_abs_diff_eq!(d.get(i, 3), 2.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn differencing_needs_three_nodes() {
        // grids cannot be built with fewer than three nodes, so the guard is
        // exercised through the error type directly
        let f = ScalarField2D::zeros(unit(3), unit(3));
        assert!(diff1(&f, Axis::Y).is_ok());
        assert!(matches!(
            require_nodes(&f, Axis::Y, 4),
            Err(Error::GridTooSmall { axis: Axis::Y, n: 3, min: 4 })
        ));
    }

    #[test]
    fn mixed_derivative_converges_at_second_order() {
        let err = |n: usize| {
            let g = unit(n);
            let f = ScalarField2D::from_fn(g, g, |x, y| x.sin() * y.cos());
            let m = mixed_xy(&f).unwrap();
            let mut e: f64 = 0.0;
            for i in 1..n - 1 {
                for j in 1..n - 1 {
                    let (x, y) = (g.node(i), g.node(j));
                    e = e.max((m.get(i, j) + x.cos() * y.sin()).abs());
                }
            }
            e
        };
        let (e1, e2) = (err(33), err(65));
        let order = (e1 / e2).log2();
        assert!(order > 1.9, "observed order {order}");
        assert!(e2 < 1e-4);
    }

    #[test]
    fn interpolation_basics() {
        assert_abs_diff_eq!(interp1_monotone(&[0.0, 1.0], &[0.0, 1.0], 0.5).unwrap(), 0.5);
        let xs = [0.0, 0.5, 2.0];
        let ys = [1.0, 3.0, 4.0];
        for (x, y) in xs.iter().zip(&ys) {
            assert_eq!(interp1_monotone(&xs, &ys, *x).unwrap(), *y);
        }
        assert!(matches!(
            interp1_monotone(&xs, &ys, 2.5),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn interpolated_gaussian_cdf_is_second_order() {
        // standard normal CDF on [-3, 3]; midpoint queries
        let phi = |x: f64| 0.5 * (1.0 + erf_approx(x / std::f64::consts::SQRT_2));
        let err = |n: usize| {
            let g = Grid1D::new(-3.0, 3.0, n).unwrap();
            let xs = g.nodes();
            let ys: Vec<f64> = xs.iter().map(|x| phi(*x)).collect();
            (0..n - 1)
                .map(|k| {
                    let x = 0.5 * (xs[k] + xs[k + 1]);
                    (interp1_monotone(&xs, &ys, x).unwrap() - phi(x)).abs()
                })
                .fold(0.0, f64::max)
        };
        let ratio = err(65) / err(129);
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }

    // Abramowitz-Stegun 7.1.26 is too coarse here; use a series/continued
    // fraction good to ~1e-15 for test purposes.
    fn erf_approx(x: f64) -> f64 {
        if x.abs() < 3.0 {
            let mut sum = x;
            let mut term = x;
            for k in 1..200 {
                term *= -x * x / k as f64;
                let add = term / (2 * k + 1) as f64;
                sum += add;
                if add.abs() < 1e-17 {
                    break;
                }
            }
            sum * 2.0 / std::f64::consts::PI.sqrt()
        } else {
            x.signum()
        }
    }

    #[test]
    fn hat_integrals_partition_cell_lengths() {
        let g = unit(9);
        let w = g.hat_integrals(0.1, 0.73);
        let total: f64 = w.iter().map(|(_, v)| v).sum();
        assert_abs_diff_eq!(total, 0.63, epsilon = 1e-14);
        // integral of the identity through nodal values
        let xs = g.nodes();
        let first: f64 = w.iter().map(|(i, v)| xs[*i] * v).sum();
        assert_abs_diff_eq!(first, 0.5 * (0.73f64.powi(2) - 0.01), epsilon = 1e-14);
    }

    #[test]
    fn core_range_excludes_an_eighth() {
        assert_eq!(core_range(33, 0.125), (4, 28));
        assert_eq!(core_range(65, 0.125), (8, 56));
        assert_eq!(core_range(5, 0.0), (1, 3));
    }

    #[test]
    fn antiderivative_round_trip_is_second_order() {
        let err = |n: usize| {
            let g = unit(n);
            let f = ScalarField2D::from_fn(g, g, |x, y| (2.0 * x).exp() * (1.0 + y * y));
            let back = diff1(&cumulative_along(&f, Axis::X), Axis::X).unwrap();
            let mut e: f64 = 0.0;
            for i in 1..n - 1 {
                for j in 0..n {
                    e = e.max((back.get(i, j) - f.get(i, j)).abs());
                }
            }
            e
        };
        let (e1, e2) = (err(33), err(65));
        assert!((e1 / e2) > 3.5, "ratio {}", e1 / e2);
    }

    proptest! {
        #[test]
        fn marginals_integrate_to_one(
            nx in 3usize..20,
            ny in 3usize..20,
            seed in proptest::collection::vec(0.05f64..5.0, 400),
        ) {
            let d = Density2D::from_fn(unit(nx), Grid1D::new(1.0, 2.5, ny).unwrap(), |x, y| {
                let i = (x * 19.0) as usize;
                let j = ((y - 1.0) * 12.0) as usize;
                seed[(i * 20 + j) % 400]
            }).unwrap();
            let d = normalize(&d).unwrap();
            let mx = marginal(&d, Axis::X);
            let my = marginal(&d, Axis::Y);
            prop_assert!((trapezoid(mx.values(), mx.grid().spacing()) - 1.0).abs() < 1e-10);
            prop_assert!((trapezoid(my.values(), my.grid().spacing()) - 1.0).abs() < 1e-10);
            prop_assert!(mx.cdf().windows(2).all(|w| w[1] > w[0]));
            prop_assert_eq!(mx.cdf()[nx - 1], 1.0);
        }

        #[test]
        fn interpolation_stays_within_bracketing_values(
            steps in proptest::collection::vec(0.01f64..1.0, 2..30),
            rises in proptest::collection::vec(0.0f64..1.0, 30),
            q in 0.0f64..1.0,
        ) {
            let mut xs = vec![0.0];
            let mut ys = vec![0.0];
            for (k, s) in steps.iter().enumerate() {
                xs.push(xs[k] + s);
                ys.push(ys[k] + rises[k]);
            }
            let x = q * xs[xs.len() - 1];
            let v = interp1_monotone(&xs, &ys, x).unwrap();
            let k = xs.partition_point(|t| *t <= x).saturating_sub(1).min(xs.len() - 2);
            prop_assert!(v >= ys[k] - 1e-15 && v <= ys[k + 1] + 1e-15);
            let v2 = interp1_monotone(&xs, &ys, (x + 0.01).min(xs[xs.len() - 1])).unwrap();
            prop_assert!(v2 >= v - 1e-15);
        }
    }
}
