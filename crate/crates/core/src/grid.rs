//! Functions tabulated on uniform 1D grids (interval or circle) with local
//! cubic interpolation.
//!
//! Interpolation uses the 4-point Lagrange stencil, exact on cubics with
//! `O(h^4)` error for smooth data — far below the `O(eta^3)` signals the
//! weak-order experiments measure once `M >= 1024`. Values at nodes are
//! reproduced exactly, and a query whose whole stencil is zero yields an
//! exact zero, which the finite-speed tests rely on.

use std::f64::consts::TAU;
use std::io::Write;

use crate::{Error, Result};

/// Minimum number of cells; coarser grids make cubic stencils meaningless.
pub const MIN_CELLS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridDomain {
    /// `[lo, hi]` with `cells + 1` nodes.
    Interval { lo: f64, hi: f64 },
    /// `[0, 2 pi)` with `cells` nodes, periodic.
    Circle,
}

/// A uniform 1D grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1d {
    domain: GridDomain,
    cells: usize,
}

impl Grid1d {
    pub fn interval(lo: f64, hi: f64, cells: usize) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Invalid(format!("bad interval [{lo}, {hi}]")));
        }
        if cells < MIN_CELLS {
            return Err(Error::Invalid(format!(
                "grid needs at least {MIN_CELLS} cells, got {cells}"
            )));
        }
        Ok(Grid1d {
            domain: GridDomain::Interval { lo, hi },
            cells,
        })
    }

    pub fn circle(cells: usize) -> Result<Self> {
        if cells < MIN_CELLS {
            return Err(Error::Invalid(format!(
                "grid needs at least {MIN_CELLS} cells, got {cells}"
            )));
        }
        Ok(Grid1d {
            domain: GridDomain::Circle,
            cells,
        })
    }

    pub fn domain(&self) -> GridDomain {
        self.domain
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn n_nodes(&self) -> usize {
        match self.domain {
            GridDomain::Interval { .. } => self.cells + 1,
            GridDomain::Circle => self.cells,
        }
    }

    pub fn spacing(&self) -> f64 {
        match self.domain {
            GridDomain::Interval { lo, hi } => (hi - lo) / self.cells as f64,
            GridDomain::Circle => TAU / self.cells as f64,
        }
    }

    pub fn node(&self, i: usize) -> f64 {
        match self.domain {
            GridDomain::Interval { lo, .. } => lo + i as f64 * self.spacing(),
            GridDomain::Circle => i as f64 * self.spacing(),
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_nodes()).map(move |i| self.node(i))
    }

    pub fn contains(&self, x: f64) -> bool {
        match self.domain {
            GridDomain::Interval { lo, hi } => x >= lo && x <= hi,
            GridDomain::Circle => true,
        }
    }
}

/// Function values on a [`Grid1d`], with cubic evaluation between nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Grid1d,
    values: Vec<f64>,
}

/// Cubic Lagrange basis on abscissae {0, 1, 2, 3} evaluated at `t`.
#[inline]
fn lagrange4(t: f64) -> [f64; 4] {
    [
        -(t - 1.0) * (t - 2.0) * (t - 3.0) / 6.0,
        t * (t - 2.0) * (t - 3.0) / 2.0,
        -t * (t - 1.0) * (t - 3.0) / 2.0,
        t * (t - 1.0) * (t - 2.0) / 6.0,
    ]
}

impl GridFunction {
    pub fn new(grid: Grid1d, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_nodes() {
            return Err(Error::Invalid(format!(
                "expected {} values, got {}",
                grid.n_nodes(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("grid values must be finite".into()));
        }
        Ok(GridFunction { grid, values })
    }

    pub fn sample(grid: Grid1d, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.nodes().map(f).collect();
        Self::new(grid, values)
    }

    pub fn constant(grid: Grid1d, c: f64) -> Self {
        GridFunction {
            values: vec![c; grid.n_nodes()],
            grid,
        }
    }

    pub fn grid(&self) -> &Grid1d {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Cubic interpolation. Interval queries must lie inside the domain.
    pub fn eval(&self, x: f64) -> Result<f64> {
        match self.grid.domain {
            GridDomain::Interval { lo, hi } => {
                if x < lo || x > hi {
                    return Err(Error::Invalid(format!(
                        "query {x} outside interval [{lo}, {hi}]"
                    )));
                }
                Ok(self.eval_interval(x, lo))
            }
            GridDomain::Circle => Ok(self.eval_circle(x)),
        }
    }

    /// Interpolation with zero extension outside an interval domain; the
    /// natural evaluation for compactly supported densities.
    pub fn eval_zero_extended(&self, x: f64) -> f64 {
        match self.grid.domain {
            GridDomain::Interval { lo, hi } => {
                if x < lo || x > hi {
                    0.0
                } else {
                    self.eval_interval(x, lo)
                }
            }
            GridDomain::Circle => self.eval_circle(x),
        }
    }

    fn eval_interval(&self, x: f64, lo: f64) -> f64 {
        let h = self.grid.spacing();
        let m = self.grid.cells;
        let s = (x - lo) / h;
        let cell = (s.floor() as usize).min(m - 1);
        // Stencil base so the four nodes stay inside [0, m].
        let base = cell.saturating_sub(1).min(m - 3);
        let t = s - base as f64;
        let w = lagrange4(t);
        let v = &self.values;
        w[0] * v[base] + w[1] * v[base + 1] + w[2] * v[base + 2] + w[3] * v[base + 3]
    }

    fn eval_circle(&self, x: f64) -> f64 {
        let h = self.grid.spacing();
        let m = self.grid.cells;
        let s = (x.rem_euclid(TAU)) / h;
        let cell = (s.floor() as usize).min(m - 1);
        let t = s - cell as f64 + 1.0;
        let w = lagrange4(t);
        let v = &self.values;
        let i0 = (cell + m - 1) % m;
        let i1 = cell;
        let i2 = (cell + 1) % m;
        let i3 = (cell + 2) % m;
        w[0] * v[i0] + w[1] * v[i1] + w[2] * v[i2] + w[3] * v[i3]
    }

    /// Trapezoidal integral (periodic rectangle rule on the circle).
    pub fn integral(&self) -> f64 {
        let h = self.grid.spacing();
        match self.grid.domain {
            GridDomain::Interval { .. } => {
                let n = self.values.len();
                let inner: f64 = self.values[1..n - 1].iter().sum();
                h * (0.5 * self.values[0] + inner + 0.5 * self.values[n - 1])
            }
            GridDomain::Circle => h * self.values.iter().sum::<f64>(),
        }
    }

    /// Pointwise product integrated by composite Simpson (4th order).
    /// Requires matching grids and an even cell count on intervals.
    pub fn inner_product(&self, other: &GridFunction) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::Invalid("inner product needs matching grids".into()));
        }
        let h = self.grid.spacing();
        match self.grid.domain {
            GridDomain::Circle => Ok(h * self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .sum::<f64>()),
            GridDomain::Interval { .. } => {
                let m = self.grid.cells;
                if m % 2 != 0 {
                    return Err(Error::Invalid("Simpson pairing needs an even cell count".into()));
                }
                let g = |i: usize| self.values[i] * other.values[i];
                let mut acc = g(0) + g(m);
                let mut i = 1;
                while i < m {
                    acc += 4.0 * g(i);
                    if i + 1 < m {
                        acc += 2.0 * g(i + 1);
                    }
                    i += 2;
                }
                Ok(acc * h / 3.0)
            }
        }
    }

    /// Write `(node, value)` rows as CSV with a header line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "node,value")?;
        for (x, v) in self.grid.nodes().zip(&self.values) {
            writeln!(out, "{x:.16e},{v:.16e}")?;
        }
        Ok(())
    }
}

/// A nonnegative density tabulated on a grid; mass is the trapezoidal
/// integral.
#[derive(Debug, Clone)]
pub struct DensityGrid {
    function: GridFunction,
}

impl DensityGrid {
    pub fn new(function: GridFunction) -> Result<Self> {
        if function.values().iter().any(|&v| v < 0.0) {
            return Err(Error::Invalid("densities must be nonnegative".into()));
        }
        let d = DensityGrid { function };
        if d.mass() <= 0.0 {
            return Err(Error::Invalid("densities must carry positive mass".into()));
        }
        Ok(d)
    }

    pub fn sample(grid: Grid1d, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(GridFunction::sample(grid, f)?)
    }

    pub fn function(&self) -> &GridFunction {
        &self.function
    }

    pub fn mass(&self) -> f64 {
        self.function.integral()
    }

    pub fn into_function(self) -> GridFunction {
        self.function
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nodes_are_reproduced_exactly() {
        let g = Grid1d::interval(-5.0, 5.0, 64).unwrap();
        let f = GridFunction::sample(g, |x| x.sin()).unwrap();
        for i in 0..g.n_nodes() {
            let x = g.node(i);
            assert_eq!(f.eval(x).unwrap(), f.values()[i]);
        }
    }

    #[test]
    fn cubics_are_interpolated_exactly() {
        let g = Grid1d::interval(0.0, 2.0, 32).unwrap();
        let p = |x: f64| 1.0 + x - 0.5 * x * x + 0.25 * x * x * x;
        let f = GridFunction::sample(g, p).unwrap();
        for k in 0..97 {
            let x = 2.0 * k as f64 / 96.0;
            assert!((f.eval(x).unwrap() - p(x)).abs() < 1e-13);
        }
    }

    #[test]
    fn interpolation_error_is_fourth_order() {
        let errs: Vec<f64> = [64usize, 128]
            .iter()
            .map(|&m| {
                let g = Grid1d::interval(0.0, TAU, m).unwrap();
                let f = GridFunction::sample(g, |x| x.sin()).unwrap();
                let mut worst = 0.0f64;
                for k in 0..1000 {
                    let x = TAU * (k as f64 + 0.5) / 1000.0;
                    worst = worst.max((f.eval(x).unwrap() - x.sin()).abs());
                }
                worst
            })
            .collect();
        let ratio = errs[0] / errs[1];
        assert!(ratio > 12.0 && ratio < 20.0, "ratio {ratio}");
    }

    #[test]
    fn circle_interpolation_wraps() {
        let g = Grid1d::circle(256).unwrap();
        let f = GridFunction::sample(g, |t| (2.0 * t).cos()).unwrap();
        for x in [-0.3, 0.05, TAU - 0.05, TAU + 0.3, 13.0] {
            let expected = (2.0 * x).cos();
            assert!((f.eval(x).unwrap() - expected).abs() < 1e-5);
        }
    }

    #[test]
    fn constants_are_preserved_by_interpolation() {
        let g = Grid1d::interval(-1.0, 1.0, 16).unwrap();
        let f = GridFunction::constant(g, 3.25);
        for k in 0..50 {
            let x = -1.0 + 2.0 * k as f64 / 49.0;
            assert!((f.eval(x).unwrap() - 3.25).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_stencil_gives_exact_zero() {
        let g = Grid1d::interval(-4.0, 4.0, 128).unwrap();
        let f = GridFunction::sample(g, crate::fields::bump(0.0, 0.5)).unwrap();
        assert_eq!(f.eval(2.5).unwrap(), 0.0);
        assert_eq!(f.eval_zero_extended(7.0), 0.0);
    }

    #[test]
    fn too_coarse_grids_are_rejected() {
        assert!(Grid1d::interval(0.0, 1.0, 8).is_err());
        assert!(Grid1d::circle(4).is_err());
    }

    #[test]
    fn out_of_domain_queries_error() {
        let g = Grid1d::interval(0.0, 1.0, 32).unwrap();
        let f = GridFunction::constant(g, 1.0);
        assert!(f.eval(1.5).is_err());
        assert_eq!(f.eval_zero_extended(1.5), 0.0);
    }

    #[test]
    fn simpson_pairing_is_high_order() {
        let g = Grid1d::interval(0.0, 1.0, 64).unwrap();
        let a = GridFunction::sample(g, |x| x.exp()).unwrap();
        let b = GridFunction::sample(g, |x| x).unwrap();
        // integral of x e^x over [0,1] = 1.
        assert!((a.inner_product(&b).unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn density_rejects_negative_values() {
        let g = Grid1d::interval(0.0, 1.0, 32).unwrap();
        let f = GridFunction::sample(g, |x| x - 0.5).unwrap();
        assert!(DensityGrid::new(f).is_err());
    }

    #[test]
    fn csv_round_trip_format() {
        let g = Grid1d::interval(0.0, 1.0, 16).unwrap();
        let f = GridFunction::sample(g, |x| x).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "node,value");
        assert!(text.ends_with('\n'));
        assert_eq!(lines.count(), 17);
    }
}
