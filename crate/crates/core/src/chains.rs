//! The discrete Markov chains and their semigroups.
//!
//! Two chains: SGD `x <- x - eta grad f(x; xi)` in `R^d`, and stochastic
//! gradient ascent (online PCA) `w <- (w + eta xi xi^T w)/|...|` on the
//! sphere. For bounded test functions `phi`, the expectation
//! `u^n(x0) = E phi(x_n)` evolves by one operator `S` per step; this module
//! evaluates `S` two ways — Monte Carlo over trajectories, and exactly on a
//! 1D grid (interval for SGD, circle for the PCA chain) using the finite
//! atom support. The dual operator acting on densities is realized in 1D by
//! inverting the step map with a safeguarded Newton iteration.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::grid::{DensityGrid, GridDomain, GridFunction};
use crate::problems::{DataModel, LossProblem};
use crate::rng::{cumulative, NoiseStream};
use crate::sphere::SpherePoint;
use crate::{Error, Result};

/// Step size, horizon, and seed for a chain run.
#[derive(Debug, Clone, Copy)]
pub struct ChainConfig {
    pub eta: f64,
    pub n_steps: usize,
    pub seed: u64,
}

impl ChainConfig {
    pub fn new(eta: f64, n_steps: usize, seed: u64) -> Result<Self> {
        if !(eta > 0.0) {
            return Err(Error::Invalid(format!("step size must be positive, got {eta}")));
        }
        Ok(ChainConfig { eta, n_steps, seed })
    }

    /// Total simulated time `n eta`.
    pub fn horizon(&self) -> f64 {
        self.n_steps as f64 * self.eta
    }
}

/// One SGD step `x - eta grad f(x; k)`.
pub fn sgd_step(problem: &LossProblem, x: &DVector<f64>, k: usize, eta: f64) -> DVector<f64> {
    x - problem.grad(x, k) * eta
}

/// Scalar SGD step for 1D problems.
#[inline]
pub fn sgd_step1(problem: &LossProblem, x: f64, k: usize, eta: f64) -> f64 {
    x - eta * problem.grad1(x, k)
}

/// One SGA (Oja) step: normalize `w + eta xi_k (xi_k . w)`.
pub fn sga_step(model: &DataModel, w: &SpherePoint, k: usize, eta: f64) -> Result<SpherePoint> {
    let xi = model.atom(k);
    let moved = w.as_vector() + xi * (eta * xi.dot(w.as_vector()));
    SpherePoint::normalize(&moved)
}

/// SGD trajectory driven by an explicit atom sequence; `n_steps` is the
/// sequence length and the returned vector holds `x_0 ..= x_n`.
pub fn sgd_trajectory_with_atoms(
    problem: &LossProblem,
    eta: f64,
    x0: DVector<f64>,
    atoms: &[usize],
) -> Vec<DVector<f64>> {
    let mut states = Vec::with_capacity(atoms.len() + 1);
    states.push(x0);
    for &k in atoms {
        let next = sgd_step(problem, states.last().unwrap(), k, eta);
        states.push(next);
    }
    states
}

/// Seeded SGD trajectory; `stream` selects an independent atom stream under
/// the configured seed, so trajectories parallelize without shared state.
pub fn sgd_trajectory(
    problem: &LossProblem,
    config: &ChainConfig,
    x0: DVector<f64>,
    stream: u64,
) -> Vec<DVector<f64>> {
    let cdf = cumulative(problem.weights());
    let mut noise = NoiseStream::new(config.seed, stream);
    let atoms: Vec<usize> = (0..config.n_steps)
        .map(|_| noise.sample_index(&cdf))
        .collect();
    sgd_trajectory_with_atoms(problem, config.eta, x0, &atoms)
}

/// Seeded SGA trajectory on the sphere, states `w^0 ..= w^n`.
pub fn sga_trajectory(
    model: &DataModel,
    config: &ChainConfig,
    w0: SpherePoint,
    stream: u64,
) -> Result<Vec<SpherePoint>> {
    let cdf = cumulative(model.probs());
    let mut noise = NoiseStream::new(config.seed, stream);
    let mut states = Vec::with_capacity(config.n_steps + 1);
    states.push(w0);
    for _ in 0..config.n_steps {
        let k = noise.sample_index(&cdf);
        let next = sga_step(model, states.last().unwrap(), k, config.eta)?;
        states.push(next);
    }
    Ok(states)
}

/// Largest `|x_n|` along a scalar SGD chain, without storing the path.
/// Used by the mass-confinement suite over long horizons.
pub fn sgd_extreme_1d(
    problem: &LossProblem,
    config: &ChainConfig,
    x0: f64,
    stream: u64,
) -> f64 {
    let cdf = cumulative(problem.weights());
    let mut noise = NoiseStream::new(config.seed, stream);
    let mut x = x0;
    let mut extreme = x.abs();
    for _ in 0..config.n_steps {
        let k = noise.sample_index(&cdf);
        x = sgd_step1(problem, x, k, config.eta);
        extreme = extreme.max(x.abs());
    }
    extreme
}

/// Monte Carlo estimate of `u^n(x0) = E phi(x_n)` for the SGD chain:
/// sample mean over independent trajectories and its standard error.
pub fn monte_carlo_sgd(
    problem: &LossProblem,
    config: &ChainConfig,
    x0: &DVector<f64>,
    phi: &(dyn Fn(&DVector<f64>) -> f64 + Sync),
    n_samples: usize,
) -> (f64, f64) {
    let values: Vec<f64> = (0..n_samples as u64)
        .into_par_iter()
        .map(|j| {
            let cdf = cumulative(problem.weights());
            let mut noise = NoiseStream::new(config.seed, j);
            let mut x = x0.clone();
            for _ in 0..config.n_steps {
                let k = noise.sample_index(&cdf);
                x = sgd_step(problem, &x, k, config.eta);
            }
            phi(&x)
        })
        .collect();
    mean_and_stderr(&values)
}

/// Monte Carlo estimate of `u^n(w0) = E phi(w^n)` for the PCA chain.
pub fn monte_carlo_sga(
    model: &DataModel,
    config: &ChainConfig,
    w0: &SpherePoint,
    phi: &(dyn Fn(&SpherePoint) -> f64 + Sync),
    n_samples: usize,
) -> Result<(f64, f64)> {
    let values: Vec<f64> = (0..n_samples as u64)
        .into_par_iter()
        .map(|j| {
            let cdf = cumulative(model.probs());
            let mut noise = NoiseStream::new(config.seed, j);
            let mut w = w0.clone();
            for _ in 0..config.n_steps {
                let k = noise.sample_index(&cdf);
                w = sga_step(model, &w, k, config.eta)?;
            }
            Ok(phi(&w))
        })
        .collect::<Result<_>>()?;
    Ok(mean_and_stderr(&values))
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Exact grid realization of the SGD semigroup on an interval:
/// `(S u)(x_i) = sum_k w_k u(x_i - eta f'(x_i; k))`.
///
/// Every displaced point must stay inside the domain — a violation means the
/// domain is too small for this step size and is reported as a hard error.
#[derive(Debug, Clone)]
pub struct EuclideanSemigroup {
    problem: LossProblem,
    eta: f64,
}

impl EuclideanSemigroup {
    pub fn new(problem: LossProblem, eta: f64) -> Result<Self> {
        if problem.dim() != 1 {
            return Err(Error::Invalid("grid semigroups are one-dimensional".into()));
        }
        if !(eta >= 0.0) {
            return Err(Error::Invalid("step size must be nonnegative".into()));
        }
        Ok(EuclideanSemigroup { problem, eta })
    }

    pub fn apply(&self, u: &GridFunction) -> Result<GridFunction> {
        let grid = *u.grid();
        let GridDomain::Interval { lo, hi } = grid.domain() else {
            return Err(Error::Invalid("Euclidean semigroup needs an interval grid".into()));
        };
        let weights = self.problem.weights();
        let mut values = vec![0.0; grid.n_nodes()];
        for (i, value) in values.iter_mut().enumerate() {
            let x = grid.node(i);
            let mut acc = 0.0;
            for (k, &wk) in weights.iter().enumerate() {
                let y = x - self.eta * self.problem.grad1(x, k);
                if !grid.contains(y) {
                    return Err(Error::PointLeftDomain {
                        node: i,
                        point: y,
                        lo,
                        hi,
                    });
                }
                acc += wk * u.eval(y)?;
            }
            *value = acc;
        }
        GridFunction::new(grid, values)
    }

    /// `S^n u`.
    pub fn apply_n(&self, u: &GridFunction, n: usize) -> Result<GridFunction> {
        let mut cur = u.clone();
        for _ in 0..n {
            cur = self.apply(&cur)?;
        }
        Ok(cur)
    }
}

/// Exact grid realization of the PCA semigroup on the circle:
/// `(S u)(theta_i) = sum_k p_k u(angle(Q(w_i + eta xi_k xi_k^T w_i)))`.
#[derive(Debug, Clone)]
pub struct CircleSemigroup {
    model: DataModel,
    eta: f64,
}

impl CircleSemigroup {
    pub fn new(model: DataModel, eta: f64) -> Result<Self> {
        if model.dim() != 2 {
            return Err(Error::Invalid("circle semigroups need a planar data model".into()));
        }
        if !(eta >= 0.0) {
            return Err(Error::Invalid("step size must be nonnegative".into()));
        }
        Ok(CircleSemigroup { model, eta })
    }

    pub fn apply(&self, u: &GridFunction) -> Result<GridFunction> {
        let grid = *u.grid();
        if grid.domain() != GridDomain::Circle {
            return Err(Error::Invalid("circle semigroup needs a circle grid".into()));
        }
        let probs = self.model.probs();
        let mut values = vec![0.0; grid.n_nodes()];
        for (i, value) in values.iter_mut().enumerate() {
            let w = SpherePoint::from_angle(grid.node(i));
            let mut acc = 0.0;
            for (k, &pk) in probs.iter().enumerate() {
                let moved = sga_step(&self.model, &w, k, self.eta)?;
                acc += pk * u.eval(moved.angle())?;
            }
            *value = acc;
        }
        GridFunction::new(grid, values)
    }

    pub fn apply_n(&self, u: &GridFunction, n: usize) -> Result<GridFunction> {
        let mut cur = u.clone();
        for _ in 0..n {
            cur = self.apply(&cur)?;
        }
        Ok(cur)
    }
}

/// Result of one dual (density) step: the new density plus the total mass
/// that had to be clamped away from slightly negative interpolation values.
/// Positivity is a theorem, so a defect beyond tolerance must surface in
/// tests rather than be renormalized silently.
#[derive(Debug, Clone)]
pub struct PushforwardResult {
    pub density: DensityGrid,
    pub clamped_mass: f64,
}

/// One dual step on a signed grid function (no clamping):
/// `(S* rho)(y) = sum_k w_k rho(h_k(y)) / |1 - eta f''(h_k(y); k)|`
/// where `h_k` inverts `x -> x - eta f'(x; k)`.
///
/// Preconditions: 1D problem, `eta sup|f''| < 1` near the domain (checked
/// with closed-form bounds), so each step map is a diffeomorphism.
pub fn pushforward_signed(
    rho: &GridFunction,
    problem: &LossProblem,
    eta: f64,
) -> Result<GridFunction> {
    if problem.dim() != 1 {
        return Err(Error::Invalid("density pushforward is one-dimensional".into()));
    }
    let grid = *rho.grid();
    let GridDomain::Interval { lo, hi } = grid.domain() else {
        return Err(Error::Invalid("density pushforward needs an interval grid".into()));
    };
    let (grad_sup, hess_sup) = problem.derivative_bounds_1d(lo - 1.0, hi + 1.0);
    if eta * hess_sup >= 1.0 {
        return Err(Error::Precondition(format!(
            "eta sup|f''| = {:.3} >= 1: the step map may fold",
            eta * hess_sup
        )));
    }
    if eta * grad_sup > 1.0 {
        return Err(Error::Precondition(format!(
            "eta sup|f'| = {:.3} > 1: shrink eta or enlarge the domain",
            eta * grad_sup
        )));
    }
    let bracket = eta * grad_sup;
    let weights = problem.weights();
    let mut values = vec![0.0; grid.n_nodes()];
    for (i, value) in values.iter_mut().enumerate() {
        let y = grid.node(i);
        let mut acc = 0.0;
        for (k, &wk) in weights.iter().enumerate() {
            let x = invert_step_map(problem, k, eta, y, bracket)?;
            let jac = (1.0 - eta * problem.hess1(x, k)).abs();
            acc += wk * rho.eval_zero_extended(x) / jac;
        }
        *value = acc;
    }
    GridFunction::new(grid, values)
}

/// One dual step on a density; interpolation negatives are clamped to zero
/// and their mass reported.
pub fn pushforward_density_1d(
    rho: &DensityGrid,
    problem: &LossProblem,
    eta: f64,
) -> Result<PushforwardResult> {
    let mut pushed = pushforward_signed(rho.function(), problem, eta)?;
    let negative_part = GridFunction::new(
        *pushed.grid(),
        pushed.values().iter().map(|&v| (-v).max(0.0)).collect(),
    )?;
    let clamped_mass = negative_part.integral();
    for v in pushed.values_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(PushforwardResult {
        density: DensityGrid::new(pushed)?,
        clamped_mass,
    })
}

/// Solve `x - eta f'(x; k) = y` by Newton with a bisection safeguard on
/// `[y - r, y + r]`, `r = eta sup|f'|`. The map is strictly increasing under
/// the bijectivity precondition, so the bracket is valid.
fn invert_step_map(
    problem: &LossProblem,
    k: usize,
    eta: f64,
    y: f64,
    bracket_radius: f64,
) -> Result<f64> {
    let residual = |x: f64| x - eta * problem.grad1(x, k) - y;
    let tol = 1e-14 * (1.0 + y.abs());
    let (mut lo, mut hi) = (y - bracket_radius, y + bracket_radius);
    let mut x = y;
    for _ in 0..50 {
        let r = residual(x);
        if r.abs() <= tol {
            return Ok(x);
        }
        if r > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let slope = 1.0 - eta * problem.hess1(x, k);
        let newton = x - r / slope;
        x = if slope > 1e-12 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(Error::NewtonDiverged { y, atom: k })
}

/// Write a trajectory as CSV: `t,x0,x1,...` with one row per state.
pub fn write_trajectory_csv<W: std::io::Write>(
    mut out: W,
    eta: f64,
    states: &[DVector<f64>],
) -> std::io::Result<()> {
    let dim = states.first().map_or(0, |s| s.len());
    write!(out, "t")?;
    for j in 0..dim {
        write!(out, ",x{j}")?;
    }
    writeln!(out)?;
    for (n, s) in states.iter().enumerate() {
        write!(out, "{:.16e}", n as f64 * eta)?;
        for v in s.iter() {
            write!(out, ",{v:.16e}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::bump;
    use crate::grid::Grid1d;
    use crate::problems::planar_three_atom;
    use proptest::prelude::*;

    fn two_atom_quadratic() -> LossProblem {
        LossProblem::quadratic_sum_1d(&[1.0, -1.0], &[1.0, 1.0], &[0.5, 0.5]).unwrap()
    }

    fn scalar(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    #[test]
    fn sgd_step_examples() {
        // f = x^2/2: one step contracts by (1 - eta).
        let p = LossProblem::quadratic_sum_1d(&[0.0], &[1.0], &[1.0]).unwrap();
        let next = sgd_step(&p, &scalar(1.0), 0, 0.1);
        assert!((next[0] - 0.9).abs() < 1e-15);

        // Zero gradient: fixed point.
        let flat = LossProblem::quadratic_sum_1d(&[0.0], &[0.0], &[1.0]).unwrap();
        assert_eq!(sgd_step(&flat, &scalar(2.5), 0, 0.1)[0], 2.5);

        // One step from the origin toward atom a_1 = 1 with A = 1.
        let q = two_atom_quadratic();
        assert!((sgd_step(&q, &scalar(0.0), 0, 0.1)[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn sga_step_examples() {
        let e1 = SpherePoint::new(DVector::from_vec(vec![1.0, 0.0])).unwrap();

        // Eigendirection atom: fixed point.
        let m = DataModel::new(
            vec![DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![-1.0, 0.0])],
            vec![0.5, 0.5],
        )
        .unwrap();
        let next = sga_step(&m, &e1, 0, 0.3).unwrap();
        assert!((next.as_vector() - e1.as_vector()).norm() < 1e-15);

        // Orthogonal atom: no update.
        let m_orth = DataModel::new(
            vec![DVector::from_vec(vec![0.0, 1.0]), DVector::from_vec(vec![0.0, -1.0])],
            vec![0.5, 0.5],
        )
        .unwrap();
        let next = sga_step(&m_orth, &e1, 0, 0.3).unwrap();
        assert!((next.as_vector() - e1.as_vector()).norm() < 1e-15);

        // xi = (1,1), w = e1, eta = 0.1 -> normalize((1.1, 0.1)).
        let m_diag = DataModel::new(
            vec![DVector::from_vec(vec![1.0, 1.0]), DVector::from_vec(vec![-1.0, -1.0])],
            vec![0.5, 0.5],
        )
        .unwrap();
        let next = sga_step(&m_diag, &e1, 0, 0.1).unwrap();
        assert!((next.as_vector()[0] - 0.9958932064677040).abs() < 1e-15);
        assert!((next.as_vector()[1] - 0.0905357460425185).abs() < 1e-15);
    }

    #[test]
    fn trajectories_are_deterministic_and_start_at_x0() {
        let p = two_atom_quadratic();
        let config = ChainConfig::new(0.1, 0, 7).unwrap();
        let t = sgd_trajectory(&p, &config, scalar(0.4), 0);
        assert_eq!(t.len(), 1);
        assert_eq!(t[0][0], 0.4);

        let config = ChainConfig::new(0.1, 25, 7).unwrap();
        let a = sgd_trajectory(&p, &config, scalar(0.4), 3);
        let b = sgd_trajectory(&p, &config, scalar(0.4), 3);
        assert_eq!(a, b);
        let c = sgd_trajectory(&p, &config, scalar(0.4), 4);
        assert_ne!(a, c);
    }

    #[test]
    fn fixed_atom_sequence_matches_affine_recursion() {
        // x_{n+1} = (1 - eta A) x_n + eta A a_k is exactly iterable by hand.
        let p = two_atom_quadratic();
        let eta = 0.1;
        let atoms = [0usize, 1, 1, 0, 1];
        let traj = sgd_trajectory_with_atoms(&p, eta, scalar(0.3), &atoms);
        let mut x = 0.3;
        let centers = [1.0, -1.0];
        for (n, &k) in atoms.iter().enumerate() {
            x = (1.0 - eta) * x + eta * centers[k];
            assert!((traj[n + 1][0] - x).abs() < 1e-15);
        }
    }

    #[test]
    fn monte_carlo_trivial_cases() {
        let p = two_atom_quadratic();
        let config = ChainConfig::new(0.1, 0, 1).unwrap();
        let (mean, se) = monte_carlo_sgd(&p, &config, &scalar(0.8), &|x| x[0] * x[0], 500);
        assert!((mean - 0.64).abs() < 1e-12);
        assert!(se < 1e-12);

        let config = ChainConfig::new(0.1, 9, 1).unwrap();
        let (mean, se) = monte_carlo_sgd(&p, &config, &scalar(0.8), &|_| 1.0, 500);
        assert_eq!(mean, 1.0);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn monte_carlo_matches_exact_enumeration_for_two_steps() {
        let p = two_atom_quadratic();
        let eta = 0.1;
        let x0 = 0.5;
        let phi = |x: f64| (x - 0.2).powi(2);
        // Enumerate the four equally likely atom sequences.
        let mut exact = 0.0;
        for k1 in 0..2 {
            for k2 in 0..2 {
                let x1 = sgd_step1(&p, x0, k1, eta);
                let x2 = sgd_step1(&p, x1, k2, eta);
                exact += 0.25 * phi(x2);
            }
        }
        let config = ChainConfig::new(eta, 2, 99).unwrap();
        let (mean, se) = monte_carlo_sgd(&p, &config, &scalar(x0), &|x| phi(x[0]), 20_000);
        assert!(
            (mean - exact).abs() < 3.0 * se,
            "MC {mean} vs exact {exact} (se {se})"
        );
    }

    #[test]
    fn semigroup_preserves_constants_and_identity_at_zero_eta() {
        let p = two_atom_quadratic();
        let grid = Grid1d::interval(-5.0, 5.0, 64).unwrap();
        let u = GridFunction::constant(grid, 2.5);
        let s = EuclideanSemigroup::new(p, 0.1).unwrap();
        let su = s.apply(&u).unwrap();
        for &v in su.values() {
            assert!((v - 2.5).abs() < 1e-14);
        }

        // eta = 0 with one component: exact identity on a dyadic grid.
        let single = LossProblem::quadratic_sum_1d(&[0.5], &[1.0], &[1.0]).unwrap();
        let s0 = EuclideanSemigroup::new(single, 0.0).unwrap();
        let grid = Grid1d::interval(-4.0, 4.0, 64).unwrap();
        let u = GridFunction::sample(grid, |x| (x * 1.3).sin()).unwrap();
        let su = s0.apply(&u).unwrap();
        assert_eq!(su.values(), u.values());
    }

    #[test]
    fn semigroup_reports_escaping_nodes() {
        // Steep quadratic on a narrow domain: boundary nodes are displaced
        // outside.
        let p = LossProblem::quadratic_sum_1d(&[10.0], &[1.0], &[1.0]).unwrap();
        let grid = Grid1d::interval(-1.0, 1.0, 32).unwrap();
        let u = GridFunction::constant(grid, 1.0);
        let s = EuclideanSemigroup::new(p, 0.5).unwrap();
        assert!(matches!(
            s.apply(&u),
            Err(Error::PointLeftDomain { .. })
        ));
    }

    #[test]
    fn grid_semigroup_matches_monte_carlo_after_one_step() {
        let p = two_atom_quadratic();
        let eta = 0.1;
        let grid = Grid1d::interval(-5.0, 5.0, 256).unwrap();
        let u = GridFunction::sample(grid, |x| (-x * x / 2.0).exp()).unwrap();
        let s = EuclideanSemigroup::new(p.clone(), eta).unwrap();
        let su = s.apply(&u).unwrap();
        let config = ChainConfig::new(eta, 1, 5).unwrap();
        for i in [40usize, 128, 200] {
            let x = grid.node(i);
            let (mc, se) =
                monte_carlo_sgd(&p, &config, &scalar(x), &|y| (-y[0] * y[0] / 2.0).exp(), 40_000);
            assert!(
                (su.values()[i] - mc).abs() < 3.0 * se + 1e-6,
                "node {i}: grid {} vs MC {mc} (se {se})",
                su.values()[i]
            );
        }
    }

    #[test]
    fn circle_semigroup_matches_monte_carlo_after_one_step() {
        let m = planar_three_atom();
        let eta = 0.05;
        let grid = Grid1d::circle(512).unwrap();
        let u = GridFunction::sample(grid, |t| t.cos() + 0.3 * (2.0 * t).sin()).unwrap();
        let s = CircleSemigroup::new(m.clone(), eta).unwrap();
        let su = s.apply(&u).unwrap();
        let config = ChainConfig::new(eta, 1, 11).unwrap();
        let phi = |w: &SpherePoint| {
            let t = w.angle();
            t.cos() + 0.3 * (2.0 * t).sin()
        };
        for i in [0usize, 100, 333] {
            let w0 = SpherePoint::from_angle(grid.node(i));
            let (mc, se) = monte_carlo_sga(&m, &config, &w0, &phi, 30_000).unwrap();
            assert!(
                (su.values()[i] - mc).abs() < 3.0 * se + 1e-6,
                "node {i}: grid {} vs MC {mc}",
                su.values()[i]
            );
        }
    }

    #[test]
    fn sup_norm_contracts_on_grids() {
        let p = two_atom_quadratic();
        let grid = Grid1d::interval(-6.0, 6.0, 2048).unwrap();
        let mut stream = NoiseStream::new(31, 0);
        let s = EuclideanSemigroup::new(p, 0.1).unwrap();
        for _ in 0..5 {
            let mix = crate::fields::GaussianMix::random_1d(&mut stream, 4, 2.0, 0.4);
            let u = GridFunction::sample(grid, |x| {
                crate::fields::ScalarField::value(&mix, &scalar(x))
            })
            .unwrap();
            let su = s.apply(&u).unwrap();
            assert!(su.max_abs() <= u.max_abs() + 1e-9);
        }
    }

    #[test]
    fn finite_speed_of_support() {
        // Bounded gradients: after n steps, nodes farther than
        // n (eta C + 2h) + h from the initial support are exactly zero
        // (the 2h term is the interpolation stencil reach per application).
        let p = LossProblem::confining(
            1.0,
            vec![DVector::from_element(1, 0.1), DVector::from_element(1, -0.1)],
            vec![0.5, 0.5],
        )
        .unwrap();
        let c = p.confinement_constants(2.0).unwrap().gradient_bound;
        let grid = Grid1d::interval(-4.0, 4.0, 1024).unwrap();
        let h = grid.spacing();
        let phi = bump(0.0, 0.5);
        let mut u = GridFunction::sample(grid, phi).unwrap();
        let eta = 0.05;
        let s = EuclideanSemigroup::new(p, eta).unwrap();
        let n = 10;
        for _ in 0..n {
            u = s.apply(&u).unwrap();
        }
        let reach = 0.5 + n as f64 * (eta * c + 2.0 * h) + h;
        let mut checked = 0;
        for (i, &v) in u.values().iter().enumerate() {
            if grid.node(i).abs() > reach {
                assert_eq!(v, 0.0, "node {i} at {} leaked", grid.node(i));
                checked += 1;
            }
        }
        assert!(checked > 100, "test window too small");
    }

    #[test]
    fn pushforward_identity_when_gradient_vanishes() {
        let flat = LossProblem::quadratic_sum_1d(&[0.0], &[0.0], &[1.0]).unwrap();
        let grid = Grid1d::interval(-4.0, 4.0, 128).unwrap();
        let rho = DensityGrid::sample(grid, bump(0.0, 1.0)).unwrap();
        let pushed = pushforward_density_1d(&rho, &flat, 0.1).unwrap();
        assert_eq!(pushed.density.function().values(), rho.function().values());
        assert_eq!(pushed.clamped_mass, 0.0);
    }

    #[test]
    fn pushforward_of_uniform_under_linear_drift() {
        // f' = lambda x maps the plateau [c, d] to (1 - eta lambda)[c, d]
        // and rescales its height by 1/(1 - eta lambda).
        let lambda = 1.0;
        let eta = 0.2;
        let p = LossProblem::quadratic_sum_1d(&[0.0], &[lambda], &[1.0]).unwrap();
        let grid = Grid1d::interval(-4.0, 4.0, 2048).unwrap();
        let plateau = |x: f64| if x.abs() <= 1.0 { 0.5 } else { 0.0 };
        let rho = DensityGrid::sample(grid, plateau).unwrap();
        let pushed = pushforward_density_1d(&rho, &p, eta).unwrap();
        let scale = 1.0 - eta * lambda;
        let h = grid.spacing();
        for (i, &v) in pushed.density.function().values().iter().enumerate() {
            let y = grid.node(i);
            // Skip a few cells around the transported jumps.
            if (y.abs() - scale).abs() < 6.0 * h {
                continue;
            }
            let expected = if y.abs() < scale { 0.5 / scale } else { 0.0 };
            assert!(
                (v - expected).abs() < 1e-10,
                "node {i} at {y}: {v} vs {expected}"
            );
        }
    }

    #[test]
    fn pushforward_conserves_mass_and_positivity() {
        let p = two_atom_quadratic();
        let grid = Grid1d::interval(-6.0, 6.0, 4096).unwrap();
        let rho = DensityGrid::sample(grid, bump(0.3, 1.2)).unwrap();
        let before = rho.mass();
        let pushed = pushforward_density_1d(&rho, &p, 0.1).unwrap();
        assert!((pushed.density.mass() - before).abs() < 1e-8);
        assert!(pushed.clamped_mass <= 1e-9);
    }

    #[test]
    fn pushforward_is_l1_contraction_on_signed_input() {
        let p = two_atom_quadratic();
        let grid = Grid1d::interval(-6.0, 6.0, 2048).unwrap();
        let signed = GridFunction::sample(grid, |x| {
            let b = bump(0.0, 1.5);
            b(x) * (3.0 * x).sin()
        })
        .unwrap();
        let pushed = pushforward_signed(&signed, &p, 0.1).unwrap();
        let l1 = |f: &GridFunction| {
            GridFunction::new(*f.grid(), f.values().iter().map(|v| v.abs()).collect())
                .unwrap()
                .integral()
        };
        assert!(l1(&pushed) <= l1(&signed) + 1e-8);
    }

    #[test]
    fn pushforward_rejects_folding_steps() {
        let p = LossProblem::quadratic_sum_1d(&[0.0], &[2.0], &[1.0]).unwrap();
        let grid = Grid1d::interval(-2.0, 2.0, 64).unwrap();
        let rho = DensityGrid::sample(grid, bump(0.0, 0.5)).unwrap();
        // eta f'' = 1.2 >= 1.
        assert!(matches!(
            pushforward_density_1d(&rho, &p, 0.6),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn duality_of_semigroup_and_pushforward() {
        let p = two_atom_quadratic();
        let eta = 0.1;
        let grid = Grid1d::interval(-6.0, 6.0, 4096).unwrap();
        let u = GridFunction::sample(grid, |x| (-x * x / 3.0).exp() * (x * 0.7).cos()).unwrap();
        let rho = GridFunction::sample(grid, bump(-0.2, 1.3)).unwrap();
        let s = EuclideanSemigroup::new(p.clone(), eta).unwrap();
        let su = s.apply(&u).unwrap();
        let srho = pushforward_signed(&rho, &p, eta).unwrap();
        let lhs = su.inner_product(&rho).unwrap();
        let rhs = u.inner_product(&srho).unwrap();
        assert!((lhs - rhs).abs() < 1e-6, "duality gap {}", (lhs - rhs).abs());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn sga_steps_stay_on_the_sphere(theta in 0.0f64..std::f64::consts::TAU, k in 0usize..3, eta in 0.001f64..0.5) {
            let m = planar_three_atom();
            let w = SpherePoint::from_angle(theta);
            let next = sga_step(&m, &w, k, eta).unwrap();
            prop_assert!((next.as_vector().norm() - 1.0).abs() <= 1e-12);
        }
    }
}
