//! Deterministic backward-Kolmogorov oracle.
//!
//! Solves `u_t = a(x) u_x + c(x)/2 u_xx` with `u(., 0) = phi` by
//! Crank–Nicolson time stepping over second-order central differences, on a
//! truncated interval with homogeneous Neumann boundaries or on the circle
//! (periodic, cyclic tridiagonal solves). Every solve runs twice, at `n` and
//! `2n` time steps; the sup-norm gap is the self-check that certifies the
//! oracle before it is trusted in weak-error measurements. The gap must pass
//! [`SELF_CHECK_TOL`], and the finer solution is returned.
//!
//! Coefficients and data enter as closures so the same problem can be
//! discretized consistently at several resolutions (the weak-error harness
//! solves each problem at two resolutions and Richardson-estimates the
//! remaining oracle error).

use std::sync::Arc;

use nalgebra::DVector;

use crate::fields::CircleField;
use crate::grid::{Grid1d, GridDomain, GridFunction};
use crate::sde::{DriftDiffusionSpec, Space};
use crate::sphere::SpherePoint;
use crate::{Error, Result};

/// Step-doubling self-check threshold: `|u_n - u_2n|_inf` must not exceed it.
pub const SELF_CHECK_TOL: f64 = 1e-7;

/// Collocation tolerance for the circle reduction of a sphere generator.
pub const COLLOCATION_TOL: f64 = 1e-6;
const COLLOCATION_POINTS: usize = 64;

type Coefficient = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Spatial shape of a parabolic problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParabolicDomain {
    Interval { lo: f64, hi: f64 },
    Circle,
}

/// `u_t = a u_x + c/2 u_xx`, initial data `phi`, horizon `T`, in coefficient
/// form.
pub struct ParabolicProblem {
    domain: ParabolicDomain,
    drift: Coefficient,
    diffusion: Coefficient,
    initial: Coefficient,
    horizon: f64,
}

impl ParabolicProblem {
    pub fn interval(
        lo: f64,
        hi: f64,
        drift: Coefficient,
        diffusion: Coefficient,
        initial: Coefficient,
        horizon: f64,
    ) -> Result<Self> {
        if !(lo < hi) || !(horizon >= 0.0) {
            return Err(Error::Invalid("need lo < hi and a nonnegative horizon".into()));
        }
        Ok(ParabolicProblem {
            domain: ParabolicDomain::Interval { lo, hi },
            drift,
            diffusion,
            initial,
            horizon,
        })
    }

    pub fn circle(
        drift: Coefficient,
        diffusion: Coefficient,
        initial: Coefficient,
        horizon: f64,
    ) -> Result<Self> {
        if !(horizon >= 0.0) {
            return Err(Error::Invalid("need a nonnegative horizon".into()));
        }
        Ok(ParabolicProblem {
            domain: ParabolicDomain::Circle,
            drift,
            diffusion,
            initial,
            horizon,
        })
    }

    pub fn domain(&self) -> ParabolicDomain {
        self.domain
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn drift_at(&self, x: f64) -> f64 {
        (self.drift)(x)
    }

    pub fn diffusion_at(&self, x: f64) -> f64 {
        (self.diffusion)(x)
    }

    pub fn initial_at(&self, x: f64) -> f64 {
        (self.initial)(x)
    }
}

/// Result of a backward solve: `u(., T)` plus the step-doubling self-check
/// value that certified it.
#[derive(Debug, Clone)]
pub struct BackwardSolution {
    pub solution: GridFunction,
    pub self_check: f64,
}

/// Angle coefficients of the generator of a sphere spec on `S^1`.
///
/// For `u(x) = g(theta)` the generator collapses to
/// `a(theta) g' + c(theta)/2 g''` with
/// `a = (Pb + Pb1) . t - (t . sigma sigma^T w)/2` and
/// `c = t . sigma sigma^T t`. Construction verifies this identity against
/// the assembled generator on 64 collocation angles and two independent
/// test fields, to [`COLLOCATION_TOL`]; a mismatch means the reduction (or a
/// spherical operator) is wrong and construction fails.
pub fn reduce_to_circle(
    spec: Arc<DriftDiffusionSpec>,
    initial: Coefficient,
    horizon: f64,
) -> Result<ParabolicProblem> {
    if spec.space() != Space::Sphere || spec.dim() != 2 {
        return Err(Error::Invalid("circle reduction needs a planar sphere spec".into()));
    }

    let drift_spec = Arc::clone(&spec);
    let drift = Arc::new(move |theta: f64| {
        let w = SpherePoint::from_angle(theta);
        let tangent = DVector::from_vec(vec![-theta.sin(), theta.cos()]);
        let sigma = drift_spec.diffusion_factor(w.as_vector());
        let diff = &sigma * sigma.transpose();
        let advect = drift_spec.drift(w.as_vector()) + drift_spec.ito_correction(&w);
        advect.dot(&tangent) - 0.5 * tangent.dot(&(&diff * w.as_vector()))
    });

    let diff_spec = Arc::clone(&spec);
    let diffusion = Arc::new(move |theta: f64| {
        let w = SpherePoint::from_angle(theta);
        let tangent = DVector::from_vec(vec![-theta.sin(), theta.cos()]);
        let sigma = diff_spec.diffusion_factor(w.as_vector());
        let diff = &sigma * sigma.transpose();
        tangent.dot(&(&diff * &tangent))
    });

    // Collocation check against the assembled spherical generator.
    let probes = [
        CircleField::fourier(vec![0.0], vec![1.0]),
        CircleField::fourier(vec![0.0, 1.0], vec![0.3, 0.0]),
    ];
    for i in 0..COLLOCATION_POINTS {
        let theta = std::f64::consts::TAU * (i as f64 + 0.5) / COLLOCATION_POINTS as f64;
        let w = SpherePoint::from_angle(theta);
        for u in &probes {
            let reduced = drift(theta) * u.angle_d1(theta)
                + 0.5 * diffusion(theta) * u.angle_d2(theta);
            let full = spec.generator(u, w.as_vector())?;
            let residual = (reduced - full).abs();
            if residual > COLLOCATION_TOL {
                return Err(Error::CollocationMismatch { residual, theta });
            }
        }
    }

    ParabolicProblem::circle(drift, diffusion, initial, horizon)
}

/// Coefficient form of a 1D Euclidean spec on a truncated interval:
/// `a = b`, `c = eta Sigma = (diffusion factor)^2`.
pub fn euclidean_parabolic(
    spec: Arc<DriftDiffusionSpec>,
    lo: f64,
    hi: f64,
    initial: Coefficient,
    horizon: f64,
) -> Result<ParabolicProblem> {
    if spec.space() != Space::Euclidean || spec.dim() != 1 {
        return Err(Error::Invalid("interval problems need a 1D Euclidean spec".into()));
    }
    let drift_spec = Arc::clone(&spec);
    let drift = Arc::new(move |x: f64| drift_spec.drift(&DVector::from_element(1, x))[0]);
    let diffusion = Arc::new(move |x: f64| {
        let s = spec.diffusion_factor(&DVector::from_element(1, x))[(0, 0)];
        s * s
    });
    ParabolicProblem::interval(lo, hi, drift, diffusion, initial, horizon)
}

/// Crank–Nicolson solve with `m_nodes` cells and `n_time_steps` steps,
/// self-checked by step doubling. Returns the doubled-step solution.
pub fn solve_backward(
    problem: &ParabolicProblem,
    m_nodes: usize,
    n_time_steps: usize,
) -> Result<BackwardSolution> {
    if n_time_steps == 0 {
        return Err(Error::Invalid("need at least one time step".into()));
    }
    let grid = match problem.domain {
        ParabolicDomain::Interval { lo, hi } => Grid1d::interval(lo, hi, m_nodes)?,
        ParabolicDomain::Circle => Grid1d::circle(m_nodes)?,
    };
    let n = grid.n_nodes();
    let mut drift = vec![0.0; n];
    let mut diffusion = vec![0.0; n];
    for (i, x) in grid.nodes().enumerate() {
        drift[i] = problem.drift_at(x);
        diffusion[i] = problem.diffusion_at(x);
        if diffusion[i] < 0.0 {
            return Err(Error::Invalid(format!(
                "negative diffusion coefficient {} at x = {x}",
                diffusion[i]
            )));
        }
    }
    let phi = GridFunction::sample(grid, |x| problem.initial_at(x))?;

    let coarse = cn_evolve(&phi, &drift, &diffusion, problem.horizon, n_time_steps)?;
    let fine = cn_evolve(&phi, &drift, &diffusion, problem.horizon, 2 * n_time_steps)?;
    let self_check = coarse
        .values()
        .iter()
        .zip(fine.values())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if self_check > SELF_CHECK_TOL {
        return Err(Error::RefinementCheck {
            defect: self_check,
            tolerance: SELF_CHECK_TOL,
        });
    }
    Ok(BackwardSolution {
        solution: fine,
        self_check,
    })
}

/// Default time-step count so that `dt <= dx`.
pub fn default_time_steps(domain: ParabolicDomain, m_nodes: usize, horizon: f64) -> usize {
    let dx = match domain {
        ParabolicDomain::Interval { lo, hi } => (hi - lo) / m_nodes as f64,
        ParabolicDomain::Circle => std::f64::consts::TAU / m_nodes as f64,
    };
    ((horizon / dx).ceil() as usize).max(1)
}

/// Like [`solve_backward`], but doubles the time-step count until the
/// self-check passes (up to `max_doublings`). `dt <= dx` is a starting
/// point, not a guarantee of oracle quality; the self-check is.
pub fn solve_backward_adaptive(
    problem: &ParabolicProblem,
    m_nodes: usize,
    initial_steps: usize,
    max_doublings: usize,
) -> Result<BackwardSolution> {
    let mut steps = initial_steps.max(1);
    let mut last_err = None;
    for _ in 0..=max_doublings {
        match solve_backward(problem, m_nodes, steps) {
            Ok(sol) => return Ok(sol),
            Err(Error::RefinementCheck { defect, tolerance }) => {
                last_err = Some(Error::RefinementCheck { defect, tolerance });
                steps *= 2;
            }
            Err(e) => return Err(e),
        }
    }
    Err(last_err.unwrap_or_else(|| Error::Invalid("adaptive solve failed".into())))
}

/// Step-doubling gap `|u_n - u_2n|_inf` without the pass/fail gate; a
/// diagnostic for convergence-order studies.
pub fn refinement_gap(
    problem: &ParabolicProblem,
    m_nodes: usize,
    n_time_steps: usize,
) -> Result<f64> {
    let grid = match problem.domain {
        ParabolicDomain::Interval { lo, hi } => Grid1d::interval(lo, hi, m_nodes)?,
        ParabolicDomain::Circle => Grid1d::circle(m_nodes)?,
    };
    let n = grid.n_nodes();
    let mut drift = vec![0.0; n];
    let mut diffusion = vec![0.0; n];
    for (i, x) in grid.nodes().enumerate() {
        drift[i] = problem.drift_at(x);
        diffusion[i] = problem.diffusion_at(x);
    }
    let phi = GridFunction::sample(grid, |x| problem.initial_at(x))?;
    let coarse = cn_evolve(&phi, &drift, &diffusion, problem.horizon, n_time_steps)?;
    let fine = cn_evolve(&phi, &drift, &diffusion, problem.horizon, 2 * n_time_steps)?;
    Ok(coarse
        .values()
        .iter()
        .zip(fine.values())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
}

fn cn_evolve(
    phi: &GridFunction,
    drift: &[f64],
    diffusion: &[f64],
    horizon: f64,
    n_steps: usize,
) -> Result<GridFunction> {
    let grid = *phi.grid();
    let h = grid.spacing();
    let dt = horizon / n_steps as f64;
    let n = grid.n_nodes();

    // Rows of the generator L: lower, diag, upper (wraparound on circles).
    let mut lower = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    let periodic = grid.domain() == GridDomain::Circle;
    for i in 0..n {
        let adv = drift[i] / (2.0 * h);
        let dif = diffusion[i] / (2.0 * h * h);
        lower[i] = dif - adv;
        diag[i] = -2.0 * dif;
        upper[i] = dif + adv;
    }
    if !periodic {
        // Homogeneous Neumann via ghost nodes: u_{-1} = u_1, u_{M+1} = u_{M-1}.
        lower[0] = 0.0;
        upper[0] = diffusion[0] / (h * h);
        diag[0] = -upper[0];
        upper[n - 1] = 0.0;
        lower[n - 1] = diffusion[n - 1] / (h * h);
        diag[n - 1] = -lower[n - 1];
    }

    // Implicit matrix I - dt/2 L.
    let half = 0.5 * dt;
    let il: Vec<f64> = lower.iter().map(|v| -half * v).collect();
    let id: Vec<f64> = diag.iter().map(|v| 1.0 - half * v).collect();
    let iu: Vec<f64> = upper.iter().map(|v| -half * v).collect();

    let mut u = phi.values().to_vec();
    let mut rhs = vec![0.0; n];
    let mut solver = if periodic {
        TriSolver::cyclic(il, id, iu, n)
    } else {
        TriSolver::plain(il, id, iu, n)
    };

    for _ in 0..n_steps {
        // rhs = (I + dt/2 L) u.
        for i in 0..n {
            let prev = if i == 0 {
                if periodic {
                    u[n - 1]
                } else {
                    0.0
                }
            } else {
                u[i - 1]
            };
            let next = if i == n - 1 {
                if periodic {
                    u[0]
                } else {
                    0.0
                }
            } else {
                u[i + 1]
            };
            rhs[i] = u[i] + half * (lower[i] * prev + diag[i] * u[i] + upper[i] * next);
        }
        solver.solve(&rhs, &mut u)?;
    }
    GridFunction::new(grid, u)
}

/// Tridiagonal (Thomas) solver, with a Sherman–Morrison wrapper for the
/// cyclic case. Factorization inputs are reused across time steps.
struct TriSolver {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
    cyclic: Option<CyclicParts>,
    scratch_c: Vec<f64>,
    scratch_d: Vec<f64>,
}

/// Rank-one pieces of the cyclic splitting `A = A_tri + u v^T` with
/// `u = (gamma, 0, .., 0, alpha)`, `v = (1, 0, .., 0, beta/gamma)`.
struct CyclicParts {
    z: Vec<f64>,
    v_last: f64,
    denom: f64,
}

fn thomas(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    c: &mut [f64],
    d: &mut [f64],
    rhs: &[f64],
    out: &mut [f64],
) -> Result<()> {
    let n = rhs.len();
    let mut beta = diag[0];
    if beta.abs() < 1e-300 {
        return Err(Error::Invalid("singular tridiagonal system".into()));
    }
    c[0] = upper[0] / beta;
    d[0] = rhs[0] / beta;
    for i in 1..n {
        beta = diag[i] - lower[i] * c[i - 1];
        if beta.abs() < 1e-300 {
            return Err(Error::Invalid("singular tridiagonal system".into()));
        }
        c[i] = upper[i] / beta;
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / beta;
    }
    out[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        out[i] = d[i] - c[i] * out[i + 1];
    }
    Ok(())
}

impl TriSolver {
    fn plain(lower: Vec<f64>, diag: Vec<f64>, upper: Vec<f64>, n: usize) -> Self {
        TriSolver {
            lower,
            diag,
            upper,
            cyclic: None,
            scratch_c: vec![0.0; n],
            scratch_d: vec![0.0; n],
        }
    }

    fn cyclic(lower: Vec<f64>, mut diag: Vec<f64>, upper: Vec<f64>, n: usize) -> Self {
        let corner_low = lower[0]; // A[0][n-1]
        let corner_up = upper[n - 1]; // A[n-1][0]
        let gamma = -diag[0];
        diag[0] -= gamma;
        diag[n - 1] -= corner_up * corner_low / gamma;
        let mut solver = TriSolver {
            lower,
            diag,
            upper,
            cyclic: None,
            scratch_c: vec![0.0; n],
            scratch_d: vec![0.0; n],
        };
        let mut rhs = vec![0.0; n];
        rhs[0] = gamma;
        rhs[n - 1] = corner_up;
        let mut z = vec![0.0; n];
        thomas(
            &solver.lower,
            &solver.diag,
            &solver.upper,
            &mut solver.scratch_c,
            &mut solver.scratch_d,
            &rhs,
            &mut z,
        )
        .expect("cyclic preconditioner is nonsingular");
        let v_last = corner_low / gamma;
        let denom = 1.0 + z[0] + v_last * z[n - 1];
        solver.cyclic = Some(CyclicParts { z, v_last, denom });
        solver
    }

    fn solve(&mut self, rhs: &[f64], out: &mut [f64]) -> Result<()> {
        thomas(
            &self.lower,
            &self.diag,
            &self.upper,
            &mut self.scratch_c,
            &mut self.scratch_d,
            rhs,
            out,
        )?;
        if let Some(parts) = &self.cyclic {
            let n = rhs.len();
            let factor = (out[0] + parts.v_last * out[n - 1]) / parts.denom;
            for (o, z) in out.iter_mut().zip(&parts.z) {
                *o -= factor * z;
            }
        }
        Ok(())
    }
}
