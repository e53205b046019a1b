//! Numerical laboratory for stochastic gradient descent and online PCA seen
//! through their Markov semigroups.
//!
//! The crate simulates two discrete chains — SGD in `R^d` and stochastic
//! gradient ascent (Oja's rule) on the unit sphere — together with the
//! continuous diffusions that approximate them weakly: an Ito SDE in `R^d`
//! and a Stratonovich SDE on the sphere. A deterministic backward-Kolmogorov
//! solver provides noise-free reference solutions so that the weak
//! approximation orders `O(eta)` and `O(eta^2)` can be measured as fitted
//! log-log slopes.
//!
//! Module map:
//!
//! * [`problems`] — stochastic loss families and finite-support data models,
//!   with closed-form derivatives.
//! * [`sphere`] — calculus on `S^{d-1}` via the degree-zero homogeneous
//!   extension: projection, spherical gradient/Hessian, Laplace–Beltrami,
//!   and the second-order expansion of `u((w + eta v)/|w + eta v|)`.
//! * [`grid`] — tabulated functions on 1D interval/circle grids with cubic
//!   interpolation; densities with trapezoidal mass.
//! * [`chains`] — the discrete chains, their grid semigroups, Monte Carlo
//!   expectation estimates, and the 1D dual (density pushforward) operator.
//! * [`sde`] — drift/diffusion specifications at correction order 1 and 2,
//!   Euler–Maruyama in `R^d`, Heun + renormalization on the sphere, and the
//!   infinitesimal generator.
//! * [`kolmogorov`] — Crank–Nicolson solver for `u_t = a u_x + c/2 u_xx` on
//!   an interval (Neumann) or the circle (periodic), with step-doubling
//!   self-checks.
//! * [`harness`] — weak-error experiments over an eta ladder, slope fits,
//!   Taylor-remainder studies, and the contraction/confinement suite.

pub mod chains;
pub mod fields;
pub mod grid;
pub mod harness;
pub mod kolmogorov;
pub mod linalg;
pub mod problems;
pub mod rng;
pub mod sde;
pub mod sphere;

mod error;

pub use error::Error;
pub type Result<T> = std::result::Result<T, Error>;

pub use chains::{ChainConfig, CircleSemigroup, EuclideanSemigroup, PushforwardResult};
pub use fields::ScalarField;
pub use grid::{DensityGrid, Grid1d, GridDomain, GridFunction};
pub use harness::{ExperimentPlan, SlopeFit, WeakErrorReport};
pub use kolmogorov::{BackwardSolution, ParabolicProblem};
pub use problems::{ConfinementConstants, DataModel, LossProblem, Support};
pub use sde::{ApproxOrder, DriftDiffusionSpec, NoiseModel, SdePath, Space};
pub use sphere::SpherePoint;
