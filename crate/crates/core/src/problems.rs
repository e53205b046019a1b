//! Stochastic loss families and data distributions.
//!
//! Everything here is finite-support with closed-form derivatives: the
//! discrete expectation operators downstream are then exactly computable,
//! and derivative accuracy is machine precision rather than AD or FD.
//!
//! Three Euclidean families ship:
//!
//! * quadratic sums `f_k(x) = (x - a_k)^T A_k (x - a_k)/2 + g_k . x`,
//! * a 1D double-well sum `f_k(x) = (x^2 - 1)^2/4 + b_k x`,
//! * a confining family `f_k(x) = B sqrt(1 + |x|^2) + c_k . x`, whose
//!   radial derivative exceeds a computable `delta > 0` outside any radius,
//!   with globally bounded gradients.
//!
//! All built-ins are smooth with every derivative bounded on bounded sets,
//! so the regularity hypotheses of the approximation theorems hold by
//! construction; this is documented rather than asserted at runtime.

use nalgebra::{DMatrix, DVector};

use crate::fields::HomogeneousQuadratic;
use crate::{Error, Result};

const WEIGHT_TOL: f64 = 1e-12;

/// Component support of a stochastic loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Support {
    Finite(usize),
    Continuous,
}

/// A stochastic loss family `f(x; k)` over finitely many components.
#[derive(Debug, Clone)]
pub struct LossProblem {
    dim: usize,
    weights: Vec<f64>,
    family: LossFamily,
}

#[derive(Debug, Clone)]
enum LossFamily {
    QuadraticSum {
        centers: Vec<DVector<f64>>,
        curvatures: Vec<DMatrix<f64>>,
        linears: Vec<DVector<f64>>,
    },
    DoubleWell1d {
        tilts: Vec<f64>,
    },
    Confining {
        gradient_scale: f64,
        tilts: Vec<DVector<f64>>,
    },
}

/// Closed-form constants (R, delta, C) for the confining family, feeding the
/// mass-confinement bound `|x_n| <= R + C eta` valid for `eta < 2 delta R / C^2`.
#[derive(Debug, Clone, Copy)]
pub struct ConfinementConstants {
    pub radius: f64,
    pub inward_rate: f64,
    pub gradient_bound: f64,
}

impl ConfinementConstants {
    pub fn eta_threshold(&self) -> f64 {
        2.0 * self.inward_rate * self.radius / (self.gradient_bound * self.gradient_bound)
    }

    pub fn confinement_radius(&self, eta: f64) -> f64 {
        self.radius + self.gradient_bound * eta
    }
}

fn validate_weights(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::Invalid("need at least one component".into()));
    }
    if weights.iter().any(|&w| w < 0.0) {
        return Err(Error::Invalid("component weights must be nonnegative".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > WEIGHT_TOL {
        return Err(Error::Invalid(format!(
            "component weights sum to {total}, expected 1"
        )));
    }
    Ok(())
}

impl LossProblem {
    /// Finite sum of (possibly tilted) quadratics.
    pub fn quadratic_sum(
        centers: Vec<DVector<f64>>,
        curvatures: Vec<DMatrix<f64>>,
        linears: Vec<DVector<f64>>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        validate_weights(&weights)?;
        let n = weights.len();
        if centers.len() != n || curvatures.len() != n || linears.len() != n {
            return Err(Error::Invalid("component arrays must share one length".into()));
        }
        let dim = centers[0].len();
        for (a, (m, g)) in centers.iter().zip(curvatures.iter().zip(&linears)) {
            if a.len() != dim || g.len() != dim || m.nrows() != dim || m.ncols() != dim {
                return Err(Error::Invalid("inconsistent component dimensions".into()));
            }
            if crate::linalg::asymmetry(m) > 1e-12 {
                return Err(Error::Invalid("curvature matrices must be symmetric".into()));
            }
        }
        Ok(LossProblem {
            dim,
            weights,
            family: LossFamily::QuadraticSum {
                centers,
                curvatures,
                linears,
            },
        })
    }

    /// Convenience constructor: 1D quadratics `A_k (x - a_k)^2 / 2`.
    pub fn quadratic_sum_1d(centers: &[f64], curvatures: &[f64], weights: &[f64]) -> Result<Self> {
        let c = centers
            .iter()
            .map(|&a| DVector::from_element(1, a))
            .collect();
        let m = curvatures
            .iter()
            .map(|&a| DMatrix::from_element(1, 1, a))
            .collect();
        let g = vec![DVector::zeros(1); centers.len()];
        Self::quadratic_sum(c, m, g, weights.to_vec())
    }

    /// 1D double-well sum `(x^2-1)^2/4 + b_k x`.
    pub fn double_well_1d(tilts: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        validate_weights(&weights)?;
        if tilts.len() != weights.len() {
            return Err(Error::Invalid("tilts and weights must share one length".into()));
        }
        Ok(LossProblem {
            dim: 1,
            weights,
            family: LossFamily::DoubleWell1d { tilts },
        })
    }

    /// Confining family `B sqrt(1+|x|^2) + c_k . x`. Gradients are globally
    /// bounded by `B + max|c_k|` and point outward past any radius where
    /// `B R / sqrt(1+R^2) > max|c_k|`.
    pub fn confining(gradient_scale: f64, tilts: Vec<DVector<f64>>, weights: Vec<f64>) -> Result<Self> {
        validate_weights(&weights)?;
        if tilts.len() != weights.len() {
            return Err(Error::Invalid("tilts and weights must share one length".into()));
        }
        if gradient_scale <= 0.0 {
            return Err(Error::Invalid("gradient scale must be positive".into()));
        }
        let dim = tilts[0].len();
        if tilts.iter().any(|t| t.len() != dim) {
            return Err(Error::Invalid("inconsistent tilt dimensions".into()));
        }
        Ok(LossProblem {
            dim,
            weights,
            family: LossFamily::Confining {
                gradient_scale,
                tilts,
            },
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn support(&self) -> Support {
        Support::Finite(self.weights.len())
    }

    pub fn component_count(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `f(x; k)`.
    pub fn eval(&self, x: &DVector<f64>, k: usize) -> f64 {
        match &self.family {
            LossFamily::QuadraticSum {
                centers,
                curvatures,
                linears,
            } => {
                let d = x - &centers[k];
                0.5 * d.dot(&(&curvatures[k] * &d)) + linears[k].dot(x)
            }
            LossFamily::DoubleWell1d { tilts } => {
                let t = x[0] * x[0] - 1.0;
                0.25 * t * t + tilts[k] * x[0]
            }
            LossFamily::Confining {
                gradient_scale,
                tilts,
            } => gradient_scale * (1.0 + x.norm_squared()).sqrt() + tilts[k].dot(x),
        }
    }

    /// `grad f(x; k)`.
    pub fn grad(&self, x: &DVector<f64>, k: usize) -> DVector<f64> {
        match &self.family {
            LossFamily::QuadraticSum {
                centers,
                curvatures,
                linears,
            } => &curvatures[k] * (x - &centers[k]) + &linears[k],
            LossFamily::DoubleWell1d { tilts } => {
                DVector::from_element(1, x[0] * x[0] * x[0] - x[0] + tilts[k])
            }
            LossFamily::Confining {
                gradient_scale,
                tilts,
            } => {
                let r = (1.0 + x.norm_squared()).sqrt();
                x * (gradient_scale / r) + &tilts[k]
            }
        }
    }

    /// `hess f(x; k)`.
    pub fn hess(&self, x: &DVector<f64>, k: usize) -> DMatrix<f64> {
        match &self.family {
            LossFamily::QuadraticSum { curvatures, .. } => curvatures[k].clone(),
            LossFamily::DoubleWell1d { .. } => {
                DMatrix::from_element(1, 1, 3.0 * x[0] * x[0] - 1.0)
            }
            LossFamily::Confining { gradient_scale, .. } => {
                let r2 = 1.0 + x.norm_squared();
                let r = r2.sqrt();
                let mut h = DMatrix::identity(self.dim, self.dim) * (gradient_scale / r);
                h -= x * x.transpose() * (gradient_scale / (r2 * r));
                h
            }
        }
    }

    fn require_finite(&self) -> Result<usize> {
        match self.support() {
            Support::Finite(n) => Ok(n),
            Support::Continuous => Err(Error::ContinuousSupport),
        }
    }

    /// `f(x) = sum_k w_k f(x; k)`.
    pub fn mean_loss(&self, x: &DVector<f64>) -> Result<f64> {
        let n = self.require_finite()?;
        Ok((0..n).map(|k| self.weights[k] * self.eval(x, k)).sum())
    }

    pub fn mean_grad(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.require_finite()?;
        let mut g = DVector::zeros(self.dim);
        for k in 0..n {
            g += self.grad(x, k) * self.weights[k];
        }
        Ok(g)
    }

    pub fn mean_hess(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = self.require_finite()?;
        let mut h = DMatrix::zeros(self.dim, self.dim);
        for k in 0..n {
            h += self.hess(x, k) * self.weights[k];
        }
        Ok(h)
    }

    /// `var(grad f(x; xi)) = sum_k w_k (g - g_k)(g - g_k)^T`; symmetric PSD.
    pub fn gradient_noise_covariance(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = self.require_finite()?;
        let mean = self.mean_grad(x)?;
        let mut cov = DMatrix::zeros(self.dim, self.dim);
        for k in 0..n {
            let d = &mean - self.grad(x, k);
            cov += &d * d.transpose() * self.weights[k];
        }
        Ok(cov)
    }

    // ---- scalar fast path (d = 1) --------------------------------------

    /// `f'(x; k)` for 1D problems; avoids vector allocation in hot loops.
    #[inline]
    pub fn grad1(&self, x: f64, k: usize) -> f64 {
        debug_assert_eq!(self.dim, 1);
        match &self.family {
            LossFamily::QuadraticSum {
                centers,
                curvatures,
                linears,
            } => curvatures[k][(0, 0)] * (x - centers[k][0]) + linears[k][0],
            LossFamily::DoubleWell1d { tilts } => x * x * x - x + tilts[k],
            LossFamily::Confining {
                gradient_scale,
                tilts,
            } => gradient_scale * x / (1.0 + x * x).sqrt() + tilts[k][0],
        }
    }

    /// `f''(x; k)` for 1D problems.
    #[inline]
    pub fn hess1(&self, x: f64, k: usize) -> f64 {
        debug_assert_eq!(self.dim, 1);
        match &self.family {
            LossFamily::QuadraticSum { curvatures, .. } => curvatures[k][(0, 0)],
            LossFamily::DoubleWell1d { .. } => 3.0 * x * x - 1.0,
            LossFamily::Confining { gradient_scale, .. } => {
                gradient_scale / (1.0 + x * x).powf(1.5)
            }
        }
    }

    #[inline]
    pub fn mean_grad1(&self, x: f64) -> f64 {
        (0..self.weights.len())
            .map(|k| self.weights[k] * self.grad1(x, k))
            .sum()
    }

    #[inline]
    pub fn mean_hess1(&self, x: f64) -> f64 {
        (0..self.weights.len())
            .map(|k| self.weights[k] * self.hess1(x, k))
            .sum()
    }

    /// Scalar gradient-noise variance at `x` (d = 1).
    #[inline]
    pub fn noise_variance1(&self, x: f64) -> f64 {
        let mean = self.mean_grad1(x);
        (0..self.weights.len())
            .map(|k| {
                let d = mean - self.grad1(x, k);
                self.weights[k] * d * d
            })
            .sum()
    }

    /// Suprema of `|f'|` and `|f''|` over all components on `[lo, hi]`,
    /// evaluated in closed form per family (1D only). Feeds the bijectivity
    /// precondition and Newton bracket of the density pushforward.
    pub fn derivative_bounds_1d(&self, lo: f64, hi: f64) -> (f64, f64) {
        assert_eq!(self.dim, 1, "derivative bounds are a 1D facility");
        assert!(lo < hi);
        match &self.family {
            LossFamily::QuadraticSum { .. } => {
                let n = self.weights.len();
                let mut g = 0.0f64;
                let mut h = 0.0f64;
                for k in 0..n {
                    g = g.max(self.grad1(lo, k).abs()).max(self.grad1(hi, k).abs());
                    h = h.max(self.hess1(lo, k).abs());
                }
                (g, h)
            }
            LossFamily::DoubleWell1d { tilts } => {
                // f' = x^3 - x + b has interior extrema at x = +-1/sqrt(3);
                // f'' = 3x^2 - 1 peaks at the endpoints and dips to -1 at 0.
                let stat = 1.0 / 3.0f64.sqrt();
                let mut g = 0.0f64;
                for (k, _) in tilts.iter().enumerate() {
                    for x in [lo, hi, -stat, stat] {
                        if x >= lo && x <= hi {
                            g = g.max(self.grad1(x, k).abs());
                        }
                    }
                }
                let mut h = (3.0 * lo * lo - 1.0).abs().max((3.0 * hi * hi - 1.0).abs());
                if lo <= 0.0 && hi >= 0.0 {
                    h = h.max(1.0);
                }
                (g, h)
            }
            LossFamily::Confining {
                gradient_scale,
                tilts,
            } => {
                let tilt = tilts.iter().fold(0.0f64, |m, t| m.max(t[0].abs()));
                // |f'| <= B + |c|; f'' = B (1+x^2)^{-3/2} peaks nearest 0.
                let xmin = if lo <= 0.0 && hi >= 0.0 {
                    0.0
                } else {
                    lo.abs().min(hi.abs())
                };
                (
                    gradient_scale + tilt,
                    gradient_scale / (1.0 + xmin * xmin).powf(1.5),
                )
            }
        }
    }

    /// For the confining family: the inward rate `delta` and gradient bound
    /// `C` valid outside `radius`. `None` for other families.
    pub fn confinement_constants(&self, radius: f64) -> Option<ConfinementConstants> {
        match &self.family {
            LossFamily::Confining {
                gradient_scale,
                tilts,
            } => {
                let tilt = tilts.iter().fold(0.0f64, |m, t| m.max(t.norm()));
                let inward = gradient_scale * radius / (1.0 + radius * radius).sqrt() - tilt;
                if inward <= 0.0 {
                    return None;
                }
                Some(ConfinementConstants {
                    radius,
                    inward_rate: inward,
                    gradient_bound: gradient_scale + tilt,
                })
            }
            _ => None,
        }
    }
}

/// Finite-support distribution of data vectors for the PCA chain, with its
/// covariance and the bound `C = max |xi_k|`.
#[derive(Debug, Clone)]
pub struct DataModel {
    dim: usize,
    atoms: Vec<DVector<f64>>,
    probs: Vec<f64>,
    covariance: DMatrix<f64>,
    bound: f64,
}

impl DataModel {
    /// Atoms must have zero weighted mean (center the data first).
    pub fn new(atoms: Vec<DVector<f64>>, probs: Vec<f64>) -> Result<Self> {
        validate_weights(&probs)?;
        if atoms.len() != probs.len() {
            return Err(Error::Invalid("atoms and probabilities must share one length".into()));
        }
        let dim = atoms[0].len();
        if atoms.iter().any(|a| a.len() != dim) {
            return Err(Error::Invalid("inconsistent atom dimensions".into()));
        }
        let mut mean = DVector::zeros(dim);
        for (a, &p) in atoms.iter().zip(&probs) {
            mean += a * p;
        }
        if mean.norm() > WEIGHT_TOL {
            return Err(Error::Invalid(format!(
                "atoms must have zero mean, got |mean| = {:.3e}",
                mean.norm()
            )));
        }
        let mut covariance = DMatrix::zeros(dim, dim);
        let mut bound = 0.0f64;
        for (a, &p) in atoms.iter().zip(&probs) {
            covariance += a * a.transpose() * p;
            bound = bound.max(a.norm());
        }
        Ok(DataModel {
            dim,
            atoms,
            probs,
            covariance,
            bound,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn atom(&self, k: usize) -> &DVector<f64> {
        &self.atoms[k]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// `C` with `|xi_k| <= C` for every atom.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    fn check_unit(w: &DVector<f64>) -> Result<()> {
        if (w.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::Precondition(format!(
                "expected a unit vector, |w| = {:.15}",
                w.norm()
            )));
        }
        Ok(())
    }

    /// Full-space gradient `xi_k (xi_k . w)` of `f(.; xi_k) = (w . xi_k)^2 / 2`.
    pub fn pca_gradient(&self, w: &DVector<f64>, k: usize) -> Result<DVector<f64>> {
        Self::check_unit(w)?;
        Ok(&self.atoms[k] * self.atoms[k].dot(w))
    }

    /// Second moment of the stochastic gradient,
    /// `M(w) = sum_k p_k (xi_k . w)^2 xi_k xi_k^T`; symmetric PSD.
    pub fn fourth_moment(&self, w: &DVector<f64>) -> Result<DMatrix<f64>> {
        Self::check_unit(w)?;
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (a, &p) in self.atoms.iter().zip(&self.probs) {
            let s = a.dot(w);
            m += a * a.transpose() * (p * s * s);
        }
        Ok(m)
    }

    /// Mean loss `w^T Sigma w / 2` as a homogeneous ambient field, ready for
    /// spherical differentiation.
    pub fn mean_loss_field(&self) -> HomogeneousQuadratic {
        HomogeneousQuadratic {
            matrix: &self.covariance * 0.5,
        }
    }
}

/// Zero-mean three-atom model in the plane with covariance diag(1/2, 1/6);
/// the default model in examples, CLI configs, and the acceptance runs.
/// Atom norms stay at or below 1 so that step sizes up to 0.2 remain in the
/// small-jump regime (the expansion parameter is `eta |xi|^2`).
pub fn planar_three_atom() -> DataModel {
    DataModel::new(
        vec![
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![-0.5, 0.5]),
            DVector::from_vec(vec![-0.5, -0.5]),
        ],
        vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
    )
    .expect("built-in model is valid")
}
