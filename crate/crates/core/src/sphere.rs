//! Calculus on the unit sphere `S^{d-1}` embedded in `R^d`.
//!
//! Functions on the sphere are handled through ambient extensions (see
//! [`crate::fields`]); the canonical choice is degree-zero homogeneous,
//! `u(x) = u(x/|x|)`. The tangential operators below depend only on the
//! restriction of the field to the sphere, not on the extension — a fact
//! the tests exercise with deliberately different extensions.

use nalgebra::{DMatrix, DVector};

use crate::fields::ScalarField;
use crate::{Error, Result};

/// Vectors shorter than this have no meaningful direction.
pub const DEGENERATE_NORM: f64 = 1e-14;

/// Unit-norm tolerance accepted by [`SpherePoint::new`].
pub const UNIT_TOL: f64 = 1e-12;

/// A point on `S^{d-1}`, kept unit-norm by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SpherePoint(DVector<f64>);

impl SpherePoint {
    /// Wrap an already-unit vector; rejects norms off by more than 1e-12.
    pub fn new(w: DVector<f64>) -> Result<Self> {
        if (w.norm() - 1.0).abs() > UNIT_TOL {
            return Err(Error::Precondition(format!(
                "not a unit vector: |w| = {:.15}",
                w.norm()
            )));
        }
        Ok(SpherePoint(w))
    }

    /// `v / |v|`; degenerate below [`DEGENERATE_NORM`].
    pub fn normalize(v: &DVector<f64>) -> Result<Self> {
        let n = v.norm();
        if n < DEGENERATE_NORM {
            return Err(Error::DegenerateDirection { norm: n });
        }
        Ok(SpherePoint(v / n))
    }

    /// Point at polar angle `theta` on the circle (d = 2).
    pub fn from_angle(theta: f64) -> Self {
        SpherePoint(DVector::from_vec(vec![theta.cos(), theta.sin()]))
    }

    /// Polar angle in `[0, 2 pi)` (d = 2 only).
    pub fn angle(&self) -> f64 {
        debug_assert_eq!(self.0.len(), 2);
        self.0[1].atan2(self.0[0]).rem_euclid(std::f64::consts::TAU)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }
}

/// Tangent-space projection `(I - w w^T) v = v - (w . v) w`.
pub fn tangent_project(w: &SpherePoint, v: &DVector<f64>) -> DVector<f64> {
    let w = w.as_vector();
    v - w * w.dot(v)
}

/// The projection matrix `P = I - w w^T`.
pub fn projection_matrix(w: &SpherePoint) -> DMatrix<f64> {
    let w = w.as_vector();
    DMatrix::identity(w.len(), w.len()) - w * w.transpose()
}

/// Spherical gradient `P grad u(w)`; always tangent.
pub fn spherical_gradient(u: &dyn ScalarField, w: &SpherePoint) -> DVector<f64> {
    tangent_project(w, &u.gradient(w.as_vector()))
}

/// Spherical Hessian
/// `P hess u P - [(w . grad u) P + (P grad u) (x) w]`.
///
/// Not symmetric in general; its trace is the Laplace–Beltrami operator.
pub fn spherical_hessian(u: &dyn ScalarField, w: &SpherePoint) -> DMatrix<f64> {
    let wv = w.as_vector();
    let grad = u.gradient(wv);
    let hess = u.hessian(wv);
    let p = projection_matrix(w);
    let radial = wv.dot(&grad);
    let tangent = tangent_project(w, &grad);
    &p * hess * &p - p * radial - tangent * wv.transpose()
}

/// `Delta_S u = tr(spherical_hessian)`.
pub fn laplace_beltrami(u: &dyn ScalarField, w: &SpherePoint) -> f64 {
    spherical_hessian(u, w).trace()
}

/// Second-order expansion of `eta -> u((w + eta v)/|w + eta v|)`.
#[derive(Debug, Clone, Copy)]
pub struct TaylorTerms {
    /// Exact value `u((w + eta v)/|w + eta v|)`.
    pub value: f64,
    /// Base value `u(w)`.
    pub base: f64,
    /// `eta (v . grad_S u)`.
    pub first_order: f64,
    /// `eta^2 (v v : hess_S u - (w . v)(v . grad_S u)) / 2`.
    pub second_order: f64,
}

impl TaylorTerms {
    /// What the cubic remainder term must absorb.
    pub fn remainder(&self) -> f64 {
        self.value - self.base - self.first_order - self.second_order
    }
}

/// Evaluate the expansion of the normalized perturbation map at `(w, v, eta)`.
/// Radial perturbations (`v` parallel to `w`) leave the value and both
/// correction terms at zero: normalization erases them.
pub fn normalized_taylor(
    u: &dyn ScalarField,
    w: &SpherePoint,
    v: &DVector<f64>,
    eta: f64,
) -> Result<TaylorTerms> {
    let moved = SpherePoint::normalize(&(w.as_vector() + v * eta))?;
    let grad_s = spherical_gradient(u, w);
    let hess_s = spherical_hessian(u, w);
    let directional = v.dot(&grad_s);
    let quad = v.dot(&(&hess_s * v));
    let radial = w.as_vector().dot(v);
    Ok(TaylorTerms {
        value: u.value(moved.as_vector()),
        base: u.value(w.as_vector()),
        first_order: eta * directional,
        second_order: 0.5 * eta * eta * (quad - radial * directional),
    })
}
