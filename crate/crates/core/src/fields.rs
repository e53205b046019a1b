//! Smooth test fields with closed-form ambient derivatives.
//!
//! A [`ScalarField`] is a function on an open neighborhood of its domain in
//! `R^d` exposing exact value, gradient, and Hessian. Sphere calculus
//! evaluates these at unit vectors; the homogeneous variants below extend a
//! function of `w` to `x/|x|`, the convention used throughout for fields
//! living on the sphere. Non-homogeneous variants are kept on purpose so
//! that extension-independence of spherical operators can be tested.

use nalgebra::{DMatrix, DVector};

use crate::rng::NoiseStream;

/// A scalar function with exact first and second ambient derivatives.
pub trait ScalarField: Sync {
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

/// `u(x) = q . x`, the plain linear extension (not homogeneous).
pub struct Linear {
    pub coeffs: DVector<f64>,
}

impl ScalarField for Linear {
    fn value(&self, x: &DVector<f64>) -> f64 {
        self.coeffs.dot(x)
    }
    fn gradient(&self, _x: &DVector<f64>) -> DVector<f64> {
        self.coeffs.clone()
    }
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(x.len(), x.len())
    }
}

/// `u(x) = q . x / |x|`, degree-zero homogeneous.
pub struct LinearHomogeneous {
    pub coeffs: DVector<f64>,
}

impl ScalarField for LinearHomogeneous {
    fn value(&self, x: &DVector<f64>) -> f64 {
        self.coeffs.dot(x) / x.norm()
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let r = x.norm();
        let qx = self.coeffs.dot(x);
        &self.coeffs / r - x * (qx / r.powi(3))
    }
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let d = x.len();
        let r = x.norm();
        let qx = self.coeffs.dot(x);
        let r3 = r.powi(3);
        let r5 = r.powi(5);
        let mut h = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                h[(i, j)] = -(self.coeffs[i] * x[j] + self.coeffs[j] * x[i]) / r3
                    + 3.0 * qx * x[i] * x[j] / r5;
            }
            h[(i, i)] -= qx / r3;
        }
        h
    }
}

/// `u(x) = x^T A x / |x|^2` with symmetric `A`, degree-zero homogeneous.
/// With `A = Sigma/2` this is the mean PCA loss extended off the sphere.
pub struct HomogeneousQuadratic {
    pub matrix: DMatrix<f64>,
}

impl ScalarField for HomogeneousQuadratic {
    fn value(&self, x: &DVector<f64>) -> f64 {
        let q = x.dot(&(&self.matrix * x));
        q / x.norm_squared()
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let r2 = x.norm_squared();
        let ax = &self.matrix * x;
        let q = x.dot(&ax);
        ax * (2.0 / r2) - x * (2.0 * q / (r2 * r2))
    }
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let d = x.len();
        let r2 = x.norm_squared();
        let r4 = r2 * r2;
        let r6 = r4 * r2;
        let ax = &self.matrix * x;
        let q = x.dot(&ax);
        let mut h = &self.matrix * (2.0 / r2);
        for i in 0..d {
            for j in 0..d {
                h[(i, j)] += -4.0 * (ax[i] * x[j] + x[i] * ax[j]) / r4
                    + 8.0 * q * x[i] * x[j] / r6;
            }
            h[(i, i)] -= 2.0 * q / r4;
        }
        h
    }
}

/// `u(x) = exp(q . x / |x|)`; generic smooth sphere field with nonvanishing
/// derivatives of every order, useful for remainder-decay measurements.
pub struct ExpLinearHomogeneous {
    inner: LinearHomogeneous,
}

impl ExpLinearHomogeneous {
    pub fn new(coeffs: DVector<f64>) -> Self {
        ExpLinearHomogeneous {
            inner: LinearHomogeneous { coeffs },
        }
    }
}

impl ScalarField for ExpLinearHomogeneous {
    fn value(&self, x: &DVector<f64>) -> f64 {
        self.inner.value(x).exp()
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.inner.gradient(x) * self.value(x)
    }
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let u = self.value(x);
        let g = self.inner.gradient(x);
        (&g * g.transpose() + self.inner.hessian(x)) * u
    }
}

/// Mixture of isotropic Gaussians; the workhorse smooth test function in
/// `R^d` (any dimension, including 1).
pub struct GaussianMix {
    pub amplitudes: Vec<f64>,
    pub centers: Vec<DVector<f64>>,
    pub widths: Vec<f64>,
}

impl GaussianMix {
    pub fn single(amplitude: f64, center: DVector<f64>, width: f64) -> Self {
        GaussianMix {
            amplitudes: vec![amplitude],
            centers: vec![center],
            widths: vec![width],
        }
    }

    /// Random 1D mixture with centers inside `span` of the origin; used for
    /// "random smooth test function" sweeps.
    pub fn random_1d(stream: &mut NoiseStream, terms: usize, span: f64, min_width: f64) -> Self {
        let mut amplitudes = Vec::with_capacity(terms);
        let mut centers = Vec::with_capacity(terms);
        let mut widths = Vec::with_capacity(terms);
        for _ in 0..terms {
            amplitudes.push(2.0 * stream.uniform() - 1.0);
            centers.push(DVector::from_element(1, span * (2.0 * stream.uniform() - 1.0)));
            widths.push(min_width + stream.uniform());
        }
        GaussianMix {
            amplitudes,
            centers,
            widths,
        }
    }
}

impl ScalarField for GaussianMix {
    fn value(&self, x: &DVector<f64>) -> f64 {
        let mut sum = 0.0;
        for k in 0..self.amplitudes.len() {
            let d2 = (x - &self.centers[k]).norm_squared();
            sum += self.amplitudes[k] * (-d2 / (2.0 * self.widths[k] * self.widths[k])).exp();
        }
        sum
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(x.len());
        for k in 0..self.amplitudes.len() {
            let dx = x - &self.centers[k];
            let s2 = self.widths[k] * self.widths[k];
            let gk = self.amplitudes[k] * (-dx.norm_squared() / (2.0 * s2)).exp();
            g += dx * (-gk / s2);
        }
        g
    }
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let d = x.len();
        let mut h = DMatrix::zeros(d, d);
        for k in 0..self.amplitudes.len() {
            let dx = x - &self.centers[k];
            let s2 = self.widths[k] * self.widths[k];
            let gk = self.amplitudes[k] * (-dx.norm_squared() / (2.0 * s2)).exp();
            h += (&dx * dx.transpose() / (s2 * s2) - DMatrix::identity(d, d) / s2) * gk;
        }
        h
    }
}

/// `u~(x) = m(|x|) u(x)` with `m(1) = 1`: same restriction to the sphere as
/// `u`, different extension. Spherical operators must not see the difference.
pub struct RadialModulated<F: ScalarField> {
    pub inner: F,
    pub slope: f64,
    pub curvature: f64,
}

impl<F: ScalarField> RadialModulated<F> {
    fn factor(&self, r: f64) -> (f64, f64, f64) {
        let t = r - 1.0;
        let m = 1.0 + self.slope * t + self.curvature * t * t;
        let m1 = self.slope + 2.0 * self.curvature * t;
        let m2 = 2.0 * self.curvature;
        (m, m1, m2)
    }
}

impl<F: ScalarField> ScalarField for RadialModulated<F> {
    fn value(&self, x: &DVector<f64>) -> f64 {
        let (m, _, _) = self.factor(x.norm());
        m * self.inner.value(x)
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let r = x.norm();
        let (m, m1, _) = self.factor(r);
        self.inner.gradient(x) * m + x * (m1 / r * self.inner.value(x))
    }
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let d = x.len();
        let r = x.norm();
        let (m, m1, m2) = self.factor(r);
        let u = self.inner.value(x);
        let g = self.inner.gradient(x);
        let grad_m = x * (m1 / r);
        let mut hess_m = x * x.transpose() * ((m2 - m1 / r) / (r * r));
        for i in 0..d {
            hess_m[(i, i)] += m1 / r;
        }
        self.inner.hessian(x) * m + &grad_m * g.transpose() + &g * grad_m.transpose() + hess_m * u
    }
}

type Curve = Box<dyn Fn(f64) -> f64 + Sync>;

/// A function of the polar angle on the circle, `u(x) = g(atan2(x2, x1))`,
/// which is automatically degree-zero homogeneous in `R^2`.
pub struct CircleField {
    g: Curve,
    g1: Curve,
    g2: Curve,
}

impl CircleField {
    pub fn new(g: Curve, g1: Curve, g2: Curve) -> Self {
        CircleField { g, g1, g2 }
    }

    /// Truncated Fourier series `sum_k a_k cos(k t) + b_k sin(k t)` (k from 1).
    pub fn fourier(cos_coeffs: Vec<f64>, sin_coeffs: Vec<f64>) -> Self {
        assert_eq!(cos_coeffs.len(), sin_coeffs.len());
        let (a, b) = (cos_coeffs, sin_coeffs);
        let (a1, b1) = (a.clone(), b.clone());
        let (a2, b2) = (a.clone(), b.clone());
        CircleField {
            g: Box::new(move |t| {
                a.iter()
                    .zip(&b)
                    .enumerate()
                    .map(|(i, (ak, bk))| {
                        let k = (i + 1) as f64;
                        ak * (k * t).cos() + bk * (k * t).sin()
                    })
                    .sum()
            }),
            g1: Box::new(move |t| {
                a1.iter()
                    .zip(&b1)
                    .enumerate()
                    .map(|(i, (ak, bk))| {
                        let k = (i + 1) as f64;
                        k * (bk * (k * t).cos() - ak * (k * t).sin())
                    })
                    .sum()
            }),
            g2: Box::new(move |t| {
                a2.iter()
                    .zip(&b2)
                    .enumerate()
                    .map(|(i, (ak, bk))| {
                        let k = (i + 1) as f64;
                        -k * k * (ak * (k * t).cos() + bk * (k * t).sin())
                    })
                    .sum()
            }),
        }
    }

    /// Random low-order Fourier field, normalized to O(1) amplitude.
    pub fn random_fourier(stream: &mut NoiseStream, modes: usize) -> Self {
        let mut a = Vec::with_capacity(modes);
        let mut b = Vec::with_capacity(modes);
        for k in 1..=modes {
            let decay = 1.0 / (k * k) as f64;
            a.push(decay * (2.0 * stream.uniform() - 1.0));
            b.push(decay * (2.0 * stream.uniform() - 1.0));
        }
        CircleField::fourier(a, b)
    }

    pub fn angle_value(&self, theta: f64) -> f64 {
        (self.g)(theta)
    }
    pub fn angle_d1(&self, theta: f64) -> f64 {
        (self.g1)(theta)
    }
    pub fn angle_d2(&self, theta: f64) -> f64 {
        (self.g2)(theta)
    }
}

impl ScalarField for CircleField {
    fn value(&self, x: &DVector<f64>) -> f64 {
        (self.g)(x[1].atan2(x[0]))
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let r2 = x.norm_squared();
        let g1 = (self.g1)(x[1].atan2(x[0]));
        DVector::from_vec(vec![-x[1] * g1 / r2, x[0] * g1 / r2])
    }
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let theta = x[1].atan2(x[0]);
        let r2 = x.norm_squared();
        let r4 = r2 * r2;
        let g1 = (self.g1)(theta);
        let g2 = (self.g2)(theta);
        // grad theta = (-x2, x1)/r^2; hess theta has the closed form below.
        let gt = [-x[1] / r2, x[0] / r2];
        let off = (2.0 * x[1] * x[1] - r2) / r4;
        let ht = [
            [2.0 * x[0] * x[1] / r4, off],
            [off, -2.0 * x[0] * x[1] / r4],
        ];
        let mut h = DMatrix::zeros(2, 2);
        for i in 0..2 {
            for j in 0..2 {
                h[(i, j)] = g2 * gt[i] * gt[j] + g1 * ht[i][j];
            }
        }
        h
    }
}

/// Compactly supported C-infinity bump: `exp(1 - 1/(1 - t^2))` for
/// `t = (x - center)/halfwidth` inside (-1, 1), exactly zero outside.
/// Value-only; used as initial data on grids where exact support matters.
pub fn bump(center: f64, halfwidth: f64) -> impl Fn(f64) -> f64 + Sync + Clone {
    move |x: f64| {
        let t = (x - center) / halfwidth;
        if t.abs() < 1.0 {
            (1.0 - 1.0 / (1.0 - t * t)).exp()
        } else {
            0.0
        }
    }
}

#[cfg(test)]
pub(crate) mod fd {
    //! Finite-difference cross-checks used by tests in several modules.
    use super::*;

    pub const FD_STEP: f64 = 1e-5;

    pub fn fd_gradient(f: &dyn ScalarField, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(x.len());
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += FD_STEP;
            xm[i] -= FD_STEP;
            g[i] = (f.value(&xp) - f.value(&xm)) / (2.0 * FD_STEP);
        }
        g
    }

    pub fn fd_hessian(f: &dyn ScalarField, x: &DVector<f64>) -> DMatrix<f64> {
        let d = x.len();
        let mut h = DMatrix::zeros(d, d);
        for j in 0..d {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += FD_STEP;
            xm[j] -= FD_STEP;
            let gp = f.gradient(&xp);
            let gm = f.gradient(&xm);
            for i in 0..d {
                h[(i, j)] = (gp[i] - gm[i]) / (2.0 * FD_STEP);
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::fd::{fd_gradient, fd_hessian};
    use super::*;

    fn check_derivatives(f: &dyn ScalarField, x: DVector<f64>, tol: f64) {
        let g = f.gradient(&x);
        let g_fd = fd_gradient(f, &x);
        assert!((g - g_fd).norm() < tol, "gradient mismatch");
        let h = f.hessian(&x);
        let h_fd = fd_hessian(f, &x);
        assert!((h - h_fd).norm() < tol, "hessian mismatch");
    }

    #[test]
    fn homogeneous_fields_have_consistent_derivatives() {
        let x = DVector::from_vec(vec![0.6, -0.7, 0.4]);
        check_derivatives(
            &LinearHomogeneous {
                coeffs: DVector::from_vec(vec![1.0, 2.0, -0.5]),
            },
            x.clone(),
            1e-6,
        );
        check_derivatives(
            &HomogeneousQuadratic {
                matrix: DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, 0.3, 1.0, 0.1, 0.0, 0.1, 0.5]),
            },
            x.clone(),
            1e-6,
        );
        check_derivatives(
            &ExpLinearHomogeneous::new(DVector::from_vec(vec![0.8, -0.4, 0.3])),
            x,
            1e-6,
        );
    }

    #[test]
    fn homogeneous_fields_are_scale_invariant() {
        let f = HomogeneousQuadratic {
            matrix: DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]),
        };
        let x = DVector::from_vec(vec![0.3, -0.9]);
        let scaled = &x * 3.7;
        assert!((f.value(&x) - f.value(&scaled)).abs() < 1e-14);
    }

    #[test]
    fn gaussian_mix_derivatives() {
        let f = GaussianMix {
            amplitudes: vec![1.0, -0.5],
            centers: vec![
                DVector::from_vec(vec![0.2, 0.0]),
                DVector::from_vec(vec![-0.4, 0.3]),
            ],
            widths: vec![0.8, 1.1],
        };
        check_derivatives(&f, DVector::from_vec(vec![0.1, -0.2]), 1e-6);
    }

    #[test]
    fn circle_field_matches_angle_derivatives() {
        let f = CircleField::fourier(vec![0.5, -0.2], vec![0.1, 0.3]);
        check_derivatives(&f, DVector::from_vec(vec![0.6, 0.8]), 1e-6);
        // Off the unit circle too: the extension is homogeneous.
        check_derivatives(&f, DVector::from_vec(vec![1.2, -0.5]), 1e-6);
    }

    #[test]
    fn radial_modulation_keeps_sphere_values() {
        let base = LinearHomogeneous {
            coeffs: DVector::from_vec(vec![1.0, -2.0]),
        };
        let modded = RadialModulated {
            inner: LinearHomogeneous {
                coeffs: DVector::from_vec(vec![1.0, -2.0]),
            },
            slope: 0.7,
            curvature: -0.3,
        };
        let w = DVector::from_vec(vec![0.6, 0.8]);
        assert!((base.value(&w) - modded.value(&w)).abs() < 1e-15);
        check_derivatives(&modded, DVector::from_vec(vec![0.9, -0.5]), 1e-5);
    }

    #[test]
    fn bump_is_exactly_zero_outside_support() {
        let phi = bump(0.0, 0.5);
        assert_eq!(phi(0.5), 0.0);
        assert_eq!(phi(-0.751), 0.0);
        assert!(phi(0.0) > 0.99);
        assert!(phi(0.49) > 0.0);
    }
}
