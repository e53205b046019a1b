//! One-step consistency of the chain operator with its diffusion generator.
//!
//! On the circle the generator reduces to `L = a(theta) d + c(theta)/2 d^2`
//! with collocation-validated coefficients, so `L^2` is computable in angle
//! coordinates. The defect `|S u - u - eta L u - eta^2 L^2 u / 2|` must then
//! scale as `eta^2` for the order-1 coefficients and as `eta^3` for the
//! order-2 coefficients — the sharpest end-to-end check that every drift
//! correction enters with the right sign and factor.

use std::sync::Arc;

use sdelab_core::chains::sga_step;
use sdelab_core::kolmogorov::reduce_to_circle;
use sdelab_core::problems::planar_three_atom;
use sdelab_core::sde::{ApproxOrder, DriftDiffusionSpec, NoiseModel};
use sdelab_core::sphere::SpherePoint;

fn max_one_step_defect(order: ApproxOrder, eta: f64) -> f64 {
    let model = planar_three_atom();
    let u = |t: f64| t.cos() + 0.4 * (2.0 * t).sin();
    let u1 = |t: f64| -t.sin() + 0.8 * (2.0 * t).cos();
    let u2 = |t: f64| -t.cos() - 1.6 * (2.0 * t).sin();
    let u3 = |t: f64| t.sin() - 3.2 * (2.0 * t).cos();
    let u4 = |t: f64| t.cos() + 6.4 * (2.0 * t).sin();

    let spec = Arc::new(
        DriftDiffusionSpec::sphere(&model, order, eta, NoiseModel::GradientVariance).unwrap(),
    );
    let pde = reduce_to_circle(spec, Arc::new(u), 1.0).unwrap();
    // Coefficient derivatives by central differences; the coefficients are
    // smooth in theta so 1e-4 steps keep this far below the eta^3 signal.
    let h = 1e-4;
    let a = |t: f64| pde.drift_at(t);
    let c = |t: f64| pde.diffusion_at(t);
    let a1 = |t: f64| (a(t + h) - a(t - h)) / (2.0 * h);
    let a2 = |t: f64| (a(t + h) - 2.0 * a(t) + a(t - h)) / (h * h);
    let c1 = |t: f64| (c(t + h) - c(t - h)) / (2.0 * h);
    let c2 = |t: f64| (c(t + h) - 2.0 * c(t) + c(t - h)) / (h * h);
    let lu = |t: f64| a(t) * u1(t) + 0.5 * c(t) * u2(t);
    let lu1 = |t: f64| a1(t) * u1(t) + a(t) * u2(t) + 0.5 * c1(t) * u2(t) + 0.5 * c(t) * u3(t);
    let lu2 = |t: f64| {
        a2(t) * u1(t)
            + 2.0 * a1(t) * u2(t)
            + a(t) * u3(t)
            + 0.5 * c2(t) * u2(t)
            + c1(t) * u3(t)
            + 0.5 * c(t) * u4(t)
    };
    let l2u = |t: f64| a(t) * lu1(t) + 0.5 * c(t) * lu2(t);

    let mut worst = 0.0f64;
    for i in 0..96 {
        let theta = std::f64::consts::TAU * i as f64 / 96.0;
        let w = SpherePoint::from_angle(theta);
        let mut su = 0.0;
        for (k, &p) in model.probs().iter().enumerate() {
            let moved = sga_step(&model, &w, k, eta).unwrap();
            su += p * u(moved.angle());
        }
        let defect = su - u(theta) - eta * lu(theta) - 0.5 * eta * eta * l2u(theta);
        worst = worst.max(defect.abs());
    }
    worst
}

#[test]
fn order_one_defect_is_quadratic_in_eta() {
    let mut last = max_one_step_defect(ApproxOrder::First, 0.04);
    for j in 1..=3 {
        let next = max_one_step_defect(ApproxOrder::First, 0.04 / (1 << j) as f64);
        let ratio = last / next;
        assert!(
            (3.4..=4.6).contains(&ratio),
            "order-1 defect ratio {ratio}, want ~4"
        );
        last = next;
    }
}

#[test]
fn order_two_defect_is_cubic_in_eta() {
    let mut last = max_one_step_defect(ApproxOrder::Second, 0.04);
    for j in 1..=3 {
        let next = max_one_step_defect(ApproxOrder::Second, 0.04 / (1 << j) as f64);
        let ratio = last / next;
        assert!(
            (6.5..=9.5).contains(&ratio),
            "order-2 defect ratio {ratio}, want ~8"
        );
        last = next;
    }
}
