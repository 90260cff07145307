use std::f64::consts::{FRAC_PI_2, PI};

use prbt_core::simulate::{integrate, theta_d_simulation, twisting, StopReason, VectorField};
use prbt_core::Polynomial;

/// x' = -y, y' = x
fn circle() -> VectorField {
    let x = Polynomial::var(2, 0);
    let y = Polynomial::var(2, 1);
    VectorField::new(&[y.scale(-1.0), x])
}

fn steps_for(t: f64, h: f64) -> (usize, f64) {
    let k = (t / h).round() as usize;
    (k, t / k as f64)
}

#[test]
fn rk4_full_circle() {
    let (k, h) = steps_for(2.0 * PI, 1e-3);
    let tr = integrate(&circle(), &[], &[1.0, 0.0], h, k).unwrap();
    assert_eq!(tr.len(), k + 1);
    let end = &tr.last().unwrap().x;
    let err = ((end[0] - 1.0).powi(2) + end[1].powi(2)).sqrt();
    assert!(err <= 1e-8, "endpoint error {err:e}");
}

#[test]
fn twisting_on_circle_arcs() {
    for (t, want) in [(FRAC_PI_2, FRAC_PI_2), (PI, PI)] {
        let (k, h) = steps_for(t, 1e-3);
        let tr = integrate(&circle(), &[], &[1.0, 0.0], h, k).unwrap();
        let tw = twisting(&tr).unwrap();
        assert!((tw - want).abs() <= 1e-3, "twisting {tw} over [0, {t}]");
    }
}

#[test]
fn theta_d_stops_on_rotation() {
    let run = theta_d_simulation(&circle(), &[], &[1.0, 0.0], PI / 4.0, 100.0).unwrap();
    assert_eq!(run.reason, StopReason::Twist);
    let t = run.trace.last().unwrap().t;
    assert!((t - PI / 4.0).abs() < 1e-2, "stopped at t = {t}");
}

#[test]
fn constant_flow_has_no_twist() {
    let f = VectorField::new(&[Polynomial::constant(2, 1.0), Polynomial::zero(2)]);
    let tr = integrate(&f, &[], &[0.0, 0.0], 0.1, 10).unwrap();
    assert_eq!(twisting(&tr).unwrap(), 0.0);
    assert!((tr.last().unwrap().x[0] - 1.0).abs() <= f64::EPSILON);
    // a dyadic step is exact
    let tr = integrate(&f, &[], &[0.0, 0.0], 0.125, 8).unwrap();
    assert_eq!(tr.last().unwrap().x, vec![1.0, 0.0]);
}
