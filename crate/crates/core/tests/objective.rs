use mstnet::objective::{
    bcel, lambda_value, total_loss, ual, weighted_bce, ScheduleKind, ScheduleSpec, UalForm, UalSpec, BCE_EPS,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pow(alpha: f64) -> UalSpec {
    UalSpec { form: UalForm::Pow, alpha }
}

fn exp(alpha: f64) -> UalSpec {
    UalSpec { form: UalForm::Exp, alpha }
}

#[test]
fn bce_matches_per_pixel_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let p: Vec<f64> = (0..16).map(|_| rng.gen::<f64>()).collect();
        let g: Vec<f64> = (0..16).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let mut acc = 0.0;
        for i in 0..16 {
            let q = p[i].clamp(BCE_EPS, 1.0 - BCE_EPS);
            acc += if g[i] == 1.0 { -q.ln() } else { -(1.0 - q).ln() };
        }
        assert!((bcel(&p, &g).unwrap() - acc / 16.0).abs() < 1e-9);
    }
}

#[test]
fn ual_closed_form_values() {
    assert_eq!(ual(&[0.5; 4], &pow(2.0)), 1.0);
    assert_eq!(ual(&[0.0; 4], &pow(2.0)), 0.0);
    assert_eq!(ual(&[1.0; 4], &pow(3.5)), 0.0);
    assert!((ual(&[0.75; 4], &pow(2.0)) - 0.75).abs() < 1e-15);
    assert_eq!(ual(&[0.5; 4], &exp(2.0)), 1.0);
    let edge = (-(2.0f64 * 0.5).powi(2)).exp();
    assert!((ual(&[0.0], &exp(2.0)) - edge).abs() < 1e-15);
}

#[test]
fn pow_gradient_matches_central_differences() {
    let spec = pow(2.0);
    let h = 1e-5;
    for p in [0.1, 0.25, 0.75, 0.9] {
        let analytic = spec.pixel_grad(p);
        assert!((analytic - (-4.0 * (2.0 * p - 1.0))).abs() < 1e-12);
        let fd = (spec.pixel(p + h) - spec.pixel(p - h)) / (2.0 * h);
        assert!((analytic - fd).abs() < 1e-6, "p={p}: {analytic} vs {fd}");
    }
}

#[test]
fn exp_gradient_matches_central_differences() {
    let spec = exp(3.0);
    let h = 1e-5;
    for p in [0.05, 0.3, 0.5, 0.62, 0.97] {
        let fd = (spec.pixel(p + h) - spec.pixel(p - h)) / (2.0 * h);
        assert!((spec.pixel_grad(p) - fd).abs() < 1e-6);
    }
}

#[test]
fn schedule_examples() {
    let cos = ScheduleSpec::default();
    assert_eq!(lambda_value(&cos, 0.0, 100.0), 0.0);
    assert!((lambda_value(&cos, 50.0, 100.0) - 0.5).abs() < 1e-15);
    assert!((lambda_value(&cos, 100.0, 100.0) - 1.0).abs() < 1e-15);
    let lin = ScheduleSpec::linear(0.3, 0.7);
    assert_eq!(lambda_value(&lin, 0.0, 100.0), 0.0);
    assert!(lambda_value(&lin, 30.0, 100.0).abs() < 1e-12);
    assert!((lambda_value(&lin, 50.0, 100.0) - 0.5).abs() < 1e-12);
    assert!((lambda_value(&lin, 70.0, 100.0) - 1.0).abs() < 1e-12);
    assert_eq!(lambda_value(&lin, 90.0, 100.0), 1.0);
    assert_eq!(lambda_value(&ScheduleSpec::constant(1.0), 7.0, 100.0), 1.0);
}

#[test]
fn schedules_are_monotone_on_a_fine_grid() {
    for spec in [ScheduleSpec::default(), ScheduleSpec::linear(0.3, 0.7), ScheduleSpec::linear(0.0, 1.0)] {
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=1000 {
            let v = lambda_value(&spec, i as f64, 1000.0);
            assert!(v >= prev, "{:?} drops at {i}", spec.kind);
            assert!((0.0..=1.0).contains(&v));
            prev = v;
        }
    }
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(pow(0.0).validate().is_err());
    assert!(pow(-1.0).validate().is_err());
    assert!(pow(0.5).validate().is_ok());
    assert!(ScheduleSpec::linear(0.7, 0.3).validate().is_err());
    assert!(ScheduleSpec::linear(0.5, 0.5).validate().is_err());
    let bad = ScheduleSpec { kind: ScheduleKind::Cosine, lambda_min: 1.0, lambda_max: 0.0 };
    assert!(bad.validate().is_err());
}

#[test]
fn total_loss_combinations() {
    let g = [1.0, 0.0, 1.0, 0.0];
    let half = [0.5; 4];
    let cos = ScheduleSpec::default();
    let full = total_loss(&half, &g, &pow(2.0), &cos, 10.0, 10.0).unwrap();
    assert!((full.total - (2f64.ln() + 1.0)).abs() < 1e-12);
    let start = total_loss(&half, &g, &pow(2.0), &cos, 0.0, 10.0).unwrap();
    assert_eq!(start.total, start.bcel);
    let none = total_loss(&half, &g, &UalSpec::none(), &cos, 10.0, 10.0).unwrap();
    assert_eq!(none.total, none.bcel);
    let w = total_loss(&half, &g, &UalSpec { form: UalForm::WeightedBce, alpha: 2.0 }, &cos, 10.0, 10.0).unwrap();
    assert_eq!(w.ual, 0.0);
    assert!((w.total - 2.0 * 2f64.ln()).abs() < 1e-12);
    assert_eq!(w.total, weighted_bce(&half, &g, 2.0).unwrap());
    assert!(total_loss(&half, &g[..3], &pow(2.0), &cos, 0.0, 10.0).is_err());
}

proptest! {
    #[test]
    fn ual_is_symmetric(p in 0.0f64..=1.0, alpha in 0.5f64..6.0) {
        prop_assume!(1.0 - (1.0 - p) == p);
        for spec in [pow(alpha), exp(alpha)] {
            prop_assert_eq!(spec.pixel(p), spec.pixel(1.0 - p));
        }
    }

    #[test]
    fn ual_peaks_at_half(p in 0.0f64..=1.0, alpha in 0.5f64..6.0) {
        for spec in [pow(alpha), exp(alpha)] {
            prop_assert!(spec.pixel(p) <= spec.pixel(0.5));
            prop_assert!(spec.pixel(p) >= spec.pixel(0.0));
        }
        prop_assert!(pow(alpha).pixel(p) >= 0.0);
    }

    #[test]
    fn lambda_stays_in_range(t in 0.0f64..=1.0, a in 0.0f64..0.9, span in 0.05f64..1.0) {
        let lin = ScheduleSpec::linear(a, (a + span).min(1.0).max(a + 0.01));
        for spec in [ScheduleSpec::default(), lin] {
            let v = lambda_value(&spec, t * 500.0, 500.0);
            prop_assert!((spec.lambda_min..=spec.lambda_max).contains(&v));
        }
    }

    #[test]
    fn bce_is_nonnegative(p in proptest::collection::vec(0.0f64..=1.0, 1..32), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g: Vec<f64> = p.iter().map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
        prop_assert!(bcel(&p, &g).unwrap() >= 0.0);
        prop_assert!(weighted_bce(&p, &g, 2.0).unwrap() >= bcel(&p, &g).unwrap());
    }
}
