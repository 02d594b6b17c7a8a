//! Range guarantees of the risk critic and the multipliers.

mod common;

use common::{risk_output_range, risk_target_violations, scalar_multiplier_floor, state_multiplier_floor};
use proptest::prelude::*;
use saferl::lagrangian::ScalarMultiplier;

#[test]
fn risk_outputs_stay_in_unit_interval() {
    let (lo, hi) = risk_output_range(21, 100_000);
    assert!(lo >= 0.0 && hi <= 1.0, "risk range [{lo}, {hi}]");
}

#[test]
fn risk_target_is_one_on_violation() {
    let (bad, rows) = risk_target_violations(22, 200);
    assert!(rows > 10_000);
    assert_eq!(bad, 0);
}

#[test]
fn scalar_multiplier_never_negative() {
    assert!(scalar_multiplier_floor(23, 1_000_000) >= 0.0);
}

#[test]
fn state_multipliers_strictly_positive() {
    let floor = state_multiplier_floor(24, 100_000);
    assert!(floor > 0.0, "smallest multiplier {floor:e}");
}

proptest! {
    #[test]
    fn multiplier_rises_while_constraint_is_violated(
        start in 0.0..10.0f64,
        lr in 1e-6..1.0f64,
        threshold in 0.0..1.0f64,
        excess in 1e-3..5.0f64,
    ) {
        let mut m = ScalarMultiplier::new(start, lr, threshold).unwrap();
        let mut last = m.value;
        for _ in 0..20 {
            let v = m.update(threshold + excess).unwrap();
            prop_assert!(v > last);
            last = v;
        }
    }

    #[test]
    fn multiplier_falls_to_zero_while_constraint_holds(
        start in 0.0..1.0f64,
        threshold in 0.1..1.0f64,
        slack in 0.05..0.1f64,
    ) {
        let mut m = ScalarMultiplier::new(start, 0.5, threshold).unwrap();
        let mut last = m.value;
        for _ in 0..200 {
            let v = m.update(threshold - slack).unwrap();
            prop_assert!(v <= last && v >= 0.0);
            last = v;
        }
        prop_assert_eq!(last, 0.0);
    }
}

#[test]
fn multiplier_step_never_lowers_its_objective() {
    use ndarray::Array1;
    use rand::{Rng, SeedableRng};
    use saferl::config::{Algorithm, HyperConfig};
    use saferl::fac::FacAgent;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(25);
    let mut cfg = HyperConfig::defaults(Algorithm::Fac);
    cfg.hidden_sizes = vec![16, 16];
    cfg.multiplier_lr = 1e-7;
    for _ in 0..200 {
        let mut agent = FacAgent::new(&cfg, &mut rng).unwrap();
        agent.multiplier.net.set_output_bias(rng.random_range(-5.0..2.0));
        let obs = common::random_matrix(&mut rng, 32, 4, 2.0);
        let qc = Array1::from_shape_fn(32, |_| rng.random_range(-1.0..3.0));
        let before = agent.multiplier.ascend(obs.view(), &qc).unwrap();
        let after = agent.multiplier.objective(obs.view(), &qc).unwrap().0;
        assert!(after >= before - 1e-15, "{before} -> {after}");
    }
}
