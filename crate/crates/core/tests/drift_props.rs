use ionsep::drift::{
    find_tilt_window, fit_charging, simulate_charging, simulate_servo, ChargingParams,
    ChargingTrace, LaserSchedule, ServoConfig, DEFAULT_TILT_PER_VOLT,
};
use ionsep::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn rk4_charging(p: &ChargingParams, sched: &LaserSchedule, u0: f64, t_end: f64, dt: f64) -> f64 {
    let steps = (t_end / dt).round() as usize;
    let h = t_end / steps as f64;
    let mut u = u0;
    for i in 0..steps {
        // Laser switches are placed on step boundaries by the callers.
        let on = sched.is_on(i as f64 * h + 0.5 * h);
        let k1 = p.rate(u, on);
        let k2 = p.rate(u + 0.5 * h * k1, on);
        let k3 = p.rate(u + 0.5 * h * k2, on);
        let k4 = p.rate(u + h * k3, on);
        u += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    u
}

fn minute_grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64).collect()
}

#[test]
fn noiseless_trace_is_recovered_exactly() {
    let truth = ChargingParams::reference();
    let sched = LaserSchedule::on_then_off(120.0).unwrap();
    let times = minute_grid(300);
    let u = simulate_charging(&truth, &sched, 0.0, &times).unwrap();
    let fit = fit_charging(&ChargingTrace::new(times, u, 0.6).unwrap(), &sched).unwrap();
    for (got, want) in [
        (fit.params.k_prime, truth.k_prime),
        (fit.params.delta, truth.delta),
        (fit.params.kappa_dis, truth.kappa_dis),
    ] {
        assert!(((got - want) / want).abs() < 1e-6, "{got} vs {want}");
    }
}

#[test]
fn noisy_traces_give_tight_charging_rate() {
    let truth = ChargingParams::reference();
    let sched = LaserSchedule::on_then_off(120.0).unwrap();
    let times = minute_grid(300);
    let clean = simulate_charging(&truth, &sched, 0.0, &times).unwrap();
    let noise = Normal::new(0.0, 0.6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut pulls = Vec::new();
    for _ in 0..40 {
        let noisy: Vec<f64> = clean.iter().map(|u| u + noise.sample(&mut rng)).collect();
        let fit = fit_charging(
            &ChargingTrace::new(times.clone(), noisy, 0.6).unwrap(),
            &sched,
        )
        .unwrap();
        let sk = fit.fit.sigma("k_prime").unwrap();
        assert!(sk < 0.1, "sigma K' = {sk}");
        pulls.push((fit.params.k_prime - truth.k_prime) / sk);
    }
    let rms = (pulls.iter().map(|p| p * p).sum::<f64>() / pulls.len() as f64).sqrt();
    assert!((0.6..1.5).contains(&rms), "pull rms {rms}");
}

#[test]
fn equal_sum_rates_need_an_off_interval() {
    let a = ChargingParams::new(3.02, 0.074, 0.017).unwrap();
    let b = ChargingParams::new(3.02, 0.061, 0.030).unwrap();
    let times = minute_grid(300);
    let on = LaserSchedule::always_on(300.0).unwrap();
    let ua = simulate_charging(&a, &on, 0.0, &times).unwrap();
    let ub = simulate_charging(&b, &on, 0.0, &times).unwrap();
    assert!(ua.iter().zip(&ub).all(|(x, y)| (x - y).abs() < 1e-12));
    let trace = ChargingTrace::new(times.clone(), ua, 0.6).unwrap();
    assert!(matches!(
        fit_charging(&trace, &on),
        Err(Error::Identifiability(_))
    ));

    let sched = LaserSchedule::on_then_off(120.0).unwrap();
    for truth in [a, b] {
        let u = simulate_charging(&truth, &sched, 0.0, &times).unwrap();
        let fit =
            fit_charging(&ChargingTrace::new(times.clone(), u, 0.6).unwrap(), &sched).unwrap();
        assert!((fit.params.kappa_dis - truth.kappa_dis).abs() < 1e-6);
    }
}

#[test]
fn static_offset_settles_within_five_seconds() {
    let plant = ChargingParams::new(0.0, 0.0, 0.0).unwrap();
    let sched = LaserSchedule::new(vec![]).unwrap();
    let cfg = ServoConfig::default();
    for offset in [5.0, -20.0, 60.0] {
        let tr = simulate_servo(&plant, &sched, offset, &cfg, 40, 0.6).unwrap();
        let settle = tr.settling_step.expect("settles");
        assert!(settle <= 10, "offset {offset}: settled at step {settle}");
        assert!(tr.settling_time(cfg.period).unwrap() <= 5.0);
    }
}

#[test]
fn paused_servo_error_bounded_by_drift_over_gap() {
    let plant = ChargingParams::reference();
    let sched = LaserSchedule::always_on(1000.0).unwrap();
    let gap = (30.0, 90.0);
    let cfg = ServoConfig {
        pauses: vec![gap],
        ..ServoConfig::default()
    };
    let tr = simulate_servo(&plant, &sched, 0.0, &cfg, 400, 0.6).unwrap();
    let bound = plant.k_prime / 60.0 * (gap.1 - gap.0) + 0.05;
    let worst = tr
        .steps
        .iter()
        .filter(|s| s.time > 20.0)
        .map(|s| s.error.abs())
        .fold(0.0, f64::max);
    assert!(worst <= bound, "{worst} > {bound}");
    assert!(worst > 0.5 * plant.k_prime / 60.0 * (gap.1 - gap.0));
}

#[test]
fn window_missing_everywhere() {
    let grid: Vec<f64> = (0..10).map(|i| i as f64 * 1e-3).collect();
    assert!(matches!(
        find_tilt_window(|_| Ok(false), &grid, 1e-6, DEFAULT_TILT_PER_VOLT),
        Err(Error::WindowNotFound)
    ));
    assert!(find_tilt_window(|_| Ok(true), &grid[..5], 1e-6, DEFAULT_TILT_PER_VOLT).is_err());
}

proptest! {
    #[test]
    fn closed_form_matches_rate_equation(
        k in 0.0f64..10.0,
        delta in 0.0f64..0.3,
        kappa in 0.001f64..0.1,
        u0 in -20.0f64..40.0,
        switch in 1usize..100,
    ) {
        let p = ChargingParams::new(k, delta, kappa).unwrap();
        let sched = LaserSchedule::new(vec![(0.0, switch as f64)]).unwrap();
        let t_end = 120.0;
        let exact = simulate_charging(&p, &sched, u0, &[t_end]).unwrap()[0];
        let ode = rk4_charging(&p, &sched, u0, t_end, 0.01);
        prop_assert!((exact - ode).abs() < 1e-9, "{} vs {}", exact, ode);
    }

    #[test]
    fn negated_tilt_reflects_window(offset in -8e-3f64..8e-3, half in 2e-3f64..6e-3) {
        let grid: Vec<f64> = (0..41).map(|i| -20e-3 + i as f64 * 1e-3).collect();
        let w = find_tilt_window(|u| Ok((u + offset).abs() < half), &grid, 1e-7, DEFAULT_TILT_PER_VOLT).unwrap();
        let m = find_tilt_window(|u| Ok((u - offset).abs() < half), &grid, 1e-7, DEFAULT_TILT_PER_VOLT).unwrap();
        prop_assert!((w.center + m.center).abs() < 1e-6);
        prop_assert!((w.half_width - m.half_width).abs() < 1e-6);
        prop_assert!((w.half_width - half).abs() < 1e-6);
        prop_assert!((w.gamma_crit - DEFAULT_TILT_PER_VOLT * half).abs() < 1e-3);
    }

    #[test]
    fn pure_proportional_error_shrinks_monotonically(kp in 0.05f64..1.95, offset in -50.0f64..50.0) {
        let plant = ChargingParams::new(0.0, 0.0, 0.0).unwrap();
        let sched = LaserSchedule::new(vec![]).unwrap();
        let cfg = ServoConfig { kp, ki: 0.0, ..ServoConfig::default() };
        let tr = simulate_servo(&plant, &sched, offset, &cfg, 30, 0.6).unwrap();
        for w in tr.steps.windows(2) {
            prop_assert!(w[1].error.abs() <= w[0].error.abs() + 1e-12);
        }
    }
}
