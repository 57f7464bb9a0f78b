use ionsep::estimate::{
    expected_dataset, run_mcmc, synthesize_dataset, Likelihood, McmcConfig, PriorSpec, RabiParams,
};

const ETA: f64 = 0.23;

fn omega() -> f64 {
    2.0 * std::f64::consts::PI * 50e3
}

fn times(n: usize, step: f64) -> Vec<f64> {
    (1..=n).map(|i| i as f64 * step).collect()
}

#[test]
fn exact_data_peaks_at_truth_on_local_lattice() {
    let truth = RabiParams::new(3.0, 2.0, omega());
    let data = expected_dataset(&truth, ETA, &[-1, 0, 1], &times(20, 6e-6), 1_000_000_000).unwrap();
    let mut lik = Likelihood::new(&data, ETA).unwrap();
    let at_truth = lik.log_likelihood(&truth).unwrap();
    for i in -5i32..=5 {
        for j in -5i32..=5 {
            for k in -5i32..=5 {
                if (i, j, k) == (0, 0, 0) {
                    continue;
                }
                let p = RabiParams::new(
                    truth.n_th * (1.0 + 0.01 * i as f64),
                    truth.n_coh * (1.0 + 0.01 * j as f64),
                    truth.omega * (1.0 + 0.002 * k as f64),
                );
                assert!(lik.log_likelihood(&p).unwrap() < at_truth, "({i},{j},{k})");
            }
        }
    }
}

#[test]
fn chains_are_reproducible() {
    let truth = RabiParams::new(1.0, 1.0, omega());
    let data = synthesize_dataset(&truth, ETA, &[-1, 0, 1], &times(10, 8e-6), 200, 5).unwrap();
    let priors = PriorSpec::around(omega(), 50.0).unwrap();
    let mut cfg = McmcConfig::new(42);
    cfg.length = 3000;
    let a = run_mcmc(&data, &priors, &cfg, ETA).unwrap();
    let b = run_mcmc(&data, &priors, &cfg, ETA).unwrap();
    assert_eq!(a, b);
    cfg.seed = 43;
    let c = run_mcmc(&data, &priors, &cfg, ETA).unwrap();
    assert_ne!(a.samples, c.samples);
}

#[test]
fn credible_intervals_are_calibrated() {
    let truth = RabiParams::new(2.0, 2.0, omega());
    let priors = PriorSpec::around(omega(), 50.0).unwrap();
    let mut covered_total = 0;
    let mut covered_th = 0;
    let runs = 100;
    for seed in 0..runs {
        let data = synthesize_dataset(&truth, ETA, &[-1, 0, 1], &times(15, 8e-6), 200, 1000 + seed)
            .unwrap();
        let mut cfg = McmcConfig::new(seed);
        cfg.length = 5000;
        let post = run_mcmc(&data, &priors, &cfg, ETA).unwrap();
        let t = truth.n_th + truth.n_coh;
        if post.total.lower <= t && t <= post.total.upper {
            covered_total += 1;
        }
        if post.n_th.lower <= truth.n_th && truth.n_th <= post.n_th.upper {
            covered_th += 1;
        }
    }
    assert!(
        (58..=78).contains(&covered_total),
        "total covered {covered_total}/{runs}"
    );
    assert!(
        (58..=78).contains(&covered_th),
        "n_th covered {covered_th}/{runs}"
    );
}

#[test]
fn second_red_sideband_sharpens_large_displacements() {
    let truth = RabiParams::new(0.0, 82.0, omega());
    let priors = PriorSpec::around(omega(), 1000.0).unwrap();
    let t = times(30, 5e-6);
    let mut cfg = McmcConfig::new(3);
    cfg.length = 10_000;
    let mut widths = Vec::new();
    for transitions in [vec![-1, 0, 1], vec![-2, -1, 0, 1]] {
        let data = synthesize_dataset(&truth, ETA, &transitions, &t, 200, 1).unwrap();
        let post = run_mcmc(&data, &priors, &cfg, ETA).unwrap();
        assert!((post.n_coh.mean - 82.0).abs() < 2.0 * post.n_coh.sd + 1e-9);
        widths.push(post.n_coh.sd);
    }
    assert!(widths[1] < widths[0], "{widths:?}");
}
