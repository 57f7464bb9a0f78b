use ionsep::phonons::{
    choose_truncation, coherent, displaced_fock_prob, displaced_thermal, displaced_thermal_direct,
    displaced_thermal_kernel, kernel_apply, rabi_matrix_element, rabi_signal, thermal, thermalize,
    MotionalState, PhononDistribution, RabiModel, ThermalizationKernel,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Classical RK4 on the truncated rate equations.
fn rk4_heat(p0: &[f64], total: f64, dt: f64) -> Vec<f64> {
    let steps = (total / dt).round() as usize;
    let h = total / steps as f64;
    let mut p = p0.to_vec();
    let axpy = |a: &[f64], b: &[f64], s: f64| -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x + s * y).collect()
    };
    for _ in 0..steps {
        let k1 = kernel_apply(&p);
        let k2 = kernel_apply(&axpy(&p, &k1, 0.5 * h));
        let k3 = kernel_apply(&axpy(&p, &k2, 0.5 * h));
        let k4 = kernel_apply(&axpy(&p, &k3, h));
        for i in 0..p.len() {
            p[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    p
}

#[test]
fn coherent_heating_matches_rate_equation_integration() {
    let n = choose_truncation(&MotionalState::new(5.0, 82.0).unwrap());
    let kern = ThermalizationKernel::shared(n).unwrap();
    let start = coherent(82.0, kern.dimension()).unwrap();
    let heated = thermalize(&start, 5.0, &kern).unwrap();
    assert!((heated.mean() - 87.0).abs() < 1e-6, "{}", heated.mean());
    let oracle = rk4_heat(start.probabilities(), 5.0, 1e-4);
    let worst = heated
        .probabilities()
        .iter()
        .zip(&oracle)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(worst < 1e-8, "{worst}");
}

#[test]
fn vacuum_heating_gives_thermal_family() {
    for nbar in [0.3, 2.0, 20.7, 60.0] {
        let n = choose_truncation(&MotionalState::thermal(nbar).unwrap());
        let kern = ThermalizationKernel::shared(n).unwrap();
        let heated = thermalize(&PhononDistribution::vacuum(), nbar, &kern).unwrap();
        let want = thermal(nbar, kern.dimension()).unwrap();
        for (a, b) in heated.probabilities().iter().zip(want.probabilities()) {
            assert!((a - b).abs() < 1e-8, "nbar={nbar}");
        }
    }
}

#[test]
fn routes_agree_in_overlap() {
    let state = MotionalState::new(5.0, 10.0).unwrap();
    let n = choose_truncation(&state);
    let a = displaced_thermal_direct(&state, n).unwrap();
    let b = displaced_thermal_kernel(&state, n).unwrap();
    for (x, y) in a.probabilities().iter().zip(b.probabilities()) {
        assert!((x - y).abs() < 1e-6);
    }
    let c = displaced_thermal(&state, n).unwrap();
    assert_eq!(c.probabilities(), a.probabilities());
}

#[test]
fn mean_grows_by_added_occupation() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let kern = ThermalizationKernel::shared(640).unwrap();
    for _ in 0..50 {
        let mut p: Vec<f64> = (0..40).map(|_| rng.random::<f64>()).collect();
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= s);
        let dist = PhononDistribution::new(p, 0.0).unwrap();
        let added = rng.random_range(0.0..20.0);
        let out = thermalize(&dist, added, &kern).unwrap();
        let growth = out.mean() - dist.mean();
        assert!(
            (growth - added).abs() <= 1e-6 * added.max(1.0),
            "{growth} vs {added}"
        );
        assert!((out.total() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn carrier_dephases_while_sidebands_oscillate() {
    let p = thermal(
        20.7,
        choose_truncation(&MotionalState::thermal(20.7).unwrap()),
    )
    .unwrap();
    let model = RabiModel::new(2.0 * std::f64::consts::PI * 100e3, 0.23).unwrap();
    let pi_time = std::f64::consts::PI / model.omega;
    let swing = |dn: i32| {
        let values: Vec<f64> = (0..400)
            .map(|i| rabi_signal(&p, &model, dn, pi_time * (4.0 + 8.0 * i as f64 / 400.0)))
            .collect();
        let hi = values.iter().cloned().fold(f64::MIN, f64::max);
        let lo = values.iter().cloned().fold(f64::MAX, f64::min);
        hi - lo
    };
    let carrier = swing(0);
    let blue = swing(1);
    let red = swing(-1);
    assert!(carrier < 0.5 * blue, "carrier {carrier} blue {blue}");
    assert!(carrier < 0.5 * red, "carrier {carrier} red {red}");
}

#[test]
fn sidebands_vanish_without_lamb_dicke_coupling() {
    let eta = 1e-9;
    for n in [0usize, 5, 50] {
        assert!((rabi_matrix_element(n, 0, eta) - 1.0).abs() < 1e-12);
        assert!(rabi_matrix_element(n, 1, eta).abs() < 1e-7);
        assert!(rabi_matrix_element(n, -2, eta).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn displaced_number_states_are_normalized(n in 0usize..=100, x in 0.0f64..=100.0) {
        let zeta = x.sqrt();
        let top = ((n as f64).sqrt() + zeta + 12.0).powi(2).ceil() as usize;
        let total: f64 = (0..=top.min(2000)).map(|k| displaced_fock_prob(k, n, zeta).unwrap()).sum();
        prop_assert!((total - 1.0).abs() < 1e-8, "{}", total);
    }

    #[test]
    fn rabi_signal_is_a_probability(
        n_th in 0.0f64..15.0,
        n_coh in 0.0f64..15.0,
        dn in prop::sample::select(vec![-2i32, -1, 0, 1]),
        t in 0.0f64..1e-3,
        eta in 0.01f64..0.99,
    ) {
        let state = MotionalState::new(n_th, n_coh).unwrap();
        let p = displaced_thermal(&state, choose_truncation(&state)).unwrap();
        let model = RabiModel::new(2.0e5, eta).unwrap();
        let s = rabi_signal(&p, &model, dn, t);
        prop_assert!((0.0..=1.0).contains(&s));
    }

    #[test]
    fn heating_conserves_probability(seed in 0u64..1000, added in 0.0f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= s);
        let dist = PhononDistribution::new(p, 0.0).unwrap();
        let kern = ThermalizationKernel::shared(320).unwrap();
        let out = thermalize(&dist, added, &kern).unwrap();
        prop_assert!((out.total() - dist.total()).abs() < 1e-10);
    }
}
