use ionsep::rampgen::*;
use ionsep::trapmodel::*;

fn setup() -> (SegmentBasis, RampMesh, PhysicalConstants, TrajectorySpec) {
    let basis = SegmentBasis::reference();
    let mesh = RampMesh::reference(&basis);
    let c = PhysicalConstants::calcium40();
    let spec = TrajectorySpec::for_mesh(&mesh, &basis, &c).unwrap();
    (basis, mesh, c, spec)
}

fn instantaneous_rate(
    spec: &TrajectorySpec,
    mesh: &RampMesh,
    basis: &SegmentBasis,
    c: &PhysicalConstants,
    t: f64,
) -> f64 {
    let a = |t: f64| alpha_from_distance(distance_at(spec, t).unwrap(), mesh, basis, c).unwrap();
    let h = 1e-9;
    let (lo, hi) = ((t - h).max(0.0), (t + h).min(spec.duration));
    ((a(hi) - a(lo)) / (hi - lo)).abs()
}

#[test]
fn alpha_rate_is_small_at_the_critical_point() {
    let (basis, mesh, c, spec) = setup();
    let d_cp = mesh.distance_at_alpha(0.0, &basis, &c).unwrap();
    let t_cp = ionsep::numeric::brent(
        |t| distance_at(&spec, t).unwrap() - d_cp,
        0.0,
        spec.duration,
        1e-15,
        200,
    )
    .unwrap();
    let at_cp = instantaneous_rate(&spec, &mesh, &basis, &c, t_cp);
    let start = instantaneous_rate(&spec, &mesh, &basis, &c, 0.0);
    let end = instantaneous_rate(&spec, &mesh, &basis, &c, spec.duration);
    assert!(end > 10.0 * at_cp, "end/cp = {}", end / at_cp);
    // The 10% head cut leaves the start only about 9x faster than the critical point.
    assert!(start > 8.5 * at_cp, "start/cp = {}", start / at_cp);
}

#[test]
fn emitted_alpha_is_non_increasing() {
    let (basis, mesh, c, spec) = setup();
    for du_c in [0.0, -0.07] {
        let cfg = RampConfig {
            du_c_cp: du_c,
            ..RampConfig::default()
        };
        let w = build_waveform(&spec, &mesh, &cfg, &basis, &c).unwrap();
        let alpha: Vec<f64> = w.potentials(&basis).iter().map(|p| p.alpha).collect();
        if du_c == 0.0 {
            assert!(alpha.windows(2).all(|p| p[1] <= p[0]));
        }
    }
}

#[test]
fn equilibrium_tracks_the_trajectory_before_the_critical_point() {
    let (basis, mesh, c, spec) = setup();
    let w = build_waveform(&spec, &mesh, &RampConfig::default(), &basis, &c).unwrap();
    let cp = w.annotations.cp_index.unwrap();
    let n = w.len();
    for k in 0..20 {
        let i = k * cp / 20;
        let t = spec.duration * i as f64 / (n - 1) as f64;
        let target = distance_at(&spec, t).unwrap();
        let p = coefficients_from_voltages(&basis, &w.sample(i));
        let eq = equilibrium_two_ion(&p, &c).unwrap();
        assert!((eq.distance() / target - 1.0).abs() < 1e-3, "sample {i}");
    }
}

#[test]
fn alpha_decreases_with_distance() {
    let (basis, mesh, c, _) = setup();
    let d0 = mesh
        .distance_at_alpha(mesh.alpha_max(), &basis, &c)
        .unwrap();
    let d1 = mesh
        .distance_at_alpha(mesh.alpha_min(), &basis, &c)
        .unwrap();
    let mut last = f64::INFINITY;
    for k in 1..=100 {
        let d = d0 + (d1 - d0) * k as f64 / 101.0;
        let a = alpha_from_distance(d, &mesh, &basis, &c).unwrap();
        assert!(a < last);
        last = a;
    }
}

#[test]
fn design_is_deterministic() {
    let (basis, mesh, c, spec) = setup();
    let a = build_waveform(&spec, &mesh, &RampConfig::default(), &basis, &c).unwrap();
    let b = build_waveform(&spec, &mesh, &RampConfig::default(), &basis, &c).unwrap();
    for (x, y) in a.u_c.iter().zip(&b.u_c) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
}

#[test]
fn longer_ramp_has_more_samples() {
    let (basis, mesh, c, mut spec) = setup();
    spec.duration = 160e-6;
    let w = build_waveform(&spec, &mesh, &RampConfig::default(), &basis, &c).unwrap();
    assert_eq!(w.len(), 400);
}
