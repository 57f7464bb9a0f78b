//! Separation ramp design.
//!
//! The chain is: time → target ion distance → harmonic coefficient that
//! produces this distance → electrode voltages. The split and outer
//! voltages are interpolated linearly in alpha between mesh anchors and the
//! center voltage is solved from the alpha equation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::numeric::brent;
use crate::trapmodel::{
    coefficients_from_voltages, symmetric_distance, AxialPotential, PhysicalConstants,
    SegmentBasis, VoltageSet,
};

/// Distance trajectory `d(t) = d_i + (d_f - d_i) s^2 sin^2(pi s / 2)`,
/// `s = t / T_full`, with head and tail fractions cut away.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub d_initial: f64,
    pub d_final: f64,
    /// Emitted (post-truncation) duration in seconds.
    pub duration: f64,
    pub truncate_head: f64,
    pub truncate_tail: f64,
}

impl TrajectorySpec {
    pub fn new(d_initial: f64, d_final: f64, duration: f64) -> Result<Self> {
        let spec = Self {
            d_initial,
            d_final,
            duration,
            truncate_head: 0.10,
            truncate_tail: 0.30,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Default ramp for a mesh: starts at the equilibrium distance of the
    /// first anchor and heads for 400 um over 80 us.
    pub fn for_mesh(mesh: &RampMesh, basis: &SegmentBasis, c: &PhysicalConstants) -> Result<Self> {
        let d_initial = mesh.distance_at_alpha(mesh.alpha_max(), basis, c)?;
        Self::new(d_initial, 400e-6, 80e-6)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.d_initial > 0.0
            && self.d_final > self.d_initial
            && self.duration > 0.0
            && (0.0..0.5).contains(&self.truncate_head)
            && (0.0..0.5).contains(&self.truncate_tail)
            && self.truncate_head + self.truncate_tail < 1.0;
        if !ok || !self.duration.is_finite() {
            return Err(Error::Invalid(format!("invalid trajectory {self:?}")));
        }
        Ok(())
    }

    /// Length of the trajectory before truncation.
    pub fn full_duration(&self) -> f64 {
        self.duration / (1.0 - self.truncate_head - self.truncate_tail)
    }

    /// Distance on the untruncated clock, `0 <= t <= full_duration()`.
    pub fn distance_untruncated(&self, t: f64) -> Result<f64> {
        let full = self.full_duration();
        if !(t >= 0.0 && t <= full * (1.0 + 1e-12)) {
            return Err(Error::Range(format!(
                "time {t:e} s outside [0, {full:e}] s"
            )));
        }
        let s = (t / full).min(1.0);
        let sine = (0.5 * PI * s).sin();
        Ok(self.d_initial + (self.d_final - self.d_initial) * s * s * sine * sine)
    }

    /// Map from emitted time to untruncated time.
    pub fn untruncated_time(&self, t: f64) -> f64 {
        self.truncate_head * self.full_duration() + t
    }
}

/// Target ion distance at emitted time `t` in `[0, duration]`.
pub fn distance_at(spec: &TrajectorySpec, t: f64) -> Result<f64> {
    if !(t >= 0.0 && t <= spec.duration * (1.0 + 1e-12)) {
        return Err(Error::Range(format!(
            "time {t:e} s outside the ramp [0, {:e}] s",
            spec.duration
        )));
    }
    spec.distance_untruncated(spec.untruncated_time(t.min(spec.duration)))
}

/// Split and outer voltages at one value of alpha.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshAnchor {
    pub alpha: f64,
    pub u_s: f64,
    pub u_o: f64,
}

/// Anchors ordered by strictly decreasing alpha, including one at alpha = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RampMesh {
    anchors: Vec<MeshAnchor>,
}

impl RampMesh {
    pub fn new(anchors: Vec<MeshAnchor>) -> Result<Self> {
        if anchors.len() < 3 {
            return Err(Error::Invalid(
                "a mesh needs start, critical-point and end anchors".into(),
            ));
        }
        if anchors.windows(2).any(|w| !(w[1].alpha < w[0].alpha)) {
            return Err(Error::Invalid(
                "mesh anchors must have strictly decreasing alpha".into(),
            ));
        }
        if !anchors.iter().any(|a| a.alpha == 0.0) {
            return Err(Error::Invalid("mesh needs an anchor at alpha = 0".into()));
        }
        if anchors
            .iter()
            .any(|a| !(a.alpha.is_finite() && a.u_s.is_finite() && a.u_o.is_finite()))
        {
            return Err(Error::Invalid("mesh anchors must be finite".into()));
        }
        Ok(Self { anchors })
    }

    /// Five-anchor mesh of the reference design. `U_O` is ramped up halfway
    /// to the critical point and down again halfway to the end so that it is
    /// constant around the critical point.
    pub fn reference(basis: &SegmentBasis) -> Self {
        let alpha_i = coefficients_from_voltages(basis, &VoltageSet::new(-7.0, 0.0, 0.0)).alpha;
        let alpha_f = -1.0e7;
        Self::new(vec![
            MeshAnchor {
                alpha: alpha_i,
                u_s: 0.0,
                u_o: 0.0,
            },
            MeshAnchor {
                alpha: 0.5 * alpha_i,
                u_s: -3.75,
                u_o: 9.0,
            },
            MeshAnchor {
                alpha: 0.0,
                u_s: -7.5,
                u_o: 9.0,
            },
            MeshAnchor {
                alpha: 0.5 * alpha_f,
                u_s: -7.665,
                u_o: 9.0,
            },
            MeshAnchor {
                alpha: alpha_f,
                u_s: -7.83,
                u_o: 0.0,
            },
        ])
        .expect("reference mesh is valid")
    }

    pub fn anchors(&self) -> &[MeshAnchor] {
        &self.anchors
    }

    pub fn alpha_max(&self) -> f64 {
        self.anchors[0].alpha
    }

    pub fn alpha_min(&self) -> f64 {
        self.anchors[self.anchors.len() - 1].alpha
    }

    pub fn cp_position(&self) -> usize {
        self.anchors
            .iter()
            .position(|a| a.alpha == 0.0)
            .expect("validated")
    }

    /// Neighbouring anchors of the critical point.
    pub fn cp_neighbours(&self) -> (MeshAnchor, MeshAnchor) {
        let k = self.cp_position();
        let before = self.anchors[k.saturating_sub(1)];
        let after = self.anchors[(k + 1).min(self.anchors.len() - 1)];
        (before, after)
    }

    /// Linear interpolation of `(U_S, U_O)` in alpha.
    pub fn interpolate(&self, alpha: f64) -> Result<(f64, f64)> {
        let (hi, lo) = (self.alpha_max(), self.alpha_min());
        let slack = 1e-12 * hi.abs().max(lo.abs());
        if !(alpha <= hi + slack && alpha >= lo - slack) {
            return Err(Error::Range(format!(
                "alpha {alpha:e} outside the mesh range [{lo:e}, {hi:e}]"
            )));
        }
        let alpha = alpha.clamp(lo, hi);
        let k = self
            .anchors
            .windows(2)
            .position(|w| alpha <= w[0].alpha && alpha >= w[1].alpha)
            .expect("alpha within range");
        let (a, b) = (self.anchors[k], self.anchors[k + 1]);
        let f = (a.alpha - alpha) / (a.alpha - b.alpha);
        Ok((a.u_s + f * (b.u_s - a.u_s), a.u_o + f * (b.u_o - a.u_o)))
    }

    /// Symmetric two-ion distance produced by the mesh at `alpha`.
    pub fn distance_at_alpha(
        &self,
        alpha: f64,
        basis: &SegmentBasis,
        c: &PhysicalConstants,
    ) -> Result<f64> {
        let v = voltages_from_alpha(alpha, self, basis)?;
        let p = coefficients_from_voltages(basis, &v);
        symmetric_distance(alpha, p.beta, c.coulomb_factor())
    }
}

/// Electrode voltages on the mesh at a given alpha.
pub fn voltages_from_alpha(
    alpha: f64,
    mesh: &RampMesh,
    basis: &SegmentBasis,
) -> Result<VoltageSet> {
    let (u_s, u_o) = mesh.interpolate(alpha)?;
    if basis.alpha_c == 0.0 {
        return Err(Error::Domain(
            "center segment has no harmonic coefficient".into(),
        ));
    }
    let u_c =
        (alpha - basis.alpha_prime - basis.alpha_o * u_o - basis.alpha_s * u_s) / basis.alpha_c;
    Ok(VoltageSet::new(u_c, u_s, u_o))
}

/// Alpha on the mesh whose symmetric equilibrium has distance `d`.
pub fn alpha_from_distance(
    d: f64,
    mesh: &RampMesh,
    basis: &SegmentBasis,
    c: &PhysicalConstants,
) -> Result<f64> {
    let (hi, lo) = (mesh.alpha_max(), mesh.alpha_min());
    let d_hi_alpha = mesh.distance_at_alpha(hi, basis, c)?;
    let d_lo_alpha = mesh.distance_at_alpha(lo, basis, c)?;
    let tol = 1e-12 * d;
    if (d - d_hi_alpha).abs() <= tol {
        return Ok(hi);
    }
    if (d - d_lo_alpha).abs() <= tol {
        return Ok(lo);
    }
    if !(d > d_hi_alpha && d < d_lo_alpha) {
        return Err(Error::Range(format!(
            "distance {d:e} m is not reachable on the mesh ([{d_hi_alpha:e}, {d_lo_alpha:e}] m)"
        )));
    }
    let g = |alpha: f64| match mesh.distance_at_alpha(alpha, basis, c) {
        Ok(x) => x - d,
        Err(_) => f64::NAN,
    };
    let scale = hi.abs().max(lo.abs());
    brent(g, lo, hi, 1e-15 * scale, 200)
}

/// Offsets and sampling of a designed ramp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RampConfig {
    /// Extra center voltage at the critical point, V.
    pub du_c_cp: f64,
    /// Constant tilt compensation on the outer pair, V.
    pub du_o: f64,
    pub sample_rate: f64,
    /// Output range of the generator, V.
    pub voltage_limit: f64,
}

impl Default for RampConfig {
    fn default() -> Self {
        Self {
            du_c_cp: 0.0,
            du_o: 0.0,
            sample_rate: 2.5e6,
            voltage_limit: 10.0,
        }
    }
}

/// Metadata carried by a waveform.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WaveformAnnotations {
    pub cp_index: Option<usize>,
    pub trajectory: Option<TrajectorySpec>,
    /// Half-open sample range past the critical point, where the quartic
    /// expansion is less accurate.
    pub reduced_accuracy: Option<(usize, usize)>,
    pub reversed: bool,
}

/// Sampled electrode voltages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    pub sample_period: f64,
    pub u_c: Vec<f64>,
    pub u_s: Vec<f64>,
    pub u_o: Vec<f64>,
    pub du_o: Vec<f64>,
    pub annotations: WaveformAnnotations,
}

impl Waveform {
    pub fn from_samples(sample_period: f64, samples: &[VoltageSet]) -> Result<Self> {
        if !(sample_period > 0.0) {
            return Err(Error::Invalid("sample period must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::Invalid("waveform needs at least one sample".into()));
        }
        Ok(Self {
            sample_period,
            u_c: samples.iter().map(|v| v.u_c).collect(),
            u_s: samples.iter().map(|v| v.u_s).collect(),
            u_o: samples.iter().map(|v| v.u_o).collect(),
            du_o: samples.iter().map(|v| v.du_o).collect(),
            annotations: WaveformAnnotations::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.u_c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u_c.is_empty()
    }

    pub fn sample_rate(&self) -> f64 {
        1.0 / self.sample_period
    }

    /// Time of the last sample.
    pub fn duration(&self) -> f64 {
        (self.len().saturating_sub(1)) as f64 * self.sample_period
    }

    pub fn sample(&self, i: usize) -> VoltageSet {
        VoltageSet {
            u_c: self.u_c[i],
            u_s: self.u_s[i],
            u_o: self.u_o[i],
            du_s: 0.0,
            du_o: self.du_o[i],
        }
    }

    pub fn samples(&self) -> Vec<VoltageSet> {
        (0..self.len()).map(|i| self.sample(i)).collect()
    }

    pub fn channels(&self) -> [&Vec<f64>; 4] {
        [&self.u_c, &self.u_s, &self.u_o, &self.du_o]
    }

    pub fn channels_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.u_c, &mut self.u_s, &mut self.u_o, &mut self.du_o]
    }

    /// Potential coefficients at every sample.
    pub fn potentials(&self, basis: &SegmentBasis) -> Vec<AxialPotential> {
        (0..self.len())
            .map(|i| coefficients_from_voltages(basis, &self.sample(i)))
            .collect()
    }

    /// Sample indices whose channels exceed `limit` in magnitude.
    pub fn out_of_range(&self, limit: f64) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.channels().iter().any(|ch| !(ch[i].abs() <= limit)))
            .collect()
    }

    pub fn check_range(&self, limit: f64) -> Result<()> {
        let bad = self.out_of_range(limit);
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Saturation {
                limit,
                count: bad.len(),
                indices: bad.into_iter().take(16).collect(),
            })
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.channels().iter().any(|c| c.len() != n) {
            return Err(Error::Invalid("waveform channels differ in length".into()));
        }
        if !(self.sample_period > 0.0) || n == 0 {
            return Err(Error::Invalid("empty waveform or bad sample period".into()));
        }
        Ok(())
    }
}

/// Triangular weight: 1 at `peak`, 0 at `lo` and `hi`.
fn triangle(i: usize, lo: usize, peak: usize, hi: usize) -> f64 {
    if i == peak {
        1.0
    } else if i < peak {
        if i <= lo {
            0.0
        } else {
            (i - lo) as f64 / (peak - lo) as f64
        }
    } else if i >= hi {
        0.0
    } else {
        (hi - i) as f64 / (hi - peak) as f64
    }
}

/// Samples the design chain at the configured rate.
pub fn build_waveform(
    spec: &TrajectorySpec,
    mesh: &RampMesh,
    config: &RampConfig,
    basis: &SegmentBasis,
    c: &PhysicalConstants,
) -> Result<Waveform> {
    spec.validate()?;
    if !(config.sample_rate > 0.0) {
        return Err(Error::Invalid("sample rate must be positive".into()));
    }
    let n = (spec.duration * config.sample_rate).round() as usize;
    if n < 2 {
        return Err(Error::Invalid(format!(
            "ramp of {:e} s has fewer than two samples at {:e} S/s",
            spec.duration, config.sample_rate
        )));
    }
    let alphas: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let t = spec.duration * i as f64 / (n - 1) as f64;
            alpha_from_distance(distance_at(spec, t)?, mesh, basis, c)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut samples = alphas
        .iter()
        .map(|&a| voltages_from_alpha(a, mesh, basis))
        .collect::<Result<Vec<_>>>()?;

    let cp_index = (0..n)
        .min_by(|&a, &b| alphas[a].abs().partial_cmp(&alphas[b].abs()).unwrap())
        .filter(|&i| {
            // Only a real crossing counts as the critical point.
            alphas[0] >= 0.0 && alphas[n - 1] <= 0.0 && (i > 0 || alphas[0] == 0.0)
        });
    if let Some(cp) = cp_index {
        let (before, after) = mesh.cp_neighbours();
        let lo = (0..cp)
            .rev()
            .find(|&i| alphas[i] >= before.alpha)
            .unwrap_or(0);
        let hi = (cp + 1..n)
            .find(|&i| alphas[i] <= after.alpha)
            .unwrap_or(n - 1);
        for (i, v) in samples.iter_mut().enumerate() {
            v.u_c += config.du_c_cp * triangle(i, lo, cp, hi);
        }
    }
    for v in &mut samples {
        v.du_o = config.du_o;
    }
    let mut w = Waveform::from_samples(1.0 / config.sample_rate, &samples)?;
    w.annotations = WaveformAnnotations {
        cp_index,
        trajectory: Some(*spec),
        reduced_accuracy: cp_index.filter(|&cp| cp + 1 < n).map(|cp| (cp + 1, n)),
        reversed: false,
    };
    w.check_range(config.voltage_limit)?;
    Ok(w)
}

/// Time-reversed copy with remapped annotations.
pub fn reverse_waveform(w: &Waveform) -> Waveform {
    let n = w.len();
    let rev = |ch: &Vec<f64>| ch.iter().rev().copied().collect::<Vec<_>>();
    Waveform {
        sample_period: w.sample_period,
        u_c: rev(&w.u_c),
        u_s: rev(&w.u_s),
        u_o: rev(&w.u_o),
        du_o: rev(&w.du_o),
        annotations: WaveformAnnotations {
            cp_index: w.annotations.cp_index.map(|i| n - 1 - i),
            trajectory: w.annotations.trajectory,
            reduced_accuracy: w.annotations.reduced_accuracy.map(|(a, b)| (n - b, n - a)),
            reversed: !w.annotations.reversed,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (SegmentBasis, RampMesh, PhysicalConstants) {
        let basis = SegmentBasis::reference();
        let mesh = RampMesh::reference(&basis);
        (basis, mesh, PhysicalConstants::calcium40())
    }

    #[test]
    fn trajectory_examples() {
        let spec = TrajectorySpec::new(5e-6, 400e-6, 60e-6).unwrap();
        let full = spec.full_duration();
        assert!((full - 100e-6).abs() < 1e-18);
        assert_eq!(spec.distance_untruncated(0.0).unwrap(), 5e-6);
        assert!((spec.distance_untruncated(full).unwrap() - 400e-6).abs() < 1e-18);
        let mid = spec.distance_untruncated(0.5 * full).unwrap();
        assert!((mid - (5e-6 + 395e-6 / 8.0)).abs() < 1e-15);
        assert!(distance_at(&spec, -1e-9).is_err());
        assert!(distance_at(&spec, 61e-6).is_err());
        assert!(
            (distance_at(&spec, 0.0).unwrap() - spec.distance_untruncated(10e-6).unwrap()).abs()
                < 1e-18
        );
    }

    #[test]
    fn start_anchor_reproduces_initial_voltages() {
        let (basis, mesh, _) = setup();
        let v = voltages_from_alpha(mesh.alpha_max(), &mesh, &basis).unwrap();
        assert!((v.u_c + 7.0).abs() < 1e-12);
        assert_eq!((v.u_s, v.u_o), (0.0, 0.0));
    }

    #[test]
    fn center_voltage_at_critical_point_follows_alpha_equation() {
        let (basis, mesh, _) = setup();
        let v = voltages_from_alpha(0.0, &mesh, &basis).unwrap();
        assert_eq!((v.u_s, v.u_o), (-7.5, 9.0));
        let expected = (1.956e6 - 0.993e6 * 9.0 - 1.279e6 * 7.5) / -2.612e6;
        assert!((v.u_c - expected).abs() < 1e-12);
    }

    #[test]
    fn voltages_invert_alpha() {
        let (basis, mesh, _) = setup();
        for k in 0..=50 {
            let a = mesh.alpha_max() + (mesh.alpha_min() - mesh.alpha_max()) * k as f64 / 50.0;
            let v = voltages_from_alpha(a, &mesh, &basis).unwrap();
            let back = coefficients_from_voltages(&basis, &v).alpha;
            assert!((back - a).abs() <= 1e-10 * a.abs().max(1e-6 * mesh.alpha_max()));
        }
        assert!(voltages_from_alpha(2.0 * mesh.alpha_max(), &mesh, &basis).is_err());
    }

    #[test]
    fn distance_inversion_examples() {
        let (basis, mesh, c) = setup();
        let d_cp = mesh.distance_at_alpha(0.0, &basis, &c).unwrap();
        assert!(
            alpha_from_distance(d_cp, &mesh, &basis, &c).unwrap().abs() < 1e-6 * mesh.alpha_max()
        );
        let d0 = mesh
            .distance_at_alpha(mesh.alpha_max(), &basis, &c)
            .unwrap();
        assert!((d0 - 4.45e-6).abs() < 0.01e-6);
        let a = alpha_from_distance(d0 * 1.0001, &mesh, &basis, &c).unwrap();
        assert!((a / 1.633e7 - 1.0).abs() < 2e-3);
        assert!(matches!(
            alpha_from_distance(1e-6, &mesh, &basis, &c),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn reference_ramp_has_expected_shape() {
        let (basis, mesh, c) = setup();
        let spec = TrajectorySpec::for_mesh(&mesh, &basis, &c).unwrap();
        let w = build_waveform(&spec, &mesh, &RampConfig::default(), &basis, &c).unwrap();
        assert_eq!(w.len(), 200);
        let cp = w.annotations.cp_index.unwrap();
        assert!(cp > 0 && cp < 199);
        assert_eq!(w.annotations.reduced_accuracy, Some((cp + 1, 200)));
    }

    #[test]
    fn cp_offset_shifts_center_voltage() {
        let (basis, mesh, c) = setup();
        let spec = TrajectorySpec::for_mesh(&mesh, &basis, &c).unwrap();
        let base = build_waveform(&spec, &mesh, &RampConfig::default(), &basis, &c).unwrap();
        let cfg = RampConfig {
            du_c_cp: -0.070,
            du_o: 0.004,
            ..RampConfig::default()
        };
        let w = build_waveform(&spec, &mesh, &cfg, &basis, &c).unwrap();
        let cp = w.annotations.cp_index.unwrap();
        assert!((w.u_c[cp] - base.u_c[cp] + 0.070).abs() < 1e-12);
        assert_eq!(w.u_c[0], base.u_c[0]);
        assert_eq!(w.u_c[199], base.u_c[199]);
        assert!(w.du_o.iter().all(|&x| x == 0.004));
    }

    #[test]
    fn reverse_is_an_involution() {
        let (basis, mesh, c) = setup();
        let spec = TrajectorySpec::for_mesh(&mesh, &basis, &c).unwrap();
        let w = build_waveform(&spec, &mesh, &RampConfig::default(), &basis, &c).unwrap();
        let r = reverse_waveform(&w);
        assert_eq!(r.u_c[0], w.u_c[199]);
        assert_eq!(
            r.annotations.cp_index,
            Some(199 - w.annotations.cp_index.unwrap())
        );
        assert_eq!(reverse_waveform(&r), w);
    }

    #[test]
    fn narrow_range_saturates() {
        let (basis, mesh, c) = setup();
        let spec = TrajectorySpec::for_mesh(&mesh, &basis, &c).unwrap();
        let cfg = RampConfig {
            voltage_limit: 5.0,
            ..RampConfig::default()
        };
        assert!(matches!(
            build_waveform(&spec, &mesh, &cfg, &basis, &c),
            Err(Error::Saturation { .. })
        ));
    }
}
