//! Waveform generator quantization and the second-order segment filters.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::rampgen::Waveform;
use crate::trapmodel::VoltageSet;

/// Arbitrary waveform generator limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AwgSpec {
    /// Symmetric output range, V.
    pub range: f64,
    /// Output step, V.
    pub resolution: f64,
    pub max_rate: f64,
}

impl Default for AwgSpec {
    fn default() -> Self {
        Self {
            range: 10.0,
            resolution: 0.3e-3,
            max_rate: 2.5e6,
        }
    }
}

impl AwgSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.range > 0.0 && self.resolution > 0.0 && self.max_rate > 0.0) {
            return Err(Error::Invalid(format!("invalid generator spec {self:?}")));
        }
        Ok(())
    }

    pub fn round(&self, v: f64) -> f64 {
        (v / self.resolution).round() * self.resolution
    }
}

/// Rounds every sample to the output grid.
pub fn quantize(w: &Waveform, spec: &AwgSpec) -> Result<Waveform> {
    spec.validate()?;
    let rate = w.sample_rate();
    if rate > spec.max_rate * (1.0 + 1e-9) {
        return Err(Error::Rate {
            rate,
            max: spec.max_rate,
        });
    }
    w.check_range(spec.range)?;
    let mut out = w.clone();
    for ch in out.channels_mut() {
        for v in ch.iter_mut() {
            *v = spec.round(*v);
        }
    }
    Ok(out)
}

/// Second-order low-pass between generator and electrode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    /// Cutoff frequency, Hz.
    pub cutoff: f64,
    pub quality: f64,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            cutoff: 50e3,
            quality: std::f64::consts::FRAC_1_SQRT_2,
        }
    }
}

impl FilterSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff > 0.0 && self.quality > 0.0) {
            return Err(Error::Invalid(format!("invalid filter {self:?}")));
        }
        Ok(())
    }

    pub fn damping(&self) -> f64 {
        0.5 / self.quality
    }

    /// Fractional step-response overshoot, zero for critically damped or
    /// slower filters.
    pub fn overshoot(&self) -> f64 {
        let zeta = self.damping();
        if zeta >= 1.0 {
            0.0
        } else {
            (-PI * zeta / (1.0 - zeta * zeta).sqrt()).exp()
        }
    }

    /// Bound on how far the output can leave `[lo, hi]` for input within
    /// that interval: the geometric sum of alternating overshoots.
    pub fn excursion_bound(&self, lo: f64, hi: f64) -> f64 {
        let r = self.overshoot();
        (hi - lo) * r / (1.0 - r)
    }
}

/// Bilinear-transformed biquad, transposed direct form II.
#[derive(Debug, Clone, Copy)]
pub struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    s1: f64,
    s2: f64,
}

impl Biquad {
    /// Low-pass with the cutoff prewarped to `sample_rate`.
    pub fn lowpass(spec: &FilterSpec, sample_rate: f64) -> Self {
        let k = (PI * spec.cutoff / sample_rate).tan();
        let norm = 1.0 / (1.0 + k / spec.quality + k * k);
        let b0 = k * k * norm;
        Self {
            b0,
            b1: 2.0 * b0,
            b2: b0,
            a1: 2.0 * (k * k - 1.0) * norm,
            a2: (1.0 - k / spec.quality + k * k) * norm,
            s1: 0.0,
            s2: 0.0,
        }
    }

    /// Puts the filter in steady state at input `x`.
    pub fn settle(&mut self, x: f64) {
        self.s2 = (self.b2 - self.a2) * x;
        self.s1 = (self.b1 - self.a1) * x + self.s2;
    }

    #[inline]
    pub fn step(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.s1;
        self.s1 = self.b1 * x - self.a1 * y + self.s2;
        self.s2 = self.b2 * x - self.a2 * y;
        y
    }
}

/// Voltages as a continuous function of time, built from a uniform fine
/// grid with linear interpolation. Times outside the grid clamp to the end
/// values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousVoltage {
    step: f64,
    channels: [Vec<f64>; 4],
}

impl ContinuousVoltage {
    pub fn from_channels(step: f64, channels: [Vec<f64>; 4]) -> Result<Self> {
        let n = channels[0].len();
        if n == 0 || channels.iter().any(|c| c.len() != n) || !(step > 0.0) {
            return Err(Error::Invalid(
                "continuous voltage needs equal non-empty channels".into(),
            ));
        }
        Ok(Self { step, channels })
    }

    /// Unfiltered waveform, linearly interpolated between samples.
    pub fn linear(w: &Waveform) -> Self {
        Self {
            step: w.sample_period,
            channels: [w.u_c.clone(), w.u_s.clone(), w.u_o.clone(), w.du_o.clone()],
        }
    }

    /// Fixed voltages for `duration`.
    pub fn constant(v: VoltageSet, duration: f64) -> Self {
        let step = duration.max(1e-300);
        Self {
            step,
            channels: [
                vec![v.u_c; 2],
                vec![v.u_s; 2],
                vec![v.u_o; 2],
                vec![v.du_o; 2],
            ],
        }
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels[0].is_empty()
    }

    pub fn duration(&self) -> f64 {
        (self.len() - 1) as f64 * self.step
    }

    pub fn channels(&self) -> &[Vec<f64>; 4] {
        &self.channels
    }

    /// Grid value `j` as a voltage set.
    pub fn node(&self, j: usize) -> VoltageSet {
        VoltageSet {
            u_c: self.channels[0][j],
            u_s: self.channels[1][j],
            u_o: self.channels[2][j],
            du_s: 0.0,
            du_o: self.channels[3][j],
        }
    }

    #[inline]
    pub fn eval(&self, t: f64) -> VoltageSet {
        let n = self.len();
        if n == 1 || t <= 0.0 {
            return self.node(0);
        }
        let x = t / self.step;
        let j = x.floor() as usize;
        if j >= n - 1 {
            return self.node(n - 1);
        }
        let f = x - j as f64;
        let at = |c: &Vec<f64>| c[j] + f * (c[j + 1] - c[j]);
        VoltageSet {
            u_c: at(&self.channels[0]),
            u_s: at(&self.channels[1]),
            u_o: at(&self.channels[2]),
            du_s: 0.0,
            du_o: at(&self.channels[3]),
        }
    }

    /// Appends a hold of the last value.
    pub fn extended(&self, extra: f64) -> Self {
        let k = (extra / self.step).ceil() as usize;
        let mut out = self.clone();
        for c in &mut out.channels {
            let last = *c.last().expect("non-empty");
            c.extend(std::iter::repeat_n(last, k));
        }
        out
    }

    /// Largest and smallest value of each channel.
    pub fn extrema(&self) -> [(f64, f64); 4] {
        self.channels.clone().map(|c| {
            c.iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                })
        })
    }
}

/// Zero-order hold of `w` at `oversample` times its rate, filtered per
/// channel. The filter starts in steady state at the first sample.
pub fn apply_filter(
    w: &Waveform,
    spec: &FilterSpec,
    oversample: usize,
) -> Result<ContinuousVoltage> {
    apply_filter_with_hold(w, spec, oversample, 0.0)
}

/// As [`apply_filter`], continuing with the last sample held for `hold`
/// seconds so the output can settle.
pub fn apply_filter_with_hold(
    w: &Waveform,
    spec: &FilterSpec,
    oversample: usize,
    hold: f64,
) -> Result<ContinuousVoltage> {
    spec.validate()?;
    w.validate()?;
    let fine_rate = w.sample_rate() * oversample as f64;
    if oversample == 0 || fine_rate < 8.0 * spec.cutoff {
        return Err(Error::Invalid(format!(
            "filter grid {fine_rate:e} S/s is below 4x the Nyquist rate of the {:e} Hz cutoff",
            spec.cutoff
        )));
    }
    let n = w.len();
    let extra = (hold * fine_rate).ceil() as usize;
    let total = (n - 1) * oversample + 1 + extra;
    let channels = w.channels().map(|ch| {
        let mut f = Biquad::lowpass(spec, fine_rate);
        f.settle(ch[0]);
        (0..total)
            .map(|j| f.step(ch[(j / oversample).min(n - 1)]))
            .collect::<Vec<f64>>()
    });
    ContinuousVoltage::from_channels(1.0 / fine_rate, channels)
}
