//! Phonon-number distributions of displaced and thermal motional states and
//! the Rabi-flopping forward model built on them.

mod kernel;
mod laguerre;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::compensated_sum;

pub use kernel::{
    kernel_apply, kernel_bands, taylor_exp_action, Method, ThermalizationKernel, DIMENSION_BUCKET,
};
pub use laguerre::{
    displaced_fock_prob, laguerre_log, ln_factorial, sideband_element, MAX_QUANTUM_NUMBER,
};

/// Largest tail mass a distribution may leave outside its truncation.
pub const TAIL_TOLERANCE: f64 = 1e-6;

/// Mean phonon number up to which the direct overlap route is used.
pub const DIRECT_ROUTE_MAX_MEAN: f64 = 20.0;

/// Occupation probabilities `p_0 .. p_{N-1}` with a bound on the mass
/// beyond the last retained level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhononDistribution {
    probabilities: Vec<f64>,
    tail_bound: f64,
}

impl PhononDistribution {
    pub fn new(probabilities: Vec<f64>, tail_bound: f64) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::Invalid("empty phonon distribution".into()));
        }
        if probabilities.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Invalid(
                "phonon probabilities must be finite and non-negative".into(),
            ));
        }
        let total = compensated_sum(probabilities.iter().copied());
        if !(total <= 1.0 + 1e-9 && total >= 1.0 - TAIL_TOLERANCE) {
            return Err(Error::Invalid(format!(
                "phonon probabilities sum to {total}"
            )));
        }
        if tail_bound > TAIL_TOLERANCE {
            return Err(Error::Truncation {
                dimension: probabilities.len(),
                tail: tail_bound,
            });
        }
        Ok(Self {
            probabilities,
            tail_bound: tail_bound.max(0.0),
        })
    }

    pub fn vacuum() -> Self {
        Self {
            probabilities: vec![1.0],
            tail_bound: 0.0,
        }
    }

    /// Number state `|n>`.
    pub fn fock(n: usize) -> Self {
        let mut p = vec![0.0; n + 1];
        p[n] = 1.0;
        Self {
            probabilities: p,
            tail_bound: 0.0,
        }
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn into_probabilities(self) -> Vec<f64> {
        self.probabilities
    }

    /// Number of retained levels.
    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }

    pub fn total(&self) -> f64 {
        compensated_sum(self.probabilities.iter().copied())
    }

    pub fn mean(&self) -> f64 {
        compensated_sum(
            self.probabilities
                .iter()
                .enumerate()
                .map(|(n, p)| n as f64 * p),
        )
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let terms: Vec<f64> = self
            .probabilities
            .iter()
            .enumerate()
            .map(|(n, p)| (n as f64 - m).powi(2) * p)
            .collect();
        compensated_sum(terms.iter().copied())
    }

    /// Keeps the first `levels` entries, moving the dropped mass into the
    /// tail bound.
    pub fn truncated(mut self, levels: usize) -> Self {
        if levels < self.probabilities.len() {
            let dropped = compensated_sum(self.probabilities[levels..].iter().copied());
            self.probabilities.truncate(levels.max(1));
            self.tail_bound += dropped;
        }
        self
    }
}

/// Mean occupations of a displaced thermal state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionalState {
    pub n_th: f64,
    pub n_coh: f64,
}

impl MotionalState {
    pub fn new(n_th: f64, n_coh: f64) -> Result<Self> {
        if !(n_th >= 0.0 && n_coh >= 0.0 && n_th.is_finite() && n_coh.is_finite()) {
            return Err(Error::Invalid(format!(
                "occupations must be finite and non-negative, got n_th={n_th}, n_coh={n_coh}"
            )));
        }
        Ok(Self { n_th, n_coh })
    }

    pub fn thermal(n_th: f64) -> Result<Self> {
        Self::new(n_th, 0.0)
    }

    pub fn coherent(n_coh: f64) -> Result<Self> {
        Self::new(0.0, n_coh)
    }

    /// Displacement magnitude `|zeta| = sqrt(n_coh)`.
    pub fn displacement(&self) -> f64 {
        self.n_coh.sqrt()
    }

    pub fn mean(&self) -> f64 {
        self.n_th + self.n_coh
    }

    pub fn variance(&self) -> f64 {
        self.n_coh * (2.0 * self.n_th + 1.0) + self.n_th * (self.n_th + 1.0)
    }
}

/// `ln E[z^n]` for a displaced thermal state.
fn log_generating_function(state: &MotionalState, z: f64) -> f64 {
    let u = z - 1.0;
    let denom = 1.0 - state.n_th * u;
    state.n_coh * u / denom - denom.ln()
}

/// Chernoff bound on `P(n >= levels)`.
pub fn tail_bound(state: &MotionalState, levels: usize) -> f64 {
    let nf = levels as f64;
    if nf <= state.mean() {
        return 1.0;
    }
    let u_max = if state.n_th > 0.0 {
        (1.0 - 1e-9) / state.n_th
    } else {
        1e6
    };
    let eval = |u: f64| log_generating_function(state, 1.0 + u) - nf * (1.0 + u).ln();
    // The exponent is convex in u; golden-section search on a log scale.
    let (mut lo, mut hi) = ((u_max * 1e-12).ln(), u_max.ln());
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut a = hi - g * (hi - lo);
    let mut b = lo + g * (hi - lo);
    let (mut fa, mut fb) = (eval(a.exp()), eval(b.exp()));
    for _ in 0..80 {
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - g * (hi - lo);
            fa = eval(a.exp());
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + g * (hi - lo);
            fb = eval(b.exp());
        }
        if hi - lo < 1e-6 {
            break;
        }
    }
    fa.min(fb).min(0.0).exp()
}

/// Number of levels to retain for `state`: at least `mean + 10 sigma`, and
/// enough for the analytic tail bound to fall below [`TAIL_TOLERANCE`].
pub fn choose_truncation(state: &MotionalState) -> usize {
    let start = ((state.mean() + 10.0 * state.variance().sqrt()).ceil() as usize).max(8);
    if tail_bound(state, start) < TAIL_TOLERANCE {
        return start;
    }
    let mut lo = start;
    let mut hi = start * 2;
    while tail_bound(state, hi) >= TAIL_TOLERANCE {
        lo = hi;
        hi *= 2;
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if tail_bound(state, mid) < TAIL_TOLERANCE {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Poisson distribution of a coherent state over `levels` states.
pub fn coherent(n_coh: f64, levels: usize) -> Result<PhononDistribution> {
    if !(n_coh >= 0.0) {
        return Err(Error::Invalid(format!(
            "coherent mean must be non-negative, got {n_coh}"
        )));
    }
    let levels = levels.max(1);
    let p: Vec<f64> = if n_coh == 0.0 {
        let mut v = vec![0.0; levels];
        v[0] = 1.0;
        v
    } else {
        (0..levels)
            .map(|k| (-n_coh + k as f64 * n_coh.ln() - ln_factorial(k)).exp())
            .collect()
    };
    let tail = (1.0 - compensated_sum(p.iter().copied())).max(0.0);
    PhononDistribution::new(p, tail)
}

/// Geometric distribution of a thermal state over `levels` states.
pub fn thermal(n_th: f64, levels: usize) -> Result<PhononDistribution> {
    if !(n_th >= 0.0) {
        return Err(Error::Invalid(format!(
            "thermal mean must be non-negative, got {n_th}"
        )));
    }
    let levels = levels.max(1);
    let ratio = n_th / (n_th + 1.0);
    let p: Vec<f64> = (0..levels)
        .map(|n| ratio.powi(n as i32) / (n_th + 1.0))
        .collect();
    let tail = ratio.powi(levels as i32);
    PhononDistribution::new(p, tail)
}

/// Thermal averaging of displaced number states for `levels` levels.
pub fn displaced_thermal_direct(
    state: &MotionalState,
    levels: usize,
) -> Result<PhononDistribution> {
    if levels > MAX_QUANTUM_NUMBER + 1 {
        return Err(Error::Range(format!(
            "{levels} levels exceed the direct-route limit; use thermalization"
        )));
    }
    let weights = thermal(state.n_th, levels)?.into_probabilities();
    let zeta = state.displacement();
    let p = thermal_average_of_overlaps(&weights, zeta);
    let tail = (1.0 - compensated_sum(p.iter().copied())).max(0.0);
    PhononDistribution::new(p, tail)
}

/// `sum_n w_n |<k|D|n>|^2` for all `k`, running one Laguerre recurrence per
/// ladder offset `|k - n|`.
fn thermal_average_of_overlaps(weights: &[f64], zeta: f64) -> Vec<f64> {
    let levels = weights.len();
    let x = zeta * zeta;
    if x == 0.0 {
        return weights.to_vec();
    }
    let lnx = x.ln();
    let lnf: Vec<f64> = (0..levels).map(ln_factorial).collect();
    let mut p = vec![0.0; levels];
    for a in 0..levels {
        let af = a as f64;
        let base = -x + af * lnx;
        let mut prev = 0.0f64;
        let mut cur = 1.0f64;
        let mut log_scale = 0.0f64;
        // prefactor e^-x x^a m!/(m+a)! times the squared rescaling.
        let mut pref = (base - lnf[a]).exp();
        for m in 0..levels - a {
            if m > 0 {
                pref *= m as f64 / (m + a) as f64;
            }
            if m == 1 {
                prev = 1.0;
                cur = 1.0 + af - x;
            } else if m > 1 {
                let j = (m - 1) as f64;
                let next = ((2.0 * j + 1.0 + af - x) * cur - (j + af) * prev) / (j + 1.0);
                prev = cur;
                cur = next;
                let mag = cur.abs().max(prev.abs());
                if mag > 1e100 || (mag < 1e-100 && mag > 0.0) {
                    cur /= mag;
                    prev /= mag;
                    log_scale += mag.ln();
                    pref = (base + lnf[m] - lnf[m + a] + 2.0 * log_scale).exp();
                }
            }
            let prob = pref * cur * cur;
            p[m] += weights[m + a] * prob;
            if a > 0 {
                p[m + a] += weights[m] * prob;
            }
        }
    }
    p
}

#[cfg(test)]
fn averaged_by_laguerre(weights: &[f64], zeta: f64) -> Vec<f64> {
    let mut p = vec![0.0; weights.len()];
    for (n, w) in weights.iter().enumerate() {
        for (k, pk) in p.iter_mut().enumerate() {
            *pk += w * laguerre::displaced_fock_prob_unchecked(k, n, zeta);
        }
    }
    p
}

/// Adds `n_added` thermal quanta to `p` through the heating kernel.
pub fn thermalize(
    p: &PhononDistribution,
    n_added: f64,
    kern: &ThermalizationKernel,
) -> Result<PhononDistribution> {
    if !(n_added >= 0.0) {
        return Err(Error::Invalid(format!(
            "added occupation must be non-negative, got {n_added}"
        )));
    }
    let n = kern.dimension();
    if p.len() > n {
        return Err(Error::Invalid(format!(
            "distribution has {} levels but the kernel only {n}",
            p.len()
        )));
    }
    if n_added == 0.0 {
        let mut v = p.probabilities().to_vec();
        v.resize(n, 0.0);
        return Ok(PhononDistribution {
            probabilities: v,
            tail_bound: p.tail_bound(),
        });
    }
    let mut out = kern.apply_exp(p.probabilities(), n_added);
    for v in out.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let top = (n / 50).max(1);
    let edge = compensated_sum(out[n - top..].iter().copied());
    let tail = p.tail_bound() + edge;
    if tail > TAIL_TOLERANCE {
        return Err(Error::Truncation { dimension: n, tail });
    }
    Ok(PhononDistribution {
        probabilities: out,
        tail_bound: tail,
    })
}

/// Phonon distribution of a displaced thermal state over `levels` levels.
///
/// Small means use the direct thermal average over displaced number states,
/// larger ones thermalize the coherent distribution.
pub fn displaced_thermal(state: &MotionalState, levels: usize) -> Result<PhononDistribution> {
    if state.n_th == 0.0 {
        return coherent(state.n_coh, levels);
    }
    if state.n_coh == 0.0 {
        return thermal(state.n_th, levels);
    }
    if state.mean() <= DIRECT_ROUTE_MAX_MEAN {
        displaced_thermal_direct(state, levels)
    } else {
        displaced_thermal_kernel(state, levels)
    }
}

/// Kernel route regardless of the mean.
pub fn displaced_thermal_kernel(
    state: &MotionalState,
    levels: usize,
) -> Result<PhononDistribution> {
    let kern = ThermalizationKernel::shared(levels)?;
    let start = coherent(state.n_coh, levels)?;
    Ok(thermalize(&start, state.n_th, &kern)?.truncated(levels))
}

/// Distribution with the truncation picked by [`choose_truncation`].
pub fn distribution_for(state: &MotionalState) -> Result<PhononDistribution> {
    displaced_thermal(state, choose_truncation(state))
}

/// Carrier and sideband drive on the motional ladder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RabiModel {
    /// Bare Rabi frequency in rad/s.
    pub omega: f64,
    pub eta: f64,
}

impl RabiModel {
    pub const DEFAULT_ETA: f64 = 0.23;

    pub fn new(omega: f64, eta: f64) -> Result<Self> {
        let m = Self { omega, eta };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(Error::Invalid(format!(
                "Rabi frequency must be positive, got {}",
                self.omega
            )));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::Invalid(format!(
                "Lamb-Dicke factor must lie in (0, 1), got {}",
                self.eta
            )));
        }
        Ok(())
    }

    pub fn with_omega(&self, omega: f64) -> Self {
        Self {
            omega,
            eta: self.eta,
        }
    }
}

/// Transitions accepted by the forward model.
pub const SUPPORTED_TRANSITIONS: [i32; 4] = [-2, -1, 0, 1];

pub fn check_transition(dn: i32) -> Result<()> {
    if SUPPORTED_TRANSITIONS.contains(&dn) {
        Ok(())
    } else {
        Err(Error::Invalid(format!("unsupported transition dn={dn}")))
    }
}

/// Coupling strength of `|n> -> |n + dn>` relative to the bare Rabi frequency.
pub fn rabi_matrix_element(n: usize, dn: i32, eta: f64) -> f64 {
    sideband_element(n, dn, eta)
}

/// Matrix elements for `n = 0 .. levels - 1`.
pub fn rabi_matrix_elements(levels: usize, dn: i32, eta: f64) -> Vec<f64> {
    (0..levels).map(|n| sideband_element(n, dn, eta)).collect()
}

/// Excited-state probability after driving transition `dn` for `t` seconds.
pub fn rabi_signal(p: &PhononDistribution, model: &RabiModel, dn: i32, t: f64) -> f64 {
    let m = rabi_matrix_elements(p.len(), dn, model.eta);
    rabi_signal_with(p.probabilities(), &m, model.omega, t)
}

/// [`rabi_signal`] with precomputed matrix elements.
pub fn rabi_signal_with(p: &[f64], elements: &[f64], omega: f64, t: f64) -> f64 {
    let terms: Vec<f64> = p
        .iter()
        .zip(elements)
        .map(|(pn, m)| pn * (0.5 * omega * m * t).sin().powi(2))
        .collect();
    compensated_sum(terms.iter().copied()).clamp(0.0, 1.0)
}
