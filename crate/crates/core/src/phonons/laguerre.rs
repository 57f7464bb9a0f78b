//! Generalized Laguerre polynomials in log-scaled form and the displaced
//! number-state overlaps built from them.

use crate::error::{Error, Result};

/// Largest quantum number accepted by [`displaced_fock_prob`].
pub const MAX_QUANTUM_NUMBER: usize = 2000;

/// `L_m^a(x)` as `(sign, ln |L|)`. Zero is returned as `(0.0, -inf)`.
pub fn laguerre_log(m: usize, a: usize, x: f64) -> (f64, f64) {
    let a = a as f64;
    let mut prev = 1.0f64;
    if m == 0 {
        return (1.0, 0.0);
    }
    let mut cur = 1.0 + a - x;
    let mut log_scale = 0.0f64;
    for j in 1..m {
        let jf = j as f64;
        let next = ((2.0 * jf + 1.0 + a - x) * cur - (jf + a) * prev) / (jf + 1.0);
        prev = cur;
        cur = next;
        let mag = cur.abs().max(prev.abs());
        if mag > 1e150 || (mag < 1e-150 && mag > 0.0) {
            let s = mag.ln();
            cur /= mag;
            prev /= mag;
            log_scale += s;
        }
    }
    if cur == 0.0 {
        (0.0, f64::NEG_INFINITY)
    } else {
        (cur.signum(), cur.abs().ln() + log_scale)
    }
}

/// `ln(n!)` via a running sum for small `n` and Stirling's series above.
pub fn ln_factorial(n: usize) -> f64 {
    if n < 64 {
        (2..=n).map(|k| (k as f64).ln()).sum()
    } else {
        let x = n as f64 + 1.0;
        // ln Gamma(x) with the Stirling series; error below 1e-17 relative.
        let inv = 1.0 / x;
        let inv2 = inv * inv;
        (x - 0.5) * x.ln() - x
            + 0.5 * (2.0 * std::f64::consts::PI).ln()
            + inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 / 1680.0)))
    }
}

/// `|<k| D(zeta) |n>|^2` for real displacement magnitude `zeta`.
///
/// Uses `e^-x x^|k-n| (n<!/n>!) L_{n<}^{|k-n|}(x)^2` with `x = zeta^2`.
pub fn displaced_fock_prob(k: usize, n: usize, zeta: f64) -> Result<f64> {
    if k.max(n) > MAX_QUANTUM_NUMBER {
        return Err(Error::Range(format!(
            "quantum numbers ({k}, {n}) exceed {MAX_QUANTUM_NUMBER}; use the thermalization route"
        )));
    }
    Ok(displaced_fock_prob_unchecked(k, n, zeta))
}

pub(crate) fn displaced_fock_prob_unchecked(k: usize, n: usize, zeta: f64) -> f64 {
    let x = zeta * zeta;
    if x == 0.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    let (lo, hi) = (k.min(n), k.max(n));
    let a = hi - lo;
    let (sign, log_l) = laguerre_log(lo, a, x);
    if sign == 0.0 {
        return 0.0;
    }
    let log_p = -x + a as f64 * x.ln() + ln_factorial(lo) - ln_factorial(hi) + 2.0 * log_l;
    log_p.exp()
}

/// Signed displacement amplitude `<n+dn| D |n>`-style element used for
/// sideband couplings: `e^{-x/2} x^{|dn|/2} sqrt(n<!/n>!) L_{n<}^{|dn|}(x)`
/// with `x = eta^2`.
pub fn sideband_element(n: usize, dn: i32, eta: f64) -> f64 {
    let target = n as i64 + dn as i64;
    if target < 0 {
        return 0.0;
    }
    let target = target as usize;
    let (lo, hi) = (n.min(target), n.max(target));
    let a = hi - lo;
    let x = eta * eta;
    if x == 0.0 {
        return if a == 0 { 1.0 } else { 0.0 };
    }
    let (sign, log_l) = laguerre_log(lo, a, x);
    if sign == 0.0 {
        return 0.0;
    }
    let log_m =
        -0.5 * x + 0.5 * a as f64 * x.ln() + 0.5 * (ln_factorial(lo) - ln_factorial(hi)) + log_l;
    sign * log_m.exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct alternating sum over the overlap terms, in extended precision
    /// via scaled terms; only reliable for small quantum numbers.
    fn direct_sum(k: usize, n: usize, zeta: f64) -> f64 {
        let x = zeta * zeta;
        let mut sum = 0.0;
        for l in 0..=n.min(k) {
            let log_term =
                -(l as f64) * x.ln() - ln_factorial(l) - ln_factorial(n - l) - ln_factorial(k - l);
            let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * log_term.exp();
        }
        (-x + (k + n) as f64 * x.ln() + ln_factorial(n) + ln_factorial(k)).exp() * sum * sum
    }

    #[test]
    fn laguerre_small_cases() {
        // L_2^1(x) = (x^2 - 6x + 6) / 2
        let x = 0.7;
        let (s, l) = laguerre_log(2, 1, x);
        assert!((s * l.exp() - (x * x - 6.0 * x + 6.0) / 2.0).abs() < 1e-14);
        let (s, l) = laguerre_log(5, 0, 0.0);
        assert!((s * l.exp() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn ln_factorial_branches_join() {
        let direct: f64 = (2..=80).map(|k| (k as f64).ln()).sum();
        assert!((ln_factorial(80) - direct).abs() < 1e-11);
    }

    #[test]
    fn ground_state_displacement_is_poisson() {
        let zeta = 1.7f64;
        for k in 0..20 {
            let p = displaced_fock_prob(k, 0, zeta).unwrap();
            let poisson = (-zeta * zeta + 2.0 * k as f64 * zeta.ln() - ln_factorial(k)).exp();
            assert!((p - poisson).abs() < 1e-14);
        }
    }

    #[test]
    fn single_term_case() {
        let zeta = 0.8f64;
        let p = displaced_fock_prob(0, 1, zeta).unwrap();
        assert!((p - (-zeta * zeta).exp() * zeta * zeta).abs() < 1e-15);
    }

    #[test]
    fn identity_displacement() {
        assert_eq!(displaced_fock_prob(3, 3, 0.0).unwrap(), 1.0);
        assert_eq!(displaced_fock_prob(3, 4, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn matches_direct_sum_for_small_numbers() {
        for &(k, n, z) in &[
            (3usize, 5usize, 1.1f64),
            (10, 7, 2.0),
            (12, 12, 0.5),
            (8, 15, 1.5),
        ] {
            let a = displaced_fock_prob(k, n, z).unwrap();
            let b = direct_sum(k, n, z);
            assert!((a - b).abs() < 1e-10, "({k},{n}) {a} vs {b}");
        }
    }

    #[test]
    fn survives_cancellation_in_the_direct_sum() {
        // 50-digit reference for L_20^5 at x = 12.25.
        let p = displaced_fock_prob(25, 20, 3.5).unwrap();
        assert!((p - 0.013_729_217_435_746_9).abs() < 1e-14);
    }

    #[test]
    fn limit_is_enforced() {
        assert!(displaced_fock_prob(MAX_QUANTUM_NUMBER + 1, 0, 1.0).is_err());
    }

    #[test]
    fn sideband_examples() {
        let eta = 0.23;
        assert_eq!(sideband_element(0, -1, eta), 0.0);
        assert!((sideband_element(0, 0, eta) - 0.9739).abs() < 1e-4);
        assert!((sideband_element(0, 1, eta) - 0.2240).abs() < 1e-4);
    }
}
