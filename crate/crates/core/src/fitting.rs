//! Weighted linear least squares and Levenberg–Marquardt.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameter estimates with 1-sigma uncertainties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    /// Weighted residual sum of squares (chi-square).
    pub rss: f64,
    pub dof: usize,
}

impl FitResult {
    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.values[i])
    }

    pub fn sigma(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.sigmas[i])
    }

    pub fn reduced_chi2(&self) -> f64 {
        if self.dof == 0 {
            0.0
        } else {
            self.rss / self.dof as f64
        }
    }
}

/// Solves `min sum ((y_i - A_i . p) / sigma_i)^2`.
///
/// Columns are normalised before the SVD so that mixed physical scales do
/// not spoil the rank test. Uncertainties assume the supplied sigmas are
/// absolute.
pub fn weighted_least_squares(
    names: &[&str],
    rows: &[Vec<f64>],
    y: &[f64],
    sigma: &[f64],
) -> Result<FitResult> {
    let n = rows.len();
    let k = names.len();
    if n < k {
        return Err(Error::Underdetermined {
            points: n,
            parameters: k,
        });
    }
    if y.len() != n || sigma.len() != n || rows.iter().any(|r| r.len() != k) {
        return Err(Error::Invalid("design matrix dimensions disagree".into()));
    }
    if sigma.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::Invalid("uncertainties must be positive".into()));
    }
    let mut a = DMatrix::<f64>::zeros(n, k);
    let mut b = DVector::<f64>::zeros(n);
    for i in 0..n {
        for j in 0..k {
            a[(i, j)] = rows[i][j] / sigma[i];
        }
        b[i] = y[i] / sigma[i];
    }
    let scales: Vec<f64> = (0..k)
        .map(|j| {
            let norm = a.column(j).norm();
            if norm > 0.0 {
                norm
            } else {
                1.0
            }
        })
        .collect();
    for j in 0..k {
        let s = scales[j];
        a.column_mut(j).scale_mut(1.0 / s);
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax) {
        return Err(Error::DegenerateScan(format!(
            "design matrix is rank deficient (singular value ratio {:e})",
            smin / smax
        )));
    }
    let u = svd.u.as_ref().expect("requested");
    let vt = svd.v_t.as_ref().expect("requested");
    let mut coeffs = DVector::<f64>::zeros(k);
    for s in 0..k {
        let proj = u.column(s).dot(&b) / svd.singular_values[s];
        coeffs += vt.row(s).transpose() * proj;
    }
    // Covariance of the scaled parameters is V S^-2 V^T.
    let mut cov = DMatrix::<f64>::zeros(k, k);
    for s in 0..k {
        let v = vt.row(s).transpose();
        cov += &v * v.transpose() / (svd.singular_values[s] * svd.singular_values[s]);
    }
    let residual = &a * &coeffs - &b;
    let rss = residual.norm_squared();
    let values: Vec<f64> = (0..k).map(|j| coeffs[j] / scales[j]).collect();
    let covariance: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| cov[(i, j)] / (scales[i] * scales[j]))
                .collect()
        })
        .collect();
    let sigmas = (0..k).map(|i| covariance[i][i].max(0.0).sqrt()).collect();
    Ok(FitResult {
        names: names.iter().map(|s| s.to_string()).collect(),
        values,
        sigmas,
        covariance,
        rss,
        dof: n - k,
    })
}

/// Options for [`levenberg_marquardt`].
#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Relative change in chi-square below which the fit stops.
    pub tolerance: f64,
    /// Relative step for the numeric Jacobian.
    pub jacobian_step: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            tolerance: 1e-15,
            jacobian_step: 1e-6,
        }
    }
}

fn numeric_jacobian<F>(f: &F, p: &[f64], r0: &[f64], step: f64, scales: &[f64]) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let m = r0.len();
    let k = p.len();
    let mut jac = DMatrix::<f64>::zeros(m, k);
    let mut q = p.to_vec();
    for j in 0..k {
        let h = step * p[j].abs().max(scales[j]);
        q[j] = p[j] + h;
        let rp = f(&q);
        q[j] = p[j] - h;
        let rm = f(&q);
        q[j] = p[j];
        for i in 0..m {
            jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
        }
    }
    jac
}

/// Minimises the sum of squared (already weighted) residuals.
///
/// `scales` gives the typical magnitude of each parameter; it sets the
/// Jacobian step for parameters that start at zero.
pub fn levenberg_marquardt<F>(
    names: &[&str],
    residuals: F,
    initial: &[f64],
    scales: &[f64],
    opts: LmOptions,
) -> Result<FitResult>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let k = initial.len();
    let mut p = initial.to_vec();
    let mut r = residuals(&p);
    let m = r.len();
    if m < k {
        return Err(Error::Underdetermined {
            points: m,
            parameters: k,
        });
    }
    let chi2 = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>();
    let mut cost = chi2(&r);
    if !cost.is_finite() {
        return Err(Error::Domain(
            "non-finite residuals at the initial guess".into(),
        ));
    }
    let mut lambda = 1e-3;
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..opts.max_iterations {
        let jac = numeric_jacobian(&residuals, &p, &r, opts.jacobian_step, scales);
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * DVector::from_column_slice(&r);
        let mut improved = false;
        for _ in 0..40 {
            let mut a = jtj.clone();
            for j in 0..k {
                a[(j, j)] += lambda * jtj[(j, j)].max(1e-300);
            }
            let Some(step) = a.lu().solve(&(-&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = (0..k).map(|j| p[j] + step[j]).collect();
            let rt = residuals(&trial);
            let ct = chi2(&rt);
            if ct.is_finite() && ct <= cost {
                let rel = (cost - ct) / cost.max(1e-300);
                let small_step = (0..k).all(|j| step[j].abs() <= 1e-12 * p[j].abs().max(scales[j]));
                p = trial;
                r = rt;
                cost = ct;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                if rel < opts.tolerance || small_step || cost == 0.0 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        trace.push(cost);
        if trace.len() > 8 {
            trace.remove(0);
        }
        if converged || !improved {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Convergence {
            what: "Levenberg-Marquardt fit",
            iterations: opts.max_iterations,
            trace,
        });
    }
    let jac = numeric_jacobian(&residuals, &p, &r, opts.jacobian_step, scales);
    let jtj = jac.transpose() * &jac;
    let cov = jtj
        .clone()
        .pseudo_inverse(1e-14 * jtj.diagonal().max())
        .map_err(|e| Error::Domain(e.to_string()))?;
    let covariance: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| cov[(i, j)]).collect())
        .collect();
    let sigmas = (0..k).map(|i| covariance[i][i].max(0.0).sqrt()).collect();
    Ok(FitResult {
        names: names.iter().map(|s| s.to_string()).collect(),
        values: p,
        sigmas,
        covariance,
        rss: cost,
        dof: m - k,
    })
}
