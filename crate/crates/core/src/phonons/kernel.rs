//! Heating-kernel eigendecomposition and its matrix-exponential action.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};

/// Kernel dimensions are rounded up to a multiple of this for caching.
pub const DIMENSION_BUCKET: usize = 32;

/// Symmetric tridiagonal generator of the heating rate equations,
/// truncated at `dimension` Fock states with a reflecting top level.
#[derive(Debug, Clone)]
pub struct ThermalizationKernel {
    dimension: usize,
    eigenvalues: Vec<f64>,
    /// Row `i` is the `i`-th orthonormal eigenvector.
    eigenvectors: Vec<f64>,
    residual: f64,
    method: Method,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Eigen,
    Taylor,
}

/// Diagonal and upper off-diagonal of the truncated kernel.
pub fn kernel_bands(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut diag: Vec<f64> = (0..n).map(|k| -(2.0 * k as f64 + 1.0)).collect();
    if n > 0 {
        diag[n - 1] = -((n - 1) as f64);
    }
    let off: Vec<f64> = (0..n.saturating_sub(1)).map(|k| (k + 1) as f64).collect();
    (diag, off)
}

/// `y = K x` for the truncated kernel.
pub fn kernel_apply(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let (diag, off) = kernel_bands(n);
    (0..n)
        .map(|k| {
            let mut v = diag[k] * x[k];
            if k > 0 {
                v += off[k - 1] * x[k - 1];
            }
            if k + 1 < n {
                v += off[k] * x[k + 1];
            }
            v
        })
        .collect()
}

/// Implicit QL with shifts on a symmetric tridiagonal matrix.
///
/// `d` is the diagonal, `e[i]` couples `i` and `i + 1`. On return `d`
/// holds the eigenvalues and `vt` (row-major, `n x n`) the eigenvectors as
/// rows.
fn tridiagonal_ql(d: &mut [f64], e_in: &[f64], vt: &mut [f64]) -> Result<()> {
    let n = d.len();
    let mut e = vec![0.0; n];
    e[..n.saturating_sub(1)].copy_from_slice(e_in);
    let eps = f64::EPSILON;
    let mut f = 0.0f64;
    let mut tst1 = 0.0f64;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m == n {
            m = n - 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > 60 {
                    return Err(Error::Convergence {
                        what: "tridiagonal QL eigensolver",
                        iterations: 60,
                        trace: vec![e[l]],
                    });
                }
                let g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;
                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = 1.0;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    let (head, tail) = vt.split_at_mut((i + 1) * n);
                    let row_i = &mut head[i * n..];
                    let row_j = &mut tail[..n];
                    for (a, b) in row_i.iter_mut().zip(row_j.iter_mut()) {
                        let hh = *b;
                        *b = s * *a + c * hh;
                        *a = c * *a - s * hh;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

impl ThermalizationKernel {
    /// Factorizes the kernel of exactly `dimension` states.
    pub fn new(dimension: usize) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::Invalid("kernel dimension must be positive".into()));
        }
        let n = dimension;
        let (mut d, e) = kernel_bands(n);
        let mut vt = vec![0.0; n * n];
        for i in 0..n {
            vt[i * n + i] = 1.0;
        }
        let mut kernel = match tridiagonal_ql(&mut d, &e, &mut vt) {
            Ok(()) => Self {
                dimension: n,
                eigenvalues: d,
                eigenvectors: vt,
                residual: 0.0,
                method: Method::Eigen,
            },
            Err(_) => Self {
                dimension: n,
                eigenvalues: Vec::new(),
                eigenvectors: Vec::new(),
                residual: f64::INFINITY,
                method: Method::Taylor,
            },
        };
        if kernel.method == Method::Eigen {
            kernel.residual = kernel.eigen_residual();
            if !(kernel.residual <= 1e-8) {
                kernel.method = Method::Taylor;
                kernel.eigenvalues.clear();
                kernel.eigenvectors.clear();
            }
        }
        Ok(kernel)
    }

    /// Shared factorization for at least `dimension` states.
    pub fn shared(dimension: usize) -> Result<Arc<Self>> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<ThermalizationKernel>>>> = OnceLock::new();
        let bucket = dimension.div_ceil(DIMENSION_BUCKET).max(1) * DIMENSION_BUCKET;
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(k) = cache.lock().expect("kernel cache").get(&bucket) {
            return Ok(Arc::clone(k));
        }
        let k = Arc::new(Self::new(bucket)?);
        cache
            .lock()
            .expect("kernel cache")
            .entry(bucket)
            .or_insert_with(|| Arc::clone(&k));
        Ok(k)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvector(&self, i: usize) -> &[f64] {
        let n = self.dimension;
        &self.eigenvectors[i * n..(i + 1) * n]
    }

    /// Largest eigen-equation and orthogonality defect, relative to the
    /// kernel norm.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    fn eigen_residual(&self) -> f64 {
        let n = self.dimension;
        let norm = (2 * n) as f64;
        let mut worst = 0.0f64;
        for i in 0..n {
            let v = self.eigenvector(i);
            let kv = kernel_apply(v);
            for (a, b) in kv.iter().zip(v) {
                worst = worst.max((a - self.eigenvalues[i] * b).abs() / norm);
            }
        }
        // Orthogonality probed with a fixed pseudo-random vector.
        let probe: Vec<f64> = (0..n)
            .map(|k| (k as f64 * 0.618_033_988_75).fract() - 0.5)
            .collect();
        let back = self.apply_exp(&probe, 0.0);
        for (a, b) in back.iter().zip(&probe) {
            worst = worst.max((a - b).abs());
        }
        worst
    }

    /// `exp(t K) x` with `x` padded to the kernel dimension.
    pub fn apply_exp(&self, x: &[f64], t: f64) -> Vec<f64> {
        let n = self.dimension;
        let mut p = vec![0.0; n];
        p[..x.len().min(n)].copy_from_slice(&x[..x.len().min(n)]);
        match self.method {
            Method::Eigen => {
                let coeffs: Vec<f64> = (0..n)
                    .map(|i| {
                        let v = self.eigenvector(i);
                        let dot: f64 = v.iter().zip(&p).map(|(a, b)| a * b).sum();
                        dot * (t * self.eigenvalues[i]).exp()
                    })
                    .collect();
                let mut out = vec![0.0; n];
                for (i, c) in coeffs.iter().enumerate() {
                    if *c == 0.0 {
                        continue;
                    }
                    for (o, v) in out.iter_mut().zip(self.eigenvector(i)) {
                        *o += c * v;
                    }
                }
                out
            }
            Method::Taylor => taylor_exp_action(&p, t),
        }
    }
}

/// Scaled Taylor series for `exp(t K) x`.
pub fn taylor_exp_action(x: &[f64], t: f64) -> Vec<f64> {
    let n = x.len();
    let norm = (4 * n) as f64 * t.abs();
    let steps = norm.ceil().max(1.0) as usize;
    let h = t / steps as f64;
    let mut p = x.to_vec();
    for _ in 0..steps {
        let mut term = p.clone();
        let mut acc = p.clone();
        for k in 1..60 {
            term = kernel_apply(&term);
            let scale = h / k as f64;
            let mut mag = 0.0f64;
            for (a, tv) in acc.iter_mut().zip(term.iter_mut()) {
                *tv *= scale;
                *a += *tv;
                mag = mag.max(tv.abs());
            }
            if mag < 1e-18 {
                break;
            }
        }
        p = acc;
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn columns_sum_to_zero() {
        for n in [1usize, 2, 7, 40] {
            let (d, e) = kernel_bands(n);
            for m in 0..n {
                let mut s = d[m];
                if m > 0 {
                    s += e[m - 1];
                }
                if m + 1 < n {
                    s += e[m];
                }
                assert_eq!(s, 0.0);
            }
        }
    }

    #[test]
    fn reconstruction_matches_kernel() {
        let n = 64;
        let k = ThermalizationKernel::new(n).unwrap();
        assert_eq!(k.method(), Method::Eigen);
        let (d, e) = kernel_bands(n);
        for a in 0..n {
            for b in 0..n {
                let rec: f64 = (0..n)
                    .map(|i| k.eigenvector(i)[a] * k.eigenvalues()[i] * k.eigenvector(i)[b])
                    .sum();
                let want = if a == b {
                    d[a]
                } else if a + 1 == b {
                    e[a]
                } else if b + 1 == a {
                    e[b]
                } else {
                    0.0
                };
                assert!((rec - want).abs() < 1e-8, "({a},{b})");
            }
        }
    }

    #[test]
    fn taylor_and_eigen_agree() {
        let n = 48;
        let k = ThermalizationKernel::new(n).unwrap();
        let mut x = vec![0.0; n];
        x[3] = 1.0;
        let a = k.apply_exp(&x, 1.5);
        let b = taylor_exp_action(&x, 1.5);
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn shared_kernels_are_bucketed() {
        let a = ThermalizationKernel::shared(40).unwrap();
        let b = ThermalizationKernel::shared(60).unwrap();
        assert_eq!(a.dimension(), 64);
        assert!(Arc::ptr_eq(&a, &b));
    }
}
