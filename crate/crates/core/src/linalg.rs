//! Small dense linear algebra on row-major `Vec<f64>` storage.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{hypot, sqrt};

/// In-place lower Cholesky factor of an `n×n` SPD matrix. Returns false if not positive definite.
pub fn cholesky_in_place(a: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let d = sqrt(d);
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
        for k in j + 1..n {
            a[j * n + k] = 0.0;
        }
    }
    true
}

/// Solves `A x = b` for SPD `A`; `a` is overwritten by its Cholesky factor.
pub fn solve_spd(a: &mut [f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    if !cholesky_in_place(a, n) {
        return None;
    }
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= a[i * n + k] * y[k];
        }
        y[i] /= a[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= a[k * n + i] * y[k];
        }
        y[i] /= a[i * n + i];
    }
    Some(y)
}

/// Householder QR of a square `n×n` matrix: returns `(Q, R)` with `A = Q R`,
/// `Q` orthogonal and `R` upper triangular with a non-negative diagonal.
pub fn qr_square(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut r = a.to_vec();
    let mut q = vec![0.0; n * n];
    for i in 0..n {
        q[i * n + i] = 1.0;
    }
    for k in 0..n.saturating_sub(1) {
        let norm = sqrt((k..n).map(|i| r[i * n + k] * r[i * n + k]).sum::<f64>());
        if norm == 0.0 {
            continue;
        }
        let alpha = if r[k * n + k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..n).map(|i| r[i * n + k]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for j in 0..n {
            let s: f64 = (k..n).map(|i| v[i - k] * r[i * n + j]).sum::<f64>() * 2.0 / vnorm2;
            for i in k..n {
                r[i * n + j] -= s * v[i - k];
            }
        }
        // Q ← Q H
        for i in 0..n {
            let s: f64 = (k..n).map(|j| q[i * n + j] * v[j - k]).sum::<f64>() * 2.0 / vnorm2;
            for j in k..n {
                q[i * n + j] -= s * v[j - k];
            }
        }
    }
    for k in 0..n {
        for i in k + 1..n {
            r[i * n + k] = 0.0;
        }
        if r[k * n + k] < 0.0 {
            for j in 0..n {
                r[k * n + j] = -r[k * n + j];
                q[j * n + k] = -q[j * n + k];
            }
        }
    }
    (q, r)
}

/// Eigenvalues of a symmetric tridiagonal matrix (implicit QL with Wilkinson shifts),
/// returned in ascending order. `diag` has length `n`, `off` has length `n-1`.
pub fn symmetric_tridiagonal_eigenvalues(diag: &[f64], off: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut d = diag.to_vec();
    let mut e = vec![0.0; n];
    e[..n.saturating_sub(1)].copy_from_slice(&off[..n.saturating_sub(1)]);
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                break;
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = hypot(g, 1.0);
            g = d[m] - d[l] + e[l] / (g + if g >= 0.0 { r.abs() } else { -r.abs() });
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut underflow = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = hypot(f, g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    d.sort_by(|a, b| a.total_cmp(b));
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spd_solve_recovers_known_solution() {
        let a = [4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0];
        let x = [1.0, -2.0, 0.5];
        let b: Vec<f64> = (0..3).map(|i| (0..3).map(|j| a[i * 3 + j] * x[j]).sum()).collect();
        let sol = solve_spd(&mut a.to_vec(), &b, 3).unwrap();
        for (s, t) in sol.iter().zip(&x) {
            assert!((s - t).abs() < 1e-14);
        }
        assert!(solve_spd(&mut [1.0, 2.0, 2.0, 1.0], &[1.0, 1.0], 2).is_none());
    }

    #[test]
    fn qr_reconstructs_and_is_orthogonal() {
        let a = [0.3, -1.2, 0.7, 2.0, 0.1, -0.4, -0.5, 0.9, 1.1];
        let (q, r) = qr_square(&a, 3);
        for i in 0..3 {
            assert!(r[i * 3 + i] >= 0.0);
            for j in 0..3 {
                let qr: f64 = (0..3).map(|k| q[i * 3 + k] * r[k * 3 + j]).sum();
                assert!((qr - a[i * 3 + j]).abs() < 1e-14);
                let qtq: f64 = (0..3).map(|k| q[k * 3 + i] * q[k * 3 + j]).sum();
                assert!((qtq - f64::from(u8::from(i == j))).abs() < 1e-14);
                if i > j {
                    assert_eq!(r[i * 3 + j], 0.0);
                }
            }
        }
    }

    #[test]
    fn tridiagonal_eigenvalues_of_second_difference() {
        // eigenvalues of tridiag(-1, 2, -1) are 2 - 2cos(kπ/(n+1))
        let n = 7;
        let ev = symmetric_tridiagonal_eigenvalues(&[2.0; 7], &[-1.0; 6]);
        for (k, v) in ev.iter().enumerate() {
            let exact = 2.0 - 2.0 * ((k + 1) as f64 * core::f64::consts::PI / (n + 1) as f64).cos();
            assert!((v - exact).abs() < 1e-13, "{k}: {v} vs {exact}");
        }
    }
}
