//! Small dense solvers: LU with partial pivoting for the equilibrium Newton
//! system and Cholesky for GP kernel matrices. Sizes here are 8x8 and
//! k_nn x k_nn, so plain row-major loops are plenty.

/// Row-major square matrix solve `A x = b` via LU with partial pivoting.
/// Returns `None` when a pivot falls below `1e-14` (singular to working
/// precision). `a` and `b` are consumed as scratch.
pub fn lu_solve(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Option<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    let mut perm: Vec<usize> = (0..n).collect();
    for col in 0..n {
        let mut pivot = col;
        let mut best = a[perm[col] * n + col].abs();
        for row in col + 1..n {
            let v = a[perm[row] * n + col].abs();
            if v > best {
                best = v;
                pivot = row;
            }
        }
        if best < 1e-14 {
            return None;
        }
        perm.swap(col, pivot);
        let prow = perm[col];
        let inv = 1.0 / a[prow * n + col];
        for row in col + 1..n {
            let r = perm[row];
            let factor = a[r * n + col] * inv;
            a[r * n + col] = factor;
            for k in col + 1..n {
                a[r * n + k] -= factor * a[prow * n + k];
            }
            b[r] -= factor * b[prow];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let prow = perm[col];
        let mut sum = b[prow];
        for k in col + 1..n {
            sum -= a[prow * n + k] * x[k];
        }
        x[col] = sum / a[prow * n + col];
    }
    Some(x)
}

/// In-place Cholesky factorization of a symmetric positive-definite matrix
/// (row-major, lower triangle written). Returns `false` if a diagonal goes
/// non-positive.
pub fn cholesky(a: &mut [f64], n: usize) -> bool {
    debug_assert_eq!(a.len(), n * n);
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if d <= 0.0 {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        let inv = 1.0 / d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s * inv;
        }
    }
    true
}

/// Solves `L L^T x = b` given the Cholesky factor from [`cholesky`].
pub fn cholesky_solve(l: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}
