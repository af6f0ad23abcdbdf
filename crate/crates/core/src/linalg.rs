//! Dense row-major kernels: dot products, GEMM and Cholesky factorization.

use crate::error::{Error, Result};

/// Dot product with four independent accumulators (vectorizes well and is
/// deterministic for a given length).
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..n {
        s += a[i] * b[i];
    }
    s
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `C (m×n) = alpha · op(A) · op(B) + beta · C`, all row-major. `op(A)` is
/// `m×k`: stored `m×k` when `a_trans` is false, `k×m` otherwise. Likewise
/// `op(B)` is `k×n`, stored `k×n` or `n×k`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm shape mismatch");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the slices; `c` is borrowed mutably and cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// In-place lower Cholesky factor of a row-major symmetric matrix. Only the
/// lower triangle is read; the strict upper triangle is zeroed. Returns
/// `false` if the matrix is not numerically positive definite.
pub fn cholesky_in_place(a: &mut [f64], n: usize) -> bool {
    for i in 0..n {
        for j in 0..=i {
            let (head, tail) = a.split_at_mut(i * n);
            let row_i = &tail[..n];
            let s = if j == i {
                row_i[i] - dot(&row_i[..j], &row_i[..j])
            } else {
                let row_j = &head[j * n..j * n + n];
                (row_i[j] - dot(&row_i[..j], &row_j[..j])) / row_j[j]
            };
            if j == i {
                if !(s > 0.0) || !s.is_finite() {
                    return false;
                }
                tail[i] = s.sqrt();
            } else {
                tail[j] = s;
            }
        }
        for v in &mut a[i * n + i + 1..(i + 1) * n] {
            *v = 0.0;
        }
    }
    true
}

/// Jitter ladder used before a factorization is declared singular.
pub const JITTER_LADDER: [f64; 8] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

/// Cholesky factor of `k + jitter·I`, escalating the jitter along
/// [`JITTER_LADDER`]. Returns the factor and the jitter that succeeded.
pub fn cholesky_with_jitter(k: &[f64], n: usize) -> Result<(Vec<f64>, f64)> {
    for &jitter in &JITTER_LADDER {
        let mut l = k.to_vec();
        for i in 0..n {
            l[i * n + i] += jitter;
        }
        if cholesky_in_place(&mut l, n) {
            return Ok((l, jitter));
        }
    }
    Err(Error::Fit(format!(
        "kernel matrix ({n}×{n}) is not positive definite even with jitter {:e}",
        JITTER_LADDER[JITTER_LADDER.len() - 1]
    )))
}

/// Solves `L x = b` in place.
pub fn solve_lower_in_place(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let s = b[i] - dot(&l[i * n..i * n + i], &b[..i]);
        b[i] = s / l[i * n + i];
    }
}

/// Solves `Lᵀ x = b` in place.
pub fn solve_upper_t_in_place(l: &[f64], n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let xi = b[i] / l[i * n + i];
        b[i] = xi;
        // b[j] -= L[i][j] * x_i for j < i
        axpy(-xi, &l[i * n..i * n + i], &mut b[..i]);
    }
}

/// `L⁻ᵀ` (upper triangular, row-major): row `j` holds column `j` of `L⁻¹`.
fn inverse_transposed(l: &[f64], n: usize) -> Vec<f64> {
    let mut u = vec![0.0; n * n];
    for j in 0..n {
        let row = &mut u[j * n..(j + 1) * n];
        row[j] = 1.0 / l[j * n + j];
        for i in j + 1..n {
            let s = dot(&l[i * n + j..i * n + i], &row[j..i]);
            row[i] = -s / l[i * n + i];
        }
    }
    u
}

/// `L⁻¹` for a lower-triangular `L`, row-major.
pub fn lower_inverse(l: &[f64], n: usize) -> Vec<f64> {
    let u = inverse_transposed(l, n);
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            out[i * n + j] = u[j * n + i];
        }
    }
    out
}

/// `(L Lᵀ)⁻¹` as a full row-major symmetric matrix.
pub fn cholesky_inverse(l: &[f64], n: usize) -> Vec<f64> {
    let u = inverse_transposed(l, n);
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = dot(&u[i * n + j..(i + 1) * n], &u[j * n + j..(j + 1) * n]);
            inv[i * n + j] = v;
            inv[j * n + i] = v;
        }
    }
    inv
}
