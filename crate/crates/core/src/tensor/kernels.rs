//! Dense matrix kernels. All of them accumulate into `out`.

use alloc::vec;

const TILE: usize = 4;

/// `out[m×n] += a[m×k] · b[k×n]`
pub(crate) fn gemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    let full_rows = m - m % TILE;
    let full_cols = n - n % TILE;
    let mut panel = vec![0.0; k * TILE];
    for i0 in (0..full_rows).step_by(TILE) {
        for (p, col) in panel.chunks_exact_mut(TILE).enumerate() {
            for (r, v) in col.iter_mut().enumerate() {
                *v = a[(i0 + r) * k + p];
            }
        }
        for j0 in (0..full_cols).step_by(TILE) {
            let mut acc = [[0.0f64; TILE]; TILE];
            for (av, brow) in panel.chunks_exact(TILE).zip(b.chunks_exact(n)) {
                let bv = &brow[j0..j0 + TILE];
                for r in 0..TILE {
                    for c in 0..TILE {
                        acc[r][c] += av[r] * bv[c];
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                let o = &mut out[(i0 + r) * n + j0..(i0 + r) * n + j0 + TILE];
                for c in 0..TILE {
                    o[c] += row[c];
                }
            }
        }
        if full_cols < n {
            edge(i0..i0 + TILE, full_cols..n, k, n, a, b, out);
        }
    }
    if full_rows < m {
        edge(full_rows..m, 0..n, k, n, a, b, out);
    }
}

fn edge(
    rows: core::ops::Range<usize>,
    cols: core::ops::Range<usize>,
    k: usize,
    n: usize,
    a: &[f64],
    b: &[f64],
    out: &mut [f64],
) {
    for i in rows {
        for j in cols.clone() {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] += acc;
        }
    }
}

fn transpose(rows: usize, cols: usize, x: &[f64]) -> alloc::vec::Vec<f64> {
    let mut t = vec![0.0; rows * cols];
    for r in 0..rows {
        for (c, &v) in x[r * cols..(r + 1) * cols].iter().enumerate() {
            t[c * rows + r] = v;
        }
    }
    t
}

/// `out[m×n] += a[m×k] · b[n×k]ᵀ`
pub(crate) fn gemm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    gemm_nn(m, k, n, a, &transpose(n, k, b), out);
}

/// `out[k×n] += a[m×k]ᵀ · b[m×n]`
pub(crate) fn gemm_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    gemm_nn(k, m, n, &transpose(m, k, a), b, out);
}
