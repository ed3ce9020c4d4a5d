//! Raw numeric kernels shared by the graph ops and the value-level helpers.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

/// `c = op(a) · op(b) + beta · c` where `op(a)` is `m×k` and `op(b)` is `k×n`.
///
/// `a` is stored row-major as `m×k` (or `k×m` when `trans_a`), likewise `b`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    trans_a: bool,
    trans_b: bool,
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    b: &[f64],
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let a_shape = if trans_a { (k, m) } else { (m, k) };
    let b_shape = if trans_b { (n, k) } else { (k, n) };
    let av = ArrayView2::from_shape(a_shape, a).expect("gemm lhs shape");
    let bv = ArrayView2::from_shape(b_shape, b).expect("gemm rhs shape");
    let mut cv = ArrayViewMut2::from_shape((m, n), c).expect("gemm out shape");
    let av = if trans_a { av.reversed_axes() } else { av };
    let bv = if trans_b { bv.reversed_axes() } else { bv };
    general_mat_mul(1.0, &av, &bv, beta, &mut cv);
}

/// In-place softmax of one row; masked entries (`mask[i] == true`) get probability 0.
/// A fully masked row becomes all zeros.
pub(crate) fn softmax_row(row: &mut [f64], mask: Option<&[bool]>) {
    let keep = |i: usize| mask.is_none_or(|m| !m[i]);
    let mut max = f64::NEG_INFINITY;
    for (i, &x) in row.iter().enumerate() {
        if keep(i) && x > max {
            max = x;
        }
    }
    if max == f64::NEG_INFINITY {
        row.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let mut sum = 0.0;
    for (i, x) in row.iter_mut().enumerate() {
        if keep(i) {
            *x = (*x - max).exp();
            sum += *x;
        } else {
            *x = 0.0;
        }
    }
    row.iter_mut().for_each(|x| *x /= sum);
}

/// In-place log-softmax of one row.
pub(crate) fn log_softmax_row(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    row.iter_mut().for_each(|x| *x -= lse);
}

/// `Σ_k t_k (log t_k − logp_k)` with `0 · log 0 = 0`.
pub(crate) fn kl_row(target: &[f64], log_probs: &[f64]) -> f64 {
    target
        .iter()
        .zip(log_probs)
        .map(|(&t, &lp)| if t > 0.0 { t * (t.ln() - lp) } else { 0.0 })
        .sum()
}

/// Row-wise convex mixing: `out_r = a_r · wa_r + b_r · wb_r` over rows of `width`.
pub(crate) fn lerp_rows(a: &[f64], b: &[f64], wa: &[f64], wb: &[f64], width: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for (r, ((oa, ra), rb)) in out
        .chunks_mut(width)
        .zip(a.chunks(width))
        .zip(b.chunks(width))
        .enumerate()
    {
        for ((o, &x), &y) in oa.iter_mut().zip(ra).zip(rb) {
            *o = x * wa[r] + y * wb[r];
        }
    }
    out
}

/// Correctly rounded floating-point sum (Shewchuk partials, as in Python's `math.fsum`).
///
/// Falls back to naive summation when any term is non-finite.
pub fn fsum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    let mut special = 0.0;
    let mut has_special = false;
    for v in values {
        if !v.is_finite() {
            has_special = true;
            special += v;
            continue;
        }
        let mut x = v;
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }
    if has_special {
        return special + partials.iter().sum::<f64>();
    }
    let Some(mut n) = partials.len().checked_sub(1) else {
        return 0.0;
    };
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        n -= 1;
        let x = hi;
        let y = partials[n];
        hi = x + y;
        lo = y - (hi - x);
        if lo != 0.0 {
            break;
        }
    }
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        if y == x - hi {
            hi = x;
        }
    }
    hi
}
