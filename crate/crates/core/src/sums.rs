//! Compensated (double-double) sums for the readout statistics.
//!
//! A quantity is carried as an unevaluated pair `hi + lo` with
//! `hi = fl(hi + lo)`, accurate to about `2^-104` of the sum of absolute
//! terms. `hi` is then the correctly rounded value of the exact sum for all
//! practical inputs, whatever the order or grouping of the additions, so
//! statistics built by streaming, by one pass or by summing over clients
//! round to the same `f64` matrix.

use nalgebra::DMatrix;

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let z = s - a;
    (s, (a - (s - z)) + (b - z))
}

#[inline]
fn fast_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

/// `Σ a_k b_k` as a normalized pair.
fn dot2(a: &[f64], b: &[f64]) -> (f64, f64) {
    let (mut s, mut c) = (0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let p = x * y;
        let e = x.mul_add(y, -p);
        let (t, r) = two_sum(s, p);
        s = t;
        c += r + e;
    }
    fast_two_sum(s, c)
}

/// `(hi, lo) += (b_hi, b_lo)`, renormalized.
#[inline]
pub(crate) fn add(hi: f64, lo: f64, b_hi: f64, b_lo: f64) -> (f64, f64) {
    let (s, e) = two_sum(hi, b_hi);
    fast_two_sum(s, e + lo + b_lo)
}

/// Elementwise `add` over equally shaped matrices.
pub(crate) fn add_into(hi: &mut DMatrix<f64>, lo: &mut DMatrix<f64>, b_hi: &DMatrix<f64>, b_lo: &DMatrix<f64>) {
    for (((h, l), &bh), &bl) in hi.iter_mut().zip(lo.iter_mut()).zip(b_hi.iter()).zip(b_lo.iter()) {
        (*h, *l) = add(*h, *l, bh, bl);
    }
}

/// Rows of `m` as contiguous slices (the transpose, column-major).
fn rows_of(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.transpose()
}

/// `A Bᵀ` for `A: r × n`, `B: c × n`.
pub(crate) fn cross(a: &DMatrix<f64>, b: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (at, bt) = (rows_of(a), rows_of(b));
    let mut hi = DMatrix::zeros(a.nrows(), b.nrows());
    let mut lo = DMatrix::zeros(a.nrows(), b.nrows());
    for j in 0..b.nrows() {
        let bj = bt.column(j);
        for i in 0..a.nrows() {
            (hi[(i, j)], lo[(i, j)]) = dot2(at.column(i).as_slice(), bj.as_slice());
        }
    }
    (hi, lo)
}

/// `A Aᵀ`, exactly symmetric.
pub(crate) fn gram(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let at = rows_of(a);
    let n = a.nrows();
    let mut hi = DMatrix::zeros(n, n);
    let mut lo = DMatrix::zeros(n, n);
    for j in 0..n {
        let aj = at.column(j);
        for i in j..n {
            let (h, l) = dot2(at.column(i).as_slice(), aj.as_slice());
            (hi[(i, j)], lo[(i, j)]) = (h, l);
            (hi[(j, i)], lo[(j, i)]) = (h, l);
        }
    }
    (hi, lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dot2_recovers_cancelled_terms() {
        // Plain f64 summation loses the first 1.0; the exact sum is 2.
        let a = [1e17, 1.0, -1e17, 1.0];
        let b = [1.0; 4];
        assert_eq!(dot2(&a, &b), (2.0, 0.0));
        let naive: f64 = a.iter().sum();
        assert_eq!(naive, 1.0);
    }

    #[test]
    fn products_keep_their_rounding_error() {
        let x = 1.0 + f64::EPSILON;
        // x² = 1 + 2ε + ε², the ε² term is lost by a plain product.
        let (hi, lo) = dot2(&[x], &[x]);
        assert_eq!(hi, 1.0 + 2.0 * f64::EPSILON);
        assert_eq!(lo, f64::EPSILON * f64::EPSILON);
    }

    #[test]
    fn gram_is_symmetric_and_matches_cross() {
        let a = DMatrix::from_fn(5, 9, |i, k| ((i * 7 + k * 3) % 11) as f64 / 11.0 - 0.4);
        let (g, gl) = gram(&a);
        let (c, cl) = cross(&a, &a);
        assert_eq!(g, g.transpose());
        assert_eq!((&g, &gl), (&c, &cl));
        assert!((&g - &a * a.transpose()).norm() <= 1e-14 * g.norm());
    }

    proptest! {
        #[test]
        fn grouping_does_not_change_the_rounded_sum(
            values in prop::collection::vec(-1e3f64..1e3, 2..60),
            cut_seed in any::<u64>(),
        ) {
            let n = values.len();
            let row = DMatrix::from_row_slice(1, n, &values);
            let (whole, _) = gram(&row);
            let cut = 1 + (cut_seed as usize) % (n - 1);
            let (mut hi, mut lo) = gram(&row.columns(0, cut).into_owned());
            let (bh, bl) = gram(&row.columns(cut, n - cut).into_owned());
            add_into(&mut hi, &mut lo, &bh, &bl);
            prop_assert_eq!(hi, whole);
        }
    }
}
