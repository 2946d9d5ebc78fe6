//! Log-sum-exp helpers with max subtraction.

/// `log(exp(a) + exp(b))`.
#[inline]
pub fn lse2(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Largest entry, `-inf` for an empty slice.
#[inline]
pub fn max(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `log(sum(exp(xs)))`.
pub fn lse(xs: &[f64]) -> f64 {
    let m = max(xs);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// Subtracts `lse(xs)` in place; returns the subtracted constant.
pub fn normalize(xs: &mut [f64]) -> f64 {
    let z = lse(xs);
    if z.is_finite() {
        for x in xs.iter_mut() {
            *x -= z;
        }
    }
    z
}

/// `exp` of a log-probability row into `out`.
pub fn exp_into(log_row: &[f64], out: &mut [f64]) {
    for (o, &l) in out.iter_mut().zip(log_row) {
        *o = l.exp();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lse2_handles_infinities() {
        assert_eq!(lse2(f64::NEG_INFINITY, f64::NEG_INFINITY), f64::NEG_INFINITY);
        assert_eq!(lse2(f64::NEG_INFINITY, 1.5), 1.5);
        assert!((lse2(0.0, 0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn lse_large_magnitudes() {
        let xs = [-1000.0, -1000.0];
        assert!((lse(&xs) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
        let xs = [800.0, 0.0];
        assert!((lse(&xs) - 800.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_row() {
        let mut xs = [1f64.ln(), 3f64.ln()];
        normalize(&mut xs);
        assert!((xs[0].exp() - 0.25).abs() < 1e-15);
        assert!((xs[1].exp() - 0.75).abs() < 1e-15);
    }
}
