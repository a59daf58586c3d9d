//! Small numeric helpers shared across modules.
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

/// Exponent bound used before every exponential of a weight exponent.
pub const EXP_CLAMP: f64 = 700.0;

/// `exp(x)` with `x` clamped to `[-EXP_CLAMP, EXP_CLAMP]`. `-inf` maps to `e^{-700}`.
#[inline]
pub fn exp_clamped(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    x.max(-EXP_CLAMP).min(EXP_CLAMP).exp()
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Least-squares slope of `log(err)` against `log(h)`.
pub fn observed_order(h: &[f64], err: &[f64]) -> f64 {
    assert_eq!(h.len(), err.len());
    let xs: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = err.iter().map(|v| v.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Median of a slice (average of the two middle values for even length).
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamping_keeps_exponentials_finite() {
        assert!(exp_clamped(1e6).is_finite());
        assert!(exp_clamped(f64::NEG_INFINITY) > 0.0);
        assert_eq!(exp_clamped(0.0), 1.0);
    }

    #[test]
    fn order_of_exact_power_law() {
        let h = [0.1, 0.05, 0.025];
        let e: Vec<f64> = h.iter().map(|x| 3.0 * x * x).collect();
        assert!((observed_order(&h, &e) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
