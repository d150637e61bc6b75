//! Log-domain scalar helpers shared by the CTC recursions, the softmax
//! layers and the scoring code. Everything runs in natural log, f64.

use crate::error::{Error, Result};

/// Additive identity of the log domain (probability zero).
pub const LOG_ZERO: f64 = f64::NEG_INFINITY;

/// log(exp(a) + exp(b)) without leaving the log domain.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == LOG_ZERO {
        return b;
    }
    if b == LOG_ZERO {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Numerically stable log Σ exp(v_i).
pub fn logsumexp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::EmptyInput("logsumexp of empty vector".into()));
    }
    Ok(logsumexp_unchecked(v))
}

pub(crate) fn logsumexp_unchecked(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(LOG_ZERO, f64::max);
    if max == LOG_ZERO {
        return LOG_ZERO;
    }
    let sum: f64 = v.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// v_i − logsumexp(v), so that the output sums to one in probability space.
pub fn log_softmax(v: &[f64]) -> Vec<f64> {
    let lse = logsumexp_unchecked(v);
    v.iter().map(|&x| x - lse).collect()
}

/// In-place variant used on rows of score matrices.
pub(crate) fn log_softmax_inplace(v: &mut [f64]) {
    let lse = logsumexp_unchecked(v);
    for x in v.iter_mut() {
        *x -= lse;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn logsumexp_equal_mass() {
        assert!((logsumexp(&[0.0, 0.0]).unwrap() - LN2).abs() < 1e-12);
    }

    #[test]
    fn logsumexp_ignores_zero_probability() {
        let x = -3.25;
        assert_eq!(logsumexp(&[LOG_ZERO, x]).unwrap(), x);
        assert_eq!(logsumexp(&[x, LOG_ZERO]).unwrap(), x);
    }

    #[test]
    fn logsumexp_stable_far_below_zero() {
        let v = logsumexp(&[-1000.0, -1000.0]).unwrap();
        assert!((v - (-1000.0 + LN2)).abs() < 1e-12);
        assert!(v.is_finite());
    }

    #[test]
    fn logsumexp_all_log_zero() {
        assert_eq!(logsumexp(&[LOG_ZERO, LOG_ZERO]).unwrap(), LOG_ZERO);
    }

    #[test]
    fn logsumexp_empty_is_error() {
        assert!(logsumexp(&[]).is_err());
    }

    #[test]
    fn log_add_matches_logsumexp() {
        for (a, b) in [(0.0, 0.0), (-5.0, -1.0), (-700.0, -701.0), (LOG_ZERO, -2.0)] {
            let want = logsumexp(&[a, b]).unwrap();
            assert!((log_add(a, b) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn log_softmax_symmetry() {
        let out = log_softmax(&[0.0, 0.0]);
        assert!((out[0] + LN2).abs() < 1e-12);
        assert!((out[1] + LN2).abs() < 1e-12);

        let out3 = log_softmax(&[1.0, 1.0, 1.0]);
        for y in out3 {
            assert!((y + 3f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn log_softmax_closed_form() {
        // closed form for [5, 0]: [-ln(1+e^-5), -5-ln(1+e^-5)]
        let out = log_softmax(&[5.0, 0.0]);
        let c = (-5.0f64).exp().ln_1p();
        assert!((out[0] - (-c)).abs() < 1e-12);
        assert!((out[1] - (-5.0 - c)).abs() < 1e-12);
    }

    #[test]
    fn log_softmax_normalizes() {
        let mut v = vec![0.3, -2.0, 11.0, 4.5, -7.25];
        let out = log_softmax(&v);
        assert!(logsumexp(&out).unwrap().abs() < 1e-9);
        log_softmax_inplace(&mut v);
        assert_eq!(v, out);
    }
}
