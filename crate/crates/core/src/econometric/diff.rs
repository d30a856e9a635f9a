//! Integer and fractional differencing with the lag operator.

use super::EconError;

/// Applies `(1 - B)^d` for integer `d`; output is `d` shorter than the input.
pub fn difference(x: &[f64], d: usize) -> Result<Vec<f64>, EconError> {
    if x.len() <= d {
        return Err(EconError::TooShort {
            needed: d + 1,
            got: x.len(),
        });
    }
    let mut out = x.to_vec();
    for _ in 0..d {
        out = out.windows(2).map(|w| w[1] - w[0]).collect();
    }
    Ok(out)
}

/// Binomial-expansion coefficients of `(1 - B)^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct FracWeights {
    pub d: f64,
    pub w: Vec<f64>,
}

impl FracWeights {
    /// Truncation depth actually needed: trailing exact zeros are dropped, so
    /// integer orders collapse to their finite expansion.
    pub fn effective_depth(&self) -> usize {
        self.w.iter().rposition(|w| *w != 0.0).unwrap_or(0)
    }

    pub fn sum(&self) -> f64 {
        self.w.iter().sum()
    }
}

/// `w_0 = 1`, `w_k = -w_{k-1} (d - k + 1) / k` for `k = 1..=depth`.
pub fn frac_diff_weights(d: f64, depth: usize) -> FracWeights {
    let mut w = Vec::with_capacity(depth + 1);
    w.push(1.0);
    for k in 1..=depth {
        let prev = w[k - 1];
        w.push(-prev * (d - k as f64 + 1.0) / k as f64);
    }
    FracWeights { d, w }
}

/// `y_t = sum_{k=0..K} w_k x_{t-k}` for `t >= K`; output is `K` shorter.
pub fn frac_difference(x: &[f64], d: f64, depth: usize) -> Result<Vec<f64>, EconError> {
    let weights = frac_diff_weights(d, depth);
    apply_weights(x, &weights.w)
}

pub(crate) fn apply_weights(x: &[f64], w: &[f64]) -> Result<Vec<f64>, EconError> {
    let depth = w.len() - 1;
    if x.len() <= depth {
        return Err(EconError::TooShort {
            needed: depth + 1,
            got: x.len(),
        });
    }
    Ok((depth..x.len())
        .map(|t| w.iter().enumerate().map(|(k, wk)| wk * x[t - k]).sum())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn integer_differences() {
        assert_eq!(difference(&[1.0, 2.0, 3.0, 4.0], 1).unwrap(), vec![1.0; 3]);
        assert_eq!(
            difference(&[1.0, 4.0, 9.0, 16.0], 2).unwrap(),
            vec![2.0, 2.0]
        );
        let x = [0.3, -1.2, 5.0];
        assert_eq!(difference(&x, 0).unwrap(), x.to_vec());
        assert!(difference(&[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn weights_small_cases() {
        assert_eq!(frac_diff_weights(1.0, 3).w, vec![1.0, -1.0, 0.0, 0.0]);
        assert_eq!(frac_diff_weights(0.0, 3).w, vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(frac_diff_weights(2.0, 3).w, vec![1.0, -2.0, 1.0, 0.0]);
        let w = frac_diff_weights(0.4, 2).w;
        assert!((w[1] + 0.4).abs() < 1e-15);
        assert!((w[2] + 0.12).abs() < 1e-15);
        assert_eq!(frac_diff_weights(0.0, 100).effective_depth(), 0);
        assert_eq!(frac_diff_weights(1.0, 100).effective_depth(), 1);
    }

    #[test]
    fn frac_difference_degenerate_orders() {
        let x = [1.0, 3.0, 6.0, 10.0, 15.0];
        assert_eq!(frac_difference(&x, 0.0, 2).unwrap(), x[2..].to_vec());
        assert_eq!(
            frac_difference(&x, 1.0, 1).unwrap(),
            difference(&x, 1).unwrap()
        );
        assert!(frac_difference(&x, 0.3, 5).is_err());
    }

    #[test]
    fn frac_difference_matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (d, depth) = (0.3, 5);
        // generalised binomial coefficient (-1)^k C(d, k) computed from scratch
        let coef = |k: usize| {
            let mut c = 1.0;
            for i in 0..k {
                c *= (d - i as f64) / (i as f64 + 1.0);
            }
            if k % 2 == 1 {
                -c
            } else {
                c
            }
        };
        let got = frac_difference(&x, d, depth).unwrap();
        assert_eq!(got.len(), 15);
        for (i, t) in (depth..20).enumerate() {
            let mut acc = 0.0;
            for k in 0..=depth {
                acc += coef(k) * x[t - k];
            }
            assert!((got[i] - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn partial_sums_positive_and_decreasing() {
        for &d in &[0.1, 0.3, 0.5, 0.9] {
            let w = frac_diff_weights(d, 1000).w;
            let mut sum = 0.0;
            let mut prev = f64::INFINITY;
            for wk in w {
                sum += wk;
                assert!(sum > 0.0);
                assert!(sum <= prev);
                prev = sum;
            }
        }
    }
}
