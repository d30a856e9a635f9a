//! Conditional-sum-of-squares machinery for ARMA(p, q) on a prepared series.

use nalgebra::{DMatrix, DVector};

use super::optim::{nelder_mead, NelderMeadOptions};

/// True when `1 - sum phi_i z^i` has every root outside the unit circle.
///
/// Runs the Durbin-Levinson recursion backwards; the polynomial is stable
/// exactly when every reflection coefficient has modulus below one.
pub fn is_stationary(phi: &[f64]) -> bool {
    let mut a = phi.to_vec();
    while let Some(&kappa) = a.last() {
        if !(kappa.abs() < 1.0) {
            return false;
        }
        let k = a.len();
        let denom = 1.0 - kappa * kappa;
        let prev = a.clone();
        for i in 1..k {
            a[i - 1] = (prev[i - 1] + kappa * prev[k - 1 - i]) / denom;
        }
        a.pop();
    }
    true
}

/// True when `1 + sum theta_j z^j` has every root outside the unit circle.
pub fn is_invertible(theta: &[f64]) -> bool {
    let neg: Vec<f64> = theta.iter().map(|t| -t).collect();
    is_stationary(&neg)
}

/// One-step residuals with zero pre-sample errors; entries before `warmup`
/// are left at zero. Returns the residual vector and the sum of squares over
/// `warmup..`.
pub fn css_residuals(y: &[f64], phi: &[f64], theta: &[f64], warmup: usize) -> (Vec<f64>, f64) {
    let n = y.len();
    let mut e = vec![0.0; n];
    let mut ss = 0.0;
    for t in warmup..n {
        let mut pred = 0.0;
        for (i, p) in phi.iter().enumerate() {
            pred += p * y[t - 1 - i];
        }
        for (j, th) in theta.iter().enumerate() {
            if t > j {
                pred += th * e[t - 1 - j];
            }
        }
        let r = y[t] - pred;
        e[t] = r;
        ss += r * r;
    }
    (e, ss)
}

/// Conditional mean of the next value after `y` given the residual trace.
pub fn next_value(y: &[f64], e: &[f64], phi: &[f64], theta: &[f64]) -> f64 {
    let n = y.len();
    let mut pred = 0.0;
    for (i, p) in phi.iter().enumerate() {
        if n > i {
            pred += p * y[n - 1 - i];
        }
    }
    for (j, th) in theta.iter().enumerate() {
        if n > j {
            pred += th * e[n - 1 - j];
        }
    }
    pred
}

#[derive(Debug, Clone)]
pub struct ArmaFit {
    pub phi: Vec<f64>,
    pub theta: Vec<f64>,
    pub sum_squares: f64,
    pub n_eff: usize,
    pub converged: bool,
}

impl ArmaFit {
    pub fn sigma2(&self) -> f64 {
        self.sum_squares / self.n_eff as f64
    }

    pub fn aic(&self) -> f64 {
        let k = (self.phi.len() + self.theta.len() + 1) as f64;
        self.n_eff as f64 * self.sigma2().ln() + 2.0 * k
    }
}

fn least_squares(rows: &[Vec<f64>], target: &[f64]) -> Option<Vec<f64>> {
    let k = rows.first()?.len();
    if k == 0 || rows.len() <= k {
        return None;
    }
    let x = DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j]);
    let y = DVector::from_column_slice(target);
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * y;
    let chol = xtx.cholesky()?;
    Some(chol.solve(&xty).iter().copied().collect())
}

/// Hannan-Rissanen two-step regression estimate, used as the optimiser's
/// starting point.
fn initial_guess(y: &[f64], p: usize, q: usize) -> Vec<f64> {
    let n = y.len();
    let fallback = vec![0.0; p + q];
    let proxy_errors = if q > 0 {
        let m = (p + q + 5).max(10).min(n / 4);
        if m == 0 || n <= 2 * m {
            return fallback;
        }
        let rows: Vec<Vec<f64>> = (m..n)
            .map(|t| (1..=m).map(|i| y[t - i]).collect())
            .collect();
        let Some(ar) = least_squares(&rows, &y[m..]) else {
            return fallback;
        };
        let mut e = vec![0.0; n];
        for t in m..n {
            e[t] = y[t] - (1..=m).map(|i| ar[i - 1] * y[t - i]).sum::<f64>();
        }
        Some((m, e))
    } else {
        None
    };
    let start = proxy_errors.as_ref().map_or(p, |(m, _)| (m + q).max(p));
    if n <= start + p + q + 1 {
        return fallback;
    }
    let rows: Vec<Vec<f64>> = (start..n)
        .map(|t| {
            let mut r: Vec<f64> = (1..=p).map(|i| y[t - i]).collect();
            if let Some((_, e)) = &proxy_errors {
                r.extend((1..=q).map(|j| e[t - j]));
            }
            r
        })
        .collect();
    let Some(mut beta) = least_squares(&rows, &y[start..]) else {
        return fallback;
    };
    for _ in 0..60 {
        if beta.iter().all(|b| b.is_finite())
            && is_stationary(&beta[..p])
            && is_invertible(&beta[p..])
        {
            return beta;
        }
        beta.iter_mut().for_each(|b| *b *= 0.9);
    }
    fallback
}

/// CSS estimate of ARMA(p, q) on an already demeaned series.
pub fn fit_arma(y: &[f64], p: usize, q: usize) -> Option<ArmaFit> {
    let warmup = p.max(q);
    let n_eff = y.len().checked_sub(warmup)?;
    if n_eff <= p + q + 1 {
        return None;
    }
    let objective = |beta: &[f64]| {
        let (phi, theta) = beta.split_at(p);
        if !is_stationary(phi) || !is_invertible(theta) {
            return f64::INFINITY;
        }
        css_residuals(y, phi, theta, warmup).1
    };

    let x0 = initial_guess(y, p, q);
    let (beta, converged) = if p + q == 0 {
        (Vec::new(), true)
    } else {
        let opts = NelderMeadOptions {
            initial_step: 0.05,
            max_evals: 600 * (p + q),
            ..Default::default()
        };
        let first = nelder_mead(objective, &x0, &opts);
        // one restart from the best vertex guards against a collapsed simplex
        let second = nelder_mead(
            objective,
            &first.x,
            &NelderMeadOptions {
                initial_step: 0.01,
                ..opts
            },
        );
        if second.value <= first.value {
            (second.x, second.converged || first.converged)
        } else {
            (first.x, first.converged)
        }
    };
    let (phi, theta) = beta.split_at(p);
    let sum_squares = objective(&beta);
    if !sum_squares.is_finite() || sum_squares <= 0.0 {
        return None;
    }
    Some(ArmaFit {
        phi: phi.to_vec(),
        theta: theta.to_vec(),
        sum_squares,
        n_eff,
        converged,
    })
}
