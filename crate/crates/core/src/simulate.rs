//! Seeded generators for synthetic return processes.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::econometric::frac_diff_weights;

pub fn gaussian_noise<R: Rng>(rng: &mut R, n: usize, sigma: f64) -> Vec<f64> {
    (0..n)
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// ARMA(p, q) path `x_t = mu + sum phi_i (x_{t-i} - mu) + e_t + sum theta_j e_{t-j}`
/// after discarding `burn_in` initial draws.
pub fn arma_process<R: Rng>(
    rng: &mut R,
    phi: &[f64],
    theta: &[f64],
    mu: f64,
    sigma: f64,
    n: usize,
    burn_in: usize,
) -> Vec<f64> {
    let total = n + burn_in;
    let e = gaussian_noise(rng, total, sigma);
    let mut x = vec![0.0; total];
    for t in 0..total {
        let mut v = e[t];
        for (i, p) in phi.iter().enumerate() {
            if t > i {
                v += p * x[t - 1 - i];
            }
        }
        for (j, th) in theta.iter().enumerate() {
            if t > j {
                v += th * e[t - 1 - j];
            }
        }
        x[t] = v;
    }
    x.drain(..burn_in);
    x.iter_mut().for_each(|v| *v += mu);
    x
}

/// Fractionally integrated noise `(1 - B)^{-d} e_t`, using the truncated
/// moving-average expansion of depth `depth`.
pub fn frac_integrated_noise<R: Rng>(
    rng: &mut R,
    d: f64,
    sigma: f64,
    n: usize,
    depth: usize,
) -> Vec<f64> {
    let psi = frac_diff_weights(-d, depth).w;
    let e = gaussian_noise(rng, n + depth, sigma);
    (depth..n + depth)
        .map(|t| psi.iter().enumerate().map(|(k, w)| w * e[t - k]).sum())
        .collect()
}

/// Linear AR(1) plus a nonlinear reaction to the previous shock:
/// `y_t = phi y_{t-1} + e_t + a (|e_{t-1}| - sigma sqrt(2/pi))`, where `e` is
/// Gaussian with standard deviation `sigma` and `a` is dimensionless.
///
/// The nonlinear term has zero mean and is uncorrelated with every linear
/// function of past values of `e`, so no ARMA model can absorb it.
pub fn composite_process<R: Rng>(
    rng: &mut R,
    phi: f64,
    sigma: f64,
    amplitude: f64,
    n: usize,
) -> Vec<f64> {
    let burn_in = 200;
    let e = gaussian_noise(rng, n + burn_in, sigma);
    let centre = sigma * (2.0 / std::f64::consts::PI).sqrt();
    let mut y = vec![0.0; n + burn_in];
    for t in 1..n + burn_in {
        y[t] = phi * y[t - 1] + e[t] + amplitude * (e[t - 1].abs() - centre);
    }
    y.drain(..burn_in);
    y
}
