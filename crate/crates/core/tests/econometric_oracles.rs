//! Simulate-and-refit checks for the linear estimators.

use hybridcast::econometric::{
    arima_candidates, fit_arfima, fit_arfima_order, fit_arima, fit_arima_order, frac_diff_weights,
    ArfimaOptions, ArimaOrder, OrderBounds,
};
use hybridcast::simulate::{arma_process, frac_integrated_noise, gaussian_noise};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn ar1_simulate_and_refit() {
    let phi = 0.6;
    let n = 2000;
    let se = ((1.0 - phi * phi) / n as f64).sqrt();
    let x = arma_process(&mut rng(1), &[phi], &[], 0.0, 0.01, n, 500);

    let selected = fit_arima(&x, &OrderBounds::default()).unwrap();
    assert!(selected.order.p >= 1, "selected {:?}", selected.order);

    let fixed = fit_arima_order(&x, ArimaOrder::new(1, 0, 0)).unwrap();
    assert!(
        (fixed.phi[0] - phi).abs() <= 3.0 * se,
        "phi_hat {}",
        fixed.phi[0]
    );
    assert!((0.52..=0.68).contains(&fixed.phi[0]));
}

#[test]
fn ma1_simulate_and_refit_over_seeds() {
    let theta = 0.4;
    let n = 2000;
    let se = ((1.0 - theta * theta) / n as f64).sqrt();
    let passes = (0..10)
        .filter(|&seed| {
            let x = arma_process(&mut rng(100 + seed), &[], &[theta], 0.0, 0.01, n, 500);
            let m = fit_arima_order(&x, ArimaOrder::new(0, 0, 1)).unwrap();
            (m.theta[0] - theta).abs() <= 3.0 * se
        })
        .count();
    assert!(passes >= 9, "{passes}/10");
}

#[test]
fn white_noise_forecasts_stay_near_mean() {
    let sigma = 0.01;
    let x: Vec<f64> = gaussian_noise(&mut rng(5), 2000, sigma)
        .into_iter()
        .map(|v| v + 0.0005)
        .collect();
    let m = fit_arima(&x, &OrderBounds::default()).unwrap();
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let mut dev = 0.0;
    let count = 200;
    for t in (x.len() - count)..x.len() {
        dev += (m.forecast_one(&x[..t]).unwrap() - mean).abs();
    }
    assert!(dev / (count as f64) < 0.1 * sigma);
}

#[test]
fn selected_order_has_minimal_aic() {
    let x = arma_process(&mut rng(9), &[0.3], &[0.2], 0.0, 0.01, 400, 200);
    let bounds = OrderBounds {
        p_max: 2,
        d_max: 1,
        q_max: 2,
    };
    let best = fit_arima(&x, &bounds).unwrap();
    let all = arima_candidates(&x, &bounds).unwrap();
    assert!(all.len() >= 15);
    assert!(all.contains(&best));
    for m in &all {
        assert!(best.aic <= m.aic, "{:?} beats selection", m.order);
    }
}

#[test]
fn refits_are_bit_reproducible() {
    let x = arma_process(&mut rng(21), &[0.2], &[], 0.0, 0.01, 300, 100);
    let a = fit_arima(&x, &OrderBounds::default()).unwrap();
    let b = fit_arima(&x, &OrderBounds::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn forecast_matches_residual_identity() {
    let x = arma_process(&mut rng(3), &[0.5, -0.2], &[0.3], 0.001, 0.01, 500, 200);
    for m in [
        fit_arima(&x, &OrderBounds::default()).unwrap(),
        fit_arima_order(&x, ArimaOrder::new(1, 1, 1)).unwrap(),
        fit_arfima_order(&x, 0.2, 1, 1, 100).unwrap(),
    ] {
        let n = x.len();
        let last_residual = *m.residuals.last().unwrap();
        let forecast = m.forecast_one(&x[..n - 1]).unwrap();
        assert!(
            (forecast - (x[n - 1] - last_residual)).abs() < 1e-10,
            "{}",
            m.describe()
        );
        assert_eq!(m.residuals.len(), n - m.warmup);
    }
}

#[test]
fn arfima_recovers_fractional_order() {
    let x = frac_integrated_noise(&mut rng(17), 0.3, 0.01, 3000, 2000);
    let m = fit_arfima(&x, &OrderBounds::default(), &ArfimaOptions::default()).unwrap();
    assert!((0.15..=0.45).contains(&m.frac_d), "d_hat = {}", m.frac_d);
    assert!(m.frac_d.abs() < 0.5);
}

#[test]
fn arfima_on_white_noise_stays_near_zero() {
    let bounds = OrderBounds {
        p_max: 2,
        d_max: 0,
        q_max: 2,
    };
    let total: f64 = (0..20)
        .map(|seed| {
            let x = gaussian_noise(&mut rng(300 + seed), 600, 0.01);
            fit_arfima(&x, &bounds, &ArfimaOptions::default())
                .unwrap()
                .frac_d
                .abs()
        })
        .sum();
    assert!(total / 20.0 <= 0.1, "mean |d| = {}", total / 20.0);
}

#[test]
fn degenerate_grid_matches_arima() {
    let x = arma_process(&mut rng(8), &[0.4], &[], 0.0, 0.01, 600, 100);
    let bounds = OrderBounds {
        p_max: 2,
        d_max: 0,
        q_max: 2,
    };
    let opts = ArfimaOptions {
        d_grid: vec![0.0],
        ..Default::default()
    };
    let frac = fit_arfima(&x, &bounds, &opts).unwrap();
    let int = fit_arima(&x, &bounds).unwrap();
    assert_eq!((frac.order.p, frac.order.q), (int.order.p, int.order.q));
    for (a, b) in frac
        .phi
        .iter()
        .zip(&int.phi)
        .chain(frac.theta.iter().zip(&int.theta))
    {
        assert!((a - b).abs() < 1e-8);
    }
    assert_eq!(frac.frac_d, 0.0);
}

/// `(-1)^k C(d, k)` via the gamma-free product formula, summed independently
/// of the recurrence used by the library.
fn binomial_weight(d: f64, k: usize) -> f64 {
    let mut num = 1.0;
    let mut fact = 1.0;
    for i in 0..k {
        num *= d - i as f64;
        fact *= (i + 1) as f64;
    }
    let sign = if k.is_multiple_of(2) { 1.0 } else { -1.0 };
    sign * num / fact
}

#[test]
fn weights_match_direct_binomial() {
    for i in -4..=4 {
        let d = i as f64 * 0.1;
        let w = frac_diff_weights(d, 200).w;
        // the direct product over/underflows long before k = 200 only for
        // large |d|; for |d| < 0.5 each factor stays bounded
        for (k, wk) in w.iter().enumerate().take(171) {
            let direct = binomial_weight(d, k);
            assert!((wk - direct).abs() < 1e-10, "d={d} k={k}");
        }
    }
    for d in 0..=2 {
        let w = frac_diff_weights(d as f64, 5).w;
        let expected: Vec<f64> = (0..=5).map(|k| binomial_weight(d as f64, k)).collect();
        assert_eq!(w, expected);
    }
}
