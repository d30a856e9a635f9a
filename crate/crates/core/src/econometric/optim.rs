//! Derivative-free minimisation used by conditional-sum-of-squares fitting.

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    pub initial_step: f64,
    pub f_tol: f64,
    pub x_tol: f64,
    pub max_evals: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            initial_step: 0.1,
            f_tol: 1e-10,
            x_tol: 1e-7,
            max_evals: 4000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Nelder-Mead simplex search with the standard coefficients
/// (reflection 1, expansion 2, contraction 1/2, shrink 1/2).
///
/// Deterministic: the initial simplex is `x0` plus `initial_step` along each
/// axis, and ties are broken by vertex order.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], opts: &NelderMeadOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    if n == 0 {
        return Minimum {
            x: Vec::new(),
            value: f(x0),
            evals: 1,
            converged: true,
        };
    }
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += opts.initial_step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v, &mut evals)).collect();
    let mut order: Vec<usize> = (0..=n).collect();
    let mut converged = false;

    while evals < opts.max_evals {
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        let best = order[0];
        let worst = order[n];
        let second_worst = order[n - 1];

        let f_spread = (values[worst] - values[best]).abs();
        let x_spread = simplex
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[best]).map(|(a, b)| (a - b).abs()))
            .fold(0.0f64, f64::max);
        if f_spread <= opts.f_tol * (values[best].abs() + 1e-300) && x_spread <= opts.x_tol
            || values[best].is_finite() && f_spread == 0.0 && x_spread <= opts.x_tol
        {
            converged = true;
            break;
        }

        let mut centroid = vec![0.0; n];
        for &idx in order.iter().take(n) {
            for (c, x) in centroid.iter_mut().zip(&simplex[idx]) {
                *c += x / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[worst])
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };

        let reflected = along(-1.0);
        let f_r = eval(&reflected, &mut evals);
        if f_r < values[best] {
            let expanded = along(-2.0);
            let f_e = eval(&expanded, &mut evals);
            if f_e < f_r {
                simplex[worst] = expanded;
                values[worst] = f_e;
            } else {
                simplex[worst] = reflected;
                values[worst] = f_r;
            }
            continue;
        }
        if f_r < values[second_worst] {
            simplex[worst] = reflected;
            values[worst] = f_r;
            continue;
        }
        let (contracted, f_c) = if f_r < values[worst] {
            let c = along(-0.5);
            let v = eval(&c, &mut evals);
            (c, v)
        } else {
            let c = along(0.5);
            let v = eval(&c, &mut evals);
            (c, v)
        };
        if f_c < values[worst].min(f_r) {
            simplex[worst] = contracted;
            values[worst] = f_c;
            continue;
        }
        let anchor = simplex[best].clone();
        for &idx in order.iter().skip(1) {
            for (x, a) in simplex[idx].iter_mut().zip(&anchor) {
                *x = a + 0.5 * (*x - a);
            }
            values[idx] = eval(&simplex[idx], &mut evals);
        }
    }

    let best = (0..=n)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)))
        .unwrap_or(0);
    Minimum {
        x: simplex[best].clone(),
        value: values[best],
        evals,
        converged,
    }
}

/// Golden-section search for a unimodal function on `[lo, hi]`.
pub fn golden_section<F>(mut f: F, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - ratio * (hi - lo);
    let mut b = lo + ratio * (hi - lo);
    let mut fa = f(a);
    let mut fb = f(b);
    while hi - lo > tol {
        if fa <= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - ratio * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + ratio * (hi - lo);
            fb = f(b);
        }
    }
    if fa <= fb {
        (a, fa)
    } else {
        (b, fb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let opts = NelderMeadOptions {
            max_evals: 20_000,
            ..Default::default()
        };
        let m = nelder_mead(f, &[-1.2, 1.0], &opts);
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-3 && (m.x[1] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn quadratic_bowl_is_deterministic() {
        let f = |x: &[f64]| {
            x.iter()
                .enumerate()
                .map(|(i, v)| (v - i as f64).powi(2))
                .sum()
        };
        let a = nelder_mead(f, &[0.0; 4], &NelderMeadOptions::default());
        let b = nelder_mead(f, &[0.0; 4], &NelderMeadOptions::default());
        assert_eq!(a.x, b.x);
        for (i, v) in a.x.iter().enumerate() {
            assert!((v - i as f64).abs() < 1e-3);
        }
    }

    #[test]
    fn golden_parabola() {
        let (x, fx) = golden_section(|x| (x - 0.3).powi(2), -1.0, 1.0, 1e-8);
        assert!((x - 0.3).abs() < 1e-6);
        assert!(fx < 1e-10);
    }
}
