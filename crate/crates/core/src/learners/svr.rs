//! Epsilon-insensitive support vector regression solved in the dual by
//! SMO-style pairwise updates with second-order working-set selection.

use serde::{Deserialize, Serialize};

use super::{check_input, FeatureMatrix, LearnerError, Regressor, Standardizer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Kernel {
    Linear,
    /// `(gamma <u, v> + 1)^degree` with `gamma = 1 / n_features`.
    Polynomial {
        degree: u32,
    },
    /// `exp(-gamma |u - v|^2)`.
    Rbf {
        gamma: f64,
    },
}

impl Kernel {
    pub fn eval(&self, u: &[f64], v: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => dot(u, v),
            Kernel::Polynomial { degree } => (dot(u, v) / u.len() as f64 + 1.0).powi(degree as i32),
            Kernel::Rbf { gamma } => {
                let d2: f64 = u.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum();
                (-gamma * d2).exp()
            }
        }
    }
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvrParams {
    pub kernel: Kernel,
    /// Box constraint on the dual coefficients (standardised target scale).
    pub c: f64,
    /// Half-width of the insensitive tube, in target units.
    pub epsilon: f64,
    /// Stopping tolerance on the maximal KKT violation.
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for SvrParams {
    fn default() -> Self {
        Self {
            kernel: Kernel::Rbf { gamma: 0.1 },
            c: 1.0,
            epsilon: 0.001,
            tolerance: 1e-3,
            max_iter: 1_000_000,
        }
    }
}

/// Trained SVR. Inputs are standardised with `scaler`; the target is
/// centred and scaled internally by `target_mean` / `target_scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    pub kernel: Kernel,
    pub c: f64,
    pub epsilon: f64,
    /// `alpha_i - alpha*_i` for each support vector, each within `[-C, C]`.
    pub alphas: Vec<f64>,
    /// Standardised feature rows of the support vectors.
    pub support_vectors: Vec<Vec<f64>>,
    pub b: f64,
    pub scaler: Standardizer,
    pub target_mean: f64,
    pub target_scale: f64,
    /// Set when the training target had no variance; the model is then the
    /// constant `target_mean`.
    pub degenerate: bool,
    pub iterations: usize,
    /// Dual objective sampled once per sweep of `n` iterations, plus the final
    /// value. Non-increasing by construction of the pairwise updates.
    pub objective_trace: Vec<f64>,
}

impl SvrModel {
    fn decision(&self, z: &[f64]) -> f64 {
        self.alphas
            .iter()
            .zip(&self.support_vectors)
            .map(|(a, sv)| a * self.kernel.eval(sv, z))
            .sum::<f64>()
            + self.b
    }
}

impl Regressor for SvrModel {
    fn n_features(&self) -> usize {
        self.scaler.mean.len()
    }

    fn predict(&self, rows: &[f64]) -> Result<f64, LearnerError> {
        check_input(rows, self.n_features())?;
        if self.degenerate {
            return Ok(self.target_mean);
        }
        let z = self.scaler.apply(rows);
        Ok(self.target_mean + self.target_scale * self.decision(&z))
    }
}

const TAU: f64 = 1e-12;

/// Solves `min 1/2 a'Qa + p'a  s.t.  s'a = 0, 0 <= a <= C` over the doubled
/// variable set `a = [alpha, alpha*]`, signs `s = [+1, -1]`.
struct Solver<'a> {
    kernel: &'a [f64],
    l: usize,
    c: f64,
    alpha: Vec<f64>,
    grad: Vec<f64>,
    p: Vec<f64>,
}

impl Solver<'_> {
    fn sign(&self, t: usize) -> f64 {
        if t < self.l {
            1.0
        } else {
            -1.0
        }
    }

    fn q(&self, i: usize, j: usize) -> f64 {
        self.sign(i) * self.sign(j) * self.kernel[(i % self.l) * self.l + j % self.l]
    }

    fn is_low(&self, t: usize) -> bool {
        if self.sign(t) > 0.0 {
            self.alpha[t] > 0.0
        } else {
            self.alpha[t] < self.c
        }
    }

    fn objective(&self) -> f64 {
        0.5 * self
            .alpha
            .iter()
            .zip(self.grad.iter().zip(&self.p))
            .map(|(a, (g, p))| a * (g + p))
            .sum::<f64>()
    }

    /// Second-order working-set selection; `None` once the maximal violation
    /// drops below `tol`.
    fn select(&self, tol: f64) -> Option<(usize, usize)> {
        let n = 2 * self.l;
        let l = self.l;
        let mut g_max = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..l {
            if self.alpha[t] < self.c && -self.grad[t] > g_max {
                g_max = -self.grad[t];
                i_sel = Some(t);
            }
        }
        for t in l..n {
            if self.alpha[t] > 0.0 && self.grad[t] > g_max {
                g_max = self.grad[t];
                i_sel = Some(t);
            }
        }
        let i = i_sel?;
        let mut g_max2 = f64::NEG_INFINITY;
        let mut best = f64::INFINITY;
        let mut j_sel = None;
        let k_ii = self.kernel[(i % l) * (l + 1)];
        let row_i = &self.kernel[(i % l) * l..(i % l + 1) * l];
        for t in 0..n {
            if !self.is_low(t) {
                continue;
            }
            let yg = self.sign(t) * self.grad[t];
            g_max2 = g_max2.max(yg);
            let b = g_max + yg;
            if b > 0.0 {
                let k_tt = self.kernel[(t % l) * (l + 1)];
                let a = k_ii + k_tt - 2.0 * row_i[t % l];
                let a = if a > 0.0 { a } else { TAU };
                let score = -(b * b) / a;
                if score <= best {
                    best = score;
                    j_sel = Some(t);
                }
            }
        }
        if g_max + g_max2 < tol {
            return None;
        }
        j_sel.map(|j| (i, j))
    }

    fn update(&mut self, i: usize, j: usize) {
        let c = self.c;
        let (old_i, old_j) = (self.alpha[i], self.alpha[j]);
        let q_ij = self.q(i, j);
        let q_ii = self.q(i, i);
        let q_jj = self.q(j, j);
        let (mut ai, mut aj) = (old_i, old_j);
        if self.sign(i) != self.sign(j) {
            let quad = (q_ii + q_jj + 2.0 * q_ij).max(TAU);
            let delta = (-self.grad[i] - self.grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let quad = (q_ii + q_jj - 2.0 * q_ij).max(TAU);
            let delta = (self.grad[i] - self.grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        self.alpha[i] = ai;
        self.alpha[j] = aj;
        let (di, dj) = (ai - old_i, aj - old_j);
        if di != 0.0 || dj != 0.0 {
            // Q(t, i) = s_t s_i K(t mod l, i mod l), so both halves share one kernel row
            let l = self.l;
            let (ci, cj) = (self.sign(i) * di, self.sign(j) * dj);
            let row_i = &self.kernel[(i % l) * l..(i % l + 1) * l];
            let row_j = &self.kernel[(j % l) * l..(j % l + 1) * l];
            let (pos, neg) = self.grad.split_at_mut(l);
            for (((gp, gn), ki), kj) in pos.iter_mut().zip(neg.iter_mut()).zip(row_i).zip(row_j) {
                let v = ci * ki + cj * kj;
                *gp += v;
                *gn -= v;
            }
        }
    }

    /// Offset from the free variables, or the midpoint of the feasible
    /// interval when none are free.
    fn rho(&self) -> f64 {
        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut sum_free, mut n_free) = (0.0, 0usize);
        for t in 0..2 * self.l {
            let yg = self.sign(t) * self.grad[t];
            let at_upper = self.alpha[t] >= self.c;
            let at_lower = self.alpha[t] <= 0.0;
            if at_upper {
                if self.sign(t) < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if at_lower {
                if self.sign(t) > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                n_free += 1;
                sum_free += yg;
            }
        }
        if n_free > 0 {
            sum_free / n_free as f64
        } else {
            (ub + lb) / 2.0
        }
    }
}

pub fn svr_fit(x: &FeatureMatrix, params: &SvrParams) -> Result<SvrModel, LearnerError> {
    if x.n_rows() < 2 {
        return Err(LearnerError::TooShort {
            needed: 2,
            got: x.n_rows(),
        });
    }
    if !(params.c > 0.0) || !(params.epsilon >= 0.0) || !(params.tolerance > 0.0) {
        return Err(LearnerError::InvalidParam(format!(
            "C = {}, epsilon = {}, tolerance = {}",
            params.c, params.epsilon, params.tolerance
        )));
    }
    if let Kernel::Rbf { gamma } = params.kernel {
        if !(gamma > 0.0) {
            return Err(LearnerError::InvalidParam(format!("rbf gamma = {gamma}")));
        }
    }

    let l = x.n_rows();
    let scaler = Standardizer::fit(x.data(), x.n_cols());
    let rows: Vec<Vec<f64>> = (0..l).map(|i| scaler.apply(x.row(i))).collect();
    let y = x.target();
    let target_mean = y.iter().sum::<f64>() / l as f64;
    let var = y.iter().map(|v| (v - target_mean).powi(2)).sum::<f64>() / l as f64;
    let target_scale = var.sqrt();

    let mut model = SvrModel {
        kernel: params.kernel,
        c: params.c,
        epsilon: params.epsilon,
        alphas: Vec::new(),
        support_vectors: Vec::new(),
        b: 0.0,
        scaler,
        target_mean,
        target_scale,
        degenerate: false,
        iterations: 0,
        objective_trace: Vec::new(),
    };
    let magnitude = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(target_scale > 1e-12 * magnitude) || target_scale == 0.0 {
        model.degenerate = true;
        model.target_scale = 1.0;
        return Ok(model);
    }

    let z: Vec<f64> = y.iter().map(|v| (v - target_mean) / target_scale).collect();
    let eps = params.epsilon / target_scale;
    let mut kernel = vec![0.0; l * l];
    for i in 0..l {
        for j in i..l {
            let k = params.kernel.eval(&rows[i], &rows[j]);
            kernel[i * l + j] = k;
            kernel[j * l + i] = k;
        }
    }
    let p: Vec<f64> = (0..2 * l)
        .map(|t| if t < l { eps - z[t] } else { eps + z[t - l] })
        .collect();
    let mut solver = Solver {
        kernel: &kernel,
        l,
        c: params.c,
        alpha: vec![0.0; 2 * l],
        grad: p.clone(),
        p,
    };

    let mut iter = 0;
    while iter < params.max_iter {
        let Some((i, j)) = solver.select(params.tolerance) else {
            break;
        };
        if iter % l == 0 {
            model.objective_trace.push(solver.objective());
        }
        solver.update(i, j);
        iter += 1;
    }
    model.objective_trace.push(solver.objective());
    model.iterations = iter;
    model.b = -solver.rho();
    for i in 0..l {
        let coef = solver.alpha[i] - solver.alpha[i + l];
        if coef != 0.0 {
            model.alphas.push(coef);
            model.support_vectors.push(rows[i].clone());
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn matrix(rows: &[Vec<f64>], y: &[f64]) -> FeatureMatrix {
        FeatureMatrix::new(rows[0].len(), rows.concat(), y.to_vec()).unwrap()
    }

    #[test]
    fn noiseless_line_fits_inside_tube() {
        let xs: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64 / 29.0]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x[0] + 1.0).collect();
        let params = SvrParams {
            kernel: Kernel::Linear,
            c: 10.0,
            epsilon: 0.01,
            ..Default::default()
        };
        let m = svr_fit(&matrix(&xs, &ys), &params).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert!((m.predict(x).unwrap() - y).abs() <= 0.02);
        }
        assert!(m.alphas.iter().all(|a| a.abs() <= params.c + 1e-12));
        for w in m.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        // a support vector sits on or inside the tube edge
        let sv = &m.support_vectors[0];
        let raw: Vec<f64> = sv
            .iter()
            .zip(&m.scaler.mean)
            .zip(&m.scaler.scale)
            .map(|((z, mu), s)| z * s + mu)
            .collect();
        assert!((m.predict(&raw).unwrap() - (2.0 * raw[0] + 1.0)).abs() <= 0.01 + 1e-3);
    }

    #[test]
    fn constant_target_is_flagged() {
        let xs: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let m = svr_fit(&matrix(&xs, &[0.7; 10]), &SvrParams::default()).unwrap();
        assert!(m.degenerate);
        assert!((m.predict(&[100.0, -3.0]).unwrap() - 0.7).abs() <= m.epsilon);
    }

    #[test]
    fn rbf_beats_linear_on_xor() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..120 {
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = rng.random_range(-1.0..1.0);
            xs.push(vec![a, b]);
            ys.push(if (a > 0.0) == (b > 0.0) { 1.0 } else { -1.0 });
        }
        let m = matrix(&xs, &ys);
        let mse = |kernel| {
            let model = svr_fit(
                &m,
                &SvrParams {
                    kernel,
                    c: 10.0,
                    epsilon: 0.05,
                    ..Default::default()
                },
            )
            .unwrap();
            xs.iter()
                .zip(&ys)
                .map(|(x, y)| (model.predict(x).unwrap() - y).powi(2))
                .sum::<f64>()
                / ys.len() as f64
        };
        let rbf = mse(Kernel::Rbf { gamma: 2.0 });
        let lin = mse(Kernel::Linear);
        assert!(rbf < lin, "rbf {rbf} linear {lin}");
        assert!(mse(Kernel::Polynomial { degree: 2 }) < lin);
    }

    #[test]
    fn dimension_checked() {
        let xs: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
        let m = svr_fit(
            &matrix(&xs, &[1.0, 2.0, 3.0, 4.0, 6.0]),
            &SvrParams::default(),
        )
        .unwrap();
        assert!(matches!(
            m.predict(&[1.0, 2.0]),
            Err(LearnerError::DimensionMismatch { .. })
        ));
        assert!(svr_fit(
            &matrix(&xs, &[1.0, 2.0, 3.0, 4.0, 6.0]),
            &SvrParams {
                c: 0.0,
                ..Default::default()
            }
        )
        .is_err());
    }
}
