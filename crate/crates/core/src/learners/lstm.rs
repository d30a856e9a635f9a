//! Single-layer LSTM with a linear read-out of the final hidden state,
//! trained by backpropagation through time and clipped mini-batch SGD.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_input, FeatureMatrix, LearnerError, Regressor, Standardizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LstmParams {
    pub hidden_size: usize,
    pub sequence_length: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Global gradient-norm ceiling applied before every update.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for LstmParams {
    fn default() -> Self {
        Self {
            hidden_size: 8,
            sequence_length: 10,
            epochs: 100,
            learning_rate: 0.01,
            batch_size: 32,
            clip_norm: 1.0,
            seed: 0,
        }
    }
}

/// Parameters live in one flat vector laid out as
/// `W (4H x m) | U (4H x H) | b (4H) | w_out (H) | b_out`, gate blocks in the
/// order forget, input, candidate, output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmNetwork {
    pub input_size: usize,
    pub hidden_size: usize,
    pub sequence_length: usize,
    pub seed: u64,
    pub params: Vec<f64>,
    pub scaler: Standardizer,
    pub target_mean: f64,
    pub target_scale: f64,
    /// Mean mini-batch squared error on the standardised target per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Per-step activations of one forward pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LstmTrace {
    pub forget: Vec<Vec<f64>>,
    pub input: Vec<Vec<f64>>,
    pub candidate: Vec<Vec<f64>>,
    pub output: Vec<Vec<f64>>,
    /// Cell state after each step.
    pub cell: Vec<Vec<f64>>,
    /// Hidden state after each step.
    pub hidden: Vec<Vec<f64>>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Flat per-step buffers reused across forward/backward passes.
#[derive(Default)]
struct Workspace {
    /// Post-activation gates per step, `[f | i | g | o]`.
    gates: Vec<f64>,
    cell: Vec<f64>,
    cell_tanh: Vec<f64>,
    hidden: Vec<f64>,
    zeros: Vec<f64>,
}

impl Workspace {
    fn resize(&mut self, steps: usize, h: usize) {
        self.gates.resize(steps * 4 * h, 0.0);
        self.cell.resize(steps * h, 0.0);
        self.cell_tanh.resize(steps * h, 0.0);
        self.hidden.resize(steps * h, 0.0);
        self.zeros.resize(h, 0.0);
    }
}

struct Layout {
    w: usize,
    u: usize,
    b: usize,
    w_out: usize,
    b_out: usize,
    len: usize,
}

impl LstmNetwork {
    pub fn param_count(input_size: usize, hidden_size: usize) -> usize {
        let g = 4 * hidden_size;
        g * input_size + g * hidden_size + g + hidden_size + 1
    }

    /// Fresh network with weights drawn from U(-0.08, 0.08), identity input
    /// scaling and an untransformed target.
    pub fn init(input_size: usize, hidden_size: usize, sequence_length: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with(&mut rng, input_size, hidden_size, sequence_length, seed)
    }

    fn init_with(
        rng: &mut ChaCha8Rng,
        input_size: usize,
        hidden_size: usize,
        sequence_length: usize,
        seed: u64,
    ) -> Self {
        let params = (0..Self::param_count(input_size, hidden_size))
            .map(|_| rng.random_range(-0.08..0.08))
            .collect();
        Self {
            input_size,
            hidden_size,
            sequence_length,
            seed,
            params,
            scaler: Standardizer::identity(input_size),
            target_mean: 0.0,
            target_scale: 1.0,
            epoch_losses: Vec::new(),
        }
    }

    fn layout(&self) -> Layout {
        let (m, h) = (self.input_size, self.hidden_size);
        let g = 4 * h;
        let w = 0;
        let u = w + g * m;
        let b = u + g * h;
        let w_out = b + g;
        let b_out = w_out + h;
        Layout {
            w,
            u,
            b,
            w_out,
            b_out,
            len: b_out + 1,
        }
    }

    /// Forward pass on already standardised input rows; returns the read-out
    /// on the standardised target scale.
    pub fn forward_standardized(&self, seq: &[f64]) -> (f64, LstmTrace) {
        let h = self.hidden_size;
        let mut ws = Workspace::default();
        let pred = self.forward_into(seq, &mut ws);
        let split = |buf: &[f64], width: usize, off: usize| -> Vec<Vec<f64>> {
            buf.chunks(width)
                .map(|c| c[off..off + h].to_vec())
                .collect()
        };
        let trace = LstmTrace {
            forget: split(&ws.gates, 4 * h, 0),
            input: split(&ws.gates, 4 * h, h),
            candidate: split(&ws.gates, 4 * h, 2 * h),
            output: split(&ws.gates, 4 * h, 3 * h),
            cell: split(&ws.cell, h, 0),
            hidden: split(&ws.hidden, h, 0),
        };
        (pred, trace)
    }

    fn forward_into(&self, seq: &[f64], ws: &mut Workspace) -> f64 {
        let (m, h) = (self.input_size, self.hidden_size);
        let g4 = 4 * h;
        let lay = self.layout();
        let p = &self.params;
        let steps = seq.len() / m;
        ws.resize(steps, h);
        for t in 0..steps {
            let v = &seq[t * m..(t + 1) * m];
            let (done_h, rest_h) = ws.hidden.split_at_mut(t * h);
            let h_prev = if t > 0 {
                &done_h[(t - 1) * h..]
            } else {
                &ws.zeros[..]
            };
            let a = &mut ws.gates[t * g4..(t + 1) * g4];
            for (r, ar) in a.iter_mut().enumerate() {
                *ar = p[lay.b + r]
                    + dot(&p[lay.w + r * m..lay.w + (r + 1) * m], v)
                    + dot(&p[lay.u + r * h..lay.u + (r + 1) * h], h_prev);
            }
            for x in &mut a[..2 * h] {
                *x = sigmoid(*x);
            }
            for x in &mut a[2 * h..3 * h] {
                *x = x.tanh();
            }
            for x in &mut a[3 * h..] {
                *x = sigmoid(*x);
            }
            let (done_s, rest_s) = ws.cell.split_at_mut(t * h);
            let s_prev = if t > 0 {
                &done_s[(t - 1) * h..]
            } else {
                &ws.zeros[..]
            };
            let s = &mut rest_s[..h];
            let hh = &mut rest_h[..h];
            let c = &mut ws.cell_tanh[t * h..(t + 1) * h];
            for k in 0..h {
                s[k] = a[k] * s_prev[k] + a[h + k] * a[2 * h + k];
                c[k] = s[k].tanh();
                hh[k] = a[3 * h + k] * c[k];
            }
        }
        let last = if steps > 0 {
            &ws.hidden[(steps - 1) * h..steps * h]
        } else {
            &ws.zeros[..]
        };
        p[lay.b_out] + dot(&p[lay.w_out..lay.w_out + h], last)
    }

    /// Adds the gradient of `scale * (pred - target)^2` to `grad` and returns
    /// the unscaled squared error.
    fn accumulate_gradient(
        &self,
        seq: &[f64],
        target: f64,
        scale: f64,
        grad: &mut [f64],
        ws: &mut Workspace,
    ) -> f64 {
        let (m, h) = (self.input_size, self.hidden_size);
        let g4 = 4 * h;
        let lay = self.layout();
        let p = &self.params;
        let pred = self.forward_into(seq, ws);
        let err = pred - target;
        let d_pred = 2.0 * scale * err;
        let steps = seq.len() / m;

        grad[lay.b_out] += d_pred;
        let mut dh: Vec<f64> = p[lay.w_out..lay.w_out + h]
            .iter()
            .map(|w| d_pred * w)
            .collect();
        if steps > 0 {
            let last = &ws.hidden[(steps - 1) * h..steps * h];
            for (gw, x) in grad[lay.w_out..lay.w_out + h].iter_mut().zip(last) {
                *gw += d_pred * x;
            }
        }
        let mut ds = vec![0.0; h];
        let mut da = vec![0.0; g4];
        let (gw_all, rest) = grad.split_at_mut(lay.u);
        let (gu_all, rest) = rest.split_at_mut(lay.b - lay.u);
        let gb = &mut rest[..g4];
        for t in (0..steps).rev() {
            let a = &ws.gates[t * g4..(t + 1) * g4];
            let c = &ws.cell_tanh[t * h..(t + 1) * h];
            let s_prev = if t > 0 {
                &ws.cell[(t - 1) * h..t * h]
            } else {
                &ws.zeros[..]
            };
            let h_prev = if t > 0 {
                &ws.hidden[(t - 1) * h..t * h]
            } else {
                &ws.zeros[..]
            };
            for k in 0..h {
                let (f, i, g, o) = (a[k], a[h + k], a[2 * h + k], a[3 * h + k]);
                ds[k] += dh[k] * o * (1.0 - c[k] * c[k]);
                da[k] = ds[k] * s_prev[k] * f * (1.0 - f);
                da[h + k] = ds[k] * g * i * (1.0 - i);
                da[2 * h + k] = ds[k] * i * (1.0 - g * g);
                da[3 * h + k] = dh[k] * c[k] * o * (1.0 - o);
                ds[k] *= f;
            }
            let v = &seq[t * m..(t + 1) * m];
            dh.iter_mut().for_each(|x| *x = 0.0);
            for (r, &d) in da.iter().enumerate() {
                gb[r] += d;
                for (gx, x) in gw_all[r * m..(r + 1) * m].iter_mut().zip(v) {
                    *gx += d * x;
                }
                let u_row = &p[lay.u + r * h..lay.u + (r + 1) * h];
                let gu = &mut gu_all[r * h..(r + 1) * h];
                for ((gx, x), (dhk, uk)) in gu.iter_mut().zip(h_prev).zip(dh.iter_mut().zip(u_row))
                {
                    *gx += d * x;
                    *dhk += d * uk;
                }
            }
        }
        err * err
    }

    /// Mean squared error over `(sequence, target)` pairs on the standardised
    /// scale, together with its gradient with respect to `params`.
    pub fn loss_and_gradient(&self, batch: &[(&[f64], f64)]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.layout().len];
        let loss = self.loss_and_gradient_into(batch, &mut grad, &mut Workspace::default());
        (loss, grad)
    }

    fn loss_and_gradient_into(
        &self,
        batch: &[(&[f64], f64)],
        grad: &mut [f64],
        ws: &mut Workspace,
    ) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let scale = 1.0 / batch.len() as f64;
        batch
            .iter()
            .map(|(seq, y)| self.accumulate_gradient(seq, *y, scale, grad, ws))
            .sum::<f64>()
            * scale
    }

    pub fn loss(&self, batch: &[(&[f64], f64)]) -> f64 {
        let mut ws = Workspace::default();
        batch
            .iter()
            .map(|(seq, y)| (self.forward_into(seq, &mut ws) - y).powi(2))
            .sum::<f64>()
            / batch.len() as f64
    }
}

/// Prediction for raw input rows (flattened oldest first) together with the
/// activation trace.
pub fn lstm_forward(net: &LstmNetwork, sequence: &[f64]) -> Result<(f64, LstmTrace), LearnerError> {
    check_input(sequence, net.input_size * net.sequence_length)?;
    let z = net.scaler.apply(sequence);
    let (out, trace) = net.forward_standardized(&z);
    Ok((net.target_mean + net.target_scale * out, trace))
}

impl Regressor for LstmNetwork {
    fn n_features(&self) -> usize {
        self.input_size
    }

    fn context_rows(&self) -> usize {
        self.sequence_length
    }

    fn predict(&self, rows: &[f64]) -> Result<f64, LearnerError> {
        lstm_forward(self, rows).map(|(p, _)| p)
    }
}

/// Trains on every run of `sequence_length` consecutive rows, each labelled
/// with the target of its last row.
pub fn lstm_fit(x: &FeatureMatrix, params: &LstmParams) -> Result<LstmNetwork, LearnerError> {
    let seq_len = params.sequence_length;
    if params.hidden_size == 0 || seq_len == 0 || params.batch_size == 0 {
        return Err(LearnerError::InvalidParam(
            "hidden size, sequence length and batch size must be positive".into(),
        ));
    }
    if !(params.learning_rate >= 0.0) || !(params.clip_norm > 0.0) {
        return Err(LearnerError::InvalidParam(format!(
            "learning rate {}, clip norm {}",
            params.learning_rate, params.clip_norm
        )));
    }
    if x.n_rows() < seq_len {
        return Err(LearnerError::TooShort {
            needed: seq_len,
            got: x.n_rows(),
        });
    }
    let m = x.n_cols();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut net = LstmNetwork::init_with(&mut rng, m, params.hidden_size, seq_len, params.seed);
    net.scaler = Standardizer::fit(x.data(), m);
    let y = x.target();
    net.target_mean = y.iter().sum::<f64>() / y.len() as f64;
    let var = y.iter().map(|v| (v - net.target_mean).powi(2)).sum::<f64>() / y.len() as f64;
    net.target_scale = if var > 0.0 { var.sqrt() } else { 1.0 };

    let z = net.scaler.apply(x.data());
    let samples: Vec<(&[f64], f64)> = (seq_len - 1..x.n_rows())
        .map(|j| {
            (
                &z[(j + 1 - seq_len) * m..(j + 1) * m],
                (y[j] - net.target_mean) / net.target_scale,
            )
        })
        .collect();

    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut batch = Vec::with_capacity(params.batch_size);
    let mut grad = vec![0.0; net.params.len()];
    let mut ws = Workspace::default();
    for epoch in 1..=params.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(params.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&k| samples[k]));
            let loss = net.loss_and_gradient_into(&batch, &mut grad, &mut ws);
            epoch_loss += loss * batch.len() as f64;
            if !loss.is_finite() {
                return Err(LearnerError::NonFiniteLoss {
                    epoch,
                    detail: format!("mini-batch loss {loss}"),
                });
            }
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > params.clip_norm {
                let k = params.clip_norm / norm;
                grad.iter_mut().for_each(|g| *g *= k);
            }
            for (p, g) in net.params.iter_mut().zip(&grad) {
                *p -= params.learning_rate * g;
            }
        }
        let loss = epoch_loss / samples.len() as f64;
        if net.params.iter().any(|p| !p.is_finite()) {
            return Err(LearnerError::NonFiniteLoss {
                epoch,
                detail: format!("training loss {loss} after update"),
            });
        }
        net.epoch_losses.push(loss);
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_network_outputs_readout_bias() {
        let mut net = LstmNetwork::init(3, 4, 5, 1);
        net.params.iter_mut().for_each(|p| *p = 0.0);
        let b_out = net.layout().b_out;
        net.params[b_out] = 0.25;
        let seq: Vec<f64> = (0..15).map(|i| i as f64 * 0.3 - 2.0).collect();
        let (pred, tr) = lstm_forward(&net, &seq).unwrap();
        assert_eq!(pred, 0.25);
        assert!(tr.hidden.iter().flatten().all(|&h| h == 0.0));
    }

    #[test]
    fn forward_is_deterministic_and_bounded() {
        let net = LstmNetwork::init(2, 6, 8, 9);
        let seq: Vec<f64> = (0..16).map(|i| (i as f64).sin() * 5.0).collect();
        let (a, ta) = lstm_forward(&net, &seq).unwrap();
        let (b, tb) = lstm_forward(&net, &seq).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert_eq!(ta, tb);
        for (t, (s, h)) in ta.cell.iter().zip(&ta.hidden).enumerate() {
            assert!(s.iter().all(|v| v.abs() <= (t + 1) as f64));
            assert!(h.iter().all(|v| v.abs() <= 1.0));
        }
        for gate in [&ta.forget, &ta.input, &ta.output] {
            assert!(gate.iter().flatten().all(|&v| v > 0.0 && v < 1.0));
        }
        assert!(ta.candidate.iter().flatten().all(|&v| v > -1.0 && v < 1.0));
        assert!(matches!(
            lstm_forward(&net, &seq[..15]),
            Err(LearnerError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let xs: Vec<f64> = (0..60).map(|i| (i as f64 * 0.4).sin()).collect();
        let m = FeatureMatrix::new(1, xs[..59].to_vec(), xs[1..].to_vec()).unwrap();
        let params = LstmParams {
            hidden_size: 3,
            sequence_length: 4,
            epochs: 3,
            learning_rate: 0.0,
            seed: 5,
            ..Default::default()
        };
        let net = lstm_fit(&m, &params).unwrap();
        assert_eq!(net.params, LstmNetwork::init(1, 3, 4, 5).params);
        assert_eq!(net.epoch_losses.len(), 3);
    }

    #[test]
    fn seeded_fits_agree() {
        let xs: Vec<f64> = (0..80).map(|i| ((i * 13) % 7) as f64).collect();
        let m = FeatureMatrix::new(2, xs[..78].to_vec(), xs[41..80].to_vec()).unwrap();
        let params = LstmParams {
            hidden_size: 4,
            sequence_length: 3,
            epochs: 5,
            seed: 11,
            ..Default::default()
        };
        let a = lstm_fit(&m, &params).unwrap();
        let b = lstm_fit(&m, &params).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            a.predict(m.rows_ending_at(5, 3)).unwrap(),
            lstm_forward(&a, m.rows_ending_at(5, 3)).unwrap().0
        );
    }
}
