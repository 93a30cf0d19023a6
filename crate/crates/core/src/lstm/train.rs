//! Windowing, training with early stopping, inference and evaluation.

use std::ops::Range;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{forward_batch, loss_and_gradient, Batch, DropoutMasks, LstmWeights};
use super::spec::{LstmSpec, NormStats, TrainConfig};
use crate::dataset::{Dataset, Split};
use crate::error::{invalid, Error, Result};
use crate::par;

/// Dimension-generic sequence data: row `t` holds the command issued at `t`
/// and the position sensed right after it.
#[derive(Clone, Debug, PartialEq)]
pub struct SeqData {
    pub dim: usize,
    pub act: Vec<f64>,
    pub pos: Vec<f64>,
}

impl SeqData {
    pub fn from_dataset(ds: &Dataset) -> Self {
        let mut act = Vec::with_capacity(ds.len() * 2);
        let mut pos = Vec::with_capacity(ds.len() * 2);
        for (a, p) in &ds.records {
            act.extend_from_slice(&a.to_array());
            pos.extend_from_slice(&p.to_array());
        }
        SeqData { dim: 2, act, pos }
    }

    pub fn len(&self) -> usize {
        self.act.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Label indices `k` whose whole window (rows `k - history_len .. k`, label
/// row `k`, target row `k + lead - 1`) lies inside `range`.
pub fn window_labels(range: &Range<usize>, spec: &LstmSpec) -> Vec<usize> {
    let lo = range.start + spec.history_len;
    let hi_excl = (range.end + 1).saturating_sub(spec.target_lead);
    (lo..hi_excl.max(lo)).collect()
}

/// Raw (unnormalized) input row: `[position, actuation, target]`.
fn raw_row(data: &SeqData, row: usize, target: &[f64], out: &mut [f64]) {
    let n = data.dim;
    out[..n].copy_from_slice(&data.pos[row * n..(row + 1) * n]);
    out[n..2 * n].copy_from_slice(&data.act[row * n..(row + 1) * n]);
    out[2 * n..3 * n].copy_from_slice(target);
}

/// Feature stats over the training rows. Targets share the position stats.
pub fn norm_stats(data: &SeqData, range: &Range<usize>) -> NormStats {
    let n = data.dim;
    let rows = range.len().max(1) as f64;
    let mut mean = vec![0.0; 3 * n];
    let mut scale = vec![1.0; 3 * n];
    for (src, off) in [(&data.pos, 0), (&data.act, n)] {
        for j in 0..n {
            let m = range.clone().map(|r| src[r * n + j]).sum::<f64>() / rows;
            let v = range.clone().map(|r| (src[r * n + j] - m).powi(2)).sum::<f64>() / rows;
            mean[off + j] = m;
            scale[off + j] = if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 };
        }
    }
    for j in 0..n {
        mean[2 * n + j] = mean[j];
        scale[2 * n + j] = scale[j];
    }
    NormStats { mean, scale }
}

/// Normalized time-major batch for the given label indices.
pub fn build_batch(data: &SeqData, labels: &[usize], w: &LstmWeights) -> Batch {
    let spec = &w.spec;
    let (n, steps, d) = (data.dim, spec.history_len, spec.input_size);
    let bs = labels.len();
    let mut inputs = vec![0.0; steps * bs * d];
    let mut targets = Vec::with_capacity(bs * n);
    for (b, &k) in labels.iter().enumerate() {
        let tr = k + spec.target_lead - 1;
        let target = &data.pos[tr * n..(tr + 1) * n];
        for t in 0..steps {
            let row = k - steps + t;
            let slot = &mut inputs[(t * bs + b) * d..(t * bs + b + 1) * d];
            raw_row(data, row, target, slot);
            w.normalize(slot);
        }
        targets.extend_from_slice(&data.act[k * n..(k + 1) * n]);
    }
    Batch {
        size: bs,
        steps,
        inputs,
        targets,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLoss>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub wall_time_s: f64,
    pub stopped_early: bool,
}

/// Mix indices into a dropout seed so masks depend only on position in the
/// schedule, not on which thread computes the chunk.
fn mix(seed: u64, a: u64, b: u64, c: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.rotate_left(21) ^ c.rotate_left(42);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * g;
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * g * g;
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Mean squared error over `labels`, evaluated in fixed chunks.
fn mse(w: &LstmWeights, data: &SeqData, labels: &[usize], chunk: usize) -> f64 {
    let parts = par::map_chunks(labels, chunk, |ls| {
        let b = build_batch(data, ls, w);
        let y = forward_batch(w, &b.inputs, b.size);
        y.iter().zip(&b.targets).map(|(a, t)| (a - t).powi(2)).sum::<f64>()
    });
    parts.iter().sum::<f64>() / (labels.len() * w.spec.output_size) as f64
}

/// Fit the inverse model on the training range with Adam, evaluating the
/// validation range each epoch and keeping the best-validation weights.
pub fn train_seq(data: &SeqData, split: &Split, spec: &LstmSpec, cfg: &TrainConfig) -> Result<(LstmWeights, TrainReport)> {
    spec.validate()?;
    cfg.validate()?;
    if data.dim != spec.output_size {
        return Err(invalid(format!("data dim {} vs spec output {}", data.dim, spec.output_size)));
    }
    let train_labels = window_labels(&split.train, spec);
    let val_labels = window_labels(&split.val, spec);
    if train_labels.is_empty() || val_labels.is_empty() {
        return Err(Error::InsufficientData(format!(
            "{} training and {} validation windows for history {}",
            train_labels.len(),
            val_labels.len(),
            spec.history_len
        )));
    }
    let start = Instant::now();
    let mut w = LstmWeights::init(spec, norm_stats(data, &split.train), cfg.seed)?;
    let mut adam = Adam::new(w.params.len(), cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED);
    let mut order = train_labels.clone();
    let eval_chunk = 256;

    let mut best = (f64::INFINITY, w.params.clone(), 0usize);
    let mut epochs = Vec::new();
    let mut since_best = 0;
    let mut stopped_early = false;
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut train_sum = 0.0;
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let denom = (batch.len() * spec.output_size) as f64;
            let chunks: Vec<(usize, &[usize])> = batch.chunks(cfg.grad_chunk).enumerate().collect();
            let parts = par::map(&chunks, |&(ci, ls)| {
                let b = build_batch(data, ls, &w);
                let mut mrng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, epoch as u64, bi as u64, ci as u64));
                let masks = DropoutMasks::sample(spec, ls.len(), &mut mrng);
                loss_and_gradient(&w, &b, masks.as_ref(), denom)
            });
            let mut it = parts.into_iter();
            let (mut loss, mut grad) = it.next().expect("nonempty batch");
            for (l, g) in it {
                loss += l;
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            train_sum += loss * batch.len() as f64;
            adam.step(&mut w.params, &grad);
        }
        let train_loss = train_sum / order.len() as f64;
        let val_loss = mse(&w, data, &val_labels, eval_chunk);
        if !val_loss.is_finite() || !train_loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        epochs.push(EpochLoss {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best.0 {
            best = (val_loss, w.params.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }
    w.params = best.1;
    let report = TrainReport {
        epochs_run: epochs.len(),
        epochs,
        best_epoch: best.2,
        wall_time_s: start.elapsed().as_secs_f64(),
        stopped_early,
    };
    Ok((w, report))
}

pub fn train(ds: &Dataset, spec: &LstmSpec, cfg: &TrainConfig) -> Result<(LstmWeights, TrainReport)> {
    train_seq(&SeqData::from_dataset(ds), &ds.split, spec, cfg)
}

/// One control decision. `history` holds `history_len` rows of
/// `[position, actuation]` (oldest first), where each position was sensed
/// after the actuation in the same row. Output is clamped to [-1, 1].
pub fn predict_actuation(w: &LstmWeights, target_next: &[f64], history: &[f64]) -> Result<Vec<f64>> {
    let spec = &w.spec;
    let n = spec.output_size;
    if target_next.len() != n {
        return Err(invalid(format!("target has {} components, expected {n}", target_next.len())));
    }
    if history.len() != spec.history_len * 2 * n {
        return Err(invalid(format!(
            "history has {} values, expected {} rows of {}",
            history.len(),
            spec.history_len,
            2 * n
        )));
    }
    let d = spec.input_size;
    let mut inputs = vec![0.0; spec.history_len * d];
    for t in 0..spec.history_len {
        let slot = &mut inputs[t * d..(t + 1) * d];
        slot[..2 * n].copy_from_slice(&history[t * 2 * n..(t + 1) * 2 * n]);
        slot[2 * n..].copy_from_slice(target_next);
        w.normalize(slot);
    }
    let y = forward_batch(w, &inputs, 1);
    Ok(y.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect())
}

/// Mean absolute actuation error on `range`, divided by the actuation range (2).
pub fn evaluate_seq(w: &LstmWeights, data: &SeqData, range: &Range<usize>) -> Result<f64> {
    let labels = window_labels(range, &w.spec);
    if labels.is_empty() {
        return Err(invalid("evaluation split has no complete windows"));
    }
    let parts = par::map_chunks(&labels, 256, |ls| {
        let b = build_batch(data, ls, w);
        let y = forward_batch(w, &b.inputs, b.size);
        y.iter()
            .zip(&b.targets)
            .map(|(a, t)| (a.clamp(-1.0, 1.0) - t).abs())
            .sum::<f64>()
    });
    let total = parts.iter().sum::<f64>();
    Ok(total / (labels.len() * w.spec.output_size) as f64 / 2.0)
}

pub fn evaluate(w: &LstmWeights, ds: &Dataset) -> Result<f64> {
    evaluate_seq(w, &SeqData::from_dataset(ds), &ds.split.test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::excite;
    use crate::domain::NOMINAL_PERIOD;
    use crate::plant::nominal_plant;

    fn constant_data(n: usize, c: [f64; 2]) -> (SeqData, Split) {
        let act = (0..n).flat_map(|_| c).collect();
        let pos = (0..n).flat_map(|_| [3.0, -2.0]).collect();
        let split = Split {
            train: 0..n * 7 / 10,
            val: n * 7 / 10..n * 8 / 10,
            test: n * 8 / 10..n,
        };
        (SeqData { dim: 2, act, pos }, split)
    }

    #[test]
    fn windows_stay_inside_range() {
        let spec = LstmSpec::planar(1, 10, 4, 0.0);
        let labels = window_labels(&(100..200), &spec);
        assert_eq!(*labels.first().unwrap(), 110);
        assert_eq!(*labels.last().unwrap(), 198);
        assert!(window_labels(&(0..5), &spec).is_empty());
    }

    #[test]
    fn constant_dataset_is_learned() {
        let (data, split) = constant_data(600, [0.4, -0.3]);
        let spec = LstmSpec::planar(1, 3, 8, 0.0);
        let cfg = TrainConfig {
            max_epochs: 40,
            patience: 40,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        let (w, report) = train_seq(&data, &split, &spec, &cfg).unwrap();
        let last = report.epochs[report.best_epoch].val_loss;
        assert!(last < 1e-4, "val loss {last}");
        let hist: Vec<f64> = (0..3).flat_map(|_| [3.0, -2.0, 0.4, -0.3]).collect();
        let a = predict_actuation(&w, &[3.0, -2.0], &hist).unwrap();
        assert!((a[0] - 0.4).abs() < 0.02 && (a[1] + 0.3).abs() < 0.02, "{a:?}");
        assert!(evaluate_seq(&w, &data, &split.test).unwrap() < 0.01);
    }

    #[test]
    fn insufficient_data_rejected() {
        let (data, _) = constant_data(40, [0.0, 0.0]);
        let split = Split { train: 0..30, val: 30..34, test: 34..40 };
        let spec = LstmSpec::planar(1, 10, 4, 0.0);
        assert!(matches!(
            train_seq(&data, &split, &spec, &TrainConfig::default()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn training_is_deterministic_and_reports_best_epoch() {
        let ds = excite(&nominal_plant(1), 1200, 0.1, 2, NOMINAL_PERIOD).unwrap();
        let spec = LstmSpec::planar(2, 4, 6, 0.2);
        let cfg = TrainConfig { max_epochs: 6, patience: 2, seed: 5, ..TrainConfig::default() };
        let (w1, r1) = train(&ds, &spec, &cfg).unwrap();
        let (w2, r2) = train(&ds, &spec, &cfg).unwrap();
        assert_eq!(w1.params, w2.params);
        assert_eq!(r1.epochs, r2.epochs);
        let best = r1.epochs[r1.best_epoch].val_loss;
        assert!(r1.epochs[r1.best_epoch..].iter().all(|e| best <= e.val_loss));
    }

    #[test]
    fn inference_ignores_dropout_rate() {
        let ds = excite(&nominal_plant(1), 600, 0.1, 2, NOMINAL_PERIOD).unwrap();
        let spec = LstmSpec::planar(2, 4, 6, 0.0);
        let cfg = TrainConfig { max_epochs: 2, ..TrainConfig::default() };
        let (w, _) = train(&ds, &spec, &cfg).unwrap();
        let mut w2 = w.clone();
        w2.spec.dropout_rate = 0.5;
        let hist: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
        assert_eq!(
            predict_actuation(&w, &[1.0, 2.0], &hist).unwrap(),
            predict_actuation(&w2, &[1.0, 2.0], &hist).unwrap()
        );
    }

    #[test]
    fn prediction_is_clamped_and_pure() {
        let spec = LstmSpec::planar(1, 2, 3, 0.0);
        let mut w = LstmWeights::zeros(&spec).unwrap();
        let lay = spec.layout();
        w.params[lay.readout_b] = 5.0;
        w.params[lay.readout_b + 1] = -5.0;
        let hist = [0.0; 8];
        let a = predict_actuation(&w, &[0.0, 0.0], &hist).unwrap();
        assert_eq!(a, vec![1.0, -1.0]);
        assert_eq!(a, predict_actuation(&w, &[0.0, 0.0], &hist).unwrap());
        assert!(predict_actuation(&w, &[0.0, 0.0], &hist[..4]).is_err());
    }
}
