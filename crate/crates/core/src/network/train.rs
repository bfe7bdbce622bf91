//! Minibatch training with Adam and step-decayed learning rate.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{argmax, softmax_cross_entropy, Gradients, InferencePath, Mode, Network};
use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Initial learning rate `η⁰`.
    pub lr: f32,
    /// Multiplied into the rate every `lr_period` epochs.
    pub lr_decay: f32,
    pub lr_period: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    /// The MNIST protocol: 60 epochs, batch 128, `η⁰ = 0.005`, ×0.1 every 15.
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 128,
            lr: 0.005,
            lr_decay: 0.1,
            lr_period: 15,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be > 0");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must lie in (0, 1]");
        }
        if self.lr_period == 0 {
            return bad("lr_period must be >= 1");
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return bad("adam_beta1/adam_beta2 must lie in [0, 1) and adam_eps must be > 0");
        }
        Ok(())
    }
}

/// `η⁰ · decay^⌊epoch/period⌋` for a zero-based epoch.
pub fn update_learning_rate(eta0: f32, epoch: usize, cfg: &TrainConfig) -> f32 {
    let steps = (epoch / cfg.lr_period.max(1)) as i32;
    (eta0 as f64 * (cfg.lr_decay as f64).powi(steps)) as f32
}

/// First and second moments for every learned parameter.
#[derive(Clone, Debug)]
pub struct AdamState {
    cfg: AdamConfig,
    t: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(net: &mut Network, cfg: AdamConfig) -> Self {
        let version = net.version;
        let shapes: Vec<usize> = net.param_slices_mut().iter().map(|s| s.len()).collect();
        net.version = version;
        AdamState {
            cfg,
            t: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update of the master weights.
    pub fn step(&mut self, net: &mut Network, grads: &Gradients, lr: f32) -> Result<()> {
        let gs = grads.slices();
        let ps = net.param_slices_mut();
        if gs.len() != ps.len() || gs.iter().zip(&ps).any(|(g, p)| g.len() != p.len()) {
            return Err(Error::shape("gradients do not match the network parameters"));
        }
        if ps.len() != self.m.len() || ps.iter().zip(&self.m).any(|(p, m)| p.len() != m.len()) {
            return Err(Error::shape("optimizer state does not match the network parameters"));
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - (beta1 as f64).powi(self.t as i32);
        let c2 = 1.0 - (beta2 as f64).powi(self.t as i32);
        let step = (lr as f64 * c2.sqrt() / c1) as f32;
        let eps_hat = (eps as f64 * c2.sqrt()) as f32;
        for (((p, g), m), v) in ps.into_iter().zip(gs).zip(&mut self.m).zip(&mut self.v) {
            for (((pi, &gi), mi), vi) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                *pi -= step * *mi / (vi.sqrt() + eps_hat);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    /// One-based.
    pub epoch: usize,
    pub lr: f32,
    pub train_loss: f32,
    pub train_acc: f32,
    pub test_acc: Option<f32>,
    pub seconds: f64,
}

pub const METRICS_CSV_HEADER: &str = "epoch,lr,train_loss,train_acc,test_acc,seconds";

pub fn write_metrics_csv(mut out: impl Write, rows: &[EpochMetrics]) -> std::io::Result<()> {
    writeln!(out, "{METRICS_CSV_HEADER}")?;
    for r in rows {
        let test = r.test_acc.map(|a| format!("{a:.6}")).unwrap_or_default();
        writeln!(
            out,
            "{},{},{:.6},{:.6},{},{:.3}",
            r.epoch, r.lr, r.train_loss, r.train_acc, test, r.seconds
        )?;
    }
    Ok(())
}

/// Trains `net` in place. `on_epoch` sees each epoch's metrics as they are
/// produced. The run is deterministic given `cfg.seed`.
pub fn train(
    net: &mut Network,
    data: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training set yields 0 batches"));
    }
    if data.sample_shape() != net.input_shape() {
        return Err(Error::shape(format!(
            "samples of shape {:?} for a network expecting {:?}",
            data.sample_shape(),
            net.input_shape()
        )));
    }
    let mut adam = AdamState::new(net, cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let lr = update_learning_rate(cfg.lr, epoch, cfg);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (x, y) = data.batch(idx);
            let (logits, cache) = net.forward(&x, Mode::Train)?;
            let (loss, grad, ok) = softmax_cross_entropy(&logits, &y)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch: epoch + 1,
                    batch: b,
                    loss,
                });
            }
            let grads = net.backward_params(&cache, &grad)?;
            adam.step(net, &grads, lr)?;
            loss_sum += loss as f64 * idx.len() as f64;
            correct += ok;
        }
        let test_acc = match test {
            Some(t) => Some(evaluate(net, t, 1000)?),
            None => None,
        };
        let m = EpochMetrics {
            epoch: epoch + 1,
            lr,
            train_loss: (loss_sum / data.len() as f64) as f32,
            train_acc: correct as f32 / data.len() as f32,
            test_acc,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&m);
        history.push(m);
    }
    Ok(history)
}

/// Top-1 accuracy in eval mode over batches of `batch` samples.
pub fn evaluate(net: &Network, data: &Dataset, batch: usize) -> Result<f32> {
    evaluate_with(net, data, batch, InferencePath::Dense)
}

pub fn evaluate_with(net: &Network, data: &Dataset, batch: usize, path: InferencePath) -> Result<f32> {
    if data.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty split"));
    }
    let batch = batch.max(1);
    let mut correct = 0usize;
    for start in (0..data.len()).step_by(batch) {
        let end = (start + batch).min(data.len());
        let (x, y) = data.range(start, end);
        let logits = net.predict_with(&x, path)?;
        let k = logits.shape()[1];
        correct += logits
            .data()
            .chunks_exact(k)
            .zip(&y)
            .filter(|(row, &label)| argmax(row) == label as usize)
            .count();
    }
    Ok(correct as f32 / data.len() as f32)
}
