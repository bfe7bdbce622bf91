//! Layer stack with manual backprop, Adam, training loop and model files.
//!
//! Parameterized layers keep full-precision master weights. Every forward
//! pass binarizes a fresh copy of them (and of the incoming activations),
//! and backward routes gradients through both binarization sites back to
//! the master weights.

mod io;
mod layers;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hadamard::HadaConfig;
use crate::tensor::Tensor;

pub use io::{
    decode_model, encode_model, encoded_model_len, load_model, save_model, save_model_with, ModelStorage, MODEL_MAGIC,
    MODEL_VERSION,
};
pub(crate) use layers::LayerCache;
pub use layers::{InferencePath, Layer, LayerGrad, LayerSpec, Mode, BN_EPS, BN_MOMENTUM};
pub use train::{
    evaluate, evaluate_with, train, update_learning_rate, write_metrics_csv, AdamConfig, AdamState, EpochMetrics,
    TrainConfig, METRICS_CSV_HEADER,
};

/// Block size choice for one side of a Hada layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Beta {
    Block(usize),
    /// One block per row: the XNOR-Net-style single scale per filter or per
    /// activation row.
    Full,
}

impl Beta {
    pub fn resolve(self, row_len: usize) -> usize {
        match self {
            Beta::Block(b) => b,
            Beta::Full => row_len,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    /// Bumped whenever parameters or block sizes change, so that a forward
    /// cache can be checked against the network it came from.
    version: u64,
}

impl PartialEq for Network {
    /// Same architecture and parameters; the version counter is ignored.
    fn eq(&self, other: &Self) -> bool {
        self.input_shape == other.input_shape && self.layers == other.layers
    }
}

/// Everything backward needs from one forward pass.
#[derive(Debug)]
pub struct ForwardCache {
    version: u64,
    batch: usize,
    entries: Vec<LayerCache>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// Parameter gradients per layer, plus the gradient with respect to the
/// network input when it was asked for.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
    pub input: Option<Tensor>,
}

impl Gradients {
    pub(crate) fn slices(&self) -> Vec<&[f32]> {
        self.layers.iter().flat_map(|g| g.slices()).collect()
    }
}

impl Network {
    /// Builds a network with freshly initialized parameters, checking that
    /// layer shapes chain from `input_shape` (per sample, no batch axis).
    pub fn new(input_shape: &[usize], specs: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = specs.into_iter().map(|s| Layer::init(s, &mut rng)).collect();
        Network::from_layers(input_shape, layers)
    }

    pub(crate) fn from_layers(input_shape: &[usize], layers: Vec<Layer>) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::shape(format!("bad input shape {input_shape:?}")));
        }
        if layers.is_empty() {
            return Err(Error::invalid("a network needs at least one layer"));
        }
        let net = Network {
            input_shape: input_shape.to_vec(),
            layers,
            version: 0,
        };
        net.shapes()?;
        if let Some(pos) = net.layers.iter().position(|l| l.spec == LayerSpec::SoftmaxHead) {
            if pos + 1 != net.layers.len() {
                return Err(Error::invalid("SoftmaxHead must be the last layer"));
            }
        }
        Ok(net)
    }

    /// Per-sample shapes: the input followed by each layer's output.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![self.input_shape.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer
                .spec
                .output_shape(shapes.last().expect("non-empty"))
                .map_err(|e| Error::shape(format!("layer {i}: {e}")))?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Width of the logits.
    pub fn num_outputs(&self) -> usize {
        self.shapes().expect("validated").last().expect("non-empty").iter().product()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.spec.param_count()).sum()
    }

    /// Indices of the Hada layers, in order.
    pub fn hada_layers(&self) -> Vec<usize> {
        (0..self.layers.len()).filter(|&i| self.layers[i].spec.is_hada()).collect()
    }

    pub fn hada_config(&self) -> HadaConfig {
        let (bw, ba) = self
            .layers
            .iter()
            .filter_map(|l| l.spec.betas())
            .unzip();
        HadaConfig::new(bw, ba).expect("a network with at least one Hada layer")
    }

    /// Replaces every Hada layer's `(β_w, β_a)`; weights are untouched.
    pub fn set_hada_config(&mut self, cfg: &HadaConfig) -> Result<()> {
        let hada = self.hada_layers();
        if cfg.layers() != hada.len() {
            return Err(Error::invalid(format!(
                "config has {} layers, network has {} Hada layers",
                cfg.layers(),
                hada.len()
            )));
        }
        let mut layers = self.layers.clone();
        for (l, &i) in hada.iter().enumerate() {
            match &mut layers[i].spec {
                LayerSpec::HadaDense { beta_w, beta_a, .. } | LayerSpec::HadaConv2d { beta_w, beta_a, .. } => {
                    *beta_w = cfg.beta_w(l);
                    *beta_a = cfg.beta_a(l);
                }
                _ => unreachable!("hada index"),
            }
        }
        let next = Network::from_layers(&self.input_shape, layers)?;
        self.layers = next.layers;
        self.version += 1;
        Ok(())
    }

    fn check_input(&self, x: &Tensor) -> Result<usize> {
        match x.shape().split_first() {
            Some((&n, rest)) if n > 0 && rest == self.input_shape.as_slice() => Ok(n),
            _ => Err(Error::shape(format!(
                "batch shape {:?} does not match [N, {:?}]",
                x.shape(),
                self.input_shape
            ))),
        }
    }

    /// Forward pass keeping what backward needs. In train mode BatchNorm uses
    /// batch statistics and folds them into its running estimates.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, ForwardCache)> {
        let n = self.check_input(x)?;
        let mut entries = Vec::with_capacity(self.layers.len());
        let mut stats = Vec::new();
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let out = layer.forward(&cur, mode, true, InferencePath::Dense)?;
            entries.push(out.cache.expect("cache requested"));
            if let Some(s) = out.stats {
                stats.push((i, s));
            }
            cur = out.out;
        }
        for (i, s) in stats {
            self.layers[i].update_running_stats(&s);
        }
        Ok((
            cur,
            ForwardCache {
                version: self.version,
                batch: n,
                entries,
            },
        ))
    }

    /// Eval-mode logits.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.predict_with(x, InferencePath::Dense)
    }

    pub fn predict_with(&self, x: &Tensor, path: InferencePath) -> Result<Tensor> {
        Ok(self.trace(x, path)?.pop().expect("at least one layer"))
    }

    /// Eval-mode output of every layer, in order.
    pub fn trace(&self, x: &Tensor, path: InferencePath) -> Result<Vec<Tensor>> {
        self.check_input(x)?;
        let mut outs: Vec<Tensor> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = outs.last().unwrap_or(x);
            let out = layer.forward(input, Mode::Eval, false, path)?.out;
            outs.push(out);
        }
        Ok(outs)
    }

    /// Gradients of the loss with respect to the master weights and the
    /// network input, given the gradient with respect to the logits.
    pub fn backward(&self, cache: &ForwardCache, grad_logits: &Tensor) -> Result<Gradients> {
        self.backward_inner(cache, grad_logits, true)
    }

    /// Like [`Network::backward`] but skips the input gradient, which
    /// training never uses.
    pub fn backward_params(&self, cache: &ForwardCache, grad_logits: &Tensor) -> Result<Gradients> {
        self.backward_inner(cache, grad_logits, false)
    }

    fn backward_inner(&self, cache: &ForwardCache, grad_logits: &Tensor, input: bool) -> Result<Gradients> {
        if cache.version != self.version || cache.entries.len() != self.layers.len() {
            return Err(Error::invalid(
                "stale forward cache: the network changed since that forward pass",
            ));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = Some(grad_logits.clone());
        for (i, (layer, entry)) in self.layers.iter().zip(&cache.entries).enumerate().rev() {
            let upstream = g.take().expect("input gradient of every layer after the first");
            let (gx, lg) = layer.backward(entry, &upstream, input || i > 0)?;
            grads.push(lg);
            g = gx;
        }
        grads.reverse();
        Ok(Gradients { layers: grads, input: g })
    }

    /// Replaces the master weight and bias of Hada layer `index` (a layer
    /// index, not a Hada index).
    pub fn set_hada_params(&mut self, index: usize, weight: Tensor, bias: Vec<f32>) -> Result<()> {
        let layer = self
            .layers
            .get_mut(index)
            .ok_or_else(|| Error::invalid(format!("no layer {index}")))?;
        let shape = layer
            .spec
            .weight_shape()
            .ok_or_else(|| Error::invalid(format!("layer {index} is {}, not a Hada layer", layer.spec.name())))?;
        if weight.shape() != shape.as_slice() || bias.len() != shape[0] {
            return Err(Error::shape(format!(
                "layer {index} wants weight {shape:?} and {} biases, got {:?} and {}",
                shape[0],
                weight.shape(),
                bias.len()
            )));
        }
        layer.params = layers::Params::Hada { weight, bias };
        self.version += 1;
        Ok(())
    }

    /// Mutable learned parameters in the same order as [`Gradients`].
    pub(crate) fn param_slices_mut(&mut self) -> Vec<&mut [f32]> {
        self.version += 1;
        self.layers.iter_mut().flat_map(|l| l.param_slices_mut()).collect()
    }
}

/// Mean softmax cross-entropy over the batch, its gradient with respect to
/// the logits, and the number of correct top-1 predictions.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[u8]) -> Result<(f32, Tensor, usize)> {
    let [n, k] = match *logits.shape() {
        [n, k] if n == labels.len() && n > 0 && k > 0 => [n, k],
        _ => {
            return Err(Error::shape(format!(
                "logits {:?} vs {} labels",
                logits.shape(),
                labels.len()
            )))
        }
    };
    let mut grad = vec![0.0; n * k];
    let mut loss = 0.0f64;
    let mut correct = 0;
    for ((row, g), &y) in logits.data().chunks_exact(k).zip(grad.chunks_exact_mut(k)).zip(labels) {
        let y = y as usize;
        if y >= k {
            return Err(Error::invalid(format!("label {y} out of range for {k} classes")));
        }
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let sum: f64 = row.iter().map(|&v| ((v - max) as f64).exp()).sum();
        loss += sum.ln() - (row[y] - max) as f64;
        for (gi, &v) in g.iter_mut().zip(row) {
            *gi = (((v - max) as f64).exp() / sum / n as f64) as f32;
        }
        g[y] -= 1.0 / n as f32;
        if argmax(row) == y {
            correct += 1;
        }
    }
    Ok(((loss / n as f64) as f32, Tensor::new(&[n, k], grad)?, correct))
}

/// Index of the largest value; the first one on ties.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// LeNet-style MNIST topology, BatchNorm → Binarize → Conv/Dense →
/// Activation → Pool. The first convolution and the classifier keep
/// `β = 1`; `beta_w`/`beta_a` apply to the second convolution and the hidden
/// dense layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LeNetConfig {
    pub input: [usize; 3],
    pub conv1: usize,
    pub conv2: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub classes: usize,
    pub beta_w: Beta,
    pub beta_a: Beta,
}

impl Default for LeNetConfig {
    fn default() -> Self {
        LeNetConfig {
            input: [1, 28, 28],
            conv1: 20,
            conv2: 50,
            hidden: 500,
            kernel: 5,
            classes: 10,
            beta_w: Beta::Block(1),
            beta_a: Beta::Block(1),
        }
    }
}

pub fn lenet_specs(cfg: &LeNetConfig) -> Result<Vec<LayerSpec>> {
    let [c, h, w] = cfg.input;
    let k = cfg.kernel;
    if k == 0 || h < k || w < k {
        return Err(Error::invalid(format!("kernel {k} does not fit a {h}x{w} input")));
    }
    let (h1, w1) = ((h - k + 1) / 2, (w - k + 1) / 2);
    if h1 < k || w1 < k {
        return Err(Error::invalid("input too small for two conv/pool stages"));
    }
    let (h2, w2) = ((h1 - k + 1) / 2, (w1 - k + 1) / 2);
    if h2 == 0 || w2 == 0 {
        return Err(Error::invalid("input too small for two conv/pool stages"));
    }
    let flat = cfg.conv2 * h2 * w2;
    let conv = |channels, filters, beta_w, beta_a| LayerSpec::HadaConv2d {
        channels,
        filters,
        kernel_h: k,
        kernel_w: k,
        stride: 1,
        pad: 0,
        beta_w,
        beta_a,
    };
    Ok(vec![
        conv(c, cfg.conv1, 1, 1),
        LayerSpec::Relu,
        LayerSpec::MaxPool2d { size: 2 },
        LayerSpec::BatchNorm { features: cfg.conv1 },
        conv(
            cfg.conv1,
            cfg.conv2,
            cfg.beta_w.resolve(cfg.conv1 * k * k),
            cfg.beta_a.resolve(w1),
        ),
        LayerSpec::Relu,
        LayerSpec::MaxPool2d { size: 2 },
        LayerSpec::Flatten,
        LayerSpec::BatchNorm { features: flat },
        LayerSpec::HadaDense {
            inputs: flat,
            outputs: cfg.hidden,
            beta_w: cfg.beta_w.resolve(flat),
            beta_a: cfg.beta_a.resolve(flat),
        },
        LayerSpec::Relu,
        LayerSpec::BatchNorm { features: cfg.hidden },
        LayerSpec::HadaDense {
            inputs: cfg.hidden,
            outputs: cfg.classes,
            beta_w: 1,
            beta_a: 1,
        },
        LayerSpec::SoftmaxHead,
    ])
}

pub fn lenet(cfg: &LeNetConfig, seed: u64) -> Result<Network> {
    Network::new(&cfg.input, lenet_specs(cfg)?, seed)
}
