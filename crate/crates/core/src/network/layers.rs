//! Individual layers: shapes, parameters and per-layer forward/backward.
//!
//! Activations are batch-major: `[N, F]` for dense data and `[N, C, H, W]`
//! for images. A Hada layer with `β = 1` on either side uses that operand
//! unchanged in both directions.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::hadamard::{activation_backward, binarize_activations, binarize_weights, weight_backward};
use crate::packing::{gcd, xhbnn_matmul_with_workers, PackedHadaMatrix};
use crate::tensor::{col2im_add, gemm, im2col_into, ConvGeometry, Tensor, Transpose};

pub const BN_EPS: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;

/// Architecture of one layer, without parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    HadaDense {
        inputs: usize,
        outputs: usize,
        beta_w: usize,
        beta_a: usize,
    },
    HadaConv2d {
        channels: usize,
        filters: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        pad: usize,
        beta_w: usize,
        beta_a: usize,
    },
    /// Per feature for `[N, F]`, per channel for `[N, C, H, W]`.
    BatchNorm { features: usize },
    Relu,
    /// Non-overlapping `size × size` windows; trailing rows/columns that do
    /// not fill a window are dropped.
    MaxPool2d { size: usize },
    Flatten,
    /// Marks the logits fed to softmax cross-entropy. Identity in forward.
    SoftmaxHead,
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::HadaDense { .. } => "HadaDense",
            LayerSpec::HadaConv2d { .. } => "HadaConv2d",
            LayerSpec::BatchNorm { .. } => "BatchNorm",
            LayerSpec::Relu => "ReLU",
            LayerSpec::MaxPool2d { .. } => "MaxPool2d",
            LayerSpec::Flatten => "Flatten",
            LayerSpec::SoftmaxHead => "SoftmaxHead",
        }
    }

    pub fn is_hada(&self) -> bool {
        matches!(self, LayerSpec::HadaDense { .. } | LayerSpec::HadaConv2d { .. })
    }

    /// `(β_w, β_a)` for Hada layers.
    pub fn betas(&self) -> Option<(usize, usize)> {
        match *self {
            LayerSpec::HadaDense { beta_w, beta_a, .. } | LayerSpec::HadaConv2d { beta_w, beta_a, .. } => {
                Some((beta_w, beta_a))
            }
            _ => None,
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = |what: &str| {
            Error::shape(format!("{} expects {what}, got input shape {input:?}", self.name()))
        };
        match *self {
            LayerSpec::HadaDense {
                inputs,
                outputs,
                beta_w,
                beta_a,
            } => {
                if input != [inputs] {
                    return Err(mismatch(&format!("[{inputs}]")));
                }
                check_betas(beta_w, beta_a, inputs)?;
                if outputs == 0 {
                    return Err(Error::invalid("dense layer with zero outputs"));
                }
                Ok(vec![outputs])
            }
            LayerSpec::HadaConv2d {
                channels,
                filters,
                beta_w,
                beta_a,
                ..
            } => {
                let [c, h, w] = match *input {
                    [c, h, w] if c == channels => [c, h, w],
                    _ => return Err(mismatch(&format!("[{channels}, H, W]"))),
                };
                check_betas(beta_w, beta_a, w)?;
                if filters == 0 {
                    return Err(Error::invalid("convolution with zero filters"));
                }
                let g = self.geometry(c, h, w).expect("conv spec");
                g.validate()?;
                Ok(vec![filters, g.out_h(), g.out_w()])
            }
            LayerSpec::BatchNorm { features } => match input {
                [f] | [f, _, _] if *f == features => Ok(input.to_vec()),
                _ => Err(mismatch(&format!("[{features}] or [{features}, H, W]"))),
            },
            LayerSpec::Relu | LayerSpec::SoftmaxHead => Ok(input.to_vec()),
            LayerSpec::MaxPool2d { size } => match *input {
                [c, h, w] if size >= 1 && h >= size && w >= size => Ok(vec![c, h / size, w / size]),
                _ => Err(mismatch(&format!("[C, H, W] with H, W >= {size} >= 1"))),
            },
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    fn geometry(&self, c: usize, h: usize, w: usize) -> Option<ConvGeometry> {
        match *self {
            LayerSpec::HadaConv2d {
                kernel_h,
                kernel_w,
                stride,
                pad,
                ..
            } => Some(ConvGeometry {
                channels: c,
                height: h,
                width: w,
                kernel_h,
                kernel_w,
                stride,
                pad,
            }),
            _ => None,
        }
    }

    /// Weight tensor shape of a Hada layer.
    pub fn weight_shape(&self) -> Option<Vec<usize>> {
        match *self {
            LayerSpec::HadaDense { inputs, outputs, .. } => Some(vec![outputs, inputs]),
            LayerSpec::HadaConv2d {
                channels,
                filters,
                kernel_h,
                kernel_w,
                ..
            } => Some(vec![filters, channels, kernel_h, kernel_w]),
            _ => None,
        }
    }

    /// Number of learned values, including biases and BatchNorm affine terms
    /// (running statistics excluded).
    pub fn param_count(&self) -> usize {
        match self {
            LayerSpec::HadaDense { .. } | LayerSpec::HadaConv2d { .. } => {
                let shape = self.weight_shape().expect("hada layer");
                shape.iter().product::<usize>() + shape[0]
            }
            LayerSpec::BatchNorm { features } => 2 * features,
            _ => 0,
        }
    }
}

fn check_betas(beta_w: usize, beta_a: usize, width: usize) -> Result<()> {
    if beta_w == 0 || beta_a == 0 {
        return Err(Error::invalid("every beta must be >= 1"));
    }
    if beta_a > width {
        return Err(Error::invalid(format!(
            "beta_a = {beta_a} exceeds the incoming activation width {width}"
        )));
    }
    Ok(())
}

/// A layer with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub(crate) spec: LayerSpec,
    pub(crate) params: Params,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Params {
    None,
    Hada { weight: Tensor, bias: Vec<f32> },
    Norm(NormParams),
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct NormParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
}

impl Layer {
    /// Kaiming-style init: weights `~ N(0, 2/fan_in)`, zero biases,
    /// `γ = 1`, `β = 0`, running mean 0 and variance 1.
    pub(crate) fn init(spec: LayerSpec, rng: &mut impl Rng) -> Self {
        let params = match &spec {
            LayerSpec::HadaDense { .. } | LayerSpec::HadaConv2d { .. } => {
                let shape = spec.weight_shape().expect("hada layer");
                let fan_in: usize = shape[1..].iter().product();
                let std = (2.0 / fan_in as f64).sqrt();
                let data = (0..shape.iter().product::<usize>())
                    .map(|_| (rng.sample::<f64, _>(StandardNormal) * std) as f32)
                    .collect();
                Params::Hada {
                    weight: Tensor::new(&shape, data).expect("weight shape"),
                    bias: vec![0.0; shape[0]],
                }
            }
            LayerSpec::BatchNorm { features } => Params::Norm(NormParams {
                gamma: vec![1.0; *features],
                beta: vec![0.0; *features],
                running_mean: vec![0.0; *features],
                running_var: vec![1.0; *features],
            }),
            _ => Params::None,
        };
        Layer { spec, params }
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    /// Full-precision master weights of a Hada layer.
    pub fn weight(&self) -> Option<&Tensor> {
        match &self.params {
            Params::Hada { weight, .. } => Some(weight),
            _ => None,
        }
    }

    pub fn bias(&self) -> Option<&[f32]> {
        match &self.params {
            Params::Hada { bias, .. } => Some(bias),
            _ => None,
        }
    }

    /// `(γ, β, running mean, running variance)` of a BatchNorm layer.
    pub fn norm(&self) -> Option<(&[f32], &[f32], &[f32], &[f32])> {
        match &self.params {
            Params::Norm(p) => Some((&p.gamma, &p.beta, &p.running_mean, &p.running_var)),
            _ => None,
        }
    }

    /// Learned parameter slices in a fixed order.
    pub(crate) fn param_slices_mut(&mut self) -> Vec<&mut [f32]> {
        match &mut self.params {
            Params::None => vec![],
            Params::Hada { weight, bias } => vec![weight.data_mut(), bias.as_mut_slice()],
            Params::Norm(p) => vec![p.gamma.as_mut_slice(), p.beta.as_mut_slice()],
        }
    }

    /// Binarized copy of the master weights (the weights themselves at
    /// `β_w = 1`).
    pub(crate) fn forward_weight(&self) -> Result<Option<Tensor>> {
        match (&self.params, self.spec.betas()) {
            (Params::Hada { weight, .. }, Some((bw, _))) if bw > 1 => binarize_weights(weight, bw).map(Some),
            (Params::Hada { weight, .. }, Some(_)) => Ok(Some(weight.clone())),
            _ => Ok(None),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// BatchNorm normalizes with batch statistics.
    Train,
    /// BatchNorm normalizes with running statistics.
    Eval,
}

/// How Hada dense layers multiply in eval mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum InferencePath {
    /// Dense GEMM on binarized tensors.
    #[default]
    Dense,
    /// Bit-packed xHBNN kernel on dense layers with any `β > 1`;
    /// convolutions keep the dense path.
    Packed { workers: usize },
}

/// What backward needs from a layer's forward.
#[derive(Debug)]
pub(crate) enum LayerCache {
    Dense {
        /// Pre-binarization input, kept when `β_a > 1`.
        raw_input: Option<Tensor>,
        input: Tensor,
        weight: Tensor,
    },
    Conv {
        raw_input: Option<Tensor>,
        in_shape: [usize; 4],
        cols: Vec<f32>,
        weight: Tensor,
    },
    Norm {
        xhat: Vec<f32>,
        inv_std: Vec<f32>,
        batch_stats: bool,
    },
    Relu {
        mask: Vec<bool>,
    },
    Pool {
        in_shape: [usize; 4],
        argmax: Vec<u32>,
    },
    Flatten {
        in_shape: Vec<usize>,
    },
    Head,
}

/// Gradients for one layer's learned parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerGrad {
    None,
    Hada { weight: Tensor, bias: Vec<f32> },
    Norm { gamma: Vec<f32>, beta: Vec<f32> },
}

impl LayerGrad {
    pub(crate) fn slices(&self) -> Vec<&[f32]> {
        match self {
            LayerGrad::None => vec![],
            LayerGrad::Hada { weight, bias } => vec![weight.data(), bias.as_slice()],
            LayerGrad::Norm { gamma, beta } => vec![gamma.as_slice(), beta.as_slice()],
        }
    }
}

/// Batch mean and biased variance per BatchNorm feature.
pub(crate) struct BatchStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub count: usize,
}

pub(crate) struct LayerOutput {
    pub out: Tensor,
    pub cache: Option<LayerCache>,
    pub stats: Option<BatchStats>,
}

fn dims4(t: &Tensor) -> Result<[usize; 4]> {
    match *t.shape() {
        [n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(Error::shape(format!("expected [N, C, H, W], got {:?}", t.shape()))),
    }
}

fn maybe_binarize(x: &Tensor, beta_a: usize) -> Result<Tensor> {
    if beta_a > 1 {
        binarize_activations(x, beta_a)
    } else {
        Ok(x.clone())
    }
}

impl Layer {
    pub(crate) fn forward(&self, x: &Tensor, mode: Mode, keep: bool, path: InferencePath) -> Result<LayerOutput> {
        let plain = |out: Tensor| LayerOutput {
            out,
            cache: None,
            stats: None,
        };
        match (&self.spec, &self.params) {
            (&LayerSpec::HadaDense { inputs, outputs, beta_w, beta_a }, Params::Hada { weight, bias }) => {
                let [n, f] = match *x.shape() {
                    [n, f] if f == inputs => [n, f],
                    _ => return Err(Error::shape(format!("HadaDense expects [N, {inputs}], got {:?}", x.shape()))),
                };
                if let (InferencePath::Packed { workers }, false, true) = (path, keep, beta_w > 1 || beta_a > 1) {
                    let out = packed_dense(weight, bias, x, beta_w, beta_a, workers)?;
                    return Ok(plain(out));
                }
                let xb = maybe_binarize(x, beta_a)?;
                let wb = self.forward_weight()?.expect("hada weight");
                let mut out = vec![0.0; n * outputs];
                for row in out.chunks_exact_mut(outputs) {
                    row.copy_from_slice(bias);
                }
                gemm(n, f, outputs, xb.data(), wb.data(), &mut out, Transpose::Rhs, true);
                let out = Tensor::new(&[n, outputs], out)?;
                let cache = keep.then(|| LayerCache::Dense {
                    raw_input: (beta_a > 1).then(|| x.clone()),
                    input: xb,
                    weight: wb,
                });
                Ok(LayerOutput {
                    out,
                    cache,
                    stats: None,
                })
            }
            (&LayerSpec::HadaConv2d { filters, beta_a, .. }, Params::Hada { bias, .. }) => {
                let [n, c, h, w] = dims4(x)?;
                let g = self.spec.geometry(c, h, w).expect("conv spec");
                self.spec.output_shape(&[c, h, w])?;
                let xb = maybe_binarize(x, beta_a)?;
                let (k, p) = (g.patch_len(), g.out_positions());
                let ld = n * p;
                let mut cols = vec![0.0; k * ld];
                for (s, image) in xb.data().chunks_exact(g.input_len()).enumerate() {
                    im2col_into(image, &g, &mut cols, ld, s * p);
                }
                let wb = self.forward_weight()?.expect("hada weight");
                let mut y = vec![0.0; filters * ld];
                gemm(filters, k, ld, wb.data(), &cols, &mut y, Transpose::None, false);
                // [F, N·P] -> [N, F, P] plus bias.
                let mut out = vec![0.0; n * filters * p];
                for (fi, yrow) in y.chunks_exact(ld).enumerate() {
                    for s in 0..n {
                        let dst = &mut out[(s * filters + fi) * p..(s * filters + fi + 1) * p];
                        for (d, v) in dst.iter_mut().zip(&yrow[s * p..(s + 1) * p]) {
                            *d = v + bias[fi];
                        }
                    }
                }
                let out = Tensor::new(&[n, filters, g.out_h(), g.out_w()], out)?;
                let cache = keep.then(|| LayerCache::Conv {
                    raw_input: (beta_a > 1).then(|| x.clone()),
                    in_shape: [n, c, h, w],
                    cols,
                    weight: wb,
                });
                Ok(LayerOutput {
                    out,
                    cache,
                    stats: None,
                })
            }
            (&LayerSpec::BatchNorm { features }, Params::Norm(p)) => {
                let (n, inner) = norm_layout(x, features)?;
                let (mean, var, stats) = match mode {
                    Mode::Train => {
                        let (mean, var) = batch_moments(x.data(), n, features, inner);
                        let stats = BatchStats {
                            mean: mean.clone(),
                            var: var.clone(),
                            count: n * inner,
                        };
                        (mean, var, Some(stats))
                    }
                    Mode::Eval => (p.running_mean.clone(), p.running_var.clone(), None),
                };
                let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                let mut xhat = vec![0.0; x.len()];
                let mut out = vec![0.0; x.len()];
                for (i, ((src, xh), o)) in x
                    .data()
                    .chunks_exact(inner)
                    .zip(xhat.chunks_exact_mut(inner))
                    .zip(out.chunks_exact_mut(inner))
                    .enumerate()
                {
                    let f = i % features;
                    let (m, s, g, b) = (mean[f], inv_std[f], p.gamma[f], p.beta[f]);
                    for ((&v, xh), o) in src.iter().zip(xh).zip(o) {
                        *xh = (v - m) * s;
                        *o = g * *xh + b;
                    }
                }
                let out = Tensor::new(x.shape(), out)?;
                let cache = keep.then_some(LayerCache::Norm {
                    xhat,
                    inv_std,
                    batch_stats: mode == Mode::Train,
                });
                Ok(LayerOutput { out, cache, stats })
            }
            (LayerSpec::Relu, _) => {
                let out: Vec<f32> = x.data().iter().map(|&v| if v < 0.0 { 0.0 } else { v }).collect();
                let cache = keep.then(|| LayerCache::Relu {
                    mask: x.data().iter().map(|&v| v > 0.0).collect(),
                });
                Ok(LayerOutput {
                    out: Tensor::new(x.shape(), out)?,
                    cache,
                    stats: None,
                })
            }
            (&LayerSpec::MaxPool2d { size }, _) => {
                let [n, c, h, w] = dims4(x)?;
                self.spec.output_shape(&[c, h, w])?;
                let (oh, ow) = (h / size, w / size);
                let mut out = vec![0.0; n * c * oh * ow];
                let mut argmax = vec![0u32; out.len()];
                for (plane, (dst, arg)) in x
                    .data()
                    .chunks_exact(h * w)
                    .zip(out.chunks_exact_mut(oh * ow).zip(argmax.chunks_exact_mut(oh * ow)))
                {
                    for (oy, (drow, arow)) in dst.chunks_exact_mut(ow).zip(arg.chunks_exact_mut(ow)).enumerate() {
                        let top = oy * size * w;
                        for (ox, (d, a)) in drow.iter_mut().zip(arow.iter_mut()).enumerate() {
                            let mut best = top + ox * size;
                            let mut val = plane[best];
                            for dy in 0..size {
                                let start = top + dy * w + ox * size;
                                for (dx, &v) in plane[start..start + size].iter().enumerate() {
                                    if v > val {
                                        val = v;
                                        best = start + dx;
                                    }
                                }
                            }
                            *d = val;
                            *a = best as u32;
                        }
                    }
                }
                let cache = keep.then_some(LayerCache::Pool {
                    in_shape: [n, c, h, w],
                    argmax,
                });
                Ok(LayerOutput {
                    out: Tensor::new(&[n, c, oh, ow], out)?,
                    cache,
                    stats: None,
                })
            }
            (LayerSpec::Flatten, _) => {
                let n = *x.shape().first().ok_or_else(|| Error::shape("flatten of a rank-0 tensor"))?;
                let out = x.reshaped(&[n as isize, -1])?;
                let cache = keep.then(|| LayerCache::Flatten {
                    in_shape: x.shape().to_vec(),
                });
                Ok(LayerOutput {
                    out,
                    cache,
                    stats: None,
                })
            }
            (LayerSpec::SoftmaxHead, _) => Ok(LayerOutput {
                out: x.clone(),
                cache: keep.then_some(LayerCache::Head),
                stats: None,
            }),
            _ => Err(Error::Model(format!("{} layer without its parameters", self.spec.name()))),
        }
    }

    /// Returns the gradient with respect to the layer input (skipped by
    /// Hada layers when `need_input` is false) and the parameter gradients.
    pub(crate) fn backward(
        &self,
        cache: &LayerCache,
        grad: &Tensor,
        need_input: bool,
    ) -> Result<(Option<Tensor>, LayerGrad)> {
        match (&self.spec, &self.params, cache) {
            (
                &LayerSpec::HadaDense {
                    inputs,
                    outputs,
                    beta_w,
                    beta_a,
                },
                Params::Hada { weight, .. },
                LayerCache::Dense {
                    raw_input,
                    input,
                    weight: wb,
                },
            ) => {
                let n = input.shape()[0];
                if grad.shape() != [n, outputs] {
                    return Err(grad_mismatch(grad, &[n, outputs]));
                }
                let g = grad.data();
                let mut gw = vec![0.0; outputs * inputs];
                gemm(outputs, n, inputs, g, input.data(), &mut gw, Transpose::Lhs, false);
                let gw = Tensor::new(&[outputs, inputs], gw)?;
                let gw = if beta_w > 1 { weight_backward(weight, &gw, beta_w)? } else { gw };
                let mut gb = vec![0.0; outputs];
                for row in g.chunks_exact(outputs) {
                    for (b, v) in gb.iter_mut().zip(row) {
                        *b += v;
                    }
                }
                if !need_input {
                    return Ok((None, LayerGrad::Hada { weight: gw, bias: gb }));
                }
                let mut gx = vec![0.0; n * inputs];
                gemm(n, outputs, inputs, g, wb.data(), &mut gx, Transpose::None, false);
                let gx = Tensor::new(&[n, inputs], gx)?;
                let gx = match raw_input {
                    Some(raw) => activation_backward(raw, &gx, beta_a)?,
                    None => gx,
                };
                Ok((Some(gx), LayerGrad::Hada { weight: gw, bias: gb }))
            }
            (
                &LayerSpec::HadaConv2d {
                    filters,
                    beta_w,
                    beta_a,
                    ..
                },
                Params::Hada { weight, .. },
                LayerCache::Conv {
                    raw_input,
                    in_shape,
                    cols,
                    weight: wb,
                },
            ) => {
                let [n, c, h, w] = *in_shape;
                let g = self.spec.geometry(c, h, w).expect("conv spec");
                let (k, p) = (g.patch_len(), g.out_positions());
                let ld = n * p;
                if grad.shape() != [n, filters, g.out_h(), g.out_w()] {
                    return Err(grad_mismatch(grad, &[n, filters, g.out_h(), g.out_w()]));
                }
                // [N, F, P] -> [F, N·P]
                let mut gy = vec![0.0; filters * ld];
                let mut gb = vec![0.0; filters];
                for (i, chunk) in grad.data().chunks_exact(p).enumerate() {
                    let (s, fi) = (i / filters, i % filters);
                    gy[fi * ld + s * p..fi * ld + (s + 1) * p].copy_from_slice(chunk);
                    gb[fi] += chunk.iter().sum::<f32>();
                }
                let mut gw = vec![0.0; filters * k];
                gemm(filters, ld, k, &gy, cols, &mut gw, Transpose::Rhs, false);
                let gw = Tensor::new(weight.shape(), gw)?;
                let gw = if beta_w > 1 { weight_backward(weight, &gw, beta_w)? } else { gw };
                if !need_input {
                    return Ok((None, LayerGrad::Hada { weight: gw, bias: gb }));
                }
                let mut gcols = vec![0.0; k * ld];
                gemm(k, filters, ld, wb.data(), &gy, &mut gcols, Transpose::Lhs, false);
                let mut gx = vec![0.0; n * g.input_len()];
                for (s, image) in gx.chunks_exact_mut(g.input_len()).enumerate() {
                    col2im_add(&gcols, &g, ld, s * p, image);
                }
                let gx = Tensor::new(&[n, c, h, w], gx)?;
                let gx = match raw_input {
                    Some(raw) => activation_backward(raw, &gx, beta_a)?,
                    None => gx,
                };
                Ok((Some(gx), LayerGrad::Hada { weight: gw, bias: gb }))
            }
            (
                &LayerSpec::BatchNorm { features },
                Params::Norm(p),
                LayerCache::Norm {
                    xhat,
                    inv_std,
                    batch_stats,
                },
            ) => {
                if grad.len() != xhat.len() {
                    return Err(Error::shape("BatchNorm gradient does not match its input"));
                }
                let (n, inner) = norm_layout(grad, features)?;
                let count = (n * inner) as f64;
                let mut sum_g = vec![0.0f64; features];
                let mut sum_gx = vec![0.0f64; features];
                for (i, (g, xh)) in grad.data().chunks_exact(inner).zip(xhat.chunks_exact(inner)).enumerate() {
                    let f = i % features;
                    for (&gv, &xh) in g.iter().zip(xh) {
                        sum_g[f] += gv as f64;
                        sum_gx[f] += (gv * xh) as f64;
                    }
                }
                let mut gx = vec![0.0; grad.len()];
                for (i, ((o, g), xh)) in gx
                    .chunks_exact_mut(inner)
                    .zip(grad.data().chunks_exact(inner))
                    .zip(xhat.chunks_exact(inner))
                    .enumerate()
                {
                    let f = i % features;
                    let scale = p.gamma[f] * inv_std[f];
                    let (mg, mgx) = (sum_g[f] / count, sum_gx[f] / count);
                    for ((o, &gv), &xh) in o.iter_mut().zip(g).zip(xh) {
                        *o = if *batch_stats {
                            scale * (gv as f64 - mg - xh as f64 * mgx) as f32
                        } else {
                            scale * gv
                        };
                    }
                }
                Ok((
                    Some(Tensor::new(grad.shape(), gx)?),
                    LayerGrad::Norm {
                        gamma: sum_gx.iter().map(|&v| v as f32).collect(),
                        beta: sum_g.iter().map(|&v| v as f32).collect(),
                    },
                ))
            }
            (LayerSpec::Relu, _, LayerCache::Relu { mask }) => {
                if grad.len() != mask.len() {
                    return Err(Error::shape("ReLU gradient does not match its input"));
                }
                let gx = grad
                    .data()
                    .iter()
                    .zip(mask)
                    .map(|(&g, &m)| if m { g } else { 0.0 })
                    .collect();
                Ok((Some(Tensor::new(grad.shape(), gx)?), LayerGrad::None))
            }
            (&LayerSpec::MaxPool2d { size }, _, LayerCache::Pool { in_shape, argmax }) => {
                let [n, c, h, w] = *in_shape;
                if grad.shape() != [n, c, h / size, w / size] {
                    return Err(grad_mismatch(grad, &[n, c, h / size, w / size]));
                }
                let mut gx = vec![0.0; n * c * h * w];
                let window = (h / size) * (w / size);
                for ((plane, g), arg) in gx
                    .chunks_exact_mut(h * w)
                    .zip(grad.data().chunks_exact(window))
                    .zip(argmax.chunks_exact(window))
                {
                    for (&gv, &a) in g.iter().zip(arg) {
                        plane[a as usize] += gv;
                    }
                }
                Ok((Some(Tensor::new(&[n, c, h, w], gx)?), LayerGrad::None))
            }
            (LayerSpec::Flatten, _, LayerCache::Flatten { in_shape }) => {
                let spec: Vec<isize> = in_shape.iter().map(|&d| d as isize).collect();
                Ok((Some(grad.reshaped(&spec)?), LayerGrad::None))
            }
            (LayerSpec::SoftmaxHead, _, LayerCache::Head) => Ok((Some(grad.clone()), LayerGrad::None)),
            _ => Err(Error::invalid(format!(
                "cache entry does not belong to this {} layer",
                self.spec.name()
            ))),
        }
    }

    /// Folds one training batch's statistics into the running estimates,
    /// using the unbiased variance.
    pub(crate) fn update_running_stats(&mut self, stats: &BatchStats) {
        if let Params::Norm(p) = &mut self.params {
            let unbias = if stats.count > 1 {
                stats.count as f32 / (stats.count - 1) as f32
            } else {
                1.0
            };
            for f in 0..p.gamma.len() {
                p.running_mean[f] = (1.0 - BN_MOMENTUM) * p.running_mean[f] + BN_MOMENTUM * stats.mean[f];
                p.running_var[f] = (1.0 - BN_MOMENTUM) * p.running_var[f] + BN_MOMENTUM * stats.var[f] * unbias;
            }
        }
    }
}

fn grad_mismatch(grad: &Tensor, expect: &[usize]) -> Error {
    Error::shape(format!("gradient shape {:?}, expected {expect:?}", grad.shape()))
}

/// `(batch, elements per feature per sample)` for `[N, F]` or `[N, F, H, W]`.
fn norm_layout(x: &Tensor, features: usize) -> Result<(usize, usize)> {
    match *x.shape() {
        [n, f] if f == features => Ok((n, 1)),
        [n, f, h, w] if f == features => Ok((n, h * w)),
        _ => Err(Error::shape(format!(
            "BatchNorm over {features} features got {:?}",
            x.shape()
        ))),
    }
}

fn batch_moments(x: &[f32], n: usize, features: usize, inner: usize) -> (Vec<f32>, Vec<f32>) {
    let count = (n * inner) as f64;
    let mut sum = vec![0.0f64; features];
    for (i, chunk) in x.chunks_exact(inner).enumerate() {
        sum[i % features] += chunk.iter().map(|&v| v as f64).sum::<f64>();
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
    let mut sq = vec![0.0f64; features];
    for (i, chunk) in x.chunks_exact(inner).enumerate() {
        let m = mean[i % features];
        sq[i % features] += chunk.iter().map(|&v| (v as f64 - m) * (v as f64 - m)).sum::<f64>();
    }
    (
        mean.iter().map(|&m| m as f32).collect(),
        sq.iter().map(|&s| (s / count) as f32).collect(),
    )
}

/// `x W̃ᵀ + b` through the packed kernel, with both operands refined to the
/// gcd of their block sizes.
fn packed_dense(weight: &Tensor, bias: &[f32], x: &Tensor, beta_w: usize, beta_a: usize, workers: usize) -> Result<Tensor> {
    let [outputs, inputs] = [weight.shape()[0], weight.shape()[1]];
    let n = x.shape()[0];
    let g = gcd(beta_w, beta_a);
    let pw = PackedHadaMatrix::pack_rows(weight.data(), outputs, inputs, beta_w)?.refine(g)?;
    let pa = PackedHadaMatrix::pack_rows(x.data(), n, inputs, beta_a)?.refine(g)?;
    let ot = xhbnn_matmul_with_workers(&pw, &pa, workers)?;
    let mut out = vec![0.0; n * outputs];
    for (o, row) in ot.data().chunks_exact(n).enumerate() {
        for (s, v) in row.iter().enumerate() {
            out[s * outputs + o] = v + bias[o];
        }
    }
    Tensor::new(&[n, outputs], out)
}
