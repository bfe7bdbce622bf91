//! Studies of what block binarization preserves: vector angles,
//! layer-output correlation across `(β_w, β_a)` grids, and model size.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hadamard::{binarize_vec, HadaConfig};
use crate::network::{encoded_model_len, InferencePath, LayerSpec, ModelStorage, Network};
use crate::packing::PackedHadaMatrix;
use crate::tensor::Tensor;

pub const ANGLE_CSV_HEADER: &str = "beta,n,trials,mean_deg,stderr";
pub const CORRELATION_CSV_HEADER: &str = "layer,beta_w,beta_a,pearson_r";
pub const MEMORY_CSV_HEADER: &str = "layer,params,beta_w,dense_bytes,packed_bytes,ratio";

fn analysis_err(msg: impl Into<String>) -> Error {
    Error::Analysis(msg.into())
}

/// Angle in degrees between `u` and `v`, via
/// `2·atan2(‖û − v̂‖, ‖û + v̂‖)` on the unit vectors. Unlike `acos` of the
/// cosine this stays accurate near 0° and 180°, and it is exactly 0 when
/// `v` is a positive multiple of `u`. `None` if either vector is zero.
pub fn angle_deg(u: &[f32], v: &[f32]) -> Option<f64> {
    let norm = |x: &[f32]| x.iter().map(|&a| (a as f64) * (a as f64)).sum::<f64>().sqrt();
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 || !nu.is_finite() || !nv.is_finite() {
        return None;
    }
    let (mut diff, mut sum) = (0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a as f64 / nu, b as f64 / nv);
        diff += (a - b) * (a - b);
        sum += (a + b) * (a + b);
    }
    Some((2.0 * diff.sqrt().atan2(sum.sqrt())).to_degrees())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AngleRecord {
    pub beta: usize,
    pub n: usize,
    pub trials: usize,
    pub mean_deg: f64,
    /// Standard error of the mean (sample standard deviation over √trials).
    pub stderr: f64,
}

/// Mean angle between standard-normal vectors of length `n` and their
/// binarization, for each `β`. Every `β` sees the same vectors.
pub fn angle_study(n: usize, betas: &[usize], trials: usize, seed: u64) -> Result<Vec<AngleRecord>> {
    if betas.is_empty() {
        return Err(analysis_err("no block sizes given"));
    }
    if trials == 0 {
        return Err(analysis_err("trials must be >= 1"));
    }
    if let Some(&b) = betas.iter().find(|&&b| b == 0 || b > n) {
        return Err(analysis_err(format!("beta {b} outside 1..={n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = vec![Vec::with_capacity(trials); betas.len()];
    let mut v = vec![0.0f32; n];
    for _ in 0..trials {
        // A zero vector has no direction; draw again.
        loop {
            v.iter_mut().for_each(|x| *x = rng.sample(StandardNormal));
            if v.iter().any(|&x| x != 0.0) {
                break;
            }
        }
        for (s, &beta) in samples.iter_mut().zip(betas) {
            let b = binarize_vec(&v, beta)?;
            s.push(angle_deg(&v, &b).expect("non-zero vector and binarization"));
        }
    }
    Ok(betas
        .iter()
        .zip(samples)
        .map(|(&beta, s)| {
            let (mean, stderr) = mean_stderr(&s);
            AngleRecord {
                beta,
                n,
                trials,
                mean_deg: mean,
                stderr,
            }
        })
        .collect())
}

fn mean_stderr(s: &[f64]) -> (f64, f64) {
    let n = s.len() as f64;
    let mean = s.iter().sum::<f64>() / n;
    if s.len() < 2 {
        return (mean, 0.0);
    }
    let var = s.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `arccos(√(2/π))` in degrees: the expected angle when one scale covers
/// an entire Gaussian vector.
pub fn single_scale_limit_deg() -> f64 {
    (2.0 / std::f64::consts::PI).sqrt().acos().to_degrees()
}

pub fn write_angle_csv(mut out: impl Write, rows: &[AngleRecord]) -> std::io::Result<()> {
    writeln!(out, "{ANGLE_CSV_HEADER}")?;
    for r in rows {
        writeln!(out, "{},{},{},{:.6},{:.6}", r.beta, r.n, r.trials, r.mean_deg, r.stderr)?;
    }
    Ok(())
}

/// Pearson correlation with two passes in `f64`. `None` when either side
/// is constant, the lengths differ, or the input is empty.
pub fn pearson(x: &[f32], y: &[f32]) -> Option<f64> {
    if x.len() != y.len() || x.is_empty() {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().map(|&v| v as f64).sum::<f64>() / n;
    let my = y.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a as f64 - mx, b as f64 - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 || !(sxx * syy).is_finite() {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorrelationRecord {
    /// Index of the layer in the network.
    pub layer: usize,
    pub beta_w: usize,
    pub beta_a: usize,
    /// `None` when either output is constant.
    pub pearson_r: Option<f64>,
}

/// Runs `net`'s weights under every `(β_w, β_a)` in `betas × betas`,
/// applied to the inner Hada layers (the first and last keep `β = 1`).
/// Each inner layer's eval-mode output is correlated against the same
/// layer's output with every inner layer at `(1, 1)`.
///
/// Records come out ordered by `β_w`, then `β_a`, then layer.
pub fn correlation_study(net: &Network, betas: &[usize], batch: &Tensor) -> Result<Vec<CorrelationRecord>> {
    let hada = net.hada_layers();
    if hada.len() < 3 {
        return Err(analysis_err(format!(
            "need at least 3 Hada layers to have an inner one, found {}",
            hada.len()
        )));
    }
    if betas.is_empty() || betas.contains(&0) {
        return Err(analysis_err("grid block sizes must be >= 1"));
    }
    let inner = &hada[1..hada.len() - 1];
    let trace_at = |bw: usize, ba: usize| -> Result<Vec<Tensor>> {
        let mut variant = net.clone();
        variant
            .set_hada_config(&HadaConfig::uniform(hada.len(), bw, ba)?)
            .map_err(|e| analysis_err(format!("grid cell (beta_w={bw}, beta_a={ba}): {e}")))?;
        variant.trace(batch, InferencePath::Dense)
    };
    let reference = trace_at(1, 1)?;
    let mut out = Vec::with_capacity(betas.len() * betas.len() * inner.len());
    for &bw in betas {
        for &ba in betas {
            let outs = trace_at(bw, ba)?;
            for &l in inner {
                out.push(CorrelationRecord {
                    layer: l,
                    beta_w: bw,
                    beta_a: ba,
                    pearson_r: pearson(outs[l].data(), reference[l].data()),
                });
            }
        }
    }
    Ok(out)
}

/// How much `r` moves along each axis of the grid for one layer.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridSensitivity {
    pub layer: usize,
    /// Largest spread of `r` over `β_w` with `β_a` held fixed.
    pub max_delta_over_beta_w: f64,
    /// Largest spread of `r` over `β_a` with `β_w` held fixed.
    pub max_delta_over_beta_a: f64,
}

/// Per-layer spreads of a correlation grid; missing cells are skipped.
pub fn grid_sensitivity(records: &[CorrelationRecord]) -> Vec<GridSensitivity> {
    let mut layers: Vec<usize> = records.iter().map(|r| r.layer).collect();
    layers.sort_unstable();
    layers.dedup();
    let spread = |rs: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = rs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r), hi.max(r)));
        if hi >= lo {
            hi - lo
        } else {
            0.0
        }
    };
    layers
        .into_iter()
        .map(|layer| {
            let cells: Vec<&CorrelationRecord> = records.iter().filter(|r| r.layer == layer).collect();
            let mut bws: Vec<usize> = cells.iter().map(|r| r.beta_w).collect();
            let mut bas: Vec<usize> = cells.iter().map(|r| r.beta_a).collect();
            bws.sort_unstable();
            bws.dedup();
            bas.sort_unstable();
            bas.dedup();
            let over_w = bas
                .iter()
                .map(|&ba| spread(&mut cells.iter().filter(|r| r.beta_a == ba).filter_map(|r| r.pearson_r)))
                .fold(0.0, f64::max);
            let over_a = bws
                .iter()
                .map(|&bw| spread(&mut cells.iter().filter(|r| r.beta_w == bw).filter_map(|r| r.pearson_r)))
                .fold(0.0, f64::max);
            GridSensitivity {
                layer,
                max_delta_over_beta_w: over_w,
                max_delta_over_beta_a: over_a,
            }
        })
        .collect()
}

pub fn write_correlation_csv(mut out: impl Write, rows: &[CorrelationRecord]) -> std::io::Result<()> {
    writeln!(out, "{CORRELATION_CSV_HEADER}")?;
    for r in rows {
        let v = r.pearson_r.map(|v| format!("{v:.8}")).unwrap_or_default();
        writeln!(out, "{},{},{},{v}", r.layer, r.beta_w, r.beta_a)?;
    }
    Ok(())
}

/// One weight tensor for size accounting.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerParams {
    pub name: String,
    pub params: u64,
    pub beta_w: usize,
    /// Whether the layer is stored as signs plus block scales.
    pub binarized: bool,
}

impl LayerParams {
    pub fn new(name: impl Into<String>, params: u64, beta_w: usize, binarized: bool) -> Self {
        LayerParams {
            name: name.into(),
            params,
            beta_w,
            binarized,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MemoryRow {
    pub layer: String,
    pub params: u64,
    /// 1 for layers kept dense.
    pub beta_w: usize,
    pub dense_bytes: f64,
    pub packed_bytes: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MemoryReport {
    pub bits: u32,
    pub rows: Vec<MemoryRow>,
    pub dense_bytes: f64,
    pub packed_bytes: f64,
    pub ratio: f64,
}

/// Size of each layer with values of `bits` bits: dense layers take
/// `params·bits/8` bytes, binarized ones one bit per value plus one
/// `bits`-wide scale per block, `params·(bits/8)·(1/β_w + 1/bits)`. A
/// binarized layer's ratio is therefore `β_w·X / (β_w + X)`.
pub fn memory_saving(layers: &[LayerParams], bits: u32) -> Result<MemoryReport> {
    if ![8, 16, 32, 64].contains(&bits) {
        return Err(analysis_err(format!("scale width {bits} not in {{8, 16, 32, 64}}")));
    }
    if layers.is_empty() {
        return Err(analysis_err("no layers to account for"));
    }
    let x = bits as f64;
    let mut rows = Vec::with_capacity(layers.len());
    for l in layers {
        if l.params == 0 || l.beta_w == 0 {
            return Err(analysis_err(format!("layer {}: params and beta_w must be >= 1", l.name)));
        }
        let p = l.params as f64;
        let dense = p * x / 8.0;
        let (beta_w, packed) = if l.binarized {
            (l.beta_w, dense * (1.0 / l.beta_w as f64 + 1.0 / x))
        } else {
            (1, dense)
        };
        rows.push(MemoryRow {
            layer: l.name.clone(),
            params: l.params,
            beta_w,
            dense_bytes: dense,
            packed_bytes: packed,
            ratio: dense / packed,
        });
    }
    let dense_bytes: f64 = rows.iter().map(|r| r.dense_bytes).sum();
    let packed_bytes: f64 = rows.iter().map(|r| r.packed_bytes).sum();
    Ok(MemoryReport {
        bits,
        rows,
        dense_bytes,
        packed_bytes,
        ratio: dense_bytes / packed_bytes,
    })
}

pub fn write_memory_csv(mut out: impl Write, report: &MemoryReport) -> std::io::Result<()> {
    writeln!(out, "{MEMORY_CSV_HEADER}")?;
    for r in &report.rows {
        writeln!(
            out,
            "{},{},{},{:.1},{:.1},{:.6}",
            r.layer, r.params, r.beta_w, r.dense_bytes, r.packed_bytes, r.ratio
        )?;
    }
    writeln!(
        out,
        "total,{},,{:.1},{:.1},{:.6}",
        report.rows.iter().map(|r| r.params).sum::<u64>(),
        report.dense_bytes,
        report.packed_bytes,
        report.ratio
    )
}

/// Reference architectures with published layer shapes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arch {
    /// ImageNet ResNet-18, including the 1×1 projection shortcuts.
    ResNet18,
    /// The single-tower AlexNet as distributed with torchvision
    /// (64-192-384-256-256 filters, 4096-4096-1000 dense).
    AlexNet,
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "resnet18" => Ok(Arch::ResNet18),
            "alexnet" => Ok(Arch::AlexNet),
            _ => Err(analysis_err(format!("unknown architecture {s:?} (resnet18, alexnet)"))),
        }
    }
}

/// Weight counts per conv/dense layer (biases and BatchNorm parameters
/// left out). The first and last layers stay dense; the rest use `beta_w`.
pub fn arch_layers(arch: Arch, beta_w: usize) -> Vec<LayerParams> {
    let conv = |c: u64, k: u64, kh: u64| c * k * kh * kh;
    let mut shapes: Vec<(String, u64)> = Vec::new();
    match arch {
        Arch::ResNet18 => {
            shapes.push(("conv1".into(), conv(3, 64, 7)));
            let stages = [(64, 64, false), (64, 128, true), (128, 256, true), (256, 512, true)];
            for (s, &(cin, cout, down)) in stages.iter().enumerate() {
                for b in 0..2 {
                    let first_in = if b == 0 { cin } else { cout };
                    let name = format!("layer{}.{b}", s + 1);
                    shapes.push((format!("{name}.conv1"), conv(first_in, cout, 3)));
                    shapes.push((format!("{name}.conv2"), conv(cout, cout, 3)));
                    if b == 0 && down {
                        shapes.push((format!("{name}.downsample"), conv(cin, cout, 1)));
                    }
                }
            }
            shapes.push(("fc".into(), 512 * 1000));
        }
        Arch::AlexNet => {
            shapes.push(("conv1".into(), conv(3, 64, 11)));
            shapes.push(("conv2".into(), conv(64, 192, 5)));
            shapes.push(("conv3".into(), conv(192, 384, 3)));
            shapes.push(("conv4".into(), conv(384, 256, 3)));
            shapes.push(("conv5".into(), conv(256, 256, 3)));
            shapes.push(("fc6".into(), 256 * 6 * 6 * 4096));
            shapes.push(("fc7".into(), 4096 * 4096));
            shapes.push(("fc8".into(), 4096 * 1000));
        }
    }
    let last = shapes.len() - 1;
    shapes
        .into_iter()
        .enumerate()
        .map(|(i, (name, params))| {
            let inner = i != 0 && i != last;
            LayerParams::new(name, params, if inner { beta_w } else { 1 }, inner)
        })
        .collect()
}

/// One line of a model summary.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub index: usize,
    pub kind: String,
    /// Per-sample output shape.
    pub output_shape: Vec<usize>,
    pub weight_shape: Option<Vec<usize>>,
    pub beta_w: Option<usize>,
    pub beta_a: Option<usize>,
    pub params: usize,
    /// Bytes this layer takes in a model file with every weight dense.
    pub dense_bytes: usize,
    /// Bytes this layer takes in a model file with packed Hada weights.
    pub stored_bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelSummary {
    pub input_shape: Vec<usize>,
    pub layers: Vec<SummaryRow>,
    pub params: usize,
    /// Whole-file sizes, header and checksum included.
    pub dense_file_bytes: usize,
    pub packed_file_bytes: usize,
    pub ratio: f64,
}

/// Per-layer storage of a network, with byte counts that add up to the
/// sizes of its dense and packed model files.
pub fn model_summary(net: &Network) -> Result<ModelSummary> {
    let shapes = net.shapes()?;
    let layers = net
        .layers()
        .iter()
        .enumerate()
        .map(|(i, layer)| {
            let spec = layer.spec();
            let (dense_bytes, stored_bytes) = layer_bytes(spec);
            SummaryRow {
                index: i,
                kind: spec.name().to_string(),
                output_shape: shapes[i + 1].clone(),
                weight_shape: spec.weight_shape(),
                beta_w: spec.betas().map(|b| b.0),
                beta_a: spec.betas().map(|b| b.1),
                params: spec.param_count(),
                dense_bytes,
                stored_bytes,
            }
        })
        .collect();
    let dense_file_bytes = encoded_model_len(net, ModelStorage::Dense);
    let packed_file_bytes = encoded_model_len(net, ModelStorage::Packed);
    Ok(ModelSummary {
        input_shape: net.input_shape().to_vec(),
        layers,
        params: net.param_count(),
        dense_file_bytes,
        packed_file_bytes,
        ratio: dense_file_bytes as f64 / packed_file_bytes as f64,
    })
}

/// `(dense, stored)` bytes of one layer record in a model file.
fn layer_bytes(spec: &LayerSpec) -> (usize, usize) {
    match spec {
        LayerSpec::HadaDense { beta_w, .. } | LayerSpec::HadaConv2d { beta_w, .. } => {
            let extents = if matches!(spec, LayerSpec::HadaDense { .. }) { 4 } else { 8 };
            let shape = spec.weight_shape().expect("hada layer");
            let rows = shape[0];
            let cols: usize = shape[1..].iter().product();
            let fixed = 1 + 4 * extents + 1 + 4 * rows;
            let dense = fixed + 4 + 4 * rows * cols;
            let stored = if *beta_w > 1 {
                fixed + PackedHadaMatrix::encoded_len_for(rows, cols, *beta_w)
            } else {
                dense
            };
            (dense, stored)
        }
        LayerSpec::BatchNorm { features } => (5 + 16 * features, 5 + 16 * features),
        LayerSpec::MaxPool2d { .. } => (5, 5),
        _ => (1, 1),
    }
}

/// Bytes of a model file outside the layer records.
pub fn file_overhead_bytes(net: &Network) -> usize {
    4 + 2 + 2 + 1 + 4 * net.input_shape().len() + 4
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{encode_model, lenet, Beta, LeNetConfig};

    #[test]
    fn angle_of_parallel_and_orthogonal_vectors() {
        assert_eq!(angle_deg(&[1.0, 2.0], &[2.0, 4.0]), Some(0.0));
        assert!((angle_deg(&[1.0, 0.0], &[0.0, 3.0]).unwrap() - 90.0).abs() < 1e-12);
        assert!((angle_deg(&[1.0, 0.0], &[-1.0, 0.0]).unwrap() - 180.0).abs() < 1e-12);
        assert_eq!(angle_deg(&[0.0, 0.0], &[1.0, 0.0]), None);
    }

    #[test]
    fn beta_one_angle_is_exactly_zero() {
        let recs = angle_study(257, &[1], 20, 3).unwrap();
        assert_eq!(recs[0].mean_deg, 0.0);
        assert_eq!(recs[0].stderr, 0.0);
    }

    #[test]
    fn angle_study_argument_checks() {
        assert!(angle_study(8, &[16], 1, 0).is_err());
        assert!(angle_study(8, &[0], 1, 0).is_err());
        assert!(angle_study(8, &[2], 0, 0).is_err());
        assert!(angle_study(8, &[], 3, 0).is_err());
    }

    #[test]
    fn single_scale_limit() {
        assert!((single_scale_limit_deg() - 37.0).abs() < 0.1);
    }

    #[test]
    fn pearson_edge_cases() {
        let x = [0.3, -1.2, 2.5, 0.7];
        assert_eq!(pearson(&x, &x), Some(1.0));
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(pearson(&[1.0, 1.0], &[1.0, 2.0]), None);
        assert_eq!(pearson(&[], &[]), None);
        assert_eq!(pearson(&[1.0], &[1.0, 2.0]), None);
    }

    #[test]
    fn single_layer_ratio() {
        let r = memory_saving(&[LayerParams::new("w", 1 << 20, 16, true)], 32).unwrap();
        assert!((r.ratio - 16.0 * 32.0 / 48.0).abs() < 1e-9);
        assert!(memory_saving(&[LayerParams::new("w", 10, 16, true)], 12).is_err());
        assert!(memory_saving(&[LayerParams::new("w", 0, 16, true)], 32).is_err());
    }

    #[test]
    fn dense_layers_keep_ratio_one() {
        let r = memory_saving(&[LayerParams::new("w", 100, 16, false)], 32).unwrap();
        assert_eq!(r.rows[0].beta_w, 1);
        assert_eq!(r.ratio, 1.0);
    }

    #[test]
    fn arch_tables_have_known_sizes() {
        let total = |a| arch_layers(a, 16).iter().map(|l| l.params).sum::<u64>();
        // Published weight counts with biases and BatchNorm removed.
        assert_eq!(total(Arch::ResNet18), 11_678_912);
        assert_eq!(total(Arch::AlexNet), 61_090_496);
        let l = arch_layers(Arch::ResNet18, 16);
        assert!(!l[0].binarized && !l[l.len() - 1].binarized);
        assert!(l[1..l.len() - 1].iter().all(|x| x.binarized && x.beta_w == 16));
        assert_eq!(l.len(), 21);
        assert_eq!("ResNet-18".parse::<Arch>().unwrap(), Arch::ResNet18);
        assert!("vgg".parse::<Arch>().is_err());
    }

    #[test]
    fn summary_adds_up_to_file_sizes() {
        let net = lenet(
            &LeNetConfig {
                conv1: 4,
                conv2: 8,
                hidden: 32,
                beta_w: Beta::Block(16),
                beta_a: Beta::Block(4),
                ..LeNetConfig::default()
            },
            0,
        )
        .unwrap();
        let s = model_summary(&net).unwrap();
        let over = file_overhead_bytes(&net);
        let stored: usize = s.layers.iter().map(|r| r.stored_bytes).sum();
        let dense: usize = s.layers.iter().map(|r| r.dense_bytes).sum();
        assert_eq!(stored + over, encode_model(&net, ModelStorage::Packed).unwrap().len());
        assert_eq!(dense + over, encode_model(&net, ModelStorage::Dense).unwrap().len());
        assert_eq!(s.packed_file_bytes, stored + over);
        assert_eq!(s.layers.len(), net.layers().len());
    }

    #[test]
    fn grid_sensitivity_spreads() {
        let rec = |bw, ba, r| CorrelationRecord {
            layer: 3,
            beta_w: bw,
            beta_a: ba,
            pearson_r: Some(r),
        };
        let rows = vec![rec(1, 1, 1.0), rec(1, 2, 0.8), rec(2, 1, 0.95), rec(2, 2, 0.7)];
        let s = grid_sensitivity(&rows);
        assert_eq!(s.len(), 1);
        assert!((s[0].max_delta_over_beta_w - 0.1).abs() < 1e-12);
        assert!((s[0].max_delta_over_beta_a - 0.25).abs() < 1e-12);
    }
}
