//! Binary model files.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "HDNT" | u16 version | u16 layer count | u8 input rank | u32 dims...
//! per layer: u8 tag | u32 extents... | [u32 β_w | u32 β_a | u8 storage | weight | f32 bias...]
//!            BatchNorm: f32 γ, β, running mean, running variance
//! u32 CRC32 of every byte before it
//! ```
//!
//! A packed weight is a `PackedHadaMatrix` over `[filters, fan_in]` rows at
//! `β_w`. A dense weight is `u32 len` followed by that many `f32`.

use std::fs;
use std::path::Path;

use super::layers::{NormParams, Params};
use super::{Layer, LayerSpec, Network};
use crate::error::{Error, Result};
use crate::packing::{take_f32, take_u16, take_u32, take_u8, PackedHadaMatrix};
use crate::tensor::Tensor;

pub const MODEL_MAGIC: [u8; 4] = *b"HDNT";
pub const MODEL_VERSION: u16 = 1;

const TAG_DENSE: u8 = 1;
const TAG_CONV: u8 = 2;
const TAG_NORM: u8 = 3;
const TAG_RELU: u8 = 4;
const TAG_POOL: u8 = 5;
const TAG_FLATTEN: u8 = 6;
const TAG_HEAD: u8 = 7;

const STORE_DENSE: u8 = 0;
const STORE_PACKED: u8 = 1;

/// How Hada-layer weights are written.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ModelStorage {
    /// Bit-packed signs plus block scales wherever `β_w > 1`.
    #[default]
    Packed,
    /// Every weight as raw `f32`, for size comparisons.
    Dense,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Model(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f32s(out: &mut Vec<u8>, v: &[f32]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn take_f32s(buf: &mut &[u8], n: usize) -> Result<Vec<f32>> {
    if buf.len() / 4 < n {
        return Err(Error::Model("truncated payload".into()));
    }
    (0..n).map(|_| take_f32(buf)).collect()
}

fn take_len(buf: &mut &[u8]) -> Result<usize> {
    Ok(take_u32(buf)? as usize)
}

pub fn encode_model(net: &Network, storage: ModelStorage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    let count = u16::try_from(net.layers.len()).map_err(|_| Error::Model("too many layers".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    out.push(net.input_shape.len() as u8);
    for &d in &net.input_shape {
        put_u32(&mut out, d)?;
    }
    for layer in &net.layers {
        encode_layer(&mut out, layer, storage)?;
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn encode_layer(out: &mut Vec<u8>, layer: &Layer, storage: ModelStorage) -> Result<()> {
    match (&layer.spec, &layer.params) {
        (&LayerSpec::HadaDense { inputs, outputs, beta_w, beta_a }, Params::Hada { weight, bias }) => {
            out.push(TAG_DENSE);
            for v in [inputs, outputs, beta_w, beta_a] {
                put_u32(out, v)?;
            }
            encode_weight(out, weight, beta_w, storage)?;
            put_f32s(out, bias);
        }
        (
            &LayerSpec::HadaConv2d {
                channels,
                filters,
                kernel_h,
                kernel_w,
                stride,
                pad,
                beta_w,
                beta_a,
            },
            Params::Hada { weight, bias },
        ) => {
            out.push(TAG_CONV);
            for v in [channels, filters, kernel_h, kernel_w, stride, pad, beta_w, beta_a] {
                put_u32(out, v)?;
            }
            encode_weight(out, weight, beta_w, storage)?;
            put_f32s(out, bias);
        }
        (&LayerSpec::BatchNorm { features }, Params::Norm(p)) => {
            out.push(TAG_NORM);
            put_u32(out, features)?;
            for v in [&p.gamma, &p.beta, &p.running_mean, &p.running_var] {
                put_f32s(out, v);
            }
        }
        (LayerSpec::Relu, _) => out.push(TAG_RELU),
        (&LayerSpec::MaxPool2d { size }, _) => {
            out.push(TAG_POOL);
            put_u32(out, size)?;
        }
        (LayerSpec::Flatten, _) => out.push(TAG_FLATTEN),
        (LayerSpec::SoftmaxHead, _) => out.push(TAG_HEAD),
        (spec, _) => return Err(Error::Model(format!("{} layer without its parameters", spec.name()))),
    }
    Ok(())
}

fn encode_weight(out: &mut Vec<u8>, weight: &Tensor, beta_w: usize, storage: ModelStorage) -> Result<()> {
    let rows = weight.shape()[0];
    let cols = weight.len() / rows;
    if beta_w > 1 && storage == ModelStorage::Packed {
        out.push(STORE_PACKED);
        PackedHadaMatrix::pack_rows(weight.data(), rows, cols, beta_w)?.encode(out);
    } else {
        out.push(STORE_DENSE);
        put_u32(out, weight.len())?;
        put_f32s(out, weight.data());
    }
    Ok(())
}

/// Exact size of [`encode_model`]'s output, without building it.
pub fn encoded_model_len(net: &Network, storage: ModelStorage) -> usize {
    let header = 4 + 2 + 2 + 1 + 4 * net.input_shape.len();
    let body: usize = net
        .layers
        .iter()
        .map(|l| match &l.spec {
            LayerSpec::HadaDense { beta_w, .. } | LayerSpec::HadaConv2d { beta_w, .. } => {
                let extents = if matches!(l.spec, LayerSpec::HadaDense { .. }) { 4 } else { 8 };
                let shape = l.spec.weight_shape().expect("hada layer");
                let rows = shape[0];
                let cols: usize = shape[1..].iter().product();
                let weight = if *beta_w > 1 && storage == ModelStorage::Packed {
                    PackedHadaMatrix::encoded_len_for(rows, cols, *beta_w)
                } else {
                    4 + 4 * rows * cols
                };
                1 + 4 * extents + 1 + weight + 4 * rows
            }
            LayerSpec::BatchNorm { features } => 1 + 4 + 16 * features,
            LayerSpec::MaxPool2d { .. } => 1 + 4,
            _ => 1,
        })
        .sum();
    header + body + 4
}

pub fn decode_model(bytes: &[u8]) -> Result<Network> {
    if bytes.len() < 4 || bytes[..4] != MODEL_MAGIC {
        return Err(Error::Model("bad magic: not a model file".into()));
    }
    if bytes.len() >= 6 {
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != MODEL_VERSION {
            return Err(Error::Model(format!(
                "version mismatch: file has {version}, expected {MODEL_VERSION}"
            )));
        }
    }
    if bytes.len() < 4 + 2 + 2 + 1 + 4 {
        return Err(Error::Model("truncated payload".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::Model("checksum failure (file is corrupt or truncated)".into()));
    }
    let mut buf = &body[6..];
    let count = take_u16(&mut buf)? as usize;
    let rank = take_u8(&mut buf)? as usize;
    let input_shape = (0..rank).map(|_| take_len(&mut buf)).collect::<Result<Vec<_>>>()?;
    let layers = (0..count)
        .map(|i| decode_layer(&mut buf).map_err(|e| Error::Model(format!("layer {i}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    if !buf.is_empty() {
        return Err(Error::Model(format!("{} trailing bytes after the last layer", buf.len())));
    }
    Network::from_layers(&input_shape, layers).map_err(|e| Error::Model(format!("inconsistent layers: {e}")))
}

fn decode_layer(buf: &mut &[u8]) -> Result<Layer> {
    let tag = take_u8(buf)?;
    let (spec, params) = match tag {
        TAG_DENSE => {
            let v: Vec<usize> = (0..4).map(|_| take_len(buf)).collect::<Result<_>>()?;
            let spec = LayerSpec::HadaDense {
                inputs: v[0],
                outputs: v[1],
                beta_w: v[2],
                beta_a: v[3],
            };
            let params = decode_hada(buf, &spec)?;
            (spec, params)
        }
        TAG_CONV => {
            let v: Vec<usize> = (0..8).map(|_| take_len(buf)).collect::<Result<_>>()?;
            let spec = LayerSpec::HadaConv2d {
                channels: v[0],
                filters: v[1],
                kernel_h: v[2],
                kernel_w: v[3],
                stride: v[4],
                pad: v[5],
                beta_w: v[6],
                beta_a: v[7],
            };
            let params = decode_hada(buf, &spec)?;
            (spec, params)
        }
        TAG_NORM => {
            let features = take_len(buf)?;
            let params = Params::Norm(NormParams {
                gamma: take_f32s(buf, features)?,
                beta: take_f32s(buf, features)?,
                running_mean: take_f32s(buf, features)?,
                running_var: take_f32s(buf, features)?,
            });
            (LayerSpec::BatchNorm { features }, params)
        }
        TAG_RELU => (LayerSpec::Relu, Params::None),
        TAG_POOL => (LayerSpec::MaxPool2d { size: take_len(buf)? }, Params::None),
        TAG_FLATTEN => (LayerSpec::Flatten, Params::None),
        TAG_HEAD => (LayerSpec::SoftmaxHead, Params::None),
        t => return Err(Error::Model(format!("unknown layer tag {t}"))),
    };
    Ok(Layer { spec, params })
}

fn decode_hada(buf: &mut &[u8], spec: &LayerSpec) -> Result<Params> {
    let (beta_w, beta_a) = spec.betas().expect("hada layer");
    if beta_w == 0 || beta_a == 0 {
        return Err(Error::Model("block size 0".into()));
    }
    let shape = spec.weight_shape().expect("hada layer");
    let rows = shape[0];
    let cols: usize = shape[1..].iter().product();
    let weight = match take_u8(buf)? {
        STORE_PACKED => {
            let m = PackedHadaMatrix::decode(buf)?;
            if (m.rows(), m.cols(), m.beta()) != (rows, cols, beta_w) {
                return Err(Error::Model(format!(
                    "packed weight is {}×{} at β {}, layer wants {rows}×{cols} at β {beta_w}",
                    m.rows(),
                    m.cols(),
                    m.beta()
                )));
            }
            Tensor::new(&shape, m.unpack().data().to_vec())?
        }
        STORE_DENSE => {
            let n = take_len(buf)?;
            if n != rows * cols {
                return Err(Error::Model(format!("dense weight has {n} values, layer wants {}", rows * cols)));
            }
            Tensor::new(&shape, take_f32s(buf, n)?)?
        }
        s => return Err(Error::Model(format!("unknown weight storage {s}"))),
    };
    let bias = take_f32s(buf, rows)?;
    Ok(Params::Hada { weight, bias })
}

pub fn save_model(net: &Network, path: &Path) -> Result<()> {
    save_model_with(net, path, ModelStorage::Packed)
}

pub fn save_model_with(net: &Network, path: &Path, storage: ModelStorage) -> Result<()> {
    fs::write(path, encode_model(net, storage)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Network> {
    decode_model(&fs::read(path)?)
}
