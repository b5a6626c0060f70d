//! `model.q.bin`: the frozen int8 model.
//!
//! All fields little-endian:
//!
//! ```text
//! "FOGM"  u32 version  u32 n_layers  u32 steps  u32 channels
//! f32 mean[3]  f32 std[3]
//! f32 input_scale  i32 input_zero_point  f32 output_scale  i32 output_zero_point
//! per layer:
//!   u8 kind (0 conv1d, 1 maxpool, 2 dense)
//!   conv1d:  u32 kernel, u32 in_channels, u32 filters
//!   maxpool: u32 pool
//!   dense:   u32 inputs, u32 outputs, u32 relu
//!   f32 scale  i32 zero_point            (output activation)
//!   conv1d/dense only:
//!     f32 weight_scale  i8 weights[..]  i32 bias[..]
//! ```

use std::fs;
use std::path::Path;

use crate::bytes::{put_f32, put_i32, put_u32, put_usize, Eof, Reader};
use crate::export::quant::{quantize, symmetric_params, QuantParams};
use crate::export::{Calibration, ExportError};
use crate::nn::{Layer, Model, Shape, NUM_CLASSES};
use crate::windows::NormStats;

pub const PACKED_MAGIC: &[u8; 4] = b"FOGM";
pub const PACKED_VERSION: u32 = 1;
/// Flash available for the model blob.
pub const FLASH_BUDGET: usize = 1_048_576;

const KIND_CONV: u8 = 0;
const KIND_POOL: u8 = 1;
const KIND_DENSE: u8 = 2;

const HEADER_BYTES: usize = 4 + 4 * 4 + 6 * 4 + 2 * 8;

impl From<Eof> for ExportError {
    fn from(_: Eof) -> Self {
        ExportError::UnexpectedEof
    }
}

/// Standardisation statistics as stored on the device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceNorm {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl From<&NormStats> for DeviceNorm {
    fn from(s: &NormStats) -> Self {
        Self { mean: s.mean.map(|v| v as f32), std: s.std.map(|v| v as f32) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PackedLayer {
    Conv1d {
        kernel: usize,
        in_channels: usize,
        filters: usize,
        out_q: QuantParams,
        weight_scale: f32,
        /// `(kernel, in_channels, filters)`
        weights: Vec<i8>,
        bias: Vec<i32>,
    },
    MaxPool1d {
        pool: usize,
        out_q: QuantParams,
    },
    Dense {
        inputs: usize,
        outputs: usize,
        relu: bool,
        out_q: QuantParams,
        weight_scale: f32,
        /// `(inputs, outputs)`
        weights: Vec<i8>,
        bias: Vec<i32>,
    },
}

impl PackedLayer {
    pub fn out_q(&self) -> QuantParams {
        match self {
            PackedLayer::Conv1d { out_q, .. }
            | PackedLayer::MaxPool1d { out_q, .. }
            | PackedLayer::Dense { out_q, .. } => *out_q,
        }
    }

    pub fn output_shape(&self, (steps, channels): Shape) -> Shape {
        match self {
            PackedLayer::Conv1d { kernel, filters, .. } => (steps + 1 - kernel, *filters),
            PackedLayer::MaxPool1d { pool, .. } => (steps / pool, channels),
            PackedLayer::Dense { outputs, .. } => (1, *outputs),
        }
    }

    fn encoded_len(&self) -> usize {
        match self {
            PackedLayer::Conv1d { weights, bias, .. } | PackedLayer::Dense { weights, bias, .. } => {
                1 + 12 + 8 + 4 + weights.len() + 4 * bias.len()
            }
            PackedLayer::MaxPool1d { .. } => 1 + 4 + 8,
        }
    }
}

/// A frozen, int8-quantized model ready for the device.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedModel {
    pub input_shape: Shape,
    pub norm: DeviceNorm,
    pub input_q: QuantParams,
    pub output_q: QuantParams,
    pub layers: Vec<PackedLayer>,
}

fn quantize_bias(bias: &[f64], scale: f64) -> Vec<i32> {
    bias.iter().map(|b| (b / scale).round().clamp(i32::MIN as f64, i32::MAX as f64) as i32).collect()
}

fn quantize_weights(weights: &[f64]) -> (f32, Vec<i8>) {
    let q = symmetric_params(weights);
    (q.scale, weights.iter().map(|&w| quantize(w as f32, q)).collect())
}

/// Quantizes a frozen model with calibrated activation parameters and checks
/// the result against `budget` bytes.
pub fn pack(
    frozen: &Model,
    calibration: &Calibration,
    norm: &NormStats,
    budget: usize,
) -> Result<PackedModel, ExportError> {
    if frozen.is_trainable() || frozen.layers().iter().any(Layer::is_dropout) {
        return Err(ExportError::NotFrozen);
    }
    if calibration.layers.len() != frozen.layers().len() {
        return Err(ExportError::CalibrationMismatch);
    }
    let mut in_q = calibration.input;
    let mut layers = Vec::with_capacity(frozen.layers().len());
    for (layer, &out_q) in frozen.layers().iter().zip(&calibration.layers) {
        let packed = match layer {
            Layer::Conv1d(c) => {
                let (weight_scale, weights) = quantize_weights(&c.weights);
                PackedLayer::Conv1d {
                    kernel: c.kernel,
                    in_channels: c.in_channels,
                    filters: c.filters,
                    out_q,
                    weight_scale,
                    weights,
                    bias: quantize_bias(&c.bias, in_q.scale as f64 * weight_scale as f64),
                }
            }
            Layer::MaxPool1d { pool } => PackedLayer::MaxPool1d { pool: *pool, out_q },
            Layer::Dense(d) => {
                let (weight_scale, weights) = quantize_weights(&d.weights);
                PackedLayer::Dense {
                    inputs: d.inputs,
                    outputs: d.outputs,
                    relu: d.relu,
                    out_q,
                    weight_scale,
                    weights,
                    bias: quantize_bias(&d.bias, in_q.scale as f64 * weight_scale as f64),
                }
            }
            Layer::Dropout { .. } => unreachable!("checked above"),
        };
        in_q = out_q;
        layers.push(packed);
    }
    let packed = PackedModel {
        input_shape: frozen.input_shape(),
        norm: norm.into(),
        input_q: calibration.input,
        output_q: in_q,
        layers,
    };
    packed.validate()?;
    let size = packed.size_bytes();
    if size >= budget {
        return Err(ExportError::SizeBudgetExceeded { size, budget });
    }
    Ok(packed)
}

/// Bytes the packed form of `model` occupies; independent of calibration.
pub fn packed_size(model: &Model) -> usize {
    HEADER_BYTES
        + model
            .layers()
            .iter()
            .map(|l| match l {
                Layer::Conv1d(c) => 1 + 12 + 8 + 4 + c.weights.len() + 4 * c.bias.len(),
                Layer::Dense(d) => 1 + 12 + 8 + 4 + d.weights.len() + 4 * d.bias.len(),
                Layer::MaxPool1d { .. } => 1 + 4 + 8,
                Layer::Dropout { .. } => 0,
            })
            .sum::<usize>()
}

impl PackedModel {
    pub fn size_bytes(&self) -> usize {
        HEADER_BYTES + self.layers.iter().map(PackedLayer::encoded_len).sum::<usize>()
    }

    /// Shapes of every activation, starting with the input.
    pub fn activation_shapes(&self) -> Vec<Shape> {
        let mut shapes = vec![self.input_shape];
        for l in &self.layers {
            shapes.push(l.output_shape(*shapes.last().unwrap()));
        }
        shapes
    }

    /// Largest activation, in int8 elements.
    pub fn max_activation_len(&self) -> usize {
        self.activation_shapes().iter().map(|(s, c)| s * c).max().unwrap_or(0)
    }

    /// Checks quantization parameters and that shapes chain to two logits.
    pub fn validate(&self) -> Result<(), ExportError> {
        let corrupt = |m: String| Err(ExportError::Corrupt(m));
        for q in [self.input_q, self.output_q] {
            if !q.is_valid() {
                return corrupt(format!("bad quantization parameters {q:?}"));
            }
        }
        if self.norm.std.iter().any(|s| !(*s > 0.0 && s.is_finite())) || self.norm.mean.iter().any(|m| !m.is_finite()) {
            return corrupt("bad standardisation statistics".into());
        }
        let mut shape = self.input_shape;
        if shape.0 == 0 || shape.1 == 0 {
            return corrupt("empty input shape".into());
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if !layer.out_q().is_valid() {
                return corrupt(format!("layer {i}: bad quantization parameters"));
            }
            let ok = match layer {
                PackedLayer::Conv1d { kernel, in_channels, filters, weight_scale, weights, bias, .. } => {
                    *in_channels == shape.1
                        && *kernel >= 1
                        && *kernel <= shape.0
                        && *filters >= 1
                        && weights.len() == kernel * in_channels * filters
                        && bias.len() == *filters
                        && *weight_scale > 0.0
                }
                PackedLayer::MaxPool1d { pool, .. } => *pool >= 1 && *pool <= shape.0,
                PackedLayer::Dense { inputs, outputs, weight_scale, weights, bias, .. } => {
                    *inputs == shape.0 * shape.1
                        && *outputs >= 1
                        && weights.len() == inputs * outputs
                        && bias.len() == *outputs
                        && *weight_scale > 0.0
                }
            };
            if !ok {
                return corrupt(format!("layer {i}: inconsistent dimensions"));
            }
            shape = layer.output_shape(shape);
        }
        if shape.0 * shape.1 != NUM_CLASSES {
            return corrupt(format!("model ends in {shape:?}, not {NUM_CLASSES} logits"));
        }
        if self.layers.last().map(PackedLayer::out_q) != Some(self.output_q) {
            return corrupt("output parameters differ from the last layer".into());
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.size_bytes());
        out.extend_from_slice(PACKED_MAGIC);
        put_u32(&mut out, PACKED_VERSION);
        put_usize(&mut out, self.layers.len());
        put_usize(&mut out, self.input_shape.0);
        put_usize(&mut out, self.input_shape.1);
        for v in self.norm.mean.iter().chain(&self.norm.std) {
            put_f32(&mut out, *v);
        }
        for q in [self.input_q, self.output_q] {
            put_q(&mut out, q);
        }
        for layer in &self.layers {
            match layer {
                PackedLayer::Conv1d { kernel, in_channels, filters, out_q, weight_scale, weights, bias } => {
                    out.push(KIND_CONV);
                    put_usize(&mut out, *kernel);
                    put_usize(&mut out, *in_channels);
                    put_usize(&mut out, *filters);
                    put_q(&mut out, *out_q);
                    put_blobs(&mut out, *weight_scale, weights, bias);
                }
                PackedLayer::MaxPool1d { pool, out_q } => {
                    out.push(KIND_POOL);
                    put_usize(&mut out, *pool);
                    put_q(&mut out, *out_q);
                }
                PackedLayer::Dense { inputs, outputs, relu, out_q, weight_scale, weights, bias } => {
                    out.push(KIND_DENSE);
                    put_usize(&mut out, *inputs);
                    put_usize(&mut out, *outputs);
                    put_u32(&mut out, u32::from(*relu));
                    put_q(&mut out, *out_q);
                    put_blobs(&mut out, *weight_scale, weights, bias);
                }
            }
        }
        debug_assert_eq!(out.len(), self.size_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ExportError> {
        if bytes.len() < 4 || &bytes[..4] != PACKED_MAGIC {
            return Err(ExportError::BadMagic);
        }
        let mut r = Reader::new(&bytes[4..]);
        let version = r.u32()?;
        if version != PACKED_VERSION {
            return Err(ExportError::BadVersion(version));
        }
        let n_layers = r.usize()?;
        let input_shape = (r.usize()?, r.usize()?);
        let mut stats = [0f32; 6];
        for v in &mut stats {
            *v = r.f32()?;
        }
        let norm = DeviceNorm { mean: [stats[0], stats[1], stats[2]], std: [stats[3], stats[4], stats[5]] };
        let input_q = read_q(&mut r)?;
        let output_q = read_q(&mut r)?;
        let mut layers = Vec::new();
        for _ in 0..n_layers {
            let layer = match r.u8()? {
                KIND_CONV => {
                    let (kernel, in_channels, filters) = (r.usize()?, r.usize()?, r.usize()?);
                    let out_q = read_q(&mut r)?;
                    let (weight_scale, weights, bias) = read_blobs(&mut r, kernel * in_channels * filters, filters)?;
                    PackedLayer::Conv1d { kernel, in_channels, filters, out_q, weight_scale, weights, bias }
                }
                KIND_POOL => PackedLayer::MaxPool1d { pool: r.usize()?, out_q: read_q(&mut r)? },
                KIND_DENSE => {
                    let (inputs, outputs) = (r.usize()?, r.usize()?);
                    let relu = match r.u32()? {
                        0 => false,
                        1 => true,
                        other => return Err(ExportError::Corrupt(format!("relu flag {other}"))),
                    };
                    let out_q = read_q(&mut r)?;
                    let (weight_scale, weights, bias) = read_blobs(&mut r, inputs * outputs, outputs)?;
                    PackedLayer::Dense { inputs, outputs, relu, out_q, weight_scale, weights, bias }
                }
                other => return Err(ExportError::Corrupt(format!("unknown layer kind {other}"))),
            };
            layers.push(layer);
        }
        if r.remaining() != 0 {
            return Err(ExportError::Corrupt(format!("{} trailing bytes", r.remaining())));
        }
        let model = PackedModel { input_shape, norm, input_q, output_q, layers };
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ExportError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ExportError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn put_q(out: &mut Vec<u8>, q: QuantParams) {
    put_f32(out, q.scale);
    put_i32(out, q.zero_point);
}

fn read_q(r: &mut Reader<'_>) -> Result<QuantParams, Eof> {
    Ok(QuantParams { scale: r.f32()?, zero_point: r.i32()? })
}

fn put_blobs(out: &mut Vec<u8>, weight_scale: f32, weights: &[i8], bias: &[i32]) {
    put_f32(out, weight_scale);
    out.extend(weights.iter().map(|&w| w as u8));
    for &b in bias {
        put_i32(out, b);
    }
}

fn read_blobs(r: &mut Reader<'_>, n_weights: usize, n_bias: usize) -> Result<(f32, Vec<i8>, Vec<i32>), ExportError> {
    let scale = r.f32()?;
    let weights = r.take(n_weights)?.iter().map(|&b| b as i8).collect();
    let raw = r.take(n_bias.checked_mul(4).ok_or(ExportError::UnexpectedEof)?)?;
    let bias = raw.chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((scale, weights, bias))
}
