//! Integer inference: int8 activations and weights, i32 accumulation and
//! fixed-point requantization between layers.

use crate::export::pack::{PackedLayer, PackedModel};
use crate::export::quant::{dequantize, quantize, FixedMultiplier, QuantParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: u8,
    /// `round(255 * p[label])`
    pub prob_uint8: u8,
    pub probs: [f64; 2],
}

/// Standardizes raw accelerations with the model's statistics and quantizes
/// them with its input parameters. Non-finite values become 0 after
/// standardization.
pub fn prepare_into(model: &PackedModel, raw: &[f32], out: &mut [i8]) {
    let channels = model.input_shape.1;
    for (i, (&x, o)) in raw.iter().zip(out.iter_mut()).enumerate() {
        let c = i % channels;
        let (mean, std) = (model.norm.mean[c.min(2)] as f64, model.norm.std[c.min(2)] as f64);
        let mut z = (x as f64 - mean) / std;
        if !z.is_finite() {
            log::warn!("non-finite input at index {i} ({x}), using 0");
            z = 0.0;
        }
        *o = quantize(z as f32, model.input_q);
    }
}

pub fn prepare_input(model: &PackedModel, raw: &[f32]) -> Vec<i8> {
    let mut out = vec![0i8; raw.len()];
    prepare_into(model, raw, &mut out);
    out
}

fn requantize(acc: i32, m: &FixedMultiplier, out_q: QuantParams, relu: bool) -> i8 {
    let lo = if relu { out_q.zero_point.max(-128) } else { -128 };
    (m.apply(acc).saturating_add(out_q.zero_point)).clamp(lo, 127) as i8
}

fn multiplier(in_q: QuantParams, weight_scale: f32, out_q: QuantParams) -> FixedMultiplier {
    FixedMultiplier::from_real(in_q.scale as f64 * weight_scale as f64 / out_q.scale as f64)
}

#[allow(clippy::too_many_arguments)]
fn conv(
    x: &[i8],
    steps: usize,
    in_q: QuantParams,
    kernel: usize,
    c_in: usize,
    filters: usize,
    out_q: QuantParams,
    weight_scale: f32,
    weights: &[i8],
    bias: &[i32],
    out: &mut [i8],
) {
    let m = multiplier(in_q, weight_scale, out_q);
    let zp = in_q.zero_point;
    for t in 0..steps + 1 - kernel {
        for f in 0..filters {
            let mut acc = bias[f];
            for k in 0..kernel {
                for c in 0..c_in {
                    let xv = x[(t + k) * c_in + c] as i32 - zp;
                    acc = acc.wrapping_add(xv * weights[(k * c_in + c) * filters + f] as i32);
                }
            }
            out[t * filters + f] = requantize(acc, &m, out_q, true);
        }
    }
}

fn max_pool(x: &[i8], steps: usize, channels: usize, pool: usize, out: &mut [i8]) {
    for t in 0..steps / pool {
        for c in 0..channels {
            out[t * channels + c] = (0..pool).map(|p| x[(t * pool + p) * channels + c]).max().unwrap();
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn dense(
    x: &[i8],
    in_q: QuantParams,
    outputs: usize,
    relu: bool,
    out_q: QuantParams,
    weight_scale: f32,
    weights: &[i8],
    bias: &[i32],
    out: &mut [i8],
) {
    let m = multiplier(in_q, weight_scale, out_q);
    for o in 0..outputs {
        let mut acc = bias[o];
        for (i, &xv) in x.iter().enumerate() {
            acc = acc.wrapping_add((xv as i32 - in_q.zero_point) * weights[i * outputs + o] as i32);
        }
        out[o] = requantize(acc, &m, out_q, relu);
    }
}

/// Runs the integer network on a prepared input using two caller-owned
/// scratch buffers, each at least [`PackedModel::max_activation_len`] long.
/// Allocates nothing.
pub fn forward_into(model: &PackedModel, input: &[i8], a: &mut [i8], b: &mut [i8]) -> Prediction {
    let mut shape = model.input_shape;
    let mut in_q = model.input_q;
    let mut src_is_input = true;
    let mut src_is_a = false;
    for layer in &model.layers {
        let (src, dst): (&[i8], &mut [i8]) = if src_is_input {
            (input, &mut *a)
        } else if src_is_a {
            (&*a, &mut *b)
        } else {
            (&*b, &mut *a)
        };
        let out_shape = layer.output_shape(shape);
        let src = &src[..shape.0 * shape.1];
        let dst = &mut dst[..out_shape.0 * out_shape.1];
        match layer {
            PackedLayer::Conv1d { kernel, in_channels, filters, out_q, weight_scale, weights, bias } => {
                conv(src, shape.0, in_q, *kernel, *in_channels, *filters, *out_q, *weight_scale, weights, bias, dst)
            }
            PackedLayer::MaxPool1d { pool, .. } => max_pool(src, shape.0, shape.1, *pool, dst),
            PackedLayer::Dense { outputs, relu, out_q, weight_scale, weights, bias, .. } => {
                dense(src, in_q, *outputs, *relu, *out_q, *weight_scale, weights, bias, dst)
            }
        }
        src_is_a = src_is_input || !src_is_a;
        src_is_input = false;
        shape = out_shape;
        in_q = layer.out_q();
    }
    let logits: &[i8] = if src_is_input {
        input
    } else if src_is_a {
        a
    } else {
        b
    };
    let z = [dequantize(logits[0], in_q), dequantize(logits[1], in_q)];
    let top = z[0].max(z[1]);
    let e = [(z[0] - top).exp(), (z[1] - top).exp()];
    let probs = [e[0] / (e[0] + e[1]), e[1] / (e[0] + e[1])];
    let label = u8::from(probs[1] > probs[0]);
    let prob_uint8 = (255.0 * probs[label as usize]).round() as u8;
    Prediction { label, prob_uint8, probs }
}

pub fn quantized_forward(model: &PackedModel, input: &[i8]) -> Prediction {
    let n = model.max_activation_len();
    let (mut a, mut b) = (vec![0i8; n], vec![0i8; n]);
    forward_into(model, input, &mut a, &mut b)
}
