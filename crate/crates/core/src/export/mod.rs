//! Freezing, post-training int8 quantization, the `model.q.bin` format and
//! the integer inference path shared by host and device.

mod kernels;
mod pack;
pub mod quant;

use rayon::prelude::*;
use thiserror::Error;

use crate::nn::{Layer, Model};
use crate::windows::{NormStats, WindowSet};

pub use kernels::{forward_into, prepare_input, prepare_into, quantized_forward, Prediction};
pub use pack::{pack, packed_size, DeviceNorm, PackedLayer, PackedModel, FLASH_BUDGET, PACKED_MAGIC, PACKED_VERSION};
pub use quant::{dequantize, quantize, FixedMultiplier, QuantParams};

/// Windows drawn from the training split for calibration.
pub const CALIBRATION_WINDOWS: usize = 100;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("calibration range is empty")]
    DegenerateRange,
    #[error("calibration set is empty")]
    EmptyCalibrationSet,
    #[error("calibration does not match the model's layers")]
    CalibrationMismatch,
    #[error("packed model is {size} bytes, budget is {budget}")]
    SizeBudgetExceeded { size: usize, budget: usize },
    #[error("model must be frozen before packing")]
    NotFrozen,
    #[error("not a packed model file")]
    BadMagic,
    #[error("unsupported packed model version {0}")]
    BadVersion(u32),
    #[error("packed model ends early")]
    UnexpectedEof,
    #[error("corrupt packed model: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Activation quantization parameters: the input, then the output of every
/// layer of the frozen model.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub input: QuantParams,
    pub layers: Vec<QuantParams>,
}

pub fn freeze(model: &Model) -> Model {
    model.freeze()
}

/// Observes min/max of every tensor over `calib` (already standardized) and
/// derives affine parameters. Max-pool outputs share their input parameters.
pub fn calibrate(frozen: &Model, calib: &WindowSet) -> Result<Calibration, ExportError> {
    if calib.is_empty() {
        return Err(ExportError::EmptyCalibrationSet);
    }
    let n_tensors = frozen.layers().len() + 1;
    let empty = || vec![(f64::INFINITY, f64::NEG_INFINITY); n_tensors];
    let ranges = calib
        .windows()
        .par_iter()
        .map(|w| {
            let mut r = empty();
            for (slot, act) in r.iter_mut().zip(frozen.activations(&w.values)) {
                for v in act {
                    slot.0 = slot.0.min(v);
                    slot.1 = slot.1.max(v);
                }
            }
            r
        })
        .reduce(empty, |a, b| a.iter().zip(&b).map(|(x, y)| (x.0.min(y.0), x.1.max(y.1))).collect());
    let input = quant::affine_params_or_fallback(ranges[0].0, ranges[0].1);
    let mut layers = Vec::with_capacity(frozen.layers().len());
    let mut prev = input;
    for (layer, &(lo, hi)) in frozen.layers().iter().zip(&ranges[1..]) {
        let q = match layer {
            Layer::MaxPool1d { .. } | Layer::Dropout { .. } => prev,
            _ => quant::affine_params_or_fallback(lo, hi),
        };
        layers.push(q);
        prev = q;
    }
    Ok(Calibration { input, layers })
}

/// Freezes `model`, calibrates on a seeded sample of `train` (standardized
/// windows) and packs the result.
pub fn export_model(
    model: &Model,
    stats: &NormStats,
    train: &WindowSet,
    budget: usize,
    seed: u64,
) -> Result<PackedModel, ExportError> {
    let frozen = freeze(model);
    let calib = train.sample(CALIBRATION_WINDOWS, seed);
    let calibration = calibrate(&frozen, &calib)?;
    pack(&frozen, &calibration, stats, budget)
}
