//! `model.fp.bin`: the trained float model together with its standardisation
//! statistics.
//!
//! Layout (little-endian): magic `FOGF`, u32 version, 6 × f32 stats (means
//! then stds), u32 steps, u32 channels, u32 layer count, then per layer a u8
//! kind (0 conv1d, 1 maxpool, 2 dense, 3 dropout) followed by its dimensions
//! and f32 parameters.

use std::fs;
use std::path::Path;

use crate::bytes::{put_f32, put_usize, Eof, Reader};
use crate::nn::layer::{Conv1d, Dense, Layer};
use crate::nn::{Model, NnError};
use crate::windows::NormStats;

pub const FLOAT_MAGIC: &[u8; 4] = b"FOGF";
pub const FLOAT_VERSION: u32 = 1;

const KIND_CONV: u8 = 0;
const KIND_POOL: u8 = 1;
const KIND_DENSE: u8 = 2;
const KIND_DROPOUT: u8 = 3;

impl From<Eof> for NnError {
    fn from(_: Eof) -> Self {
        NnError::UnexpectedEof
    }
}

fn put_all(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        put_f32(out, v as f32);
    }
}

fn read_all(r: &mut Reader<'_>, n: usize) -> Result<Vec<f64>, NnError> {
    let raw = r.take(n.checked_mul(4).ok_or(NnError::UnexpectedEof)?)?;
    Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect())
}

pub fn encode_float_model(model: &Model, stats: &NormStats) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + model.param_count() * 4);
    out.extend_from_slice(FLOAT_MAGIC);
    out.extend_from_slice(&FLOAT_VERSION.to_le_bytes());
    for v in stats.mean.iter().chain(&stats.std) {
        put_f32(&mut out, *v as f32);
    }
    let (steps, channels) = model.input_shape();
    put_usize(&mut out, steps);
    put_usize(&mut out, channels);
    put_usize(&mut out, model.layers().len());
    for layer in model.layers() {
        match layer {
            Layer::Conv1d(c) => {
                out.push(KIND_CONV);
                put_usize(&mut out, c.kernel);
                put_usize(&mut out, c.in_channels);
                put_usize(&mut out, c.filters);
                put_all(&mut out, &c.weights);
                put_all(&mut out, &c.bias);
            }
            Layer::MaxPool1d { pool } => {
                out.push(KIND_POOL);
                put_usize(&mut out, *pool);
            }
            Layer::Dense(d) => {
                out.push(KIND_DENSE);
                put_usize(&mut out, d.inputs);
                put_usize(&mut out, d.outputs);
                out.push(u8::from(d.relu));
                put_all(&mut out, &d.weights);
                put_all(&mut out, &d.bias);
            }
            Layer::Dropout { rate } => {
                out.push(KIND_DROPOUT);
                put_f32(&mut out, *rate as f32);
            }
        }
    }
    out
}

pub fn decode_float_model(bytes: &[u8]) -> Result<(Model, NormStats), NnError> {
    if bytes.len() < 4 || &bytes[..4] != FLOAT_MAGIC {
        return Err(NnError::BadMagic);
    }
    let mut r = Reader::new(&bytes[4..]);
    let version = r.u32()?;
    if version != FLOAT_VERSION {
        return Err(NnError::BadVersion(version));
    }
    let mut s = [0.0f64; 6];
    for v in &mut s {
        *v = r.f32()? as f64;
    }
    let stats = NormStats { mean: [s[0], s[1], s[2]], std: [s[3], s[4], s[5]] };
    let input = (r.usize()?, r.usize()?);
    let n_layers = r.usize()?;
    let mut layers = Vec::new();
    for _ in 0..n_layers {
        let layer = match r.u8()? {
            KIND_CONV => {
                let (kernel, in_channels, filters) = (r.usize()?, r.usize()?, r.usize()?);
                let weights = read_all(&mut r, kernel * in_channels * filters)?;
                let bias = read_all(&mut r, filters)?;
                Layer::Conv1d(Conv1d { kernel, in_channels, filters, weights, bias })
            }
            KIND_POOL => Layer::MaxPool1d { pool: r.usize()? },
            KIND_DENSE => {
                let (inputs, outputs) = (r.usize()?, r.usize()?);
                let relu = r.u8()? != 0;
                let weights = read_all(&mut r, inputs * outputs)?;
                let bias = read_all(&mut r, outputs)?;
                Layer::Dense(Dense { inputs, outputs, relu, weights, bias })
            }
            KIND_DROPOUT => Layer::Dropout { rate: r.f32()? as f64 },
            other => return Err(NnError::Corrupt(format!("unknown layer kind {other}"))),
        };
        layers.push(layer);
    }
    if r.remaining() != 0 {
        return Err(NnError::Corrupt(format!("{} trailing bytes", r.remaining())));
    }
    Ok((Model::new(input, layers)?, stats))
}

pub fn save_float_model(path: &Path, model: &Model, stats: &NormStats) -> Result<(), NnError> {
    fs::write(path, encode_float_model(model, stats))?;
    Ok(())
}

pub fn load_float_model(path: &Path) -> Result<(Model, NormStats), NnError> {
    decode_float_model(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats() -> NormStats {
        NormStats { mean: [1.0, -2.5, 900.0], std: [10.0, 0.5, 250.0] }
    }

    #[test]
    fn round_trip_is_byte_stable() {
        let m = Model::default_network(0.3, 17);
        let bytes = encode_float_model(&m, &stats());
        let (back, s) = decode_float_model(&bytes).unwrap();
        assert_eq!(s, stats());
        assert_eq!(back.layers().len(), m.layers().len());
        assert_eq!(encode_float_model(&back, &s), bytes);
        // Weights survive up to f32 rounding.
        for (a, b) in m.params().iter().zip(back.params()) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(*x as f32 as f64, *y);
            }
        }
    }

    #[test]
    fn corrupt_inputs() {
        let bytes = encode_float_model(&Model::default_network(0.3, 1), &stats());
        assert!(matches!(decode_float_model(b"FOGM...."), Err(NnError::BadMagic)));
        assert!(matches!(decode_float_model(&bytes[..bytes.len() - 3]), Err(NnError::UnexpectedEof)));
        let mut v = bytes.clone();
        v[4] = 9;
        assert!(matches!(decode_float_model(&v), Err(NnError::BadVersion(9))));
        let mut v = bytes;
        v.push(0);
        assert!(matches!(decode_float_model(&v), Err(NnError::Corrupt(_))));
    }
}
