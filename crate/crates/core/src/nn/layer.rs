//! Layer definitions and their per-example forward and backward passes.
//!
//! Activations are `(steps, channels)` matrices stored row-major. Dense layers
//! flatten their input and produce a `(1, units)` activation.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// JSON layer descriptor, e.g. `{"type": "conv1d", "filters": 16, "kernel": 5}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LayerSpec {
    Conv1d {
        filters: usize,
        kernel: usize,
    },
    Maxpool {
        pool: usize,
    },
    /// Rate defaults to the config-level `dropout`.
    Dropout {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rate: Option<f64>,
    },
    Dense {
        units: usize,
        #[serde(default)]
        relu: bool,
    },
}

/// The default three-convolution network with a two-logit head.
pub fn default_architecture() -> Vec<LayerSpec> {
    architecture_with_filters(16)
}

/// Default layout with `first` filters in the first convolution and twice as
/// many in the later two.
pub fn architecture_with_filters(first: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::Conv1d { filters: first, kernel: 5 },
        LayerSpec::Maxpool { pool: 2 },
        LayerSpec::Conv1d { filters: 2 * first, kernel: 5 },
        LayerSpec::Maxpool { pool: 2 },
        LayerSpec::Conv1d { filters: 2 * first, kernel: 3 },
        LayerSpec::Maxpool { pool: 2 },
        LayerSpec::Dropout { rate: None },
        LayerSpec::Dense { units: 2, relu: false },
    ]
}

/// Convolution with stride 1, no padding and a ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub kernel: usize,
    pub in_channels: usize,
    pub filters: usize,
    /// `(kernel, in_channels, filters)`
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub relu: bool,
    /// `(inputs, outputs)`
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv1d(Conv1d),
    MaxPool1d { pool: usize },
    Dropout { rate: f64 },
    Dense(Dense),
}

/// Shape of an activation: `(steps, channels)`.
pub type Shape = (usize, usize);

impl Conv1d {
    /// Seeded He-uniform weights, zero bias.
    pub fn init(kernel: usize, in_channels: usize, filters: usize, rng: &mut impl Rng) -> Self {
        let fan_in = (kernel * in_channels) as f64;
        let limit = (6.0 / fan_in).sqrt();
        Self {
            kernel,
            in_channels,
            filters,
            weights: (0..kernel * in_channels * filters).map(|_| rng.random_range(-limit..limit)).collect(),
            bias: vec![0.0; filters],
        }
    }

    pub fn output_steps(&self, steps: usize) -> usize {
        steps + 1 - self.kernel
    }

    pub fn forward(&self, x: &[f64], steps: usize) -> Vec<f64> {
        let (c_in, f_out) = (self.in_channels, self.filters);
        let out_steps = self.output_steps(steps);
        let mut out = Vec::with_capacity(out_steps * f_out);
        for t in 0..out_steps {
            let mut acc = self.bias.clone();
            for k in 0..self.kernel {
                let xrow = &x[(t + k) * c_in..(t + k + 1) * c_in];
                for (c, &xv) in xrow.iter().enumerate() {
                    let wrow = &self.weights[(k * c_in + c) * f_out..(k * c_in + c + 1) * f_out];
                    for (a, &w) in acc.iter_mut().zip(wrow) {
                        *a += xv * w;
                    }
                }
            }
            out.extend(acc.into_iter().map(|a| a.max(0.0)));
        }
        out
    }

    /// `grad_out` is taken w.r.t. the post-ReLU output `y`; returns the input gradient.
    pub fn backward(&self, x: &[f64], y: &[f64], grad_out: &[f64], grad_w: &mut [f64], grad_b: &mut [f64]) -> Vec<f64> {
        let (c_in, f_out) = (self.in_channels, self.filters);
        let out_steps = y.len() / f_out;
        let mut dx = vec![0.0; x.len()];
        let mut d = vec![0.0; f_out];
        for t in 0..out_steps {
            for f in 0..f_out {
                let i = t * f_out + f;
                d[f] = if y[i] > 0.0 { grad_out[i] } else { 0.0 };
                grad_b[f] += d[f];
            }
            for k in 0..self.kernel {
                for c in 0..c_in {
                    let xi = (t + k) * c_in + c;
                    let base = (k * c_in + c) * f_out;
                    let wrow = &self.weights[base..base + f_out];
                    let gw = &mut grad_w[base..base + f_out];
                    let mut acc = 0.0;
                    for f in 0..f_out {
                        gw[f] += x[xi] * d[f];
                        acc += wrow[f] * d[f];
                    }
                    dx[xi] += acc;
                }
            }
        }
        dx
    }
}

impl Dense {
    /// He-uniform for ReLU layers, LeCun-uniform for logits; zero bias.
    pub fn init(inputs: usize, outputs: usize, relu: bool, rng: &mut impl Rng) -> Self {
        let scale = if relu { 6.0 } else { 3.0 };
        let limit = (scale / inputs as f64).sqrt();
        Self {
            inputs,
            outputs,
            relu,
            weights: (0..inputs * outputs).map(|_| rng.random_range(-limit..limit)).collect(),
            bias: vec![0.0; outputs],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.bias.clone();
        for (i, &xv) in x.iter().enumerate() {
            let wrow = &self.weights[i * self.outputs..(i + 1) * self.outputs];
            for (o, &w) in out.iter_mut().zip(wrow) {
                *o += xv * w;
            }
        }
        if self.relu {
            out.iter_mut().for_each(|o| *o = o.max(0.0));
        }
        out
    }

    pub fn backward(&self, x: &[f64], y: &[f64], grad_out: &[f64], grad_w: &mut [f64], grad_b: &mut [f64]) -> Vec<f64> {
        let d: Vec<f64> = grad_out.iter().zip(y).map(|(&g, &y)| if !self.relu || y > 0.0 { g } else { 0.0 }).collect();
        for (gb, &dv) in grad_b.iter_mut().zip(&d) {
            *gb += dv;
        }
        let mut dx = vec![0.0; x.len()];
        for (i, &xv) in x.iter().enumerate() {
            let base = i * self.outputs;
            let wrow = &self.weights[base..base + self.outputs];
            let gw = &mut grad_w[base..base + self.outputs];
            let mut acc = 0.0;
            for o in 0..self.outputs {
                gw[o] += xv * d[o];
                acc += wrow[o] * d[o];
            }
            dx[i] = acc;
        }
        dx
    }
}

/// Max pooling with stride equal to the pool width; trailing steps that do not
/// fill a pool are dropped. Returns the pooled values and the argmax index of
/// each output.
pub fn max_pool(x: &[f64], (steps, channels): Shape, pool: usize) -> (Vec<f64>, Vec<usize>) {
    let out_steps = steps / pool;
    let mut out = Vec::with_capacity(out_steps * channels);
    let mut arg = Vec::with_capacity(out_steps * channels);
    for t in 0..out_steps {
        for c in 0..channels {
            let mut best = t * pool * channels + c;
            for p in 1..pool {
                let i = (t * pool + p) * channels + c;
                if x[i] > x[best] {
                    best = i;
                }
            }
            out.push(x[best]);
            arg.push(best);
        }
    }
    (out, arg)
}

impl Layer {
    pub fn output_shape(&self, (steps, channels): Shape) -> Shape {
        match self {
            Layer::Conv1d(c) => (c.output_steps(steps), c.filters),
            Layer::MaxPool1d { pool } => (steps / pool, channels),
            Layer::Dropout { .. } => (steps, channels),
            Layer::Dense(d) => (1, d.outputs),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv1d(c) => c.weights.len() + c.bias.len(),
            Layer::Dense(d) => d.weights.len() + d.bias.len(),
            _ => 0,
        }
    }

    pub fn is_dropout(&self) -> bool {
        matches!(self, Layer::Dropout { .. })
    }
}
