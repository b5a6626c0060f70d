use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::nn::layer::{max_pool, Conv1d, Dense, Layer, LayerSpec, Shape};
use crate::nn::loss::softmax;
use crate::nn::{NnError, Tensor};
use crate::windows::{AXES, WINDOW_LEN};

pub const NUM_CLASSES: usize = 2;

/// A layer sequence ending in two logits, followed by a softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    input: Shape,
    layers: Vec<Layer>,
    trainable: bool,
}

/// Activations of one example, kept for the backward pass.
#[derive(Debug, Clone)]
struct ExampleCache {
    /// `acts[i]` is the input of layer `i`; the last entry holds the logits.
    acts: Vec<Vec<f64>>,
    /// Pool argmax indices or dropout masks, per layer.
    aux: Vec<Aux>,
}

#[derive(Debug, Clone)]
enum Aux {
    None,
    Argmax(Vec<usize>),
    Mask(Vec<f64>),
}

/// Output of [`Model::forward`]: `(batch, 2)` probabilities plus cached activations.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub probs: Tensor,
    cache: Vec<ExampleCache>,
}

impl ForwardPass {
    pub fn logits(&self, i: usize) -> &[f64] {
        self.cache[i].acts.last().expect("model has layers")
    }
}

/// Gradients for the weights and bias of each layer; empty for layers without
/// parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| match l {
                    Layer::Conv1d(c) => (vec![0.0; c.weights.len()], vec![0.0; c.bias.len()]),
                    Layer::Dense(d) => (vec![0.0; d.weights.len()], vec![0.0; d.bias.len()]),
                    _ => (Vec::new(), Vec::new()),
                })
                .collect(),
        }
    }

    /// Flat views in the same order as [`Model::params_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers.iter().filter(|(w, _)| !w.is_empty()).flat_map(|(w, b)| [w.as_slice(), b.as_slice()]).collect()
    }
}

impl Model {
    /// Validates shapes along the sequence; the last layer must emit two values.
    pub fn new(input: Shape, layers: Vec<Layer>) -> Result<Self, NnError> {
        let mut shape = input;
        for (i, layer) in layers.iter().enumerate() {
            let bad = |why: String| NnError::InvalidArchitecture(format!("layer {i}: {why}"));
            match layer {
                Layer::Conv1d(c) => {
                    if c.in_channels != shape.1 {
                        return Err(bad(format!("expects {} channels, input has {}", c.in_channels, shape.1)));
                    }
                    if c.kernel == 0 || c.kernel > shape.0 || c.filters == 0 {
                        return Err(bad(format!("kernel {} on {} steps", c.kernel, shape.0)));
                    }
                    if c.weights.len() != c.kernel * c.in_channels * c.filters || c.bias.len() != c.filters {
                        return Err(bad("parameter sizes".into()));
                    }
                }
                Layer::MaxPool1d { pool } => {
                    if *pool == 0 || *pool > shape.0 {
                        return Err(bad(format!("pool {pool} on {} steps", shape.0)));
                    }
                }
                Layer::Dropout { rate } => {
                    if !(0.0..1.0).contains(rate) {
                        return Err(bad(format!("dropout rate {rate}")));
                    }
                }
                Layer::Dense(d) => {
                    if d.inputs != shape.0 * shape.1 || d.outputs == 0 {
                        return Err(bad(format!("expects {} inputs, got {}", d.inputs, shape.0 * shape.1)));
                    }
                    if d.weights.len() != d.inputs * d.outputs || d.bias.len() != d.outputs {
                        return Err(bad("parameter sizes".into()));
                    }
                }
            }
            shape = layer.output_shape(shape);
        }
        if shape.0 * shape.1 != NUM_CLASSES {
            return Err(NnError::InvalidArchitecture(format!(
                "network must end in {NUM_CLASSES} logits, ends in {:?}",
                shape
            )));
        }
        Ok(Self { input, layers, trainable: true })
    }

    /// Builds and initialises a network from descriptors with a seeded RNG.
    pub fn build(input: Shape, specs: &[LayerSpec], default_dropout: f64, seed: u64) -> Result<Self, NnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = input;
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            let layer = match *spec {
                LayerSpec::Conv1d { filters, kernel } => {
                    if kernel == 0 || kernel > shape.0 {
                        return Err(NnError::InvalidArchitecture(format!("kernel {kernel} on {} steps", shape.0)));
                    }
                    Layer::Conv1d(Conv1d::init(kernel, shape.1, filters, &mut rng))
                }
                LayerSpec::Maxpool { pool } => Layer::MaxPool1d { pool },
                LayerSpec::Dropout { rate } => Layer::Dropout { rate: rate.unwrap_or(default_dropout) },
                LayerSpec::Dense { units, relu } => Layer::Dense(Dense::init(shape.0 * shape.1, units, relu, &mut rng)),
            };
            if let Layer::MaxPool1d { pool } = layer {
                if pool == 0 || pool > shape.0 {
                    return Err(NnError::InvalidArchitecture(format!("pool {pool} on {} steps", shape.0)));
                }
            }
            shape = layer.output_shape(shape);
            layers.push(layer);
        }
        Model::new(input, layers)
    }

    /// The default network on `(129, 3)` windows.
    pub fn default_network(dropout: f64, seed: u64) -> Self {
        Self::build((WINDOW_LEN, AXES), &crate::nn::default_architecture(), dropout, seed)
            .expect("default architecture is consistent")
    }

    pub fn input_shape(&self) -> Shape {
        self.input
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Shapes of every activation, starting with the input.
    pub fn activation_shapes(&self) -> Vec<Shape> {
        let mut shapes = vec![self.input];
        for l in &self.layers {
            shapes.push(l.output_shape(*shapes.last().unwrap()));
        }
        shapes
    }

    /// Dropout removed, parameters marked constant. Inference is unchanged.
    pub fn freeze(&self) -> Model {
        Model {
            input: self.input,
            layers: self.layers.iter().filter(|l| !l.is_dropout()).cloned().collect(),
            trainable: false,
        }
    }

    /// Weight then bias of each parametric layer.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| match l {
                Layer::Conv1d(c) => vec![c.weights.as_mut_slice(), c.bias.as_mut_slice()],
                Layer::Dense(d) => vec![d.weights.as_mut_slice(), d.bias.as_mut_slice()],
                _ => Vec::new(),
            })
            .collect()
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| match l {
                Layer::Conv1d(c) => vec![c.weights.as_slice(), c.bias.as_slice()],
                Layer::Dense(d) => vec![d.weights.as_slice(), d.bias.as_slice()],
                _ => Vec::new(),
            })
            .collect()
    }

    fn check_input(&self, batch: &Tensor) -> Result<(), NnError> {
        let (steps, channels) = self.input;
        if batch.shape().len() != 3 || batch.shape()[1] != steps || batch.shape()[2] != channels {
            return Err(NnError::ShapeMismatch {
                expected: vec![batch.rows(), steps, channels],
                got: batch.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn forward_example(&self, x: &[f64], mut rng: Option<&mut ChaCha8Rng>) -> ExampleCache {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut aux = Vec::with_capacity(self.layers.len());
        let mut shape = self.input;
        acts.push(x.to_vec());
        for layer in &self.layers {
            let input = acts.last().unwrap();
            let (out, a) = match layer {
                Layer::Conv1d(c) => (c.forward(input, shape.0), Aux::None),
                Layer::MaxPool1d { pool } => {
                    let (out, arg) = max_pool(input, shape, *pool);
                    (out, Aux::Argmax(arg))
                }
                Layer::Dropout { rate } => match rng.as_deref_mut() {
                    Some(rng) if *rate > 0.0 => {
                        let keep = 1.0 / (1.0 - rate);
                        let mask: Vec<f64> =
                            (0..input.len()).map(|_| if rng.random::<f64>() < *rate { 0.0 } else { keep }).collect();
                        (input.iter().zip(&mask).map(|(v, m)| v * m).collect(), Aux::Mask(mask))
                    }
                    _ => (input.clone(), Aux::None),
                },
                Layer::Dense(d) => (d.forward(input), Aux::None),
            };
            shape = layer.output_shape(shape);
            acts.push(out);
            aux.push(a);
        }
        ExampleCache { acts, aux }
    }

    /// Softmax probabilities for a `(batch, steps, channels)` tensor. Passing an
    /// RNG enables (inverted) dropout.
    pub fn forward(&self, batch: &Tensor, mut rng: Option<&mut ChaCha8Rng>) -> Result<ForwardPass, NnError> {
        self.check_input(batch)?;
        let cache: Vec<ExampleCache> = match rng.as_deref_mut() {
            Some(rng) => (0..batch.rows()).map(|i| self.forward_example(batch.row(i), Some(rng))).collect(),
            None => (0..batch.rows()).into_par_iter().map(|i| self.forward_example(batch.row(i), None)).collect(),
        };
        let probs = cache.iter().flat_map(|c| softmax(c.acts.last().unwrap())).collect();
        Ok(ForwardPass { probs: Tensor::new(vec![batch.rows(), NUM_CLASSES], probs)?, cache })
    }

    /// Inference-mode probabilities of a single example.
    pub fn predict(&self, x: &[f64]) -> [f64; 2] {
        let cache = self.forward_example(x, None);
        let p = softmax(cache.acts.last().unwrap());
        [p[0], p[1]]
    }

    /// Inference-mode activations of a single example: the input followed by
    /// the output of every layer.
    pub fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        self.forward_example(x, None).acts
    }

    /// Inference-mode logits of a single example.
    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.forward_example(x, None).acts.pop().unwrap()
    }

    /// Gradients of the class-weighted mean cross-entropy of `pass`.
    pub fn backward(&self, pass: &ForwardPass, labels: &[u8], class_weights: [f64; 2]) -> Gradients {
        let mut grads = Gradients::zeros_like(self);
        let batch = pass.cache.len() as f64;
        let shapes = self.activation_shapes();
        for (i, (cache, &y)) in pass.cache.iter().zip(labels).enumerate() {
            let p = pass.probs.row(i);
            let w = class_weights[y as usize];
            let mut delta: Vec<f64> =
                (0..NUM_CLASSES).map(|c| (p[c] - if c == y as usize { 1.0 } else { 0.0 }) * w / batch).collect();
            for (l, layer) in self.layers.iter().enumerate().rev() {
                let x = &cache.acts[l];
                let y_out = &cache.acts[l + 1];
                let (gw, gb) = &mut grads.layers[l];
                delta = match (layer, &cache.aux[l]) {
                    (Layer::Conv1d(c), _) => c.backward(x, y_out, &delta, gw, gb),
                    (Layer::Dense(d), _) => d.backward(x, y_out, &delta, gw, gb),
                    (Layer::MaxPool1d { .. }, Aux::Argmax(arg)) => {
                        let mut dx = vec![0.0; shapes[l].0 * shapes[l].1];
                        for (&src, &g) in arg.iter().zip(&delta) {
                            dx[src] += g;
                        }
                        dx
                    }
                    (Layer::Dropout { .. }, Aux::Mask(mask)) => delta.iter().zip(mask).map(|(g, m)| g * m).collect(),
                    (Layer::Dropout { .. }, _) => delta,
                    (Layer::MaxPool1d { .. }, _) => unreachable!("pool cache always holds argmax"),
                };
            }
        }
        grads
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::loss::cross_entropy;

    fn tiny(seed: u64, dropout: f64) -> Model {
        Model::build(
            (8, 2),
            &[
                LayerSpec::Conv1d { filters: 2, kernel: 3 },
                LayerSpec::Maxpool { pool: 2 },
                LayerSpec::Dropout { rate: Some(dropout) },
                LayerSpec::Dense { units: 2, relu: false },
            ],
            0.0,
            seed,
        )
        .unwrap()
    }

    fn batch(seed: u64, n: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![n, 8, 2], (0..n * 16).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn default_network_shapes() {
        let m = Model::default_network(0.3, 1);
        let shapes = m.activation_shapes();
        assert_eq!(
            shapes,
            vec![(129, 3), (125, 16), (62, 16), (58, 32), (29, 32), (27, 32), (13, 32), (13, 32), (1, 2)]
        );
        assert_eq!(m.param_count(), 256 + 2592 + 3104 + 834);
    }

    #[test]
    fn rejects_inconsistent_layers() {
        let r = Model::build((8, 2), &[LayerSpec::Dense { units: 3, relu: false }], 0.0, 0);
        assert!(matches!(r, Err(NnError::InvalidArchitecture(_))));
        let r = Model::build((4, 2), &[LayerSpec::Conv1d { filters: 2, kernel: 5 }], 0.0, 0);
        assert!(r.is_err());
    }

    #[test]
    fn probabilities_sum_to_one() {
        let m = tiny(3, 0.0);
        let pass = m.forward(&batch(1, 5), None).unwrap();
        for i in 0..5 {
            let s: f64 = pass.probs.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(matches!(m.forward(&Tensor::zeros(vec![1, 7, 2]), None), Err(NnError::ShapeMismatch { .. })));
    }

    #[test]
    fn logit_gradient_identity() {
        // A dense-only model: the bias gradient equals the logit gradient.
        let dense =
            Dense { inputs: 2, outputs: 2, relu: false, weights: vec![0.3, -0.2, 0.1, 0.4], bias: vec![0.0, 0.0] };
        let m = Model::new((1, 2), vec![Layer::Dense(dense)]).unwrap();
        let x = Tensor::new(vec![2, 1, 2], vec![1.0, 2.0, -1.0, 0.5]).unwrap();
        let labels = [1u8, 0];
        let w = [0.7, 2.0];
        let pass = m.forward(&x, None).unwrap();
        let g = m.backward(&pass, &labels, w);
        let mut expected = [0.0; 2];
        for (i, &y) in labels.iter().enumerate() {
            for c in 0..2 {
                let onehot = if c == y as usize { 1.0 } else { 0.0 };
                expected[c] += (pass.probs.row(i)[c] - onehot) * w[y as usize] / 2.0;
            }
        }
        for c in 0..2 {
            assert!((g.layers[0].1[c] - expected[c]).abs() < 1e-15);
        }
    }

    #[test]
    fn dropped_units_get_no_gradient() {
        let m = Model::build(
            (8, 2),
            &[
                LayerSpec::Conv1d { filters: 2, kernel: 3 },
                LayerSpec::Dropout { rate: Some(0.5) },
                LayerSpec::Dense { units: 2, relu: false },
            ],
            0.0,
            4,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pass = m.forward(&batch(2, 1), Some(&mut rng)).unwrap();
        let Aux::Mask(mask) = &pass.cache[0].aux[1] else { panic!("no dropout mask") };
        assert!(mask.contains(&0.0));
        let g = m.backward(&pass, &[1], [1.0, 1.0]);
        let dense_w = &g.layers[2].0;
        for (i, &m) in mask.iter().enumerate() {
            if m == 0.0 {
                assert_eq!(&dense_w[i * 2..i * 2 + 2], &[0.0, 0.0]);
            }
        }
    }

    #[test]
    fn freeze_drops_dropout_and_keeps_outputs() {
        let m = tiny(5, 0.3);
        let frozen = m.freeze();
        assert_eq!(frozen.layers().len(), m.layers().len() - 1);
        assert!(!frozen.is_trainable());
        assert_eq!(frozen.freeze(), frozen);
        let b = batch(3, 4);
        assert_eq!(m.forward(&b, None).unwrap().probs, frozen.forward(&b, None).unwrap().probs);
    }

    #[test]
    fn finite_difference_spot_check() {
        let mut m = tiny(8, 0.0);
        let x = batch(4, 3);
        let labels = [0u8, 1, 1];
        let w = [1.0, 1.5];
        let g = m.backward(&m.forward(&x, None).unwrap(), &labels, w);
        let analytic = g.slices()[0][3];
        let h = 1e-5;
        let mut loss_at = |delta: f64| {
            m.params_mut()[0][3] += delta;
            let l = cross_entropy(&m.forward(&x, None).unwrap().probs, &labels, w);
            m.params_mut()[0][3] -= delta;
            l
        };
        let numeric = (loss_at(h) - loss_at(-h)) / (2.0 * h);
        assert!((analytic - numeric).abs() < 1e-8, "{analytic} vs {numeric}");
    }
}
