use crate::nn::NnError;
use crate::windows::{Window, AXES};

/// Dense row-major float64 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NnError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NnError::ShapeMismatch { expected: vec![expected], got: vec![data.len()] });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite);
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![0.0; n] }
    }

    /// Stacks windows into a `(batch, steps, 3)` tensor.
    pub fn from_windows<'a>(windows: impl IntoIterator<Item = &'a Window>) -> Result<Self, NnError> {
        let mut data = Vec::new();
        let mut batch = 0;
        let mut steps = None;
        for w in windows {
            match steps {
                None => steps = Some(w.steps()),
                Some(s) if s != w.steps() => {
                    return Err(NnError::ShapeMismatch { expected: vec![s, AXES], got: vec![w.steps(), AXES] })
                }
                _ => {}
            }
            data.extend_from_slice(&w.values);
            batch += 1;
        }
        Tensor::new(vec![batch, steps.unwrap_or(0), AXES], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Number of rows along the first dimension.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// The `i`-th slice along the first dimension.
    pub fn row(&self, i: usize) -> &[f64] {
        let width = self.data.len() / self.rows().max(1);
        &self.data[i * width..(i + 1) * width]
    }
}
