use crate::nn::{NnError, Tensor};
use crate::windows::WindowSet;

/// Probabilities are clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]` before the log.
pub const PROB_FLOOR: f64 = 1e-12;

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Class-weighted mean cross-entropy: `sum_i w[y_i] * -ln p_i[y_i] / batch`.
pub fn cross_entropy(probs: &Tensor, labels: &[u8], class_weights: [f64; 2]) -> f64 {
    let n = probs.rows();
    if n == 0 {
        return 0.0;
    }
    let total: f64 = (0..n)
        .map(|i| {
            let y = labels[i] as usize;
            let p = probs.row(i)[y].clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
            -class_weights[y] * p.ln()
        })
        .sum();
    total / n as f64
}

/// Balanced weights `w_c = N / (2 N_c)`.
pub fn class_weights_from(set: &WindowSet) -> Result<[f64; 2], NnError> {
    let counts = set.class_counts();
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(NnError::EmptyClass(c as u8));
    }
    let total = set.len() as f64;
    Ok(counts.map(|n| total / (2.0 * n as f64)))
}
