use serde::{Deserialize, Serialize};

use crate::nn::loss::cross_entropy;
use crate::nn::{Model, Tensor};
use crate::windows::WindowSet;

/// Confusion counts, overall accuracy and per-class recall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `[[tn, fp], [fn, tp]]`, rows indexed by the true label.
    pub confusion: [[usize; 2]; 2],
    pub accuracy_overall: f64,
    /// Correct predictions of class `c` over windows of class `c`; 0 for an
    /// absent class.
    pub accuracy_per_class: [f64; 2],
    pub loss: f64,
}

impl EvalReport {
    pub fn from_predictions(truth: &[u8], predicted: &[u8], loss: f64) -> Self {
        let mut confusion = [[0usize; 2]; 2];
        for (&t, &p) in truth.iter().zip(predicted) {
            confusion[t as usize][p as usize] += 1;
        }
        let n: usize = confusion.iter().flatten().sum();
        let correct = confusion[0][0] + confusion[1][1];
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        Self {
            confusion,
            accuracy_overall: ratio(correct, n),
            accuracy_per_class: [
                ratio(confusion[0][0], confusion[0][0] + confusion[0][1]),
                ratio(confusion[1][1], confusion[1][0] + confusion[1][1]),
            ],
            loss,
        }
    }

    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }

    pub fn tn(&self) -> usize {
        self.confusion[0][0]
    }
    pub fn fp(&self) -> usize {
        self.confusion[0][1]
    }
    pub fn fn_(&self) -> usize {
        self.confusion[1][0]
    }
    pub fn tp(&self) -> usize {
        self.confusion[1][1]
    }

    /// Fixed-width confusion table for terminals.
    pub fn table(&self) -> String {
        format!(
            "              pred No-FoG  pred FoG\n\
             true No-FoG  {:>11}  {:>8}\n\
             true FoG     {:>11}  {:>8}\n\
             accuracy {:.2}%  No-FoG {:.2}%  FoG {:.2}%  loss {:.4}\n",
            self.tn(),
            self.fp(),
            self.fn_(),
            self.tp(),
            100.0 * self.accuracy_overall,
            100.0 * self.accuracy_per_class[0],
            100.0 * self.accuracy_per_class[1],
            self.loss
        )
    }
}

/// Index of the larger probability; ties go to class 0.
pub fn argmax2(p: &[f64]) -> u8 {
    u8::from(p[1] > p[0])
}

/// Inference-mode evaluation with the unweighted loss.
pub fn evaluate(model: &Model, set: &WindowSet) -> EvalReport {
    let labels = set.labels();
    if set.is_empty() {
        return EvalReport::from_predictions(&[], &[], 0.0);
    }
    let batch = Tensor::from_windows(set.windows()).expect("windows share one shape");
    let pass = model.forward(&batch, None).expect("windows match the model input");
    let predicted: Vec<u8> = (0..set.len()).map(|i| argmax2(pass.probs.row(i))).collect();
    EvalReport::from_predictions(&labels, &predicted, cross_entropy(&pass.probs, &labels, [1.0, 1.0]))
}
