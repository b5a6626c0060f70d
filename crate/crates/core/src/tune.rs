//! Exhaustive grid search over filters, learning rate, epochs and batch size,
//! scored on the validation split.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::export::packed_size;
use crate::nn::{architecture_with_filters, evaluate, train, Model, NnError, TrainSpec};
use crate::windows::{WindowSet, WINDOW_LEN};

#[derive(Debug, Error)]
pub enum TuneError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("every grid cell failed")]
    AllCellsFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    /// First-convolution filter counts; later convolutions use twice as many.
    pub filters: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub epochs: Vec<usize>,
    pub batch_sizes: Vec<usize>,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            filters: vec![8, 16, 32],
            learning_rates: vec![1e-2, 1e-3, 1e-4],
            epochs: vec![50],
            batch_sizes: vec![32, 64],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub filters: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Grid {
    pub fn validate(&self) -> Result<(), TuneError> {
        let bad = |m: &str| Err(TuneError::InvalidGrid(m.to_string()));
        if self.filters.is_empty()
            || self.learning_rates.is_empty()
            || self.epochs.is_empty()
            || self.batch_sizes.is_empty()
        {
            return bad("every list must be non-empty");
        }
        if self.filters.contains(&0) || self.epochs.contains(&0) || self.batch_sizes.contains(&0) {
            return bad("filters, epochs and batch sizes must be positive");
        }
        if !self.learning_rates.iter().all(|lr| *lr > 0.0 && lr.is_finite()) {
            return bad("learning rates must be positive");
        }
        Ok(())
    }

    /// Cartesian product in declaration order, batch size varying fastest.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &filters in &self.filters {
            for &learning_rate in &self.learning_rates {
                for &epochs in &self.epochs {
                    for &batch_size in &self.batch_sizes {
                        out.push(Cell { filters, learning_rate, epochs, batch_size });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneRow {
    pub cell: Cell,
    pub val_accuracy: f64,
    pub val_loss: f64,
    pub model_size_bytes: usize,
    pub epochs_run: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedCell {
    pub cell: Cell,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub table: Vec<TuneRow>,
    pub failed: Vec<FailedCell>,
    pub best: Cell,
}

/// Highest validation accuracy, then smaller model, then lower learning
/// rate, then earlier row.
pub fn select_best(table: &[TuneRow]) -> Option<&TuneRow> {
    let mut best: Option<&TuneRow> = None;
    for row in table {
        let better = match best {
            None => true,
            Some(b) => {
                row.val_accuracy > b.val_accuracy
                    || (row.val_accuracy == b.val_accuracy
                        && (row.model_size_bytes < b.model_size_bytes
                            || (row.model_size_bytes == b.model_size_bytes
                                && row.cell.learning_rate < b.cell.learning_rate)))
            }
        };
        if better {
            best = Some(row);
        }
    }
    best
}

fn run_cell(
    cell: Cell,
    base: &TrainSpec,
    train_set: &WindowSet,
    val_set: &WindowSet,
    seed: u64,
) -> Result<TuneRow, NnError> {
    let spec = TrainSpec {
        learning_rate: cell.learning_rate,
        batch_size: cell.batch_size,
        max_epochs: cell.epochs,
        seed,
        architecture: architecture_with_filters(cell.filters),
        ..base.clone()
    };
    let cfg = spec.to_config(train_set)?;
    let model = Model::build((WINDOW_LEN, 3), &spec.architecture, spec.dropout, seed)?;
    let (model, history) = train(&model, train_set, val_set, &cfg)?;
    let eval = evaluate(&model, val_set);
    Ok(TuneRow {
        cell,
        val_accuracy: eval.accuracy_overall,
        val_loss: eval.loss,
        model_size_bytes: packed_size(&model.freeze()),
        epochs_run: history.epochs.len(),
    })
}

/// Trains one model per grid cell (in parallel, each with the same seed) on
/// standardized `train_set` and scores it on `val_set`. `base` supplies
/// everything the grid does not vary.
pub fn grid_search(
    grid: &Grid,
    train_set: &WindowSet,
    val_set: &WindowSet,
    base: &TrainSpec,
    seed: u64,
) -> Result<TuneResult, TuneError> {
    grid.validate()?;
    let results: Vec<(Cell, Result<TuneRow, NnError>)> =
        grid.cells().into_par_iter().map(|cell| (cell, run_cell(cell, base, train_set, val_set, seed))).collect();
    let mut table = Vec::new();
    let mut failed = Vec::new();
    for (cell, r) in results {
        match r {
            Ok(row) => {
                log::info!(
                    "filters {} lr {} epochs {} batch {}: val accuracy {:.4}, {} bytes",
                    cell.filters,
                    cell.learning_rate,
                    cell.epochs,
                    cell.batch_size,
                    row.val_accuracy,
                    row.model_size_bytes
                );
                table.push(row);
            }
            Err(e) => {
                log::warn!("grid cell {cell:?} failed: {e}");
                failed.push(FailedCell { cell, error: e.to_string() });
            }
        }
    }
    let best = select_best(&table).ok_or(TuneError::AllCellsFailed)?.cell;
    Ok(TuneResult { table, failed, best })
}
