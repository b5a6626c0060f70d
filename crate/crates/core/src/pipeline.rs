//! End-to-end steps shared by the CLI and the dataset-level tests.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::export::{export_model, prepare_input, quantized_forward, ExportError, PackedModel};
use crate::ingest::{ingest_series, Channel, CleanSeries, Exclusions, IngestError};
use crate::nn::{evaluate, train, EvalReport, History, Model, NnError, TrainSpec, PROB_FLOOR};
use crate::windows::{
    apply_stats, fit_stats, oversample_minority, segment_all, split, NormStats, SplitFractions, SplitManifest, Splits,
    WindowError, WindowSet, HOP, WINDOW_LEN,
};

/// Environment variable naming a directory with Daphnet `S..R...txt` logs.
pub const DATASET_ENV: &str = "FOG_DATASET_DIR";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Windows(#[from] WindowError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Export(#[from] ExportError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentParams {
    pub window: usize,
    pub hop: usize,
    pub ratio: f64,
    pub seed: u64,
    pub fractions: SplitFractions,
}

impl Default for SegmentParams {
    fn default() -> Self {
        Self { window: WINDOW_LEN, hop: HOP, ratio: 1.0, seed: 42, fractions: SplitFractions::default() }
    }
}

impl SegmentParams {
    /// Manifest for these parameters; index ranges are filled in on write.
    pub fn manifest(&self) -> SplitManifest {
        SplitManifest {
            train: [0, 0],
            val: [0, 0],
            test: [0, 0],
            window: self.window,
            hop: self.hop,
            ratio: self.ratio,
            seed: self.seed,
            fractions: self.fractions,
        }
    }
}

/// Segments, splits, then oversamples the training split only.
pub fn build_splits(series: &[CleanSeries], p: &SegmentParams) -> Result<Splits, WindowError> {
    let all = segment_all(series, p.window, p.hop)?;
    let mut splits = split(&all, p.fractions, p.seed)?;
    splits.train = oversample_minority(&splits.train, p.ratio, p.seed)?;
    Ok(splits)
}

/// Fits statistics on the training split, standardizes train and val, and
/// trains the model described by `spec`.
pub fn train_model(splits: &Splits, spec: &TrainSpec) -> Result<(Model, NormStats, History), PipelineError> {
    let stats = fit_stats(&splits.train)?;
    let train_set = apply_stats(&splits.train, &stats);
    let val_set = apply_stats(&splits.val, &stats);
    let cfg = spec.to_config(&train_set)?;
    let model = Model::build((WINDOW_LEN, 3), &spec.architecture, spec.dropout, spec.seed)?;
    let (model, history) = train(&model, &train_set, &val_set, &cfg)?;
    Ok((model, stats, history))
}

/// Float evaluation of raw windows.
pub fn evaluate_float(model: &Model, stats: &NormStats, raw: &WindowSet) -> EvalReport {
    evaluate(model, &apply_stats(raw, stats))
}

/// Quantized evaluation of raw windows; the loss uses the 8-bit probabilities.
pub fn evaluate_quantized(packed: &PackedModel, raw: &WindowSet) -> EvalReport {
    let mut predicted = Vec::with_capacity(raw.len());
    let mut loss = 0.0;
    for w in raw.windows() {
        let p = quantized_forward(packed, &prepare_input(packed, &w.values_f32()));
        let prob = p.prob_uint8 as f64 / 255.0;
        let p_true = if p.label == w.label { prob } else { 1.0 - prob };
        loss -= p_true.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR).ln();
        predicted.push(p.label);
    }
    let loss = if raw.is_empty() { 0.0 } else { loss / raw.len() as f64 };
    EvalReport::from_predictions(&raw.labels(), &predicted, loss)
}

/// Packs `model` with calibration drawn from the raw training split.
pub fn export_trained(
    model: &Model,
    stats: &NormStats,
    raw_train: &WindowSet,
    budget: usize,
    seed: u64,
) -> Result<PackedModel, ExportError> {
    export_model(model, stats, &apply_stats(raw_train, stats), budget, seed)
}

/// The dataset directory from [`DATASET_ENV`], if it holds Daphnet logs. A
/// release root with a `dataset/` subdirectory is accepted too.
pub fn dataset_dir() -> Option<PathBuf> {
    let root = PathBuf::from(std::env::var_os(DATASET_ENV)?);
    [root.join("dataset"), root].into_iter().find(|d| has_daphnet_logs(d))
}

fn has_daphnet_logs(dir: &Path) -> bool {
    std::fs::read_dir(dir).is_ok_and(|entries| {
        entries.filter_map(Result::ok).any(|e| {
            let name = e.file_name().to_string_lossy().to_ascii_uppercase();
            name.starts_with('S') && name.contains('R') && name.ends_with(".TXT")
        })
    })
}

/// Everything a full run produces.
#[derive(Debug, Clone)]
pub struct FullRun {
    pub splits: Splits,
    pub history: History,
    pub float_test: EvalReport,
    pub quantized_test: EvalReport,
    pub packed_bytes: usize,
}

/// Ingests `dataset`, then segments, trains with `spec`, exports and
/// evaluates on the held-out test split.
pub fn run_full(
    dataset: &Path,
    params: &SegmentParams,
    spec: &TrainSpec,
    budget: usize,
) -> Result<FullRun, PipelineError> {
    let (series, summary) = ingest_series(dataset, Channel::Thigh, &Exclusions::default())?;
    log::info!("{} files, {} series, {} samples kept", summary.files, summary.series, summary.kept_samples);
    let splits = build_splits(&series, params)?;
    let (model, stats, history) = train_model(&splits, spec)?;
    let packed = export_trained(&model, &stats, &splits.train, budget, params.seed)?;
    Ok(FullRun {
        float_test: evaluate_float(&model, &stats, &splits.test),
        quantized_test: evaluate_quantized(&packed, &splits.test),
        packed_bytes: packed.size_bytes(),
        history,
        splits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::export::FLASH_BUDGET;
    use crate::ingest::Sample;
    use crate::windows::{LABEL_FOG, LABEL_NOFOG};
    use std::collections::HashSet;

    fn series(subject: &str, n: usize, fog_every: usize) -> CleanSeries {
        CleanSeries {
            subject_id: subject.into(),
            trial_id: "R01".into(),
            segment_index: 0,
            samples: (0..n)
                .map(|i| {
                    let fog = (i / 129) % fog_every == 0;
                    let phase = i as f64 * if fog { 1.2 } else { 0.15 };
                    Sample {
                        time_ms: i as i64 * 15,
                        accel: [
                            ((if fog { 900.0 } else { 150.0 }) * phase.sin()) as i32,
                            -1000 + (50.0 * phase.cos()) as i32,
                            100 + (i % 7) as i32,
                        ],
                        annotation: if fog { 2 } else { 1 },
                    }
                })
                .collect(),
        }
    }

    #[test]
    fn training_split_only_gets_duplicates() {
        let s = [series("S01", 129 * 40, 4), series("S02", 129 * 30, 5)];
        let splits = build_splits(&s, &SegmentParams::default()).unwrap();
        let [nofog, fog] = splits.train.class_counts();
        assert!(fog >= nofog && nofog > 0);
        let key = |w: &crate::windows::Window| w.origin;
        let train: HashSet<_> = splits.train.windows().iter().map(key).collect();
        for w in splits.val.windows().iter().chain(splits.test.windows()) {
            assert!(!train.contains(&key(w)));
        }
        assert!(splits.val.count_fog() > 0 && splits.test.count_nofog() > 0);
        assert!(splits.test.labels().iter().all(|&l| l == LABEL_FOG || l == LABEL_NOFOG));
    }

    #[test]
    fn small_end_to_end_run() {
        let s = [series("S01", 129 * 40, 3), series("S02", 129 * 40, 3)];
        let splits = build_splits(&s, &SegmentParams::default()).unwrap();
        let spec =
            TrainSpec { max_epochs: 15, architecture: crate::nn::architecture_with_filters(4), ..TrainSpec::default() };
        let (model, stats, history) = train_model(&splits, &spec).unwrap();
        assert!(!history.epochs.is_empty());
        let packed = export_trained(&model, &stats, &splits.train, FLASH_BUDGET, 1).unwrap();
        let f = evaluate_float(&model, &stats, &splits.test);
        let q = evaluate_quantized(&packed, &splits.test);
        assert_eq!(f.total(), splits.test.len());
        assert_eq!(q.total(), splits.test.len());
        assert!(f.accuracy_overall > 0.9, "{}", f.table());
        assert!(q.accuracy_overall > 0.9, "{}", q.table());
    }
}
