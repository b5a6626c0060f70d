//! Fixed-length labelled windows over cleaned series.
//!
//! Windows are `WINDOW_LEN` × 3 acceleration matrices stored time-major
//! (`t0x, t0y, t0z, t1x, ...`). Labels use 0 for no freeze and 1 for freeze.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::CleanSeries;

pub const WINDOW_LEN: usize = 129;
pub const HOP: usize = 64;
pub const AXES: usize = 3;
/// Values in one default window.
pub const WINDOW_VALUES: usize = WINDOW_LEN * AXES;

pub const LABEL_NOFOG: u8 = 0;
pub const LABEL_FOG: u8 = 1;

const WINDOWS_MAGIC: &[u8; 4] = b"FOGW";
const WINDOWS_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WindowError {
    #[error("window length must be positive and hop in 1..=window length (got {window_len}, {hop})")]
    InvalidWindowing { window_len: usize, hop: usize },
    #[error("class {0} has no windows")]
    EmptyClass(u8),
    #[error("oversampling ratio must be in (0, 1], got {0}")]
    InvalidRatio(f64),
    #[error("axis {0} has zero variance")]
    DegenerateAxis(usize),
    #[error("cannot fit statistics on an empty set")]
    EmptySet,
    #[error("split fractions must be positive and sum to 1, got {0:?}")]
    InvalidFractions([f64; 3]),
    #[error("not a windows file")]
    BadMagic,
    #[error("unsupported windows file version {0}")]
    BadVersion(u32),
    #[error("windows file is truncated or inconsistent")]
    Corrupt,
    #[error("bad split manifest: {0}")]
    BadManifest(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Where a window came from: numeric subject, trial and segment ids plus the
/// first sample index within the segment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Origin {
    pub subject: u32,
    pub trial: u32,
    pub segment: u32,
    pub start: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    /// Time-major values, `steps * 3` long.
    pub values: Vec<f64>,
    pub label: u8,
    pub origin: Origin,
}

impl Window {
    pub fn steps(&self) -> usize {
        self.values.len() / AXES
    }

    pub fn values_f32(&self) -> Vec<f32> {
        self.values.iter().map(|&v| v as f32).collect()
    }
}

/// Windows plus their per-class counts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WindowSet {
    windows: Vec<Window>,
    count_fog: usize,
    count_nofog: usize,
}

impl WindowSet {
    pub fn new(windows: Vec<Window>) -> Self {
        let count_fog = windows.iter().filter(|w| w.label == LABEL_FOG).count();
        let count_nofog = windows.len() - count_fog;
        Self { windows, count_fog, count_nofog }
    }

    pub fn windows(&self) -> &[Window] {
        &self.windows
    }

    pub fn into_windows(self) -> Vec<Window> {
        self.windows
    }

    pub fn count_fog(&self) -> usize {
        self.count_fog
    }

    pub fn count_nofog(&self) -> usize {
        self.count_nofog
    }

    /// Counts indexed by label.
    pub fn class_counts(&self) -> [usize; 2] {
        [self.count_nofog, self.count_fog]
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.windows.iter().map(|w| w.label).collect()
    }

    pub fn push(&mut self, window: Window) {
        if window.label == LABEL_FOG {
            self.count_fog += 1;
        } else {
            self.count_nofog += 1;
        }
        self.windows.push(window);
    }

    /// Seeded sample of at most `n` windows, without replacement, in original order.
    pub fn sample(&self, n: usize, seed: u64) -> WindowSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(n);
        idx.sort_unstable();
        WindowSet::new(idx.into_iter().map(|i| self.windows[i].clone()).collect())
    }
}

impl FromIterator<Window> for WindowSet {
    fn from_iter<I: IntoIterator<Item = Window>>(iter: I) -> Self {
        WindowSet::new(iter.into_iter().collect())
    }
}

/// Digits of an id such as `S07` or `R02`; ids without digits fall back to a
/// 32-bit FNV-1a hash.
pub fn numeric_id(id: &str) -> u32 {
    let digits: String = id.chars().filter(char::is_ascii_digit).collect();
    if let Ok(n) = digits.parse() {
        return n;
    }
    id.bytes().fold(0x811c_9dc5u32, |h, b| (h ^ b as u32).wrapping_mul(0x0100_0193))
}

/// Number of windows `segment` yields for a series of `n` samples.
pub fn window_count(n: usize, window_len: usize, hop: usize) -> usize {
    if n < window_len {
        0
    } else {
        (n - window_len) / hop + 1
    }
}

/// 1 (freeze) iff strictly more than half the samples are annotated 2.
pub fn label_window(annotations: &[u8]) -> u8 {
    let fog = annotations.iter().filter(|&&a| a == 2).count();
    if 2 * fog > annotations.len() {
        LABEL_FOG
    } else {
        LABEL_NOFOG
    }
}

pub fn segment(series: &CleanSeries, window_len: usize, hop: usize) -> Result<Vec<Window>, WindowError> {
    if window_len == 0 || hop == 0 || hop > window_len {
        return Err(WindowError::InvalidWindowing { window_len, hop });
    }
    let subject = numeric_id(&series.subject_id);
    let trial = numeric_id(&series.trial_id);
    let n = window_count(series.len(), window_len, hop);
    let mut out = Vec::with_capacity(n);
    for start in (0..n).map(|i| i * hop) {
        let slice = &series.samples[start..start + window_len];
        let values = slice.iter().flat_map(|s| s.accel.map(f64::from)).collect();
        let annotations: Vec<u8> = slice.iter().map(|s| s.annotation).collect();
        out.push(Window {
            values,
            label: label_window(&annotations),
            origin: Origin { subject, trial, segment: series.segment_index, start: start as u32 },
        });
    }
    Ok(out)
}

/// Segments every series; order follows the input order of `series`.
pub fn segment_all(series: &[CleanSeries], window_len: usize, hop: usize) -> Result<WindowSet, WindowError> {
    let per_series: Vec<Vec<Window>> =
        series.par_iter().map(|s| segment(s, window_len, hop)).collect::<Result<_, _>>()?;
    Ok(per_series.into_iter().flatten().collect())
}

/// Appends seeded random duplicates of minority windows until the minority
/// count reaches `target_ratio` times the majority count.
pub fn oversample_minority(set: &WindowSet, target_ratio: f64, seed: u64) -> Result<WindowSet, WindowError> {
    if !(target_ratio > 0.0 && target_ratio <= 1.0) {
        return Err(WindowError::InvalidRatio(target_ratio));
    }
    let [nofog, fog] = set.class_counts();
    if nofog == 0 {
        return Err(WindowError::EmptyClass(LABEL_NOFOG));
    }
    if fog == 0 {
        return Err(WindowError::EmptyClass(LABEL_FOG));
    }
    let (minority, n_min, n_maj) = if fog < nofog { (LABEL_FOG, fog, nofog) } else { (LABEL_NOFOG, nofog, fog) };
    // The epsilon absorbs float noise such as 0.3 * 10 = 3.0000000000000004.
    let target = (target_ratio * n_maj as f64 - 1e-9).ceil().max(0.0) as usize;
    let pool: Vec<&Window> = set.windows().iter().filter(|w| w.label == minority).collect();

    let mut out = set.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in n_min..target {
        out.push(pool[rng.random_range(0..pool.len())].clone());
    }
    Ok(out)
}

/// Per-axis standardisation statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl NormStats {
    pub const IDENTITY: NormStats = NormStats { mean: [0.0; 3], std: [1.0; 3] };

    pub fn standardize(&self, values: &mut [f64]) {
        for (i, v) in values.iter_mut().enumerate() {
            let axis = i % AXES;
            *v = (*v - self.mean[axis]) / self.std[axis];
        }
    }
}

pub fn fit_stats(train: &WindowSet) -> Result<NormStats, WindowError> {
    let n: usize = train.windows().iter().map(Window::steps).sum();
    if n == 0 {
        return Err(WindowError::EmptySet);
    }
    let mut mean = [0.0; 3];
    for w in train.windows() {
        for (i, v) in w.values.iter().enumerate() {
            mean[i % AXES] += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = [0.0; 3];
    for w in train.windows() {
        for (i, v) in w.values.iter().enumerate() {
            let d = v - mean[i % AXES];
            var[i % AXES] += d * d;
        }
    }
    let mut std = [0.0; 3];
    for axis in 0..AXES {
        std[axis] = (var[axis] / n as f64).sqrt();
        if std[axis] == 0.0 || !std[axis].is_finite() {
            return Err(WindowError::DegenerateAxis(axis));
        }
    }
    Ok(NormStats { mean, std })
}

pub fn apply_stats(set: &WindowSet, stats: &NormStats) -> WindowSet {
    set.windows()
        .iter()
        .map(|w| {
            let mut w = w.clone();
            stats.standardize(&mut w.values);
            w
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.7, val: 0.15, test: 0.15 }
    }
}

impl SplitFractions {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self, WindowError> {
        let f = Self { train, val, test };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<(), WindowError> {
        let all = [self.train, self.val, self.test];
        let ok = all.iter().all(|f| f.is_finite() && *f > 0.0) && (all.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
        if ok {
            Ok(())
        } else {
            Err(WindowError::InvalidFractions(all))
        }
    }
}

impl std::str::FromStr for SplitFractions {
    type Err = String;

    /// `"0.7,0.15,0.15"`
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<f64> =
            s.split(',').map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string())).collect::<Result<_, _>>()?;
        match parts.as_slice() {
            [a, b, c] => SplitFractions::new(*a, *b, *c).map_err(|e| e.to_string()),
            _ => Err(format!("expected three comma-separated fractions, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Splits {
    pub train: WindowSet,
    pub val: WindowSet,
    pub test: WindowSet,
}

/// Stratified, seeded three-way split. Within each split windows keep their
/// input order.
pub fn split(set: &WindowSet, fractions: SplitFractions, seed: u64) -> Result<Splits, WindowError> {
    fractions.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0u8; set.len()];
    for label in [LABEL_NOFOG, LABEL_FOG] {
        let mut idx: Vec<usize> = (0..set.len()).filter(|&i| set.windows()[i].label == label).collect();
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_train = ((n as f64 * fractions.train).round() as usize).min(n);
        let n_val = ((n as f64 * fractions.val).round() as usize).min(n - n_train);
        for (rank, i) in idx.into_iter().enumerate() {
            assignment[i] = if rank < n_train {
                0
            } else if rank < n_train + n_val {
                1
            } else {
                2
            };
        }
    }
    let pick = |part: u8| -> WindowSet {
        set.windows().iter().zip(&assignment).filter(|(_, &a)| a == part).map(|(w, _)| w.clone()).collect()
    };
    Ok(Splits { train: pick(0), val: pick(1), test: pick(2) })
}

/// How a `windows.bin` file is partitioned; stored next to it as
/// `<stem>.split.json`. Ranges are `[start, end)` window indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train: [usize; 2],
    pub val: [usize; 2],
    pub test: [usize; 2],
    pub window: usize,
    pub hop: usize,
    pub ratio: f64,
    pub seed: u64,
    pub fractions: SplitFractions,
}

pub fn manifest_path(windows_path: &Path) -> PathBuf {
    windows_path.with_extension("split.json")
}

pub fn encode_windows(windows: &[Window]) -> Vec<u8> {
    let per = windows.first().map_or(0, |w| 20 + 4 * w.values.len());
    let mut out = Vec::with_capacity(12 + per * windows.len());
    out.extend_from_slice(WINDOWS_MAGIC);
    out.extend_from_slice(&WINDOWS_VERSION.to_le_bytes());
    out.extend_from_slice(&(windows.len() as u32).to_le_bytes());
    for w in windows {
        out.extend_from_slice(&(w.label as u32).to_le_bytes());
        for id in [w.origin.subject, w.origin.trial, w.origin.segment, w.origin.start] {
            out.extend_from_slice(&id.to_le_bytes());
        }
        for &v in &w.values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

/// Window length is inferred from the payload size; every window in a file
/// has the same length.
pub fn decode_windows(bytes: &[u8]) -> Result<Vec<Window>, WindowError> {
    if bytes.len() < 4 || &bytes[..4] != WINDOWS_MAGIC {
        return Err(WindowError::BadMagic);
    }
    let word = |at: usize| -> Result<u32, WindowError> {
        bytes.get(at..at + 4).map(|b| u32::from_le_bytes(b.try_into().unwrap())).ok_or(WindowError::Corrupt)
    };
    let version = word(4)?;
    if version != WINDOWS_VERSION {
        return Err(WindowError::BadVersion(version));
    }
    let count = word(8)? as usize;
    let payload = bytes.len() - 12;
    if count == 0 {
        return if payload == 0 { Ok(Vec::new()) } else { Err(WindowError::Corrupt) };
    }
    if payload % count != 0 || payload / count < 20 || (payload / count - 20) % (4 * AXES) != 0 {
        return Err(WindowError::Corrupt);
    }
    let per = payload / count;
    let n_values = (per - 20) / 4;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let base = 12 + i * per;
        let label = word(base)?;
        if label > 1 {
            return Err(WindowError::Corrupt);
        }
        let origin = Origin {
            subject: word(base + 4)?,
            trial: word(base + 8)?,
            segment: word(base + 12)?,
            start: word(base + 16)?,
        };
        let values = bytes[base + 20..base + per]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect::<Vec<_>>();
        debug_assert_eq!(values.len(), n_values);
        out.push(Window { values, label: label as u8, origin });
    }
    Ok(out)
}

pub fn write_windows(path: &Path, windows: &[Window]) -> Result<(), WindowError> {
    fs::write(path, encode_windows(windows))?;
    Ok(())
}

pub fn read_windows(path: &Path) -> Result<Vec<Window>, WindowError> {
    decode_windows(&fs::read(path)?)
}

/// Writes train, val and test back to back plus the split manifest.
pub fn write_splits(path: &Path, splits: &Splits, mut manifest: SplitManifest) -> Result<(), WindowError> {
    let (a, b, c) = (splits.train.len(), splits.val.len(), splits.test.len());
    manifest.train = [0, a];
    manifest.val = [a, a + b];
    manifest.test = [a + b, a + b + c];
    let all: Vec<Window> =
        [&splits.train, &splits.val, &splits.test].into_iter().flat_map(|s| s.windows().iter().cloned()).collect();
    write_windows(path, &all)?;
    fs::write(manifest_path(path), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Reads a windows file and its split manifest. Without a manifest every
/// window is treated as test data.
pub fn read_splits(path: &Path) -> Result<(Splits, Option<SplitManifest>), WindowError> {
    let windows = read_windows(path)?;
    let mpath = manifest_path(path);
    if !mpath.exists() {
        return Ok((Splits { test: WindowSet::new(windows), ..Default::default() }, None));
    }
    let manifest: SplitManifest = serde_json::from_str(&fs::read_to_string(mpath)?)?;
    let take = |[s, e]: [usize; 2]| -> Result<WindowSet, WindowError> {
        windows.get(s..e).map(|w| WindowSet::new(w.to_vec())).ok_or(WindowError::Corrupt)
    };
    let splits = Splits { train: take(manifest.train)?, val: take(manifest.val)?, test: take(manifest.test)? };
    Ok((splits, Some(manifest)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Sample;
    use proptest::prelude::*;
    use rand::Rng;

    fn series(annotations: &[u8]) -> CleanSeries {
        CleanSeries {
            subject_id: "S04".into(),
            trial_id: "R02".into(),
            segment_index: 3,
            samples: annotations
                .iter()
                .enumerate()
                .map(|(i, &a)| Sample { time_ms: i as i64 * 15, accel: [i as i32, -(i as i32), 7], annotation: a })
                .collect(),
        }
    }

    fn window(label: u8, tag: u32) -> Window {
        Window { values: vec![tag as f64; 6], label, origin: Origin { subject: 1, trial: 1, segment: 0, start: tag } }
    }

    fn set_with(nofog: usize, fog: usize) -> WindowSet {
        (0..nofog).map(|i| window(0, i as u32)).chain((0..fog).map(|i| window(1, (nofog + i) as u32))).collect()
    }

    #[test]
    fn segment_starts() {
        let w = segment(&series(&[1; 193]), 129, 64).unwrap();
        assert_eq!(w.iter().map(|w| w.origin.start).collect::<Vec<_>>(), vec![0, 64]);
        assert_eq!(w[0].origin, Origin { subject: 4, trial: 2, segment: 3, start: 0 });
        assert!(segment(&series(&[1; 128]), 129, 64).unwrap().is_empty());
        assert!(segment(&series(&[1; 10]), 4, 5).is_err());
        assert!(segment(&series(&[1; 10]), 0, 1).is_err());
    }

    #[test]
    fn window_count_matches_enumeration() {
        for n in 129..=2000 {
            let brute = (0..n).filter(|s| s + 129 <= n).step_by(1).filter(|s| s % 64 == 0).count();
            assert_eq!(window_count(n, 129, 64), brute, "n = {n}");
            assert_eq!(window_count(n, 129, 64), (n - 129) / 64 + 1);
        }
    }

    #[test]
    fn majority_labels() {
        assert_eq!(label_window(&[2; 129]), 1);
        assert_eq!(label_window(&[1; 129]), 0);
        let mut ann = [1u8; 129];
        ann[..65].fill(2);
        assert_eq!(label_window(&ann), 1);
        ann[64] = 1;
        assert_eq!(label_window(&ann), 0);
    }

    #[test]
    fn segment_labels_by_majority() {
        let mut ann = vec![1u8; 193];
        ann[64..193].fill(2);
        let w = segment(&series(&ann), 129, 64).unwrap();
        // window 0 covers 0..129: 65 freeze samples; window 1 covers 64..193: all freeze.
        assert_eq!(w[0].label, 1);
        assert_eq!(w[1].label, 1);
        ann[64] = 1;
        assert_eq!(segment(&series(&ann), 129, 64).unwrap()[0].label, 0);
    }

    #[test]
    fn oversampling_counts() {
        let out = oversample_minority(&set_with(100, 20), 1.0, 7).unwrap();
        assert_eq!((out.count_nofog(), out.count_fog()), (100, 100));
        let out = oversample_minority(&set_with(100, 20), 0.5, 7).unwrap();
        assert_eq!((out.count_nofog(), out.count_fog()), (100, 50));
        let balanced = set_with(50, 50);
        assert_eq!(oversample_minority(&balanced, 1.0, 7).unwrap(), balanced);
        assert!(matches!(oversample_minority(&set_with(10, 0), 1.0, 7), Err(WindowError::EmptyClass(1))));
        assert!(matches!(oversample_minority(&set_with(0, 3), 1.0, 7), Err(WindowError::EmptyClass(0))));
        assert!(oversample_minority(&set_with(3, 3), 0.0, 7).is_err());
    }

    #[test]
    fn oversampling_majority_fog() {
        let out = oversample_minority(&set_with(5, 40), 1.0, 1).unwrap();
        assert_eq!(out.class_counts(), [40, 40]);
    }

    #[test]
    fn oversampling_is_deterministic_and_duplicates_only() {
        let input = set_with(100, 20);
        let a = oversample_minority(&input, 1.0, 99).unwrap();
        assert_eq!(a, oversample_minority(&input, 1.0, 99).unwrap());
        assert_eq!(&a.windows()[..input.len()], input.windows());
        for w in &a.windows()[input.len()..] {
            assert!(input.windows().contains(w));
            assert_eq!(w.label, 1);
        }
    }

    #[test]
    fn stats_degenerate_axis() {
        let set: WindowSet = (0..4)
            .map(|i| Window { values: vec![i as f64, 5.0, -(i as f64)], label: 0, origin: Origin::default() })
            .collect();
        assert!(matches!(fit_stats(&set), Err(WindowError::DegenerateAxis(1))));
        assert!(matches!(fit_stats(&WindowSet::default()), Err(WindowError::EmptySet)));
    }

    #[test]
    fn stats_standardize() {
        let set: WindowSet = (0..20)
            .map(|i| {
                let f = i as f64;
                Window {
                    values: vec![f, f * f, 3.0 - f, f.sin(), 1e3 + f, -2.0 * f],
                    label: (i % 2) as u8,
                    origin: Origin::default(),
                }
            })
            .collect();
        let stats = fit_stats(&set).unwrap();
        let z = apply_stats(&set, &stats);
        let after = fit_stats(&z).unwrap();
        for axis in 0..3 {
            assert!(after.mean[axis].abs() < 1e-9, "{:?}", after.mean);
            assert!((after.std[axis] - 1.0).abs() < 1e-9, "{:?}", after.std);
        }
        assert_eq!(apply_stats(&set, &NormStats::IDENTITY), set);
    }

    #[test]
    fn split_is_stratified() {
        let set = set_with(80, 20);
        let s = split(&set, SplitFractions::new(0.6, 0.2, 0.2).unwrap(), 5).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (60, 20, 20));
        assert_eq!(s.train.class_counts(), [48, 12]);
        assert_eq!(s.val.class_counts(), [16, 4]);
        assert_eq!(s.test.class_counts(), [16, 4]);
        assert_eq!(s, split(&set, SplitFractions::new(0.6, 0.2, 0.2).unwrap(), 5).unwrap());
        assert_ne!(s, split(&set, SplitFractions::new(0.6, 0.2, 0.2).unwrap(), 6).unwrap());

        let mut seen: Vec<u32> =
            [&s.train, &s.val, &s.test].iter().flat_map(|p| p.windows().iter().map(|w| w.origin.start)).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn split_rejects_bad_fractions() {
        assert!(SplitFractions::new(1.0, 0.0, 0.0).is_err());
        assert!(SplitFractions::new(0.5, 0.3, 0.3).is_err());
        let bad = SplitFractions { train: 1.0, val: 0.0, test: 0.0 };
        assert!(matches!(split(&set_with(4, 4), bad, 0), Err(WindowError::InvalidFractions(_))));
        assert!("0.7,0.15,0.15".parse::<SplitFractions>().is_ok());
        assert!("0.7,0.3".parse::<SplitFractions>().is_err());
    }

    #[test]
    fn split_then_oversample_does_not_leak() {
        let set = set_with(90, 30);
        let s = split(&set, SplitFractions::default(), 11).unwrap();
        let train = oversample_minority(&s.train, 1.0, 11).unwrap();
        let held: Vec<Origin> = s.val.windows().iter().chain(s.test.windows()).map(|w| w.origin).collect();
        assert!(train.windows().iter().all(|w| !held.contains(&w.origin)));
    }

    #[test]
    fn numeric_ids() {
        assert_eq!(numeric_id("S07"), 7);
        assert_eq!(numeric_id("R12"), 12);
        assert_eq!(numeric_id("abc"), numeric_id("abc"));
        assert_ne!(numeric_id("abc"), numeric_id("abd"));
    }

    #[test]
    fn windows_file_errors() {
        assert!(matches!(decode_windows(b"FOGX\x01\0\0\0\0\0\0\0"), Err(WindowError::BadMagic)));
        assert!(matches!(decode_windows(b"FOGW\x02\0\0\0\0\0\0\0"), Err(WindowError::BadVersion(2))));
        let mut bytes = encode_windows(&[window(1, 3)]);
        bytes.pop();
        assert!(matches!(decode_windows(&bytes), Err(WindowError::Corrupt)));
        assert_eq!(decode_windows(&encode_windows(&[])).unwrap(), Vec::<Window>::new());
    }

    #[test]
    fn splits_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("windows.bin");
        let s = split(&set_with(30, 10), SplitFractions::default(), 2).unwrap();
        let manifest = SplitManifest {
            train: [0, 0],
            val: [0, 0],
            test: [0, 0],
            window: 2,
            hop: 1,
            ratio: 1.0,
            seed: 2,
            fractions: SplitFractions::default(),
        };
        write_splits(&path, &s, manifest).unwrap();
        let (back, m) = read_splits(&path).unwrap();
        assert_eq!(back, s);
        assert_eq!(m.unwrap().test[1], 40);
    }

    proptest! {
        #[test]
        fn windows_match_source_samples(n in 0usize..600, len in 1usize..80, hop_frac in 0.01f64..1.0) {
            let hop = ((len as f64 * hop_frac).ceil() as usize).clamp(1, len);
            let ann: Vec<u8> = (0..n).map(|i| 1 + ((i * 7 / 5) % 2) as u8).collect();
            let s = series(&ann);
            let w = segment(&s, len, hop).unwrap();
            prop_assert_eq!(w.len(), window_count(n, len, hop));
            for win in &w {
                let start = win.origin.start as usize;
                prop_assert_eq!(start % hop, 0);
                prop_assert!(start + len <= n);
                let expect: Vec<f64> = s.samples[start..start + len].iter().flat_map(|x| x.accel.map(f64::from)).collect();
                prop_assert_eq!(&win.values, &expect);
            }
            if hop == len {
                let joined: Vec<f64> = w.iter().flat_map(|x| x.values.iter().copied()).collect();
                let prefix: Vec<f64> = s.samples.iter().flat_map(|x| x.accel.map(f64::from)).take(joined.len()).collect();
                prop_assert_eq!(joined, prefix);
            }
        }

        #[test]
        fn windows_file_round_trips(labels in prop::collection::vec(0u8..2, 0..20), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let windows: Vec<Window> = labels.iter().map(|&label| Window {
                values: (0..WINDOW_VALUES).map(|_| rng.random_range(-4000i32..4000) as f64).collect(),
                label,
                origin: Origin { subject: rng.random(), trial: rng.random(), segment: rng.random(), start: rng.random() },
            }).collect();
            let bytes = encode_windows(&windows);
            prop_assert_eq!(bytes.len(), 12 + windows.len() * (20 + 4 * WINDOW_VALUES));
            prop_assert_eq!(decode_windows(&bytes).unwrap(), windows);
        }
    }
}
