//! Daphnet-style acceleration logs: parsing, sensor projection and removal of
//! out-of-experiment data.
//!
//! A raw log line carries eleven integer columns: time in milliseconds, three
//! tri-axial accelerometers (ankle, thigh, trunk; milli-g) and an annotation
//! where 0 means "not part of the experiment", 1 "no freeze" and 2 "freeze".
//! Cleaning keeps one sensor and splits the log into maximal runs of
//! annotated samples so that no later window straddles removed data.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of columns in a raw log line.
pub const RAW_COLUMNS: usize = 11;

/// Header of the cleaned per-segment CSV files.
pub const CLEAN_CSV_HEADER: &str = "time_ms,x,y,z,annotation";

pub type Vec3 = [i32; 3];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {0}: malformed record")]
    MalformedLine(usize),
    #[error("line {0}: time does not increase")]
    NonMonotonicTime(usize),
    #[error("unrecognised clean-series file name {0:?}")]
    BadFileName(String),
    #[error("invalid exclusion list: {0}")]
    BadExclusions(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    /// Whitespace separated, as distributed with the dataset.
    DaphnetText,
    /// Comma separated, same column order.
    Csv,
}

impl Format {
    /// `.csv` files are comma separated, everything else is treated as text.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::DaphnetText,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Ankle,
    #[default]
    Thigh,
    Trunk,
}

impl std::str::FromStr for Channel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ankle" => Ok(Channel::Ankle),
            "thigh" => Ok(Channel::Thigh),
            "trunk" => Ok(Channel::Trunk),
            other => Err(format!("unknown channel {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawRecord {
    pub time_ms: i64,
    pub ankle: Vec3,
    pub thigh: Vec3,
    pub trunk: Vec3,
    pub annotation: u8,
}

impl RawRecord {
    pub fn channel(&self, channel: Channel) -> Vec3 {
        match channel {
            Channel::Ankle => self.ankle,
            Channel::Thigh => self.thigh,
            Channel::Trunk => self.trunk,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Recording {
    pub subject_id: String,
    pub trial_id: String,
    pub records: Vec<RawRecord>,
}

/// One timestamped sample of a single sensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sample {
    pub time_ms: i64,
    pub accel: Vec3,
    pub annotation: u8,
}

/// A recording projected onto one sensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelRecording {
    pub subject_id: String,
    pub trial_id: String,
    pub channel: Channel,
    pub samples: Vec<Sample>,
}

impl ChannelRecording {
    /// Projecting onto the channel already held is the identity; any other
    /// channel has been dropped and yields `None`.
    pub fn select_channel(&self, channel: Channel) -> Option<ChannelRecording> {
        (channel == self.channel).then(|| self.clone())
    }
}

/// A maximal contiguous run of annotated (1 or 2) samples from one sensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleanSeries {
    pub subject_id: String,
    pub trial_id: String,
    pub segment_index: u32,
    pub samples: Vec<Sample>,
}

impl CleanSeries {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `<subject>_<trial>_<segment>.csv`
    pub fn file_name(&self) -> String {
        format!("{}_{}_{}.csv", self.subject_id, self.trial_id, self.segment_index)
    }
}

/// Manual time-range trims, applied on top of annotation-0 removal.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Exclusions {
    pub ranges: Vec<ExcludedRange>,
}

/// Records of `subject`/`trial` with `start_ms <= time_ms < end_ms` are dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedRange {
    pub subject: String,
    pub trial: String,
    pub start_ms: i64,
    pub end_ms: i64,
}

impl Exclusions {
    pub fn from_json(text: &str) -> Result<Self, IngestError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, IngestError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn excludes(&self, subject: &str, trial: &str, time_ms: i64) -> bool {
        self.ranges
            .iter()
            .any(|r| r.subject == subject && r.trial == trial && r.start_ms <= time_ms && time_ms < r.end_ms)
    }
}

/// Splits a Daphnet file stem such as `S01R02` into `("S01", "R02")`.
/// Other stems become the subject with trial `R01`.
pub fn ids_from_stem(stem: &str) -> (String, String) {
    if let Some(pos) = stem.rfind(['R', 'r']) {
        let (subject, trial) = stem.split_at(pos);
        let digits = |s: &str| s.len() > 1 && s[1..].chars().all(|c| c.is_ascii_digit());
        if digits(trial) && !subject.is_empty() {
            return (subject.to_string(), trial.to_string());
        }
    }
    (stem.to_string(), "R01".to_string())
}

pub fn parse_file(path: &Path, format: Format) -> Result<Recording, IngestError> {
    let text = fs::read_to_string(path)?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("unknown");
    let (subject, trial) = ids_from_stem(stem);
    parse_str(&text, format, subject, trial)
}

pub fn parse_str(
    text: &str,
    format: Format,
    subject_id: impl Into<String>,
    trial_id: impl Into<String>,
) -> Result<Recording, IngestError> {
    let mut records: Vec<RawRecord> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let record = parse_line(line, format).ok_or(IngestError::MalformedLine(line_no))?;
        if let Some(prev) = records.last() {
            if record.time_ms <= prev.time_ms {
                return Err(IngestError::NonMonotonicTime(line_no));
            }
        }
        records.push(record);
    }
    Ok(Recording { subject_id: subject_id.into(), trial_id: trial_id.into(), records })
}

fn parse_line(line: &str, format: Format) -> Option<RawRecord> {
    let mut fields = [0i64; RAW_COLUMNS];
    let mut n = 0;
    let tokens: Box<dyn Iterator<Item = &str>> = match format {
        Format::DaphnetText => Box::new(line.split_whitespace()),
        Format::Csv => Box::new(line.split(',').map(str::trim)),
    };
    for token in tokens {
        if n == RAW_COLUMNS {
            return None;
        }
        fields[n] = token.parse().ok()?;
        n += 1;
    }
    if n != RAW_COLUMNS {
        return None;
    }
    let annotation = u8::try_from(fields[10]).ok().filter(|a| *a <= 2)?;
    let vec3 = |i: usize| -> Option<Vec3> {
        Some([i32::try_from(fields[i]).ok()?, i32::try_from(fields[i + 1]).ok()?, i32::try_from(fields[i + 2]).ok()?])
    };
    Some(RawRecord { time_ms: fields[0], ankle: vec3(1)?, thigh: vec3(4)?, trunk: vec3(7)?, annotation })
}

/// Writes a recording as headerless 11-column CSV, readable by [`parse_str`]
/// with [`Format::Csv`].
pub fn recording_to_csv(rec: &Recording) -> String {
    let mut out = String::with_capacity(rec.records.len() * 48);
    for r in &rec.records {
        let [a0, a1, a2] = r.ankle;
        let [h0, h1, h2] = r.thigh;
        let [t0, t1, t2] = r.trunk;
        let _ = writeln!(out, "{},{a0},{a1},{a2},{h0},{h1},{h2},{t0},{t1},{t2},{}", r.time_ms, r.annotation);
    }
    out
}

pub fn select_channel(rec: &Recording, channel: Channel) -> ChannelRecording {
    ChannelRecording {
        subject_id: rec.subject_id.clone(),
        trial_id: rec.trial_id.clone(),
        channel,
        samples: rec
            .records
            .iter()
            .map(|r| Sample { time_ms: r.time_ms, accel: r.channel(channel), annotation: r.annotation })
            .collect(),
    }
}

/// Thigh-only cleaning with no manual trims.
pub fn clean(rec: &Recording) -> Vec<CleanSeries> {
    clean_channel(&select_channel(rec, Channel::Thigh), &Exclusions::default())
}

pub fn clean_channel(rec: &ChannelRecording, exclusions: &Exclusions) -> Vec<CleanSeries> {
    let mut out = Vec::new();
    let mut current: Vec<Sample> = Vec::new();
    for s in &rec.samples {
        let keep = s.annotation != 0 && !exclusions.excludes(&rec.subject_id, &rec.trial_id, s.time_ms);
        if keep {
            current.push(*s);
        } else if !current.is_empty() {
            out.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out.into_iter()
        .enumerate()
        .map(|(i, samples)| CleanSeries {
            subject_id: rec.subject_id.clone(),
            trial_id: rec.trial_id.clone(),
            segment_index: i as u32,
            samples,
        })
        .collect()
}

pub fn clean_series_to_csv(series: &CleanSeries) -> String {
    let mut out = String::with_capacity(16 + series.len() * 32);
    out.push_str(CLEAN_CSV_HEADER);
    out.push('\n');
    for s in &series.samples {
        let [x, y, z] = s.accel;
        let _ = writeln!(out, "{},{x},{y},{z},{}", s.time_ms, s.annotation);
    }
    out
}

pub fn clean_series_from_csv(
    text: &str,
    subject_id: impl Into<String>,
    trial_id: impl Into<String>,
    segment_index: u32,
) -> Result<CleanSeries, IngestError> {
    let mut samples: Vec<Sample> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() || (idx == 0 && line == CLEAN_CSV_HEADER) {
            continue;
        }
        let mut fields = [0i64; 5];
        let mut n = 0;
        for token in line.split(',') {
            if n == fields.len() {
                return Err(IngestError::MalformedLine(line_no));
            }
            fields[n] = token.trim().parse().map_err(|_| IngestError::MalformedLine(line_no))?;
            n += 1;
        }
        if n != fields.len() || !matches!(fields[4], 1 | 2) {
            return Err(IngestError::MalformedLine(line_no));
        }
        let axis = |v: i64| i32::try_from(v).map_err(|_| IngestError::MalformedLine(line_no));
        let sample = Sample {
            time_ms: fields[0],
            accel: [axis(fields[1])?, axis(fields[2])?, axis(fields[3])?],
            annotation: fields[4] as u8,
        };
        if samples.last().is_some_and(|p| sample.time_ms <= p.time_ms) {
            return Err(IngestError::NonMonotonicTime(line_no));
        }
        samples.push(sample);
    }
    Ok(CleanSeries { subject_id: subject_id.into(), trial_id: trial_id.into(), segment_index, samples })
}

/// Parses `<subject>_<trial>_<segment>.csv`.
pub fn parse_clean_file_name(name: &str) -> Result<(String, String, u32), IngestError> {
    let bad = || IngestError::BadFileName(name.to_string());
    let stem = name.strip_suffix(".csv").ok_or_else(bad)?;
    let mut parts = stem.rsplitn(3, '_');
    let segment = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
    let trial = parts.next().filter(|s| !s.is_empty()).ok_or_else(bad)?;
    let subject = parts.next().filter(|s| !s.is_empty()).ok_or_else(bad)?;
    Ok((subject.to_string(), trial.to_string(), segment))
}

pub fn read_clean_file(path: &Path) -> Result<CleanSeries, IngestError> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let (subject, trial, segment) = parse_clean_file_name(name)?;
    clean_series_from_csv(&fs::read_to_string(path)?, subject, trial, segment)
}

/// Reads every cleaned series in `dir`, ordered by (subject, trial, segment).
pub fn read_clean_dir(dir: &Path) -> Result<Vec<CleanSeries>, IngestError> {
    let mut series = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "csv") {
            series.push(read_clean_file(&path)?);
        }
    }
    series.sort_by(|a, b| {
        (&a.subject_id, &a.trial_id, a.segment_index).cmp(&(&b.subject_id, &b.trial_id, b.segment_index))
    });
    Ok(series)
}

/// Summary of an `ingest` run over a directory.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestSummary {
    pub files: usize,
    pub records: usize,
    pub kept_samples: usize,
    pub series: usize,
}

/// Parses every `.txt`/`.csv` log in `input` (sorted by name) and cleans it.
pub fn ingest_series(
    input: &Path,
    channel: Channel,
    exclusions: &Exclusions,
) -> Result<(Vec<CleanSeries>, IngestSummary), IngestError> {
    let mut paths: Vec<_> = fs::read_dir(input)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
    paths.retain(|p| {
        p.is_file()
            && p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("txt") || e.eq_ignore_ascii_case("csv"))
    });
    paths.sort();

    let mut summary = IngestSummary::default();
    let mut all = Vec::new();
    for path in paths {
        let rec = parse_file(&path, Format::from_path(&path))?;
        let series = clean_channel(&select_channel(&rec, channel), exclusions);
        summary.files += 1;
        summary.records += rec.records.len();
        summary.kept_samples += series.iter().map(CleanSeries::len).sum::<usize>();
        summary.series += series.len();
        log::info!("{}: {} records, {} series", path.display(), rec.records.len(), series.len());
        all.extend(series);
    }
    Ok((all, summary))
}

/// [`ingest_series`], writing one CSV per series into `output`.
pub fn ingest_dir(
    input: &Path,
    output: &Path,
    channel: Channel,
    exclusions: &Exclusions,
) -> Result<IngestSummary, IngestError> {
    let (series, summary) = ingest_series(input, channel, exclusions)?;
    fs::create_dir_all(output)?;
    for s in &series {
        fs::write(output.join(s.file_name()), clean_series_to_csv(s))?;
    }
    Ok(summary)
}
