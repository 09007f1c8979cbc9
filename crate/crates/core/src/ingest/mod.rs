//! Loading, normalization, sliding-window segmentation and Start/Mid/End
//! partitioning of multi-channel sensor series.

pub mod synth;

use std::fmt;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

pub use synth::synth_dataset;

/// Zero-variance guard used by [`apply_zscore`].
pub const ZSCORE_EPSILON: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum IngestError {
    #[error("column `{0}` missing from header")]
    MissingColumn(String),
    #[error("non-numeric value in column `{column}` at data row {row}")]
    NonNumericValue { row: usize, column: String },
    #[error("dataset file contains no data rows")]
    EmptyFile,
    #[error("csv error: {0}")]
    Csv(String),
    #[error("need at least 2 samples per channel to fit normalization, got {0}")]
    InsufficientData(usize),
    #[error("expected {expected} channels, got {actual}")]
    ChannelCountMismatch { expected: usize, actual: usize },
    #[error("series of length {len} is shorter than window length {window_len}")]
    SeriesTooShort { len: usize, window_len: usize },
    #[error("window length {0} is too short to partition (need >= 4)")]
    WindowTooShort(usize),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
}

/// Column layout and windowing parameters of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSchema {
    pub channel_columns: Vec<String>,
    pub label_column: String,
    pub subject_column: String,
    pub sampling_rate_hz: f64,
    pub window_len: usize,
    pub step: usize,
}

impl DatasetSchema {
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.channel_columns.is_empty() {
            return Err(IngestError::InvalidSchema("no channel columns".into()));
        }
        if !(self.sampling_rate_hz > 0.0 && self.sampling_rate_hz.is_finite()) {
            return Err(IngestError::InvalidSchema(
                "sampling_rate_hz must be positive".into(),
            ));
        }
        if self.window_len < 4 {
            return Err(IngestError::WindowTooShort(self.window_len));
        }
        if self.step == 0 || self.step > self.window_len {
            return Err(IngestError::InvalidSchema(format!(
                "step must be in 1..={}, got {}",
                self.window_len, self.step
            )));
        }
        Ok(())
    }

    pub fn channel_count(&self) -> usize {
        self.channel_columns.len()
    }
}

/// A contiguous run of rows sharing one subject and one label.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSeries<T> {
    pub subject_id: String,
    pub label: Option<String>,
    /// Channel-major samples; every channel has the same length.
    pub channels: Vec<Vec<T>>,
}

impl<T: Scalar> ChannelSeries<T> {
    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SourceRole {
    Indexing,
    Validation,
    Test,
}

/// One fixed-length multi-channel segment: the unit of classification.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorWindow<T> {
    pub segment_id: u64,
    pub subject_id: String,
    pub label: Option<String>,
    /// Channel-major, `m x L`.
    pub samples: Vec<Vec<T>>,
    pub role: SourceRole,
}

impl<T: Scalar> SensorWindow<T> {
    pub fn len(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel_count(&self) -> usize {
        self.samples.len()
    }

    /// Returns a copy with every channel z-scored by `stats`.
    pub fn normalized(&self, stats: &NormalizationStats<T>) -> Result<Self, IngestError> {
        Ok(Self {
            samples: apply_zscore(&self.samples, stats)?,
            ..self.clone()
        })
    }
}

/// Sub-segment identifier. `Full` is the whole window (k = 0), the other three
/// are its consecutive thirds (k = 1..3).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scope {
    Full,
    Start,
    Mid,
    End,
}

impl Scope {
    pub const ALL: [Scope; 4] = [Scope::Full, Scope::Start, Scope::Mid, Scope::End];

    pub fn index(self) -> usize {
        match self {
            Scope::Full => 0,
            Scope::Start => 1,
            Scope::Mid => 2,
            Scope::End => 3,
        }
    }

    pub fn from_index(k: usize) -> Option<Scope> {
        Scope::ALL.get(k).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Scope::Full => "Full",
            Scope::Start => "Start",
            Scope::Mid => "Mid",
            Scope::End => "End",
        }
    }

    pub fn from_name(name: &str) -> Option<Scope> {
        Scope::ALL.into_iter().find(|s| s.name() == name)
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A window together with the sample ranges of its four scopes.
#[derive(Debug, Clone)]
pub struct PartitionedWindow<'a, T> {
    pub window: &'a SensorWindow<T>,
    pub ranges: [Range<usize>; 4],
}

impl<'a, T: Scalar> PartitionedWindow<'a, T> {
    pub fn range(&self, scope: Scope) -> Range<usize> {
        self.ranges[scope.index()].clone()
    }

    pub fn slice(&self, scope: Scope, channel: usize) -> &'a [T] {
        &self.window.samples[channel][self.range(scope)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormalizationSource {
    IndexingSplit,
}

/// Per-channel mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
    pub computed_over: NormalizationSource,
}

impl<T: Scalar> NormalizationStats<T> {
    pub fn channel_count(&self) -> usize {
        self.mean.len()
    }
}

/// Reads a CSV file into contiguous (subject, label) runs, preserving row order.
///
/// Row numbers in errors are 0-based indices of data rows (the header is not
/// counted). Cells that do not parse as finite decimals are rejected.
pub fn load_dataset<T: Scalar>(
    path: impl AsRef<Path>,
    schema: &DatasetSchema,
) -> Result<Vec<ChannelSeries<T>>, IngestError> {
    let file = std::fs::File::open(path.as_ref()).map_err(|e| IngestError::Csv(e.to_string()))?;
    read_dataset(file, schema)
}

/// Same as [`load_dataset`] over any reader.
pub fn read_dataset<T: Scalar, R: std::io::Read>(
    reader: R,
    schema: &DatasetSchema,
) -> Result<Vec<ChannelSeries<T>>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = match rdr.headers() {
        Ok(h) => h.clone(),
        Err(e) => return Err(IngestError::Csv(e.to_string())),
    };
    if headers.is_empty() {
        return Err(IngestError::EmptyFile);
    }
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
    };
    let channel_idx = schema
        .channel_columns
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>, _>>()?;
    let label_idx = find(&schema.label_column)?;
    let subject_idx = find(&schema.subject_column)?;

    let mut out: Vec<ChannelSeries<T>> = Vec::new();
    let mut rows = 0usize;
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| IngestError::Csv(e.to_string()))?;
        rows += 1;
        let subject = record.get(subject_idx).unwrap_or_default();
        let label = record.get(label_idx).unwrap_or_default();
        let label = (!label.is_empty()).then(|| label.to_string());

        let same_run = out
            .last()
            .is_some_and(|s| s.subject_id == subject && s.label == label);
        if !same_run {
            out.push(ChannelSeries {
                subject_id: subject.to_string(),
                label: label.clone(),
                channels: vec![Vec::new(); channel_idx.len()],
            });
        }
        let series = out.last_mut().expect("run pushed above");
        for (c, &col) in channel_idx.iter().enumerate() {
            let cell = record.get(col).unwrap_or_default();
            let value = cell
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| IngestError::NonNumericValue {
                    row,
                    column: schema.channel_columns[c].clone(),
                })?;
            series.channels[c].push(T::from_f64_lossy(value));
        }
    }
    if rows == 0 {
        return Err(IngestError::EmptyFile);
    }
    Ok(out)
}

/// Fits per-channel mean and population std over channel-major blocks
/// (series or windows of the indexing split).
pub fn fit_normalization<'a, T, I>(blocks: I) -> Result<NormalizationStats<T>, IngestError>
where
    T: Scalar,
    I: IntoIterator<Item = &'a [Vec<T>]>,
{
    // Welford accumulators, one per channel.
    let mut acc: Vec<(usize, f64, f64)> = Vec::new();
    for block in blocks {
        if acc.is_empty() {
            acc = vec![(0, 0.0, 0.0); block.len()];
        } else if acc.len() != block.len() {
            return Err(IngestError::ChannelCountMismatch {
                expected: acc.len(),
                actual: block.len(),
            });
        }
        for (state, channel) in acc.iter_mut().zip(block) {
            for &x in channel {
                let x = x.to_f64_lossy();
                let (n, mean, m2) = state;
                *n += 1;
                let delta = x - *mean;
                *mean += delta / *n as f64;
                *m2 += delta * (x - *mean);
            }
        }
    }
    let min_count = acc.iter().map(|a| a.0).min().unwrap_or(0);
    if acc.is_empty() || min_count < 2 {
        return Err(IngestError::InsufficientData(min_count));
    }
    Ok(NormalizationStats {
        mean: acc.iter().map(|a| T::from_f64_lossy(a.1)).collect(),
        std: acc
            .iter()
            .map(|a| T::from_f64_lossy((a.2 / a.0 as f64).max(0.0).sqrt()))
            .collect(),
        computed_over: NormalizationSource::IndexingSplit,
    })
}

/// `(x - mean_c) / max(std_c, 1e-8)` per channel.
pub fn apply_zscore<T: Scalar>(
    channels: &[Vec<T>],
    stats: &NormalizationStats<T>,
) -> Result<Vec<Vec<T>>, IngestError> {
    if channels.len() != stats.channel_count() {
        return Err(IngestError::ChannelCountMismatch {
            expected: stats.channel_count(),
            actual: channels.len(),
        });
    }
    let eps = T::from_f64_lossy(ZSCORE_EPSILON);
    Ok(channels
        .iter()
        .zip(stats.mean.iter().zip(&stats.std))
        .map(|(channel, (&mean, &std))| {
            let denom = std.max(eps);
            channel.iter().map(|&x| (x - mean) / denom).collect()
        })
        .collect())
}

/// Monotonic segment id allocator.
#[derive(Debug, Clone, Default)]
pub struct SegmentIds {
    next: u64,
}

impl SegmentIds {
    pub fn starting_at(next: u64) -> Self {
        Self { next }
    }

    pub fn next_id(&mut self) -> u64 {
        let id = self.next;
        self.next += 1;
        id
    }
}

/// Cuts one run into windows at offsets `0, step, 2*step, ...`; the trailing
/// partial window is dropped.
pub fn slide_windows<T: Scalar>(
    series: &ChannelSeries<T>,
    window_len: usize,
    step: usize,
    role: SourceRole,
    ids: &mut SegmentIds,
) -> Result<Vec<SensorWindow<T>>, IngestError> {
    if window_len == 0 || step == 0 {
        return Err(IngestError::InvalidSchema(
            "window length and step must be positive".into(),
        ));
    }
    let len = series.len();
    if len < window_len {
        return Err(IngestError::SeriesTooShort { len, window_len });
    }
    let count = (len - window_len) / step + 1;
    Ok((0..count)
        .map(|w| {
            let start = w * step;
            SensorWindow {
                segment_id: ids.next_id(),
                subject_id: series.subject_id.clone(),
                label: series.label.clone(),
                samples: series
                    .channels
                    .iter()
                    .map(|c| c[start..start + window_len].to_vec())
                    .collect(),
                role,
            }
        })
        .collect())
}

/// Windows every run of a dataset, skipping runs shorter than one window.
pub fn segment_dataset<T: Scalar>(
    series: &[ChannelSeries<T>],
    schema: &DatasetSchema,
    role: SourceRole,
    ids: &mut SegmentIds,
) -> Result<Vec<SensorWindow<T>>, IngestError> {
    let mut windows = Vec::new();
    for run in series {
        if run.len() < schema.window_len {
            tracing::debug!(
                subject = %run.subject_id,
                len = run.len(),
                "run shorter than one window, skipped"
            );
            continue;
        }
        windows.extend(slide_windows(run, schema.window_len, schema.step, role, ids)?);
    }
    Ok(windows)
}

/// Splits `[0, len)` at `floor(len/3)` and `floor(2*len/3)`.
pub fn partition_bounds(len: usize) -> Result<[Range<usize>; 4], IngestError> {
    if len < 4 {
        return Err(IngestError::WindowTooShort(len));
    }
    let a = len / 3;
    let b = 2 * len / 3;
    Ok([0..len, 0..a, a..b, b..len])
}

pub fn partition_window<T: Scalar>(
    window: &SensorWindow<T>,
) -> Result<PartitionedWindow<'_, T>, IngestError> {
    Ok(PartitionedWindow {
        window,
        ranges: partition_bounds(window.len())?,
    })
}

/// Seeded per-label split: `round(n * fraction)` windows of each label (in
/// shuffled order) go to the second half. Both halves keep input order.
/// Unlabeled windows always stay in the first half.
pub fn stratified_split<T: Scalar>(
    windows: Vec<SensorWindow<T>>,
    fraction: f64,
    seed: u64,
) -> (Vec<SensorWindow<T>>, Vec<SensorWindow<T>>) {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use std::collections::{BTreeMap, BTreeSet};

    let mut by_label: BTreeMap<&str, Vec<u64>> = BTreeMap::new();
    for w in &windows {
        if let Some(l) = w.label.as_deref() {
            by_label.entry(l).or_default().push(w.segment_id);
        }
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut picked = BTreeSet::new();
    for ids in by_label.values_mut() {
        ids.shuffle(&mut rng);
        let n = (ids.len() as f64 * fraction).round() as usize;
        picked.extend(ids[..n.min(ids.len())].iter().copied());
    }
    windows
        .into_iter()
        .partition(|w| !(w.label.is_some() && picked.contains(&w.segment_id)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> DatasetSchema {
        DatasetSchema {
            channel_columns: vec!["ax".into(), "ay".into(), "az".into()],
            label_column: "label".into(),
            subject_column: "subject".into(),
            sampling_rate_hz: 50.0,
            window_len: 4,
            step: 2,
        }
    }

    fn csv_rows(rows: usize, bad_row: Option<usize>) -> String {
        let mut s = String::from("ax,ay,az,label,subject\n");
        for r in 0..rows {
            let ax = if Some(r) == bad_row {
                "NaN".to_string()
            } else {
                format!("{}", r as f64 * 0.5)
            };
            s.push_str(&format!("{ax},{},{},walk,s1\n", r, -(r as i64)));
        }
        s
    }

    #[test]
    fn loads_single_subject() {
        let series: Vec<ChannelSeries<f64>> =
            read_dataset(csv_rows(10, None).as_bytes(), &schema()).unwrap();
        assert_eq!(series.len(), 1);
        assert_eq!(series[0].subject_id, "s1");
        assert_eq!(series[0].len(), 10);
        assert_eq!(series[0].channels[0][3], 1.5);
        assert_eq!(series[0].channels[2][9], -9.0);
    }

    #[test]
    fn missing_label_column() {
        let data = "ax,ay,az,subject\n1,2,3,s1\n";
        let err = read_dataset::<f64, _>(data.as_bytes(), &schema()).unwrap_err();
        assert_eq!(err, IngestError::MissingColumn("label".into()));
    }

    #[test]
    fn nan_cell_reports_row() {
        let err = read_dataset::<f64, _>(csv_rows(10, Some(7)).as_bytes(), &schema()).unwrap_err();
        assert_eq!(
            err,
            IngestError::NonNumericValue {
                row: 7,
                column: "ax".into()
            }
        );
    }

    #[test]
    fn text_cell_rejected() {
        let data = "ax,ay,az,label,subject\n1,2,3,walk,s1\n1,x,3,walk,s1\n";
        let err = read_dataset::<f64, _>(data.as_bytes(), &schema()).unwrap_err();
        assert!(matches!(err, IngestError::NonNumericValue { row: 1, .. }));
    }

    #[test]
    fn empty_file() {
        let err = read_dataset::<f64, _>("ax,ay,az,label,subject\n".as_bytes(), &schema());
        assert_eq!(err.unwrap_err(), IngestError::EmptyFile);
        let err = read_dataset::<f64, _>("".as_bytes(), &schema());
        assert_eq!(err.unwrap_err(), IngestError::EmptyFile);
    }

    #[test]
    fn runs_split_on_label_or_subject_change() {
        let data = "ax,ay,az,label,subject\n\
                    1,1,1,walk,s1\n2,2,2,walk,s1\n3,3,3,run,s1\n4,4,4,run,s2\n5,5,5,walk,s1\n";
        let series: Vec<ChannelSeries<f64>> = read_dataset(data.as_bytes(), &schema()).unwrap();
        let summary: Vec<_> = series
            .iter()
            .map(|s| (s.subject_id.as_str(), s.label.as_deref(), s.len()))
            .collect();
        assert_eq!(
            summary,
            vec![
                ("s1", Some("walk"), 2),
                ("s1", Some("run"), 1),
                ("s2", Some("run"), 1),
                ("s1", Some("walk"), 1),
            ]
        );
    }

    #[test]
    fn fit_population_std() {
        let block = vec![vec![1.0_f64, 2.0, 3.0]];
        let stats = fit_normalization([block.as_slice()]).unwrap();
        assert!((stats.mean[0] - 2.0).abs() < 1e-12);
        assert!((stats.std[0] - (2.0_f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((stats.std[0] - 0.8165).abs() < 1e-4);
    }

    #[test]
    fn fit_constant_and_two_channels() {
        let c = vec![vec![5.0_f64, 5.0, 5.0]];
        let stats = fit_normalization([c.as_slice()]).unwrap();
        assert_eq!(stats.mean[0], 5.0);
        assert_eq!(stats.std[0], 0.0);

        let two = vec![vec![0.0_f64, 0.0], vec![1.0, 3.0]];
        let stats = fit_normalization([two.as_slice()]).unwrap();
        assert_eq!(stats.mean, vec![0.0, 2.0]);
        assert_eq!(stats.std, vec![0.0, 1.0]);
    }

    #[test]
    fn fit_needs_two_samples() {
        let one = vec![vec![1.0_f64]];
        assert_eq!(
            fit_normalization([one.as_slice()]).unwrap_err(),
            IngestError::InsufficientData(1)
        );
        assert!(fit_normalization::<f64, _>(std::iter::empty()).is_err());
    }

    #[test]
    fn fit_across_blocks_matches_concatenation() {
        let a = vec![vec![1.0_f64, 2.0]];
        let b = vec![vec![3.0_f64]];
        let stats = fit_normalization([a.as_slice(), b.as_slice()]).unwrap();
        assert!((stats.mean[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zscore_examples() {
        let unit = NormalizationStats {
            mean: vec![2.0_f64],
            std: vec![1.0],
            computed_over: NormalizationSource::IndexingSplit,
        };
        assert_eq!(apply_zscore(&[vec![1.0, 2.0, 3.0]], &unit).unwrap(), vec![vec![-1.0, 0.0, 1.0]]);

        let constant = vec![vec![5.0_f64, 5.0, 5.0]];
        let stats = fit_normalization([constant.as_slice()]).unwrap();
        assert_eq!(apply_zscore(&constant, &stats).unwrap(), vec![vec![0.0; 3]]);

        let x = vec![vec![1.0_f64, 2.0, 3.0]];
        let stats = fit_normalization([x.as_slice()]).unwrap();
        let z = apply_zscore(&x, &stats).unwrap();
        assert!((z[0][0] + 1.2247).abs() < 1e-4);
        assert!(z[0][1].abs() < 1e-12);
        assert!((z[0][2] - 1.2247).abs() < 1e-4);
    }

    #[test]
    fn zscore_channel_mismatch() {
        let stats = NormalizationStats {
            mean: vec![0.0_f64, 0.0],
            std: vec![1.0, 1.0],
            computed_over: NormalizationSource::IndexingSplit,
        };
        assert_eq!(
            apply_zscore(&[vec![1.0]], &stats).unwrap_err(),
            IngestError::ChannelCountMismatch {
                expected: 2,
                actual: 1
            }
        );
    }

    fn ramp(len: usize) -> ChannelSeries<f64> {
        ChannelSeries {
            subject_id: "s1".into(),
            label: Some("walk".into()),
            channels: vec![(0..len).map(|t| t as f64).collect()],
        }
    }

    #[test]
    fn window_counts() {
        let mut ids = SegmentIds::default();
        let w = slide_windows(&ramp(10), 4, 2, SourceRole::Indexing, &mut ids).unwrap();
        assert_eq!(w.len(), 4);
        let offsets: Vec<f64> = w.iter().map(|w| w.samples[0][0]).collect();
        assert_eq!(offsets, vec![0.0, 2.0, 4.0, 6.0]);
        assert_eq!(w.iter().map(|w| w.segment_id).collect::<Vec<_>>(), vec![0, 1, 2, 3]);

        let w = slide_windows(&ramp(4), 4, 2, SourceRole::Indexing, &mut ids).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].segment_id, 4);

        assert_eq!(
            slide_windows(&ramp(3), 4, 2, SourceRole::Indexing, &mut ids).unwrap_err(),
            IngestError::SeriesTooShort {
                len: 3,
                window_len: 4
            }
        );
    }

    #[test]
    fn stride_equal_to_length_reconstructs_prefix() {
        let series = ramp(23);
        let mut ids = SegmentIds::default();
        let w = slide_windows(&series, 5, 5, SourceRole::Test, &mut ids).unwrap();
        let joined: Vec<f64> = w.iter().flat_map(|w| w.samples[0].clone()).collect();
        assert_eq!(joined, series.channels[0][..20].to_vec());
    }

    #[test]
    fn partition_examples() {
        assert_eq!(partition_bounds(9).unwrap(), [0..9, 0..3, 3..6, 6..9]);
        assert_eq!(partition_bounds(10).unwrap(), [0..10, 0..3, 3..6, 6..10]);
        assert_eq!(partition_bounds(200).unwrap(), [0..200, 0..66, 66..133, 133..200]);
        assert_eq!(partition_bounds(3).unwrap_err(), IngestError::WindowTooShort(3));
    }

    #[test]
    fn partition_tiles_window() {
        for len in 4..1000 {
            let [full, s, m, e] = partition_bounds(len).unwrap();
            assert_eq!(full, 0..len);
            assert_eq!(s.start, 0);
            assert_eq!(s.end, m.start);
            assert_eq!(m.end, e.start);
            assert_eq!(e.end, len);
            assert!(!s.is_empty() && !m.is_empty() && !e.is_empty());
            assert!(s.len().abs_diff(m.len()) <= 1 && m.len().abs_diff(e.len()) <= 1);
        }
    }

    #[test]
    fn schema_validation() {
        let mut s = schema();
        assert!(s.validate().is_ok());
        s.step = 5;
        assert!(s.validate().is_err());
        s.step = 2;
        s.window_len = 3;
        assert_eq!(s.validate().unwrap_err(), IngestError::WindowTooShort(3));
    }
}
