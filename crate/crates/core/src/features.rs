//! Eight per-channel statistics over each scope of a window, and the fixed
//! text template they are serialized to before embedding.
//!
//! Template, one block per scope:
//!
//! ```text
//! segment=Full
//! ax: mean=2.5, max=4, min=1, q1=1.75, q3=3.25, std=1.11803, median=2.5, n_peaks=0
//! ay: ...
//! ```
//!
//! Values are written with 6 significant digits in their shortest form.

use thiserror::Error;

use crate::ingest::{IngestError, PartitionedWindow, Scope};
use crate::scalar::Scalar;

/// Statistic names in vector order.
pub const STAT_NAMES: [&str; 8] = ["mean", "max", "min", "q1", "q3", "std", "median", "n_peaks"];

/// Statistics per channel.
pub const STATS_PER_CHANNEL: usize = STAT_NAMES.len();

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("cannot compute statistics of an empty sequence")]
    EmptyInput,
    #[error("feature vector length {actual} does not match {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("malformed feature text: {0}")]
    Malformed(String),
    #[error(transparent)]
    Partition(#[from] IngestError),
}

/// Statistics of one channel over one scope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatVector<T> {
    pub mean: T,
    pub max: T,
    pub min: T,
    pub q1: T,
    pub q3: T,
    pub std: T,
    pub median: T,
    pub n_peaks: usize,
}

impl<T: Scalar> StatVector<T> {
    /// Values in [`STAT_NAMES`] order, `n_peaks` converted to `T`.
    pub fn to_array(&self) -> [T; STATS_PER_CHANNEL] {
        [
            self.mean,
            self.max,
            self.min,
            self.q1,
            self.q3,
            self.std,
            self.median,
            T::from_usize_lossy(self.n_peaks),
        ]
    }
}

/// Strict interior local maxima. Endpoints and plateaus never count.
pub fn count_peaks<T: Scalar>(values: &[T]) -> usize {
    values
        .windows(3)
        .filter(|w| w[1] > w[0] && w[1] > w[2])
        .count()
}

/// Linear interpolation between order statistics at position `(n - 1) * p`.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mean, extrema, quartiles, population std, median and peak count.
pub fn compute_stats<T: Scalar>(values: &[T]) -> Result<StatVector<T>, FeatureError> {
    if values.is_empty() {
        return Err(FeatureError::EmptyInput);
    }
    let mut n = 0.0_f64;
    let mut mean = 0.0_f64;
    let mut m2 = 0.0_f64;
    let mut sorted = Vec::with_capacity(values.len());
    for v in values {
        let x = v.to_f64_lossy();
        n += 1.0;
        let delta = x - mean;
        mean += delta / n;
        m2 += delta * (x - mean);
        sorted.push(x);
    }
    sorted.sort_by(f64::total_cmp);
    let std = (m2 / n).max(0.0).sqrt();
    let t = T::from_f64_lossy;
    Ok(StatVector {
        mean: t(mean),
        max: t(sorted[sorted.len() - 1]),
        min: t(sorted[0]),
        q1: t(quantile_sorted(&sorted, 0.25)),
        q3: t(quantile_sorted(&sorted, 0.75)),
        std: t(std),
        median: t(quantile_sorted(&sorted, 0.5)),
        n_peaks: count_peaks(values),
    })
}

/// Features of one scope: the `8 * m` vector and its template text.
#[derive(Debug, Clone, PartialEq)]
pub struct ScopeFeatures<T> {
    pub scope: Scope,
    pub vector: Vec<T>,
    pub text: String,
}

/// The four scope feature vectors of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle<T> {
    pub segment_id: u64,
    pub scopes: [ScopeFeatures<T>; 4],
}

impl<T: Scalar> FeatureBundle<T> {
    pub fn scope(&self, scope: Scope) -> &ScopeFeatures<T> {
        &self.scopes[scope.index()]
    }

    /// Template texts in `Full, Start, Mid, End` order.
    pub fn texts(&self) -> [String; 4] {
        self.scopes.clone().map(|s| s.text)
    }
}

/// Computes per-scope statistics (channel-major, statistic-minor) and their
/// template texts.
pub fn build_bundle<T: Scalar>(
    pw: &PartitionedWindow<'_, T>,
    channel_names: &[String],
) -> Result<FeatureBundle<T>, FeatureError> {
    let m = pw.window.channel_count();
    if channel_names.len() != m {
        return Err(FeatureError::LengthMismatch {
            expected: m,
            actual: channel_names.len(),
        });
    }
    let scope_features = |scope: Scope| -> Result<ScopeFeatures<T>, FeatureError> {
        let mut vector = Vec::with_capacity(STATS_PER_CHANNEL * m);
        for c in 0..m {
            vector.extend(compute_stats(pw.slice(scope, c))?.to_array());
        }
        let text = serialize_scope(scope, channel_names, &vector)?;
        Ok(ScopeFeatures {
            scope,
            vector,
            text,
        })
    };
    Ok(FeatureBundle {
        segment_id: pw.window.segment_id,
        scopes: [
            scope_features(Scope::Full)?,
            scope_features(Scope::Start)?,
            scope_features(Scope::Mid)?,
            scope_features(Scope::End)?,
        ],
    })
}

/// Six significant digits, shortest representation, `.` separator.
pub fn format_sig6(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let rounded: f64 = format!("{v:.5e}").parse().unwrap_or(v);
    if rounded == 0.0 {
        return "0".to_string();
    }
    let a = rounded.abs();
    if !(1e-5..1e16).contains(&a) {
        format!("{rounded:e}")
    } else {
        format!("{rounded}")
    }
}

pub fn serialize_scope<T: Scalar>(
    scope: Scope,
    channel_names: &[String],
    vector: &[T],
) -> Result<String, FeatureError> {
    let expected = STATS_PER_CHANNEL * channel_names.len();
    if channel_names.is_empty() || vector.len() != expected {
        return Err(FeatureError::LengthMismatch {
            expected,
            actual: vector.len(),
        });
    }
    let mut out = format!("segment={scope}");
    for (name, stats) in channel_names.iter().zip(vector.chunks(STATS_PER_CHANNEL)) {
        out.push('\n');
        out.push_str(name);
        out.push(':');
        for (i, (stat, value)) in STAT_NAMES.iter().zip(stats).enumerate() {
            out.push_str(if i == 0 { " " } else { ", " });
            out.push_str(stat);
            out.push('=');
            let v = value.to_f64_lossy();
            if i == STATS_PER_CHANNEL - 1 {
                out.push_str(&format!("{}", v.round() as u64));
            } else {
                out.push_str(&format_sig6(v));
            }
        }
    }
    Ok(out)
}

/// A scope block read back from template text.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedScope {
    pub scope: Scope,
    pub channel_names: Vec<String>,
    pub vector: Vec<f64>,
}

/// Inverse of [`serialize_scope`].
pub fn parse_scope(text: &str) -> Result<ParsedScope, FeatureError> {
    let bad = |msg: &str| FeatureError::Malformed(msg.to_string());
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty text"))?;
    let scope = header
        .strip_prefix("segment=")
        .and_then(Scope::from_name)
        .ok_or_else(|| bad("missing segment header"))?;
    let mut channel_names = Vec::new();
    let mut vector = Vec::new();
    for line in lines {
        let (name, rest) = line.split_once(": ").ok_or_else(|| bad(line))?;
        let pairs: Vec<&str> = rest.split(", ").collect();
        if pairs.len() != STATS_PER_CHANNEL {
            return Err(bad(line));
        }
        for (pair, expected) in pairs.iter().zip(STAT_NAMES) {
            let (key, value) = pair.split_once('=').ok_or_else(|| bad(pair))?;
            if key != expected {
                return Err(bad(pair));
            }
            vector.push(value.parse::<f64>().map_err(|_| bad(pair))?);
        }
        channel_names.push(name.to_string());
    }
    if channel_names.is_empty() {
        return Err(bad("no channel lines"));
    }
    Ok(ParsedScope {
        scope,
        channel_names,
        vector,
    })
}
