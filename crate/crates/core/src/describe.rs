//! LLM-written window descriptors used in place of statistic templates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{partition_bounds, Scope, SensorWindow};
use crate::llm::{ChatClient, LlmError};
use crate::scalar::Scalar;

pub const RAW_SAMPLES_HEADER: &str = "== RAW SAMPLES ==";
pub const SENSOR_HEADER: &str = "== SENSOR CONFIGURATION ==";
pub const FORMAT_HEADER: &str = "== OUTPUT FORMAT ==";
pub const FACETS: [&str; 4] = ["dominant_axis", "smoothness", "intensity", "transitions"];
/// Most raw numbers placed in one prompt before stride subsampling.
pub const DEFAULT_SAMPLE_BUDGET: usize = 4000;
const ATTEMPTS: usize = 2;

const DESCRIBE_SYSTEM: &str = "You analyse wearable inertial sensor recordings. Describe the \
motion in the given window using exactly the requested sections and facet lines.";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DescribeError {
    #[error("sensor config has {config} channels, window has {window}")]
    ConfigMismatch { config: usize, window: usize },
    #[error("invalid sensor config: {0}")]
    InvalidConfig(String),
    #[error("descriptor malformed after {attempts} attempts: {reason}")]
    MalformedDescriptor { attempts: usize, reason: String },
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("window too short to describe: {0}")]
    WindowTooShort(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelInfo {
    pub name: String,
    #[serde(default)]
    pub placement: String,
    #[serde(default)]
    pub orientation: String,
    /// e.g. `x -> forward`.
    #[serde(default)]
    pub axis_mapping: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorConfig {
    pub sampling_rate_hz: f64,
    pub channels: Vec<ChannelInfo>,
}

impl SensorConfig {
    /// Bare config naming each channel and nothing else.
    pub fn unannotated(sampling_rate_hz: f64, names: &[String]) -> Self {
        Self {
            sampling_rate_hz,
            channels: names
                .iter()
                .map(|n| ChannelInfo {
                    name: n.clone(),
                    placement: String::new(),
                    orientation: String::new(),
                    axis_mapping: String::new(),
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<(), DescribeError> {
        if self.sampling_rate_hz.is_nan() || self.sampling_rate_hz <= 0.0 {
            return Err(DescribeError::InvalidConfig(
                "sampling_rate_hz must be > 0".into(),
            ));
        }
        if self.channels.is_empty() {
            return Err(DescribeError::InvalidConfig("no channels".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityDescriptor {
    pub segment_id: u64,
    pub full_analysis: String,
    /// Start, Mid, End.
    pub per_scope_analysis: [String; 3],
}

impl ActivityDescriptor {
    /// Section texts in `Full, Start, Mid, End` order, each with its header.
    pub fn texts(&self) -> [String; 4] {
        let body = |k: usize| match k {
            0 => &self.full_analysis,
            k => &self.per_scope_analysis[k - 1],
        };
        std::array::from_fn(|k| format!("{}\n{}", section_header(Scope::ALL[k]), body(k)))
    }
}

pub fn section_header(scope: Scope) -> String {
    format!("## {}", scope.name().to_uppercase())
}

/// Raw samples (4 decimals, one line per channel), the sensor configuration
/// and the response format. Windows above `budget` numbers are subsampled at
/// a uniform stride, and the prompt says so.
pub fn build_descriptor_prompt<T: Scalar>(
    window: &SensorWindow<T>,
    cfg: &SensorConfig,
    budget: usize,
) -> Result<String, DescribeError> {
    cfg.validate()?;
    let m = window.channel_count();
    if cfg.channels.len() != m {
        return Err(DescribeError::ConfigMismatch {
            config: cfg.channels.len(),
            window: m,
        });
    }
    let len = window.len();
    let stride = (len * m).div_ceil(budget.max(m)).max(1);
    let mut out = String::new();
    out.push_str(SENSOR_HEADER);
    out.push_str(&format!("\nsampling_rate_hz: {}\n", cfg.sampling_rate_hz));
    for ch in &cfg.channels {
        out.push_str(&format!(
            "channel {}: placement={}; orientation={}; axis_mapping={}\n",
            ch.name,
            or_unspecified(&ch.placement),
            or_unspecified(&ch.orientation),
            or_unspecified(&ch.axis_mapping),
        ));
    }
    out.push('\n');
    out.push_str(RAW_SAMPLES_HEADER);
    out.push('\n');
    if stride > 1 {
        out.push_str(&format!(
            "note: {len} samples per channel subsampled at stride {stride}\n"
        ));
    }
    for (ch, series) in cfg.channels.iter().zip(&window.samples) {
        out.push_str(&ch.name);
        out.push(':');
        for (i, v) in series.iter().step_by(stride).enumerate() {
            out.push_str(if i == 0 { " " } else { ", " });
            out.push_str(&format!("{:.4}", v.to_f64_lossy()));
        }
        out.push('\n');
    }
    out.push('\n');
    out.push_str(FORMAT_HEADER);
    out.push_str(
        "\nAnalyse the full window, then its start, mid and end thirds. Reply with exactly \
these four sections, in order:\n## FULL\n## START\n## MID\n## END\nUnder each header write \
one line for each facet:\n",
    );
    for f in FACETS {
        out.push_str(&format!("{f}: <description>\n"));
    }
    Ok(out)
}

fn or_unspecified(s: &str) -> &str {
    if s.trim().is_empty() {
        "unspecified"
    } else {
        s
    }
}

/// Checks the four sections and their facet lines.
pub fn parse_descriptor(segment_id: u64, response: &str) -> Result<ActivityDescriptor, String> {
    let mut sections: [Option<Vec<&str>>; 4] = Default::default();
    let mut current: Option<usize> = None;
    for line in response.lines() {
        let t = line.trim();
        if let Some(name) = t.strip_prefix("## ") {
            current = Scope::ALL
                .iter()
                .position(|s| s.name().eq_ignore_ascii_case(name.trim()));
            if let Some(k) = current {
                if sections[k].is_some() {
                    return Err(format!("section {} repeated", section_header(Scope::ALL[k])));
                }
                sections[k] = Some(Vec::new());
            }
            continue;
        }
        if let (Some(k), false) = (current, t.is_empty()) {
            sections[k].as_mut().expect("opened").push(t);
        }
    }
    let mut bodies: Vec<String> = Vec::with_capacity(4);
    for (k, lines) in sections.into_iter().enumerate() {
        let header = section_header(Scope::ALL[k]);
        let lines = lines.ok_or_else(|| format!("missing section {header}"))?;
        for facet in FACETS {
            let present = lines.iter().any(|l| {
                l.strip_prefix(facet)
                    .and_then(|r| r.strip_prefix(':'))
                    .is_some_and(|v| !v.trim().is_empty())
            });
            if !present {
                return Err(format!("section {header} lacks `{facet}:`"));
            }
        }
        bodies.push(lines.join("\n"));
    }
    let mut it = bodies.into_iter();
    let full_analysis = it.next().expect("four sections");
    Ok(ActivityDescriptor {
        segment_id,
        full_analysis,
        per_scope_analysis: [
            it.next().expect("four"),
            it.next().expect("four"),
            it.next().expect("four"),
        ],
    })
}

/// Asks for a descriptor, re-asking once if the reply is malformed.
pub fn generate_descriptor(
    client: &dyn ChatClient,
    segment_id: u64,
    prompt: &str,
) -> Result<ActivityDescriptor, DescribeError> {
    let mut reason = String::new();
    for attempt in 0..ATTEMPTS {
        let reply = client.chat(DESCRIBE_SYSTEM, prompt)?;
        match parse_descriptor(segment_id, &reply) {
            Ok(d) => return Ok(d),
            Err(r) => {
                tracing::warn!(segment_id, attempt, reason = %r, "malformed descriptor");
                reason = r;
            }
        }
    }
    Err(DescribeError::MalformedDescriptor {
        attempts: ATTEMPTS,
        reason,
    })
}

/// Prompt + generation for one window.
pub fn describe_window<T: Scalar>(
    client: &dyn ChatClient,
    window: &SensorWindow<T>,
    cfg: &SensorConfig,
    budget: usize,
) -> Result<ActivityDescriptor, DescribeError> {
    if window.len() < 4 {
        return Err(DescribeError::WindowTooShort(window.len()));
    }
    let prompt = build_descriptor_prompt(window, cfg, budget)?;
    generate_descriptor(client, window.segment_id, &prompt)
}

struct RawBlock {
    names: Vec<String>,
    series: Vec<Vec<f64>>,
    axis_notes: Vec<String>,
}

fn read_prompt(prompt: &str) -> RawBlock {
    let mut axis_notes = Vec::new();
    let mut names = Vec::new();
    let mut series = Vec::new();
    let mut in_raw = false;
    for line in prompt.lines() {
        if let Some(rest) = line.strip_prefix("channel ") {
            let mapping = rest
                .split("axis_mapping=")
                .nth(1)
                .filter(|m| *m != "unspecified")
                .unwrap_or("")
                .to_string();
            axis_notes.push(mapping);
            continue;
        }
        if line == RAW_SAMPLES_HEADER {
            in_raw = true;
            continue;
        }
        if !in_raw || line.starts_with("note:") {
            continue;
        }
        if line.is_empty() {
            break;
        }
        if let Some((name, values)) = line.split_once(':') {
            names.push(name.to_string());
            series.push(
                values
                    .split(',')
                    .filter_map(|v| v.trim().parse::<f64>().ok())
                    .collect(),
            );
        }
    }
    RawBlock {
        names,
        series,
        axis_notes,
    }
}

fn facet_lines(block: &RawBlock, lo: usize, hi: usize) -> String {
    let mut best = (0usize, f64::NEG_INFINITY);
    let mut sq = 0.0;
    let mut count = 0usize;
    let mut rough = 0.0;
    let mut crossings = 0usize;
    for (c, s) in block.series.iter().enumerate() {
        let part = &s[lo.min(s.len())..hi.min(s.len())];
        if part.is_empty() {
            continue;
        }
        let n = part.len() as f64;
        let mean = part.iter().sum::<f64>() / n;
        let var = part.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        if var > best.1 {
            best = (c, var);
        }
        sq += part.iter().map(|v| v * v).sum::<f64>();
        count += part.len();
        rough += part.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>()
            / (n - 1.0).max(1.0)
            / var.sqrt().max(1e-6);
        crossings += part
            .windows(2)
            .filter(|w| (w[0] - mean) * (w[1] - mean) < 0.0)
            .count();
    }
    let m = block.series.len().max(1) as f64;
    let rms = (sq / count.max(1) as f64).sqrt();
    let rough = rough / m;
    let axis = block.names.get(best.0).cloned().unwrap_or_default();
    let note = block
        .axis_notes
        .get(best.0)
        .filter(|n| !n.is_empty())
        .map(|n| format!(" ({n})"))
        .unwrap_or_default();
    let smooth_word = if rough < 0.3 {
        "smooth"
    } else if rough < 0.8 {
        "moderately smooth"
    } else {
        "jerky"
    };
    let intensity_word = if rms < 0.5 {
        "low"
    } else if rms < 1.5 {
        "moderate"
    } else {
        "high"
    };
    format!(
        "dominant_axis: {axis}{note} with variance {:.4}\n\
smoothness: {smooth_word}, mean step to spread ratio {rough:.4}\n\
intensity: {intensity_word}, rms {rms:.4}\n\
transitions: {crossings} mean crossings across {} channels",
        best.1.max(0.0),
        block.series.len()
    )
}

/// Reply of the offline describer: facets computed from the prompt's own
/// raw samples. The dominant axis is the channel of largest variance.
pub fn mock_descriptor_reply(prompt: &str) -> String {
    let block = read_prompt(prompt);
    let len = block.series.iter().map(Vec::len).min().unwrap_or(0);
    let Ok(ranges) = partition_bounds(len) else {
        return "insufficient samples".to_string();
    };
    let mut out = String::new();
    for (scope, r) in Scope::ALL.iter().zip(ranges) {
        out.push_str(&section_header(*scope));
        out.push('\n');
        out.push_str(&facet_lines(&block, r.start, r.end));
        out.push('\n');
    }
    out
}
