//! Engine configuration: one TOML file drives every subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classify::{BASELINE_INSTRUCTION, DEFAULT_THRESHOLD};
use crate::describe::{SensorConfig, DEFAULT_SAMPLE_BUDGET};
use crate::embed::ProviderConfig;
use crate::error::{Error, Result};
use crate::eval::cost::CostRates;
use crate::ingest::synth::synth_dataset;
use crate::ingest::{
    load_dataset, segment_dataset, stratified_split, DatasetSchema, SegmentIds, SensorWindow,
    SourceRole,
};
use crate::llm::LlmClientConfig;
use crate::openset::LabelSpaceMode;
use crate::optimize::OptimizerConfig;
use crate::pipeline::{DescriptorSettings, PipelineSettings};
use crate::store::RetrievalParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Z-score with statistics fitted on the indexing windows.
    #[default]
    IndexingSplit,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub windows_per_class: usize,
    pub channels: usize,
    pub window_len: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_classes: 3,
            windows_per_class: 200,
            channels: 6,
            window_len: 40,
            seed: 0,
        }
    }
}

/// Where windows come from: CSV files described by `schema`, or the
/// synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default)]
    pub schema: Option<DatasetSchema>,
    #[serde(default)]
    pub indexing_path: Option<PathBuf>,
    /// Without a test file, `test_fraction` of the indexing windows is held out.
    #[serde(default)]
    pub test_path: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SynthConfig>,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Share of the indexing windows held out for prompt optimization.
    #[serde(default)]
    pub validation_fraction: f64,
    #[serde(default)]
    pub normalization: Normalization,
}

fn default_test_fraction() -> f64 {
    0.2
}

impl DatasetConfig {
    pub fn synthetic(cfg: SynthConfig) -> Self {
        Self {
            schema: None,
            indexing_path: None,
            test_path: None,
            synthetic: Some(cfg),
            test_fraction: default_test_fraction(),
            validation_fraction: 0.0,
            normalization: Normalization::IndexingSplit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DescriptorConfig {
    /// Embed LLM-written descriptors instead of statistic templates.
    pub enabled: bool,
    /// Defaults to bare channel names at the dataset sampling rate.
    pub sensor: Option<SensorConfig>,
    pub sample_budget: usize,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            sensor: None,
            sample_budget: DEFAULT_SAMPLE_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OpenSetConfig {
    pub openness: Vec<f64>,
    pub mode: LabelSpaceMode,
    /// Count the placeholder class in the reported macro-F1.
    pub include_placeholder: bool,
    /// Ask for a free-text name of every withheld-class window and map it
    /// back onto the class names.
    pub label_unseen: bool,
    /// Run leave-one-class-out over every class instead of openness splits.
    pub leave_one_out: bool,
    pub test_fraction: f64,
}

impl Default for OpenSetConfig {
    fn default() -> Self {
        Self {
            openness: vec![0.3, 0.5, 0.7],
            mode: LabelSpaceMode::TrueLabelHidden,
            include_placeholder: true,
            label_unseen: true,
            leave_one_out: false,
            test_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    #[serde(default)]
    pub seed: u64,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub retrieval: RetrievalParams,
    /// Retrieval-only vote threshold.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// System instruction; the built-in baseline when absent.
    #[serde(default)]
    pub instruction: Option<String>,
    #[serde(default)]
    pub embed: ProviderConfig,
    #[serde(default)]
    pub llm: LlmClientConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub descriptor: DescriptorConfig,
    #[serde(default)]
    pub openset: OpenSetConfig,
    #[serde(default)]
    pub cost: CostRates,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

/// Windows of one run, split by role.
#[derive(Debug, Clone)]
pub struct DataSplit {
    pub channel_names: Vec<String>,
    pub sampling_rate_hz: f64,
    pub indexing: Vec<SensorWindow<f64>>,
    pub validation: Vec<SensorWindow<f64>>,
    pub test: Vec<SensorWindow<f64>>,
}

impl EngineConfig {
    /// Every other section at its default.
    pub fn new(dataset: DatasetConfig) -> Self {
        Self {
            seed: 0,
            dataset,
            retrieval: RetrievalParams::default(),
            threshold: DEFAULT_THRESHOLD,
            instruction: None,
            embed: ProviderConfig::default(),
            llm: LlmClientConfig::default(),
            optimizer: OptimizerConfig::default(),
            descriptor: DescriptorConfig::default(),
            openset: OpenSetConfig::default(),
            cost: CostRates::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative dataset paths resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            for p in [&mut cfg.dataset.indexing_path, &mut cfg.dataset.test_path]
                .into_iter()
                .flatten()
            {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        match (&d.synthetic, &d.indexing_path) {
            (Some(_), Some(_)) => {
                return Err(Error::ConfigInvalid(
                    "dataset: set either `synthetic` or `indexing_path`, not both".into(),
                ))
            }
            (None, None) => {
                return Err(Error::ConfigInvalid(
                    "dataset: one of `synthetic` or `indexing_path` is required".into(),
                ))
            }
            (None, Some(_)) => match &d.schema {
                Some(s) => s.validate()?,
                None => {
                    return Err(Error::ConfigInvalid(
                        "dataset: CSV input needs a `schema`".into(),
                    ))
                }
            },
            (Some(s), None) => {
                if s.n_classes == 0 || s.windows_per_class == 0 || s.channels == 0 {
                    return Err(Error::ConfigInvalid(
                        "dataset.synthetic: classes, windows and channels must be >= 1".into(),
                    ));
                }
                if s.window_len < 4 {
                    return Err(Error::ConfigInvalid(
                        "dataset.synthetic: window_len must be >= 4".into(),
                    ));
                }
            }
        }
        for (name, f) in [
            ("test_fraction", d.test_fraction),
            ("validation_fraction", d.validation_fraction),
        ] {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::ConfigInvalid(format!(
                    "dataset.{name} {f} outside [0, 1)"
                )));
            }
        }
        self.retrieval.validate()?;
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::ConfigInvalid(format!(
                "threshold {} outside [0, 1]",
                self.threshold
            )));
        }
        self.embed.validate()?;
        self.llm.validate()?;
        self.optimizer.validate()?;
        if let Some(s) = &self.descriptor.sensor {
            s.validate()?;
            if s.channels.len() != self.channel_names().len() {
                return Err(Error::ConfigInvalid(format!(
                    "descriptor.sensor lists {} channels, dataset has {}",
                    s.channels.len(),
                    self.channel_names().len()
                )));
            }
        }
        if self.descriptor.enabled && self.descriptor.sample_budget == 0 {
            return Err(Error::ConfigInvalid(
                "descriptor.sample_budget must be >= 1".into(),
            ));
        }
        for &o in &self.openset.openness {
            if !(o > 0.0 && o < 1.0) {
                return Err(Error::ConfigInvalid(format!("openness {o} outside (0, 1)")));
            }
        }
        if !(0.0..1.0).contains(&self.openset.test_fraction) {
            return Err(Error::ConfigInvalid(
                "openset.test_fraction outside [0, 1)".into(),
            ));
        }
        Ok(())
    }

    pub fn channel_names(&self) -> Vec<String> {
        match (&self.dataset.synthetic, &self.dataset.schema) {
            (Some(s), _) => (0..s.channels).map(|c| format!("ch{c}")).collect(),
            (None, Some(schema)) => schema.channel_columns.clone(),
            (None, None) => Vec::new(),
        }
    }

    pub fn sampling_rate_hz(&self) -> f64 {
        match (&self.dataset.synthetic, &self.dataset.schema) {
            (None, Some(schema)) => schema.sampling_rate_hz,
            // the generator has no physical rate; one sample per unit time
            _ => 1.0,
        }
    }

    pub fn instruction(&self) -> &str {
        self.instruction.as_deref().unwrap_or(BASELINE_INSTRUCTION)
    }

    pub fn pipeline_settings(&self) -> PipelineSettings {
        let channel_names = self.channel_names();
        let descriptor = self.descriptor.enabled.then(|| DescriptorSettings {
            sensor: self.descriptor.sensor.clone().unwrap_or_else(|| {
                SensorConfig::unannotated(self.sampling_rate_hz(), &channel_names)
            }),
            sample_budget: self.descriptor.sample_budget,
        });
        PipelineSettings {
            channel_names,
            retrieval: self.retrieval,
            normalize: self.dataset.normalization == Normalization::IndexingSplit,
            descriptor,
        }
    }

    /// Every labeled window of the configured dataset, test file included.
    pub fn load_all_windows(&self) -> Result<Vec<SensorWindow<f64>>> {
        let split = self.load_split()?;
        let mut all = split.indexing;
        all.extend(split.validation);
        all.extend(split.test);
        all.sort_by_key(|w| w.segment_id);
        Ok(all)
    }

    /// Loads and splits the dataset. Splits are seeded by `seed`.
    pub fn load_split(&self) -> Result<DataSplit> {
        let d = &self.dataset;
        let (pool, test) = if let Some(s) = &d.synthetic {
            let windows = synth_dataset(s.n_classes, s.windows_per_class, s.channels, s.window_len, s.seed);
            stratified_split(windows, d.test_fraction, self.seed)
        } else {
            let schema = d.schema.as_ref().expect("validated");
            let path = d.indexing_path.as_ref().expect("validated");
            let mut ids = SegmentIds::default();
            let series = load_dataset::<f64>(path, schema)?;
            let windows = segment_dataset(&series, schema, SourceRole::Indexing, &mut ids)?;
            match &d.test_path {
                Some(tp) => {
                    let series = load_dataset::<f64>(tp, schema)?;
                    (windows, segment_dataset(&series, schema, SourceRole::Test, &mut ids)?)
                }
                None => stratified_split(windows, d.test_fraction, self.seed),
            }
        };
        let (indexing, validation) =
            stratified_split(pool, d.validation_fraction, self.seed.wrapping_add(1));
        let with_role = |ws: Vec<SensorWindow<f64>>, role| {
            ws.into_iter()
                .map(|w| SensorWindow { role, ..w })
                .collect::<Vec<_>>()
        };
        Ok(DataSplit {
            channel_names: self.channel_names(),
            sampling_rate_hz: self.sampling_rate_hz(),
            indexing: with_role(indexing, SourceRole::Indexing),
            validation: with_role(validation, SourceRole::Validation),
            test: with_role(test, SourceRole::Test),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SYNTH: &str = r#"
seed = 7

[dataset]
test_fraction = 0.2

[dataset.synthetic]
n_classes = 3
windows_per_class = 10
channels = 2
window_len = 12

[retrieval]
weights = [0.4, 0.2, 0.2, 0.2]
q = 5

[embed]
dim = 64
"#;

    #[test]
    fn parses_and_splits() {
        let cfg = EngineConfig::from_toml(SYNTH).unwrap();
        assert_eq!(cfg.retrieval.q, 5);
        assert_eq!(cfg.threshold, 0.75);
        assert_eq!(cfg.channel_names(), vec!["ch0", "ch1"]);
        let split = cfg.load_split().unwrap();
        assert_eq!(split.indexing.len(), 24);
        assert_eq!(split.test.len(), 6);
        assert!(split.validation.is_empty());
        assert!(split.test.iter().all(|w| w.role == SourceRole::Test));
        let again = cfg.load_split().unwrap();
        let ids = |ws: &[SensorWindow<f64>]| ws.iter().map(|w| w.segment_id).collect::<Vec<_>>();
        assert_eq!(ids(&split.test), ids(&again.test));
    }

    #[test]
    fn rejects_unknown_keys() {
        let text = format!("{SYNTH}\nbogus = 1\n");
        assert!(matches!(EngineConfig::from_toml(&text), Err(Error::ConfigInvalid(_))));
        let text = SYNTH.replace("q = 5", "q = 5\nk = 2");
        assert!(EngineConfig::from_toml(&text).is_err());
    }

    #[test]
    fn rejects_bad_values() {
        let bad_weights = SYNTH.replace("[0.4, 0.2, 0.2, 0.2]", "[0.5, 0.2, 0.2, 0.2]");
        assert!(EngineConfig::from_toml(&bad_weights).is_err());
        let no_source = "[dataset]\n";
        assert!(EngineConfig::from_toml(no_source).is_err());
        let zero_q = SYNTH.replace("q = 5", "q = 0");
        assert!(EngineConfig::from_toml(&zero_q).is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = EngineConfig::from_toml(SYNTH).unwrap();
        let back = EngineConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }
}
