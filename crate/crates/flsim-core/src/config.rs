//! Simulation configuration: the flat `key = value` file format, defaults,
//! validation, and dataset resolution.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::Policy;
use crate::dataset::{load_idx, synth_dataset, PartitionConfig};
use crate::error::{Error, Result};
use crate::learning::{Hyperparams, ModelKind, QuantBits};
use crate::wireless::WirelessConfig;
use crate::Dataset;

/// Where the training data comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    /// Seeded Gaussian class clusters; no files needed.
    Synthetic,
    /// IDX image/label files (`train-*`/`t10k-*`) under `data_dir`.
    Idx,
}

/// Synthetic-data shape knobs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub classes: usize,
    pub samples_per_class: usize,
    pub test_per_class: usize,
    pub feature_dim: usize,
}

/// Every knob of one simulation run. A config plus fixed input data fully
/// determines the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dataset: DatasetSource,
    pub data_dir: Option<String>,
    /// Take only the first n training samples; 0 keeps the full split.
    pub subsample_size: usize,
    /// Seed of the dataset itself (synthetic draws); kept apart from
    /// `master_seed` so comparison runs share identical data.
    pub data_seed: u64,
    pub synth: SynthConfig,
    pub partition: PartitionConfig,
    pub wireless: WirelessConfig,
    pub model: ModelKind,
    pub hidden_dim: usize,
    pub hyper: Hyperparams,
    pub local_epochs_cap: usize,
    pub rounds: usize,
    pub policy: Policy,
    /// Clients per round; `None` selects one per channel.
    pub k_override: Option<usize>,
    pub quant_bits: QuantBits,
    pub filter_multiplier: f64,
    pub plateau_epsilon: f64,
    pub patience: usize,
    pub latency_budget_s: f64,
    pub compute_speed_min: f64,
    pub compute_speed_max: f64,
    pub coverage_threshold: usize,
    pub unit_reward: f64,
    pub master_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        let master_seed = 42;
        Self {
            dataset: DatasetSource::Synthetic,
            data_dir: None,
            subsample_size: 0,
            data_seed: master_seed,
            synth: SynthConfig {
                classes: 10,
                samples_per_class: 400,
                test_per_class: 100,
                feature_dim: 16,
            },
            partition: PartitionConfig {
                num_clients: 15,
                alpha: 0.1,
                min_samples_per_client: 1,
                seed: master_seed,
            },
            wireless: WirelessConfig {
                bandwidth_hz_per_channel: 5e6,
                num_channels: 5,
                snr_db_min: 10.0,
                snr_db_max: 25.0,
                dropout_prob: 0.30,
                header_bits: 0,
                seed: master_seed,
            },
            model: ModelKind::Logistic,
            hidden_dim: 32,
            hyper: Hyperparams { learning_rate: 0.2, batch_size: 32, local_epochs: 2 },
            local_epochs_cap: 5,
            rounds: 10,
            policy: Policy::Random,
            k_override: None,
            quant_bits: QuantBits::B32,
            filter_multiplier: 3.0,
            plateau_epsilon: 0.002,
            patience: 2,
            latency_budget_s: 1.0,
            compute_speed_min: 500.0,
            compute_speed_max: 2000.0,
            coverage_threshold: 75,
            unit_reward: 1.0,
            master_seed,
        }
    }
}

impl SimConfig {
    /// Rekeys every run-level stream; the dataset seed stays put.
    pub fn with_master_seed(&self, seed: u64) -> Self {
        let mut cfg = self.clone();
        cfg.master_seed = seed;
        cfg.partition.seed = seed;
        cfg.wireless.seed = seed;
        cfg
    }

    pub fn with_policy(&self, policy: Policy) -> Self {
        let mut cfg = self.clone();
        cfg.policy = policy;
        cfg
    }

    pub fn with_num_channels(&self, num_channels: usize) -> Self {
        let mut cfg = self.clone();
        cfg.wireless.num_channels = num_channels;
        cfg
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)] // negated form rejects NaN
    pub fn validate(&self) -> Result<()> {
        self.partition.validate()?;
        self.wireless.validate()?;
        self.hyper.validate()?;
        let range = |field: &str, message: String| {
            Err(Error::ConfigRange { field: field.into(), message })
        };
        if self.synth.classes == 0
            || self.synth.samples_per_class == 0
            || self.synth.test_per_class == 0
            || self.synth.feature_dim == 0
        {
            return range("synth_*", "synthetic dataset dimensions must be positive".into());
        }
        if self.hidden_dim == 0 && self.model == ModelKind::Mlp1 {
            return range("hidden_dim", "must be >= 1 for the mlp1 model".into());
        }
        if self.hyper.local_epochs > self.local_epochs_cap {
            return range(
                "local_epochs",
                format!(
                    "{} exceeds local_epochs_cap {}",
                    self.hyper.local_epochs, self.local_epochs_cap
                ),
            );
        }
        if !(self.filter_multiplier > 0.0) {
            return range("filter_multiplier", "must be > 0".into());
        }
        if !(self.plateau_epsilon >= 0.0) {
            return range("plateau_epsilon", "must be >= 0".into());
        }
        if self.patience == 0 {
            return range("patience", "must be >= 1".into());
        }
        if !(self.latency_budget_s > 0.0) {
            return range("latency_budget_s", "must be > 0".into());
        }
        if !(self.compute_speed_min > 0.0 && self.compute_speed_max >= self.compute_speed_min) {
            return range(
                "compute_speed_min",
                format!(
                    "need 0 < min <= max, got {}..{}",
                    self.compute_speed_min, self.compute_speed_max
                ),
            );
        }
        if self.coverage_threshold == 0 {
            return range("coverage_threshold", "must be >= 1".into());
        }
        Ok(())
    }
}

/// Parses the flat `key = value` config format.
///
/// Blank lines and `#` comments are ignored; unknown keys are rejected;
/// missing keys fall back to the documented defaults (the case-study table
/// values).
pub fn parse_config(text: &str) -> Result<SimConfig> {
    let mut cfg = SimConfig::default();
    let mut data_seed: Option<u64> = None;

    for (line_no, raw) in text.lines().enumerate() {
        let line = line_no + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(Error::ConfigParse {
                line,
                message: format!("expected `key = value`, got {content:?}"),
            });
        };
        let key = key.trim();
        let value = value.trim();

        fn num<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
            value.parse().map_err(|_| Error::ConfigParse {
                line,
                message: format!("invalid value {value:?} for key {key}"),
            })
        }

        match key {
            "dataset" => {
                cfg.dataset = match value {
                    "synthetic" => DatasetSource::Synthetic,
                    "idx" => DatasetSource::Idx,
                    other => {
                        return Err(Error::ConfigParse {
                            line,
                            message: format!(
                                "unknown dataset {other:?} (expected synthetic or idx)"
                            ),
                        })
                    }
                }
            }
            "data_dir" => cfg.data_dir = Some(value.to_string()),
            "subsample_size" => cfg.subsample_size = num(key, value, line)?,
            "data_seed" => data_seed = Some(num(key, value, line)?),
            "num_clients" => cfg.partition.num_clients = num(key, value, line)?,
            "alpha" => cfg.partition.alpha = num(key, value, line)?,
            "min_samples_per_client" => {
                cfg.partition.min_samples_per_client = num(key, value, line)?
            }
            "synth_classes" => cfg.synth.classes = num(key, value, line)?,
            "synth_samples_per_class" => cfg.synth.samples_per_class = num(key, value, line)?,
            "synth_test_per_class" => cfg.synth.test_per_class = num(key, value, line)?,
            "synth_feature_dim" => cfg.synth.feature_dim = num(key, value, line)?,
            "bandwidth_hz_per_channel" => {
                cfg.wireless.bandwidth_hz_per_channel = num(key, value, line)?
            }
            "num_channels" => cfg.wireless.num_channels = num(key, value, line)?,
            "snr_db_min" => cfg.wireless.snr_db_min = num(key, value, line)?,
            "snr_db_max" => cfg.wireless.snr_db_max = num(key, value, line)?,
            "dropout_prob" => cfg.wireless.dropout_prob = num(key, value, line)?,
            "header_bits" => cfg.wireless.header_bits = num(key, value, line)?,
            "model" => cfg.model = value.parse()?,
            "hidden_dim" => cfg.hidden_dim = num(key, value, line)?,
            "learning_rate" => cfg.hyper.learning_rate = num(key, value, line)?,
            "batch_size" => cfg.hyper.batch_size = num(key, value, line)?,
            "local_epochs" => cfg.hyper.local_epochs = num(key, value, line)?,
            "local_epochs_cap" => cfg.local_epochs_cap = num(key, value, line)?,
            "rounds" => cfg.rounds = num(key, value, line)?,
            "policy" => cfg.policy = value.parse()?,
            "k" => {
                let k: usize = num(key, value, line)?;
                cfg.k_override = if k == 0 { None } else { Some(k) };
            }
            "quant_bits" => {
                let bits: u32 = num(key, value, line)?;
                cfg.quant_bits = QuantBits::try_from(bits)?;
            }
            "filter_multiplier" => cfg.filter_multiplier = num(key, value, line)?,
            "plateau_epsilon" => cfg.plateau_epsilon = num(key, value, line)?,
            "patience" => cfg.patience = num(key, value, line)?,
            "latency_budget_s" => cfg.latency_budget_s = num(key, value, line)?,
            "compute_speed_min" => cfg.compute_speed_min = num(key, value, line)?,
            "compute_speed_max" => cfg.compute_speed_max = num(key, value, line)?,
            "coverage_threshold" => cfg.coverage_threshold = num(key, value, line)?,
            "unit_reward" => cfg.unit_reward = num(key, value, line)?,
            "master_seed" => cfg.master_seed = num(key, value, line)?,
            other => {
                return Err(Error::ConfigParse { line, message: format!("unknown key {other:?}") })
            }
        }
    }

    cfg.partition.seed = cfg.master_seed;
    cfg.wireless.seed = cfg.master_seed;
    cfg.data_seed = data_seed.unwrap_or(cfg.master_seed);
    cfg.validate()?;
    Ok(cfg)
}

/// Reads and parses a config file.
pub fn parse_config_file(path: &Path) -> Result<SimConfig> {
    parse_config(&fs::read_to_string(path)?)
}

/// Canonical `key = value` serialization; `parse_config` of the output
/// reproduces the config exactly.
pub fn serialize_config(cfg: &SimConfig) -> String {
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(&v);
        out.push('\n');
    };
    kv(
        "dataset",
        match cfg.dataset {
            DatasetSource::Synthetic => "synthetic".into(),
            DatasetSource::Idx => "idx".into(),
        },
    );
    if let Some(dir) = &cfg.data_dir {
        kv("data_dir", dir.clone());
    }
    kv("subsample_size", cfg.subsample_size.to_string());
    kv("data_seed", cfg.data_seed.to_string());
    kv("num_clients", cfg.partition.num_clients.to_string());
    kv("alpha", cfg.partition.alpha.to_string());
    kv("min_samples_per_client", cfg.partition.min_samples_per_client.to_string());
    kv("synth_classes", cfg.synth.classes.to_string());
    kv("synth_samples_per_class", cfg.synth.samples_per_class.to_string());
    kv("synth_test_per_class", cfg.synth.test_per_class.to_string());
    kv("synth_feature_dim", cfg.synth.feature_dim.to_string());
    kv("bandwidth_hz_per_channel", cfg.wireless.bandwidth_hz_per_channel.to_string());
    kv("num_channels", cfg.wireless.num_channels.to_string());
    kv("snr_db_min", cfg.wireless.snr_db_min.to_string());
    kv("snr_db_max", cfg.wireless.snr_db_max.to_string());
    kv("dropout_prob", cfg.wireless.dropout_prob.to_string());
    kv("header_bits", cfg.wireless.header_bits.to_string());
    kv("model", cfg.model.as_str().to_string());
    kv("hidden_dim", cfg.hidden_dim.to_string());
    kv("learning_rate", cfg.hyper.learning_rate.to_string());
    kv("batch_size", cfg.hyper.batch_size.to_string());
    kv("local_epochs", cfg.hyper.local_epochs.to_string());
    kv("local_epochs_cap", cfg.local_epochs_cap.to_string());
    kv("rounds", cfg.rounds.to_string());
    kv("policy", cfg.policy.as_str().to_string());
    kv("k", cfg.k_override.unwrap_or(0).to_string());
    kv("quant_bits", cfg.quant_bits.bits().to_string());
    kv("filter_multiplier", cfg.filter_multiplier.to_string());
    kv("plateau_epsilon", cfg.plateau_epsilon.to_string());
    kv("patience", cfg.patience.to_string());
    kv("latency_budget_s", cfg.latency_budget_s.to_string());
    kv("compute_speed_min", cfg.compute_speed_min.to_string());
    kv("compute_speed_max", cfg.compute_speed_max.to_string());
    kv("coverage_threshold", cfg.coverage_threshold.to_string());
    kv("unit_reward", cfg.unit_reward.to_string());
    kv("master_seed", cfg.master_seed.to_string());
    out
}

const IDX_FILES: [(&str, &str); 2] = [
    ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
];

/// Materializes `(train, test)` data for a config.
///
/// Synthetic data is generated from `data_seed` and split per class; IDX data
/// is read from `data_dir` using the standard file names. The test split is
/// never partitioned or subsampled.
pub fn resolve_dataset(cfg: &SimConfig) -> Result<(Dataset, Dataset)> {
    match cfg.dataset {
        DatasetSource::Synthetic => {
            let full = synth_dataset(
                cfg.synth.classes,
                cfg.synth.samples_per_class + cfg.synth.test_per_class,
                cfg.synth.feature_dim,
                cfg.data_seed,
            );
            let (train, test) = full.split_per_class(cfg.synth.samples_per_class);
            Ok((train.head(cfg.subsample_size), test))
        }
        DatasetSource::Idx => {
            let dir = cfg.data_dir.as_deref().ok_or_else(|| Error::ConfigRange {
                field: "data_dir".into(),
                message: "dataset = idx needs data_dir (flag, config key, or FLSIM_DATA_DIR)"
                    .into(),
            })?;
            let dir = Path::new(dir);
            let mut splits = Vec::with_capacity(2);
            for (images, labels) in IDX_FILES {
                let images = fs::read(dir.join(images))?;
                let labels = fs::read(dir.join(labels))?;
                splits.push(load_idx(&images[..], &labels[..])?);
            }
            let test = splits.pop().expect("two splits");
            let train = splits.pop().expect("two splits");
            Ok((train.head(cfg.subsample_size), test))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_table_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg.partition.num_clients, 15);
        assert_eq!(cfg.partition.alpha, 0.1);
        assert_eq!(cfg.wireless.bandwidth_hz_per_channel, 5e6);
        assert_eq!(cfg.wireless.num_channels, 5);
        assert_eq!(cfg.wireless.snr_db_min, 10.0);
        assert_eq!(cfg.wireless.snr_db_max, 25.0);
        assert_eq!(cfg.wireless.dropout_prob, 0.30);
        assert_eq!(cfg.rounds, 10);
        assert_eq!(cfg, SimConfig::default());
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let cfg = parse_config("# table overrides\n\nalpha = 0.5 # heavier mixing\n").unwrap();
        assert_eq!(cfg.partition.alpha, 0.5);
    }

    #[test]
    fn negative_alpha_names_the_field() {
        match parse_config("alpha = -1") {
            Err(Error::ConfigRange { field, .. }) => assert_eq!(field, "alpha"),
            other => panic!("expected range error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_key_reports_line() {
        match parse_config("rounds = 3\nbogus_key = 1\n") {
            Err(Error::ConfigParse { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("bogus_key"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn garbage_value_reports_line() {
        match parse_config("rounds = ten") {
            Err(Error::ConfigParse { line: 1, .. }) => {}
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn round_trip_is_stable() {
        let text = "alpha = 0.25\nnum_clients = 8\npolicy = class_diversity\nk = 3\nquant_bits = 16\nmaster_seed = 7\nmodel = mlp1\n";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.k_override, Some(3));
        assert_eq!(cfg.data_seed, 7);
        let serialized = serialize_config(&cfg);
        let reparsed = parse_config(&serialized).unwrap();
        assert_eq!(cfg, reparsed);
        assert_eq!(serialized, serialize_config(&reparsed));
    }

    #[test]
    fn data_seed_defaults_to_master_and_survives_rekeying() {
        let cfg = parse_config("master_seed = 99").unwrap();
        assert_eq!(cfg.data_seed, 99);
        let rekeyed = cfg.with_master_seed(5);
        assert_eq!(rekeyed.data_seed, 99);
        assert_eq!(rekeyed.partition.seed, 5);
        assert_eq!(rekeyed.wireless.seed, 5);
    }

    #[test]
    fn synthetic_split_shapes() {
        let mut cfg = SimConfig::default();
        cfg.synth =
            SynthConfig { classes: 4, samples_per_class: 30, test_per_class: 10, feature_dim: 6 };
        let (train, test) = resolve_dataset(&cfg).unwrap();
        assert_eq!(train.len(), 120);
        assert_eq!(test.len(), 40);
        assert_eq!(train.feature_dim(), 6);
        assert_eq!(test.num_classes(), 4);
    }

    #[test]
    fn idx_without_data_dir_is_an_error() {
        let mut cfg = SimConfig::default();
        cfg.dataset = DatasetSource::Idx;
        match resolve_dataset(&cfg) {
            Err(Error::ConfigRange { field, .. }) => assert_eq!(field, "data_dir"),
            other => panic!("expected data_dir error, got {other:?}"),
        }
    }

    #[test]
    fn epochs_above_cap_rejected() {
        match parse_config("local_epochs = 9\nlocal_epochs_cap = 3") {
            Err(Error::ConfigRange { field, .. }) => assert_eq!(field, "local_epochs"),
            other => panic!("expected range error, got {other:?}"),
        }
    }
}
