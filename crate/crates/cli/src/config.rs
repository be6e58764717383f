//! The configuration file: datasets, preprocessing, split, training and
//! experiment settings. Unknown keys anywhere are rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use ssdl::data::{self, LabeledDataset, PreprocessStep, SplitSpec};
use ssdl::eval::{BenchmarkConfig, LaplacianComparisonConfig, SweepConfig};
use ssdl::trainer::TrainConfig;

/// Environment variable naming the directory relative dataset paths are
/// resolved against.
pub const DATA_DIR_VAR: &str = "SSDL_DATA_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Text table, one sample per row.
    Delimited {
        path: PathBuf,
        #[serde(default)]
        label_column: usize,
        /// Cell separator; whitespace when absent.
        #[serde(default)]
        delimiter: Option<char>,
    },
    /// IDX image and label files.
    Idx { images: PathBuf, labels: PathBuf },
}

impl DatasetConfig {
    pub fn load(&self) -> Result<LabeledDataset> {
        let ds = match self {
            DatasetConfig::Delimited {
                path,
                label_column,
                delimiter,
            } => data::load_delimited(resolve(path), *label_column, *delimiter)?,
            DatasetConfig::Idx { images, labels } => data::load_idx(resolve(images), resolve(labels))?,
        };
        Ok(ds)
    }
}

/// Relative paths are taken from the data directory when it is set.
pub fn resolve(path: &Path) -> PathBuf {
    match std::env::var_os(DATA_DIR_VAR) {
        Some(dir) if path.is_relative() => PathBuf::from(dir).join(path),
        _ => path.to_owned(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub model: Option<PathBuf>,
    /// Per-iteration objective log of `train`; defaults to the model path
    /// with `.log.csv` appended.
    pub log: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
}

fn default_noise_levels() -> Vec<f64> {
    vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub laplacian: LaplacianComparisonConfig,
    /// Noise amplitudes of `noise-sweep`, which otherwise runs the
    /// `laplacian` settings.
    pub noise_levels: Vec<f64>,
    pub sweep: SweepConfig,
    pub benchmark: BenchmarkConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            laplacian: LaplacianComparisonConfig::default(),
            noise_levels: default_noise_levels(),
            sweep: SweepConfig::default(),
            benchmark: BenchmarkConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    /// Training data, or the sample pool of sweeps and benchmarks.
    pub dataset: Option<DatasetConfig>,
    /// Held-out data of the Laplacian comparison; pooled with `dataset` for
    /// sweeps and benchmarks.
    pub test_dataset: Option<DatasetConfig>,
    pub preprocess: Vec<PreprocessStep>,
    pub split: SplitSpec,
    pub train: TrainConfig,
    pub experiment: ExperimentConfig,
    pub output: OutputConfig,
    /// 0 silent, 1 progress on stderr, 2 per-iteration detail.
    pub verbosity: u8,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            dataset: None,
            test_dataset: None,
            preprocess: Vec::new(),
            split: SplitSpec {
                labelled_per_class: 20,
                unlabelled_per_class: 40,
                test_per_class: 50,
                seed: 0,
            },
            train: TrainConfig::default(),
            experiment: ExperimentConfig::default(),
            output: OutputConfig::default(),
            verbosity: 1,
        }
    }
}

impl CliConfig {
    /// Reads TOML, or JSON when the file name ends in `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let config: CliConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?
        } else {
            toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?
        };
        Ok(config)
    }

    /// Replaces every seed with `seed`.
    pub fn override_seed(&mut self, seed: u64) {
        self.split.seed = seed;
        self.train.seed = seed;
        self.experiment.laplacian.seed = seed;
        self.experiment.sweep.seed = seed;
        self.experiment.benchmark.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.experiment.sweep.train.validate()?;
        self.experiment.benchmark.train.validate()?;
        self.experiment.laplacian.fista.validate()?;
        for step in &self.preprocess {
            if let PreprocessStep::Scale(f) = step {
                if !f.is_finite() {
                    bail!("scale factor must be finite, got {f}");
                }
            }
        }
        if self.experiment.noise_levels.iter().chain(&self.experiment.laplacian.noise_levels).any(|s| !(*s >= 0.0)) {
            bail!("noise levels must be nonnegative");
        }
        Ok(())
    }

    pub fn dataset(&self) -> Result<&DatasetConfig> {
        self.dataset.as_ref().context("the config has no [dataset] section")
    }

    /// Loads and preprocesses a dataset.
    pub fn load_prepared(&self, which: &DatasetConfig) -> Result<LabeledDataset> {
        let mut ds = which.load()?;
        data::preprocess(&mut ds.x, &self.preprocess);
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected_everywhere() {
        for text in [
            "bogus = 1",
            "[train]\nbogus = 1",
            "[train.hp]\nlamda = 0.1",
            "[experiment.benchmark]\nreps = 3",
            "[dataset]\nformat = \"delimited\"\npath = \"a\"\nextra = 1",
            "[split]\nlabelled_per_class = 1\nunlabelled_per_class = 1\ntest_per_class = 1\nfoo = 2",
        ] {
            assert!(toml::from_str::<CliConfig>(text).is_err(), "{text}");
        }
    }

    #[test]
    fn partial_config_keeps_defaults() {
        let c: CliConfig = toml::from_str("[train.hp]\nlambda = 0.5").unwrap();
        assert_eq!(c.train.hp.lambda, 0.5);
        assert_eq!(c.train.hp.atoms, 200);
        assert_eq!(c.train.hp.r, 1.7);
        assert_eq!(c.experiment.noise_levels, default_noise_levels());
    }

    #[test]
    fn json_and_toml_agree() {
        let dir = tempfile::tempdir().unwrap();
        let toml_path = dir.path().join("c.toml");
        let json_path = dir.path().join("c.json");
        std::fs::write(
            &toml_path,
            "preprocess = [{ op = \"l2-normalize-columns\" }, { op = \"scale\", factor = 5.0 }]\n\
             [dataset]\nformat = \"idx\"\nimages = \"i\"\nlabels = \"l\"\n",
        )
        .unwrap();
        std::fs::write(
            &json_path,
            r#"{"preprocess": [{"op": "l2-normalize-columns"}, {"op": "scale", "factor": 5.0}],
                "dataset": {"format": "idx", "images": "i", "labels": "l"}}"#,
        )
        .unwrap();
        assert_eq!(CliConfig::load(&toml_path).unwrap(), CliConfig::load(&json_path).unwrap());
    }

    #[test]
    fn seed_override_reaches_every_stage() {
        let mut c = CliConfig::default();
        c.override_seed(42);
        assert_eq!(
            [c.split.seed, c.train.seed, c.experiment.laplacian.seed, c.experiment.sweep.seed, c.experiment.benchmark.seed],
            [42; 5]
        );
    }
}
