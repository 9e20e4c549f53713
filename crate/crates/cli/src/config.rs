//! Experiment configuration, loadable from TOML with CLI flags on top.

use std::path::{Path, PathBuf};

use curved_label::data::{self, HierarchySpec};
use curved_label::{Dataset, LossKind, MetricConfig};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    Generated(HierarchySpec),
    Csv {
        path: PathBuf,
        #[serde(default)]
        skip_header: bool,
    },
}

/// When the EMA (and, for curved losses, the metric) is refreshed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Cadence {
    Epoch,
    Batch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub train_frac: f64,
    /// Hidden layer widths; input and output widths come from the data.
    pub hidden: Vec<usize>,
    pub loss: LossKind,
    pub metric: MetricConfig,
    pub cadence: Cadence,
    pub lr: f64,
    pub momentum: f64,
    pub epochs: u64,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Generated(HierarchySpec::default()),
            train_frac: 0.8,
            hidden: vec![16],
            loss: LossKind::Ce,
            metric: MetricConfig::default(),
            cadence: Cadence::Epoch,
            lr: 0.05,
            momentum: 0.9,
            epochs: 30,
            batch_size: 32,
            seed: 0,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HarnessError::Validation(format!("config file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            HarnessError::Validation(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialization cannot fail")
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(HarnessError::Validation(msg));
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return invalid(format!("train_frac must lie in (0, 1), got {}", self.train_frac));
        }
        if self.hidden.contains(&0) {
            return invalid("hidden layer widths must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return invalid(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return invalid(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.epochs == 0 {
            return invalid("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return invalid("batch_size must be at least 1".into());
        }
        self.metric.validate()?;
        if let DataSource::Generated(spec) = &self.data {
            spec.validate()?;
        }
        Ok(())
    }

    /// Loads or generates the full dataset.
    pub fn load_data(&self) -> Result<Dataset> {
        let ds = match &self.data {
            DataSource::Generated(spec) => data::generate(spec)?,
            DataSource::Csv { path, skip_header } => data::load_csv(path, *skip_header)
                .map_err(|e| HarnessError::Validation(format!("{}: {e}", path.display())))?,
        };
        if ds.classes() < 2 {
            return Err(HarnessError::Validation(format!(
                "dataset has {} class(es); need at least 2",
                ds.classes()
            )));
        }
        Ok(ds)
    }

    pub fn layer_dims(&self, input_dim: usize, classes: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(input_dim);
        dims.extend_from_slice(&self.hidden);
        dims.push(classes);
        dims
    }

    /// The config with every loss- and metric-related field and the output
    /// location blanked, for checking that two configs form a fair pair.
    pub fn without_loss_settings(&self) -> Self {
        let defaults = Self::default();
        Self {
            loss: defaults.loss,
            metric: defaults.metric,
            cadence: defaults.cadence,
            output_dir: None,
            ..self.clone()
        }
    }
}

/// Flags that override fields of an [`ExperimentConfig`].
#[derive(Debug, Clone, Default, clap::Args)]
pub struct ConfigOverrides {
    /// TOML config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Feature CSV (rows of features then an integer label) instead of generated data.
    #[arg(long)]
    pub data_csv: Option<PathBuf>,
    /// Skip the first line of the feature CSV.
    #[arg(long)]
    pub skip_header: bool,
    #[arg(long)]
    pub n_super: Option<usize>,
    #[arg(long)]
    pub per_super: Option<usize>,
    /// Feature dimension of generated data.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub super_sep: Option<f64>,
    #[arg(long)]
    pub sub_sep: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub n_per_class: Option<usize>,
    #[arg(long)]
    pub data_seed: Option<u64>,
    #[arg(long)]
    pub train_frac: Option<f64>,
    /// Hidden layer widths, comma separated (e.g. 16,8).
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    /// mse, ce, cqe or cce.
    #[arg(long)]
    pub loss: Option<LossKind>,
    /// Scale A mapping effective distance to off-diagonal metric entries.
    #[arg(long)]
    pub scale: Option<f64>,
    /// EMA smoothing factor in (0, 1].
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Cap on off-diagonal metric entries.
    #[arg(long)]
    pub clamp_max: Option<f64>,
    #[arg(long, value_enum)]
    pub cadence: Option<Cadence>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub epochs: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigOverrides {
    /// Config file (or defaults) with flags applied, validated.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        self.apply(&mut cfg)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(path) = &self.data_csv {
            cfg.data = DataSource::Csv {
                path: path.clone(),
                skip_header: self.skip_header,
            };
        } else if self.skip_header {
            match &mut cfg.data {
                DataSource::Csv { skip_header, .. } => *skip_header = true,
                DataSource::Generated(_) => {
                    return Err(HarnessError::Validation(
                        "--skip-header only applies to CSV data".into(),
                    ))
                }
            }
        }
        let generator_flags = [
            self.n_super.is_some(),
            self.per_super.is_some(),
            self.dim.is_some(),
            self.super_sep.is_some(),
            self.sub_sep.is_some(),
            self.noise.is_some(),
            self.n_per_class.is_some(),
            self.data_seed.is_some(),
        ];
        match &mut cfg.data {
            DataSource::Generated(spec) => {
                set(&mut spec.n_super, self.n_super);
                set(&mut spec.per_super, self.per_super);
                set(&mut spec.d, self.dim);
                set(&mut spec.super_sep, self.super_sep);
                set(&mut spec.sub_sep, self.sub_sep);
                set(&mut spec.noise_sigma, self.noise);
                set(&mut spec.n_per_class, self.n_per_class);
                set(&mut spec.seed, self.data_seed);
            }
            DataSource::Csv { .. } if generator_flags.iter().any(|&f| f) => {
                return Err(HarnessError::Validation(
                    "generator flags cannot be combined with CSV data".into(),
                ))
            }
            DataSource::Csv { .. } => {}
        }
        set(&mut cfg.train_frac, self.train_frac);
        set(&mut cfg.hidden, self.hidden.clone());
        set(&mut cfg.loss, self.loss);
        set(&mut cfg.metric.scale, self.scale);
        set(&mut cfg.metric.lambda, self.lambda);
        if self.clamp_max.is_some() {
            cfg.metric.clamp_max = self.clamp_max;
        }
        set(&mut cfg.cadence, self.cadence);
        set(&mut cfg.lr, self.lr);
        set(&mut cfg.momentum, self.momentum);
        set(&mut cfg.epochs, self.epochs);
        set(&mut cfg.batch_size, self.batch_size);
        set(&mut cfg.seed, self.seed);
        Ok(())
    }
}

fn set<T>(field: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *field = v;
    }
}
