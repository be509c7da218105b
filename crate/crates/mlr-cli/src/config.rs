//! The run configuration document (TOML). Unknown keys are rejected
//! everywhere; defaults follow the reference experimental setup.

use std::path::{Path, PathBuf};

use mlr_core::cae::{Precision, TrainConfig};
use mlr_core::logreg::LogRegConfig;
use mlr_core::optim::AdamParams;
use mlr_core::pipeline::Modality;
use serde::Deserialize;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// 32 or 64; numeric mode recorded with every artifact.
    #[serde(default = "default_precision")]
    pub precision: u32,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub labels: LabelConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub classifier: ClassifierSection,
    #[serde(default)]
    pub ablate: AblateSection,
    #[serde(default)]
    pub synth: SynthSection,
}

fn default_precision() -> u32 {
    64
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default)]
    pub datasets: Vec<DatasetRef>,
    /// Datasets whose train/val splits feed autoencoder pretraining.
    #[serde(default)]
    pub train_on: Vec<String>,
    /// Dataset used for downstream classifier training and evaluation.
    #[serde(default)]
    pub eval_on: Option<String>,
    #[serde(default = "default_modalities")]
    pub modalities: Vec<String>,
    /// Per-split utterance cap for smoke runs; 0 = no cap.
    #[serde(default)]
    pub limit: usize,
}

fn default_modalities() -> Vec<String> {
    vec!["audio".into(), "vision".into(), "text".into()]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRef {
    pub name: String,
    pub dir: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelConfig {
    /// "sentiment" or "emotions".
    #[serde(default = "default_task")]
    pub task: String,
    /// Sentiment positivity rule: "gt" (> 0) or "ge" (>= 0).
    #[serde(default = "default_rule")]
    pub positive_rule: String,
    /// Drop sentiment == 0 utterances from classifier training and scoring.
    #[serde(default)]
    pub exclude_neutral: bool,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_task() -> String {
    "sentiment".into()
}

fn default_rule() -> String {
    "gt".into()
}

fn default_threshold() -> f64 {
    0.5
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            task: default_task(),
            positive_rule: default_rule(),
            exclude_neutral: false,
            threshold: default_threshold(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_epochs")]
    pub max_epochs: usize,
    #[serde(default = "d_patience")]
    pub early_stop_patience: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_init_std")]
    pub init_std: f64,
    #[serde(default = "d_momentum")]
    pub bn_momentum: f64,
    #[serde(default)]
    pub full_batchnorm: bool,
    #[serde(default)]
    pub adam: AdamSection,
    #[serde(default)]
    pub scheduler: SchedulerSection,
}

fn d_batch() -> usize {
    128
}
fn d_epochs() -> usize {
    200
}
fn d_patience() -> usize {
    10
}
fn d_lr() -> f64 {
    0.002
}
fn d_init_std() -> f64 {
    0.02
}
fn d_momentum() -> f64 {
    0.1
}

impl Default for TrainSection {
    fn default() -> Self {
        toml::from_str("").expect("empty section uses defaults")
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamSection {
    #[serde(default = "d_beta1")]
    pub beta1: f64,
    #[serde(default = "d_beta2")]
    pub beta2: f64,
    #[serde(default = "d_eps")]
    pub epsilon: f64,
}

fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.999
}
fn d_eps() -> f64 {
    1e-8
}

impl Default for AdamSection {
    fn default() -> Self {
        AdamSection {
            beta1: d_beta1(),
            beta2: d_beta2(),
            epsilon: d_eps(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerSection {
    #[serde(default = "d_factor")]
    pub factor: f64,
    #[serde(default = "d_sched_patience")]
    pub patience: usize,
    #[serde(default = "d_rel_threshold")]
    pub rel_threshold: f64,
    #[serde(default = "d_min_lr")]
    pub min_lr: f64,
}

fn d_factor() -> f64 {
    0.5
}
fn d_sched_patience() -> usize {
    5
}
fn d_rel_threshold() -> f64 {
    1e-4
}
fn d_min_lr() -> f64 {
    1e-5
}

impl Default for SchedulerSection {
    fn default() -> Self {
        SchedulerSection {
            factor: d_factor(),
            patience: d_sched_patience(),
            rel_threshold: d_rel_threshold(),
            min_lr: d_min_lr(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSection {
    #[serde(default = "d_l2")]
    pub l2: f64,
    #[serde(default = "d_max_iter")]
    pub max_iter: usize,
    #[serde(default = "d_tol")]
    pub tol: f64,
}

fn d_l2() -> f64 {
    1.0
}
fn d_max_iter() -> usize {
    1000
}
fn d_tol() -> f64 {
    1e-6
}

impl Default for ClassifierSection {
    fn default() -> Self {
        ClassifierSection {
            l2: d_l2(),
            max_iter: d_max_iter(),
            tol: d_tol(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AblateSection {
    #[serde(default)]
    pub modality_subsets: Vec<Vec<String>>,
    #[serde(default)]
    pub dataset_combinations: Vec<Vec<String>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    #[serde(default = "d_n_utt")]
    pub n_utterances: usize,
    #[serde(default = "d_classes")]
    pub class_count: usize,
    #[serde(default = "d_noise")]
    pub noise_std: f64,
    #[serde(default = "d_feature_noise")]
    pub feature_noise_std: f64,
    #[serde(default = "d_widths")]
    pub widths: Vec<usize>,
    #[serde(default = "default_modalities")]
    pub signal_blocks: Vec<String>,
    #[serde(default = "d_timesteps")]
    pub timesteps: usize,
    #[serde(default = "d_name")]
    pub name: String,
}

fn d_n_utt() -> usize {
    2000
}
fn d_classes() -> usize {
    2
}
fn d_noise() -> f64 {
    1.1
}
fn d_feature_noise() -> f64 {
    0.3
}
fn d_widths() -> Vec<usize> {
    vec![74, 35, 300]
}
fn d_timesteps() -> usize {
    20
}
fn d_name() -> String {
    "synth".into()
}

impl Default for SynthSection {
    fn default() -> Self {
        toml::from_str("").expect("empty section uses defaults")
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.display()),
            ))
        })?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.precision != 32 && self.precision != 64 {
            return Err(CliError::Config(format!(
                "precision must be 32 or 64, got {}",
                self.precision
            )));
        }
        if !matches!(self.labels.task.as_str(), "sentiment" | "emotions") {
            return Err(CliError::Config(format!(
                "labels.task must be 'sentiment' or 'emotions', got '{}'",
                self.labels.task
            )));
        }
        if !matches!(self.labels.positive_rule.as_str(), "gt" | "ge") {
            return Err(CliError::Config(format!(
                "labels.positive_rule must be 'gt' or 'ge', got '{}'",
                self.labels.positive_rule
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for d in &self.data.datasets {
            if !seen.insert(&d.name) {
                return Err(CliError::Config(format!("duplicate dataset name '{}'", d.name)));
            }
        }
        for name in &self.data.train_on {
            self.dataset_ref(name)?;
        }
        if let Some(name) = &self.data.eval_on {
            self.dataset_ref(name)?;
        }
        self.parse_modalities(&self.data.modalities)?;
        Ok(())
    }

    pub fn dataset_ref(&self, name: &str) -> Result<&DatasetRef> {
        self.data
            .datasets
            .iter()
            .find(|d| d.name == name)
            .ok_or_else(|| CliError::Config(format!("dataset '{name}' is not declared")))
    }

    pub fn parse_modalities(&self, names: &[String]) -> Result<Vec<Modality>> {
        if names.is_empty() {
            return Err(CliError::Config("modality list is empty".into()));
        }
        let mut out = Vec::new();
        for n in names {
            let m = Modality::parse(n).map_err(|e| CliError::Config(e.to_string()))?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        Ok(out)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.train.batch_size,
            max_epochs: self.train.max_epochs,
            early_stop_patience: self.train.early_stop_patience,
            adam: AdamParams {
                lr: self.train.lr,
                beta1: self.train.adam.beta1,
                beta2: self.train.adam.beta2,
                epsilon: self.train.adam.epsilon,
            },
            scheduler_factor: self.train.scheduler.factor,
            scheduler_patience: self.train.scheduler.patience,
            scheduler_rel_threshold: self.train.scheduler.rel_threshold,
            min_lr: self.train.scheduler.min_lr,
            init_std: self.train.init_std,
            seed: self.seed,
            precision: if self.precision == 32 {
                Precision::Bits32
            } else {
                Precision::Bits64
            },
        }
    }

    pub fn logreg_config(&self) -> LogRegConfig {
        LogRegConfig {
            l2: self.classifier.l2,
            max_iter: self.classifier.max_iter,
            tol: self.classifier.tol,
            seed: self.seed,
        }
    }
}
