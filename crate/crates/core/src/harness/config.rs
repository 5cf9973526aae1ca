use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::data::DatasetSpec;
use crate::metrics::BaseRate;
use crate::nn::Activation;
use crate::objectives::{DEFAULT_CLASSIFIER_LAMBDA, DEFAULT_TOKEN_LAMBDA};
use crate::scoring::DetectorKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineKind {
    /// Train without outliers and evaluate.
    BaselineOnly,
    /// Train without outliers, evaluate, then fine-tune with outlier exposure
    /// and evaluate again.
    FinetuneOe,
    /// Train with outlier exposure from the first step.
    ScratchOe,
}

/// Outlier-exposure objective for density models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DensityObjective {
    #[default]
    Margin,
    TokenUniformCe,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions { train: 0.6, val: 0.15 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

fn detectors_de<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Vec<DetectorKind>, D::Error> {
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(x) => vec![x],
        OneOrMany::Many(v) => v,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub d_in: DatasetSpec,
    pub d_out_oe: DatasetSpec,
    pub d_out_test: Vec<DatasetSpec>,
    #[serde(default)]
    pub d_out_val: Vec<DatasetSpec>,
    /// One detector or a list; `detector` is accepted as an alias.
    #[serde(alias = "detector", deserialize_with = "detectors_de")]
    pub detectors: Vec<DetectorKind>,
    pub pipeline: PipelineKind,
    /// Outlier-exposure weight; each objective has its own default.
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Candidate weights selected by mean validation-outlier AUROC.
    #[serde(default)]
    pub lambda_grid: Vec<f64>,
    /// Hinge margin in nats for the density objective.
    #[serde(default = "default_margin")]
    pub margin: f64,
    /// Weight of the in-distribution likelihood term in density objectives.
    #[serde(default = "default_mle_weight")]
    pub mle_weight: f64,
    #[serde(default)]
    pub density_objective: DensityObjective,
    pub seeds: Vec<u64>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_finetune_epochs")]
    pub finetune_epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_finetune_lr")]
    pub finetune_lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_oe_batch")]
    pub oe_batch_size: usize,
    #[serde(default)]
    pub base_rate: BaseRate,
    #[serde(default = "default_n_level")]
    pub n_level: f64,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    /// Context window of density models.
    #[serde(default = "default_context")]
    pub context: usize,
    #[serde(default)]
    pub split: SplitFractions,
    #[serde(default)]
    pub calibration: bool,
    /// Write per-example score files.
    #[serde(default = "yes")]
    pub write_scores: bool,
    /// Write ROC and PR curve point files.
    #[serde(default = "yes")]
    pub write_curves: bool,
}

fn default_name() -> String {
    "experiment".into()
}
fn default_margin() -> f64 {
    1.0
}
fn default_mle_weight() -> f64 {
    1.0
}
fn default_epochs() -> usize {
    20
}
fn default_finetune_epochs() -> usize {
    10
}
fn default_lr() -> f64 {
    0.1
}
fn default_finetune_lr() -> f64 {
    1e-3
}
fn default_momentum() -> f64 {
    0.9
}
fn default_weight_decay() -> f64 {
    5e-4
}
fn default_batch() -> usize {
    64
}
fn default_oe_batch() -> usize {
    128
}
fn default_n_level() -> f64 {
    95.0
}
fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}
fn default_activation() -> Activation {
    Activation::Relu
}
fn default_context() -> usize {
    3
}
fn yes() -> bool {
    true
}

/// Which model family a detector reads from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    /// Softmax classifier trained with cross-entropy (MSP and uniform-CE scores).
    Softmax,
    /// Classifier with a confidence branch.
    Branch,
    Density,
}

impl ModelFamily {
    pub fn of(d: DetectorKind) -> ModelFamily {
        match d {
            DetectorKind::Msp | DetectorKind::UniformCe => ModelFamily::Softmax,
            DetectorKind::ConfidenceBranch => ModelFamily::Branch,
            DetectorKind::DensityBpp => ModelFamily::Density,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelFamily::Softmax => "softmax",
            ModelFamily::Branch => "branch",
            ModelFamily::Density => "density",
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    /// Model families in a fixed order, deduplicated.
    pub fn families(&self) -> Vec<ModelFamily> {
        let mut f: Vec<ModelFamily> = self.detectors.iter().map(|&d| ModelFamily::of(d)).collect();
        f.sort();
        f.dedup();
        f
    }

    pub fn lambda_for(&self, family: ModelFamily) -> f64 {
        self.lambda.unwrap_or(match (family, self.density_objective) {
            (ModelFamily::Density, DensityObjective::Margin) => 1.0,
            (ModelFamily::Density, DensityObjective::TokenUniformCe) => DEFAULT_TOKEN_LAMBDA,
            _ => DEFAULT_CLASSIFIER_LAMBDA,
        })
    }

    /// Weights to try, in order; a single entry means no selection.
    pub fn lambda_candidates(&self, family: ModelFamily) -> Vec<f64> {
        if self.lambda_grid.is_empty() || self.pipeline == PipelineKind::BaselineOnly {
            vec![self.lambda_for(family)]
        } else {
            self.lambda_grid.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.detectors.is_empty() {
            return Err(Error::config("at least one detector is required"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        if self.d_out_test.is_empty() {
            return Err(Error::config("at least one d_out_test dataset is required"));
        }
        let families = self.families();
        if families.contains(&ModelFamily::Density) && families.len() > 1 {
            return Err(Error::config(
                "density and classifier detectors cannot share an experiment",
            ));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.oe_batch_size == 0 {
            return Err(Error::config("epochs and batch sizes must be positive"));
        }
        if self.pipeline == PipelineKind::FinetuneOe && self.finetune_epochs == 0 {
            return Err(Error::config("finetune_oe needs finetune_epochs > 0"));
        }
        for (what, v) in [("lr", self.lr), ("finetune_lr", self.finetune_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{what} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(Error::config("momentum must be in [0, 1) and weight_decay nonnegative"));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) || !(self.mle_weight >= 0.0 && self.mle_weight.is_finite())
        {
            return Err(Error::config("margin and mle_weight must be finite and nonnegative"));
        }
        if !(self.n_level > 0.0 && self.n_level <= 100.0) {
            return Err(Error::config("n_level must be in (0, 100]"));
        }
        if self.base_rate.out == 0 || self.base_rate.inl == 0 {
            return Err(Error::config("base_rate parts must be positive"));
        }
        if let Some(l) = self
            .lambda
            .iter()
            .chain(&self.lambda_grid)
            .find(|l| !(**l >= 0.0 && l.is_finite()))
        {
            return Err(Error::config(format!("lambda must be finite and nonnegative, got {l}")));
        }
        if !self.lambda_grid.is_empty() && self.d_out_val.is_empty() {
            return Err(Error::config("lambda_grid needs d_out_val datasets to select against"));
        }
        let mut names: Vec<&str> = Vec::new();
        for spec in std::iter::once(&self.d_in)
            .chain(std::iter::once(&self.d_out_oe))
            .chain(&self.d_out_test)
            .chain(&self.d_out_val)
        {
            if names.contains(&spec.name.as_str()) {
                return Err(Error::config(format!("dataset name '{}' is used twice", spec.name)));
            }
            names.push(&spec.name);
        }
        Ok(())
    }
}
