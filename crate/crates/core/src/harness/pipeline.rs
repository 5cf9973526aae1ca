//! Per-seed training and evaluation.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::{self, CalibrationReport};
use crate::density::{self, ArModel};
use crate::error::{Error, Result};
use crate::harness::config::{DensityObjective, ExperimentConfig, ModelFamily, PipelineKind};
use crate::harness::data::{ingest_dataset, split_dataset, Dataset, DatasetSpec};
use crate::metrics::{self, BaseRate};
use crate::nn::{self, Batch, NetworkParams, SgdConfig, TrainSettings};
use crate::objectives::ObjectiveSpec;
use crate::scoring::{self, DataRef, DetectorKind, ModelRef, ScoredSet};

/// Stable per-purpose seed: FNV-1a over `tag`, mixed with `seed`.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes().chain(seed.to_le_bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Every dataset one seed needs, with the in-distribution data split.
#[derive(Debug, Clone)]
pub struct SeedData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub oe: Dataset,
    pub tests: Vec<(String, Dataset)>,
    pub vals: Vec<(String, Dataset)>,
}

fn ingest_all(specs: &[DatasetSpec], train: &Dataset, seed: u64) -> Result<Vec<(String, Dataset)>> {
    specs
        .iter()
        .map(|s| {
            Ok((
                s.name.clone(),
                ingest_dataset(s, Some(train), derive_seed(seed, &s.name))?,
            ))
        })
        .collect()
}

/// Builds the datasets for `seed` and refuses to continue when the outlier
/// exposure set shares a row with any test outlier set.
pub fn prepare_data(cfg: &ExperimentConfig, seed: u64) -> Result<SeedData> {
    let full = ingest_dataset(&cfg.d_in, None, derive_seed(seed, &cfg.d_in.name))?;
    let (train, val, test) = split_dataset(&full, cfg.split.train, cfg.split.val, derive_seed(seed, "split"))?;
    let oe = ingest_dataset(&cfg.d_out_oe, Some(&train), derive_seed(seed, &cfg.d_out_oe.name))?;
    let tests = ingest_all(&cfg.d_out_test, &train, seed)?;
    let vals = ingest_all(&cfg.d_out_val, &train, seed)?;
    for (name, ds) in &tests {
        if *name == cfg.d_out_oe.name {
            return Err(Error::config(format!(
                "outlier exposure set '{name}' is also a test set"
            )));
        }
        if let Some((i, j)) = oe.find_duplicate(ds) {
            return Err(Error::config(format!(
                "outlier exposure set '{}' row {} duplicates test set '{name}' row {}",
                cfg.d_out_oe.name,
                i + 1,
                j + 1
            )));
        }
    }
    Ok(SeedData {
        train,
        val,
        test,
        oe,
        tests,
        vals,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Classifier(NetworkParams),
    Density(ArModel),
}

impl TrainedModel {
    pub fn as_ref(&self) -> ModelRef<'_> {
        match self {
            TrainedModel::Classifier(p) => ModelRef::Classifier(p),
            TrainedModel::Density(m) => ModelRef::Density(m),
        }
    }
}

fn settings(cfg: &ExperimentConfig, epochs: usize, lr: f64, seed: u64) -> TrainSettings {
    TrainSettings {
        epochs,
        batch_size: cfg.batch_size,
        oe_batch_size: cfg.oe_batch_size,
        sgd: SgdConfig {
            lr0: lr,
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
        },
        seed,
    }
}

fn classifier_data(train: &Dataset) -> Result<(Batch, usize)> {
    let (x, labels) = train.features()?;
    let labels = labels.ok_or_else(|| Error::config("classifier training needs a labeled d_in"))?;
    let k = labels.iter().max().map_or(0, |m| m + 1);
    if k < 2 {
        return Err(Error::config("classifier training needs at least two classes"));
    }
    Ok((Batch::new(x.clone(), Some(labels.to_vec()))?, k))
}

fn alphabet_of(ds: &Dataset) -> Result<usize> {
    ds.sequences()?
        .first()
        .map(|s| s.alphabet())
        .ok_or_else(|| Error::input("empty sequence dataset"))
}

fn objective(cfg: &ExperimentConfig, family: ModelFamily, lambda: f64) -> ObjectiveSpec {
    match family {
        ModelFamily::Softmax if lambda == 0.0 => ObjectiveSpec::plain_ce(),
        ModelFamily::Softmax => ObjectiveSpec::multiclass_oe(lambda),
        ModelFamily::Branch => ObjectiveSpec::confidence_branch_oe(lambda),
        ModelFamily::Density => ObjectiveSpec {
            mle_weight: cfg.mle_weight,
            ..match cfg.density_objective {
                DensityObjective::Margin => ObjectiveSpec::density_margin(lambda, cfg.margin),
                DensityObjective::TokenUniformCe => ObjectiveSpec::token_uniform_ce(lambda),
            }
        },
    }
}

fn fresh_model(cfg: &ExperimentConfig, family: ModelFamily, data: &SeedData, seed: u64) -> Result<TrainedModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "init"));
    Ok(match family {
        ModelFamily::Density => TrainedModel::Density(ArModel::new(
            cfg.context,
            alphabet_of(&data.train)?,
            &cfg.hidden,
            cfg.activation,
            &mut rng,
        )?),
        _ => {
            let (batch, k) = classifier_data(&data.train)?;
            let mut dims = vec![batch.inputs.cols()];
            dims.extend_from_slice(&cfg.hidden);
            dims.push(k);
            TrainedModel::Classifier(NetworkParams::init(
                &dims,
                cfg.activation,
                family == ModelFamily::Branch,
                &mut rng,
            )?)
        }
    })
}

/// Trains `model` in place with outlier weight `lambda` (0 disables the
/// outlier term).
fn train_model(
    model: &mut TrainedModel,
    cfg: &ExperimentConfig,
    family: ModelFamily,
    data: &SeedData,
    lambda: f64,
    s: &TrainSettings,
) -> Result<()> {
    let obj = objective(cfg, family, lambda);
    match model {
        TrainedModel::Classifier(p) => {
            let (batch, _) = classifier_data(&data.train)?;
            let oe = data.oe.features()?.0;
            nn::train_classifier(p, &batch, Some(oe), &obj, s)?;
        }
        TrainedModel::Density(m) => {
            let train = data.train.sequences()?;
            if lambda == 0.0 {
                density::train_density(m, train, s)?;
            } else {
                density::finetune_density_oe(m, train, data.oe.sequences()?, &obj, s)?;
            }
        }
    }
    Ok(())
}

/// Baseline training without outliers.
pub fn train_baseline(cfg: &ExperimentConfig, family: ModelFamily, data: &SeedData, seed: u64) -> Result<TrainedModel> {
    let mut model = fresh_model(cfg, family, data, seed)?;
    let s = settings(cfg, cfg.epochs, cfg.lr, derive_seed(seed, "baseline"));
    train_model(&mut model, cfg, family, data, 0.0, &s)?;
    Ok(model)
}

/// Outlier-exposure fine-tuning of a trained model.
pub fn finetune_oe(
    cfg: &ExperimentConfig,
    family: ModelFamily,
    model: &TrainedModel,
    data: &SeedData,
    lambda: f64,
    seed: u64,
) -> Result<TrainedModel> {
    let mut tuned = model.clone();
    let s = settings(cfg, cfg.finetune_epochs, cfg.finetune_lr, derive_seed(seed, "finetune"));
    train_model(&mut tuned, cfg, family, data, lambda, &s)?;
    Ok(tuned)
}

/// Training with outlier exposure from initialization.
pub fn train_scratch_oe(
    cfg: &ExperimentConfig,
    family: ModelFamily,
    data: &SeedData,
    lambda: f64,
    seed: u64,
) -> Result<TrainedModel> {
    let mut model = fresh_model(cfg, family, data, seed)?;
    let s = settings(cfg, cfg.epochs, cfg.lr, derive_seed(seed, "scratch"));
    train_model(&mut model, cfg, family, data, lambda, &s)?;
    Ok(model)
}

fn data_ref(ds: &Dataset) -> DataRef<'_> {
    match ds {
        Dataset::Features { x, .. } => DataRef::Features(x),
        Dataset::Sequences(s) => DataRef::Sequences(s),
    }
}

/// One detection result row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub seed: u64,
    pub d_in: String,
    pub d_out: String,
    pub detector: DetectorKind,
    pub model: String,
    pub split: String,
    pub lambda: f64,
    pub auroc: f64,
    pub aupr: f64,
    pub fpr_at_n: f64,
    pub n_level: f64,
    pub base_rate: BaseRate,
}

/// Scores behind a result row, kept for score and curve files.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRow {
    pub row: ResultRow,
    pub scores: ScoredSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub seed: u64,
    pub d_out: String,
    pub model: String,
    pub method: String,
    pub report: CalibrationReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub rows: Vec<ScoredRow>,
    pub calibration: Vec<CalibrationRow>,
    pub selected_lambda: BTreeMap<String, f64>,
}

/// In-distribution test scores against each outlier set at the configured
/// base rate.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    cfg: &ExperimentConfig,
    model: &TrainedModel,
    label: &str,
    lambda: f64,
    in_data: &Dataset,
    outliers: &[(String, Dataset)],
    split: &str,
    seed: u64,
) -> Result<Vec<ScoredRow>> {
    let mut rows = Vec::new();
    for &detector in &cfg.detectors {
        let in_pool = scoring::score_dataset(model.as_ref(), detector, data_ref(in_data))?;
        for (name, ds) in outliers {
            let out_pool = scoring::score_dataset(model.as_ref(), detector, data_ref(ds))?;
            let scores = metrics::enforce_base_rate(
                &in_pool,
                &out_pool,
                cfg.base_rate,
                derive_seed(seed, &format!("rate/{split}/{name}")),
            )?;
            let r = metrics::detection_report(&scores, cfg.n_level, cfg.base_rate)?;
            rows.push(ScoredRow {
                row: ResultRow {
                    seed,
                    d_in: cfg.d_in.name.clone(),
                    d_out: name.clone(),
                    detector,
                    model: label.to_string(),
                    split: split.to_string(),
                    lambda,
                    auroc: r.auroc,
                    aupr: r.aupr,
                    fpr_at_n: r.fpr_at_n,
                    n_level: r.n_level,
                    base_rate: r.base_rate,
                },
                scores,
            });
        }
    }
    Ok(rows)
}

fn mean_val_auroc(
    cfg: &ExperimentConfig,
    family: ModelFamily,
    model: &TrainedModel,
    data: &SeedData,
    seed: u64,
) -> Result<f64> {
    let detector = *cfg
        .detectors
        .iter()
        .find(|&&d| ModelFamily::of(d) == family)
        .expect("family comes from a detector");
    let sub = ExperimentConfig {
        detectors: vec![detector],
        ..cfg.clone()
    };
    let rows = evaluate(&sub, model, "selection", 0.0, &data.val, &data.vals, "val", seed)?;
    Ok(rows.iter().map(|r| r.row.auroc).sum::<f64>() / rows.len() as f64)
}

/// Calibration of a classifier on equal counts of in-distribution and
/// outlier test examples. The temperature is fit on in-distribution
/// validation data only.
pub fn calibrate_model(
    params: &NetworkParams,
    family: ModelFamily,
    label: &str,
    data: &SeedData,
    seed: u64,
) -> Result<Vec<CalibrationRow>> {
    let (in_x, in_labels) = data.test.features()?;
    let in_labels = in_labels.ok_or_else(|| Error::config("calibration needs labeled d_in"))?;
    let k = params.output_dim();
    let mut out = Vec::new();
    let row = |d_out: &str, method: &str, report| CalibrationRow {
        seed,
        d_out: d_out.to_string(),
        model: label.to_string(),
        method: method.to_string(),
        report,
    };
    match family {
        ModelFamily::Softmax => {
            let (val_x, val_labels) = data.val.features()?;
            let val_labels = val_labels.ok_or_else(|| Error::config("calibration needs labeled d_in"))?;
            let t = calibration::tune_temperature(nn::forward(params, val_x)?.logits(), val_labels)?;
            let in_conf = calibration::softmax_confidences(nn::forward(params, in_x)?.logits(), t)?;
            let correct: Vec<bool> = in_conf.iter().zip(in_labels).map(|(c, &y)| c.1 == y).collect();
            for (name, ds) in &data.tests {
                let ood = calibration::softmax_confidences(nn::forward(params, ds.features()?.0)?.logits(), t)?;
                for rescale in [false, true] {
                    let map = |p: f64| {
                        if rescale {
                            calibration::posterior_rescale(p, k)
                        } else {
                            Ok(p)
                        }
                    };
                    let a = in_conf.iter().map(|c| map(c.0)).collect::<Result<Vec<_>>>()?;
                    let b = ood.iter().map(|c| map(c.0)).collect::<Result<Vec<_>>>()?;
                    let records = calibration::mixed_records(&a, &correct, &b)?;
                    let method = if rescale { "temperature_rescaled" } else { "temperature" };
                    out.push(row(
                        name,
                        method,
                        calibration::calibration_report(&records, t, rescale)?,
                    ));
                }
            }
        }
        ModelFamily::Branch => {
            let pass = nn::forward(params, in_x)?;
            let conf = pass.branch_probs().expect("branch family has a branch head");
            let pred = calibration::softmax_confidences(pass.logits(), 1.0)?;
            let correct: Vec<bool> = pred.iter().zip(in_labels).map(|(c, &y)| c.1 == y).collect();
            for (name, ds) in &data.tests {
                let ood = nn::forward(params, ds.features()?.0)?
                    .branch_probs()
                    .expect("branch head");
                let records = calibration::mixed_records(&conf, &correct, &ood)?;
                out.push(row(
                    name,
                    "branch",
                    calibration::calibration_report(&records, 1.0, false)?,
                ));
            }
        }
        ModelFamily::Density => return Err(Error::config("calibration applies to classifiers only")),
    }
    Ok(out)
}

fn model_label(pipeline: PipelineKind) -> &'static str {
    match pipeline {
        PipelineKind::BaselineOnly => "baseline",
        PipelineKind::FinetuneOe => "oe",
        PipelineKind::ScratchOe => "oe_scratch",
    }
}

/// Runs the configured pipeline for one seed.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedResult> {
    let data = prepare_data(cfg, seed)?;
    let mut result = SeedResult {
        seed,
        rows: Vec::new(),
        calibration: Vec::new(),
        selected_lambda: BTreeMap::new(),
    };
    for family in cfg.families() {
        let sub = ExperimentConfig {
            detectors: cfg
                .detectors
                .iter()
                .copied()
                .filter(|&d| ModelFamily::of(d) == family)
                .collect(),
            ..cfg.clone()
        };
        let mut evaluated: Vec<(&str, f64, TrainedModel)> = Vec::new();
        let baseline = match cfg.pipeline {
            PipelineKind::ScratchOe => None,
            _ => Some(train_baseline(&sub, family, &data, seed)?),
        };
        if let Some(b) = &baseline {
            evaluated.push(("baseline", 0.0, b.clone()));
        }
        if cfg.pipeline != PipelineKind::BaselineOnly {
            let candidates = cfg.lambda_candidates(family);
            let mut best: Option<(f64, f64, TrainedModel)> = None;
            for &lambda in &candidates {
                let model = match &baseline {
                    Some(b) => finetune_oe(&sub, family, b, &data, lambda, seed)?,
                    None => train_scratch_oe(&sub, family, &data, lambda, seed)?,
                };
                let score = if candidates.len() > 1 {
                    mean_val_auroc(&sub, family, &model, &data, seed)?
                } else {
                    0.0
                };
                if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
                    best = Some((score, lambda, model));
                }
            }
            let (_, lambda, model) = best.expect("at least one candidate");
            result.selected_lambda.insert(family.name().to_string(), lambda);
            evaluated.push((model_label(cfg.pipeline), lambda, model));
        }
        for (label, lambda, model) in &evaluated {
            result.rows.extend(evaluate(
                &sub,
                model,
                label,
                *lambda,
                &data.test,
                &data.tests,
                "test",
                seed,
            )?);
            if !data.vals.is_empty() {
                result.rows.extend(evaluate(
                    &sub, model, label, *lambda, &data.val, &data.vals, "val", seed,
                )?);
            }
            if cfg.calibration {
                if let TrainedModel::Classifier(p) = model {
                    result
                        .calibration
                        .extend(calibrate_model(p, family, label, &data, seed)?);
                }
            }
        }
    }
    Ok(result)
}

/// Metadata stored next to a model's parameter file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub family: ModelFamily,
    #[serde(default)]
    pub context: Option<usize>,
    #[serde(default)]
    pub alphabet: Option<usize>,
}

pub const MODEL_FILE: &str = "model.oewb";
pub const MODEL_META_FILE: &str = "model.json";

pub fn save_model(model: &TrainedModel, family: ModelFamily, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (params, meta) = match model {
        TrainedModel::Classifier(p) => (
            p,
            ModelMeta {
                family,
                context: None,
                alphabet: None,
            },
        ),
        TrainedModel::Density(m) => (
            &m.net,
            ModelMeta {
                family,
                context: Some(m.context),
                alphabet: Some(m.alphabet),
            },
        ),
    };
    nn::io::save_params(params, &dir.join(MODEL_FILE))?;
    let meta_path = dir.join(MODEL_META_FILE);
    std::fs::write(&meta_path, serde_json::to_string_pretty(&meta)? + "\n").map_err(|e| Error::io(&meta_path, e))
}

pub fn load_model(dir: &Path) -> Result<(TrainedModel, ModelFamily)> {
    let meta_path = dir.join(MODEL_META_FILE);
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: ModelMeta = serde_json::from_str(&text)?;
    let params = nn::io::load_params(&dir.join(MODEL_FILE))?;
    let model = match meta.family {
        ModelFamily::Density => {
            let (Some(c), Some(a)) = (meta.context, meta.alphabet) else {
                return Err(Error::data(
                    meta_path.display().to_string(),
                    None,
                    "density model needs context and alphabet",
                ));
            };
            TrainedModel::Density(ArModel::from_network(c, a, params)?)
        }
        _ => TrainedModel::Classifier(params),
    };
    Ok((model, meta.family))
}
