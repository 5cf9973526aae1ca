use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{grad, sgd_step, Batch, Batches, NetworkParams, OptimizerState, SgdConfig};
use crate::objectives::ObjectiveSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub oe_batch_size: usize,
    pub sgd: SgdConfig,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            epochs: 10,
            batch_size: 64,
            oe_batch_size: 128,
            sgd: SgdConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean minibatch objective per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Cycles through a shuffled index order, reshuffling on each wrap.
pub(crate) struct CyclicSampler {
    order: Vec<usize>,
    pos: usize,
}

impl CyclicSampler {
    pub(crate) fn new(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        CyclicSampler { order, pos: 0 }
    }

    pub(crate) fn next_batch(&mut self, size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            let take = (size - out.len()).min(self.order.len() - self.pos);
            out.extend_from_slice(&self.order[self.pos..self.pos + take]);
            self.pos += take;
        }
        out
    }
}

/// Generic minibatch loop: epochs are sized by the `n_in` inlier examples,
/// outlier batches are drawn cyclically from `n_oe` examples, and the learning
/// rate follows one cosine cycle over all steps.
///
/// `step` receives the inlier and outlier indices of a minibatch and returns
/// the objective value and gradient.
pub fn run_sgd<F>(
    params: &mut NetworkParams,
    n_in: usize,
    n_oe: usize,
    settings: &TrainSettings,
    mut step: F,
) -> Result<TrainHistory>
where
    F: FnMut(&NetworkParams, &[usize], Option<&[usize]>) -> Result<(f64, NetworkParams)>,
{
    if n_in == 0 {
        return Err(Error::input("no training examples"));
    }
    if settings.batch_size == 0 || settings.epochs == 0 {
        return Err(Error::parameter("epochs and batch size must be positive"));
    }
    let batches_per_epoch = n_in.div_ceil(settings.batch_size);
    let mut state = OptimizerState::new(params, settings.sgd, settings.epochs * batches_per_epoch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut order: Vec<usize> = (0..n_in).collect();
    let mut oe_sampler = (n_oe > 0).then(|| CyclicSampler::new(n_oe, &mut rng));
    let mut history = TrainHistory::default();
    for _ in 0..settings.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(settings.batch_size) {
            let oe_idx = oe_sampler
                .as_mut()
                .map(|s| s.next_batch(settings.oe_batch_size.max(1), &mut rng));
            let (loss, g) = step(params, chunk, oe_idx.as_deref())?;
            if !loss.is_finite() {
                return Err(Error::input("objective became non-finite during training"));
            }
            total += loss;
            sgd_step(params, &g, &mut state)?;
        }
        history.epoch_losses.push(total / batches_per_epoch as f64);
    }
    Ok(history)
}

/// Trains a classifier on labeled `data`, optionally exposing it to
/// `outliers` (unlabeled rows) through `objective`.
pub fn train_classifier(
    params: &mut NetworkParams,
    data: &Batch,
    outliers: Option<&Matrix>,
    objective: &ObjectiveSpec,
    settings: &TrainSettings,
) -> Result<TrainHistory> {
    objective.validate()?;
    let labels = data
        .labels
        .as_deref()
        .ok_or_else(|| Error::config("classifier training needs labels"))?;
    let outliers = match outliers {
        Some(o) if o.rows() > 0 => Some(o),
        _ if objective.needs_outliers() => {
            return Err(Error::config(
                "outlier exposure objective needs a non-empty outlier set",
            ));
        }
        _ => None,
    };
    let n_oe = if objective.needs_outliers() {
        outliers.map_or(0, Matrix::rows)
    } else {
        0
    };
    run_sgd(params, data.len(), n_oe, settings, |p, idx, oe_idx| {
        let batch = Batch::new(
            data.inputs.select_rows(idx),
            Some(idx.iter().map(|&i| labels[i]).collect()),
        )?;
        let oe_batch = match (oe_idx, outliers) {
            (Some(oi), Some(o)) => Some(Batch::unlabeled(o.select_rows(oi))?),
            _ => None,
        };
        grad(
            p,
            objective,
            &Batches::Classifier {
                inliers: &batch,
                outliers: oe_batch.as_ref(),
            },
        )
    })
}
