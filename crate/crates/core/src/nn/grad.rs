use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::network::{accumulate, backward, forward, Batch, ForwardPass, NetworkParams, SegmentedBatch};
use crate::objectives::{self, ObjectiveKind, ObjectiveSpec};

/// Data an objective is evaluated on.
#[derive(Debug, Clone, Copy)]
pub enum Batches<'a> {
    /// Labeled inliers and optional unlabeled outliers for classifier objectives.
    Classifier {
        inliers: &'a Batch,
        outliers: Option<&'a Batch>,
    },
    /// Sequence rows for the autoregressive density objectives. Losses are
    /// per sequence (summed over positions), averaged over sequences.
    Sequence {
        inliers: &'a SegmentedBatch,
        outliers: Option<&'a SegmentedBatch>,
    },
}

/// Objective value without gradients.
pub fn loss(params: &NetworkParams, objective: &ObjectiveSpec, batches: &Batches<'_>) -> Result<f64> {
    evaluate(params, objective, batches, false).map(|(l, _)| l)
}

/// Objective value and its exact gradient with respect to every parameter.
pub fn grad(params: &NetworkParams, objective: &ObjectiveSpec, batches: &Batches<'_>) -> Result<(f64, NetworkParams)> {
    evaluate(params, objective, batches, true).map(|(l, g)| (l, g.expect("gradient requested")))
}

fn outliers_for<'a, T>(objective: &ObjectiveSpec, outliers: Option<&'a T>) -> Result<Option<&'a T>> {
    if objective.needs_outliers() {
        match outliers {
            Some(o) => Ok(Some(o)),
            None => Err(Error::config(format!(
                "{:?} objective with lambda {} needs an outlier batch",
                objective.kind, objective.lambda
            ))),
        }
    } else {
        Ok(None)
    }
}

struct Accum {
    loss: f64,
    grads: Option<NetworkParams>,
}

impl Accum {
    fn new(params: &NetworkParams, with_grad: bool) -> Self {
        Accum {
            loss: 0.0,
            grads: with_grad.then(|| params.zeros_like()),
        }
    }

    fn add(
        &mut self,
        params: &NetworkParams,
        pass: &ForwardPass,
        loss: f64,
        dlogits: &Matrix,
        dbranch: Option<&[f64]>,
    ) -> Result<()> {
        self.loss += loss;
        if let Some(acc) = self.grads.as_mut() {
            let g = backward(params, pass, dlogits, dbranch)?;
            accumulate(acc, &g, 1.0);
        }
        Ok(())
    }
}

fn evaluate(
    params: &NetworkParams,
    objective: &ObjectiveSpec,
    batches: &Batches<'_>,
    with_grad: bool,
) -> Result<(f64, Option<NetworkParams>)> {
    objective.validate()?;
    let mut acc = Accum::new(params, with_grad);
    match *batches {
        Batches::Classifier { inliers, outliers } => {
            if objective.kind.is_sequence_objective() {
                return Err(Error::config(format!("{:?} needs sequence batches", objective.kind)));
            }
            let outliers = outliers_for(objective, outliers)?;
            let classes = params.output_dim();
            let labels = inliers.labels_checked(classes)?;
            let pass = forward(params, &inliers.inputs)?;
            match objective.kind {
                ObjectiveKind::PlainCe | ObjectiveKind::MulticlassOe => {
                    let (l, d) = objectives::ce_loss_grad(pass.logits(), labels, 1.0)?;
                    acc.add(params, &pass, l, &d, None)?;
                    if let Some(oe) = outliers {
                        if objective.kind == ObjectiveKind::MulticlassOe {
                            let oe_pass = forward(params, &oe.inputs)?;
                            let (l, d) = objectives::uniform_ce_grad(oe_pass.logits(), objective.lambda)?;
                            acc.add(params, &oe_pass, l, &d, None)?;
                        }
                    }
                }
                ObjectiveKind::ConfidenceBranchOe => {
                    let pre = pass
                        .branch_pre
                        .as_deref()
                        .ok_or_else(|| Error::config("confidence branch objective needs a branch head"))?;
                    let (l, d, db) =
                        objectives::branch_inlier_grad(pass.logits(), pre, labels, objective.branch_budget, 1.0)?;
                    acc.add(params, &pass, l, &d, Some(&db))?;
                    if let Some(oe) = outliers {
                        let oe_pass = forward(params, &oe.inputs)?;
                        let pre = oe_pass.branch_pre.as_deref().expect("branch head checked");
                        let (l, db) = objectives::branch_outlier_grad(pre, objective.lambda);
                        let zero = Matrix::zeros(oe_pass.logits().rows(), oe_pass.logits().cols());
                        acc.add(params, &oe_pass, l, &zero, Some(&db))?;
                    }
                }
                ObjectiveKind::DensityMargin | ObjectiveKind::TokenUniformCe => unreachable!(),
            }
        }
        Batches::Sequence { inliers, outliers } => {
            let outliers = match objective.kind {
                ObjectiveKind::PlainCe => None,
                ObjectiveKind::DensityMargin | ObjectiveKind::TokenUniformCe => outliers_for(objective, outliers)?,
                other => {
                    return Err(Error::config(format!("{other:?} needs classifier batches")));
                }
            };
            let mle_weight = if objective.kind == ObjectiveKind::PlainCe {
                1.0
            } else {
                objective.mle_weight
            };
            let classes = params.output_dim();
            let labels = inliers.rows.labels_checked(classes)?;
            let pass = forward(params, &inliers.rows.inputs)?;
            let (nll_in, mut d_in) = sequence_nll_grad(pass.logits(), labels, &inliers.segments);
            let n_in = nll_in.len() as f64;
            if n_in == 0.0 {
                return Err(Error::input("sequence batch without sequences"));
            }
            // d_in currently holds per-sequence nll gradients; weight them
            let mut row_weight = vec![mle_weight / n_in; nll_in.len()];
            let mut total = mle_weight * nll_in.iter().sum::<f64>() / n_in;

            match (objective.kind, outliers) {
                (ObjectiveKind::DensityMargin, Some(oe)) => {
                    let oe_labels = oe.rows.labels_checked(classes)?;
                    let oe_pass = forward(params, &oe.rows.inputs)?;
                    let (nll_out, mut d_out) = sequence_nll_grad(oe_pass.logits(), oe_labels, &oe.segments);
                    let hinge = objectives::density_margin_loss(&nll_in, &nll_out, objective.margin)?;
                    total += objective.lambda * hinge;
                    let n = nll_in.len() as f64;
                    let mut out_weight = vec![0.0; nll_out.len()];
                    for i in 0..nll_in.len() {
                        if objective.margin + nll_in[i] - nll_out[i] > 0.0 {
                            row_weight[i] += objective.lambda / n;
                            out_weight[i] = -objective.lambda / n;
                        }
                    }
                    scale_segments(&mut d_out, &oe.segments, &out_weight);
                    if let Some(accg) = acc.grads.as_mut() {
                        let g = backward(params, &oe_pass, &d_out, None)?;
                        accumulate(accg, &g, 1.0);
                    }
                }
                (ObjectiveKind::TokenUniformCe, Some(oe)) => {
                    let oe_pass = forward(params, &oe.rows.inputs)?;
                    let (l, d) = objectives::uniform_ce_grad(oe_pass.logits(), objective.lambda)?;
                    total += l;
                    if let Some(accg) = acc.grads.as_mut() {
                        let g = backward(params, &oe_pass, &d, None)?;
                        accumulate(accg, &g, 1.0);
                    }
                }
                _ => {}
            }
            scale_segments(&mut d_in, &inliers.segments, &row_weight);
            acc.add(params, &pass, total, &d_in, None)?;
        }
    }
    Ok((acc.loss, acc.grads))
}

/// Per-segment negative log-likelihood and the unscaled row gradient
/// `softmax - onehot`.
pub(crate) fn sequence_nll_grad(
    logits: &Matrix,
    labels: &[usize],
    segments: &[std::ops::Range<usize>],
) -> (Vec<f64>, Matrix) {
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let nll = segments
        .iter()
        .map(|seg| {
            let mut s = 0.0;
            for t in seg.clone() {
                let row = logits.row(t);
                let lse = super::logsumexp(row);
                s += lse - row[labels[t]];
                let g = grad.row_mut(t);
                for (gv, &v) in g.iter_mut().zip(row) {
                    *gv = (v - lse).exp();
                }
                g[labels[t]] -= 1.0;
            }
            s
        })
        .collect();
    (nll, grad)
}

fn scale_segments(grad: &mut Matrix, segments: &[std::ops::Range<usize>], weights: &[f64]) {
    for (seg, &w) in segments.iter().zip(weights) {
        for t in seg.clone() {
            grad.row_mut(t).iter_mut().for_each(|g| *g *= w);
        }
    }
}
