//! Fixed-window autoregressive density model over discrete sequences.
//!
//! `p(x) = Π_t p(x_t | x_{t-c}, ..., x_{t-1})`, with every conditional given
//! by a dense network on the one-hot encoded window. Positions before the
//! start of the sequence hold a reserved start symbol with index `V`, so the
//! input alphabet has `V + 1` symbols and the chain rule is exact for `t < c`.

use std::f64::consts::LN_2;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::matrix::Matrix;
use crate::nn::{self, Activation, Batch, Batches, NetworkParams, SegmentedBatch, TrainHistory, TrainSettings};
use crate::objectives::{ObjectiveKind, ObjectiveSpec};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DiscreteSequence {
    symbols: Vec<usize>,
    alphabet: usize,
}

impl DiscreteSequence {
    pub fn new(symbols: Vec<usize>, alphabet: usize) -> Result<Self> {
        if alphabet < 2 {
            return Err(Error::input(format!("alphabet size must be >= 2, got {alphabet}")));
        }
        if symbols.is_empty() {
            return Err(Error::input("sequence must have at least one symbol"));
        }
        if let Some(&s) = symbols.iter().find(|&&s| s >= alphabet) {
            return Err(Error::data(
                "sequence",
                None,
                format!("symbol {s} outside alphabet of size {alphabet}"),
            ));
        }
        Ok(DiscreteSequence { symbols, alphabet })
    }

    pub fn symbols(&self) -> &[usize] {
        &self.symbols
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArModel {
    pub context: usize,
    pub alphabet: usize,
    pub net: NetworkParams,
}

impl ArModel {
    pub fn new<R: Rng + ?Sized>(
        context: usize,
        alphabet: usize,
        hidden: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if context == 0 {
            return Err(Error::config("context window must be positive"));
        }
        if alphabet < 2 {
            return Err(Error::config("alphabet size must be >= 2"));
        }
        let mut dims = vec![Self::input_width(context, alphabet)];
        dims.extend_from_slice(hidden);
        dims.push(alphabet);
        Ok(ArModel {
            context,
            alphabet,
            net: NetworkParams::init(&dims, activation, false, rng)?,
        })
    }

    /// Wraps existing network parameters, checking the head shapes.
    pub fn from_network(context: usize, alphabet: usize, net: NetworkParams) -> Result<Self> {
        if net.input_dim() != Self::input_width(context, alphabet) || net.output_dim() != alphabet {
            return Err(Error::config("network shape does not match context and alphabet"));
        }
        Ok(ArModel { context, alphabet, net })
    }

    pub fn input_width(context: usize, alphabet: usize) -> usize {
        context * (alphabet + 1)
    }

    pub fn start_symbol(&self) -> usize {
        self.alphabet
    }

    fn check(&self, x: &DiscreteSequence) -> Result<()> {
        if x.alphabet() != self.alphabet {
            return Err(Error::data(
                "sequence",
                None,
                format!(
                    "sequence alphabet {} does not match model alphabet {}",
                    x.alphabet(),
                    self.alphabet
                ),
            ));
        }
        Ok(())
    }

    /// One-hot window for predicting position `t` of `symbols`.
    fn encode_position(&self, symbols: &[usize], t: usize, out: &mut [f64]) {
        let width = self.alphabet + 1;
        for j in 0..self.context {
            // slot j holds x_{t - context + j}
            let sym = (t + j)
                .checked_sub(self.context)
                .map_or(self.start_symbol(), |p| symbols[p]);
            out[j * width + sym] = 1.0;
        }
    }

    /// Rows for every position of every sequence, labeled with the symbol to
    /// predict.
    pub fn encode(&self, seqs: &[&DiscreteSequence]) -> Result<SegmentedBatch> {
        let total: usize = seqs.iter().map(|s| s.len()).sum();
        let width = Self::input_width(self.context, self.alphabet);
        let mut inputs = Matrix::zeros(total, width);
        let mut labels = Vec::with_capacity(total);
        let mut segments = Vec::with_capacity(seqs.len());
        let mut row = 0;
        for s in seqs {
            self.check(s)?;
            let start = row;
            for t in 0..s.len() {
                self.encode_position(s.symbols(), t, inputs.row_mut(row));
                labels.push(s.symbols()[t]);
                row += 1;
            }
            segments.push(start..row);
        }
        Ok(SegmentedBatch {
            rows: Batch::new(inputs, Some(labels))?,
            segments,
        })
    }

    /// Predictive distribution after the given history (only its last
    /// `context` symbols matter).
    pub fn predictive(&self, history: &[usize]) -> Result<Vec<f64>> {
        if let Some(&s) = history.iter().find(|&&s| s >= self.alphabet) {
            return Err(Error::data("history", None, format!("symbol {s} outside alphabet")));
        }
        let mut x = Matrix::zeros(1, Self::input_width(self.context, self.alphabet));
        let mut padded = history.to_vec();
        padded.push(0);
        self.encode_position(&padded, history.len(), x.row_mut(0));
        let pass = nn::forward_with(&self.net, &x, Execution::Sequential)?;
        Ok(nn::softmax_row(pass.logits().row(0)))
    }
}

/// Negative log-likelihood of `x` in nats.
pub fn nll(model: &ArModel, x: &DiscreteSequence) -> Result<f64> {
    let batch = model.encode(&[x])?;
    let pass = nn::forward_with(&model.net, &batch.rows.inputs, Execution::Sequential)?;
    let labels = batch.rows.labels.as_deref().expect("encoded with labels");
    Ok(pass
        .logits()
        .iter_rows()
        .zip(labels)
        .map(|(row, &y)| nn::logsumexp(row) - row[y])
        .sum())
}

pub fn nll_batch(model: &ArModel, xs: &[DiscreteSequence]) -> Result<Vec<f64>> {
    nll_batch_with(model, xs, Execution::default())
}

pub fn nll_batch_with(model: &ArModel, xs: &[DiscreteSequence], exec: Execution) -> Result<Vec<f64>> {
    exec.map_slice(xs, |x| nll(model, x)).into_iter().collect()
}

/// `nll(x) / (D ln 2)`: bits per dimension.
pub fn bits_per_dim(model: &ArModel, x: &DiscreteSequence) -> Result<f64> {
    Ok(nll(model, x)? / (x.len() as f64 * LN_2))
}

pub fn mean_nll(model: &ArModel, xs: &[DiscreteSequence]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::input("mean nll of an empty set"));
    }
    Ok(nll_batch(model, xs)?.iter().sum::<f64>() / xs.len() as f64)
}

/// Maximum-likelihood training on inlier sequences.
pub fn train_density(model: &mut ArModel, data: &[DiscreteSequence], settings: &TrainSettings) -> Result<TrainHistory> {
    if data.is_empty() {
        return Err(Error::input("density training needs data"));
    }
    let objective = ObjectiveSpec::plain_ce();
    let alphabet = model.alphabet;
    let context = model.context;
    nn::run_sgd(&mut model.net, data.len(), 0, settings, |net, idx, _| {
        let view = ArModel::from_network(context, alphabet, net.clone())?;
        let seqs: Vec<&DiscreteSequence> = idx.iter().map(|&i| &data[i]).collect();
        let batch = view.encode(&seqs)?;
        nn::grad(
            net,
            &objective,
            &Batches::Sequence {
                inliers: &batch,
                outliers: None,
            },
        )
    })
}

/// Outlier-exposure fine-tuning of a density model. `objective` is either
/// the margin hinge (`DensityMargin`, pairing each inlier with the outlier at
/// the same batch position) or the token-level uniform cross-entropy
/// (`TokenUniformCe`).
pub fn finetune_density_oe(
    model: &mut ArModel,
    inliers: &[DiscreteSequence],
    outliers: &[DiscreteSequence],
    objective: &ObjectiveSpec,
    settings: &TrainSettings,
) -> Result<TrainHistory> {
    objective.validate()?;
    if !matches!(
        objective.kind,
        ObjectiveKind::DensityMargin | ObjectiveKind::TokenUniformCe
    ) {
        return Err(Error::config(format!(
            "{:?} is not a density objective",
            objective.kind
        )));
    }
    if outliers.is_empty() {
        return Err(Error::config("density outlier exposure needs outlier data"));
    }
    if inliers.is_empty() {
        return Err(Error::input("density fine-tuning needs inlier data"));
    }
    let alphabet = model.alphabet;
    let context = model.context;
    let paired = TrainSettings {
        oe_batch_size: settings.batch_size,
        ..*settings
    };
    nn::run_sgd(
        &mut model.net,
        inliers.len(),
        outliers.len(),
        &paired,
        |net, idx, oe_idx| {
            let view = ArModel::from_network(context, alphabet, net.clone())?;
            let seqs: Vec<&DiscreteSequence> = idx.iter().map(|&i| &inliers[i]).collect();
            let batch = view.encode(&seqs)?;
            let oe_batch = match oe_idx {
                Some(oi) => {
                    let o: Vec<&DiscreteSequence> = oi.iter().take(idx.len()).map(|&i| &outliers[i]).collect();
                    Some(view.encode(&o)?)
                }
                None => None,
            };
            nn::grad(
                net,
                objective,
                &Batches::Sequence {
                    inliers: &batch,
                    outliers: oe_batch.as_ref(),
                },
            )
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq(s: &[usize], v: usize) -> DiscreteSequence {
        DiscreteSequence::new(s.to_vec(), v).unwrap()
    }

    fn zero_model(context: usize, v: usize) -> ArModel {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut m = ArModel::new(context, v, &[4], Activation::Tanh, &mut rng).unwrap();
        m.net.values_mut().for_each(|x| *x = 0.0);
        m
    }

    #[test]
    fn uniform_model_nll() {
        let m = zero_model(2, 5);
        let x = seq(&[0, 4, 2, 2, 1, 3], 5);
        assert!((nll(&m, &x).unwrap() - 6.0 * 5f64.ln()).abs() < 1e-12);
        assert!((bits_per_dim(&m, &x).unwrap() - 5f64.log2()).abs() < 1e-12);
        let m = zero_model(3, 256);
        let x = seq(&[0, 255, 17], 256);
        assert!((bits_per_dim(&m, &x).unwrap() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn single_symbol_half_probability() {
        let m = zero_model(1, 2);
        assert!((nll(&m, &seq(&[1], 2)).unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn seeded_nll_matches_stepwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = ArModel::new(3, 4, &[7], Activation::Tanh, &mut rng).unwrap();
        let x = seq(&[3, 0, 1, 1, 2, 0, 3], 4);
        // independent oracle: build each window by hand, softmax by hand
        let mut want = 0.0;
        for t in 0..x.len() {
            let mut input = [0.0; 3 * 5];
            for j in 0..3 {
                let pos = t as isize - 3 + j as isize;
                let sym = if pos < 0 { 4 } else { x.symbols()[pos as usize] };
                input[j * 5 + sym] = 1.0;
            }
            let w0 = &m.net.weights[0];
            let hidden: Vec<f64> = (0..7)
                .map(|h| (m.net.biases[0][h] + (0..15).map(|k| w0[(h, k)] * input[k]).sum::<f64>()).tanh())
                .collect();
            let w1 = &m.net.weights[1];
            let z: Vec<f64> = (0..4)
                .map(|o| m.net.biases[1][o] + (0..7).map(|h| w1[(o, h)] * hidden[h]).sum::<f64>())
                .collect();
            let denom: f64 = z.iter().map(|v| v.exp()).sum();
            want -= (z[x.symbols()[t]].exp() / denom).ln();
        }
        let got = nll(&m, &x).unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        assert!((bits_per_dim(&m, &x).unwrap() - want / (7.0 * LN_2)).abs() < 1e-12);
    }

    #[test]
    fn rejects_out_of_alphabet() {
        assert!(matches!(DiscreteSequence::new(vec![0, 3], 3), Err(Error::Data { .. })));
        let m = zero_model(2, 3);
        assert!(nll(&m, &seq(&[0, 1], 4)).is_err());
    }

    #[test]
    fn predictive_rows_are_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = ArModel::new(2, 6, &[8], Activation::Relu, &mut rng).unwrap();
        for h in [vec![], vec![1], vec![5, 2, 3]] {
            let p = m.predictive(&h).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_repeated_data_drives_nll_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = ArModel::new(2, 2, &[8], Activation::Tanh, &mut rng).unwrap();
        let data: Vec<_> = (0..32).map(|_| seq(&[0; 6], 2)).collect();
        let before = mean_nll(&m, &data).unwrap();
        let settings = TrainSettings {
            epochs: 60,
            batch_size: 8,
            sgd: nn::SgdConfig {
                lr0: 0.05,
                momentum: 0.9,
                weight_decay: 0.0,
            },
            ..Default::default()
        };
        train_density(&mut m, &data, &settings).unwrap();
        let after = mean_nll(&m, &data).unwrap();
        assert!(after < before);
        assert!(after < 0.05, "nll {after}");
    }

    #[test]
    fn margin_satisfied_means_pure_mle_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = ArModel::new(2, 3, &[5], Activation::Tanh, &mut rng).unwrap();
        let a = seq(&[0, 1, 2, 0], 3);
        let b = seq(&[2, 2, 1, 0], 3);
        let (na, nb) = (nll(&m, &a).unwrap(), nll(&m, &b).unwrap());
        // the higher-likelihood sequence plays the inlier, margin half the gap
        let (inl, outl) = if nb > na { (&a, &b) } else { (&b, &a) };
        let ib = m.encode(&[inl]).unwrap();
        let ob = m.encode(&[outl]).unwrap();
        let margin = (na - nb).abs() / 2.0;
        let oe = Batches::Sequence {
            inliers: &ib,
            outliers: Some(&ob),
        };
        let mle = Batches::Sequence {
            inliers: &ib,
            outliers: None,
        };
        let (l_oe, g_oe) = nn::grad(&m.net, &ObjectiveSpec::density_margin(1.0, margin), &oe).unwrap();
        let (l_mle, g_mle) = nn::grad(&m.net, &ObjectiveSpec::plain_ce(), &mle).unwrap();
        assert_eq!(l_oe, l_mle);
        assert_eq!(g_oe, g_mle);
    }

    #[test]
    fn identical_data_hinge_sits_at_margin() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = ArModel::new(2, 3, &[5], Activation::Tanh, &mut rng).unwrap();
        let a = seq(&[0, 1, 2, 0], 3);
        let ib = m.encode(&[&a, &a]).unwrap();
        let spec = ObjectiveSpec {
            mle_weight: 0.0,
            ..ObjectiveSpec::density_margin(1.0, 4.0)
        };
        let (loss, g) = nn::grad(
            &m.net,
            &spec,
            &Batches::Sequence {
                inliers: &ib,
                outliers: Some(&ib),
            },
        )
        .unwrap();
        assert!((loss - 4.0).abs() < 1e-12);
        // in and out terms cancel exactly on identical data
        assert!(g.values().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn empty_oe_data_is_config_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = ArModel::new(1, 2, &[3], Activation::Tanh, &mut rng).unwrap();
        let data = vec![seq(&[0, 1], 2)];
        let r = finetune_density_oe(
            &mut m,
            &data,
            &[],
            &ObjectiveSpec::density_margin(1.0, 2.0),
            &TrainSettings::default(),
        );
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
