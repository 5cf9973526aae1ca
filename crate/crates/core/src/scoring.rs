//! Anomaly scores. Every detector follows one orientation: a higher score
//! means more anomalous.
//!
//! | detector            | score                  |
//! |---------------------|------------------------|
//! | `Msp`               | `-max_c f_c(x)`        |
//! | `UniformCe`         | `-H(U; f(x))`          |
//! | `ConfidenceBranch`  | `1 - b(x)`             |
//! | `DensityBpp`        | bits per dimension      |
//!
//! `H(U; f(x))` is smallest when the posterior is uniform, so its negation
//! is largest (most anomalous) there, at `-ln k`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::density::{self, ArModel, DiscreteSequence};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::matrix::Matrix;
use crate::nn::{self, NetworkParams};
use crate::objectives;

/// Anomaly scores of in-distribution and out-of-distribution test examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSet {
    pub in_scores: Vec<f64>,
    pub out_scores: Vec<f64>,
}

impl ScoredSet {
    pub fn new(in_scores: Vec<f64>, out_scores: Vec<f64>) -> Self {
        ScoredSet { in_scores, out_scores }
    }

    /// Both sides non-empty and finite.
    pub fn validate(&self) -> Result<()> {
        if self.in_scores.is_empty() || self.out_scores.is_empty() {
            return Err(Error::input(format!(
                "scored set needs both sides, got {} in and {} out",
                self.in_scores.len(),
                self.out_scores.len()
            )));
        }
        if self.in_scores.iter().chain(&self.out_scores).any(|s| !s.is_finite()) {
            return Err(Error::input("scores must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    Msp,
    UniformCe,
    ConfidenceBranch,
    DensityBpp,
}

impl DetectorKind {
    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::Msp => "msp",
            DetectorKind::UniformCe => "uniform_ce",
            DetectorKind::ConfidenceBranch => "confidence_branch",
            DetectorKind::DensityBpp => "density_bpp",
        }
    }

    pub fn is_density(self) -> bool {
        self == DetectorKind::DensityBpp
    }
}

impl std::fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// `-max_c f_c(x)`, in `[-1, -1/k]`.
pub fn msp_score(probs: &[f64]) -> f64 {
    -probs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `-H(U; softmax(logits))`. Maximal (`-ln k`) at the uniform posterior.
pub fn uniform_ce_score(logits: &[f64]) -> f64 {
    -objectives::uniform_ce_row(logits)
}

/// `1 - b`: low branch confidence means a high anomaly score.
pub fn branch_score(b: f64) -> f64 {
    1.0 - b
}

/// Bits per dimension under the density model.
pub fn bpp_score(model: &ArModel, x: &DiscreteSequence) -> Result<f64> {
    density::bits_per_dim(model, x)
}

#[derive(Debug, Clone, Copy)]
pub enum ModelRef<'a> {
    Classifier(&'a NetworkParams),
    Density(&'a ArModel),
}

#[derive(Debug, Clone, Copy)]
pub enum DataRef<'a> {
    Features(&'a Matrix),
    Sequences(&'a [DiscreteSequence]),
}

/// Per-example scores in input order.
pub fn score_dataset(model: ModelRef<'_>, detector: DetectorKind, data: DataRef<'_>) -> Result<Vec<f64>> {
    score_dataset_with(model, detector, data, Execution::default())
}

pub fn score_dataset_with(
    model: ModelRef<'_>,
    detector: DetectorKind,
    data: DataRef<'_>,
    exec: Execution,
) -> Result<Vec<f64>> {
    match (model, data, detector) {
        (ModelRef::Density(m), DataRef::Sequences(xs), DetectorKind::DensityBpp) => {
            exec.map_slice(xs, |x| bpp_score(m, x)).into_iter().collect()
        }
        (ModelRef::Classifier(p), DataRef::Features(x), d) if !d.is_density() => {
            if x.rows() == 0 {
                return Ok(Vec::new());
            }
            if d == DetectorKind::ConfidenceBranch && !p.has_branch() {
                return Err(Error::config(
                    "confidence_branch detector needs a network with a branch head",
                ));
            }
            let pass = nn::forward_with(p, x, exec)?;
            let logits = pass.logits();
            Ok(match d {
                DetectorKind::Msp => exec.map(x.rows(), |i| msp_score(&nn::softmax_row(logits.row(i)))),
                DetectorKind::UniformCe => exec.map(x.rows(), |i| uniform_ce_score(logits.row(i))),
                DetectorKind::ConfidenceBranch => pass
                    .branch_probs()
                    .expect("branch head checked")
                    .into_iter()
                    .map(branch_score)
                    .collect(),
                DetectorKind::DensityBpp => unreachable!(),
            })
        }
        (_, _, d) => Err(Error::config(format!(
            "detector {d} is incompatible with this model/data pairing"
        ))),
    }
}

/// Writes `example_id,score,is_ood` rows; inliers first, then outliers.
pub fn write_scores_csv<W: Write>(set: &ScoredSet, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["example_id", "score", "is_ood"])?;
    let rows = set
        .in_scores
        .iter()
        .map(|s| (s, 0))
        .chain(set.out_scores.iter().map(|s| (s, 1)));
    for (id, (s, ood)) in rows.enumerate() {
        wr.write_record([id.to_string(), format!("{s:?}"), ood.to_string()])?;
    }
    wr.flush().map_err(|e| Error::io("<scores>", e))?;
    Ok(())
}

pub fn save_scores_csv(set: &ScoredSet, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_scores_csv(set, std::io::BufWriter::new(f))
}

/// Reads a file written by [`write_scores_csv`].
pub fn read_scores_csv(path: &Path) -> Result<ScoredSet> {
    let mut rd =
        csv::Reader::from_path(path).map_err(|e| Error::data(path.display().to_string(), None, e.to_string()))?;
    let mut set = ScoredSet::new(Vec::new(), Vec::new());
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let line = Some(i + 2);
        let name = path.display().to_string();
        let score: f64 = rec
            .get(1)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::data(&name, line, "bad score"))?;
        match rec.get(2).map(str::trim) {
            Some("0") => set.in_scores.push(score),
            Some("1") => set.out_scores.push(score),
            _ => return Err(Error::data(&name, line, "is_ood must be 0 or 1")),
        }
    }
    Ok(set)
}
