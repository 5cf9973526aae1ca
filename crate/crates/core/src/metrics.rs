//! Detection metrics with outliers as the positive class: AUROC, AUPR
//! (average precision) and the false positive rate at a fixed true positive
//! rate.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::ScoredSet;

/// Ratio of outlier to inlier test examples, `out : in`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct BaseRate {
    pub out: usize,
    pub inl: usize,
}

impl BaseRate {
    pub const ONE_TO_FIVE: BaseRate = BaseRate { out: 1, inl: 5 };
}

impl Default for BaseRate {
    fn default() -> Self {
        BaseRate::ONE_TO_FIVE
    }
}

impl From<[usize; 2]> for BaseRate {
    fn from([out, inl]: [usize; 2]) -> Self {
        BaseRate { out, inl }
    }
}

impl From<BaseRate> for [usize; 2] {
    fn from(b: BaseRate) -> Self {
        [b.out, b.inl]
    }
}

impl std::fmt::Display for BaseRate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.out, self.inl)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub auroc: f64,
    pub aupr: f64,
    pub fpr_at_n: f64,
    pub n_level: f64,
    pub base_rate: BaseRate,
}

/// Score groups in descending order: `(score, outliers, inliers)` per
/// distinct score.
fn descending_groups(s: &ScoredSet) -> Vec<(f64, usize, usize)> {
    let mut all: Vec<(f64, bool)> = s
        .out_scores
        .iter()
        .map(|&v| (v, true))
        .chain(s.in_scores.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut groups: Vec<(f64, usize, usize)> = Vec::new();
    for (v, is_out) in all {
        match groups.last_mut() {
            Some(g) if g.0 == v => {
                if is_out {
                    g.1 += 1
                } else {
                    g.2 += 1
                }
            }
            _ => groups.push((v, usize::from(is_out), usize::from(!is_out))),
        }
    }
    groups
}

/// Probability that an outlier outscores an inlier, ties counting one half.
pub fn auroc(s: &ScoredSet) -> Result<f64> {
    s.validate()?;
    // twice the Mann-Whitney U statistic, kept integral
    let mut twice_u: u128 = 0;
    let mut inliers_below = s.in_scores.len() as u128;
    for (_, out, inl) in descending_groups(s) {
        inliers_below -= inl as u128;
        twice_u += 2 * out as u128 * inliers_below + out as u128 * inl as u128;
    }
    let pairs = 2 * s.in_scores.len() as u128 * s.out_scores.len() as u128;
    Ok(twice_u as f64 / pairs as f64)
}

/// Average precision: `Σ_t (R_t - R_{t-1}) P_t` over distinct score
/// thresholds in descending order.
pub fn aupr(s: &ScoredSet) -> Result<f64> {
    s.validate()?;
    let n_pos = s.out_scores.len();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    for (_, out, inl) in descending_groups(s) {
        let prev = tp;
        tp += out;
        fp += inl;
        ap += average_precision_term(prev, tp, fp, n_pos);
    }
    Ok(ap)
}

#[inline]
pub(crate) fn average_precision_term(prev_tp: usize, tp: usize, fp: usize, n_pos: usize) -> f64 {
    (tp - prev_tp) as f64 / n_pos as f64 * (tp as f64 / (tp + fp) as f64)
}

/// Threshold used for FPR at `n_percent` TPR: the `ceil(N% * n_out)`-th
/// largest outlier score. An example is flagged when its score is `>=` the
/// threshold.
pub fn tpr_threshold(out_scores: &[f64], n_percent: f64) -> Result<f64> {
    if !(n_percent > 0.0 && n_percent <= 100.0) {
        return Err(Error::parameter(format!(
            "n_percent must be in (0, 100], got {n_percent}"
        )));
    }
    if out_scores.is_empty() {
        return Err(Error::input("no outlier scores"));
    }
    let mut sorted = out_scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let rank = ((n_percent * sorted.len() as f64 / 100.0).ceil() as usize).clamp(1, sorted.len());
    Ok(sorted[rank - 1])
}

/// Fraction of inliers flagged at the threshold that detects `n_percent` of
/// outliers.
pub fn fpr_at_tpr(s: &ScoredSet, n_percent: f64) -> Result<f64> {
    s.validate()?;
    let t = tpr_threshold(&s.out_scores, n_percent)?;
    let flagged = s.in_scores.iter().filter(|&&v| v >= t).count();
    Ok(flagged as f64 / s.in_scores.len() as f64)
}

pub fn detection_report(s: &ScoredSet, n_level: f64, base_rate: BaseRate) -> Result<DetectionReport> {
    Ok(DetectionReport {
        auroc: auroc(s)?,
        aupr: aupr(s)?,
        fpr_at_n: fpr_at_tpr(s, n_level)?,
        n_level,
        base_rate,
    })
}

/// ROC curve points `(fpr, tpr)` from `(0, 0)` to `(1, 1)`.
pub fn roc_curve(s: &ScoredSet) -> Result<Vec<(f64, f64)>> {
    s.validate()?;
    let (np, nn) = (s.out_scores.len() as f64, s.in_scores.len() as f64);
    let mut pts = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (_, out, inl) in descending_groups(s) {
        tp += out;
        fp += inl;
        pts.push((fp as f64 / nn, tp as f64 / np));
    }
    Ok(pts)
}

/// Precision-recall points `(recall, precision)`, one per distinct threshold.
pub fn pr_curve(s: &ScoredSet) -> Result<Vec<(f64, f64)>> {
    s.validate()?;
    let np = s.out_scores.len() as f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    Ok(descending_groups(s)
        .into_iter()
        .map(|(_, out, inl)| {
            tp += out;
            fp += inl;
            (tp as f64 / np, tp as f64 / (tp + fp) as f64)
        })
        .collect())
}

/// Seeded subsample of the two pools to exactly `ratio`, as large as the
/// pools allow. Kept examples retain their original order.
pub fn enforce_base_rate(in_pool: &[f64], out_pool: &[f64], ratio: BaseRate, seed: u64) -> Result<ScoredSet> {
    let (keep_in, keep_out) = base_rate_indices(in_pool.len(), out_pool.len(), ratio, seed)?;
    Ok(ScoredSet::new(
        keep_in.iter().map(|&i| in_pool[i]).collect(),
        keep_out.iter().map(|&i| out_pool[i]).collect(),
    ))
}

/// Index form of [`enforce_base_rate`]: which inliers and outliers to keep.
pub fn base_rate_indices(n_in: usize, n_out: usize, ratio: BaseRate, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if ratio.out == 0 || ratio.inl == 0 {
        return Err(Error::parameter(format!("base rate {ratio} must have positive parts")));
    }
    let units = (n_out / ratio.out).min(n_in / ratio.inl);
    if units == 0 {
        return Err(Error::input(format!(
            "pools of {n_out} outliers and {n_in} inliers cannot realize base rate {ratio}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = |n: usize, k: usize| {
        if k == n {
            (0..n).collect::<Vec<_>>()
        } else {
            let mut v = index::sample(&mut rng, n, k).into_vec();
            v.sort_unstable();
            v
        }
    };
    let keep_in = pick(n_in, units * ratio.inl);
    let keep_out = pick(n_out, units * ratio.out);
    Ok((keep_in, keep_out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn set(i: &[f64], o: &[f64]) -> ScoredSet {
        ScoredSet::new(i.to_vec(), o.to_vec())
    }

    /// O(n_in * n_out) pairwise count.
    fn auroc_pairwise(s: &ScoredSet) -> f64 {
        let mut twice = 0u128;
        for &o in &s.out_scores {
            for &i in &s.in_scores {
                twice += if o > i {
                    2
                } else if o == i {
                    1
                } else {
                    0
                };
            }
        }
        twice as f64 / (2 * s.in_scores.len() as u128 * s.out_scores.len() as u128) as f64
    }

    /// Enumerate every distinct score as a threshold and count directly.
    fn aupr_sweep(s: &ScoredSet) -> f64 {
        let mut thresholds: Vec<f64> = s.in_scores.iter().chain(&s.out_scores).copied().collect();
        thresholds.sort_by(|a, b| b.total_cmp(a));
        thresholds.dedup();
        let mut prev_tp = 0;
        let mut ap = 0.0;
        for t in thresholds {
            let tp = s.out_scores.iter().filter(|&&v| v >= t).count();
            let fp = s.in_scores.iter().filter(|&&v| v >= t).count();
            ap += average_precision_term(prev_tp, tp, fp, s.out_scores.len());
            prev_tp = tp;
        }
        ap
    }

    fn fpr_sweep(s: &ScoredSet, n: f64) -> f64 {
        let need = (n * s.out_scores.len() as f64 / 100.0).ceil() as usize;
        let mut thresholds: Vec<f64> = s.in_scores.iter().chain(&s.out_scores).copied().collect();
        thresholds.sort_by(|a, b| b.total_cmp(a));
        thresholds.dedup();
        for t in thresholds {
            if s.out_scores.iter().filter(|&&v| v >= t).count() >= need.max(1) {
                return s.in_scores.iter().filter(|&&v| v >= t).count() as f64 / s.in_scores.len() as f64;
            }
        }
        unreachable!("lowest threshold detects everything")
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&set(&[0.0, 1.0], &[2.0, 3.0])).unwrap(), 1.0);
        assert_eq!(auroc(&set(&[1.0, 3.0], &[2.0, 4.0])).unwrap(), 0.75);
        assert_eq!(auroc(&set(&[1.0, 2.0], &[1.0, 2.0])).unwrap(), 0.5);
        assert!(auroc(&set(&[], &[1.0])).is_err());
        assert!(auroc(&set(&[f64::NAN], &[1.0])).is_err());
    }

    #[test]
    fn aupr_examples() {
        assert_eq!(aupr(&set(&[0.0, 1.0, 1.5], &[2.0])).unwrap(), 1.0);
        // descending 4(out) 3(in) 2(out) 1(in): P = 1, then 2/3 at R = 1
        let v = aupr(&set(&[1.0, 3.0], &[2.0, 4.0])).unwrap();
        assert!((v - (0.5 * 1.0 + 0.5 * 2.0 / 3.0)).abs() < 1e-15);
        assert_eq!(v, aupr_sweep(&set(&[1.0, 3.0], &[2.0, 4.0])));
    }

    #[test]
    fn aupr_of_uninformative_scores_is_base_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let inl: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
        let out: Vec<f64> = (0..2_000).map(|_| rng.random()).collect();
        let v = aupr(&set(&inl, &out)).unwrap();
        assert!((v - 2000.0 / 12000.0).abs() < 0.02, "{v}");
    }

    #[test]
    fn fpr_examples() {
        assert_eq!(fpr_at_tpr(&set(&[0.0, 1.0], &[2.0, 3.0]), 95.0).unwrap(), 0.0);
        assert_eq!(fpr_at_tpr(&set(&[1.0, 3.0, 5.0, 7.0], &[4.0, 8.0]), 50.0).unwrap(), 0.0);
        let same: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let v = fpr_at_tpr(&set(&same, &same), 95.0).unwrap();
        assert!((v - 0.95).abs() < 0.002, "{v}");
        assert!(fpr_at_tpr(&set(&[1.0], &[2.0]), 0.0).is_err());
        assert!(fpr_at_tpr(&set(&[1.0], &[2.0]), 100.5).is_err());
    }

    #[test]
    fn base_rate_examples() {
        let inl: Vec<f64> = (0..500).map(|i| i as f64).collect();
        let out: Vec<f64> = (0..100).map(|i| -(i as f64)).collect();
        let s = enforce_base_rate(&inl, &out, BaseRate::ONE_TO_FIVE, 1).unwrap();
        assert_eq!((s.out_scores.len(), s.in_scores.len()), (100, 500));
        assert_eq!(s.in_scores, inl);

        let out: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let s = enforce_base_rate(&inl, &out, BaseRate::ONE_TO_FIVE, 1).unwrap();
        assert_eq!((s.out_scores.len(), s.in_scores.len()), (100, 500));

        let eq: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let s = enforce_base_rate(&eq, &eq, BaseRate { out: 1, inl: 1 }, 3).unwrap();
        assert_eq!(s.in_scores, eq);
        assert_eq!(s.out_scores, eq);

        assert!(enforce_base_rate(&inl[..4], &out, BaseRate::ONE_TO_FIVE, 1).is_err());
    }

    #[test]
    fn curves_span_unit_square() {
        let s = set(&[1.0, 3.0, 3.0], &[2.0, 4.0]);
        let roc = roc_curve(&s).unwrap();
        assert_eq!(roc.first(), Some(&(0.0, 0.0)));
        assert_eq!(roc.last(), Some(&(1.0, 1.0)));
        let pr = pr_curve(&s).unwrap();
        assert_eq!(pr.last().unwrap().0, 1.0);
    }

    fn arb_scores() -> impl Strategy<Value = Vec<f64>> {
        // small integer grid forces ties
        prop::collection::vec((0i32..12).prop_map(|v| v as f64 * 0.5), 1..50)
    }

    proptest! {
        #[test]
        fn match_brute_force_oracles(i in arb_scores(), o in arb_scores(), n in 1u32..=100) {
            let s = set(&i, &o);
            prop_assert_eq!(auroc(&s).unwrap(), auroc_pairwise(&s));
            prop_assert_eq!(aupr(&s).unwrap(), aupr_sweep(&s));
            prop_assert_eq!(fpr_at_tpr(&s, n as f64).unwrap(), fpr_sweep(&s, n as f64));
        }

        #[test]
        fn auroc_invariant_under_increasing_transform(i in arb_scores(), o in arb_scores()) {
            let s = set(&i, &o);
            let t = ScoredSet::new(
                i.iter().map(|v| (v * 0.7).exp() + 3.0).collect(),
                o.iter().map(|v| (v * 0.7).exp() + 3.0).collect(),
            );
            prop_assert_eq!(auroc(&s).unwrap(), auroc(&t).unwrap());
        }

        #[test]
        fn auroc_antisymmetric_without_ties(seed in 0u64..10_000, ni in 1usize..40, no in 1usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let i: Vec<f64> = (0..ni).map(|_| rng.random()).collect();
            let o: Vec<f64> = (0..no).map(|_| rng.random()).collect();
            let a = auroc(&set(&i, &o)).unwrap();
            let b = auroc(&set(&o, &i)).unwrap();
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }

        #[test]
        fn fpr_nonincreasing_as_level_drops(i in arb_scores(), o in arb_scores(), a in 1u32..=100, b in 1u32..=100) {
            let s = set(&i, &o);
            let (lo, hi) = (a.min(b) as f64, a.max(b) as f64);
            prop_assert!(fpr_at_tpr(&s, lo).unwrap() <= fpr_at_tpr(&s, hi).unwrap());
        }
    }
}
