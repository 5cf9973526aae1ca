//! Calibration error over adaptive bins, Soft F1, temperature tuning and
//! posterior rescaling.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{log_softmax_row, softmax_row};

/// Target number of records per calibration bin.
pub const TARGET_PER_BIN: usize = 100;

const TEMPERATURE_MIN: f64 = 0.01;
const TEMPERATURE_MAX: f64 = 100.0;
const TEMPERATURE_GRID: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub confidence: f64,
    pub correct: bool,
}

impl PredictionRecord {
    pub fn new(confidence: f64, correct: bool) -> Self {
        PredictionRecord { confidence, correct }
    }
}

/// Summary of one confidence bin, exported for reliability plots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub count: usize,
    pub mean_confidence: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub rms_error: f64,
    pub mad_error: f64,
    pub soft_f1: f64,
    /// Set when Soft F1 had a zero denominator and was defined as 1.
    pub soft_f1_degenerate: bool,
    pub temperature: f64,
    pub rescaled: bool,
    pub bin_count: usize,
    pub bins: Vec<CalibrationBin>,
}

/// Contiguous ranges splitting `n` sorted records into
/// `max(1, round(n / 100))` bins whose sizes differ by at most one.
pub fn adaptive_bins(n: usize) -> Vec<Range<usize>> {
    if n == 0 {
        return Vec::new();
    }
    let b = ((n + TARGET_PER_BIN / 2) / TARGET_PER_BIN).max(1);
    let (base, extra) = (n / b, n % b);
    let mut start = 0;
    (0..b)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

fn check_records(records: &[PredictionRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::input("calibration needs at least one prediction"));
    }
    if let Some((i, r)) = records
        .iter()
        .enumerate()
        .find(|(_, r)| !(r.confidence.is_finite() && (0.0..=1.0).contains(&r.confidence)))
    {
        return Err(Error::input(format!(
            "prediction {i} has confidence {} outside [0, 1]",
            r.confidence
        )));
    }
    Ok(())
}

/// Bins over records sorted by confidence. Ties are broken by correctness so
/// the result does not depend on the input order.
pub fn calibration_bins(records: &[PredictionRecord]) -> Result<Vec<CalibrationBin>> {
    check_records(records)?;
    let mut sorted = records.to_vec();
    sorted.sort_by(|a, b| a.confidence.total_cmp(&b.confidence).then(a.correct.cmp(&b.correct)));
    Ok(adaptive_bins(sorted.len())
        .into_iter()
        .map(|r| {
            let bin = &sorted[r];
            let n = bin.len() as f64;
            CalibrationBin {
                count: bin.len(),
                mean_confidence: bin.iter().map(|p| p.confidence).sum::<f64>() / n,
                accuracy: bin.iter().filter(|p| p.correct).count() as f64 / n,
            }
        })
        .collect())
}

fn weighted_gap(bins: &[CalibrationBin], f: impl Fn(f64) -> f64) -> f64 {
    let n: usize = bins.iter().map(|b| b.count).sum();
    bins.iter()
        .map(|b| b.count as f64 / n as f64 * f(b.accuracy - b.mean_confidence))
        .sum()
}

pub fn rms_from_bins(bins: &[CalibrationBin]) -> f64 {
    weighted_gap(bins, |g| g * g).sqrt()
}

pub fn mad_from_bins(bins: &[CalibrationBin]) -> f64 {
    weighted_gap(bins, f64::abs)
}

pub fn rms_calibration_error(records: &[PredictionRecord]) -> Result<f64> {
    Ok(rms_from_bins(&calibration_bins(records)?))
}

pub fn mad_calibration_error(records: &[PredictionRecord]) -> Result<f64> {
    Ok(mad_from_bins(&calibration_bins(records)?))
}

/// Soft F1 of the anomaly confidences `1 - c` against the mistake indicators.
/// Returns `(value, degenerate)`; a zero denominator (every prediction correct
/// with confidence 1) yields `(1.0, true)`.
pub fn soft_f1(records: &[PredictionRecord]) -> Result<(f64, bool)> {
    check_records(records)?;
    let mut hit = 0.0;
    let mut total = 0.0;
    for r in records {
        let ca = 1.0 - r.confidence;
        let m = f64::from(u8::from(!r.correct));
        hit += ca * m;
        total += ca + m;
    }
    if total == 0.0 {
        return Ok((1.0, true));
    }
    Ok((hit / (total / 2.0), false))
}

pub fn calibration_report(records: &[PredictionRecord], temperature: f64, rescaled: bool) -> Result<CalibrationReport> {
    let bins = calibration_bins(records)?;
    let (soft_f1, soft_f1_degenerate) = soft_f1(records)?;
    Ok(CalibrationReport {
        rms_error: rms_from_bins(&bins),
        mad_error: mad_from_bins(&bins),
        soft_f1,
        soft_f1_degenerate,
        temperature,
        rescaled,
        bin_count: bins.len(),
        bins,
    })
}

fn check_labeled(logits: &Matrix, labels: &[usize]) -> Result<()> {
    if logits.rows() == 0 {
        return Err(Error::input("temperature tuning needs a nonempty validation set"));
    }
    if labels.len() != logits.rows() {
        return Err(Error::input(format!(
            "{} labels for {} logit rows",
            labels.len(),
            logits.rows()
        )));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= logits.cols()) {
        return Err(Error::input(format!(
            "label {y} out of range for {} classes",
            logits.cols()
        )));
    }
    Ok(())
}

/// Mean cross-entropy of `softmax(logits / t)` against `labels`.
pub fn temperature_nll(logits: &Matrix, labels: &[usize], t: f64) -> Result<f64> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::parameter(format!("temperature must be positive, got {t}")));
    }
    check_labeled(logits, labels)?;
    Ok(nll_unchecked(logits, labels, t))
}

fn nll_unchecked(logits: &Matrix, labels: &[usize], t: f64) -> f64 {
    let mut scaled = vec![0.0; logits.cols()];
    let total: f64 = logits
        .iter_rows()
        .zip(labels)
        .map(|(row, &y)| {
            for (s, &l) in scaled.iter_mut().zip(row) {
                *s = l / t;
            }
            -log_softmax_row(&scaled)[y]
        })
        .sum();
    total / labels.len() as f64
}

/// Temperature minimizing validation cross-entropy: a log-spaced grid over
/// `[0.01, 100]` refined by golden-section search in `ln t` around the best
/// grid point. `t = 1` is always a candidate, so the result never does worse
/// than the untempered model.
pub fn tune_temperature(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    check_labeled(logits, labels)?;
    let f = |u: f64| nll_unchecked(logits, labels, u.exp());
    let (lo, hi) = (TEMPERATURE_MIN.ln(), TEMPERATURE_MAX.ln());
    let step = (hi - lo) / (TEMPERATURE_GRID - 1) as f64;
    let grid: Vec<f64> = (0..TEMPERATURE_GRID).map(|i| lo + step * i as f64).collect();
    let values: Vec<f64> = grid.iter().map(|&u| f(u)).collect();
    let best = (0..grid.len())
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .expect("grid is nonempty");

    let (mut a, mut b) = (grid[best.saturating_sub(1)], grid[(best + 1).min(grid.len() - 1)]);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..60 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    let candidates = [
        (grid[best], values[best]),
        (0.5 * (a + b), f(0.5 * (a + b))),
        (0.0, f(0.0)),
    ];
    let (u, _) = candidates
        .into_iter()
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .expect("candidates are nonempty");
    Ok(u.exp())
}

/// Maps a maximum class probability from `[1/k, 1]` onto `[0, 1]`.
pub fn posterior_rescale(p_max: f64, k: usize) -> Result<f64> {
    if k < 2 {
        return Err(Error::parameter(format!("posterior rescaling needs k >= 2, got {k}")));
    }
    let floor = 1.0 / k as f64;
    // a softmax maximum can land a few ulps below 1/k when all logits agree
    if !(p_max >= floor - 1e-12 && p_max <= 1.0 + 1e-12) {
        return Err(Error::input(format!(
            "maximum probability {p_max} is outside [1/{k}, 1]"
        )));
    }
    Ok(((p_max - floor) / (1.0 - floor)).clamp(0.0, 1.0))
}

/// Maximum softmax probability and predicted class per row at temperature `t`.
pub fn softmax_confidences(logits: &Matrix, t: f64) -> Result<Vec<(f64, usize)>> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::parameter(format!("temperature must be positive, got {t}")));
    }
    Ok(logits
        .iter_rows()
        .map(|row| {
            let scaled: Vec<f64> = row.iter().map(|l| l / t).collect();
            let p = softmax_row(&scaled);
            let (arg, &max) = p
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                .expect("at least one class");
            (max, arg)
        })
        .collect())
}

/// Records for a mixed evaluation: equally many in-distribution and OOD
/// predictions (the first `min` of each), every OOD prediction counted as a
/// mistake.
pub fn mixed_records(
    in_confidence: &[f64],
    in_correct: &[bool],
    ood_confidence: &[f64],
) -> Result<Vec<PredictionRecord>> {
    if in_confidence.len() != in_correct.len() {
        return Err(Error::input("confidence and correctness lengths differ"));
    }
    let m = in_confidence.len().min(ood_confidence.len());
    if m == 0 {
        return Err(Error::input(
            "mixed calibration needs in-distribution and OOD predictions",
        ));
    }
    let records: Vec<PredictionRecord> = in_confidence[..m]
        .iter()
        .zip(&in_correct[..m])
        .map(|(&c, &ok)| PredictionRecord::new(c, ok))
        .chain(ood_confidence[..m].iter().map(|&c| PredictionRecord::new(c, false)))
        .collect();
    check_records(&records)?;
    Ok(records)
}
