//! Report files and the multi-seed runner.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::harness::config::ExperimentConfig;
use crate::harness::pipeline::{run_seed, CalibrationRow, ResultRow, SeedResult};
use crate::metrics;
use crate::scoring::{self, DetectorKind};

/// Mean of one `(d_in, d_out, detector, model, split)` group over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub d_in: String,
    pub d_out: String,
    pub detector: DetectorKind,
    pub model: String,
    pub split: String,
    pub seeds: usize,
    pub auroc: f64,
    pub aupr: f64,
    pub fpr_at_n: f64,
    pub n_level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummaryRow {
    pub d_out: String,
    pub model: String,
    pub method: String,
    pub seeds: usize,
    pub rms_error: f64,
    pub mad_error: f64,
    pub soft_f1: f64,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub seeds: Vec<SeedResult>,
    pub summary: Vec<SummaryRow>,
    pub calibration_summary: Vec<CalibrationSummaryRow>,
}

impl ExperimentOutcome {
    /// Summary rows of the test split matching `detector` and `model`.
    pub fn test_rows(&self, detector: DetectorKind, model: &str) -> Vec<&SummaryRow> {
        self.summary
            .iter()
            .filter(|r| r.split == "test" && r.detector == detector && r.model == model)
            .collect()
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    s / n as f64
}

/// Groups keep first-appearance order, so the output is deterministic.
fn group_by<T, K: PartialEq>(items: &[T], key: impl Fn(&T) -> K) -> Vec<Vec<&T>> {
    let mut keys: Vec<K> = Vec::new();
    let mut groups: Vec<Vec<&T>> = Vec::new();
    for it in items {
        let k = key(it);
        match keys.iter().position(|x| *x == k) {
            Some(i) => groups[i].push(it),
            None => {
                keys.push(k);
                groups.push(vec![it]);
            }
        }
    }
    groups
}

pub fn summarize(results: &[SeedResult]) -> Vec<SummaryRow> {
    let rows: Vec<ResultRow> = results
        .iter()
        .flat_map(|s| s.rows.iter().map(|r| r.row.clone()))
        .collect();
    group_by(&rows, |r| {
        (
            r.d_in.clone(),
            r.d_out.clone(),
            r.detector,
            r.model.clone(),
            r.split.clone(),
        )
    })
    .into_iter()
    .map(|g| SummaryRow {
        d_in: g[0].d_in.clone(),
        d_out: g[0].d_out.clone(),
        detector: g[0].detector,
        model: g[0].model.clone(),
        split: g[0].split.clone(),
        seeds: g.len(),
        auroc: mean(g.iter().map(|r| r.auroc)),
        aupr: mean(g.iter().map(|r| r.aupr)),
        fpr_at_n: mean(g.iter().map(|r| r.fpr_at_n)),
        n_level: g[0].n_level,
    })
    .collect()
}

pub fn summarize_calibration(results: &[SeedResult]) -> Vec<CalibrationSummaryRow> {
    let rows: Vec<CalibrationRow> = results.iter().flat_map(|s| s.calibration.clone()).collect();
    group_by(&rows, |r| (r.d_out.clone(), r.model.clone(), r.method.clone()))
        .into_iter()
        .map(|g| CalibrationSummaryRow {
            d_out: g[0].d_out.clone(),
            model: g[0].model.clone(),
            method: g[0].method.clone(),
            seeds: g.len(),
            rms_error: mean(g.iter().map(|r| r.report.rms_error)),
            mad_error: mean(g.iter().map(|r| r.report.mad_error)),
            soft_f1: mean(g.iter().map(|r| r.report.soft_f1)),
            temperature: mean(g.iter().map(|r| r.report.temperature)),
        })
        .collect()
}

/// Percentage with one decimal for display tables. Values that round to
/// 100 print as `100.`; the epsilon keeps `0.9995` from falling below the
/// rounding boundary through binary representation error.
pub fn render_percent(x: f64) -> String {
    let tenths = (x * 1000.0 * (1.0 + 1e-12)).round();
    if tenths == 1000.0 {
        "100.".to_string()
    } else {
        format!("{:.1}", tenths / 10.0)
    }
}

/// Fixed-width text table of the test-split summary.
pub fn render_table(summary: &[SummaryRow]) -> String {
    let fpr_head = |r: &SummaryRow| format!("FPR{}", r.n_level);
    let header = [
        "d_out".to_string(),
        "detector".into(),
        "model".into(),
        summary.first().map_or("FPR".into(), fpr_head),
        "AUROC".into(),
        "AUPR".into(),
    ];
    let mut lines: Vec<[String; 6]> = vec![header];
    for r in summary.iter().filter(|r| r.split == "test") {
        lines.push([
            r.d_out.clone(),
            r.detector.to_string(),
            r.model.clone(),
            render_percent(r.fpr_at_n),
            render_percent(r.auroc),
            render_percent(r.aupr),
        ]);
    }
    let widths: Vec<usize> = (0..6)
        .map(|j| lines.iter().map(|l| l[j].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for l in &lines {
        let cells: Vec<String> = l
            .iter()
            .enumerate()
            .map(|(j, c)| {
                if j < 3 {
                    format!("{c:<w$}", w = widths[j])
                } else {
                    format!("{c:>w$}", w = widths[j])
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Serialization(e.to_string()))
}

fn json_bytes<T: Serialize + ?Sized>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn points_csv(header: (&str, &str), pts: &[(f64, f64)]) -> Vec<u8> {
    let mut s = format!("{},{}\n", header.0, header.1);
    for (a, b) in pts {
        s.push_str(&format!("{a},{b}\n"));
    }
    s.into_bytes()
}

/// Flat CSV form of a result row.
#[derive(Serialize)]
struct ResultCsvRow<'a> {
    seed: u64,
    d_in: &'a str,
    d_out: &'a str,
    detector: DetectorKind,
    auroc: f64,
    aupr: f64,
    fpr_at_n: f64,
    n_level: f64,
    model: &'a str,
    split: &'a str,
    lambda: f64,
    base_rate: String,
}

#[derive(Serialize)]
struct CalibrationCsvRow<'a> {
    seed: u64,
    d_out: &'a str,
    model: &'a str,
    method: &'a str,
    rms_error: f64,
    mad_error: f64,
    soft_f1: f64,
    soft_f1_degenerate: bool,
    temperature: f64,
    rescaled: bool,
    bin_count: usize,
}

fn stem(r: &ResultRow) -> String {
    let clean = |s: &str| {
        s.chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
            .collect::<String>()
    };
    format!("{}__{}__{}__{}", clean(&r.model), r.detector, r.split, clean(&r.d_out))
}

/// Writes every report file under `out`: per-seed results, scores, curves
/// and calibration, plus the mean-over-seeds summary and rendered table.
pub fn emit_reports(cfg: &ExperimentConfig, outcome: &ExperimentOutcome, out: &Path) -> Result<Vec<PathBuf>> {
    mkdir(out)?;
    let mut written = Vec::new();
    let mut put = |path: PathBuf, bytes: Vec<u8>| -> Result<()> {
        write(&path, bytes)?;
        written.push(path);
        Ok(())
    };
    put(out.join("config.toml"), cfg.to_toml_string()?.into_bytes())?;
    for s in &outcome.seeds {
        let dir = out.join(format!("seed_{}", s.seed));
        mkdir(&dir)?;
        let rows: Vec<ResultCsvRow> = s
            .rows
            .iter()
            .map(|r| {
                let r = &r.row;
                ResultCsvRow {
                    seed: r.seed,
                    d_in: &r.d_in,
                    d_out: &r.d_out,
                    detector: r.detector,
                    auroc: r.auroc,
                    aupr: r.aupr,
                    fpr_at_n: r.fpr_at_n,
                    n_level: r.n_level,
                    model: &r.model,
                    split: &r.split,
                    lambda: r.lambda,
                    base_rate: r.base_rate.to_string(),
                }
            })
            .collect();
        put(dir.join("results.csv"), csv_bytes(&rows)?)?;
        let json_rows: Vec<&ResultRow> = s.rows.iter().map(|r| &r.row).collect();
        put(
            dir.join("results.json"),
            json_bytes(&serde_json::json!({
                "seed": s.seed,
                "selected_lambda": s.selected_lambda,
                "results": json_rows,
            }))?,
        )?;
        if cfg.write_scores || cfg.write_curves {
            for r in &s.rows {
                let name = stem(&r.row);
                if cfg.write_scores {
                    let sdir = dir.join("scores");
                    mkdir(&sdir)?;
                    let mut buf = Vec::new();
                    scoring::write_scores_csv(&r.scores, &mut buf)?;
                    put(sdir.join(format!("{name}.csv")), buf)?;
                }
                if cfg.write_curves {
                    let cdir = dir.join("curves");
                    mkdir(&cdir)?;
                    put(
                        cdir.join(format!("{name}_roc.csv")),
                        points_csv(("fpr", "tpr"), &metrics::roc_curve(&r.scores)?),
                    )?;
                    put(
                        cdir.join(format!("{name}_pr.csv")),
                        points_csv(("recall", "precision"), &metrics::pr_curve(&r.scores)?),
                    )?;
                }
            }
        }
        if !s.calibration.is_empty() {
            let rows: Vec<CalibrationCsvRow> = s
                .calibration
                .iter()
                .map(|c| CalibrationCsvRow {
                    seed: c.seed,
                    d_out: &c.d_out,
                    model: &c.model,
                    method: &c.method,
                    rms_error: c.report.rms_error,
                    mad_error: c.report.mad_error,
                    soft_f1: c.report.soft_f1,
                    soft_f1_degenerate: c.report.soft_f1_degenerate,
                    temperature: c.report.temperature,
                    rescaled: c.report.rescaled,
                    bin_count: c.report.bin_count,
                })
                .collect();
            put(dir.join("calibration.csv"), csv_bytes(&rows)?)?;
            put(dir.join("calibration.json"), json_bytes(&s.calibration)?)?;
        }
    }
    put(out.join("summary.csv"), csv_bytes(&outcome.summary)?)?;
    put(out.join("summary.json"), json_bytes(&outcome.summary)?)?;
    put(out.join("table.txt"), render_table(&outcome.summary).into_bytes())?;
    if !outcome.calibration_summary.is_empty() {
        put(
            out.join("calibration_summary.csv"),
            csv_bytes(&outcome.calibration_summary)?,
        )?;
        put(
            out.join("calibration_summary.json"),
            json_bytes(&outcome.calibration_summary)?,
        )?;
    }
    Ok(written)
}

/// Runs every seed (in parallel when enabled) and aggregates the results.
pub fn run_seeds(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    run_seeds_with(cfg, Execution::default())
}

pub fn run_seeds_with(cfg: &ExperimentConfig, exec: Execution) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let seeds = exec
        .map_slice(&cfg.seeds, |&s| run_seed(cfg, s))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentOutcome {
        summary: summarize(&seeds),
        calibration_summary: summarize_calibration(&seeds),
        seeds,
    })
}

/// Runs the experiment and writes its reports under `out`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentOutcome> {
    let outcome = run_seeds(cfg)?;
    emit_reports(cfg, &outcome, out)?;
    Ok(outcome)
}
