use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use oe_workbench::calibration::{self, PredictionRecord};
use oe_workbench::harness::{self, presets, ExperimentConfig, ModelFamily, PipelineKind, TrainedModel};
use oe_workbench::{Error, Result};

/// Outlier exposure workbench.
#[derive(Parser)]
#[command(name = "oewb", version, about)]
struct Cli {
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Seed; defaults to the first seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train a baseline model without outliers.
    Train(Common),
    /// Fine-tune a saved model with outlier exposure.
    Finetune {
        #[command(flatten)]
        common: Common,
        /// Directory holding the model to fine-tune.
        #[arg(long)]
        model: PathBuf,
    },
    /// Score the test sets with a saved model and write detection reports.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// Compute calibration metrics from a `confidence,correct` CSV.
    Calibrate {
        #[arg(long)]
        input: PathBuf,
        /// Rescale confidences from [1/k, 1] onto [0, 1] for k classes.
        #[arg(long)]
        classes: Option<usize>,
        /// Output directory; the report is printed when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write every outlier dataset of a config as CSV.
    GenOutliers(Common),
    /// Run the full configured pipeline.
    Run {
        /// Experiment config (TOML).
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        config: Option<PathBuf>,
        /// Bundled preset name instead of a config file.
        #[arg(long)]
        preset: Option<String>,
        /// Run only this seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the in-distribution train, validation and test splits as CSV.
    MakeData(Common),
}

struct Ctx {
    quiet: bool,
}

impl Ctx {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }
}

fn load(common: &Common) -> Result<(ExperimentConfig, u64)> {
    let cfg = ExperimentConfig::load(&common.config)?;
    let seed = common.seed.unwrap_or(cfg.seeds[0]);
    Ok((cfg, seed))
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn family(cfg: &ExperimentConfig) -> ModelFamily {
    cfg.families()[0]
}

fn train(ctx: &Ctx, common: &Common) -> Result<()> {
    let (cfg, seed) = load(common)?;
    let fam = family(&cfg);
    let data = harness::prepare_data(&cfg, seed)?;
    let model = harness::train_baseline(&cfg, fam, &data, seed)?;
    harness::save_model(&model, fam, &common.out)?;
    ctx.say(format!(
        "trained {} model (seed {seed}) -> {}",
        fam.name(),
        common.out.display()
    ));
    Ok(())
}

fn finetune(ctx: &Ctx, common: &Common, model_dir: &Path) -> Result<()> {
    let (cfg, seed) = load(common)?;
    let (model, fam) = harness::load_model(model_dir)?;
    let data = harness::prepare_data(&cfg, seed)?;
    let lambda = cfg.lambda_for(fam);
    let tuned = harness::finetune_oe(&cfg, fam, &model, &data, lambda, seed)?;
    harness::save_model(&tuned, fam, &common.out)?;
    ctx.say(format!("fine-tuned with lambda {lambda} -> {}", common.out.display()));
    Ok(())
}

fn eval(ctx: &Ctx, common: &Common, model_dir: &Path) -> Result<()> {
    let (cfg, seed) = load(common)?;
    let (model, fam) = harness::load_model(model_dir)?;
    let cfg = ExperimentConfig {
        detectors: cfg
            .detectors
            .iter()
            .copied()
            .filter(|&d| ModelFamily::of(d) == fam)
            .collect(),
        seeds: vec![seed],
        ..cfg
    };
    if cfg.detectors.is_empty() {
        return Err(Error::config(format!(
            "the config has no detector for a {} model",
            fam.name()
        )));
    }
    let data = harness::prepare_data(&cfg, seed)?;
    let label = model_dir.file_name().and_then(|n| n.to_str()).unwrap_or("model");
    let rows = harness::evaluate(
        &cfg,
        &model,
        label,
        cfg.lambda_for(fam),
        &data.test,
        &data.tests,
        "test",
        seed,
    )?;
    let mut calib = Vec::new();
    if cfg.calibration {
        if let TrainedModel::Classifier(p) = &model {
            calib = harness::calibrate_model(p, fam, label, &data, seed)?;
        }
    }
    let result = harness::SeedResult {
        seed,
        rows,
        calibration: calib,
        selected_lambda: Default::default(),
    };
    let outcome = harness::ExperimentOutcome {
        summary: harness::summarize(std::slice::from_ref(&result)),
        calibration_summary: harness::summarize_calibration(std::slice::from_ref(&result)),
        seeds: vec![result],
    };
    harness::emit_reports(&cfg, &outcome, &common.out)?;
    ctx.say(harness::render_table(&outcome.summary));
    Ok(())
}

fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let name = path.display().to_string();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::data(&name, None, e.to_string()))?;
    let headers = rdr
        .headers()
        .map_err(|e| Error::data(&name, Some(1), e.to_string()))?
        .clone();
    let col = |h: &str| {
        headers
            .iter()
            .position(|x| x.trim() == h)
            .ok_or_else(|| Error::data(&name, Some(1), format!("missing column '{h}'")))
    };
    let (ci, ki) = (col("confidence")?, col("correct")?);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::data(&name, Some(line), e.to_string()))?;
        let get = |j: usize| rec.get(j).map(str::trim).unwrap_or("");
        let confidence: f64 = get(ci)
            .parse()
            .map_err(|_| Error::data(&name, Some(line), format!("confidence '{}' is not a number", get(ci))))?;
        let correct = match get(ki) {
            "1" | "true" | "True" => true,
            "0" | "false" | "False" => false,
            other => {
                return Err(Error::data(
                    &name,
                    Some(line),
                    format!("correct '{other}' is not a boolean"),
                ))
            }
        };
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::data(
                &name,
                Some(line),
                format!("confidence {confidence} outside [0, 1]"),
            ));
        }
        out.push(PredictionRecord::new(confidence, correct));
    }
    if out.is_empty() {
        return Err(Error::data(&name, None, "no predictions"));
    }
    Ok(out)
}

fn calibrate(ctx: &Ctx, input: &Path, classes: Option<usize>, out: Option<&Path>) -> Result<()> {
    let mut records = read_predictions(input)?;
    if let Some(k) = classes {
        for r in &mut records {
            r.confidence = calibration::posterior_rescale(r.confidence, k)?;
        }
    }
    let report = calibration::calibration_report(&records, 1.0, classes.is_some())?;
    let json = serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n";
    match out {
        Some(dir) => {
            mkdir(dir)?;
            let path = dir.join("calibration.json");
            std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
            ctx.say(format!(
                "rms {:.4}  mad {:.4}  soft F1 {:.4} -> {}",
                report.rms_error,
                report.mad_error,
                report.soft_f1,
                path.display()
            ));
        }
        None => print!("{json}"),
    }
    Ok(())
}

fn gen_outliers(ctx: &Ctx, common: &Common) -> Result<()> {
    let (cfg, seed) = load(common)?;
    let data = harness::prepare_data(&cfg, seed)?;
    mkdir(&common.out)?;
    let all = std::iter::once((cfg.d_out_oe.name.clone(), data.oe))
        .chain(data.tests)
        .chain(data.vals);
    for (name, ds) in all {
        let path = common.out.join(format!("{name}.csv"));
        harness::save_dataset(&ds, &path)?;
        ctx.say(format!("{name}: {} rows -> {}", ds.len(), path.display()));
    }
    Ok(())
}

fn make_data(ctx: &Ctx, common: &Common) -> Result<()> {
    let (cfg, seed) = load(common)?;
    let data = harness::prepare_data(&cfg, seed)?;
    mkdir(&common.out)?;
    for (split, ds) in [("train", &data.train), ("val", &data.val), ("test", &data.test)] {
        let path = common.out.join(format!("{}_{split}.csv", cfg.d_in.name));
        harness::save_dataset(ds, &path)?;
        ctx.say(format!("{split}: {} rows -> {}", ds.len(), path.display()));
    }
    Ok(())
}

fn run(ctx: &Ctx, config: Option<&Path>, preset: Option<&str>, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut cfg = match (config, preset) {
        (Some(p), _) => ExperimentConfig::load(p)?,
        (None, Some(name)) => presets::by_name(name).ok_or_else(|| {
            Error::config(format!(
                "unknown preset '{name}' (available: {})",
                presets::NAMES.join(", ")
            ))
        })??,
        (None, None) => return Err(Error::config("--config or --preset is required")),
    };
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    let outcome = harness::run_experiment(&cfg, out)?;
    if !ctx.quiet {
        let label = match cfg.pipeline {
            PipelineKind::BaselineOnly => "baseline_only",
            PipelineKind::FinetuneOe => "finetune_oe",
            PipelineKind::ScratchOe => "scratch_oe",
        };
        println!("{} ({label}, {} seeds) -> {}", cfg.name, cfg.seeds.len(), out.display());
        print!("{}", harness::render_table(&outcome.summary));
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    let ctx = Ctx { quiet: cli.quiet };
    match &cli.command {
        Command::Train(c) => train(&ctx, c),
        Command::Finetune { common, model } => finetune(&ctx, common, model),
        Command::Eval { common, model } => eval(&ctx, common, model),
        Command::Calibrate { input, classes, out } => calibrate(&ctx, input, *classes, out.as_deref()),
        Command::GenOutliers(c) => gen_outliers(&ctx, c),
        Command::Run {
            config,
            preset,
            seed,
            out,
        } => run(&ctx, config.as_deref(), preset.as_deref(), *seed, out),
        Command::MakeData(c) => make_data(&ctx, c),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
