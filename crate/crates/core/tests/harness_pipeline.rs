use std::io::Write;

use oe_workbench::harness::{
    finetune_oe, ingest_dataset, prepare_data, run_seed, run_seeds, train_baseline, DatasetSource, DatasetSpec,
    ExperimentConfig, Generator, ModelFamily, TrainedModel,
};
use oe_workbench::nn;
use oe_workbench::Error;

const SMALL: &str = r#"
name = "small"
detectors = ["msp", "uniform_ce"]
pipeline = "finetune_oe"
seeds = [0, 1, 2]
epochs = 3
finetune_epochs = 2
hidden = [8]
finetune_lr = 0.05

[d_in]
name = "clusters"
kind = "gaussian_mixture"
k = 3
n_per_cluster = 80
dim = 2
separation = 1.0
std = 0.3

[d_out_oe]
name = "box"
kind = "generator"
generator = "uniform_box"
n = 300
lo = -2.0
hi = 2.0
dim = 2

[[d_out_test]]
name = "rademacher"
kind = "generator"
generator = "rademacher"
n = 100
dim = 2

[[d_out_val]]
name = "noise"
kind = "generator"
generator = "gaussian"
n = 100
std = 2.0
dim = 2
"#;

fn small() -> ExperimentConfig {
    ExperimentConfig::from_toml_str(SMALL).unwrap()
}

fn csv_file(text: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
    f.write_all(text.as_bytes()).unwrap();
    f
}

fn file_spec(name: &str, path: &std::path::Path, dim: usize) -> DatasetSpec {
    DatasetSpec::new(
        name,
        DatasetSource::File {
            path: path.to_path_buf(),
            alphabet: None,
            label_column: None,
            classes: None,
        },
    )
    .with_dim(dim)
}

#[test]
fn summary_is_the_mean_of_seed_rows() {
    let outcome = run_seeds(&small()).unwrap();
    for s in &outcome.summary {
        let per_seed: Vec<_> = outcome
            .seeds
            .iter()
            .flat_map(|r| &r.rows)
            .map(|r| &r.row)
            .filter(|r| r.d_out == s.d_out && r.detector == s.detector && r.model == s.model && r.split == s.split)
            .collect();
        assert_eq!(per_seed.len(), 3);
        let mean = |f: fn(&&oe_workbench::harness::ResultRow) -> f64| {
            let mut acc = 0.0;
            for r in &per_seed {
                acc += f(r);
            }
            acc / per_seed.len() as f64
        };
        assert_eq!(s.auroc, mean(|r| r.auroc));
        assert_eq!(s.aupr, mean(|r| r.aupr));
        assert_eq!(s.fpr_at_n, mean(|r| r.fpr_at_n));
    }
}

#[test]
fn repeated_runs_are_identical() {
    let cfg = small();
    assert_eq!(run_seed(&cfg, 5).unwrap(), run_seed(&cfg, 5).unwrap());
    assert_ne!(run_seed(&cfg, 5).unwrap().rows, run_seed(&cfg, 6).unwrap().rows);
}

#[test]
fn outlier_exposure_set_must_be_disjoint_from_tests() {
    let mut cfg = small();
    cfg.d_out_test[0].name = "box".into();
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));

    let f = csv_file("x0,x1\n0.5,0.5\n1.5,-1.0\n");
    let g = csv_file("x0,x1\n0.25,0.1\n1.5,-1.0\n");
    let mut cfg = small();
    cfg.d_out_oe = file_spec("oe_file", f.path(), 2);
    cfg.d_out_test = vec![file_spec("test_file", g.path(), 2)];
    let err = prepare_data(&cfg, 0).unwrap_err();
    assert!(err.to_string().contains("test_file"), "{err}");
    let h = csv_file("x0,x1\n0.25,0.1\n1.5,-1.5\n");
    cfg.d_out_test = vec![file_spec("test_file", h.path(), 2)];
    prepare_data(&cfg, 0).unwrap();
}

#[test]
fn zero_lambda_finetuning_ignores_outliers() {
    let cfg = small();
    let data = prepare_data(&cfg, 3).unwrap();
    let base = train_baseline(&cfg, ModelFamily::Softmax, &data, 3).unwrap();
    let a = finetune_oe(&cfg, ModelFamily::Softmax, &base, &data, 0.0, 3).unwrap();
    let mut other = data.clone();
    other.oe = ingest_dataset(
        &DatasetSpec::new(
            "other",
            DatasetSource::Generator {
                n: 300,
                generator: Generator::Rademacher,
            },
        )
        .with_dim(2),
        None,
        9,
    )
    .unwrap();
    let b = finetune_oe(&cfg, ModelFamily::Softmax, &base, &other, 0.0, 3).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, base);
    let c = finetune_oe(&cfg, ModelFamily::Softmax, &base, &other, 0.5, 3).unwrap();
    assert_ne!(a, c);
}

#[test]
fn ingestion_errors_name_the_line() {
    let f = csv_file("x0,x1\n0.1,0.2\n0.3,oops\n");
    let err = ingest_dataset(&file_spec("bad", f.path(), 2), None, 0).unwrap_err();
    assert!(matches!(err, Error::Data { line: Some(3), .. }), "{err}");

    let f = csv_file("x0,x1,x2\n0.1,0.2,0.3\n");
    let err = ingest_dataset(&file_spec("wide", f.path(), 2), None, 0).unwrap_err();
    assert!(err.is_validation(), "{err}");

    let err = ingest_dataset(
        &file_spec("missing", std::path::Path::new("/nonexistent/x.csv"), 2),
        None,
        0,
    )
    .unwrap_err();
    assert!(matches!(err, Error::Io { .. }), "{err}");
}

#[test]
fn well_separated_clusters_are_learned_exactly() {
    let mut cfg = small();
    cfg.d_in.source = DatasetSource::GaussianMixture {
        k: 4,
        n_per_cluster: 60,
        separation: 50.0,
        std: 0.5,
        phase: 0.0,
        classes: None,
    };
    cfg.d_in.dim = Some(4);
    cfg.d_out_oe.dim = Some(4);
    cfg.d_out_test[0].dim = Some(4);
    cfg.d_out_val[0].dim = Some(4);
    cfg.lr = 0.01;
    cfg.epochs = 10;
    let data = prepare_data(&cfg, 1).unwrap();
    let TrainedModel::Classifier(p) = train_baseline(&cfg, ModelFamily::Softmax, &data, 1).unwrap() else {
        panic!("classifier expected");
    };
    let (x, labels) = data.train.features().unwrap();
    let logits = nn::forward(&p, x).unwrap().logits().clone();
    for (i, &y) in labels.unwrap().iter().enumerate() {
        let row = logits.row(i);
        let arg = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
        assert_eq!(arg, y, "row {i}");
    }
}

#[test]
fn lambda_selection_ignores_test_outliers() {
    let mut cfg = small();
    cfg.lambda_grid = vec![0.1, 0.5, 2.0];
    let a = run_seed(&cfg, 2).unwrap();
    cfg.d_out_test[0].source = DatasetSource::Generator {
        n: 50,
        generator: Generator::Bernoulli { p: 0.3 },
    };
    let b = run_seed(&cfg, 2).unwrap();
    assert_eq!(a.selected_lambda, b.selected_lambda);
    assert_ne!(a.rows, b.rows);
}
