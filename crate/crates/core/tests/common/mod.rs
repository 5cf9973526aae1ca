//! Independent oracles shared by the integration tests and the acceptance
//! suite.
#![allow(dead_code)]

use oe_workbench::density::{ArModel, DiscreteSequence};
use oe_workbench::nn::{self, Activation, Batch, Batches, NetworkParams, SegmentedBatch};
use oe_workbench::objectives::ObjectiveSpec;
use oe_workbench::scoring::ScoredSet;
use oe_workbench::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `|a - f| / max(|a|, |f|, 1e-6)`.
pub fn rel_err(a: f64, f: f64) -> f64 {
    (a - f).abs() / a.abs().max(f.abs()).max(1e-6)
}

/// Largest relative error between the analytic gradient and central finite
/// differences over every parameter.
pub fn max_fd_error(params: &NetworkParams, objective: &ObjectiveSpec, batches: &Batches<'_>) -> f64 {
    let (_, g) = nn::grad(params, objective, batches).unwrap();
    let analytic: Vec<f64> = g.values().copied().collect();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let eval = |delta: f64| {
            let mut p = params.clone();
            *p.values_mut().nth(i).unwrap() += delta;
            nn::loss(&p, objective, batches).unwrap()
        };
        let f = (eval(h) - eval(-h)) / (2.0 * h);
        worst = worst.max(rel_err(a, f));
    }
    worst
}

/// Smallest |pre-activation| over hidden units, computed directly from the
/// weights; large values keep finite differences away from ReLU kinks.
pub fn min_hidden_preactivation(params: &NetworkParams, x: &Matrix) -> f64 {
    let mut h: Vec<Vec<f64>> = x.iter_rows().map(|r| r.to_vec()).collect();
    let mut smallest = f64::INFINITY;
    let last = params.weights.len() - 1;
    for (l, (w, b)) in params.weights.iter().zip(&params.biases).enumerate() {
        h = h
            .iter()
            .map(|row| {
                (0..w.rows())
                    .map(|j| {
                        let z = b[j] + (0..w.cols()).map(|k| w[(j, k)] * row[k]).sum::<f64>();
                        if l < last {
                            smallest = smallest.min(z.abs());
                            match params.activation {
                                Activation::Relu => z.max(0.0),
                                Activation::Tanh => z.tanh(),
                            }
                        } else {
                            z
                        }
                    })
                    .collect()
            })
            .collect();
    }
    smallest
}

/// The objective families exercised by gradient checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradObjective {
    PlainCe,
    MulticlassOe(f64),
    ConfidenceBranch(f64),
    DensityMargin,
    TokenUniformCe,
}

pub const GRAD_OBJECTIVES: [GradObjective; 7] = [
    GradObjective::PlainCe,
    GradObjective::MulticlassOe(0.0),
    GradObjective::MulticlassOe(0.5),
    GradObjective::MulticlassOe(1.0),
    GradObjective::ConfidenceBranch(0.5),
    GradObjective::DensityMargin,
    GradObjective::TokenUniformCe,
];

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix {
    Matrix::from_vec(n, d, (0..n * d).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

fn random_seqs(rng: &mut ChaCha8Rng, n: usize, len: usize, v: usize) -> Vec<DiscreteSequence> {
    (0..n)
        .map(|_| DiscreteSequence::new((0..len).map(|_| rng.random_range(0..v)).collect(), v).unwrap())
        .collect()
}

fn activation(rng: &mut ChaCha8Rng) -> Activation {
    if rng.random::<bool>() {
        Activation::Relu
    } else {
        Activation::Tanh
    }
}

/// Max finite-difference error for one seeded random configuration of
/// `objective`. Configurations that land within a finite-difference step
/// of a ReLU or hinge kink are redrawn.
pub fn grad_case(objective: GradObjective, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let act = activation(&mut rng);
        let hidden: Vec<usize> = (0..rng.random_range(1..=2)).map(|_| rng.random_range(3..=6)).collect();
        match objective {
            GradObjective::DensityMargin | GradObjective::TokenUniformCe => {
                let v = rng.random_range(2..=4);
                let context = rng.random_range(1..=3);
                let len = rng.random_range(2..=5);
                let n = rng.random_range(2..=4);
                let model = ArModel::new(context, v, &hidden, act, &mut rng).unwrap();
                let inl = random_seqs(&mut rng, n, len, v);
                let out = random_seqs(&mut rng, n, len, v);
                let enc =
                    |s: &[DiscreteSequence]| -> SegmentedBatch { model.encode(&s.iter().collect::<Vec<_>>()).unwrap() };
                let (bi, bo) = (enc(&inl), enc(&out));
                let mut kink = min_hidden_preactivation(&model.net, &bi.rows.inputs)
                    .min(min_hidden_preactivation(&model.net, &bo.rows.inputs));
                let spec = if objective == GradObjective::DensityMargin {
                    let margin = rng.random_range(0.5..3.0);
                    let ni = oe_workbench::density::nll_batch(&model, &inl).unwrap();
                    let no = oe_workbench::density::nll_batch(&model, &out).unwrap();
                    for (a, b) in ni.iter().zip(&no) {
                        kink = kink.min((margin + a - b).abs());
                    }
                    ObjectiveSpec::density_margin(rng.random_range(0.2..2.0), margin)
                } else {
                    ObjectiveSpec::token_uniform_ce(rng.random_range(0.2..2.0))
                };
                if kink < 1e-3 {
                    continue;
                }
                return max_fd_error(
                    &model.net,
                    &spec,
                    &Batches::Sequence {
                        inliers: &bi,
                        outliers: Some(&bo),
                    },
                );
            }
            _ => {
                let d = rng.random_range(2..=5);
                let k = rng.random_range(2..=5);
                let n = rng.random_range(3..=6);
                let mut dims = vec![d];
                dims.extend(&hidden);
                dims.push(k);
                let branch = matches!(objective, GradObjective::ConfidenceBranch(_));
                let params = NetworkParams::init(&dims, act, branch, &mut rng).unwrap();
                let x = random_matrix(&mut rng, n, d);
                let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
                let n_out = rng.random_range(2..=5);
                let xo = random_matrix(&mut rng, n_out, d);
                if min_hidden_preactivation(&params, &x).min(min_hidden_preactivation(&params, &xo)) < 1e-3 {
                    continue;
                }
                let spec = match objective {
                    GradObjective::PlainCe => ObjectiveSpec::plain_ce(),
                    GradObjective::MulticlassOe(l) => ObjectiveSpec::multiclass_oe(l),
                    GradObjective::ConfidenceBranch(l) => ObjectiveSpec::confidence_branch_oe(l),
                    _ => unreachable!(),
                };
                let inl = Batch::new(x, Some(labels)).unwrap();
                let out = Batch::unlabeled(xo).unwrap();
                return max_fd_error(
                    &params,
                    &spec,
                    &Batches::Classifier {
                        inliers: &inl,
                        outliers: Some(&out),
                    },
                );
            }
        }
    }
}

/// AUROC by counting every (outlier, inlier) pair; ties count one half.
pub fn auroc_pairwise(s: &ScoredSet) -> f64 {
    let mut twice = 0u64;
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
    twice as f64 / (2 * s.out_scores.len() * s.in_scores.len()) as f64
}

/// Average precision by sweeping every distinct threshold from high to low:
/// recall gains weighted by the precision at that threshold.
pub fn aupr_sweep(s: &ScoredSet) -> f64 {
    let mut thresholds: Vec<f64> = s.in_scores.iter().chain(&s.out_scores).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let n_pos = s.out_scores.len();
    let mut ap = 0.0;
    let mut prev_tp = 0usize;
    for t in thresholds {
        let tp = s.out_scores.iter().filter(|&&o| o >= t).count();
        let fp = s.in_scores.iter().filter(|&&i| i >= t).count();
        ap += (tp - prev_tp) as f64 / n_pos as f64 * (tp as f64 / (tp + fp) as f64);
        prev_tp = tp;
    }
    ap
}

/// FPR at the highest threshold whose TPR reaches `n` percent.
pub fn fpr_sweep(s: &ScoredSet, n: f64) -> f64 {
    let mut thresholds: Vec<f64> = s.out_scores.clone();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    for t in thresholds {
        let tp = s.out_scores.iter().filter(|&&o| o >= t).count();
        if tp as f64 * 100.0 >= n * s.out_scores.len() as f64 - 1e-9 {
            let fp = s.in_scores.iter().filter(|&&i| i >= t).count();
            return fp as f64 / s.in_scores.len() as f64;
        }
    }
    unreachable!("the lowest outlier score reaches full recall")
}

/// Random score set with sizes in `1..=50` drawn from a small value grid so
/// ties are common.
pub fn random_scored_set(rng: &mut ChaCha8Rng) -> ScoredSet {
    let ni = rng.random_range(1..=50);
    let no = rng.random_range(1..=50);
    let levels = rng.random_range(2..=12);
    let shift = rng.random_range(0..4) as f64;
    let draw = |rng: &mut ChaCha8Rng, s: f64| (rng.random_range(0..levels) as f64 + s) / 4.0;
    ScoredSet::new(
        (0..ni).map(|_| draw(rng, 0.0)).collect(),
        (0..no).map(|_| draw(rng, shift)).collect(),
    )
}

/// Sum of `exp(-nll)` over every sequence of length `len`.
pub fn total_probability(model: &ArModel, len: usize) -> f64 {
    let v = model.alphabet;
    let count = v.pow(len as u32);
    let seqs: Vec<DiscreteSequence> = (0..count)
        .map(|mut c| {
            let s = (0..len)
                .map(|_| {
                    let d = c % v;
                    c /= v;
                    d
                })
                .collect();
            DiscreteSequence::new(s, v).unwrap()
        })
        .collect();
    oe_workbench::density::nll_batch(model, &seqs)
        .unwrap()
        .iter()
        .map(|l| (-l).exp())
        .sum()
}

/// Round-trip, range and distribution checks on every outlier generator and
/// corruption. Returns the names of failing checks.
pub fn generator_failures() -> Vec<String> {
    use oe_workbench::outlier_gen::*;
    let mut failed = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failed.push(name.to_string());
        }
    };
    let n = 10_000;
    let tol = |var: f64| 5.0 * (var / n as f64).sqrt();
    let col_mean = |m: &Matrix, j: usize| m.iter_rows().map(|r| r[j]).sum::<f64>() / m.rows() as f64;

    let g = gen_gaussian(n, 3, None, 11);
    check("gaussian mean", (0..3).all(|j| col_mean(&g, j).abs() < tol(1.0)));
    let gc = gen_gaussian(n, 3, Some(ValueRange::SymmetricOne), 11);
    check(
        "gaussian clipped range",
        gc.as_slice().iter().all(|v| (-1.0..=1.0).contains(v)),
    );
    check(
        "gaussian seeded",
        gen_gaussian(50, 3, None, 4) == gen_gaussian(50, 3, None, 4),
    );

    let r = gen_rademacher(n, 3, 12);
    check("rademacher values", r.as_slice().iter().all(|&v| v == 1.0 || v == -1.0));
    check("rademacher mean", (0..3).all(|j| col_mean(&r, j).abs() < tol(1.0)));

    let b = gen_bernoulli(n, 3, 0.2, 13).unwrap();
    check("bernoulli values", b.as_slice().iter().all(|&v| v == 0.0 || v == 1.0));
    check(
        "bernoulli mean",
        (0..3).all(|j| (col_mean(&b, j) - 0.2).abs() < tol(0.16)),
    );

    let flat = GridShape::flat(3, ValueRange::ZeroOne).unwrap();
    let u = gen_uniform_noise(n, &flat, 14);
    check("uniform range", u.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    check(
        "uniform mean",
        (0..3).all(|j| (col_mean(&u, j) - 0.5).abs() < tol(1.0 / 12.0)),
    );

    let img = GridShape::new(16, 16, 3, ValueRange::ZeroOne).unwrap();
    let blobs = gen_blobs(100, &img, 15).unwrap();
    check(
        "blobs two-valued",
        blobs
            .iter_rows()
            .all(|row| row.iter().all(|&v| v == 0.0 || v == 1.0) && row.contains(&0.0) && row.contains(&1.0)),
    );

    let rows = gen_uniform_noise(8, &img, 16);
    let x = rows.row(0);
    check("arithmetic mean idempotent", arithmetic_mean(x, x) == x);
    check(
        "geometric mean idempotent",
        geometric_mean(x, x, ValueRange::ZeroOne)
            .iter()
            .zip(x)
            .all(|(a, b)| (a - b).abs() < 1e-12),
    );
    let pairs = corrupt_arithmetic_mean(&rows, 20, 1).unwrap();
    check(
        "arithmetic mean range",
        pairs.as_slice().iter().all(|v| (0.0..=1.0).contains(v)),
    );

    let perm = [5, 3, 0, 12, 9, 1, 15, 7, 2, 4, 6, 8, 10, 11, 13, 14];
    let shuffled = jigsaw(x, &img, &perm).unwrap();
    check(
        "jigsaw round trip",
        jigsaw(&shuffled, &img, &inverse_permutation(&perm)).unwrap() == x,
    );
    let mut a = shuffled.clone();
    let mut bb = x.to_vec();
    a.sort_by(f64::total_cmp);
    bb.sort_by(f64::total_cmp);
    check("jigsaw preserves pixels", a == bb);

    check(
        "speckle zero intensity",
        corrupt_speckle(&rows, 0.0, ValueRange::ZeroOne, 2).unwrap() == rows,
    );
    check(
        "speckle range",
        corrupt_speckle(&rows, 3.0, ValueRange::ZeroOne, 2)
            .unwrap()
            .as_slice()
            .iter()
            .all(|v| (0.0..=1.0).contains(v)),
    );

    let ghost = GhostParams {
        shifts: [(2, -1), (-3, 3), (1, 1)],
        order: [2, 0, 1],
    };
    let y = rgb_ghost(x, &img, &ghost).unwrap();
    check("ghost round trip", rgb_ghost(&y, &img, &ghost.inverse()).unwrap() == x);
    check(
        "ghost identity",
        rgb_ghost(x, &img, &GhostParams::IDENTITY).unwrap() == x,
    );

    let mask = [true, false, true];
    check(
        "invert involution",
        invert(&invert(x, &img, &mask).unwrap(), &img, &mask).unwrap() == x,
    );
    let sym = GridShape::new(1, 1, 1, ValueRange::SymmetricOne).unwrap();
    check("invert symmetric", invert(&[0.3], &sym, &[true]).unwrap() == vec![-0.3]);
    failed
}
