//! Dataset specifications, synthesis and file ingestion.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::density::DiscreteSequence;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::outlier_gen::{self as og, GridShape, ValueRange};

/// In-memory dataset: feature rows with optional class labels, or discrete
/// sequences.
#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Features { x: Matrix, labels: Option<Vec<usize>> },
    Sequences(Vec<DiscreteSequence>),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Features { x, .. } => x.rows(),
            Dataset::Sequences(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        match self {
            Dataset::Features { x, labels } => Dataset::Features {
                x: x.select_rows(idx),
                labels: labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
            },
            Dataset::Sequences(s) => Dataset::Sequences(idx.iter().map(|&i| s[i].clone()).collect()),
        }
    }

    pub fn features(&self) -> Result<(&Matrix, Option<&[usize]>)> {
        match self {
            Dataset::Features { x, labels } => Ok((x, labels.as_deref())),
            Dataset::Sequences(_) => Err(Error::config("expected a feature dataset, got sequences")),
        }
    }

    pub fn sequences(&self) -> Result<&[DiscreteSequence]> {
        match self {
            Dataset::Sequences(s) => Ok(s),
            Dataset::Features { .. } => Err(Error::config("expected a sequence dataset, got features")),
        }
    }

    fn row_keys(&self) -> Vec<Vec<u64>> {
        match self {
            Dataset::Features { x, .. } => x
                .iter_rows()
                .map(|r| r.iter().map(|v| (v + 0.0).to_bits()).collect())
                .collect(),
            Dataset::Sequences(s) => s
                .iter()
                .map(|q| q.symbols().iter().map(|&v| v as u64).collect())
                .collect(),
        }
    }

    /// First row of `other` that exactly duplicates a row of `self`, as
    /// `(self_index, other_index)`.
    pub fn find_duplicate(&self, other: &Dataset) -> Option<(usize, usize)> {
        let mut keys = std::collections::HashMap::new();
        for (i, k) in self.row_keys().into_iter().enumerate() {
            keys.entry(k).or_insert(i);
        }
        other
            .row_keys()
            .into_iter()
            .enumerate()
            .find_map(|(j, k)| keys.get(&k).map(|&i| (i, j)))
    }
}

/// Where a dataset's rows come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    /// CSV with a header (`.oewd` files use the binary layout instead).
    /// Feature files declare the dataset `dim`; sequence files declare
    /// `alphabet`.
    File {
        path: PathBuf,
        #[serde(default)]
        alphabet: Option<usize>,
        /// Name of an integer class column, if any.
        #[serde(default)]
        label_column: Option<String>,
        #[serde(default)]
        classes: Option<usize>,
    },
    /// Labeled Gaussian clusters in the dataset's `dim` dimensions, see
    /// [`make_synthetic_din`].
    GaussianMixture {
        k: usize,
        n_per_cluster: usize,
        separation: f64,
        #[serde(default = "one")]
        std: f64,
        /// Angle offset in radians of the polygon layout.
        #[serde(default)]
        phase: f64,
        /// Keep only these clusters (labels are preserved).
        #[serde(default)]
        classes: Option<Vec<usize>>,
    },
    Generator {
        n: usize,
        #[serde(flatten)]
        generator: Generator,
    },
}

fn one() -> f64 {
    1.0
}

/// Named generators. Feature generators need `dim` or a grid `shape`;
/// corruptions transform the in-distribution training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
pub enum Generator {
    Gaussian {
        #[serde(default)]
        mean: Option<Vec<f64>>,
        #[serde(default = "one")]
        std: f64,
    },
    Rademacher,
    Bernoulli {
        p: f64,
    },
    Uniform,
    UniformBox {
        lo: f64,
        hi: f64,
    },
    /// Points near a circle in the first two coordinates.
    Ring {
        radius: f64,
        width: f64,
    },
    Blobs,
    ArithmeticMean,
    GeometricMean,
    Jigsaw,
    Speckle {
        #[serde(default = "default_speckle")]
        intensity: f64,
    },
    RgbGhost,
    Invert,
    /// Markov chain with a fixed random transition matrix: each step repeats
    /// the previous symbol with probability `stay`, otherwise draws from a
    /// Dirichlet(`concentration`) row drawn once from `structure_seed`.
    Markov {
        alphabet: usize,
        length: usize,
        #[serde(default)]
        stay: f64,
        #[serde(default = "one")]
        concentration: f64,
        #[serde(default)]
        structure_seed: u64,
    },
    /// Blocks of `run` copies of a symbol; each block's symbol is drawn
    /// uniformly from those differing from the previous block's.
    Runs {
        alphabet: usize,
        length: usize,
        run: usize,
    },
    /// A random pattern of length `period`, repeated.
    Periodic {
        alphabet: usize,
        length: usize,
        period: usize,
    },
    /// `x_t = x_0 + step * t (mod alphabet)` from a uniform start.
    Ramp {
        alphabet: usize,
        length: usize,
        step: usize,
    },
    UniformSequence {
        alphabet: usize,
        length: usize,
    },
}

fn default_speckle() -> f64 {
    og::DEFAULT_SPECKLE_INTENSITY
}

impl Generator {
    pub fn needs_inliers(&self) -> bool {
        matches!(
            self,
            Generator::ArithmeticMean
                | Generator::GeometricMean
                | Generator::Jigsaw
                | Generator::Speckle { .. }
                | Generator::RgbGhost
                | Generator::Invert
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    #[serde(flatten)]
    pub source: DatasetSource,
    /// Grid layout for image-like rows; rows are also checked against its
    /// value range.
    #[serde(default)]
    pub shape: Option<GridShape>,
    /// Flat feature dimension when no grid is given.
    #[serde(default)]
    pub dim: Option<usize>,
    /// Range check for flat features.
    #[serde(default)]
    pub value_range: Option<ValueRange>,
}

impl DatasetSpec {
    pub fn new(name: impl Into<String>, source: DatasetSource) -> Self {
        DatasetSpec {
            name: name.into(),
            source,
            shape: None,
            dim: None,
            value_range: None,
        }
    }

    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = Some(dim);
        self
    }

    pub fn with_value_range(mut self, r: ValueRange) -> Self {
        self.value_range = Some(r);
        self
    }

    pub fn with_shape(mut self, shape: GridShape) -> Self {
        self.shape = Some(shape);
        self
    }

    fn feature_dim(&self) -> Option<usize> {
        self.shape.map(|s| s.dim()).or(self.dim)
    }

    fn range(&self) -> Option<ValueRange> {
        self.shape.map(|s| s.value_range).or(self.value_range)
    }

    fn grid(&self) -> Result<GridShape> {
        match (self.shape, self.feature_dim()) {
            (Some(s), _) => Ok(s),
            (None, Some(d)) => GridShape::flat(d, self.value_range.unwrap_or_default()),
            (None, None) => Err(Error::config(format!("dataset '{}' needs `dim` or `shape`", self.name))),
        }
    }

    fn loc(&self) -> String {
        format!("dataset '{}'", self.name)
    }
}

/// `k` labeled Gaussian clusters of `n_per_cluster` points in `dim`
/// dimensions with per-coordinate standard deviation `std`. Cluster means are
/// the standard basis vectors scaled by `separation` when `k <= dim` (a
/// scaled simplex); otherwise they sit on a regular polygon of radius
/// `separation` in the first two coordinates.
pub fn make_synthetic_din(
    k: usize,
    n_per_cluster: usize,
    dim: usize,
    separation: f64,
    std: f64,
    seed: u64,
) -> Result<Dataset> {
    make_gaussian_mixture(k, n_per_cluster, dim, separation, std, 0.0, seed)
}

/// [`make_synthetic_din`] with the polygon layout rotated by `phase` radians.
pub fn make_gaussian_mixture(
    k: usize,
    n_per_cluster: usize,
    dim: usize,
    separation: f64,
    std: f64,
    phase: f64,
    seed: u64,
) -> Result<Dataset> {
    if k < 2 {
        return Err(Error::config(format!(
            "a classifier needs at least 2 clusters, got {k}"
        )));
    }
    if dim == 0 || n_per_cluster == 0 {
        return Err(Error::config("clusters need positive dimension and size"));
    }
    if k > dim && dim < 2 {
        return Err(Error::config(format!("{k} clusters do not fit in {dim} dimension")));
    }
    if !(separation.is_finite() && std.is_finite() && std >= 0.0) {
        return Err(Error::parameter("separation and std must be finite, std nonnegative"));
    }
    let means: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            let mut m = vec![0.0; dim];
            if k <= dim {
                m[c] = separation;
            } else {
                let a = phase + std::f64::consts::TAU * c as f64 / k as f64;
                m[0] = separation * a.cos();
                m[1] = separation * a.sin();
            }
            m
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(k * n_per_cluster * dim);
    let mut labels = Vec::with_capacity(k * n_per_cluster);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..n_per_cluster {
            data.extend(mean.iter().map(|&m| m + std * rng.sample::<f64, _>(StandardNormal)));
            labels.push(c);
        }
    }
    Ok(Dataset::Features {
        x: Matrix::from_vec(k * n_per_cluster, dim, data)?,
        labels: Some(labels),
    })
}

fn sequences(
    n: usize,
    alphabet: usize,
    length: usize,
    seed: u64,
    f: impl Fn(&mut ChaCha8Rng) -> Vec<usize>,
) -> Result<Dataset> {
    if alphabet < 2 || length == 0 {
        return Err(Error::config("sequence generators need alphabet >= 2 and length >= 1"));
    }
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            DiscreteSequence::new(f(&mut rng), alphabet)
        })
        .collect::<Result<Vec<_>>>()
        .map(Dataset::Sequences)
}

fn dirichlet_row(rng: &mut ChaCha8Rng, v: usize, concentration: f64) -> Result<Vec<f64>> {
    let gamma = rand_distr::Gamma::new(concentration, 1.0)
        .map_err(|e| Error::parameter(format!("dirichlet concentration: {e}")))?;
    let g: Vec<f64> = (0..v).map(|_| rng.sample(gamma).max(1e-300)).collect();
    let s: f64 = g.iter().sum();
    Ok(g.into_iter().map(|x| x / s).collect())
}

fn draw(rng: &mut ChaCha8Rng, p: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

fn generate(
    spec: &DatasetSpec,
    n: usize,
    generator: &Generator,
    inliers: Option<&Dataset>,
    seed: u64,
) -> Result<Dataset> {
    let unlabeled = |x: Matrix| Ok(Dataset::Features { x, labels: None });
    let source_rows = || -> Result<&Matrix> {
        match inliers {
            Some(d) => Ok(d.features()?.0),
            None => Err(Error::config(format!(
                "{} corrupts inliers but none are available",
                spec.loc()
            ))),
        }
    };
    let pool = |rows: &Matrix| -> Result<Matrix> {
        if rows.rows() == 0 {
            return Err(Error::input("no inlier rows to corrupt"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..rows.rows())).collect();
        Ok(rows.select_rows(&idx))
    };
    match generator {
        Generator::Gaussian { mean, std } => {
            let g = spec.grid()?;
            if let Some(m) = mean {
                if m.len() != g.dim() {
                    return Err(Error::config(format!(
                        "{}: mean has {} entries for dimension {}",
                        spec.loc(),
                        m.len(),
                        g.dim()
                    )));
                }
            }
            let z = og::gen_gaussian(n, g.dim(), None, seed);
            let range = spec.range();
            unlabeled(Matrix::from_vec(
                n,
                g.dim(),
                z.as_slice()
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| {
                        let x = mean.as_ref().map_or(0.0, |m| m[i % g.dim()]) + std * v;
                        range.map_or(x, |r| r.clip(x))
                    })
                    .collect(),
            )?)
        }
        Generator::Rademacher => unlabeled(og::gen_rademacher(n, spec.grid()?.dim(), seed)),
        Generator::Bernoulli { p } => unlabeled(og::gen_bernoulli(n, spec.grid()?.dim(), *p, seed)?),
        Generator::Uniform => unlabeled(og::gen_uniform_noise(n, &spec.grid()?, seed)),
        Generator::UniformBox { lo, hi } => unlabeled(og::gen_uniform_box(n, spec.grid()?.dim(), *lo, *hi, seed)?),
        Generator::Ring { radius, width } => {
            let d = spec.grid()?.dim();
            if d < 2 {
                return Err(Error::config(format!("{}: ring needs dimension >= 2", spec.loc())));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut x = Matrix::zeros(n, d);
            for i in 0..n {
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                let r = radius + width * rng.sample::<f64, _>(StandardNormal);
                x[(i, 0)] = r * a.cos();
                x[(i, 1)] = r * a.sin();
            }
            unlabeled(x)
        }
        Generator::Blobs => unlabeled(og::gen_blobs(n, &spec.grid()?, seed)?),
        Generator::ArithmeticMean => unlabeled(og::corrupt_arithmetic_mean(source_rows()?, n, seed)?),
        Generator::GeometricMean => {
            let range = spec.range().unwrap_or_default();
            unlabeled(og::corrupt_geometric_mean(source_rows()?, n, range, seed)?)
        }
        Generator::Jigsaw => unlabeled(og::corrupt_jigsaw(&pool(source_rows()?)?, &spec.grid()?, seed)?),
        Generator::Speckle { intensity } => {
            let range = spec.range().unwrap_or(ValueRange::SymmetricOne);
            unlabeled(og::corrupt_speckle(&pool(source_rows()?)?, *intensity, range, seed)?)
        }
        Generator::RgbGhost => unlabeled(og::corrupt_rgb_ghost(&pool(source_rows()?)?, &spec.grid()?, seed)?),
        Generator::Invert => unlabeled(og::corrupt_invert(&pool(source_rows()?)?, &spec.grid()?, None, seed)?),
        &Generator::Markov {
            alphabet,
            length,
            stay,
            concentration,
            structure_seed,
        } => {
            if !(0.0..=1.0).contains(&stay) {
                return Err(Error::parameter(format!("{}: stay must be in [0, 1]", spec.loc())));
            }
            let mut srng = ChaCha8Rng::seed_from_u64(structure_seed);
            let init = dirichlet_row(&mut srng, alphabet.max(2), concentration)?;
            let rows = (0..alphabet.max(2))
                .map(|_| dirichlet_row(&mut srng, alphabet.max(2), concentration))
                .collect::<Result<Vec<_>>>()?;
            sequences(n, alphabet, length, seed, |rng| {
                let mut s = vec![draw(rng, &init)];
                while s.len() < length {
                    let prev = *s.last().expect("nonempty");
                    let next = if rng.random::<f64>() < stay {
                        prev
                    } else {
                        draw(rng, &rows[prev])
                    };
                    s.push(next);
                }
                s
            })
        }
        &Generator::Runs { alphabet, length, run } => {
            if run == 0 {
                return Err(Error::parameter("run length must be positive"));
            }
            sequences(n, alphabet, length, seed, |rng| {
                let mut s = Vec::with_capacity(length);
                while s.len() < length {
                    let v = match s.last() {
                        Some(&prev) => (prev + rng.random_range(1..alphabet)) % alphabet,
                        None => rng.random_range(0..alphabet),
                    };
                    s.extend(std::iter::repeat_n(v, run.min(length - s.len())));
                }
                s
            })
        }
        &Generator::Periodic {
            alphabet,
            length,
            period,
        } => {
            if period == 0 {
                return Err(Error::parameter("period must be positive"));
            }
            sequences(n, alphabet, length, seed, |rng| {
                let pattern: Vec<usize> = (0..period).map(|_| rng.random_range(0..alphabet)).collect();
                (0..length).map(|t| pattern[t % period]).collect()
            })
        }
        &Generator::Ramp { alphabet, length, step } => sequences(n, alphabet, length, seed, |rng| {
            let start = rng.random_range(0..alphabet);
            (0..length).map(|t| (start + step * t) % alphabet).collect()
        }),
        &Generator::UniformSequence { alphabet, length } => sequences(n, alphabet, length, seed, |rng| {
            (0..length).map(|_| rng.random_range(0..alphabet)).collect()
        }),
    }
}

/// Materializes a dataset. `inliers` supplies the rows that corruption
/// generators transform.
pub fn ingest_dataset(spec: &DatasetSpec, inliers: Option<&Dataset>, seed: u64) -> Result<Dataset> {
    let ds = match &spec.source {
        DatasetSource::File {
            path,
            alphabet,
            label_column,
            classes,
        } => read_dataset(path, spec.feature_dim(), *alphabet, label_column.as_deref(), *classes)?,
        DatasetSource::GaussianMixture {
            k,
            n_per_cluster,
            separation,
            std,
            phase,
            classes,
        } => {
            let dim = spec
                .feature_dim()
                .ok_or_else(|| Error::config(format!("{} needs `dim`", spec.loc())))?;
            let ds = make_gaussian_mixture(*k, *n_per_cluster, dim, *separation, *std, *phase, seed)?;
            match classes {
                None => ds,
                Some(keep) => {
                    if let Some(c) = keep.iter().find(|&&c| c >= *k) {
                        return Err(Error::config(format!(
                            "{}: class {c} out of range for k = {k}",
                            spec.loc()
                        )));
                    }
                    let (_, labels) = ds.features()?;
                    let keep: HashSet<usize> = keep.iter().copied().collect();
                    let idx: Vec<usize> = (0..ds.len())
                        .filter(|&i| keep.contains(&labels.expect("labeled")[i]))
                        .collect();
                    ds.select(&idx)
                }
            }
        }
        DatasetSource::Generator { n, generator } => generate(spec, *n, generator, inliers, seed)?,
    };
    if ds.is_empty() {
        return Err(Error::data(spec.name.clone(), None, "dataset is empty"));
    }
    if let Dataset::Features { x, .. } = &ds {
        if let Some(d) = spec.feature_dim() {
            if x.cols() != d {
                return Err(Error::data(
                    spec.name.clone(),
                    None,
                    format!("rows have {} features, expected {d}", x.cols()),
                ));
            }
        }
        if let Some(r) = spec.range() {
            if let Some(i) = (0..x.rows()).find(|&i| !x.row(i).iter().all(|&v| r.contains(v))) {
                return Err(Error::data(
                    spec.name.clone(),
                    Some(i + 1),
                    "value outside the declared range",
                ));
            }
        }
    }
    Ok(ds)
}

/// Shuffled train / validation / test partition with the given fractions
/// (the test part takes the remainder).
pub fn split_dataset(ds: &Dataset, train: f64, val: f64, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    if !(train > 0.0 && val >= 0.0 && train + val < 1.0) {
        return Err(Error::config(format!(
            "invalid split fractions train={train} val={val}"
        )));
    }
    let n = ds.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (n as f64 * train).round() as usize;
    let n_val = (n as f64 * val).round() as usize;
    if n_train == 0 || n_train + n_val >= n {
        return Err(Error::config(format!("dataset of {n} rows is too small for the split")));
    }
    let (a, rest) = idx.split_at(n_train);
    let (b, c) = rest.split_at(n_val);
    Ok((ds.select(a), ds.select(b), ds.select(c)))
}

const BINARY_MAGIC: &[u8; 4] = b"OEWD";
const BINARY_VERSION: u32 = 1;

fn read_dataset(
    path: &Path,
    dim: Option<usize>,
    alphabet: Option<usize>,
    label_column: Option<&str>,
    classes: Option<usize>,
) -> Result<Dataset> {
    let name = path.display().to_string();
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 4];
    let n = file.read(&mut magic).map_err(|e| Error::io(path, e))?;
    drop(file);
    if n == 4 && &magic == BINARY_MAGIC {
        let mut buf = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        let ds = dataset_from_bytes(&buf, &name)?;
        if let (Some(d), Dataset::Features { x, .. }) = (dim, &ds) {
            if x.cols() != d {
                return Err(Error::data(
                    name,
                    None,
                    format!("rows have {} features, expected {d}", x.cols()),
                ));
            }
        }
        return Ok(ds);
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset_csv(BufReader::new(file), &name, dim, alphabet, label_column, classes)
}

/// Parses a CSV dataset with a header row. With `alphabet` set every
/// non-label column is a symbol; otherwise rows are real feature vectors of
/// width `dim`.
pub fn read_dataset_csv<R: Read>(
    r: R,
    name: &str,
    dim: Option<usize>,
    alphabet: Option<usize>,
    label_column: Option<&str>,
    classes: Option<usize>,
) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(r);
    let headers = rdr
        .headers()
        .map_err(|e| Error::data(name, Some(1), e.to_string()))?
        .clone();
    if headers.is_empty() {
        return Err(Error::data(name, None, "dataset is empty"));
    }
    let label_idx = match label_column {
        Some(col) => Some(
            headers
                .iter()
                .position(|h| h == col)
                .ok_or_else(|| Error::data(name, Some(1), format!("missing label column '{col}'")))?,
        ),
        None => None,
    };
    let width = headers.len() - usize::from(label_idx.is_some());
    if alphabet.is_none() {
        match dim {
            Some(d) if d != width => {
                return Err(Error::data(
                    name,
                    Some(1),
                    format!("header has {width} feature columns, expected {d}"),
                ));
            }
            None => return Err(Error::config(format!("{name}: feature files must declare `dim`"))),
            _ => {}
        }
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut seqs = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::data(name, Some(line), e.to_string()))?;
        if rec.len() != headers.len() {
            return Err(Error::data(
                name,
                Some(line),
                format!("expected {} fields, found {}", headers.len(), rec.len()),
            ));
        }
        let mut row = Vec::with_capacity(width);
        for (j, field) in rec.iter().enumerate() {
            if Some(j) == label_idx {
                let y: usize = field
                    .parse()
                    .map_err(|_| Error::data(name, Some(line), format!("label '{field}' is not a class index")))?;
                if let Some(k) = classes {
                    if y >= k {
                        return Err(Error::data(
                            name,
                            Some(line),
                            format!("label {y} out of range for {k} classes"),
                        ));
                    }
                }
                labels.push(y);
            } else {
                let v: f64 = field
                    .parse()
                    .map_err(|_| Error::data(name, Some(line), format!("field '{field}' is not a number")))?;
                if !v.is_finite() {
                    return Err(Error::data(name, Some(line), "non-finite value"));
                }
                row.push(v);
            }
        }
        match alphabet {
            Some(a) => {
                let symbols = row
                    .iter()
                    .map(|&v| {
                        if v.fract() == 0.0 && v >= 0.0 && v < a as f64 {
                            Ok(v as usize)
                        } else {
                            Err(Error::data(
                                name,
                                Some(line),
                                format!("symbol {v} outside alphabet of size {a}"),
                            ))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                seqs.push(DiscreteSequence::new(symbols, a)?);
            }
            None => data.extend(row),
        }
    }
    let n = if alphabet.is_some() {
        seqs.len()
    } else {
        data.len() / width.max(1)
    };
    if n == 0 {
        return Err(Error::data(name, None, "dataset is empty"));
    }
    Ok(match alphabet {
        Some(_) => Dataset::Sequences(seqs),
        None => Dataset::Features {
            x: Matrix::from_vec(n, width, data)?,
            labels: label_idx.map(|_| labels),
        },
    })
}

pub fn write_dataset_csv<W: Write>(ds: &Dataset, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    match ds {
        Dataset::Features { x, labels } => {
            let mut header: Vec<String> = (0..x.cols()).map(|j| format!("x{j}")).collect();
            if labels.is_some() {
                header.push("label".into());
            }
            wtr.write_record(&header)?;
            for (i, row) in x.iter_rows().enumerate() {
                let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                if let Some(l) = labels {
                    rec.push(l[i].to_string());
                }
                wtr.write_record(&rec)?;
            }
        }
        Dataset::Sequences(s) => {
            let len = s.first().map_or(0, DiscreteSequence::len);
            wtr.write_record((0..len).map(|j| format!("s{j}")))?;
            for q in s {
                if q.len() != len {
                    return Err(Error::input("csv sequence files need equal-length sequences"));
                }
                wtr.write_record(q.symbols().iter().map(|v| v.to_string()))?;
            }
        }
    }
    wtr.flush().map_err(|e| Error::Serialization(e.to_string()))?;
    Ok(())
}

/// Binary layout: `OEWD`, version, rows (u64), cols (u32), label flag (u32),
/// row-major f64 values, then one u32 label per row when flagged. All
/// little-endian. Feature datasets only.
pub fn dataset_to_bytes(ds: &Dataset) -> Result<Vec<u8>> {
    let (x, labels) = ds.features()?;
    let mut out = Vec::with_capacity(24 + x.as_slice().len() * 8);
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&BINARY_VERSION.to_le_bytes());
    out.extend_from_slice(&(x.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(x.cols() as u32).to_le_bytes());
    out.extend_from_slice(&u32::from(labels.is_some()).to_le_bytes());
    for v in x.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &y in labels.unwrap_or(&[]) {
        out.extend_from_slice(&(y as u32).to_le_bytes());
    }
    Ok(out)
}

pub fn dataset_from_bytes(buf: &[u8], name: &str) -> Result<Dataset> {
    let bad = |m: &str| Error::data(name, None, m.to_string());
    let take = |at: usize, n: usize| buf.get(at..at + n).ok_or_else(|| bad("truncated dataset file"));
    if take(0, 4)? != BINARY_MAGIC {
        return Err(bad("not an OEWD dataset"));
    }
    let u32_at = |at| -> Result<u32> { Ok(u32::from_le_bytes(take(at, 4)?.try_into().expect("4 bytes"))) };
    if u32_at(4)? != BINARY_VERSION {
        return Err(bad("unsupported dataset version"));
    }
    let rows = u64::from_le_bytes(take(8, 8)?.try_into().expect("8 bytes")) as usize;
    let cols = u32_at(16)? as usize;
    let labeled = match u32_at(20)? {
        0 => false,
        1 => true,
        _ => return Err(bad("invalid label flag")),
    };
    let n = rows.checked_mul(cols).ok_or_else(|| bad("dataset too large"))?;
    let expected = 24 + n * 8 + if labeled { rows * 4 } else { 0 };
    if buf.len() != expected {
        return Err(bad(&format!("expected {expected} bytes, found {}", buf.len())));
    }
    if rows == 0 {
        return Err(bad("dataset is empty"));
    }
    let data: Vec<f64> = buf[24..24 + n * 8]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::data(name, Some(i / cols.max(1) + 1), "non-finite value"));
    }
    let labels = labeled.then(|| {
        buf[24 + n * 8..]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
            .collect()
    });
    Ok(Dataset::Features {
        x: Matrix::from_vec(rows, cols, data)?,
        labels,
    })
}

/// Writes `ds` to `path`, choosing the binary layout for `.oewd` paths.
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    if path.extension().is_some_and(|e| e == "oewd") {
        w.write_all(&dataset_to_bytes(ds)?).map_err(|e| Error::io(path, e))?;
    } else {
        write_dataset_csv(ds, &mut w)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
