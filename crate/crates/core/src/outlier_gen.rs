//! Synthetic outlier sources and corruptions of inlier data.
//!
//! Rows are flattened images in height-width-channel order: pixel `(y, x)`,
//! channel `c` lives at `(y * width + x) * channels + c`. Each row draws from
//! its own RNG stream derived from `(seed, row)`, so outputs do not depend on
//! how rows are scheduled.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ValueRange {
    /// `[0, 1]`
    #[default]
    ZeroOne,
    /// `[-1, 1]`
    SymmetricOne,
}

impl ValueRange {
    pub fn lo(self) -> f64 {
        match self {
            ValueRange::ZeroOne => 0.0,
            ValueRange::SymmetricOne => -1.0,
        }
    }

    pub fn hi(self) -> f64 {
        1.0
    }

    #[inline]
    pub fn clip(self, v: f64) -> f64 {
        v.clamp(self.lo(), self.hi())
    }

    pub fn contains(self, v: f64) -> bool {
        (self.lo()..=self.hi()).contains(&v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    #[serde(default)]
    pub value_range: ValueRange,
}

impl GridShape {
    pub fn new(height: usize, width: usize, channels: usize, value_range: ValueRange) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::config("grid dimensions must be positive"));
        }
        Ok(GridShape {
            height,
            width,
            channels,
            value_range,
        })
    }

    /// A `1 x d x 1` grid for flat feature vectors.
    pub fn flat(d: usize, value_range: ValueRange) -> Result<Self> {
        GridShape::new(1, d, 1, value_range)
    }

    pub fn dim(&self) -> usize {
        self.height * self.width * self.channels
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    fn check_rows(&self, rows: &Matrix) -> Result<()> {
        if rows.cols() != self.dim() {
            return Err(Error::config(format!(
                "rows have {} features but the grid {}x{}x{} has {}",
                rows.cols(),
                self.height,
                self.width,
                self.channels,
                self.dim()
            )));
        }
        Ok(())
    }
}

fn row_rng(seed: u64, row: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(row as u64);
    rng
}

fn generate<F>(n: usize, d: usize, seed: u64, f: F) -> Matrix
where
    F: Fn(&mut ChaCha8Rng, usize, &mut [f64]) + Sync + Send,
{
    let mut m = Matrix::zeros(n, d);
    Execution::default().for_each_row(m.as_mut_slice(), d, |i, row| {
        let mut rng = row_rng(seed, i);
        f(&mut rng, i, row);
    });
    m
}

/// i.i.d. standard normal entries, clipped to `range` when given.
pub fn gen_gaussian(n: usize, d: usize, range: Option<ValueRange>, seed: u64) -> Matrix {
    generate(n, d, seed, |rng, _, row| {
        for v in row.iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            *v = range.map_or(g, |r| r.clip(g));
        }
    })
}

/// Entries are -1 or 1 with equal probability.
pub fn gen_rademacher(n: usize, d: usize, seed: u64) -> Matrix {
    generate(n, d, seed, |rng, _, row| {
        for v in row.iter_mut() {
            *v = if rng.random::<bool>() { 1.0 } else { -1.0 };
        }
    })
}

/// Entries are 1 with probability `p`, else 0.
pub fn gen_bernoulli(n: usize, d: usize, p: f64, seed: u64) -> Result<Matrix> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::parameter(format!("bernoulli p must be in [0, 1], got {p}")));
    }
    Ok(generate(n, d, seed, |rng, _, row| {
        for v in row.iter_mut() {
            *v = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
        }
    }))
}

/// Uniform noise over the grid's value range.
pub fn gen_uniform_noise(n: usize, shape: &GridShape, seed: u64) -> Matrix {
    let (lo, hi) = (shape.value_range.lo(), shape.value_range.hi());
    generate(n, shape.dim(), seed, |rng, _, row| {
        for v in row.iter_mut() {
            *v = rng.random_range(lo..=hi);
        }
    })
}

/// Uniform noise over an arbitrary per-dimension box `[lo, hi]^d`.
pub fn gen_uniform_box(n: usize, d: usize, lo: f64, hi: f64, seed: u64) -> Result<Matrix> {
    if !(lo < hi) {
        return Err(Error::parameter(format!("uniform box needs lo < hi, got [{lo}, {hi}]")));
    }
    Ok(generate(n, d, seed, |rng, _, row| {
        for v in row.iter_mut() {
            *v = rng.random_range(lo..=hi);
        }
    }))
}

/// Clamp-to-edge box filter of odd `2r + 1` width over an `h x w` grid.
fn box_filter(src: &[f64], h: usize, w: usize, r: usize) -> Vec<f64> {
    let get = |y: isize, x: isize| {
        let yy = y.clamp(0, h as isize - 1) as usize;
        let xx = x.clamp(0, w as isize - 1) as usize;
        src[yy * w + xx]
    };
    let r = r as isize;
    let norm = ((2 * r + 1) * (2 * r + 1)) as f64;
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut s = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    s += get(y + dy, x + dx);
                }
            }
            out[y as usize * w + x as usize] = s / norm;
        }
    }
    out
}

/// Amorphous two-valued shapes: uniform noise smoothed twice by a box filter
/// of width `ceil(min(h, w) / 4)`, thresholded at the per-image median and
/// mapped to the low and high ends of the value range. All channels share the
/// mask.
pub fn gen_blobs(n: usize, shape: &GridShape, seed: u64) -> Result<Matrix> {
    let (h, w) = (shape.height, shape.width);
    if h * w < 2 {
        return Err(Error::config("blobs need at least two pixels"));
    }
    let width = h.min(w).div_ceil(4).max(1);
    let radius = width / 2;
    let (lo, hi) = (shape.value_range.lo(), shape.value_range.hi());
    Ok(generate(n, shape.dim(), seed, |rng, _, row| {
        let noise: Vec<f64> = (0..h * w).map(|_| rng.random::<f64>()).collect();
        let smooth = box_filter(&box_filter(&noise, h, w, radius), h, w, radius);
        let mut sorted = smooth.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[(sorted.len() - 1) / 2];
        let mut mask: Vec<bool> = smooth.iter().map(|&v| v > median).collect();
        if mask.iter().all(|&m| !m) {
            // constant field after smoothing; force two values
            mask[0] = true;
        }
        for y in 0..h {
            for x in 0..w {
                let v = if mask[y * w + x] { hi } else { lo };
                for c in 0..shape.channels {
                    row[shape.index(y, x, c)] = v;
                }
            }
        }
    }))
}

/// Pixelwise arithmetic mean of two rows.
pub fn arithmetic_mean(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect()
}

/// Pixelwise geometric mean. On `[-1, 1]` data the mean is taken after
/// mapping to `[0, 1]` and mapped back.
pub fn geometric_mean(a: &[f64], b: &[f64], range: ValueRange) -> Vec<f64> {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match range {
            ValueRange::ZeroOne => (x.max(0.0) * y.max(0.0)).sqrt(),
            ValueRange::SymmetricOne => {
                let u = ((x + 1.0) * 0.5).max(0.0);
                let v = ((y + 1.0) * 0.5).max(0.0);
                2.0 * (u * v).sqrt() - 1.0
            }
        })
        .collect()
}

fn random_pairs(
    rows: &Matrix,
    n: usize,
    seed: u64,
    f: impl Fn(&[f64], &[f64]) -> Vec<f64> + Sync + Send,
) -> Result<Matrix> {
    if rows.rows() == 0 {
        return Err(Error::input("corruption needs at least one inlier row"));
    }
    let m = rows.rows();
    Ok(generate(n, rows.cols(), seed, |rng, _, out| {
        let i = rng.random_range(0..m);
        let j = if m > 1 { (i + rng.random_range(1..m)) % m } else { i };
        out.copy_from_slice(&f(rows.row(i), rows.row(j)));
    }))
}

/// `n` arithmetic means of random pairs of distinct inlier rows.
pub fn corrupt_arithmetic_mean(rows: &Matrix, n: usize, seed: u64) -> Result<Matrix> {
    random_pairs(rows, n, seed, arithmetic_mean)
}

/// `n` geometric means of random pairs of distinct inlier rows.
pub fn corrupt_geometric_mean(rows: &Matrix, n: usize, range: ValueRange, seed: u64) -> Result<Matrix> {
    random_pairs(rows, n, seed, |a, b| geometric_mean(a, b, range))
}

/// Rearranges the 4 x 4 grid of equal patches: output patch `p` is input
/// patch `perm[p]`, in row-major patch order.
pub fn jigsaw(row: &[f64], shape: &GridShape, perm: &[usize; 16]) -> Result<Vec<f64>> {
    if !shape.height.is_multiple_of(4) || !shape.width.is_multiple_of(4) {
        return Err(Error::config(format!(
            "jigsaw needs height and width divisible by 4, got {}x{}",
            shape.height, shape.width
        )));
    }
    let mut seen = [false; 16];
    for &p in perm {
        if p >= 16 || std::mem::replace(&mut seen[p], true) {
            return Err(Error::parameter("jigsaw permutation must be a permutation of 0..16"));
        }
    }
    let (ph, pw) = (shape.height / 4, shape.width / 4);
    let mut out = vec![0.0; row.len()];
    for (dst, &src) in perm.iter().enumerate() {
        let (dy, dx) = ((dst / 4) * ph, (dst % 4) * pw);
        let (sy, sx) = ((src / 4) * ph, (src % 4) * pw);
        for y in 0..ph {
            for x in 0..pw {
                for c in 0..shape.channels {
                    out[shape.index(dy + y, dx + x, c)] = row[shape.index(sy + y, sx + x, c)];
                }
            }
        }
    }
    Ok(out)
}

pub fn inverse_permutation<const N: usize>(perm: &[usize; N]) -> [usize; N] {
    let mut inv = [0; N];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Each row's patches shuffled by a random permutation.
pub fn corrupt_jigsaw(rows: &Matrix, shape: &GridShape, seed: u64) -> Result<Matrix> {
    shape.check_rows(rows)?;
    jigsaw(&vec![0.0; shape.dim()], shape, &std::array::from_fn(|i| i))?;
    let mut out = Matrix::zeros(rows.rows(), rows.cols());
    Execution::default().for_each_row(out.as_mut_slice(), rows.cols(), |i, o| {
        let mut rng = row_rng(seed, i);
        let mut perm: [usize; 16] = std::array::from_fn(|k| k);
        perm.shuffle(&mut rng);
        o.copy_from_slice(&jigsaw(rows.row(i), shape, &perm).expect("shape checked"));
    });
    Ok(out)
}

/// `clip(x * (1 + intensity * g))` with `g` standard normal per element.
pub fn corrupt_speckle(rows: &Matrix, intensity: f64, range: ValueRange, seed: u64) -> Result<Matrix> {
    if !(intensity >= 0.0) {
        return Err(Error::parameter("speckle intensity must be nonnegative"));
    }
    let mut out = rows.clone();
    Execution::default().for_each_row(out.as_mut_slice(), rows.cols(), |i, o| {
        let mut rng = row_rng(seed, i);
        for v in o.iter_mut() {
            let g: f64 = rng.sample(StandardNormal);
            *v = range.clip(*v * (1.0 + intensity * g));
        }
    });
    Ok(out)
}

pub const DEFAULT_SPECKLE_INTENSITY: f64 = 0.2;

/// Channel reordering plus a circular spatial shift per output channel:
/// output channel `c` at `(y, x)` reads input channel `order[c]` at
/// `(y - dy_c, x - dx_c)` modulo the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GhostParams {
    pub shifts: [(isize, isize); 3],
    pub order: [usize; 3],
}

impl GhostParams {
    pub const IDENTITY: GhostParams = GhostParams {
        shifts: [(0, 0); 3],
        order: [0, 1, 2],
    };

    /// Parameters that undo `self`.
    pub fn inverse(&self) -> GhostParams {
        let inv = inverse_permutation(&self.order);
        let shifts = std::array::from_fn(|c| {
            let (dy, dx) = self.shifts[inv[c]];
            (-dy, -dx)
        });
        GhostParams { shifts, order: inv }
    }
}

pub fn rgb_ghost(row: &[f64], shape: &GridShape, params: &GhostParams) -> Result<Vec<f64>> {
    if shape.channels != 3 {
        return Err(Error::config(format!(
            "rgb ghosting needs 3 channels, got {}",
            shape.channels
        )));
    }
    let (h, w) = (shape.height as isize, shape.width as isize);
    let mut out = vec![0.0; row.len()];
    for c in 0..3 {
        let (dy, dx) = params.shifts[c];
        let src_c = params.order[c];
        for y in 0..h {
            for x in 0..w {
                let sy = (y - dy).rem_euclid(h) as usize;
                let sx = (x - dx).rem_euclid(w) as usize;
                out[shape.index(y as usize, x as usize, c)] = row[shape.index(sy, sx, src_c)];
            }
        }
    }
    Ok(out)
}

/// Random 1-3 pixel circular shift per channel and a random channel order.
pub fn corrupt_rgb_ghost(rows: &Matrix, shape: &GridShape, seed: u64) -> Result<Matrix> {
    shape.check_rows(rows)?;
    rgb_ghost(&vec![0.0; shape.dim()], shape, &GhostParams::IDENTITY)?;
    let mut out = Matrix::zeros(rows.rows(), rows.cols());
    Execution::default().for_each_row(out.as_mut_slice(), rows.cols(), |i, o| {
        let mut rng = row_rng(seed, i);
        let mut order = [0, 1, 2];
        order.shuffle(&mut rng);
        let shifts = std::array::from_fn(|_| {
            let mut s = || {
                let m = rng.random_range(1..=3i64) as isize;
                if rng.random::<bool>() {
                    m
                } else {
                    -m
                }
            };
            (s(), s())
        });
        o.copy_from_slice(&rgb_ghost(rows.row(i), shape, &GhostParams { shifts, order }).expect("shape checked"));
    });
    Ok(out)
}

/// Inverts the channels selected by `mask` (`v -> lo + hi - v`).
pub fn invert(row: &[f64], shape: &GridShape, mask: &[bool]) -> Result<Vec<f64>> {
    if mask.len() != shape.channels {
        return Err(Error::config(format!(
            "channel mask has {} entries for {} channels",
            mask.len(),
            shape.channels
        )));
    }
    let (lo, hi) = (shape.value_range.lo(), shape.value_range.hi());
    Ok(row
        .iter()
        .enumerate()
        .map(|(i, &v)| if mask[i % shape.channels] { lo + hi - v } else { v })
        .collect())
}

/// Inverts the channels in `mask`, or a random non-empty channel subset per
/// row when `mask` is `None`.
pub fn corrupt_invert(rows: &Matrix, shape: &GridShape, mask: Option<&[bool]>, seed: u64) -> Result<Matrix> {
    shape.check_rows(rows)?;
    if let Some(m) = mask {
        invert(&vec![0.0; shape.dim()], shape, m)?;
    }
    let mut out = Matrix::zeros(rows.rows(), rows.cols());
    let channels = shape.channels;
    Execution::default().for_each_row(out.as_mut_slice(), rows.cols(), |i, o| {
        let chosen: Vec<bool> = match mask {
            Some(m) => m.to_vec(),
            None => {
                let mut rng = row_rng(seed, i);
                let bits = rng.random_range(1..(1u64 << channels.min(63)));
                (0..channels).map(|c| c < 63 && bits >> c & 1 == 1).collect()
            }
        };
        o.copy_from_slice(&invert(rows.row(i), shape, &chosen).expect("mask checked"));
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img_shape() -> GridShape {
        GridShape::new(8, 8, 3, ValueRange::ZeroOne).unwrap()
    }

    fn sample_rows(n: usize, shape: &GridShape) -> Matrix {
        gen_uniform_noise(n, shape, 77)
    }

    fn col_means(m: &Matrix) -> Vec<f64> {
        (0..m.cols())
            .map(|j| m.iter_rows().map(|r| r[j]).sum::<f64>() / m.rows() as f64)
            .collect()
    }

    #[test]
    fn gaussian_moments_and_clipping() {
        let n = 10_000;
        let raw = gen_gaussian(n, 3, None, 1);
        for m in col_means(&raw) {
            assert!(m.abs() < 5.0 / (n as f64).sqrt());
        }
        let clipped = gen_gaussian(n, 1, Some(ValueRange::ZeroOne), 2);
        assert!(clipped.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(gen_gaussian(20, 4, None, 9), gen_gaussian(20, 4, None, 9));
        assert_ne!(gen_gaussian(20, 4, None, 9), gen_gaussian(20, 4, None, 10));
    }

    #[test]
    fn rademacher_and_bernoulli() {
        let n = 10_000;
        let r = gen_rademacher(n, 2, 3);
        assert!(r.as_slice().iter().all(|&v| v == 1.0 || v == -1.0));
        for m in col_means(&r) {
            assert!(m.abs() < 5.0 / (n as f64).sqrt());
        }
        assert_eq!(r, gen_rademacher(n, 2, 3));
        let b = gen_bernoulli(n, 2, 0.3, 4).unwrap();
        assert!(b.as_slice().iter().all(|&v| v == 0.0 || v == 1.0));
        for m in col_means(&b) {
            assert!((m - 0.3).abs() < 5.0 * (0.21f64 / n as f64).sqrt());
        }
        assert!(gen_bernoulli(50, 3, 0.0, 4)
            .unwrap()
            .as_slice()
            .iter()
            .all(|&v| v == 0.0));
        assert!(gen_bernoulli(1, 1, 1.5, 0).is_err());
    }

    #[test]
    fn uniform_noise_range_and_mean() {
        let s = GridShape::flat(4, ValueRange::ZeroOne).unwrap();
        let u = gen_uniform_noise(10_000, &s, 5);
        assert!(u.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
        for m in col_means(&u) {
            assert!((m - 0.5).abs() < 5.0 * (1.0 / 12.0f64 / 10_000.0).sqrt());
        }
        let s2 = GridShape::flat(4, ValueRange::SymmetricOne).unwrap();
        assert!(gen_uniform_noise(100, &s2, 5)
            .as_slice()
            .iter()
            .all(|&v| (-1.0..=1.0).contains(&v)));
        assert_eq!(gen_uniform_noise(7, &s, 1), gen_uniform_noise(7, &s, 1));
    }

    fn components(mask: &[bool], h: usize, w: usize) -> usize {
        let mut seen = vec![false; h * w];
        let mut count = 0;
        for start in 0..h * w {
            if seen[start] {
                continue;
            }
            count += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(p) = stack.pop() {
                let (y, x) = (p / w, p % w);
                let mut visit = |q: usize| {
                    if !seen[q] && mask[q] == mask[p] {
                        seen[q] = true;
                        stack.push(q);
                    }
                };
                if y > 0 {
                    visit(p - w);
                }
                if y + 1 < h {
                    visit(p + w);
                }
                if x > 0 {
                    visit(p - 1);
                }
                if x + 1 < w {
                    visit(p + 1);
                }
            }
        }
        count
    }

    #[test]
    fn blobs_are_two_valued_with_moderate_coverage() {
        let s = GridShape::new(16, 16, 3, ValueRange::SymmetricOne).unwrap();
        let b = gen_blobs(200, &s, 8).unwrap();
        let mut hi_frac = 0.0;
        for row in b.iter_rows() {
            assert!(row.iter().all(|&v| v == -1.0 || v == 1.0));
            assert!(row.contains(&-1.0) && row.contains(&1.0));
            let mask: Vec<bool> = (0..256).map(|p| row[p * 3] == 1.0).collect();
            assert!(components(&mask, 16, 16) >= 1);
            hi_frac += mask.iter().filter(|&&m| m).count() as f64 / 256.0;
        }
        hi_frac /= 200.0;
        assert!((0.2..=0.8).contains(&hi_frac), "{hi_frac}");
        assert_eq!(b, gen_blobs(200, &s, 8).unwrap());
    }

    #[test]
    fn mean_corruptions() {
        let x = [0.2, 0.9, 0.0];
        assert_eq!(arithmetic_mean(&x, &x), x.to_vec());
        assert_eq!(arithmetic_mean(&[0.0], &[1.0]), vec![0.5]);
        for (g, v) in geometric_mean(&x, &x, ValueRange::ZeroOne).iter().zip(x) {
            assert!((g - v).abs() < 1e-15);
        }
        assert_eq!(
            geometric_mean(&[0.0, 0.0], &[0.7, 1.0], ValueRange::ZeroOne),
            vec![0.0, 0.0]
        );
        assert_eq!(geometric_mean(&[0.25], &[1.0], ValueRange::ZeroOne), vec![0.5]);

        let s = img_shape();
        let rows = sample_rows(10, &s);
        for m in [
            corrupt_arithmetic_mean(&rows, 20, 1).unwrap(),
            corrupt_geometric_mean(&rows, 20, ValueRange::ZeroOne, 1).unwrap(),
        ] {
            assert_eq!(m.cols(), rows.cols());
            assert!(m.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        let sym = GridShape::new(8, 8, 3, ValueRange::SymmetricOne).unwrap();
        let rows = sample_rows(5, &sym);
        let g = corrupt_geometric_mean(&rows, 10, ValueRange::SymmetricOne, 2).unwrap();
        assert!(g.as_slice().iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }

    #[test]
    fn jigsaw_is_a_bijection() {
        let s = img_shape();
        let rows = sample_rows(3, &s);
        let id: [usize; 16] = std::array::from_fn(|i| i);
        assert_eq!(jigsaw(rows.row(0), &s, &id).unwrap(), rows.row(0));
        let perm = [3, 15, 0, 7, 1, 2, 14, 13, 4, 5, 6, 8, 9, 10, 11, 12];
        let once = jigsaw(rows.row(1), &s, &perm).unwrap();
        let mut a = once.clone();
        let mut b = rows.row(1).to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);
        assert_eq!(jigsaw(&once, &s, &inverse_permutation(&perm)).unwrap(), rows.row(1));
        let bad = GridShape::new(6, 8, 3, ValueRange::ZeroOne).unwrap();
        assert!(corrupt_jigsaw(&Matrix::zeros(1, bad.dim()), &bad, 0).is_err());
        let c = corrupt_jigsaw(&rows, &s, 4).unwrap();
        assert_eq!(c.shape(), rows.shape());
        assert_eq!(c, corrupt_jigsaw(&rows, &s, 4).unwrap());
    }

    #[test]
    fn speckle_behaviour() {
        let s = img_shape();
        let rows = sample_rows(50, &s);
        assert_eq!(corrupt_speckle(&rows, 0.0, ValueRange::ZeroOne, 1).unwrap(), rows);
        let mag = |i: f64| {
            let m = corrupt_speckle(&rows, i, ValueRange::SymmetricOne, 3).unwrap();
            m.as_slice()
                .iter()
                .zip(rows.as_slice())
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / m.as_slice().len() as f64
        };
        // unclipped here because |x (1 + i g)| rarely exceeds 1 at these intensities
        let (a, b) = (mag(0.01), mag(0.02));
        assert!((b / a - 2.0).abs() < 0.1, "{a} {b}");
        let c = corrupt_speckle(&rows, 2.0, ValueRange::ZeroOne, 5).unwrap();
        assert!(c.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn ghost_round_trips() {
        let s = img_shape();
        let rows = sample_rows(2, &s);
        let x = rows.row(0);
        assert_eq!(rgb_ghost(x, &s, &GhostParams::IDENTITY).unwrap(), x);
        let reorder = GhostParams {
            shifts: [(0, 0); 3],
            order: [2, 0, 1],
        };
        let y = rgb_ghost(x, &s, &reorder).unwrap();
        for c in 0..3 {
            let mut out_c: Vec<f64> = (0..64).map(|p| y[p * 3 + c]).collect();
            let mut in_c: Vec<f64> = (0..64).map(|p| x[p * 3 + reorder.order[c]]).collect();
            out_c.sort_by(f64::total_cmp);
            in_c.sort_by(f64::total_cmp);
            assert_eq!(out_c, in_c);
        }
        assert_eq!(rgb_ghost(&y, &s, &reorder.inverse()).unwrap(), x);
        let shifted = GhostParams {
            shifts: [(1, -2), (3, 1), (-1, 2)],
            order: [1, 2, 0],
        };
        let z = rgb_ghost(x, &s, &shifted).unwrap();
        assert_eq!(rgb_ghost(&z, &s, &shifted.inverse()).unwrap(), x);
        let gray = GridShape::new(8, 8, 1, ValueRange::ZeroOne).unwrap();
        assert!(corrupt_rgb_ghost(&Matrix::zeros(1, 64), &gray, 0).is_err());
        assert_eq!(corrupt_rgb_ghost(&rows, &s, 2).unwrap().shape(), rows.shape());
    }

    #[test]
    fn invert_behaviour() {
        let s = img_shape();
        let rows = sample_rows(4, &s);
        let mask = [true, false, true];
        let once = invert(rows.row(0), &s, &mask).unwrap();
        assert_eq!(invert(&once, &s, &mask).unwrap(), rows.row(0));
        assert_eq!(
            invert(
                &[0.0, 0.0, 0.0],
                &GridShape::new(1, 1, 3, ValueRange::ZeroOne).unwrap(),
                &[true; 3]
            )
            .unwrap(),
            vec![1.0; 3]
        );
        assert_eq!(invert(rows.row(1), &s, &[false; 3]).unwrap(), rows.row(1));
        let sym = GridShape::new(1, 1, 1, ValueRange::SymmetricOne).unwrap();
        assert_eq!(invert(&[0.25], &sym, &[true]).unwrap(), vec![-0.25]);
        let r = corrupt_invert(&rows, &s, None, 6).unwrap();
        assert_eq!(r.shape(), rows.shape());
        assert!(r.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_ne!(r, rows);
    }
}
