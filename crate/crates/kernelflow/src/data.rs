//! Synthetic 2-D generators, CSV ingestion, standardisation, and subsampling.
//!
//! A [`Dataset`] stores already-standardised train/val/test splits; the
//! per-dimension mean/std come from the train split only so nothing leaks
//! from validation or test.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DataSource {
    Synthetic,
    Csv,
}

/// Per-dimension standardisation statistics, computed from the train split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl Standardization {
    pub fn fit(train: &Array2<f64>) -> Result<Self> {
        let n = train.nrows() as f64;
        let mean = train.mean_axis(Axis(0)).unwrap();
        let mut std = Array1::zeros(train.ncols());
        for j in 0..train.ncols() {
            let var = train
                .column(j)
                .iter()
                .map(|v| (v - mean[j]).powi(2))
                .sum::<f64>()
                / n;
            let s = var.sqrt();
            if s < 1e-12 {
                return Err(Error::DegenerateColumn(j));
            }
            std[j] = s;
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        (x - &self.mean) / &self.std
    }

    pub fn invert(&self, x: &Array2<f64>) -> Array2<f64> {
        x * &self.std + &self.mean
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub source: DataSource,
    pub dim: usize,
    pub train: Array2<f64>,
    pub val: Array2<f64>,
    pub test: Array2<f64>,
    pub standardization: Standardization,
}

impl Dataset {
    /// Builds a dataset from raw (unstandardised) splits.
    pub fn from_raw(
        name: &str,
        source: DataSource,
        train: Array2<f64>,
        val: Array2<f64>,
        test: Array2<f64>,
    ) -> Result<Self> {
        let dim = train.ncols();
        if val.ncols() != dim || test.ncols() != dim {
            return Err(Error::DimensionMismatch(val.ncols(), dim));
        }
        let stats = Standardization::fit(&train)?;
        Ok(Self {
            name: name.to_string(),
            source,
            dim,
            train: stats.apply(&train),
            val: stats.apply(&val),
            test: stats.apply(&test),
            standardization: stats,
        })
    }

    /// Replaces the train split by `count` rows sampled without replacement
    /// and refits the standardisation from the subsample.
    pub fn subsample_train(&self, count: usize, seed: u64) -> Result<Dataset> {
        if count > self.train.nrows() {
            return Err(Error::Argument(format!(
                "subsample count {count} exceeds train size {}",
                self.train.nrows()
            )));
        }
        let mut idx: Vec<usize> = (0..self.train.nrows()).collect();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        idx.shuffle(&mut rng);
        idx.truncate(count);
        // recover raw values, re-standardise from the subsample
        let raw_train = self.standardization.invert(&self.train);
        let raw_val = self.standardization.invert(&self.val);
        let raw_test = self.standardization.invert(&self.test);
        let sub = select_rows(&raw_train, &idx);
        Dataset::from_raw(&self.name, self.source, sub, raw_val, raw_test)
    }
}

fn select_rows(x: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((idx.len(), x.ncols()));
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).assign(&x.row(i));
    }
    out
}

/// Two interleaved half-circles of unit radius with isotropic Gaussian noise.
/// Moon 0 sits on the circle centred at the origin, moon 1 on the circle
/// centred at (1, 0.5), mirrored downward.
pub fn gen_moons(n: usize, noise: f64, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = Array2::zeros((n, 2));
    for i in 0..n {
        let t: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let (x, y) = if rng.gen_bool(0.5) {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        let nx: f64 = rng.sample(StandardNormal);
        let ny: f64 = rng.sample(StandardNormal);
        out[[i, 0]] = x + noise * nx;
        out[[i, 1]] = y + noise * ny;
    }
    out
}

/// Spiral-sheared Gaussian arms. Each point starts as a Gaussian blob
/// elongated radially, then gets rotated by its arm angle plus a radius-
/// dependent twist. The arm labels are uniform, so the analytic mean is (0,0)
/// for two or more arms.
pub fn gen_pinwheel(n: usize, arms: usize, seed: u64) -> Array2<f64> {
    let radial_std = 0.3;
    let tangential_std = 0.05;
    let rate = 0.25;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = Array2::zeros((n, 2));
    for i in 0..n {
        let arm = rng.gen_range(0..arms.max(1));
        let gx: f64 = rng.sample(StandardNormal);
        let gy: f64 = rng.sample(StandardNormal);
        let x = 1.0 + radial_std * gx;
        let y = tangential_std * gy;
        let angle =
            2.0 * std::f64::consts::PI * arm as f64 / arms.max(1) as f64 + rate * x.exp();
        out[[i, 0]] = x * angle.cos() - y * angle.sin();
        out[[i, 1]] = x * angle.sin() + y * angle.cos();
    }
    out
}

/// Points on y = x over [-2, 2] with Gaussian noise on y.
pub fn gen_line(n: usize, noise: f64, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = Array2::zeros((n, 2));
    for i in 0..n {
        let x: f64 = rng.gen_range(-2.0..2.0);
        let g: f64 = rng.sample(StandardNormal);
        out[[i, 0]] = x;
        out[[i, 1]] = x + noise * g;
    }
    out
}

/// Builds a standardised toy dataset by generating `n_train + n_val + n_test`
/// points and splitting them in order.
pub fn toy_dataset(
    name: &str,
    gen: impl Fn(usize, u64) -> Array2<f64>,
    n_train: usize,
    n_val: usize,
    n_test: usize,
    seed: u64,
) -> Result<Dataset> {
    let all = gen(n_train + n_val + n_test, seed);
    let train = all.slice(ndarray::s![..n_train, ..]).to_owned();
    let val = all
        .slice(ndarray::s![n_train..n_train + n_val, ..])
        .to_owned();
    let test = all.slice(ndarray::s![n_train + n_val.., ..]).to_owned();
    Dataset::from_raw(name, DataSource::Synthetic, train, val, test)
}

/// Loads a numeric CSV, shuffles rows by seed, splits by fractions, and
/// standardises from the train split. A single non-numeric first row is
/// treated as a header.
pub fn load_csv(path: &Path, split_fracs: (f64, f64, f64), seed: u64) -> Result<Dataset> {
    let content = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut ncols = None;
    for (lineno, line) in content.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        let mut parsed = Vec::with_capacity(cells.len());
        let mut bad_col = None;
        for (c, cell) in cells.iter().enumerate() {
            match cell.trim().parse::<f64>() {
                Ok(v) => parsed.push(v),
                Err(_) => {
                    bad_col = Some(c);
                    break;
                }
            }
        }
        if let Some(c) = bad_col {
            if lineno == 0 && rows.is_empty() {
                continue; // header row
            }
            return Err(Error::Parse {
                row: lineno,
                col: c,
                msg: format!("cannot parse {:?} as a number", cells[c].trim()),
            });
        }
        match ncols {
            None => ncols = Some(parsed.len()),
            Some(n) if n != parsed.len() => {
                return Err(Error::Parse {
                    row: lineno,
                    col: parsed.len(),
                    msg: format!("expected {n} columns, found {}", parsed.len()),
                });
            }
            _ => {}
        }
        rows.push(parsed);
    }
    let ncols = ncols.ok_or_else(|| Error::Argument("empty CSV file".into()))?;
    let (ftr, fva, fte) = split_fracs;
    if !(ftr > 0.0 && fva >= 0.0 && fte >= 0.0 && (ftr + fva + fte - 1.0).abs() < 1e-9) {
        return Err(Error::Argument("split fractions must sum to 1".into()));
    }

    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let n = rows.len();
    let n_train = ((n as f64) * ftr).round() as usize;
    let n_val = ((n as f64) * fva).round() as usize;
    let n_train = n_train.min(n);
    let n_val = n_val.min(n - n_train);

    let mut flat = Array2::zeros((n, ncols));
    for (r, &i) in order.iter().enumerate() {
        for c in 0..ncols {
            flat[[r, c]] = rows[i][c];
        }
    }
    let train = flat.slice(ndarray::s![..n_train, ..]).to_owned();
    let val = flat
        .slice(ndarray::s![n_train..n_train + n_val, ..])
        .to_owned();
    let test = flat.slice(ndarray::s![n_train + n_val.., ..]).to_owned();

    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    Dataset::from_raw(&name, DataSource::Csv, train, val, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::io::Write;

    #[test]
    fn generators_empty_and_deterministic() {
        assert_eq!(gen_moons(0, 0.1, 1).nrows(), 0);
        assert_eq!(gen_pinwheel(0, 5, 1).nrows(), 0);
        assert_eq!(gen_line(0, 0.05, 1).nrows(), 0);
        assert_eq!(gen_moons(10, 0.1, 3), gen_moons(10, 0.1, 3));
        assert_eq!(gen_pinwheel(10, 5, 3), gen_pinwheel(10, 5, 3));
        assert_ne!(gen_moons(10, 0.1, 3), gen_moons(10, 0.1, 4));
    }

    #[test]
    fn noiseless_moons_lie_on_half_circles() {
        let pts = gen_moons(64, 0.0, 9);
        for row in pts.rows() {
            let (x, y) = (row[0], row[1]);
            let r0 = (x * x + y * y).sqrt();
            let r1 = ((x - 1.0).powi(2) + (y - 0.5).powi(2)).sqrt();
            let on0 = (r0 - 1.0).abs() < 1e-12 && y >= 0.0;
            let on1 = (r1 - 1.0).abs() < 1e-12 && y <= 0.5;
            assert!(on0 || on1, "point ({x},{y}) off both half-circles");
        }
    }

    #[test]
    fn pinwheel_mean_near_zero() {
        let pts = gen_pinwheel(10000, 5, 17);
        let mean = pts.mean_axis(Axis(0)).unwrap();
        assert!(mean[0].abs() < 0.05 && mean[1].abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn line_on_segment() {
        let pts = gen_line(100, 0.0, 2);
        for row in pts.rows() {
            assert!(row[0] >= -2.0 && row[0] <= 2.0);
            assert_abs_diff_eq!(row[1], row[0], epsilon = 1e-12);
        }
    }

    #[test]
    fn standardisation_roundtrip_and_stats() {
        let ds = toy_dataset("moons", |n, s| gen_moons(n, 0.1, s), 500, 100, 100, 5).unwrap();
        let mean = ds.train.mean_axis(Axis(0)).unwrap();
        for j in 0..2 {
            assert!(mean[j].abs() < 1e-10);
            let var = ds.train.column(j).iter().map(|v| v * v).sum::<f64>() / 500.0;
            assert!((var.sqrt() - 1.0).abs() < 1e-10);
        }
        let raw = ds.standardization.invert(&ds.train);
        let back = ds.standardization.apply(&raw);
        let err = (&back - &ds.train).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-12);
    }

    fn write_csv(dir: &tempfile::TempDir, name: &str, content: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        let mut f = std::fs::File::create(&p).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        p
    }

    #[test]
    fn csv_split_sizes_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("a,b\n");
        for i in 0..10 {
            body.push_str(&format!("{}.5,{}\n", i, 10 - i));
        }
        let p = write_csv(&dir, "t.csv", &body);
        let ds = load_csv(&p, (0.8, 0.1, 0.1), 1).unwrap();
        assert_eq!(ds.train.nrows(), 8);
        assert_eq!(ds.val.nrows(), 1);
        assert_eq!(ds.test.nrows(), 1);
        assert_eq!(ds.dim, 2);
    }

    #[test]
    fn csv_parse_error_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv(&dir, "bad.csv", "1,2\n3,oops\n");
        match load_csv(&p, (0.8, 0.1, 0.1), 1) {
            Err(Error::Parse { row, col, .. }) => {
                assert_eq!(row, 1);
                assert_eq!(col, 1);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn csv_constant_column_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::new();
        for i in 0..20 {
            body.push_str(&format!("{},7.0\n", i));
        }
        let p = write_csv(&dir, "const.csv", &body);
        match load_csv(&p, (0.8, 0.1, 0.1), 1) {
            Err(Error::DegenerateColumn(c)) => assert_eq!(c, 1),
            other => panic!("expected degenerate column, got {other:?}"),
        }
    }

    #[test]
    fn subsample_determinism_and_bounds() {
        let ds = toy_dataset("pin", |n, s| gen_pinwheel(n, 5, s), 1000, 100, 100, 3).unwrap();
        let a = ds.subsample_train(500, 9).unwrap();
        let b = ds.subsample_train(500, 9).unwrap();
        assert_eq!(a.train, b.train);
        let c = ds.subsample_train(500, 10).unwrap();
        assert_ne!(a.train, c.train);
        assert!(ds.subsample_train(1001, 1).is_err());
        // full-size subsample is a permutation of the original raw train rows
        let full = ds.subsample_train(1000, 4).unwrap();
        let mut raw: Vec<_> = ds
            .standardization
            .invert(&ds.train)
            .rows()
            .into_iter()
            .map(|r| (r[0].to_bits(), r[1].to_bits()))
            .collect();
        let mut sub: Vec<_> = full
            .standardization
            .invert(&full.train)
            .rows()
            .into_iter()
            .map(|r| (r[0].to_bits(), r[1].to_bits()))
            .collect();
        raw.sort_unstable();
        sub.sort_unstable();
        // inversion introduces tiny round-off; compare within tolerance instead
        let close = raw
            .iter()
            .zip(sub.iter())
            .all(|(a, b)| {
                (f64::from_bits(a.0) - f64::from_bits(b.0)).abs() < 1e-9
                    && (f64::from_bits(a.1) - f64::from_bits(b.1)).abs() < 1e-9
            });
        assert!(close);
    }

    #[test]
    fn subsample_overlap_matches_hypergeometric() {
        let ds = toy_dataset("pin", |n, s| gen_pinwheel(n, 5, s), 2000, 100, 100, 3).unwrap();
        // expected overlap of two 500-subsets of 2000: 500*500/2000 = 125
        let base = ds.subsample_train(500, 0).unwrap();
        let base_rows: std::collections::HashSet<_> = base
            .standardization
            .invert(&base.train)
            .rows()
            .into_iter()
            .map(|r| ((r[0] * 1e6).round() as i64, (r[1] * 1e6).round() as i64))
            .collect();
        let mut overlaps = Vec::new();
        for seed in 1..=100u64 {
            let other = ds.subsample_train(500, seed).unwrap();
            let count = other
                .standardization
                .invert(&other.train)
                .rows()
                .into_iter()
                .filter(|r| {
                    base_rows.contains(&((r[0] * 1e6).round() as i64, (r[1] * 1e6).round() as i64))
                })
                .count();
            overlaps.push(count as f64);
        }
        let mean = overlaps.iter().sum::<f64>() / overlaps.len() as f64;
        assert!((mean - 125.0).abs() < 10.0, "mean overlap {mean}");
    }
}
