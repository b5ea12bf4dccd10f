//! Planted-target synthetic datasets and CSV ingestion.
//!
//! A planted task draws a hidden linear teacher `w ~ N(0, I)` and labels each
//! standard Gaussian input by the sign of `wᵀx`. All randomness comes from a
//! ChaCha8 stream seeded with `seed_from_u64`, so datasets regenerate
//! bit-identically on every platform.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Samples stored column-wise: `x` is `d × N`, `y` is `1 × N` (or `d_out × N` for regression).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Matrix,
    pub split: Split,
    pub seed: Option<u64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.x.cols() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.x.rows()
    }

    /// Copies the selected samples into a contiguous batch.
    pub fn gather(&self, idx: &[usize]) -> (Matrix, Matrix) {
        let x = Matrix::from_fn(self.x.rows(), idx.len(), |i, b| self.x[(i, idx[b])]);
        let y = Matrix::from_fn(self.y.rows(), idx.len(), |i, b| self.y[(i, idx[b])]);
        (x, y)
    }

    pub fn positive_fraction(&self) -> f64 {
        self.y.row(0).iter().filter(|&&v| v == 1.0).count() as f64 / self.len().max(1) as f64
    }

    /// Writes a header `x0,…,x{d−1},y` followed by one row per sample.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if self.y.rows() != 1 {
            return Err(Error::Input("CSV export supports a single label column".into()));
        }
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        let mut header: Vec<String> = (0..self.input_dim()).map(|i| format!("x{i}")).collect();
        header.push("y".into());
        w.write_record(&header).map_err(|e| csv_io(path, e))?;
        let mut record = Vec::with_capacity(self.input_dim() + 1);
        for b in 0..self.len() {
            record.clear();
            record.extend((0..self.input_dim()).map(|i| self.x[(i, b)].to_string()));
            record.push(self.y[(0, b)].to_string());
            w.write_record(&record).map_err(|e| csv_io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Input(format!("{}: {other:?}", path.display())),
    }
}

/// Teacher and both splits of a planted-target task.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedTask {
    pub train: Dataset,
    pub test: Dataset,
    pub teacher: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherRecord {
    pub seed: u64,
    pub d_in: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub teacher: Vec<f64>,
}

impl PlantedTask {
    /// Label every sample of both splits again from the stored teacher.
    pub fn relabel_matches(&self) -> bool {
        [&self.train, &self.test].iter().all(|d| {
            (0..d.len()).all(|b| {
                let proj: f64 = (0..d.input_dim()).map(|i| self.teacher[i] * d.x[(i, b)]).sum();
                d.y[(0, b)] == if proj > 0.0 { 1.0 } else { 0.0 }
            })
        })
    }

    /// Writes `train.csv`, `test.csv` and `teacher.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.train.write_csv(&dir.join("train.csv"))?;
        self.test.write_csv(&dir.join("test.csv"))?;
        let record = TeacherRecord {
            seed: self.seed,
            d_in: self.teacher.len(),
            n_train: self.train.len(),
            n_test: self.test.len(),
            teacher: self.teacher.clone(),
        };
        let path = dir.join("teacher.json");
        let json = serde_json::to_string_pretty(&record).expect("teacher record serializes");
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }
}

/// Gaussian inputs labelled by a hidden zero-bias linear teacher.
pub fn gen_planted(d_in: usize, n_train: usize, n_test: usize, seed: u64) -> Result<PlantedTask> {
    for (field, v) in [("d_in", d_in), ("n_train", n_train), ("n_test", n_test)] {
        if v == 0 {
            return Err(Error::config(field, "must be at least 1"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let teacher: Vec<f64> = (0..d_in).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut draw = |n: usize, split: Split| {
        let mut x = Matrix::zeros(d_in, n);
        let mut y = Matrix::zeros(1, n);
        for b in 0..n {
            let mut proj = 0.0;
            for i in 0..d_in {
                let v: f64 = StandardNormal.sample(&mut rng);
                x[(i, b)] = v;
                proj += teacher[i] * v;
            }
            y[(0, b)] = if proj > 0.0 { 1.0 } else { 0.0 };
        }
        Dataset {
            x,
            y,
            split,
            seed: Some(seed),
        }
    };
    let train = draw(n_train, Split::Train);
    let test = draw(n_test, Split::Test);
    Ok(PlantedTask {
        train,
        test,
        teacher,
        seed,
    })
}

/// Reads a headed CSV whose last column is the label and the rest numeric features.
pub fn load_csv(path: &Path, split: Split) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_io(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_io(path, e))?
        .iter()
        .map(str::to_owned)
        .collect();
    if header.len() < 2 {
        return Err(Error::Input(format!(
            "{}: need at least one feature column and a label column",
            path.display()
        )));
    }
    let d = header.len() - 1;
    let mut features: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<f64> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Input(format!("{} line {line}: {e}", path.display()))
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let mut row = Vec::with_capacity(d);
        for (c, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                Error::Input(format!(
                    "{} line {line}: column `{}` value `{cell}` is not a number",
                    path.display(),
                    header[c]
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Input(format!(
                    "{} line {line}: column `{}` value `{cell}` is not finite",
                    path.display(),
                    header[c]
                )));
            }
            row.push(v);
        }
        labels.push(row.pop().expect("row has a label"));
        features.push(row);
    }
    if features.is_empty() {
        return Err(Error::Input(format!("{}: no data rows", path.display())));
    }
    let n = features.len();
    Ok(Dataset {
        x: Matrix::from_fn(d, n, |i, b| features[b][i]),
        y: Matrix::from_fn(1, n, |_, b| labels[b]),
        split,
        seed: None,
    })
}

/// One epoch of shuffled sample indices; the final short batch is kept.
pub fn minibatches<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch size must be at least 1");
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn planted_defaults_shape_and_balance() {
        let task = gen_planted(10, 25_000, 2_500, 1).unwrap();
        assert_eq!(task.train.x.shape(), (10, 25_000));
        assert_eq!(task.test.x.shape(), (10, 2_500));
        let frac = task.train.positive_fraction();
        assert!((frac - 0.5).abs() <= 0.03, "{frac}");
        assert!(task.relabel_matches());
    }

    #[test]
    fn planted_is_deterministic() {
        let a = gen_planted(5, 100, 10, 42).unwrap();
        let b = gen_planted(5, 100, 10, 42).unwrap();
        assert_eq!(a, b);
        let c = gen_planted(5, 100, 10, 43).unwrap();
        assert_ne!(a.train.x, c.train.x);
    }

    #[test]
    fn planted_rejects_zero_counts() {
        assert!(matches!(gen_planted(10, 0, 5, 1), Err(Error::Config { .. })));
    }

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_two_rows() {
        let f = write_tmp("a,b,y\n1,2,0\n3,4,1\n");
        let d = load_csv(f.path(), Split::Train).unwrap();
        assert_eq!(d.x, Matrix::from_rows(&[&[1.0, 3.0], &[2.0, 4.0]]));
        assert_eq!(d.y, Matrix::from_rows(&[&[0.0, 1.0]]));
    }

    #[test]
    fn csv_empty_is_error() {
        let f = write_tmp("a,b,y\n");
        assert!(matches!(load_csv(f.path(), Split::Train), Err(Error::Input(_))));
    }

    #[test]
    fn csv_non_numeric_names_cell() {
        let f = write_tmp("a,b,y\n1,2,0\n3,oops,1\n");
        let msg = load_csv(f.path(), Split::Train).unwrap_err().to_string();
        assert!(msg.contains("line 3") && msg.contains("`b`") && msg.contains("oops"), "{msg}");
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let task = gen_planted(3, 20, 5, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        task.save(dir.path()).unwrap();
        let back = load_csv(&dir.path().join("train.csv"), Split::Train).unwrap();
        assert_eq!(back.x, task.train.x);
        assert_eq!(back.y, task.train.y);
    }

    #[test]
    fn minibatch_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batches = minibatches(10, 4, &mut rng);
        assert_eq!(batches.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        let again = minibatches(10, 4, &mut rng);
        assert_ne!(batches, again);
    }
}
