//! Dataset ingestion: CSV loading, the synthetic generator, deterministic
//! 60/20/20 splitting and train-split standardization.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::core_math::{Matrix, Vector};
use crate::error::{Error, Result};
use crate::evolution::derive_seed;
use crate::model::Sample;

/// Stream tags separating the generator RNG from the split shuffle RNG.
const STREAM_SYNTHESIS: u64 = 1;
const STREAM_SPLIT: u64 = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// objects x n feature matrix, standardized on the train split.
    pub features: Matrix,
    /// Targets in original units.
    pub targets: Vector,
    pub splits: Splits,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn feature_row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    /// Borrow (x, y) samples for the given row indices.
    pub fn batch(&self, indices: &[usize]) -> Vec<Sample<'_>> {
        indices
            .iter()
            .map(|&i| (self.features.row(i), self.targets.get(i)))
            .collect()
    }

    pub fn inputs(&self, indices: &[usize]) -> Vec<&[f64]> {
        indices.iter().map(|&i| self.features.row(i)).collect()
    }

    pub fn targets_at(&self, indices: &[usize]) -> Vec<f64> {
        indices.iter().map(|&i| self.targets.get(i)).collect()
    }

    /// Load a comma-separated file with a header row. Rows are shuffled by
    /// the seed before splitting 60/20/20; features are standardized with
    /// train-split statistics only; targets keep their original units.
    pub fn load_csv(path: &Path, target_column: &str, seed: u64) -> Result<Dataset> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Error::Io(std::io::Error::other(format!("{}: {e}", path.display()))))?;
        let headers = reader.headers()?.clone();
        let target_idx = headers
            .iter()
            .position(|h| h == target_column)
            .ok_or_else(|| {
                Error::Schema(format!(
                    "target column \"{target_column}\" not found in {}",
                    path.display()
                ))
            })?;
        let n_features = headers.len() - 1;
        if n_features == 0 {
            return Err(Error::Schema("no feature columns".to_string()));
        }
        let mut feature_data = Vec::new();
        let mut targets = Vec::new();
        for (row_idx, record) in reader.records().enumerate() {
            let record = record?;
            if record.len() != headers.len() {
                return Err(Error::Parse(format!(
                    "row {}: expected {} cells, got {}",
                    row_idx + 2,
                    headers.len(),
                    record.len()
                )));
            }
            for (col_idx, cell) in record.iter().enumerate() {
                let value: f64 = cell.trim().parse().map_err(|_| {
                    Error::Parse(format!(
                        "row {}, column \"{}\": cannot parse \"{}\" as a number",
                        row_idx + 2,
                        &headers[col_idx],
                        cell
                    ))
                })?;
                if !value.is_finite() {
                    return Err(Error::Parse(format!(
                        "row {}, column \"{}\": non-finite value",
                        row_idx + 2,
                        &headers[col_idx]
                    )));
                }
                if col_idx == target_idx {
                    targets.push(value);
                } else {
                    feature_data.push(value);
                }
            }
        }
        let objects = targets.len();
        if objects < 10 {
            return Err(Error::Size(format!(
                "need at least 10 rows, got {objects}"
            )));
        }
        let features = Matrix::new(objects, n_features, feature_data)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".to_string());
        Dataset::assemble(name, features, Vector::from_vec(targets), seed)
    }

    /// Synthetic regression data in three equal feature groups: informative
    /// columns driving the target, noisy near-duplicates of them, and
    /// independent columns uncorrelated with the target.
    pub fn synthesize(objects: usize, n_features: usize, seed: u64) -> Result<Dataset> {
        if objects < 100 {
            return Err(Error::Config(format!(
                "synthetic dataset needs at least 100 objects, got {objects}"
            )));
        }
        if n_features < 6 {
            return Err(Error::Config(format!(
                "synthetic dataset needs at least 6 features, got {n_features}"
            )));
        }
        let group = n_features / 3;
        let informative = n_features - 2 * group;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[STREAM_SYNTHESIS]));
        let standard = Normal::new(0.0, 1.0).expect("valid normal");
        let target_noise = Normal::new(0.0, 0.1).expect("valid normal");
        let duplicate_noise = Normal::new(0.0, 0.05).expect("valid normal");

        // fixed signed coefficients, magnitudes in [0.5, 2]
        let coefficients: Vec<f64> = (0..informative)
            .map(|_| {
                let magnitude = rng.gen_range(0.5..2.0);
                if rng.gen_bool(0.5) {
                    magnitude
                } else {
                    -magnitude
                }
            })
            .collect();

        let mut features = Matrix::zeros(objects, n_features);
        let mut targets = Vec::with_capacity(objects);
        for row in 0..objects {
            let base: Vec<f64> = (0..informative).map(|_| standard.sample(&mut rng)).collect();
            let mut y = target_noise.sample(&mut rng);
            for (j, &b) in base.iter().enumerate() {
                features.set(row, j, b);
                y += coefficients[j] * b;
            }
            targets.push(y);
            for j in 0..group {
                let source = base[j % informative];
                features.set(
                    row,
                    informative + j,
                    source + duplicate_noise.sample(&mut rng),
                );
            }
            for j in 0..group {
                features.set(row, informative + group + j, standard.sample(&mut rng));
            }
        }
        Dataset::assemble(
            "synthetic".to_string(),
            features,
            Vector::from_vec(targets),
            seed,
        )
    }

    fn assemble(name: String, mut features: Matrix, targets: Vector, seed: u64) -> Result<Dataset> {
        let splits = split_indices(features.rows(), seed);
        standardize(&mut features, &splits.train);
        features.check_finite()?;
        targets.check_finite().map_err(|_| {
            Error::Parse("non-finite target after ingestion".to_string())
        })?;
        Ok(Dataset {
            name,
            features,
            targets,
            splits,
        })
    }

    /// Index of the first informative column group for the synthetic set.
    pub fn synthetic_group_sizes(n_features: usize) -> (usize, usize, usize) {
        let group = n_features / 3;
        (n_features - 2 * group, group, group)
    }
}

/// Shuffle 0..n by the seed and cut 60/20/20; the test split absorbs the
/// rounding remainder.
pub fn split_indices(n: usize, seed: u64) -> Splits {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[STREAM_SPLIT]));
    order.shuffle(&mut rng);
    let train_len = n * 6 / 10;
    let val_len = n * 2 / 10;
    let val_end = train_len + val_len;
    Splits {
        train: order[..train_len].to_vec(),
        val: order[train_len..val_end].to_vec(),
        test: order[val_end..].to_vec(),
    }
}

fn standardize(features: &mut Matrix, train: &[usize]) {
    let cols = features.cols();
    let n = train.len() as f64;
    for j in 0..cols {
        let mean = train.iter().map(|&i| features.get(i, j)).sum::<f64>() / n;
        let var = train
            .iter()
            .map(|&i| (features.get(i, j) - mean).powi(2))
            .sum::<f64>()
            / n;
        let std = var.sqrt();
        let scale = if std > 0.0 { 1.0 / std } else { 1.0 };
        for i in 0..features.rows() {
            let v = (features.get(i, j) - mean) * scale;
            features.set(i, j, v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let mut cov = 0.0;
        let mut va = 0.0;
        let mut vb = 0.0;
        for (x, y) in a.iter().zip(b) {
            cov += (x - ma) * (y - mb);
            va += (x - ma).powi(2);
            vb += (y - mb).powi(2);
        }
        cov / (va.sqrt() * vb.sqrt())
    }

    #[test]
    fn split_proportions() {
        let s = split_indices(1030, 1);
        assert_eq!(s.train.len(), 618);
        assert_eq!(s.val.len(), 206);
        assert_eq!(s.test.len(), 206);

        let small = split_indices(10, 1);
        assert_eq!(
            (small.train.len(), small.val.len(), small.test.len()),
            (6, 2, 2)
        );
    }

    #[test]
    fn splits_are_disjoint_and_cover() {
        for seed in 0..5 {
            let n = 101;
            let s = split_indices(n, seed);
            let mut all: Vec<usize> = s
                .train
                .iter()
                .chain(&s.val)
                .chain(&s.test)
                .copied()
                .collect();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn splits_replay_deterministically() {
        assert_eq!(split_indices(500, 7), split_indices(500, 7));
        assert_ne!(split_indices(500, 7).train, split_indices(500, 8).train);
    }

    fn write_csv(rows: usize) -> tempfile::NamedTempFile {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "a,b,y").unwrap();
        for i in 0..rows {
            let a = i as f64;
            writeln!(file, "{a},{},{}", a * 2.0, a * 3.0 + 1.0).unwrap();
        }
        file.flush().unwrap();
        file
    }

    #[test]
    fn csv_loading_and_standardization() {
        let file = write_csv(50);
        let ds = Dataset::load_csv(file.path(), "y", 3).unwrap();
        assert_eq!(ds.len(), 50);
        assert_eq!(ds.n_features(), 2);
        // train-split means ~0 and variances ~1
        for j in 0..2 {
            let values: Vec<f64> = ds.splits.train.iter().map(|&i| ds.features.get(i, j)).collect();
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-9, "column {j} mean {mean}");
            assert!((var - 1.0).abs() < 1e-9, "column {j} variance {var}");
        }
        // targets untouched
        assert!(ds.targets.as_slice().iter().any(|&y| y > 10.0));
    }

    #[test]
    fn csv_same_seed_gives_identical_splits() {
        let file = write_csv(40);
        let a = Dataset::load_csv(file.path(), "y", 11).unwrap();
        let b = Dataset::load_csv(file.path(), "y", 11).unwrap();
        assert_eq!(a.splits, b.splits);
    }

    #[test]
    fn csv_missing_column_is_schema_error() {
        let file = write_csv(20);
        assert!(matches!(
            Dataset::load_csv(file.path(), "target", 1),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn csv_bad_cell_reports_location() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "a,y").unwrap();
        for i in 0..12 {
            writeln!(file, "{i},1.0").unwrap();
        }
        writeln!(file, "oops,2.0").unwrap();
        file.flush().unwrap();
        match Dataset::load_csv(file.path(), "y", 1) {
            Err(Error::Parse(msg)) => {
                assert!(msg.contains("row 14"), "message was: {msg}");
                assert!(msg.contains("\"a\""), "message was: {msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn csv_too_small_is_size_error() {
        let file = write_csv(5);
        assert!(matches!(
            Dataset::load_csv(file.path(), "y", 1),
            Err(Error::Size(_))
        ));
    }

    #[test]
    fn synthetic_default_shape() {
        let ds = Dataset::synthesize(10_000, 30, 0).unwrap();
        assert_eq!(ds.len(), 10_000);
        assert_eq!(ds.n_features(), 30);
        assert_eq!(ds.splits.train.len(), 6000);
        assert_eq!(ds.splits.val.len(), 2000);
        assert_eq!(ds.splits.test.len(), 2000);
    }

    #[test]
    fn synthetic_orthogonal_group_uncorrelated_with_target() {
        let ds = Dataset::synthesize(10_000, 30, 1).unwrap();
        let (informative, duplicates, orthogonal) = Dataset::synthetic_group_sizes(30);
        assert_eq!((informative, duplicates, orthogonal), (10, 10, 10));
        let y = ds.targets.as_slice();
        for j in 0..orthogonal {
            let col: Vec<f64> = (0..ds.len())
                .map(|i| ds.features.get(i, informative + duplicates + j))
                .collect();
            let r = pearson(&col, y);
            assert!(r.abs() < 0.05, "orthogonal column {j} correlates {r}");
        }
    }

    #[test]
    fn synthetic_duplicates_track_their_sources() {
        let ds = Dataset::synthesize(10_000, 30, 2).unwrap();
        let (informative, duplicates, _) = Dataset::synthetic_group_sizes(30);
        for j in 0..duplicates {
            let source: Vec<f64> = (0..ds.len())
                .map(|i| ds.features.get(i, j % informative))
                .collect();
            let dup: Vec<f64> = (0..ds.len())
                .map(|i| ds.features.get(i, informative + j))
                .collect();
            let r = pearson(&source, &dup);
            assert!(r > 0.95, "duplicate column {j} correlates only {r}");
        }
    }

    #[test]
    fn synthetic_target_is_recoverable_by_least_squares() {
        // the generator's noise floor: a linear fit on the informative
        // group alone reaches MAE close to E|N(0, 0.1)| ~ 0.08
        let ds = Dataset::synthesize(4000, 12, 3).unwrap();
        let (informative, _, _) = Dataset::synthetic_group_sizes(12);

        // normal-equations least squares on the train split, test MAE below
        let train = &ds.splits.train;
        let d = informative + 1; // plus intercept
        let mut xtx = vec![vec![0.0; d]; d];
        let mut xty = vec![0.0; d];
        let row_of = |i: usize| -> Vec<f64> {
            let mut r: Vec<f64> = (0..informative).map(|j| ds.features.get(i, j)).collect();
            r.push(1.0);
            r
        };
        for &i in train {
            let r = row_of(i);
            for p in 0..d {
                for q in 0..d {
                    xtx[p][q] += r[p] * r[q];
                }
                xty[p] += r[p] * ds.targets.get(i);
            }
        }
        // Gaussian elimination
        let mut a = xtx;
        let mut b = xty;
        for col in 0..d {
            let pivot = (col..d)
                .max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs()))
                .unwrap();
            a.swap(col, pivot);
            b.swap(col, pivot);
            let diag = a[col][col];
            for row in 0..d {
                if row == col {
                    continue;
                }
                let factor = a[row][col] / diag;
                for k in col..d {
                    a[row][k] -= factor * a[col][k];
                }
                b[row] -= factor * b[col];
            }
        }
        let beta: Vec<f64> = (0..d).map(|i| b[i] / a[i][i]).collect();

        let mut abs_err = 0.0;
        for &i in &ds.splits.test {
            let r = row_of(i);
            let pred: f64 = r.iter().zip(&beta).map(|(x, w)| x * w).sum();
            abs_err += (pred - ds.targets.get(i)).abs();
        }
        let test_mae = abs_err / ds.splits.test.len() as f64;
        // sigma = 0.1 noise gives E|eps| ~ 0.0798; allow 3-sigma slack
        assert!(test_mae <= 0.1 + 0.01, "test MAE {test_mae} above noise floor");
    }

    #[test]
    fn synthesize_validates_arguments() {
        assert!(Dataset::synthesize(50, 30, 0).is_err());
        assert!(Dataset::synthesize(1000, 4, 0).is_err());
    }
}
