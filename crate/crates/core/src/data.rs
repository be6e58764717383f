//! Dataset loading, preprocessing and stratified splitting.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::model::LabelMatrix;

pub const IDX_IMAGE_MAGIC: u32 = 2051;
pub const IDX_LABEL_MAGIC: u32 = 2049;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{}: bad magic number {found}, expected {expected}", path.display())]
    BadMagic { path: PathBuf, expected: u32, found: u32 },

    #[error("{}: truncated, expected {expected} bytes, found {found}", path.display())]
    Truncated { path: PathBuf, expected: usize, found: usize },

    #[error("{} images but {} labels", images, labels)]
    CountMismatch { images: usize, labels: usize },

    #[error("{}: row {row}, column {column}: cannot parse {cell:?} as a number", path.display())]
    Parse { path: PathBuf, row: usize, column: usize, cell: String },

    #[error("{}: row {row} has {width} columns, expected {expected}", path.display())]
    RaggedRow { path: PathBuf, row: usize, width: usize, expected: usize },

    #[error("{}: label column {column} missing (rows have {width} columns)", path.display())]
    MissingLabelColumn { path: PathBuf, column: usize, width: usize },

    #[error("{}: label {value} is not an integer", path.display())]
    NonIntegerLabel { path: PathBuf, value: f64 },

    #[error("dataset is empty")]
    Empty,

    #[error("non-finite value in sample {sample}")]
    NonFinite { sample: usize },

    #[error("class {class} has no samples")]
    MissingClass { class: usize },
}

/// Samples as columns of `x` with labels in `[0, classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    /// `n × N`.
    pub x: Array2<f64>,
    pub y: Vec<usize>,
    pub classes: usize,
}

impl LabeledDataset {
    pub fn new(x: Array2<f64>, y: Vec<usize>, classes: usize) -> Result<Self> {
        if x.ncols() != y.len() {
            return Err(DataError::CountMismatch {
                images: x.ncols(),
                labels: y.len(),
            }
            .into());
        }
        if y.is_empty() {
            return Err(DataError::Empty.into());
        }
        if let Some(sample) = x.columns().into_iter().position(|c| c.iter().any(|v| !v.is_finite())) {
            return Err(DataError::NonFinite { sample }.into());
        }
        let mut seen = vec![false; classes];
        for &c in &y {
            if c >= classes {
                return Err(Error::InvalidConfig(format!("label {c} outside [0, {classes})")));
            }
            seen[c] = true;
        }
        if let Some(class) = seen.iter().position(|&s| !s) {
            return Err(DataError::MissingClass { class }.into());
        }
        Ok(LabeledDataset { x, y, classes })
    }

    /// Builds a dataset from arbitrary integer labels, mapping the sorted
    /// distinct values onto `0..C`. Returns the original value of each class.
    pub fn from_raw_labels(x: Array2<f64>, raw: &[i64]) -> Result<(Self, Vec<i64>)> {
        let values: Vec<i64> = raw.iter().copied().collect::<std::collections::BTreeSet<_>>().into_iter().collect();
        let index: BTreeMap<i64, usize> = values.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let y = raw.iter().map(|v| index[v]).collect();
        Ok((LabeledDataset::new(x, y, values.len())?, values))
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn features(&self) -> usize {
        self.x.nrows()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &c in &self.y {
            counts[c] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> (Array2<f64>, Vec<usize>) {
        (self.x.select(Axis(1), indices), indices.iter().map(|&i| self.y[i]).collect())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| {
            DataError::Truncated {
                path: path.to_owned(),
                expected: at + 4,
                found: bytes.len(),
            }
            .into()
        })
}

/// Parses an IDX image file (magic 2051) into an `(rows·cols) × count`
/// matrix, one image per column with its pixels in stored order.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<Array2<f64>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(DataError::BadMagic {
            path: path.to_owned(),
            expected: IDX_IMAGE_MAGIC,
            found: magic,
        }
        .into());
    }
    let count = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let pixels = rows * cols;
    let expected = 16 + count * pixels;
    if bytes.len() < expected {
        return Err(DataError::Truncated {
            path: path.to_owned(),
            expected,
            found: bytes.len(),
        }
        .into());
    }
    let data = &bytes[16..expected];
    Ok(Array2::from_shape_fn((pixels, count), |(p, i)| f64::from(data[i * pixels + p])))
}

/// Parses an IDX label file (magic 2049).
pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<i64>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IDX_LABEL_MAGIC {
        return Err(DataError::BadMagic {
            path: path.to_owned(),
            expected: IDX_LABEL_MAGIC,
            found: magic,
        }
        .into());
    }
    let count = be_u32(bytes, 4, path)? as usize;
    let expected = 8 + count;
    if bytes.len() < expected {
        return Err(DataError::Truncated {
            path: path.to_owned(),
            expected,
            found: bytes.len(),
        }
        .into());
    }
    Ok(bytes[8..expected].iter().map(|&b| i64::from(b)).collect())
}

/// Loads an IDX image/label file pair. Pixel values stay in `[0, 255]`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let (images_path, labels_path) = (images_path.as_ref(), labels_path.as_ref());
    let x = parse_idx_images(&read_file(images_path)?, images_path)?;
    let labels = parse_idx_labels(&read_file(labels_path)?, labels_path)?;
    if labels.len() != x.ncols() {
        return Err(DataError::CountMismatch {
            images: x.ncols(),
            labels: labels.len(),
        }
        .into());
    }
    Ok(LabeledDataset::from_raw_labels(x, &labels)?.0)
}

/// Parses a numeric text table with one sample per row. `delimiter = None`
/// splits on runs of whitespace. Blank lines are skipped.
pub fn parse_delimited(text: &str, label_column: usize, delimiter: Option<char>, path: &Path) -> Result<(Array2<f64>, Vec<i64>)> {
    parse_table(text, Some(label_column), delimiter, path)
}

/// Parses an unlabelled numeric table, one sample per row. An input without
/// any non-blank line yields `features × 0`.
pub fn parse_features(text: &str, features: usize, delimiter: Option<char>, path: &Path) -> Result<Array2<f64>> {
    if text.trim().is_empty() {
        return Ok(Array2::zeros((features, 0)));
    }
    Ok(parse_table(text, None, delimiter, path)?.0)
}

fn parse_table(text: &str, label_column: Option<usize>, delimiter: Option<char>, path: &Path) -> Result<(Array2<f64>, Vec<i64>)> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = match delimiter {
            Some(d) => line.split(d).map(str::trim).collect(),
            None => line.split_whitespace().collect(),
        };
        let expected = *width.get_or_insert(cells.len());
        if let Some(column) = label_column.filter(|&c| c >= cells.len()) {
            return Err(DataError::MissingLabelColumn {
                path: path.to_owned(),
                column,
                width: cells.len(),
            }
            .into());
        }
        if cells.len() != expected {
            return Err(DataError::RaggedRow {
                path: path.to_owned(),
                row: line_no + 1,
                width: cells.len(),
                expected,
            }
            .into());
        }
        let mut values = Vec::with_capacity(cells.len());
        for (column, cell) in cells.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| DataError::Parse {
                path: path.to_owned(),
                row: line_no + 1,
                column: column + 1,
                cell: cell.to_string(),
            })?;
            if Some(column) == label_column {
                if v.fract() != 0.0 || !v.is_finite() {
                    return Err(DataError::NonIntegerLabel {
                        path: path.to_owned(),
                        value: v,
                    }
                    .into());
                }
                labels.push(v as i64);
            } else {
                values.push(v);
            }
        }
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(DataError::Empty.into());
    }
    let n = rows[0].len();
    let x = Array2::from_shape_fn((n, rows.len()), |(f, i)| rows[i][f]);
    Ok((x, labels))
}

pub fn load_delimited(path: impl AsRef<Path>, label_column: usize, delimiter: Option<char>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (x, labels) = parse_delimited(&text, label_column, delimiter, path)?;
    Ok(LabeledDataset::from_raw_labels(x, &labels)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "op", content = "factor")]
pub enum PreprocessStep {
    /// Per-feature zero mean and unit (population) standard deviation.
    StandardizeFeatures,
    /// Unit ℓ₂ norm per sample; zero samples pass through.
    L2NormalizeColumns,
    Scale(f64),
}

pub fn standardize_features(x: &mut Array2<f64>) {
    let n = x.ncols();
    if n == 0 {
        return;
    }
    for mut row in x.rows_mut() {
        let mean = row.sum() / n as f64;
        row.mapv_inplace(|v| v - mean);
        let std = (row.dot(&row) / n as f64).sqrt();
        if std > 0.0 {
            row.mapv_inplace(|v| v / std);
        }
    }
}

pub fn l2_normalize_columns(x: &mut Array2<f64>) {
    for mut col in x.columns_mut() {
        let norm = col.dot(&col).sqrt();
        if norm > 0.0 {
            col.mapv_inplace(|v| v / norm);
        }
    }
}

pub fn preprocess(x: &mut Array2<f64>, steps: &[PreprocessStep]) {
    for step in steps {
        match *step {
            PreprocessStep::StandardizeFeatures => standardize_features(x),
            PreprocessStep::L2NormalizeColumns => l2_normalize_columns(x),
            PreprocessStep::Scale(s) => x.mapv_inplace(|v| v * s),
        }
    }
}

/// Adds i.i.d. `N(0, σ_N²)` noise with `σ_N = σ · mean(X²)`.
pub fn add_gaussian_noise(x: ArrayView2<f64>, sigma: f64, seed: u64) -> Array2<f64> {
    let mut out = x.to_owned();
    if sigma == 0.0 || x.is_empty() {
        return out;
    }
    let sigma_n = sigma * x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let mut rng = crate::seed::rng(seed);
    for v in out.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v += sigma_n * z;
    }
    out
}

/// `d_out × n` matrix of i.i.d. `N(0, 1/d_out)` entries.
pub fn projection_matrix(d_out: usize, n: usize, seed: u64) -> Array2<f64> {
    let mut rng = crate::seed::rng(seed);
    let scale = 1.0 / (d_out as f64).sqrt();
    Array2::from_shape_simple_fn((d_out, n), || {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * scale
    })
}

pub fn random_projection(x: ArrayView2<f64>, d_out: usize, seed: u64) -> Result<Array2<f64>> {
    if d_out == 0 {
        return Err(Error::InvalidConfig("projection dimension must be at least 1".into()));
    }
    Ok(projection_matrix(d_out, x.nrows(), seed).dot(&x))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub labelled_per_class: usize,
    pub unlabelled_per_class: usize,
    pub test_per_class: usize,
    #[serde(default)]
    pub seed: u64,
}

/// Stratified split. Each part lists its samples grouped by class in class
/// order.
#[derive(Debug, Clone)]
pub struct Split {
    pub x_labelled: Array2<f64>,
    pub labels: Vec<usize>,
    /// `±1` targets of the labelled part.
    pub y: LabelMatrix,
    pub x_unlabelled: Array2<f64>,
    /// Hidden labels of the unlabelled part, for transductive accuracy.
    pub unlabelled_truth: Vec<usize>,
    pub x_test: Array2<f64>,
    pub test_labels: Vec<usize>,
    /// Dataset indices of each part.
    pub labelled_indices: Vec<usize>,
    pub unlabelled_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

impl Split {
    /// Labelled then unlabelled samples side by side.
    pub fn training_matrix(&self) -> Array2<f64> {
        ndarray::concatenate(Axis(1), &[self.x_labelled.view(), self.x_unlabelled.view()]).unwrap()
    }
}

pub fn split(ds: &LabeledDataset, spec: &SplitSpec) -> Result<Split> {
    let need = spec.labelled_per_class + spec.unlabelled_per_class + spec.test_per_class;
    let mut by_class = vec![Vec::new(); ds.classes];
    for (i, &c) in ds.y.iter().enumerate() {
        by_class[c].push(i);
    }
    for (class, members) in by_class.iter().enumerate() {
        if members.len() < need {
            return Err(Error::InvalidConfig(format!(
                "class {class} has {} samples, split needs {need}",
                members.len()
            )));
        }
    }
    let mut rng = crate::seed::rng(spec.seed);
    let (mut li, mut ui, mut ti) = (Vec::new(), Vec::new(), Vec::new());
    for members in &mut by_class {
        members.shuffle(&mut rng);
        let (l, rest) = members.split_at(spec.labelled_per_class);
        let (u, rest) = rest.split_at(spec.unlabelled_per_class);
        li.extend_from_slice(l);
        ui.extend_from_slice(u);
        ti.extend_from_slice(&rest[..spec.test_per_class]);
    }
    let (x_labelled, labels) = ds.subset(&li);
    let (x_unlabelled, unlabelled_truth) = ds.subset(&ui);
    let (x_test, test_labels) = ds.subset(&ti);
    Ok(Split {
        y: LabelMatrix::new(&labels, ds.classes),
        x_labelled,
        labels,
        x_unlabelled,
        unlabelled_truth,
        x_test,
        test_labels,
        labelled_indices: li,
        unlabelled_indices: ui,
        test_indices: ti,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn idx_images(images: &[[u8; 4]]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
        b.extend_from_slice(&(images.len() as u32).to_be_bytes());
        b.extend_from_slice(&2u32.to_be_bytes());
        b.extend_from_slice(&2u32.to_be_bytes());
        for img in images {
            b.extend_from_slice(img);
        }
        b
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
        b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        b
    }

    #[test]
    fn idx_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
        std::fs::write(&ip, idx_images(&[[0, 1, 2, 255], [9, 8, 7, 6]])).unwrap();
        std::fs::write(&lp, idx_labels(&[3, 1])).unwrap();
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.x, array![[0.0, 9.0], [1.0, 8.0], [2.0, 7.0], [255.0, 6.0]]);
        // Labels 1 and 3 map to classes 0 and 1.
        assert_eq!(ds.y, vec![1, 0]);
        assert_eq!(ds.classes, 2);
    }

    #[test]
    fn idx_errors_are_distinct() {
        let p = Path::new("mem");
        let mut bad = idx_images(&[[0; 4]]);
        bad[3] = 0;
        assert!(matches!(
            parse_idx_images(&bad, p),
            Err(Error::Data(DataError::BadMagic { found: 2048, .. }))
        ));
        let good = idx_images(&[[0; 4], [1; 4]]);
        assert!(matches!(
            parse_idx_images(&good[..good.len() - 1], p),
            Err(Error::Data(DataError::Truncated { .. }))
        ));
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
        std::fs::write(&ip, good).unwrap();
        std::fs::write(&lp, idx_labels(&[0])).unwrap();
        assert!(matches!(
            load_idx(&ip, &lp),
            Err(Error::Data(DataError::CountMismatch { images: 2, labels: 1 }))
        ));
    }

    #[test]
    fn unlabelled_tables() {
        let p = Path::new("t");
        let x = parse_features("1,2,3\n4,5,6\n", 3, Some(','), p).unwrap();
        assert_eq!(x, array![[1.0, 4.0], [2.0, 5.0], [3.0, 6.0]]);
        assert_eq!(parse_features(" \n\n", 7, None, p).unwrap().dim(), (7, 0));
        assert!(parse_features("1 2\n3\n", 2, None, p).is_err());
    }

    #[test]
    fn delimited_parsing() {
        let p = Path::new("mem");
        let (x, y) = parse_delimited("6.0000 -1 0.5\n\n2.0000 0.25 1\n6 0 0\n", 0, None, p).unwrap();
        assert_eq!(x.dim(), (2, 3));
        assert_eq!(y, vec![6, 2, 6]);
        assert_eq!(x.column(1), array![0.25, 1.0]);

        let (x, y) = parse_delimited("1,2,0\n3,4,1\n", 2, Some(','), p).unwrap();
        assert_eq!(x, array![[1.0, 3.0], [2.0, 4.0]]);
        assert_eq!(y, vec![0, 1]);

        match parse_delimited("1 2\n3 x\n", 0, None, p) {
            Err(Error::Data(DataError::Parse { row, column, cell, .. })) => {
                assert_eq!((row, column, cell.as_str()), (2, 2, "x"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_delimited("1 2\n", 5, None, p),
            Err(Error::Data(DataError::MissingLabelColumn { .. }))
        ));
        assert!(matches!(
            parse_delimited("1 2\n1 2 3\n", 0, None, p),
            Err(Error::Data(DataError::RaggedRow { .. }))
        ));
    }

    #[test]
    fn normalize_then_scale_restores_norm_five() {
        let mut x = array![[3.0, 0.0], [4.0, 0.0]];
        preprocess(&mut x, &[PreprocessStep::L2NormalizeColumns, PreprocessStep::Scale(5.0)]);
        assert!((x[[0, 0]] - 3.0).abs() < 1e-12 && (x[[1, 0]] - 4.0).abs() < 1e-12);
        assert_eq!(x.column(1), array![0.0, 0.0]);
    }

    #[test]
    fn zero_variance_feature_is_centered_only() {
        let mut x = array![[2.0, 2.0, 2.0], [1.0, 2.0, 3.0]];
        standardize_features(&mut x);
        assert_eq!(x.row(0), array![0.0, 0.0, 0.0]);
        let expected = (1.0f64 / (2.0 / 3.0)).sqrt();
        assert!((x[[1, 2]] - expected).abs() < 1e-12);
    }

    #[test]
    fn noise_moments_and_determinism() {
        let x = Array2::from_elem((50, 400), 0.5);
        assert_eq!(add_gaussian_noise(x.view(), 0.0, 1), x);
        let a = add_gaussian_noise(x.view(), 2.0, 9);
        assert_eq!(a, add_gaussian_noise(x.view(), 2.0, 9));
        let diff = &a - &x;
        let sigma_n = 2.0 * 0.25;
        let m = diff.mean().unwrap();
        let std = (diff.mapv(|v| (v - m) * (v - m)).sum() / (diff.len() - 1) as f64).sqrt();
        assert!((std / sigma_n - 1.0).abs() < 0.02, "std {std}");
    }

    #[test]
    fn projection_properties() {
        let x = Array2::from_shape_fn((6, 3), |(i, j)| (i * 3 + j) as f64 - 4.0);
        assert_eq!(random_projection(x.view(), 6, 5).unwrap(), random_projection(x.view(), 6, 5).unwrap());
        assert_eq!(random_projection(Array2::zeros((6, 3)).view(), 4, 5).unwrap(), Array2::<f64>::zeros((4, 3)));
        assert!(random_projection(x.view(), 0, 5).is_err());
        // E‖Rx‖² = ‖x‖².
        let v = x.column(0).to_owned().insert_axis(Axis(1));
        let norm = v.iter().map(|a| a * a).sum::<f64>();
        let trials = 2000;
        let mean: f64 = (0..trials)
            .map(|s| random_projection(v.view(), 20, s).unwrap().iter().map(|a| a * a).sum::<f64>())
            .sum::<f64>()
            / trials as f64;
        assert!((mean / norm - 1.0).abs() < 0.03, "{mean} vs {norm}");
    }

    fn toy(per_class: usize, classes: usize) -> LabeledDataset {
        let n = per_class * classes;
        let x = Array2::from_shape_fn((2, n), |(f, i)| (i * 2 + f) as f64);
        LabeledDataset::new(x, (0..n).map(|i| i % classes).collect(), classes).unwrap()
    }

    #[test]
    fn split_is_an_exhaustive_partition() {
        let ds = toy(3, 4);
        let spec = SplitSpec {
            labelled_per_class: 1,
            unlabelled_per_class: 1,
            test_per_class: 1,
            seed: 3,
        };
        let s = split(&ds, &spec).unwrap();
        let mut all: Vec<usize> = [&s.labelled_indices, &s.unlabelled_indices, &s.test_indices]
            .iter()
            .flat_map(|v| v.iter().copied())
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..12).collect::<Vec<_>>());
        assert_eq!(s.labels, vec![0, 1, 2, 3]);
        assert_eq!(s.y.y.column(2), array![-1.0, -1.0, 1.0, -1.0]);
        let again = split(&ds, &spec).unwrap();
        assert_eq!(s.labelled_indices, again.labelled_indices);
        assert_eq!(s.test_indices, again.test_indices);
    }

    #[test]
    fn infeasible_split_names_the_class() {
        let mut ds = toy(3, 2);
        ds.y[0] = 1;
        let spec = SplitSpec {
            labelled_per_class: 2,
            unlabelled_per_class: 1,
            test_per_class: 0,
            seed: 0,
        };
        let err = split(&ds, &spec).unwrap_err().to_string();
        assert!(err.contains("class 0"), "{err}");
    }

    #[test]
    fn dataset_rejects_missing_class() {
        let x = Array2::zeros((1, 2));
        assert!(matches!(
            LabeledDataset::new(x, vec![0, 0], 2),
            Err(Error::Data(DataError::MissingClass { class: 1 }))
        ));
    }

    proptest! {
        #[test]
        fn standardized_moments(values in proptest::collection::vec(-50.0f64..50.0, 12..60)) {
            let n = values.len() / 3;
            let mut x = Array2::from_shape_vec((3, n), values[..3 * n].to_vec()).unwrap();
            let spread: Vec<f64> = x.rows().into_iter().map(|r| r.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)) - r.iter().fold(f64::INFINITY, |a, &b| a.min(b))).collect();
            standardize_features(&mut x);
            let once = x.clone();
            standardize_features(&mut x);
            for (f, row) in once.rows().into_iter().enumerate() {
                let mean = row.sum() / n as f64;
                prop_assert!(mean.abs() < 1e-10);
                if spread[f] > 1e-6 {
                    let var = row.dot(&row) / n as f64;
                    prop_assert!((var - 1.0).abs() < 1e-10);
                    for (a, b) in row.iter().zip(x.row(f)) {
                        prop_assert!((a - b).abs() < 1e-10);
                    }
                }
            }
        }

        #[test]
        fn normalized_columns_are_unit(values in proptest::collection::vec(-10.0f64..10.0, 4..40)) {
            let n = values.len() / 2;
            let mut x = Array2::from_shape_vec((2, n), values[..2 * n].to_vec()).unwrap();
            l2_normalize_columns(&mut x);
            for c in x.columns() {
                let norm = c.dot(&c).sqrt();
                prop_assert!(norm == 0.0 || (norm - 1.0).abs() < 1e-12);
            }
        }
    }
}
