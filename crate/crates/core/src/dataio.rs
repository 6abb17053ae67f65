//! Dataset representation, text formats, feature scaling and fold generation.
//!
//! Features are stored densely in row-major order. Classification labels are
//! kept as reals; the scenario layer owns the mapping to solver labels.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense labeled samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<f64>,
    dim: usize,
}

impl Dataset {
    /// Builds a dataset from row-major features.
    pub fn new(features: Vec<f64>, labels: Vec<f64>, dim: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if dim == 0 {
            return Err(Error::Argument("feature dimension must be positive".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(Error::Argument(format!(
                "{} feature values do not form {} rows of dimension {}",
                features.len(),
                labels.len(),
                dim
            )));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!(
                "non-finite feature value in sample {}",
                pos / dim
            )));
        }
        if let Some(pos) = labels.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("non-finite label in sample {pos}")));
        }
        Ok(Self {
            features,
            labels,
            dim,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<f64>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.len(),
            });
        }
        if rows.len() != labels.len() {
            return Err(Error::Argument(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        Self::new(rows.concat(), labels, dim)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn samples(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.dim)
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// Copies the rows at `indices` (in that order) into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Argument(format!(
                    "sample index {i} out of range for {} samples",
                    self.len()
                )));
            }
            features.extend_from_slice(self.sample(i));
            labels.push(self.labels[i]);
        }
        Self::new(features, labels, self.dim)
    }

    /// Same features with replaced labels.
    pub fn with_labels(&self, labels: Vec<f64>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::Argument(format!(
                "{} labels for {} samples",
                labels.len(),
                self.len()
            )));
        }
        Self::new(self.features.clone(), labels, self.dim)
    }

    /// Serializes to libsvm text, writing only nonzero features.
    pub fn to_libsvm(&self) -> String {
        let mut out = String::new();
        for (i, row) in self.samples().enumerate() {
            let _ = write!(out, "{}", self.labels[i]);
            for (j, v) in row.iter().enumerate() {
                if *v != 0.0 {
                    let _ = write!(out, " {}:{}", j + 1, v);
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Parses libsvm sparse text (`label idx:val ...`, 1-based increasing indices).
pub fn parse_libsvm(text: &[u8]) -> Result<Dataset> {
    let text = std::str::from_utf8(text).map_err(|e| Error::Parse {
        line: 0,
        message: format!("input is not valid UTF-8: {e}"),
    })?;
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels = Vec::new();
    let mut dim = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let mut tokens = line.split_whitespace();
        let Some(label_tok) = tokens.next() else {
            continue;
        };
        let err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let label: f64 = label_tok
            .parse()
            .map_err(|_| err(format!("malformed label `{label_tok}`")))?;
        if !label.is_finite() {
            return Err(err(format!("non-finite label `{label_tok}`")));
        }
        let mut row = Vec::new();
        let mut last = 0usize;
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| err(format!("malformed token `{tok}`")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| err(format!("malformed index in `{tok}`")))?;
            if idx < 1 {
                return Err(err(format!("index must be at least 1 in `{tok}`")));
            }
            if idx <= last {
                return Err(err(format!("non-increasing index {idx} after {last}")));
            }
            let val: f64 = val
                .parse()
                .map_err(|_| err(format!("malformed value in `{tok}`")))?;
            if !val.is_finite() {
                return Err(err(format!("non-finite value in `{tok}`")));
            }
            last = idx;
            row.push((idx, val));
        }
        dim = dim.max(last);
        rows.push(row);
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if dim == 0 {
        return Err(Error::Parse {
            line: 1,
            message: "no feature found in any line".into(),
        });
    }
    let mut features = vec![0.0; labels.len() * dim];
    for (i, row) in rows.iter().enumerate() {
        for &(idx, val) in row {
            features[i * dim + idx - 1] = val;
        }
    }
    Dataset::new(features, labels, dim)
}

/// Which CSV column holds the label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelColumn {
    First,
    Last,
    Index(usize),
}

#[derive(Debug, Clone, Copy)]
pub struct CsvOptions {
    pub label_column: LabelColumn,
    pub has_header: bool,
    pub delimiter: u8,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            label_column: LabelColumn::Last,
            has_header: false,
            delimiter: b',',
        }
    }
}

/// Parses a rectangular numeric table; the label column is removed from the features.
pub fn parse_csv(text: &[u8], options: CsvOptions) -> Result<Dataset> {
    let text = std::str::from_utf8(text).map_err(|e| Error::Parse {
        line: 0,
        message: format!("input is not valid UTF-8: {e}"),
    })?;
    let delim = options.delimiter as char;
    let mut width: Option<usize> = None;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut header_skipped = !options.has_header;
    for (lineno, line) in text.lines().enumerate() {
        let row = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        if !header_skipped {
            header_skipped = true;
            continue;
        }
        let cells: Vec<&str> = line.split(delim).map(str::trim).collect();
        let w = *width.get_or_insert(cells.len());
        if cells.len() != w {
            return Err(Error::ParseCell {
                row,
                column: cells.len().min(w) + 1,
                message: format!("ragged row {row}: {} cells, expected {w}", cells.len()),
            });
        }
        if w < 2 {
            return Err(Error::ParseCell {
                row,
                column: 1,
                message: "need a label column and at least one feature column".into(),
            });
        }
        let label_idx = match options.label_column {
            LabelColumn::First => 0,
            LabelColumn::Last => w - 1,
            LabelColumn::Index(i) if i < w => i,
            LabelColumn::Index(i) => {
                return Err(Error::ParseCell {
                    row,
                    column: i + 1,
                    message: format!("label column {i} out of range for {w} columns"),
                })
            }
        };
        for (c, cell) in cells.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::ParseCell {
                row,
                column: c + 1,
                message: format!("non-numeric cell `{cell}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::ParseCell {
                    row,
                    column: c + 1,
                    message: format!("non-finite cell `{cell}`"),
                });
            }
            if c == label_idx {
                labels.push(v);
            } else {
                features.push(v);
            }
        }
    }
    let Some(w) = width else {
        return Err(Error::EmptyDataset);
    };
    Dataset::new(features, labels, w - 1)
}

/// Per-feature affine map onto `[0, 1]` fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub offset: Vec<f64>,
    pub factor: Vec<f64>,
}

/// Min/max scaling; constant features get factor 1 and offset equal to their value.
pub fn compute_scaling(train: &Dataset) -> Scaling {
    let d = train.dim();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for row in train.samples() {
        for j in 0..d {
            lo[j] = lo[j].min(row[j]);
            hi[j] = hi[j].max(row[j]);
        }
    }
    let factor = lo
        .iter()
        .zip(&hi)
        .map(|(l, h)| if h > l { h - l } else { 1.0 })
        .collect();
    Scaling { offset: lo, factor }
}

impl Scaling {
    /// Identity map for `dim` features.
    pub fn identity(dim: usize) -> Self {
        Self {
            offset: vec![0.0; dim],
            factor: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn apply_row(&self, row: &[f64], out: &mut [f64]) {
        for j in 0..row.len() {
            out[j] = (row[j] - self.offset[j]) / self.factor[j];
        }
    }

    /// Scales every sample; values outside the training range are not clamped.
    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        if data.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: data.dim(),
            });
        }
        let mut features = data.features().to_vec();
        for row in features.chunks_exact_mut(self.dim()) {
            for j in 0..row.len() {
                row[j] = (row[j] - self.offset[j]) / self.factor[j];
            }
        }
        Dataset::new(features, data.labels().to_vec(), data.dim())
    }

    pub fn invert(&self, data: &Dataset) -> Result<Dataset> {
        if data.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: data.dim(),
            });
        }
        let mut features = data.features().to_vec();
        for row in features.chunks_exact_mut(self.dim()) {
            for j in 0..row.len() {
                row[j] = row[j] * self.factor[j] + self.offset[j];
            }
        }
        Dataset::new(features, data.labels().to_vec(), data.dim())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldMethod {
    Random,
    Stratified,
    Block,
    Alternating,
}

impl std::str::FromStr for FoldMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" | "0" => Ok(Self::Random),
            "stratified" | "1" => Ok(Self::Stratified),
            "block" | "2" => Ok(Self::Block),
            "alternating" | "3" => Ok(Self::Alternating),
            other => Err(Error::Argument(format!("unknown fold method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub fold_of: Vec<usize>,
    pub k: usize,
    pub method: FoldMethod,
    pub seed: u64,
}

impl FoldAssignment {
    /// Indices held out in fold `f`, ascending.
    pub fn validation_indices(&self, f: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] == f)
            .collect()
    }

    /// Indices used for training when fold `f` is held out, ascending.
    pub fn training_indices(&self, f: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] != f)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Assigns each of the `labels.len()` samples to one of `k` folds.
pub fn make_folds(labels: &[f64], k: usize, method: FoldMethod, seed: u64) -> Result<FoldAssignment> {
    let n = labels.len();
    if k < 2 || k > n {
        return Err(Error::Argument(format!(
            "fold count {k} must satisfy 2 <= k <= n = {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0usize; n];
    match method {
        FoldMethod::Alternating => {
            for (i, f) in fold_of.iter_mut().enumerate() {
                *f = i % k;
            }
        }
        FoldMethod::Block => {
            let base = n / k;
            let extra = n % k;
            let mut start = 0;
            for f in 0..k {
                let len = base + usize::from(f < extra);
                for slot in &mut fold_of[start..start + len] {
                    *slot = f;
                }
                start += len;
            }
        }
        FoldMethod::Random => {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            for (pos, &i) in perm.iter().enumerate() {
                fold_of[i] = pos % k;
            }
        }
        FoldMethod::Stratified => {
            // Classes keyed by exact bit pattern, visited in ascending label order.
            let mut classes: BTreeMap<OrdF64, Vec<usize>> = BTreeMap::new();
            for (i, &y) in labels.iter().enumerate() {
                classes.entry(OrdF64(y)).or_default().push(i);
            }
            let mut counter = 0usize;
            for members in classes.values_mut() {
                members.shuffle(&mut rng);
                for &i in members.iter() {
                    fold_of[i] = counter % k;
                    counter += 1;
                }
            }
        }
    }
    Ok(FoldAssignment {
        fold_of,
        k,
        method,
        seed,
    })
}

/// Total order on finite floats, used for label dictionaries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct OrdF64(pub f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn libsvm_basic() {
        let d = parse_libsvm(b"+1 1:0.5 3:2\n-1 2:1\n").unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.dim(), 3);
        assert_eq!(d.sample(0), &[0.5, 0.0, 2.0]);
        assert_eq!(d.sample(1), &[0.0, 1.0, 0.0]);
        assert_eq!(d.labels(), &[1.0, -1.0]);
    }

    #[test]
    fn libsvm_errors() {
        assert!(matches!(parse_libsvm(b""), Err(Error::EmptyDataset)));
        assert!(matches!(
            parse_libsvm(b"1 2:0.1 1:0.2"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_libsvm(b"1 1:0.1\n1 0:0.2"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_libsvm(b"1 1:0.1\n1 1=0.2"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_libsvm(b"x 1:0.1"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn csv_label_last_and_header() {
        let d = parse_csv(b"1,2,0\n3,4,1\n", CsvOptions::default()).unwrap();
        assert_eq!(d.dim(), 2);
        assert_eq!(d.labels(), &[0.0, 1.0]);
        assert_eq!(d.sample(1), &[3.0, 4.0]);

        let opts = CsvOptions {
            has_header: true,
            ..CsvOptions::default()
        };
        let d = parse_csv(b"a,b,y\n1,2,0\n3,4,1\n5,6,1\n", opts).unwrap();
        assert_eq!(d.len(), 3);

        let opts = CsvOptions {
            label_column: LabelColumn::First,
            ..CsvOptions::default()
        };
        let d = parse_csv(b"7,1,2\n", opts).unwrap();
        assert_eq!(d.labels(), &[7.0]);
        assert_eq!(d.sample(0), &[1.0, 2.0]);
    }

    #[test]
    fn csv_errors() {
        let e = parse_csv(b"1,2\n3\n", CsvOptions::default()).unwrap_err();
        assert!(matches!(e, Error::ParseCell { row: 2, .. }), "{e}");
        let e = parse_csv(b"1,2\n3,x\n", CsvOptions::default()).unwrap_err();
        assert!(matches!(e, Error::ParseCell { row: 2, column: 2, .. }), "{e}");
    }

    #[test]
    fn scaling_examples() {
        let d = Dataset::from_rows(&[vec![-1.0, 5.0], vec![3.0, 5.0], vec![1.0, 5.0]], vec![0.0; 3])
            .unwrap();
        let s = compute_scaling(&d);
        assert_eq!(s.offset, vec![-1.0, 5.0]);
        assert_eq!(s.factor, vec![4.0, 1.0]);
        let scaled = s.apply(&d).unwrap();
        assert_eq!(scaled.sample(0), &[0.0, 0.0]);
        assert_eq!(scaled.sample(1), &[1.0, 0.0]);
        assert_eq!(scaled.sample(2), &[0.5, 0.0]);

        let test = Dataset::from_rows(&[vec![7.0, 6.0]], vec![0.0]).unwrap();
        let t = s.apply(&test).unwrap();
        assert_eq!(t.sample(0), &[2.0, 1.0]);
    }

    #[test]
    fn folds_alternating_and_block() {
        let labels = vec![0.0; 10];
        let f = make_folds(&labels, 5, FoldMethod::Alternating, 0).unwrap();
        assert_eq!(f.fold_of, vec![0, 1, 2, 3, 4, 0, 1, 2, 3, 4]);
        let f = make_folds(&labels, 3, FoldMethod::Block, 0).unwrap();
        assert_eq!(f.fold_of, vec![0, 0, 0, 0, 1, 1, 1, 2, 2, 2]);
    }

    #[test]
    fn folds_stratified_balance() {
        let labels: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let f = make_folds(&labels, 5, FoldMethod::Stratified, 7).unwrap();
        for fold in 0..5 {
            let pos = (0..100)
                .filter(|&i| f.fold_of[i] == fold && labels[i] > 0.0)
                .count();
            let neg = (0..100)
                .filter(|&i| f.fold_of[i] == fold && labels[i] < 0.0)
                .count();
            assert_eq!((pos, neg), (10, 10));
        }
    }

    #[test]
    fn folds_reject_bad_k() {
        assert!(make_folds(&[0.0; 3], 4, FoldMethod::Random, 0).is_err());
        assert!(make_folds(&[0.0; 3], 1, FoldMethod::Random, 0).is_err());
    }

    #[test]
    fn random_folds_seed_collisions_are_rare() {
        let labels = vec![0.0; 10];
        let trials = 2000u64;
        let mut collisions = 0;
        for s in 0..trials {
            let a = make_folds(&labels, 5, FoldMethod::Random, 2 * s).unwrap();
            let b = make_folds(&labels, 5, FoldMethod::Random, 2 * s + 1).unwrap();
            if a.fold_of == b.fold_of {
                collisions += 1;
            }
        }
        assert!((collisions as f64) / (trials as f64) < 0.01);
    }
}
