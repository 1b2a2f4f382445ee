//! Datasets: in-memory representation, CSV ingestion, synthetic biased data,
//! train/test splitting and sensitive-attribute flipping.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{FermError, Result};

/// Feature matrix (row-major), class labels and sensitive-group labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    n: usize,
    d: usize,
    labels: Vec<usize>,
    groups: Vec<usize>,
    num_classes: usize,
    num_groups: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        d: usize,
        labels: Vec<usize>,
        groups: Vec<usize>,
        num_classes: usize,
        num_groups: usize,
    ) -> Result<Self> {
        let n = labels.len();
        if groups.len() != n {
            return Err(FermError::LengthMismatch {
                left: n,
                right: groups.len(),
            });
        }
        if features.len() != n * d {
            return Err(FermError::DimensionMismatch {
                expected: n * d,
                got: features.len(),
            });
        }
        if num_classes < 2 {
            return Err(FermError::Config("at least two classes are required".into()));
        }
        if num_groups == 0 {
            return Err(FermError::Config("at least one group is required".into()));
        }
        if let Some(row) = features.iter().position(|v| !v.is_finite()) {
            return Err(FermError::Encoding {
                row: row / d.max(1),
                message: "non-finite feature".into(),
            });
        }
        if let Some(row) = labels.iter().position(|&y| y >= num_classes) {
            return Err(FermError::Encoding {
                row,
                message: format!("label {} >= {num_classes}", labels[row]),
            });
        }
        if let Some(row) = groups.iter().position(|&s| s >= num_groups) {
            return Err(FermError::Encoding {
                row,
                message: format!("group {} >= {num_groups}", groups[row]),
            });
        }
        Ok(Dataset {
            features,
            n,
            d,
            labels,
            groups,
            num_classes,
            num_groups,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn num_features(&self) -> usize {
        self.d
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn group(&self, i: usize) -> usize {
        self.groups[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn groups(&self) -> &[usize] {
        &self.groups
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn full(&self) -> Batch<'_> {
        Batch {
            data: self,
            rows: None,
        }
    }

    pub fn batch<'a>(&'a self, rows: &'a [usize]) -> Batch<'a> {
        Batch {
            data: self,
            rows: Some(rows),
        }
    }

    pub fn group_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_groups];
        for &s in &self.groups {
            counts[s] += 1;
        }
        counts
    }

    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Every group and every label occurs at least once.
    pub fn check_coverage(&self) -> Result<()> {
        if let Some(k) = self.group_counts().iter().position(|&c| c == 0) {
            return Err(FermError::EmptyGroup(k));
        }
        if let Some(y) = self.label_counts().iter().position(|&c| c == 0) {
            return Err(FermError::Encoding {
                row: 0,
                message: format!("label {y} never occurs"),
            });
        }
        Ok(())
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(rows.len() * self.d);
        for &i in rows {
            features.extend_from_slice(self.row(i));
        }
        Dataset {
            features,
            n: rows.len(),
            d: self.d,
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            groups: rows.iter().map(|&i| self.groups[i]).collect(),
            num_classes: self.num_classes,
            num_groups: self.num_groups,
        }
    }

    pub fn with_groups(&self, groups: Vec<usize>) -> Result<Dataset> {
        Dataset::new(
            self.features.clone(),
            self.d,
            self.labels.clone(),
            groups,
            self.num_classes,
            self.num_groups,
        )
    }
}

/// A view of some rows of a dataset; `rows == None` means all rows.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    data: &'a Dataset,
    rows: Option<&'a [usize]>,
}

impl<'a> Batch<'a> {
    pub fn data(&self) -> &'a Dataset {
        self.data
    }

    pub fn len(&self) -> usize {
        self.rows.map_or(self.data.n, <[usize]>::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + 'a {
        let rows = self.rows;
        let n = self.data.n;
        (0..rows.map_or(n, <[usize]>::len)).map(move |i| rows.map_or(i, |r| r[i]))
    }
}

/// Column-wise z-scoring statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

const STD_FLOOR: f64 = 1e-12;

impl Standardizer {
    pub fn fit(data: &Dataset) -> Self {
        let (n, d) = (data.n.max(1) as f64, data.d);
        let mut mean = vec![0.0; d];
        for i in 0..data.n {
            for (m, x) in mean.iter_mut().zip(data.row(i)) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for i in 0..data.n {
            for ((v, x), m) in var.iter_mut().zip(data.row(i)).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var.into_iter().map(|v| (v / n).sqrt()).collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, data: &Dataset) -> Dataset {
        let mut out = data.clone();
        for row in out.features.chunks_mut(data.d.max(1)) {
            for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *x = if *s < STD_FLOOR { 0.0 } else { (*x - m) / s };
            }
        }
        out
    }
}

/// Column names for CSV ingestion.
#[derive(Debug, Clone, Default)]
pub struct CsvSchema {
    pub feature_cols: Vec<String>,
    pub label_col: String,
    pub group_cols: Vec<String>,
    /// Declared label categories; values outside it are rejected. When
    /// absent the categories are the distinct values found in the file.
    pub label_values: Option<Vec<String>>,
}

/// Category ordering: numeric when every value parses as an integer,
/// lexicographic otherwise.
fn category_order(values: BTreeSet<String>) -> Vec<String> {
    let mut cats: Vec<String> = values.into_iter().collect();
    if cats.iter().all(|c| c.parse::<i64>().is_ok()) {
        cats.sort_by_key(|c| c.parse::<i64>().unwrap());
    }
    cats
}

/// Load a CSV and z-score every feature column with statistics of the
/// whole file.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let raw = load_csv_raw(path, schema)?;
    Ok(Standardizer::fit(&raw).apply(&raw))
}

/// Load a CSV without standardizing features.
pub fn load_csv_raw(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())
        .map_err(|e| FermError::Io(format!("{}: {e}", path.as_ref().display())))?;
    read_csv(file, schema)
}

pub fn read_csv(reader: impl Read, schema: &CsvSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    let column = |name: &str| {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| FermError::MissingColumn(name.to_string()))
    };
    if schema.feature_cols.is_empty() {
        return Err(FermError::Config("no feature columns given".into()));
    }
    if schema.group_cols.is_empty() {
        return Err(FermError::Config("no group columns given".into()));
    }
    let feature_idx = schema
        .feature_cols
        .iter()
        .map(|c| column(c))
        .collect::<Result<Vec<_>>>()?;
    let label_idx = column(&schema.label_col)?;
    let group_idx = schema
        .group_cols
        .iter()
        .map(|c| column(c))
        .collect::<Result<Vec<_>>>()?;

    let mut features = Vec::new();
    let mut label_raw = Vec::new();
    let mut group_raw: Vec<Vec<String>> = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| FermError::Encoding {
            row,
            message: e.to_string(),
        })?;
        for (&c, name) in feature_idx.iter().zip(&schema.feature_cols) {
            let cell = record.get(c).unwrap_or("").trim();
            let v: f64 = cell.parse().map_err(|_| FermError::NonNumericFeature {
                row,
                column: name.clone(),
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(FermError::NonNumericFeature {
                    row,
                    column: name.clone(),
                    value: cell.to_string(),
                });
            }
            features.push(v);
        }
        let label = record.get(label_idx).unwrap_or("").trim();
        if label.is_empty() {
            return Err(FermError::Encoding {
                row,
                message: format!("missing value in label column {}", schema.label_col),
            });
        }
        label_raw.push(label.to_string());
        let mut g = Vec::with_capacity(group_idx.len());
        for (&c, name) in group_idx.iter().zip(&schema.group_cols) {
            let cell = record.get(c).unwrap_or("").trim();
            if cell.is_empty() {
                return Err(FermError::Encoding {
                    row,
                    message: format!("missing value in group column {name}"),
                });
            }
            g.push(cell.to_string());
        }
        group_raw.push(g);
    }

    let label_cats = match &schema.label_values {
        Some(declared) => declared.clone(),
        None => category_order(label_raw.iter().cloned().collect()),
    };
    let label_map: BTreeMap<&str, usize> = label_cats
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let labels = label_raw
        .iter()
        .enumerate()
        .map(|(r, v)| {
            label_map.get(v.as_str()).copied().ok_or_else(|| FermError::Encoding {
                row: r + 1,
                message: format!("unseen label {v:?}"),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    // Cross product of the group columns, first column most significant.
    let group_cats: Vec<Vec<String>> = (0..group_idx.len())
        .map(|c| category_order(group_raw.iter().map(|g| g[c].clone()).collect()))
        .collect();
    let num_groups: usize = group_cats.iter().map(Vec::len).product();
    let groups = group_raw
        .iter()
        .map(|g| {
            g.iter().zip(&group_cats).fold(0, |acc, (v, cats)| {
                acc * cats.len() + cats.iter().position(|c| c == v).unwrap()
            })
        })
        .collect();

    let data = Dataset::new(
        features,
        feature_idx.len(),
        labels,
        groups,
        label_cats.len().max(2),
        num_groups.max(1),
    )?;
    if let Some(k) = data.group_counts().iter().position(|&c| c == 0) {
        return Err(FermError::EmptyGroup(k));
    }
    Ok(data)
}

/// Write a dataset as CSV with columns `x0..x{d-1},label,group`.
pub fn write_csv(data: &Dataset, mut out: impl Write) -> Result<()> {
    let mut header: Vec<String> = (0..data.d).map(|j| format!("x{j}")).collect();
    header.push("label".into());
    header.push("group".into());
    writeln!(out, "{}", header.join(","))?;
    for i in 0..data.n {
        let mut line: Vec<String> = data.row(i).iter().map(|v| format!("{v:?}")).collect();
        line.push(data.labels[i].to_string());
        line.push(data.groups[i].to_string());
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

/// The schema matching [`write_csv`] output.
pub fn written_schema(d: usize) -> CsvSchema {
    CsvSchema {
        feature_cols: (0..d).map(|j| format!("x{j}")).collect(),
        label_col: "label".into(),
        group_cols: vec!["group".into()],
        label_values: None,
    }
}

/// Parameters of the synthetic biased-data generator.
///
/// Two groups are drawn with equal probability. Feature 0 is shifted by
/// `±shift` depending on the group, the remaining features are standard
/// normal. The label is `1[w·x + noise > 0]` with `w = (1, 1/2, ..., 1/2)`,
/// and the shift is chosen so that the noiseless rule `1[w·x > 0]` has a
/// demographic parity violation of exactly `bias` in expectation.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub bias: f64,
    /// Standard deviation of the label noise relative to the score.
    pub label_noise: f64,
}

impl SynthConfig {
    pub fn new(seed: u64, n: usize, d: usize, bias: f64) -> Self {
        SynthConfig {
            seed,
            n,
            d,
            bias,
            label_noise: 0.5,
        }
    }

    pub fn score_weights(&self) -> Vec<f64> {
        let mut w = vec![0.5; self.d];
        w[0] = 1.0;
        w
    }

    /// Mean offset of feature 0 for group 1 (group 0 gets the negation).
    pub fn group_shift(&self) -> f64 {
        if self.bias <= 0.0 {
            return 0.0;
        }
        let w = self.score_weights();
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        let z = Normal::new(0.0, 1.0).unwrap().inverse_cdf((1.0 + self.bias) / 2.0);
        z * norm / w[0]
    }

    pub fn generate(&self) -> Result<Dataset> {
        if self.n < 100 || self.d < 2 {
            return Err(FermError::Config("synthetic data needs n >= 100 and d >= 2".into()));
        }
        if !(0.0..1.0).contains(&self.bias) {
            return Err(FermError::Config(format!("bias {} outside [0, 1)", self.bias)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let w = self.score_weights();
        let shift = self.group_shift();
        let mut features = Vec::with_capacity(self.n * self.d);
        let mut labels = Vec::with_capacity(self.n);
        let mut groups = Vec::with_capacity(self.n);
        for i in 0..self.n {
            // alternate then shuffle below keeps groups exactly balanced
            let s = i % 2;
            let sign = if s == 1 { 1.0 } else { -1.0 };
            let mut score = 0.0;
            for (j, wj) in w.iter().enumerate() {
                let z: f64 = StandardNormal.sample(&mut rng);
                let x = if j == 0 { z + sign * shift } else { z };
                score += wj * x;
                features.push(x);
            }
            let noise: f64 = StandardNormal.sample(&mut rng);
            labels.push(usize::from(score + self.label_noise * noise > 0.0));
            groups.push(s);
        }
        let data = Dataset::new(features, self.d, labels, groups, 2, 2)?;
        let mut order: Vec<usize> = (0..self.n).collect();
        order.shuffle(&mut rng);
        Ok(data.subset(&order))
    }
}

/// Synthetic two-group binary task whose Bayes rule has DPV close to `bias`.
pub fn synth_biased(seed: u64, n: usize, d: usize, bias: f64) -> Result<Dataset> {
    SynthConfig::new(seed, n, d, bias).generate()
}

/// Flip the binary group of exactly `round(fraction * n)` random samples.
pub fn flip_sensitive(data: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if data.num_groups != 2 {
        return Err(FermError::NonBinaryGroup(data.num_groups));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(FermError::Config(format!("flip fraction {fraction} outside [0, 1]")));
    }
    let count = (fraction * data.n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups = data.groups.clone();
    for i in rand::seq::index::sample(&mut rng, data.n, count) {
        groups[i] = 1 - groups[i];
    }
    data.with_groups(groups)
}

const SPLIT_ATTEMPTS: usize = 100;

/// Random disjoint split keeping every group and label present on both sides.
pub fn split(data: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(FermError::UnsatisfiableSplit);
    }
    let n_test = (test_fraction * data.n as f64).round() as usize;
    if n_test == 0 || n_test >= data.n {
        return Err(FermError::UnsatisfiableSplit);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..data.n).collect();
    for _ in 0..SPLIT_ATTEMPTS {
        order.shuffle(&mut rng);
        let (test_rows, train_rows) = order.split_at(n_test);
        let mut train_rows = train_rows.to_vec();
        let mut test_rows = test_rows.to_vec();
        train_rows.sort_unstable();
        test_rows.sort_unstable();
        let train = data.subset(&train_rows);
        let test = data.subset(&test_rows);
        if train.check_coverage().is_ok() && test.check_coverage().is_ok() {
            return Ok((train, test));
        }
    }
    Err(FermError::UnsatisfiableSplit)
}
