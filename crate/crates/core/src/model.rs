//! Shared domain types: label spaces, feature vectors, labeled datasets,
//! prediction matrices and seeds.
//!
//! Everything here is an immutable value once constructed. Validation
//! happens in the constructors so downstream modules can rely on the
//! invariants (finite features, fixed dimension, label indices in range).

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::ops::Deref;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Marker for a missing cell in incomplete CSV files.
pub const MISSING_MARKER: &str = "?";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("label error: {0}")]
    Label(String),
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

impl DataError {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        DataError::Parse {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// On-disk dataset encodings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Json,
}

impl DataFormat {
    /// Picks the format from the file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => DataFormat::Json,
            _ => DataFormat::Csv,
        }
    }
}

/// Ordered, duplicate-free set of class names. Labels are indices into it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelSpace {
    names: Vec<String>,
}

impl LabelSpace {
    pub fn new(names: Vec<String>) -> Result<Self, DataError> {
        if names.len() < 2 {
            return Err(DataError::Label(format!(
                "a label space needs at least two classes, got {}",
                names.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(DataError::Label(format!("duplicate class name `{name}`")));
            }
        }
        Ok(LabelSpace { names })
    }

    /// Anonymous classes named `"0"`, `"1"`, ...
    pub fn indexed(count: usize) -> Result<Self, DataError> {
        Self::new((0..count).map(|i| i.to_string()).collect())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

impl TryFrom<Vec<String>> for LabelSpace {
    type Error = DataError;

    fn try_from(names: Vec<String>) -> Result<Self, Self::Error> {
        LabelSpace::new(names)
    }
}

impl From<LabelSpace> for Vec<String> {
    fn from(space: LabelSpace) -> Self {
        space.names
    }
}

/// A dense vector of finite reals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self, DataError> {
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(DataError::Invalid(format!(
                "feature {pos} is not finite ({})",
                values[pos]
            )));
        }
        Ok(FeatureVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for FeatureVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for FeatureVector {
    type Error = DataError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        FeatureVector::new(values)
    }
}

impl From<FeatureVector> for Vec<f64> {
    fn from(v: FeatureVector) -> Self {
        v.0
    }
}

/// Features plus one label index per record.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    classes: LabelSpace,
    features: Vec<FeatureVector>,
    labels: Vec<usize>,
    dim: usize,
}

impl LabeledDataset {
    pub fn new(
        classes: LabelSpace,
        features: Vec<FeatureVector>,
        labels: Vec<usize>,
    ) -> Result<Self, DataError> {
        if features.len() != labels.len() {
            return Err(DataError::Invalid(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        let dim = features.first().map_or(0, FeatureVector::dim);
        if let Some(i) = features.iter().position(|f| f.dim() != dim) {
            return Err(DataError::Invalid(format!(
                "record {i} has dimension {}, expected {dim}",
                features[i].dim()
            )));
        }
        if let Some(i) = labels.iter().position(|&l| l >= classes.len()) {
            return Err(DataError::Label(format!(
                "record {i} has label index {} but only {} classes exist",
                labels[i],
                classes.len()
            )));
        }
        Ok(LabeledDataset {
            classes,
            features,
            labels,
            dim,
        })
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

    pub fn classes(&self) -> &LabelSpace {
        &self.classes
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn features(&self) -> &[FeatureVector] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Same labels, different features (used when applying an embedding).
    pub fn with_features(&self, features: Vec<FeatureVector>) -> Result<Self, DataError> {
        LabeledDataset::new(self.classes.clone(), features, self.labels.clone())
    }

    /// Same features, different labels.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Self, DataError> {
        LabeledDataset::new(self.classes.clone(), self.features.clone(), labels)
    }

    /// Hex SHA-256 over a canonical serialization of features and labels.
    ///
    /// Floats are hashed by bit pattern, labels by class name, so the
    /// fingerprint is independent of the file encoding the data came from.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.len() as u64).to_le_bytes());
        hasher.update((self.dim as u64).to_le_bytes());
        for name in self.classes.names() {
            hasher.update((name.len() as u64).to_le_bytes());
            hasher.update(name.as_bytes());
        }
        for (x, &y) in self.features.iter().zip(&self.labels) {
            for v in x.iter() {
                hasher.update(v.to_bits().to_le_bytes());
            }
            hasher.update((y as u64).to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        let mut header: Vec<String> = (0..self.dim).map(|j| format!("f{j}")).collect();
        header.push("label".to_string());
        out.push_str(&header.join(","));
        out.push('\n');
        for (x, &y) in self.features.iter().zip(&self.labels) {
            for v in x.iter() {
                out.push_str(&format!("{v:?},"));
            }
            out.push_str(self.classes.name(y).unwrap_or_default());
            out.push('\n');
        }
        out
    }

    pub fn to_json_string(&self) -> String {
        let doc = JsonDataset {
            features: self.features.iter().map(|f| f.to_vec()).collect(),
            labels: self
                .labels
                .iter()
                .map(|&y| self.classes.names[y].clone())
                .collect(),
            classes: self.classes.names.clone(),
        };
        serde_json::to_string(&doc).expect("dataset serializes")
    }

    pub fn save(&self, path: &Path, format: DataFormat) -> Result<(), DataError> {
        let text = match format {
            DataFormat::Csv => self.to_csv_string(),
            DataFormat::Json => self.to_json_string(),
        };
        fs::write(path, text).map_err(|e| DataError::io(path, e))
    }
}

#[derive(Serialize, Deserialize)]
struct JsonDataset {
    features: Vec<Vec<f64>>,
    labels: Vec<String>,
    classes: Vec<String>,
}

/// Loads a labeled dataset. CSV class order is the sorted set of label
/// strings present in the file; JSON carries its own class table.
pub fn load_dataset(path: &Path, format: DataFormat) -> Result<LabeledDataset, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    match format {
        DataFormat::Csv => parse_dataset_csv(&text, None),
        DataFormat::Json => parse_dataset_json(&text),
    }
}

/// Like [`load_dataset`] but resolves labels against a known class table.
pub fn load_dataset_with_classes(
    path: &Path,
    format: DataFormat,
    classes: &LabelSpace,
) -> Result<LabeledDataset, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let data = match format {
        DataFormat::Csv => parse_dataset_csv(&text, Some(classes))?,
        DataFormat::Json => parse_dataset_json(&text)?,
    };
    if data.classes() != classes {
        return Err(DataError::Label(format!(
            "class table {:?} does not match expected {:?}",
            data.classes().names(),
            classes.names()
        )));
    }
    Ok(data)
}

/// A parsed CSV table of raw cells: header plus rows with 1-based line numbers.
pub(crate) struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<(usize, Vec<String>)>,
}

pub(crate) fn read_table(text: &str) -> Result<RawTable, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| DataError::parse(1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(DataError::parse(1, "missing header row"));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            DataError::parse(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        rows.push((line, record.iter().map(str::to_string).collect()));
    }
    Ok(RawTable { header, rows })
}

pub(crate) fn parse_cell(line: usize, column: usize, cell: &str) -> Result<f64, DataError> {
    if cell == MISSING_MARKER {
        return Err(DataError::parse(
            line,
            format!("column {column}: missing value `?` is only allowed in incomplete datasets"),
        ));
    }
    let v: f64 = cell
        .parse()
        .map_err(|_| DataError::parse(line, format!("column {column}: `{cell}` is not a number")))?;
    if !v.is_finite() {
        return Err(DataError::parse(
            line,
            format!("column {column}: `{cell}` is not a finite number"),
        ));
    }
    Ok(v)
}

/// Checks the `f0,...,label` header shape and returns the feature count.
pub(crate) fn feature_columns(header: &[String]) -> Result<usize, DataError> {
    match header.last() {
        Some(last) if last == "label" && header.len() >= 2 => Ok(header.len() - 1),
        _ => Err(DataError::parse(
            1,
            "header must list feature columns followed by a `label` column",
        )),
    }
}

pub(crate) fn parse_dataset_csv(
    text: &str,
    classes: Option<&LabelSpace>,
) -> Result<LabeledDataset, DataError> {
    let table = read_table(text)?;
    let dim = feature_columns(&table.header)?;
    if table.rows.is_empty() {
        return Err(DataError::parse(2, "no records"));
    }
    let mut features = Vec::with_capacity(table.rows.len());
    let mut names = Vec::with_capacity(table.rows.len());
    for (line, row) in &table.rows {
        let values = row[..dim]
            .iter()
            .enumerate()
            .map(|(j, cell)| parse_cell(*line, j, cell))
            .collect::<Result<Vec<_>, _>>()?;
        features.push(FeatureVector(values));
        names.push((*line, row[dim].clone()));
    }
    let classes = match classes {
        Some(c) => c.clone(),
        None => {
            let set: BTreeSet<&str> = names.iter().map(|(_, n)| n.as_str()).collect();
            LabelSpace::new(set.into_iter().map(str::to_string).collect())?
        }
    };
    let lookup: HashMap<&str, usize> = classes
        .names()
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let labels = names
        .iter()
        .map(|(line, n)| {
            lookup
                .get(n.as_str())
                .copied()
                .ok_or_else(|| DataError::Label(format!("line {line}: unknown label `{n}`")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    LabeledDataset::new(classes, features, labels)
}

pub(crate) fn parse_dataset_json(text: &str) -> Result<LabeledDataset, DataError> {
    let doc: JsonDataset = serde_json::from_str(text)
        .map_err(|e| DataError::parse(e.line(), e.to_string()))?;
    if doc.features.is_empty() {
        return Err(DataError::parse(1, "no records"));
    }
    let classes = LabelSpace::new(doc.classes)?;
    let features = doc
        .features
        .into_iter()
        .map(FeatureVector::new)
        .collect::<Result<Vec<_>, _>>()?;
    let labels = doc
        .labels
        .iter()
        .map(|n| {
            classes
                .index_of(n)
                .ok_or_else(|| DataError::Label(format!("unknown label `{n}`")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    LabeledDataset::new(classes, features, labels)
}

/// Loads an unlabeled feature table (`f0,...` with an optional trailing
/// `label` column, which is ignored).
pub fn load_features(path: &Path) -> Result<Vec<FeatureVector>, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    parse_features_csv(&text)
}

pub(crate) fn parse_features_csv(text: &str) -> Result<Vec<FeatureVector>, DataError> {
    let table = read_table(text)?;
    let dim = match table.header.last() {
        Some(last) if last == "label" => table.header.len() - 1,
        _ => table.header.len(),
    };
    if dim == 0 {
        return Err(DataError::parse(1, "no feature columns"));
    }
    if table.rows.is_empty() {
        return Err(DataError::parse(2, "no records"));
    }
    table
        .rows
        .iter()
        .map(|(line, row)| {
            row[..dim]
                .iter()
                .enumerate()
                .map(|(j, c)| parse_cell(*line, j, c))
                .collect::<Result<Vec<_>, _>>()
                .map(FeatureVector)
        })
        .collect()
}

/// 0-1 loss: 0 when the prediction matches the truth, 1 otherwise.
#[inline]
pub fn zero_one_loss(predicted: usize, truth: usize) -> u8 {
    u8::from(predicted != truth)
}

/// Fraction of correct predictions, i.e. one minus the mean 0-1 loss.
pub fn accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    assert_eq!(predicted.len(), truth.len(), "prediction/truth length mismatch");
    if truth.is_empty() {
        return 0.0;
    }
    let loss: usize = predicted
        .iter()
        .zip(truth)
        .map(|(&p, &t)| zero_one_loss(p, t) as usize)
        .sum();
    1.0 - loss as f64 / truth.len() as f64
}

/// Predicted label indices, one row per evaluation sample and one column per model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionMatrix {
    rows: Vec<Vec<usize>>,
    models: usize,
    class_count: usize,
}

impl PredictionMatrix {
    pub fn new(rows: Vec<Vec<usize>>, class_count: usize) -> Result<Self, DataError> {
        let models = rows.first().map_or(0, Vec::len);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != models {
                return Err(DataError::Invalid(format!(
                    "prediction row {i} has {} entries, expected {models}",
                    row.len()
                )));
            }
            if let Some(&bad) = row.iter().find(|&&p| p >= class_count) {
                return Err(DataError::Label(format!(
                    "prediction row {i} has label {bad} but only {class_count} classes exist"
                )));
            }
        }
        Ok(PredictionMatrix {
            rows,
            models,
            class_count,
        })
    }

    /// Builds a matrix from per-model columns of equal length.
    pub fn from_columns(columns: &[Vec<usize>], class_count: usize) -> Result<Self, DataError> {
        let n = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n) {
            return Err(DataError::Invalid("prediction columns differ in length".into()));
        }
        let rows = (0..n).map(|i| columns.iter().map(|c| c[i]).collect()).collect();
        Self::new(rows, class_count)
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn models(&self) -> usize {
        self.models
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn column(&self, model: usize) -> Vec<usize> {
        self.rows.iter().map(|r| r[model]).collect()
    }
}

/// Resolves a prediction token: class name first, then a bare index.
pub(crate) fn resolve_label(
    token: &str,
    classes: Option<&LabelSpace>,
    line: usize,
) -> Result<usize, DataError> {
    if let Some(space) = classes {
        if let Some(i) = space.index_of(token) {
            return Ok(i);
        }
        return match token.parse::<usize>() {
            Ok(i) if i < space.len() => Ok(i),
            _ => Err(DataError::Label(format!("line {line}: unknown label `{token}`"))),
        };
    }
    token
        .parse::<usize>()
        .map_err(|_| DataError::parse(line, format!("`{token}` is not a label index")))
}

/// Loads a prediction CSV (header of model names, one row per sample).
///
/// Without a class table, entries must be label indices and the class
/// count is taken as one past the largest index (at least two).
pub fn load_predictions(
    path: &Path,
    classes: Option<&LabelSpace>,
) -> Result<PredictionMatrix, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    parse_predictions_csv(&text, classes)
}

pub(crate) fn parse_predictions_csv(
    text: &str,
    classes: Option<&LabelSpace>,
) -> Result<PredictionMatrix, DataError> {
    let table = read_table(text)?;
    if table.rows.is_empty() {
        return Err(DataError::parse(2, "no predictions"));
    }
    let rows = table
        .rows
        .iter()
        .map(|(line, row)| {
            row.iter()
                .map(|t| resolve_label(t, classes, *line))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let class_count = match classes {
        Some(c) => c.len(),
        None => rows.iter().flatten().max().map_or(2, |&m| (m + 1).max(2)),
    };
    PredictionMatrix::new(rows, class_count)
}

/// Seed for every stochastic operation. Same seed, same output.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Seed(pub u64);

impl Seed {
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Independent child seed for a numbered sub-stream (splitmix64 step).
    pub fn derive(self, stream: u64) -> Seed {
        let mut z = self
            .0
            .wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        Seed(z ^ (z >> 31))
    }
}

impl fmt::Display for Seed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
