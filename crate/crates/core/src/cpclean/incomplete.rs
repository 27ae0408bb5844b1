use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::CleanError;
use crate::model::{
    feature_columns, parse_cell, read_table, DataError, FeatureVector, LabelSpace,
    LabeledDataset, MISSING_MARKER,
};

/// A missing cell, addressed by record index and feature index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct CellId {
    pub row: usize,
    pub col: usize,
}

impl CellId {
    pub fn new(row: usize, col: usize) -> Self {
        CellId { row, col }
    }
}

impl From<(usize, usize)> for CellId {
    fn from((row, col): (usize, usize)) -> Self {
        CellId { row, col }
    }
}

impl From<CellId> for (usize, usize) {
    fn from(c: CellId) -> Self {
        (c.row, c.col)
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.row, self.col)
    }
}

impl FromStr for CellId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (r, c) = s
            .split_once(',')
            .ok_or_else(|| format!("cell key `{s}` is not `row,col`"))?;
        let parse = |t: &str| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| format!("cell key `{s}` is not `row,col`"))
        };
        Ok(CellId::new(parse(r)?, parse(c)?))
    }
}

/// Raw incomplete table: observed cells are `Some`, `?` cells are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct IncompleteTable {
    pub classes: LabelSpace,
    pub rows: Vec<Vec<Option<f64>>>,
    pub labels: Vec<usize>,
}

impl IncompleteTable {
    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn missing_cells(&self) -> Vec<CellId> {
        let mut cells = Vec::new();
        for (r, row) in self.rows.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                if v.is_none() {
                    cells.push(CellId::new(r, c));
                }
            }
        }
        cells
    }
}

/// Parses an incomplete CSV (`f0,...,label`, missing cells written as `?`).
/// Classes are the sorted set of label strings unless a table is given.
pub fn parse_incomplete_csv(
    text: &str,
    classes: Option<&LabelSpace>,
) -> Result<IncompleteTable, DataError> {
    let table = read_table(text)?;
    let dim = feature_columns(&table.header)?;
    if table.rows.is_empty() {
        return Err(DataError::Parse {
            line: 2,
            message: "no records".into(),
        });
    }
    let mut rows = Vec::with_capacity(table.rows.len());
    let mut names = Vec::with_capacity(table.rows.len());
    for (line, row) in &table.rows {
        let values = row[..dim]
            .iter()
            .enumerate()
            .map(|(j, cell)| {
                if cell == MISSING_MARKER {
                    Ok(None)
                } else {
                    parse_cell(*line, j, cell).map(Some)
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        if row[dim] == MISSING_MARKER {
            return Err(DataError::Label(format!("line {line}: labels may not be missing")));
        }
        rows.push(values);
        names.push((*line, row[dim].clone()));
    }
    let classes = match classes {
        Some(c) => c.clone(),
        None => {
            let mut set: Vec<String> = names.iter().map(|(_, n)| n.clone()).collect();
            set.sort();
            set.dedup();
            LabelSpace::new(set)?
        }
    };
    let labels = names
        .iter()
        .map(|(line, n)| {
            classes
                .index_of(n)
                .ok_or_else(|| DataError::Label(format!("line {line}: unknown label `{n}`")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(IncompleteTable {
        classes,
        rows,
        labels,
    })
}

pub fn load_incomplete(path: &Path) -> Result<IncompleteTable, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    parse_incomplete_csv(&text, None)
}

#[derive(Serialize, Deserialize)]
struct CandidateFile {
    candidates: BTreeMap<String, Vec<f64>>,
}

/// Parses the candidate sidecar `{"candidates": {"<row>,<col>": [v1, ...]}}`.
pub fn parse_candidates_json(text: &str) -> Result<BTreeMap<CellId, Vec<f64>>, DataError> {
    let file: CandidateFile = serde_json::from_str(text).map_err(|e| DataError::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    file.candidates
        .into_iter()
        .map(|(k, v)| Ok((k.parse::<CellId>().map_err(DataError::Invalid)?, v)))
        .collect()
}

pub fn load_candidates(path: &Path) -> Result<BTreeMap<CellId, Vec<f64>>, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    parse_candidates_json(&text)
}

pub fn candidates_to_json(candidates: &BTreeMap<CellId, Vec<f64>>) -> String {
    let file = CandidateFile {
        candidates: candidates.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
    };
    serde_json::to_string(&file).expect("candidates serialize")
}

/// Parses a ground-truth map with the same shape as the sidecar but one value per cell:
/// `{"<row>,<col>": v}`.
pub fn parse_ground_truth_json(text: &str) -> Result<BTreeMap<CellId, f64>, DataError> {
    let raw: BTreeMap<String, f64> = serde_json::from_str(text).map_err(|e| DataError::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    raw.into_iter()
        .map(|(k, v)| Ok((k.parse::<CellId>().map_err(DataError::Invalid)?, v)))
        .collect()
}

pub fn load_ground_truth(path: &Path) -> Result<BTreeMap<CellId, f64>, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    parse_ground_truth_json(&text)
}

/// Built-in candidate generators; each contributes at most a few values per cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RepairGenerator {
    Mean,
    Median,
    /// Mean over observed values of records with the same label.
    ClassMean,
    /// The `k` most frequent observed values of the column.
    FrequentValues(usize),
}

impl FromStr for RepairGenerator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(RepairGenerator::Mean),
            "median" => Ok(RepairGenerator::Median),
            "class-mean" => Ok(RepairGenerator::ClassMean),
            other => match other.strip_prefix("frequent-") {
                Some(k) => k
                    .parse()
                    .ok()
                    .filter(|&k: &usize| k > 0)
                    .map(RepairGenerator::FrequentValues)
                    .ok_or_else(|| format!("bad generator `{s}`")),
                None => Err(format!(
                    "unknown generator `{s}` (mean, median, class-mean, frequent-K)"
                )),
            },
        }
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    })
}

fn most_frequent(values: &[f64], k: usize) -> Vec<f64> {
    let mut counts: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    for &v in values {
        counts.entry(v.to_bits()).or_insert((v, 0)).1 += 1;
    }
    let mut ranked: Vec<(f64, usize)> = counts.into_values().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.total_cmp(&b.0)));
    ranked.into_iter().take(k).map(|(v, _)| v).collect()
}

/// Runs every generator independently over each missing cell and collects
/// the union of their outputs, in generator order.
pub fn generate_candidates(
    table: &IncompleteTable,
    generators: &[RepairGenerator],
) -> Result<BTreeMap<CellId, Vec<f64>>, CleanError> {
    if generators.is_empty() {
        return Err(CleanError::Invalid("no repair generators given".into()));
    }
    let dim = table.dim();
    let observed: Vec<Vec<(f64, usize)>> = (0..dim)
        .map(|c| {
            table
                .rows
                .iter()
                .zip(&table.labels)
                .filter_map(|(row, &y)| row[c].map(|v| (v, y)))
                .collect()
        })
        .collect();
    let mut out = BTreeMap::new();
    for cell in table.missing_cells() {
        let column: Vec<f64> = observed[cell.col].iter().map(|&(v, _)| v).collect();
        if column.is_empty() {
            return Err(CleanError::Invalid(format!(
                "feature {} has no observed values to derive repairs from",
                cell.col
            )));
        }
        let mut values = Vec::new();
        for g in generators {
            match *g {
                RepairGenerator::Mean => values.extend(mean(&column)),
                RepairGenerator::Median => values.extend(median(&column)),
                RepairGenerator::ClassMean => {
                    let label = table.labels[cell.row];
                    let same: Vec<f64> = observed[cell.col]
                        .iter()
                        .filter(|&&(_, y)| y == label)
                        .map(|&(v, _)| v)
                        .collect();
                    values.extend(mean(&same).or_else(|| mean(&column)));
                }
                RepairGenerator::FrequentValues(k) => values.extend(most_frequent(&column, k)),
            }
        }
        out.insert(cell, values);
    }
    Ok(out)
}

/// Training data whose missing cells each carry a finite, nonempty set of
/// candidate repairs. The possible worlds are the product of those sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncompleteDataset {
    classes: LabelSpace,
    /// Observed values; missing cells hold their first candidate.
    rows: Vec<Vec<f64>>,
    labels: Vec<usize>,
    /// Missing cells in ascending (row, col) order.
    cells: Vec<CellId>,
    /// Candidate set per entry of `cells`; deduplicated, first occurrence kept.
    candidates: Vec<Vec<f64>>,
}

impl IncompleteDataset {
    pub fn new(
        table: IncompleteTable,
        candidates: BTreeMap<CellId, Vec<f64>>,
    ) -> Result<Self, CleanError> {
        let dim = table.dim();
        if table.rows.is_empty() {
            return Err(CleanError::Invalid("no records".into()));
        }
        if let Some(r) = table.rows.iter().position(|row| row.len() != dim) {
            return Err(CleanError::Invalid(format!("record {r} has the wrong width")));
        }
        if table.labels.len() != table.rows.len() {
            return Err(CleanError::Invalid("label count differs from record count".into()));
        }
        if table.labels.iter().any(|&y| y >= table.classes.len()) {
            return Err(CleanError::Invalid("label index out of range".into()));
        }
        for cell in candidates.keys() {
            let known = table
                .rows
                .get(cell.row)
                .and_then(|row| row.get(cell.col))
                .is_some_and(Option::is_none);
            if !known {
                return Err(CleanError::Invalid(format!(
                    "candidates given for cell {cell}, which is not missing"
                )));
            }
        }
        let cells = table.missing_cells();
        let mut sets = Vec::with_capacity(cells.len());
        for cell in &cells {
            let raw = candidates.get(cell).ok_or_else(|| {
                CleanError::Invalid(format!("missing cell {cell} has no candidate repairs"))
            })?;
            let mut set: Vec<f64> = Vec::with_capacity(raw.len());
            for &v in raw {
                if !v.is_finite() {
                    return Err(CleanError::Invalid(format!(
                        "candidate {v} for cell {cell} is not finite"
                    )));
                }
                if !set.iter().any(|s| s.to_bits() == v.to_bits()) {
                    set.push(v);
                }
            }
            if set.is_empty() {
                return Err(CleanError::Invalid(format!(
                    "missing cell {cell} has an empty candidate set"
                )));
            }
            sets.push(set);
        }
        let mut rows: Vec<Vec<f64>> = table
            .rows
            .iter()
            .map(|row| row.iter().map(|v| v.unwrap_or(0.0)).collect())
            .collect();
        for (cell, set) in cells.iter().zip(&sets) {
            rows[cell.row][cell.col] = set[0];
        }
        Ok(IncompleteDataset {
            classes: table.classes,
            rows,
            labels: table.labels,
            cells,
            candidates: sets,
        })
    }

    /// A dataset without missing cells (exactly one possible world).
    pub fn from_complete(data: &LabeledDataset) -> Self {
        IncompleteDataset {
            classes: data.classes().clone(),
            rows: data.features().iter().map(|f| f.to_vec()).collect(),
            labels: data.labels().to_vec(),
            cells: Vec::new(),
            candidates: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn classes(&self) -> &LabelSpace {
        &self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub(crate) fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// All missing cells, clean or not.
    pub fn cells(&self) -> &[CellId] {
        &self.cells
    }

    pub fn candidates(&self, cell: CellId) -> Option<&[f64]> {
        self.position(cell).map(|i| self.candidates[i].as_slice())
    }

    pub(crate) fn candidate_sets(&self) -> &[Vec<f64>] {
        &self.candidates
    }

    pub(crate) fn position(&self, cell: CellId) -> Option<usize> {
        self.cells.binary_search(&cell).ok()
    }

    /// Cells with two or more candidates, in ascending order.
    pub fn dirty_cells(&self) -> Vec<CellId> {
        self.cells
            .iter()
            .zip(&self.candidates)
            .filter(|(_, set)| set.len() >= 2)
            .map(|(c, _)| *c)
            .collect()
    }

    /// Number of possible worlds (product of candidate-set sizes).
    pub fn world_count(&self) -> Result<u64, CleanError> {
        self.candidates.iter().try_fold(1u64, |acc, set| {
            acc.checked_mul(set.len() as u64)
                .ok_or(CleanError::WorldCountOverflow)
        })
    }

    /// Collapses a cell's candidate set to `{value}`.
    pub(crate) fn fix_cell(&mut self, cell: CellId, value: f64) -> Result<(), CleanError> {
        let i = self.position(cell).ok_or(CleanError::UnknownCell(cell))?;
        self.candidates[i] = vec![value];
        self.rows[cell.row][cell.col] = value;
        Ok(())
    }

    /// Materializes one world given a candidate index per missing cell.
    pub fn world(&self, choice: &[usize]) -> Result<LabeledDataset, CleanError> {
        assert_eq!(choice.len(), self.cells.len(), "one choice per missing cell");
        let mut rows = self.rows.clone();
        for ((cell, set), &k) in self.cells.iter().zip(&self.candidates).zip(choice) {
            rows[cell.row][cell.col] = set[k];
        }
        let features = rows
            .into_iter()
            .map(FeatureVector::new)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(LabeledDataset::new(self.classes.clone(), features, self.labels.clone())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_missing_cells_and_sidecar() {
        let table = parse_incomplete_csv("f0,f1,label\n1,?,a\n?,?,b\n3,4,a\n", None).unwrap();
        assert_eq!(
            table.missing_cells(),
            vec![CellId::new(0, 1), CellId::new(1, 0), CellId::new(1, 1)]
        );
        let cands = parse_candidates_json(
            r#"{"candidates": {"0,1": [1, 2, 3, 4], "1,0": [0, 1, 2, 3], "1,1": [5, 5, 6, 7, 8]}}"#,
        )
        .unwrap();
        let data = IncompleteDataset::new(table, cands).unwrap();
        // duplicate 5 collapses
        assert_eq!(data.candidates(CellId::new(1, 1)).unwrap(), &[5.0, 6.0, 7.0, 8.0]);
        assert_eq!(data.world_count().unwrap(), 64);
    }

    #[test]
    fn world_count_examples() {
        let table = parse_incomplete_csv("f0,f1,label\n1,2,a\n3,4,b\n", None).unwrap();
        assert_eq!(IncompleteDataset::new(table, BTreeMap::new()).unwrap().world_count().unwrap(), 1);

        let table = parse_incomplete_csv("f0,f1,label\n?,2,a\n3,?,b\n", None).unwrap();
        let cands = BTreeMap::from([
            (CellId::new(0, 0), vec![0.0, 1.0]),
            (CellId::new(1, 1), vec![1.0, 2.0, 3.0, 4.0, 5.0]),
        ]);
        assert_eq!(IncompleteDataset::new(table, cands).unwrap().world_count().unwrap(), 10);
    }

    #[test]
    fn world_count_overflow_is_reported() {
        let n = 70;
        let mut text = String::from("f0,label\n");
        for i in 0..n {
            text.push_str(if i % 2 == 0 { "?,a\n" } else { "?,b\n" });
        }
        let table = parse_incomplete_csv(&text, None).unwrap();
        let cands = (0..n).map(|r| (CellId::new(r, 0), vec![0.0, 1.0])).collect();
        let data = IncompleteDataset::new(table, cands).unwrap();
        assert!(matches!(data.world_count(), Err(CleanError::WorldCountOverflow)));
    }

    #[test]
    fn rejects_inconsistent_sidecars() {
        let table = parse_incomplete_csv("f0,label\n?,a\n1,b\n", None).unwrap();
        assert!(IncompleteDataset::new(table.clone(), BTreeMap::new()).is_err());
        let extra = BTreeMap::from([
            (CellId::new(0, 0), vec![1.0]),
            (CellId::new(1, 0), vec![1.0]),
        ]);
        assert!(IncompleteDataset::new(table.clone(), extra).is_err());
        let empty = BTreeMap::from([(CellId::new(0, 0), vec![])]);
        assert!(IncompleteDataset::new(table, empty).is_err());
    }

    #[test]
    fn labels_cannot_be_missing() {
        assert!(parse_incomplete_csv("f0,label\n1,?\n2,a\n", None).is_err());
    }

    #[test]
    fn generators_cover_every_missing_cell() {
        let table =
            parse_incomplete_csv("f0,label\n1,a\n2,a\n2,b\n7,b\n?,a\n?,b\n", None).unwrap();
        let gens = [
            RepairGenerator::Mean,
            RepairGenerator::Median,
            RepairGenerator::ClassMean,
            RepairGenerator::FrequentValues(1),
        ];
        let cands = generate_candidates(&table, &gens).unwrap();
        assert_eq!(cands[&CellId::new(4, 0)], vec![3.0, 2.0, 1.5, 2.0]);
        assert_eq!(cands[&CellId::new(5, 0)], vec![3.0, 2.0, 4.5, 2.0]);
        let data = IncompleteDataset::new(table, cands).unwrap();
        assert_eq!(data.candidates(CellId::new(4, 0)).unwrap(), &[3.0, 2.0, 1.5]);
        assert_eq!(data.world_count().unwrap(), 9);
    }

    #[test]
    fn generator_names_parse() {
        assert_eq!("class-mean".parse(), Ok(RepairGenerator::ClassMean));
        assert_eq!("frequent-3".parse(), Ok(RepairGenerator::FrequentValues(3)));
        assert!("frequent-0".parse::<RepairGenerator>().is_err());
        assert!("mode".parse::<RepairGenerator>().is_err());
    }
}
