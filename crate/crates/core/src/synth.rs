//! Seeded synthetic data used by tests, fixtures and demos.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::cpclean::{candidates_to_json, CellId, IncompleteDataset, IncompleteTable};
use crate::model::{FeatureVector, LabelSpace, LabeledDataset, PredictionMatrix, Seed};

/// `n` points from `classes` unit-variance Gaussian blobs in `dim` dimensions.
///
/// Labels cycle through the classes (`i % classes`). Class `y` is centered
/// at `separation * y` on every axis, so blobs are separable for
/// `separation` well above a few standard deviations.
pub fn gaussian_blobs(
    n: usize,
    classes: usize,
    dim: usize,
    separation: f64,
    seed: Seed,
) -> LabeledDataset {
    let mut rng = seed.rng();
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % classes;
        let center = separation * y as f64;
        let x: Vec<f64> = (0..dim)
            .map(|_| center + <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect();
        features.push(FeatureVector::new(x).expect("finite"));
        labels.push(y);
    }
    LabeledDataset::new(LabelSpace::indexed(classes).expect("classes >= 2"), features, labels)
        .expect("consistent")
}

/// Predictions of `accuracies.len()` independent models on a stream of
/// uniformly drawn labels. Model `i` is right with probability
/// `accuracies[i]`, otherwise it predicts a uniformly chosen wrong class.
pub fn model_stream(
    n: usize,
    classes: usize,
    accuracies: &[f64],
    seed: Seed,
) -> (PredictionMatrix, Vec<usize>) {
    let mut rng = seed.rng();
    let mut rows = Vec::with_capacity(n);
    let mut truths = Vec::with_capacity(n);
    for _ in 0..n {
        let y = rng.random_range(0..classes);
        let row = accuracies
            .iter()
            .map(|&acc| {
                if rng.random::<f64>() < acc {
                    y
                } else {
                    let other = rng.random_range(0..classes - 1);
                    if other >= y {
                        other + 1
                    } else {
                        other
                    }
                }
            })
            .collect();
        rows.push(row);
        truths.push(y);
    }
    (PredictionMatrix::new(rows, classes).expect("labels in range"), truths)
}

/// Incomplete training data with candidate repairs, an unlabeled validation
/// set and ground-truth values for every missing cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CleaningFixture {
    pub table: IncompleteTable,
    pub candidates: BTreeMap<CellId, Vec<f64>>,
    pub validation: Vec<FeatureVector>,
    pub truth: BTreeMap<CellId, f64>,
}

impl CleaningFixture {
    pub fn dataset(&self) -> IncompleteDataset {
        IncompleteDataset::new(self.table.clone(), self.candidates.clone()).expect("fixture is consistent")
    }

    /// Incomplete CSV with `?` for missing cells.
    pub fn table_csv(&self) -> String {
        let dim = self.table.dim();
        let mut out: Vec<String> = (0..dim).map(|j| format!("f{j}")).collect();
        out.push("label".into());
        let mut text = out.join(",") + "\n";
        for (row, &y) in self.table.rows.iter().zip(&self.table.labels) {
            let mut cells: Vec<String> = row
                .iter()
                .map(|v| v.map_or_else(|| "?".to_string(), |v| format!("{v:?}")))
                .collect();
            cells.push(self.table.classes.name(y).expect("label in range").to_string());
            text += &(cells.join(",") + "\n");
        }
        text
    }

    pub fn validation_csv(&self) -> String {
        let dim = self.validation.first().map_or(0, |v| v.dim());
        let mut text = (0..dim).map(|j| format!("f{j}")).collect::<Vec<_>>().join(",") + "\n";
        for v in &self.validation {
            text += &(v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",") + "\n");
        }
        text
    }

    pub fn truth_json(&self) -> String {
        let map: BTreeMap<String, f64> = self.truth.iter().map(|(c, v)| (c.to_string(), *v)).collect();
        serde_json::to_string(&map).expect("serializable")
    }

    /// Writes `data.csv`, `candidates.json`, `validation.csv` and `truth.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::write(dir.join("data.csv"), self.table_csv())?;
        std::fs::write(dir.join("candidates.json"), candidates_to_json(&self.candidates))?;
        std::fs::write(dir.join("validation.csv"), self.validation_csv())?;
        std::fs::write(dir.join("truth.json"), self.truth_json())
    }
}

/// One validation point at the origin whose prediction hinges on a single
/// missing cell, plus `irrelevant` far-away missing cells.
///
/// Record 0 (class `a`) sits at `(?, 0)` with candidates `{0.1, 5}` (truth
/// 0.1); record 1 (class `b`) at `(1, 0)`. Two pins fix the min-max range to
/// `[0, 200] x [0, 50]`, and each irrelevant record sits at `(?, 25)` with
/// candidates `{100, 101}`. Repairing cell `(0, 0)` alone makes the
/// prediction certain.
pub fn decisive_cell_fixture(irrelevant: usize) -> CleaningFixture {
    let classes = LabelSpace::new(vec!["a".into(), "b".into()]).expect("two classes");
    let mut rows = vec![
        vec![None, Some(0.0)],
        vec![Some(1.0), Some(0.0)],
        vec![Some(0.0), Some(50.0)],
        vec![Some(200.0), Some(50.0)],
    ];
    let mut labels = vec![0, 1, 1, 0];
    let mut candidates = BTreeMap::from([(CellId::new(0, 0), vec![0.1, 5.0])]);
    let mut truth = BTreeMap::from([(CellId::new(0, 0), 0.1)]);
    for i in 0..irrelevant {
        let row = rows.len();
        rows.push(vec![None, Some(25.0)]);
        labels.push(i % 2);
        candidates.insert(CellId::new(row, 0), vec![100.0, 101.0]);
        truth.insert(CellId::new(row, 0), 100.0);
    }
    CleaningFixture {
        table: IncompleteTable { classes, rows, labels },
        candidates,
        validation: vec![FeatureVector::new(vec![0.0, 0.0]).expect("finite")],
        truth,
    }
}
