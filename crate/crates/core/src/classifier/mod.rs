//! One-vs-one cubic-kernel SVM over absorbance spectra.

mod dataset;
pub mod svm;

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dataset::{
    library_rows, read_dataset, synthesize_dataset, synthesize_sample, write_dataset, DatasetSpec,
    LabeledSpectrum,
};
use svm::{poly_kernel, SmoParams};

use crate::spectra::{MaterialLabel, SpectraError, Spectrum};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("class {label} has {count} examples, need at least {min}")]
    TooFewExamples {
        label: MaterialLabel,
        count: usize,
        min: usize,
    },
    #[error("sub-problem {positive} vs {negative} did not converge after {iterations} iterations (gap {gap:.3e})")]
    NoConvergence {
        positive: MaterialLabel,
        negative: MaterialLabel,
        iterations: usize,
        gap: f64,
    },
    #[error("spectrum grid does not match the model grid")]
    GridMismatch,
    #[error("empty test set")]
    EmptyTestSet,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Spectra(#[from] SpectraError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Trained on clean rows only.
    #[serde(rename = "SVM3")]
    Svm3,
    /// Trained with interferant-contaminated rows included.
    #[serde(rename = "SVM3+I")]
    Svm3I,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Svm3 => "SVM3",
            Variant::Svm3I => "SVM3+I",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "SVM3" => Ok(Variant::Svm3),
            "SVM3+I" | "SVM3I" => Ok(Variant::Svm3I),
            _ => Err(format!("unknown variant '{s}' (expected SVM3 or SVM3+I)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub c: f64,
    pub tolerance: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            c: 10.0,
            tolerance: 1e-3,
            max_iter: 1_000_000,
            seed: 0,
        }
    }
}

pub const MIN_EXAMPLES_PER_CLASS: usize = 5;
const KERNEL_DEGREE: i32 = 3;
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMachine {
    pub positive: MaterialLabel,
    pub negative: MaterialLabel,
    /// Standardized support vectors.
    pub support_vectors: Vec<Vec<f64>>,
    /// `α_i y_i` for each support vector.
    pub coefficients: Vec<f64>,
    pub rho: f64,
}

impl BinaryMachine {
    fn decision(&self, x: &[f64], degree: i32) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.coefficients)
            .map(|(sv, c)| c * poly_kernel(sv, x, degree))
            .sum::<f64>()
            - self.rho
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedClassifier {
    pub version: u32,
    pub variant: Variant,
    pub kernel_degree: i32,
    pub c: f64,
    pub classes: Vec<MaterialLabel>,
    pub grid_nm: Vec<f64>,
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub machines: Vec<BinaryMachine>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: MaterialLabel,
    /// Winner's votes over `K - 1`.
    pub margin: f64,
    pub votes: BTreeMap<MaterialLabel, usize>,
}

fn cmp_rows(a: &LabeledSpectrum, b: &LabeledSpectrum) -> Ordering {
    a.label.cmp(&b.label).then_with(|| {
        a.absorbance
            .values()
            .iter()
            .zip(b.absorbance.values())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

/// Training rows in canonical order: sorted, exact duplicates dropped, then
/// shuffled with `seed`. The result depends only on the set of rows.
fn canonical_rows<'a>(rows: &[&'a LabeledSpectrum], seed: u64) -> Vec<&'a LabeledSpectrum> {
    let mut v = rows.to_vec();
    v.sort_by(|a, b| cmp_rows(a, b));
    v.dedup_by(|a, b| cmp_rows(a, b).is_eq());
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    v
}

pub fn train(
    dataset: &[LabeledSpectrum],
    variant: Variant,
    options: &TrainOptions,
) -> Result<TrainedClassifier, ClassifierError> {
    if !(options.c > 0.0) || !(options.tolerance > 0.0) {
        return Err(ClassifierError::InvalidParameter(
            "C and tolerance must be positive".into(),
        ));
    }
    let selected: Vec<&LabeledSpectrum> = dataset
        .iter()
        .filter(|r| variant == Variant::Svm3I || !r.is_interferant())
        .collect();
    let rows = canonical_rows(&selected, options.seed);

    let mut counts: BTreeMap<MaterialLabel, usize> = BTreeMap::new();
    for r in &rows {
        *counts.entry(r.label).or_default() += 1;
    }
    if counts.len() < 2 {
        return Err(ClassifierError::TooFewClasses(counts.len()));
    }
    if let Some((&label, &count)) = counts.iter().find(|(_, c)| **c < MIN_EXAMPLES_PER_CLASS) {
        return Err(ClassifierError::TooFewExamples {
            label,
            count,
            min: MIN_EXAMPLES_PER_CLASS,
        });
    }
    let grid = rows[0].absorbance.grid().clone();
    if rows
        .iter()
        .any(|r| r.absorbance.grid().points() != grid.points())
    {
        return Err(ClassifierError::GridMismatch);
    }

    let dim = grid.len();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    for r in &rows {
        for (m, v) in mean.iter_mut().zip(r.absorbance.values()) {
            *m += v / n;
        }
    }
    let mut scale = vec![0.0; dim];
    for r in &rows {
        for ((s, v), m) in scale.iter_mut().zip(r.absorbance.values()).zip(&mean) {
            *s += (v - m).powi(2) / n;
        }
    }
    for s in &mut scale {
        *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
    }
    let features: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| standardize(r.absorbance.values(), &mean, &scale))
        .collect();
    let labels: Vec<MaterialLabel> = rows.iter().map(|r| r.label).collect();

    // Gram matrix shared by all sub-problems.
    let total = features.len();
    let gram: Vec<f64> = (0..total * total)
        .into_par_iter()
        .map(|ij| poly_kernel(&features[ij / total], &features[ij % total], KERNEL_DEGREE))
        .collect();

    let classes: Vec<MaterialLabel> = counts.keys().copied().collect();
    let mut pairs = Vec::new();
    for (i, &a) in classes.iter().enumerate() {
        for &b in &classes[i + 1..] {
            pairs.push((a, b));
        }
    }
    let params = SmoParams {
        c: options.c,
        tolerance: options.tolerance,
        max_iter: options.max_iter,
        degree: KERNEL_DEGREE,
    };
    let machines = pairs
        .par_iter()
        .map(|&(pos, neg)| {
            let idx: Vec<usize> = (0..total)
                .filter(|&i| labels[i] == pos || labels[i] == neg)
                .collect();
            let m = idx.len();
            let y: Vec<f64> = idx
                .iter()
                .map(|&i| if labels[i] == pos { 1.0 } else { -1.0 })
                .collect();
            let mut k = vec![0.0; m * m];
            for (a, &i) in idx.iter().enumerate() {
                for (b, &j) in idx.iter().enumerate() {
                    k[a * m + b] = gram[i * total + j];
                }
            }
            let sol = svm::solve(&k, &y, &params).map_err(|e| ClassifierError::NoConvergence {
                positive: pos,
                negative: neg,
                iterations: e.iterations,
                gap: e.gap,
            })?;
            let mut support_vectors = Vec::new();
            let mut coefficients = Vec::new();
            for (a, &i) in idx.iter().enumerate() {
                if sol.alpha[a] > 0.0 {
                    support_vectors.push(features[i].clone());
                    coefficients.push(sol.alpha[a] * y[a]);
                }
            }
            Ok(BinaryMachine {
                positive: pos,
                negative: neg,
                support_vectors,
                coefficients,
                rho: sol.rho,
            })
        })
        .collect::<Result<Vec<_>, ClassifierError>>()?;

    Ok(TrainedClassifier {
        version: MODEL_VERSION,
        variant,
        kernel_degree: KERNEL_DEGREE,
        c: options.c,
        classes,
        grid_nm: grid.points().to_vec(),
        feature_mean: mean,
        feature_scale: scale,
        machines,
    })
}

fn standardize(x: &[f64], mean: &[f64], scale: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(mean)
        .zip(scale)
        .map(|((v, m), s)| if v.is_finite() { (v - m) / s } else { 0.0 })
        .collect()
}

impl TrainedClassifier {
    /// Raw decision value of every binary machine, in `machines` order.
    pub fn decision_values(&self, absorbance: &Spectrum) -> Result<Vec<f64>, ClassifierError> {
        if absorbance.grid().points() != self.grid_nm.as_slice() {
            return Err(ClassifierError::GridMismatch);
        }
        let x = standardize(absorbance.values(), &self.feature_mean, &self.feature_scale);
        Ok(self
            .machines
            .iter()
            .map(|m| m.decision(&x, self.kernel_degree))
            .collect())
    }

    pub fn predict(&self, absorbance: &Spectrum) -> Result<Prediction, ClassifierError> {
        let decisions = self.decision_values(absorbance)?;
        let mut votes: BTreeMap<MaterialLabel, usize> =
            self.classes.iter().map(|c| (*c, 0)).collect();
        let mut strength: BTreeMap<MaterialLabel, f64> =
            self.classes.iter().map(|c| (*c, 0.0)).collect();
        for (m, d) in self.machines.iter().zip(&decisions) {
            let winner = if *d > 0.0 { m.positive } else { m.negative };
            *votes.get_mut(&winner).expect("known class") += 1;
            *strength.get_mut(&m.positive).expect("known class") += d;
            *strength.get_mut(&m.negative).expect("known class") -= d;
        }
        let label = *self
            .classes
            .iter()
            .max_by(|a, b| {
                votes[a]
                    .cmp(&votes[b])
                    .then_with(|| strength[a].total_cmp(&strength[b]))
                    // earlier name wins a full tie
                    .then_with(|| b.name().cmp(a.name()))
            })
            .expect("at least two classes");
        let margin = votes[&label] as f64 / (self.classes.len() - 1) as f64;
        Ok(Prediction {
            label,
            margin,
            votes,
        })
    }

    pub fn support_vector_count(&self) -> usize {
        self.machines.iter().map(|m| m.support_vectors.len()).sum()
    }

    pub fn to_json(&self) -> Result<String, ClassifierError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, ClassifierError> {
        let m: TrainedClassifier = serde_json::from_str(text)?;
        if m.version != MODEL_VERSION {
            return Err(ClassifierError::Format(format!(
                "unsupported model version {}",
                m.version
            )));
        }
        if m.feature_mean.len() != m.grid_nm.len() || m.feature_scale.len() != m.grid_nm.len() {
            return Err(ClassifierError::Format("feature dimension mismatch".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), ClassifierError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ClassifierError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    /// Row and column order.
    pub labels: Vec<MaterialLabel>,
    /// `counts[true][predicted]`.
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> usize {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.correct() as f64 / self.total() as f64
    }

    /// Row-normalized matrix. Rows for classes absent from the test set are
    /// `None`.
    pub fn row_stochastic(&self) -> Vec<Option<Vec<f64>>> {
        self.counts
            .iter()
            .map(|row| {
                let n: usize = row.iter().sum();
                (n > 0).then(|| row.iter().map(|c| *c as f64 / n as f64).collect())
            })
            .collect()
    }

    pub fn false_positives(&self, i: usize) -> usize {
        (0..self.labels.len())
            .filter(|&t| t != i)
            .map(|t| self.counts[t][i])
            .sum()
    }

    pub fn false_negatives(&self, i: usize) -> usize {
        self.counts[i].iter().sum::<usize>() - self.counts[i][i]
    }

    /// Header `true_label,<label>...`; one row per class present in the test
    /// set, values row-normalized.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), ClassifierError> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["true_label".to_string()];
        header.extend(self.labels.iter().map(|l| l.name().to_string()));
        out.write_record(&header)?;
        for (label, row) in self.labels.iter().zip(self.row_stochastic()) {
            if let Some(row) = row {
                let mut rec = vec![label.name().to_string()];
                rec.extend(row.iter().map(|v| format!("{v:.6}")));
                out.write_record(&rec)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub label: MaterialLabel,
    pub support: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
}

pub fn evaluate(
    model: &TrainedClassifier,
    testset: &[LabeledSpectrum],
) -> Result<Evaluation, ClassifierError> {
    if testset.is_empty() {
        return Err(ClassifierError::EmptyTestSet);
    }
    let predictions = testset
        .par_iter()
        .map(|r| model.predict(&r.absorbance).map(|p| p.label))
        .collect::<Result<Vec<_>, _>>()?;
    let mut labels: Vec<MaterialLabel> = model.classes.clone();
    for r in testset {
        if !labels.contains(&r.label) {
            labels.push(r.label);
        }
    }
    labels.sort();
    let index = |l: MaterialLabel| labels.iter().position(|x| *x == l).expect("label listed");
    let mut counts = vec![vec![0usize; labels.len()]; labels.len()];
    for (r, p) in testset.iter().zip(&predictions) {
        counts[index(r.label)][index(*p)] += 1;
    }
    let confusion = ConfusionMatrix { labels, counts };
    let per_class = (0..confusion.labels.len())
        .map(|i| ClassMetrics {
            label: confusion.labels[i],
            support: confusion.counts[i].iter().sum(),
            false_positives: confusion.false_positives(i),
            false_negatives: confusion.false_negatives(i),
        })
        .collect();
    Ok(Evaluation {
        accuracy: confusion.accuracy(),
        confusion,
        per_class,
    })
}
