//! Label-space metric tensor and the distances it induces.
//!
//! A [`Metric`] is a symmetric, non-negative `k x k` matrix with unit
//! diagonal. It acts as a constant bilinear form on the element-wise
//! absolute difference between a label vector and a prediction:
//!
//! ```text
//! d²(y, ŷ) = Σ_αβ g[α][β] · |ŷ_α − y_α| · |ŷ_β − y_β|
//! ```
//!
//! With the identity metric this is the ordinary squared Euclidean distance.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_index, check_len, Error, Result};
use crate::matrix::SquareMatrix;

/// Tolerance for symmetry and unit-diagonal checks on imported metrics.
pub const IMPORT_TOLERANCE: f64 = 1e-12;

/// Tolerance on the sum of a [`ProbVector`].
pub const PROB_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MetricFile", into = "MetricFile")]
pub struct Metric {
    g: SquareMatrix,
}

impl Metric {
    /// Flat label space.
    pub fn identity(k: usize) -> Result<Self> {
        check_class_count(k)?;
        Ok(Self {
            g: SquareMatrix::identity(k),
        })
    }

    /// Validates exact symmetry, exact unit diagonal and non-negative,
    /// finite entries.
    pub fn new(g: SquareMatrix) -> Result<Self> {
        check_class_count(g.dim())?;
        let k = g.dim();
        for a in 0..k {
            if g[(a, a)] != 1.0 {
                return Err(Error::InvalidMetric(format!(
                    "diagonal entry ({a}, {a}) is {}, expected 1",
                    g[(a, a)]
                )));
            }
        }
        check_entries(&g)?;
        if !g.is_symmetric() {
            return Err(Error::InvalidMetric(format!(
                "matrix is not symmetric (max asymmetry {:e})",
                g.max_asymmetry()
            )));
        }
        Ok(Self { g })
    }

    /// Like [`Metric::new`] but accepts diagonal and symmetry deviations up
    /// to [`IMPORT_TOLERANCE`], then canonicalizes: unit diagonal, lower
    /// triangle mirrored from the upper.
    pub fn from_imported(g: SquareMatrix) -> Result<Self> {
        check_class_count(g.dim())?;
        let k = g.dim();
        for a in 0..k {
            if (g[(a, a)] - 1.0).abs() > IMPORT_TOLERANCE {
                return Err(Error::InvalidMetric(format!(
                    "diagonal entry ({a}, {a}) is {}, expected 1",
                    g[(a, a)]
                )));
            }
        }
        check_entries(&g)?;
        let asym = g.max_asymmetry();
        if asym > IMPORT_TOLERANCE {
            return Err(Error::InvalidMetric(format!(
                "matrix is not symmetric (max asymmetry {asym:e})"
            )));
        }
        let canonical = SquareMatrix::from_fn(k, |r, c| match r.cmp(&c) {
            std::cmp::Ordering::Equal => 1.0,
            std::cmp::Ordering::Less => g[(r, c)],
            std::cmp::Ordering::Greater => g[(c, r)],
        });
        Ok(Self { g: canonical })
    }

    pub fn k(&self) -> usize {
        self.g.dim()
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.g[(a, b)]
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.g
    }

    pub fn row(&self, a: usize) -> &[f64] {
        self.g.row(a)
    }

    pub fn is_flat(&self) -> bool {
        self.off_diagonal().all(|v| v == 0.0)
    }

    fn off_diagonal(&self) -> impl Iterator<Item = f64> + '_ {
        let k = self.k();
        (0..k).flat_map(move |a| (0..k).filter(move |&b| b != a).map(move |b| self.g[(a, b)]))
    }

    /// Min, mean and max of the off-diagonal entries.
    pub fn off_diagonal_summary(&self) -> OffDiagonalSummary {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        let mut n = 0usize;
        for v in self.off_diagonal() {
            min = min.min(v);
            max = max.max(v);
            sum += v;
            n += 1;
        }
        OffDiagonalSummary {
            min,
            mean: sum / n as f64,
            max,
        }
    }

    /// Smallest eigenvalue of `g`. Positive semidefiniteness is not
    /// required of a metric; this is reported for diagnostics only.
    pub fn min_eigenvalue(&self) -> f64 {
        let k = self.k();
        let m = nalgebra::DMatrix::from_row_slice(k, k, self.g.as_slice());
        m.symmetric_eigenvalues().min()
    }

    pub fn to_csv(&self) -> String {
        self.g.to_csv()
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        Self::from_imported(SquareMatrix::from_csv(text)?)
    }

    pub fn to_file(&self, provenance: BTreeMap<String, String>) -> MetricFile {
        MetricFile {
            k: self.k(),
            g: self.g.to_rows(),
            provenance,
        }
    }

    pub fn to_json(&self, provenance: BTreeMap<String, String>) -> String {
        serde_json::to_string_pretty(&self.to_file(provenance))
            .expect("metric serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: MetricFile = serde_json::from_str(text)?;
        Self::from_imported_file(file)
    }

    fn from_imported_file(file: MetricFile) -> Result<Self> {
        let g = SquareMatrix::from_rows(file.g)?;
        if g.dim() != file.k {
            return Err(Error::DimensionMismatch {
                expected: file.k,
                got: g.dim(),
            });
        }
        Self::from_imported(g)
    }

    /// Loads a metric from `.json` (structured) or any other extension
    /// (CSV).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)
        } else {
            Self::from_csv(&text)
        }
    }
}

fn check_class_count(k: usize) -> Result<()> {
    if k < 2 {
        Err(Error::InvalidDimension(format!(
            "class count must be at least 2, got {k}"
        )))
    } else {
        Ok(())
    }
}

fn check_entries(g: &SquareMatrix) -> Result<()> {
    let k = g.dim();
    for a in 0..k {
        for b in 0..k {
            let v = g[(a, b)];
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidMetric(format!(
                    "entry ({a}, {b}) = {v} must be finite and non-negative"
                )));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffDiagonalSummary {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

/// Structured metric file: `{k, g, provenance}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricFile {
    pub k: usize,
    pub g: Vec<Vec<f64>>,
    #[serde(default)]
    pub provenance: BTreeMap<String, String>,
}

impl TryFrom<MetricFile> for Metric {
    type Error = Error;

    fn try_from(file: MetricFile) -> Result<Self> {
        Metric::from_imported_file(file)
    }
}

impl From<Metric> for MetricFile {
    fn from(m: Metric) -> Self {
        m.to_file(BTreeMap::new())
    }
}

/// Classifier output: entries in `[0, 1]` summing to 1 within
/// [`PROB_SUM_TOLERANCE`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::InvalidDimension("empty probability vector".into()));
        }
        if let Some((i, v)) = p
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::InvalidValue(format!(
                "probability entry {i} = {v} outside [0, 1]"
            )));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(Error::InvalidValue(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(Self(p))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// True class of an example, expandable to a one-hot vector of length `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct OneHotLabel {
    class_index: usize,
    k: usize,
}

impl OneHotLabel {
    pub fn new(class_index: usize, k: usize) -> Result<Self> {
        check_index(class_index, k)?;
        Ok(Self { class_index, k })
    }

    pub fn class_index(&self) -> usize {
        self.class_index
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.k];
        v[self.class_index] = 1.0;
        v
    }

    pub fn value(&self, alpha: usize) -> f64 {
        if alpha == self.class_index {
            1.0
        } else {
            0.0
        }
    }
}

/// `Σ_α (ŷ_α − y_α)²`.
pub fn euclidean_sq_distance(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_len(y.len(), yhat.len())?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (b - a) * (b - a)).sum())
}

/// `Σ_αβ g[α][β] · |ŷ_α − y_α| · |ŷ_β − y_β|`.
///
/// Accepts arbitrary real vectors; probability constraints only apply to
/// the losses.
pub fn curved_sq_distance(m: &Metric, y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_len(m.k(), y.len())?;
    check_len(m.k(), yhat.len())?;
    let diff: Vec<f64> = y.iter().zip(yhat).map(|(a, b)| (b - a).abs()).collect();
    Ok(bilinear(m, &diff))
}

pub(crate) fn bilinear(m: &Metric, v: &[f64]) -> f64 {
    v.iter()
        .enumerate()
        .map(|(a, &va)| {
            let row: f64 = m.row(a).iter().zip(v).map(|(g, vb)| g * vb).sum();
            va * row
        })
        .sum()
}

/// Squared distance between the one-hot vectors of classes `a` and `b`:
/// zero when equal, `2·(1 + g[a][b])` otherwise.
pub fn class_pair_sq_distance(m: &Metric, a: usize, b: usize) -> Result<f64> {
    check_index(a, m.k())?;
    check_index(b, m.k())?;
    if a == b {
        Ok(0.0)
    } else {
        Ok(2.0 * (1.0 + m.get(a, b)))
    }
}

/// Pairwise class distances `sqrt(class_pair_sq_distance)`.
pub fn distance_report(m: &Metric) -> DistanceTable {
    let k = m.k();
    let d = SquareMatrix::from_fn(k, |a, b| {
        class_pair_sq_distance(m, a, b)
            .expect("indices are in range")
            .sqrt()
    });
    DistanceTable { d }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceTable {
    d: SquareMatrix,
}

impl DistanceTable {
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.d[(a, b)]
    }

    pub fn k(&self) -> usize {
        self.d.dim()
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.d
    }

    pub fn to_csv(&self) -> String {
        self.d.to_csv()
    }

    /// Cross-class pairs `(a, b, distance)` with `a < b`, sorted by
    /// ascending distance, ties by index.
    pub fn sorted_pairs(&self) -> Vec<(usize, usize, f64)> {
        let k = self.k();
        let mut pairs: Vec<_> = (0..k)
            .flat_map(|a| (a + 1..k).map(move |b| (a, b)))
            .map(|(a, b)| (a, b, self.d[(a, b)]))
            .collect();
        pairs.sort_by(|x, y| x.2.total_cmp(&y.2).then((x.0, x.1).cmp(&(y.0, y.1))));
        pairs
    }
}
