//! Confusion statistics and the metric tensor built from them.
//!
//! Pipeline: raw counts `C` → predicted-class-normalized `P` → exponential
//! moving average `P̄` across epochs → effective distance
//! `S = 1 − (P + Pᵀ)/2` → metric `g = A·S` off the diagonal, 1 on it.

use serde::{Deserialize, Serialize};

use crate::error::{check_index, check_len, Error, Result};
use crate::matrix::{parse_csv_rows, SquareMatrix};
use crate::metric::Metric;

/// Default scale `A` between effective distance and off-diagonal metric.
pub const DEFAULT_SCALE: f64 = 1.0;
/// Default EMA smoothing factor.
pub const DEFAULT_LAMBDA: f64 = 0.3;

/// Confusion counts, rows = true class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionAccumulator {
    k: usize,
    counts: Vec<u64>,
    total: u64,
}

impl ConfusionAccumulator {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
            total: 0,
        }
    }

    pub fn from_counts(rows: Vec<Vec<u64>>) -> Result<Self> {
        let k = rows.len();
        if k == 0 {
            return Err(Error::InvalidDimension("empty confusion matrix".into()));
        }
        let mut acc = Self::new(k);
        for (r, row) in rows.into_iter().enumerate() {
            if row.len() != k {
                return Err(Error::InvalidDimension(format!(
                    "confusion row {r} has {} entries, expected {k}",
                    row.len()
                )));
            }
            for (c, v) in row.into_iter().enumerate() {
                acc.counts[r * k + c] = v;
                acc.total += v;
            }
        }
        Ok(acc)
    }

    /// Parses a `k x k` CSV of non-negative integers (rows = true class).
    pub fn from_csv(text: &str) -> Result<Self> {
        let rows = parse_csv_rows(text, |f| f.parse::<u64>().ok())?;
        let k = rows.len();
        if k == 0 {
            return Err(Error::InvalidDimension("empty confusion matrix".into()));
        }
        for (line, row) in &rows {
            if row.len() != k {
                return Err(Error::Parse {
                    line: *line,
                    msg: format!(
                        "confusion matrix must be square: {k} rows but {} columns",
                        row.len()
                    ),
                });
            }
        }
        Self::from_counts(rows.into_iter().map(|(_, r)| r).collect())
    }

    pub fn to_csv(&self) -> String {
        self.rows()
            .map(|r| {
                let fields: Vec<String> = r.iter().map(u64::to_string).collect();
                fields.join(",") + "\n"
            })
            .collect()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn count(&self, true_class: usize, predicted: usize) -> u64 {
        self.counts[true_class * self.k + predicted]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u64]> {
        self.counts.chunks(self.k.max(1)).take(self.k)
    }

    pub fn to_rows(&self) -> Vec<Vec<u64>> {
        self.rows().map(<[u64]>::to_vec).collect()
    }

    pub fn record(&mut self, true_class: usize, predicted: usize) -> Result<()> {
        check_index(true_class, self.k)?;
        check_index(predicted, self.k)?;
        self.counts[true_class * self.k + predicted] += 1;
        self.total += 1;
        Ok(())
    }

    pub fn reset(&mut self) {
        self.counts.iter_mut().for_each(|c| *c = 0);
        self.total = 0;
    }

    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        let correct: u64 = (0..self.k).map(|i| self.count(i, i)).sum();
        correct as f64 / self.total as f64
    }

    /// `P[α][β] = C[α][β] / Σ_γ C[γ][β]`: each predicted-class column sums
    /// to one. A column with no predictions stays all zero.
    pub fn normalize(&self) -> NormalizedConfusion {
        let k = self.k;
        let column_totals: Vec<u64> = (0..k)
            .map(|b| (0..k).map(|a| self.count(a, b)).sum())
            .collect();
        let p = SquareMatrix::from_fn(k, |a, b| {
            let total = column_totals[b];
            if total == 0 {
                0.0
            } else {
                self.count(a, b) as f64 / total as f64
            }
        });
        NormalizedConfusion { p }
    }
}

/// Confusion counts normalized over the predicted-class margin. The
/// diagonal holds per-class precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedConfusion {
    p: SquareMatrix,
}

impl NormalizedConfusion {
    /// Validates entries in `[0, 1]` and each column summing to 1 ± 1e-9
    /// or being exactly zero.
    pub fn new(p: SquareMatrix) -> Result<Self> {
        let k = p.dim();
        for b in 0..k {
            let mut sum = 0.0;
            let mut all_zero = true;
            for a in 0..k {
                let v = p[(a, b)];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidValue(format!(
                        "P[{a}][{b}] = {v} outside [0, 1]"
                    )));
                }
                all_zero &= v == 0.0;
                sum += v;
            }
            if !all_zero && (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidValue(format!(
                    "column {b} of P sums to {sum}"
                )));
            }
        }
        Ok(Self { p })
    }

    pub fn k(&self) -> usize {
        self.p.dim()
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.p
    }
}

/// Exponential moving average of normalized confusion matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmaState {
    k: usize,
    lambda: f64,
    pbar: SquareMatrix,
    t: u64,
}

impl EmaState {
    pub fn new(k: usize, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(Self {
            k,
            lambda,
            pbar: SquareMatrix::zeros(k),
            t: 0,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Number of updates folded in so far.
    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn pbar(&self) -> &SquareMatrix {
        &self.pbar
    }

    /// First update: `P̄ = λ·P`. Afterwards: `P̄ ← (1 − λ)·P̄ + λ·P`.
    /// The first update is deliberately not bias-corrected.
    pub fn update(&mut self, p: &NormalizedConfusion) -> Result<()> {
        check_len(self.k, p.k())?;
        let lambda = self.lambda;
        let fresh = p.matrix();
        self.pbar = if self.t == 0 {
            fresh.scale(lambda)
        } else {
            SquareMatrix::from_fn(self.k, |a, b| {
                (1.0 - lambda) * self.pbar[(a, b)] + lambda * fresh[(a, b)]
            })
        };
        self.t += 1;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("EMA serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let state: EmaState = serde_json::from_str(text)?;
        check_lambda(state.lambda)?;
        check_len(state.k, state.pbar.dim())?;
        if state
            .pbar
            .as_slice()
            .iter()
            .any(|v| !(0.0..=1.0).contains(v))
        {
            return Err(Error::InvalidValue("pbar entries must lie in [0, 1]".into()));
        }
        Ok(state)
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "EMA smoothing factor must lie in (0, 1], got {lambda}"
        )))
    }
}

/// Free-function form of [`EmaState::update`].
pub fn ema_update(state: &EmaState, p: &NormalizedConfusion) -> Result<EmaState> {
    let mut next = state.clone();
    next.update(p)?;
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    /// Proportionality `A` between effective distance and off-diagonal `g`.
    pub scale: f64,
    /// EMA smoothing factor in `(0, 1]`.
    pub lambda: f64,
    /// Optional upper bound on off-diagonal entries.
    #[serde(default)]
    pub clamp_max: Option<f64>,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            scale: DEFAULT_SCALE,
            lambda: DEFAULT_LAMBDA,
            clamp_max: None,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!(
                "metric scale must be positive and finite, got {}",
                self.scale
            )));
        }
        check_lambda(self.lambda)?;
        if let Some(cap) = self.clamp_max {
            if !(cap >= 0.0 && cap.is_finite()) {
                return Err(Error::Config(format!(
                    "clamp_max must be non-negative and finite, got {cap}"
                )));
            }
        }
        Ok(())
    }
}

/// `S[α][β] = 1 − (P[α][β] + P[β][α]) / 2`. Exactly symmetric.
pub fn effective_distance(p: &SquareMatrix) -> SquareMatrix {
    SquareMatrix::from_fn(p.dim(), |a, b| {
        // Order the operands so S[a][b] and S[b][a] round identically.
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        1.0 - 0.5 * (p[(lo, hi)] + p[(hi, lo)])
    })
}

/// Unit diagonal, `A·S` off the diagonal (optionally capped).
pub fn build_metric(s: &SquareMatrix, cfg: &MetricConfig) -> Result<Metric> {
    cfg.validate()?;
    if !s.is_symmetric() {
        return Err(Error::InvalidMetric(format!(
            "effective distance matrix is not symmetric (max asymmetry {:e})",
            s.max_asymmetry()
        )));
    }
    let k = s.dim();
    for a in 0..k {
        for b in 0..k {
            if a != b && !(0.0..=1.0).contains(&s[(a, b)]) {
                return Err(Error::InvalidValue(format!(
                    "S[{a}][{b}] = {} outside [0, 1]",
                    s[(a, b)]
                )));
            }
        }
    }
    let g = SquareMatrix::from_fn(k, |a, b| {
        if a == b {
            1.0
        } else {
            let v = cfg.scale * s[(a, b)];
            cfg.clamp_max.map_or(v, |cap| v.min(cap))
        }
    });
    Metric::new(g)
}

/// Metric from the current EMA state. Errors before the first update; the
/// caller should use the identity metric until then.
pub fn metric_from_history(state: &EmaState, cfg: &MetricConfig) -> Result<Metric> {
    if state.t() == 0 {
        return Err(Error::NotInitialized(
            "no confusion statistics recorded yet".into(),
        ));
    }
    build_metric(&effective_distance(state.pbar()), cfg)
}
