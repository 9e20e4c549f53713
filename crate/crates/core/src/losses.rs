//! Flat and curved classification losses with gradients with respect to the
//! predicted probability vector.
//!
//! | loss  | value                                  |
//! |-------|----------------------------------------|
//! | MSE   | `Σ_α (ŷ_α − y_α)²`                     |
//! | CE    | `−log ŷ_c`                             |
//! | CQE   | `Σ_αβ g[α][β] |ŷ_α − y_α| |ŷ_β − y_β|` |
//! | CCE   | `−log Σ_β g[c][β] ŷ_β`                 |
//!
//! `c` is the true class. Both logarithms clamp their argument at
//! [`LOG_CLAMP`]. Losses are per example; batch losses are arithmetic means.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::metric::{bilinear, Metric, OneHotLabel, ProbVector};

/// Lower clamp on the argument of the logarithm in CE and CCE.
pub const LOG_CLAMP: f64 = 1e-12;

/// `∂L/∂ŷ` for a single example.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub grad: Vec<f64>,
    /// The log argument hit [`LOG_CLAMP`]; `grad` is then all zero.
    pub clamped: bool,
}

impl LossGradient {
    fn smooth(grad: Vec<f64>) -> Self {
        Self {
            grad,
            clamped: false,
        }
    }

    fn clamped(k: usize) -> Self {
        Self {
            grad: vec![0.0; k],
            clamped: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    Ce,
    Cqe,
    Cce,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::Mse, LossKind::Ce, LossKind::Cqe, LossKind::Cce];

    /// Whether the loss reads the metric tensor.
    pub fn is_curved(self) -> bool {
        matches!(self, LossKind::Cqe | LossKind::Cce)
    }

    /// Evaluates the loss at an arbitrary real vector `yhat` of length
    /// `m.k()`. Flat losses ignore `m`. Finite-difference checks need points
    /// off the probability simplex, which is why this takes a slice.
    pub fn value_at(self, m: &Metric, y: OneHotLabel, yhat: &[f64]) -> Result<f64> {
        check_len(y.k(), yhat.len())?;
        if self.is_curved() {
            check_len(m.k(), y.k())?;
        }
        let c = y.class_index();
        Ok(match self {
            LossKind::Mse => yhat
                .iter()
                .enumerate()
                .map(|(a, &p)| (p - y.value(a)).powi(2))
                .sum(),
            LossKind::Ce => -yhat[c].max(LOG_CLAMP).ln(),
            LossKind::Cqe => {
                let diff: Vec<f64> = yhat
                    .iter()
                    .enumerate()
                    .map(|(a, &p)| (p - y.value(a)).abs())
                    .collect();
                bilinear(m, &diff)
            }
            LossKind::Cce => -cce_argument(m, c, yhat).max(LOG_CLAMP).ln(),
        })
    }

    /// Gradient of [`LossKind::value_at`] with respect to `yhat`.
    pub fn gradient_at(self, m: &Metric, y: OneHotLabel, yhat: &[f64]) -> Result<LossGradient> {
        check_len(y.k(), yhat.len())?;
        if self.is_curved() {
            check_len(m.k(), y.k())?;
        }
        let k = yhat.len();
        let c = y.class_index();
        Ok(match self {
            LossKind::Mse => LossGradient::smooth(
                yhat.iter()
                    .enumerate()
                    .map(|(a, &p)| 2.0 * (p - y.value(a)))
                    .collect(),
            ),
            LossKind::Ce => {
                if yhat[c] <= LOG_CLAMP {
                    LossGradient::clamped(k)
                } else {
                    let mut grad = vec![0.0; k];
                    grad[c] = -1.0 / yhat[c];
                    LossGradient::smooth(grad)
                }
            }
            LossKind::Cqe => {
                let signed: Vec<f64> = yhat
                    .iter()
                    .enumerate()
                    .map(|(a, &p)| p - y.value(a))
                    .collect();
                let abs: Vec<f64> = signed.iter().map(|d| d.abs()).collect();
                let grad = (0..k)
                    .map(|gamma| {
                        let row: f64 = m.row(gamma).iter().zip(&abs).map(|(g, d)| g * d).sum();
                        2.0 * sign(signed[gamma]) * row
                    })
                    .collect();
                LossGradient::smooth(grad)
            }
            LossKind::Cce => {
                let arg = cce_argument(m, c, yhat);
                if arg <= LOG_CLAMP {
                    LossGradient::clamped(k)
                } else {
                    LossGradient::smooth(m.row(c).iter().map(|g| -g / arg).collect())
                }
            }
        })
    }

    /// Loss of a validated prediction.
    pub fn value(self, m: &Metric, y: OneHotLabel, yhat: &ProbVector) -> Result<f64> {
        self.value_at(m, y, yhat.as_slice())
    }

    pub fn gradient(self, m: &Metric, y: OneHotLabel, yhat: &ProbVector) -> Result<LossGradient> {
        self.gradient_at(m, y, yhat.as_slice())
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Mse => "mse",
            LossKind::Ce => "ce",
            LossKind::Cqe => "cqe",
            LossKind::Cce => "cce",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(LossKind::Mse),
            "ce" | "crossentropy" => Ok(LossKind::Ce),
            "cqe" => Ok(LossKind::Cqe),
            "cce" => Ok(LossKind::Cce),
            other => Err(Error::Config(format!(
                "unknown loss {other:?} (expected mse, ce, cqe or cce)"
            ))),
        }
    }
}

/// `sign(0) = 0`, the minimal-norm subgradient of `|x|` at the kink.
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn cce_argument(m: &Metric, c: usize, yhat: &[f64]) -> f64 {
    m.row(c).iter().zip(yhat).map(|(g, p)| g * p).sum()
}

fn flat_metric_for(y: OneHotLabel) -> Result<Metric> {
    Metric::identity(y.k())
}

pub fn mse(y: OneHotLabel, yhat: &ProbVector) -> Result<f64> {
    LossKind::Mse.value(&flat_metric_for(y)?, y, yhat)
}

pub fn crossentropy(y: OneHotLabel, yhat: &ProbVector) -> Result<f64> {
    LossKind::Ce.value(&flat_metric_for(y)?, y, yhat)
}

pub fn cqe(m: &Metric, y: OneHotLabel, yhat: &ProbVector) -> Result<f64> {
    LossKind::Cqe.value(m, y, yhat)
}

pub fn cce(m: &Metric, y: OneHotLabel, yhat: &ProbVector) -> Result<f64> {
    LossKind::Cce.value(m, y, yhat)
}

pub fn mse_grad(y: OneHotLabel, yhat: &ProbVector) -> Result<LossGradient> {
    LossKind::Mse.gradient(&flat_metric_for(y)?, y, yhat)
}

pub fn crossentropy_grad(y: OneHotLabel, yhat: &ProbVector) -> Result<LossGradient> {
    LossKind::Ce.gradient(&flat_metric_for(y)?, y, yhat)
}

pub fn cqe_grad(m: &Metric, y: OneHotLabel, yhat: &ProbVector) -> Result<LossGradient> {
    LossKind::Cqe.gradient(m, y, yhat)
}

pub fn cce_grad(m: &Metric, y: OneHotLabel, yhat: &ProbVector) -> Result<LossGradient> {
    LossKind::Cce.gradient(m, y, yhat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::SquareMatrix;

    fn metric3() -> Metric {
        Metric::new(
            SquareMatrix::from_rows(vec![
                vec![1.0, 0.2, 0.8],
                vec![0.2, 1.0, 0.4],
                vec![0.8, 0.4, 1.0],
            ])
            .unwrap(),
        )
        .unwrap()
    }

    fn label(c: usize, k: usize) -> OneHotLabel {
        OneHotLabel::new(c, k).unwrap()
    }

    fn p(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut up = x.to_vec();
                let mut down = x.to_vec();
                up[i] += h;
                down[i] -= h;
                (f(&up) - f(&down)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn mse_examples() {
        let y = label(0, 3);
        assert_eq!(mse(y, &p(&[1.0, 0.0, 0.0])).unwrap(), 0.0);
        assert!((mse(y, &p(&[0.5, 0.3, 0.2])).unwrap() - 0.38).abs() < 1e-15);
    }

    #[test]
    fn crossentropy_examples() {
        assert_eq!(crossentropy(label(1, 2), &p(&[0.0, 1.0])).unwrap(), 0.0);
        let half = crossentropy(label(0, 2), &p(&[0.5, 0.5])).unwrap();
        assert!((half - std::f64::consts::LN_2).abs() < 1e-15);
        let clamped = crossentropy(label(0, 2), &p(&[0.0, 1.0])).unwrap();
        assert_eq!(clamped, -LOG_CLAMP.ln());
        assert!(clamped.is_finite());
        let g = crossentropy_grad(label(0, 2), &p(&[0.0, 1.0])).unwrap();
        assert!(g.clamped);
        assert_eq!(g.grad, vec![0.0, 0.0]);
    }

    #[test]
    fn cqe_examples() {
        let y = label(0, 3);
        let yhat = p(&[0.5, 0.3, 0.2]);
        let id = Metric::identity(3).unwrap();
        assert_eq!(cqe(&id, y, &yhat).unwrap(), mse(y, &yhat).unwrap());
        // 0.38 + 2·(0.2·0.5·0.3 + 0.8·0.5·0.2 + 0.4·0.3·0.2)
        assert!((cqe(&metric3(), y, &yhat).unwrap() - 0.648).abs() < 1e-15);
        assert_eq!(cqe(&metric3(), y, &p(&[1.0, 0.0, 0.0])).unwrap(), 0.0);
    }

    #[test]
    fn cce_examples() {
        let y = label(0, 3);
        let yhat = p(&[0.5, 0.3, 0.2]);
        let id = Metric::identity(3).unwrap();
        assert_eq!(cce(&id, y, &yhat).unwrap(), crossentropy(y, &yhat).unwrap());
        let v = cce(&metric3(), y, &yhat).unwrap();
        assert!((v - (-(0.72f64).ln())).abs() < 1e-15);
        assert!((v - 0.328504).abs() < 1e-6);
        assert_eq!(cce(&metric3(), y, &p(&[1.0, 0.0, 0.0])).unwrap(), 0.0);
    }

    #[test]
    fn cqe_gradient_examples() {
        let y = label(0, 3);
        let g = cqe_grad(&metric3(), y, &p(&[1.0, 0.0, 0.0])).unwrap();
        assert_eq!(g.grad, vec![0.0, 0.0, 0.0]);

        let yhat = p(&[0.5, 0.3, 0.2]);
        let flat = cqe_grad(&Metric::identity(3).unwrap(), y, &yhat).unwrap();
        let expect: Vec<f64> = [-0.5, 0.3, 0.2].iter().map(|d| 2.0 * d).collect();
        for (a, b) in flat.grad.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(flat.grad, mse_grad(y, &yhat).unwrap().grad);

        let m = metric3();
        let analytic = cqe_grad(&m, y, &yhat).unwrap().grad;
        let numeric = central_difference(
            |x| LossKind::Cqe.value_at(&m, y, x).unwrap(),
            yhat.as_slice(),
            1e-5,
        );
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!((a - n).abs() / a.abs().max(n.abs()) < 1e-6, "{a} vs {n}");
        }
    }

    #[test]
    fn cce_gradient_examples() {
        let y = label(0, 3);
        let yhat = p(&[0.5, 0.3, 0.2]);
        let g = cce_grad(&metric3(), y, &yhat).unwrap();
        assert!(!g.clamped);
        let expect = [-1.0 / 0.72, -0.2 / 0.72, -0.8 / 0.72];
        for (a, b) in g.grad.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((g.grad[0] + 1.38889).abs() < 1e-5);
        assert!((g.grad[1] + 0.27778).abs() < 1e-5);
        assert!((g.grad[2] + 1.11111).abs() < 1e-5);

        let m = metric3();
        let numeric = central_difference(
            |x| LossKind::Cce.value_at(&m, y, x).unwrap(),
            yhat.as_slice(),
            1e-5,
        );
        for (a, n) in g.grad.iter().zip(&numeric) {
            assert!((a - n).abs() / a.abs().max(n.abs()) < 1e-6, "{a} vs {n}");
        }

        let flat = cce_grad(&Metric::identity(3).unwrap(), label(1, 3), &yhat).unwrap();
        assert_eq!(flat.grad, vec![0.0, -1.0 / 0.3, 0.0]);
    }

    #[test]
    fn cce_clamp_region_flags_zero_gradient() {
        let id = Metric::identity(3).unwrap();
        let g = cce_grad(&id, label(2, 3), &p(&[0.5, 0.5, 0.0])).unwrap();
        assert!(g.clamped);
        assert_eq!(g.grad, vec![0.0; 3]);
        assert_eq!(cce(&id, label(2, 3), &p(&[0.5, 0.5, 0.0])).unwrap(), -LOG_CLAMP.ln());
    }

    #[test]
    fn cce_may_go_negative_with_large_scale() {
        let g = SquareMatrix::from_fn(2, |a, b| if a == b { 1.0 } else { 3.0 });
        let m = Metric::new(g).unwrap();
        let v = cce(&m, label(0, 2), &p(&[0.5, 0.5])).unwrap();
        assert!((v + 2f64.ln()).abs() < 1e-15);
        assert!(v >= -(1.0f64 + 3.0).ln());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let y = label(0, 2);
        assert!(matches!(
            mse(y, &p(&[0.5, 0.3, 0.2])),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(cqe(&metric3(), y, &p(&[0.5, 0.5])).is_err());
        assert!(cce_grad(&metric3(), y, &p(&[0.5, 0.5])).is_err());
    }

    #[test]
    fn loss_names_parse() {
        for kind in LossKind::ALL {
            assert_eq!(kind.to_string().parse::<LossKind>().unwrap(), kind);
        }
        assert!("hinge".parse::<LossKind>().is_err());
    }
}
