//! Paired comparison of two loss settings over several seeds.
//!
//! Descriptive only: per-seed accuracy deltas, their mean, and a sign
//! count. No significance test and no judgement on direction.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::train::run_in_memory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub accuracy_a: f64,
    pub accuracy_b: f64,
    /// `accuracy_b − accuracy_a`.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignSummary {
    pub b_better: usize,
    pub a_better: usize,
    pub ties: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub label_a: String,
    pub label_b: String,
    pub seeds: Vec<SeedResult>,
    pub mean_delta: f64,
    pub signs: SignSummary,
}

fn describe(cfg: &ExperimentConfig) -> String {
    if cfg.loss.is_curved() {
        format!(
            "{} (A={:?}, lambda={:?})",
            cfg.loss, cfg.metric.scale, cfg.metric.lambda
        )
    } else {
        cfg.loss.to_string()
    }
}

/// Runs `a` and `b` under seeds `a.seed, a.seed + 1, …` (`n_seeds` of
/// them). The configs may differ only in loss and metric settings.
pub fn run_compare(a: &ExperimentConfig, b: &ExperimentConfig, n_seeds: usize) -> Result<CompareReport> {
    if n_seeds == 0 {
        return Err(HarnessError::Validation("n_seeds must be at least 1".into()));
    }
    a.validate()?;
    b.validate()?;
    if a.without_loss_settings() != b.without_loss_settings() {
        return Err(HarnessError::Validation(
            "compared configs may differ only in loss and metric settings".into(),
        ));
    }
    let mut seeds = Vec::with_capacity(n_seeds);
    for i in 0..n_seeds as u64 {
        let seed = a.seed.wrapping_add(i);
        let cfg_a = ExperimentConfig {
            seed,
            output_dir: None,
            ..a.clone()
        };
        let cfg_b = ExperimentConfig {
            seed,
            output_dir: None,
            ..b.clone()
        };
        // The two runs share nothing mutable.
        let (ra, rb) = std::thread::scope(|s| {
            let ha = s.spawn(|| run_in_memory(&cfg_a));
            let rb = run_in_memory(&cfg_b);
            (ha.join().expect("comparison worker panicked"), rb)
        });
        let (accuracy_a, accuracy_b) = (ra?.final_test_accuracy(), rb?.final_test_accuracy());
        seeds.push(SeedResult {
            seed,
            accuracy_a,
            accuracy_b,
            delta: accuracy_b - accuracy_a,
        });
    }
    let mean_delta = seeds.iter().map(|s| s.delta).sum::<f64>() / seeds.len() as f64;
    let signs = SignSummary {
        b_better: seeds.iter().filter(|s| s.delta > 0.0).count(),
        a_better: seeds.iter().filter(|s| s.delta < 0.0).count(),
        ties: seeds.iter().filter(|s| s.delta == 0.0).count(),
    };
    Ok(CompareReport {
        label_a: describe(a),
        label_b: describe(b),
        seeds,
        mean_delta,
        signs,
    })
}

impl CompareReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "A: {}", self.label_a);
        let _ = writeln!(s, "B: {}", self.label_b);
        let _ = writeln!(s, "{:>6}  {:>10}  {:>10}  {:>10}", "seed", "acc A", "acc B", "B - A");
        for r in &self.seeds {
            let _ = writeln!(
                s,
                "{:>6}  {:>10.4}  {:>10.4}  {:>+10.4}",
                r.seed, r.accuracy_a, r.accuracy_b, r.delta
            );
        }
        let _ = writeln!(s, "mean delta (B - A): {:+.6}", self.mean_delta);
        let _ = writeln!(
            s,
            "signs: B better {}, A better {}, ties {}",
            self.signs.b_better, self.signs.a_better, self.signs.ties
        );
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("seed,accuracy_a,accuracy_b,delta\n");
        for r in &self.seeds {
            let _ = writeln!(s, "{},{:?},{:?},{:?}", r.seed, r.accuracy_a, r.accuracy_b, r.delta);
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("compare.json"), serde_json::to_string_pretty(self)?)?;
        std::fs::write(dir.join("compare.csv"), self.to_csv())?;
        std::fs::write(dir.join("compare.txt"), self.to_text())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DataSource;
    use curved_label::{HierarchySpec, LossKind};

    fn base() -> ExperimentConfig {
        ExperimentConfig {
            data: DataSource::Generated(HierarchySpec {
                n_per_class: 30,
                ..HierarchySpec::default()
            }),
            epochs: 3,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn self_comparison_has_zero_deltas() {
        let r = run_compare(&base(), &base(), 2).unwrap();
        assert!(r.seeds.iter().all(|s| s.delta == 0.0));
        assert_eq!(r.signs.ties, 2);
        assert_eq!(r.mean_delta, 0.0);
    }

    #[test]
    fn report_structure() {
        let b = ExperimentConfig {
            loss: LossKind::Cce,
            ..base()
        };
        let r = run_compare(&base(), &b, 5).unwrap();
        assert_eq!(r.seeds.len(), 5);
        let mean = r.seeds.iter().map(|s| s.delta).sum::<f64>() / 5.0;
        assert!((r.mean_delta - mean).abs() < 1e-15);
        assert_eq!(r.signs.a_better + r.signs.b_better + r.signs.ties, 5);
        assert_eq!(r.to_csv().lines().count(), 6);
    }

    #[test]
    fn mismatched_configs_are_rejected() {
        let b = ExperimentConfig {
            lr: 0.01,
            loss: LossKind::Cce,
            ..base()
        };
        let err = run_compare(&base(), &b, 1).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(run_compare(&base(), &base(), 0).is_err());
    }
}
