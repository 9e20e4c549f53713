//! Metric and distance reports for externally produced confusion matrices.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use curved_label::confusion::{build_metric, effective_distance};
use curved_label::{distance_report, ConfusionAccumulator, DistanceTable, Metric, MetricConfig, SquareMatrix};

use crate::error::Result;

#[derive(Debug, Clone)]
pub struct MetricReport {
    pub counts: ConfusionAccumulator,
    pub p: SquareMatrix,
    pub s: SquareMatrix,
    pub metric: Metric,
    pub distances: DistanceTable,
    pub cfg: MetricConfig,
}

/// Builds `P`, `S`, `g` and the distance table from confusion-count CSV
/// text (rows = true class).
pub fn metric_report(confusion_csv: &str, cfg: &MetricConfig) -> Result<MetricReport> {
    cfg.validate()?;
    let counts = ConfusionAccumulator::from_csv(confusion_csv)?;
    let p = counts.normalize().matrix().clone();
    let s = effective_distance(&p);
    let metric = build_metric(&s, cfg)?;
    let distances = distance_report(&metric);
    Ok(MetricReport {
        counts,
        p,
        s,
        metric,
        distances,
        cfg: *cfg,
    })
}

impl MetricReport {
    /// Three largest and three smallest cross-class distances.
    pub fn extremes_text(&self) -> String {
        let pairs = self.distances.sorted_pairs();
        let mut out = String::new();
        let _ = writeln!(out, "largest cross-class distances:");
        for (a, b, d) in pairs.iter().rev().take(3) {
            let _ = writeln!(out, "  {a}-{b}: {d:.6}");
        }
        let _ = writeln!(out, "smallest cross-class distances:");
        for (a, b, d) in pairs.iter().take(3) {
            let _ = writeln!(out, "  {a}-{b}: {d:.6}");
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("P.csv"), self.p.to_csv())?;
        std::fs::write(dir.join("S.csv"), self.s.to_csv())?;
        std::fs::write(dir.join("metric.csv"), self.metric.to_csv())?;
        let mut prov = BTreeMap::new();
        prov.insert("source".to_string(), "confusion matrix".to_string());
        prov.insert("scale".to_string(), format!("{:?}", self.cfg.scale));
        if let Some(cap) = self.cfg.clamp_max {
            prov.insert("clamp_max".to_string(), format!("{cap:?}"));
        }
        prov.insert(
            "min_eigenvalue".to_string(),
            format!("{:?}", self.metric.min_eigenvalue()),
        );
        std::fs::write(dir.join("metric.json"), self.metric.to_json(prov))?;
        std::fs::write(dir.join("distances.csv"), self.distances.to_csv())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::HarnessError;

    #[test]
    fn identity_counts_give_distance_two() {
        let r = metric_report("5,0,0\n0,5,0\n0,0,5\n", &MetricConfig::default()).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let expected = if a == b { 0.0 } else { 2.0 };
                assert_eq!(r.distances.get(a, b), expected);
            }
        }
    }

    #[test]
    fn two_class_chain() {
        let r = metric_report("8,2\n4,6\n", &MetricConfig::default()).unwrap();
        assert!((r.p[(0, 0)] - 8.0 / 12.0).abs() < 1e-15);
        assert!((r.p[(0, 1)] - 2.0 / 8.0).abs() < 1e-15);
        assert!((r.p[(1, 0)] - 4.0 / 12.0).abs() < 1e-15);
        assert!((r.p[(1, 1)] - 6.0 / 8.0).abs() < 1e-15);
        let s01 = 1.0 - 0.5 * (0.25 + 1.0 / 3.0);
        assert!((r.s[(0, 1)] - s01).abs() < 1e-15);
        assert!((r.s[(0, 1)] - 0.708333).abs() < 1e-6);
        assert!((r.metric.get(0, 1) - s01).abs() < 1e-15);
        assert!((r.distances.get(0, 1) - (2.0 * (1.0 + s01)).sqrt()).abs() < 1e-15);
        assert!((r.distances.get(0, 1) - 1.848).abs() < 1e-3);
        assert!(r.extremes_text().contains("0-1: 1.848"));
    }

    #[test]
    fn malformed_input_is_a_validation_error() {
        let err = metric_report("1,2\n3,4\n5,6\n", &MetricConfig::default()).unwrap_err();
        assert!(matches!(err, HarnessError::Validation(_)));
        let err = metric_report("1,-2\n3,4\n", &MetricConfig::default()).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }
}
