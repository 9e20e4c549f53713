//! Confusion → metric pipeline and generator structure against independent
//! oracles.

#![allow(clippy::needless_range_loop)]

use curved_label::confusion::{build_metric, effective_distance};
use curved_label::data::{class_centers, generate, HierarchySpec};
use curved_label::{ConfusionAccumulator, EmaState, Metric, MetricConfig, NormalizedConfusion, SquareMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Eqs. for P, S and g evaluated entry by entry from raw counts.
fn brute_force_metric(counts: &[Vec<u64>], scale: f64) -> Vec<Vec<f64>> {
    let k = counts.len();
    let p = |a: usize, b: usize| -> f64 {
        let classified_as_b: u64 = (0..k).map(|r| counts[r][b]).sum();
        if classified_as_b == 0 {
            0.0
        } else {
            counts[a][b] as f64 / classified_as_b as f64
        }
    };
    (0..k)
        .map(|a| {
            (0..k)
                .map(|b| {
                    if a == b {
                        1.0
                    } else {
                        scale * (1.0 - 0.5 * (p(a, b) + p(b, a)))
                    }
                })
                .collect()
        })
        .collect()
}

#[test]
fn confusion_pipeline_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let k = rng.gen_range(2..=10);
        let counts: Vec<Vec<u64>> = (0..k)
            .map(|_| (0..k).map(|_| if rng.gen_bool(0.2) { 0 } else { rng.gen_range(0..100) }).collect())
            .collect();
        let scale = rng.gen_range(0.1..3.0);
        let cfg = MetricConfig { scale, ..MetricConfig::default() };
        let acc = ConfusionAccumulator::from_counts(counts.clone()).unwrap();
        let s = effective_distance(acc.normalize().matrix());
        assert!(s.is_symmetric());
        let m = build_metric(&s, &cfg).unwrap();
        let oracle = brute_force_metric(&counts, scale);
        for a in 0..k {
            for b in 0..k {
                assert!((m.get(a, b) - oracle[a][b]).abs() <= 1e-12);
            }
        }
        assert!(Metric::new(m.matrix().clone()).is_ok());
    }
}

#[test]
fn ema_recursion_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        let k = rng.gen_range(2..=6);
        let len = rng.gen_range(1..=50);
        let lambda: f64 = rng.gen_range(0.01..=1.0);
        let history: Vec<NormalizedConfusion> = (0..len)
            .map(|_| {
                let rows = (0..k).map(|_| (0..k).map(|_| rng.gen_range(0..20)).collect()).collect();
                ConfusionAccumulator::from_counts(rows).unwrap().normalize()
            })
            .collect();
        let mut ema = EmaState::new(k, lambda).unwrap();
        for (t, p) in history.iter().enumerate() {
            ema.update(p).unwrap();
            // pbar(t) = Σ_s λ(1−λ)^{t−s} P(s)
            let closed = SquareMatrix::from_fn(k, |a, b| {
                (0..=t)
                    .map(|s| lambda * (1.0 - lambda).powi((t - s) as i32) * history[s].matrix()[(a, b)])
                    .sum()
            });
            for (x, y) in ema.pbar().as_slice().iter().zip(closed.as_slice()) {
                assert!((x - y).abs() <= 1e-12, "t={t}: {x} vs {y}");
            }
        }
        assert_eq!(ema.t(), len as u64);
    }
}

fn nearest_center(centers: &[Vec<f64>], x: &[f64]) -> usize {
    let d2 = |c: &Vec<f64>| c.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    let mut best = 0;
    for i in 1..centers.len() {
        if d2(&centers[i]) < d2(&centers[best]) {
            best = i;
        }
    }
    best
}

#[test]
fn nearest_center_confuses_siblings_more_than_cousins() {
    for seed in 0..3 {
        let spec = HierarchySpec {
            n_super: 3,
            per_super: 2,
            d: 6,
            super_sep: 5.0,
            sub_sep: 1.0,
            noise_sigma: 1.0,
            n_per_class: 300,
            seed,
        };
        let ds = generate(&spec).unwrap();
        let centers = class_centers(&spec).unwrap();
        let sup = ds.superclass_of().unwrap();
        let mut acc = ConfusionAccumulator::new(ds.classes());
        for i in 0..ds.len() {
            acc.record(ds.label(i), nearest_center(&centers, ds.example(i))).unwrap();
        }
        let k = ds.classes();
        let (mut within, mut n_within, mut cross, mut n_cross) = (0.0, 0, 0.0, 0);
        for a in 0..k {
            let row_total: u64 = (0..k).map(|b| acc.count(a, b)).sum();
            for b in 0..k {
                if a == b {
                    continue;
                }
                let rate = acc.count(a, b) as f64 / row_total as f64;
                if sup[a] == sup[b] {
                    within += rate;
                    n_within += 1;
                } else {
                    cross += rate;
                    n_cross += 1;
                }
            }
        }
        let (within, cross) = (within / n_within as f64, cross / n_cross as f64);
        assert!(within > cross, "seed {seed}: within {within} cross {cross}");
    }
}
