use curved_label::confusion::{build_metric, effective_distance, metric_from_history};
use curved_label::metric::{class_pair_sq_distance, curved_sq_distance, euclidean_sq_distance};
use curved_label::{
    losses, ConfusionAccumulator, EmaState, LossKind, Metric, MetricConfig, Network, OneHotLabel,
    ProbVector, SquareMatrix,
};
use proptest::prelude::*;

fn metric_strategy(max_k: usize) -> impl Strategy<Value = Metric> {
    (2..=max_k).prop_flat_map(|k| {
        prop::collection::vec(0.0f64..3.0, k * (k - 1) / 2).prop_map(move |upper| {
            let mut g = SquareMatrix::identity(k);
            let mut it = upper.into_iter();
            for a in 0..k {
                for b in a + 1..k {
                    let v = it.next().unwrap();
                    g[(a, b)] = v;
                    g[(b, a)] = v;
                }
            }
            Metric::new(g).unwrap()
        })
    })
}

fn prob_strategy(k: usize) -> impl Strategy<Value = ProbVector> {
    prop::collection::vec(0.0f64..1.0, k).prop_filter_map("non-degenerate", |raw| {
        let total: f64 = raw.iter().sum();
        if total < 1e-6 {
            return None;
        }
        ProbVector::new(raw.iter().map(|v| v / total).collect()).ok()
    })
}

/// (metric, label, prediction) with matching class counts.
fn loss_case(max_k: usize) -> impl Strategy<Value = (Metric, OneHotLabel, ProbVector)> {
    metric_strategy(max_k).prop_flat_map(|m| {
        let k = m.k();
        (Just(m), 0..k, prob_strategy(k))
            .prop_map(move |(m, c, p)| (m, OneHotLabel::new(c, k).unwrap(), p))
    })
}

fn counts_strategy(max_k: usize) -> impl Strategy<Value = ConfusionAccumulator> {
    (2..=max_k).prop_flat_map(|k| {
        prop::collection::vec(prop::collection::vec(0u64..50, k), k)
            .prop_map(|rows| ConfusionAccumulator::from_counts(rows).unwrap())
    })
}

proptest! {
    #[test]
    fn flat_metric_reduces_to_euclidean(
        pair in (2usize..12).prop_flat_map(|k| (
            prop::collection::vec(-2.0f64..2.0, k),
            prop::collection::vec(-2.0f64..2.0, k),
        ))
    ) {
        let (y, yhat) = pair;
        let id = Metric::identity(y.len()).unwrap();
        let curved = curved_sq_distance(&id, &y, &yhat).unwrap();
        let flat = euclidean_sq_distance(&y, &yhat).unwrap();
        prop_assert!((curved - flat).abs() <= 1e-12);
    }

    #[test]
    fn one_hot_distance_is_two_one_plus_g(m in metric_strategy(10), a in 0usize..10, b in 0usize..10) {
        let k = m.k();
        let (a, b) = (a % k, b % k);
        let ya = OneHotLabel::new(a, k).unwrap().to_vec();
        let yb = OneHotLabel::new(b, k).unwrap().to_vec();
        let curved = curved_sq_distance(&m, &ya, &yb).unwrap();
        let expected = if a == b { 0.0 } else { 2.0 * (1.0 + m.get(a, b)) };
        prop_assert_eq!(curved, expected);
        prop_assert_eq!(class_pair_sq_distance(&m, a, b).unwrap(), expected);
    }

    #[test]
    fn curved_distance_symmetric_and_non_negative(
        (m, y, p) in loss_case(10),
    ) {
        let y = y.to_vec();
        let d1 = curved_sq_distance(&m, &y, p.as_slice()).unwrap();
        let d2 = curved_sq_distance(&m, p.as_slice(), &y).unwrap();
        prop_assert_eq!(d1, d2);
        prop_assert!(d1 >= 0.0);
    }

    #[test]
    fn smaller_g_means_nearer_class(m in metric_strategy(8), a in 0usize..8, b in 0usize..8, c in 0usize..8) {
        let k = m.k();
        let (a, b, c) = (a % k, b % k, c % k);
        prop_assume!(a != b && a != c);
        if m.get(a, b) < m.get(a, c) {
            prop_assert!(class_pair_sq_distance(&m, a, b).unwrap() < class_pair_sq_distance(&m, a, c).unwrap());
        }
    }

    #[test]
    fn flat_losses_are_special_cases((m, y, p) in loss_case(20)) {
        let id = Metric::identity(m.k()).unwrap();
        let cqe = losses::cqe(&id, y, &p).unwrap();
        let mse = losses::mse(y, &p).unwrap();
        prop_assert!((cqe - mse).abs() <= 1e-12);
        let cce = losses::cce(&id, y, &p).unwrap();
        let ce = losses::crossentropy(y, &p).unwrap();
        prop_assert!((cce - ce).abs() <= 1e-12);
        prop_assert!((mse - euclidean_sq_distance(&y.to_vec(), p.as_slice()).unwrap()).abs() <= 1e-15);
    }

    #[test]
    fn crossentropy_distance_rewrite((_m, y, p) in loss_case(20)) {
        prop_assume!(p.as_slice()[y.class_index()] > 1e-9);
        let norm_sq: f64 = p.as_slice().iter().map(|v| v * v).sum();
        let d2 = euclidean_sq_distance(&y.to_vec(), p.as_slice()).unwrap();
        let rewrite = -(0.5 * (1.0 + norm_sq - d2)).ln();
        let ce = losses::crossentropy(y, &p).unwrap();
        prop_assert!((ce - rewrite).abs() <= 1e-12 * ce.abs().max(1.0), "{} vs {}", ce, rewrite);
    }

    #[test]
    fn cqe_of_confusion_is_class_pair_distance(m in metric_strategy(10), a in 0usize..10, b in 0usize..10) {
        let k = m.k();
        let (a, b) = (a % k, b % k);
        let y = OneHotLabel::new(a, k).unwrap();
        let p = ProbVector::new(OneHotLabel::new(b, k).unwrap().to_vec()).unwrap();
        prop_assert_eq!(losses::cqe(&m, y, &p).unwrap(), class_pair_sq_distance(&m, a, b).unwrap());
    }

    #[test]
    fn cce_never_increases_when_mass_moves_to_larger_g(
        (m, y, p) in loss_case(8),
        from in 0usize..8, to in 0usize..8, frac in 0.0f64..1.0,
    ) {
        let k = m.k();
        let c = y.class_index();
        let (from, to) = (from % k, to % k);
        prop_assume!(from != to && m.get(c, to) > 0.0 && m.get(c, from) <= m.get(c, to));
        let mut q = p.as_slice().to_vec();
        let moved = q[from] * frac;
        q[from] -= moved;
        q[to] += moved;
        let q = ProbVector::new(q).unwrap();
        prop_assert!(losses::cce(&m, y, &q).unwrap() <= losses::cce(&m, y, &p).unwrap() + 1e-12);
    }

    #[test]
    fn cqe_non_negative_and_cce_bounded_below((m, y, p) in loss_case(10)) {
        prop_assert!(losses::cqe(&m, y, &p).unwrap() >= 0.0);
        let max_g = m.matrix().as_slice().iter().copied().fold(0.0, f64::max);
        let floor = -(1.0 + max_g * (m.k() - 1) as f64).ln();
        prop_assert!(losses::cce(&m, y, &p).unwrap() >= floor - 1e-12);
    }

    #[test]
    fn normalized_columns_sum_to_one(acc in counts_strategy(10)) {
        let p = acc.normalize();
        let k = acc.k();
        for b in 0..k {
            let total: u64 = (0..k).map(|a| acc.count(a, b)).sum();
            let sum: f64 = (0..k).map(|a| p.matrix()[(a, b)]).sum();
            if total == 0 {
                prop_assert!((0..k).all(|a| p.matrix()[(a, b)] == 0.0));
            } else {
                prop_assert!((sum - 1.0).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn effective_distance_symmetric_in_unit_range(acc in counts_strategy(10)) {
        let s = effective_distance(acc.normalize().matrix());
        prop_assert_eq!(&s, &s.transpose());
        prop_assert!(s.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn more_confusion_never_increases_distance(
        acc in counts_strategy(6), a in 0usize..6, b in 0usize..6, shift in 1u64..10,
    ) {
        let k = acc.k();
        let (a, b) = (a % k, b % k);
        prop_assume!(a != b);
        // Move mass within column b from the diagonal onto (a, b): the
        // column total stays fixed while the (a, b) confusion grows.
        let mut rows = acc.to_rows();
        let moved = shift.min(rows[b][b]);
        prop_assume!(moved > 0);
        rows[b][b] -= moved;
        rows[a][b] += moved;
        let after = ConfusionAccumulator::from_counts(rows).unwrap();
        let cfg = MetricConfig::default();
        let s0 = effective_distance(acc.normalize().matrix());
        let s1 = effective_distance(after.normalize().matrix());
        prop_assert!(s1[(a, b)] <= s0[(a, b)]);
        let g0 = build_metric(&s0, &cfg).unwrap();
        let g1 = build_metric(&s1, &cfg).unwrap();
        prop_assert!(g1.get(a, b) <= g0.get(a, b));
        prop_assert!(class_pair_sq_distance(&g1, a, b).unwrap() <= class_pair_sq_distance(&g0, a, b).unwrap());
    }

    #[test]
    fn history_always_yields_valid_metric(
        history in prop::collection::vec(counts_strategy(5), 1..6),
        scale in 1e-9f64..5.0, lambda in 0.01f64..=1.0,
    ) {
        let k = history[0].k();
        prop_assume!(history.iter().all(|h| h.k() == k));
        let cfg = MetricConfig { scale, lambda, clamp_max: None };
        let mut ema = EmaState::new(k, lambda).unwrap();
        for acc in &history {
            ema.update(&acc.normalize()).unwrap();
        }
        let m = metric_from_history(&ema, &cfg).unwrap();
        // Re-validating through the strict constructor re-checks every invariant.
        prop_assert!(Metric::new(m.matrix().clone()).is_ok());
    }

    #[test]
    fn softmax_output_is_probability_vector(
        seed in any::<u64>(), x in prop::collection::vec(-50.0f64..50.0, 3),
    ) {
        let net = Network::init(&[3, 7, 4], seed).unwrap();
        let out = net.forward(&x).unwrap();
        let sum: f64 = out.as_slice().iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-9);
        prop_assert!(out.as_slice().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn metric_files_round_trip(m in metric_strategy(8)) {
        prop_assert_eq!(Metric::from_csv(&m.to_csv()).unwrap(), m.clone());
        prop_assert_eq!(Metric::from_json(&m.to_json(Default::default())).unwrap(), m);
    }
}

#[test]
fn loss_kinds_dispatch_to_named_functions() {
    let m = Metric::new(
        SquareMatrix::from_rows(vec![vec![1.0, 0.4], vec![0.4, 1.0]]).unwrap(),
    )
    .unwrap();
    let y = OneHotLabel::new(1, 2).unwrap();
    let p = ProbVector::new(vec![0.25, 0.75]).unwrap();
    assert_eq!(LossKind::Cqe.value(&m, y, &p).unwrap(), losses::cqe(&m, y, &p).unwrap());
    assert_eq!(LossKind::Cce.value(&m, y, &p).unwrap(), losses::cce(&m, y, &p).unwrap());
    assert_eq!(LossKind::Mse.value(&m, y, &p).unwrap(), losses::mse(y, &p).unwrap());
    assert_eq!(LossKind::Ce.value(&m, y, &p).unwrap(), losses::crossentropy(y, &p).unwrap());
}
