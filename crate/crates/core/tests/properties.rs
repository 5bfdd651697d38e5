mod common;

use std::collections::BTreeSet;

use classprobe::bias::{avg_bias, bias_triplet, detect_bias_from_deltas, BiasConfig, DeltaFilter};
use classprobe::confusion::{detect_errors, napvd, pairwise_napvd};
use classprobe::coverage::{coincidence_table, deepgauge_metrics, DeepGaugeConfig, NeuronBounds};
use classprobe::evaluator::{cost_effectiveness, optimal_curve, precision_recall};
use classprobe::ground_truth::{avg_cd_table, ConfusionCounts, ErrKind};
use classprobe::pairs::{all_pairs, ClassPair, Direction, PairScoreTable};
use classprobe::profiler::{activation_probability_matrix, ActivationThreshold};
use classprobe::stats::{cohens_d, kruskal_wallis, spearman};
use classprobe::trace::{group_images_by_class, load_bundle, write_bundle, Grouping, TaskKind};
use classprobe::{ActivationProbabilityMatrix, DetectionPolicy};
use common::{random_bundle, task_for, SMALL};
use proptest::prelude::*;

fn rho(b: &classprobe::TraceBundle, th: f64) -> Option<ActivationProbabilityMatrix> {
    let g = group_images_by_class(b, Grouping::ByPredicted).ok()?;
    activation_probability_matrix(b, &g, ActivationThreshold::new(th).unwrap()).ok()
}

fn table_strategy(min_m: usize) -> impl Strategy<Value = PairScoreTable> {
    (min_m..=9usize).prop_flat_map(|m| {
        prop::collection::vec(prop::option::weighted(0.9, 0.0f64..10.0), m * (m - 1) / 2).prop_map(
            move |vals| {
                let mut t = PairScoreTable::new(m);
                for (p, v) in all_pairs(m).zip(vals) {
                    t.set_pair(p, v);
                }
                t
            },
        )
    })
}

fn rho_strategy() -> impl Strategy<Value = ActivationProbabilityMatrix> {
    (1..=6usize, 3..=7usize).prop_flat_map(|(n, m)| {
        prop::collection::vec(prop::option::weighted(0.85, prop::collection::vec(0.0f64..=1.0, n)), m)
            .prop_map(move |cols| ActivationProbabilityMatrix::from_columns(cols, n))
            .prop_filter("at least one defined column", |r| r.is_ok())
            .prop_map(|r| r.unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn rho_entries_are_probabilities_and_fall_with_threshold(seed in any::<u64>()) {
        let b = random_bundle(seed, &SMALL, task_for(seed));
        let mut prev: Option<ActivationProbabilityMatrix> = None;
        for th in [-0.1, 0.25, 0.4, 0.5, 0.6, 0.75, 0.9, 1.1] {
            let Some(r) = rho(&b, th) else { return Ok(()) };
            for j in 0..r.n_neurons() {
                for c in 0..r.n_classes() {
                    if let Some(v) = r.get(j, c) {
                        prop_assert!((0.0..=1.0).contains(&v));
                        if let Some(p) = &prev {
                            prop_assert!(v <= p.get(j, c).unwrap());
                        }
                    }
                }
            }
            prev = Some(r);
        }
    }

    #[test]
    fn napvd_is_a_metric(r in rho_strategy()) {
        let d = r.defined_classes();
        for &a in &d {
            prop_assert_eq!(napvd(&r, a, a).unwrap(), 0.0);
            for &b in &d {
                let ab = napvd(&r, a, b).unwrap();
                prop_assert!(ab >= 0.0);
                prop_assert_eq!(ab, napvd(&r, b, a).unwrap());
                for &c in &d {
                    let via = napvd(&r, a, c).unwrap() + napvd(&r, c, b).unwrap();
                    prop_assert!(ab <= via + 1e-12);
                }
            }
        }
    }

    #[test]
    fn detection_ignores_class_relabeling(t in table_strategy(2), shift in 1usize..8) {
        // Relabel classes by a rotation; the std-cut flagged set must map along.
        let m = t.n_classes();
        let perm = |c: usize| (c + shift) % m;
        let mut moved = PairScoreTable::new(m);
        for (p, v) in t.iter() {
            moved.set_pair(ClassPair::new(perm(p.a), perm(p.b)).unwrap(), v);
        }
        for policy in [DetectionPolicy::mean_minus_std(), DetectionPolicy::mean_plus_std()] {
            let (Ok(x), Ok(y)) = (detect_errors(&t, policy), detect_errors(&moved, policy)) else {
                prop_assert_eq!(t.defined_count(), 0);
                continue;
            };
            let mapped: BTreeSet<ClassPair> = x
                .flagged()
                .into_iter()
                .map(|p| ClassPair::new(perm(p.a), perm(p.b)).unwrap())
                .collect();
            prop_assert_eq!(mapped, y.flagged().into_iter().collect::<BTreeSet<_>>());
        }
    }

    #[test]
    fn detection_ignores_insertion_order(t in table_strategy(2), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut entries: Vec<_> = t.iter().collect();
        entries.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let mut rebuilt = PairScoreTable::new(t.n_classes());
        for (p, v) in entries {
            rebuilt.set_pair(p, v);
        }
        let a = detect_errors(&t, DetectionPolicy::std_cut(Direction::LowIsError)).ok();
        let b = detect_errors(&rebuilt, DetectionPolicy::std_cut(Direction::LowIsError)).ok();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn full_fraction_flags_everything(t in table_strategy(2)) {
        for dir in [Direction::LowIsError, Direction::HighIsError] {
            let policy = DetectionPolicy::top_fraction(1.0, dir).unwrap();
            match detect_errors(&t, policy) {
                Ok(d) => {
                    let flagged: BTreeSet<_> = d.flagged().into_iter().collect();
                    prop_assert_eq!(flagged, t.defined_pairs().into_iter().collect::<BTreeSet<_>>());
                }
                Err(_) => prop_assert_eq!(t.defined_count(), 0),
            }
        }
    }

    #[test]
    fn bias_is_symmetric_bounded_and_scale_free(t in table_strategy(3), k in 0.01f64..100.0) {
        let m = t.n_classes();
        let scaled = t.map(|v| v * k);
        for a in 0..m {
            for b in 0..m {
                if a == b { continue; }
                for c in (0..m).filter(|&c| c != a && c != b) {
                    let x = bias_triplet(&t, a, b, c).ok();
                    prop_assert_eq!(x, bias_triplet(&t, b, a, c).ok());
                    if let Some(v) = x {
                        prop_assert!((0.0..=1.0).contains(&v));
                        let s = bias_triplet(&scaled, a, b, c).unwrap();
                        prop_assert!((s - v).abs() <= 1e-12);
                    }
                }
                for f in [DeltaFilter::None, DeltaFilter::MeanPlusStd] {
                    let ab = avg_bias(&t, a, b, f).ok();
                    let ba = avg_bias(&t, b, a, f).ok();
                    prop_assert_eq!(ab, ba);
                    if let Some(r) = ab {
                        prop_assert!((0.0..=1.0).contains(&r.value));
                    }
                }
            }
        }
        let x = detect_bias_from_deltas(&t, BiasConfig::default()).ok().map(|d| d.detection.flagged());
        let y = detect_bias_from_deltas(&scaled, BiasConfig::default()).ok().map(|d| d.detection.flagged());
        prop_assert_eq!(x, y);
    }

    #[test]
    fn ground_truth_scores_are_symmetric_probabilities(seed in any::<u64>()) {
        let b = random_bundle(seed, &SMALL, task_for(seed));
        let Ok(counts) = ConfusionCounts::from_bundle(&b, ErrKind::for_task(b.task_kind())) else {
            prop_assert!(!b.has_true_labels());
            return Ok(());
        };
        let m = b.n_classes();
        for x in 0..m {
            for y in (0..m).filter(|&y| y != x) {
                let v = counts.conf(x, y).ok();
                prop_assert_eq!(v, counts.conf(y, x).ok());
                if let Some(v) = v {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
        }
        for (_, v) in avg_cd_table(&counts.conf_table()).iter_defined() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn optimal_dominates_and_curves_rise(m in 2usize..9, seed in any::<u64>(), truth_bits in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut ranked: Vec<ClassPair> = all_pairs(m).collect();
        ranked.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let mut truth: BTreeSet<ClassPair> = ranked
            .iter()
            .enumerate()
            .filter(|(i, _)| truth_bits >> (i % 64) & 1 == 1)
            .map(|(_, p)| *p)
            .collect();
        if truth.is_empty() {
            truth.insert(ranked[0]);
        }
        let curve = cost_effectiveness(&ranked, &truth).unwrap();
        let best = optimal_curve(&ranked, &truth).unwrap();
        prop_assert!(curve.aucec >= 0.0 && curve.aucec <= 1.0);
        prop_assert!(best.aucec >= curve.aucec);
        for c in [&curve, &best] {
            prop_assert_eq!(c.points[0], (0.0, 0.0));
            prop_assert_eq!(*c.points.last().unwrap(), (1.0, 1.0));
            prop_assert!(c.points.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 <= w[1].1));
        }
        let k = (seed % (ranked.len() as u64 + 1)) as usize;
        let pr = precision_recall(&ranked[..k], &truth).unwrap();
        prop_assert_eq!(pr.tp + pr.fn_, truth.len());
        prop_assert_eq!(pr.tp + pr.fp, k);
        prop_assert!((0.0..=1.0).contains(&pr.recall));
        if let Some(p) = pr.precision {
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn bundle_round_trips(seed in any::<u64>()) {
        let b = random_bundle(seed, &SMALL, task_for(seed));
        let dir = tempfile::tempdir().unwrap();
        write_bundle(&b, dir.path()).unwrap();
        let back = load_bundle(dir.path()).unwrap();
        let again = load_bundle(dir.path()).unwrap();
        prop_assert_eq!(&back, &b);
        prop_assert_eq!(&back, &again);
        let raw = |x: &classprobe::TraceBundle| x.activations().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(raw(&back), raw(&b));
    }

    #[test]
    fn group_sizes_sum_to_label_count(seed in any::<u64>()) {
        let b = random_bundle(seed, &SMALL, task_for(seed));
        let g = group_images_by_class(&b, Grouping::ByPredicted).unwrap();
        let total: usize = b.images().iter().map(|im| im.predicted_labels.len()).sum();
        prop_assert_eq!(g.sizes().iter().sum::<usize>(), total);
        if b.has_true_labels() {
            let g = group_images_by_class(&b, Grouping::ByTrue).unwrap();
            let total: usize = b.images().iter().map(|im| im.true_labels.len()).sum();
            prop_assert_eq!(g.sizes().iter().sum::<usize>(), total);
        }
    }

    #[test]
    fn coincidence_is_symmetric_probability(seed in any::<u64>()) {
        let b = random_bundle(seed, &SMALL, TaskKind::MultiLabel);
        let Ok(t) = coincidence_table(&b) else {
            prop_assert!(!b.has_true_labels());
            return Ok(());
        };
        for (p, v) in t.iter_defined() {
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(Some(v), classprobe::coverage::coincidence(&b, p.b, p.a).ok());
        }
    }

    #[test]
    fn deepgauge_ratios_and_monotone_growth(seed in any::<u64>(), k in 1usize..12, top in 1usize..3) {
        let b = random_bundle(seed, &SMALL, task_for(seed));
        let acts = b.activations();
        let low: Vec<f32> = acts.columns().into_iter().map(|c| c.iter().copied().fold(f32::INFINITY, f32::min) + 0.05).collect();
        let high: Vec<f32> = acts.columns().into_iter().map(|c| c.iter().copied().fold(f32::NEG_INFINITY, f32::max) - 0.05).collect();
        let (low, high): (Vec<f32>, Vec<f32>) = low.iter().zip(&high).map(|(&l, &h)| (l.min(h), l.max(h))).unzip();
        let bounds = NeuronBounds::new(low, high).unwrap();
        let cfg = DeepGaugeConfig { k_sections: k, k_top: top };
        let mut prev = 0.0;
        for n in 1..=b.n_images() {
            let rows: Vec<usize> = (0..n).collect();
            let g = deepgauge_metrics(&b, &rows, &bounds, cfg).unwrap();
            for v in [g.kmultisection, g.boundary, g.strong_activation, g.topk_neuron_coverage] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert!(g.topk_patterns <= n);
            prop_assert!(g.kmultisection >= prev);
            prev = g.kmultisection;
        }
    }

    #[test]
    fn rank_statistics_ignore_monotone_transforms(
        xs in prop::collection::vec(-50.0f64..50.0, 3..30),
        ys in prop::collection::vec(-50.0f64..50.0, 3..30),
    ) {
        let n = xs.len().min(ys.len());
        let (xs, ys) = (&xs[..n], &ys[..n]);
        let f = |v: &f64| (v / 10.0).exp() * 3.0 + 1.0;
        let tx: Vec<f64> = xs.iter().map(f).collect();
        let ty: Vec<f64> = ys.iter().map(|v| -v.powi(3)).collect();
        match (spearman(xs, ys), spearman(&tx, ys)) {
            (Ok(a), Ok(b)) => {
                prop_assert!((a - b).abs() < 1e-12);
                prop_assert!((spearman(xs, &ty).unwrap() + a).abs() < 1e-12);
            }
            (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
        }

        let (d1, _) = cohens_d(xs, ys).unwrap();
        let (d2, _) = cohens_d(ys, xs).unwrap();
        prop_assert!((d1 + d2).abs() < 1e-12);

        let groups = vec![xs.to_vec(), ys.to_vec(), xs[..n / 2 + 1].iter().map(|v| v + 5.0).collect()];
        let moved: Vec<Vec<f64>> = groups.iter().map(|g| g.iter().map(f).collect()).collect();
        let a = kruskal_wallis(&groups).unwrap();
        let b = kruskal_wallis(&moved).unwrap();
        prop_assert!((a.h - b.h).abs() <= 1e-9 * a.h.max(1.0));
        prop_assert_eq!(a.significant, b.significant);
    }
}

#[test]
fn near_identical_profiles_rank_first() {
    // Orthogonal one-hot class profiles except for the pair (2, 4), which almost coincide.
    let m = 6;
    let n = 12;
    let cols = (0..m)
        .map(|c| {
            let mut col = vec![0.0; n];
            let own = if c == 4 { 2 } else { c };
            col[2 * own] = 1.0;
            col[2 * own + 1] = if c == 4 { 0.9 } else { 1.0 };
            Some(col)
        })
        .collect();
    let r = ActivationProbabilityMatrix::from_columns(cols, n).unwrap();
    let det = detect_errors(&pairwise_napvd(&r).unwrap(), DetectionPolicy::mean_minus_std()).unwrap();
    assert_eq!(det.ranking[0].pair, ClassPair::new(2, 4).unwrap());
    assert_eq!(det.flagged(), vec![ClassPair::new(2, 4).unwrap()]);
}
