use classprobe::confusion::pairwise_napvd;
use classprobe::coverage::coincidence_table;
use classprobe::evaluator::baseline_weight_vectors;
use classprobe::pairs::{all_pairs, ClassPair};
use classprobe::profiler::{activation_probability_matrix, ActivationThreshold};
use classprobe::stats::spearman;
use classprobe::trace::{group_images_by_class, BundleParts, Grouping, TaskKind, TraceBundle};
use classprobe::Error;
use ndarray::{array, Array2};

fn bundle_with_weights(w: Option<Array2<f64>>) -> TraceBundle {
    let m = w.as_ref().map_or(3, |w| w.nrows());
    TraceBundle::new(BundleParts {
        task_kind: TaskKind::SingleLabel,
        class_names: (0..m).map(|c| format!("k{c}")).collect(),
        layers: vec![0],
        neuron_labels: None,
        images: (0..m).map(|c| (format!("i{c}"), vec![c], vec![c])).collect(),
        activations: Array2::zeros((m, 1)),
        weight_vectors: w,
        convention: None,
    })
    .unwrap()
}

#[test]
fn weight_distance_examples() {
    let same = baseline_weight_vectors(&bundle_with_weights(Some(array![[0.3, -1.0], [0.3, -1.0]]))).unwrap();
    assert_eq!(same.get(0, 1), Some(0.0));

    let eye = baseline_weight_vectors(&bundle_with_weights(Some(Array2::eye(3)))).unwrap();
    assert_eq!(eye.defined_count(), 3);
    for p in all_pairs(3) {
        assert!((eye.get_pair(p).unwrap() - 2f64.sqrt()).abs() < 1e-15);
    }

    let t = baseline_weight_vectors(&bundle_with_weights(Some(array![[0.0, 0.0], [3.0, 4.0], [0.0, 1.0]]))).unwrap();
    assert_eq!(t.get(0, 1), Some(5.0));
    assert_eq!(t.get(0, 2), Some(1.0));
    assert!((t.get_pair(ClassPair::new(1, 2).unwrap()).unwrap() - 18f64.sqrt()).abs() < 1e-15);

    assert!(matches!(baseline_weight_vectors(&bundle_with_weights(None)), Err(Error::NoWeights)));
}

/// Six classes with private 4-neuron blocks; an image lights exactly the blocks of its labels.
/// Pair (a, b) co-occurs in a number of images that grows with the pair index.
fn co_occurrence_bundle() -> TraceBundle {
    let m = 6;
    let block = 4;
    let mut labels: Vec<Vec<usize>> = Vec::new();
    for c in 0..m {
        labels.extend(std::iter::repeat_n(vec![c], 30));
    }
    for (k, p) in all_pairs(m).enumerate() {
        labels.extend(std::iter::repeat_n(vec![p.a, p.b], 2 * k));
    }
    let acts = Array2::from_shape_fn((labels.len(), m * block), |(i, j)| {
        if labels[i].contains(&(j / block)) { 0.9 } else { 0.1 }
    });
    TraceBundle::new(BundleParts {
        task_kind: TaskKind::MultiLabel,
        class_names: (0..m).map(|c| format!("k{c}")).collect(),
        layers: vec![0; m * block],
        neuron_labels: None,
        images: labels
            .into_iter()
            .enumerate()
            .map(|(i, l)| (format!("i{i}"), l.clone(), l))
            .collect(),
        activations: acts,
        weight_vectors: None,
        convention: None,
    })
    .unwrap()
}

#[test]
fn frequent_co_occurrence_means_small_napvd() {
    let b = co_occurrence_bundle();
    let coin = coincidence_table(&b).unwrap();
    let g = group_images_by_class(&b, Grouping::ByPredicted).unwrap();
    let rho = activation_probability_matrix(&b, &g, ActivationThreshold::default()).unwrap();
    let napvd = pairwise_napvd(&rho).unwrap();
    let (x, y): (Vec<f64>, Vec<f64>) = coin
        .iter_defined()
        .map(|(p, c)| (c, napvd.get_pair(p).unwrap()))
        .unzip();
    let r = spearman(&x, &y).unwrap();
    assert!(r <= -0.9, "{r}");
    for (_, v) in coin.iter_defined() {
        assert!((0.0..=1.0).contains(&v));
    }
}
