//! Seeded synthetic bundles with planted confusion and bias errors.
//!
//! Ten classes own disjoint blocks of six neurons. Three class pairs share most of
//! their block activity (confusion), two "diffuse" classes light every block weakly
//! and two "isolated" classes carry a private block of extra neurons; each diffuse
//! class paired with an isolated class sits very differently relative to the other
//! classes (bias). Predictions are drawn so that misclassification between two
//! classes decays with the distance between their profiles, which gives the labeled
//! log the same structure the activations encode.

use ndarray::Array2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::pairs::ClassPair;
use crate::trace::{BundleParts, TaskKind, TraceBundle};

pub const N_CLASSES: usize = 10;
const BLOCK: usize = 6;
const EXTRA: usize = 60;
const CONFUSED: [(usize, usize); 3] = [(0, 1), (2, 3), (4, 5)];
const DIFFUSE: [usize; 2] = [6, 8];
const ISOLATED: [usize; 2] = [7, 9];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixtureConfig {
    pub images_per_class: usize,
    /// Peak misclassification rate between identical profiles.
    pub max_error_rate: f64,
    /// Error decay length as a fraction of the median profile distance.
    pub decay: f64,
    pub seed: u64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig {
            images_per_class: 50,
            max_error_rate: 0.3,
            decay: 0.7,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedFixture {
    pub bundle: TraceBundle,
    pub confusion_pairs: Vec<ClassPair>,
    pub bias_pairs: Vec<ClassPair>,
    /// `m x n` activation probability of each class profile.
    pub profile: Array2<f64>,
    /// `m x m` symmetric count of images of one class predicted as the other.
    pub error_counts: Array2<usize>,
}

/// Per-class firing probabilities of every neuron.
pub fn planted_profile() -> Array2<f64> {
    let m = N_CLASSES;
    let blocks = m * BLOCK;
    let n = blocks + 2 * EXTRA;
    let mut p = Array2::from_elem((m, n), 0.1);
    for c in 0..m {
        p.slice_mut(ndarray::s![c, c * BLOCK..(c + 1) * BLOCK]).fill(0.9);
    }
    for (a, b) in CONFUSED {
        p.slice_mut(ndarray::s![b, a * BLOCK..(a + 1) * BLOCK]).fill(0.7);
        p.slice_mut(ndarray::s![b, b * BLOCK..(b + 1) * BLOCK]).fill(0.5);
    }
    for c in DIFFUSE {
        p.slice_mut(ndarray::s![c, ..blocks]).fill(0.2);
        p.slice_mut(ndarray::s![c, c * BLOCK..(c + 1) * BLOCK]).fill(0.9);
    }
    for (k, c) in ISOLATED.into_iter().enumerate() {
        let start = blocks + k * EXTRA;
        p.slice_mut(ndarray::s![c, start..start + EXTRA]).fill(0.9);
    }
    p
}

fn profile_distances(p: &Array2<f64>) -> Array2<f64> {
    let m = p.nrows();
    Array2::from_shape_fn((m, m), |(x, y)| {
        p.row(x)
            .iter()
            .zip(p.row(y))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    })
}

fn error_counts(p: &Array2<f64>, cfg: &FixtureConfig) -> Array2<usize> {
    let m = p.nrows();
    let g = profile_distances(p);
    let mut off: Vec<f64> = (0..m)
        .flat_map(|x| (x + 1..m).map(move |y| (x, y)))
        .map(|(x, y)| g[[x, y]])
        .collect();
    off.sort_by(f64::total_cmp);
    let median = if off.len() % 2 == 1 {
        off[off.len() / 2]
    } else {
        (off[off.len() / 2 - 1] + off[off.len() / 2]) / 2.0
    };
    let n = cfg.images_per_class as f64;
    let len = cfg.decay * median;
    Array2::from_shape_fn((m, m), |(x, y)| {
        if x == y {
            0
        } else {
            let z = g[[x, y]] / len;
            (n * cfg.max_error_rate * (-z * z).exp()).round_ties_even() as usize
        }
    })
}

pub fn planted_fixture(cfg: FixtureConfig) -> PlantedFixture {
    let profile = planted_profile();
    let counts = error_counts(&profile, &cfg);
    let m = N_CLASSES;
    let n = profile.ncols();
    let per = cfg.images_per_class;
    assert!(
        (0..m).all(|y| (0..m).map(|x| counts[[x, y]]).sum::<usize>() <= per),
        "error rates exceed the class size"
    );

    // Truth-major image order; the first counts go to the wrong classes in ascending order.
    let mut images = Vec::with_capacity(m * per);
    for t in 0..m {
        let mut preds = Vec::with_capacity(per);
        for x in (0..m).filter(|&x| x != t) {
            preds.extend(std::iter::repeat_n(x, counts[[x, t]]));
        }
        preds.resize(per, t);
        for (k, p) in preds.into_iter().enumerate() {
            images.push((format!("img{:05}", t * per + k), vec![p], vec![t]));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut acts = Array2::<f32>::zeros((images.len(), n));
    for c in 0..m {
        let rows: Vec<usize> = images
            .iter()
            .enumerate()
            .filter(|(_, im)| im.1[0] == c)
            .map(|(i, _)| i)
            .collect();
        for j in 0..n {
            let k = (profile[[c, j]] * rows.len() as f64).round_ties_even() as usize;
            let mut active = vec![false; rows.len()];
            for i in sample(&mut rng, rows.len(), k) {
                active[i] = true;
            }
            for (&r, on) in rows.iter().zip(active) {
                acts[[r, j]] = if on {
                    rng.random_range(0.8f32..=1.0)
                } else {
                    rng.random_range(0.0f32..=0.35)
                };
            }
        }
    }

    let weights = Array2::from_shape_fn((m, n), |(c, j)| {
        profile[[c, j]] + rng.random_range(-0.5..=0.5)
    });

    let bundle = TraceBundle::new(BundleParts {
        task_kind: TaskKind::SingleLabel,
        class_names: (0..m).map(|c| format!("class{c}")).collect(),
        layers: (0..n).map(|j| j * 3 / n).collect(),
        neuron_labels: None,
        images,
        activations: acts,
        weight_vectors: Some(weights),
        convention: Some("synthetic planted-error fixture".into()),
    })
    .expect("fixture is well formed");

    PlantedFixture {
        bundle,
        confusion_pairs: CONFUSED
            .iter()
            .map(|&(a, b)| ClassPair::new(a, b).unwrap())
            .collect(),
        bias_pairs: DIFFUSE
            .iter()
            .zip(ISOLATED)
            .map(|(&a, b)| ClassPair::new(a, b).unwrap())
            .collect(),
        profile,
        error_counts: counts,
    }
}
