//! Shared generators and brute-force oracles. The oracles recount everything
//! straight from the image records and never call the library's math.

#![allow(dead_code, clippy::needless_range_loop)]

use classprobe::trace::{BundleParts, TaskKind, TraceBundle};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Shape {
    pub max_images: usize,
    pub max_neurons: usize,
    pub min_classes: usize,
    pub max_classes: usize,
}

pub const SMALL: Shape = Shape {
    max_images: 8,
    max_neurons: 8,
    min_classes: 2,
    max_classes: 6,
};

fn subset(rng: &mut ChaCha8Rng, m: usize, p: f64) -> Vec<usize> {
    (0..m).filter(|_| rng.random_bool(p)).collect()
}

/// Random valid bundle. Activations sit on a coarse grid so ties with common thresholds occur.
pub fn random_bundle(seed: u64, shape: &Shape, task: TaskKind) -> TraceBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.random_range(shape.min_classes..=shape.max_classes);
    let n = rng.random_range(1..=shape.max_neurons);
    let k = rng.random_range(1..=shape.max_images);
    let grid = [0.0f32, 0.25, 0.4, 0.5, 0.6, 0.75, 1.0];
    let acts = Array2::from_shape_fn((k, n), |_| {
        if rng.random_bool(0.5) {
            grid[rng.random_range(0..grid.len())]
        } else {
            rng.random_range(-0.2f32..1.2)
        }
    });
    let mut layers: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
    layers.sort_unstable();
    let images = (0..k)
        .map(|i| {
            let (pred, truth) = match task {
                TaskKind::SingleLabel => {
                    let p = vec![rng.random_range(0..m)];
                    let t = if rng.random_bool(0.85) {
                        vec![rng.random_range(0..m)]
                    } else {
                        vec![]
                    };
                    (p, t)
                }
                TaskKind::MultiLabel => {
                    let p = subset(&mut rng, m, 0.4);
                    let t = if rng.random_bool(0.85) {
                        subset(&mut rng, m, 0.45)
                    } else {
                        vec![]
                    };
                    (p, t)
                }
            };
            (format!("img{i}"), pred, truth)
        })
        .collect();
    let weights = rng
        .random_bool(0.5)
        .then(|| Array2::from_shape_fn((m, 3), |_| rng.random_range(-1.0..1.0)));
    TraceBundle::new(BundleParts {
        task_kind: task,
        class_names: (0..m).map(|c| format!("c{c}")).collect(),
        layers,
        neuron_labels: None,
        images,
        activations: acts,
        weight_vectors: weights,
        convention: None,
    })
    .expect("generated bundle is valid")
}

pub fn task_for(seed: u64) -> TaskKind {
    if seed.is_multiple_of(2) {
        TaskKind::SingleLabel
    } else {
        TaskKind::MultiLabel
    }
}

/// `|a - b| <= 1e-9 * max(|a|, |b|)`, with an absolute floor of 1e-15 for values at zero.
pub fn close(a: f64, b: f64) -> bool {
    let diff = (a - b).abs();
    diff <= 1e-9 * a.abs().max(b.abs()) || diff <= 1e-15
}

/// rho[j][c] by predicted or true labels; `None` for classes without images.
pub fn rho_oracle(b: &TraceBundle, by_true: bool, th: f64) -> Vec<Vec<Option<f64>>> {
    let m = b.n_classes();
    let n = b.n_neurons();
    let mut out = vec![vec![None; m]; n];
    for c in 0..m {
        let members: Vec<_> = b
            .images()
            .iter()
            .filter(|im| {
                let labels = if by_true { &im.true_labels } else { &im.predicted_labels };
                labels.contains(&c)
            })
            .collect();
        if members.is_empty() {
            continue;
        }
        for j in 0..n {
            let active = members
                .iter()
                .filter(|im| f64::from(b.activations()[[im.activation_row_index, j]]) > th)
                .count();
            out[j][c] = Some(active as f64 / members.len() as f64);
        }
    }
    out
}

pub fn napvd_oracle(rho: &[Vec<Option<f64>>], a: usize, b: usize) -> Option<f64> {
    let mut s = 0.0;
    for row in rho {
        let d = row[a]? - row[b]?;
        s += d * d;
    }
    Some(s.sqrt())
}

/// Full symmetric distance matrix with `None` for undefined entries.
pub fn delta_matrix(rho: &[Vec<Option<f64>>], m: usize) -> Vec<Vec<Option<f64>>> {
    let mut d = vec![vec![None; m]; m];
    for a in 0..m {
        for b in 0..m {
            if a != b {
                d[a][b] = if rho.is_empty() {
                    None
                } else {
                    napvd_oracle(rho, a, b)
                };
            }
        }
    }
    d
}

pub fn bias_oracle(d: &[Vec<Option<f64>>], a: usize, b: usize, c: usize) -> Option<f64> {
    let (ca, cb) = (d[c][a]?, d[c][b]?);
    if ca + cb == 0.0 {
        return None;
    }
    Some((ca - cb).abs() / (ca + cb))
}

/// Mean + population std of upper-triangle defined distances.
pub fn delta_threshold(d: &[Vec<Option<f64>>]) -> Option<f64> {
    let mut v = Vec::new();
    for a in 0..d.len() {
        for b in a + 1..d.len() {
            if let Some(x) = d[a][b] {
                v.push(x);
            }
        }
    }
    if v.is_empty() {
        return None;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64;
    Some(mean + var.sqrt())
}

pub fn avg_bias_oracle(d: &[Vec<Option<f64>>], a: usize, b: usize, th: Option<f64>) -> Option<f64> {
    let mut vals = Vec::new();
    for c in 0..d.len() {
        if c == a || c == b {
            continue;
        }
        let (Some(ca), Some(cb)) = (d[c][a], d[c][b]) else {
            continue;
        };
        if let Some(t) = th {
            if ca > t && cb > t {
                continue;
            }
        }
        if let Some(v) = bias_oracle(d, a, b, c) {
            vals.push(v);
        }
    }
    if vals.is_empty() {
        None
    } else {
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// P(predicted x | truly y) over single-label images.
fn prob_pred_given_true(b: &TraceBundle, x: usize, y: usize) -> Option<f64> {
    let truly_y: Vec<_> = b.images().iter().filter(|im| im.true_labels == [y]).collect();
    if truly_y.is_empty() {
        return None;
    }
    let hits = truly_y.iter().filter(|im| im.predicted_labels == [x]).count();
    Some(hits as f64 / truly_y.len() as f64)
}

pub fn type1_oracle(b: &TraceBundle, x: usize, y: usize) -> Option<f64> {
    Some((prob_pred_given_true(b, x, y)? + prob_pred_given_true(b, y, x)?) / 2.0)
}

/// P(predicted ⊇ {x, y} | truly x and not y).
fn prob_both_given_only(b: &TraceBundle, x: usize, y: usize) -> Option<f64> {
    let cond: Vec<_> = b
        .images()
        .iter()
        .filter(|im| im.true_labels.contains(&x) && !im.true_labels.contains(&y))
        .collect();
    if cond.is_empty() {
        return None;
    }
    let hits = cond
        .iter()
        .filter(|im| im.predicted_labels.contains(&x) && im.predicted_labels.contains(&y))
        .count();
    Some(hits as f64 / cond.len() as f64)
}

pub fn type2_oracle(b: &TraceBundle, x: usize, y: usize) -> Option<f64> {
    match (prob_both_given_only(b, x, y), prob_both_given_only(b, y, x)) {
        (Some(p), Some(q)) => Some((p + q) / 2.0),
        (Some(p), None) | (None, Some(p)) => Some(p),
        (None, None) => None,
    }
}

pub fn conf_oracle(b: &TraceBundle, x: usize, y: usize) -> Option<f64> {
    match b.task_kind() {
        TaskKind::SingleLabel => type1_oracle(b, x, y),
        TaskKind::MultiLabel => type2_oracle(b, x, y),
    }
}

pub fn cd_oracle(b: &TraceBundle, x: usize, y: usize, z: usize) -> Option<f64> {
    Some((conf_oracle(b, x, z)? - conf_oracle(b, y, z)?).abs())
}

pub fn avg_cd_oracle(b: &TraceBundle, x: usize, y: usize) -> Option<f64> {
    let vals: Vec<f64> = (0..b.n_classes())
        .filter(|&z| z != x && z != y)
        .filter_map(|z| cd_oracle(b, x, y, z))
        .collect();
    if vals.is_empty() {
        None
    } else {
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Compares an optional library value to an optional oracle value.
pub fn agree(lib: Option<f64>, oracle: Option<f64>) -> bool {
    match (lib, oracle) {
        (Some(a), Some(b)) => close(a, b),
        (None, None) => true,
        _ => false,
    }
}

/// Every comparison of the oracle-equivalence suite on one bundle; returns the first mismatch.
pub fn check_bundle_against_oracles(b: &TraceBundle) -> Result<usize, String> {
    use classprobe::bias::{avg_bias, bias_triplet, DeltaFilter};
    use classprobe::confusion::pairwise_napvd;
    use classprobe::ground_truth::{avg_cd_from_table, cd_from_table, ConfusionCounts, ErrKind};
    use classprobe::profiler::{activation_probability_matrix, ActivationThreshold};
    use classprobe::trace::{group_images_by_class, Grouping};

    let m = b.n_classes();
    let mut checks = 0;
    let th = 0.5;
    for by_true in [false, true] {
        let grouping = if by_true { Grouping::ByTrue } else { Grouping::ByPredicted };
        let Ok(groups) = group_images_by_class(b, grouping) else {
            if by_true && !b.has_true_labels() {
                continue;
            }
            return Err("grouping failed".into());
        };
        let oracle = rho_oracle(b, by_true, th);
        let rho = match activation_probability_matrix(b, &groups, ActivationThreshold::new(th).unwrap()) {
            Ok(r) => r,
            Err(_) => {
                if groups.sizes().iter().all(|&s| s == 0) {
                    continue;
                }
                return Err("rho failed on non-empty groups".into());
            }
        };
        for j in 0..b.n_neurons() {
            for c in 0..m {
                checks += 1;
                if !agree(rho.get(j, c), oracle[j][c]) {
                    return Err(format!("rho[{j}][{c}]: {:?} vs {:?}", rho.get(j, c), oracle[j][c]));
                }
            }
        }
        let d = delta_matrix(&oracle, m);
        let Ok(table) = pairwise_napvd(&rho) else {
            continue;
        };
        for a in 0..m {
            for bb in a + 1..m {
                checks += 1;
                if !agree(table.get(a, bb), d[a][bb]) {
                    return Err(format!("napvd({a},{bb})"));
                }
            }
        }
        let th_d = delta_threshold(&d);
        for a in 0..m {
            for bb in 0..m {
                if a == bb {
                    continue;
                }
                for c in 0..m {
                    if c == a || c == bb {
                        continue;
                    }
                    checks += 1;
                    if !agree(bias_triplet(&table, a, bb, c).ok(), bias_oracle(&d, a, bb, c)) {
                        return Err(format!("bias({a},{bb},{c})"));
                    }
                }
                checks += 2;
                if !agree(
                    avg_bias(&table, a, bb, DeltaFilter::None).ok().map(|r| r.value),
                    avg_bias_oracle(&d, a, bb, None),
                ) {
                    return Err(format!("avg_bias({a},{bb}) unfiltered"));
                }
                if !agree(
                    avg_bias(&table, a, bb, DeltaFilter::MeanPlusStd).ok().map(|r| r.value),
                    avg_bias_oracle(&d, a, bb, th_d),
                ) {
                    return Err(format!("avg_bias({a},{bb}) filtered"));
                }
            }
        }
    }

    if b.has_true_labels() {
        let kind = ErrKind::for_task(b.task_kind());
        let counts = ConfusionCounts::from_bundle(b, kind).map_err(|e| e.to_string())?;
        let conf = counts.conf_table();
        for x in 0..m {
            for y in 0..m {
                if x == y {
                    continue;
                }
                checks += 2;
                if !agree(counts.conf(x, y).ok(), conf_oracle(b, x, y)) {
                    return Err(format!("conf({x},{y})"));
                }
                if !agree(avg_cd_from_table(&conf, x, y).ok(), avg_cd_oracle(b, x, y)) {
                    return Err(format!("avg_cd({x},{y})"));
                }
                for z in 0..m {
                    if z == x || z == y {
                        continue;
                    }
                    checks += 1;
                    if !agree(cd_from_table(&conf, x, y, z).ok(), cd_oracle(b, x, y, z)) {
                        return Err(format!("cd({x},{y},{z})"));
                    }
                }
            }
        }
    }
    Ok(checks)
}
