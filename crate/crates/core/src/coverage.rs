//! Comparison metrics: label coincidence, per-class neuron coverage and the
//! DeepGauge multi-granular coverage criteria.

use std::collections::HashSet;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::pairs::{all_pairs, PairScoreTable};
use crate::profiler::ActivationThreshold;
use crate::trace::{ClassGroups, TaskKind, TraceBundle};

fn require_labeled_multi(bundle: &TraceBundle) -> Result<()> {
    if bundle.task_kind() != TaskKind::MultiLabel {
        return Err(Error::WrongTaskKind {
            expected: TaskKind::MultiLabel,
        });
    }
    if !bundle.has_true_labels() {
        return Err(Error::NoLabels);
    }
    Ok(())
}

/// Per-class true-label counts and pairwise co-occurrence counts.
fn cooccurrence(bundle: &TraceBundle) -> (Vec<u64>, Vec<u64>) {
    let m = bundle.n_classes();
    let mut single = vec![0u64; m];
    let mut joint = vec![0u64; m * m];
    for img in bundle.images() {
        for &a in &img.true_labels {
            single[a] += 1;
            for &b in &img.true_labels {
                joint[a * m + b] += 1;
            }
        }
    }
    (single, joint)
}

fn coincidence_from_counts(single: &[u64], joint: &[u64], m: usize, a: usize, b: usize) -> Result<f64> {
    if single[a] == 0 {
        return Err(Error::UndefinedClass(a));
    }
    if single[b] == 0 {
        return Err(Error::UndefinedClass(b));
    }
    let ab = joint[a * m + b] as f64;
    Ok((ab / single[a] as f64 + ab / single[b] as f64) / 2.0)
}

/// mean(P(a, b | a), P(a, b | b)) over the true label sets.
pub fn coincidence(bundle: &TraceBundle, a: usize, b: usize) -> Result<f64> {
    require_labeled_multi(bundle)?;
    if a == b {
        return Err(Error::InvalidArgument(format!("self-pair ({a}, {a})")));
    }
    let (single, joint) = cooccurrence(bundle);
    coincidence_from_counts(&single, &joint, bundle.n_classes(), a, b)
}

pub fn coincidence_table(bundle: &TraceBundle) -> Result<PairScoreTable> {
    require_labeled_multi(bundle)?;
    let m = bundle.n_classes();
    let (single, joint) = cooccurrence(bundle);
    let mut t = PairScoreTable::new(m);
    for p in all_pairs(m) {
        t.set_pair(p, coincidence_from_counts(&single, &joint, m, p.a, p.b).ok());
    }
    Ok(t)
}

/// Fraction of neurons activated by at least one member image; `None` for empty classes.
pub fn neuron_coverage_per_class(
    bundle: &TraceBundle,
    groups: &ClassGroups,
    th: ActivationThreshold,
) -> Vec<Option<f64>> {
    let n = bundle.n_neurons();
    let acts = bundle.activations();
    (0..groups.n_classes())
        .into_par_iter()
        .map(|c| {
            let members = groups.members(c);
            if members.is_empty() || n == 0 {
                return None;
            }
            let mut hit = vec![false; n];
            for &row in members {
                for (h, &v) in hit.iter_mut().zip(acts.row(row)) {
                    *h |= th.is_active(v);
                }
            }
            Some(hit.iter().filter(|&&h| h).count() as f64 / n as f64)
        })
        .collect()
}

/// Per-class lists of per-image coverage (fraction of neurons each member image activates).
pub fn per_image_coverage(
    bundle: &TraceBundle,
    groups: &ClassGroups,
    th: ActivationThreshold,
) -> Vec<Vec<f64>> {
    let n = bundle.n_neurons().max(1) as f64;
    let acts = bundle.activations();
    groups
        .iter()
        .map(|(_, members)| {
            members
                .iter()
                .map(|&row| acts.row(row).iter().filter(|&&v| th.is_active(v)).count() as f64 / n)
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeuronBounds {
    pub low: Vec<f32>,
    pub high: Vec<f32>,
}

impl NeuronBounds {
    pub fn new(low: Vec<f32>, high: Vec<f32>) -> Result<Self> {
        if low.len() != high.len() {
            return Err(Error::InvalidArgument("bound vectors differ in length".into()));
        }
        if low.iter().zip(&high).any(|(l, h)| l.partial_cmp(h).is_none_or(|o| o.is_gt())) {
            return Err(Error::InvalidArgument("every low bound must not exceed its high bound".into()));
        }
        Ok(NeuronBounds { low, high })
    }

    pub fn n_neurons(&self) -> usize {
        self.low.len()
    }
}

/// Per-class min/max of every neuron over the reference bundle's member images.
pub fn profile_bounds(reference: &TraceBundle, groups: &ClassGroups) -> Vec<Option<NeuronBounds>> {
    let acts = reference.activations();
    let n = reference.n_neurons();
    groups
        .iter()
        .map(|(_, members)| {
            if members.is_empty() {
                return None;
            }
            let mut low = vec![f32::INFINITY; n];
            let mut high = vec![f32::NEG_INFINITY; n];
            for &row in members {
                for (j, &v) in acts.row(row).iter().enumerate() {
                    low[j] = low[j].min(v);
                    high[j] = high[j].max(v);
                }
            }
            Some(NeuronBounds { low, high })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DeepGaugeConfig {
    pub k_sections: usize,
    pub k_top: usize,
}

impl Default for DeepGaugeConfig {
    fn default() -> Self {
        DeepGaugeConfig {
            k_sections: 100,
            k_top: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeepGaugeMetrics {
    pub kmultisection: f64,
    pub boundary: f64,
    pub strong_activation: f64,
    pub topk_neuron_coverage: f64,
    pub topk_patterns: usize,
}

/// Section of `[low, high]` that `v` falls in, if any. Sections are half-open
/// except the last, which includes `high`.
fn section_of(v: f32, low: f32, high: f32, k: usize) -> Option<usize> {
    if v < low || v > high {
        return None;
    }
    if low == high {
        return Some(0);
    }
    let pos = (f64::from(v) - f64::from(low)) / (f64::from(high) - f64::from(low)) * k as f64;
    Some((pos.floor() as usize).min(k - 1))
}

/// Contiguous neuron index ranges per layer.
fn layer_ranges(layers: &[usize]) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for j in 1..=layers.len() {
        if j == layers.len() || layers[j] != layers[start] {
            out.push(start..j);
            start = j;
        }
    }
    out
}

/// Top `k` neuron indices within `range` for one activation row; ties favor the lower index.
fn top_k_in(row: &[f32], range: std::ops::Range<usize>, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = range.collect();
    idx.sort_by(|&x, &y| row[y].total_cmp(&row[x]).then(x.cmp(&y)));
    idx.truncate(k);
    idx
}

/// DeepGauge criteria for the test images `rows` against `bounds`.
pub fn deepgauge_metrics(
    test: &TraceBundle,
    rows: &[usize],
    bounds: &NeuronBounds,
    cfg: DeepGaugeConfig,
) -> Result<DeepGaugeMetrics> {
    let n = test.n_neurons();
    if bounds.n_neurons() != n {
        return Err(Error::InvalidArgument(format!(
            "bounds cover {} neurons, test bundle has {n}",
            bounds.n_neurons()
        )));
    }
    if cfg.k_sections == 0 || cfg.k_top == 0 {
        return Err(Error::InvalidArgument("k_sections and k_top must be positive".into()));
    }
    if rows.is_empty() {
        return Err(Error::NoData("no test images for this class".into()));
    }
    if n == 0 {
        return Err(Error::NoData("bundle has no neurons".into()));
    }
    let k = cfg.k_sections;
    let acts = test.activations();

    let mut sections = vec![false; n * k];
    let mut below = vec![false; n];
    let mut above = vec![false; n];
    let mut top_hit = vec![false; n];
    let mut patterns: HashSet<Vec<usize>> = HashSet::new();
    let ranges = layer_ranges(&test.layers());

    for &r in rows {
        let row = acts.row(r);
        let row = row.as_slice().expect("standard layout");
        for j in 0..n {
            let (lo, hi, v) = (bounds.low[j], bounds.high[j], row[j]);
            below[j] |= v < lo;
            above[j] |= v > hi;
            if let Some(s) = section_of(v, lo, hi, k) {
                sections[j * k + s] = true;
            }
        }
        let mut pattern = Vec::new();
        for range in &ranges {
            let top = top_k_in(row, range.clone(), cfg.k_top);
            for &j in &top {
                top_hit[j] = true;
            }
            pattern.extend(top);
            pattern.push(usize::MAX);
        }
        patterns.insert(pattern);
    }

    let count = |v: &[bool]| v.iter().filter(|&&b| b).count();
    Ok(DeepGaugeMetrics {
        kmultisection: count(&sections) as f64 / (k * n) as f64,
        boundary: (count(&below) + count(&above)) as f64 / (2 * n) as f64,
        strong_activation: count(&above) as f64 / n as f64,
        topk_neuron_coverage: count(&top_hit) as f64 / n as f64,
        topk_patterns: patterns.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassCoverage {
    pub class: usize,
    pub nc: Option<f64>,
    pub deepgauge: Option<DeepGaugeMetrics>,
}

/// Neuron coverage and DeepGauge metrics for every class of `test`.
pub fn class_coverage_report(
    test: &TraceBundle,
    test_groups: &ClassGroups,
    bounds: &[Option<NeuronBounds>],
    th: ActivationThreshold,
    cfg: DeepGaugeConfig,
) -> Vec<ClassCoverage> {
    let nc = neuron_coverage_per_class(test, test_groups, th);
    (0..test_groups.n_classes())
        .into_par_iter()
        .map(|c| ClassCoverage {
            class: c,
            nc: nc[c],
            deepgauge: bounds
                .get(c)
                .and_then(Option::as_ref)
                .and_then(|b| deepgauge_metrics(test, test_groups.members(c), b, cfg).ok()),
        })
        .collect()
}

/// Like [`deepgauge_metrics`] for one class, reporting missing bounds as an error.
pub fn deepgauge_for_class(
    test: &TraceBundle,
    test_groups: &ClassGroups,
    bounds: &[Option<NeuronBounds>],
    class: usize,
    cfg: DeepGaugeConfig,
) -> Result<DeepGaugeMetrics> {
    let b = bounds
        .get(class)
        .and_then(Option::as_ref)
        .ok_or(Error::NoBounds(class))?;
    deepgauge_metrics(test, test_groups.members(class), b, cfg)
}

/// CSV `class,nc,kmultisection,boundary,strong,topk_nc,topk_patterns`; undefined cells are empty.
pub fn write_coverage_csv<W: Write>(rows: &[ClassCoverage], names: &[&str], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::InvalidArgument(e.to_string());
    w.write_record([
        "class",
        "nc",
        "kmultisection",
        "boundary",
        "strong",
        "topk_nc",
        "topk_patterns",
    ])
    .map_err(err)?;
    let f = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:.9}"));
    for r in rows {
        let d = r.deepgauge;
        w.write_record([
            names[r.class].to_string(),
            f(r.nc),
            f(d.map(|d| d.kmultisection)),
            f(d.map(|d| d.boundary)),
            f(d.map(|d| d.strong_activation)),
            f(d.map(|d| d.topk_neuron_coverage)),
            d.map_or_else(String::new, |d| d.topk_patterns.to_string()),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::InvalidArgument(e.to_string()))
}
