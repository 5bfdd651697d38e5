//! Scoring detections against ground truth: precision/recall, cost-effectiveness, baselines.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::pairs::{all_pairs, ClassPair, Detection, PairScoreTable};
use crate::trace::TraceBundle;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrecisionRecall {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// `None` when nothing was detected.
    pub precision: Option<f64>,
    pub recall: f64,
}

pub fn precision_recall(detected: &[ClassPair], truth: &BTreeSet<ClassPair>) -> Result<PrecisionRecall> {
    if truth.is_empty() {
        return Err(Error::NoTruth);
    }
    let detected: BTreeSet<ClassPair> = detected.iter().copied().collect();
    let tp = detected.intersection(truth).count();
    let fp = detected.len() - tp;
    Ok(PrecisionRecall {
        tp,
        fp,
        fn_: truth.len() - tp,
        precision: (!detected.is_empty()).then(|| tp as f64 / detected.len() as f64),
        recall: tp as f64 / truth.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostEffectivenessCurve {
    /// `(k / P, hits_k / |truth|)` for k = 0..=P.
    pub points: Vec<(f64, f64)>,
    pub aucec: f64,
}

impl CostEffectivenessCurve {
    /// Effectiveness after inspecting the first `k` ranked pairs.
    pub fn at(&self, k: usize) -> f64 {
        self.points[k].1
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::InvalidArgument(e.to_string());
        w.write_record(["cost", "effectiveness"]).map_err(err)?;
        for (c, e) in &self.points {
            w.write_record([format!("{c:.9}"), format!("{e:.9}")])
                .map_err(err)?;
        }
        w.flush().map_err(|e| Error::InvalidArgument(e.to_string()))
    }
}

/// Curve over every prefix of `ranked`; the area is the trapezoid rule over those points.
pub fn cost_effectiveness(ranked: &[ClassPair], truth: &BTreeSet<ClassPair>) -> Result<CostEffectivenessCurve> {
    if truth.is_empty() {
        return Err(Error::NoTruth);
    }
    let set: HashSet<ClassPair> = ranked.iter().copied().collect();
    if set.len() != ranked.len() {
        return Err(Error::InvalidArgument("ranking lists a pair twice".into()));
    }
    if let Some(p) = truth.iter().find(|p| !set.contains(p)) {
        return Err(Error::InvalidArgument(format!(
            "truth pair {p} is missing from the ranking"
        )));
    }
    let p = ranked.len();
    let t = truth.len();
    let mut points = Vec::with_capacity(p + 1);
    points.push((0.0, 0.0));
    let mut hits = 0usize;
    // Twice the area in units of 1/(P*T), kept integral so the result is exact.
    let mut doubled: u128 = 0;
    for (k, pair) in ranked.iter().enumerate() {
        let prev = hits;
        if truth.contains(pair) {
            hits += 1;
        }
        doubled += (prev + hits) as u128;
        points.push(((k + 1) as f64 / p as f64, hits as f64 / t as f64));
    }
    let aucec = doubled as f64 / (2 * p * t) as f64;
    Ok(CostEffectivenessCurve { points, aucec })
}

/// Uniformly shuffled pair order from a ChaCha8 stream seeded with `seed`.
pub fn random_ranking(pairs: &[ClassPair], seed: u64) -> Vec<ClassPair> {
    let mut order = pairs.to_vec();
    order.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    order
}

pub fn baseline_random(
    pairs: &[ClassPair],
    truth: &BTreeSet<ClassPair>,
    seed: u64,
) -> Result<CostEffectivenessCurve> {
    cost_effectiveness(&random_ranking(pairs, seed), truth)
}

/// Mean random-baseline AUCEC over seeds `first_seed..first_seed + n_seeds`.
pub fn mean_random_aucec(
    pairs: &[ClassPair],
    truth: &BTreeSet<ClassPair>,
    first_seed: u64,
    n_seeds: u64,
) -> Result<f64> {
    if n_seeds == 0 {
        return Err(Error::InvalidArgument("at least one seed is required".into()));
    }
    let areas: Vec<f64> = (first_seed..first_seed + n_seeds)
        .into_par_iter()
        .map(|s| baseline_random(pairs, truth, s).map(|c| c.aucec))
        .collect::<Result<_>>()?;
    Ok(areas.iter().sum::<f64>() / n_seeds as f64)
}

/// Truth pairs first, then the rest, each in lexicographic order.
pub fn optimal_ranking(pairs: &[ClassPair], truth: &BTreeSet<ClassPair>) -> Vec<ClassPair> {
    let mut sorted = pairs.to_vec();
    sorted.sort_unstable();
    let (mut hit, miss): (Vec<_>, Vec<_>) = sorted.into_iter().partition(|p| truth.contains(p));
    hit.extend(miss);
    hit
}

pub fn optimal_curve(pairs: &[ClassPair], truth: &BTreeSet<ClassPair>) -> Result<CostEffectivenessCurve> {
    cost_effectiveness(&optimal_ranking(pairs, truth), truth)
}

/// Euclidean distances between per-class last-layer weight rows.
pub fn baseline_weight_vectors(bundle: &TraceBundle) -> Result<PairScoreTable> {
    let w = bundle.weight_vectors().ok_or(Error::NoWeights)?;
    let m = bundle.n_classes();
    let mut t = PairScoreTable::new(m);
    for p in all_pairs(m) {
        let d = w
            .row(p.a)
            .iter()
            .zip(w.row(p.b).iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        t.set_pair(p, Some(d));
    }
    Ok(t)
}

/// Relative gain `(method − baseline) / baseline`; `None` for a zero baseline.
pub fn aucec_gain(method: f64, baseline: f64) -> Option<f64> {
    (baseline > 0.0).then(|| (method - baseline) / baseline)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub tp: usize,
    pub fp: usize,
    pub precision: Option<f64>,
    pub recall: f64,
    pub curve: CostEffectivenessCurve,
    /// `random` (seeded) and `optimal`.
    pub baseline_curves: BTreeMap<String, CostEffectivenessCurve>,
}

/// Scores a ranked detection against `truth`. Only pairs that are both ranked
/// and defined in the truth table take part.
pub fn evaluate_detection(
    detection: &Detection,
    truth: &BTreeSet<ClassPair>,
    seed: u64,
) -> Result<EvaluationReport> {
    let ranked = detection.ranked_pairs();
    let pr = precision_recall(&detection.flagged(), truth)?;
    let curve = cost_effectiveness(&ranked, truth)?;
    let mut baseline_curves = BTreeMap::new();
    baseline_curves.insert("random".to_string(), baseline_random(&ranked, truth, seed)?);
    baseline_curves.insert("optimal".to_string(), optimal_curve(&ranked, truth)?);
    Ok(EvaluationReport {
        tp: pr.tp,
        fp: pr.fp,
        precision: pr.precision,
        recall: pr.recall,
        curve,
        baseline_curves,
    })
}
