//! Bias detection: how differently two classes sit relative to every third class.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::confusion::pairwise_napvd;
use crate::error::{Error, Result};
use crate::pairs::{
    all_pairs, rank_pairs, ClassPair, Detection, DetectionPolicy, Direction,
    PairScoreTable,
};
use crate::profiler::ActivationProbabilityMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaFilter {
    None,
    /// Drop a triplet when both of its distances exceed mean + 1 std of all distances.
    MeanPlusStd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BiasConfig {
    delta_filter: DeltaFilter,
    policy: DetectionPolicy,
}

impl BiasConfig {
    pub fn new(delta_filter: DeltaFilter, policy: DetectionPolicy) -> Result<Self> {
        if policy.direction() != Direction::HighIsError {
            return Err(Error::InvalidArgument(
                "bias detection ranks high scores as errors".into(),
            ));
        }
        Ok(BiasConfig {
            delta_filter,
            policy,
        })
    }

    pub fn delta_filter(&self) -> DeltaFilter {
        self.delta_filter
    }

    pub fn policy(&self) -> DetectionPolicy {
        self.policy
    }
}

impl Default for BiasConfig {
    fn default() -> Self {
        BiasConfig {
            delta_filter: DeltaFilter::MeanPlusStd,
            policy: DetectionPolicy::mean_plus_std(),
        }
    }
}

/// `|Δ(c,a) − Δ(c,b)| / (Δ(c,a) + Δ(c,b))`.
pub fn bias_triplet(table: &PairScoreTable, a: usize, b: usize, c: usize) -> Result<f64> {
    if a == b || a == c || b == c {
        return Err(Error::InvalidArgument(format!(
            "triplet ({a}, {b} | {c}) needs three distinct classes"
        )));
    }
    let (Some(ca), Some(cb)) = (table.get(c, a), table.get(c, b)) else {
        return Err(Error::UndefinedTriplet(a, b, c));
    };
    bias_from_distances(ca, cb).ok_or(Error::DegenerateTriplet(a, b, c))
}

fn bias_from_distances(ca: f64, cb: f64) -> Option<f64> {
    let sum = ca + cb;
    (sum > 0.0).then(|| (ca - cb).abs() / sum)
}

/// Mean + 1 population std of all defined distances, or `None` without filtering.
pub fn filter_threshold(table: &PairScoreTable, filter: DeltaFilter) -> Option<f64> {
    match filter {
        DeltaFilter::None => None,
        DeltaFilter::MeanPlusStd => table.mean_std().map(|(m, s)| m + s),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AvgBias {
    pub value: f64,
    pub retained: usize,
    pub filtered: usize,
    pub degenerate: usize,
    /// Third classes skipped because a distance is masked.
    pub undefined: usize,
}

/// Averaged bias over the third classes that survive the filter `th`.
pub fn avg_bias_with_threshold(
    table: &PairScoreTable,
    a: usize,
    b: usize,
    th: Option<f64>,
) -> Result<AvgBias> {
    if a == b {
        return Err(Error::InvalidArgument(format!("self-pair ({a}, {a})")));
    }
    let mut out = AvgBias {
        value: 0.0,
        retained: 0,
        filtered: 0,
        degenerate: 0,
        undefined: 0,
    };
    let mut sum = 0.0;
    for c in (0..table.n_classes()).filter(|&c| c != a && c != b) {
        let (Some(ca), Some(cb)) = (table.get(c, a), table.get(c, b)) else {
            out.undefined += 1;
            continue;
        };
        if th.is_some_and(|th| ca > th && cb > th) {
            out.filtered += 1;
            continue;
        }
        match bias_from_distances(ca, cb) {
            Some(v) => {
                sum += v;
                out.retained += 1;
            }
            None => out.degenerate += 1,
        }
    }
    if out.retained == 0 {
        return Err(Error::NoRetainedTriplets(a.min(b), a.max(b)));
    }
    out.value = sum / out.retained as f64;
    Ok(out)
}

pub fn avg_bias(table: &PairScoreTable, a: usize, b: usize, filter: DeltaFilter) -> Result<AvgBias> {
    avg_bias_with_threshold(table, a, b, filter_threshold(table, filter))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasTable {
    pub scores: PairScoreTable,
    /// Lexicographic pair order; `None` where the pair is masked.
    pub details: Vec<(ClassPair, Option<AvgBias>)>,
    pub filter_threshold: Option<f64>,
}

impl BiasTable {
    pub fn detail(&self, pair: ClassPair) -> Option<AvgBias> {
        self.details
            .iter()
            .find(|(p, _)| *p == pair)
            .and_then(|(_, d)| *d)
    }

    pub fn degenerate_total(&self) -> usize {
        self.details
            .iter()
            .filter_map(|(_, d)| d.map(|d| d.degenerate))
            .sum()
    }
}

pub fn pairwise_avg_bias(deltas: &PairScoreTable, filter: DeltaFilter) -> BiasTable {
    let m = deltas.n_classes();
    let th = filter_threshold(deltas, filter);
    let pairs: Vec<ClassPair> = all_pairs(m).collect();
    let details: Vec<(ClassPair, Option<AvgBias>)> = pairs
        .par_iter()
        .map(|&p| {
            // A pair whose own distance is masked involves an undefined class.
            let d = deltas
                .get_pair(p)
                .and_then(|_| avg_bias_with_threshold(deltas, p.a, p.b, th).ok());
            (p, d)
        })
        .collect();
    let mut scores = PairScoreTable::new(m);
    for (p, d) in &details {
        scores.set_pair(*p, d.map(|d| d.value));
    }
    BiasTable {
        scores,
        details,
        filter_threshold: th,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasDetection {
    pub table: BiasTable,
    pub detection: Detection,
}

/// Bias detection over an arbitrary distance table (activation profiles or weight vectors).
pub fn detect_bias_from_deltas(deltas: &PairScoreTable, cfg: BiasConfig) -> Result<BiasDetection> {
    let mut involved = vec![false; deltas.n_classes()];
    for (p, _) in deltas.iter_defined() {
        involved[p.a] = true;
        involved[p.b] = true;
    }
    let defined = involved.iter().filter(|&&x| x).count();
    if defined < 3 {
        return Err(Error::NoData(format!(
            "{defined} defined classes, bias needs at least 3"
        )));
    }
    let table = pairwise_avg_bias(deltas, cfg.delta_filter);
    let detection = rank_pairs(&table.scores, cfg.policy)?;
    Ok(BiasDetection { table, detection })
}

pub fn detect_bias_errors(rho: &ActivationProbabilityMatrix, cfg: BiasConfig) -> Result<BiasDetection> {
    let defined = rho.defined_classes().len();
    if defined < 3 {
        return Err(Error::NoData(format!(
            "{defined} defined classes, bias needs at least 3"
        )));
    }
    detect_bias_from_deltas(&pairwise_napvd(rho)?, cfg)
}

/// Retained triplet biases of `pair`, most biased third class first.
pub fn triplet_breakdown(
    deltas: &PairScoreTable,
    pair: ClassPair,
    th: Option<f64>,
) -> Vec<(usize, f64)> {
    let mut rows: Vec<(usize, f64)> = (0..deltas.n_classes())
        .filter(|&c| !pair.contains(c))
        .filter_map(|c| {
            let ca = deltas.get(c, pair.a)?;
            let cb = deltas.get(c, pair.b)?;
            if th.is_some_and(|th| ca > th && cb > th) {
                return None;
            }
            bias_from_distances(ca, cb).map(|v| (c, v))
        })
        .collect();
    rows.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    rows
}

/// Report CSV: `rank,class_a,class_b,avg_bias,retained_triplets,flagged`.
pub fn write_bias_csv<W: Write>(result: &BiasDetection, names: &[&str], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::InvalidArgument(e.to_string());
    w.write_record([
        "rank",
        "class_a",
        "class_b",
        "avg_bias",
        "retained_triplets",
        "flagged",
    ])
    .map_err(err)?;
    for (i, r) in result.detection.ranking.iter().enumerate() {
        let retained = result.table.detail(r.pair).map_or(0, |d| d.retained);
        w.write_record([
            (i + 1).to_string(),
            names[r.pair.a].to_string(),
            names[r.pair.b].to_string(),
            format!("{:.9}", r.score),
            retained.to_string(),
            r.flagged.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::InvalidArgument(e.to_string()))
}

/// Per-triplet CSV `class_a,class_b,class_c,bias` for the first `top_k` ranked pairs.
pub fn write_triplet_csv<W: Write>(
    result: &BiasDetection,
    deltas: &PairScoreTable,
    names: &[&str],
    top_k: usize,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::InvalidArgument(e.to_string());
    w.write_record(["class_a", "class_b", "class_c", "bias"])
        .map_err(err)?;
    for r in result.detection.ranking.iter().take(top_k) {
        for (c, v) in triplet_breakdown(deltas, r.pair, result.table.filter_threshold) {
            w.write_record([
                names[r.pair.a].to_string(),
                names[r.pair.b].to_string(),
                names[c].to_string(),
                format!("{v:.9}"),
            ])
            .map_err(err)?;
        }
    }
    w.flush().map_err(|e| Error::InvalidArgument(e.to_string()))
}
