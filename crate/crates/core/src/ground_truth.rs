//! Ground-truth confusion and bias labels built from labeled prediction logs.

use std::collections::BTreeSet;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::pairs::{all_pairs, rank_pairs, ClassPair, DetectionPolicy, PairScoreTable};
use crate::trace::{TaskKind, TraceBundle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrKind {
    /// Single-label misclassification between two classes.
    Type1,
    /// Multi-label co-prediction of an absent class next to a present one.
    Type2,
}

impl ErrKind {
    pub fn for_task(task: TaskKind) -> Self {
        match task {
            TaskKind::SingleLabel => ErrKind::Type1,
            TaskKind::MultiLabel => ErrKind::Type2,
        }
    }
}

/// Directed error counts. Entry `(x, y)` is the numerator and denominator of the
/// probability that the model errs from `x` toward `y`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionCounts {
    kind: ErrKind,
    m: usize,
    num: Vec<u64>,
    den: Vec<u64>,
}

impl ConfusionCounts {
    pub fn from_bundle(bundle: &TraceBundle, kind: ErrKind) -> Result<Self> {
        let expected = match kind {
            ErrKind::Type1 => TaskKind::SingleLabel,
            ErrKind::Type2 => TaskKind::MultiLabel,
        };
        if bundle.task_kind() != expected {
            return Err(Error::WrongTaskKind { expected });
        }
        if !bundle.has_true_labels() {
            return Err(Error::NoLabels);
        }
        let m = bundle.n_classes();
        let mut num = vec![0u64; m * m];
        let mut den = vec![0u64; m * m];
        match kind {
            ErrKind::Type1 => {
                // (x, y): truly x, predicted y, over truly x.
                let mut totals = vec![0u64; m];
                for img in bundle.images() {
                    if let (Some(&t), Some(&p)) =
                        (img.true_labels.first(), img.predicted_labels.first())
                    {
                        totals[t] += 1;
                        num[t * m + p] += 1;
                    }
                }
                for x in 0..m {
                    den[x * m..(x + 1) * m].fill(totals[x]);
                }
            }
            ErrKind::Type2 => {
                // (x, y): truly x and not y, predicted both, over truly x and not y.
                let mut present = vec![0u64; m];
                let mut together = vec![0u64; m * m];
                for img in bundle.images() {
                    for &x in &img.true_labels {
                        present[x] += 1;
                        for &y in &img.true_labels {
                            together[x * m + y] += 1;
                        }
                        if !img.predicts(x) {
                            continue;
                        }
                        for &y in &img.predicted_labels {
                            if !img.truly_contains(y) {
                                num[x * m + y] += 1;
                            }
                        }
                    }
                }
                for x in 0..m {
                    for y in 0..m {
                        den[x * m + y] = present[x] - together[x * m + y];
                    }
                }
            }
        }
        Ok(ConfusionCounts { kind, m, num, den })
    }

    pub fn kind(&self) -> ErrKind {
        self.kind
    }

    pub fn n_classes(&self) -> usize {
        self.m
    }

    /// Directed error probability from `x` toward `y`, `None` on an empty conditioning set.
    pub fn directed(&self, x: usize, y: usize) -> Option<f64> {
        let d = self.den[x * self.m + y];
        (d > 0).then(|| self.num[x * self.m + y] as f64 / d as f64)
    }

    /// Symmetric confusion score of the pair.
    pub fn conf(&self, x: usize, y: usize) -> Result<f64> {
        if x == y {
            return Err(Error::InvalidArgument(format!("self-pair ({x}, {x})")));
        }
        if x >= self.m || y >= self.m {
            return Err(Error::InvalidArgument(format!(
                "class index out of range for {} classes",
                self.m
            )));
        }
        let xy = self.directed(x, y);
        let yx = self.directed(y, x);
        match self.kind {
            ErrKind::Type1 => match (xy, yx) {
                (Some(a), Some(b)) => Ok((a + b) / 2.0),
                (None, _) => Err(Error::UndefinedClass(x)),
                (_, None) => Err(Error::UndefinedClass(y)),
            },
            // Only one conditioning set may be populated; use whichever is.
            ErrKind::Type2 => match (xy, yx) {
                (Some(a), Some(b)) => Ok((a + b) / 2.0),
                (Some(a), None) | (None, Some(a)) => Ok(a),
                (None, None) => Err(Error::UndefinedPair(x.min(y), x.max(y))),
            },
        }
    }

    /// Confusion score for every pair; undefined pairs are masked.
    pub fn conf_table(&self) -> PairScoreTable {
        let mut t = PairScoreTable::new(self.m);
        for p in all_pairs(self.m) {
            t.set_pair(p, self.conf(p.a, p.b).ok());
        }
        t
    }
}

pub fn type1_conf(bundle: &TraceBundle, x: usize, y: usize) -> Result<f64> {
    ConfusionCounts::from_bundle(bundle, ErrKind::Type1)?.conf(x, y)
}

pub fn type2_conf(bundle: &TraceBundle, x: usize, y: usize) -> Result<f64> {
    ConfusionCounts::from_bundle(bundle, ErrKind::Type2)?.conf(x, y)
}

/// `|error(x, z) − error(y, z)|` over a confusion score table.
pub fn cd_from_table(conf: &PairScoreTable, x: usize, y: usize, z: usize) -> Result<f64> {
    if x == y || x == z || y == z {
        return Err(Error::InvalidArgument(format!(
            "triplet ({x}, {y} | {z}) needs three distinct classes"
        )));
    }
    match (conf.get(x, z), conf.get(y, z)) {
        (Some(a), Some(b)) => Ok((a - b).abs()),
        _ => Err(Error::UndefinedTriplet(x, y, z)),
    }
}

pub fn confusion_disparity(
    bundle: &TraceBundle,
    x: usize,
    y: usize,
    z: usize,
    kind: ErrKind,
) -> Result<f64> {
    let table = ConfusionCounts::from_bundle(bundle, kind)?.conf_table();
    cd_from_table(&table, x, y, z)
}

/// Mean cd over third classes where both errors are defined.
pub fn avg_cd_from_table(conf: &PairScoreTable, x: usize, y: usize) -> Result<f64> {
    if x == y {
        return Err(Error::InvalidArgument(format!("self-pair ({x}, {x})")));
    }
    let (sum, count) = (0..conf.n_classes())
        .filter(|&z| z != x && z != y)
        .filter_map(|z| cd_from_table(conf, x, y, z).ok())
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if count == 0 {
        return Err(Error::UndefinedPair(x.min(y), x.max(y)));
    }
    Ok(sum / count as f64)
}

pub fn avg_cd(bundle: &TraceBundle, x: usize, y: usize, kind: ErrKind) -> Result<f64> {
    let table = ConfusionCounts::from_bundle(bundle, kind)?.conf_table();
    avg_cd_from_table(&table, x, y)
}

pub fn avg_cd_table(conf: &PairScoreTable) -> PairScoreTable {
    let m = conf.n_classes();
    let pairs: Vec<ClassPair> = all_pairs(m).collect();
    let scores: Vec<Option<f64>> = pairs
        .par_iter()
        .map(|p| avg_cd_from_table(conf, p.a, p.b).ok())
        .collect();
    let mut t = PairScoreTable::new(m);
    for (p, s) in pairs.into_iter().zip(scores) {
        t.set_pair(p, s);
    }
    t
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundTruthKind {
    Type1Confusion,
    Type2Confusion,
    AvgCdType1,
    AvgCdType2,
}

impl GroundTruthKind {
    pub fn confusion(kind: ErrKind) -> Self {
        match kind {
            ErrKind::Type1 => GroundTruthKind::Type1Confusion,
            ErrKind::Type2 => GroundTruthKind::Type2Confusion,
        }
    }

    pub fn bias(kind: ErrKind) -> Self {
        match kind {
            ErrKind::Type1 => GroundTruthKind::AvgCdType1,
            ErrKind::Type2 => GroundTruthKind::AvgCdType2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthSet {
    pub kind: GroundTruthKind,
    pub scores: PairScoreTable,
    pub truth: BTreeSet<ClassPair>,
    pub marking: DetectionPolicy,
    pub cutoff: f64,
}

impl GroundTruthSet {
    pub fn contains(&self, pair: ClassPair) -> bool {
        self.truth.contains(&pair)
    }
}

/// Marks pairs scoring strictly above mean + 1 population std.
pub fn mark_ground_truth(scores: &PairScoreTable, kind: GroundTruthKind) -> Result<GroundTruthSet> {
    let defined = scores.defined_count();
    if defined < 2 {
        return Err(Error::NoData(format!(
            "{defined} defined ground-truth scores, at least 2 are needed"
        )));
    }
    let marking = DetectionPolicy::mean_plus_std();
    let d = rank_pairs(scores, marking)?;
    Ok(GroundTruthSet {
        kind,
        scores: scores.clone(),
        truth: d.flagged().into_iter().collect(),
        marking,
        cutoff: d.cutoff.expect("std policy has a cutoff"),
    })
}

/// CSV `class_a,class_b,score,is_truth` over defined pairs in lexicographic order.
pub fn write_truth_csv<W: Write>(gt: &GroundTruthSet, names: &[&str], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::InvalidArgument(e.to_string());
    w.write_record(["class_a", "class_b", "score", "is_truth"])
        .map_err(err)?;
    for (p, s) in gt.scores.iter_defined() {
        w.write_record([
            names[p.a].to_string(),
            names[p.b].to_string(),
            format!("{s:.9}"),
            gt.contains(p).to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::InvalidArgument(e.to_string()))
}
