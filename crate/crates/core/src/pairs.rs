//! Unordered class-pair score tables and threshold policies over them.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};

/// Unordered pair of distinct classes, stored with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct ClassPair {
    pub a: usize,
    pub b: usize,
}

impl ClassPair {
    pub fn new(x: usize, y: usize) -> Result<Self> {
        match x.cmp(&y) {
            std::cmp::Ordering::Less => Ok(ClassPair { a: x, b: y }),
            std::cmp::Ordering::Greater => Ok(ClassPair { a: y, b: x }),
            std::cmp::Ordering::Equal => Err(Error::InvalidArgument(format!(
                "self-pair ({x}, {x}) is not a class pair"
            ))),
        }
    }

    pub fn contains(&self, c: usize) -> bool {
        self.a == c || self.b == c
    }
}

impl fmt::Display for ClassPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.a, self.b)
    }
}

pub fn pair_count(m: usize) -> usize {
    m * m.saturating_sub(1) / 2
}

/// All pairs of `0..m` in lexicographic order.
pub fn all_pairs(m: usize) -> impl Iterator<Item = ClassPair> {
    (0..m).flat_map(move |a| (a + 1..m).map(move |b| ClassPair { a, b }))
}

/// Symmetric pair -> score map. Missing entries are undefined (masked).
#[derive(Debug, Clone, PartialEq)]
pub struct PairScoreTable {
    m: usize,
    scores: Vec<Option<f64>>,
}

impl PairScoreTable {
    pub fn new(m: usize) -> Self {
        PairScoreTable {
            m,
            scores: vec![None; pair_count(m)],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.m
    }

    fn index(&self, pair: ClassPair) -> usize {
        let ClassPair { a, b } = pair;
        assert!(b < self.m, "pair {pair} out of range for {} classes", self.m);
        a * (2 * self.m - a - 1) / 2 + (b - a - 1)
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let pair = ClassPair::new(x, y).ok()?;
        self.get_pair(pair)
    }

    pub fn get_pair(&self, pair: ClassPair) -> Option<f64> {
        self.scores[self.index(pair)]
    }

    /// Panics on a self-pair or an out-of-range class.
    pub fn set(&mut self, x: usize, y: usize, score: f64) {
        let pair = ClassPair::new(x, y).expect("self-pair");
        let i = self.index(pair);
        self.scores[i] = Some(score);
    }

    pub fn set_pair(&mut self, pair: ClassPair, score: Option<f64>) {
        let i = self.index(pair);
        self.scores[i] = score;
    }

    /// All pairs in lexicographic order with their score or `None`.
    pub fn iter(&self) -> impl Iterator<Item = (ClassPair, Option<f64>)> + '_ {
        all_pairs(self.m).zip(self.scores.iter().copied())
    }

    pub fn iter_defined(&self) -> impl Iterator<Item = (ClassPair, f64)> + '_ {
        self.iter().filter_map(|(p, s)| s.map(|s| (p, s)))
    }

    pub fn defined_count(&self) -> usize {
        self.scores.iter().filter(|s| s.is_some()).count()
    }

    pub fn defined_pairs(&self) -> Vec<ClassPair> {
        self.iter_defined().map(|(p, _)| p).collect()
    }

    /// Mean and population standard deviation of the defined scores.
    pub fn mean_std(&self) -> Option<(f64, f64)> {
        let values: Vec<f64> = self.iter_defined().map(|(_, s)| s).collect();
        mean_std(&values)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> PairScoreTable {
        PairScoreTable {
            m: self.m,
            scores: self.scores.iter().map(|s| s.map(&f)).collect(),
        }
    }
}

/// Mean and population std. A constant input reports exactly its value and zero spread.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    let first = *values.first()?;
    if values.iter().all(|&v| v == first) {
        return Some((first, 0.0));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    LowIsError,
    HighIsError,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "fraction")]
pub enum PolicyKind {
    MeanMinusStd,
    MeanPlusStd,
    TopFraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectionPolicy {
    kind: PolicyKind,
    direction: Direction,
}

impl DetectionPolicy {
    /// `mean - std` cuts only make sense when low scores are errors, and `mean + std` vice versa.
    pub fn new(kind: PolicyKind, direction: Direction) -> Result<Self> {
        match (kind, direction) {
            (PolicyKind::MeanMinusStd, Direction::HighIsError)
            | (PolicyKind::MeanPlusStd, Direction::LowIsError) => Err(Error::InvalidArgument(
                format!("{kind:?} cannot be combined with {direction:?}"),
            )),
            (PolicyKind::TopFraction(f), _) if !(f > 0.0 && f <= 1.0) => Err(
                Error::InvalidArgument(format!("fraction must lie in (0, 1], got {f}")),
            ),
            _ => Ok(DetectionPolicy { kind, direction }),
        }
    }

    pub fn mean_minus_std() -> Self {
        DetectionPolicy {
            kind: PolicyKind::MeanMinusStd,
            direction: Direction::LowIsError,
        }
    }

    pub fn mean_plus_std() -> Self {
        DetectionPolicy {
            kind: PolicyKind::MeanPlusStd,
            direction: Direction::HighIsError,
        }
    }

    pub fn top_fraction(fraction: f64, direction: Direction) -> Result<Self> {
        Self::new(PolicyKind::TopFraction(fraction), direction)
    }

    /// The distribution-relative cut appropriate for `direction`.
    pub fn std_cut(direction: Direction) -> Self {
        match direction {
            Direction::LowIsError => Self::mean_minus_std(),
            Direction::HighIsError => Self::mean_plus_std(),
        }
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    /// Flag count of a top-fraction policy over `p` pairs: `ceil(fraction * p)`.
    pub fn top_count(fraction: f64, p: usize) -> usize {
        // Absorb representation error so that e.g. 0.01 * 100 stays 1.
        let raw = fraction * p as f64;
        let k = (raw - raw.abs() * 1e-12).ceil() as usize;
        k.clamp(usize::from(p > 0), p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankedPair {
    pub pair: ClassPair,
    pub score: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub ranking: Vec<RankedPair>,
    pub policy: DetectionPolicy,
    /// Score threshold for the std policies.
    pub cutoff: Option<f64>,
    pub mean: f64,
    pub std: f64,
}

impl Detection {
    pub fn flagged(&self) -> Vec<ClassPair> {
        self.ranking
            .iter()
            .filter(|r| r.flagged)
            .map(|r| r.pair)
            .collect()
    }

    pub fn flagged_count(&self) -> usize {
        self.ranking.iter().filter(|r| r.flagged).count()
    }

    pub fn ranked_pairs(&self) -> Vec<ClassPair> {
        self.ranking.iter().map(|r| r.pair).collect()
    }

    pub fn pair_count(&self) -> usize {
        self.ranking.len()
    }
}

/// Ranks defined pairs most error-prone first and flags them under `policy`.
/// Equal scores keep ascending lexicographic pair order.
pub fn rank_pairs(table: &PairScoreTable, policy: DetectionPolicy) -> Result<Detection> {
    let mut entries: Vec<(ClassPair, f64)> = table.iter_defined().collect();
    if entries.is_empty() {
        return Err(Error::NoData("no defined pair scores".into()));
    }
    if let Some((p, s)) = entries.iter().find(|(_, s)| s.is_nan()) {
        return Err(Error::InvalidArgument(format!("pair {p} has NaN score {s}")));
    }
    let values: Vec<f64> = entries.iter().map(|(_, s)| *s).collect();
    let (mean, std) = mean_std(&values).expect("non-empty");

    match policy.direction {
        Direction::LowIsError => entries.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0))),
        Direction::HighIsError => entries.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0))),
    }

    let p = entries.len();
    type Flag = Box<dyn Fn(usize, f64) -> bool>;
    let (cutoff, flag): (Option<f64>, Flag) = match policy.kind {
        PolicyKind::MeanMinusStd => {
            let c = mean - std;
            (Some(c), Box::new(move |_, s| s < c))
        }
        PolicyKind::MeanPlusStd => {
            let c = mean + std;
            (Some(c), Box::new(move |_, s| s > c))
        }
        PolicyKind::TopFraction(f) => {
            let k = DetectionPolicy::top_count(f, p);
            (None, Box::new(move |rank, _| rank < k))
        }
    };
    let ranking = entries
        .into_iter()
        .enumerate()
        .map(|(rank, (pair, score))| RankedPair {
            pair,
            score,
            flagged: flag(rank, score),
        })
        .collect();
    Ok(Detection {
        ranking,
        policy,
        cutoff,
        mean,
        std,
    })
}
