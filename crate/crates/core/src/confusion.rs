//! Confusion detection from distances between class activation profiles.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pairs::{all_pairs, rank_pairs, Detection, DetectionPolicy, PairScoreTable};
use crate::profiler::ActivationProbabilityMatrix;

/// Euclidean distance between the probability columns of `a` and `b`.
pub fn napvd(rho: &ActivationProbabilityMatrix, a: usize, b: usize) -> Result<f64> {
    let ca = rho.column(a)?;
    let cb = rho.column(b)?;
    Ok(ca
        .iter()
        .zip(cb.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// NAPVD for every pair of defined classes; pairs touching an undefined class stay masked.
pub fn pairwise_napvd(rho: &ActivationProbabilityMatrix) -> Result<PairScoreTable> {
    let m = rho.n_classes();
    let defined = rho.defined_classes().len();
    if defined < 2 {
        return Err(Error::NoData(format!(
            "{defined} defined class columns, at least 2 are needed"
        )));
    }
    let pairs: Vec<_> = all_pairs(m).collect();
    let scores: Vec<Option<f64>> = pairs
        .par_iter()
        .map(|p| {
            (rho.is_defined(p.a) && rho.is_defined(p.b))
                .then(|| napvd(rho, p.a, p.b).expect("both columns defined"))
        })
        .collect();
    let mut table = PairScoreTable::new(m);
    for (p, s) in pairs.into_iter().zip(scores) {
        table.set_pair(p, s);
    }
    Ok(table)
}

pub fn detect_errors(table: &PairScoreTable, policy: DetectionPolicy) -> Result<Detection> {
    rank_pairs(table, policy)
}

/// Report CSV: `rank,class_a,class_b,<score_name>,flagged`, rank starting at 1.
pub fn write_detection_csv<W: Write>(
    detection: &Detection,
    names: &[&str],
    score_name: &str,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::InvalidArgument(e.to_string());
    w.write_record(["rank", "class_a", "class_b", score_name, "flagged"])
        .map_err(err)?;
    for (i, r) in detection.ranking.iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            names[r.pair.a].to_string(),
            names[r.pair.b].to_string(),
            format!("{:.9}", r.score),
            r.flagged.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::InvalidArgument(e.to_string()))
}
