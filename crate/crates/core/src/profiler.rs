//! Per-class neuron activation probabilities.

use std::fmt;
use std::io::Write;

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::trace::{ClassGroups, TraceBundle};

/// Threshold applied to raw activation outputs. A neuron is active when its output is strictly greater.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct ActivationThreshold(f64);

impl ActivationThreshold {
    pub const DEFAULT: f64 = 0.5;
    pub const SWEEP: [f64; 6] = [0.25, 0.40, 0.50, 0.60, 0.75, 0.90];

    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() {
            Ok(ActivationThreshold(value))
        } else {
            Err(Error::InvalidArgument(format!(
                "activation threshold must be finite, got {value}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    #[inline]
    pub fn is_active(self, output: f32) -> bool {
        f64::from(output) > self.0
    }
}

impl Default for ActivationThreshold {
    fn default() -> Self {
        ActivationThreshold(Self::DEFAULT)
    }
}

impl fmt::Display for ActivationThreshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// `n_images x n_neurons` activation mask.
pub fn binarize(bundle: &TraceBundle, th: ActivationThreshold) -> Array2<bool> {
    bundle.activations().mapv(|v| th.is_active(v))
}

/// The `n x m` matrix of P(neuron j active | class i).
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationProbabilityMatrix {
    /// Undefined columns hold NaN.
    values: Array2<f64>,
    class_counts: Vec<usize>,
    threshold: ActivationThreshold,
}

impl ActivationProbabilityMatrix {
    /// Builds a matrix from precomputed columns; `None` marks an undefined class.
    /// Defined columns record a class count of 1.
    pub fn from_columns(columns: Vec<Option<Vec<f64>>>, n_neurons: usize) -> Result<Self> {
        let m = columns.len();
        let mut values = Array2::from_elem((n_neurons, m), f64::NAN);
        let mut class_counts = vec![0; m];
        for (i, col) in columns.into_iter().enumerate() {
            if let Some(col) = col {
                if col.len() != n_neurons {
                    return Err(Error::InvalidArgument(format!(
                        "column {i} has {} entries, expected {n_neurons}",
                        col.len()
                    )));
                }
                if col.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return Err(Error::InvalidArgument(format!(
                        "column {i} has an entry outside [0, 1]"
                    )));
                }
                values.column_mut(i).assign(&ArrayView1::from(&col));
                class_counts[i] = 1;
            }
        }
        if class_counts.iter().all(|&c| c == 0) {
            return Err(Error::NoData("every class column is undefined".into()));
        }
        Ok(ActivationProbabilityMatrix {
            values,
            class_counts,
            threshold: ActivationThreshold::default(),
        })
    }

    pub fn n_neurons(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn threshold(&self) -> ActivationThreshold {
        self.threshold
    }

    pub fn is_defined(&self, class: usize) -> bool {
        self.class_counts[class] > 0
    }

    pub fn defined_classes(&self) -> Vec<usize> {
        (0..self.n_classes()).filter(|&c| self.is_defined(c)).collect()
    }

    pub fn column(&self, class: usize) -> Result<ArrayView1<'_, f64>> {
        if class >= self.n_classes() {
            return Err(Error::InvalidArgument(format!("class index {class} out of range")));
        }
        if !self.is_defined(class) {
            return Err(Error::UndefinedClass(class));
        }
        Ok(self.values.column(class))
    }

    pub fn get(&self, neuron: usize, class: usize) -> Option<f64> {
        self.is_defined(class).then(|| self.values[[neuron, class]])
    }

    /// CSV with header `neuron_index,<class names>`; undefined columns are left empty.
    pub fn write_csv<W: Write>(&self, names: &[&str], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::InvalidArgument(e.to_string());
        let mut header = vec!["neuron_index".to_string()];
        header.extend(names.iter().map(|s| s.to_string()));
        w.write_record(&header).map_err(err)?;
        for j in 0..self.n_neurons() {
            let mut row = vec![j.to_string()];
            for i in 0..self.n_classes() {
                row.push(match self.get(j, i) {
                    Some(p) => format!("{p:.6}"),
                    None => String::new(),
                });
            }
            w.write_record(&row).map_err(err)?;
        }
        w.flush()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(())
    }
}

pub fn activation_probability_matrix(
    bundle: &TraceBundle,
    groups: &ClassGroups,
    th: ActivationThreshold,
) -> Result<ActivationProbabilityMatrix> {
    let m = bundle.n_classes();
    let n = bundle.n_neurons();
    if groups.n_classes() != m {
        return Err(Error::InvalidArgument(format!(
            "grouping covers {} classes, bundle has {m}",
            groups.n_classes()
        )));
    }
    let class_counts = groups.sizes();
    if class_counts.iter().all(|&c| c == 0) {
        return Err(Error::NoData("every class group is empty".into()));
    }
    let acts = bundle.activations();
    let columns: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|c| {
            let members = groups.members(c);
            if members.is_empty() {
                return vec![f64::NAN; n];
            }
            let mut counts = vec![0u64; n];
            for &row in members {
                for (cnt, &v) in counts.iter_mut().zip(acts.row(row)) {
                    if th.is_active(v) {
                        *cnt += 1;
                    }
                }
            }
            let total = members.len() as f64;
            counts.into_iter().map(|k| k as f64 / total).collect()
        })
        .collect();
    let mut values = Array2::zeros((n, m));
    for (c, col) in columns.into_iter().enumerate() {
        values.column_mut(c).assign(&ArrayView1::from(&col));
    }
    Ok(ActivationProbabilityMatrix {
        values,
        class_counts,
        threshold: th,
    })
}

/// Per-neuron min-max rescaling to [0, 1] over all images. Constant neurons map to 0.
pub fn normalize_min_max(acts: &Array2<f32>) -> Array2<f32> {
    let mut out = acts.clone();
    for mut col in out.columns_mut() {
        let (lo, hi) = col
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let span = f64::from(hi) - f64::from(lo);
        col.mapv_inplace(|v| {
            if span > 0.0 {
                ((f64::from(v) - f64::from(lo)) / span) as f32
            } else {
                0.0
            }
        });
    }
    out
}
