//! Spearman correlation, Kruskal-Wallis H and Cohen's d.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// 1-based ranks with ties assigned their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && xs[idx[j]] == xs[idx[i]] {
            j += 1;
        }
        // Positions i..j share ranks i+1..=j.
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::InvalidArgument("at least two observations are required".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.iter().chain(ys).any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("NaN observation".into()));
    }
    if xs.len() != ys.len() || xs.len() < 2 {
        return pearson(xs, ys);
    }
    pearson(&average_ranks(xs), &average_ranks(ys))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KruskalWallis {
    pub h: f64,
    pub df: usize,
    pub significant: bool,
}

/// H with tie correction; significance from the chi-square approximation at 0.05.
/// Empty groups are ignored.
pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<KruskalWallis> {
    let groups: Vec<&Vec<f64>> = groups.iter().filter(|g| !g.is_empty()).collect();
    if groups.len() < 2 {
        return Err(Error::NoContrast);
    }
    let pooled: Vec<f64> = groups.iter().flat_map(|g| g.iter().copied()).collect();
    if pooled.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("NaN observation".into()));
    }
    let ranks = average_ranks(&pooled);
    let n = pooled.len() as f64;
    let df = groups.len() - 1;

    let mut offset = 0;
    let mut sum = 0.0;
    for g in &groups {
        let r: f64 = ranks[offset..offset + g.len()].iter().sum();
        sum += r * r / g.len() as f64;
        offset += g.len();
    }
    let h_raw = 12.0 / (n * (n + 1.0)) * sum - 3.0 * (n + 1.0);

    let mut sorted = pooled.clone();
    sorted.sort_by(f64::total_cmp);
    let mut ties = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&v| v == sorted[i]).count();
        let t = j as f64;
        ties += t * t * t - t;
        i += j;
    }
    let correction = 1.0 - ties / (n * n * n - n);
    if correction <= 0.0 {
        // Every observation is equal: no group effect.
        return Ok(KruskalWallis {
            h: 0.0,
            df,
            significant: false,
        });
    }
    let h = (h_raw / correction).max(0.0);
    let chi = ChiSquared::new(df as f64).expect("positive degrees of freedom");
    let p = 1.0 - chi.cdf(h);
    Ok(KruskalWallis {
        h,
        df,
        significant: p < 0.05,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectSize {
    Negligible,
    Small,
    Medium,
    Large,
}

impl EffectSize {
    pub fn of(d: f64) -> Self {
        let a = d.abs();
        if a < 0.2 {
            EffectSize::Negligible
        } else if a < 0.5 {
            EffectSize::Small
        } else if a < 0.8 {
            EffectSize::Medium
        } else {
            EffectSize::Large
        }
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// `(mean(xs) − mean(ys)) / pooled sample std`.
pub fn cohens_d(xs: &[f64], ys: &[f64]) -> Result<(f64, EffectSize)> {
    if xs.len() < 2 || ys.len() < 2 {
        return Err(Error::InvalidArgument("each sample needs at least two values".into()));
    }
    let (mx, vx) = mean_var(xs);
    let (my, vy) = mean_var(ys);
    let (nx, ny) = (xs.len() as f64, ys.len() as f64);
    let pooled = ((nx - 1.0) * vx + (ny - 1.0) * vy) / (nx + ny - 2.0);
    if pooled.is_nan() || pooled <= 0.0 {
        return Err(Error::UndefinedEffect);
    }
    let d = (mx - my) / pooled.sqrt();
    Ok((d, EffectSize::of(d)))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EffectSummary {
    pub negligible: usize,
    pub small: usize,
    pub medium: usize,
    pub large: usize,
    /// Pairs skipped for too few values or zero pooled variance.
    pub undefined: usize,
}

impl EffectSummary {
    pub fn total_defined(&self) -> usize {
        self.negligible + self.small + self.medium + self.large
    }

    /// Percentages of defined pairs, in bin order.
    pub fn percentages(&self) -> [f64; 4] {
        let t = self.total_defined().max(1) as f64;
        [
            100.0 * self.negligible as f64 / t,
            100.0 * self.small as f64 / t,
            100.0 * self.medium as f64 / t,
            100.0 * self.large as f64 / t,
        ]
    }
}

/// Cohen's d bins over every unordered pair of groups.
pub fn effect_size_summary(groups: &[Vec<f64>]) -> EffectSummary {
    let mut s = EffectSummary::default();
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            match cohens_d(&groups[i], &groups[j]) {
                Ok((_, EffectSize::Negligible)) => s.negligible += 1,
                Ok((_, EffectSize::Small)) => s.small += 1,
                Ok((_, EffectSize::Medium)) => s.medium += 1,
                Ok((_, EffectSize::Large)) => s.large += 1,
                Err(_) => s.undefined += 1,
            }
        }
    }
    s
}
