use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{Dataset, TREATED};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceEntry {
    pub covariate: String,
    /// `None` when the pooled arm variance is zero.
    pub smd_unweighted: Option<f64>,
    pub smd_weighted: Option<f64>,
}

impl BalanceEntry {
    pub fn is_flagged(&self) -> bool {
        self.smd_weighted.is_none()
    }
}

/// Standardised mean differences before and after weighting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    /// Sorted by |weighted SMD| descending, flagged covariates last.
    pub entries: Vec<BalanceEntry>,
    pub mean_abs_weighted: f64,
    pub max_abs_weighted: f64,
    pub mean_abs_unweighted: f64,
    pub max_abs_unweighted: f64,
}

impl BalanceReport {
    pub fn flagged(&self) -> impl Iterator<Item = &BalanceEntry> {
        self.entries.iter().filter(|e| e.is_flagged())
    }

    pub fn get(&self, covariate: &str) -> Option<&BalanceEntry> {
        self.entries.iter().find(|e| e.covariate == covariate)
    }

    /// CSV with columns `covariate,smd_unweighted,smd_weighted`; undefined SMDs are empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["covariate", "smd_unweighted", "smd_weighted"])?;
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for e in &self.entries {
            w.write_record([
                e.covariate.clone(),
                fmt(e.smd_unweighted),
                fmt(e.smd_weighted),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<balance csv>", e))?;
        Ok(())
    }
}

struct ArmMoments {
    weighted_mean: f64,
    mean: f64,
    variance: f64,
}

fn arm_moments(values: &[f64], weights: &[f64]) -> ArmMoments {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let variance = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let wsum: f64 = weights.iter().sum();
    let weighted_mean = values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / wsum;
    ArmMoments {
        weighted_mean,
        mean,
        variance,
    }
}

/// Per-covariate SMDs. The denominator uses the unweighted arm variances of
/// the raw sample so that it is identical for every weight set.
pub fn compute_smd(data: &Dataset, weights: Option<&[f64]>) -> Result<BalanceReport> {
    let n = data.n();
    let unit = vec![1.0; n];
    let w = weights.unwrap_or(&unit);
    if w.len() != n {
        return Err(Error::InvalidInput(format!(
            "{} weights for {n} units",
            w.len()
        )));
    }
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidInput("weights must be finite and nonnegative".into()));
    }
    let treated = data.arm_indices(TREATED);
    let control = data.arm_indices(1 - TREATED);
    let pick = |idx: &[usize], v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
    let (w1, w0) = (pick(&treated, w), pick(&control, w));
    if w1.iter().sum::<f64>() <= 0.0 || w0.iter().sum::<f64>() <= 0.0 {
        return Err(Error::InvalidInput(
            "each arm needs positive total weight".into(),
        ));
    }

    let x = data.covariates();
    let mut entries = Vec::with_capacity(data.p());
    for (j, name) in data.column_names().iter().enumerate() {
        let col: Vec<f64> = x.column(j).iter().copied().collect();
        let (x1, x0) = (pick(&treated, &col), pick(&control, &col));
        let m1 = arm_moments(&x1, &w1);
        let m0 = arm_moments(&x0, &w0);
        let pooled = ((m1.variance + m0.variance) / 2.0).sqrt();
        let (unweighted, weighted) = if pooled > 0.0 {
            (
                Some((m1.mean - m0.mean) / pooled),
                Some((m1.weighted_mean - m0.weighted_mean) / pooled),
            )
        } else {
            (None, None)
        };
        entries.push(BalanceEntry {
            covariate: name.clone(),
            smd_unweighted: unweighted,
            smd_weighted: weighted,
        });
    }
    entries.sort_by(|a, b| {
        let key = |e: &BalanceEntry| e.smd_weighted.map_or(-1.0, f64::abs);
        key(b).total_cmp(&key(a))
    });

    let summary = |f: fn(&BalanceEntry) -> Option<f64>| {
        let vals: Vec<f64> = entries.iter().filter_map(f).map(f64::abs).collect();
        if vals.is_empty() {
            (0.0, 0.0)
        } else {
            (
                vals.iter().sum::<f64>() / vals.len() as f64,
                vals.iter().copied().fold(0.0, f64::max),
            )
        }
    };
    let (mean_abs_weighted, max_abs_weighted) = summary(|e| e.smd_weighted);
    let (mean_abs_unweighted, max_abs_unweighted) = summary(|e| e.smd_unweighted);
    Ok(BalanceReport {
        entries,
        mean_abs_weighted,
        max_abs_weighted,
        mean_abs_unweighted,
        max_abs_unweighted,
    })
}
