//! Weighted energy distances and the permutation tests built on them.
//!
//! For a weighted sample with mass vector `a` and a reference with mass
//! vector `b` on the same points (both summing to one), the energy distance
//! is `2 a'Db - a'Da - b'Db = -(a - b)' D (a - b)`.

mod mismatch;
mod statbias;

pub use mismatch::{mismatch_pvalue, mismatch_pvalues, MismatchResult};
pub use statbias::{
    energy_two_sample_1d, statbias_null, statbias_pvalue, statbias_pvalues, StatbiasNull,
};

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::TREATED;
use crate::error::{Error, Result};

const WEIGHT_SUM_TOL: f64 = 1e-8;

/// Dense symmetric matrix of pairwise Euclidean distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>,
    row_sums: Vec<f64>,
    total: f64,
}

impl DistanceMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Row `i` as a slice.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn row_sums(&self) -> &[f64] {
        &self.row_sums
    }

    /// Sum of all n^2 entries.
    pub fn total(&self) -> f64 {
        self.total
    }

    fn from_values(n: usize, values: Vec<f64>) -> Self {
        let row_sums: Vec<f64> = values.chunks(n.max(1)).map(|r| r.iter().sum()).collect();
        let total = row_sums.iter().sum();
        Self {
            n,
            values,
            row_sums,
            total,
        }
    }
}

/// Euclidean distances between the rows of `points`.
pub fn pairwise_distances(points: &DMatrix<f64>) -> DistanceMatrix {
    let (n, k) = points.shape();
    // Row-major copy so each distance reads two contiguous rows.
    let rows: Vec<f64> = (0..n).flat_map(|i| (0..k).map(move |j| (i, j))).map(|(i, j)| points[(i, j)]).collect();
    let mut values = vec![0.0; n * n];
    values.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, out)| {
        let xi = &rows[i * k..(i + 1) * k];
        for (j, o) in out.iter_mut().enumerate() {
            if j != i {
                let xj = &rows[j * k..(j + 1) * k];
                *o = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            }
        }
    });
    DistanceMatrix::from_values(n, values)
}

/// Distances between scalar values.
pub fn scalar_distances(x: &[f64]) -> DistanceMatrix {
    let n = x.len();
    let mut values = vec![0.0; n * n];
    values.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, out)| {
        for (j, o) in out.iter_mut().enumerate() {
            *o = (x[i] - x[j]).abs();
        }
    });
    DistanceMatrix::from_values(n, values)
}

/// Columns centred and scaled to unit sample variance; constant columns are
/// only centred.
pub fn standardize_columns(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let mut out = x.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let sd = var.sqrt();
        for v in col.iter_mut() {
            *v -= mean;
            if sd > 0.0 {
                *v /= sd;
            }
        }
    }
    out
}

fn check_weight_sum(weights: &[f64], target: f64) -> Result<()> {
    let s: f64 = weights.iter().sum();
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidInput("weights must be finite and nonnegative".into()));
    }
    if (s - target).abs() > WEIGHT_SUM_TOL * target {
        return Err(Error::InvalidInput(format!(
            "weights sum to {s}, expected the group size {target}"
        )));
    }
    Ok(())
}

/// Energy distance between a weighted group and the pooled sample.
///
/// `group` lists unit indices and `weights` their weights, normalised to
/// sum to the group size.
pub fn energy_group_vs_pooled(dist: &DistanceMatrix, group: &[usize], weights: &[f64]) -> Result<f64> {
    let n = dist.n() as f64;
    let m = group.len();
    if m == 0 {
        return Err(Error::InvalidInput("empty group".into()));
    }
    if weights.len() != m {
        return Err(Error::InvalidInput(format!("{} weights for a group of {m}", weights.len())));
    }
    check_weight_sum(weights, m as f64)?;
    let mf = m as f64;
    let cross: f64 = group.iter().zip(weights).map(|(&i, &w)| w * dist.row_sums()[i]).sum();
    let mut within = 0.0;
    for (a, &i) in group.iter().enumerate() {
        let row = dist.row(i);
        let s: f64 = group.iter().zip(weights).map(|(&j, &w)| w * row[j]).sum();
        within += weights[a] * s;
    }
    Ok(2.0 * cross / (mf * n) - dist.total() / (n * n) - within / (mf * mf))
}

/// Two-sample weighted energy distance between the arms on a general
/// distance matrix; `w` holds every unit's weight under its own arm.
pub fn energy_treated_vs_control(dist: &DistanceMatrix, treatment: &[u8], w: &[f64]) -> Result<f64> {
    let n = dist.n();
    if treatment.len() != n || w.len() != n {
        return Err(Error::InvalidInput("treatment or weights do not match the distances".into()));
    }
    let n1 = treatment.iter().filter(|&&z| z == TREATED).count();
    let n0 = n - n1;
    if n0 == 0 || n1 == 0 {
        return Err(Error::InvalidInput("both arms must be nonempty".into()));
    }
    let u = signed_masses(treatment, w, n0, n1)?;
    let mut q = 0.0;
    for i in 0..n {
        if u[i] != 0.0 {
            let row = dist.row(i);
            q += u[i] * row.iter().zip(&u).map(|(d, uj)| d * uj).sum::<f64>();
        }
    }
    Ok(-q)
}

/// `w / n1` on treated units and `-w / n0` on controls, after checking the
/// arm totals.
fn signed_masses(treatment: &[u8], w: &[f64], n0: usize, n1: usize) -> Result<Vec<f64>> {
    let arm = |a: u8| -> Vec<f64> {
        w.iter().zip(treatment).filter(|p| *p.1 == a).map(|p| *p.0).collect()
    };
    check_weight_sum(&arm(TREATED), n1 as f64)?;
    check_weight_sum(&arm(1 - TREATED), n0 as f64)?;
    Ok(w.iter()
        .zip(treatment)
        .map(|(&wi, &z)| if z == TREATED { wi / n1 as f64 } else { -wi / n0 as f64 })
        .collect())
}

/// A permutation test outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationTestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub replicates: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub null_statistics: Option<Vec<f64>>,
}

/// `#{b : statistic <= null_b} / B`.
pub fn permutation_pvalue(statistic: f64, null: &[f64]) -> f64 {
    let hits = null.iter().filter(|&&s| statistic <= s).count();
    hits as f64 / null.len() as f64
}

/// One row per replicate, one column per named null vector.
pub fn write_null_csv<W: Write>(columns: &[(String, &[f64])], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["replicate".to_string()];
    header.extend(columns.iter().map(|c| c.0.clone()));
    w.write_record(&header)?;
    let rows = columns.iter().map(|c| c.1.len()).max().unwrap_or(0);
    for b in 0..rows {
        let mut rec = vec![b.to_string()];
        rec.extend(columns.iter().map(|c| c.1.get(b).map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<null csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distances_basic() {
        let d = scalar_distances(&[0.0, 3.0]);
        assert_eq!(d.get(0, 1), 3.0);
        assert_eq!(d.get(1, 0), 3.0);
        let same = pairwise_distances(&DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]));
        assert!(same.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn five_by_two_matches_double_loop() {
        let pts = [[0.0, 0.0], [3.0, 4.0], [-1.0, 2.5], [0.5, -0.5], [2.0, 2.0]];
        let m = DMatrix::from_fn(5, 2, |i, j| pts[i][j]);
        let d = pairwise_distances(&m);
        for i in 0..5 {
            for j in 0..5 {
                let dx = pts[i][0] - pts[j][0];
                let dy = pts[i][1] - pts[j][1];
                assert_eq!(d.get(i, j), (dx * dx + dy * dy).sqrt());
            }
        }
        assert_eq!(d.get(0, 1), 5.0);
    }

    #[test]
    fn full_group_with_unit_weights_is_zero() {
        let d = scalar_distances(&[0.1, 0.5, 2.0, 3.5]);
        let v = energy_group_vs_pooled(&d, &[0, 1, 2, 3], &[1.0; 4]).unwrap();
        assert!(v.abs() < 1e-15, "{v}");
    }

    #[test]
    fn four_unit_triple_sums() {
        let x = [0.0, 1.0, 3.0, 6.0];
        let d = scalar_distances(&x);
        let group = [1, 3];
        let w = [0.5, 1.5];
        // cross: 2/(2*4) * sum_i w_i sum_j |x_i - x_j|
        let r: Vec<f64> = x.iter().map(|a| x.iter().map(|b| (a - b).abs()).sum()).collect();
        let cross = 2.0 / 8.0 * (0.5 * r[1] + 1.5 * r[3]);
        let pooled = r.iter().sum::<f64>() / 16.0;
        let within = 2.0 * 0.5 * 1.5 * 5.0 / 4.0;
        let v = energy_group_vs_pooled(&d, &group, &w).unwrap();
        assert!((v - (cross - pooled - within)).abs() < 1e-12);
    }

    #[test]
    fn concentrated_group_is_positive() {
        let d = scalar_distances(&[0.0, 1.0, 2.0, 3.0, 4.0]);
        let v = energy_group_vs_pooled(&d, &[0, 4], &[2.0, 0.0]).unwrap();
        // cross 2/(2*5) * 2 * 10 = 4, pooled 40/25 = 1.6, within 0
        assert!((v - 2.4).abs() < 1e-12);
    }

    #[test]
    fn weight_sum_is_checked() {
        let d = scalar_distances(&[0.0, 1.0, 2.0]);
        assert!(energy_group_vs_pooled(&d, &[0, 1], &[1.0, 1.5]).is_err());
        assert!(energy_group_vs_pooled(&d, &[], &[]).is_err());
    }

    #[test]
    fn separated_arms() {
        let x = [0.9, 0.9, 0.9, 0.1, 0.1];
        let z = [1, 1, 1, 0, 0];
        let v = energy_treated_vs_control(&scalar_distances(&x), &z, &[1.0; 5]).unwrap();
        assert!((v - 1.6).abs() < 1e-12);
        let same = energy_treated_vs_control(&scalar_distances(&[0.2, 0.4, 0.2, 0.4]), &[1, 1, 0, 0], &[1.0; 4]).unwrap();
        assert_eq!(same, 0.0);
    }

    #[test]
    fn standardized_columns_have_unit_variance() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 5.0, 2.0, 5.0, 3.0, 5.0, 10.0, 5.0]);
        let s = standardize_columns(&x);
        let col: Vec<f64> = s.column(0).iter().copied().collect();
        let var = col.iter().map(|v| v * v).sum::<f64>() / 3.0;
        assert!((var - 1.0).abs() < 1e-12);
        assert!(s.column(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pvalue_lattice() {
        assert_eq!(permutation_pvalue(1.0, &[0.5, 1.0, 2.0, 0.1]), 0.5);
        assert_eq!(permutation_pvalue(5.0, &[0.5, 1.0]), 0.0);
    }
}
