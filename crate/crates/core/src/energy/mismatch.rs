//! Estimand-mismatch test: does a weighted arm look like the full sample?
//!
//! Null replicate `b` draws, for each arm, a uniformly random ordered subset
//! of the pooled sample of the arm's size and attaches the arm's weights to
//! it in arm order. The same subsets serve every weight column, so a whole
//! grid of estimands is tested in one pass.
//!
//! With the arm's masses collected in an `m x K` matrix `A` (one column per
//! estimand), the statistic of column `k` on subset `S` is
//! `(2/n) A_k' r_S - R/n^2 - A_k' D_SS A_k`, where `r` holds the row sums of
//! `D` and `R` their total. The columns of `A` are smooth in `(c, d)`, so `A`
//! is replaced by a truncated SVD `P Q'` for the null replicates and the
//! quadratic forms reduce to `q_k' (P' D_SS P) q_k`.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_weight_sum, permutation_pvalue, DistanceMatrix, PermutationTestResult};
use crate::data::{Dataset, CONTROL, TREATED};
use crate::error::{Error, Result};
use crate::estimand::{compute_weights, EstimandSpec};
use crate::rng::replicate_rng;

/// Singular values below this fraction of the largest are dropped.
const RANK_TOL: f64 = 1e-13;
/// Rows of `D_SS` gathered per GEMM block.
const BLOCK: usize = 256;

/// Mismatch test outcome for one estimand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MismatchResult {
    pub control: PermutationTestResult,
    pub treated: PermutationTestResult,
    /// Smaller of the two arm p-values.
    pub p_value: f64,
}

/// Single-estimand mismatch p-value with weights computed from `scores`.
pub fn mismatch_pvalue(
    data: &Dataset,
    dist: &DistanceMatrix,
    spec: EstimandSpec,
    scores: &[f64],
    replicates: usize,
    seed: u64,
) -> Result<MismatchResult> {
    let w = compute_weights(scores, data.treatment(), spec, true)?;
    let mut out = mismatch_pvalues(dist, data.treatment(), &[w.w], replicates, seed, false)?;
    Ok(out.remove(0))
}

/// Mismatch tests for several weight vectors over shared null subsets.
///
/// Each entry of `weights` holds all `n` units' arm-normalised weights.
pub fn mismatch_pvalues(
    dist: &DistanceMatrix,
    treatment: &[u8],
    weights: &[Vec<f64>],
    replicates: usize,
    seed: u64,
    keep_null: bool,
) -> Result<Vec<MismatchResult>> {
    let n = dist.n();
    if treatment.len() != n {
        return Err(Error::InvalidInput("treatment does not match the distances".into()));
    }
    if replicates == 0 {
        return Err(Error::Config("permutation replicates must be positive".into()));
    }
    if weights.is_empty() {
        return Ok(Vec::new());
    }
    let arms = [CONTROL, TREATED].map(|a| {
        (0..n).filter(|&i| treatment[i] == a).collect::<Vec<usize>>()
    });
    if arms.iter().any(|a| a.is_empty()) {
        return Err(Error::InvalidInput("both arms must be nonempty".into()));
    }
    let masses = arms
        .iter()
        .map(|idx| arm_masses(idx, weights, n))
        .collect::<Result<Vec<_>>>()?;

    let observed: Vec<Vec<f64>> = arms
        .iter()
        .zip(&masses)
        .map(|(idx, a)| statistics_exact(dist, idx, a))
        .collect();
    let factors: Vec<LowRank> = masses.iter().map(LowRank::new).collect();
    log::debug!(
        "mismatch null ranks: control {}, treated {} of {} columns",
        factors[0].rank(),
        factors[1].rank(),
        weights.len()
    );

    // nulls[b][arm][k]
    let nulls: Vec<[Vec<f64>; 2]> = (0..replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = replicate_rng(seed, b as u64);
            let mut draw = |m: usize| {
                let mut idx: Vec<usize> = (0..n).collect();
                idx.partial_shuffle(&mut rng, m).0.to_vec()
            };
            let s0 = draw(arms[0].len());
            let s1 = draw(arms[1].len());
            [factors[0].statistics(dist, &s0), factors[1].statistics(dist, &s1)]
        })
        .collect();

    let k_cols = weights.len();
    let results = (0..k_cols)
        .map(|k| {
            let arm_result = |a: usize| {
                let null: Vec<f64> = nulls.iter().map(|r| r[a][k]).collect();
                PermutationTestResult {
                    statistic: observed[a][k],
                    p_value: permutation_pvalue(observed[a][k], &null),
                    replicates,
                    null_statistics: keep_null.then_some(null),
                }
            };
            let (control, treated) = (arm_result(0), arm_result(1));
            MismatchResult {
                p_value: control.p_value.min(treated.p_value),
                control,
                treated,
            }
        })
        .collect();
    Ok(results)
}

/// `m x K` row-major masses `w_i / m` of one arm.
fn arm_masses(idx: &[usize], weights: &[Vec<f64>], n: usize) -> Result<Masses> {
    let m = idx.len();
    let k = weights.len();
    let mut a = vec![0.0; m * k];
    for (col, w) in weights.iter().enumerate() {
        if w.len() != n {
            return Err(Error::InvalidInput(format!("{} weights for {n} units", w.len())));
        }
        let arm: Vec<f64> = idx.iter().map(|&i| w[i]).collect();
        check_weight_sum(&arm, m as f64)?;
        for (r, v) in arm.iter().enumerate() {
            a[r * k + col] = v / m as f64;
        }
    }
    Ok(Masses { m, k, a })
}

struct Masses {
    m: usize,
    k: usize,
    a: Vec<f64>,
}

/// Statistics of every column on the rows `rows`, using `coef` (`m x k`,
/// row-major): returns `(2/n) coef' r_S - R/n^2` and `P' D_SS P`.
fn gram(dist: &DistanceMatrix, rows: &[usize], coef: &[f64], k: usize) -> (Vec<f64>, Vec<f64>) {
    let n = dist.n();
    let m = rows.len();
    let mut linear = vec![0.0; k];
    for (r, &i) in rows.iter().enumerate() {
        let ri = dist.row_sums()[i];
        for (l, c) in linear.iter_mut().zip(&coef[r * k..(r + 1) * k]) {
            *l += ri * c;
        }
    }
    let mut g = vec![0.0; k * k];
    let mut block = vec![0.0; BLOCK.min(m) * m];
    let mut t = vec![0.0; BLOCK.min(m) * k];
    for start in (0..m).step_by(BLOCK) {
        let bs = BLOCK.min(m - start);
        for a in 0..bs {
            let drow = dist.row(rows[start + a]);
            for (dst, &j) in block[a * m..(a + 1) * m].iter_mut().zip(rows) {
                *dst = drow[j];
            }
        }
        // t = block (bs x m) * coef (m x k); g += coef[start..]' t
        unsafe {
            matrixmultiply::dgemm(
                bs, m, k, 1.0,
                block.as_ptr(), m as isize, 1,
                coef.as_ptr(), k as isize, 1,
                0.0, t.as_mut_ptr(), k as isize, 1,
            );
            matrixmultiply::dgemm(
                k, bs, k, 1.0,
                coef[start * k..].as_ptr(), 1, k as isize,
                t.as_ptr(), k as isize, 1,
                1.0, g.as_mut_ptr(), k as isize, 1,
            );
        }
    }
    let scale = 2.0 / n as f64;
    linear.iter_mut().for_each(|l| *l *= scale);
    (linear, g)
}

fn pooled_term(dist: &DistanceMatrix) -> f64 {
    let n = dist.n() as f64;
    dist.total() / (n * n)
}

fn statistics_exact(dist: &DistanceMatrix, rows: &[usize], masses: &Masses) -> Vec<f64> {
    let k = masses.k;
    let (linear, g) = gram(dist, rows, &masses.a, k);
    let pooled = pooled_term(dist);
    (0..k).map(|c| linear[c] - pooled - g[c * k + c]).collect()
}

/// `A ~ P Q'` with `P` (`m x r`, row-major) and `Q` (`K x r`, row-major).
struct LowRank {
    p: Vec<f64>,
    q: Vec<f64>,
    r: usize,
    k: usize,
}

impl LowRank {
    fn new(masses: &Masses) -> Self {
        let (m, k) = (masses.m, masses.k);
        if k <= 8 || m <= k {
            // Identity factor: P = A, Q = I.
            let mut q = vec![0.0; k * k];
            (0..k).for_each(|i| q[i * k + i] = 1.0);
            return Self {
                p: masses.a.clone(),
                q,
                r: k,
                k,
            };
        }
        let a = DMatrix::from_row_slice(m, k, &masses.a);
        let svd = a.svd(true, true);
        let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
        let s = &svd.singular_values;
        let smax = s.iter().copied().fold(0.0, f64::max);
        let mut keep: Vec<usize> = (0..s.len()).filter(|&i| s[i] > RANK_TOL * smax).collect();
        keep.sort_by(|&x, &y| s[y].total_cmp(&s[x]));
        let r = keep.len().max(1);
        let mut p = vec![0.0; m * r];
        let mut q = vec![0.0; k * r];
        for (col, &j) in keep.iter().enumerate() {
            for i in 0..m {
                p[i * r + col] = u[(i, j)] * s[j];
            }
            for c in 0..k {
                q[c * r + col] = vt[(j, c)];
            }
        }
        Self { p, q, r, k }
    }

    fn rank(&self) -> usize {
        self.r
    }

    fn statistics(&self, dist: &DistanceMatrix, rows: &[usize]) -> Vec<f64> {
        let r = self.r;
        let (linear, g) = gram(dist, rows, &self.p, r);
        let pooled = pooled_term(dist);
        // qg = Q (k x r) * G (r x r); quad_c = <qg_c, q_c>
        let mut qg = vec![0.0; self.k * r];
        unsafe {
            matrixmultiply::dgemm(
                self.k, r, r, 1.0,
                self.q.as_ptr(), r as isize, 1,
                g.as_ptr(), r as isize, 1,
                0.0, qg.as_mut_ptr(), r as isize, 1,
            );
        }
        (0..self.k)
            .map(|c| {
                let q = &self.q[c * r..(c + 1) * r];
                let lin: f64 = q.iter().zip(&linear).map(|(a, b)| a * b).sum();
                let quad: f64 = q.iter().zip(&qg[c * r..(c + 1) * r]).map(|(a, b)| a * b).sum();
                lin - pooled - quad
            })
            .collect()
    }
}
