//! Statistical-bias test: are the weighted arms balanced on the fitted
//! propensity score?
//!
//! On the line, `-(u' D u) = 2 * integral of U(t)^2 dt` for the signed mass
//! vector `u` (summing to zero) and its cumulative sum `U`, so one sort of
//! the scores gives every statistic in linear time.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{permutation_pvalue, signed_masses, PermutationTestResult};
use crate::data::{Dataset, TREATED};
use crate::error::{Error, Result};
use crate::estimand::{compute_weights, EstimandSpec};
use crate::rng::replicate_rng;

/// Scores in sorted order with the permutation null of the unweighted
/// statistic. The null does not depend on the weights, so one draw serves
/// every estimand.
#[derive(Debug, Clone, PartialEq)]
pub struct StatbiasNull {
    order: Vec<usize>,
    gaps: Vec<f64>,
    pub null_statistics: Vec<f64>,
}

impl StatbiasNull {
    pub fn replicates(&self) -> usize {
        self.null_statistics.len()
    }

    fn statistic(&self, u: &[f64]) -> f64 {
        let mut cum = 0.0;
        let mut acc = 0.0;
        for (k, gap) in self.gaps.iter().enumerate() {
            cum += u[self.order[k]];
            acc += cum * cum * gap;
        }
        2.0 * acc
    }
}

fn sorted(scores: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let gaps = order.windows(2).map(|w| scores[w[1]] - scores[w[0]]).collect();
    (order, gaps)
}

fn arm_sizes(treatment: &[u8]) -> Result<(usize, usize)> {
    let n1 = treatment.iter().filter(|&&z| z == TREATED).count();
    let n0 = treatment.len() - n1;
    if n0 == 0 || n1 == 0 {
        return Err(Error::InvalidInput("both arms must be nonempty".into()));
    }
    Ok((n0, n1))
}

/// Weighted two-sample energy distance between the arms' score distributions.
pub fn energy_two_sample_1d(scores: &[f64], treatment: &[u8], w: &[f64]) -> Result<f64> {
    if scores.len() != treatment.len() || w.len() != treatment.len() {
        return Err(Error::InvalidInput("scores, treatment and weights differ in length".into()));
    }
    let (n0, n1) = arm_sizes(treatment)?;
    let u = signed_masses(treatment, w, n0, n1)?;
    let (order, gaps) = sorted(scores);
    let null = StatbiasNull {
        order,
        gaps,
        null_statistics: Vec::new(),
    };
    Ok(null.statistic(&u))
}

/// Null distribution from `replicates` random relabelings with unit weights.
pub fn statbias_null(scores: &[f64], treatment: &[u8], replicates: usize, seed: u64) -> Result<StatbiasNull> {
    if scores.len() != treatment.len() {
        return Err(Error::InvalidInput("scores and treatment differ in length".into()));
    }
    if replicates == 0 {
        return Err(Error::Config("permutation replicates must be positive".into()));
    }
    let (n0, n1) = arm_sizes(treatment)?;
    let (order, gaps) = sorted(scores);
    let mut null = StatbiasNull {
        order,
        gaps,
        null_statistics: Vec::new(),
    };
    let (m0, m1) = (-1.0 / n0 as f64, 1.0 / n1 as f64);
    null.null_statistics = (0..replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = replicate_rng(seed, b as u64);
            let mut labels = treatment.to_vec();
            labels.shuffle(&mut rng);
            let u: Vec<f64> = labels.iter().map(|&z| if z == TREATED { m1 } else { m0 }).collect();
            null.statistic(&u)
        })
        .collect();
    Ok(null)
}

/// Tests for several arm-normalised weight vectors against one null.
pub fn statbias_pvalues(
    treatment: &[u8],
    weights: &[Vec<f64>],
    null: &StatbiasNull,
    keep_null: bool,
) -> Result<Vec<PermutationTestResult>> {
    let (n0, n1) = arm_sizes(treatment)?;
    if null.order.len() != treatment.len() {
        return Err(Error::InvalidInput("null was built for a different sample".into()));
    }
    weights
        .par_iter()
        .map(|w| {
            if w.len() != treatment.len() {
                return Err(Error::InvalidInput("weights do not match the sample".into()));
            }
            let u = signed_masses(treatment, w, n0, n1)?;
            let statistic = null.statistic(&u);
            Ok(PermutationTestResult {
                statistic,
                p_value: permutation_pvalue(statistic, &null.null_statistics),
                replicates: null.replicates(),
                null_statistics: keep_null.then(|| null.null_statistics.clone()),
            })
        })
        .collect()
}

/// Single-estimand statistical-bias test on the fitted scores.
pub fn statbias_pvalue(
    data: &Dataset,
    spec: EstimandSpec,
    scores: &[f64],
    replicates: usize,
    seed: u64,
) -> Result<PermutationTestResult> {
    let w = compute_weights(scores, data.treatment(), spec, true)?;
    let null = statbias_null(scores, data.treatment(), replicates, seed)?;
    Ok(statbias_pvalues(data.treatment(), &[w.w], &null, false)?.remove(0))
}
