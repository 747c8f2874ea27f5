use rand::Rng;
use rayon::prelude::*;

use super::{EstimandSpec, WeightTable};
use crate::data::{Dataset, TREATED};
use crate::error::{Error, Result};
use crate::propensity::{fit_propensity, DesignSpec};
use crate::rng::replicate_rng;

/// Where replicate propensity scores come from.
#[derive(Debug, Clone, Copy)]
pub enum ScoreSource<'a> {
    /// Refit the logistic model on every resample.
    Refit(&'a DesignSpec),
    /// Carry each unit's fixed score along with it.
    Fixed(&'a [f64]),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapOptions {
    pub replicates: usize,
    pub seed: u64,
    /// Redrawn resamples allowed, as a fraction of `replicates`.
    pub max_redraw_fraction: f64,
}

impl BootstrapOptions {
    pub fn new(replicates: usize, seed: u64) -> Self {
        Self {
            replicates,
            seed,
            max_redraw_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapOutcome {
    /// Standard error per requested spec, in input order.
    pub se: Vec<f64>,
    pub redraws: usize,
}

/// Bootstrap standard error of one estimand with per-replicate refits.
pub fn bootstrap_se(
    data: &Dataset,
    spec: EstimandSpec,
    design: &DesignSpec,
    replicates: usize,
    seed: u64,
) -> Result<f64> {
    let out = bootstrap_grid(
        data,
        &[spec],
        ScoreSource::Refit(design),
        BootstrapOptions::new(replicates, seed),
    )?;
    Ok(out.se[0])
}

/// Bootstrap standard errors for many estimands sharing the same resamples.
///
/// Replicate `b` draws from its own stream, so the result does not depend
/// on thread scheduling. A resample with an empty arm or a failed fit is
/// redrawn from the same stream.
pub fn bootstrap_grid(
    data: &Dataset,
    specs: &[EstimandSpec],
    scores: ScoreSource<'_>,
    opts: BootstrapOptions,
) -> Result<BootstrapOutcome> {
    if opts.replicates < 2 {
        return Err(Error::Config("bootstrap needs at least 2 replicates".into()));
    }
    if specs.is_empty() {
        return Ok(BootstrapOutcome {
            se: Vec::new(),
            redraws: 0,
        });
    }
    for s in specs {
        s.validate()?;
    }
    if let ScoreSource::Fixed(s) = scores {
        if s.len() != data.n() {
            return Err(Error::InvalidInput(format!(
                "{} scores for {} units",
                s.len(),
                data.n()
            )));
        }
    }
    let (c_axis, d_axis, index) = axes_of(specs);
    let max_redraws = (opts.max_redraw_fraction * opts.replicates as f64).floor() as usize;
    let n = data.n();

    let results: Vec<(Vec<f64>, usize)> = (0..opts.replicates)
        .into_par_iter()
        .map(|b| -> Result<(Vec<f64>, usize)> {
            let mut rng = replicate_rng(opts.seed, b as u64);
            let mut redraws = 0;
            loop {
                if redraws > max_redraws {
                    return Err(too_many(max_redraws, opts.replicates));
                }
                let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                let treated = rows.iter().filter(|&&i| data.treatment()[i] == TREATED).count();
                if treated == 0 || treated == n {
                    redraws += 1;
                    continue;
                }
                let sample = data.select_rows(&rows)?;
                let e = match scores {
                    ScoreSource::Fixed(s) => rows.iter().map(|&i| s[i]).collect(),
                    ScoreSource::Refit(design) => match fit_propensity(&sample, design) {
                        Ok(m) => m.fitted_scores,
                        Err(err) => {
                            log::debug!("bootstrap replicate {b}: refit failed ({err}); redrawing");
                            redraws += 1;
                            continue;
                        }
                    },
                };
                let table = WeightTable::new(&e, &c_axis, &d_axis)?;
                let mut taus = Vec::with_capacity(specs.len());
                for &(k, l) in &index {
                    taus.push(table.tau(k, l, sample.treatment(), sample.outcome())?);
                }
                return Ok((taus, redraws));
            }
        })
        .collect::<Result<_>>()?;

    let redraws: usize = results.iter().map(|r| r.1).sum();
    if redraws > max_redraws {
        return Err(too_many(max_redraws, opts.replicates));
    }
    let b = opts.replicates as f64;
    let se = (0..specs.len())
        .map(|k| {
            let mean = results.iter().map(|r| r.0[k]).sum::<f64>() / b;
            let ss = results.iter().map(|r| (r.0[k] - mean).powi(2)).sum::<f64>();
            (ss / (b - 1.0)).sqrt()
        })
        .collect();
    Ok(BootstrapOutcome { se, redraws })
}

fn too_many(max: usize, replicates: usize) -> Error {
    Error::numerical(
        "bootstrap",
        format!("more than {max} of {replicates} resamples had to be redrawn"),
    )
}

/// Distinct axis values of `specs` and each spec's (c, d) position.
fn axes_of(specs: &[EstimandSpec]) -> (Vec<f64>, Vec<f64>, Vec<(usize, usize)>) {
    let mut c_axis: Vec<f64> = Vec::new();
    let mut d_axis: Vec<f64> = Vec::new();
    let pos = |axis: &mut Vec<f64>, v: f64| match axis.iter().position(|a| a.to_bits() == v.to_bits()) {
        Some(i) => i,
        None => {
            axis.push(v);
            axis.len() - 1
        }
    };
    let index = specs
        .iter()
        .map(|s| (pos(&mut c_axis, s.c), pos(&mut d_axis, s.d)))
        .collect();
    (c_axis, d_axis, index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn deterministic_outcome_gives_zero_se() {
        // y = 2 + 3 z exactly, so every resample recovers tau = 3.
        let n = 40;
        let x: Vec<f64> = (0..n).map(|i| (i % 10) as f64 / 10.0).collect();
        let z: Vec<u8> = (0..n).map(|i| u8::from(i % 2 == 0)).collect();
        let y: Vec<f64> = z.iter().map(|&t| 2.0 + 3.0 * f64::from(t)).collect();
        let d = Dataset::new(DMatrix::from_column_slice(n, 1, &x), z, y, vec!["x".into()]).unwrap();
        let se = bootstrap_se(&d, EstimandSpec::ATO, &DesignSpec::main_effects(), 50, 1).unwrap();
        assert!(se < 1e-13, "se = {se}");
    }

    #[test]
    fn fixed_scores_match_two_sample_formula() {
        let n = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<bool>())).collect();
        let y: Vec<f64> = z
            .iter()
            .map(|&t| {
                let eps: f64 = StandardNormal.sample(&mut rng);
                f64::from(t) + if t == 1 { 2.0 * eps } else { eps }
            })
            .collect();
        let d = Dataset::new(DMatrix::zeros(n, 1), z.clone(), y.clone(), vec!["x".into()]).unwrap();
        let scores = vec![0.5; n];
        let out = bootstrap_grid(
            &d,
            &[EstimandSpec::ATE],
            ScoreSource::Fixed(&scores),
            BootstrapOptions::new(400, 9),
        )
        .unwrap();
        let arm = |a: u8| {
            let v: Vec<f64> = y.iter().zip(&z).filter(|p| *p.1 == a).map(|p| *p.0).collect();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
            var / v.len() as f64
        };
        let closed = (arm(0) + arm(1)).sqrt();
        assert!((out.se[0] / closed - 1.0).abs() < 0.15, "{} vs {closed}", out.se[0]);
    }

    #[test]
    fn grid_batch_matches_single_and_is_reproducible() {
        let n = 60;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let z: Vec<u8> = x.iter().map(|&v| u8::from(v + rng.random::<f64>() - 0.5 > 0.0)).collect();
        let y: Vec<f64> = x.iter().zip(&z).map(|(v, &t)| v + f64::from(t)).collect();
        let d = Dataset::new(DMatrix::from_column_slice(n, 1, &x), z, y, vec!["x".into()]).unwrap();
        let design = DesignSpec::main_effects();
        let specs = [EstimandSpec::ATE, EstimandSpec { c: 0.5, d: 0.25 }, EstimandSpec::ATO];
        let opts = BootstrapOptions::new(30, 77);
        let a = bootstrap_grid(&d, &specs, ScoreSource::Refit(&design), opts).unwrap();
        let b = bootstrap_grid(&d, &specs, ScoreSource::Refit(&design), opts).unwrap();
        assert_eq!(a, b);
        let single = bootstrap_se(&d, specs[1], &design, 30, 77).unwrap();
        assert_eq!(single, a.se[1]);
    }

    #[test]
    fn too_few_replicates() {
        let d = Dataset::new(DMatrix::zeros(4, 1), vec![0, 1, 0, 1], vec![0.0; 4], vec!["x".into()])
            .unwrap();
        assert!(bootstrap_se(&d, EstimandSpec::ATE, &DesignSpec::main_effects(), 1, 0).is_err());
    }

    #[test]
    fn tiny_arms_exhaust_redraw_budget() {
        // One treated unit in 30: about 37% of resamples lose it.
        let mut z = vec![0u8; 30];
        z[0] = 1;
        let d = Dataset::new(DMatrix::zeros(30, 1), z, vec![0.0; 30], vec!["x".into()]).unwrap();
        let scores = vec![0.5; 30];
        let r = bootstrap_grid(
            &d,
            &[EstimandSpec::ATE],
            ScoreSource::Fixed(&scores),
            BootstrapOptions::new(200, 3),
        );
        assert!(matches!(r, Err(Error::Numerical { .. })));
    }
}
