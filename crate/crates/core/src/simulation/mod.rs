//! Synthetic data with known propensities and effects, Monte-Carlo truths,
//! the replicated selection study and the variance-minimiser check.

mod scenario;
mod verify;

pub use scenario::{run_scenario, EstimatorSummary, ScenarioConfig, ScenarioReport, SpecAverage};
pub use verify::{verify_min_variance, CandidateVariance, VerifierConfig, VerifierReport, WeightFunction};

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimand::EstimandSpec;
use crate::propensity::expit;
use crate::rng::{replicate_rng, stage_seed};

/// Propensity slopes before scaling by the overlap level.
pub const ALPHA: [f64; 6] = [0.15, 0.3, 0.3, -0.2, -0.25, -0.25];
/// Outcome intercept and slopes.
pub const BETA: [f64; 7] = [0.0, -0.5, -0.5, -1.5, 0.8, 0.8, 1.0];
pub const CORRELATION: f64 = 0.5;
pub const COVARIATES: usize = 6;

const ALPHA0_DRAWS: usize = 1_000_000;
const ALPHA0_SEED: u64 = 0x5eed_a1fa;
const CHUNK: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heterogeneity {
    /// `8 e (1 - e)`
    Medium,
    /// `16 e (1 - e) - 1`
    High,
    /// `a + b e`
    Linear,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub gamma: f64,
    pub treated_fraction: f64,
    pub heterogeneity: Heterogeneity,
    pub linear_intercept: f64,
    pub linear_slope: f64,
    pub constant_effect: f64,
    pub n: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            treated_fraction: 0.5,
            heterogeneity: Heterogeneity::Medium,
            linear_intercept: 0.0,
            linear_slope: 4.0,
            constant_effect: 1.0,
            n: 1000,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.treated_fraction > 0.0 && self.treated_fraction < 1.0) {
            return Err(Error::Config(format!(
                "treated_fraction must lie in (0, 1), got {}",
                self.treated_fraction
            )));
        }
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(Error::Config(format!("gamma must be a nonnegative number, got {}", self.gamma)));
        }
        if self.n < 10 {
            return Err(Error::Config(format!("n must be at least 10, got {}", self.n)));
        }
        let finite = [self.linear_intercept, self.linear_slope, self.constant_effect];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("effect coefficients must be finite".into()));
        }
        Ok(())
    }

    /// Treatment effect at propensity `e`.
    pub fn effect(&self, e: f64) -> f64 {
        match self.heterogeneity {
            Heterogeneity::Medium => 8.0 * e * (1.0 - e),
            Heterogeneity::High => 16.0 * e * (1.0 - e) - 1.0,
            Heterogeneity::Linear => self.linear_intercept + self.linear_slope * e,
            Heterogeneity::Constant => self.constant_effect,
        }
    }

    pub fn slopes(&self) -> [f64; 6] {
        ALPHA.map(|a| a * self.gamma)
    }
}

/// One covariate row: equicorrelated normals, the last three dichotomised.
fn draw_covariates(rng: &mut ChaCha8Rng) -> [f64; COVARIATES] {
    let w0: f64 = rng.sample(StandardNormal);
    let mut x = [0.0; COVARIATES];
    for (j, xj) in x.iter_mut().enumerate() {
        let wj: f64 = rng.sample(StandardNormal);
        let v = CORRELATION.sqrt() * w0 + (1.0 - CORRELATION).sqrt() * wj;
        *xj = if j < 3 { v } else { f64::from(u8::from(v < 0.0)) };
    }
    x
}

fn linear_predictor(slopes: &[f64; 6], x: &[f64; COVARIATES]) -> f64 {
    slopes.iter().zip(x).map(|(a, v)| a * v).sum()
}

/// Applies `f` to `draws` covariate rows in fixed chunks, each with its own
/// stream, and returns the chunk results in order.
fn chunked_draws<T: Send>(
    seed: u64,
    draws: usize,
    f: impl Fn(&mut ChaCha8Rng, usize) -> T + Sync,
) -> Vec<T> {
    let chunks = draws.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = replicate_rng(seed, k as u64);
            f(&mut rng, CHUNK.min(draws - k * CHUNK))
        })
        .collect()
}

/// Intercept giving the target treated fraction, by bisection on a fixed
/// Monte-Carlo sample of the linear predictor.
pub fn solve_alpha0(cfg: &SimConfig) -> Result<f64> {
    cfg.validate()?;
    let slopes = cfg.slopes();
    let eta: Vec<f64> = chunked_draws(ALPHA0_SEED, ALPHA0_DRAWS, |rng, m| {
        (0..m).map(|_| linear_predictor(&slopes, &draw_covariates(rng))).collect::<Vec<_>>()
    })
    .concat();
    let frac = |a0: f64| eta.par_chunks(CHUNK).map(|c| c.iter().map(|&v| expit(a0 + v)).sum::<f64>()).sum::<f64>()
        / eta.len() as f64;
    let target = cfg.treated_fraction;
    let (mut lo, mut hi) = (-50.0, 50.0);
    if !(frac(lo) < target && frac(hi) > target) {
        return Err(Error::numerical("alpha0", format!("no intercept reaches treated fraction {target}")));
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if frac(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// A simulated sample together with its true propensities and effects.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub data: Dataset,
    pub true_scores: Vec<f64>,
    pub true_effects: Vec<f64>,
}

/// The data-generating process with its intercept solved once.
#[derive(Debug, Clone)]
pub struct Simulator {
    cfg: SimConfig,
    alpha0: f64,
}

impl Simulator {
    pub fn new(cfg: SimConfig) -> Result<Self> {
        let alpha0 = solve_alpha0(&cfg)?;
        Ok(Self { cfg, alpha0 })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn alpha0(&self) -> f64 {
        self.alpha0
    }

    pub fn score(&self, x: &[f64; COVARIATES]) -> f64 {
        expit(self.alpha0 + linear_predictor(&self.cfg.slopes(), x))
    }

    /// One sample of `cfg.n` units. Covariates and treatment come from one
    /// stream and outcome noise from another.
    pub fn draw(&self, seed: u64) -> Result<SimulatedData> {
        let n = self.cfg.n;
        let mut design = replicate_rng(stage_seed(seed, "design"), 0);
        let mut noise = replicate_rng(stage_seed(seed, "outcome"), 0);
        let mut x = DMatrix::zeros(n, COVARIATES);
        let mut z = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        let mut scores = Vec::with_capacity(n);
        let mut effects = Vec::with_capacity(n);
        for i in 0..n {
            let row = draw_covariates(&mut design);
            let e = self.score(&row);
            let zi = u8::from(design.random::<f64>() < e);
            let delta = self.cfg.effect(e);
            let eps: f64 = noise.sample(StandardNormal);
            let mean = BETA[0] + BETA[1..].iter().zip(&row).map(|(b, v)| b * v).sum::<f64>();
            for (j, v) in row.iter().enumerate() {
                x[(i, j)] = *v;
            }
            z.push(zi);
            y.push(mean + delta * f64::from(zi) + eps);
            scores.push(e);
            effects.push(delta);
        }
        let names = (1..=COVARIATES).map(|j| format!("X{j}")).collect();
        Ok(SimulatedData {
            data: Dataset::new(x, z, y, names)?,
            true_scores: scores,
            true_effects: effects,
        })
    }

    /// `draws` true propensities from the covariate distribution.
    pub fn score_sample(&self, draws: usize, seed: u64) -> Vec<f64> {
        chunked_draws(seed, draws, |rng, m| (0..m).map(|_| self.score(&draw_covariates(rng))).collect::<Vec<_>>())
            .concat()
    }
}

/// One sample from `cfg`, seeded by `cfg.seed`.
pub fn simulate_dataset(cfg: &SimConfig) -> Result<SimulatedData> {
    Simulator::new(cfg.clone())?.draw(cfg.seed)
}

/// Monte-Carlo value of a weighted-population estimand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub spec: EstimandSpec,
    pub tau_true: f64,
    pub mc_samples: usize,
    pub mc_standard_error: f64,
}

#[derive(Clone, Copy, Default)]
struct RatioSums {
    a: f64,
    b: f64,
    aa: f64,
    bb: f64,
    ab: f64,
}

/// `sum(delta h) / sum(h)` over `mc_samples` covariate draws for each spec,
/// with delta-method standard errors. All specs share the draws.
pub fn true_estimands(sim: &Simulator, specs: &[EstimandSpec], mc_samples: usize, seed: u64) -> Result<Vec<TruthRecord>> {
    if mc_samples < 10_000 {
        return Err(Error::InvalidInput(format!("mc_samples must be at least 10000, got {mc_samples}")));
    }
    for s in specs {
        s.validate()?;
    }
    let cfg = sim.config();
    let per_chunk = chunked_draws(stage_seed(seed, "truth"), mc_samples, |rng, m| {
        let mut sums = vec![RatioSums::default(); specs.len()];
        for _ in 0..m {
            let e = sim.score(&draw_covariates(rng));
            let delta = cfg.effect(e);
            for (s, spec) in sums.iter_mut().zip(specs) {
                let h = spec.h(e);
                let a = delta * h;
                s.a += a;
                s.b += h;
                s.aa += a * a;
                s.bb += h * h;
                s.ab += a * h;
            }
        }
        sums
    });
    let nf = mc_samples as f64;
    Ok(specs
        .iter()
        .enumerate()
        .map(|(k, &spec)| {
            let mut t = RatioSums::default();
            for c in &per_chunk {
                t.a += c[k].a;
                t.b += c[k].b;
                t.aa += c[k].aa;
                t.bb += c[k].bb;
                t.ab += c[k].ab;
            }
            let r = t.a / t.b;
            let mb = t.b / nf;
            // Sample variance of a - r h.
            let resid = (t.aa - 2.0 * r * t.ab + r * r * t.bb) / nf;
            let var = resid.max(0.0) * nf / (nf - 1.0);
            TruthRecord {
                spec,
                tau_true: r,
                mc_samples,
                mc_standard_error: (var / nf).sqrt() / mb,
            }
        })
        .collect())
}

pub fn true_estimand(sim: &Simulator, spec: EstimandSpec, mc_samples: usize, seed: u64) -> Result<TruthRecord> {
    Ok(true_estimands(sim, &[spec], mc_samples, seed)?[0])
}
