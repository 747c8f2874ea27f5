//! Numerical check that the weight function proportional to `h*` minimises
//! the asymptotic variance of the weighted estimator when the conditional
//! outcome variances take the matching form.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{SimConfig, Simulator};
use crate::error::{Error, Result};
use crate::estimand::{build_grid, default_axis};

/// A positive function of the propensity score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightFunction {
    /// `e^c (1 - e)^d`, any nonnegative exponents.
    Power { c: f64, d: f64 },
    Constant { value: f64 },
    /// Piecewise-linear through `(e[i], values[i])`, flat beyond the ends.
    Tabulated { e: Vec<f64>, values: Vec<f64> },
}

impl fmt::Display for WeightFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightFunction::Power { c, d } => write!(f, "e^{c}(1-e)^{d}"),
            WeightFunction::Constant { value } => write!(f, "{value}"),
            WeightFunction::Tabulated { e, .. } => write!(f, "tabulated[{}]", e.len()),
        }
    }
}

impl WeightFunction {
    pub fn validate(&self) -> Result<()> {
        match self {
            WeightFunction::Power { c, d } => {
                if !(c.is_finite() && d.is_finite() && *c >= 0.0 && *d >= 0.0) {
                    return Err(Error::Config(format!("power exponents must be nonnegative, got ({c}, {d})")));
                }
            }
            WeightFunction::Constant { value } => {
                if !(value.is_finite() && *value > 0.0) {
                    return Err(Error::Config(format!("constant must be positive, got {value}")));
                }
            }
            WeightFunction::Tabulated { e, values } => {
                if e.len() < 2 || e.len() != values.len() {
                    return Err(Error::Config("tabulated function needs matching e and values, at least 2".into()));
                }
                if e.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::Config("tabulated e must be strictly ascending".into()));
                }
                if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(Error::Config("tabulated values must be positive".into()));
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, s: f64) -> f64 {
        match self {
            WeightFunction::Power { c, d } => s.powf(*c) * (1.0 - s).powf(*d),
            WeightFunction::Constant { value } => *value,
            WeightFunction::Tabulated { e, values } => {
                let n = e.len();
                if s <= e[0] {
                    return values[0];
                }
                if s >= e[n - 1] {
                    return values[n - 1];
                }
                let i = e.partition_point(|&x| x <= s) - 1;
                let t = (s - e[i]) / (e[i + 1] - e[i]);
                values[i] + t * (values[i + 1] - values[i])
            }
        }
    }

    /// Samples `f` on `points` equally spaced interior scores.
    pub fn tabulate(f: impl Fn(f64) -> f64, points: usize) -> Self {
        let e: Vec<f64> = (0..points).map(|i| (i as f64 + 0.5) / points as f64).collect();
        let values = e.iter().map(|&s| f(s)).collect();
        WeightFunction::Tabulated { e, values }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifierConfig {
    /// Covariate law whose propensity distribution is integrated over.
    pub gamma: f64,
    pub treated_fraction: f64,
    pub h_star: WeightFunction,
    pub k0: WeightFunction,
    pub k1: WeightFunction,
    pub v: f64,
    /// Defaults to the `(c, d)` lattice plus `h_star` itself when no
    /// lattice member is proportional to it.
    pub candidates: Option<Vec<WeightFunction>>,
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            treated_fraction: 0.5,
            h_star: WeightFunction::Power { c: 1.0, d: 1.0 },
            k0: WeightFunction::Power { c: 1.0, d: 0.0 },
            k1: WeightFunction::Power { c: 0.0, d: 1.0 },
            v: 1.0,
            candidates: None,
            mc_samples: 1_000_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateVariance {
    pub label: String,
    pub function: WeightFunction,
    /// `(1/C_h^2) E[h^2 (v1/e + v0/(1-e))]`
    pub functional: f64,
    /// `(v/C_h^2) E[h^2 / h*]`
    pub simplified: f64,
    pub mc_standard_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierReport {
    pub config: VerifierConfig,
    pub candidates: Vec<CandidateVariance>,
    pub argmin: usize,
    /// Candidate proportional to `h_star`.
    pub target: usize,
    /// `functional[target] - functional[argmin]` in units of the target's
    /// Monte-Carlo standard error.
    pub gap_in_se: f64,
    pub max_form_discrepancy: f64,
    pub passed: bool,
}

const PROBES: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

fn proportional(a: &WeightFunction, b: &WeightFunction) -> bool {
    let r: Vec<f64> = PROBES.iter().map(|&s| a.eval(s) / b.eval(s)).collect();
    r.iter().all(|x| ((x - r[0]) / r[0]).abs() < 1e-3)
}

fn label_of(f: &WeightFunction) -> String {
    match f {
        WeightFunction::Power { c, d } => format!("({c}, {d})"),
        other => other.to_string(),
    }
}

/// Evaluates the asymptotic-variance functional for every candidate on one
/// set of propensity draws and checks the minimiser.
pub fn verify_min_variance(cfg: &VerifierConfig) -> Result<VerifierReport> {
    for f in [&cfg.h_star, &cfg.k0, &cfg.k1] {
        f.validate()?;
    }
    if !(cfg.v.is_finite() && cfg.v > 0.0) {
        return Err(Error::Config(format!("v must be positive, got {}", cfg.v)));
    }
    if cfg.mc_samples < 1000 {
        return Err(Error::Config("mc_samples must be at least 1000".into()));
    }
    let mut candidates = match &cfg.candidates {
        Some(c) if c.is_empty() => return Err(Error::Config("candidate list is empty".into())),
        Some(c) => c.clone(),
        None => build_grid(&default_axis(), &default_axis())?
            .into_iter()
            .map(|s| WeightFunction::Power { c: s.c, d: s.d })
            .collect(),
    };
    for c in &candidates {
        c.validate()?;
    }
    let target = match candidates.iter().position(|c| proportional(c, &cfg.h_star)) {
        Some(t) => t,
        None => {
            candidates.push(cfg.h_star.clone());
            candidates.len() - 1
        }
    };

    let sim = Simulator::new(SimConfig {
        gamma: cfg.gamma,
        treated_fraction: cfg.treated_fraction,
        ..SimConfig::default()
    })?;
    let e = sim.score_sample(cfg.mc_samples, cfg.seed);
    // Variance factors shared by every candidate.
    let (g, inv_hstar): (Vec<f64>, Vec<f64>) = e
        .par_iter()
        .map(|&s| {
            let hs = cfg.h_star.eval(s);
            let (k0, k1) = (cfg.k0.eval(s), cfg.k1.eval(s));
            let v0 = cfg.v * k0 * (1.0 - s) / (hs * (k0 + k1));
            let v1 = cfg.v * k1 * s / (hs * (k0 + k1));
            (v1 / s + v0 / (1.0 - s), 1.0 / hs)
        })
        .unzip();
    if g.iter().chain(&inv_hstar).any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(Error::Config("h_star, k0 and k1 must be positive on the score support".into()));
    }
    let nf = e.len() as f64;
    let results: Vec<CandidateVariance> = candidates
        .par_iter()
        .map(|f| {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab, mut ss) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
            for ((&s, &gi), &ih) in e.iter().zip(&g).zip(&inv_hstar) {
                let h = f.eval(s);
                let a = h * h * gi;
                sa += a;
                sb += h;
                saa += a * a;
                sbb += h * h;
                sab += a * h;
                ss += h * h * ih;
            }
            let (ma, mb) = (sa / nf, sb / nf);
            let functional = ma / (mb * mb);
            let simplified = cfg.v * (ss / nf) / (mb * mb);
            // Delta method for E[A] / E[B]^2.
            let (da, db) = (1.0 / (mb * mb), -2.0 * ma / (mb * mb * mb));
            let var_a = saa / nf - ma * ma;
            let var_b = sbb / nf - mb * mb;
            let cov = sab / nf - ma * mb;
            let var = (da * da * var_a + db * db * var_b + 2.0 * da * db * cov).max(0.0) / nf;
            CandidateVariance {
                label: label_of(f),
                function: f.clone(),
                functional,
                simplified,
                mc_standard_error: var.sqrt(),
            }
        })
        .collect();
    if results.iter().any(|r| !r.functional.is_finite()) {
        return Err(Error::numerical("verifier", "non-finite variance functional"));
    }
    let argmin = (0..results.len())
        .min_by(|&a, &b| results[a].functional.total_cmp(&results[b].functional))
        .unwrap_or(0);
    let gap = results[target].functional - results[argmin].functional;
    let se = results[target].mc_standard_error;
    let gap_in_se = if gap == 0.0 { 0.0 } else { gap / se };
    let max_form_discrepancy = results
        .iter()
        .map(|r| ((r.functional - r.simplified) / r.functional).abs())
        .fold(0.0, f64::max);
    Ok(VerifierReport {
        config: cfg.clone(),
        passed: gap_in_se <= 2.0 && max_form_discrepancy < 1e-10,
        candidates: results,
        argmin,
        target,
        gap_in_se,
        max_form_discrepancy,
    })
}
