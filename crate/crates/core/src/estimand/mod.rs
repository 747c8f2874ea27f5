//! The `h(c, d)` estimand family, balancing weights and the weighted
//! difference-in-means estimator.

mod bootstrap;

pub use bootstrap::{bootstrap_grid, bootstrap_se, BootstrapOptions, BootstrapOutcome, ScoreSource};

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TREATED};
use crate::error::{Error, Result};

/// A member of the tilting family `h(e) = e^c (1 - e)^d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimandSpec {
    pub c: f64,
    pub d: f64,
}

impl EstimandSpec {
    pub const ATE: Self = Self { c: 0.0, d: 0.0 };
    pub const ATT: Self = Self { c: 1.0, d: 0.0 };
    pub const ATC: Self = Self { c: 0.0, d: 1.0 };
    pub const ATO: Self = Self { c: 1.0, d: 1.0 };

    pub fn new(c: f64, d: f64) -> Result<Self> {
        let spec = Self { c, d };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| (0.0..=1.0).contains(&v);
        if ok(self.c) && ok(self.d) {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "estimand ({}, {}) lies outside [0, 1]^2",
                self.c, self.d
            )))
        }
    }

    /// ATE, ATT, ATC or ATO when the spec is one of the corners.
    pub fn alias(&self) -> Option<&'static str> {
        match (self.c, self.d) {
            (c, d) if c == 0.0 && d == 0.0 => Some("ATE"),
            (c, d) if c == 1.0 && d == 0.0 => Some("ATT"),
            (c, d) if c == 0.0 && d == 1.0 => Some("ATC"),
            (c, d) if c == 1.0 && d == 1.0 => Some("ATO"),
            _ => None,
        }
    }

    /// `e^c (1 - e)^d` without range checks.
    #[inline]
    pub fn h(&self, e: f64) -> f64 {
        e.powf(self.c) * (1.0 - e).powf(self.d)
    }

    /// Score at which `h` peaks, `c / (c + d)`; `None` at the ATE corner.
    pub fn peak(&self) -> Option<f64> {
        let s = self.c + self.d;
        (s > 0.0).then(|| self.c / s)
    }
}

impl fmt::Display for EstimandSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.alias() {
            Some(a) => write!(f, "{a}"),
            None => write!(f, "({}, {})", self.c, self.d),
        }
    }
}

/// Accepts an alias (`ATE`, `att`, ...) or `c,d`.
impl FromStr for EstimandSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "ATE" => return Ok(Self::ATE),
            "ATT" => return Ok(Self::ATT),
            "ATC" => return Ok(Self::ATC),
            "ATO" => return Ok(Self::ATO),
            _ => {}
        }
        let parts: Vec<&str> = s.trim().trim_matches(['(', ')']).split(',').collect();
        if parts.len() != 2 {
            return Err(Error::Config(format!("cannot parse estimand `{s}`")));
        }
        let num = |p: &str| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("cannot parse estimand `{s}`")))
        };
        Self::new(num(parts[0])?, num(parts[1])?).map_err(|e| Error::Config(e.to_string()))
    }
}

/// `e^c (1 - e)^d` with `0^0 = 1`.
pub fn h_value(e: f64, spec: EstimandSpec) -> Result<f64> {
    if !(e > 0.0 && e < 1.0) {
        return Err(Error::InvalidInput(format!("score {e} is not inside (0, 1)")));
    }
    spec.validate()?;
    Ok(spec.h(e))
}

/// Balancing weights of every unit under its own arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSet {
    pub w: Vec<f64>,
    /// (control total, treated total).
    pub arm_totals: (f64, f64),
    pub normalized: bool,
}

impl WeightSet {
    /// Wraps externally supplied weights.
    pub fn from_raw(w: Vec<f64>, treatment: &[u8]) -> Result<Self> {
        if w.len() != treatment.len() {
            return Err(Error::InvalidInput(format!(
                "{} weights for {} units",
                w.len(),
                treatment.len()
            )));
        }
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidInput("weights must be finite and nonnegative".into()));
        }
        let arm_totals = arm_sums(&w, treatment);
        Ok(Self {
            w,
            arm_totals,
            normalized: false,
        })
    }

    /// Rescales each arm so that its weights sum to the arm size.
    pub fn normalize(mut self, treatment: &[u8]) -> Result<Self> {
        let (s0, s1) = self.arm_totals;
        if !(s0 > 0.0 && s1 > 0.0) {
            return Err(Error::numerical("weights", "an arm has zero total weight"));
        }
        let n1 = treatment.iter().filter(|&&z| z == TREATED).count() as f64;
        let n0 = treatment.len() as f64 - n1;
        let (f0, f1) = (n0 / s0, n1 / s1);
        let constant = |arm: u8| {
            let mut it = self.w.iter().zip(treatment).filter(|p| *p.1 == arm).map(|p| *p.0);
            let first = it.next();
            it.all(|w| Some(w) == first)
        };
        let (c0, c1) = (constant(1 - TREATED), constant(TREATED));
        for (w, &z) in self.w.iter_mut().zip(treatment) {
            let (f, flat) = if z == TREATED { (f1, c1) } else { (f0, c0) };
            *w = if flat { 1.0 } else { *w * f };
        }
        self.arm_totals = arm_sums(&self.w, treatment);
        self.normalized = true;
        Ok(self)
    }

    /// Kish effective sample sizes (treated, control).
    pub fn effective_sizes(&self, treatment: &[u8]) -> (f64, f64) {
        let mut acc = [[0.0f64; 2]; 2];
        for (&w, &z) in self.w.iter().zip(treatment) {
            let a = &mut acc[usize::from(z == TREATED)];
            a[0] += w;
            a[1] += w * w;
        }
        let ess = |a: [f64; 2]| if a[1] > 0.0 { a[0] * a[0] / a[1] } else { 0.0 };
        (ess(acc[1]), ess(acc[0]))
    }
}

fn arm_sums(w: &[f64], treatment: &[u8]) -> (f64, f64) {
    let (mut s0, mut s1) = (0.0, 0.0);
    for (&wi, &z) in w.iter().zip(treatment) {
        if z == TREATED {
            s1 += wi;
        } else {
            s0 += wi;
        }
    }
    (s0, s1)
}

/// Treated units get `h(e)/e`, controls `h(e)/(1 - e)`.
pub fn compute_weights(
    scores: &[f64],
    treatment: &[u8],
    spec: EstimandSpec,
    normalize: bool,
) -> Result<WeightSet> {
    if scores.len() != treatment.len() {
        return Err(Error::InvalidInput(format!(
            "{} scores for {} units",
            scores.len(),
            treatment.len()
        )));
    }
    if let Some(e) = scores.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
        return Err(Error::InvalidInput(format!("score {e} is not inside (0, 1)")));
    }
    spec.validate()?;
    let w = scores
        .iter()
        .zip(treatment)
        .map(|(&e, &z)| raw_weight(spec.h(e), e, z))
        .collect();
    let set = WeightSet::from_raw(w, treatment)?;
    if normalize {
        set.normalize(treatment)
    } else {
        Ok(set)
    }
}

#[inline]
fn raw_weight(h: f64, e: f64, z: u8) -> f64 {
    if z == TREATED {
        h / e
    } else {
        h / (1.0 - e)
    }
}

/// Precomputed `e^c` and `(1 - e)^d` for every unit and axis value, so the
/// weights of a full grid cost one multiply per unit and spec.
#[derive(Debug, Clone)]
pub struct WeightTable {
    c_axis: Vec<f64>,
    d_axis: Vec<f64>,
    pow_c: Vec<Vec<f64>>,
    pow_d: Vec<Vec<f64>>,
    scores: Vec<f64>,
}

impl WeightTable {
    pub fn new(scores: &[f64], c_axis: &[f64], d_axis: &[f64]) -> Result<Self> {
        if let Some(e) = scores.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
            return Err(Error::InvalidInput(format!("score {e} is not inside (0, 1)")));
        }
        let pow_c = c_axis
            .iter()
            .map(|&c| scores.iter().map(|e| e.powf(c)).collect())
            .collect();
        let pow_d = d_axis
            .iter()
            .map(|&d| scores.iter().map(|e| (1.0 - e).powf(d)).collect())
            .collect();
        Ok(Self {
            c_axis: c_axis.to_vec(),
            d_axis: d_axis.to_vec(),
            pow_c,
            pow_d,
            scores: scores.to_vec(),
        })
    }

    pub fn spec(&self, k: usize, l: usize) -> EstimandSpec {
        EstimandSpec {
            c: self.c_axis[k],
            d: self.d_axis[l],
        }
    }

    /// Weighted difference in means for `spec(k, l)` without materialising
    /// the weights.
    pub fn tau(&self, k: usize, l: usize, treatment: &[u8], y: &[f64]) -> Result<f64> {
        let (pc, pd) = (&self.pow_c[k], &self.pow_d[l]);
        let origin = y.first().copied().unwrap_or(0.0);
        let mut acc = [[0.0f64; 2]; 2];
        for i in 0..self.scores.len() {
            let z = treatment[i];
            let w = raw_weight(pc[i] * pd[i], self.scores[i], z);
            let a = &mut acc[usize::from(z == TREATED)];
            a[0] += w * (y[i] - origin);
            a[1] += w;
        }
        if !(acc[0][1] > 0.0 && acc[1][1] > 0.0) {
            return Err(Error::numerical("estimate", "an arm has zero total weight"));
        }
        Ok(acc[1][0] / acc[1][1] - acc[0][0] / acc[0][1])
    }

    /// Same values as [`compute_weights`] for `spec(k, l)`, bit for bit.
    pub fn weights(&self, k: usize, l: usize, treatment: &[u8], normalize: bool) -> Result<WeightSet> {
        let (pc, pd) = (&self.pow_c[k], &self.pow_d[l]);
        let w = (0..self.scores.len())
            .map(|i| raw_weight(pc[i] * pd[i], self.scores[i], treatment[i]))
            .collect();
        let set = WeightSet::from_raw(w, treatment)?;
        if normalize {
            set.normalize(treatment)
        } else {
            Ok(set)
        }
    }
}

/// A weighted effect estimate for one estimand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub estimand: EstimandSpec,
    pub tau_hat: f64,
    pub se_boot: Option<f64>,
    pub n_eff_treated: f64,
    pub n_eff_control: f64,
}

/// Ratio-normalised difference of weighted arm means.
pub fn estimate_tau(data: &Dataset, spec: EstimandSpec, weights: &WeightSet) -> Result<EffectEstimate> {
    let tau_hat = weighted_difference(data.outcome(), data.treatment(), &weights.w)?;
    let (n_eff_treated, n_eff_control) = weights.effective_sizes(data.treatment());
    Ok(EffectEstimate {
        estimand: spec,
        tau_hat,
        se_boot: None,
        n_eff_treated,
        n_eff_control,
    })
}

pub(crate) fn weighted_difference(y: &[f64], treatment: &[u8], w: &[f64]) -> Result<f64> {
    if y.len() != w.len() || treatment.len() != w.len() {
        return Err(Error::InvalidInput("weights do not match the data".into()));
    }
    // Means are taken about y[0] so a constant outcome gives exactly zero.
    let origin = y.first().copied().unwrap_or(0.0);
    let mut acc = [[0.0f64; 2]; 2];
    for ((&yi, &z), &wi) in y.iter().zip(treatment).zip(w) {
        let a = &mut acc[usize::from(z == TREATED)];
        a[0] += wi * (yi - origin);
        a[1] += wi;
    }
    if !(acc[0][1] > 0.0 && acc[1][1] > 0.0) {
        return Err(Error::numerical("estimate", "an arm has zero total weight"));
    }
    Ok(acc[1][0] / acc[1][1] - acc[0][0] / acc[0][1])
}

/// `v = k / steps` for `k = 0..=steps`.
pub fn uniform_axis(steps: usize) -> Vec<f64> {
    (0..=steps).map(|k| k as f64 / steps as f64).collect()
}

/// The 21 values `0, 0.05, ..., 1`.
pub fn default_axis() -> Vec<f64> {
    uniform_axis(20)
}

/// Cartesian product of the axes, `c` varying slowest.
pub fn build_grid(c_values: &[f64], d_values: &[f64]) -> Result<Vec<EstimandSpec>> {
    if c_values.is_empty() || d_values.is_empty() {
        return Err(Error::Config("grid axes must be nonempty".into()));
    }
    let mut grid = Vec::with_capacity(c_values.len() * d_values.len());
    for &c in c_values {
        for &d in d_values {
            grid.push(EstimandSpec::new(c, d).map_err(|e| Error::Config(e.to_string()))?);
        }
    }
    Ok(grid)
}

/// CSV with columns `c,d,tau_hat,se_boot,n_eff_treated,n_eff_control`.
pub fn write_estimates_csv<W: Write>(rows: &[EffectEstimate], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["c", "d", "tau_hat", "se_boot", "n_eff_treated", "n_eff_control"])?;
    for r in rows {
        w.write_record([
            r.estimand.c.to_string(),
            r.estimand.d.to_string(),
            r.tau_hat.to_string(),
            r.se_boot.map(|s| s.to_string()).unwrap_or_default(),
            r.n_eff_treated.to_string(),
            r.n_eff_control.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<estimates csv>", e))?;
    Ok(())
}
