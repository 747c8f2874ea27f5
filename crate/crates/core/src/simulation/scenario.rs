//! Replicated selection study on simulated data.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{true_estimands, SimConfig, Simulator, TruthRecord};
use crate::error::{Error, Result};
use crate::estimand::{build_grid, compute_weights, default_axis, weighted_difference, EstimandSpec};
use crate::grid::{evaluate_grid_with_model, GridOptions};
use crate::propensity::{fit_propensity, DesignSpec};
use crate::rng::stage_seed;
use crate::surface::{default_levels, select_from_grid, RegionMode, DEFAULT_RESOLUTION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub sim: SimConfig,
    pub replicates: usize,
    pub c_axis: Vec<f64>,
    pub d_axis: Vec<f64>,
    pub permutation_replicates: usize,
    pub bootstrap_replicates: usize,
    pub truth_samples: usize,
    pub levels: Vec<f64>,
    pub resolution: usize,
    pub region_mode: RegionMode,
    pub standardize: bool,
    pub refit_bootstrap: bool,
    /// Run the contour selection in every replicate. Needs both replicate
    /// counts to be positive.
    pub select: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            replicates: 100,
            c_axis: default_axis(),
            d_axis: default_axis(),
            permutation_replicates: 500,
            bootstrap_replicates: 500,
            truth_samples: 1_000_000,
            levels: default_levels(),
            resolution: DEFAULT_RESOLUTION,
            region_mode: RegionMode::Band,
            standardize: true,
            refit_bootstrap: true,
            select: true,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if self.resolution < 2 {
            return Err(Error::Config("resolution must be at least 2".into()));
        }
        build_grid(&self.c_axis, &self.d_axis).map_err(|e| Error::Config(e.to_string()))?;
        crate::surface::validate_levels(&self.levels)?;
        if self.select && (self.permutation_replicates == 0 || self.bootstrap_replicates < 2) {
            return Err(Error::Config(
                "selection needs permutation_replicates > 0 and bootstrap_replicates >= 2".into(),
            ));
        }
        Ok(())
    }
}

/// Error of one estimator against the true ATE over the replicates that
/// produced it. `variance` divides by the count, so `mse = bias^2 + variance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub label: String,
    /// Lower bound of the mismatch band for selected estimands.
    pub band_lower: Option<f64>,
    pub count: usize,
    pub mean_estimate: f64,
    pub bias: f64,
    pub variance: f64,
    pub mse: f64,
    /// Average selected `(c, d)`.
    pub mean_c: f64,
    pub mean_d: f64,
}

/// Per-spec averages over the successful replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecAverage {
    pub spec: EstimandSpec,
    pub mean_tau: f64,
    pub mean_p_mismatch: Option<f64>,
    pub mean_p_statbias: Option<f64>,
    pub mean_se_boot: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub config: ScenarioConfig,
    pub alpha0: f64,
    pub truth_ate: TruthRecord,
    pub truth_ato: TruthRecord,
    pub completed: usize,
    pub failed: usize,
    pub estimators: Vec<EstimatorSummary>,
    pub spec_averages: Vec<SpecAverage>,
}

struct Replicate {
    ate: f64,
    ato: f64,
    /// `(band index, band lower, spec, tau)`
    selected: Vec<(usize, f64, EstimandSpec, f64)>,
    tau: Vec<f64>,
    p_mismatch: Option<Vec<f64>>,
    p_statbias: Option<Vec<f64>>,
    se: Option<Vec<f64>>,
}

fn tau_at(scores: &[f64], z: &[u8], y: &[f64], spec: EstimandSpec) -> Result<f64> {
    let w = compute_weights(scores, z, spec, true)?;
    weighted_difference(y, z, &w.w)
}

fn run_replicate(sim: &Simulator, cfg: &ScenarioConfig, seed: u64) -> Result<Replicate> {
    let sample = sim.draw(seed)?;
    let data = &sample.data;
    let model = fit_propensity(data, &DesignSpec::main_effects())?;
    let opts = GridOptions {
        c_axis: cfg.c_axis.clone(),
        d_axis: cfg.d_axis.clone(),
        permutation_replicates: cfg.permutation_replicates,
        bootstrap_replicates: cfg.bootstrap_replicates,
        standardize: cfg.standardize,
        refit_bootstrap: cfg.refit_bootstrap,
        seed,
        keep_nulls: false,
    };
    let out = evaluate_grid_with_model(data, &model, &opts)?;
    let scores = model.predict(data)?;
    let (z, y) = (data.treatment(), data.outcome());
    let mut selected = Vec::new();
    if cfg.select {
        let run = select_from_grid(&out.grid, &cfg.levels, cfg.resolution, cfg.region_mode, false)?;
        for e in &run.selection.entries {
            selected.push((e.band, e.lower, e.spec, tau_at(&scores, z, y, e.spec)?));
        }
    }
    let rows = &out.grid.rows;
    let collect = |f: fn(&crate::grid::GridRow) -> Option<f64>| rows.iter().map(f).collect::<Option<Vec<_>>>();
    Ok(Replicate {
        ate: tau_at(&scores, z, y, EstimandSpec::ATE)?,
        ato: tau_at(&scores, z, y, EstimandSpec::ATO)?,
        selected,
        tau: rows.iter().map(|r| r.tau_hat).collect(),
        p_mismatch: collect(|r| r.p_mismatch),
        p_statbias: collect(|r| r.p_statbias),
        se: collect(|r| r.se_boot),
    })
}

fn summarize(label: String, band_lower: Option<f64>, values: &[(f64, EstimandSpec)], truth: f64) -> EstimatorSummary {
    let k = values.len() as f64;
    let mean = values.iter().map(|v| v.0).sum::<f64>() / k;
    let variance = values.iter().map(|v| (v.0 - mean).powi(2)).sum::<f64>() / k;
    let mse = values.iter().map(|v| (v.0 - truth).powi(2)).sum::<f64>() / k;
    EstimatorSummary {
        label,
        band_lower,
        count: values.len(),
        mean_estimate: mean,
        bias: mean - truth,
        variance,
        mse,
        mean_c: values.iter().map(|v| v.1.c).sum::<f64>() / k,
        mean_d: values.iter().map(|v| v.1.d).sum::<f64>() / k,
    }
}

fn band_label(levels: &[f64], band: usize) -> String {
    let edges = crate::surface::band_edges(levels).unwrap_or_default();
    let open = if band == 0 { '[' } else { '(' };
    format!("{open}{}, {}]", edges[band], edges[band + 1])
}

/// Simulates `cfg.replicates` datasets, evaluates the grid and selection on
/// each and scores every estimator against the Monte-Carlo ATE.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioReport> {
    cfg.validate()?;
    let sim = Simulator::new(cfg.sim.clone())?;
    let master = cfg.sim.seed;
    let truth = true_estimands(&sim, &[EstimandSpec::ATE, EstimandSpec::ATO], cfg.truth_samples, master)?;
    let results: Vec<Option<Replicate>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let seed = stage_seed(master, &format!("replicate-{r}"));
            match run_replicate(&sim, cfg, seed) {
                Ok(rep) => Some(rep),
                Err(e) => {
                    log::warn!("replicate {r} failed: {e}");
                    None
                }
            }
        })
        .collect();
    let ok: Vec<&Replicate> = results.iter().flatten().collect();
    if ok.is_empty() {
        return Err(Error::numerical("scenario", "every replicate failed"));
    }
    let tau_ate = truth[0].tau_true;

    let mut estimators = Vec::new();
    let ate: Vec<_> = ok.iter().map(|r| (r.ate, EstimandSpec::ATE)).collect();
    estimators.push(summarize("ATE".into(), None, &ate, tau_ate));
    let mut bands: BTreeMap<usize, (f64, Vec<(f64, EstimandSpec)>)> = BTreeMap::new();
    for r in &ok {
        for &(band, lower, spec, tau) in &r.selected {
            bands.entry(band).or_insert_with(|| (lower, Vec::new())).1.push((tau, spec));
        }
    }
    for (band, (lower, values)) in bands {
        estimators.push(summarize(
            format!("selected {}", band_label(&cfg.levels, band)),
            Some(lower),
            &values,
            tau_ate,
        ));
    }
    let ato: Vec<_> = ok.iter().map(|r| (r.ato, EstimandSpec::ATO)).collect();
    estimators.push(summarize("ATO".into(), None, &ato, tau_ate));

    let specs = build_grid(&cfg.c_axis, &cfg.d_axis)?;
    let k = ok.len() as f64;
    let mean_of = |g: usize, f: &dyn Fn(&Replicate) -> Option<&Vec<f64>>| -> Option<f64> {
        let mut s = 0.0;
        for r in &ok {
            s += f(r)?[g];
        }
        Some(s / k)
    };
    let spec_averages = specs
        .iter()
        .enumerate()
        .map(|(g, &spec)| SpecAverage {
            spec,
            mean_tau: ok.iter().map(|r| r.tau[g]).sum::<f64>() / k,
            mean_p_mismatch: mean_of(g, &|r| r.p_mismatch.as_ref()),
            mean_p_statbias: mean_of(g, &|r| r.p_statbias.as_ref()),
            mean_se_boot: mean_of(g, &|r| r.se.as_ref()),
        })
        .collect();

    Ok(ScenarioReport {
        config: cfg.clone(),
        alpha0: sim.alpha0(),
        truth_ate: truth[0],
        truth_ato: truth[1],
        completed: ok.len(),
        failed: results.len() - ok.len(),
        estimators,
        spec_averages,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ScenarioReport {
    pub fn estimator(&self, label: &str) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|e| e.label == label)
    }

    /// The selected-estimand row whose band starts at `lower`.
    pub fn selected(&self, lower: f64) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|e| e.band_lower == Some(lower))
    }

    /// One row per estimator with the scenario keys repeated.
    pub fn write_table_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "gamma",
            "treated_fraction",
            "heterogeneity",
            "n",
            "estimator",
            "band_lower",
            "count",
            "replicates",
            "mean_estimate",
            "tau_true",
            "bias",
            "variance",
            "mse",
            "mean_c",
            "mean_d",
        ])?;
        let s = &self.config.sim;
        let het = serde_json::to_value(s.heterogeneity)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        for e in &self.estimators {
            w.write_record([
                s.gamma.to_string(),
                s.treated_fraction.to_string(),
                het.clone(),
                s.n.to_string(),
                e.label.clone(),
                opt(e.band_lower),
                e.count.to_string(),
                self.completed.to_string(),
                e.mean_estimate.to_string(),
                self.truth_ate.tau_true.to_string(),
                e.bias.to_string(),
                e.variance.to_string(),
                e.mse.to_string(),
                e.mean_c.to_string(),
                e.mean_d.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<scenario csv>", e))?;
        Ok(())
    }

    pub fn write_spec_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["c", "d", "mean_tau", "mean_p_mismatch", "mean_p_statbias", "mean_se_boot"])?;
        for a in &self.spec_averages {
            w.write_record([
                a.spec.c.to_string(),
                a.spec.d.to_string(),
                a.mean_tau.to_string(),
                opt(a.mean_p_mismatch),
                opt(a.mean_p_statbias),
                opt(a.mean_se_boot),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<scenario csv>", e))?;
        Ok(())
    }
}
