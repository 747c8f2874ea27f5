//! End-to-end commands writing their artifacts and a manifest into an
//! output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{RunConfig, SimulateConfig, VerifyConfig};
use crate::data::{compute_smd, read_csv, BalanceReport, Ingested};
use crate::energy::write_null_csv;
use crate::error::{Error, Result};
use crate::estimand::{compute_weights, weighted_difference};
use crate::grid::{evaluate_grid_with_model, GridEvaluation, GridOutput, Metric};
use crate::propensity::{fit_propensity, PropensityModel};
use crate::rng::stage_seed;
use crate::simulation::{run_scenario, verify_min_variance, Heterogeneity, ScenarioReport, VerifierReport};
use crate::surface::{isoline, select_from_grid, spline_surface, Polyline, SelectionResult, SelectionRun};
use crate::svg;

pub const TOOL: &str = env!("CARGO_PKG_NAME");
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: PathBuf,
    pub sha256: String,
    pub rows_read: usize,
    pub rows_dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub file: String,
    pub sha256: String,
}

/// What was run, with what, and what it wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub stage_seeds: BTreeMap<String, u64>,
    pub config: serde_json::Value,
    pub input: Option<InputRecord>,
    pub outputs: Vec<OutputRecord>,
}

/// Output directory that records a hash of everything written to it.
struct Outputs {
    root: PathBuf,
    files: Vec<OutputRecord>,
}

impl Outputs {
    fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(Self { root: root.to_path_buf(), files: Vec::new() })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.files.push(OutputRecord { file: name.into(), sha256: sha256_hex(bytes) });
        Ok(())
    }

    fn write_with(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Data(format!("{name}: {e}")))?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    fn finish(mut self, name: &str, mut manifest: Manifest) -> Result<Manifest> {
        manifest.outputs = std::mem::take(&mut self.files);
        self.json(name, &manifest)?;
        Ok(manifest)
    }
}

fn manifest(command: &str, seed: u64, config: &impl Serialize, stages: &[&str], input: Option<InputRecord>) -> Result<Manifest> {
    Ok(Manifest {
        tool: TOOL.into(),
        version: VERSION.into(),
        command: command.into(),
        seed,
        stage_seeds: stages.iter().map(|s| (s.to_string(), stage_seed(seed, s))).collect(),
        config: serde_json::to_value(config).map_err(|e| Error::Data(e.to_string()))?,
        input,
        outputs: Vec::new(),
    })
}

fn load_input(cfg: &RunConfig) -> Result<(Ingested, InputRecord)> {
    let bytes = fs::read(&cfg.input).map_err(|e| Error::io(&cfg.input, e))?;
    let ingested = read_csv(bytes.as_slice(), &cfg.schema)?;
    if ingested.rows_dropped > 0 {
        log::warn!("dropped {} of {} rows with missing values", ingested.rows_dropped, ingested.rows_read);
    }
    let record = InputRecord {
        path: cfg.input.clone(),
        sha256: sha256_hex(&bytes),
        rows_read: ingested.rows_read,
        rows_dropped: ingested.rows_dropped,
    };
    Ok((ingested, record))
}

pub struct EvaluateOutcome {
    pub output: GridOutput,
    pub manifest: Manifest,
}

/// Ingests the data, fits the propensity model and evaluates the grid.
/// Writes `grid.csv`, `propensity.json`, the three smoothed surfaces and
/// `manifest.json`.
pub fn evaluate(cfg: &RunConfig, seed: u64, out: &Path) -> Result<EvaluateOutcome> {
    cfg.validate()?;
    let (ingested, input) = load_input(cfg)?;
    let data = &ingested.dataset;
    log::info!("ingested {} units, {} covariates", data.n(), data.p());
    let model = fit_propensity(data, &cfg.propensity)?;
    let output = evaluate_grid_with_model(data, &model, &cfg.grid_options(seed))?;
    let mut files = Outputs::create(out)?;
    files.write_with("grid.csv", |b| output.grid.write_csv(b))?;
    files.write("propensity.json", model.to_json()?.as_bytes())?;
    let run = select_from_grid(&output.grid, &cfg.levels, cfg.resolution, cfg.region_mode, cfg.raw_contours)?;
    files.write_with("surface_mismatch.csv", |b| run.mismatch.write_csv(b))?;
    files.write_with("surface_statbias.csv", |b| run.statbias.write_csv(b))?;
    files.write_with("surface_se.csv", |b| run.se.write_csv(b))?;
    files.json("kriging.json", &run.kriging)?;
    if let Some(nulls) = &output.nulls {
        let labelled = |v: &[Vec<f64>]| -> Vec<(String, Vec<f64>)> {
            output.grid.rows.iter().zip(v).map(|(r, s)| (format!("{},{}", r.spec.c, r.spec.d), s.clone())).collect()
        };
        for (name, cols) in [("nulls_mismatch_control.csv", labelled(&nulls.mismatch_control)), ("nulls_mismatch_treated.csv", labelled(&nulls.mismatch_treated))] {
            let refs: Vec<(String, &[f64])> = cols.iter().map(|(l, v)| (l.clone(), v.as_slice())).collect();
            files.write_with(name, |b| write_null_csv(&refs, b))?;
        }
        files.write_with("nulls_statbias.csv", |b| write_null_csv(&[("statbias".into(), &nulls.statbias)], b))?;
    }
    if output.bootstrap_redraws > 0 {
        log::info!("bootstrap redrew {} resamples", output.bootstrap_redraws);
    }
    let m = manifest("evaluate", seed, cfg, &["mismatch", "statbias", "bootstrap"], Some(input))?;
    let manifest = files.finish("manifest.json", m)?;
    Ok(EvaluateOutcome { output, manifest })
}

#[derive(Debug, Clone, Serialize)]
struct ContourSet<'a> {
    level: f64,
    lines: &'a [Polyline],
}

#[derive(Debug, Clone, Serialize)]
struct Contours<'a> {
    levels: &'a [f64],
    mismatch: Vec<ContourSet<'a>>,
    statbias: Vec<ContourSet<'a>>,
}

/// How the effect estimates in a selection were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauSource {
    /// Recomputed from the data at the selected spec.
    Exact,
    /// Spline-interpolated from the grid estimates.
    Interpolated,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionReport {
    pub tau_source: TauSource,
    #[serde(flatten)]
    pub selection: SelectionResult,
}

pub struct SelectOutcome {
    pub report: SelectionReport,
    pub run: SelectionRun,
    pub manifest: Manifest,
}

fn read_manifest(run_dir: &Path) -> Result<Manifest> {
    let path = run_dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Exact estimates when the recorded input is still present and unchanged.
fn exact_taus(cfg: &RunConfig, recorded: Option<&InputRecord>, selection: &SelectionResult) -> Result<Option<Vec<f64>>> {
    let Some(rec) = recorded else { return Ok(None) };
    let Ok(bytes) = fs::read(&rec.path) else { return Ok(None) };
    if sha256_hex(&bytes) != rec.sha256 {
        log::warn!("{} changed since evaluation; interpolating estimates", rec.path.display());
        return Ok(None);
    }
    let data = read_csv(bytes.as_slice(), &cfg.schema)?.dataset;
    let model: PropensityModel = fit_propensity(&data, &cfg.propensity)?;
    let scores = model.predict(&data)?;
    let (z, y) = (data.treatment(), data.outcome());
    selection
        .entries
        .iter()
        .map(|e| {
            let w = compute_weights(&scores, z, e.spec, true)?;
            weighted_difference(y, z, &w.w)
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

/// Runs the contour selection on the artifacts of an earlier `evaluate`
/// and writes `selection.json`, `selection.txt`, `contours.json` and
/// `selection.svg` into `out`.
pub fn select(run_dir: &Path, out: &Path) -> Result<SelectOutcome> {
    let prior = read_manifest(run_dir)?;
    let cfg: RunConfig = serde_json::from_value(prior.config.clone())
        .map_err(|e| Error::Data(format!("manifest config: {e}")))?;
    let grid_path = run_dir.join("grid.csv");
    let grid_file = fs::File::open(&grid_path).map_err(|e| Error::io(&grid_path, e))?;
    let grid = GridEvaluation::read_csv(grid_file)?;
    let mut run = select_from_grid(&grid, &cfg.levels, cfg.resolution, cfg.region_mode, cfg.raw_contours)?;

    let tau_source = match exact_taus(&cfg, prior.input.as_ref(), &run.selection)? {
        Some(taus) => {
            for (e, t) in run.selection.entries.iter_mut().zip(taus) {
                e.tau_hat = Some(t);
            }
            TauSource::Exact
        }
        None => {
            let tau = spline_surface(&grid, Metric::TauHat, cfg.resolution)?;
            for e in &mut run.selection.entries {
                e.tau_hat = Some(tau.at(e.node.0, e.node.1));
            }
            TauSource::Interpolated
        }
    };

    let mut files = Outputs::create(out)?;
    let report = SelectionReport { tau_source, selection: run.selection.clone() };
    files.json("selection.json", &report)?;
    files.write("selection.txt", run.selection.to_table().as_bytes())?;
    let inner = &cfg.levels[..];
    let iso = |s: &crate::surface::Surface| -> Vec<(f64, Vec<Polyline>)> {
        inner.iter().filter(|&&l| l > 0.0 && l < 1.0).map(|&l| (l, isoline(s, l))).collect()
    };
    let (mi, si) = (iso(&run.mismatch), iso(&run.statbias));
    let contours = Contours {
        levels: &cfg.levels,
        mismatch: mi.iter().map(|(l, v)| ContourSet { level: *l, lines: v }).collect(),
        statbias: si.iter().map(|(l, v)| ContourSet { level: *l, lines: v }).collect(),
    };
    files.json("contours.json", &contours)?;
    files.write(
        "selection.svg",
        svg::contour_figure(&run.mismatch, &run.statbias, &cfg.levels, &run.selection).as_bytes(),
    )?;
    let m = manifest("select", prior.seed, &cfg, &[], prior.input.clone())?;
    let manifest = files.finish("select-manifest.json", m)?;
    Ok(SelectOutcome { report, run, manifest })
}

pub struct BalanceOutcome {
    pub report: BalanceReport,
    pub manifest: Manifest,
}

/// Standardised mean differences under the configured balance weights,
/// plus the propensity-score distribution by arm.
pub fn balance(cfg: &RunConfig, seed: u64, out: &Path) -> Result<BalanceOutcome> {
    cfg.validate()?;
    let (ingested, input) = load_input(cfg)?;
    let data = &ingested.dataset;
    let model = fit_propensity(data, &cfg.propensity)?;
    let scores = model.predict(data)?;
    let w = compute_weights(&scores, data.treatment(), cfg.balance_estimand()?, true)?;
    let report = compute_smd(data, Some(&w.w))?;
    for e in report.flagged() {
        log::warn!("covariate `{}` has zero pooled variance", e.covariate);
    }
    let mut files = Outputs::create(out)?;
    files.write_with("balance.csv", |b| report.write_csv(b))?;
    files.json("balance.json", &report)?;
    files.write("balance.svg", svg::balance_figure(&report).as_bytes())?;
    files.write_with("scores.csv", |b| {
        let mut wr = csv::Writer::from_writer(b);
        wr.write_record(["row", "treatment", "score"])?;
        for (i, (e, z)) in scores.iter().zip(data.treatment()).enumerate() {
            wr.write_record([i.to_string(), z.to_string(), e.to_string()])?;
        }
        wr.flush().map_err(|e| Error::io("<scores csv>", e))
    })?;
    files.write("scores.svg", svg::score_histogram(&scores, data.treatment(), 40).as_bytes())?;
    files.write("propensity.json", model.to_json()?.as_bytes())?;
    let m = manifest("balance", seed, cfg, &[], Some(input))?;
    let manifest = files.finish("balance-manifest.json", m)?;
    Ok(BalanceOutcome { report, manifest })
}

/// File stem of a scenario, e.g. `scenario_g3_t0.5_medium`.
pub fn scenario_stem(report: &ScenarioReport) -> String {
    let s = &report.config.sim;
    let het = match s.heterogeneity {
        Heterogeneity::Medium => "medium",
        Heterogeneity::High => "high",
        Heterogeneity::Linear => "linear",
        Heterogeneity::Constant => "constant",
    };
    format!("scenario_g{}_t{}_{het}", s.gamma, s.treated_fraction)
}

pub struct SimulateOutcome {
    pub reports: Vec<ScenarioReport>,
    pub manifest: Manifest,
}

/// Runs every scenario of `cfg`; each gets a table, a per-spec CSV and a
/// JSON report.
pub fn simulate(cfg: &SimulateConfig, cli_seed: Option<u64>, out: &Path) -> Result<SimulateOutcome> {
    let scenarios = cfg.scenarios(cli_seed)?;
    let mut files = Outputs::create(out)?;
    let mut reports = Vec::new();
    for (k, sc) in scenarios.iter().enumerate() {
        log::info!(
            "scenario {}/{}: gamma {} treated {} {:?}",
            k + 1,
            scenarios.len(),
            sc.sim.gamma,
            sc.sim.treated_fraction,
            sc.sim.heterogeneity
        );
        let report = run_scenario(sc)?;
        if report.failed > 0 {
            log::warn!("{} of {} replicates failed", report.failed, sc.replicates);
        }
        let stem = scenario_stem(&report);
        files.write_with(&format!("{stem}.csv"), |b| report.write_table_csv(b))?;
        files.write_with(&format!("{stem}_specs.csv"), |b| report.write_spec_csv(b))?;
        files.json(&format!("{stem}.json"), &report)?;
        reports.push(report);
    }
    let seed = scenarios.first().map_or(0, |s| s.sim.seed);
    let m = manifest("simulate", seed, cfg, &["truth", "design", "outcome"], None)?;
    let manifest = files.finish("simulate-manifest.json", m)?;
    Ok(SimulateOutcome { reports, manifest })
}

pub struct VerifyOutcome {
    pub report: VerifierReport,
    pub manifest: Manifest,
}

pub fn verify(cfg: &VerifyConfig, cli_seed: Option<u64>, out: &Path) -> Result<VerifyOutcome> {
    let mut vc = cfg.verifier.clone();
    if let Some(s) = cli_seed {
        vc.seed = s;
    }
    let report = verify_min_variance(&vc)?;
    let mut files = Outputs::create(out)?;
    files.json("verify.json", &report)?;
    let m = manifest("verify-variance", vc.seed, &vc, &[], None)?;
    let manifest = files.finish("verify-manifest.json", m)?;
    Ok(VerifyOutcome { report, manifest })
}
