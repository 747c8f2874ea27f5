//! Acceptance checks. One PASS/FAIL line per criterion; runs are pinned to
//! fixed seeds. Exits nonzero when a criterion that could be evaluated
//! fails; criteria whose input data is missing print FAIL but do not set
//! the exit status.
//!
//! The RHC criterion needs the cohort CSV, located through `ESTSEL_RHC_CSV`
//! or `data/rhc.csv` at the workspace root.

mod common;

use std::path::{Path, PathBuf};
use std::time::Instant;

use common::*;
use estsel::config::RunConfig;
use estsel::data::Dataset;
use estsel::energy::{
    energy_group_vs_pooled, energy_treated_vs_control, energy_two_sample_1d, mismatch_pvalues, pairwise_distances,
    statbias_null, statbias_pvalues,
};
use estsel::estimand::{compute_weights, estimate_tau, EstimandSpec};
use estsel::pipeline;
use estsel::propensity::{fit_propensity, DesignSpec};
use estsel::simulation::{run_scenario, verify_min_variance, Heterogeneity, ScenarioConfig, VerifierConfig, WeightFunction};
use estsel::surface::{Kriging, Variogram};
use nalgebra::DMatrix;
use rand::Rng;

const SEED: u64 = 20_240_611;

struct Tally {
    failed: usize,
    unavailable: usize,
}

impl Tally {
    fn report(&mut self, id: &str, ok: bool, detail: String, started: Instant) {
        if !ok {
            self.failed += 1;
        }
        println!(
            "{} {id}: {detail} [{:.1}s]",
            if ok { "PASS" } else { "FAIL" },
            started.elapsed().as_secs_f64()
        );
    }
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

// ---------------------------------------------------------------- RHC

fn rhc(t: &mut Tally) {
    let start = Instant::now();
    let path = std::env::var_os("ESTSEL_RHC_CSV")
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace_root().join("data/rhc.csv"));
    if !path.exists() {
        let msg = format!("cohort CSV not found at {} (set ESTSEL_RHC_CSV)", path.display());
        for id in ["1a rhc ATE estimate", "1b rhc ATO estimate", "1c rhc IPW balance", "1d rhc statbias region", "1e rhc runtime"] {
            t.report(id, false, msg.clone(), start);
        }
        t.unavailable += 5;
        return;
    }
    let mut cfg = RunConfig::load(&workspace_root().join("configs/rhc.toml")).expect("configs/rhc.toml");
    cfg.input = path;
    let seed = cfg.resolve_seed(None).unwrap();
    let out = tempfile::tempdir().unwrap();
    let run = match pipeline::evaluate(&cfg, seed, out.path()) {
        Ok(r) => r,
        Err(e) => {
            for id in ["1a rhc ATE estimate", "1b rhc ATO estimate", "1c rhc IPW balance", "1d rhc statbias region", "1e rhc runtime"] {
                t.report(id, false, format!("evaluate failed: {e}"), start);
            }
            return;
        }
    };
    let elapsed = start.elapsed().as_secs_f64();
    let grid = &run.output.grid;
    let ate = grid.find(EstimandSpec::ATE).unwrap().tau_hat;
    let ato = grid.find(EstimandSpec::ATO).unwrap().tau_hat;
    t.report("1a rhc ATE estimate", (ate + 0.056).abs() <= 0.010, format!("{ate:.4} vs -0.056 +- 0.010"), start);
    t.report("1b rhc ATO estimate", (ato + 0.065).abs() <= 0.010, format!("{ato:.4} vs -0.065 +- 0.010"), start);

    let bal = pipeline::balance(&cfg, seed, out.path()).unwrap().report;
    let (mean, max) = (bal.mean_abs_weighted, bal.max_abs_weighted);
    t.report(
        "1c rhc IPW balance",
        (mean - 0.018).abs() <= 0.010 && (max - 0.062).abs() <= 0.020,
        format!("mean |SMD| {mean:.4} (0.018 +- 0.010), max {max:.4} (0.062 +- 0.020)"),
        start,
    );

    let high: Vec<EstimandSpec> = grid.rows.iter().filter(|r| r.p_statbias.is_some_and(|p| p > 0.30)).map(|r| r.spec).collect();
    let inside = high.iter().all(|s| s.c >= 0.8 - 1e-12 && s.d >= 0.8 - 1e-12);
    t.report(
        "1d rhc statbias region",
        !high.is_empty() && inside,
        format!("{} specs with p > 0.30, all with c,d >= 0.8: {inside}", high.len()),
        start,
    );
    t.report("1e rhc runtime", elapsed < 1800.0, format!("grid evaluation {elapsed:.0}s (budget 1800s)"), start);
}

// ---------------------------------------------------------- simulation

fn scenario(gamma: f64, treated: f64, het: Heterogeneity) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::default();
    cfg.sim.gamma = gamma;
    cfg.sim.treated_fraction = treated;
    cfg.sim.heterogeneity = het;
    cfg.sim.n = 1000;
    cfg.sim.seed = SEED;
    cfg.replicates = 100;
    cfg.permutation_replicates = 500;
    cfg.bootstrap_replicates = 500;
    cfg.truth_samples = 1_000_000;
    cfg
}

fn simulation_ordering(t: &mut Tally) {
    let start = Instant::now();
    let report = run_scenario(&scenario(3.0, 0.5, Heterogeneity::Medium)).expect("medium scenario");
    let ate = report.estimator("ATE").unwrap();
    let ato = report.estimator("ATO").unwrap();
    match report.selected(0.05) {
        Some(sel) => {
            let present = sel.count * 2 >= report.completed;
            t.report(
                "2a selected beats ATE and ATO (gamma 3, 50%, medium)",
                present && sel.mse < ate.mse && sel.mse < ato.mse,
                format!(
                    "MSE selected {:.5} (n={}/{}), ATE {:.5}, ATO {:.5}",
                    sel.mse, sel.count, report.completed, ate.mse, ato.mse
                ),
                start,
            );
        }
        None => t.report("2a selected beats ATE and ATO (gamma 3, 50%, medium)", false, "no (0.05, 0.1] band selection in any replicate".into(), start),
    }

    let start = Instant::now();
    let mut cfg = scenario(3.0, 0.5, Heterogeneity::High);
    cfg.select = false;
    cfg.permutation_replicates = 0;
    cfg.bootstrap_replicates = 0;
    let report = run_scenario(&cfg).expect("high scenario");
    let ate = report.estimator("ATE").unwrap();
    let ato = report.estimator("ATO").unwrap();
    t.report(
        "2b ATO worse than ATE under high heterogeneity",
        ato.mse > ate.mse,
        format!("MSE ATO {:.5}, ATE {:.5}", ato.mse, ate.mse),
        start,
    );
}

fn mismatch_geography(t: &mut Tally) {
    let geometry = |treated: f64| {
        let mut cfg = scenario(1.0, treated, Heterogeneity::Medium);
        cfg.select = false;
        cfg.bootstrap_replicates = 0;
        run_scenario(&cfg).expect("geometry scenario")
    };

    let start = Instant::now();
    let r = geometry(0.5);
    let diag: Vec<f64> = r
        .spec_averages
        .iter()
        .filter(|s| (s.spec.c - s.spec.d).abs() < 1e-12)
        .filter_map(|s| s.mean_p_mismatch)
        .collect();
    let low = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    t.report(
        "3a diagonal mismatch p > 0.05 (gamma 1, 50%)",
        diag.len() == 21 && low > 0.05,
        format!("{} diagonal specs, smallest mean p {low:.3}", diag.len()),
        start,
    );

    let start = Instant::now();
    let r = geometry(0.25);
    let pass: Vec<EstimandSpec> = r
        .spec_averages
        .iter()
        .filter(|s| s.mean_p_mismatch.is_some_and(|p| p > 0.05))
        .map(|s| s.spec)
        .collect();
    let above = pass.iter().filter(|s| s.d > s.c + 1e-12).count();
    let below = pass.iter().filter(|s| s.c > s.d + 1e-12).count();
    let peaks: Vec<f64> = pass.iter().filter_map(|s| s.peak()).collect();
    let mean_peak = peaks.iter().sum::<f64>() / peaks.len().max(1) as f64;
    t.report(
        "3b region above diagonal, peak near 0.25 (gamma 1, 25%)",
        above > below && !peaks.is_empty() && (mean_peak - 0.25).abs() <= 0.10,
        format!("{} specs with p > 0.05: {above} above, {below} below, mean peak {mean_peak:.3}", pass.len()),
        start,
    );
}

// ------------------------------------------------------------ verifier

fn verifier(t: &mut Tally) {
    let start = Instant::now();
    let cfg = VerifierConfig { mc_samples: 1_000_000, seed: SEED, ..Default::default() };
    let r = verify_min_variance(&cfg).unwrap();
    let label = &r.candidates[r.argmin].label;
    t.report(
        "4a homoscedastic minimiser is (1, 1)",
        r.passed && r.candidates[r.target].label == "(1, 1)",
        format!("argmin {label}, gap {:.2} SE, forms agree to {:.1e}", r.gap_in_se, r.max_form_discrepancy),
        start,
    );
    let first = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let one = WeightFunction::Constant { value: 1.0 };
    let cfg = VerifierConfig {
        h_star: WeightFunction::tabulate(|e| e * e * (1.0 - e), 4001),
        k0: one.clone(),
        k1: one,
        mc_samples: 1_000_000,
        seed: SEED,
        ..Default::default()
    };
    let r = verify_min_variance(&cfg).unwrap();
    t.report(
        "4b heteroscedastic minimiser is proportional to e^2(1-e)",
        r.passed,
        format!(
            "target {}, argmin {}, gap {:.2} SE, forms agree to {:.1e}",
            r.candidates[r.target].label, r.candidates[r.argmin].label, r.gap_in_se, r.max_form_discrepancy
        ),
        start,
    );
    let total = first + start.elapsed().as_secs_f64();
    t.report("4c verifier runtime", total < 120.0, format!("{total:.1}s for both checks (budget 120s)"), start);
}

// ------------------------------------------------------------- oracles

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn oracles(t: &mut Tally) {
    let start = Instant::now();
    let mut r = rng(SEED);
    let mut worst: f64 = 0.0;
    for k in 0..50u64 {
        let n = r.random_range(4..=50);
        let p = r.random_range(1..=5);
        let (data, scores) = fixture(SEED + k, n, p);
        let spec = EstimandSpec::new(r.random(), r.random()).unwrap();
        let w = compute_weights(&scores, data.treatment(), spec, true).unwrap().w;
        let z = data.treatment();
        let pts = rows(data.covariates());
        let dist = pairwise_distances(data.covariates());
        for arm in [0u8, 1] {
            let idx: Vec<usize> = (0..n).filter(|&i| z[i] == arm).collect();
            let wg: Vec<f64> = idx.iter().map(|&i| w[i]).collect();
            worst = worst.max(rel(energy_group_vs_pooled(&dist, &idx, &wg).unwrap(), energy_group_pooled(&pts, &idx, &wg)));
        }
        worst = worst.max(rel(energy_treated_vs_control(&dist, z, &w).unwrap(), energy_two_sample(&pts, z, &w)));
        let spts: Vec<Vec<f64>> = scores.iter().map(|&s| vec![s]).collect();
        worst = worst.max(rel(energy_two_sample_1d(&scores, z, &w).unwrap(), energy_two_sample(&spts, z, &w)));
    }
    t.report("5a energy distances vs double loop", worst < 1e-10, format!("50 fixtures, worst relative error {worst:.1e}"), start);

    let start = Instant::now();
    let pts: Vec<(f64, f64)> = (0..3).flat_map(|i| (0..3).map(move |j| (i as f64 / 2.0, j as f64 / 2.0))).collect();
    let zv = [0.21, 0.18, 0.25, 0.3, 0.27, 0.19, 0.33, 0.24, 0.22];
    let v = Variogram { nugget: 0.002, sill: 0.01, range: 0.6 };
    let k = Kriging::with_variogram(&pts, &zv, v).unwrap();
    let worst = pts
        .iter()
        .map(|&x| (k.predict(x) - kriging_oracle(&pts, &zv, |h| v.gamma(h), x)).abs())
        .fold(0.0, f64::max);
    t.report("5b kriging vs direct system (3x3)", worst < 1e-8, format!("worst node error {worst:.1e}"), start);

    let start = Instant::now();
    let mut r = rng(SEED ^ 7);
    let x: Vec<Vec<f64>> = (0..20).map(|_| vec![r.random::<f64>() * 2.0 - 1.0, r.random::<f64>() * 4.0]).collect();
    let z: Vec<u8> = x
        .iter()
        .map(|v| u8::from(r.random::<f64>() < 1.0 / (1.0 + (-(0.8 * v[0] - 0.3 * v[1] + 0.4)).exp())))
        .collect();
    let m = DMatrix::from_fn(20, 2, |i, j| x[i][j]);
    let data = Dataset::new(m, z.clone(), vec![0.0; 20], vec!["a".into(), "b".into()]).unwrap();
    let fit = fit_propensity(&data, &DesignSpec::main_effects()).unwrap();
    let design: Vec<Vec<f64>> = x.iter().map(|v| vec![1.0, v[0], v[1]]).collect();
    let oracle = newton_logistic(&design, &z.iter().map(|&t| f64::from(t)).collect::<Vec<_>>());
    let worst = fit.coefficients.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    t.report("5c IRLS vs Newton (20 rows)", worst < 1e-6, format!("worst coefficient error {worst:.1e}"), start);
}

// ------------------------------------------------------ null uniformity

/// Asymptotic Kolmogorov distribution tail `P(K > x)`.
fn kolmogorov_tail(x: f64) -> f64 {
    if x < 0.2 {
        return 1.0;
    }
    let s: f64 = (1..=100)
        .map(|k| {
            let k = k as f64;
            (if k as i64 % 2 == 1 { 2.0 } else { -2.0 }) * (-2.0 * k * k * x * x).exp()
        })
        .sum();
    s.clamp(0.0, 1.0)
}

/// One-sample KS test against U(0,1); returns `(D, p)`.
fn ks_uniform(mut p: Vec<f64>) -> (f64, f64) {
    p.sort_by(f64::total_cmp);
    let n = p.len() as f64;
    let d = p
        .iter()
        .enumerate()
        .map(|(i, &u)| ((i + 1) as f64 / n - u).max(u - i as f64 / n))
        .fold(0.0, f64::max);
    let sn = n.sqrt();
    (d, kolmogorov_tail((sn + 0.12 + 0.11 / sn) * d))
}

fn null_uniformity(t: &mut Tally) {
    const DATASETS: usize = 500;
    const B: usize = 500;
    let (n, p) = (120, 3);
    let start = Instant::now();
    let pvals: Vec<(f64, f64, f64)> = (0..DATASETS as u64)
        .map(|k| {
            let mut r = rng(SEED + 1000 + k);
            let x = DMatrix::from_fn(n, p, |_, _| r.random::<f64>() * 2.0 - 1.0);
            let mut z: Vec<u8> = (0..n).map(|i| u8::from(i < n / 2)).collect();
            for i in (1..n).rev() {
                z.swap(i, r.random_range(0..=i));
            }
            let scores: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
            let unit = vec![1.0; n];
            let dist = pairwise_distances(&x);
            let mm = &mismatch_pvalues(&dist, &z, std::slice::from_ref(&unit), B, k, false).unwrap()[0];
            let null = statbias_null(&scores, &z, B, k).unwrap();
            let sb = statbias_pvalues(&z, &[unit], &null, false).unwrap()[0].p_value;
            (mm.control.p_value, mm.treated.p_value, sb)
        })
        .collect();
    for (id, arm) in [("6a mismatch null uniform (control arm)", 0), ("6b mismatch null uniform (treated arm)", 1)] {
        let v: Vec<f64> = pvals.iter().map(|x| if arm == 0 { x.0 } else { x.1 }).collect();
        let (d, pv) = ks_uniform(v);
        t.report(id, pv > 0.01, format!("{DATASETS} datasets, KS D {d:.4}, p {pv:.3}"), start);
    }
    let (d, pv) = ks_uniform(pvals.iter().map(|x| x.2).collect());
    t.report("6c statbias null uniform", pv > 0.01, format!("{DATASETS} datasets, KS D {d:.4}, p {pv:.3}"), start);
}

// ---------------------------------------------------------- determinism

fn write_fixture_csv(dir: &Path) {
    let mut r = rng(SEED ^ 0xabc);
    let mut csv = String::from("a,b,g,z,y\n");
    for _ in 0..150 {
        let (a, b): (f64, f64) = (r.random(), r.random::<f64>() * 2.0 - 1.0);
        let g = if r.random::<f64>() < 0.4 { "u" } else { "v" };
        let e = 1.0 / (1.0 + (-(1.2 * a - 0.6 + 0.5 * b)).exp());
        let z = u8::from(r.random::<f64>() < e);
        let y = a + b + 0.7 * f64::from(z) + r.random::<f64>();
        csv.push_str(&format!("{a:.5},{b:.5},{g},{z},{y:.5}\n"));
    }
    std::fs::write(dir.join("data.csv"), csv).unwrap();
    std::fs::write(
        dir.join("run.toml"),
        "input = \"data.csv\"\nseed = 99\npermutation_replicates = 100\nbootstrap_replicates = 30\nresolution = 41\n\
         c_axis = [0.0, 0.25, 0.5, 0.75, 1.0]\nd_axis = [0.0, 0.25, 0.5, 0.75, 1.0]\n\
         [schema]\ntreatment = \"z\"\noutcome = \"y\"\ncovariates = [\"a\", \"b\", \"g\"]\ncategorical = [\"g\"]\n",
    )
    .unwrap();
}

fn determinism(t: &mut Tally) {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    write_fixture_csv(dir.path());
    let cfg = RunConfig::load(&dir.path().join("run.toml")).unwrap();
    let grids: Vec<Vec<u8>> = ["one", "two"]
        .iter()
        .map(|sub| {
            let out = dir.path().join(sub);
            pipeline::evaluate(&cfg, 99, &out).unwrap();
            std::fs::read(out.join("grid.csv")).unwrap()
        })
        .collect();
    t.report(
        "7a evaluate grid.csv byte-identical",
        grids[0] == grids[1] && !grids[0].is_empty(),
        format!("{} bytes per run", grids[0].len()),
        start,
    );

    let start = Instant::now();
    let mut r = rng(SEED ^ 0x5a);
    let mut worst: f64 = 0.0;
    for k in 0..20u64 {
        let (data, scores) = fixture(SEED + 500 + k, r.random_range(20..120), 3);
        let spec = EstimandSpec::new(r.random(), r.random()).unwrap();
        let flipped = data.with_flipped_treatment();
        let mirrored: Vec<f64> = scores.iter().map(|e| 1.0 - e).collect();
        let swapped = EstimandSpec::new(spec.d, spec.c).unwrap();
        let tau = |d: &Dataset, s: &[f64], sp: EstimandSpec| {
            estimate_tau(d, sp, &compute_weights(s, d.treatment(), sp, true).unwrap()).unwrap().tau_hat
        };
        worst = worst.max((tau(&data, &scores, spec) + tau(&flipped, &mirrored, swapped)).abs());
    }
    t.report("7b label-swap antisymmetry", worst < 1e-8, format!("20 fixtures, worst |tau + tau_swapped| {worst:.1e}"), start);
}

fn main() {
    let mut t = Tally { failed: 0, unavailable: 0 };
    let start = Instant::now();
    rhc(&mut t);
    simulation_ordering(&mut t);
    mismatch_geography(&mut t);
    verifier(&mut t);
    oracles(&mut t);
    null_uniformity(&mut t);
    determinism(&mut t);
    println!(
        "{} criteria failed ({} for lack of input data); total {:.0}s",
        t.failed,
        t.unavailable,
        start.elapsed().as_secs_f64()
    );
    if t.failed > t.unavailable {
        std::process::exit(1);
    }
}
