//! Evaluation of every estimand on a `(c, d)` lattice.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::energy::{
    mismatch_pvalues, pairwise_distances, standardize_columns, statbias_null, statbias_pvalues,
};
use crate::error::{Error, Result};
use crate::estimand::{
    bootstrap_grid, build_grid, weighted_difference, BootstrapOptions, EstimandSpec, ScoreSource,
    WeightTable,
};
use crate::propensity::{fit_propensity, DesignSpec, PropensityModel};
use crate::rng::stage_seed;

/// Which metric of a grid row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    TauHat,
    PMismatch,
    PStatbias,
    SeBoot,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Self::TauHat => "tau_hat",
            Self::PMismatch => "p_mismatch",
            Self::PStatbias => "p_statbias",
            Self::SeBoot => "se_boot",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub spec: EstimandSpec,
    pub tau_hat: f64,
    pub p_mismatch: Option<f64>,
    pub p_statbias: Option<f64>,
    pub se_boot: Option<f64>,
    pub n_eff_treated: f64,
    pub n_eff_control: f64,
}

impl GridRow {
    pub fn metric(&self, m: Metric) -> Option<f64> {
        match m {
            Metric::TauHat => Some(self.tau_hat),
            Metric::PMismatch => self.p_mismatch,
            Metric::PStatbias => self.p_statbias,
            Metric::SeBoot => self.se_boot,
        }
    }
}

/// Rows on the lattice `c_axis x d_axis`, `c` varying slowest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEvaluation {
    pub c_axis: Vec<f64>,
    pub d_axis: Vec<f64>,
    pub rows: Vec<GridRow>,
}

const HEADER: [&str; 8] = [
    "c",
    "d",
    "tau_hat",
    "p_mismatch",
    "p_statbias",
    "se_boot",
    "n_eff_treated",
    "n_eff_control",
];

impl GridEvaluation {
    pub fn get(&self, k: usize, l: usize) -> &GridRow {
        &self.rows[k * self.d_axis.len() + l]
    }

    pub fn find(&self, spec: EstimandSpec) -> Option<&GridRow> {
        self.rows.iter().find(|r| r.spec == spec)
    }

    /// Metric values as a `c`-major lattice; `None` if any value is absent.
    pub fn lattice(&self, m: Metric) -> Option<Vec<f64>> {
        self.rows.iter().map(|r| r.metric(m)).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(HEADER)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.spec.c.to_string(),
                r.spec.d.to_string(),
                r.tau_hat.to_string(),
                opt(r.p_mismatch),
                opt(r.p_statbias),
                opt(r.se_boot),
                r.n_eff_treated.to_string(),
                r.n_eff_control.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<grid csv>", e))?;
        Ok(())
    }

    /// Parses a grid CSV and checks that it forms a complete lattice.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Data(format!("grid file lacks a `{name}` column")))
        };
        let idx: Vec<usize> = HEADER.iter().map(|h| col(h)).collect::<Result<_>>()?;
        let mut rows = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let field = |j: usize| rec.get(idx[j]).unwrap_or("");
            let num = |j: usize| -> Result<f64> {
                let v: f64 = field(j).parse().map_err(|_| {
                    Error::Data(format!("row {}: bad `{}` value `{}`", line + 2, HEADER[j], field(j)))
                })?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Data(format!("row {}: non-finite `{}`", line + 2, HEADER[j])))
                }
            };
            let opt = |j: usize| -> Result<Option<f64>> {
                if field(j).is_empty() {
                    Ok(None)
                } else {
                    num(j).map(Some)
                }
            };
            let spec = EstimandSpec::new(num(0)?, num(1)?)
                .map_err(|e| Error::Data(format!("row {}: {e}", line + 2)))?;
            rows.push(GridRow {
                spec,
                tau_hat: num(2)?,
                p_mismatch: opt(3)?,
                p_statbias: opt(4)?,
                se_boot: opt(5)?,
                n_eff_treated: num(6)?,
                n_eff_control: num(7)?,
            });
        }
        Self::from_rows(rows)
    }

    /// Orders rows onto their lattice, rejecting gaps and duplicates.
    pub fn from_rows(rows: Vec<GridRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Data("grid has no rows".into()));
        }
        let axis = |f: fn(&GridRow) -> f64| {
            let mut v: Vec<f64> = rows.iter().map(f).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let c_axis = axis(|r| r.spec.c);
        let d_axis = axis(|r| r.spec.d);
        let mut slots: BTreeMap<(usize, usize), GridRow> = BTreeMap::new();
        for r in rows {
            let k = c_axis.partition_point(|&c| c < r.spec.c);
            let l = d_axis.partition_point(|&d| d < r.spec.d);
            if slots.insert((k, l), r).is_some() {
                return Err(Error::Data("grid has duplicate (c, d) rows".into()));
            }
        }
        if slots.len() != c_axis.len() * d_axis.len() {
            return Err(Error::Data(format!(
                "grid is not a full lattice: {} rows for {} x {} axes",
                slots.len(),
                c_axis.len(),
                d_axis.len()
            )));
        }
        Ok(Self {
            c_axis,
            d_axis,
            rows: slots.into_values().collect(),
        })
    }
}

/// Settings for [`evaluate_grid`]. A replicate count of zero skips that metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOptions {
    pub c_axis: Vec<f64>,
    pub d_axis: Vec<f64>,
    pub permutation_replicates: usize,
    pub bootstrap_replicates: usize,
    pub standardize: bool,
    pub refit_bootstrap: bool,
    pub seed: u64,
    pub keep_nulls: bool,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            c_axis: crate::estimand::default_axis(),
            d_axis: crate::estimand::default_axis(),
            permutation_replicates: 1000,
            bootstrap_replicates: 1000,
            standardize: true,
            refit_bootstrap: true,
            seed: 0,
            keep_nulls: false,
        }
    }
}

/// Null statistics kept for diagnostics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NullDump {
    /// `[spec][replicate]`
    pub mismatch_control: Vec<Vec<f64>>,
    pub mismatch_treated: Vec<Vec<f64>>,
    pub statbias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GridOutput {
    pub grid: GridEvaluation,
    pub model: PropensityModel,
    pub nulls: Option<NullDump>,
    pub bootstrap_redraws: usize,
}

/// Fits the propensity model and evaluates every estimand of the lattice.
pub fn evaluate_grid(data: &Dataset, design: &DesignSpec, opts: &GridOptions) -> Result<GridOutput> {
    let model = fit_propensity(data, design)?;
    evaluate_grid_with_model(data, &model, opts)
}

/// As [`evaluate_grid`] with an already fitted model.
pub fn evaluate_grid_with_model(
    data: &Dataset,
    model: &PropensityModel,
    opts: &GridOptions,
) -> Result<GridOutput> {
    let specs = build_grid(&opts.c_axis, &opts.d_axis)?;
    let scores = model.predict(data)?;
    let z = data.treatment();
    let table = WeightTable::new(&scores, &opts.c_axis, &opts.d_axis)?;
    let nd = opts.d_axis.len();
    let weights: Vec<Vec<f64>> = (0..specs.len())
        .map(|g| table.weights(g / nd, g % nd, z, true).map(|w| w.w))
        .collect::<Result<_>>()?;

    let mut rows: Vec<GridRow> = specs
        .iter()
        .zip(&weights)
        .map(|(&spec, w)| {
            let tau_hat = weighted_difference(data.outcome(), z, w)?;
            let set = crate::estimand::WeightSet::from_raw(w.clone(), z)?;
            let (n_eff_treated, n_eff_control) = set.effective_sizes(z);
            Ok(GridRow {
                spec,
                tau_hat,
                p_mismatch: None,
                p_statbias: None,
                se_boot: None,
                n_eff_treated,
                n_eff_control,
            })
        })
        .collect::<Result<_>>()?;

    let mut nulls = opts.keep_nulls.then(NullDump::default);
    let b = opts.permutation_replicates;
    if b > 0 {
        let x = if opts.standardize {
            standardize_columns(data.covariates())
        } else {
            data.covariates().clone()
        };
        let dist = pairwise_distances(&x);
        let mm = mismatch_pvalues(&dist, z, &weights, b, stage_seed(opts.seed, "mismatch"), opts.keep_nulls)?;
        drop(dist);
        let null = statbias_null(&scores, z, b, stage_seed(opts.seed, "statbias"))?;
        let sb = statbias_pvalues(z, &weights, &null, false)?;
        for ((row, m), s) in rows.iter_mut().zip(&mm).zip(&sb) {
            row.p_mismatch = Some(m.p_value);
            row.p_statbias = Some(s.p_value);
        }
        if let Some(dump) = nulls.as_mut() {
            for m in mm {
                dump.mismatch_control.push(m.control.null_statistics.unwrap_or_default());
                dump.mismatch_treated.push(m.treated.null_statistics.unwrap_or_default());
            }
            dump.statbias = null.null_statistics;
        }
    }

    let mut bootstrap_redraws = 0;
    if opts.bootstrap_replicates > 0 {
        let source = if opts.refit_bootstrap {
            ScoreSource::Refit(&model.design)
        } else {
            ScoreSource::Fixed(&scores)
        };
        let out = bootstrap_grid(
            data,
            &specs,
            source,
            BootstrapOptions::new(opts.bootstrap_replicates, stage_seed(opts.seed, "bootstrap")),
        )?;
        bootstrap_redraws = out.redraws;
        for (row, se) in rows.iter_mut().zip(out.se) {
            row.se_boot = Some(se);
        }
    }

    Ok(GridOutput {
        grid: GridEvaluation {
            c_axis: opts.c_axis.clone(),
            d_axis: opts.d_axis.clone(),
            rows,
        },
        model: model.clone(),
        nulls,
        bootstrap_redraws,
    })
}

/// Tau estimates only, for every spec on the lattice.
pub fn tau_lattice(data: &Dataset, scores: &[f64], c_axis: &[f64], d_axis: &[f64]) -> Result<Vec<f64>> {
    let table = WeightTable::new(scores, c_axis, d_axis)?;
    let mut out = Vec::with_capacity(c_axis.len() * d_axis.len());
    for k in 0..c_axis.len() {
        for l in 0..d_axis.len() {
            out.push(table.tau(k, l, data.treatment(), data.outcome())?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(n: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = DMatrix::from_fn(n, 2, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let z: Vec<u8> = (0..n).map(|i| u8::from(rng.random::<f64>() < 0.5 + 0.3 * x[(i, 0)])).collect();
        let y: Vec<f64> = (0..n).map(|i| x[(i, 1)] + f64::from(z[i])).collect();
        Dataset::new(x, z, y, vec!["a".into(), "b".into()]).unwrap()
    }

    fn small_opts() -> GridOptions {
        GridOptions {
            c_axis: vec![0.0, 1.0],
            d_axis: vec![0.0, 1.0],
            permutation_replicates: 50,
            bootstrap_replicates: 20,
            seed: 3,
            ..GridOptions::default()
        }
    }

    #[test]
    fn two_by_two_grid_round_trips_through_csv() {
        let out = evaluate_grid(&sample(80), &DesignSpec::main_effects(), &small_opts()).unwrap();
        assert_eq!(out.grid.rows.len(), 4);
        let mut buf = Vec::new();
        out.grid.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("c,d,tau_hat,p_mismatch,p_statbias,se_boot,n_eff_treated,n_eff_control\n"));
        let back = GridEvaluation::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, out.grid);
    }

    #[test]
    fn evaluation_is_deterministic() {
        let d = sample(60);
        let a = evaluate_grid(&d, &DesignSpec::main_effects(), &small_opts()).unwrap();
        let b = evaluate_grid(&d, &DesignSpec::main_effects(), &small_opts()).unwrap();
        assert_eq!(a.grid, b.grid);
    }

    #[test]
    fn rejects_irregular_grids() {
        let text = "c,d,tau_hat,p_mismatch,p_statbias,se_boot,n_eff_treated,n_eff_control\n0,0,1,,,,1,1\n0,1,1,,,,1,1\n1,0,1,,,,1,1\n";
        assert!(GridEvaluation::read_csv(text.as_bytes()).is_err());
        let dup = "c,d,tau_hat,p_mismatch,p_statbias,se_boot,n_eff_treated,n_eff_control\n0,0,1,,,,1,1\n0,0,1,,,,1,1\n";
        assert!(GridEvaluation::read_csv(dup.as_bytes()).is_err());
        assert!(GridEvaluation::read_csv("c,d\n0,0\n".as_bytes()).is_err());
    }

    #[test]
    fn tau_lattice_matches_grid() {
        let d = sample(50);
        let opts = GridOptions {
            permutation_replicates: 0,
            bootstrap_replicates: 0,
            ..small_opts()
        };
        let out = evaluate_grid(&d, &DesignSpec::main_effects(), &opts).unwrap();
        let taus = tau_lattice(&d, &out.model.fitted_scores, &opts.c_axis, &opts.d_axis).unwrap();
        for (r, t) in out.grid.rows.iter().zip(taus) {
            assert!((r.tau_hat - t).abs() < 1e-12);
            assert!(r.p_mismatch.is_none() && r.se_boot.is_none());
        }
    }
}
