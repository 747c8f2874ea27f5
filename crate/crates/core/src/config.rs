//! TOML run configurations. Every default lives here and is echoed into
//! the run manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Schema;
use crate::error::{Error, Result};
use crate::estimand::{build_grid, default_axis, EstimandSpec};
use crate::grid::GridOptions;
use crate::propensity::DesignSpec;
use crate::simulation::{Heterogeneity, ScenarioConfig, VerifierConfig};
use crate::surface::{default_levels, validate_levels, RegionMode, DEFAULT_RESOLUTION};

pub const DEFAULT_PERMUTATIONS: usize = 1000;
pub const DEFAULT_BOOTSTRAP: usize = 1000;

fn yes() -> bool {
    true
}
fn default_permutations() -> usize {
    DEFAULT_PERMUTATIONS
}
fn default_bootstrap() -> usize {
    DEFAULT_BOOTSTRAP
}
fn default_resolution() -> usize {
    DEFAULT_RESOLUTION
}
fn default_balance_spec() -> String {
    "ATE".into()
}

/// Observational-data run: ingestion, grid evaluation and selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// CSV input; relative paths resolve against the config file.
    pub input: PathBuf,
    pub schema: Schema,
    #[serde(default)]
    pub propensity: DesignSpec,
    /// Required here or on the command line.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_axis")]
    pub c_axis: Vec<f64>,
    #[serde(default = "default_axis")]
    pub d_axis: Vec<f64>,
    #[serde(default = "default_permutations")]
    pub permutation_replicates: usize,
    #[serde(default = "default_bootstrap")]
    pub bootstrap_replicates: usize,
    #[serde(default = "default_levels")]
    pub levels: Vec<f64>,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default = "yes")]
    pub standardize: bool,
    #[serde(default = "yes")]
    pub refit_bootstrap: bool,
    #[serde(default)]
    pub region_mode: RegionMode,
    /// Contour bilinear rather than spline-smoothed p-values.
    #[serde(default)]
    pub raw_contours: bool,
    #[serde(default)]
    pub keep_nulls: bool,
    /// Weights used by the balance report.
    #[serde(default = "default_balance_spec")]
    pub balance_spec: String,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.input.is_relative() {
            cfg.input = base.join(&cfg.input);
        }
        if let Some(out) = cfg.out.as_mut() {
            if out.is_relative() {
                *out = base.join(&*out);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.permutation_replicates == 0 {
            return bad("permutation_replicates must be positive");
        }
        if self.bootstrap_replicates < 2 {
            return bad("bootstrap_replicates must be at least 2");
        }
        if self.resolution < 2 {
            return bad("resolution must be at least 2");
        }
        build_grid(&self.c_axis, &self.d_axis).map_err(|e| Error::Config(e.to_string()))?;
        for axis in [&self.c_axis, &self.d_axis] {
            if axis.windows(2).any(|w| w[1] <= w[0]) {
                return bad("grid axes must be strictly ascending");
            }
        }
        validate_levels(&self.levels)?;
        self.balance_estimand()?;
        Ok(())
    }

    pub fn balance_estimand(&self) -> Result<EstimandSpec> {
        self.balance_spec
            .parse()
            .map_err(|e: Error| Error::Config(format!("balance_spec: {e}")))
    }

    /// The seed, with a command-line override taking precedence.
    pub fn resolve_seed(&self, cli: Option<u64>) -> Result<u64> {
        cli.or(self.seed)
            .ok_or_else(|| Error::Config("no seed given; set `seed` in the config or pass --seed".into()))
    }

    pub fn grid_options(&self, seed: u64) -> GridOptions {
        GridOptions {
            c_axis: self.c_axis.clone(),
            d_axis: self.d_axis.clone(),
            permutation_replicates: self.permutation_replicates,
            bootstrap_replicates: self.bootstrap_replicates,
            standardize: self.standardize,
            refit_bootstrap: self.refit_bootstrap,
            seed,
            keep_nulls: self.keep_nulls,
        }
    }
}

/// Lists of scenario keys whose product is run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    #[serde(default)]
    pub gamma: Vec<f64>,
    #[serde(default)]
    pub treated_fraction: Vec<f64>,
    #[serde(default)]
    pub heterogeneity: Vec<Heterogeneity>,
}

/// A batch of simulation scenarios sharing one base configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Use the full study scale: 1000 replicates and permutations, 1000
    /// bootstrap draws, 1e7 truth samples.
    #[serde(default)]
    pub full_scale: bool,
    #[serde(default)]
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub sweep: Option<Sweep>,
}

impl SimulateConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.scenario.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Expanded scenarios with the seed applied.
    pub fn scenarios(&self, cli_seed: Option<u64>) -> Result<Vec<ScenarioConfig>> {
        let mut base = self.scenario.clone();
        if let Some(s) = cli_seed.or(self.seed) {
            base.sim.seed = s;
        }
        if self.full_scale {
            base.replicates = 1000;
            base.sim.n = 1000;
            base.permutation_replicates = 1000;
            base.bootstrap_replicates = 1000;
            base.truth_samples = 10_000_000;
        }
        let Some(sweep) = &self.sweep else {
            base.validate()?;
            return Ok(vec![base]);
        };
        let or_base = |v: &Vec<f64>, b: f64| if v.is_empty() { vec![b] } else { v.clone() };
        let gammas = or_base(&sweep.gamma, base.sim.gamma);
        let fractions = or_base(&sweep.treated_fraction, base.sim.treated_fraction);
        let hets = if sweep.heterogeneity.is_empty() {
            vec![base.sim.heterogeneity]
        } else {
            sweep.heterogeneity.clone()
        };
        let mut out = Vec::new();
        for &h in &hets {
            for &t in &fractions {
                for &g in &gammas {
                    let mut s = base.clone();
                    s.sim.gamma = g;
                    s.sim.treated_fraction = t;
                    s.sim.heterogeneity = h;
                    s.validate()?;
                    out.push(s);
                }
            }
        }
        Ok(out)
    }
}

/// Variance-minimiser check configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub verifier: VerifierConfig,
}

impl VerifyConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}
