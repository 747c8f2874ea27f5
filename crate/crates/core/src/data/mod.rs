//! Unit-level data: covariates, binary treatment and outcome.

mod balance;
mod ingest;

pub use balance::{compute_smd, BalanceEntry, BalanceReport};
pub use ingest::{ingest_csv, read_csv, Ingested, MissingPolicy, Schema, TreatmentLevels};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Treatment arm label.
pub const TREATED: u8 = 1;
pub const CONTROL: u8 = 0;

/// An immutable sample of `n` units with `p` numerically encoded covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    covariates: DMatrix<f64>,
    treatment: Vec<u8>,
    outcome: Vec<f64>,
    column_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        covariates: DMatrix<f64>,
        treatment: Vec<u8>,
        outcome: Vec<f64>,
        column_names: Vec<String>,
    ) -> Result<Self> {
        let n = covariates.nrows();
        if treatment.len() != n || outcome.len() != n {
            return Err(Error::Data(format!(
                "length mismatch: {n} covariate rows, {} treatments, {} outcomes",
                treatment.len(),
                outcome.len()
            )));
        }
        if column_names.len() != covariates.ncols() {
            return Err(Error::Data(format!(
                "{} column names for {} covariate columns",
                column_names.len(),
                covariates.ncols()
            )));
        }
        if n < 2 {
            return Err(Error::Data(format!("need at least 2 units, got {n}")));
        }
        if let Some(z) = treatment.iter().find(|&&z| z > 1) {
            return Err(Error::Data(format!("treatment value {z} is not 0 or 1")));
        }
        let treated = treatment.iter().filter(|&&z| z == TREATED).count();
        if treated == 0 || treated == n {
            return Err(Error::Data(format!(
                "empty treatment arm ({treated} treated of {n})"
            )));
        }
        if covariates.iter().chain(outcome.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite covariate or outcome value".into()));
        }
        Ok(Self {
            covariates,
            treatment,
            outcome,
            column_names,
        })
    }

    pub fn n(&self) -> usize {
        self.treatment.len()
    }

    pub fn p(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn n_treated(&self) -> usize {
        self.treatment.iter().filter(|&&z| z == TREATED).count()
    }

    pub fn n_control(&self) -> usize {
        self.n() - self.n_treated()
    }

    /// Units in `arm`, in row order.
    pub fn arm_indices(&self, arm: u8) -> Vec<usize> {
        self.treatment
            .iter()
            .enumerate()
            .filter_map(|(i, &z)| (z == arm).then_some(i))
            .collect()
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }

    /// Rows `rows` (repeats allowed) as a new dataset.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let p = self.p();
        let covariates = DMatrix::from_fn(rows.len(), p, |r, j| self.covariates[(rows[r], j)]);
        Self::new(
            covariates,
            rows.iter().map(|&i| self.treatment[i]).collect(),
            rows.iter().map(|&i| self.outcome[i]).collect(),
            self.column_names.clone(),
        )
    }

    /// Same units with treated and control labels swapped.
    pub fn with_flipped_treatment(&self) -> Self {
        Self {
            covariates: self.covariates.clone(),
            treatment: self.treatment.iter().map(|&z| 1 - z).collect(),
            outcome: self.outcome.clone(),
            column_names: self.column_names.clone(),
        }
    }

    /// Replaces the outcome vector, keeping the design.
    pub fn with_outcome(&self, outcome: Vec<f64>) -> Result<Self> {
        Self::new(
            self.covariates.clone(),
            self.treatment.clone(),
            outcome,
            self.column_names.clone(),
        )
    }
}
