use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

/// Column roles for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub treatment: String,
    pub outcome: String,
    pub covariates: Vec<String>,
    /// Covariates expanded to indicator columns (alphabetical levels, first dropped).
    #[serde(default)]
    pub categorical: Vec<String>,
    /// String coding of the treatment column; numeric 0/1 when absent.
    #[serde(default)]
    pub treatment_levels: Option<TreatmentLevels>,
    /// String-to-number coding for a non-numeric outcome column.
    #[serde(default)]
    pub outcome_levels: BTreeMap<String, f64>,
    #[serde(default)]
    pub missing: MissingPolicy,
    /// Cell values treated as missing.
    #[serde(default = "default_na_values")]
    pub na_values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreatmentLevels {
    pub treated: String,
    pub control: String,
}

/// What to do with a row that has a missing value in a used column.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    /// Drop the row and count it.
    #[default]
    DropRow,
    /// Fail ingestion.
    Error,
}

fn default_na_values() -> Vec<String> {
    vec![String::new(), "NA".into(), "NaN".into()]
}

impl Schema {
    pub fn new(treatment: &str, outcome: &str, covariates: &[&str]) -> Self {
        Self {
            treatment: treatment.into(),
            outcome: outcome.into(),
            covariates: covariates.iter().map(|s| s.to_string()).collect(),
            categorical: Vec::new(),
            treatment_levels: None,
            outcome_levels: BTreeMap::new(),
            missing: MissingPolicy::default(),
            na_values: default_na_values(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.covariates.is_empty() {
            return Err(Error::Config("schema names no covariate columns".into()));
        }
        let mut seen = BTreeSet::new();
        for c in self
            .covariates
            .iter()
            .chain([&self.treatment, &self.outcome])
        {
            if !seen.insert(c.as_str()) {
                return Err(Error::Config(format!("column `{c}` is named twice in schema")));
            }
        }
        if let Some(c) = self.categorical.iter().find(|c| !self.covariates.contains(c)) {
            return Err(Error::Config(format!(
                "categorical column `{c}` is not a covariate"
            )));
        }
        if let Some(l) = &self.treatment_levels {
            if l.treated == l.control {
                return Err(Error::Config("treated and control levels coincide".into()));
            }
        }
        Ok(())
    }

    fn is_na(&self, cell: &str) -> bool {
        let cell = cell.trim();
        self.na_values.iter().any(|na| na == cell)
    }
}

/// A parsed dataset with row accounting.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub dataset: Dataset,
    pub rows_read: usize,
    pub rows_dropped: usize,
}

pub fn ingest_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Ingested> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

enum Column {
    Numeric(usize),
    Categorical(usize),
}

/// Parses CSV text (header row first) according to `schema`.
pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<Ingested> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("column `{name}` not found in header")))
    };
    let z_col = find(&schema.treatment)?;
    let y_col = find(&schema.outcome)?;
    let mut cov_cols = Vec::with_capacity(schema.covariates.len());
    for name in &schema.covariates {
        let idx = find(name)?;
        cov_cols.push(if schema.categorical.contains(name) {
            Column::Categorical(idx)
        } else {
            Column::Numeric(idx)
        });
    }
    let used: Vec<usize> = [z_col, y_col]
        .into_iter()
        .chain(cov_cols.iter().map(|c| match c {
            Column::Numeric(i) | Column::Categorical(i) => *i,
        }))
        .collect();

    let mut rows: Vec<csv::StringRecord> = Vec::new();
    let mut rows_read = 0usize;
    let mut rows_dropped = 0usize;
    for record in rdr.records() {
        let record = record?;
        rows_read += 1;
        let missing = used
            .iter()
            .any(|&i| record.get(i).is_none_or(|cell| schema.is_na(cell)));
        if missing {
            match schema.missing {
                MissingPolicy::DropRow => {
                    rows_dropped += 1;
                    continue;
                }
                MissingPolicy::Error => {
                    return Err(Error::Data(format!("missing value on data row {rows_read}")))
                }
            }
        }
        rows.push(record);
    }

    let n = rows.len();
    let mut treatment = Vec::with_capacity(n);
    let mut outcome = Vec::with_capacity(n);
    for (r, row) in rows.iter().enumerate() {
        treatment.push(parse_treatment(&row[z_col], schema, r + 1)?);
        outcome.push(parse_outcome(&row[y_col], schema, r + 1)?);
    }

    let mut names = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (spec, name) in cov_cols.iter().zip(&schema.covariates) {
        match *spec {
            Column::Numeric(idx) => {
                let mut col = Vec::with_capacity(n);
                for (r, row) in rows.iter().enumerate() {
                    let cell = &row[idx];
                    let v: f64 = cell.parse().map_err(|_| {
                        Error::Data(format!(
                            "non-numeric value `{cell}` in covariate `{name}` (row {}); declare it categorical",
                            r + 1
                        ))
                    })?;
                    if !v.is_finite() {
                        return Err(Error::Data(format!(
                            "non-finite value in covariate `{name}` (row {})",
                            r + 1
                        )));
                    }
                    col.push(v);
                }
                names.push(name.clone());
                columns.push(col);
            }
            Column::Categorical(idx) => {
                let levels: BTreeSet<&str> = rows.iter().map(|row| &row[idx]).collect();
                for level in levels.iter().skip(1) {
                    names.push(format!("{name}={level}"));
                    columns.push(
                        rows.iter()
                            .map(|row| if &row[idx] == *level { 1.0 } else { 0.0 })
                            .collect(),
                    );
                }
            }
        }
    }
    if columns.is_empty() {
        return Err(Error::Data(
            "no covariate columns left after categorical expansion".into(),
        ));
    }
    let covariates = DMatrix::from_fn(n, columns.len(), |i, j| columns[j][i]);
    let dataset = Dataset::new(covariates, treatment, outcome, names)?;
    Ok(Ingested {
        dataset,
        rows_read,
        rows_dropped,
    })
}

fn parse_treatment(cell: &str, schema: &Schema, row: usize) -> Result<u8> {
    if let Some(levels) = &schema.treatment_levels {
        return if cell == levels.treated {
            Ok(1)
        } else if cell == levels.control {
            Ok(0)
        } else {
            Err(Error::Data(format!(
                "treatment value `{cell}` on row {row} matches neither `{}` nor `{}`",
                levels.treated, levels.control
            )))
        };
    }
    match cell.parse::<f64>() {
        Ok(v) if v == 0.0 => Ok(0),
        Ok(v) if v == 1.0 => Ok(1),
        _ => Err(Error::Data(format!(
            "non-binary treatment value `{cell}` on row {row}"
        ))),
    }
}

fn parse_outcome(cell: &str, schema: &Schema, row: usize) -> Result<f64> {
    if let Some(&v) = schema.outcome_levels.get(cell) {
        return Ok(v);
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Data(format!(
            "outcome value `{cell}` on row {row} is not numeric"
        ))),
    }
}
