//! Logistic propensity-score model fitted by iteratively reweighted least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Scores are clipped to `[SCORE_EPS, 1 - SCORE_EPS]` when predicted.
pub const SCORE_EPS: f64 = 1e-6;
const MAX_ITERATIONS: usize = 100;
const DEVIANCE_TOL: f64 = 1e-10;
const SEPARATION_TOL: f64 = 1e-10;

/// Extra powers of one covariate: `column^2 ..= column^degree`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolynomialTerm {
    pub column: String,
    pub degree: u32,
}

/// Which columns enter the linear predictor.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpec {
    /// Main-effect covariates, in order. Empty means every covariate.
    #[serde(default)]
    pub columns: Vec<String>,
    #[serde(default)]
    pub polynomial: Vec<PolynomialTerm>,
    /// Opt-in ridge penalty on the slopes (never the intercept).
    #[serde(default)]
    pub ridge: f64,
}

impl DesignSpec {
    pub fn main_effects() -> Self {
        Self::default()
    }

    pub fn with_square(mut self, column: &str) -> Self {
        self.polynomial.push(PolynomialTerm {
            column: column.into(),
            degree: 2,
        });
        self
    }

    /// Term names, intercept first.
    pub fn term_names(&self, data: &Dataset) -> Result<Vec<String>> {
        Ok(self.resolve(data)?.into_iter().map(|t| t.name).collect())
    }

    fn resolve(&self, data: &Dataset) -> Result<Vec<Term>> {
        if !(self.ridge.is_finite() && self.ridge >= 0.0) {
            return Err(Error::Config(format!("ridge penalty {} must be >= 0", self.ridge)));
        }
        let lookup = |name: &str| {
            data.column_index(name).ok_or_else(|| {
                Error::Config(format!("design column `{name}` is not a covariate"))
            })
        };
        let mut terms = vec![Term {
            name: "(intercept)".into(),
            column: None,
            power: 0,
        }];
        if self.columns.is_empty() {
            for (j, name) in data.column_names().iter().enumerate() {
                terms.push(Term {
                    name: name.clone(),
                    column: Some(j),
                    power: 1,
                });
            }
        } else {
            for name in &self.columns {
                terms.push(Term {
                    name: name.clone(),
                    column: Some(lookup(name)?),
                    power: 1,
                });
            }
        }
        for poly in &self.polynomial {
            if poly.degree < 2 {
                return Err(Error::Config(format!(
                    "polynomial degree for `{}` must be >= 2",
                    poly.column
                )));
            }
            let j = lookup(&poly.column)?;
            for power in 2..=poly.degree {
                terms.push(Term {
                    name: format!("{}^{power}", poly.column),
                    column: Some(j),
                    power: power as i32,
                });
            }
        }
        Ok(terms)
    }

    /// The n x q design matrix with a leading intercept column.
    pub fn design_matrix(&self, data: &Dataset) -> Result<DMatrix<f64>> {
        let terms = self.resolve(data)?;
        let x = data.covariates();
        Ok(DMatrix::from_fn(data.n(), terms.len(), |i, t| {
            match terms[t].column {
                None => 1.0,
                Some(j) => x[(i, j)].powi(terms[t].power),
            }
        }))
    }
}

struct Term {
    name: String,
    column: Option<usize>,
    power: i32,
}

/// A fitted logistic propensity model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    pub coefficients: Vec<f64>,
    pub term_names: Vec<String>,
    pub design: DesignSpec,
    pub converged: bool,
    pub iterations: usize,
    pub deviance: f64,
    /// Clipped scores of the units the model was fitted on.
    #[serde(skip)]
    pub fitted_scores: Vec<f64>,
}

#[inline]
pub fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn clip_score(p: f64) -> f64 {
    p.clamp(SCORE_EPS, 1.0 - SCORE_EPS)
}

fn deviance(eta: &DVector<f64>, z: &[f64]) -> f64 {
    2.0 * eta
        .iter()
        .zip(z)
        .map(|(&e, &zi)| zi * softplus(-e) + (1.0 - zi) * softplus(e))
        .sum::<f64>()
}

/// Maximum-likelihood logistic fit of treatment on the design columns.
pub fn fit_propensity(data: &Dataset, design: &DesignSpec) -> Result<PropensityModel> {
    let x = design.design_matrix(data)?;
    let term_names = design.term_names(data)?;
    let (n, q) = x.shape();
    if n <= q {
        return Err(Error::Data(format!("{n} units cannot identify {q} coefficients")));
    }
    let z: Vec<f64> = data.treatment().iter().map(|&t| f64::from(t)).collect();
    let z_vec = DVector::from_column_slice(&z);
    let ridge = design.ridge;
    let penalty = |beta: &DVector<f64>| ridge * beta.iter().skip(1).map(|b| b * b).sum::<f64>();

    let mut beta = DVector::<f64>::zeros(q);
    let mut eta = &x * &beta;
    let mut objective = deviance(&eta, &z) + penalty(&beta);
    let mut norms = Vec::with_capacity(MAX_ITERATIONS);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let p = eta.map(expit);
        let w = p.map(|pi| pi * (1.0 - pi));
        let mut grad = x.tr_mul(&(&z_vec - &p));
        let mut xw = x.clone();
        for (i, mut row) in xw.row_iter_mut().enumerate() {
            row *= w[i].sqrt();
        }
        let mut hess = xw.tr_mul(&xw);
        if ridge > 0.0 {
            for j in 1..q {
                hess[(j, j)] += ridge;
                grad[j] -= ridge * beta[j];
            }
        }
        let chol = match hess.cholesky() {
            Some(c) => c,
            None => {
                if p.iter().any(|&pi| pi < SEPARATION_TOL || pi > 1.0 - SEPARATION_TOL) {
                    return Err(separation_error(&beta, &term_names));
                }
                return Err(Error::SingularDesign);
            }
        };
        let step = chol.solve(&grad);

        // Step halving keeps the penalised deviance non-increasing.
        let mut scale = 1.0;
        let (new_beta, new_eta, new_objective) = loop {
            let cand = &beta + &step * scale;
            let cand_eta = &x * &cand;
            let obj = deviance(&cand_eta, &z) + penalty(&cand);
            if obj <= objective * (1.0 + 1e-12) || scale < 1e-8 {
                break (cand, cand_eta, obj);
            }
            scale *= 0.5;
        };
        let change = (objective - new_objective).abs() / (new_objective.abs() + 0.1);
        beta = new_beta;
        eta = new_eta;
        objective = new_objective;
        norms.push(beta.norm());
        if !objective.is_finite() || beta.iter().any(|b| !b.is_finite()) {
            return Err(separation_error(&beta, &term_names));
        }
        if change < DEVIANCE_TOL {
            converged = true;
            break;
        }
    }

    let raw: Vec<f64> = eta.iter().map(|&e| expit(e)).collect();
    let saturated = raw
        .iter()
        .any(|&pi| pi < SEPARATION_TOL || pi > 1.0 - SEPARATION_TOL);
    let diverging = norms.len() >= 4 && {
        let tail = &norms[norms.len() - 4..];
        tail.windows(2).all(|w| w[1] > w[0] * (1.0 + 1e-3))
    };
    if saturated && (diverging || !converged) {
        return Err(separation_error(&beta, &term_names));
    }
    if !converged {
        return Err(Error::numerical(
            "propensity",
            format!("IRLS did not converge in {MAX_ITERATIONS} iterations"),
        ));
    }
    Ok(PropensityModel {
        coefficients: beta.iter().copied().collect(),
        term_names,
        design: design.clone(),
        converged,
        iterations,
        deviance: deviance(&eta, &z),
        fitted_scores: raw.into_iter().map(clip_score).collect(),
    })
}

fn separation_error(beta: &DVector<f64>, names: &[String]) -> Error {
    let j = (1..beta.len())
        .max_by(|&a, &b| beta[a].abs().total_cmp(&beta[b].abs()))
        .unwrap_or(0);
    Error::Separation {
        column: names.get(j).cloned().unwrap_or_default(),
    }
}

impl PropensityModel {
    /// Clipped scores for the units of `data`.
    pub fn predict(&self, data: &Dataset) -> Result<Vec<f64>> {
        let x = self.design.design_matrix(data)?;
        if x.ncols() != self.coefficients.len() {
            return Err(Error::InvalidInput(format!(
                "design has {} columns but the model has {} coefficients",
                x.ncols(),
                self.coefficients.len()
            )));
        }
        let beta = DVector::from_column_slice(&self.coefficients);
        Ok((&x * &beta).iter().map(|&e| clip_score(expit(e))).collect())
    }

    /// Score equations X'(z - p) at the fitted coefficients.
    pub fn score_equations(&self, data: &Dataset) -> Result<Vec<f64>> {
        let x = self.design.design_matrix(data)?;
        let beta = DVector::from_column_slice(&self.coefficients);
        let p = (&x * &beta).map(expit);
        let z = DVector::from_iterator(data.n(), data.treatment().iter().map(|&t| f64::from(t)));
        Ok(x.tr_mul(&(z - p)).iter().copied().collect())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::numerical("propensity", e.to_string()))
    }
}

/// Clipped scores from a fitted model; see [`PropensityModel::predict`].
pub fn predict_scores(model: &PropensityModel, data: &Dataset) -> Result<Vec<f64>> {
    model.predict(data)
}
