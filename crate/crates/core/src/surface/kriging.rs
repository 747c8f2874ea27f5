//! Ordinary kriging with a Gaussian variogram
//! `gamma(h) = nugget + sill * (1 - exp(-h^2 / range^2))`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 15;
const IDW_POWER: i32 = 2;
/// Diagonal jitter, relative to the sill, that keeps the covariance matrix
/// numerically positive definite when the nugget is zero.
const JITTER: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Variogram {
    pub nugget: f64,
    pub sill: f64,
    pub range: f64,
}

impl Variogram {
    pub fn gamma(&self, h: f64) -> f64 {
        if h == 0.0 {
            0.0
        } else {
            self.nugget + self.sill * (1.0 - (-(h * h) / (self.range * self.range)).exp())
        }
    }

    /// Covariance `C(h) = nugget * [h = 0] + sill * exp(-h^2 / range^2)`.
    fn covariance(&self, h2: f64) -> f64 {
        let base = self.sill * (-h2 / (self.range * self.range)).exp();
        if h2 == 0.0 {
            base + self.nugget
        } else {
            base
        }
    }
}

/// One bin of the empirical semivariogram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramBin {
    pub lag: f64,
    pub semivariance: f64,
    pub count: usize,
}

/// Pairwise semivariances averaged in `bins` equal-width lag bins up to half
/// the largest pairwise distance.
pub fn empirical_variogram(points: &[(f64, f64)], values: &[f64], bins: usize) -> Vec<VariogramBin> {
    let n = points.len();
    let mut hmax: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            hmax = hmax.max(dist(points[i], points[j]));
        }
    }
    let cutoff = hmax / 2.0;
    if cutoff <= 0.0 || bins == 0 {
        return Vec::new();
    }
    let width = cutoff / bins as f64;
    let mut acc = vec![(0.0, 0.0, 0usize); bins];
    for i in 0..n {
        for j in i + 1..n {
            let h = dist(points[i], points[j]);
            if h > cutoff {
                continue;
            }
            let b = ((h / width).ceil() as usize).clamp(1, bins) - 1;
            let g = 0.5 * (values[i] - values[j]).powi(2);
            acc[b].0 += h;
            acc[b].1 += g;
            acc[b].2 += 1;
        }
    }
    acc.into_iter()
        .filter(|a| a.2 > 0)
        .map(|(h, g, c)| VariogramBin {
            lag: h / c as f64,
            semivariance: g / c as f64,
            count: c,
        })
        .collect()
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Weighted least-squares fit (weights = bin counts) of the Gaussian model.
///
/// For a fixed range the model is linear in (nugget, sill), solved under
/// nonnegativity; the range is found by a log-spaced scan refined by golden
/// section. `nugget_free` pins the nugget at zero.
pub fn fit_variogram(bins: &[VariogramBin], nugget_free: bool) -> Option<Variogram> {
    if bins.len() < 2 {
        return None;
    }
    let hmax = bins.iter().map(|b| b.lag).fold(0.0, f64::max);
    let hmin = bins.iter().map(|b| b.lag).fold(f64::INFINITY, f64::min);
    if !(hmax > 0.0) {
        return None;
    }
    let objective = |log_r: f64| -> (f64, f64, f64) {
        let r = log_r.exp();
        let (nug, sill) = linear_part(bins, r, nugget_free);
        let sse = bins
            .iter()
            .map(|b| {
                let model = nug + sill * (1.0 - (-(b.lag * b.lag) / (r * r)).exp());
                b.count as f64 * (b.semivariance - model).powi(2)
            })
            .sum();
        (sse, nug, sill)
    };
    let (lo, hi) = ((hmin / 4.0).ln(), (hmax * 4.0).ln());
    let steps = 120;
    let mut best = (f64::INFINITY, lo);
    for s in 0..=steps {
        let t = lo + (hi - lo) * s as f64 / steps as f64;
        let v = objective(t).0;
        if v < best.0 {
            best = (v, t);
        }
    }
    let step = (hi - lo) / steps as f64;
    let (mut a, mut b) = ((best.1 - step).max(lo), (best.1 + step).min(hi));
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..60 {
        let x1 = b - phi * (b - a);
        let x2 = a + phi * (b - a);
        if objective(x1).0 <= objective(x2).0 {
            b = x2;
        } else {
            a = x1;
        }
    }
    let t = 0.5 * (a + b);
    let (_, nugget, sill) = objective(t);
    let range = t.exp();
    (sill > 0.0 && range > 0.0 && sill.is_finite()).then_some(Variogram { nugget, sill, range })
}

/// Nonnegative WLS for (nugget, sill) at a fixed range.
fn linear_part(bins: &[VariogramBin], r: f64, nugget_free: bool) -> (f64, f64) {
    let (mut s11, mut s12, mut s22, mut t1, mut t2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for b in bins {
        let w = b.count as f64;
        let g = 1.0 - (-(b.lag * b.lag) / (r * r)).exp();
        s11 += w;
        s12 += w * g;
        s22 += w * g * g;
        t1 += w * b.semivariance;
        t2 += w * g * b.semivariance;
    }
    let sill_only = if s22 > 0.0 { (t2 / s22).max(0.0) } else { 0.0 };
    if nugget_free {
        return (0.0, sill_only);
    }
    let det = s11 * s22 - s12 * s12;
    if det > 1e-14 * s11 * s22 {
        let nug = (s22 * t1 - s12 * t2) / det;
        let sill = (s11 * t2 - s12 * t1) / det;
        if nug >= 0.0 && sill >= 0.0 {
            return (nug, sill);
        }
    }
    let sse = |nug: f64, sill: f64| {
        bins.iter()
            .map(|b| {
                let g = 1.0 - (-(b.lag * b.lag) / (r * r)).exp();
                b.count as f64 * (b.semivariance - nug - sill * g).powi(2)
            })
            .sum::<f64>()
    };
    let nug_only = (t1 / s11).max(0.0);
    if sse(0.0, sill_only) <= sse(nug_only, 0.0) {
        (0.0, sill_only)
    } else {
        (nug_only, 0.0)
    }
}

/// How the final predictor was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum KrigingFit {
    Kriging { variogram: Variogram, bins: Vec<VariogramBin> },
    NuggetFree { variogram: Variogram, bins: Vec<VariogramBin> },
    InverseDistance { power: i32 },
    Constant { value: f64 },
}

/// A predictor built from scattered observations.
#[derive(Debug, Clone)]
pub struct Kriging {
    points: Vec<(f64, f64)>,
    values: Vec<f64>,
    kind: Kind,
}

#[derive(Debug, Clone)]
enum Kind {
    Ordinary {
        variogram: Variogram,
        /// Dual coefficients: prediction is `b + sum a_i C(x, x_i)`.
        a: Vec<f64>,
        b: f64,
        /// Cholesky factor of the covariance matrix, kept for weights.
        chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    },
    Idw,
    Constant(f64),
}

impl Kriging {
    /// Ordinary kriging with a fixed variogram.
    pub fn with_variogram(points: &[(f64, f64)], values: &[f64], variogram: Variogram) -> Result<Self> {
        let n = points.len();
        if n == 0 || values.len() != n {
            return Err(Error::InvalidInput("kriging needs matching points and values".into()));
        }
        let mut c = DMatrix::from_fn(n, n, |i, j| {
            let h2 = (points[i].0 - points[j].0).powi(2) + (points[i].1 - points[j].1).powi(2);
            variogram.covariance(h2)
        });
        for i in 0..n {
            c[(i, i)] += JITTER * variogram.sill;
        }
        let chol = c
            .cholesky()
            .ok_or_else(|| Error::numerical("kriging", "covariance matrix is not positive definite"))?;
        let ones = DVector::from_element(n, 1.0);
        let z = DVector::from_column_slice(values);
        let ci1 = chol.solve(&ones);
        let ciz = chol.solve(&z);
        let b = ciz.sum() / ci1.sum();
        let a = chol.solve(&(z - ones * b));
        Ok(Self {
            points: points.to_vec(),
            values: values.to_vec(),
            kind: Kind::Ordinary {
                variogram,
                a: a.iter().copied().collect(),
                b,
                chol,
            },
        })
    }

    /// Variogram fit with the fallback chain: full fit, nugget-free fit,
    /// inverse-distance weighting.
    pub fn fit(points: &[(f64, f64)], values: &[f64], bins: usize) -> Result<(Self, KrigingFit)> {
        if points.is_empty() || values.len() != points.len() {
            return Err(Error::InvalidInput("kriging needs matching points and values".into()));
        }
        if values.iter().all(|&v| v == values[0]) {
            let k = Self {
                points: points.to_vec(),
                values: values.to_vec(),
                kind: Kind::Constant(values[0]),
            };
            return Ok((k, KrigingFit::Constant { value: values[0] }));
        }
        let emp = empirical_variogram(points, values, bins);
        if let Some(v) = fit_variogram(&emp, false) {
            if let Ok(k) = Self::with_variogram(points, values, v) {
                return Ok((k, KrigingFit::Kriging { variogram: v, bins: emp }));
            }
        }
        if let Some(v) = fit_variogram(&emp, true) {
            if let Ok(k) = Self::with_variogram(points, values, v) {
                log::warn!("variogram fit failed; using the nugget-free fit");
                return Ok((k, KrigingFit::NuggetFree { variogram: v, bins: emp }));
            }
        }
        log::warn!("variogram fit failed; falling back to inverse-distance weighting");
        let k = Self {
            points: points.to_vec(),
            values: values.to_vec(),
            kind: Kind::Idw,
        };
        Ok((k, KrigingFit::InverseDistance { power: IDW_POWER }))
    }

    pub fn predict(&self, x: (f64, f64)) -> f64 {
        match &self.kind {
            Kind::Constant(v) => *v,
            Kind::Idw => idw(&self.points, &self.values, x),
            Kind::Ordinary { variogram, a, b, .. } => {
                b + self
                    .points
                    .iter()
                    .zip(a)
                    .map(|(p, ai)| {
                        let h2 = (p.0 - x.0).powi(2) + (p.1 - x.1).powi(2);
                        ai * variogram.covariance(h2)
                    })
                    .sum::<f64>()
            }
        }
    }

    /// Kriging weights `lambda` with `prediction = lambda' z`.
    pub fn weights(&self, x: (f64, f64)) -> Vec<f64> {
        let n = self.points.len();
        match &self.kind {
            Kind::Constant(_) => vec![1.0 / n as f64; n],
            Kind::Idw => {
                if let Some(i) = self.points.iter().position(|p| *p == x) {
                    let mut w = vec![0.0; n];
                    w[i] = 1.0;
                    return w;
                }
                let raw: Vec<f64> = self.points.iter().map(|p| dist(*p, x).powi(-IDW_POWER)).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|r| r / s).collect()
            }
            Kind::Ordinary { variogram, chol, .. } => {
                let c0 = DVector::from_iterator(
                    n,
                    self.points.iter().map(|p| {
                        variogram.covariance((p.0 - x.0).powi(2) + (p.1 - x.1).powi(2))
                    }),
                );
                let ones = DVector::from_element(n, 1.0);
                let ci1 = chol.solve(&ones);
                let cic = chol.solve(&c0);
                let mu = (1.0 - ones.dot(&cic)) / ones.dot(&ci1);
                (cic + ci1 * mu).iter().copied().collect()
            }
        }
    }

    /// Predictions on the lattice `c x d`, c-major. Observations on a
    /// lattice of their own make the Gaussian covariance separable, so this
    /// costs two small matrix products instead of a sum per node.
    pub fn predict_lattice(&self, c: &[f64], d: &[f64]) -> Vec<f64> {
        let Kind::Ordinary { variogram, a, b, .. } = &self.kind else {
            let mut out = Vec::with_capacity(c.len() * d.len());
            for &ci in c {
                for &dj in d {
                    out.push(self.predict((ci, dj)));
                }
            }
            return out;
        };
        let mut pc: Vec<f64> = self.points.iter().map(|p| p.0).collect();
        let mut pd: Vec<f64> = self.points.iter().map(|p| p.1).collect();
        for v in [&mut pc, &mut pd] {
            v.sort_by(f64::total_cmp);
            v.dedup();
        }
        let r2 = variogram.range * variogram.range;
        let table = |fine: &[f64], knots: &[f64]| {
            DMatrix::from_fn(fine.len(), knots.len(), |i, k| (-(fine[i] - knots[k]).powi(2) / r2).exp())
        };
        let (ec, ed) = (table(c, &pc), table(d, &pd));
        let mut coef = DMatrix::zeros(pc.len(), pd.len());
        for (p, ai) in self.points.iter().zip(a) {
            let k = pc.partition_point(|&v| v < p.0);
            let l = pd.partition_point(|&v| v < p.1);
            coef[(k, l)] += ai;
        }
        let fine = ec * coef * ed.transpose() * variogram.sill;
        let mut out = Vec::with_capacity(c.len() * d.len());
        for (i, &ci) in c.iter().enumerate() {
            for (j, &dj) in d.iter().enumerate() {
                let mut v = b + fine[(i, j)];
                if variogram.nugget > 0.0 {
                    for (p, ai) in self.points.iter().zip(a) {
                        if p.0 == ci && p.1 == dj {
                            v += ai * variogram.nugget;
                        }
                    }
                }
                out.push(v);
            }
        }
        out
    }
}

fn idw(points: &[(f64, f64)], values: &[f64], x: (f64, f64)) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, v) in points.iter().zip(values) {
        let h = dist(*p, x);
        if h == 0.0 {
            return *v;
        }
        let w = h.powi(-IDW_POWER);
        num += w * v;
        den += w;
    }
    num / den
}
