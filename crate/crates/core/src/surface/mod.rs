//! Interpolated metric surfaces over the `(c, d)` square, contour bands and
//! the contour-intersection selection.

mod contour;
mod kriging;
mod select;
mod spline;

pub use contour::{
    band_edges, band_index, default_levels, extract_bands, isoline, validate_levels, ContourBand,
    Polyline,
};
pub use kriging::{
    empirical_variogram, fit_variogram, Kriging, KrigingFit, Variogram, VariogramBin, DEFAULT_BINS,
};
pub use select::{select_estimands, RegionMode, SelectionEntry, SelectionResult};

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridEvaluation, Metric};

pub const DEFAULT_RESOLUTION: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Spline,
    Bilinear,
    Kriging,
    Raw,
}

/// Values on a regular lattice, c-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surface {
    pub c: Vec<f64>,
    pub d: Vec<f64>,
    pub values: Vec<f64>,
    pub method: Interpolation,
}

impl Surface {
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.d.len() + j]
    }

    pub fn same_lattice(&self, other: &Surface) -> bool {
        self.c == other.c && self.d == other.d
    }

    /// The coarse grid values themselves, without interpolation.
    pub fn from_grid(grid: &GridEvaluation, metric: Metric) -> Result<Self> {
        let values = grid
            .lattice(metric)
            .ok_or_else(|| Error::Data(format!("grid has missing `{}` values", metric.name())))?;
        Ok(Self {
            c: grid.c_axis.clone(),
            d: grid.d_axis.clone(),
            values,
            method: Interpolation::Raw,
        })
    }

    /// CSV with columns `c,d,value`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["c", "d", "value"])?;
        for (i, c) in self.c.iter().enumerate() {
            for (j, d) in self.d.iter().enumerate() {
                w.write_record([c.to_string(), d.to_string(), self.at(i, j).to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io("<surface csv>", e))?;
        Ok(())
    }
}

/// `points` evenly spaced values spanning the range of `coarse`.
pub fn fine_axis(coarse: &[f64], points: usize) -> Vec<f64> {
    let lo = coarse.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = coarse.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if points <= 1 || hi <= lo {
        return vec![lo];
    }
    (0..points)
        .map(|i| if i + 1 == points { hi } else { lo + (hi - lo) * i as f64 / (points - 1) as f64 })
        .collect()
}

fn check_lattice(grid: &GridEvaluation, min: usize) -> Result<()> {
    if grid.c_axis.len() < min || grid.d_axis.len() < min {
        return Err(Error::InvalidInput(format!(
            "interpolation needs at least a {min} x {min} lattice, got {} x {}",
            grid.c_axis.len(),
            grid.d_axis.len()
        )));
    }
    if grid.rows.len() != grid.c_axis.len() * grid.d_axis.len() {
        return Err(Error::InvalidInput("grid rows do not form a lattice".into()));
    }
    Ok(())
}

/// Bicubic natural-spline surface of a p-value metric on a
/// `resolution x resolution` lattice, clamped to `[0, 1]`. `raw` switches
/// to bilinear interpolation.
pub fn smooth_pvalues(grid: &GridEvaluation, metric: Metric, resolution: usize, raw: bool) -> Result<Surface> {
    check_lattice(grid, if raw { 2 } else { 4 })?;
    let values = grid
        .lattice(metric)
        .ok_or_else(|| Error::Data(format!("grid has missing `{}` values", metric.name())))?;
    let fc = fine_axis(&grid.c_axis, resolution);
    let fd = fine_axis(&grid.d_axis, resolution);
    let (sc, sd) = if raw {
        (spline::linear_matrix(&grid.c_axis, &fc), spline::linear_matrix(&grid.d_axis, &fd))
    } else {
        (
            spline::natural_cubic_matrix(&grid.c_axis, &fc),
            spline::natural_cubic_matrix(&grid.d_axis, &fd),
        )
    };
    let mut fine = spline::tensor_apply(&sc, &sd, &values);
    fine.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(Surface {
        c: fc,
        d: fd,
        values: fine,
        method: if raw { Interpolation::Bilinear } else { Interpolation::Spline },
    })
}

/// Bicubic natural-spline surface of any metric, without clamping.
pub fn spline_surface(grid: &GridEvaluation, metric: Metric, resolution: usize) -> Result<Surface> {
    check_lattice(grid, 4)?;
    let values = grid
        .lattice(metric)
        .ok_or_else(|| Error::Data(format!("grid has missing `{}` values", metric.name())))?;
    let fc = fine_axis(&grid.c_axis, resolution);
    let fd = fine_axis(&grid.d_axis, resolution);
    let sc = spline::natural_cubic_matrix(&grid.c_axis, &fc);
    let sd = spline::natural_cubic_matrix(&grid.d_axis, &fd);
    Ok(Surface {
        values: spline::tensor_apply(&sc, &sd, &values),
        c: fc,
        d: fd,
        method: Interpolation::Spline,
    })
}

/// Ordinary-kriging surface of the bootstrap standard errors.
pub fn krige_se(grid: &GridEvaluation, resolution: usize) -> Result<(Surface, KrigingFit)> {
    let mut points = Vec::new();
    let mut values = Vec::new();
    for r in &grid.rows {
        if let Some(se) = r.se_boot.filter(|v| v.is_finite()) {
            points.push((r.spec.c, r.spec.d));
            values.push(se);
        }
    }
    if points.len() < 10 {
        return Err(Error::InvalidInput(format!(
            "kriging needs at least 10 finite standard errors, got {}",
            points.len()
        )));
    }
    let (model, fit) = Kriging::fit(&points, &values, DEFAULT_BINS)?;
    let fc = fine_axis(&grid.c_axis, resolution);
    let fd = fine_axis(&grid.d_axis, resolution);
    let values = model.predict_lattice(&fc, &fd);
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("kriging", "non-finite kriged standard error"));
    }
    Ok((
        Surface {
            c: fc,
            d: fd,
            values,
            method: Interpolation::Kriging,
        },
        fit,
    ))
}

/// Surfaces and selection produced from one grid evaluation.
#[derive(Debug, Clone)]
pub struct SelectionRun {
    pub mismatch: Surface,
    pub statbias: Surface,
    pub se: Surface,
    pub kriging: KrigingFit,
    pub selection: SelectionResult,
}

/// Smooths both p-value metrics, kriges the standard errors and selects.
/// `raw` contours bilinear rather than spline-smoothed p-values.
pub fn select_from_grid(
    grid: &GridEvaluation,
    levels: &[f64],
    resolution: usize,
    mode: RegionMode,
    raw: bool,
) -> Result<SelectionRun> {
    let mismatch = smooth_pvalues(grid, Metric::PMismatch, resolution, raw)?;
    let statbias = smooth_pvalues(grid, Metric::PStatbias, resolution, raw)?;
    let (se, kriging) = krige_se(grid, resolution)?;
    let selection = select_estimands(&mismatch, &statbias, &se, levels, mode, None)?;
    Ok(SelectionRun {
        mismatch,
        statbias,
        se,
        kriging,
        selection,
    })
}
