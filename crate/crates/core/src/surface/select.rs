//! Contour-intersection selection of estimands.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::contour::{band_edges, band_index};
use super::Surface;
use crate::error::{Error, Result};
use crate::estimand::EstimandSpec;

/// Region searched for each mismatch band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionMode {
    /// Nodes whose mismatch value falls in the band itself.
    #[default]
    Band,
    /// Nodes whose mismatch value falls in the band or any band above it.
    Superlevel,
}

/// The band the recommended entry is taken from.
const RECOMMENDED: (f64, f64) = (0.05, 0.10);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionEntry {
    pub band: usize,
    pub lower: f64,
    pub upper: f64,
    pub label: String,
    pub spec: EstimandSpec,
    /// Fine-lattice node of the choice.
    pub node: (usize, usize),
    pub se: f64,
    pub p_mismatch: f64,
    pub p_statbias: f64,
    pub statbias_band: usize,
    pub statbias_label: String,
    pub tau_hat: Option<f64>,
    pub recommended: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub mode: RegionMode,
    pub levels: Vec<f64>,
    pub entries: Vec<SelectionEntry>,
}

impl SelectionResult {
    pub fn recommended(&self) -> Option<&SelectionEntry> {
        self.entries.iter().find(|e| e.recommended)
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)
            .map_err(|e| Error::Data(format!("cannot serialise selection: {e}")))
    }

    /// Fixed-width text table, one row per entry.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<16} {:>7} {:>7} {:>10} {:>10} {:<16} {:>11}",
            "mismatch band", "c", "d", "se", "p_mis", "statbias band", "tau_hat"
        );
        for e in &self.entries {
            let tau = e.tau_hat.map_or_else(|| "-".to_string(), |t| format!("{t:.4}"));
            let _ = writeln!(
                s,
                "{:<16} {:>7.4} {:>7.4} {:>10.5} {:>10.4} {:<16} {:>11}{}",
                e.label,
                e.spec.c,
                e.spec.d,
                e.se,
                e.p_mismatch,
                e.statbias_label,
                tau,
                if e.recommended { "  *" } else { "" }
            );
        }
        s
    }
}

fn label(edges: &[f64], j: usize) -> String {
    let open = if j == 0 { '[' } else { '(' };
    format!("{open}{}, {}]", edges[j], edges[j + 1])
}

/// Picks one estimand per nonempty mismatch band: the node of least `se`
/// inside the highest statbias band that meets the band's region. Ties go
/// to the node nearer `(0, 0)`, then to the smaller `(c, d)`.
pub fn select_estimands(
    mismatch: &Surface,
    statbias: &Surface,
    se: &Surface,
    levels: &[f64],
    mode: RegionMode,
    tau: Option<&Surface>,
) -> Result<SelectionResult> {
    if !mismatch.same_lattice(statbias) || !mismatch.same_lattice(se) {
        return Err(Error::InvalidInput("selection surfaces must share one lattice".into()));
    }
    if let Some(t) = tau {
        if !mismatch.same_lattice(t) {
            return Err(Error::InvalidInput("selection surfaces must share one lattice".into()));
        }
    }
    if mismatch.values.is_empty() {
        return Err(Error::InvalidInput("empty surface".into()));
    }
    let edges = band_edges(levels)?;
    let nb = edges.len() - 1;
    let nd = mismatch.d.len();
    let mis_band: Vec<usize> = mismatch.values.iter().map(|&v| band_index(&edges, v)).collect();
    let sb_band: Vec<usize> = statbias.values.iter().map(|&v| band_index(&edges, v)).collect();

    let better = |a: usize, b: usize| -> bool {
        let (sa, sb) = (se.values[a], se.values[b]);
        if sa != sb {
            return sa < sb;
        }
        let (ca, da) = (mismatch.c[a / nd], mismatch.d[a % nd]);
        let (cb, db) = (mismatch.c[b / nd], mismatch.d[b % nd]);
        let (ra, rb) = (ca * ca + da * da, cb * cb + db * db);
        if ra != rb {
            return ra < rb;
        }
        (ca, da) < (cb, db)
    };

    let mut entries = Vec::new();
    for j in 0..nb {
        if !mis_band.contains(&j) {
            continue;
        }
        let in_region = |node: usize| match mode {
            RegionMode::Band => mis_band[node] == j,
            RegionMode::Superlevel => mis_band[node] >= j,
        };
        // Highest statbias band met, then the best node within it.
        let mut best: Option<(usize, usize)> = None;
        for node in (0..mis_band.len()).filter(|&n| in_region(n)) {
            let b = sb_band[node];
            best = match best {
                None => Some((b, node)),
                Some((bb, _)) if b > bb => Some((b, node)),
                Some((bb, bn)) if b == bb && better(node, bn) => Some((b, node)),
                keep => keep,
            };
        }
        let Some((sbj, node)) = best else { continue };
        let (i, k) = (node / nd, node % nd);
        entries.push(SelectionEntry {
            band: j,
            lower: edges[j],
            upper: edges[j + 1],
            label: label(&edges, j),
            spec: EstimandSpec::new(mismatch.c[i], mismatch.d[k])?,
            node: (i, k),
            se: se.values[node],
            p_mismatch: mismatch.values[node],
            p_statbias: statbias.values[node],
            statbias_band: sbj,
            statbias_label: label(&edges, sbj),
            tau_hat: tau.map(|t| t.values[node]),
            recommended: edges[j] == RECOMMENDED.0 && edges[j + 1] == RECOMMENDED.1,
        });
    }
    if entries.is_empty() {
        return Err(Error::Numerical {
            stage: "selection",
            message: "every mismatch band is empty".into(),
        });
    }
    Ok(SelectionResult {
        mode,
        levels: levels.to_vec(),
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{default_levels, fine_axis, Interpolation};
    use super::*;

    fn field(n: usize, f: impl Fn(f64, f64) -> f64) -> Surface {
        let axis = fine_axis(&[0.0, 1.0], n);
        let mut values = Vec::new();
        for &c in &axis {
            for &d in &axis {
                values.push(f(c, d));
            }
        }
        Surface { c: axis.clone(), d: axis, values, method: Interpolation::Raw }
    }

    #[test]
    fn constant_surfaces_choose_the_origin() {
        let m = field(50, |_, _| 0.5);
        let s = field(50, |c, d| c + d);
        let r = select_estimands(&m, &m, &s, &default_levels(), RegionMode::Band, None).unwrap();
        assert_eq!(r.entries.len(), 1);
        assert_eq!(r.entries[0].spec, EstimandSpec::ATE);
        assert_eq!(r.entries[0].label, "(0.4, 0.5]");
    }

    #[test]
    fn higher_statbias_band_wins_over_lower_se() {
        let m = field(51, |_, _| 0.6);
        let sb = field(51, |c, _| if c < 0.5 { 0.25 } else { 0.35 });
        let se = field(51, |c, d| c + d);
        let r = select_estimands(&m, &sb, &se, &default_levels(), RegionMode::Band, None).unwrap();
        let e = &r.entries[0];
        assert_eq!(e.statbias_label, "(0.3, 0.35]");
        assert_eq!((e.spec.c, e.spec.d), (0.5, 0.0));
    }

    #[test]
    fn ties_prefer_the_origin_then_lexicographic() {
        let m = field(11, |_, _| 0.6);
        let se = field(11, |c, d| if (c - d).abs() < 1e-12 || c + d > 0.95 { 0.1 } else { 0.5 });
        let r = select_estimands(&m, &m, &se, &default_levels(), RegionMode::Band, None).unwrap();
        assert_eq!(r.entries[0].spec, EstimandSpec::ATE);
        let se = field(11, |c, d| if (c + d - 1.0).abs() < 1e-12 { 0.1 } else { 0.5 });
        let r = select_estimands(&m, &m, &se, &default_levels(), RegionMode::Band, None).unwrap();
        // (0.5, 0.5) is nearest the origin on the anti-diagonal.
        assert!((r.entries[0].spec.c - 0.5).abs() < 1e-12);
    }

    #[test]
    fn recommended_entry_and_membership() {
        let m = field(80, |c, d| (c + d) / 2.0);
        let sb = field(80, |c, d| (1.0 - c * d).clamp(0.0, 1.0));
        let se = field(80, |c, d| 1.0 + (c - 0.3).powi(2) + (d - 0.6).powi(2));
        let tau = field(80, |c, _| c);
        let levels = default_levels();
        let r = select_estimands(&m, &sb, &se, &levels, RegionMode::Band, Some(&tau)).unwrap();
        let rec = r.recommended().unwrap();
        assert_eq!((rec.lower, rec.upper), (0.05, 0.1));
        for e in &r.entries {
            assert!(e.p_mismatch <= e.upper);
            assert!(e.band == 0 || e.p_mismatch > e.lower);
            assert_eq!(e.tau_hat, Some(e.spec.c));
        }
        assert!(r.to_table().lines().count() == r.entries.len() + 1);
        let mut buf = Vec::new();
        r.write_json(&mut buf).unwrap();
        let back: SelectionResult = serde_json::from_slice(&buf).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn superlevel_objective_improves_as_bands_loosen() {
        for seed in 0..6u32 {
            let s = f64::from(seed);
            let m = field(60, |c, d| (0.5 + 0.5 * (3.0 * c + s).sin() * (2.0 * d - s).cos()).clamp(0.0, 1.0));
            let sb = field(60, |c, d| (0.5 + 0.5 * (2.0 * c * d + s).cos()).clamp(0.0, 1.0));
            let se = field(60, |c, d| 1.0 + (c - 0.1 * s).powi(2) + d * (1.0 + s).sin());
            let r = select_estimands(&m, &sb, &se, &default_levels(), RegionMode::Superlevel, None).unwrap();
            for w in r.entries.windows(2) {
                // w[0] has the lower bound, so the larger region.
                let (a, b) = (&w[0], &w[1]);
                assert!(a.statbias_band > b.statbias_band || (a.statbias_band == b.statbias_band && a.se <= b.se));
            }
        }
    }

    #[test]
    fn mismatched_lattices_are_rejected() {
        let a = field(10, |_, _| 0.5);
        let b = field(11, |_, _| 0.5);
        assert!(select_estimands(&a, &a, &b, &default_levels(), RegionMode::Band, None).is_err());
    }
}
