//! Static SVG figures: contour panels, balance plot and score histograms.

use std::fmt::Write as _;

use crate::data::BalanceReport;
use crate::surface::{band_edges, band_index, isoline, SelectionResult, Surface};

const PANEL: f64 = 360.0;
const MARGIN: f64 = 50.0;
/// Band fill is drawn on at most this many cells per axis.
const FILL_CELLS: usize = 100;

fn header(s: &mut String, width: f64, height: f64) {
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Light-to-dark blue by band position.
fn band_colour(j: usize, bands: usize) -> String {
    let t = if bands > 1 { j as f64 / (bands - 1) as f64 } else { 0.0 };
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(247.0, 8.0), lerp(251.0, 69.0), lerp(255.0, 148.0))
}

fn panel(s: &mut String, x0: f64, y0: f64, surface: &Surface, levels: &[f64], title: &str, picks: &[(f64, f64, String)]) {
    let edges = band_edges(levels).unwrap_or_else(|_| vec![0.0, 1.0]);
    let nb = edges.len() - 1;
    let (c0, c1) = (surface.c[0], *surface.c.last().unwrap_or(&1.0));
    let (d0, d1) = (surface.d[0], *surface.d.last().unwrap_or(&1.0));
    let sx = |c: f64| x0 + if c1 > c0 { (c - c0) / (c1 - c0) * PANEL } else { 0.0 };
    let sy = |d: f64| y0 + PANEL - if d1 > d0 { (d - d0) / (d1 - d0) * PANEL } else { 0.0 };

    let _ = writeln!(s, r#"<g>"#);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="13">{}</text>"#, x0 + PANEL / 2.0, y0 - 10.0, escape(title));
    let (nc, nd) = (surface.c.len(), surface.d.len());
    let step_c = nc.div_ceil(FILL_CELLS).max(1);
    let step_d = nd.div_ceil(FILL_CELLS).max(1);
    let cells_c = nc.div_ceil(step_c);
    let cells_d = nd.div_ceil(step_d);
    let (w, h) = (PANEL / cells_c as f64, PANEL / cells_d as f64);
    for a in 0..cells_c {
        for b in 0..cells_d {
            let v = surface.at((a * step_c).min(nc - 1), (b * step_d).min(nd - 1));
            let j = band_index(&edges, v);
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                x0 + a as f64 * w,
                y0 + PANEL - (b + 1) as f64 * h,
                w + 0.3,
                h + 0.3,
                band_colour(j, nb)
            );
        }
    }
    for &t in &edges[1..nb] {
        for line in isoline(surface, t) {
            let pts: Vec<String> = line.iter().map(|&(c, d)| format!("{:.2},{:.2}", sx(c), sy(d))).collect();
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="black" stroke-width="0.6"/>"#, pts.join(" "));
        }
    }
    let _ = writeln!(s, r#"<rect x="{x0}" y="{y0}" width="{PANEL}" height="{PANEL}" fill="none" stroke="black"/>"#);
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let c = c0 + tick * (c1 - c0);
        let d = d0 + tick * (d1 - d0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{c}</text>"#, sx(c), y0 + PANEL + 15.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{d}</text>"#, x0 - 5.0, sy(d) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">c</text>"#, x0 + PANEL / 2.0, y0 + PANEL + 32.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">d</text>"#, x0 - 32.0, y0 + PANEL / 2.0);
    for (c, d, label) in picks {
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="red" stroke="black" stroke-width="0.8"/>"#, sx(*c), sy(*d));
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="9">{}</text>"#, sx(*c) + 6.0, sy(*d) - 4.0, escape(label));
    }
    let _ = writeln!(s, "</g>");
}

/// Side-by-side mismatch and statbias contour panels with the selected
/// estimands marked.
pub fn contour_figure(mismatch: &Surface, statbias: &Surface, levels: &[f64], selection: &SelectionResult) -> String {
    let width = 2.0 * PANEL + 3.0 * MARGIN + 20.0;
    let height = PANEL + 2.0 * MARGIN + 20.0;
    let picks: Vec<(f64, f64, String)> = selection
        .entries
        .iter()
        .map(|e| (e.spec.c, e.spec.d, format!("p={}{}", e.lower, if e.recommended { "*" } else { "" })))
        .collect();
    let mut s = String::new();
    header(&mut s, width, height);
    panel(&mut s, MARGIN + 10.0, MARGIN, mismatch, levels, "Estimand mismatch p-value", &picks);
    panel(&mut s, 2.0 * MARGIN + PANEL + 20.0, MARGIN, statbias, levels, "Statistical bias p-value", &picks);
    s.push_str("</svg>\n");
    s
}

/// Absolute standardised mean differences per covariate, before and after
/// weighting.
pub fn balance_figure(report: &BalanceReport) -> String {
    let rows = report.entries.len().max(1);
    let row_h = 16.0;
    let left = 160.0;
    let plot_w = 320.0;
    let height = rows as f64 * row_h + 2.0 * MARGIN;
    let width = left + plot_w + MARGIN;
    let max = report
        .entries
        .iter()
        .flat_map(|e| [e.smd_unweighted, e.smd_weighted])
        .flatten()
        .map(f64::abs)
        .fold(0.1, f64::max);
    let sx = |v: f64| left + v / max * plot_w;
    let mut s = String::new();
    header(&mut s, width, height);
    let _ = writeln!(s, r#"<line x1="{left}" y1="{MARGIN}" x2="{left}" y2="{}" stroke="black"/>"#, height - MARGIN);
    if 0.1 <= max {
        let x = sx(0.1);
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{MARGIN}" x2="{x:.2}" y2="{}" stroke="grey" stroke-dasharray="4,3"/>"#, height - MARGIN);
    }
    for (i, e) in report.entries.iter().enumerate() {
        let y = MARGIN + (i as f64 + 0.5) * row_h;
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, left - 6.0, y + 4.0, escape(&e.covariate));
        if let Some(v) = e.smd_unweighted {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{y:.2}" r="3.5" fill="none" stroke="black"/>"#, sx(v.abs()));
        }
        if let Some(v) = e.smd_weighted {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{y:.2}" r="3.5" fill="steelblue"/>"#, sx(v.abs()));
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">|SMD| (open: unweighted, filled: weighted)</text>"#,
        left + plot_w / 2.0,
        height - MARGIN / 2.0 + 10.0
    );
    s.push_str("</svg>\n");
    s
}

/// Overlaid score histograms of the two arms.
pub fn score_histogram(scores: &[f64], treatment: &[u8], bins: usize) -> String {
    let bins = bins.max(1);
    let mut counts = [vec![0usize; bins], vec![0usize; bins]];
    for (&e, &z) in scores.iter().zip(treatment) {
        let k = ((e * bins as f64) as usize).min(bins - 1);
        counts[usize::from(z == 1)][k] += 1;
    }
    let (w, h) = (480.0, 260.0);
    let width = w + 2.0 * MARGIN;
    let height = h + 2.0 * MARGIN;
    let top = counts.iter().flatten().copied().max().unwrap_or(1).max(1) as f64;
    let bw = w / bins as f64;
    let mut s = String::new();
    header(&mut s, width, height);
    for (arm, colour) in [(0, "#888888"), (1, "#4682b4")] {
        for (k, &c) in counts[arm].iter().enumerate() {
            let bh = c as f64 / top * h;
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{bw:.2}" height="{bh:.2}" fill="{colour}" fill-opacity="0.55"/>"#,
                MARGIN + k as f64 * bw,
                MARGIN + h - bh
            );
        }
    }
    let _ = writeln!(s, r#"<rect x="{MARGIN}" y="{MARGIN}" width="{w}" height="{h}" fill="none" stroke="black"/>"#);
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">{tick}</text>"#, MARGIN + tick * w, MARGIN + h + 15.0);
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">propensity score (grey: control, blue: treated)</text>"#,
        MARGIN + w / 2.0,
        MARGIN + h + 34.0
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::{fine_axis, select_estimands, default_levels, Interpolation, RegionMode};

    #[test]
    fn contour_figure_is_well_formed() {
        let axis = fine_axis(&[0.0, 1.0], 30);
        let mut values = Vec::new();
        for &c in &axis {
            for &d in &axis {
                values.push((c + d) / 2.0);
            }
        }
        let s = Surface { c: axis.clone(), d: axis, values, method: Interpolation::Raw };
        let sel = select_estimands(&s, &s, &s, &default_levels(), RegionMode::Band, None).unwrap();
        let svg = contour_figure(&s, &s, &default_levels(), &sel);
        assert!(svg.starts_with("<?xml"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<circle").count(), 2 * sel.entries.len());
        assert!(svg.contains("<polyline"));
    }

    #[test]
    fn histogram_counts_every_unit() {
        let svg = score_histogram(&[0.1, 0.5, 0.999, 1.0], &[0, 1, 1, 0], 10);
        assert_eq!(svg.matches("<rect").count(), 1 + 20 + 1);
    }
}
