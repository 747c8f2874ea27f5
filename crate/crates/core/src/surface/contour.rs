//! Contour bands and marching-squares isolines.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::Surface;
use crate::error::{Error, Result};

/// The default p-value contour levels.
pub fn default_levels() -> Vec<f64> {
    vec![0.0, 0.025, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.50, 0.75, 1.0]
}

/// Rejects levels that are not strictly ascending inside `[0, 1]`.
pub fn validate_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::Config("contour levels must be nonempty".into()));
    }
    if levels.iter().any(|l| !(0.0..=1.0).contains(l)) {
        return Err(Error::Config("contour levels must lie in [0, 1]".into()));
    }
    if levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("contour levels must be strictly ascending".into()));
    }
    Ok(())
}

/// Band edges: the levels with 0 and 1 added.
pub fn band_edges(levels: &[f64]) -> Result<Vec<f64>> {
    validate_levels(levels)?;
    let mut edges = vec![0.0];
    edges.extend(levels.iter().copied().filter(|&l| l > 0.0 && l < 1.0));
    edges.push(1.0);
    Ok(edges)
}

/// Band of `v`: 0 for `[e0, e1]`, `j` for `(e_j, e_{j+1}]`.
pub fn band_index(edges: &[f64], v: f64) -> usize {
    let nb = edges.len() - 1;
    let j = edges.partition_point(|&e| e < v);
    j.saturating_sub(1).min(nb - 1)
}

/// A polyline in `(c, d)` coordinates.
pub type Polyline = Vec<(f64, f64)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourBand {
    pub index: usize,
    pub lower: f64,
    pub upper: f64,
    /// Fine-lattice nodes in the band, c-major.
    #[serde(skip)]
    pub mask: Vec<bool>,
    pub node_count: usize,
    /// Isolines at the band's inner edges.
    pub boundary: Vec<Polyline>,
}

impl ContourBand {
    pub fn is_empty(&self) -> bool {
        self.node_count == 0
    }

    /// `[lower, upper]` for the first band, `(lower, upper]` otherwise.
    pub fn label(&self) -> String {
        let open = if self.index == 0 { '[' } else { '(' };
        format!("{open}{}, {}]", self.lower, self.upper)
    }
}

/// Assigns every lattice node to a band and traces the band boundaries.
pub fn extract_bands(surface: &Surface, levels: &[f64]) -> Result<Vec<ContourBand>> {
    if surface.values.is_empty() {
        return Err(Error::InvalidInput("empty surface".into()));
    }
    let edges = band_edges(levels)?;
    let nb = edges.len() - 1;
    let assign: Vec<usize> = surface.values.iter().map(|&v| band_index(&edges, v)).collect();
    let isolines: Vec<Vec<Polyline>> = edges[1..nb].iter().map(|&t| isoline(surface, t)).collect();
    let bands = (0..nb)
        .map(|j| {
            let mask: Vec<bool> = assign.iter().map(|&a| a == j).collect();
            let node_count = mask.iter().filter(|&&m| m).count();
            let mut boundary = Vec::new();
            if node_count > 0 {
                if j > 0 {
                    boundary.extend(isolines[j - 1].iter().cloned());
                }
                if j + 1 < nb {
                    boundary.extend(isolines[j].iter().cloned());
                }
            }
            ContourBand {
                index: j,
                lower: edges[j],
                upper: edges[j + 1],
                mask,
                node_count,
                boundary,
            }
        })
        .collect();
    Ok(bands)
}

/// Edge identifier: horizontal edges run along `d`, vertical along `c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Edge {
    /// Between nodes (i, j) and (i, j + 1).
    AlongD(usize, usize),
    /// Between nodes (i, j) and (i + 1, j).
    AlongC(usize, usize),
}

/// Isolines at `level` by marching squares; a node is inside when its value
/// exceeds the level. Saddles are resolved by the cell-centre average.
pub fn isoline(surface: &Surface, level: f64) -> Vec<Polyline> {
    let (nc, nd) = (surface.c.len(), surface.d.len());
    if nc < 2 || nd < 2 {
        return Vec::new();
    }
    let v = |i: usize, j: usize| surface.values[i * nd + j];
    let point = |e: Edge| -> (f64, f64) {
        let ((i0, j0), (i1, j1)) = match e {
            Edge::AlongD(i, j) => ((i, j), (i, j + 1)),
            Edge::AlongC(i, j) => ((i, j), (i + 1, j)),
        };
        let (a, b) = (v(i0, j0), v(i1, j1));
        let t = if b != a { ((level - a) / (b - a)).clamp(0.0, 1.0) } else { 0.5 };
        (
            surface.c[i0] + t * (surface.c[i1] - surface.c[i0]),
            surface.d[j0] + t * (surface.d[j1] - surface.d[j0]),
        )
    };

    let mut segments: Vec<(Edge, Edge)> = Vec::new();
    for i in 0..nc - 1 {
        for j in 0..nd - 1 {
            // Corners counter-clockwise: (i,j), (i+1,j), (i+1,j+1), (i,j+1).
            let corners = [v(i, j), v(i + 1, j), v(i + 1, j + 1), v(i, j + 1)];
            let inside = corners.map(|x| x > level);
            let code = inside.iter().enumerate().fold(0u8, |acc, (k, &b)| acc | (u8::from(b) << k));
            if code == 0 || code == 15 {
                continue;
            }
            // Edge k joins corner k and corner k + 1.
            let edges = [
                Edge::AlongC(i, j),
                Edge::AlongD(i + 1, j),
                Edge::AlongC(i, j + 1),
                Edge::AlongD(i, j),
            ];
            let crossed: Vec<usize> = (0..4).filter(|&k| inside[k] != inside[(k + 1) % 4]).collect();
            if crossed.len() == 2 {
                segments.push((edges[crossed[0]], edges[crossed[1]]));
            } else {
                let centre_inside = corners.iter().sum::<f64>() / 4.0 > level;
                // Pair each crossed edge with a neighbour so that the centre
                // is connected to the corners sharing its side.
                let pairs = if inside[0] == centre_inside {
                    [(0, 1), (2, 3)]
                } else {
                    [(3, 0), (1, 2)]
                };
                for (a, b) in pairs {
                    segments.push((edges[a], edges[b]));
                }
            }
        }
    }
    join_segments(&segments, point)
}

fn join_segments(segments: &[(Edge, Edge)], point: impl Fn(Edge) -> (f64, f64)) -> Vec<Polyline> {
    let mut by_edge: HashMap<Edge, Vec<usize>> = HashMap::new();
    for (s, (a, b)) in segments.iter().enumerate() {
        by_edge.entry(*a).or_default().push(s);
        by_edge.entry(*b).or_default().push(s);
    }
    let mut used = vec![false; segments.len()];
    let mut lines = Vec::new();
    let other = |s: usize, e: Edge| if segments[s].0 == e { segments[s].1 } else { segments[s].0 };
    let next = |used: &[bool], e: Edge| by_edge[&e].iter().copied().find(|&s| !used[s]);
    // Open chains start at edges touched once; closed loops are picked up after.
    let mut starts: Vec<usize> = (0..segments.len())
        .filter(|&s| by_edge[&segments[s].0].len() == 1 || by_edge[&segments[s].1].len() == 1)
        .collect();
    starts.extend(0..segments.len());
    for s0 in starts {
        if used[s0] {
            continue;
        }
        let (mut a, mut b) = segments[s0];
        if by_edge[&b].len() == 1 && by_edge[&a].len() != 1 {
            std::mem::swap(&mut a, &mut b);
        }
        used[s0] = true;
        let mut chain = vec![a, b];
        let mut tail = b;
        while let Some(s) = next(&used, tail) {
            used[s] = true;
            tail = other(s, tail);
            chain.push(tail);
        }
        lines.push(chain.into_iter().map(&point).collect());
    }
    lines
}
