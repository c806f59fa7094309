//! Digital topology of thresholded designs.
//!
//! Solid cells are `>= 0.5`. Solid components use 4-connectivity and void
//! components the dual 8-connectivity, so every enclosed void is separated
//! from the outside by an edge-connected solid ring.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Topology {
    pub solid_components: usize,
    /// Void components that do not touch the domain edge.
    pub enclosed_voids: usize,
}

pub fn threshold(field: &[f64], level: f64) -> Vec<bool> {
    field.iter().map(|&v| v >= level).collect()
}

fn label(mask: &[bool], nex: usize, ney: usize, want: bool, diagonal: bool) -> Vec<Vec<usize>> {
    let mut seen = vec![false; mask.len()];
    let mut comps = Vec::new();
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if seen[start] || mask[start] != want {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut comp = Vec::new();
        while let Some(e) = stack.pop() {
            comp.push(e);
            let (i, j) = ((e % nex) as isize, (e / nex) as isize);
            for dj in -1isize..=1 {
                for di in -1isize..=1 {
                    if (di == 0 && dj == 0) || (!diagonal && di != 0 && dj != 0) {
                        continue;
                    }
                    let (a, b) = (i + di, j + dj);
                    if a < 0 || b < 0 || a >= nex as isize || b >= ney as isize {
                        continue;
                    }
                    let n = b as usize * nex + a as usize;
                    if !seen[n] && mask[n] == want {
                        seen[n] = true;
                        stack.push(n);
                    }
                }
            }
        }
        comps.push(comp);
    }
    comps
}

pub fn topology(mask: &[bool], nex: usize, ney: usize) -> Topology {
    let solid_components = label(mask, nex, ney, true, false).len();
    let on_edge = |e: usize| {
        let (i, j) = (e % nex, e / nex);
        i == 0 || j == 0 || i + 1 == nex || j + 1 == ney
    };
    let enclosed_voids = label(mask, nex, ney, false, true)
        .iter()
        .filter(|c| !c.iter().any(|&e| on_edge(e)))
        .count();
    Topology {
        solid_components,
        enclosed_voids,
    }
}

/// Diagonal solid pairs with no solid element sharing an edge with both.
pub fn point_connections(mask: &[bool], nex: usize, ney: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for j in 0..ney.saturating_sub(1) {
        for i in 0..nex.saturating_sub(1) {
            let (a, b, c, d) = (j * nex + i, j * nex + i + 1, (j + 1) * nex + i, (j + 1) * nex + i + 1);
            if mask[a] && mask[d] && !mask[b] && !mask[c] {
                out.push((a, d));
            }
            if mask[b] && mask[c] && !mask[a] && !mask[d] {
                out.push((b, c));
            }
        }
    }
    out
}
