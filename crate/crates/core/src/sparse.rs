//! Fixed-pattern sparse assembly for structured-mesh operators.
//!
//! The global sparsity pattern depends only on the element gather vectors,
//! so it is computed once. Element matrices are written to a flat buffer in
//! any traversal order and then reduced slot by slot, always summing the
//! contributions in element index order, so the result is bit-identical
//! however the elements were visited.

use std::sync::Arc;

/// Compressed-column pattern of a square matrix, both triangles stored.
#[derive(Debug)]
pub struct Pattern {
    pub n: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    local: usize,
    /// `slots[e * local^2 + a * local + b]` is the value index of entry
    /// `(gather[a], gather[b])` of element `e`.
    slots: Vec<usize>,
    /// For each value slot, the positions in the element buffer that add
    /// into it, ascending.
    contrib_ptr: Vec<usize>,
    contrib: Vec<usize>,
}

impl Pattern {
    /// Builds the pattern from per-element gather vectors of equal length.
    pub fn from_gathers<const L: usize>(n: usize, gathers: &[[usize; L]]) -> Self {
        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); n];
        for g in gathers {
            for &c in g {
                cols[c].extend_from_slice(g);
            }
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for col in &mut cols {
            col.sort_unstable();
            col.dedup();
            row_idx.extend_from_slice(col);
            col_ptr.push(row_idx.len());
        }
        let mut slots = Vec::with_capacity(gathers.len() * L * L);
        for g in gathers {
            for &r in g {
                for &c in g {
                    let range = col_ptr[c]..col_ptr[c + 1];
                    let pos = row_idx[range.clone()]
                        .binary_search(&r)
                        .expect("entry present by construction");
                    slots.push(range.start + pos);
                }
            }
        }
        let nnz = row_idx.len();
        let mut contrib_ptr = vec![0usize; nnz + 1];
        for &s in &slots {
            contrib_ptr[s + 1] += 1;
        }
        for i in 0..nnz {
            contrib_ptr[i + 1] += contrib_ptr[i];
        }
        let mut fill = contrib_ptr.clone();
        let mut contrib = vec![0usize; slots.len()];
        for (pos, &s) in slots.iter().enumerate() {
            contrib[fill[s]] = pos;
            fill[s] += 1;
        }
        Pattern {
            n,
            col_ptr,
            row_idx,
            local: L,
            slots,
            contrib_ptr,
            contrib,
        }
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn n_elements(&self) -> usize {
        self.slots.len() / (self.local * self.local)
    }

    /// Value index of `(row, col)`, if structurally present.
    pub fn find(&self, row: usize, col: usize) -> Option<usize> {
        let range = self.col_ptr[col]..self.col_ptr[col + 1];
        self.row_idx[range.clone()]
            .binary_search(&row)
            .ok()
            .map(|p| range.start + p)
    }

    /// Value slots of element `e`, row-major over its local matrix.
    pub fn element_slots(&self, e: usize) -> &[usize] {
        let l2 = self.local * self.local;
        &self.slots[e * l2..(e + 1) * l2]
    }
}

/// Symmetric sparse matrix over a shared [`Pattern`].
#[derive(Debug, Clone)]
pub struct SymmetricCsc {
    pub pattern: Arc<Pattern>,
    pub values: Vec<f64>,
}

impl SymmetricCsc {
    pub fn zeros(pattern: Arc<Pattern>) -> Self {
        let values = vec![0.0; pattern.nnz()];
        SymmetricCsc { pattern, values }
    }

    /// Sums element matrices in element index order. `fill(e, local)`
    /// writes the row-major `L x L` matrix of element `e`.
    pub fn assemble(pattern: Arc<Pattern>, fill: impl FnMut(usize, &mut [f64])) -> Self {
        let order: Vec<usize> = (0..pattern.n_elements()).collect();
        Self::assemble_in_order(pattern, &order, fill)
    }

    pub fn assemble_in_order(
        pattern: Arc<Pattern>,
        order: &[usize],
        mut fill: impl FnMut(usize, &mut [f64]),
    ) -> Self {
        let l2 = pattern.local * pattern.local;
        let mut buffer = vec![0.0; pattern.slots.len()];
        for &e in order {
            fill(e, &mut buffer[e * l2..(e + 1) * l2]);
        }
        let p = &pattern;
        let values = (0..p.nnz())
            .map(|s| {
                p.contrib[p.contrib_ptr[s]..p.contrib_ptr[s + 1]]
                    .iter()
                    .fold(0.0, |acc, &i| acc + buffer[i])
            })
            .collect();
        SymmetricCsc { pattern, values }
    }

    pub fn n(&self) -> usize {
        self.pattern.n
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pattern.find(row, col).map_or(0.0, |i| self.values[i])
    }

    pub fn add_to_diagonal(&mut self, i: usize, v: f64) {
        let slot = self.pattern.find(i, i).expect("diagonal is structurally present");
        self.values[slot] += v;
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let p = &self.pattern;
        let mut y = vec![0.0; p.n];
        for c in 0..p.n {
            let xc = x[c];
            if xc == 0.0 {
                continue;
            }
            for k in p.col_ptr[c]..p.col_ptr[c + 1] {
                y[p.row_idx[k]] += self.values[k] * xc;
            }
        }
        y
    }

    /// `x^T A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        self.matvec(y).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// Largest `|a_ij - a_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let p = &self.pattern;
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut worst = 0.0f64;
        for c in 0..p.n {
            for k in p.col_ptr[c]..p.col_ptr[c + 1] {
                let r = p.row_idx[k];
                worst = worst.max((self.values[k] - self.get(c, r)).abs());
            }
        }
        if scale > 0.0 {
            worst / scale
        } else {
            0.0
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let p = &self.pattern;
        let mut d = vec![vec![0.0; p.n]; p.n];
        for c in 0..p.n {
            for k in p.col_ptr[c]..p.col_ptr[c + 1] {
                d[p.row_idx[k]][c] = self.values[k];
            }
        }
        d
    }
}
