//! Density filter, threshold projection and the robust eroded /
//! intermediate / dilated field triplet, with the reverse-mode chain rule
//! that maps physical-field sensitivities back to design variables.

use crate::model::MeshGrid;

/// Smoothed Heaviside step used for projection and for the flow and
/// drainage interpolants. Maps 0 to 0 and 1 to 1 exactly.
#[inline]
pub fn smooth_step(x: f64, beta: f64, eta: f64) -> f64 {
    let a = (beta * eta).tanh();
    let den = a + (beta * (1.0 - eta)).tanh();
    (a + (beta * (x - eta)).tanh()) / den
}

/// Derivative of [`smooth_step`] with respect to `x`.
#[inline]
pub fn smooth_step_derivative(x: f64, beta: f64, eta: f64) -> f64 {
    let den = (beta * eta).tanh() + (beta * (1.0 - eta)).tanh();
    let t = (beta * (x - eta)).tanh();
    beta * (1.0 - t * t) / den
}

/// Threshold projection of one filtered value.
#[inline]
pub fn project_value(rho_filtered: f64, beta: f64, eta: f64) -> f64 {
    if rho_filtered == 0.0 {
        return 0.0;
    }
    if rho_filtered == 1.0 {
        return 1.0;
    }
    smooth_step(rho_filtered, beta, eta)
}

pub fn project(rho_filtered: &[f64], beta: f64, eta: f64) -> Vec<f64> {
    rho_filtered.iter().map(|&r| project_value(r, beta, eta)).collect()
}

pub fn project_derivative(rho_filtered: &[f64], beta: f64, eta: f64) -> Vec<f64> {
    rho_filtered
        .iter()
        .map(|&r| smooth_step_derivative(r, beta, eta))
        .collect()
}

/// Linear cone-weight density filter in compressed row form.
///
/// Row `j` lists the neighbors `k` whose centroid lies within the filter
/// radius together with the unnormalized weight `v_k * max(0, 1 - d/r)`.
#[derive(Debug, Clone)]
pub struct FilterOperator {
    radius: f64,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<f64>,
    row_sums: Vec<f64>,
}

impl FilterOperator {
    pub fn new(mesh: &MeshGrid, radius: f64) -> Self {
        let (hx, hy) = (mesh.hx(), mesh.hy());
        let reach_x = (radius / hx).ceil() as isize;
        let reach_y = (radius / hy).ceil() as isize;
        let v = mesh.element_volume();
        let ne = mesh.n_elements();
        let mut row_ptr = Vec::with_capacity(ne + 1);
        let mut cols = Vec::new();
        let mut weights = Vec::new();
        let mut row_sums = Vec::with_capacity(ne);
        row_ptr.push(0);
        for e in 0..ne {
            let (i, j) = mesh.element_ij(e);
            let mut sum = 0.0;
            for dj in -reach_y..=reach_y {
                let jj = j as isize + dj;
                if jj < 0 || jj >= mesh.ney as isize {
                    continue;
                }
                for di in -reach_x..=reach_x {
                    let ii = i as isize + di;
                    if ii < 0 || ii >= mesh.nex as isize {
                        continue;
                    }
                    let d = (di as f64 * hx).hypot(dj as f64 * hy);
                    let w = (1.0 - d / radius).max(0.0);
                    if w > 0.0 {
                        cols.push(jj as usize * mesh.nex + ii as usize);
                        weights.push(v * w);
                        sum += v * w;
                    }
                }
            }
            row_sums.push(sum);
            row_ptr.push(cols.len());
        }
        FilterOperator {
            radius,
            row_ptr,
            cols,
            weights,
            row_sums,
        }
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.row_sums.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_sums.is_empty()
    }

    /// Neighbors of element `j` with normalized weights.
    pub fn row(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[j]..self.row_ptr[j + 1];
        let s = self.row_sums[j];
        self.cols[range.clone()]
            .iter()
            .zip(&self.weights[range])
            .map(move |(&k, &w)| (k, w / s))
    }

    pub fn apply(&self, rho: &[f64]) -> Vec<f64> {
        assert_eq!(rho.len(), self.len());
        (0..self.len())
            .map(|j| {
                let range = self.row_ptr[j]..self.row_ptr[j + 1];
                let acc: f64 = self.cols[range.clone()]
                    .iter()
                    .zip(&self.weights[range])
                    .map(|(&k, &w)| w * rho[k])
                    .sum();
                acc / self.row_sums[j]
            })
            .collect()
    }

    /// Applies the transpose of the normalized filter matrix.
    pub fn apply_transpose(&self, g: &[f64]) -> Vec<f64> {
        assert_eq!(g.len(), self.len());
        let mut out = vec![0.0; self.len()];
        for (j, &gj) in g.iter().enumerate() {
            if gj == 0.0 {
                continue;
            }
            let scale = gj / self.row_sums[j];
            let range = self.row_ptr[j]..self.row_ptr[j + 1];
            for (&k, &w) in self.cols[range.clone()].iter().zip(&self.weights[range]) {
                out[k] += w * scale;
            }
        }
        out
    }
}

/// The three robust realizations of one design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Realization {
    Eroded,
    Intermediate,
    Dilated,
}

impl Realization {
    pub const ALL: [Realization; 3] = [
        Realization::Eroded,
        Realization::Intermediate,
        Realization::Dilated,
    ];

    pub fn index(self) -> usize {
        match self {
            Realization::Eroded => 0,
            Realization::Intermediate => 1,
            Realization::Dilated => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Realization::Eroded => "eroded",
            Realization::Intermediate => "intermediate",
            Realization::Dilated => "dilated",
        }
    }

    pub fn threshold(self, delta_eta: f64) -> f64 {
        match self {
            Realization::Eroded => 0.5 + delta_eta,
            Realization::Intermediate => 0.5,
            Realization::Dilated => 0.5 - delta_eta,
        }
    }
}

/// Projected eroded / intermediate / dilated fields sharing one β.
#[derive(Debug, Clone)]
pub struct RobustTriplet {
    pub beta: f64,
    pub delta_eta: f64,
    /// Indexed by [`Realization::index`].
    pub fields: [Vec<f64>; 3],
}

impl RobustTriplet {
    pub fn get(&self, r: Realization) -> &[f64] {
        &self.fields[r.index()]
    }

    pub fn eta(&self, r: Realization) -> f64 {
        r.threshold(self.delta_eta)
    }
}

/// Raw design, its filtered image and the projected triplet.
#[derive(Debug, Clone)]
pub struct DesignField {
    pub rho: Vec<f64>,
    pub filtered: Vec<f64>,
    pub triplet: RobustTriplet,
}

/// One filter pass and three projections. Passive elements are forced to
/// zero in every projected field.
pub fn make_triplet(
    rho: &[f64],
    filter: &FilterOperator,
    passive: &[bool],
    beta: f64,
    delta_eta: f64,
) -> DesignField {
    let filtered = filter.apply(rho);
    let fields = Realization::ALL.map(|r| {
        let mut f = project(&filtered, beta, r.threshold(delta_eta));
        for (v, &p) in f.iter_mut().zip(passive) {
            if p {
                *v = 0.0;
            }
        }
        f
    });
    DesignField {
        rho: rho.to_vec(),
        filtered,
        triplet: RobustTriplet {
            beta,
            delta_eta,
            fields,
        },
    }
}

/// Maps `∂f/∂ρ̄` (one realization) to `∂f/∂ρ` through projection and
/// filter. Passive entries are zero on both ends of the chain.
pub fn chain_rule(
    df_dprojected: &[f64],
    filtered: &[f64],
    beta: f64,
    eta: f64,
    filter: &FilterOperator,
    passive: &[bool],
) -> Vec<f64> {
    let scaled: Vec<f64> = df_dprojected
        .iter()
        .zip(filtered)
        .zip(passive)
        .map(|((&g, &r), &p)| {
            if p {
                0.0
            } else {
                g * smooth_step_derivative(r, beta, eta)
            }
        })
        .collect();
    let mut out = filter.apply_transpose(&scaled);
    for (v, &p) in out.iter_mut().zip(passive) {
        if p {
            *v = 0.0;
        }
    }
    out
}
