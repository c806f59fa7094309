//! Design-dependent pressure field from Darcy flow with drainage, and its
//! conversion to consistent structural nodal loads.
//!
//! Each element contributes `K(ρ̄) ∫∇Nᵀ∇N + D(ρ̄) ∫NᵀN` to the flow matrix
//! `A`. Chamber nodes carry the input pressure, outer edges carry zero, and
//! `A p = 0` is solved on the remaining nodes. The loads are `F = -T p`
//! with `T = t ∫ N_uᵀ ∇N_p`, i.e. the consistent body force of `-∇p`.

use std::sync::Arc;

use crate::error::Result;
use crate::fields::{smooth_step, smooth_step_derivative};
use crate::linsolve::{ConstrainedSystem, Factorization};
use crate::model::{MeshGrid, ProblemModel, RunConfig};
use crate::shape;
use crate::sparse::{Pattern, SymmetricCsc};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowParams {
    pub kv: f64,
    /// `ε = K_s / K_v`.
    pub contrast: f64,
    pub eta_k: f64,
    pub beta_k: f64,
    pub ds: f64,
    pub eta_d: f64,
    pub beta_d: f64,
    pub p_ext: f64,
}

impl FlowParams {
    pub fn from_config(c: &RunConfig) -> Self {
        FlowParams {
            kv: c.flow.kv,
            contrast: c.flow.contrast,
            eta_k: c.flow.eta_k,
            beta_k: c.flow.beta_k,
            ds: c.drainage_solid(),
            eta_d: c.flow.eta_d,
            beta_d: c.flow.beta_d,
            p_ext: 0.0,
        }
    }

    pub fn ks(&self) -> f64 {
        self.contrast * self.kv
    }
}

fn step(x: f64, beta: f64, eta: f64) -> f64 {
    // Exact endpoints; the tanh ratio is only exact up to rounding.
    if x == 0.0 {
        0.0
    } else if x == 1.0 {
        1.0
    } else {
        smooth_step(x, beta, eta)
    }
}

pub fn flow_coefficient(rho_bar: f64, p: &FlowParams) -> f64 {
    if rho_bar == 1.0 {
        return p.ks();
    }
    p.kv * (1.0 - (1.0 - p.contrast) * step(rho_bar, p.beta_k, p.eta_k))
}

pub fn drainage_coefficient(rho_bar: f64, p: &FlowParams) -> f64 {
    p.ds * step(rho_bar, p.beta_d, p.eta_d)
}

/// `(∂K/∂ρ̄, ∂D/∂ρ̄)`.
pub fn flow_partials(rho_bar: f64, p: &FlowParams) -> (f64, f64) {
    (
        -p.kv * (1.0 - p.contrast) * smooth_step_derivative(rho_bar, p.beta_k, p.eta_k),
        p.ds * smooth_step_derivative(rho_bar, p.beta_d, p.eta_d),
    )
}

/// Element diffusion `∫∇Nᵀ∇N dΩ`, row-major 4x4.
pub fn element_diffusion(hx: f64, hy: f64) -> [f64; 16] {
    let mut k = [0.0; 16];
    let w = shape::weight(hx, hy);
    for &(xi, eta) in &shape::GAUSS_POINTS {
        let g = shape::gradients(xi, eta, hx, hy);
        for a in 0..4 {
            for b in 0..4 {
                k[4 * a + b] += w * (g[a].0 * g[b].0 + g[a].1 * g[b].1);
            }
        }
    }
    k
}

/// Consistent element mass `∫NᵀN dΩ`, row-major 4x4.
pub fn element_mass_consistent(hx: f64, hy: f64) -> [f64; 16] {
    let mut m = [0.0; 16];
    let w = shape::weight(hx, hy);
    for &(xi, eta) in &shape::GAUSS_POINTS {
        let n = shape::values(xi, eta);
        for a in 0..4 {
            for b in 0..4 {
                m[4 * a + b] += w * n[a] * n[b];
            }
        }
    }
    m
}

/// Row-sum lumped element mass used for drainage.
///
/// The consistent mass has positive off-diagonal entries; once drainage
/// dominates diffusion they make the flow matrix lose its M-matrix sign
/// pattern and the pressure undershoots zero next to solid walls. The
/// lumped form keeps `0 <= p <= P_in` for elements with aspect ratio up
/// to `√2`, where the bilinear diffusion stencil has no positive
/// off-diagonal entry.
pub fn element_mass(hx: f64, hy: f64) -> [f64; 16] {
    let c = element_mass_consistent(hx, hy);
    let mut m = [0.0; 16];
    for a in 0..4 {
        m[5 * a] = c[4 * a..4 * a + 4].iter().sum();
    }
    m
}

/// Element transformation `t ∫ N_uᵀ ∇N_p dΩ`, row-major 8x4. Row `2a`
/// holds the x-component at node `a`, row `2a + 1` the y-component.
pub fn element_transfer(hx: f64, hy: f64, t: f64) -> [f64; 32] {
    let mut te = [0.0; 32];
    let w = t * shape::weight(hx, hy);
    for &(xi, eta) in &shape::GAUSS_POINTS {
        let n = shape::values(xi, eta);
        let g = shape::gradients(xi, eta, hx, hy);
        for a in 0..4 {
            for b in 0..4 {
                te[4 * (2 * a) + b] += w * n[a] * g[b].0;
                te[4 * (2 * a + 1) + b] += w * n[a] * g[b].1;
            }
        }
    }
    te
}

/// Geometry-only load transformation `T` (displacement dofs x nodes).
#[derive(Debug, Clone)]
pub struct Transfer {
    mesh: MeshGrid,
    element: [f64; 32],
}

impl Transfer {
    pub fn new(mesh: &MeshGrid) -> Self {
        Transfer {
            mesh: mesh.clone(),
            element: element_transfer(mesh.hx(), mesh.hy(), mesh.thickness),
        }
    }

    pub fn element_matrix(&self) -> &[f64; 32] {
        &self.element
    }

    /// `T p`.
    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.mesh.n_displacement_dofs()];
        for e in 0..self.mesh.n_elements() {
            let nodes = self.mesh.element_nodes(e);
            let dofs = self.mesh.element_dofs(e);
            for (r, &d) in dofs.iter().enumerate() {
                out[d] += (0..4).map(|b| self.element[4 * r + b] * p[nodes[b]]).sum::<f64>();
            }
        }
        out
    }

    /// `Tᵀ w`.
    pub fn apply_transpose(&self, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.mesh.n_nodes()];
        for e in 0..self.mesh.n_elements() {
            let nodes = self.mesh.element_nodes(e);
            let dofs = self.mesh.element_dofs(e);
            for (b, &n) in nodes.iter().enumerate() {
                out[n] += (0..8).map(|r| self.element[4 * r + b] * w[dofs[r]]).sum::<f64>();
            }
        }
        out
    }

    /// Dense copy, for small meshes only.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.mesh.n_nodes()]; self.mesh.n_displacement_dofs()];
        for e in 0..self.mesh.n_elements() {
            let nodes = self.mesh.element_nodes(e);
            let dofs = self.mesh.element_dofs(e);
            for r in 0..8 {
                for b in 0..4 {
                    d[dofs[r]][nodes[b]] += self.element[4 * r + b];
                }
            }
        }
        d
    }
}

pub fn assemble_transfer(mesh: &MeshGrid) -> Transfer {
    Transfer::new(mesh)
}

/// `F = -T p`.
pub fn nodal_loads(transfer: &Transfer, p: &[f64]) -> Vec<f64> {
    let mut f = transfer.apply(p);
    f.iter_mut().for_each(|v| *v = -*v);
    f
}

/// Mesh-level operators shared by every flow assembly on one mesh.
#[derive(Debug)]
pub struct FlowOperators {
    pub mesh: MeshGrid,
    pub pattern: Arc<Pattern>,
    pub diffusion: [f64; 16],
    pub mass: [f64; 16],
}

impl FlowOperators {
    pub fn new(mesh: &MeshGrid) -> Self {
        let gathers: Vec<[usize; 4]> = (0..mesh.n_elements()).map(|e| mesh.element_nodes(e)).collect();
        FlowOperators {
            mesh: mesh.clone(),
            pattern: Arc::new(Pattern::from_gathers(mesh.n_nodes(), &gathers)),
            diffusion: element_diffusion(mesh.hx(), mesh.hy()),
            mass: element_mass(mesh.hx(), mesh.hy()),
        }
    }

    /// Global flow matrix `A` for one projected field.
    pub fn assemble(&self, rho_bar: &[f64], params: &FlowParams) -> SymmetricCsc {
        assert_eq!(rho_bar.len(), self.mesh.n_elements());
        SymmetricCsc::assemble(self.pattern.clone(), |e, local| {
            let k = flow_coefficient(rho_bar[e], params);
            let d = drainage_coefficient(rho_bar[e], params);
            for i in 0..16 {
                local[i] = k * self.diffusion[i] + d * self.mass[i];
            }
        })
    }

    /// Element contribution `(∂A_e/∂ρ̄_e) p_e` dotted with `λ_e`.
    pub fn element_sensitivity(
        &self,
        e: usize,
        rho_bar: f64,
        params: &FlowParams,
        lambda: &[f64],
        p: &[f64],
    ) -> f64 {
        let (k, d) = self.element_sensitivity_parts(e, rho_bar, params, lambda, p);
        k + d
    }

    /// `λᵀ (∂A_e/∂ρ̄) p` split into its flow-coefficient and drainage terms.
    pub fn element_sensitivity_parts(
        &self,
        e: usize,
        rho_bar: f64,
        params: &FlowParams,
        lambda: &[f64],
        p: &[f64],
    ) -> (f64, f64) {
        let (dk, dd) = flow_partials(rho_bar, params);
        let nodes = self.mesh.element_nodes(e);
        let (mut kd, mut md) = (0.0, 0.0);
        for a in 0..4 {
            let la = lambda[nodes[a]];
            if la == 0.0 {
                continue;
            }
            for b in 0..4 {
                kd += la * self.diffusion[4 * a + b] * p[nodes[b]];
                md += la * self.mass[4 * a + b] * p[nodes[b]];
            }
        }
        (dk * kd, dd * md)
    }
}

pub fn assemble_flow(ops: &FlowOperators, rho_bar: &[f64], params: &FlowParams) -> SymmetricCsc {
    ops.assemble(rho_bar, params)
}

/// Pressure Dirichlet data as a full-length prescribed vector plus the
/// constrained node list.
#[derive(Debug, Clone)]
pub struct PressureBc {
    pub nodes: Vec<usize>,
    pub values: Vec<f64>,
}

impl PressureBc {
    pub fn new(n_nodes: usize, data: &[(usize, f64)]) -> Self {
        let mut values = vec![0.0; n_nodes];
        let mut nodes = Vec::with_capacity(data.len());
        for &(n, v) in data {
            values[n] = v;
            nodes.push(n);
        }
        nodes.sort_unstable();
        nodes.dedup();
        PressureBc { nodes, values }
    }

    pub fn from_model(model: &ProblemModel) -> Self {
        Self::new(model.mesh.n_nodes(), &model.pressure_dirichlet())
    }

    pub fn bounds(&self) -> (f64, f64) {
        self.nodes.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &n| {
            (lo.min(self.values[n]), hi.max(self.values[n]))
        })
    }
}

/// Reusable Dirichlet-reduced pressure solver.
#[derive(Debug)]
pub struct PressureSolver {
    pub system: ConstrainedSystem,
    pub bc: PressureBc,
}

/// Solved pressure field together with the factorization used for it.
pub struct PressureSolve<'a> {
    pub p: Vec<f64>,
    pub residual: f64,
    pub factorization: Factorization<'a>,
}

impl PressureSolver {
    pub fn new(ops: &FlowOperators, bc: PressureBc) -> Result<Self> {
        if bc.nodes.is_empty() {
            return Err(crate::Error::Singular(
                "pressure problem has no Dirichlet nodes".into(),
            ));
        }
        let system = ConstrainedSystem::new("flow", ops.pattern.clone(), &bc.nodes)?;
        Ok(PressureSolver { system, bc })
    }

    pub fn solve<'a>(&'a self, a: &SymmetricCsc) -> Result<PressureSolve<'a>> {
        let factorization = self.system.factor(a)?;
        let zero = vec![0.0; a.n()];
        let sol = factorization.solve(&zero, &self.bc.values, a)?;
        Ok(PressureSolve {
            p: sol.x,
            residual: sol.residual,
            factorization,
        })
    }
}

/// Convenience wrapper: factor and solve `A p = 0` with Dirichlet data.
pub fn solve_pressure(ops: &FlowOperators, a: &SymmetricCsc, bc: &PressureBc) -> Result<Vec<f64>> {
    let solver = PressureSolver::new(ops, bc.clone())?;
    Ok(solver.solve(a)?.p)
}
