//! SIMP-interpolated plane-stress elasticity on the structured mesh.

use std::sync::Arc;

use crate::error::Result;
use crate::linsolve::{ConstrainedSystem, Factorization};
use crate::model::{MeshGrid, ProblemModel, RunConfig};
use crate::shape;
use crate::sparse::{Pattern, SymmetricCsc};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialLaw {
    pub e1: f64,
    pub e0: f64,
    pub nu: f64,
    pub chi: f64,
}

impl MaterialLaw {
    pub fn from_config(c: &RunConfig) -> Self {
        MaterialLaw {
            e1: c.material.e1,
            e0: c.e0(),
            nu: c.material.nu,
            chi: c.material.chi,
        }
    }
}

pub fn simp_modulus(rho_bar: f64, law: &MaterialLaw) -> f64 {
    law.e0 + rho_bar.powf(law.chi) * (law.e1 - law.e0)
}

pub fn simp_derivative(rho_bar: f64, law: &MaterialLaw) -> f64 {
    if rho_bar == 0.0 {
        return if law.chi == 1.0 { law.e1 - law.e0 } else { 0.0 };
    }
    law.chi * rho_bar.powf(law.chi - 1.0) * (law.e1 - law.e0)
}

/// `t ∫ Bᵀ C B dΩ` for a `hx x hy` rectangle, row-major 8x8 with
/// interleaved `(ux, uy)` per node.
pub fn element_stiffness(hx: f64, hy: f64, e: f64, nu: f64, t: f64) -> [f64; 64] {
    let c = e / (1.0 - nu * nu);
    let d = [[c, c * nu, 0.0], [c * nu, c, 0.0], [0.0, 0.0, c * (1.0 - nu) / 2.0]];
    let w = t * shape::weight(hx, hy);
    let mut k = [0.0; 64];
    for &(xi, eta) in &shape::GAUSS_POINTS {
        let g = shape::gradients(xi, eta, hx, hy);
        let mut b = [[0.0; 8]; 3];
        for a in 0..4 {
            b[0][2 * a] = g[a].0;
            b[1][2 * a + 1] = g[a].1;
            b[2][2 * a] = g[a].1;
            b[2][2 * a + 1] = g[a].0;
        }
        let mut db = [[0.0; 8]; 3];
        for i in 0..3 {
            for j in 0..8 {
                db[i][j] = (0..3).map(|l| d[i][l] * b[l][j]).sum();
            }
        }
        for r in 0..8 {
            for s in r..8 {
                k[8 * r + s] += w * (0..3).map(|l| b[l][r] * db[l][s]).sum::<f64>();
            }
        }
    }
    for r in 0..8 {
        for s in 0..r {
            k[8 * r + s] = k[8 * s + r];
        }
    }
    k
}

/// Mesh-level structural operators: pattern, unit-modulus element matrix,
/// spring location and the Dirichlet-reduced solver.
#[derive(Debug)]
pub struct ElasticOperators {
    pub mesh: MeshGrid,
    pub pattern: Arc<Pattern>,
    /// Element stiffness for `E = 1`.
    pub unit_stiffness: [f64; 64],
    pub spring_dof: usize,
    pub kss: f64,
    pub system: ConstrainedSystem,
}

impl ElasticOperators {
    pub fn new(model: &ProblemModel) -> Result<Self> {
        let mesh = &model.mesh;
        let gathers: Vec<[usize; 8]> = (0..mesh.n_elements()).map(|e| mesh.element_dofs(e)).collect();
        let pattern = Arc::new(Pattern::from_gathers(mesh.n_displacement_dofs(), &gathers));
        let system = ConstrainedSystem::new("elasticity", pattern.clone(), &model.fixed_dofs())?;
        Ok(ElasticOperators {
            mesh: mesh.clone(),
            pattern,
            unit_stiffness: element_stiffness(
                mesh.hx(),
                mesh.hy(),
                1.0,
                model.config.material.nu,
                mesh.thickness,
            ),
            spring_dof: model.regions.output_dof(),
            kss: model.regions.kss,
            system,
        })
    }

    /// Global `K` including the output spring.
    pub fn assemble(&self, rho_bar: &[f64], law: &MaterialLaw) -> SymmetricCsc {
        let order: Vec<usize> = (0..self.mesh.n_elements()).collect();
        self.assemble_in_order(rho_bar, law, &order)
    }

    pub fn assemble_in_order(&self, rho_bar: &[f64], law: &MaterialLaw, order: &[usize]) -> SymmetricCsc {
        assert_eq!(rho_bar.len(), self.mesh.n_elements());
        let mut k = SymmetricCsc::assemble_in_order(self.pattern.clone(), order, |e, local| {
            let modulus = simp_modulus(rho_bar[e], law);
            for (l, &v) in local.iter_mut().zip(&self.unit_stiffness) {
                *l = modulus * v;
            }
        });
        k.add_to_diagonal(self.spring_dof, self.kss);
        k
    }

    /// `a_eᵀ (∂K_e/∂E) b_e` for element `e`, i.e. the bilinear form of the
    /// unit element stiffness.
    pub fn element_form(&self, e: usize, a: &[f64], b: &[f64]) -> f64 {
        let dofs = self.mesh.element_dofs(e);
        let mut acc = 0.0;
        for r in 0..8 {
            let ar = a[dofs[r]];
            if ar == 0.0 {
                continue;
            }
            let row: f64 = (0..8).map(|s| self.unit_stiffness[8 * r + s] * b[dofs[s]]).sum();
            acc += ar * row;
        }
        acc
    }

    pub fn factor<'a>(&'a self, k: &SymmetricCsc) -> Result<Factorization<'a>> {
        self.system.factor(k)
    }
}

#[derive(Debug, Clone)]
pub struct ElasticStates {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub residual_u: f64,
    pub residual_v: f64,
}

/// One factorization, two back-substitutions.
pub fn solve_states(factor: &Factorization<'_>, f: &[f64], f_dummy: &[f64]) -> Result<ElasticStates> {
    let su = factor.solve_homogeneous(f)?;
    let sv = factor.solve_homogeneous(f_dummy)?;
    Ok(ElasticStates {
        u: su.x,
        v: sv.x,
        residual_u: su.residual,
        residual_v: sv.residual,
    })
}
