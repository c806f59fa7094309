//! Design domain: structured bilinear-quad mesh, DOF numbering, region tags
//! and the validated run configuration.

use crate::error::{Error, Result};

/// Which half of the left edge (x = 0) is clamped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixedHalf {
    Upper,
    Lower,
}

impl FixedHalf {
    pub fn as_str(self) -> &'static str {
        match self {
            FixedHalf::Upper => "upper",
            FixedHalf::Lower => "lower",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainConfig {
    pub lx: f64,
    pub ly: f64,
    pub nex: usize,
    pub ney: usize,
    pub thickness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionConfig {
    pub fixed_half: FixedHalf,
    /// Chamber radius as a multiple of `lx`.
    pub chamber_radius_factor: f64,
    /// Passive void rectangle: center as fractions of (lx, ly), size as
    /// fractions of (lx, ly).
    pub void_center: (f64, f64),
    pub void_size: (f64, f64),
    pub kss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaterialConfig {
    pub e1: f64,
    pub e0_ratio: f64,
    pub nu: f64,
    pub chi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub kv: f64,
    pub contrast: f64,
    pub eta_k: f64,
    pub beta_k: f64,
    /// Pressure fraction left after penetrating `depth_elems` of solid.
    pub drain_remainder: f64,
    pub drain_depth_elems: f64,
    pub eta_d: f64,
    pub beta_d: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleConfig {
    pub beta_start: f64,
    pub beta_max: f64,
    pub beta_period: usize,
    pub volume_update_period: usize,
    pub max_iters: usize,
    /// Stop once `max |Δρ| < tol` with β at its maximum. `None` runs the
    /// full iteration budget.
    pub early_exit_tol: Option<f64>,
}

/// Complete, validated parameter set of one optimization run. SI units.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub domain: DomainConfig,
    pub regions: RegionConfig,
    /// Chamber pressure in Pa.
    pub pressure: f64,
    pub material: MaterialConfig,
    pub flow: FlowConfig,
    /// Filter radius as a multiple of the smallest element edge.
    pub filter_radius_factor: f64,
    pub delta_eta: f64,
    pub volume_target: f64,
    pub move_limit: f64,
    pub schedule: ScheduleConfig,
    pub output_dir: String,
}

impl Default for RunConfig {
    /// The PneuNet member setup: 0.1 m x 0.15 m domain, 100 x 150 elements,
    /// 1 bar chamber pressure.
    fn default() -> Self {
        RunConfig {
            domain: DomainConfig {
                lx: 0.1,
                ly: 0.15,
                nex: 100,
                ney: 150,
                thickness: 0.001,
            },
            regions: RegionConfig {
                fixed_half: FixedHalf::Upper,
                chamber_radius_factor: 0.25,
                void_center: (0.5, 0.75),
                void_size: (0.5, 0.1),
                kss: 1e4,
            },
            pressure: 1e5,
            material: MaterialConfig {
                e1: 100e6,
                e0_ratio: 1e-6,
                nu: 0.4,
                chi: 3.0,
            },
            flow: FlowConfig {
                kv: 1.0,
                contrast: 1e-7,
                eta_k: 0.2,
                beta_k: 10.0,
                drain_remainder: 0.1,
                drain_depth_elems: 1.0,
                eta_d: 0.3,
                beta_d: 10.0,
            },
            filter_radius_factor: 6.0,
            delta_eta: 0.15,
            volume_target: 0.2,
            move_limit: 0.1,
            schedule: ScheduleConfig {
                beta_start: 1.0,
                beta_max: 128.0,
                beta_period: 50,
                volume_update_period: 25,
                max_iters: 400,
                early_exit_tol: None,
            },
            output_dir: "out".into(),
        }
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidConfig(msg()))
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    check(v.is_finite() && v > 0.0, || format!("{name} must be positive, got {v}"))
}

fn unit_open(name: &str, v: f64) -> Result<()> {
    check(v > 0.0 && v < 1.0, || format!("{name} must lie in (0, 1), got {v}"))
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let d = &self.domain;
        positive("domain.lx_m", d.lx)?;
        positive("domain.ly_m", d.ly)?;
        positive("domain.thickness_m", d.thickness)?;
        check(d.nex >= 1 && d.ney >= 1, || "mesh.nex and mesh.ney must be >= 1".into())?;

        let r = &self.regions;
        positive("chamber.radius_factor", r.chamber_radius_factor)?;
        check(r.void_size.0 >= 0.0 && r.void_size.1 >= 0.0, || {
            "void.width_factor and void.height_factor must be >= 0".into()
        })?;
        check(r.kss >= 0.0 && r.kss.is_finite(), || "spring.kss_n_per_m must be >= 0".into())?;

        positive("load.pressure", self.pressure)?;

        let m = &self.material;
        positive("material.e1_pa", m.e1)?;
        unit_open("material.e0_ratio", m.e0_ratio)?;
        check(m.nu > -1.0 && m.nu < 0.5, || format!("material.nu must lie in (-1, 0.5), got {}", m.nu))?;
        check(m.chi >= 1.0, || format!("material.chi must be >= 1, got {}", m.chi))?;

        let f = &self.flow;
        positive("flow.kv", f.kv)?;
        unit_open("flow.contrast", f.contrast)?;
        check((0.0..=1.0).contains(&f.eta_k), || "flow.eta_k must lie in [0, 1]".into())?;
        positive("flow.beta_k", f.beta_k)?;
        unit_open("drain.remainder", f.drain_remainder)?;
        positive("drain.depth_elems", f.drain_depth_elems)?;
        check((0.0..=1.0).contains(&f.eta_d), || "drain.eta_d must lie in [0, 1]".into())?;
        positive("drain.beta_d", f.beta_d)?;

        positive("filter.radius_factor", self.filter_radius_factor)?;
        check((0.0..0.5).contains(&self.delta_eta), || {
            format!("robust.delta_eta must lie in [0, 0.5), got {}", self.delta_eta)
        })?;
        unit_open("volume.target", self.volume_target)?;
        check(self.move_limit > 0.0 && self.move_limit <= 1.0, || {
            format!("mma.move_limit must lie in (0, 1], got {}", self.move_limit)
        })?;

        let s = &self.schedule;
        positive("beta.start", s.beta_start)?;
        check(s.beta_max >= s.beta_start, || "beta.max must be >= beta.start".into())?;
        check(s.beta_period >= 1, || "beta.period must be >= 1".into())?;
        check(s.volume_update_period >= 1, || "volume.update_period must be >= 1".into())?;
        check(s.max_iters >= 1, || "mma.max_iters must be >= 1".into())?;
        if let Some(tol) = s.early_exit_tol {
            positive("early exit tolerance", tol)?;
        }
        Ok(())
    }

    /// Smallest element edge `h`.
    pub fn element_size(&self) -> f64 {
        let d = &self.domain;
        (d.lx / d.nex as f64).min(d.ly / d.ney as f64)
    }

    pub fn filter_radius(&self) -> f64 {
        self.filter_radius_factor * self.element_size()
    }

    pub fn e0(&self) -> f64 {
        self.material.e1 * self.material.e0_ratio
    }

    /// Solid-phase drainage coefficient from the penetration rule
    /// `D_s = K_s (ln r / Δs)^2`, `K_s = ε K_v`.
    pub fn drainage_solid(&self) -> f64 {
        let f = &self.flow;
        let ks = f.contrast * f.kv;
        let depth = f.drain_depth_elems * self.element_size();
        ks * (f.drain_remainder.ln() / depth).powi(2)
    }
}

/// Structured grid of `nex x ney` rectangular bilinear elements.
///
/// Node `(i, j)` sits at `(i * hx, j * hy)` and has index `j * (nex + 1) + i`.
/// Element `(i, j)` has index `j * nex + i`; its nodes run counter-clockwise
/// from the lower-left corner.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshGrid {
    pub lx: f64,
    pub ly: f64,
    pub nex: usize,
    pub ney: usize,
    pub thickness: f64,
}

impl MeshGrid {
    pub fn new(lx: f64, ly: f64, nex: usize, ney: usize, thickness: f64) -> Self {
        assert!(nex > 0 && ney > 0, "mesh needs at least one element per direction");
        MeshGrid {
            lx,
            ly,
            nex,
            ney,
            thickness,
        }
    }

    pub fn hx(&self) -> f64 {
        self.lx / self.nex as f64
    }

    pub fn hy(&self) -> f64 {
        self.ly / self.ney as f64
    }

    pub fn n_nodes(&self) -> usize {
        (self.nex + 1) * (self.ney + 1)
    }

    pub fn n_elements(&self) -> usize {
        self.nex * self.ney
    }

    pub fn n_pressure_dofs(&self) -> usize {
        self.n_nodes()
    }

    pub fn n_displacement_dofs(&self) -> usize {
        2 * self.n_nodes()
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * (self.nex + 1) + i
    }

    pub fn node_ij(&self, node: usize) -> (usize, usize) {
        (node % (self.nex + 1), node / (self.nex + 1))
    }

    pub fn node_coords(&self, node: usize) -> (f64, f64) {
        let (i, j) = self.node_ij(node);
        (i as f64 * self.hx(), j as f64 * self.hy())
    }

    pub fn element_ij(&self, e: usize) -> (usize, usize) {
        (e % self.nex, e / self.nex)
    }

    pub fn element_centroid(&self, e: usize) -> (f64, f64) {
        let (i, j) = self.element_ij(e);
        ((i as f64 + 0.5) * self.hx(), (j as f64 + 0.5) * self.hy())
    }

    pub fn element_area(&self) -> f64 {
        self.hx() * self.hy()
    }

    pub fn element_volume(&self) -> f64 {
        self.element_area() * self.thickness
    }

    /// Pressure gather vector: the element's 4 nodes, counter-clockwise.
    pub fn element_nodes(&self, e: usize) -> [usize; 4] {
        let (i, j) = self.element_ij(e);
        let n0 = self.node_index(i, j);
        let n3 = self.node_index(i, j + 1);
        [n0, n0 + 1, n3 + 1, n3]
    }

    /// Displacement gather vector, `(ux, uy)` interleaved per node.
    pub fn element_dofs(&self, e: usize) -> [usize; 8] {
        let n = self.element_nodes(e);
        [
            2 * n[0],
            2 * n[0] + 1,
            2 * n[1],
            2 * n[1] + 1,
            2 * n[2],
            2 * n[2] + 1,
            2 * n[3],
            2 * n[3] + 1,
        ]
    }

    pub fn is_boundary_node(&self, node: usize) -> bool {
        let (i, j) = self.node_ij(node);
        i == 0 || j == 0 || i == self.nex || j == self.ney
    }
}

/// Geometric region tags resolved on the mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionTags {
    /// Clamped nodes (both displacement components zero), ascending.
    pub fixed_nodes: Vec<usize>,
    /// Nodes held at the chamber pressure, ascending.
    pub pressure_nodes: Vec<usize>,
    /// Nodes held at zero pressure, ascending.
    pub zero_pressure_nodes: Vec<usize>,
    /// `passive[e]` is true for elements frozen at ρ = 0.
    pub passive: Vec<bool>,
    pub output_node: usize,
    /// Unit vector of the desired output motion.
    pub output_direction: (f64, f64),
    pub kss: f64,
}

impl RegionTags {
    pub fn output_dof(&self) -> usize {
        // Only axis-aligned output directions are supported.
        if self.output_direction.1.abs() >= self.output_direction.0.abs() {
            2 * self.output_node + 1
        } else {
            2 * self.output_node
        }
    }

    pub fn passive_count(&self) -> usize {
        self.passive.iter().filter(|&&p| p).count()
    }
}

#[derive(Debug, Clone)]
pub struct ProblemModel {
    pub config: RunConfig,
    pub mesh: MeshGrid,
    pub regions: RegionTags,
    /// Element indices carrying optimizable design variables, ascending.
    pub active: Vec<usize>,
}

impl ProblemModel {
    pub fn n_active(&self) -> usize {
        self.active.len()
    }

    /// Fixed displacement DOFs (both components of each fixed node).
    pub fn fixed_dofs(&self) -> Vec<usize> {
        self.regions
            .fixed_nodes
            .iter()
            .flat_map(|&n| [2 * n, 2 * n + 1])
            .collect()
    }

    /// Pressure Dirichlet data as ascending `(node, value)` pairs.
    pub fn pressure_dirichlet(&self) -> Vec<(usize, f64)> {
        let mut bc: Vec<(usize, f64)> = self
            .regions
            .pressure_nodes
            .iter()
            .map(|&n| (n, self.config.pressure))
            .chain(self.regions.zero_pressure_nodes.iter().map(|&n| (n, 0.0)))
            .collect();
        bc.sort_unstable_by_key(|&(n, _)| n);
        bc
    }

    /// Unit dummy load at the output node along the output direction.
    pub fn dummy_load(&self) -> Vec<f64> {
        let mut fd = vec![0.0; self.mesh.n_displacement_dofs()];
        let n = self.regions.output_node;
        fd[2 * n] = self.regions.output_direction.0;
        fd[2 * n + 1] = self.regions.output_direction.1;
        fd
    }

    /// Signed displacement of the output node along the output direction.
    pub fn output_displacement(&self, u: &[f64]) -> f64 {
        let n = self.regions.output_node;
        let (dx, dy) = self.regions.output_direction;
        u[2 * n] * dx + u[2 * n + 1] * dy
    }

    /// Signed y-displacement of the output node; negative is downward.
    pub fn output_dy(&self, u: &[f64]) -> f64 {
        u[2 * self.regions.output_node + 1]
    }
}

/// Builds the mesh and resolves every region tag from geometric rules.
pub fn build_model(config: &RunConfig) -> Result<ProblemModel> {
    config.validate()?;
    let d = &config.domain;
    let mesh = MeshGrid::new(d.lx, d.ly, d.nex, d.ney, d.thickness);
    let tol = 1e-9 * d.lx.max(d.ly);
    let r = &config.regions;

    let mid = 0.5 * d.ly;
    let fixed_nodes: Vec<usize> = (0..=d.ney)
        .map(|j| mesh.node_index(0, j))
        .filter(|&n| {
            let y = mesh.node_coords(n).1;
            match r.fixed_half {
                FixedHalf::Upper => y >= mid - tol,
                FixedHalf::Lower => y <= mid + tol,
            }
        })
        .collect();

    let (cx, cy) = (0.5 * d.lx, 0.5 * d.ly);
    let radius = r.chamber_radius_factor * d.lx;
    let in_chamber = |n: usize| {
        let (x, y) = mesh.node_coords(n);
        (x - cx).hypot(y - cy) <= radius + tol
    };
    let pressure_nodes: Vec<usize> = (0..mesh.n_nodes()).filter(|&n| in_chamber(n)).collect();
    if pressure_nodes.is_empty() {
        return Err(Error::InvalidModel(format!(
            "chamber of radius {radius} m contains no mesh node"
        )));
    }
    if let Some(&n) = pressure_nodes.iter().find(|&&n| mesh.is_boundary_node(n)) {
        return Err(Error::InvalidModel(format!(
            "chamber reaches the domain boundary at node {n}; \
             boundary nodes must carry zero pressure"
        )));
    }
    let zero_pressure_nodes: Vec<usize> = (0..mesh.n_nodes())
        .filter(|&n| mesh.is_boundary_node(n))
        .collect();

    let (vx, vy) = (r.void_center.0 * d.lx, r.void_center.1 * d.ly);
    let (hw, hh) = (0.5 * r.void_size.0 * d.lx, 0.5 * r.void_size.1 * d.ly);
    let passive: Vec<bool> = (0..mesh.n_elements())
        .map(|e| {
            let (x, y) = mesh.element_centroid(e);
            (x - vx).abs() <= hw + tol && (y - vy).abs() <= hh + tol
        })
        .collect();
    let active: Vec<usize> = (0..mesh.n_elements()).filter(|&e| !passive[e]).collect();
    if active.is_empty() {
        return Err(Error::InvalidModel("every element is passive; nothing to optimize".into()));
    }

    // Nearest node to the bottom-right corner is the corner node itself.
    let output_node = mesh.node_index(d.nex, 0);
    if fixed_nodes.contains(&output_node) {
        return Err(Error::InvalidModel(format!("output node {output_node} is clamped")));
    }
    if fixed_nodes.is_empty() {
        return Err(Error::InvalidModel("no clamped nodes; stiffness is singular".into()));
    }

    Ok(ProblemModel {
        config: config.clone(),
        mesh,
        regions: RegionTags {
            fixed_nodes,
            pressure_nodes,
            zero_pressure_nodes,
            passive,
            output_node,
            output_direction: (0.0, -1.0),
            kss: r.kss,
        },
        active,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(nex: usize, ney: usize) -> RunConfig {
        let mut c = RunConfig::default();
        c.domain.nex = nex;
        c.domain.ney = ney;
        c
    }

    #[test]
    fn flagship_mesh_counts() {
        let m = build_model(&RunConfig::default()).unwrap();
        assert_eq!(m.mesh.n_elements(), 15000);
        assert_eq!(m.mesh.n_nodes(), 15251);
        let radius = m.config.regions.chamber_radius_factor * m.config.domain.lx;
        assert!((radius - 0.025).abs() < 1e-15);
        // 50 x 15 elements have centroids inside the 0.05 x 0.015 rectangle.
        assert_eq!(m.regions.passive_count(), 750);
        assert_eq!(m.n_active(), 15000 - 750);
    }

    #[test]
    fn single_element_has_no_chamber_node() {
        let err = build_model(&small(1, 1)).unwrap_err();
        assert!(matches!(err, Error::InvalidModel(_)), "{err}");
    }

    #[test]
    fn chamber_touching_boundary_is_rejected() {
        let mut c = small(10, 15);
        c.regions.chamber_radius_factor = 0.6;
        let err = build_model(&c).unwrap_err();
        assert!(err.to_string().contains("boundary"), "{err}");
    }

    #[test]
    fn all_passive_is_rejected() {
        let mut c = small(10, 15);
        c.regions.void_size = (1.0, 1.0);
        c.regions.void_center = (0.5, 0.5);
        assert!(build_model(&c).is_err());
    }

    #[test]
    fn chamber_nodes_match_enumeration() {
        let m = build_model(&small(10, 15)).unwrap();
        let mut expected = Vec::new();
        for j in 0..=15 {
            for i in 0..=10 {
                let (x, y) = (i as f64 * 0.01, j as f64 * 0.01);
                if (x - 0.05).powi(2) + (y - 0.075).powi(2) <= 0.025f64.powi(2) + 1e-15 {
                    expected.push(j * 11 + i);
                }
            }
        }
        assert_eq!(m.regions.pressure_nodes, expected);
        assert!(!expected.is_empty());
    }

    #[test]
    fn single_element_gathers() {
        let mesh = MeshGrid::new(1.0, 1.0, 1, 1, 1.0);
        assert_eq!(mesh.element_nodes(0), [0, 1, 3, 2]);
        // Counter-clockwise from lower-left: (0,0) (1,0) (1,1) (0,1).
        let coords: Vec<_> = mesh.element_nodes(0).iter().map(|&n| mesh.node_coords(n)).collect();
        assert_eq!(coords, vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]);
        let dofs = mesh.element_dofs(0);
        assert_eq!(dofs, [0, 1, 2, 3, 6, 7, 4, 5]);
    }

    #[test]
    fn node_numbering_is_row_major() {
        let mesh = MeshGrid::new(1.0, 2.0, 4, 7, 1.0);
        for j in 0..=7 {
            for i in 0..=4 {
                let n = mesh.node_index(i, j);
                assert_eq!(n, j * 5 + i);
                assert_eq!(mesh.node_ij(n), (i, j));
            }
        }
    }

    #[test]
    fn tagging_is_idempotent() {
        let c = small(20, 30);
        let a = build_model(&c).unwrap();
        let b = build_model(&c).unwrap();
        assert_eq!(a.regions, b.regions);
        assert_eq!(a.active, b.active);
    }

    #[test]
    fn boundary_nodes_carry_exactly_one_pressure_condition() {
        let m = build_model(&small(20, 30)).unwrap();
        for n in 0..m.mesh.n_nodes() {
            let p = m.regions.pressure_nodes.binary_search(&n).is_ok();
            let z = m.regions.zero_pressure_nodes.binary_search(&n).is_ok();
            assert!(!(p && z));
            if m.mesh.is_boundary_node(n) {
                assert!(z && !p);
            }
        }
    }

    #[test]
    fn fixed_half_follows_config() {
        let mut c = small(10, 15);
        let up = build_model(&c).unwrap();
        assert!(up.regions.fixed_nodes.iter().all(|&n| up.mesh.node_coords(n).1 >= 0.075 - 1e-12));
        c.regions.fixed_half = FixedHalf::Lower;
        let lo = build_model(&c).unwrap();
        assert!(lo.regions.fixed_nodes.iter().all(|&n| lo.mesh.node_coords(n).1 <= 0.075 + 1e-12));
        assert!(lo.regions.fixed_nodes.iter().all(|&n| lo.mesh.node_ij(n).0 == 0));
    }

    #[test]
    fn output_node_is_bottom_right() {
        let m = build_model(&small(10, 15)).unwrap();
        assert_eq!(m.mesh.node_coords(m.regions.output_node), (0.1, 0.0));
        assert_eq!(m.regions.output_dof(), 2 * 10 + 1);
        let fd = m.dummy_load();
        assert_eq!(fd.iter().sum::<f64>(), -1.0);
    }

    #[test]
    fn drainage_penetration_rule() {
        let c = RunConfig::default();
        let h = 0.001;
        let expected = 1e-7 * (0.1f64.ln() / h).powi(2);
        assert!((c.drainage_solid() - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut c = RunConfig::default();
        c.flow.contrast = 1.0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.delta_eta = 0.5;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.move_limit = 0.0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.volume_target = 1.0;
        assert!(c.validate().is_err());
    }
}
