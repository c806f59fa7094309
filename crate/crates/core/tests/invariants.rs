use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pneutop::elasticity::{solve_states, ElasticOperators, MaterialLaw};
use pneutop::fields::{make_triplet, project_value, FilterOperator};
use pneutop::flow::{FlowOperators, FlowParams, PressureBc, PressureSolver};
use pneutop::model::build_model;
use pneutop::sensitivity::{discreteness, volume_and_gradient, Evaluator};
use pneutop::{MeshGrid, ProblemModel, Realization, RunConfig};

/// Flagship parameters on a coarser mesh of the same element size.
fn scaled(nex: usize, ney: usize) -> RunConfig {
    let mut c = RunConfig::default();
    c.domain.nex = nex;
    c.domain.ney = ney;
    c.domain.lx = 1e-3 * nex as f64;
    c.domain.ly = 1e-3 * ney as f64;
    c
}

fn random_field(n: usize, seed: u64, lo: f64, hi: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Physical field with passive elements at zero.
fn random_rho_bar(model: &ProblemModel, seed: u64) -> Vec<f64> {
    let mut f = random_field(model.mesh.n_elements(), seed, 0.0, 1.0);
    for (v, &p) in f.iter_mut().zip(&model.regions.passive) {
        if p {
            *v = 0.0;
        }
    }
    f
}

fn pressure(model: &ProblemModel, rho_bar: &[f64]) -> Vec<f64> {
    let ops = FlowOperators::new(&model.mesh);
    let params = FlowParams::from_config(&model.config);
    let solver = PressureSolver::new(&ops, PressureBc::from_model(model)).unwrap();
    let a = ops.assemble(rho_bar, &params);
    solver.solve(&a).unwrap().p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn discreteness_ignores_order_and_complement(
        field in prop::collection::vec(0.0f64..=1.0, 1..200).prop_shuffle(),
    ) {
        let m = discreteness(&field);
        let mut sorted = field.clone();
        sorted.sort_by(f64::total_cmp);
        let flipped: Vec<f64> = field.iter().map(|x| 1.0 - x).collect();
        prop_assert!((discreteness(&sorted) - m).abs() <= 1e-12 * m.max(1.0));
        prop_assert!((discreteness(&flipped) - m).abs() <= 1e-12 * m.max(1.0));
        prop_assert!((0.0..=100.0).contains(&m));
    }

    #[test]
    fn projection_decreases_with_threshold(x in 0.0f64..=1.0, eta1 in 0.01f64..0.99,
                                           eta2 in 0.01f64..0.99, beta in 0.5f64..256.0) {
        let (lo, hi) = if eta1 <= eta2 { (eta1, eta2) } else { (eta2, eta1) };
        prop_assert!(project_value(x, beta, lo) >= project_value(x, beta, hi) - 1e-15);
    }

    #[test]
    fn filter_preserves_bounds_on_any_mesh(nex in 1usize..9, ney in 1usize..9,
                                           factor in 0.5f64..4.0, seed in 0u64..1000) {
        let mesh = MeshGrid::new(nex as f64, 1.5 * ney as f64, nex, ney, 1.0);
        let f = FilterOperator::new(&mesh, factor);
        let rho = random_field(nex * ney, seed, 0.0, 1.0);
        let out = f.apply(&rho);
        let (lo, hi) = rho.iter().fold((1.0f64, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
        for v in out {
            prop_assert!(v >= lo - 1e-15 && v <= hi + 1e-15);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pressure_obeys_the_maximum_principle(seed in 0u64..10_000, beta in 1.0f64..128.0) {
        let model = build_model(&scaled(12, 18)).unwrap();
        let filter = FilterOperator::new(&model.mesh, model.config.filter_radius());
        let rho = random_field(model.mesh.n_elements(), seed, 0.0, 1.0);
        let d = make_triplet(&rho, &filter, &model.regions.passive, beta, 0.15);
        for r in Realization::ALL {
            let p = pressure(&model, d.triplet.get(r));
            for &v in &p {
                prop_assert!(v >= 0.0 && v <= model.config.pressure, "p = {v}");
            }
        }
    }

    #[test]
    fn flow_matrix_is_symmetric(seed in 0u64..10_000) {
        let model = build_model(&scaled(10, 15)).unwrap();
        let ops = FlowOperators::new(&model.mesh);
        let a = ops.assemble(&random_rho_bar(&model, seed), &FlowParams::from_config(&model.config));
        prop_assert!(a.asymmetry() <= 1e-14);
    }

    #[test]
    fn strain_energy_is_positive_and_reciprocity_holds(seed in 0u64..10_000, beta in 1.0f64..64.0) {
        let model = build_model(&scaled(8, 12)).unwrap();
        let ev = Evaluator::new(&model).unwrap();
        let rho = random_field(model.mesh.n_elements(), seed, 0.0, 1.0);
        let eval = ev.evaluate(&rho, beta, false).unwrap();
        for s in &eval.states {
            prop_assert!(s.se > 0.0);
            prop_assert!(s.reciprocity_error() <= 1e-10, "{}", s.reciprocity_error());
            prop_assert!(s.max_residual <= 1e-10);
        }
    }

    #[test]
    fn volume_gradient_is_nonnegative(seed in 0u64..10_000, beta in 1.0f64..128.0) {
        let model = build_model(&scaled(10, 15)).unwrap();
        let filter = FilterOperator::new(&model.mesh, model.config.filter_radius());
        let rho = random_field(model.mesh.n_elements(), seed, 0.0, 1.0);
        let d = make_triplet(&rho, &filter, &model.regions.passive, beta, 0.15);
        let rep = volume_and_gradient(&d, &filter, &model.regions.passive, 0.26);
        for (e, &g) in rep.gradient.iter().enumerate() {
            prop_assert!(g >= 0.0);
            if model.regions.passive[e] {
                prop_assert_eq!(g, 0.0);
            }
        }
    }

    #[test]
    fn tagging_is_stable_for_any_layout(nex in 6usize..20, ney in 6usize..24,
                                        radius in 0.05f64..0.45,
                                        cx in 0.3f64..0.7, cy in 0.55f64..0.9,
                                        w in 0.0f64..0.6, h in 0.0f64..0.2) {
        let mut c = scaled(nex, ney);
        c.regions.chamber_radius_factor = radius;
        c.regions.void_center = (cx, cy);
        c.regions.void_size = (w, h);
        let Ok(a) = build_model(&c) else { return Ok(()); };
        let b = build_model(&c).unwrap();
        prop_assert_eq!(&a.regions, &b.regions);
        prop_assert_eq!(&a.active, &b.active);
        prop_assert_eq!(a.n_active() + a.regions.passive_count(), a.mesh.n_elements());

        let mut tagged = vec![0usize; a.mesh.n_nodes()];
        for &n in a.regions.pressure_nodes.iter().chain(&a.regions.zero_pressure_nodes) {
            tagged[n] += 1;
        }
        for n in 0..a.mesh.n_nodes() {
            if a.mesh.is_boundary_node(n) {
                prop_assert_eq!(tagged[n], 1, "boundary node {}", n);
            } else {
                prop_assert!(tagged[n] <= 1);
            }
        }
    }
}

#[test]
fn pressure_derivative_matches_finite_differences() {
    // J = wᵀp with Aλ = w on the free nodes; dJ/dρ̄_e = -λᵀ(∂A/∂ρ̄_e)p.
    let model = build_model(&scaled(6, 9)).unwrap();
    let ops = FlowOperators::new(&model.mesh);
    let params = FlowParams::from_config(&model.config);
    let solver = PressureSolver::new(&ops, PressureBc::from_model(&model)).unwrap();
    let rho_bar = random_field(model.mesh.n_elements(), 3, 0.1, 0.9);
    let mut w = random_field(model.mesh.n_nodes(), 4, -1.0, 1.0);
    for &n in &solver.bc.nodes {
        w[n] = 0.0;
    }
    let a = ops.assemble(&rho_bar, &params);
    let sol = solver.solve(&a).unwrap();
    let lambda = sol.factorization.solve_homogeneous(&w).unwrap().x;
    let j = |rb: &[f64]| -> f64 {
        let p = pressure(&model, rb);
        p.iter().zip(&w).map(|(a, b)| a * b).sum()
    };
    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for e in 0..model.mesh.n_elements() {
        let adj = -ops.element_sensitivity(e, rho_bar[e], &params, &lambda, &sol.p);
        let (mut up, mut dn) = (rho_bar.clone(), rho_bar.clone());
        up[e] += h;
        dn[e] -= h;
        let fd = (j(&up) - j(&dn)) / (2.0 * h);
        worst = worst.max((adj - fd).abs());
        scale = scale.max(fd.abs());
    }
    assert!(scale > 0.0);
    assert!(worst <= 1e-5 * scale, "{worst} vs {scale}");
}

#[test]
fn uniformly_stiffer_design_moves_less() {
    let mut c = scaled(8, 12);
    c.regions.kss = 0.0;
    let model = build_model(&c).unwrap();
    let ops = ElasticOperators::new(&model).unwrap();
    let law = MaterialLaw::from_config(&model.config);
    let f = model.dummy_load();
    let mut last = f64::INFINITY;
    for level in [0.2, 0.4, 0.6, 0.8, 1.0] {
        let k = ops.assemble(&vec![level; model.mesh.n_elements()], &law);
        let fac = ops.factor(&k).unwrap();
        let u = solve_states(&fac, &f, &f).unwrap().u;
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm < last, "{level}: {norm} >= {last}");
        last = norm;
    }
}

#[test]
fn compliance_decreases_with_uniform_density_under_the_spring() {
    let model = build_model(&scaled(8, 12)).unwrap();
    let ops = ElasticOperators::new(&model).unwrap();
    let law = MaterialLaw::from_config(&model.config);
    let f = model.dummy_load();
    let mut last = f64::INFINITY;
    for level in [0.2, 0.4, 0.6, 0.8, 1.0] {
        let k = ops.assemble(&vec![level; model.mesh.n_elements()], &law);
        let fac = ops.factor(&k).unwrap();
        let u = solve_states(&fac, &f, &f).unwrap().u;
        let c: f64 = u.iter().zip(&f).map(|(a, b)| a * b).sum();
        assert!(c > 0.0 && c < last);
        last = c;
    }
}
