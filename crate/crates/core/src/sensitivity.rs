//! Objective, volume and discreteness evaluation with adjoint gradients.
//!
//! For one realization with `MSE = vᵀKu` and `SE = ½uᵀKu` the objective is
//! `f0 = -s MSE / SE`. Writing `λ² = s (v / SE - MSE / SE² u)` and solving
//! `A λ¹ = -Tᵀ λ²` (zero on pressure Dirichlet nodes), the derivative with
//! respect to the projected density of element `e` is
//!
//! `λ¹ᵀ (∂A/∂ρ̄_e) p + s/SE vᵀ(∂K/∂ρ̄_e)u - s MSE/(2 SE²) uᵀ(∂K/∂ρ̄_e)u`.

use crate::elasticity::{simp_derivative, solve_states, ElasticOperators, MaterialLaw};
use crate::error::{Error, Result};
use crate::fields::{chain_rule, make_triplet, DesignField, FilterOperator, Realization};
use crate::flow::{nodal_loads, FlowOperators, FlowParams, PressureBc, PressureSolver, Transfer};
use crate::model::ProblemModel;

/// Everything computed for one realization.
#[derive(Debug, Clone)]
pub struct RealizationState {
    pub realization: Realization,
    pub pressure: Vec<f64>,
    pub loads: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub mse: f64,
    pub se: f64,
    /// `F_dᵀu`, the reciprocity partner of `MSE`.
    pub dummy_work: f64,
    /// Displacement along the output direction, `MSE` for a unit dummy load.
    pub output_displacement: f64,
    pub output_dy: f64,
    pub pressure_min: f64,
    pub pressure_max: f64,
    /// Largest backward error over the flow, elastic and adjoint solves.
    pub max_residual: f64,
    /// `∂(-MSE/SE)/∂ρ̄`, i.e. the gradient for `s = 1`.
    pub unscaled_gradient: Option<Vec<f64>>,
}

impl RealizationState {
    /// `-MSE / SE`.
    pub fn ratio(&self) -> f64 {
        -self.mse / self.se
    }

    pub fn reciprocity_error(&self) -> f64 {
        let scale = self.mse.abs().max(self.dummy_work.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.mse - self.dummy_work).abs() / scale
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `f0 = -s MSE / SE`.
pub fn objective(mse: f64, se: f64, s: f64) -> Result<f64> {
    if !(se > 0.0) {
        return Err(Error::DegenerateStrainEnergy(se));
    }
    let f0 = -s * mse / se;
    if !f0.is_finite() {
        return Err(Error::NonFinite("objective"));
    }
    Ok(f0)
}

/// `s = 1 / max_m |MSE_m / SE_m|`.
pub fn scale_factor(ratios: &[f64]) -> f64 {
    let m = ratios.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    if m > 0.0 && m.is_finite() {
        1.0 / m
    } else {
        1.0
    }
}

/// Volume fraction `Σ v_e ρ̄_e / Σ v_e` (uniform element volumes).
pub fn volume_fraction(rho_bar: &[f64]) -> f64 {
    rho_bar.iter().sum::<f64>() / rho_bar.len() as f64
}

/// `M_nd` in percent.
pub fn discreteness(rho_bar: &[f64]) -> f64 {
    100.0 * rho_bar.iter().map(|r| 4.0 * r * (1.0 - r)).sum::<f64>() / rho_bar.len() as f64
}

#[derive(Debug, Clone)]
pub struct ConstraintReport {
    pub volume: f64,
    pub target: f64,
    pub value: f64,
    /// `∂V/∂ρ` through the dilated projection and the filter.
    pub gradient: Vec<f64>,
}

pub fn volume_and_gradient(
    design: &DesignField,
    filter: &FilterOperator,
    passive: &[bool],
    target: f64,
) -> ConstraintReport {
    let r = Realization::Dilated;
    let field = design.triplet.get(r);
    let volume = volume_fraction(field);
    let ne = field.len() as f64;
    let dv = vec![1.0 / ne; field.len()];
    let gradient = chain_rule(
        &dv,
        &design.filtered,
        design.triplet.beta,
        design.triplet.eta(r),
        filter,
        passive,
    );
    ConstraintReport {
        volume,
        target,
        value: volume - target,
        gradient,
    }
}

/// Objective values and raw-variable gradients of all three realizations.
#[derive(Debug, Clone)]
pub struct ObjectiveReport {
    pub scale: f64,
    pub f0: [f64; 3],
    pub gradients: [Vec<f64>; 3],
}

impl ObjectiveReport {
    pub fn worst(&self) -> Realization {
        let mut best = 0;
        for m in 1..3 {
            if self.f0[m] > self.f0[best] {
                best = m;
            }
        }
        Realization::ALL[best]
    }
}

/// Full evaluation of one design.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub design: DesignField,
    pub states: [RealizationState; 3],
}

impl Evaluation {
    pub fn state(&self, r: Realization) -> &RealizationState {
        &self.states[r.index()]
    }

    pub fn ratios(&self) -> [f64; 3] {
        [0, 1, 2].map(|m| self.states[m].ratio())
    }

    pub fn volumes(&self) -> [f64; 3] {
        self.design.triplet.fields.clone().map(|f| volume_fraction(&f))
    }

    pub fn discreteness(&self) -> [f64; 3] {
        self.design.triplet.fields.clone().map(|f| discreteness(&f))
    }
}

/// Deliberate sign errors for exercising the gradient check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Negates `∂K/∂ρ̄` of the flow coefficient.
    FlowCoefficient,
    /// Negates `∂E/∂ρ̄` of the SIMP law.
    Stiffness,
}

/// Model-bound evaluator holding every design-independent operator.
#[derive(Debug)]
pub struct Evaluator {
    pub model: ProblemModel,
    pub filter: FilterOperator,
    pub flow: FlowOperators,
    pub flow_params: FlowParams,
    pub pressure: PressureSolver,
    pub transfer: Transfer,
    pub elastic: ElasticOperators,
    pub law: MaterialLaw,
    pub dummy_load: Vec<f64>,
    /// Fault injection for the gradient check; `None` in normal use.
    pub fault: Option<Fault>,
}

impl Evaluator {
    pub fn new(model: &ProblemModel) -> Result<Self> {
        let config = &model.config;
        let flow = FlowOperators::new(&model.mesh);
        let pressure = PressureSolver::new(&flow, PressureBc::from_model(model))?;
        Ok(Evaluator {
            filter: FilterOperator::new(&model.mesh, config.filter_radius()),
            flow_params: FlowParams::from_config(config),
            pressure,
            transfer: Transfer::new(&model.mesh),
            elastic: ElasticOperators::new(model)?,
            law: MaterialLaw::from_config(config),
            dummy_load: model.dummy_load(),
            flow,
            model: model.clone(),
            fault: None,
        })
    }

    pub fn passive(&self) -> &[bool] {
        &self.model.regions.passive
    }

    pub fn design(&self, rho: &[f64], beta: f64) -> DesignField {
        make_triplet(rho, &self.filter, self.passive(), beta, self.model.config.delta_eta)
    }

    /// Solves flow and elasticity on one projected field; the adjoint
    /// gradient is computed when `with_gradient` is set.
    pub fn evaluate_field(
        &self,
        realization: Realization,
        rho_bar: &[f64],
        with_gradient: bool,
    ) -> Result<RealizationState> {
        let a = self.flow.assemble(rho_bar, &self.flow_params);
        let ps = self.pressure.solve(&a)?;
        let p = ps.p;
        let (pressure_min, pressure_max) = p
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        let loads = nodal_loads(&self.transfer, &p);

        let k = self.elastic.assemble(rho_bar, &self.law);
        let kf = self.elastic.factor(&k)?;
        let st = solve_states(&kf, &loads, &self.dummy_load)?;
        // vᵀKu and ½uᵀKu through Ku = F; the direct bilinear forms cancel
        // badly when the stiffness contrast is large.
        let mse = dot(&st.v, &loads);
        let se = 0.5 * dot(&st.u, &loads);
        if !(se > 0.0) {
            return Err(Error::DegenerateStrainEnergy(se));
        }
        let dummy_work = dot(&self.dummy_load, &st.u);
        let mut max_residual = ps.residual.max(st.residual_u).max(st.residual_v);

        let unscaled_gradient = if with_gradient {
            let lambda2: Vec<f64> = st
                .v
                .iter()
                .zip(&st.u)
                .map(|(v, u)| v / se - mse / (se * se) * u)
                .collect();
            let mut rhs = self.transfer.apply_transpose(&lambda2);
            rhs.iter_mut().for_each(|x| *x = -*x);
            let l1 = ps.factorization.solve_homogeneous(&rhs)?;
            max_residual = max_residual.max(l1.residual);
            let lambda1 = l1.x;
            let flip = |f: Fault| if self.fault == Some(f) { -1.0 } else { 1.0 };
            let (k_sign, e_sign) = (flip(Fault::FlowCoefficient), flip(Fault::Stiffness));
            let g = (0..rho_bar.len())
                .map(|e| {
                    let (dk_part, dd_part) = self.flow.element_sensitivity_parts(
                        e,
                        rho_bar[e],
                        &self.flow_params,
                        &lambda1,
                        &p,
                    );
                    let flow_part = k_sign * dk_part + dd_part;
                    let de = e_sign * simp_derivative(rho_bar[e], &self.law);
                    let uv = self.elastic.element_form(e, &st.u, &st.v);
                    let uu = self.elastic.element_form(e, &st.u, &st.u);
                    flow_part + de * (uv / se - mse / (2.0 * se * se) * uu)
                })
                .collect();
            Some(g)
        } else {
            None
        };

        Ok(RealizationState {
            realization,
            output_displacement: self.model.output_displacement(&st.u),
            output_dy: self.model.output_dy(&st.u),
            pressure: p,
            loads,
            u: st.u,
            v: st.v,
            mse,
            se,
            dummy_work,
            pressure_min,
            pressure_max,
            max_residual,
            unscaled_gradient,
        })
    }

    pub fn evaluate(&self, rho: &[f64], beta: f64, with_gradient: bool) -> Result<Evaluation> {
        let design = self.design(rho, beta);
        let mut states = Vec::with_capacity(3);
        for r in Realization::ALL {
            states.push(self.evaluate_field(r, design.triplet.get(r), with_gradient)?);
        }
        let states: [RealizationState; 3] = states.try_into().expect("three realizations");
        Ok(Evaluation { design, states })
    }

    /// Scaled objectives and their gradients with respect to the raw
    /// design variables. Requires an evaluation with gradients.
    pub fn objective_report(&self, eval: &Evaluation, s: f64) -> Result<ObjectiveReport> {
        let mut f0 = [0.0; 3];
        let mut gradients: [Vec<f64>; 3] = Default::default();
        for r in Realization::ALL {
            let st = eval.state(r);
            f0[r.index()] = objective(st.mse, st.se, s)?;
            let g = st
                .unscaled_gradient
                .as_ref()
                .expect("evaluation was run with gradients");
            let scaled: Vec<f64> = g.iter().map(|x| s * x).collect();
            gradients[r.index()] = chain_rule(
                &scaled,
                &eval.design.filtered,
                eval.design.triplet.beta,
                eval.design.triplet.eta(r),
                &self.filter,
                self.passive(),
            );
        }
        Ok(ObjectiveReport { scale: s, f0, gradients })
    }

    pub fn volume_report(&self, eval: &Evaluation, target: f64) -> ConstraintReport {
        volume_and_gradient(&eval.design, &self.filter, self.passive(), target)
    }

    /// Compares adjoint gradients of all three objectives against central
    /// differences of the full chain over every active variable.
    pub fn check_gradients(&self, rho: &[f64], beta: f64, step: f64) -> Result<GradientCheck> {
        let eval = self.evaluate(rho, beta, true)?;
        let report = self.objective_report(&eval, 1.0)?;
        let mut entries = Vec::new();
        let mut x = rho.to_vec();
        for &k in &self.model.active {
            let x0 = x[k];
            x[k] = x0 + step;
            let plus = self.evaluate(&x, beta, false)?.ratios();
            x[k] = x0 - step;
            let minus = self.evaluate(&x, beta, false)?.ratios();
            x[k] = x0;
            for r in Realization::ALL {
                let m = r.index();
                entries.push(GradientEntry {
                    element: k,
                    realization: r,
                    adjoint: report.gradients[m][k],
                    finite_difference: (plus[m] - minus[m]) / (2.0 * step),
                });
            }
        }
        Ok(GradientCheck { entries })
    }
}

#[derive(Debug, Clone)]
pub struct GradientEntry {
    pub element: usize,
    pub realization: Realization,
    pub adjoint: f64,
    pub finite_difference: f64,
}

#[derive(Debug, Clone)]
pub struct GradientCheck {
    pub entries: Vec<GradientEntry>,
}

impl GradientCheck {
    /// Max-norm relative error per realization, then the largest of those:
    /// `max_k |g_adj - g_fd| / max_k |g_fd|`.
    pub fn max_relative_error(&self) -> f64 {
        Realization::ALL
            .iter()
            .map(|&r| {
                let rows = self.entries.iter().filter(|e| e.realization == r);
                let (num, den) = rows.fold((0.0f64, 0.0f64), |(n, d), e| {
                    (
                        n.max((e.adjoint - e.finite_difference).abs()),
                        d.max(e.finite_difference.abs()),
                    )
                });
                if den > 0.0 {
                    num / den
                } else {
                    num
                }
            })
            .fold(0.0, f64::max)
    }

    /// Error of one entry relative to the max-norm of its realization.
    pub fn entry_error(&self, i: usize) -> f64 {
        let r = self.entries[i].realization;
        let den = self
            .entries
            .iter()
            .filter(|e| e.realization == r)
            .fold(0.0f64, |d, e| d.max(e.finite_difference.abs()));
        let e = &self.entries[i];
        let num = (e.adjoint - e.finite_difference).abs();
        if den > 0.0 {
            num / den
        } else {
            num
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, RunConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn small_config(nex: usize, ney: usize) -> RunConfig {
        let mut c = RunConfig::default();
        c.domain.nex = nex;
        c.domain.ney = ney;
        c.domain.lx = 0.1 * nex as f64 / 100.0 * 10.0;
        c.domain.ly = 0.15 * ney as f64 / 150.0 * 10.0;
        c
    }

    fn random_design(model: &ProblemModel, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..model.mesh.n_elements())
            .map(|e| if model.regions.passive[e] { 0.0 } else { rng.random_range(0.2..0.8) })
            .collect()
    }

    #[test]
    fn objective_identities() {
        assert_eq!(objective(2.0, 1.0, 1.5).unwrap(), -3.0);
        assert!(matches!(objective(1.0, 0.0, 1.0), Err(Error::DegenerateStrainEnergy(_))));
        assert_eq!(scale_factor(&[0.02, -0.01]), 50.0);
        assert_eq!(scale_factor(&[1.0]), 1.0);
    }

    #[test]
    fn discreteness_and_volume() {
        assert_eq!(discreteness(&[0.0, 1.0, 1.0, 0.0]), 0.0);
        assert_eq!(discreteness(&[0.5; 7]), 100.0);
        let f = [0.1, 0.7, 0.35];
        let flipped: Vec<f64> = f.iter().map(|x| 1.0 - x).collect();
        assert!((discreteness(&f) - discreteness(&flipped)).abs() < 1e-12);
        assert_eq!(volume_fraction(&[1.0; 5]), 1.0);
        assert!((volume_fraction(&[0.26; 9]) - 0.26).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences_4x6() {
        let model = build_model(&small_config(4, 6)).unwrap();
        let ev = Evaluator::new(&model).unwrap();
        let rho = random_design(&model, 7);
        let check = ev.check_gradients(&rho, 2.0, 1e-6).unwrap();
        let err = check.max_relative_error();
        assert!(err <= 1e-3, "max relative error {err}");
    }

    #[test]
    fn negated_derivatives_are_caught() {
        let model = build_model(&small_config(4, 6)).unwrap();
        let rho = random_design(&model, 7);
        for fault in [Fault::FlowCoefficient, Fault::Stiffness] {
            let mut ev = Evaluator::new(&model).unwrap();
            ev.fault = Some(fault);
            let err = ev.check_gradients(&rho, 2.0, 1e-6).unwrap().max_relative_error();
            assert!(err > 1e-3, "{fault:?} went unnoticed: {err}");
        }
    }

    #[test]
    fn flat_interpolants_give_zero_gradient() {
        let model = build_model(&small_config(4, 6)).unwrap();
        let mut ev = Evaluator::new(&model).unwrap();
        ev.law.e0 = ev.law.e1;
        ev.flow_params.contrast = 1.0;
        ev.flow_params.ds = 0.0;
        let rho = random_design(&model, 1);
        let eval = ev.evaluate(&rho, 1.0, true).unwrap();
        for st in &eval.states {
            assert!(st.unscaled_gradient.as_ref().unwrap().iter().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn adjoint_states_satisfy_their_systems() {
        let model = build_model(&small_config(6, 9)).unwrap();
        let ev = Evaluator::new(&model).unwrap();
        let rho = random_design(&model, 3);
        let design = ev.design(&rho, 1.0);
        let rb = design.triplet.get(Realization::Intermediate);
        let st = ev.evaluate_field(Realization::Intermediate, rb, true).unwrap();
        let k = ev.elastic.assemble(rb, &ev.law);
        // ∂f/∂u for f = -MSE/SE with MSE = F_dᵀu: -F_d/SE + MSE/SE² K u.
        let ku = k.matvec(&st.u);
        let kv = k.matvec(&st.v);
        let lambda2: Vec<f64> =
            st.v.iter().zip(&st.u).map(|(v, u)| v / st.se - st.mse / (st.se * st.se) * u).collect();
        let kl = k.matvec(&lambda2);
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for d in ev.elastic.system.free_dofs() {
            let dfdu = -ev.dummy_load[*d] / st.se + st.mse / (st.se * st.se) * ku[*d];
            num = num.max((kl[*d] + dfdu).abs());
            den = den.max(dfdu.abs());
            assert!((kv[*d] - ev.dummy_load[*d]).abs() <= 1e-9);
        }
        assert!(num <= 1e-9 * den, "{num} vs {den}");
        assert!(st.reciprocity_error() <= 1e-10);
    }

    #[test]
    fn volume_gradient_is_nonnegative_and_matches_fd() {
        let model = build_model(&small_config(6, 9)).unwrap();
        let ev = Evaluator::new(&model).unwrap();
        let rho = random_design(&model, 5);
        let design = ev.design(&rho, 4.0);
        let rep = ev.volume_report(
            &Evaluation {
                states: {
                    let e = ev.evaluate(&rho, 4.0, false).unwrap();
                    e.states
                },
                design: design.clone(),
            },
            0.2,
        );
        assert!(rep.gradient.iter().all(|&g| g >= 0.0));
        let h = 1e-6;
        let mut x = rho.clone();
        for &k in model.active.iter().take(10) {
            x[k] += h;
            let vp = volume_fraction(ev.design(&x, 4.0).triplet.get(Realization::Dilated));
            x[k] -= 2.0 * h;
            let vm = volume_fraction(ev.design(&x, 4.0).triplet.get(Realization::Dilated));
            x[k] += h;
            let fd = (vp - vm) / (2.0 * h);
            assert!((fd - rep.gradient[k]).abs() <= 1e-6 * fd.abs().max(1e-8));
        }
    }
}
