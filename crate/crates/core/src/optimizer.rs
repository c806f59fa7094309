//! Method of moving asymptotes, the robust min-max loop and its schedules.
//!
//! The min-max over the three realizations uses MMA's own auxiliary
//! variable `z`: with `a0 = 1` and `a_m = 1` for the objective constraints,
//! the subproblem minimizes `z` subject to `f0_m + shift - z <= y_m`. The
//! shift keeps the bound positive, since MMA requires `z >= 0`: it lifts
//! every objective above 1 and adds the largest decrease a tangent plane
//! can predict inside the move limit, which bounds the decrease of the
//! convex MMA approximation too. With `z` pinned at 0 the dual Newton system
//! degenerates. The shift is recomputed every iteration; `z` carries no
//! history between subproblems, so this does not move the optimum.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::fields::Realization;
use crate::model::{build_model, ProblemModel, RunConfig};
use crate::sensitivity::{discreteness, scale_factor, Evaluation, Evaluator};

const ASYINIT: f64 = 0.5;
const ASYINCR: f64 = 1.2;
const ASYDECR: f64 = 0.7;
const ALBEFA: f64 = 0.1;
const RAA0: f64 = 1e-5;
/// Closest the asymptotes may come to the iterate, as a fraction of the
/// variable range.
const ASYMIN: f64 = 0.01;
const EPSIMIN: f64 = 1e-9;

/// `1 + max(0, -min f0) + move_limit * max_m ‖∇f0_m‖₁`.
pub fn objective_shift(f0: &[f64; 3], gradients: &[Vec<f64>; 3], move_limit: f64) -> f64 {
    let lift = f0.iter().fold(0.0f64, |a, &v| a.max(-v));
    let reach = gradients
        .iter()
        .map(|g| g.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0f64, f64::max);
    1.0 + lift + move_limit * reach
}

/// Problem data for one MMA step:
/// `min f0 + a0 z + Σ (c_i y_i + ½ d_i y_i²)` s.t. `f_i - a_i z - y_i <= 0`.
#[derive(Debug, Clone)]
pub struct MmaProblem<'a> {
    pub f0: f64,
    pub df0: &'a [f64],
    pub f: &'a [f64],
    /// Row-major `m x n`.
    pub df: &'a [f64],
    pub xmin: &'a [f64],
    pub xmax: &'a [f64],
}

/// Persistent MMA state over a fixed set of variables.
#[derive(Debug, Clone)]
pub struct MmaState {
    pub n: usize,
    pub m: usize,
    pub iteration: usize,
    pub xold1: Vec<f64>,
    pub xold2: Vec<f64>,
    pub low: Vec<f64>,
    pub upp: Vec<f64>,
    pub move_limit: f64,
    pub a0: f64,
    pub a: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
}

/// Primal-dual solution of one subproblem.
#[derive(Debug, Clone)]
pub struct MmaStep {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: f64,
    pub lam: Vec<f64>,
    pub xsi: Vec<f64>,
    pub eta: Vec<f64>,
    pub mu: Vec<f64>,
    pub zet: f64,
    pub s: Vec<f64>,
    /// Max-norm KKT residual of the subproblem at the final barrier level.
    pub residual: f64,
}

impl MmaState {
    pub fn new(x0: &[f64], m: usize, move_limit: f64) -> Self {
        MmaState {
            n: x0.len(),
            m,
            iteration: 0,
            xold1: x0.to_vec(),
            xold2: x0.to_vec(),
            low: vec![0.0; x0.len()],
            upp: vec![1.0; x0.len()],
            move_limit,
            a0: 1.0,
            a: vec![0.0; m],
            c: vec![1000.0; m],
            d: vec![1.0; m],
        }
    }

    /// One MMA iteration from `x`. Updates the asymptotes and history and
    /// returns the subproblem solution.
    pub fn update(&mut self, x: &[f64], prob: &MmaProblem<'_>) -> Result<MmaStep> {
        let (n, m) = (self.n, self.m);
        assert_eq!(x.len(), n);
        assert_eq!(prob.f.len(), m);
        assert_eq!(prob.df.len(), m * n);
        if !prob.f0.is_finite()
            || prob.df0.iter().chain(prob.f).chain(prob.df).any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("MMA input"));
        }
        self.iteration += 1;
        let k = self.iteration;
        for j in 0..n {
            let span = prob.xmax[j] - prob.xmin[j];
            if k <= 2 {
                self.low[j] = x[j] - ASYINIT * span;
                self.upp[j] = x[j] + ASYINIT * span;
            } else {
                let zzz = (x[j] - self.xold1[j]) * (self.xold1[j] - self.xold2[j]);
                let factor = if zzz > 0.0 {
                    ASYINCR
                } else if zzz < 0.0 {
                    ASYDECR
                } else {
                    1.0
                };
                let low = x[j] - factor * (self.xold1[j] - self.low[j]);
                let upp = x[j] + factor * (self.upp[j] - self.xold1[j]);
                self.low[j] = low.max(x[j] - 10.0 * span).min(x[j] - ASYMIN * span);
                self.upp[j] = upp.min(x[j] + 10.0 * span).max(x[j] + ASYMIN * span);
            }
        }

        let mut alfa = vec![0.0; n];
        let mut beta = vec![0.0; n];
        let mut p0 = vec![0.0; n];
        let mut q0 = vec![0.0; n];
        let mut pm = vec![0.0; m * n];
        let mut qm = vec![0.0; m * n];
        let mut b = vec![0.0; m];
        for j in 0..n {
            let span = prob.xmax[j] - prob.xmin[j];
            alfa[j] = (self.low[j] + ALBEFA * (x[j] - self.low[j]))
                .max(x[j] - self.move_limit * span)
                .max(prob.xmin[j]);
            beta[j] = (self.upp[j] - ALBEFA * (self.upp[j] - x[j]))
                .min(x[j] + self.move_limit * span)
                .min(prob.xmax[j]);
            let inv_span = 1.0 / span.max(1e-5);
            let ux1 = self.upp[j] - x[j];
            let xl1 = x[j] - self.low[j];
            let (ux2, xl2) = (ux1 * ux1, xl1 * xl1);
            let g = prob.df0[j];
            let (pp, qq) = (g.max(0.0), (-g).max(0.0));
            let pq = 0.001 * (pp + qq) + RAA0 * inv_span;
            p0[j] = (pp + pq) * ux2;
            q0[j] = (qq + pq) * xl2;
            for i in 0..m {
                let g = prob.df[i * n + j];
                let (pp, qq) = (g.max(0.0), (-g).max(0.0));
                let pq = 0.001 * (pp + qq) + RAA0 * inv_span;
                pm[i * n + j] = (pp + pq) * ux2;
                qm[i * n + j] = (qq + pq) * xl2;
                b[i] += pm[i * n + j] / ux1 + qm[i * n + j] / xl1;
            }
        }
        for i in 0..m {
            b[i] -= prob.f[i];
        }
        let sub = Subproblem {
            n,
            m,
            low: &self.low,
            upp: &self.upp,
            alfa: &alfa,
            beta: &beta,
            p0: &p0,
            q0: &q0,
            p: &pm,
            q: &qm,
            a0: self.a0,
            a: &self.a,
            b: &b,
            c: &self.c,
            d: &self.d,
        };
        let step = sub.solve()?;
        self.xold2 = std::mem::replace(&mut self.xold1, x.to_vec());
        Ok(step)
    }
}

struct Subproblem<'a> {
    n: usize,
    m: usize,
    low: &'a [f64],
    upp: &'a [f64],
    alfa: &'a [f64],
    beta: &'a [f64],
    p0: &'a [f64],
    q0: &'a [f64],
    p: &'a [f64],
    q: &'a [f64],
    a0: f64,
    a: &'a [f64],
    b: &'a [f64],
    c: &'a [f64],
    d: &'a [f64],
}

#[derive(Clone)]
struct Iterate {
    x: Vec<f64>,
    y: Vec<f64>,
    z: f64,
    lam: Vec<f64>,
    xsi: Vec<f64>,
    eta: Vec<f64>,
    mu: Vec<f64>,
    zet: f64,
    s: Vec<f64>,
}

impl Subproblem<'_> {
    fn plam_qlam(&self, lam: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let mut plam = self.p0.to_vec();
        let mut qlam = self.q0.to_vec();
        for (i, &l) in lam.iter().enumerate() {
            for j in 0..n {
                plam[j] += self.p[i * n + j] * l;
                qlam[j] += self.q[i * n + j] * l;
            }
        }
        (plam, qlam)
    }

    fn gvec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        (0..self.m)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        self.p[i * n + j] / (self.upp[j] - x[j]) + self.q[i * n + j] / (x[j] - self.low[j])
                    })
                    .sum()
            })
            .collect()
    }

    /// Residual vector of the perturbed KKT conditions; returns
    /// `(2-norm, max-norm)`.
    fn residual(&self, it: &Iterate, epsi: f64) -> (f64, f64) {
        let (plam, qlam) = self.plam_qlam(&it.lam);
        let gvec = self.gvec(&it.x);
        let mut r: Vec<f64> = Vec::with_capacity(3 * self.n + 4 * self.m + 2);
        for j in 0..self.n {
            let ux = self.upp[j] - it.x[j];
            let xl = it.x[j] - self.low[j];
            r.push(plam[j] / (ux * ux) - qlam[j] / (xl * xl) - it.xsi[j] + it.eta[j]);
        }
        for i in 0..self.m {
            r.push(self.c[i] + self.d[i] * it.y[i] - it.mu[i] - it.lam[i]);
        }
        r.push(self.a0 - it.zet - dot(self.a, &it.lam));
        for i in 0..self.m {
            r.push(gvec[i] - self.a[i] * it.z - it.y[i] + it.s[i] - self.b[i]);
        }
        for j in 0..self.n {
            r.push(it.xsi[j] * (it.x[j] - self.alfa[j]) - epsi);
            r.push(it.eta[j] * (self.beta[j] - it.x[j]) - epsi);
        }
        for i in 0..self.m {
            r.push(it.mu[i] * it.y[i] - epsi);
            r.push(it.lam[i] * it.s[i] - epsi);
        }
        r.push(it.zet * it.z - epsi);
        let n2 = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nmax = r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        (n2, nmax)
    }

    fn solve(&self) -> Result<MmaStep> {
        let (n, m) = (self.n, self.m);
        let mut it = Iterate {
            x: (0..n).map(|j| 0.5 * (self.alfa[j] + self.beta[j])).collect(),
            y: vec![1.0; m],
            z: 1.0,
            lam: vec![1.0; m],
            xsi: vec![0.0; n],
            eta: vec![0.0; n],
            mu: self.c.iter().map(|&c| (0.5 * c).max(1.0)).collect(),
            zet: 1.0,
            s: vec![1.0; m],
        };
        for j in 0..n {
            it.xsi[j] = (1.0 / (it.x[j] - self.alfa[j])).max(1.0);
            it.eta[j] = (1.0 / (self.beta[j] - it.x[j])).max(1.0);
        }
        let mut epsi = 1.0;
        let mut residumax = 0.0;
        while epsi > EPSIMIN {
            let (mut residunorm, rmax) = self.residual(&it, epsi);
            residumax = rmax;
            let mut inner = 0;
            while residumax > 0.9 * epsi && inner < 200 {
                inner += 1;
                let dir = self.newton_direction(&it, epsi)?;
                let steg = self.max_step(&it, &dir);
                let (next, rn, rm) = self.line_search(&it, &dir, steg, residunorm, epsi);
                it = next;
                residunorm = rn;
                residumax = rm;
            }
            if !residumax.is_finite() {
                return Err(Error::Subproblem(format!(
                    "non-finite KKT residual at barrier level {epsi:e}"
                )));
            }
            epsi *= 0.1;
        }
        Ok(MmaStep {
            x: it.x,
            y: it.y,
            z: it.z,
            lam: it.lam,
            xsi: it.xsi,
            eta: it.eta,
            mu: it.mu,
            zet: it.zet,
            s: it.s,
            residual: residumax,
        })
    }

    fn newton_direction(&self, it: &Iterate, epsi: f64) -> Result<Iterate> {
        let (n, m) = (self.n, self.m);
        let (plam, qlam) = self.plam_qlam(&it.lam);
        let gvec = self.gvec(&it.x);
        let mut delx = vec![0.0; n];
        let mut diagx = vec![0.0; n];
        let mut gg = vec![0.0; m * n];
        for j in 0..n {
            let ux1 = self.upp[j] - it.x[j];
            let xl1 = it.x[j] - self.low[j];
            let (ux2, xl2) = (ux1 * ux1, xl1 * xl1);
            let dpsidx = plam[j] / ux2 - qlam[j] / xl2;
            delx[j] = dpsidx - epsi / (it.x[j] - self.alfa[j]) + epsi / (self.beta[j] - it.x[j]);
            diagx[j] = 2.0 * (plam[j] / (ux2 * ux1) + qlam[j] / (xl2 * xl1))
                + it.xsi[j] / (it.x[j] - self.alfa[j])
                + it.eta[j] / (self.beta[j] - it.x[j]);
            for i in 0..m {
                gg[i * n + j] = self.p[i * n + j] / ux2 - self.q[i * n + j] / xl2;
            }
        }
        let dely: Vec<f64> =
            (0..m).map(|i| self.c[i] + self.d[i] * it.y[i] - it.lam[i] - epsi / it.y[i]).collect();
        let delz = self.a0 - dot(self.a, &it.lam) - epsi / it.z;
        let dellam: Vec<f64> = (0..m)
            .map(|i| gvec[i] - self.a[i] * it.z - it.y[i] - self.b[i] + epsi / it.lam[i])
            .collect();
        let diagy: Vec<f64> = (0..m).map(|i| self.d[i] + it.mu[i] / it.y[i]).collect();
        let diaglamyi: Vec<f64> = (0..m).map(|i| it.s[i] / it.lam[i] + 1.0 / diagy[i]).collect();

        // Dual (m + 1) system in (dlam, dz).
        let size = m + 1;
        let mut aa = vec![0.0; size * size];
        let mut bb = vec![0.0; size];
        for i in 0..m {
            let mut acc = 0.0;
            for j in 0..n {
                acc += gg[i * n + j] * delx[j] / diagx[j];
            }
            bb[i] = dellam[i] + dely[i] / diagy[i] - acc;
            for k in 0..=i {
                let mut v = 0.0;
                for j in 0..n {
                    v += gg[i * n + j] * gg[k * n + j] / diagx[j];
                }
                aa[i * size + k] = v;
                aa[k * size + i] = v;
            }
            aa[i * size + i] += diaglamyi[i];
            aa[i * size + m] = self.a[i];
            aa[m * size + i] = self.a[i];
        }
        aa[m * size + m] = -it.zet / it.z;
        bb[m] = delz;
        let sol = solve_dense(size, &mut aa, &mut bb)
            .ok_or_else(|| Error::Subproblem("singular dual Newton system".into()))?;
        let dlam = sol[..m].to_vec();
        let dz = sol[m];
        let dx: Vec<f64> = (0..n)
            .map(|j| {
                let gl: f64 = (0..m).map(|i| gg[i * n + j] * dlam[i]).sum();
                -delx[j] / diagx[j] - gl / diagx[j]
            })
            .collect();
        let dy: Vec<f64> = (0..m).map(|i| -dely[i] / diagy[i] + dlam[i] / diagy[i]).collect();
        let dxsi: Vec<f64> = (0..n)
            .map(|j| {
                let g = it.x[j] - self.alfa[j];
                -it.xsi[j] + epsi / g - it.xsi[j] * dx[j] / g
            })
            .collect();
        let deta: Vec<f64> = (0..n)
            .map(|j| {
                let g = self.beta[j] - it.x[j];
                -it.eta[j] + epsi / g + it.eta[j] * dx[j] / g
            })
            .collect();
        let dmu: Vec<f64> =
            (0..m).map(|i| -it.mu[i] + epsi / it.y[i] - it.mu[i] * dy[i] / it.y[i]).collect();
        let dzet = -it.zet + epsi / it.z - it.zet * dz / it.z;
        let ds: Vec<f64> =
            (0..m).map(|i| -it.s[i] + epsi / it.lam[i] - it.s[i] * dlam[i] / it.lam[i]).collect();
        Ok(Iterate {
            x: dx,
            y: dy,
            z: dz,
            lam: dlam,
            xsi: dxsi,
            eta: deta,
            mu: dmu,
            zet: dzet,
            s: ds,
        })
    }

    /// Largest step keeping every iterate strictly interior.
    fn max_step(&self, it: &Iterate, d: &Iterate) -> f64 {
        let mut stm = 1.0f64;
        let pairs = it
            .y
            .iter()
            .zip(&d.y)
            .chain(std::iter::once((&it.z, &d.z)))
            .chain(it.lam.iter().zip(&d.lam))
            .chain(it.xsi.iter().zip(&d.xsi))
            .chain(it.eta.iter().zip(&d.eta))
            .chain(it.mu.iter().zip(&d.mu))
            .chain(std::iter::once((&it.zet, &d.zet)))
            .chain(it.s.iter().zip(&d.s));
        for (v, dv) in pairs {
            stm = stm.max(-1.01 * dv / v);
        }
        for j in 0..self.n {
            stm = stm.max(-1.01 * d.x[j] / (it.x[j] - self.alfa[j]));
            stm = stm.max(1.01 * d.x[j] / (self.beta[j] - it.x[j]));
        }
        1.0 / stm
    }

    fn line_search(
        &self,
        it: &Iterate,
        d: &Iterate,
        mut steg: f64,
        residunorm: f64,
        epsi: f64,
    ) -> (Iterate, f64, f64) {
        let axpy = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> {
            a.iter().zip(b).map(|(x, y)| x + t * y).collect()
        };
        let mut best = None;
        for _ in 0..50 {
            let trial = Iterate {
                x: axpy(&it.x, &d.x, steg),
                y: axpy(&it.y, &d.y, steg),
                z: it.z + steg * d.z,
                lam: axpy(&it.lam, &d.lam, steg),
                xsi: axpy(&it.xsi, &d.xsi, steg),
                eta: axpy(&it.eta, &d.eta, steg),
                mu: axpy(&it.mu, &d.mu, steg),
                zet: it.zet + steg * d.zet,
                s: axpy(&it.s, &d.s, steg),
            };
            let (rn, rm) = self.residual(&trial, epsi);
            let done = rn <= residunorm;
            best = Some((trial, rn, rm));
            if done {
                break;
            }
            steg *= 0.5;
        }
        best.expect("at least one trial step")
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gaussian elimination with partial pivoting on a tiny dense system.
fn solve_dense(n: usize, a: &mut [f64], b: &mut [f64]) -> Option<Vec<f64>> {
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if a[piv * n + col] == 0.0 || !a[piv * n + col].is_finite() {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap(col * n + k, piv * n + k);
            }
            b.swap(col, piv);
        }
        for r in col + 1..n {
            let f = a[r * n + col] / a[col * n + col];
            if f != 0.0 {
                for k in col..n {
                    a[r * n + k] -= f * a[col * n + k];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r * n + k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r * n + r];
    }
    Some(x)
}

/// KKT residual (max-norm) of the original problem at an MMA solution,
/// following the usual first-order conditions with the subproblem's
/// multipliers.
pub fn kkt_residual(prob: &MmaProblem<'_>, state: &MmaState, step: &MmaStep) -> f64 {
    let (n, m) = (state.n, state.m);
    let mut r: Vec<f64> = Vec::new();
    for j in 0..n {
        let mut g = prob.df0[j];
        for i in 0..m {
            g += step.lam[i] * prob.df[i * n + j];
        }
        r.push(g - step.xsi[j] + step.eta[j]);
    }
    for i in 0..m {
        r.push(state.c[i] + state.d[i] * step.y[i] - step.mu[i] - step.lam[i]);
    }
    r.push(state.a0 - step.zet - dot(&state.a, &step.lam));
    for i in 0..m {
        r.push(prob.f[i] - state.a[i] * step.z - step.y[i] + step.s[i]);
    }
    for j in 0..n {
        r.push(step.xsi[j] * (step.x[j] - prob.xmin[j]));
        r.push(step.eta[j] * (prob.xmax[j] - step.x[j]));
    }
    for i in 0..m {
        r.push(step.mu[i] * step.y[i]);
        r.push(step.lam[i] * step.s[i]);
    }
    r.push(step.zet * step.z);
    r.iter().fold(0.0, |a, v| a.max(v.abs()))
}

/// Bound-formulation data: constraints `f0_m + shift` (with `a_m = 1`) for
/// the three realizations followed by the volume constraint (with
/// `a = 0`), scaled as `V / V_d* - 1`.
#[derive(Debug, Clone)]
pub struct MinMaxData {
    pub f: Vec<f64>,
    /// Row-major `4 x n`.
    pub df: Vec<f64>,
    pub a: Vec<f64>,
}

pub fn minmax_reformulate(
    f0: &[f64; 3],
    gradients: &[Vec<f64>; 3],
    volume: f64,
    volume_gradient: &[f64],
    target: f64,
    move_limit: f64,
) -> MinMaxData {
    let n = volume_gradient.len();
    let shift = objective_shift(f0, gradients, move_limit);
    let mut f = Vec::with_capacity(4);
    let mut df = Vec::with_capacity(4 * n);
    for m in 0..3 {
        f.push(f0[m] + shift);
        df.extend_from_slice(&gradients[m]);
    }
    f.push(volume / target - 1.0);
    df.extend(volume_gradient.iter().map(|g| g / target));
    MinMaxData {
        f,
        df,
        a: vec![1.0, 1.0, 1.0, 0.0],
    }
}

/// `V_d* = V* V(ρ̄^d) / V(ρ̄^i)`.
pub fn update_dilated_target(v_star: f64, v_intermediate: f64, v_dilated: f64) -> Result<f64> {
    if !(v_intermediate > 0.0) {
        return Err(Error::ZeroIntermediateVolume);
    }
    Ok(v_star * v_dilated / v_intermediate)
}

/// Projection steepness at 0-based iteration `k`.
pub fn beta_at(k: usize, start: f64, max: f64, period: usize) -> f64 {
    let doublings = (k / period).min(64) as i32;
    (start * 2f64.powi(doublings)).min(max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Scaled objectives, indexed by [`Realization::index`].
    pub f0: [f64; 3],
    pub mse_intermediate: f64,
    pub se_intermediate: f64,
    pub volume: [f64; 3],
    pub dilated_target: f64,
    pub discreteness_intermediate: f64,
    pub beta: f64,
    pub max_change: f64,
    pub wall_ms: f64,
    /// Largest `|MSE - F_dᵀu| / |MSE|` over the realizations.
    pub reciprocity_error: f64,
    /// Extremes of the nodal pressure over the realizations.
    pub pressure_min: f64,
    pub pressure_max: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizationResult {
    pub records: Vec<IterationRecord>,
    pub rho: Vec<f64>,
    pub scale: f64,
    pub dilated_target: f64,
    /// Fresh evaluation of the final design.
    pub final_evaluation: Evaluation,
    pub final_f0: [f64; 3],
    pub early_exit: bool,
}

impl OptimizationResult {
    /// `max_m f0_m` of the final design.
    pub fn final_objective(&self) -> f64 {
        self.final_f0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Signed y-displacement of the output node for the final intermediate
    /// design in meters.
    pub fn output_dy(&self) -> f64 {
        self.final_evaluation.state(Realization::Intermediate).output_dy
    }
}

/// Proof that the adjoint gradients of this build passed the
/// finite-difference self-check.
#[derive(Debug, Clone, Copy)]
pub struct GradientCertificate {
    pub max_error: f64,
}

pub const GRADIENT_TOLERANCE: f64 = 1e-3;

/// Runs the full-chain gradient check on a 6x9 version of `config` with
/// a random design drawn from `seed`.
pub fn certify_gradients(config: &RunConfig, seed: u64) -> Result<GradientCertificate> {
    let mut small = config.clone();
    small.domain.nex = 6;
    small.domain.ney = 9;
    let model = build_model(&small)?;
    let ev = Evaluator::new(&model)?;
    let rho = random_design(&model, seed);
    let err = ev.check_gradients(&rho, 2.0, 1e-6)?.max_relative_error();
    if err > GRADIENT_TOLERANCE {
        return Err(Error::Subproblem(format!(
            "gradient self-check failed: max relative error {err:.3e}"
        )));
    }
    Ok(GradientCertificate { max_error: err })
}

/// Uniform `[0.2, 0.8)` design on active elements, zero on passive ones.
pub fn random_design(model: &ProblemModel, seed: u64) -> Vec<f64> {
    // SplitMix64; only needs to be reproducible, not statistically strong.
    let mut state = seed;
    let mut next = || {
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        ((z ^ (z >> 31)) >> 11) as f64 / (1u64 << 53) as f64
    };
    (0..model.mesh.n_elements())
        .map(|e| if model.regions.passive[e] { 0.0 } else { 0.2 + 0.6 * next() })
        .collect()
}

pub fn initial_design(model: &ProblemModel) -> Vec<f64> {
    let v = model.config.volume_target;
    model.regions.passive.iter().map(|&p| if p { 0.0 } else { v }).collect()
}

/// Runs the robust optimization. `observe` sees every record as soon as
/// it is produced.
pub fn run(
    model: &ProblemModel,
    _certificate: GradientCertificate,
    mut observe: impl FnMut(&IterationRecord),
) -> Result<OptimizationResult> {
    let config = &model.config;
    let sched = &config.schedule;
    let ev = Evaluator::new(model)?;
    let active = &model.active;
    let mut rho = initial_design(model);
    let mut x: Vec<f64> = active.iter().map(|&e| rho[e]).collect();
    let mut mma = MmaState::new(&x, 4, config.move_limit);
    mma.a = vec![1.0, 1.0, 1.0, 0.0];
    let xmin = vec![0.0; x.len()];
    let xmax = vec![1.0; x.len()];
    let df0 = vec![0.0; x.len()];

    let mut records = Vec::with_capacity(sched.max_iters);
    let mut scale = 1.0;
    let mut target = config.volume_target;
    let mut beta = sched.beta_start;
    let mut early_exit = false;

    for k in 0..sched.max_iters {
        let t0 = Instant::now();
        beta = beta_at(k, sched.beta_start, sched.beta_max, sched.beta_period);
        let eval = ev.evaluate(&rho, beta, true)?;
        if k == 0 {
            scale = scale_factor(&eval.ratios());
        }
        let volumes = eval.volumes();
        if k % sched.volume_update_period == 0 {
            target = update_dilated_target(
                config.volume_target,
                volumes[Realization::Intermediate.index()],
                volumes[Realization::Dilated.index()],
            )?;
        }
        let obj = ev.objective_report(&eval, scale)?;
        let vol = ev.volume_report(&eval, target);

        let gather = |g: &Vec<f64>| -> Vec<f64> { active.iter().map(|&e| g[e]).collect() };
        let grads = [gather(&obj.gradients[0]), gather(&obj.gradients[1]), gather(&obj.gradients[2])];
        let data = minmax_reformulate(
            &obj.f0,
            &grads,
            vol.volume,
            &gather(&vol.gradient),
            target,
            config.move_limit,
        );
        let prob = MmaProblem {
            f0: 0.0,
            df0: &df0,
            f: &data.f,
            df: &data.df,
            xmin: &xmin,
            xmax: &xmax,
        };
        let step = mma.update(&x, &prob)?;
        let max_change = x
            .iter()
            .zip(&step.x)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        x = step.x;
        for (i, &e) in active.iter().enumerate() {
            rho[e] = x[i];
        }

        let inter = eval.state(Realization::Intermediate);
        let record = IterationRecord {
            iteration: k,
            f0: obj.f0,
            mse_intermediate: inter.mse,
            se_intermediate: inter.se,
            volume: volumes,
            dilated_target: target,
            discreteness_intermediate: discreteness(eval.design.triplet.get(Realization::Intermediate)),
            beta,
            max_change,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
            reciprocity_error: eval.states.iter().map(|s| s.reciprocity_error()).fold(0.0, f64::max),
            pressure_min: eval.states.iter().map(|s| s.pressure_min).fold(f64::INFINITY, f64::min),
            pressure_max: eval.states.iter().map(|s| s.pressure_max).fold(f64::NEG_INFINITY, f64::max),
        };
        observe(&record);
        records.push(record);

        if let Some(tol) = sched.early_exit_tol {
            if beta >= sched.beta_max && max_change < tol {
                early_exit = true;
                break;
            }
        }
    }

    let final_evaluation = ev.evaluate(&rho, beta, false)?;
    let final_f0 = [0, 1, 2].map(|m| -scale * final_evaluation.states[m].mse / final_evaluation.states[m].se);
    Ok(OptimizationResult {
        records,
        rho,
        scale,
        dilated_target: target,
        final_evaluation,
        final_f0,
        early_exit,
    })
}
