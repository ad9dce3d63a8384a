//! Operator-splitting QP iteration in the form `l <= A x <= u`.
//!
//! Equalities become rows with `l = u`; inequalities rows with `l = -inf`.
//! The problem is equilibrated (modified Ruiz scaling plus a cost scale) and
//! every iteration solves one quasi-definite KKT system with a cached
//! factorization. Residuals and tolerances are always evaluated on the
//! unscaled problem.

use log::{debug, trace};

use super::ldl::EnvelopeLdl;
use super::{QpSettings, QpSolution, QpStatus, SparseQP};
use crate::sparse::{dot, inf_norm, CscMatrix, Triplets};

const MIN_SCALING: f64 = 1e-4;
const MAX_SCALING: f64 = 1e4;
const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_FACTOR: f64 = 1e3;
const RHO_REFACTOR_RATIO: f64 = 5.0;
const POLISH_DELTA: f64 = 1e-6;
/// Polish is attempted mid-run once residuals are within this factor of tolerance.
const POLISH_TRIGGER: f64 = 1e3;

pub(super) struct Scaled {
    pub(super) p: CscMatrix,
    pub(super) q: Vec<f64>,
    pub(super) a: CscMatrix,
    pub(super) at: CscMatrix,
    pub(super) l: Vec<f64>,
    pub(super) u: Vec<f64>,
    /// variable scaling
    pub(super) d: Vec<f64>,
    /// row scaling
    pub(super) e: Vec<f64>,
    /// cost scaling
    pub(super) c: f64,
}

fn limit(norm: f64) -> f64 {
    if norm < MIN_SCALING {
        1.0
    } else {
        norm.min(MAX_SCALING)
    }
}

pub(super) fn equilibrate(p: &CscMatrix, q: &[f64], a: &CscMatrix, l: &[f64], u: &[f64], iters: usize) -> Scaled {
    let (n, m) = (a.ncols, a.nrows);
    let mut ps = p.clone();
    let mut qs = q.to_vec();
    let mut as_ = a.clone();
    let mut d = vec![1.0; n];
    let mut e = vec![1.0; m];
    let mut c = 1.0;
    for _ in 0..iters {
        let pn = ps.col_inf_norms();
        let an = as_.col_inf_norms();
        let dx: Vec<f64> = (0..n).map(|j| 1.0 / limit(pn[j].max(an[j])).sqrt()).collect();
        let dz: Vec<f64> = as_.row_inf_norms().into_iter().map(|r| 1.0 / limit(r).sqrt()).collect();
        ps = ps.scaled(&dx, &dx);
        as_ = as_.scaled(&dz, &dx);
        for j in 0..n {
            qs[j] *= dx[j];
            d[j] *= dx[j];
        }
        for i in 0..m {
            e[i] *= dz[i];
        }
        // cost scaling
        let pn = ps.col_inf_norms();
        let mean = if n > 0 { pn.iter().sum::<f64>() / n as f64 } else { 0.0 };
        let gamma = 1.0 / limit(mean.max(inf_norm(&qs)));
        ps.values.iter_mut().for_each(|v| *v *= gamma);
        qs.iter_mut().for_each(|v| *v *= gamma);
        c *= gamma;
    }
    let ls = l.iter().zip(&e).map(|(v, s)| v * s).collect();
    let us = u.iter().zip(&e).map(|(v, s)| v * s).collect();
    Scaled {
        at: as_.transpose(),
        p: ps,
        q: qs,
        a: as_,
        l: ls,
        u: us,
        d,
        e,
        c,
    }
}

fn kkt_matrix(p: &CscMatrix, a: &CscMatrix, sigma: f64, neg_diag: &[f64]) -> CscMatrix {
    let n = p.ncols;
    let m = a.nrows;
    let mut t = Triplets::new(n + m, n + m);
    for (r, c, v) in p.iter() {
        t.push(r, c, v);
    }
    for j in 0..n {
        t.push(j, j, sigma);
    }
    for (r, c, v) in a.iter() {
        t.push_sym(n + r, c, v);
    }
    for (i, v) in neg_diag.iter().enumerate() {
        t.push(n + i, n + i, -v);
    }
    t.to_csc()
}

/// Unscaled residuals and the norms that make up their tolerances.
pub(super) struct Residuals {
    pub(super) prim: f64,
    pub(super) dual: f64,
    pub(super) eps_prim: f64,
    pub(super) eps_dual: f64,
}

impl Residuals {
    pub(super) fn converged(&self) -> bool {
        self.prim <= self.eps_prim && self.dual <= self.eps_dual
    }

    fn near(&self, factor: f64) -> bool {
        self.prim <= factor * self.eps_prim && self.dual <= factor * self.eps_dual
    }
}

pub(super) struct Workspace<'a> {
    pub(super) s: &'a Scaled,
    pub(super) settings: &'a QpSettings,
    pub(super) n: usize,
    pub(super) m: usize,
    pub(super) is_eq: Vec<bool>,
}

impl Workspace<'_> {
    /// Residuals of `(x, z, y)` given in scaled coordinates.
    pub(super) fn residuals(&self, x: &[f64], z: &[f64], y: &[f64]) -> Residuals {
        let s = self.s;
        let ax = s.a.mul_vec(x);
        let px = s.p.mul_vec(x);
        let aty = s.at.mul_vec(y);
        let mut prim = 0.0f64;
        let (mut ax_norm, mut z_norm) = (0.0f64, 0.0f64);
        for i in 0..self.m {
            prim = prim.max(((ax[i] - z[i]) / s.e[i]).abs());
            ax_norm = ax_norm.max((ax[i] / s.e[i]).abs());
            z_norm = z_norm.max((z[i] / s.e[i]).abs());
        }
        let mut dual = 0.0f64;
        let (mut px_n, mut aty_n, mut q_n) = (0.0f64, 0.0f64, 0.0f64);
        for j in 0..self.n {
            let w = 1.0 / (s.c * s.d[j]);
            dual = dual.max(((px[j] + s.q[j] + aty[j]) * w).abs());
            px_n = px_n.max((px[j] * w).abs());
            aty_n = aty_n.max((aty[j] * w).abs());
            q_n = q_n.max((s.q[j] * w).abs());
        }
        let st = self.settings;
        Residuals {
            prim,
            dual,
            eps_prim: st.eps_abs + st.eps_rel * ax_norm.max(z_norm),
            eps_dual: st.eps_abs + st.eps_rel * px_n.max(aty_n).max(q_n),
        }
    }

    /// Scaled-space residual ratio driving the penalty update.
    fn rho_estimate(&self, rho: f64, x: &[f64], z: &[f64], y: &[f64]) -> f64 {
        let s = self.s;
        let ax = s.a.mul_vec(x);
        let px = s.p.mul_vec(x);
        let aty = s.at.mul_vec(y);
        let prim: Vec<f64> = ax.iter().zip(z).map(|(a, b)| a - b).collect();
        let dual: Vec<f64> = (0..self.n).map(|j| px[j] + s.q[j] + aty[j]).collect();
        let prim_n = inf_norm(&prim) / (inf_norm(&ax).max(inf_norm(z)) + 1e-10);
        let dual_n = inf_norm(&dual) / (inf_norm(&px).max(inf_norm(&aty)).max(inf_norm(&s.q)) + 1e-10);
        (rho * (prim_n / (dual_n + 1e-10)).sqrt()).clamp(RHO_MIN, RHO_MAX)
    }

    pub(super) fn primal_infeasible(&self, dy: &[f64]) -> bool {
        let s = self.s;
        let eps = self.settings.eps_prim_inf;
        let norm = dy.iter().zip(&s.e).fold(0.0f64, |m, (v, e)| m.max((v * e).abs()));
        if norm <= eps {
            return false;
        }
        let atdy = s.at.mul_vec(dy);
        let lhs = atdy.iter().zip(&s.d).fold(0.0f64, |m, (v, d)| m.max((v / d).abs()));
        if lhs > eps * norm {
            return false;
        }
        let mut support = 0.0;
        for i in 0..self.m {
            let bound = if dy[i] > 0.0 { s.u[i] } else { s.l[i] };
            if bound.is_finite() {
                support += bound * dy[i];
            } else if (dy[i] * s.e[i]).abs() > eps * norm {
                return false;
            }
        }
        support < -eps * norm
    }

    pub(super) fn dual_infeasible(&self, dx: &[f64]) -> bool {
        let s = self.s;
        let eps = self.settings.eps_dual_inf;
        let norm = dx.iter().zip(&s.d).fold(0.0f64, |m, (v, d)| m.max((v * d).abs()));
        if norm <= eps {
            return false;
        }
        if dot(&s.q, dx) >= -s.c * eps * norm {
            return false;
        }
        let pdx = s.p.mul_vec(dx);
        if pdx.iter().zip(&s.d).any(|(v, d)| (v / d).abs() > s.c * eps * norm) {
            return false;
        }
        let adx = s.a.mul_vec(dx);
        (0..self.m).all(|i| {
            let v = adx[i] / s.e[i];
            let tol = eps * norm;
            match (s.l[i].is_finite(), s.u[i].is_finite()) {
                (true, true) => v.abs() <= tol,
                (false, true) => v <= tol,
                (true, false) => v >= -tol,
                (false, false) => true,
            }
        })
    }

    /// Active-set KKT solve. Returns scaled `(x, z, y)` when the polished
    /// point meets the tolerances with correctly signed multipliers.
    fn polish(&self, z: &[f64], y: &[f64]) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let s = self.s;
        let n = self.n;
        // (row, bound, required sign of y: 0 for equalities)
        let mut active: Vec<(usize, f64, i8)> = Vec::new();
        for i in 0..self.m {
            if self.is_eq[i] {
                active.push((i, s.l[i], 0));
            } else if s.l[i].is_finite() && z[i] - s.l[i] < -y[i] {
                active.push((i, s.l[i], -1));
            } else if s.u[i].is_finite() && s.u[i] - z[i] < y[i] {
                active.push((i, s.u[i], 1));
            }
        }
        let rows: Vec<usize> = active.iter().map(|a| a.0).collect();
        let a_act = s.a.select_rows(&rows);
        let k = active.len();
        let reg = kkt_matrix(&s.p, &a_act, POLISH_DELTA, &vec![POLISH_DELTA; k]);
        let exact = kkt_matrix(&s.p, &a_act, 0.0, &vec![0.0; k]);
        let mut ldl = EnvelopeLdl::analyze(&reg);
        ldl.factor(&reg).ok()?;
        let rhs: Vec<f64> = s.q.iter().map(|v| -v).chain(active.iter().map(|a| a.1)).collect();
        let mut sol = rhs.clone();
        ldl.solve_in_place(&mut sol);
        for _ in 0..self.settings.polish_refine_iters {
            let kx = exact.mul_vec(&sol);
            let mut r: Vec<f64> = rhs.iter().zip(&kx).map(|(b, v)| b - v).collect();
            if inf_norm(&r) < 1e-14 * (1.0 + inf_norm(&rhs)) {
                break;
            }
            ldl.solve_in_place(&mut r);
            for (v, d) in sol.iter_mut().zip(&r) {
                *v += d;
            }
        }
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let x = sol[..n].to_vec();
        let mut yp = vec![0.0; self.m];
        for (idx, &(row, _, _)) in active.iter().enumerate() {
            yp[row] = sol[n + idx];
        }
        let ax = s.a.mul_vec(&x);
        let zp: Vec<f64> = (0..self.m).map(|i| ax[i].clamp(s.l[i], s.u[i])).collect();
        let res = self.residuals(&x, &zp, &yp);
        let sign_ok = active.iter().all(|&(row, _, sign)| {
            let y_unscaled = yp[row] * s.e[row] / s.c;
            sign == 0 || (sign as f64) * y_unscaled >= -res.eps_dual
        });
        (res.converged() && sign_ok).then_some((x, zp, yp))
    }
}

/// Equalities then inequalities as one `l <= A x <= u` block.
pub(super) fn stack_rows(qp: &SparseQP) -> (CscMatrix, Vec<f64>, Vec<f64>) {
    let meq = qp.num_eq();
    let mut stacked = Triplets::new(meq + qp.num_ineq(), qp.num_vars());
    for (r, c, v) in qp.eq_matrix.iter() {
        stacked.push(r, c, v);
    }
    for (r, c, v) in qp.ineq_matrix.iter() {
        stacked.push(meq + r, c, v);
    }
    let l = qp.eq_rhs.iter().copied().chain(std::iter::repeat_n(f64::NEG_INFINITY, qp.num_ineq())).collect();
    let u = qp.eq_rhs.iter().chain(&qp.ineq_rhs).copied().collect();
    (stacked.to_csc(), l, u)
}

/// Solves `qp` with the splitting iteration, optionally warm-started from a
/// primal point.
pub fn solve_admm(qp: &SparseQP, settings: &QpSettings, warm_start: Option<&[f64]>) -> QpSolution {
    let n = qp.num_vars();
    let meq = qp.num_eq();
    let m = meq + qp.num_ineq();

    let (a, l, u) = stack_rows(qp);
    let s = equilibrate(&qp.hessian, &qp.linear, &a, &l, &u, settings.scaling_iters);
    let ws = Workspace {
        s: &s,
        settings,
        n,
        m,
        is_eq: (0..m).map(|i| i < meq).collect(),
    };

    let mut rho = settings.rho;
    let rho_vec = |rho: f64| -> Vec<f64> {
        (0..m)
            .map(|i| if i < meq { (rho * RHO_EQ_FACTOR).min(RHO_MAX) } else { rho })
            .collect()
    };
    let mut rhos = rho_vec(rho);
    let inv = |r: &[f64]| r.iter().map(|v| 1.0 / v).collect::<Vec<_>>();
    let kkt = kkt_matrix(&s.p, &s.a, settings.sigma, &inv(&rhos));
    let mut ldl = EnvelopeLdl::analyze(&kkt);
    let mut factor_ok = ldl.factor(&kkt).is_ok();

    let mut x: Vec<f64> = match warm_start {
        Some(x0) => x0.iter().zip(&s.d).map(|(v, d)| v / d).collect(),
        None => vec![0.0; n],
    };
    let mut z: Vec<f64> = s.a.mul_vec(&x).iter().enumerate().map(|(i, v)| v.clamp(s.l[i], s.u[i])).collect();
    let mut y = vec![0.0; m];

    let mut status = QpStatus::MaxIter;
    let mut iterations = 0;
    let mut polished = false;
    let mut last_polish_signature: Option<Vec<i8>> = None;
    let alpha = settings.alpha;
    let sigma = settings.sigma;
    let mut rhs = vec![0.0; n + m];

    while factor_ok && iterations < settings.max_iter {
        iterations += 1;
        for j in 0..n {
            rhs[j] = sigma * x[j] - s.q[j];
        }
        for i in 0..m {
            rhs[n + i] = z[i] - y[i] / rhos[i];
        }
        ldl.solve_in_place(&mut rhs);
        let x_prev = x.clone();
        let y_prev = y.clone();
        for j in 0..n {
            x[j] = alpha * rhs[j] + (1.0 - alpha) * x[j];
        }
        for i in 0..m {
            let zt = z[i] + (rhs[n + i] - y[i]) / rhos[i];
            let relaxed = alpha * zt + (1.0 - alpha) * z[i];
            let z_new = (relaxed + y[i] / rhos[i]).clamp(s.l[i], s.u[i]);
            y[i] += rhos[i] * (relaxed - z_new);
            z[i] = z_new;
        }

        let res = ws.residuals(&x, &z, &y);
        if res.converged() {
            status = QpStatus::Optimal;
            break;
        }
        let dy: Vec<f64> = y.iter().zip(&y_prev).map(|(a, b)| a - b).collect();
        if ws.primal_infeasible(&dy) {
            status = QpStatus::PrimalInfeasible;
            break;
        }
        let dx: Vec<f64> = x.iter().zip(&x_prev).map(|(a, b)| a - b).collect();
        if ws.dual_infeasible(&dx) {
            status = QpStatus::DualInfeasible;
            break;
        }

        if settings.adaptive_rho_interval > 0 && iterations % settings.adaptive_rho_interval == 0 {
            trace!(
                "iteration {iterations}: prim {:.2e}/{:.2e} dual {:.2e}/{:.2e} rho {rho:.2e}",
                res.prim,
                res.eps_prim,
                res.dual,
                res.eps_dual
            );
            if settings.polish && res.near(POLISH_TRIGGER) {
                let signature = active_signature(&s, &z, &y);
                if last_polish_signature.as_ref() != Some(&signature) {
                    if let Some((xp, zp, yp)) = ws.polish(&z, &y) {
                        x = xp;
                        z = zp;
                        y = yp;
                        polished = true;
                        status = QpStatus::Optimal;
                        break;
                    }
                    last_polish_signature = Some(signature);
                }
            }
            let new_rho = ws.rho_estimate(rho, &x, &z, &y);
            if new_rho > RHO_REFACTOR_RATIO * rho || new_rho < rho / RHO_REFACTOR_RATIO {
                debug!("iteration {iterations}: rho {rho:.3e} -> {new_rho:.3e}");
                rho = new_rho;
                rhos = rho_vec(rho);
                let kkt = kkt_matrix(&s.p, &s.a, sigma, &inv(&rhos));
                factor_ok = ldl.factor(&kkt).is_ok();
            }
        }
    }

    if settings.polish && !polished && matches!(status, QpStatus::Optimal | QpStatus::MaxIter) {
        if let Some((xp, zp, yp)) = ws.polish(&z, &y) {
            x = xp;
            z = zp;
            y = yp;
            polished = true;
            status = QpStatus::Optimal;
        }
    }
    let final_res = ws.residuals(&x, &z, &y);

    let x_out: Vec<f64> = x.iter().zip(&s.d).map(|(v, d)| v * d).collect();
    let y_out: Vec<f64> = y.iter().zip(&s.e).map(|(v, e)| v * e / s.c).collect();
    // Violation of l <= A x <= u measured directly (z may differ from A x).
    let ax = a.mul_vec(&x_out);
    let primal_residual = (0..m).fold(0.0f64, |acc, i| acc.max(l[i] - ax[i]).max(ax[i] - u[i]));
    if status == QpStatus::Optimal && primal_residual > final_res.eps_prim {
        status = QpStatus::MaxIter;
    }
    debug!(
        "qp n={n} m={m}: {status:?} after {iterations} iterations (polished: {polished}, prim {primal_residual:.2e}, dual {:.2e})",
        final_res.dual
    );
    QpSolution {
        objective: qp.objective(&x_out),
        x: x_out,
        y_eq: y_out[..meq].to_vec(),
        y_ineq: y_out[meq..].to_vec(),
        status,
        iterations,
        primal_residual,
        dual_residual: final_res.dual,
        polished,
    }
}

fn active_signature(s: &Scaled, z: &[f64], y: &[f64]) -> Vec<i8> {
    (0..z.len())
        .map(|i| {
            if s.l[i].is_finite() && z[i] - s.l[i] < -y[i] {
                -1
            } else if s.u[i].is_finite() && s.u[i] - z[i] < y[i] {
                1
            } else {
                0
            }
        })
        .collect()
}
