//! Primal-dual interior point method with Mehrotra's predictor-corrector.
//!
//! Works on the same equilibrated problem as the splitting solver. With
//! slacks `s` and multipliers `z` for the inequality rows `G x + s = h`,
//! each iteration eliminates `s` and `z` and factors the reduced system
//!
//! ```text
//! [ P + G' W G   A' ] [dx]
//! [ A            0  ] [dy]     W = diag(z / s)
//! ```
//!
//! regularized to be quasi-definite and cleaned up by iterative refinement.

use log::{debug, trace};

use super::admm::{equilibrate, stack_rows, Workspace};
use super::ldl::EnvelopeLdl;
use super::{QpSettings, QpSolution, QpStatus, SparseQP};
use crate::sparse::{dot, inf_norm, CscMatrix, Triplets};

/// Static regularization of the reduced system.
const DELTA: f64 = 1e-8;
/// Pivots of the wrong sign or smaller than this are replaced by
/// `DYNAMIC_DELTA` with the expected sign.
const DYNAMIC_EPS: f64 = 1e-13;
const DYNAMIC_DELTA: f64 = 2e-7;
const REFINE_ITERS: usize = 8;
/// Fraction of the distance to the boundary a step may cover.
const STEP_FRACTION: f64 = 0.99;
/// Iterate norms beyond which the infeasibility certificates are checked.
const DIVERGENCE: f64 = 1e8;
/// Once the configured tolerances hold, a few more iterations try for
/// residuals this much smaller.
const TIGHTENING: f64 = 1e-2;
const EXTRA_ITERS: usize = 3;

/// Reduced KKT system with a fixed pattern: every inequality row contributes
/// its full outer product, so only values change between iterations.
struct Reduced {
    n: usize,
    meq: usize,
    /// Entries of `P`, the constraint rows and `A` in pattern order.
    base: Triplets,
    /// For each inequality row, its `(column, value)` entries.
    rows: Vec<Vec<(usize, f64)>>,
    /// +1 on the primal block, -1 on the equality block.
    signs: Vec<i8>,
    ldl: EnvelopeLdl,
}

impl Reduced {
    fn new(p: &CscMatrix, a_eq: &CscMatrix, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = p.ncols;
        let meq = a_eq.nrows;
        let mut base = Triplets::new(n + meq, n + meq);
        for (r, c, v) in p.iter() {
            base.push(r, c, v);
        }
        for (r, c, v) in a_eq.iter() {
            base.push_sym(n + r, c, v);
        }
        let mut reduced = Self {
            n,
            meq,
            base,
            rows,
            signs: (0..n + meq).map(|i| if i < n { 1 } else { -1 }).collect(),
            ldl: EnvelopeLdl::analyze(&CscMatrix::zeros(0, 0)),
        };
        let w = vec![1.0; reduced.rows.len()];
        reduced.ldl = EnvelopeLdl::analyze(&reduced.matrix(&w, DELTA));
        reduced
    }

    fn matrix(&self, w: &[f64], delta: f64) -> CscMatrix {
        let mut t = self.base.clone();
        for j in 0..self.n {
            t.push(j, j, delta);
        }
        for i in 0..self.meq {
            t.push(self.n + i, self.n + i, -delta);
        }
        for (row, wi) in self.rows.iter().zip(w) {
            for &(j, vj) in row {
                for &(k, vk) in row {
                    t.push(j, k, wi * vj * vk);
                }
            }
        }
        t.to_csc()
    }

    /// Factors for the weights `w` and returns the unregularized matrix used
    /// for refinement.
    fn factor(&mut self, w: &[f64]) -> Option<CscMatrix> {
        let reg = self.matrix(w, DELTA);
        match self.ldl.factor_regularized(&reg, &self.signs, DYNAMIC_EPS, DYNAMIC_DELTA) {
            Ok(0) => {}
            Ok(replaced) => trace!("ipm: {replaced} pivots regularized"),
            Err(e) => {
                debug!("ipm: {e}");
                return None;
            }
        }
        Some(self.matrix(w, 0.0))
    }

    fn solve(&self, exact: &CscMatrix, rhs: &[f64]) -> Vec<f64> {
        let mut sol = rhs.to_vec();
        self.ldl.solve_in_place(&mut sol);
        let scale = 1.0 + inf_norm(rhs);
        for _ in 0..REFINE_ITERS {
            let k = exact.mul_vec(&sol);
            let mut r: Vec<f64> = rhs.iter().zip(&k).map(|(b, v)| b - v).collect();
            if inf_norm(&r) <= 1e-14 * scale {
                break;
            }
            self.ldl.solve_in_place(&mut r);
            for (v, d) in sol.iter_mut().zip(&r) {
                *v += d;
            }
        }
        sol
    }
}

/// Largest step in (0, 1] keeping `v + alpha dv >= 0`.
fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    v.iter()
        .zip(dv)
        .filter(|(_, d)| **d < 0.0)
        .map(|(a, d)| -a / d)
        .fold(1.0, f64::min)
}

/// Solves `qp` with the interior point method. The warm start is not used:
/// interior iterates have to start away from the boundary.
pub fn solve_ipm(qp: &SparseQP, settings: &QpSettings) -> QpSolution {
    let n = qp.num_vars();
    let meq = qp.num_eq();
    let mi = qp.num_ineq();
    let m = meq + mi;
    let (a, l, u) = stack_rows(qp);
    let s = equilibrate(&qp.hessian, &qp.linear, &a, &l, &u, settings.scaling_iters);
    let ws = Workspace {
        s: &s,
        settings,
        n,
        m,
        is_eq: (0..m).map(|i| i < meq).collect(),
    };

    // split the scaled rows back into A x = b and G x <= h
    let mut eq_t = Triplets::new(meq, n);
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); mi];
    for (r, c, v) in s.a.iter() {
        if r < meq {
            eq_t.push(r, c, v);
        } else {
            rows[r - meq].push((c, v));
        }
    }
    let a_eq = eq_t.to_csc();
    let b: Vec<f64> = s.u[..meq].to_vec();
    let h: Vec<f64> = s.u[meq..].to_vec();
    let g_mul = |x: &[f64]| -> Vec<f64> { rows.iter().map(|row| row.iter().map(|&(j, v)| v * x[j]).sum()).collect() };
    let gt_mul = |z: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (row, zi) in rows.iter().zip(z) {
            for &(j, v) in row {
                out[j] += v * zi;
            }
        }
        out
    };

    let mut reduced = Reduced::new(&s.p, &a_eq, rows.clone());
    let mut status = QpStatus::MaxIter;
    let mut iterations = 0;
    let mut converged_at: Option<usize> = None;

    // initial point: least squares with unit weights, then shift into the interior
    let ones = vec![1.0; mi];
    let Some(exact) = reduced.factor(&ones) else {
        return failed(qp, meq, mi);
    };
    let gth = gt_mul(&h);
    let rhs: Vec<f64> = (0..n).map(|j| -s.q[j] + gth[j]).chain(b.iter().copied()).collect();
    let sol = reduced.solve(&exact, &rhs);
    let mut x = sol[..n].to_vec();
    let mut y = sol[n..].to_vec();
    let gx = g_mul(&x);
    let mut sl: Vec<f64> = (0..mi).map(|i| h[i] - gx[i]).collect();
    let mut z: Vec<f64> = sl.iter().map(|v| -v).collect();
    for v in [&mut sl, &mut z] {
        let lowest = v.iter().copied().fold(f64::INFINITY, f64::min);
        if lowest < 1e-8 && mi > 0 {
            let shift = 1.0 - lowest.min(0.0);
            v.iter_mut().for_each(|e| *e += shift);
        }
    }

    let stacked_y = |y: &[f64], z: &[f64]| -> Vec<f64> { y.iter().chain(z).copied().collect() };
    let projected = |x: &[f64]| -> Vec<f64> { s.a.mul_vec(x).iter().enumerate().map(|(i, v)| v.clamp(s.l[i], s.u[i])).collect() };

    while iterations < settings.ipm_max_iter {
        let yz = stacked_y(&y, &z);
        let res = ws.residuals(&x, &projected(&x), &yz);
        let gap = sl.iter().zip(&z).fold(0.0f64, |acc, (a, b)| acc.max(a * b)) / s.c;
        trace!(
            "ipm iteration {iterations}: prim {:.2e}/{:.2e} dual {:.2e}/{:.2e} gap {gap:.2e}",
            res.prim,
            res.eps_prim,
            res.dual,
            res.eps_dual
        );
        if res.converged() && gap <= res.eps_dual {
            let tight = res.prim <= TIGHTENING * res.eps_prim
                && res.dual <= TIGHTENING * res.eps_dual
                && gap <= TIGHTENING * res.eps_dual;
            let first = *converged_at.get_or_insert(iterations);
            if tight || iterations >= first + EXTRA_ITERS {
                status = QpStatus::Optimal;
                break;
            }
        }
        if inf_norm(&yz) > DIVERGENCE && ws.primal_infeasible(&yz) {
            status = QpStatus::PrimalInfeasible;
            break;
        }
        if inf_norm(&x) > DIVERGENCE && ws.dual_infeasible(&x) {
            status = QpStatus::DualInfeasible;
            break;
        }
        iterations += 1;

        // residuals of the scaled system
        let px = s.p.mul_vec(&x);
        let aty = a_eq.tr_mul_vec(&y);
        let gtz = gt_mul(&z);
        let r_d: Vec<f64> = (0..n).map(|j| px[j] + s.q[j] + aty[j] + gtz[j]).collect();
        let ax = a_eq.mul_vec(&x);
        let r_p: Vec<f64> = (0..meq).map(|i| ax[i] - b[i]).collect();
        let gx = g_mul(&x);
        let r_g: Vec<f64> = (0..mi).map(|i| gx[i] + sl[i] - h[i]).collect();
        let mu = if mi > 0 { dot(&sl, &z) / mi as f64 } else { 0.0 };

        let w: Vec<f64> = sl.iter().zip(&z).map(|(a, b)| b / a).collect();
        let Some(exact) = reduced.factor(&w) else {
            debug!("ipm: reduced system is singular at iteration {iterations}");
            break;
        };
        // direction for the complementarity target r_c (s o z - target)
        let direction = |r_c: &[f64]| -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
            let t: Vec<f64> = (0..mi).map(|i| w[i] * r_g[i] - r_c[i] / sl[i]).collect();
            let gtt = gt_mul(&t);
            let rhs: Vec<f64> = (0..n).map(|j| -r_d[j] - gtt[j]).chain(r_p.iter().map(|v| -v)).collect();
            let sol = reduced.solve(&exact, &rhs);
            let dx = sol[..n].to_vec();
            let dy = sol[n..].to_vec();
            let gdx = g_mul(&dx);
            let dz: Vec<f64> = (0..mi).map(|i| w[i] * (gdx[i] + r_g[i]) - r_c[i] / sl[i]).collect();
            let ds: Vec<f64> = (0..mi).map(|i| -r_g[i] - gdx[i]).collect();
            (dx, dy, dz, ds)
        };

        let r_aff: Vec<f64> = sl.iter().zip(&z).map(|(a, b)| a * b).collect();
        let (_, _, dz_a, ds_a) = direction(&r_aff);
        let alpha_aff = max_step(&sl, &ds_a).min(max_step(&z, &dz_a));
        let mu_aff = if mi > 0 {
            (0..mi)
                .map(|i| (sl[i] + alpha_aff * ds_a[i]) * (z[i] + alpha_aff * dz_a[i]))
                .sum::<f64>()
                / mi as f64
        } else {
            0.0
        };
        let sigma = if mu > 0.0 { (mu_aff / mu).powi(3).min(1.0) } else { 0.0 };
        let r_c: Vec<f64> = (0..mi).map(|i| r_aff[i] + ds_a[i] * dz_a[i] - sigma * mu).collect();
        let (dx, dy, dz, ds) = direction(&r_c);
        let alpha = (STEP_FRACTION * max_step(&sl, &ds).min(max_step(&z, &dz))).min(1.0);
        let alpha = if mi == 0 { 1.0 } else { alpha };
        for j in 0..n {
            x[j] += alpha * dx[j];
        }
        for i in 0..meq {
            y[i] += alpha * dy[i];
        }
        for i in 0..mi {
            z[i] += alpha * dz[i];
            sl[i] += alpha * ds[i];
        }
        if x.iter().chain(&y).chain(&z).any(|v| !v.is_finite()) {
            debug!("ipm: non-finite iterate at iteration {iterations}");
            break;
        }
    }

    let yz = stacked_y(&y, &z);
    let final_res = ws.residuals(&x, &projected(&x), &yz);
    let x_out: Vec<f64> = x.iter().zip(&s.d).map(|(v, d)| v * d).collect();
    let y_out: Vec<f64> = yz.iter().zip(&s.e).map(|(v, e)| v * e / s.c).collect();
    let ax = a.mul_vec(&x_out);
    let primal_residual = (0..m).fold(0.0f64, |acc, i| acc.max(l[i] - ax[i]).max(ax[i] - u[i]));
    if status == QpStatus::Optimal && primal_residual > final_res.eps_prim {
        status = QpStatus::MaxIter;
    }
    debug!(
        "qp n={n} m={m}: {status:?} after {iterations} interior point iterations (prim {primal_residual:.2e}, dual {:.2e})",
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
        polished: false,
    }
}

fn failed(qp: &SparseQP, meq: usize, mi: usize) -> QpSolution {
    let x = vec![0.0; qp.num_vars()];
    QpSolution {
        objective: qp.objective(&x),
        x,
        y_eq: vec![0.0; meq],
        y_ineq: vec![0.0; mi],
        status: QpStatus::MaxIter,
        iterations: 0,
        primal_residual: f64::INFINITY,
        dual_residual: f64::INFINITY,
        polished: false,
    }
}
