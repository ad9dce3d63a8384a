//! Sparse convex quadratic programming.
//!
//! ```text
//! minimize    1/2 x' H x + f' x
//! subject to  A_eq x = b_eq,  A_ineq x <= b_ineq
//! ```
//!
//! Two methods share the equilibration and the banded LDL factorization:
//!
//! - an operator-splitting (ADMM) iteration finished by a polish step, an
//!   equality-constrained KKT solve on the detected active set;
//! - a primal-dual interior point method, the default. The planner's
//!   objectives mix snap penalties with near-flat directions, and on those
//!   the splitting iteration often needs more than its iteration budget.

mod admm;
mod ipm;
pub mod ldl;

use std::fmt::Write as _;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::sparse::{dot, inf_norm, CscMatrix, Triplets};
use crate::{Error, Result};

pub use admm::solve_admm;
pub use ipm::solve_ipm;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpMethod {
    #[default]
    InteriorPoint,
    Admm,
}

/// Solves `qp` with the configured method. The warm start only affects the
/// splitting method.
pub fn solve(qp: &SparseQP, settings: &QpSettings, warm_start: Option<&[f64]>) -> QpSolution {
    match settings.method {
        QpMethod::InteriorPoint => solve_ipm(qp, settings),
        QpMethod::Admm => solve_admm(qp, settings, warm_start),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseQP {
    /// Full symmetric storage (both triangles).
    pub hessian: CscMatrix,
    pub linear: Vec<f64>,
    pub eq_matrix: CscMatrix,
    pub eq_rhs: Vec<f64>,
    pub ineq_matrix: CscMatrix,
    pub ineq_rhs: Vec<f64>,
}

impl SparseQP {
    pub fn new(
        hessian: CscMatrix,
        linear: Vec<f64>,
        eq_matrix: CscMatrix,
        eq_rhs: Vec<f64>,
        ineq_matrix: CscMatrix,
        ineq_rhs: Vec<f64>,
    ) -> Self {
        let qp = Self {
            hessian,
            linear,
            eq_matrix,
            eq_rhs,
            ineq_matrix,
            ineq_rhs,
        };
        qp.assert_consistent();
        qp
    }

    /// Unconstrained problem with `n` variables.
    pub fn unconstrained(hessian: CscMatrix, linear: Vec<f64>) -> Self {
        let n = linear.len();
        Self::new(
            hessian,
            linear,
            CscMatrix::zeros(0, n),
            Vec::new(),
            CscMatrix::zeros(0, n),
            Vec::new(),
        )
    }

    pub fn num_vars(&self) -> usize {
        self.linear.len()
    }

    pub fn num_eq(&self) -> usize {
        self.eq_rhs.len()
    }

    pub fn num_ineq(&self) -> usize {
        self.ineq_rhs.len()
    }

    fn assert_consistent(&self) {
        let n = self.num_vars();
        assert_eq!((self.hessian.nrows, self.hessian.ncols), (n, n), "hessian shape");
        assert_eq!(self.eq_matrix.ncols, n, "eq_matrix columns");
        assert_eq!(self.eq_matrix.nrows, self.eq_rhs.len(), "eq_matrix rows");
        assert_eq!(self.ineq_matrix.ncols, n, "ineq_matrix columns");
        assert_eq!(self.ineq_matrix.nrows, self.ineq_rhs.len(), "ineq_matrix rows");
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        0.5 * dot(x, &self.hessian.mul_vec(x)) + dot(&self.linear, x)
    }

    /// Writes the debug text format:
    ///
    /// ```text
    /// qp <n> <m_eq> <m_ineq>
    /// H <row> <col> <value>      (one line per stored entry)
    /// f <index> <value>
    /// Aeq <row> <col> <value>
    /// beq <index> <value>
    /// Aineq <row> <col> <value>
    /// bineq <index> <value>
    /// ```
    ///
    /// Values use Rust's shortest round-trip float formatting; entries appear in
    /// column-major storage order.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        writeln!(s, "qp {} {} {}", self.num_vars(), self.num_eq(), self.num_ineq()).unwrap();
        let matrix = |s: &mut String, tag: &str, m: &CscMatrix| {
            for (r, c, v) in m.iter() {
                writeln!(s, "{tag} {r} {c} {v:?}").unwrap();
            }
        };
        let vector = |s: &mut String, tag: &str, v: &[f64]| {
            for (i, x) in v.iter().enumerate() {
                if *x != 0.0 {
                    writeln!(s, "{tag} {i} {x:?}").unwrap();
                }
            }
        };
        matrix(&mut s, "H", &self.hessian);
        vector(&mut s, "f", &self.linear);
        matrix(&mut s, "Aeq", &self.eq_matrix);
        vector(&mut s, "beq", &self.eq_rhs);
        matrix(&mut s, "Aineq", &self.ineq_matrix);
        vector(&mut s, "bineq", &self.ineq_rhs);
        s
    }

    /// Parses the format written by [`SparseQP::dump`].
    pub fn parse_dump(input: impl BufRead) -> Result<Self> {
        let mut lines = input.lines().enumerate();
        let bad = |line: usize, message: &str| Error::Csv {
            line: line + 1,
            message: message.to_string(),
        };
        let (_, header) = lines.next().ok_or_else(|| bad(0, "empty input"))?;
        let header = header?;
        let dims: Vec<usize> = header
            .strip_prefix("qp ")
            .ok_or_else(|| bad(0, "missing 'qp' header"))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad(0, "bad dimension")))
            .collect::<Result<_>>()?;
        let [n, meq, mineq] = dims[..] else {
            return Err(bad(0, "header needs three dimensions"));
        };
        let mut h = Triplets::new(n, n);
        let mut aeq = Triplets::new(meq, n);
        let mut aineq = Triplets::new(mineq, n);
        let (mut f, mut beq, mut bineq) = (vec![0.0; n], vec![0.0; meq], vec![0.0; mineq]);
        for (idx, line) in lines {
            let line = line?;
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.is_empty() {
                continue;
            }
            let num = |k: usize| -> Result<usize> {
                tokens.get(k).and_then(|t| t.parse().ok()).ok_or_else(|| bad(idx, "bad index"))
            };
            let val = |k: usize| -> Result<f64> {
                tokens.get(k).and_then(|t| t.parse().ok()).ok_or_else(|| bad(idx, "bad value"))
            };
            let in_range = |i: usize, len: usize| if i < len { Ok(i) } else { Err(bad(idx, "index out of range")) };
            match tokens[0] {
                "H" => h.push(in_range(num(1)?, n)?, in_range(num(2)?, n)?, val(3)?),
                "Aeq" => aeq.push(in_range(num(1)?, meq)?, in_range(num(2)?, n)?, val(3)?),
                "Aineq" => aineq.push(in_range(num(1)?, mineq)?, in_range(num(2)?, n)?, val(3)?),
                "f" => f[in_range(num(1)?, n)?] = val(2)?,
                "beq" => beq[in_range(num(1)?, meq)?] = val(2)?,
                "bineq" => bineq[in_range(num(1)?, mineq)?] = val(2)?,
                other => return Err(bad(idx, &format!("unknown tag '{other}'"))),
            }
        }
        Ok(Self::new(h.to_csc(), f, aeq.to_csc(), beq, aineq.to_csc(), bineq))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QpSettings {
    pub method: QpMethod,
    pub eps_abs: f64,
    pub eps_rel: f64,
    /// Iteration budget of the splitting method.
    pub max_iter: usize,
    /// Iteration budget of the interior point method.
    pub ipm_max_iter: usize,
    /// Initial ADMM penalty.
    pub rho: f64,
    /// Proximal regularization on the primal variables.
    pub sigma: f64,
    /// Over-relaxation factor in (0, 2).
    pub alpha: f64,
    /// Iterations between penalty updates.
    pub adaptive_rho_interval: usize,
    pub scaling_iters: usize,
    pub polish: bool,
    pub polish_refine_iters: usize,
    pub eps_prim_inf: f64,
    pub eps_dual_inf: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            method: QpMethod::InteriorPoint,
            eps_abs: 1e-6,
            eps_rel: 1e-6,
            max_iter: 20_000,
            ipm_max_iter: 100,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            adaptive_rho_interval: 50,
            scaling_iters: 10,
            polish: true,
            polish_refine_iters: 60,
            eps_prim_inf: 1e-5,
            eps_dual_inf: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    MaxIter,
    PrimalInfeasible,
    DualInfeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    pub x: Vec<f64>,
    /// Multipliers of the equality rows.
    pub y_eq: Vec<f64>,
    /// Multipliers of the inequality rows (nonnegative at optimality).
    pub y_ineq: Vec<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    /// Largest constraint violation at `x`.
    pub primal_residual: f64,
    /// `|| H x + f + A' y ||_inf`
    pub dual_residual: f64,
    pub polished: bool,
    pub objective: f64,
}

/// Optimality residuals of a primal-dual pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    /// `|| H x + f + A_eq' y_eq + A_ineq' y_ineq ||_inf`
    pub stationarity: f64,
    /// `|| A_eq x - b_eq ||_inf`
    pub primal_eq: f64,
    /// `max(0, max_i (A_ineq x - b_ineq)_i)`
    pub primal_ineq: f64,
    /// `max_i |y_i (A_ineq x - b_ineq)_i|`
    pub complementarity: f64,
    /// `max(0, max_i -y_ineq_i)`
    pub dual_ineq: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal_eq)
            .max(self.primal_ineq)
            .max(self.complementarity)
            .max(self.dual_ineq)
    }
}

pub fn kkt_residuals(qp: &SparseQP, x: &[f64], y_eq: &[f64], y_ineq: &[f64]) -> KktResiduals {
    assert_eq!(x.len(), qp.num_vars());
    assert_eq!(y_eq.len(), qp.num_eq());
    assert_eq!(y_ineq.len(), qp.num_ineq());
    let mut grad = qp.hessian.mul_vec(x);
    for (g, f) in grad.iter_mut().zip(&qp.linear) {
        *g += f;
    }
    for (g, a) in grad.iter_mut().zip(qp.eq_matrix.tr_mul_vec(y_eq)) {
        *g += a;
    }
    for (g, a) in grad.iter_mut().zip(qp.ineq_matrix.tr_mul_vec(y_ineq)) {
        *g += a;
    }
    let eq: Vec<f64> = qp.eq_matrix.mul_vec(x).iter().zip(&qp.eq_rhs).map(|(a, b)| a - b).collect();
    let slack: Vec<f64> = qp
        .ineq_matrix
        .mul_vec(x)
        .iter()
        .zip(&qp.ineq_rhs)
        .map(|(a, b)| a - b)
        .collect();
    KktResiduals {
        stationarity: inf_norm(&grad),
        primal_eq: inf_norm(&eq),
        primal_ineq: slack.iter().fold(0.0f64, |m, s| m.max(*s)),
        complementarity: slack.iter().zip(y_ineq).fold(0.0f64, |m, (s, y)| m.max((s * y).abs())),
        dual_ineq: y_ineq.iter().fold(0.0f64, |m, y| m.max(-y)),
    }
}
