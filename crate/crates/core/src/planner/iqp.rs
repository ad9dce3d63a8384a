//! Single-shot QP planning and the iterative QP loop.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{build_problem, feasibility_report, initial_guess, FeasibilityReport, PlanLimits, Trajectory};
use crate::costs::{total_cost_value, StackedVariables};
use crate::project::Project;
use crate::qp::{solve, QpSolution, QpStatus};
use crate::sparse::inf_norm;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Relative decrease below threshold, or the QP step (or the decrease it
    /// predicts) vanished.
    Converged,
    /// Backtracking shrank the step below the minimum.
    StepUnderflow,
    MaxIterations,
    /// No decreasing step on the first iteration; the initial guess is returned.
    Stalled,
    /// The subproblem was reported infeasible.
    QpFailed,
}

impl Termination {
    pub fn is_failure(self) -> bool {
        matches!(self, Termination::Stalled | Termination::QpFailed)
    }
}

/// One major iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IqpIteration {
    pub iteration: usize,
    /// Merit value after the step: objective plus obstacle penalty.
    pub cost: f64,
    pub objective: f64,
    /// Accepted step length, 0 when no step was taken.
    pub step: f64,
    pub accepted: bool,
    /// Largest constraint violation of the iterate after the step.
    pub max_violation: f64,
    pub qp_status: QpStatus,
    pub qp_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IqpReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: Vec<IqpIteration>,
    pub termination: Termination,
    pub wall_time_s: f64,
}

impl IqpReport {
    pub fn accepted_costs(&self) -> Vec<f64> {
        self.iterations.iter().filter(|i| i.accepted).map(|i| i.cost).collect()
    }
}

/// A complete planning result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanOutcome {
    pub trajectory: Trajectory,
    pub report: IqpReport,
    pub feasibility: FeasibilityReport,
}

impl PlanOutcome {
    /// Feasible and not stalled.
    pub fn succeeded(&self) -> bool {
        self.feasibility.feasible && !self.report.termination.is_failure()
    }
}

fn penetration(project: &Project, x: &StackedVariables) -> f64 {
    let mut total = 0.0;
    for o in &project.obstacles {
        for i in 0..x.num_stages() {
            total += o.violation(&x.position(i));
        }
    }
    total
}

fn merit(project: &Project, x: &StackedVariables) -> Result<(f64, f64)> {
    let objective = total_cost_value(x, &project.weights, &project.cost_data())?;
    Ok((objective + project.iqp.obstacle_penalty * penetration(project, x), objective))
}

/// Solves the single QP of a quadratic objective without obstacles.
pub fn plan_linear(project: &Project) -> Result<(Trajectory, QpSolution)> {
    project.validate()?;
    if !project.weights.is_quadratic() {
        return Err(Error::validation(
            "weights",
            "the single-shot plan needs lambda_c = lambda_s = 0",
        ));
    }
    if !project.obstacles.is_empty() {
        return Err(Error::validation("obstacles", "the single-shot plan does not handle obstacles"));
    }
    let x_ref = initial_guess(project)?;
    let qp = build_problem(project, &x_ref)?;
    let solution = solve(&qp, &project.solver, Some(x_ref.as_slice()));
    let variables = StackedVariables::from_vec(x_ref.num_stages(), x_ref.dt(), solution.x.clone());
    Ok((Trajectory::new(variables), solution))
}

pub fn plan_iqp(project: &Project) -> Result<(Trajectory, IqpReport)> {
    plan_iqp_with_progress(project, &mut |_| {})
}

/// Iterative QP from the initial guess. Each major iteration solves the QP
/// built around the current iterate and backtracks along the step until the
/// merit decreases. `progress` sees every iteration as it finishes.
pub fn plan_iqp_with_progress(
    project: &Project,
    progress: &mut dyn FnMut(&IqpIteration),
) -> Result<(Trajectory, IqpReport)> {
    project.validate()?;
    let started = Instant::now();
    let settings = &project.iqp;
    let limits = PlanLimits::from_project(project)?;
    let exact_model = project.weights.is_quadratic() && project.obstacles.is_empty();

    let mut x = initial_guess(project)?;
    let (mut cost, _) = merit(project, &x)?;
    let initial_cost = cost;
    let mut iterations = Vec::new();
    let mut termination = Termination::MaxIterations;

    for iteration in 0..settings.max_iterations {
        let qp = build_problem(project, &x)?;
        let solution = solve(&qp, &project.solver, Some(x.as_slice()));
        let mut record = IqpIteration {
            iteration,
            cost,
            objective: 0.0,
            step: 0.0,
            accepted: false,
            max_violation: 0.0,
            qp_status: solution.status,
            qp_iterations: solution.iterations,
        };
        if matches!(solution.status, QpStatus::PrimalInfeasible | QpStatus::DualInfeasible) {
            record.objective = merit(project, &x)?.1;
            record.max_violation = feasibility_report(&Trajectory::new(x.clone()), &limits, &project.obstacles).max_violation();
            progress(&record);
            iterations.push(record);
            termination = Termination::QpFailed;
            break;
        }
        let direction: Vec<f64> = solution.x.iter().zip(x.as_slice()).map(|(a, b)| a - b).collect();
        let scale = inf_norm(x.as_slice()).max(1.0);
        // decrease promised by the local model; only trusted outside obstacles
        let predicted = qp.objective(x.as_slice()) - solution.objective;
        let negligible = predicted <= settings.min_relative_decrease * cost.abs() && penetration(project, &x) == 0.0;
        if inf_norm(&direction) <= 1e-10 * scale || negligible {
            record.objective = merit(project, &x)?.1;
            record.max_violation = feasibility_report(&Trajectory::new(x.clone()), &limits, &project.obstacles).max_violation();
            progress(&record);
            iterations.push(record);
            termination = Termination::Converged;
            break;
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha >= settings.min_step {
            let candidate = x.stepped(&direction, alpha);
            let (c, objective) = merit(project, &candidate)?;
            if c < cost {
                accepted = Some((candidate, c, objective));
                break;
            }
            alpha *= settings.backtrack;
        }
        match accepted {
            Some((candidate, c, objective)) => {
                let relative = (cost - c) / cost.abs().max(1e-12);
                x = candidate;
                cost = c;
                record.cost = c;
                record.objective = objective;
                record.step = alpha;
                record.accepted = true;
                record.max_violation =
                    feasibility_report(&Trajectory::new(x.clone()), &limits, &project.obstacles).max_violation();
                progress(&record);
                iterations.push(record);
                let exact = exact_model && alpha == 1.0 && solution.status == QpStatus::Optimal;
                if exact || relative < settings.min_relative_decrease {
                    termination = Termination::Converged;
                    break;
                }
            }
            None => {
                record.objective = merit(project, &x)?.1;
                record.max_violation =
                    feasibility_report(&Trajectory::new(x.clone()), &limits, &project.obstacles).max_violation();
                progress(&record);
                iterations.push(record);
                termination = if iteration == 0 {
                    Termination::Stalled
                } else {
                    Termination::StepUnderflow
                };
                break;
            }
        }
    }

    let report = IqpReport {
        initial_cost,
        final_cost: cost,
        iterations,
        termination,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    Ok((Trajectory::new(x), report))
}

/// Plans with the iterative loop and attaches the feasibility report.
pub fn plan(project: &Project, progress: &mut dyn FnMut(&IqpIteration)) -> Result<PlanOutcome> {
    let (trajectory, report) = plan_iqp_with_progress(project, progress)?;
    let feasibility = feasibility_report(&trajectory, &PlanLimits::from_project(project)?, &project.obstacles);
    Ok(PlanOutcome {
        trajectory,
        report,
        feasibility,
    })
}
