//! The `airways` command line.
//!
//! ```text
//! airways plan     --project p.json --out out/ [--set lambda_k=1e6]...
//! airways simulate --project p.json --out out/ [--trajectory out/trajectory.csv]
//! airways report   --project p.json --trajectory out/trajectory.csv [--out dir/]
//! airways serve    [--port 8080] [--data-dir data/] [--static-dir studio/dist]
//! ```
//!
//! Exit codes: 0 success, 1 infeasible, stalled or diverged result, 2 usage
//! or input error.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;

use crate::planner::{feasibility_report, plan, trajectory_metrics, FeasibilityReport, PlanLimits, Trajectory};
use crate::project::{
    apply_override, emit_plots, export_simlog, export_trajectory, project_from_value, project_to_string, read_trajectory,
    LoadOptions, Project,
};
use crate::service::{resolve_port, serve, ServiceConfig};
use crate::simulator::simulate_tracking;
use crate::Error;

/// Where project documents are described.
pub const SCHEMA_POINTER: &str = "docs/project.schema.json";

#[derive(Debug, Parser)]
#[command(name = "airways", version, about = "Quadrotor trajectory design")]
pub struct Cli {
    /// More log output; repeat for more detail.
    #[arg(long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Plan a trajectory and write CSV, plots and reports.
    Plan(PlanArgs),
    /// Fly a trajectory in the nonlinear simulation.
    Simulate(SimulateArgs),
    /// Re-check the feasibility of an existing trajectory file.
    Report(ReportArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ProjectArgs {
    /// Project document (JSON).
    #[arg(long)]
    pub project: PathBuf,
    /// Override a weight, `dt` or `beta`, e.g. `--set lambda_k=1e6`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Ignore unknown fields in the project document.
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[command(flatten)]
    pub project: ProjectArgs,
    /// Output directory, created if absent.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub project: ProjectArgs,
    /// Output directory, created if absent.
    #[arg(long)]
    pub out: PathBuf,
    /// Trajectory CSV to fly; planned from the project when absent.
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub project: ProjectArgs,
    /// Trajectory CSV written by `plan`.
    #[arg(long)]
    pub trajectory: PathBuf,
    /// Also write feasibility.json and metrics.json here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Defaults to AIRWAYS_PORT, then 8080.
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long, default_value = "airways-data")]
    pub data_dir: PathBuf,
    /// Built studio assets to serve at `/`.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    Failure = 1,
    Usage = 2,
}

/// Why a run stopped early.
#[derive(Debug)]
struct Abort {
    code: ExitCode,
    message: String,
}

impl Abort {
    fn usage(message: impl fmt::Display) -> Self {
        Self { code: ExitCode::Usage, message: message.to_string() }
    }

    fn failure(message: impl fmt::Display) -> Self {
        Self { code: ExitCode::Failure, message: message.to_string() }
    }
}

impl From<Error> for Abort {
    fn from(e: Error) -> Self {
        match e {
            Error::Validation { .. } | Error::Csv { .. } | Error::Json(_) => {
                Abort::usage(format!("{e}\n(project format: {SCHEMA_POINTER})"))
            }
            Error::Diverged(_) => Abort::failure(e),
            _ => Abort::usage(e),
        }
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { ExitCode::Usage } else { ExitCode::Success };
            let _ = e.print();
            return code as i32;
        }
    };
    init_logging(cli.verbose);
    let result = match cli.command {
        Command::Plan(a) => run_plan(&a),
        Command::Simulate(a) => run_simulate(&a),
        Command::Report(a) => run_report(&a),
        Command::Serve(a) => run_serve(&a),
    };
    match result {
        Ok(code) => code as i32,
        Err(abort) => {
            eprintln!("error: {}", abort.message);
            abort.code as i32
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
}

/// Reads the document, applies `--set` overrides, then validates.
pub fn load_effective_project(args: &ProjectArgs) -> crate::Result<Project> {
    let bytes = fs::read(&args.project)?;
    let mut doc: Value =
        serde_json::from_slice(&bytes).map_err(|e| Error::validation("document", format!("{}: {e}", args.project.display())))?;
    for item in &args.overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| Error::validation("--set", format!("expected KEY=VALUE, got {item:?}")))?;
        apply_override(&mut doc, key.trim(), value)
            .map_err(|e| Error::validation("--set", format!("{item}: {e}")))?;
    }
    project_from_value(doc, LoadOptions { lenient: args.lenient })
}

fn prepare_out(dir: &Path) -> Result<(), Abort> {
    fs::create_dir_all(dir).map_err(|e| Abort::usage(format!("creating {}: {e}", dir.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Abort> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Abort::failure(e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Abort::usage(format!("writing {}: {e}", path.display())))
}

fn write_effective(project: &Project, dir: &Path) -> Result<(), Abort> {
    let path = dir.join("effective_project.json");
    fs::write(&path, project_to_string(project)).map_err(|e| Abort::usage(format!("writing {}: {e}", path.display())))
}

fn print_feasibility(report: &FeasibilityReport) {
    println!(
        "feasible: {} (max violation {:.3e}: dynamics {:.3e}, inputs {:.3e}, gimbal {:.3e}, obstacles {:.3e})",
        report.feasible,
        report.max_violation(),
        report.max_dynamics,
        report.max_input,
        report.max_gimbal,
        report.max_obstacle
    );
    if !report.feasible {
        println!("worst stage: {}", report.worst_stage);
    }
}

fn run_plan(args: &PlanArgs) -> Result<ExitCode, Abort> {
    let project = load_effective_project(&args.project)?;
    prepare_out(&args.out)?;
    write_effective(&project, &args.out)?;
    let outcome = plan(&project, &mut |it| {
        log::info!("iteration {}: cost {:.6e}, step {}", it.iteration, it.cost, it.step)
    })?;
    export_trajectory(&outcome.trajectory, args.out.join("trajectory.csv"))?;
    emit_plots(&outcome.trajectory, None, &project, &args.out)?;
    write_json(&args.out.join("feasibility.json"), &outcome.feasibility)?;
    write_json(&args.out.join("iqp_report.json"), &outcome.report)?;
    write_json(&args.out.join("metrics.json"), &trajectory_metrics(&outcome.trajectory, &project)?)?;

    let report = &outcome.report;
    println!(
        "planned {} stages ({:.2} s) in {} iterations, {:.2} s: {:?}",
        outcome.trajectory.num_stages(),
        outcome.trajectory.duration(),
        report.iterations.len(),
        report.wall_time_s,
        report.termination
    );
    println!("cost {:.6e} -> {:.6e}", report.initial_cost, report.final_cost);
    print_feasibility(&outcome.feasibility);
    println!("outputs in {}", args.out.display());
    Ok(if outcome.succeeded() { ExitCode::Success } else { ExitCode::Failure })
}

fn check_dt(trajectory: &Trajectory, project: &Project) -> Result<(), Abort> {
    if (trajectory.dt() - project.dt).abs() > 1e-9 * project.dt.max(1.0) {
        return Err(Abort::usage(format!(
            "trajectory dt {} differs from project dt {}",
            trajectory.dt(),
            project.dt
        )));
    }
    Ok(())
}

fn run_simulate(args: &SimulateArgs) -> Result<ExitCode, Abort> {
    let project = load_effective_project(&args.project)?;
    prepare_out(&args.out)?;
    write_effective(&project, &args.out)?;
    let trajectory = match &args.trajectory {
        Some(path) => {
            let t = read_trajectory(path)?;
            check_dt(&t, &project)?;
            t
        }
        None => {
            let outcome = plan(&project, &mut |_| {})?;
            export_trajectory(&outcome.trajectory, args.out.join("trajectory.csv"))?;
            if !outcome.succeeded() {
                print_feasibility(&outcome.feasibility);
                return Err(Abort::failure(format!(
                    "planning did not produce a feasible trajectory ({:?})",
                    outcome.report.termination
                )));
            }
            outcome.trajectory
        }
    };
    let log = simulate_tracking(&trajectory, &project.platform, &project.gains(), &project.simulation)?;
    export_simlog(&log, args.out.join("simlog.csv"))?;
    emit_plots(&trajectory, Some(&log), &project, &args.out)?;
    write_json(&args.out.join("tracking.json"), &log.summary)?;
    let s = &log.summary;
    println!(
        "{} samples: rms position error {:.4e} m, max {:.4e} m ({:.2}% / {:.2}% of {:.3} m diagonal), {} saturated",
        s.samples,
        s.rms_position_error,
        s.max_position_error,
        100.0 * s.rms_position_error / s.bbox_diagonal.max(f64::MIN_POSITIVE),
        100.0 * s.max_position_error / s.bbox_diagonal.max(f64::MIN_POSITIVE),
        s.bbox_diagonal,
        s.saturated_samples
    );
    println!("outputs in {}", args.out.display());
    Ok(ExitCode::Success)
}

fn run_report(args: &ReportArgs) -> Result<ExitCode, Abort> {
    let project = load_effective_project(&args.project)?;
    let trajectory = read_trajectory(&args.trajectory)?;
    check_dt(&trajectory, &project)?;
    let feasibility = feasibility_report(&trajectory, &PlanLimits::from_project(&project)?, &project.obstacles);
    let metrics = trajectory_metrics(&trajectory, &project)?;
    println!(
        "{} stages, {:.2} s, path {:.3} m, snap norm {:.4e}, max keyframe residual {:.3e} m, peak input usage {:.1}%",
        metrics.stages,
        metrics.duration,
        metrics.path_length,
        metrics.snap_norm,
        metrics.max_keyframe_residual,
        100.0 * metrics.peak_input_usage
    );
    print_feasibility(&feasibility);
    if let Some(out) = &args.out {
        prepare_out(out)?;
        write_json(&out.join("feasibility.json"), &feasibility)?;
        write_json(&out.join("metrics.json"), &metrics)?;
    }
    Ok(if feasibility.feasible { ExitCode::Success } else { ExitCode::Failure })
}

fn run_serve(args: &ServeArgs) -> Result<ExitCode, Abort> {
    let port = resolve_port(args.port)?;
    let config = ServiceConfig {
        data_dir: args.data_dir.clone(),
        static_dir: args.static_dir.clone(),
    };
    let runtime = tokio::runtime::Runtime::new().map_err(Abort::failure)?;
    runtime.block_on(serve(config, port)).map_err(Abort::failure)?;
    Ok(ExitCode::Success)
}
