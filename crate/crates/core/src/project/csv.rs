//! CSV exports of trajectories and simulation logs.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::Path;

use crate::costs::{StackedVariables, FORCE, GIMBAL_PITCH, GIMBAL_PITCH_RATE, GIMBAL_YAW, GIMBAL_YAW_RATE, POSITION, TARGET};
use crate::planner::Trajectory;
use crate::simulator::SimLog;
use crate::{Error, Result};

pub const TRAJECTORY_COLUMNS: [&str; 18] = [
    "t", "rx", "ry", "rz", "yaw", "vx", "vy", "vz", "yaw_rate", "Fx", "Fy", "Fz", "M_yaw", "gimbal_yaw",
    "gimbal_pitch", "tx", "ty", "tz",
];

pub const SIMLOG_COLUMNS: [&str; 24] = [
    "t", "rx", "ry", "rz", "vx", "vy", "vz", "roll", "pitch", "yaw", "wx", "wy", "wz", "u1", "u2", "u3", "u4",
    "saturated", "ref_rx", "ref_ry", "ref_rz", "ref_yaw", "position_error", "yaw_error",
];

/// Stacked offsets of the non-time trajectory columns, in column order.
const COLUMN_OFFSETS: [usize; 17] = [
    POSITION,
    POSITION + 1,
    POSITION + 2,
    3,
    4,
    5,
    6,
    7,
    FORCE,
    FORCE + 1,
    FORCE + 2,
    FORCE + 3,
    GIMBAL_YAW,
    GIMBAL_PITCH,
    TARGET,
    TARGET + 1,
    TARGET + 2,
];

/// Values of one stage in [`TRAJECTORY_COLUMNS`] order.
pub fn trajectory_row(trajectory: &Trajectory, stage: usize) -> [f64; 18] {
    let s = trajectory.variables.stage(stage);
    let mut row = [0.0; 18];
    row[0] = stage as f64 * trajectory.dt();
    for (j, &o) in COLUMN_OFFSETS.iter().enumerate() {
        row[j + 1] = s[o];
    }
    row
}

/// One row per stage, nine decimals, header first.
pub fn write_trajectory_csv(trajectory: &Trajectory, mut out: impl Write) -> io::Result<()> {
    writeln!(out, "{}", TRAJECTORY_COLUMNS.join(","))?;
    for i in 0..trajectory.num_stages() {
        let line: Vec<String> = trajectory_row(trajectory, i).iter().map(|v| format!("{v:.9}")).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn export_trajectory(trajectory: &Trajectory, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_trajectory_csv(trajectory, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

/// Reads a trajectory export. `dt` comes from the time column; gimbal rates
/// are not exported and are rebuilt by forward differences (0 on the last stage).
pub fn parse_trajectory_csv(input: impl BufRead) -> Result<Trajectory> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Csv { line: 1, message: "empty file".into() })??;
    let names: Vec<&str> = header.trim().split(',').map(str::trim).collect();
    if names != TRAJECTORY_COLUMNS {
        return Err(Error::Csv {
            line: 1,
            message: format!("expected header {}", TRAJECTORY_COLUMNS.join(",")),
        });
    }
    let mut rows: Vec<[f64; 18]> = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut row = [0.0; 18];
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != 18 {
            return Err(Error::Csv {
                line: k + 2,
                message: format!("expected 18 fields, got {}", fields.len()),
            });
        }
        for (j, f) in fields.iter().enumerate() {
            row[j] = f.trim().parse().map_err(|_| Error::Csv {
                line: k + 2,
                message: format!("column {}: {f:?} is not a number", TRAJECTORY_COLUMNS[j]),
            })?;
        }
        rows.push(row);
    }
    if rows.len() < 2 {
        return Err(Error::Csv { line: 2, message: "need at least 2 stages".into() });
    }
    let dt = rows[1][0] - rows[0][0];
    if !(dt > 0.0) {
        return Err(Error::Csv { line: 3, message: "time column must increase".into() });
    }
    let n = rows.len();
    let mut x = StackedVariables::zeros(n, dt);
    for (i, row) in rows.iter().enumerate() {
        let expected = i as f64 * dt;
        if (row[0] - expected).abs() > 1e-6 * dt.max(1.0) * (i.max(1) as f64) {
            return Err(Error::Csv {
                line: i + 2,
                message: format!("time {} is off the uniform grid (expected {expected})", row[0]),
            });
        }
        let s = x.stage_mut(i);
        for (j, &o) in COLUMN_OFFSETS.iter().enumerate() {
            s[o] = row[j + 1];
        }
    }
    for i in 0..n - 1 {
        let (gy, gp) = x.gimbal(i);
        let (ny, np) = x.gimbal(i + 1);
        let s = x.stage_mut(i);
        s[GIMBAL_YAW_RATE] = (ny - gy) / dt;
        s[GIMBAL_PITCH_RATE] = (np - gp) / dt;
    }
    Ok(Trajectory::new(x))
}

pub fn read_trajectory(path: impl AsRef<Path>) -> Result<Trajectory> {
    let file = fs::File::open(path)?;
    parse_trajectory_csv(io::BufReader::new(file))
}

/// Values of sample `k` in [`SIMLOG_COLUMNS`] order.
pub fn simlog_row(log: &SimLog, k: usize) -> [f64; 24] {
    let s = &log.states[k];
    let r = &s.rotation;
    let roll = r[(2, 1)].atan2(r[(2, 2)]);
    let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
    let reference = &log.references[k];
    let yaw_error = {
        let e = (s.yaw() - reference.yaw).rem_euclid(std::f64::consts::TAU);
        if e > std::f64::consts::PI {
            e - std::f64::consts::TAU
        } else {
            e
        }
    };
    let u = log.commands[k];
    [
        log.times[k],
        s.position.x,
        s.position.y,
        s.position.z,
        s.velocity.x,
        s.velocity.y,
        s.velocity.z,
        roll,
        pitch,
        s.yaw(),
        s.body_rates.x,
        s.body_rates.y,
        s.body_rates.z,
        u[0],
        u[1],
        u[2],
        u[3],
        if log.saturated[k] { 1.0 } else { 0.0 },
        reference.position.x,
        reference.position.y,
        reference.position.z,
        reference.yaw,
        log.position_error(k),
        yaw_error,
    ]
}

pub fn write_simlog_csv(log: &SimLog, mut out: impl Write) -> io::Result<()> {
    writeln!(out, "{}", SIMLOG_COLUMNS.join(","))?;
    for k in 0..log.len() {
        let line: Vec<String> = simlog_row(log, k).iter().map(|v| format!("{v:.9}")).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn export_simlog(log: &SimLog, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_simlog_csv(log, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}
