//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines are always printed. Every
//! check recomputes what it verifies (dynamics, bounds, QP optimum, camera
//! angle, snap, tracking error) from first principles instead of trusting the
//! library's own diagnostics.

use std::f64::consts::{PI, TAU};
use std::time::Instant;

use airways::costs::{skewness_error, StackedVariables, STRIDE};
use airways::dynamics::{
    derive_input_bounds, inverse_mixer, mixer, skew, vee, FullState, PlatformParams,
};
use airways::planner::{initial_guess, plan, PlanOutcome, Trajectory};
use airways::project::{parse_project, LoadOptions, Project};
use airways::qp::{self, QpMethod, QpSettings, SparseQP};
use airways::simulator::{attitude_error, attitude_setpoint, rk4_step, simulate_tracking};
use airways::sparse::Triplets;
use nalgebra::{DMatrix, DVector, Matrix3, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PLATFORM: &str = r#""platform": {
    "mass": 1.0, "inertia": [0.01, 0.01, 0.02],
    "rotor_thrust_coeff": 1.0, "rotor_moment_coeff": 0.1, "arm_length": 0.2,
    "rotor_force_max": 5.0, "rotor_moment_max": 0.5
}"#;

const ORBIT: &str = include_str!("../../../docs/examples/orbit.json");
const ZIGZAG: &str = include_str!("../../../docs/examples/zigzag.json");
const LIGHT_PAINTING: &str = include_str!("../../../docs/examples/light_painting.json");

/// Criteria that cannot be met by this implementation. They are still run
/// and reported; the reasons are given in the README.
const KNOWN_FAILURES: &[&str] = &["snap_regularization"];

struct Outcome {
    pass: bool,
    detail: String,
}

fn load(body: &str) -> Project {
    let text = format!("{{{PLATFORM}, {body}}}");
    parse_project(text.as_bytes(), LoadOptions::default()).unwrap_or_else(|e| panic!("{e}\n{text}"))
}

fn load_doc(text: &str) -> Project {
    parse_project(text.as_bytes(), LoadOptions::default()).unwrap()
}

fn plan_quietly(project: &Project) -> PlanOutcome {
    plan(project, &mut |_| {}).expect("planning")
}

fn keyframes_json(points: &[(usize, [f64; 3])]) -> String {
    let items: Vec<String> = points
        .iter()
        .map(|(s, p)| format!(r#"{{"stage": {s}, "position": [{}, {}, {}]}}"#, p[0], p[1], p[2]))
        .collect();
    format!(r#""keyframes": [{}]"#, items.join(", "))
}

// ---------------------------------------------------------------- oracles

/// Largest violation of the planning model, recomputed from the continuous
/// double integrator under a zero-order hold.
fn oracle_violation(project: &Project, traj: &Trajectory) -> f64 {
    let p = &project.platform;
    let n = traj.num_stages();
    let dt = traj.dt();
    let g = Vector3::new(0.0, 0.0, p.gravity);
    let thrust = (1.0 - project.beta / 2.0) * 4.0 * p.rotor_force_max;
    let half = (thrust - p.mass * p.gravity) / 3f64.sqrt();
    let moment = project.beta * 2.0 * p.rotor_moment_max;
    let hover = Vector3::new(0.0, 0.0, p.mass * p.gravity);
    let mut worst = 0.0f64;
    for i in 0..n {
        let s = traj.flat_state(i);
        let u = traj.flat_input(i);
        if i + 1 < n {
            let next = traj.flat_state(i + 1);
            let a = u.force / p.mass - g;
            let yaw_acc = u.yaw_moment / p.inertia[2];
            let pos = s.position + s.velocity * dt + 0.5 * a * dt * dt;
            let vel = s.velocity + a * dt;
            let yaw = s.yaw + s.yaw_rate * dt + 0.5 * yaw_acc * dt * dt;
            let yaw_rate = s.yaw_rate + yaw_acc * dt;
            worst = worst
                .max((next.position - pos).amax())
                .max((next.velocity - vel).amax())
                .max((next.yaw - yaw).abs())
                .max((next.yaw_rate - yaw_rate).abs());
            let (gy, gp) = traj.gimbal(i);
            let (ry, rp) = traj.gimbal_rates(i);
            let (ny, np) = traj.gimbal(i + 1);
            worst = worst.max((ny - gy - dt * ry).abs()).max((np - gp - dt * rp).abs());
        }
        worst = worst.max(((u.force - hover).amax() - half).max(0.0));
        worst = worst.max((u.yaw_moment.abs() - moment).max(0.0));
        if let Some(lim) = &project.gimbal_limits {
            let outside = |v: f64, r: [f64; 2]| (v - r[1]).max(r[0] - v).max(0.0);
            let (gy, gp) = traj.gimbal(i);
            let (ry, rp) = traj.gimbal_rates(i);
            worst = worst
                .max(outside(gy, lim.yaw_range))
                .max(outside(gp, lim.pitch_range))
                .max(outside(ry, lim.rate_range))
                .max(outside(rp, lim.rate_range));
        }
        for o in &project.obstacles {
            let d = (traj.position(i) - Vector3::from(o.center)).norm();
            worst = worst.max(o.radius + o.margin - d);
        }
    }
    worst
}

/// Peak input excursion as a fraction of the box half widths.
fn oracle_usage(project: &Project, traj: &Trajectory) -> f64 {
    let p = &project.platform;
    let thrust = (1.0 - project.beta / 2.0) * 4.0 * p.rotor_force_max;
    let half = (thrust - p.mass * p.gravity) / 3f64.sqrt();
    let moment = project.beta * 2.0 * p.rotor_moment_max;
    let hover = Vector3::new(0.0, 0.0, p.mass * p.gravity);
    (0..traj.num_stages())
        .map(|i| {
            let u = traj.flat_input(i);
            let force = (u.force - hover).amax() / half;
            if moment > 0.0 {
                force.max(u.yaw_moment.abs() / moment)
            } else {
                force
            }
        })
        .fold(0.0, f64::max)
}

fn oracle_snap(traj: &Trajectory) -> f64 {
    let dt4 = traj.dt().powi(4);
    let mut total = 0.0;
    for i in 4..traj.num_stages() {
        let d = traj.position(i) - 4.0 * traj.position(i - 1) + 6.0 * traj.position(i - 2)
            - 4.0 * traj.position(i - 3)
            + traj.position(i - 4);
        total += (d / dt4).norm_squared();
    }
    total.sqrt()
}

fn oracle_mean_camera_error(x: &StackedVariables) -> f64 {
    let n = x.num_stages();
    let mut total = 0.0;
    for i in 0..n {
        let s = x.stage(i);
        let psi = s[3] + s[12];
        let phi = s[13];
        let look = Vector3::new(phi.cos() * psi.cos(), phi.cos() * psi.sin(), phi.sin());
        let to_target = Vector3::new(s[16] - s[0], s[17] - s[1], s[18] - s[2]);
        if to_target.norm() > 0.0 {
            total += look.dot(&to_target.normalize()).clamp(-1.0, 1.0).acos();
        }
    }
    total / n as f64
}

fn max_keyframe_residual(project: &Project, traj: &Trajectory) -> f64 {
    project
        .keyframes
        .iter()
        .map(|k| (traj.position(k.stage.unwrap()) - Vector3::from(k.position)).norm())
        .fold(0.0, f64::max)
}

// ----------------------------------------------------------- feasibility

fn random_project(rng: &mut ChaCha8Rng, case: usize) -> Project {
    let n: usize = rng.gen_range(50..=300);
    let count: usize = rng.gen_range(2..=8).min(n / 6);
    let mut stages: Vec<usize> = vec![0, n - 1];
    while stages.len() < count {
        let s = rng.gen_range(5..n - 5);
        if stages.iter().all(|&t| t.abs_diff(s) >= 5) {
            stages.push(s);
        }
    }
    stages.sort_unstable();
    let mut points = Vec::new();
    let mut p = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(0.5..2.5)];
    for (k, &s) in stages.iter().enumerate() {
        if k > 0 {
            let span = (s - stages[k - 1]) as f64 * 0.1;
            let speed = rng.gen_range(0.1..1.2);
            let heading = rng.gen_range(0.0..TAU);
            let climb = rng.gen_range(-0.3..0.3);
            let d = Vector3::new(heading.cos(), heading.sin(), climb).normalize() * speed * span;
            p = [p[0] + d.x, p[1] + d.y, p[2] + d.z];
        }
        points.push((s, p));
    }
    let mut body = keyframes_json(&points);
    body += &format!(r#", "beta": {:.3}, "initial_yaw": {:.3}"#, rng.gen_range(0.05..0.5), rng.gen_range(-PI..PI));
    if case % 2 == 0 {
        body += r#", "initial_velocity": [0, 0, 0]"#;
    }
    if case % 3 == 0 && points.len() >= 2 {
        // beside the straight line between the first two keyframes
        let (a, b) = (Vector3::from(points[0].1), Vector3::from(points[1].1));
        let mid = 0.5 * (a + b);
        let side = (b - a).cross(&Vector3::z());
        let side = if side.norm() > 1e-6 { side.normalize() } else { Vector3::x() };
        let c = mid + 0.25 * side;
        body += &format!(
            r#", "obstacles": [{{"center": [{}, {}, {}], "radius": {:.3}}}]"#,
            c.x,
            c.y,
            c.z,
            rng.gen_range(0.15..0.4)
        );
    }
    if case % 4 == 1 {
        let t = points[points.len() / 2].1;
        body += &format!(
            r#", "keytargets": [{{"stage": 0, "position": [{}, {}, 0]}}],
               "gimbal_limits": {{"yaw_range": [-1.5, 1.5], "pitch_range": [-1.4, 0.4], "rate_range": [-3, 3]}}"#,
            t[0] + 1.0,
            t[1]
        );
    }
    load(&body)
}

fn feasibility_suite(tracking_pool: &mut Vec<(Project, Trajectory)>) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let start = Instant::now();
    let mut labeled = 0;
    let mut worst = 0.0f64;
    let mut mismatches = Vec::new();
    for case in 0..25 {
        let project = random_project(&mut rng, case);
        let outcome = plan_quietly(&project);
        if !outcome.feasibility.feasible {
            continue;
        }
        labeled += 1;
        let v = oracle_violation(&project, &outcome.trajectory);
        worst = worst.max(v);
        if v > 1e-5 {
            mismatches.push(case);
        }
        tracking_pool.push((project, outcome.trajectory));
    }
    let seconds = start.elapsed().as_secs_f64();
    Outcome {
        pass: mismatches.is_empty() && labeled >= 20 && seconds < 300.0,
        detail: format!(
            "{labeled}/25 labeled feasible, worst independent violation {worst:.2e}, mismatched cases {mismatches:?}, {seconds:.1} s"
        ),
    }
}

// ---------------------------------------------------------------- bounds

fn bound_derivation() -> Outcome {
    let params = load_doc(ORBIT).platform;
    let b = derive_input_bounds(&params, 0.2).unwrap();
    let ratio = b.force_norm_max / b.thrust_max;
    let worked = ratio == 0.9;
    let mut worst = 0.0f64;
    for k in 0..=100 {
        let beta = k as f64 / 100.0;
        let b = derive_input_bounds(&params, beta).unwrap();
        let expected = (1.0 - beta / 2.0) * 4.0 * params.rotor_force_max;
        worst = worst.max((b.force_norm_max - expected).abs() / expected);
        worst = worst.max((b.yaw_moment_max - beta * 2.0 * params.rotor_moment_max).abs());
    }
    Outcome {
        pass: worked && worst < 1e-14,
        detail: format!("beta 0.2 gives ratio {ratio}, worst deviation over 101 betas {worst:.1e}"),
    }
}

// ------------------------------------------------------------- QP oracle

struct DenseQp {
    h: DMatrix<f64>,
    f: DVector<f64>,
    aeq: DMatrix<f64>,
    beq: DVector<f64>,
    ain: DMatrix<f64>,
    bin: DVector<f64>,
}

fn random_qp(rng: &mut ChaCha8Rng) -> DenseQp {
    let n = rng.gen_range(1..=12);
    let meq = rng.gen_range(0..=3.min(n - 1));
    let min = rng.gen_range(0..=8);
    let l = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let h = &l * l.transpose() + DMatrix::identity(n, n) * 0.1;
    let f = DVector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0));
    let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let aeq = DMatrix::from_fn(meq, n, |_, _| rng.gen_range(-1.0..1.0));
    let beq = &aeq * &x0;
    let ain = DMatrix::from_fn(min, n, |_, _| rng.gen_range(-1.0..1.0));
    let slack = DVector::from_fn(min, |_, _| rng.gen_range(0.05..1.0));
    let bin = &ain * &x0 + slack;
    DenseQp { h, f, aeq, beq, ain, bin }
}

fn to_csc(m: &DMatrix<f64>) -> airways::sparse::CscMatrix {
    let mut t = Triplets::new(m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if m[(r, c)] != 0.0 {
                t.push(r, c, m[(r, c)]);
            }
        }
    }
    t.to_csc()
}

/// Tries every active set and keeps the KKT point that is primal and dual
/// feasible with the lowest objective.
fn enumerate_active_sets(q: &DenseQp) -> DVector<f64> {
    let n = q.h.nrows();
    let meq = q.aeq.nrows();
    let min = q.ain.nrows();
    let objective = |x: &DVector<f64>| 0.5 * x.dot(&(&q.h * x)) + q.f.dot(x);
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << min) {
        let active: Vec<usize> = (0..min).filter(|i| mask & (1 << i) != 0).collect();
        let m = meq + active.len();
        if m > n {
            continue;
        }
        let mut kkt = DMatrix::zeros(n + m, n + m);
        let mut rhs = DVector::zeros(n + m);
        kkt.view_mut((0, 0), (n, n)).copy_from(&q.h);
        rhs.rows_mut(0, n).copy_from(&(-&q.f));
        for r in 0..m {
            let (row, b) = if r < meq {
                (q.aeq.row(r).clone_owned(), q.beq[r])
            } else {
                (q.ain.row(active[r - meq]).clone_owned(), q.bin[active[r - meq]])
            };
            kkt.view_mut((n + r, 0), (1, n)).copy_from(&row);
            kkt.view_mut((0, n + r), (n, 1)).copy_from(&row.transpose());
            rhs[n + r] = b;
        }
        let Some(sol) = kkt.clone().lu().solve(&rhs) else { continue };
        if (&kkt * &sol - &rhs).amax() > 1e-9 {
            continue;
        }
        let x = sol.rows(0, n).clone_owned();
        let multipliers_ok = (meq..m).all(|r| sol[n + r] >= -1e-9);
        let primal_ok = (0..min).all(|i| q.ain.row(i).dot(&x.transpose()) <= q.bin[i] + 1e-9);
        if multipliers_ok && primal_ok {
            let v = objective(&x);
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, x));
            }
        }
    }
    best.expect("a feasible strictly convex QP has a KKT point").1
}

fn qp_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let settings = QpSettings::default();
    let mut worst = 0.0f64;
    let mut failures = 0;
    for _ in 0..200 {
        let q = random_qp(&mut rng);
        let expected = enumerate_active_sets(&q);
        let sparse = SparseQP::new(
            to_csc(&q.h),
            q.f.iter().copied().collect(),
            to_csc(&q.aeq),
            q.beq.iter().copied().collect(),
            to_csc(&q.ain),
            q.bin.iter().copied().collect(),
        );
        let sol = qp::solve(&sparse, &settings, None);
        let err = sol.x.iter().zip(expected.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(err);
        if err > 1e-5 {
            failures += 1;
        }
    }
    Outcome {
        pass: failures == 0,
        detail: format!("200 problems, {failures} off by more than 1e-5, worst error {worst:.2e}"),
    }
}

// ------------------------------------------------------------------ snap

fn zigzag_body(extra: &str) -> String {
    let points: Vec<(usize, [f64; 3])> =
        (0..5).map(|k| (20 * k, [2.0 * k as f64, if k % 2 == 1 { 2.0 } else { 0.0 }, 1.0])).collect();
    format!("{}, {extra}", keyframes_json(&points))
}

fn snap_regularization() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = false;
    for method in [QpMethod::InteriorPoint, QpMethod::Admm] {
        let name = serde_json::to_value(method).unwrap();
        let solver = format!(r#""solver": {{"method": {name}}}"#);
        let rough = plan_quietly(&load(&zigzag_body(&format!(r#""weights": {{"lambda_d": 0}}, {solver}"#))));
        let smooth_project = load(&zigzag_body(&solver));
        let smooth = plan_quietly(&smooth_project);
        let ratio = oracle_snap(&rough.trajectory) / oracle_snap(&smooth.trajectory);
        let residual = max_keyframe_residual(&smooth_project, &smooth.trajectory);
        if method == QpMethod::InteriorPoint {
            pass = ratio >= 10.0 && residual < 0.05;
        }
        lines.push(format!("{name}: snap ratio {ratio:.2}, residual {:.1} mm", residual * 1e3));
    }
    Outcome {
        pass,
        detail: format!("{} (the lambda_d = 0 optimum is not unique)", lines.join("; ")),
    }
}

// ------------------------------------------------------------------- IQP

fn orbit_case(rng: &mut ChaCha8Rng) -> Project {
    let radius = rng.gen_range(2.5..4.0);
    let height = rng.gen_range(1.0..2.5);
    let seconds: usize = rng.gen_range(5..=9);
    let n = seconds * 10;
    let start = rng.gen_range(0.0..TAU);
    let sweep = rng.gen_range(0.6..1.0) * TAU;
    let points: Vec<(usize, [f64; 3])> = (0..=8)
        .map(|k| {
            let a = start + sweep * k as f64 / 8.0;
            (k * n / 8, [radius * a.cos(), radius * a.sin(), height])
        })
        .chain(std::iter::once({
            let a = start + sweep;
            (n + 10, [radius * a.cos(), radius * a.sin(), height])
        }))
        .collect();
    let a = start + sweep * rng.gen_range(0.3..0.7);
    let o = (radius + rng.gen_range(0.1..0.25)) * Vector3::new(a.cos(), a.sin(), 0.0);
    load(&format!(
        r#"{}, "initial_velocity": [0, 0, 0],
        "keytargets": [{{"stage": 0, "position": [0, 0, {:.3}]}}],
        "weights": {{"lambda_c": 10, "lambda_s": 1}},
        "obstacles": [{{"center": [{}, {}, {height}], "radius": {:.3}}}],
        "gimbal_limits": {{"yaw_range": [-0.8, 0.8], "pitch_range": [-1.2, 0.3], "rate_range": [-2, 2]}}"#,
        keyframes_json(&points),
        rng.gen_range(0.5..1.5),
        o.x,
        o.y,
        rng.gen_range(0.2..0.4)
    ))
}

fn strictly_decreasing(outcome: &PlanOutcome) -> bool {
    let mut costs = vec![outcome.report.initial_cost];
    costs.extend(outcome.report.accepted_costs());
    costs.windows(2).all(|w| w[1] < w[0])
}

fn iqp_behavior() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut cases = vec![load_doc(ORBIT)];
    cases.extend((0..9).map(|_| orbit_case(&mut rng)));
    let mut problems = Vec::new();
    let mut most_iterations = 0;
    for (k, project) in cases.iter().enumerate() {
        assert!(project.weights.lambda_c > 0.0 && project.weights.lambda_s > 0.0 && project.obstacles.len() == 1);
        let outcome = plan_quietly(project);
        let iterations = outcome.report.iterations.len();
        most_iterations = most_iterations.max(iterations);
        if !strictly_decreasing(&outcome) || iterations > 50 || outcome.report.termination.is_failure() {
            problems.push(format!("case {k}: {:?} after {iterations}", outcome.report.termination));
        }
    }
    let orbit = &cases[0];
    let before = oracle_mean_camera_error(&initial_guess(orbit).unwrap());
    let after = oracle_mean_camera_error(&plan_quietly(orbit).trajectory.variables);
    let ratio = after / before;
    Outcome {
        pass: problems.is_empty() && ratio <= 0.5,
        detail: format!(
            "10 cases, at most {most_iterations} iterations, problems {problems:?}; orbit camera error {before:.4} -> {after:.4} rad (ratio {ratio:.3})"
        ),
    }
}

// --------------------------------------------------------------- runtime

fn runtime_regime() -> Outcome {
    let points: Vec<(usize, [f64; 3])> = (0..=6)
        .map(|k| (k * 299 / 6, [3.0 * k as f64, if k % 2 == 1 { 2.0 } else { -2.0 }, 1.0 + 0.2 * k as f64]))
        .collect();
    let linear = load(&keyframes_json(&points));
    assert_eq!(linear.num_stages(), 300);
    let start = Instant::now();
    let outcome = plan_quietly(&linear);
    let qp_seconds = start.elapsed().as_secs_f64();
    let qp_ok = outcome.succeeded();

    let n = 200;
    let points: Vec<(usize, [f64; 3])> = (0..=10)
        .map(|k| {
            let a = TAU * k as f64 / 10.0;
            (k * n / 10, [3.0 * a.cos(), 3.0 * a.sin(), 1.5])
        })
        .collect();
    let nonlinear = load(&format!(
        r#"{}, "initial_velocity": [0, 0, 0],
        "keytargets": [{{"stage": 0, "position": [0, 0, 1]}}],
        "weights": {{"lambda_c": 10, "lambda_s": 1}},
        "obstacles": [{{"center": [0, 3.2, 1.5], "radius": 0.3}}]"#,
        keyframes_json(&points)
    ));
    assert_eq!(nonlinear.num_stages(), 201);
    let start = Instant::now();
    let outcome = plan_quietly(&nonlinear);
    let iqp_seconds = start.elapsed().as_secs_f64();
    let iqp_ok = outcome.succeeded();
    Outcome {
        pass: qp_ok && iqp_ok && qp_seconds < 5.0 && iqp_seconds < 60.0,
        detail: format!(
            "N=300 QP {qp_seconds:.2} s (feasible {qp_ok}), 20 s IQP {iqp_seconds:.1} s in {} iterations (feasible {iqp_ok})",
            outcome.report.iterations.len()
        ),
    }
}

// -------------------------------------------------------------- tracking

/// RMS and max distance to the linearly interpolated plan, and the bounding
/// box diagonal of the plan.
fn tracking_errors(project: &Project, traj: &Trajectory) -> (f64, f64, f64) {
    let log = simulate_tracking(traj, &project.platform, &project.gains(), &project.simulation).unwrap();
    let dt = traj.dt();
    let last = traj.num_stages() - 1;
    let mut sum = 0.0;
    let mut max = 0.0f64;
    for (t, s) in log.times.iter().zip(&log.states) {
        let i = ((t / dt).floor() as usize).min(last.saturating_sub(1));
        let w = (t / dt - i as f64).clamp(0.0, 1.0);
        let reference = traj.position(i) * (1.0 - w) + traj.position(i + 1) * w;
        let e = (s.position - reference).norm();
        sum += e * e;
        max = max.max(e);
    }
    let (mut lo, mut hi) = (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY));
    for i in 0..=last {
        lo = lo.inf(&traj.position(i));
        hi = hi.sup(&traj.position(i));
    }
    ((sum / log.times.len() as f64).sqrt(), max, (hi - lo).norm())
}

fn gentle_projects() -> Vec<Project> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    (0..6)
        .map(|_| {
            let a = Vector3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(0.5..2.0));
            let d = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-0.3..0.3));
            let b = a + d.normalize() * rng.gen_range(1.0..3.0);
            let n = rng.gen_range(40..80);
            load(&format!(
                r#"{}, "initial_velocity": [0, 0, 0]"#,
                keyframes_json(&[(0, a.into()), (n, b.into()), (n + 20, b.into())])
            ))
        })
        .collect()
}

fn tracking_verification(pool: Vec<(Project, Trajectory)>) -> Outcome {
    let mut candidates = pool;
    for text in [ZIGZAG, LIGHT_PAINTING, ORBIT] {
        let project = load_doc(text);
        let traj = plan_quietly(&project).trajectory;
        candidates.push((project, traj));
    }
    for project in gentle_projects() {
        let traj = plan_quietly(&project).trajectory;
        candidates.push((project, traj));
    }
    let mut checked = 0;
    let mut worst_rms = 0.0f64;
    let mut worst_max = 0.0f64;
    for (project, traj) in &candidates {
        if oracle_violation(project, traj) > 1e-5 || oracle_usage(project, traj) >= 0.6 {
            continue;
        }
        checked += 1;
        let (rms, max, diagonal) = tracking_errors(project, traj);
        worst_rms = worst_rms.max(rms / diagonal);
        worst_max = worst_max.max(max / diagonal);
    }

    let params = load_doc(ORBIT).platform;
    let n = 51;
    let mut hover = StackedVariables::zeros(n, 0.1);
    for i in 0..n {
        let s = hover.stage_mut(i);
        s[..3].copy_from_slice(&[1.0, -2.0, 1.5]);
        s[10] = params.mass * params.gravity;
    }
    let hover_project = load(&keyframes_json(&[(0, [1.0, -2.0, 1.5]), (50, [1.0, -2.0, 1.5])]));
    let hover_traj = Trajectory::new(hover);
    let log = simulate_tracking(&hover_traj, &params, &hover_project.gains(), &hover_project.simulation).unwrap();
    let hover_max = log
        .states
        .iter()
        .map(|s| (s.position - Vector3::new(1.0, -2.0, 1.5)).norm())
        .fold(0.0, f64::max);

    Outcome {
        pass: checked >= 5 && worst_rms < 0.02 && worst_max < 0.05 && hover_max < 1e-6,
        detail: format!(
            "{checked} of {} plans below 60% usage, worst rms {:.2}% and max {:.2}% of the diagonal; hover drift {hover_max:.1e} m over {:.1} s",
            candidates.len(),
            worst_rms * 100.0,
            worst_max * 100.0,
            log.times.last().unwrap()
        ),
    }
}

// ----------------------------------------------------- controller identities

fn rk4_terminal(start: &FullState, u: &Vector4<f64>, h: f64, t: f64, params: &PlatformParams) -> FullState {
    let steps = (t / h).round() as usize;
    let mut s = *start;
    for _ in 0..steps {
        s = rk4_step(&s, u, h, params);
    }
    s
}

fn state_distance(a: &FullState, b: &FullState) -> f64 {
    (a.position - b.position)
        .amax()
        .max((a.velocity - b.velocity).amax())
        .max((a.rotation - b.rotation).amax())
        .max((a.body_rates - b.body_rates).amax())
}

fn controller_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = load_doc(ORBIT).platform;
    let mut vee_err = 0.0f64;
    let mut ortho_err = 0.0f64;
    let mut er_err = 0.0f64;
    let mut mixer_err = 0.0f64;
    for _ in 0..1000 {
        let v = Vector3::from_fn(|_, _| rng.gen_range(-10.0..10.0));
        vee_err = vee_err.max((vee(&skew(&v)) - v).amax());

        let f = Vector3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(0.1..15.0));
        let r = attitude_setpoint(&f, rng.gen_range(-PI..PI), &Matrix3::identity()).rotation;
        ortho_err = ortho_err.max((r.transpose() * r - Matrix3::identity()).amax());
        er_err = er_err.max(attitude_error(&r, &r).amax());

        let upper = params.rotor_force_max / params.rotor_thrust_coeff;
        let speeds = Vector4::from_fn(|_, _| rng.gen_range(0.0..upper));
        let back = inverse_mixer(&mixer(&speeds, &params), &params);
        mixer_err = mixer_err.max((back.raw_speeds_sq - speeds).amax());
    }

    let start = FullState {
        position: Vector3::new(0.0, 0.0, 1.0),
        velocity: Vector3::new(0.5, -0.2, 0.1),
        rotation: Matrix3::identity(),
        body_rates: Vector3::new(0.4, -0.3, 0.6),
    };
    let u = Vector4::new(11.0, 0.004, -0.003, 0.002);
    let (t, h) = (1.0, 0.02);
    let reference = rk4_terminal(&start, &u, h / 8.0, t, &params);
    let coarse = state_distance(&rk4_terminal(&start, &u, h, t, &params), &reference);
    let fine = state_distance(&rk4_terminal(&start, &u, h / 2.0, t, &params), &reference);
    let order = (coarse / fine).log2();

    Outcome {
        pass: vee_err == 0.0 && ortho_err < 1e-12 && er_err == 0.0 && mixer_err < 1e-10 && order >= 3.9,
        detail: format!(
            "vee(skew) {vee_err:.0e}, setpoint orthonormality {ortho_err:.1e}, e_R at R_d {er_err:.0e}, mixer round trip {mixer_err:.1e}, RK4 order {order:.2}"
        ),
    }
}

// -------------------------------------------------------------- skewness

fn skewness_symmetry() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst = 0.0f64;
    let mut level_worst = 0.0f64;
    for _ in 0..1000 {
        let target = Vector3::from_fn(|_, _| rng.gen_range(-5.0..5.0));
        let half = rng.gen_range(0.1..2.0);
        let mut d = Vector3::new(rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0), rng.gen_range(0.05..6.0));
        let above = skewness_error(&(target + d), &target, half).value;
        d.z = -d.z;
        let below = skewness_error(&(target + d), &target, half).value;
        worst = worst.max((above - below).abs() / above.abs().max(1.0));
        d.z = 0.0;
        level_worst = level_worst.max(skewness_error(&(target + d), &target, half).value.abs());
    }
    Outcome {
        pass: worst < 1e-12 && level_worst == 0.0,
        detail: format!("1000 mirrored pairs differ by at most {worst:.1e}, level shots give at most {level_worst:.1e}"),
    }
}

fn main() {
    assert_eq!(STRIDE, 19);
    let mut pool = Vec::new();
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    results.push(("feasibility_suite", feasibility_suite(&mut pool)));
    results.push(("bound_derivation", bound_derivation()));
    results.push(("qp_oracle", qp_oracle()));
    results.push(("snap_regularization", snap_regularization()));
    results.push(("iqp_behavior", iqp_behavior()));
    results.push(("runtime_regime", runtime_regime()));
    results.push(("tracking_verification", tracking_verification(pool)));
    results.push(("controller_identities", controller_identities()));
    results.push(("skewness_symmetry", skewness_symmetry()));

    let mut unexpected = Vec::new();
    for (name, outcome) in &results {
        let known = KNOWN_FAILURES.contains(name);
        let tag = match (outcome.pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!("{tag} {name}: {}", outcome.detail);
        if !outcome.pass && !known {
            unexpected.push(*name);
        }
    }
    let passed = results.iter().filter(|(_, o)| o.pass).count();
    println!("acceptance: {passed}/{} criteria pass", results.len());
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
