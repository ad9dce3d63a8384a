use airways::costs::{StackedVariables, FORCE, GIMBAL_PITCH_RATE, GIMBAL_YAW_RATE, TARGET};
use airways::dynamics::{derive_input_bounds, FlatInput, FlatState, PlatformParams};
use airways::planner::{feasibility_report, PlanLimits, Trajectory};
use airways::project::{parse_project, parse_trajectory_csv, project_to_string, write_trajectory_csv, LoadOptions, Project};
use nalgebra::Vector3;
use proptest::prelude::*;

const PLATFORM: &str = r#""platform": {
    "mass": 1.0, "inertia": [0.01, 0.01, 0.02],
    "rotor_thrust_coeff": 1.0, "rotor_moment_coeff": 0.1, "arm_length": 0.2,
    "rotor_force_max": 5.0, "rotor_moment_max": 0.5
}"#;

fn project_text(stages: &[usize], positions: &[[f64; 3]], beta: f64, lambda_d: f64) -> String {
    let keyframes: Vec<String> = stages
        .iter()
        .zip(positions)
        .map(|(s, p)| format!(r#"{{"stage": {s}, "position": [{}, {}, {}]}}"#, p[0], p[1], p[2]))
        .collect();
    format!(
        r#"{{{PLATFORM}, "keyframes": [{}], "beta": {beta}, "weights": {{"lambda_d": {lambda_d}}}}}"#,
        keyframes.join(", ")
    )
}

fn keyframes() -> impl Strategy<Value = (Vec<usize>, Vec<[f64; 3]>)> {
    (2usize..6).prop_flat_map(|k| {
        (
            proptest::collection::btree_set(0usize..200, k),
            proptest::collection::vec(proptest::array::uniform3(-10.0f64..10.0), k),
        )
            .prop_map(|(stages, positions)| (stages.into_iter().collect(), positions))
    })
}

fn limits() -> PlanLimits {
    let text = format!(r#"{{{PLATFORM}, "keyframes": [{{"stage": 0, "position": [0, 0, 0]}}, {{"stage": 10, "position": [0, 0, 0]}}]}}"#);
    PlanLimits::from_project(&parse_project(text.as_bytes(), LoadOptions::default()).unwrap()).unwrap()
}

/// Rolls the discrete model forward from `start` under box-feasible inputs
/// given as fractions of the half widths.
fn rollout(start: [f64; 3], fractions: &[[f64; 4]], limits: &PlanLimits) -> Trajectory {
    let n = fractions.len();
    let dt = limits.dynamics.dt;
    let mut x = StackedVariables::zeros(n, dt);
    x.set_flat_state(0, &FlatState::at_rest(Vector3::from(start), 0.3));
    let bounds = &limits.inputs;
    for (i, f) in fractions.iter().enumerate() {
        let force = bounds.force_box.center + bounds.force_box.half_width.component_mul(&Vector3::new(f[0], f[1], f[2]));
        let input = FlatInput { force, yaw_moment: f[3] * bounds.yaw_moment_max };
        x.set_flat_input(i, &input);
        if i + 1 < n {
            let next = limits.dynamics.propagate(&x.flat_state(i).to_vector(), &input.to_vector());
            x.set_flat_state(i + 1, &FlatState::from_slice(next.as_slice()));
        }
    }
    Trajectory::new(x)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn saved_projects_reload_identically(
        (stages, positions) in keyframes(),
        beta in 0.0f64..0.8,
        lambda_d in 0.0f64..1.0,
    ) {
        let text = project_text(&stages, &positions, beta, lambda_d);
        let project = parse_project(text.as_bytes(), LoadOptions::default()).unwrap();
        let saved = project_to_string(&project);
        let reloaded: Project = parse_project(saved.as_bytes(), LoadOptions::default()).unwrap();
        prop_assert_eq!(&reloaded, &project);
        prop_assert_eq!(project_to_string(&reloaded), saved);
        prop_assert_eq!(project.num_stages(), stages.iter().max().unwrap() + 1);
    }

    #[test]
    fn trajectory_csv_round_trips_to_nine_decimals(
        values in proptest::collection::vec(-100.0f64..100.0, 3 * 19),
        dt in prop_oneof![Just(0.05), Just(0.1), Just(0.2)],
    ) {
        let mut x = StackedVariables::from_vec(3, dt, values);
        // gimbal rates are rebuilt from the angles on import
        for i in 0..2 {
            let (gy, gp) = x.gimbal(i);
            let (ny, np) = x.gimbal(i + 1);
            let s = x.stage_mut(i);
            s[GIMBAL_YAW_RATE] = (ny - gy) / dt;
            s[GIMBAL_PITCH_RATE] = (np - gp) / dt;
        }
        x.stage_mut(2)[GIMBAL_YAW_RATE] = 0.0;
        x.stage_mut(2)[GIMBAL_PITCH_RATE] = 0.0;
        let trajectory = Trajectory::new(x);
        let mut buf = Vec::new();
        write_trajectory_csv(&trajectory, &mut buf).unwrap();
        let back = parse_trajectory_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back.num_stages(), 3);
        prop_assert!((back.dt() - dt).abs() < 1e-9);
        for i in 0..3 {
            let (a, b) = (trajectory.variables.stage(i), back.variables.stage(i));
            for k in (0..GIMBAL_YAW_RATE).chain(TARGET..TARGET + 3) {
                prop_assert!((a[k] - b[k]).abs() <= 5e-10, "stage {} offset {}: {} vs {}", i, k, a[k], b[k]);
            }
            for k in [GIMBAL_YAW_RATE, GIMBAL_PITCH_RATE] {
                prop_assert!((a[k] - b[k]).abs() <= 1e-8 / dt, "stage {} rate {}: {} vs {}", i, k, a[k], b[k]);
            }
        }
    }

    #[test]
    fn bounds_follow_the_reserve_identity(
        beta in 0.0f64..=1.0,
        weight_share in 0.1f64..0.95,
        force_max in 3.0f64..20.0,
        moment_max in 0.01f64..1.0,
    ) {
        // the weight must stay below the thrust limit or the bounds are rejected
        let mass = weight_share * (1.0 - beta / 2.0) * 4.0 * force_max / 9.81;
        let params = PlatformParams {
            mass,
            inertia: [0.01, 0.01, 0.02],
            rotor_thrust_coeff: 1.0,
            rotor_moment_coeff: 0.1,
            arm_length: 0.2,
            rotor_force_max: force_max,
            rotor_moment_max: moment_max,
            gravity: 9.81,
        };
        let b = derive_input_bounds(&params, beta).unwrap();
        let limit = (1.0 - beta / 2.0) * 4.0 * force_max;
        prop_assert!((b.force_norm_max - limit).abs() <= 1e-12 * limit);
        prop_assert!((b.yaw_moment_max - beta * 2.0 * moment_max).abs() <= 1e-15);
        // every corner of the box stays inside the thrust ball
        let corner = b.force_box.center + b.force_box.half_width;
        prop_assert!(corner.norm() <= b.force_norm_max * (1.0 + 1e-12));
        prop_assert!(b.force_box.half_width.min() > 0.0);
    }

    #[test]
    fn rollouts_are_feasible_and_faults_are_located(
        start in proptest::array::uniform3(-5.0f64..5.0),
        fractions in proptest::collection::vec(proptest::array::uniform4(-1.0f64..1.0), 5..60),
        fault in any::<proptest::sample::Index>(),
    ) {
        let limits = limits();
        let trajectory = rollout(start, &fractions, &limits);
        let report = feasibility_report(&trajectory, &limits, &[]);
        prop_assert!(report.feasible, "max violation {:e}", report.max_violation());

        let stage = fault.index(fractions.len());
        let mut broken = trajectory.clone();
        broken.variables.stage_mut(stage)[FORCE] += 2.0 * limits.inputs.force_box.half_width.x + 1.0;
        let report = feasibility_report(&broken, &limits, &[]);
        prop_assert!(!report.feasible);
        prop_assert_eq!(report.worst_stage, stage);
    }
}
