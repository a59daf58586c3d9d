use ficon_core::forward::{solve_linear_forward, DiscreteCoefficients};
use ficon_core::hum::{solve_penalized_control, ControlData, ControlProblem};
use ficon_core::model::{desk_problem, Curve, Field, Nonlinearity, DESK_GRID};
use ficon_core::trajectory::{
    linearization_remainder, linearized_coefficients, make_target_trajectory, solve_trajectory_control, PicardStatus,
    TargetTrajectory, TrajectoryOptions,
};
use ficon_core::{Grid, ProblemSpec, SpaceTimeField, WeightParameters, WeightSystem};

fn burgers() -> ProblemSpec {
    desk_problem().builder_from().nonlinearity(Some(Nonlinearity::burgers())).build().unwrap()
}

fn quiet(spec: &ProblemSpec) -> ProblemSpec {
    spec.builder_from().initial_state(Curve::zero()).interface_source(Curve::zero()).build().unwrap()
}

fn desk_grid(spec: &ProblemSpec) -> (Grid, WeightSystem) {
    let g = spec.geometry;
    (
        Grid::new(g, DESK_GRID.0, DESK_GRID.1, DESK_GRID.2).unwrap(),
        WeightSystem::new(g, WeightParameters::default_for(&g)).unwrap(),
    )
}

fn bump() -> Field {
    Field::Bump { amplitude: 2.0, t_center: 0.5, t_width: 0.4, x_center: 0.75, x_width: 0.2 }
}

fn perturbed(grid: &Grid, traj: &TargetTrajectory, scale: f64) -> Vec<f64> {
    let p = Curve::SineModes { lo: -1.0, hi: 1.0, coefficients: vec![scale, -0.5 * scale, 0.3 * scale] };
    grid.x_nodes.iter().enumerate().map(|(i, x)| traj.w_bar.get(0, i) + p.eval(*x)).collect()
}

#[test]
fn zero_data_gives_zero_trajectory() {
    let spec = quiet(&burgers());
    let (grid, ws) = desk_grid(&spec);
    let traj = make_target_trajectory(&spec, &grid, &Field::zero(), &Curve::zero()).unwrap();
    assert!(traj.w_bar.values.iter().all(|v| *v == 0.0));
    let out =
        solve_trajectory_control(&spec, &grid, &ws, &traj, &vec![0.0; grid.n_nodes()], &TrajectoryOptions::default())
            .unwrap();
    assert_eq!(out.history.len(), 1);
    assert!(out.u.values.iter().all(|v| *v == 0.0));
    assert!(out.w.values.iter().all(|v| *v == 0.0));
}

#[test]
fn burgers_target_is_time_varying_and_solves_the_scheme() {
    let spec = burgers();
    let (grid, _) = desk_grid(&spec);
    let traj = make_target_trajectory(&spec, &grid, &bump(), &spec.w0).unwrap();
    assert!(traj.residual <= 1e-9, "{}", traj.residual);
    let n = grid.n_steps;
    let change = traj.w_bar.row(n).iter().zip(traj.w_bar.row(n / 2)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(change > 1e-2, "{change}");
    assert_eq!(traj.terminal, traj.w_bar.row(n));
}

#[test]
fn linear_target_is_the_linear_solve() {
    let spec = desk_problem();
    let (grid, _) = desk_grid(&spec);
    let traj = make_target_trajectory(&spec, &grid, &Field::zero(), &spec.w0).unwrap();
    let w = solve_linear_forward(&spec, &grid, Some(0.0)).unwrap();
    assert_eq!(traj.w_bar, w);
}

#[test]
fn control_profile_must_stay_in_the_window() {
    let spec = burgers();
    let (grid, _) = desk_grid(&spec);
    assert!(make_target_trajectory(&spec, &grid, &Field::Constant(1.0), &spec.w0).is_err());
}

#[test]
fn linearized_fields_for_burgers() {
    let spec = burgers();
    let (grid, _) = desk_grid(&spec);
    let n = Nonlinearity::burgers();
    let zero = make_target_trajectory(&quiet(&spec), &grid, &Field::zero(), &Curve::zero()).unwrap();
    let (dc, db) = linearized_coefficients(&zero, &n, &grid).unwrap();
    assert!(dc.is_zero() && db.is_zero());

    // w̄ = φ(x₁) = sin(πx₁)(1 − x₁²): added c is the central difference of φ, added b is φ.
    let phi = |x: f64| (std::f64::consts::PI * x).sin() * (1.0 - x * x);
    let w_bar = SpaceTimeField::from_fn(&grid, |_, x| phi(x));
    let traj = TargetTrajectory {
        terminal: w_bar.row(grid.n_steps).to_vec(),
        w_bar,
        u_bar: zero.u_bar.clone(),
        residual: 0.0,
    };
    let (dc, db) = linearized_coefficients(&traj, &n, &grid).unwrap();
    let ii = grid.interface_index;
    for i in 1..grid.n_nodes() - 1 {
        if i == ii {
            continue;
        }
        let h = grid.spacing(grid.side_of(i));
        let d1 = (phi(grid.x_nodes[i + 1]) - phi(grid.x_nodes[i - 1])) / (2.0 * h);
        assert!((dc.get(3, i) - d1).abs() <= 1e-12);
        assert!((db.get(3, i) - phi(grid.x_nodes[i])).abs() <= 1e-15);
    }
}

#[test]
fn remainder_is_second_order() {
    let spec = burgers();
    let (grid, _) = desk_grid(&spec);
    let n = Nonlinearity::burgers();
    let traj = make_target_trajectory(&spec, &grid, &bump(), &spec.w0).unwrap();
    let (dc, db) = linearized_coefficients(&traj, &n, &grid).unwrap();
    let delta = SpaceTimeField::from_fn(&grid, |t, x| (3.0 * x + t).cos() * (1.0 - x * x));
    let size = |tau: f64| {
        let y = delta.scaled(tau);
        let r = linearization_remainder(&grid, &n, &traj.w_bar, &y, &dc, &db).unwrap();
        r.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    };
    let order = (size(1e-2) / size(5e-3)).log2();
    assert!((order - 2.0).abs() <= 0.05, "{order}");
}

#[test]
fn linear_problem_takes_one_iterate_and_matches_the_control_solver() {
    let spec = desk_problem();
    let (grid, ws) = desk_grid(&spec);
    let traj = make_target_trajectory(&spec, &grid, &Field::zero(), &spec.w0).unwrap();
    let w0 = perturbed(&grid, &traj, 1e-2);
    let opts = TrajectoryOptions::default();
    let out = solve_trajectory_control(&spec, &grid, &ws, &traj, &w0, &opts).unwrap();
    assert_eq!(out.history.len(), 1);
    assert_ne!(out.status, PicardStatus::MaxIterations);

    let mut data = ControlData::zeros(&grid);
    data.z0 = w0.iter().zip(traj.w_bar.row(0)).map(|(a, b)| a - b).collect();
    let n = data.z0.len();
    data.z0[0] = 0.0;
    data.z0[n - 1] = 0.0;
    let cp =
        ControlProblem::with_parts(grid.clone(), DiscreteCoefficients::sample(&spec, &grid), ws, data, opts.epsilon)
            .unwrap();
    let direct = solve_penalized_control(&cp).unwrap();
    let bits = |f: &SpaceTimeField| f.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&direct.u), bits(&out.inner.u));
    assert_eq!(bits(&direct.z), bits(&out.inner.z));
}

#[test]
fn zero_perturbation_returns_the_target_control() {
    let spec = burgers();
    let (grid, ws) = desk_grid(&spec);
    let traj = make_target_trajectory(&spec, &grid, &bump(), &spec.w0).unwrap();
    let w0 = traj.w_bar.row(0).to_vec();
    let out = solve_trajectory_control(&spec, &grid, &ws, &traj, &w0, &TrajectoryOptions::default()).unwrap();
    assert_eq!(out.history.len(), 1);
    assert_eq!(out.u, traj.u_bar);
    assert_eq!(out.status, PicardStatus::Converged);
}

#[test]
fn burgers_perturbation_is_steered_to_the_target() {
    let spec = burgers();
    let (grid, ws) = desk_grid(&spec);
    let traj = make_target_trajectory(&spec, &grid, &bump(), &spec.w0).unwrap();
    let opts = TrajectoryOptions::default();
    let mut counts = Vec::new();
    for scale in [1e-2, 5e-3, 2.5e-3] {
        let out = solve_trajectory_control(&spec, &grid, &ws, &traj, &perturbed(&grid, &traj, scale), &opts).unwrap();
        assert_eq!(out.status, PicardStatus::Converged, "{:?}", out.history);
        assert!(out.terminal_error() <= 1e-4);
        assert!(out.history.len() <= 8);
        assert!(out.residual <= 1e-9, "{}", out.residual);
        counts.push(out.history.len());
    }
    assert!(counts.windows(2).all(|w| w[1] <= w[0]), "{counts:?}");
}

#[test]
fn loop_stops_at_a_fixed_point_when_the_tolerance_is_out_of_reach() {
    let spec = burgers();
    let (grid, ws) = desk_grid(&spec);
    let traj = make_target_trajectory(&spec, &grid, &bump(), &spec.w0).unwrap();
    let opts = TrajectoryOptions { epsilon: 1e-2, max_iters: 20, ..TrajectoryOptions::default() };
    let out = solve_trajectory_control(&spec, &grid, &ws, &traj, &perturbed(&grid, &traj, 1e-2), &opts).unwrap();
    assert_eq!(out.status, PicardStatus::FixedPoint);
    assert!(out.history.len() < 20);
    let last = out.history.last().unwrap().remainder_norm;
    let gaps: Vec<f64> = out.history.iter().skip(1).map(|r| (r.remainder_norm - last).abs()).collect();
    assert!(gaps.windows(2).all(|w| w[1] <= w[0] || w[1] <= 1e-12 * last), "{:?}", out.history);
}
