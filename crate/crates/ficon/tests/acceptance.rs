//! One PASS/FAIL line per acceptance criterion.
//!
//! Exits nonzero when a criterion fails that is not listed in
//! `KNOWN_FAILING`, or when a listed one starts passing.
use std::f64::consts::PI;
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use ficon_core::forward::{
    energy_estimate_check, solve_adjoint_backward, solve_linear_forward, solve_semilinear_forward, AdjointData,
    DiscreteCoefficients, EnergyData, SemilinearMode,
};
use ficon_core::hum::{
    duality_identity, epsilon_sweep, recover_adjoint_and_check, solve_penalized_control, ControlData, ControlProblem,
    PenaltyWeighting,
};
use ficon_core::math::observed_order;
use ficon_core::model::{
    desk_problem, CoefficientSet, Curve, Field, Geometry, Nonlinearity, ProblemSpec, Side, DESK_GRID,
};
use ficon_core::observability::{
    draw_samples, drift_at, ensemble_constant, observability_ratio, refined, threshold_search,
};
use ficon_core::trajectory::{make_target_trajectory, solve_trajectory_control, PicardStatus, TrajectoryOptions};
use ficon_core::weights::verify_ordering;
use ficon_core::{Error, Grid, SpaceTimeField, WeightParameters, WeightSystem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria that fail on this implementation; see the project notes.
const KNOWN_FAILING: &[usize] = &[6];

type Check = Result<(bool, String), String>;
type Criterion = (usize, &'static str, f64, fn() -> Check);

fn desk_setup(spec: &ProblemSpec) -> (Grid, WeightSystem) {
    let g = spec.geometry;
    (
        Grid::new(g, DESK_GRID.0, DESK_GRID.1, DESK_GRID.2).unwrap(),
        WeightSystem::new(g, WeightParameters::default_for(&g)).unwrap(),
    )
}

fn rel_diff(a: &SpaceTimeField, b: &SpaceTimeField) -> f64 {
    let d = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    d / a.max_abs().max(b.max_abs()).max(f64::MIN_POSITIVE)
}

fn e(err: Error) -> String {
    err.to_string()
}

// ---------------------------------------------------------------- 1

type Profile = [[Arc<dyn Fn(f64) -> f64 + Send + Sync>; 3]; 2];

/// `w = e^{x₀}s(x₁)` with `s = profile[0]` on `x₁ ≥ 0` and `profile[1]` below.
fn manufactured(g: Geometry, cs: CoefficientSet, mass: f64, p: &Profile) -> ProblemSpec {
    let side = |s: Side| {
        let (cs, q) = (cs.clone(), p[if s == Side::Plus { 0 } else { 1 }].clone());
        Field::custom(move |t, x| {
            t.exp()
                * (cs.rho(s, t, x) * q[0](x) - cs.a(s, t, x) * q[2](x)
                    + cs.b(s, t, x) * q[1](x)
                    + cs.c(s, t, x) * q[0](x))
        })
    };
    let (c2, q) = (cs.clone(), p.clone());
    let r = Curve::custom(move |t| {
        t.exp()
            * (c2.a(Side::Plus, t, 0.0) * q[0][1](0.0) - c2.a(Side::Minus, t, 0.0) * q[1][1](0.0) - mass * q[0][0](0.0))
    });
    let q = p.clone();
    ProblemSpec::builder(g, cs.clone(), mass)
        .sources(side(Side::Plus), side(Side::Minus))
        .interface_source(r)
        .initial_state(Curve::custom(move |x| if x >= 0.0 { q[0][0](x) } else { q[1][0](x) }))
        .build()
        .unwrap()
}

fn variable_coefficients() -> CoefficientSet {
    let mut cs = CoefficientSet::constant(1.0, 1.0, 0.0, 0.0);
    cs.rho_plus = Field::Sinusoidal { base: 1.2, amplitude: 0.3, omega: 2.0, phase: 0.0, x_const: 1.0, x_coeff: 0.0 };
    cs.a_plus = Field::Affine { c0: 1.0, c_t: 0.2, c_x: 0.3 };
    cs.b_plus = Field::Constant(0.5);
    cs.c_plus = Field::Constant(-0.3);
    cs.rho_minus = Field::Constant(0.8);
    cs.a_minus = Field::Affine { c0: 0.7, c_t: 0.0, c_x: 0.1 };
    cs.b_minus = Field::Constant(-0.4);
    cs.c_minus = Field::Constant(0.2);
    cs.alpha = 0.5;
    cs
}

fn quadratic() -> Profile {
    [
        [Arc::new(|x| (1.0 - x) * (1.0 + 0.5 * x)), Arc::new(|x| -0.5 - x), Arc::new(|_| -1.0)],
        [Arc::new(|x| (1.0 + x) * (1.0 - 2.0 * x)), Arc::new(|x| -1.0 - 4.0 * x), Arc::new(|_| -4.0)],
    ]
}

fn sine_kink() -> Profile {
    let h = PI / 2.0;
    [
        [
            Arc::new(move |x| (h * (1.0 - x)).sin() * (1.0 + 0.5 * x)),
            Arc::new(move |x| -h * (h * (1.0 - x)).cos() * (1.0 + 0.5 * x) + 0.5 * (h * (1.0 - x)).sin()),
            Arc::new(move |x| -h * h * (h * (1.0 - x)).sin() * (1.0 + 0.5 * x) - h * (h * (1.0 - x)).cos()),
        ],
        [
            Arc::new(|x| (PI * x).cos() * (1.0 + x) + x * (1.0 + x)),
            Arc::new(|x| -PI * (PI * x).sin() * (1.0 + x) + (PI * x).cos() + 1.0 + 2.0 * x),
            Arc::new(|x| -PI * PI * (PI * x).cos() * (1.0 + x) - 2.0 * PI * (PI * x).sin() + 2.0),
        ],
    ]
}

fn terminal_error(spec: &ProblemSpec, grid: &Grid, p: &Profile) -> f64 {
    let w = solve_linear_forward(spec, grid, None).unwrap();
    let t = spec.geometry.t_final;
    grid.x_nodes
        .iter()
        .enumerate()
        .map(|(i, &x)| (w.get(grid.n_steps, i) - t.exp() * if x >= 0.0 { p[0][0](x) } else { p[1][0](x) }).abs())
        .fold(0.0, f64::max)
}

fn criterion_1() -> Check {
    let g = Geometry::new(-1.0, 1.0, 0.5, 1.0).map_err(e)?;
    let spec = manufactured(g, variable_coefficients(), 1.0, &quadratic());
    if spec.r.is_zero() {
        return Err("interface source vanished".into());
    }
    let (mut h, mut err) = (Vec::new(), Vec::new());
    for n in [10, 20, 40, 80] {
        let grid = Grid::new(g, 8, 8, n).map_err(e)?;
        h.push(grid.dt);
        err.push(terminal_error(&spec, &grid, &quadratic()));
    }
    let time_order = observed_order(&h, &err);
    let spec = manufactured(g, variable_coefficients(), 1.0, &sine_kink());
    let (mut h, mut err) = (Vec::new(), Vec::new());
    for n in [8, 16, 32, 64] {
        let grid = Grid::new(g, n, n, n * n / 4).map_err(e)?;
        h.push(grid.dx_plus);
        err.push(terminal_error(&spec, &grid, &sine_kink()));
    }
    let space_order = observed_order(&h, &err);
    Ok((time_order >= 0.9 && space_order >= 1.9, format!("dt order {time_order:.3}, dx order {space_order:.3}")))
}

// ---------------------------------------------------------------- 2

fn random_spec(rng: &mut ChaCha8Rng) -> ProblemSpec {
    let g = Geometry::new(-1.0, 1.0, 0.5, 1.0).unwrap();
    let modes: Vec<f64> = (1..=5).map(|m| rng.gen_range(-1.0..1.0) / m as f64).collect();
    let f_plus = Field::Bump {
        amplitude: rng.gen_range(-1.0..1.0),
        t_center: rng.gen_range(0.2..0.8),
        t_width: rng.gen_range(0.2..0.5),
        x_center: rng.gen_range(0.2..0.8),
        x_width: rng.gen_range(0.1..0.3),
    };
    let f_minus = Field::Sinusoidal {
        base: 0.0,
        amplitude: rng.gen_range(-1.0..1.0),
        omega: rng.gen_range(1.0..4.0),
        phase: rng.gen_range(0.0..PI),
        x_const: 1.0,
        x_coeff: rng.gen_range(-1.0..1.0),
    };
    let r = Curve::Pulse {
        amplitude: rng.gen_range(-1.0..1.0),
        center: rng.gen_range(0.2..0.8),
        width: rng.gen_range(0.1..0.3),
    };
    ProblemSpec::builder(g, variable_coefficients(), 1.0)
        .sources(f_plus, f_minus)
        .interface_source(r)
        .initial_state(Curve::SineModes { lo: -1.0, hi: 1.0, coefficients: modes })
        .build()
        .unwrap()
}

fn criterion_2() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let specs: Vec<ProblemSpec> = (0..20).map(|_| random_spec(&mut rng)).collect();
    let g = specs[0].geometry;
    let coarse = Grid::new(g, 20, 20, 40).map_err(e)?;
    let fine = refined(&coarse).map_err(e)?;
    let max_ratio = |grid: &Grid| -> Result<f64, String> {
        let mut m: f64 = 0.0;
        for s in &specs {
            let w = solve_linear_forward(s, grid, None).map_err(e)?;
            let r = energy_estimate_check(&w, &EnergyData::from_spec(s, grid), grid).map_err(e)?.ratio;
            if !r.is_finite() {
                return Err(format!("non-finite ratio {r}"));
            }
            m = m.max(r);
        }
        Ok(m)
    };
    let (c, f) = (max_ratio(&coarse)?, max_ratio(&fine)?);
    let drift = (f / c).max(c / f);
    Ok((drift <= 2.0, format!("max ratio {c:.4} -> {f:.4}, drift {drift:.3}")))
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Check {
    let spec = desk_problem();
    let (grid, ws) = desk_setup(&spec);
    let ok = verify_ordering(&ws, &grid);
    let g = spec.geometry;
    let bad_ws =
        WeightSystem::new(g, WeightParameters { beta_offset: 0.5, ..WeightParameters::default_for(&g) }).map_err(e)?;
    let bad = verify_ordering(&bad_ws, &grid);
    let pass =
        ok.passed() && ok.plus_margin > 0.0 && ok.minus_margin > 0.0 && !bad.passed() && !bad.violations.is_empty();
    Ok((
        pass,
        format!(
            "margins +{:.3e} / -{:.3e}; beta 0.5 gives {} violations",
            ok.plus_margin,
            ok.minus_margin,
            bad.violations.len()
        ),
    ))
}

// ---------------------------------------------------------------- 4, 5

fn generic() -> ProblemSpec {
    desk_problem()
        .builder_from()
        .sources(
            Field::Bump { amplitude: 0.8, t_center: 0.4, t_width: 0.3, x_center: 0.4, x_width: 0.3 },
            Field::Sinusoidal { base: 0.1, amplitude: 0.5, omega: 3.0, phase: 0.2, x_const: 1.0, x_coeff: 0.5 },
        )
        .build()
        .unwrap()
}

fn generic_problems() -> Result<Vec<ControlProblem>, String> {
    let spec = generic();
    let (grid, ws) = desk_setup(&spec);
    let mut out = Vec::new();
    for eps in [1e-1, 1e-3, 1e-5] {
        for penalty in [PenaltyWeighting::Plain, PenaltyWeighting::Weighted] {
            let mut cp = ControlProblem::new(&spec, &grid, &ws, eps).map_err(e)?;
            cp.penalty = penalty;
            out.push(cp);
        }
    }
    Ok(out)
}

fn criterion_4() -> Check {
    let mut worst: f64 = 0.0;
    let mut dof = 0;
    for cp in generic_problems()? {
        let sol = solve_penalized_control(&cp).map_err(e)?;
        worst = worst.max(recover_adjoint_and_check(&sol, &cp).map_err(e)?.max());
        dof = dof.max(sol.z.values.len() + sol.u.values.len() + sol.s.values.len());
    }
    Ok((worst <= 1e-6 && dof <= 100_000, format!("max optimality residual {worst:.3e} over 6 problems, {dof} dof")))
}

fn criterion_5() -> Check {
    let mut worst: f64 = 0.0;
    for cp in generic_problems()? {
        let sol = solve_penalized_control(&cp).map_err(e)?;
        worst = worst.max(duality_identity(&sol, &cp).map_err(e)?.gap);
    }
    Ok((worst <= 1e-6, format!("max relative duality gap {worst:.3e} over 6 problems")))
}

// ---------------------------------------------------------------- 6

fn criterion_6() -> Check {
    let spec = desk_problem();
    let (grid, ws) = desk_setup(&spec);
    let eps = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5];
    let mut detail = Vec::new();
    let mut pass = false;
    for penalty in [PenaltyWeighting::Plain, PenaltyWeighting::Weighted] {
        let mut cp = ControlProblem::new(&spec, &grid, &ws, eps[0]).map_err(e)?;
        cp.penalty = penalty;
        let rows = epsilon_sweep(&cp, &eps).map_err(e)?;
        let norms: Vec<f64> = rows.iter().map(|r| r.outcome.as_ref().map_or(f64::NAN, |v| v.terminal_norm)).collect();
        let ok = norms.windows(2).all(|w| w[1] < w[0] && 2.0 * w[1] <= w[0]);
        pass |= ok;
        let list: Vec<String> = norms.iter().map(|v| format!("{v:.3e}")).collect();
        detail.push(format!("{penalty:?} [{}]", list.join(", ")));
    }
    Ok((pass, format!("terminal norms {}", detail.join("; "))))
}

// ---------------------------------------------------------------- 7

fn perturbed(grid: &Grid, w_bar: &SpaceTimeField, s: f64) -> Vec<f64> {
    let p = Curve::SineModes { lo: -1.0, hi: 1.0, coefficients: vec![s, -0.5 * s, 0.3 * s] };
    grid.x_nodes.iter().enumerate().map(|(i, x)| w_bar.get(0, i) + p.eval(*x)).collect()
}

fn criterion_7() -> Check {
    let spec = desk_problem().builder_from().nonlinearity(Some(Nonlinearity::burgers())).build().map_err(e)?;
    let (grid, ws) = desk_setup(&spec);
    let bump = Field::Bump { amplitude: 2.0, t_center: 0.5, t_width: 0.4, x_center: 0.75, x_width: 0.2 };
    let traj = make_target_trajectory(&spec, &grid, &bump, &spec.w0).map_err(e)?;
    let moving = traj.w_bar.row(grid.n_steps).iter().zip(traj.w_bar.row(grid.n_steps / 2)).any(|(a, b)| a != b);
    let opts = TrajectoryOptions::default();
    let out =
        solve_trajectory_control(&spec, &grid, &ws, &traj, &perturbed(&grid, &traj.w_bar, 1e-2), &opts).map_err(e)?;
    let nonlinear_ok =
        moving && out.status == PicardStatus::Converged && out.terminal_error() <= 1e-4 && out.history.len() <= 8;

    let linear = desk_problem();
    let lt = make_target_trajectory(&linear, &grid, &Field::zero(), &linear.w0).map_err(e)?;
    let w0 = perturbed(&grid, &lt.w_bar, 1e-2);
    let lo = solve_trajectory_control(&linear, &grid, &ws, &lt, &w0, &opts).map_err(e)?;
    let mut data = ControlData::zeros(&grid);
    data.z0 = w0.iter().zip(lt.w_bar.row(0)).map(|(a, b)| a - b).collect();
    let n = data.z0.len();
    data.z0[0] = 0.0;
    data.z0[n - 1] = 0.0;
    let cp =
        ControlProblem::with_parts(grid.clone(), DiscreteCoefficients::sample(&linear, &grid), ws, data, opts.epsilon)
            .map_err(e)?;
    let direct = solve_penalized_control(&cp).map_err(e)?;
    let bitwise = direct.u.values.iter().zip(&lo.inner.u.values).all(|(a, b)| a.to_bits() == b.to_bits());
    Ok((
        nonlinear_ok && lo.history.len() == 1 && bitwise,
        format!(
            "Burgers: {:?} after {} iterates, terminal error {:.3e}; linear: {} iterate, bitwise match {bitwise}",
            out.status,
            out.history.len(),
            out.terminal_error(),
            lo.history.len()
        ),
    ))
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Check {
    let spec = desk_problem();
    let (grid, ws) = desk_setup(&spec);
    let seed = 7;
    let a = ensemble_constant(&spec, &grid, &ws, 20, seed).map_err(e)?;
    let b = ensemble_constant(&spec, &grid, &ws, 20, seed).map_err(e)?;
    let cfg_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/examples/desk.json");
    let cfg = ficon::RunConfig::from_json(&std::fs::read_to_string(cfg_path).map_err(|x| x.to_string())?)
        .map_err(|x| x.to_string())?;
    let dir = tempfile::tempdir().map_err(|x| x.to_string())?;
    let mut bytes = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        ficon::run(ficon::Command::Observability, &cfg, &out, Some(seed)).map_err(|x| x.to_string())?;
        bytes.push(std::fs::read(out.join("report.json")).map_err(|x| x.to_string())?);
    }
    let deterministic = a == b && bytes[0] == bytes[1];

    let mut scale_dev: f64 = 0.0;
    for s in draw_samples(&grid, 20, seed) {
        let one = observability_ratio(&spec, &grid, &ws, &s.terminal, &s.data).map_err(e)?;
        let t2: Vec<f64> = s.terminal.iter().map(|v| 2.0 * v).collect();
        let d2 = AdjointData { f: s.data.f.scaled(2.0), r: s.data.r.iter().map(|v| 2.0 * v).collect() };
        let two = observability_ratio(&spec, &grid, &ws, &t2, &d2).map_err(e)?;
        scale_dev = scale_dev.max((two.ratio - one.ratio).abs() / one.ratio);
    }

    let g = spec.geometry;
    let start =
        WeightSystem::new(g, WeightParameters { s_hat: 1e-6, ..WeightParameters::default_for(&g) }).map_err(e)?;
    let search = threshold_search(&spec, &grid, &start, 20, seed, 12, 2.0).map_err(e)?;
    let Some(threshold) = search.threshold else {
        return Ok((false, "no s_hat on the ladder keeps the drift within 2x".into()));
    };
    let at = WeightSystem::new(g, WeightParameters { s_hat: 2.0 * threshold, ..WeightParameters::default_for(&g) })
        .map_err(e)?;
    let row = drift_at(&spec, &grid, &refined(&grid).map_err(e)?, &at, 20, seed).map_err(e)?;
    let ladder: Vec<String> = search.rows.iter().map(|r| format!("{:.1e}:{:.2}", r.s_hat, r.drift)).collect();
    Ok((
        deterministic && scale_dev <= 1e-12 && row.drift <= 2.0,
        format!(
            "deterministic {deterministic}, scale deviation {scale_dev:.1e}, threshold {threshold:.1e}, \
             drift at 2x threshold {:.3} (max {:.3e} -> {:.3e}); ladder [{}]",
            row.drift,
            row.coarse_max,
            row.fine_max,
            ladder.join(" ")
        ),
    ))
}

// ---------------------------------------------------------------- 9

fn combine_fields(a: &Field, b: &Field, al: f64, be: f64) -> Field {
    let (a, b) = (a.clone(), b.clone());
    Field::custom(move |t, x| al * a.eval(t, x) + be * b.eval(t, x))
}

fn combine_curves(a: &Curve, b: &Curve, al: f64, be: f64) -> Curve {
    let (a, b) = (a.clone(), b.clone());
    Curve::custom(move |s| al * a.eval(s) + be * b.eval(s))
}

fn criterion_9() -> Check {
    let (al, be) = (0.7, -1.3);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (s1, s2) = (random_spec(&mut rng), random_spec(&mut rng));
    let s12 = s1
        .builder_from()
        .sources(combine_fields(&s1.f_plus, &s2.f_plus, al, be), combine_fields(&s1.f_minus, &s2.f_minus, al, be))
        .interface_source(combine_curves(&s1.r, &s2.r, al, be))
        .initial_state(combine_curves(&s1.w0, &s2.w0, al, be))
        .build()
        .map_err(e)?;
    let grid = Grid::new(s1.geometry, 20, 20, 40).map_err(e)?;
    let ws = WeightSystem::new(s1.geometry, WeightParameters::default_for(&s1.geometry)).map_err(e)?;
    let lin = |a: &SpaceTimeField, b: &SpaceTimeField| {
        let mut c = a.scaled(al);
        c.axpy(be, b).unwrap();
        c
    };
    let mut worst: f64 = 0.0;

    let (w1, w2, w12) = (
        solve_linear_forward(&s1, &grid, None).map_err(e)?,
        solve_linear_forward(&s2, &grid, None).map_err(e)?,
        solve_linear_forward(&s12, &grid, None).map_err(e)?,
    );
    worst = worst.max(rel_diff(&w12, &lin(&w1, &w2)));

    let d1 = EnergyData::from_spec(&s1, &grid);
    let d2 = EnergyData::from_spec(&s2, &grid);
    let mut t1 = d1.w0.clone();
    let mut t2 = d2.w0.clone();
    let n = t1.len();
    for t in [&mut t1, &mut t2] {
        t[0] = 0.0;
        t[n - 1] = 0.0;
    }
    let a1 = AdjointData { f: d1.f.clone(), r: d1.r.clone() };
    let a2 = AdjointData { f: d2.f.clone(), r: d2.r.clone() };
    let a12 = AdjointData { f: lin(&a1.f, &a2.f), r: a1.r.iter().zip(&a2.r).map(|(x, y)| al * x + be * y).collect() };
    let t12: Vec<f64> = t1.iter().zip(&t2).map(|(x, y)| al * x + be * y).collect();
    let (v1, v2, v12) = (
        solve_adjoint_backward(&s1, &grid, &t1, &a1).map_err(e)?,
        solve_adjoint_backward(&s1, &grid, &t2, &a2).map_err(e)?,
        solve_adjoint_backward(&s1, &grid, &t12, &a12).map_err(e)?,
    );
    worst = worst.max(rel_diff(&v12, &lin(&v1, &v2)));

    let base = ControlProblem::new(&s1, &grid, &ws, 1e-3).map_err(e)?;
    let c1 = ControlData::from_spec(&s1, &grid);
    let c2 = ControlData::from_spec(&s2, &grid);
    let c12 = ControlData {
        f: lin(&c1.f, &c2.f),
        r: c1.r.iter().zip(&c2.r).map(|(x, y)| al * x + be * y).collect(),
        z0: c1.z0.iter().zip(&c2.z0).map(|(x, y)| al * x + be * y).collect(),
    };
    let solve = |d: ControlData| solve_penalized_control(&ControlProblem { data: d, ..base.clone() });
    let (u1, u2, u12) = (solve(c1).map_err(e)?, solve(c2).map_err(e)?, solve(c12).map_err(e)?);
    worst = worst.max(rel_diff(&u12.u, &lin(&u1.u, &u2.u))).max(rel_diff(&u12.z, &lin(&u1.z, &u2.z)));

    // Zero data everywhere.
    let zero = ProblemSpec::builder(s1.geometry, variable_coefficients(), 1.0).build().map_err(e)?;
    let zb = zero.builder_from().nonlinearity(Some(Nonlinearity::burgers())).build().map_err(e)?;
    let zn = vec![0.0; grid.n_nodes()];
    let mut fields = vec![
        solve_linear_forward(&zero, &grid, None).map_err(e)?,
        solve_semilinear_forward(&zb, &grid, SemilinearMode::Newton).map_err(e)?,
        solve_adjoint_backward(&zero, &grid, &zn, &AdjointData::zeros(&grid)).map_err(e)?,
    ];
    let zc = solve(ControlData::zeros(&grid)).map_err(e)?;
    let zero_cost = zc.j_value == 0.0;
    fields.extend([zc.z, zc.u]);
    let zt = make_target_trajectory(&zb, &grid, &Field::zero(), &Curve::zero()).map_err(e)?;
    let ztc = solve_trajectory_control(&zb, &grid, &ws, &zt, &zn, &TrajectoryOptions::default()).map_err(e)?;
    fields.extend([zt.w_bar, ztc.u, ztc.w]);
    let all_zero = fields.iter().all(|f| f.values.iter().all(|v| *v == 0.0));
    let vacuous =
        matches!(observability_ratio(&zero, &grid, &ws, &zn, &AdjointData::zeros(&grid)), Err(Error::VacuousCase));
    Ok((
        worst <= 1e-11 && all_zero && zero_cost && vacuous,
        format!(
            "superposition deviation {worst:.2e}; zero data give zero fields {all_zero}, J = 0 {zero_cost}, \
             vacuous observability rejected {vacuous}"
        ),
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        (1, "manufactured-solution convergence", 30.0, criterion_1),
        (2, "discrete energy estimate", 60.0, criterion_2),
        (3, "weight ordering", 1.0, criterion_3),
        (4, "optimality system residuals", 120.0, criterion_4),
        (5, "duality identity", 120.0, criterion_5),
        (6, "null-control decay in epsilon", 600.0, criterion_6),
        (7, "controllability to a moving trajectory", 900.0, criterion_7),
        (8, "observability ensemble", 600.0, criterion_8),
        (9, "linearity and zero preservation", 120.0, criterion_9),
    ];
    let mut unexpected = Vec::new();
    for (n, title, limit, check) in criteria {
        let start = Instant::now();
        let result = check();
        let secs = start.elapsed().as_secs_f64();
        let (pass, detail) = match result {
            Ok((p, d)) => (p && secs < limit, d),
            Err(msg) => (false, format!("error: {msg}")),
        };
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("criterion {n} ({title}): {tag} [{secs:.2} s of {limit} s] {detail}");
        if pass == KNOWN_FAILING.contains(&n) {
            unexpected.push(n);
        }
    }
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("criteria with unexpected outcome: {unexpected:?}");
        ExitCode::FAILURE
    }
}
