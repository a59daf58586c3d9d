//! Command dispatch and exit statuses.
use std::path::{Path, PathBuf};
use std::time::Instant;

use ficon_core::forward::{energy_estimate_check, solve_semilinear_forward, EnergyData, SemilinearMode};
use ficon_core::hum::{
    duality_identity, epsilon_sweep, recover_adjoint_and_check, solve_penalized_control, ControlProblem,
};
use ficon_core::observability::ensemble_constant;
use ficon_core::trajectory::{make_target_trajectory, solve_trajectory_control, PicardStatus, TrajectoryOptions};
use ficon_core::weights::verify_ordering;
use serde_json::json;

use crate::config::{ModeConfig, RunConfig};
use crate::export::{self, Artifacts, Manifest, ObservabilityJson};

/// Tolerance of the property checks made by `control`.
pub const PROPERTY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Forward,
    Control,
    Trajectory,
    Observability,
    Sweep,
    WeightsCheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Forward => "forward",
            Command::Control => "control",
            Command::Trajectory => "trajectory",
            Command::Observability => "observability",
            Command::Sweep => "sweep",
            Command::WeightsCheck => "weights-check",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{0}")]
    Config(String),
    #[error("solver failure: {0}")]
    Solver(#[from] ficon_core::Error),
    #[error("property check failed: {0}")]
    Property(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Solver(_) => 3,
            RunError::Property(_) => 4,
            RunError::Io { .. } => 1,
        }
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub manifest: Manifest,
    /// Set when the artifacts were written but a property check failed.
    pub failure: Option<RunError>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        self.failure.as_ref().map_or(0, RunError::exit_code)
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig, RunError> {
    let text = std::fs::read_to_string(path).map_err(|source| RunError::Io { path: path.to_path_buf(), source })?;
    RunConfig::from_json(&text)
}

/// Runs `command` and writes its artifacts into `out`. `seed` overrides the
/// config seed.
pub fn run(command: Command, config: &RunConfig, out: &Path, seed: Option<u64>) -> Result<RunOutcome, RunError> {
    let start = Instant::now();
    let spec = config.problem()?;
    let grid = config.grid(spec.geometry)?;
    let ws = config.weight_system(&spec.geometry)?;
    let mut files = Artifacts::default();
    let mut failure = None;
    let seed = seed.or(config.observability.seed);

    match command {
        Command::Forward => {
            let mode = match config.forward.mode {
                ModeConfig::Newton => SemilinearMode::Newton,
                ModeConfig::SemiImplicit => SemilinearMode::SemiImplicit,
            };
            let w = solve_semilinear_forward(&spec, &grid, mode)?;
            let energy = energy_estimate_check(&w, &EnergyData::from_spec(&spec, &grid), &grid)?;
            files.add("solution.csv", export::field_csv(&grid, &w));
            files.add_json(
                "summary.json",
                &json!({
                    "terminal_norm": grid.row_norm(w.row(grid.n_steps)),
                    "max_abs": w.max_abs(),
                    "energy_ratio": energy.ratio,
                }),
            )?;
        }
        Command::Control => {
            let cp = control_problem(config, &spec, &grid, &ws, config.control.epsilon)?;
            let sol = solve_penalized_control(&cp)?;
            let kkt = recover_adjoint_and_check(&sol, &cp)?;
            let dual = duality_identity(&sol, &cp)?;
            files.add("state.csv", export::field_csv(&grid, &sol.z));
            files.add("control.csv", export::field_csv(&grid, &sol.u));
            let kkt_map: serde_json::Map<_, _> = kkt.entries().iter().map(|(n, v)| (n.to_string(), json!(v))).collect();
            files.add_json(
                "summary.json",
                &json!({
                    "epsilon": cp.epsilon,
                    "J": sol.j_value,
                    "J_terms": sol.j_terms,
                    "terminal_norm": sol.terminal_norm,
                    "pde_residual": sol.residual_pde,
                    "cg_iterations": sol.cg_iterations,
                    "optimality": kkt_map,
                    "duality_gap": dual.gap,
                }),
            )?;
            if !(kkt.max() <= PROPERTY_TOL) {
                failure =
                    Some(RunError::Property(format!("optimality residual {:e} exceeds {PROPERTY_TOL:e}", kkt.max())));
            } else if !(dual.gap <= PROPERTY_TOL) {
                failure = Some(RunError::Property(format!("duality gap {:e} exceeds {PROPERTY_TOL:e}", dual.gap)));
            }
        }
        Command::Sweep => {
            let eps = config
                .sweep
                .as_ref()
                .ok_or_else(|| RunError::Config("sweep: missing field `sweep.epsilons`".into()))?
                .epsilons
                .clone();
            if eps.is_empty() || eps.iter().any(|e| !(*e > 0.0)) || eps.windows(2).any(|w| w[1] >= w[0]) {
                return Err(RunError::Config("sweep.epsilons: must be positive and strictly decreasing".into()));
            }
            let base = control_problem(config, &spec, &grid, &ws, eps[0])?;
            let rows = epsilon_sweep(&base, &eps)?;
            files.add("sweep.csv", export::sweep_csv(&rows));
            let errors: Vec<_> = rows
                .iter()
                .filter_map(|r| r.outcome.as_ref().err().map(|e| json!({"epsilon": r.epsilon, "error": e})))
                .collect();
            files.add_json("summary.json", &json!({ "rows": rows.len(), "errors": errors }))?;
            if let Some(first) = rows.iter().find_map(|r| r.outcome.as_ref().err()) {
                failure = Some(RunError::Solver(ficon_core::Error::InvalidProblem(first.clone())));
            }
        }
        Command::Trajectory => {
            let t = config
                .trajectory
                .as_ref()
                .ok_or_else(|| RunError::Config("trajectory: missing section `trajectory`".into()))?;
            let target_w0 = t.target_w0.as_ref().map_or_else(|| spec.w0.clone(), |c| c.build());
            let traj = make_target_trajectory(&spec, &grid, &t.target_control.build(), &target_w0)
                .map_err(|e| RunError::Config(format!("trajectory.target_control: {e}")))?;
            let pert = t.perturbation.build();
            let w0: Vec<f64> =
                grid.x_nodes.iter().enumerate().map(|(i, x)| traj.w_bar.get(0, i) + pert.eval(*x)).collect();
            let options = TrajectoryOptions {
                epsilon: config.control.epsilon,
                max_iters: t.max_iters,
                tolerance: t.tolerance,
                penalty: config.control.penalty(),
                solver: config.control.solver(),
            };
            let out_ = solve_trajectory_control(&spec, &grid, &ws, &traj, &w0, &options)?;
            files.add("history.csv", export::history_csv(&out_.history));
            files.add("control.csv", export::field_csv(&grid, &out_.u));
            files.add("state.csv", export::field_csv(&grid, &out_.w));
            files.add("target.csv", export::field_csv(&grid, &traj.w_bar));
            files.add_json(
                "summary.json",
                &json!({
                    "status": format!("{:?}", out_.status),
                    "iterates": out_.history.len(),
                    "terminal_error": out_.terminal_error(),
                    "residual": out_.residual,
                }),
            )?;
            if out_.status != PicardStatus::Converged {
                failure = Some(RunError::Property(format!(
                    "terminal error {:e} above tolerance {:e} ({:?})",
                    out_.terminal_error(),
                    t.tolerance,
                    out_.status
                )));
            }
        }
        Command::Observability => {
            let seed = seed.ok_or_else(|| {
                RunError::Config("observability: missing field `observability.seed` (or pass --seed)".into())
            })?;
            let report =
                ensemble_constant(&spec, &grid, &ws, config.observability.samples, seed).map_err(|e| match e {
                    ficon_core::Error::InvalidProblem(m) => RunError::Config(format!("observability.samples: {m}")),
                    other => RunError::Solver(other),
                })?;
            files.add_json("report.json", &ObservabilityJson::from(&report))?;
            files.add("terms.csv", export::terms_csv(&report));
        }
        Command::WeightsCheck => {
            let report = verify_ordering(&ws, &grid);
            files.add("weights.csv", export::weights_csv(&grid, &ws));
            let violations: Vec<_> = report
                .violations
                .iter()
                .map(|v| json!({"level": v.level, "node": v.node, "check": v.check, "value": v.value}))
                .collect();
            files.add_json(
                "ordering.json",
                &json!({
                    "passed": report.passed(),
                    "plus_margin": report.plus_margin,
                    "minus_margin": report.minus_margin,
                    "interface_gap": report.interface_gap,
                    "psi_star_max": report.psi_star_max,
                    "violations": violations,
                }),
            )?;
            if !report.passed() {
                failure =
                    Some(RunError::Property(format!("weight ordering violated at {} nodes", report.violations.len())));
            }
        }
    }

    let config_value = serde_json::to_value(config).expect("config serializes");
    let manifest = files.write(out, command.name(), seed, &config_value, start.elapsed().as_secs_f64())?;
    Ok(RunOutcome { manifest, failure })
}

fn control_problem(
    config: &RunConfig,
    spec: &ficon_core::ProblemSpec,
    grid: &ficon_core::Grid,
    ws: &ficon_core::WeightSystem,
    epsilon: f64,
) -> Result<ControlProblem, RunError> {
    if !spec.is_linear() {
        return Err(RunError::Config("control: problem must be linear (remove `nonlinearity`)".into()));
    }
    let mut cp = ControlProblem::new(spec, grid, ws, epsilon).map_err(|e| RunError::Config(format!("control: {e}")))?;
    cp.penalty = config.control.penalty();
    cp.solver = config.control.solver();
    Ok(cp)
}
