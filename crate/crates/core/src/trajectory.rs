//! Controllability to a trajectory of the semilinear system.
//!
//! A target `(w̄, ū)` is produced by a forward solve with a preset control.
//! The perturbation `y = w − w̄` obeys the linearized system plus the
//! remainder `g(w̄+y) − g(w̄) − G′(w̄)[y]`; the remainder of the current
//! iterate is fed as a source into the next penalized linear solve.
//!
//! All marches here use the unshifted scheme (`K = 0`) with `g` implicit, the
//! same step operators the control solver uses.
use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::forward::{
    row_kind, solve_semilinear_forward_with, DiscreteCoefficients, RowKind, SemilinearMode, StepLoads,
};
use crate::grid::{Grid, SpaceTimeField};
use crate::hum::{
    solve_penalized_control, ControlData, ControlProblem, ControlSolution, PenaltyWeighting, SolverOptions,
};
use crate::model::{Curve, Field, Nonlinearity, ProblemSpec};
use crate::weights::WeightSystem;

#[derive(Debug, Clone, PartialEq)]
pub struct TargetTrajectory {
    pub w_bar: SpaceTimeField,
    /// Physical control on step rows, zero off the control mask.
    pub u_bar: SpaceTimeField,
    pub terminal: Vec<f64>,
    /// Max-norm residual of the semilinear step equations.
    pub residual: f64,
}

/// Central `D₁` on bulk nodes, 0 elsewhere.
fn central_row(grid: &Grid, row: &[f64]) -> Vec<f64> {
    (0..row.len())
        .map(|i| match row_kind(grid, i) {
            RowKind::Bulk => (row[i + 1] - row[i - 1]) / (2.0 * grid.spacing(grid.side_of(i))),
            _ => 0.0,
        })
        .collect()
}

/// Physical loads of `spec` plus a control given on step rows.
fn loads_with_control(spec: &ProblemSpec, grid: &Grid, u: &SpaceTimeField) -> Result<StepLoads> {
    let mut loads = StepLoads::from_spec(spec, grid);
    loads.add_control(grid, u)?;
    Ok(loads)
}

fn march(
    spec: &ProblemSpec,
    grid: &Grid,
    coeffs: &DiscreteCoefficients,
    w0: &[f64],
    loads: &StepLoads,
) -> Result<SpaceTimeField> {
    solve_semilinear_forward_with(grid, coeffs, spec.nonlinearity.as_ref(), 0.0, SemilinearMode::Newton, w0, loads)
}

/// Max-norm residual of `A w^{k+1} + g(w^{k+1}) − mass ⊙ w^k − load_k`.
pub fn semilinear_residual(
    spec: &ProblemSpec,
    grid: &Grid,
    coeffs: &DiscreteCoefficients,
    w: &SpaceTimeField,
    loads: &StepLoads,
) -> Result<f64> {
    let rows = loads.shifted(grid, 0.0);
    let mut worst = 0.0f64;
    for k in 0..grid.n_steps {
        let sys = crate::forward::StepSystem::assemble(grid, coeffs, 0.0, k, crate::forward::RowForm::Physical);
        let mut r = sys.residual(w.row(k + 1), w.row(k), rows.row(k));
        if let Some(g) = spec.nonlinearity.as_ref() {
            let t = grid.time(k + 1);
            let d1 = central_row(grid, w.row(k + 1));
            for i in 0..grid.n_nodes() {
                if row_kind(grid, i) == RowKind::Bulk {
                    r[i] += sys.row_scale[i] * g.eval(t, grid.x_nodes[i], w.get(k + 1, i), d1[i])?.g;
                }
            }
        }
        worst = r.iter().fold(worst, |m, v| m.max(v.abs()));
    }
    Ok(worst)
}

/// Samples `u_profile` on step rows; fails if it is nonzero off the control mask.
pub fn sample_control(grid: &Grid, u_profile: &Field) -> Result<SpaceTimeField> {
    let mut u = SpaceTimeField::zeros_with_levels(grid, grid.n_steps);
    for k in 0..grid.n_steps {
        let t = grid.time(k);
        for i in 0..grid.n_nodes() {
            let v = u_profile.eval(t, grid.x_nodes[i]);
            if grid.control_mask[i] && row_kind(grid, i) == RowKind::Bulk {
                u.set(k, i, v);
            } else if v != 0.0 {
                return Err(Error::InvalidProblem(format!(
                    "control profile is nonzero at x1 = {} outside the control window",
                    grid.x_nodes[i]
                )));
            }
        }
    }
    Ok(u)
}

pub fn make_target_trajectory(
    spec: &ProblemSpec,
    grid: &Grid,
    u_profile: &Field,
    w0_target: &Curve,
) -> Result<TargetTrajectory> {
    let u_bar = sample_control(grid, u_profile)?;
    let coeffs = DiscreteCoefficients::sample(spec, grid);
    let mut w0: Vec<f64> = grid.x_nodes.iter().map(|x| w0_target.eval(*x)).collect();
    let n = w0.len();
    w0[0] = 0.0;
    w0[n - 1] = 0.0;
    let loads = loads_with_control(spec, grid, &u_bar)?;
    let w_bar = march(spec, grid, &coeffs, &w0, &loads)?;
    let residual = semilinear_residual(spec, grid, &coeffs, &w_bar, &loads)?;
    let terminal = w_bar.row(grid.n_steps).to_vec();
    Ok(TargetTrajectory { w_bar, u_bar, terminal, residual })
}

/// `(∂_{ξ₁}g, ∂_{ξ₂}g)` along `w̄` on every level; added to `c` and `b`.
pub fn linearized_coefficients(
    traj: &TargetTrajectory,
    n: &Nonlinearity,
    grid: &Grid,
) -> Result<(SpaceTimeField, SpaceTimeField)> {
    let mut dc = SpaceTimeField::zeros(grid);
    let mut db = SpaceTimeField::zeros(grid);
    for l in 0..grid.n_levels() {
        let t = grid.time(l);
        let row = traj.w_bar.row(l);
        let d1 = central_row(grid, row);
        for i in 0..grid.n_nodes() {
            if row_kind(grid, i) != RowKind::Bulk {
                continue;
            }
            let v = n.eval(t, grid.x_nodes[i], row[i], d1[i])?;
            dc.set(l, i, v.dg_dxi1);
            db.set(l, i, v.dg_dxi2);
        }
    }
    Ok((dc, db))
}

/// `g(w̄+y) − g(w̄) − G′(w̄)[y]` on bulk nodes of every level, with
/// `(dc, db)` from [`linearized_coefficients`].
pub fn linearization_remainder(
    grid: &Grid,
    n: &Nonlinearity,
    w_bar: &SpaceTimeField,
    y: &SpaceTimeField,
    dc: &SpaceTimeField,
    db: &SpaceTimeField,
) -> Result<SpaceTimeField> {
    let mut out = SpaceTimeField::zeros(grid);
    for l in 0..grid.n_levels() {
        let t = grid.time(l);
        let wb = w_bar.row(l);
        let yr = y.row(l);
        let w: Vec<f64> = wb.iter().zip(yr).map(|(a, b)| a + b).collect();
        let (d_wb, d_y, d_w) = (central_row(grid, wb), central_row(grid, yr), central_row(grid, &w));
        for i in 0..grid.n_nodes() {
            if row_kind(grid, i) != RowKind::Bulk {
                continue;
            }
            let x = grid.x_nodes[i];
            let full = n.eval(t, x, w[i], d_w[i])?.g;
            let base = n.eval(t, x, wb[i], d_wb[i])?.g;
            out.set(l, i, full - base - dc.get(l, i) * yr[i] - db.get(l, i) * d_y[i]);
        }
    }
    Ok(out)
}

/// Two sources equal up to rounding.
fn stalled(a: &SpaceTimeField, b: &SpaceTimeField) -> bool {
    let scale = a.values.iter().chain(&b.values).fold(0.0f64, |m, v| m.max(v.abs()));
    a.values.iter().zip(&b.values).all(|(x, y)| (x - y).abs() <= 1e-12 * scale)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryOptions {
    pub epsilon: f64,
    pub max_iters: usize,
    pub tolerance: f64,
    pub penalty: PenaltyWeighting,
    pub solver: SolverOptions,
}

impl Default for TrajectoryOptions {
    fn default() -> Self {
        TrajectoryOptions {
            epsilon: 1e-5,
            max_iters: 8,
            tolerance: 1e-4,
            penalty: PenaltyWeighting::default(),
            solver: SolverOptions::default(),
        }
    }
}

/// One Picard iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardRecord {
    pub iterate: usize,
    /// `‖w(T) − w̄(T)‖` of the re-simulated semilinear state.
    pub terminal_error: f64,
    /// `‖remainder‖` fed into this iterate's linear solve.
    pub remainder_norm: f64,
    pub inner_cg_iters: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PicardStatus {
    /// Terminal error at or below the tolerance.
    Converged,
    /// The remainder no longer changes; further iterates repeat the last one.
    FixedPoint,
    /// Iteration budget exhausted.
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct TrajectoryControl {
    /// Total physical control `ū + a·v`.
    pub u: SpaceTimeField,
    /// Semilinear state driven by `u`.
    pub w: SpaceTimeField,
    pub history: Vec<PicardRecord>,
    pub status: PicardStatus,
    /// Last linear solve.
    pub inner: ControlSolution,
    /// Residual of the semilinear step equations for `(w, u)`.
    pub residual: f64,
    /// Linearized problem of the last iterate.
    pub linear_problem: ControlProblem,
}

impl TrajectoryControl {
    pub fn terminal_error(&self) -> f64 {
        self.history.last().map(|r| r.terminal_error).unwrap_or(f64::NAN)
    }
}

pub fn solve_trajectory_control(
    spec: &ProblemSpec,
    grid: &Grid,
    ws: &WeightSystem,
    traj: &TargetTrajectory,
    w0: &[f64],
    options: &TrajectoryOptions,
) -> Result<TrajectoryControl> {
    if w0.len() != grid.n_nodes() {
        return Err(Error::ShapeMismatch("initial state does not match the grid".into()));
    }
    if options.max_iters == 0 {
        return Err(Error::InvalidProblem("max_iters must be positive".into()));
    }
    let coeffs = DiscreteCoefficients::sample(spec, grid);
    let partials = match spec.nonlinearity.as_ref() {
        Some(n) => Some((n, linearized_coefficients(traj, n, grid)?)),
        None => None,
    };
    let lin_coeffs = match &partials {
        Some((_, (dc, db))) => coeffs.with_additions(Some(db), Some(dc))?,
        None => coeffs.clone(),
    };
    let mut y0 = w0.to_vec();
    y0.iter_mut().zip(traj.w_bar.row(0)).for_each(|(y, b)| *y -= b);
    let n_last = y0.len() - 1;
    y0[0] = 0.0;
    y0[n_last] = 0.0;

    let mut data = ControlData::zeros(grid);
    data.z0 = y0;
    let mut source = SpaceTimeField::zeros(grid);
    let mut history: Vec<PicardRecord> = Vec::new();
    let mut growth = 0usize;
    let mut previous_source: Option<SpaceTimeField> = None;
    loop {
        let iterate = history.len() + 1;
        data.f = source.clone();
        let mut cp = ControlProblem::with_parts(grid.clone(), lin_coeffs.clone(), *ws, data.clone(), options.epsilon)?;
        cp.penalty = options.penalty;
        cp.solver = options.solver;
        let inner = solve_penalized_control(&cp)?;

        let mut u = traj.u_bar.clone();
        for k in 0..grid.n_steps {
            for i in 0..grid.n_nodes() {
                let v = inner.u.get(k, i);
                if v != 0.0 {
                    u.set(k, i, u.get(k, i) + lin_coeffs.a.get(k + 1, i) * v);
                }
            }
        }
        let loads = loads_with_control(spec, grid, &u)?;
        let w = march(spec, grid, &coeffs, w0, &loads)?;
        let terminal_error = {
            let diff: Vec<f64> = w.row(grid.n_steps).iter().zip(&traj.terminal).map(|(a, b)| a - b).collect();
            grid.row_norm(&diff)
        };
        let remainder_norm = grid.discrete_norm(&source, None, crate::grid::Region::Whole)?;
        if let Some(last) = history.last() {
            growth = if terminal_error > last.terminal_error { growth + 1 } else { 0 };
        }
        history.push(PicardRecord { iterate, terminal_error, remainder_norm, inner_cg_iters: inner.cg_iterations });
        if growth >= 3 {
            return Err(Error::PicardDiverged { iterate, terminal_error });
        }

        // Next source: the remainder along the re-simulated perturbation,
        // shifted so that step k reads level k + 1.
        let next = match &partials {
            Some((n, (dc, db))) => {
                let mut y = w.clone();
                y.axpy(-1.0, &traj.w_bar)?;
                let rem = linearization_remainder(grid, n, &traj.w_bar, &y, dc, db)?;
                let mut s = SpaceTimeField::zeros(grid);
                for k in 0..grid.n_steps {
                    for i in 0..grid.n_nodes() {
                        s.set(k, i, -rem.get(k + 1, i));
                    }
                }
                s
            }
            None => SpaceTimeField::zeros(grid),
        };
        let status = if terminal_error <= options.tolerance {
            Some(PicardStatus::Converged)
        } else if stalled(&next, &source) || previous_source.as_ref().is_some_and(|p| stalled(&next, p)) {
            Some(PicardStatus::FixedPoint)
        } else if iterate >= options.max_iters {
            Some(PicardStatus::MaxIterations)
        } else {
            None
        };
        if let Some(status) = status {
            let residual = semilinear_residual(spec, grid, &coeffs, &w, &loads)?;
            return Ok(TrajectoryControl { u, w, history, status, inner, residual, linear_problem: cp });
        }
        previous_source = Some(core::mem::replace(&mut source, next));
    }
}
