//! Rothe (implicit Euler) solvers for the coupled system.
//!
//! Step `k` advances `z^k → z^{k+1}` with coefficients at `x_{0,k+1}` and
//! sources at `x_{0,k}`. Bulk rows read
//! `σ[ρ(z^{k+1} − z^k)/h − a·D₂z^{k+1} + b·D₁z^{k+1} + (c + K)z^{k+1}] = load`
//! with `σ = 1` (physical form) or `σ = 1/a` (divided form). The interface
//! row enforces `a₊D₁⁺z − a₋D₁⁻z = M(z^{k+1} − z^k)/h + MKz^{k+1} + r_k` with
//! one-sided three-point differences; the end rows pin `z = 0`.
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::banded::{BandLu, BandMatrix};
use crate::error::{Error, Result};
use crate::grid::{Grid, Region, SpaceTimeField};
use crate::model::{InterfaceFlux, Nonlinearity, ProblemSpec, Side};

/// Norm above which a semilinear march is declared unstable.
pub const INSTABILITY_NORM: f64 = 1e10;
pub const NEWTON_TOL: f64 = 1e-13;
pub const NEWTON_MAX_ITERS: usize = 25;

/// Coefficients sampled on grid nodes at every time level.
///
/// Bulk nodes use the coefficient of their own side; the interface row only
/// needs `a₊`, `a₋` (or 1 for the raw flux) and `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteCoefficients {
    pub rho: SpaceTimeField,
    pub a: SpaceTimeField,
    pub b: SpaceTimeField,
    pub c: SpaceTimeField,
    pub a_plus_interface: Vec<f64>,
    pub a_minus_interface: Vec<f64>,
    pub mass: f64,
}

impl DiscreteCoefficients {
    pub fn sample(spec: &ProblemSpec, grid: &Grid) -> Self {
        let cs = &spec.coefficients;
        let side = |i: usize| grid.side_of(i);
        let field = |f: &dyn Fn(Side, f64, f64) -> f64| {
            let mut out = SpaceTimeField::zeros(grid);
            for k in 0..grid.n_levels() {
                let t = grid.time(k);
                for (i, x) in grid.x_nodes.iter().enumerate() {
                    out.set(k, i, f(side(i), t, *x));
                }
            }
            out
        };
        let raw = spec.flux == InterfaceFlux::Raw;
        let interface =
            |s: Side| -> Vec<f64> { grid.times().iter().map(|&t| if raw { 1.0 } else { cs.a(s, t, 0.0) }).collect() };
        DiscreteCoefficients {
            rho: field(&|s, t, x| cs.rho(s, t, x)),
            a: field(&|s, t, x| cs.a(s, t, x)),
            b: field(&|s, t, x| cs.b(s, t, x)),
            c: field(&|s, t, x| cs.c(s, t, x)),
            a_plus_interface: interface(Side::Plus),
            a_minus_interface: interface(Side::Minus),
            mass: spec.mass,
        }
    }

    /// Adds first- and zeroth-order fields (`b += extra_b`, `c += extra_c`).
    pub fn with_additions(&self, extra_b: Option<&SpaceTimeField>, extra_c: Option<&SpaceTimeField>) -> Result<Self> {
        let mut out = self.clone();
        if let Some(eb) = extra_b {
            out.b.axpy(1.0, eb)?;
        }
        if let Some(ec) = extra_c {
            out.c.axpy(1.0, ec)?;
        }
        Ok(out)
    }

    /// Level `j` becomes level `N − j`.
    pub fn time_reversed(&self) -> Self {
        let rev = |f: &SpaceTimeField| {
            let mut out = f.clone();
            let n = f.n_levels;
            for k in 0..n {
                out.row_mut(k).copy_from_slice(f.row(n - 1 - k));
            }
            out
        };
        let rev_vec = |v: &Vec<f64>| v.iter().rev().copied().collect();
        DiscreteCoefficients {
            rho: rev(&self.rho),
            a: rev(&self.a),
            b: rev(&self.b),
            c: rev(&self.c),
            a_plus_interface: rev_vec(&self.a_plus_interface),
            a_minus_interface: rev_vec(&self.a_minus_interface),
            mass: self.mass,
        }
    }

    pub fn max_abs_b(&self) -> f64 {
        self.b.max_abs()
    }

    pub fn max_abs_c(&self) -> f64 {
        self.c.max_abs()
    }
}

/// `K = 1 + max|c| + max|b|²/(2α)`.
pub fn default_shift(spec: &ProblemSpec) -> f64 {
    let b = &spec.bounds;
    1.0 + b.max_abs_c + b.max_abs_b * b.max_abs_b / (2.0 * spec.coefficients.alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RowForm {
    #[default]
    Physical,
    /// Bulk rows divided by `a`, i.e. the operator `L̃ = L/a`.
    Divided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Dirichlet,
    Bulk,
    Interface,
}

/// One implicit step: `A z^{k+1} = mass ⊙ z^k + load` on active rows.
#[derive(Debug, Clone)]
pub struct StepSystem {
    pub matrix: BandMatrix,
    pub mass: Vec<f64>,
    /// `σ` on bulk rows, 1 on the interface row, 0 on Dirichlet rows.
    pub row_scale: Vec<f64>,
    pub shift: f64,
    pub step: usize,
}

pub fn row_kind(grid: &Grid, i: usize) -> RowKind {
    if i == 0 || i + 1 == grid.n_nodes() {
        RowKind::Dirichlet
    } else if i == grid.interface_index {
        RowKind::Interface
    } else {
        RowKind::Bulk
    }
}

impl StepSystem {
    /// Assembles step `k` (coefficients at level `k + 1`).
    pub fn assemble(grid: &Grid, coeffs: &DiscreteCoefficients, shift: f64, k: usize, form: RowForm) -> Self {
        let n = grid.n_nodes();
        let h = grid.dt;
        let level = k + 1;
        let mut matrix = BandMatrix::zeros(n, 2, 2);
        let mut mass = vec![0.0; n];
        let mut row_scale = vec![0.0; n];
        for i in 0..n {
            match row_kind(grid, i) {
                RowKind::Dirichlet => matrix.set(i, i, 1.0),
                RowKind::Interface => {
                    let (ap, am) = (coeffs.a_plus_interface[level], coeffs.a_minus_interface[level]);
                    let (dp, dm) = (grid.dx_plus, grid.dx_minus);
                    let m = coeffs.mass;
                    matrix.set(i, i, m / h + m * shift + 1.5 * ap / dp + 1.5 * am / dm);
                    matrix.set(i, i + 1, -2.0 * ap / dp);
                    matrix.set(i, i + 2, 0.5 * ap / dp);
                    matrix.set(i, i - 1, -2.0 * am / dm);
                    matrix.set(i, i - 2, 0.5 * am / dm);
                    mass[i] = m / h;
                    row_scale[i] = 1.0;
                }
                RowKind::Bulk => {
                    let dx = grid.spacing(grid.side_of(i));
                    let (rho, a, b, c) = (
                        coeffs.rho.get(level, i),
                        coeffs.a.get(level, i),
                        coeffs.b.get(level, i),
                        coeffs.c.get(level, i),
                    );
                    let s = match form {
                        RowForm::Physical => 1.0,
                        RowForm::Divided => 1.0 / a,
                    };
                    matrix.set(i, i, s * (rho / h + 2.0 * a / (dx * dx) + c + rho * shift));
                    matrix.set(i, i - 1, s * (-a / (dx * dx) - b / (2.0 * dx)));
                    matrix.set(i, i + 1, s * (-a / (dx * dx) + b / (2.0 * dx)));
                    mass[i] = s * rho / h;
                    row_scale[i] = s;
                }
            }
        }
        StepSystem { matrix, mass, row_scale, shift, step: k }
    }

    /// `mass ⊙ prev + load` on active rows, 0 on Dirichlet rows.
    pub fn rhs(&self, prev: &[f64], load: &[f64], out: &mut [f64]) {
        for i in 0..out.len() {
            out[i] = if self.row_scale[i] == 0.0 { 0.0 } else { self.mass[i] * prev[i] + load[i] };
        }
    }

    /// `A z^{k+1} − mass ⊙ z^k − load` on active rows.
    pub fn residual(&self, next: &[f64], prev: &[f64], load: &[f64]) -> Vec<f64> {
        let n = next.len();
        let mut out = vec![0.0; n];
        self.matrix.matvec(next, &mut out);
        let mut rhs = vec![0.0; n];
        self.rhs(prev, load, &mut rhs);
        out.iter_mut().zip(&rhs).for_each(|(o, r)| *o -= r);
        out
    }

    pub fn dominance_margin(&self) -> f64 {
        self.matrix.dominance_margin()
    }

    fn factor(&self) -> Result<BandLu> {
        self.matrix.factor().map_err(|e| match e {
            Error::SingularMatrix { pivot_row, .. } => Error::SingularMatrix { step: self.step, pivot_row },
            other => other,
        })
    }
}

/// Step system of the continuous problem at step `k`.
pub fn assemble_step_system(spec: &ProblemSpec, grid: &Grid, shift: f64, k: usize) -> Result<StepSystem> {
    if k >= grid.n_steps {
        return Err(Error::ShapeMismatch(format!("step {k} outside 0..{}", grid.n_steps)));
    }
    let coeffs = DiscreteCoefficients::sample(spec, grid);
    Ok(StepSystem::assemble(grid, &coeffs, shift, k, RowForm::Physical))
}

/// Largest `h` keeping the interface row strictly diagonally dominant.
pub fn dominance_threshold_dt(grid: &Grid, coeffs: &DiscreteCoefficients, shift: f64) -> f64 {
    (1..grid.n_levels())
        .map(|l| {
            let excess = coeffs.a_plus_interface[l] / grid.dx_plus + coeffs.a_minus_interface[l] / grid.dx_minus
                - coeffs.mass * shift;
            if excess <= 0.0 {
                f64::INFINITY
            } else {
                coeffs.mass / excess
            }
        })
        .fold(f64::INFINITY, f64::min)
}

/// Factorized step systems for every step of one grid.
#[derive(Debug, Clone)]
pub struct StepOperators {
    pub systems: Vec<StepSystem>,
    lus: Vec<BandLu>,
    n_nodes: usize,
    interface_index: usize,
}

impl StepOperators {
    pub fn new(grid: &Grid, coeffs: &DiscreteCoefficients, shift: f64, form: RowForm) -> Result<Self> {
        let systems: Vec<StepSystem> =
            (0..grid.n_steps).map(|k| StepSystem::assemble(grid, coeffs, shift, k, form)).collect();
        let lus = systems.iter().map(|s| s.factor()).collect::<Result<Vec<_>>>()?;
        Ok(StepOperators { systems, lus, n_nodes: grid.n_nodes(), interface_index: grid.interface_index })
    }

    pub fn n_steps(&self) -> usize {
        self.systems.len()
    }

    /// `z^{k+1} = A_k⁻¹(mass_k ⊙ z^k + load_k)`; `loads` has one row per step.
    pub fn forward(&self, z0: &[f64], loads: &SpaceTimeField) -> Result<SpaceTimeField> {
        let n = self.n_nodes;
        if loads.n_levels != self.n_steps() || loads.n_nodes != n || z0.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "forward march: {} load rows of {} nodes for {} steps of {n} nodes",
                loads.n_levels,
                loads.n_nodes,
                self.n_steps()
            )));
        }
        let mut z = SpaceTimeField {
            n_levels: self.n_steps() + 1,
            n_nodes: n,
            values: vec![0.0; (self.n_steps() + 1) * n],
            interface_index: self.interface_index,
        };
        z.row_mut(0).copy_from_slice(z0);
        let mut buf = vec![0.0; n];
        for (k, (sys, lu)) in self.systems.iter().zip(&self.lus).enumerate() {
            sys.rhs(z.row(k), loads.row(k), &mut buf);
            lu.solve(&mut buf);
            z.row_mut(k + 1).copy_from_slice(&buf);
        }
        Ok(z)
    }

    /// Reverse sweep for `Σ_l (g_l, z^l)`: returns `μ` (one row per step)
    /// with `μ_k = A_k⁻ᵀ(g_{k+1} + mass_{k+1} ⊙ μ_{k+1})`, `μ_N = 0`.
    /// The derivative with respect to `load_k` is `μ_k` on active rows.
    pub fn adjoint(&self, g: &SpaceTimeField) -> Result<SpaceTimeField> {
        let n = self.n_nodes;
        let steps = self.n_steps();
        if g.n_levels != steps + 1 || g.n_nodes != n {
            return Err(Error::ShapeMismatch(format!(
                "adjoint sweep: {} levels of {} nodes, expected {} of {n}",
                g.n_levels,
                g.n_nodes,
                steps + 1
            )));
        }
        let mut mu = SpaceTimeField {
            n_levels: steps,
            n_nodes: n,
            values: vec![0.0; steps * n],
            interface_index: self.interface_index,
        };
        let mut buf = vec![0.0; n];
        for k in (0..steps).rev() {
            buf.copy_from_slice(g.row(k + 1));
            if k + 1 < steps {
                let next = &self.systems[k + 1];
                for i in 0..n {
                    buf[i] += next.mass[i] * mu.get(k + 1, i);
                }
            }
            self.lus[k].solve_transpose(&mut buf);
            mu.row_mut(k).copy_from_slice(&buf);
        }
        Ok(mu)
    }

    /// Solves `A_k x = rhs` in place.
    pub fn solve_step(&self, k: usize, rhs: &mut [f64]) {
        self.lus[k].solve(rhs);
    }

    pub fn row_scale(&self, k: usize) -> &[f64] {
        &self.systems[k].row_scale
    }
}

/// Physical step data: bulk source rows `f(x_{0,k}, ·)` (plus any control)
/// and interface values `r(x_{0,k})`, one per step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLoads {
    pub bulk: SpaceTimeField,
    pub interface: Vec<f64>,
}

impl StepLoads {
    pub fn zeros(grid: &Grid) -> Self {
        StepLoads { bulk: SpaceTimeField::zeros_with_levels(grid, grid.n_steps), interface: vec![0.0; grid.n_steps] }
    }

    pub fn from_spec(spec: &ProblemSpec, grid: &Grid) -> Self {
        let mut out = Self::zeros(grid);
        for k in 0..grid.n_steps {
            let t = grid.time(k);
            for (i, x) in grid.x_nodes.iter().enumerate() {
                let v = match grid.side_of(i) {
                    Side::Plus => spec.f_plus.eval(t, *x),
                    Side::Minus => spec.f_minus.eval(t, *x),
                };
                out.bulk.set(k, i, v);
            }
            out.interface[k] = spec.r.eval(t);
        }
        out
    }

    /// Step loads of level-indexed data; step `k` reads level `k`.
    pub fn from_levels(source: &SpaceTimeField, r: &[f64]) -> Self {
        let steps = source.n_levels - 1;
        StepLoads {
            bulk: SpaceTimeField {
                n_levels: steps,
                n_nodes: source.n_nodes,
                values: source.values[..steps * source.n_nodes].to_vec(),
                interface_index: source.interface_index,
            },
            interface: r[..steps].to_vec(),
        }
    }

    /// Adds `χ_ω u` with `u` given per step row.
    pub fn add_control(&mut self, grid: &Grid, u: &SpaceTimeField) -> Result<()> {
        if u.n_levels != self.bulk.n_levels || u.n_nodes != self.bulk.n_nodes {
            return Err(Error::ShapeMismatch("control rows do not match step rows".into()));
        }
        for k in 0..u.n_levels {
            for i in grid.control_index..grid.n_nodes() {
                let v = self.bulk.get(k, i) + u.get(k, i);
                self.bulk.set(k, i, v);
            }
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.bulk.is_zero() && self.interface.iter().all(|v| *v == 0.0)
    }

    /// Row loads of the shifted problem: `e^{−Kx₀}f` on bulk rows and
    /// `−e^{−Kx₀}r` on the interface row.
    pub fn shifted(&self, grid: &Grid, shift: f64) -> SpaceTimeField {
        let mut out = self.bulk.clone();
        for k in 0..out.n_levels {
            let e = (-shift * grid.time(k)).exp();
            for i in 0..out.n_nodes {
                let v = match row_kind(grid, i) {
                    RowKind::Dirichlet => 0.0,
                    RowKind::Interface => -e * self.interface[k],
                    RowKind::Bulk => e * self.bulk.get(k, i),
                };
                out.set(k, i, v);
            }
        }
        out
    }
}

pub fn sample_initial(spec: &ProblemSpec, grid: &Grid) -> Vec<f64> {
    let mut w0: Vec<f64> = grid.x_nodes.iter().map(|x| spec.w0.eval(*x)).collect();
    let n = w0.len();
    w0[0] = 0.0;
    w0[n - 1] = 0.0;
    w0
}

fn unshift(z: &mut SpaceTimeField, grid: &Grid, shift: f64) {
    if shift == 0.0 {
        return;
    }
    for k in 0..z.n_levels {
        let e = (shift * grid.time(k)).exp();
        z.row_mut(k).iter_mut().for_each(|v| *v *= e);
    }
}

/// Linear march on sampled coefficients; returns `w = z·e^{Kx₀}`.
pub fn solve_linear_forward_with(
    grid: &Grid,
    coeffs: &DiscreteCoefficients,
    shift: f64,
    w0: &[f64],
    loads: &StepLoads,
) -> Result<SpaceTimeField> {
    let ops = StepOperators::new(grid, coeffs, shift, RowForm::Physical)?;
    let mut z = ops.forward(w0, &loads.shifted(grid, shift))?;
    unshift(&mut z, grid, shift);
    Ok(z)
}

/// Linear solve of the problem data; `shift = None` selects [`default_shift`].
pub fn solve_linear_forward(spec: &ProblemSpec, grid: &Grid, shift: Option<f64>) -> Result<SpaceTimeField> {
    let k = shift.unwrap_or_else(|| default_shift(spec));
    let coeffs = DiscreteCoefficients::sample(spec, grid);
    solve_linear_forward_with(grid, &coeffs, k, &sample_initial(spec, grid), &StepLoads::from_spec(spec, grid))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SemilinearMode {
    /// `g` lagged to the previous level.
    SemiImplicit,
    /// `g` implicit, each step solved by Newton's method.
    #[default]
    Newton,
}

/// Central `D₁` at bulk node `i`.
#[inline]
fn central(grid: &Grid, row: &[f64], i: usize) -> f64 {
    (row[i + 1] - row[i - 1]) / (2.0 * grid.spacing(grid.side_of(i)))
}

/// Semilinear march on sampled coefficients (in `w`-variables at output).
pub fn solve_semilinear_forward_with(
    grid: &Grid,
    coeffs: &DiscreteCoefficients,
    nonlinearity: Option<&Nonlinearity>,
    shift: f64,
    mode: SemilinearMode,
    w0: &[f64],
    loads: &StepLoads,
) -> Result<SpaceTimeField> {
    let Some(g) = nonlinearity else {
        return solve_linear_forward_with(grid, coeffs, shift, w0, loads);
    };
    let ops = StepOperators::new(grid, coeffs, shift, RowForm::Physical)?;
    let shifted = loads.shifted(grid, shift);
    let n = grid.n_nodes();
    let mut z = SpaceTimeField::zeros(grid);
    z.row_mut(0).copy_from_slice(w0);
    let mut load = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    for k in 0..grid.n_steps {
        load.copy_from_slice(shifted.row(k));
        let sys = &ops.systems[k];
        match mode {
            SemilinearMode::SemiImplicit => {
                let t = grid.time(k);
                let e = (shift * t).exp();
                let prev = z.row(k);
                for i in 0..n {
                    if row_kind(grid, i) == RowKind::Bulk {
                        let v = g.eval(t, grid.x_nodes[i], e * prev[i], e * central(grid, prev, i))?;
                        load[i] -= v.g / e;
                    }
                }
                sys.rhs(z.row(k), &load, &mut rhs);
                ops.lus[k].solve(&mut rhs);
                z.row_mut(k + 1).copy_from_slice(&rhs);
            }
            SemilinearMode::Newton => {
                sys.rhs(z.row(k), &load, &mut rhs);
                let next = newton_step(grid, sys, g, shift, k, z.row(k), &rhs)?;
                z.row_mut(k + 1).copy_from_slice(&next);
            }
        }
        let norm = crate::math::max_abs(z.row(k + 1));
        if !(norm <= INSTABILITY_NORM) {
            return Err(Error::NonlinearInstability { step: k, norm });
        }
    }
    unshift(&mut z, grid, shift);
    Ok(z)
}

fn newton_step(
    grid: &Grid,
    sys: &StepSystem,
    g: &Nonlinearity,
    shift: f64,
    k: usize,
    start: &[f64],
    rhs: &[f64],
) -> Result<Vec<f64>> {
    let n = grid.n_nodes();
    let t = grid.time(k + 1);
    let e = (shift * t).exp();
    let scale = crate::math::max_abs(rhs).max(1.0);
    let mut z = start.to_vec();
    z[0] = 0.0;
    z[n - 1] = 0.0;
    let mut residual = vec![0.0; n];
    let mut last = f64::INFINITY;
    for iter in 0..=NEWTON_MAX_ITERS {
        sys.matrix.matvec(&z, &mut residual);
        let mut jac = sys.matrix.clone();
        for i in 0..n {
            residual[i] -= rhs[i];
            if row_kind(grid, i) == RowKind::Bulk {
                let dx = grid.spacing(grid.side_of(i));
                let v = g.eval(t, grid.x_nodes[i], e * z[i], e * central(grid, &z, i))?;
                let s = sys.row_scale[i];
                residual[i] += s * v.g / e;
                jac.add(i, i, s * v.dg_dxi1);
                jac.add(i, i + 1, s * v.dg_dxi2 / (2.0 * dx));
                jac.add(i, i - 1, -s * v.dg_dxi2 / (2.0 * dx));
            }
        }
        last = crate::math::max_abs(&residual);
        if !last.is_finite() {
            return Err(Error::NonlinearInstability { step: k, norm: last });
        }
        if last <= NEWTON_TOL * scale {
            return Ok(z);
        }
        if iter == NEWTON_MAX_ITERS {
            break;
        }
        let lu = jac.factor().map_err(|_| Error::NewtonDiverged { step: k, residual: last, iterations: iter })?;
        lu.solve(&mut residual);
        z.iter_mut().zip(&residual).for_each(|(zi, d)| *zi -= d);
    }
    Err(Error::NewtonDiverged { step: k, residual: last, iterations: NEWTON_MAX_ITERS })
}

/// Semilinear solve of the problem data with the default shift.
pub fn solve_semilinear_forward(spec: &ProblemSpec, grid: &Grid, mode: SemilinearMode) -> Result<SpaceTimeField> {
    let coeffs = DiscreteCoefficients::sample(spec, grid);
    solve_semilinear_forward_with(
        grid,
        &coeffs,
        spec.nonlinearity.as_ref(),
        default_shift(spec),
        mode,
        &sample_initial(spec, grid),
        &StepLoads::from_spec(spec, grid),
    )
}

/// Level-indexed data of the backward system: sources `f̃` on all levels,
/// `r̃` on all levels.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointData {
    pub f: SpaceTimeField,
    pub r: Vec<f64>,
}

impl AdjointData {
    pub fn zeros(grid: &Grid) -> Self {
        AdjointData { f: SpaceTimeField::zeros(grid), r: vec![0.0; grid.n_levels()] }
    }

    pub fn is_zero(&self) -> bool {
        self.f.is_zero() && self.r.iter().all(|v| *v == 0.0)
    }
}

/// Backward solve of `−ρ∂₀v − a∂₁²v + b∂₁v + cv = f̃` with terminal state
/// `v(T,·)` and interface `[a∂₁v] + M∂₀v = r̃`, by time reversal onto the
/// forward scheme.
pub fn solve_adjoint_backward_with(
    grid: &Grid,
    coeffs: &DiscreteCoefficients,
    shift: f64,
    terminal: &[f64],
    data: &AdjointData,
) -> Result<SpaceTimeField> {
    let n = grid.n_nodes();
    if terminal.len() != n || data.f.n_levels != grid.n_levels() || data.r.len() != grid.n_levels() {
        return Err(Error::ShapeMismatch("adjoint data do not match the grid".into()));
    }
    let scale = crate::math::max_abs(terminal).max(1.0);
    if terminal[0].abs() > 1e-12 * scale || terminal[n - 1].abs() > 1e-12 * scale {
        return Err(Error::InvalidProblem("terminal state must vanish at both ends".into()));
    }
    let reversed = coeffs.time_reversed();
    let steps = grid.n_steps;
    let mut loads = StepLoads::zeros(grid);
    for k in 0..steps {
        loads.bulk.row_mut(k).copy_from_slice(data.f.row(steps - k));
        loads.interface[k] = data.r[steps - k];
    }
    let v_rev = solve_linear_forward_with(grid, &reversed, shift, terminal, &loads)?;
    let mut v = v_rev.clone();
    for k in 0..=steps {
        v.row_mut(k).copy_from_slice(v_rev.row(steps - k));
    }
    Ok(v)
}

pub fn solve_adjoint_backward(
    spec: &ProblemSpec,
    grid: &Grid,
    terminal: &[f64],
    data: &AdjointData,
) -> Result<SpaceTimeField> {
    let coeffs = DiscreteCoefficients::sample(spec, grid);
    solve_adjoint_backward_with(grid, &coeffs, default_shift(spec), terminal, data)
}

/// Level-indexed data of the forward problem for norm comparisons.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyData {
    pub f: SpaceTimeField,
    pub r: Vec<f64>,
    pub w0: Vec<f64>,
}

impl EnergyData {
    pub fn from_spec(spec: &ProblemSpec, grid: &Grid) -> Self {
        EnergyData {
            f: SpaceTimeField::from_fn(grid, |t, x| spec.source(t, x)),
            r: grid.times().iter().map(|t| spec.r.eval(*t)).collect(),
            w0: sample_initial(spec, grid),
        }
    }
}

/// Discrete `H^{1,2}` norm over one side: `w`, `∂₀w`, `∂₁w`, `∂₁²w`.
pub fn h12_norm(grid: &Grid, w: &SpaceTimeField, side: Side) -> Result<f64> {
    let region = match side {
        Side::Plus => Region::Plus,
        Side::Minus => Region::Minus,
    };
    let mut s = grid.discrete_sq_norm(w, None, region)?;
    s += grid.discrete_sq_norm(&w.time_derivative(grid.dt), None, region)?;
    s += grid.discrete_sq_norm(&w.side_derivative(grid, side), None, region)?;
    s += grid.discrete_sq_norm(&w.side_second_derivative(grid, side), None, region)?;
    Ok(s.sqrt())
}

/// Discrete `H¹(0,T)` norm of a level sequence.
pub fn h1_time_norm(grid: &Grid, v: &[f64]) -> f64 {
    let l2: f64 = v.iter().enumerate().map(|(k, x)| grid.time_weight(k) * x * x).sum();
    let d: f64 = v.windows(2).map(|p| (p[1] - p[0]).powi(2) / grid.dt).sum();
    (l2 + d).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyEstimate {
    pub numerator: f64,
    pub denominator: f64,
    pub ratio: f64,
}

/// `(‖w‖_{H^{1,2}(Q₊)} + ‖w‖_{H^{1,2}(Q₋)} + ‖w(·,0)‖_{H¹(0,T)}) /
/// (‖f₁‖ + ‖f₂‖ + ‖w₀‖_{H¹} + ‖r‖)`; zero data give 0.
pub fn energy_estimate_check(solution: &SpaceTimeField, data: &EnergyData, grid: &Grid) -> Result<EnergyEstimate> {
    let numerator = h12_norm(grid, solution, Side::Plus)?
        + h12_norm(grid, solution, Side::Minus)?
        + h1_time_norm(grid, &solution.interface_trace());
    let r_norm = data.r.iter().enumerate().map(|(k, x)| grid.time_weight(k) * x * x).sum::<f64>().sqrt();
    let denominator = grid.discrete_norm(&data.f, None, Region::Plus)?
        + grid.discrete_norm(&data.f, None, Region::Minus)?
        + grid.row_h1_norm(&data.w0)
        + r_norm;
    let ratio = if denominator == 0.0 {
        if numerator == 0.0 {
            0.0
        } else {
            return Err(Error::InvalidProblem(format!("nonzero solution (norm {numerator}) from zero data")));
        }
    } else {
        numerator / denominator
    };
    Ok(EnergyEstimate { numerator, denominator, ratio })
}

/// Itemized discrete energy balance, summed over steps. Every step obeys
/// `kinetic + interface_mass + dissipation + advection + reaction
///  + interface_source − stencil_defect − source_work = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyIdentity {
    pub kinetic: f64,
    pub interface_mass: f64,
    pub dissipation: f64,
    pub advection: f64,
    pub reaction: f64,
    pub interface_source: f64,
    pub stencil_defect: f64,
    pub source_work: f64,
    /// Largest per-step imbalance relative to the largest per-step term.
    pub max_relative_residual: f64,
}

/// Checks the energy balance obtained by multiplying the divided-form rows
/// of step `k` by `h·q_i·z_i^{k+1}` and summing. `z` is the shifted state
/// (`w·e^{−Kx₀}`) and `loads` the physical step data.
pub fn energy_identity(
    grid: &Grid,
    coeffs: &DiscreteCoefficients,
    shift: f64,
    z: &SpaceTimeField,
    loads: &StepLoads,
) -> EnergyIdentity {
    let h = grid.dt;
    let n = grid.n_nodes();
    let ii = grid.interface_index;
    let m = coeffs.mass;
    let shifted = loads.shifted(grid, shift);
    let mut total = EnergyIdentity::default();
    for k in 0..grid.n_steps {
        let l = k + 1;
        let (zn, zo) = (z.row(l), z.row(k));
        let mut kinetic = 0.0;
        let mut advection = 0.0;
        let mut reaction = 0.0;
        let mut work = 0.0;
        for i in 1..n - 1 {
            if i == ii {
                continue;
            }
            let q = grid.quadrature[i];
            let a = coeffs.a.get(l, i);
            let ra = coeffs.rho.get(l, i) / a;
            kinetic += 0.5 * q * ra * (zn[i] * zn[i] - zo[i] * zo[i] + (zn[i] - zo[i]).powi(2));
            advection += h * q * coeffs.b.get(l, i) / a * zn[i] * central(grid, zn, i);
            reaction += h * q * (coeffs.c.get(l, i) + coeffs.rho.get(l, i) * shift) / a * zn[i] * zn[i];
            work += h * q * zn[i] * shifted.get(k, i) / a;
        }
        let mut dissipation = 0.0;
        for i in 0..n - 1 {
            let dx = if i < ii { grid.dx_minus } else { grid.dx_plus };
            dissipation += h * (zn[i + 1] - zn[i]).powi(2) / dx;
        }
        let zi = zn[ii];
        let interface_mass = 0.5 * m * (zi * zi - zo[ii] * zo[ii] + (zi - zo[ii]).powi(2)) + h * m * shift * zi * zi;
        let r_shifted = -shifted.get(k, ii);
        let interface_source = h * r_shifted * zi;
        let (d3p, d3m) = grid.interface_derivatives(zn);
        let d2p = (zn[ii + 1] - zi) / grid.dx_plus;
        let d2m = (zi - zn[ii - 1]) / grid.dx_minus;
        let (ap, am) = (coeffs.a_plus_interface[l], coeffs.a_minus_interface[l]);
        let defect = h * zi * ((ap * d3p - d2p) - (am * d3m - d2m));
        let balance = kinetic + interface_mass + dissipation + advection + reaction + interface_source - defect - work;
        let size = [kinetic, interface_mass, dissipation, advection, reaction, interface_source, defect, work]
            .iter()
            .fold(0.0f64, |s, v| s.max(v.abs()));
        if size > 0.0 {
            total.max_relative_residual = total.max_relative_residual.max(balance.abs() / size);
        }
        total.kinetic += kinetic;
        total.interface_mass += interface_mass;
        total.dissipation += dissipation;
        total.advection += advection;
        total.reaction += reaction;
        total.interface_source += interface_source;
        total.stencil_defect += defect;
        total.source_work += work;
    }
    total
}

/// Returns the shifted state `z = w·e^{−Kx₀}`.
pub fn shift_state(grid: &Grid, w: &SpaceTimeField, shift: f64) -> SpaceTimeField {
    let mut z = w.clone();
    for k in 0..z.n_levels {
        let e = (-shift * grid.time(k)).exp();
        z.row_mut(k).iter_mut().for_each(|v| *v *= e);
    }
    z
}
