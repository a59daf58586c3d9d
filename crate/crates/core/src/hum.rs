//! Penalized least-squares control synthesis.
//!
//! The discrete functional is
//! `J = J₁ + J₂ + J₃ + J₄` with
//! `J₁ = Σ h (T−x₀)⁶e^{−2ψ*_ε}z²` over `Q₊`, `J₂ = Σ h e^{−2ψ*_ε}z²` over `Q₋`,
//! `J₃ = Σ h (T−x₀)^{15}e^{−2ψ*}u²` over `Q_ω` and `J₄ = (1/ε)Σ h π s²`
//! where `s = L̃z − χ_ω u − f̃` is the bulk residual and `π` is either 1 or
//! `m·e^{−2ψ*_ε}`. State sums run over time levels `1..N`, control and
//! residual sums over step rows `0..N−1`.
//!
//! The unknowns are `(s, u)`: given both, `z` follows from one forward
//! march of the divided step operator, so the initial state, the end
//! conditions and the interface law hold exactly. The default solver is a
//! backward Riccati sweep followed by a forward march with state feedback;
//! conjugate gradients on the normal equations are also available, each
//! product costing one forward march and one transposed march.
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::forward::{row_kind, DiscreteCoefficients, RowForm, RowKind, StepOperators};
use crate::grid::{Grid, SpaceTimeField};
use crate::model::ProblemSpec;
use crate::weights::WeightSystem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PenaltyWeighting {
    /// `π = m·e^{−2ψ*_ε}`.
    Weighted,
    /// `π = 1`.
    #[default]
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    /// Backward Riccati sweep over the time steps, then a forward march with
    /// state feedback. Direct; no iteration.
    #[default]
    Riccati,
    /// Conjugate gradients on the normal equations.
    Cg,
    /// Conjugate gradients with the diagonal of the regularization block plus
    /// a probed estimate of the state block as preconditioner.
    JacobiCg,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// CG stopping tolerance on the relative residual.
    pub tolerance: f64,
    /// `None` means `50·√dof`.
    pub max_iterations: Option<usize>,
    pub method: Method,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tolerance: 1e-10, max_iterations: None, method: Method::default() }
    }
}

/// Level-indexed data of the controlled problem in physical form.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlData {
    /// Source on every time level.
    pub f: SpaceTimeField,
    /// Interface source on every time level.
    pub r: Vec<f64>,
    pub z0: Vec<f64>,
}

impl ControlData {
    pub fn zeros(grid: &Grid) -> Self {
        ControlData { f: SpaceTimeField::zeros(grid), r: vec![0.0; grid.n_levels()], z0: vec![0.0; grid.n_nodes()] }
    }

    pub fn from_spec(spec: &ProblemSpec, grid: &Grid) -> Self {
        ControlData {
            f: SpaceTimeField::from_fn(grid, |x0, x1| spec.source(x0, x1)),
            r: grid.times().iter().map(|t| spec.r.eval(*t)).collect(),
            z0: crate::forward::sample_initial(spec, grid),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.f.is_zero() && self.r.iter().all(|v| *v == 0.0) && self.z0.iter().all(|v| *v == 0.0)
    }

    pub fn scaled(&self, s: f64) -> Self {
        ControlData {
            f: self.f.scaled(s),
            r: self.r.iter().map(|v| v * s).collect(),
            z0: self.z0.iter().map(|v| v * s).collect(),
        }
    }
}

/// A linear penalized control problem on a fixed grid.
#[derive(Debug, Clone)]
pub struct ControlProblem {
    pub grid: Grid,
    pub coefficients: DiscreteCoefficients,
    pub weights: WeightSystem,
    pub data: ControlData,
    pub epsilon: f64,
    pub penalty: PenaltyWeighting,
    pub solver: SolverOptions,
}

impl ControlProblem {
    /// Linear part of `spec` with its own data.
    pub fn new(spec: &ProblemSpec, grid: &Grid, weights: &WeightSystem, epsilon: f64) -> Result<Self> {
        Self::with_parts(
            grid.clone(),
            DiscreteCoefficients::sample(spec, grid),
            *weights,
            ControlData::from_spec(spec, grid),
            epsilon,
        )
    }

    pub fn with_parts(
        grid: Grid,
        coefficients: DiscreteCoefficients,
        weights: WeightSystem,
        data: ControlData,
        epsilon: f64,
    ) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidProblem(format!("epsilon must be positive, got {epsilon}")));
        }
        if data.f.n_levels != grid.n_levels() || data.f.n_nodes != grid.n_nodes() {
            return Err(Error::ShapeMismatch("control source does not match the grid".into()));
        }
        if data.r.len() != grid.n_levels() || data.z0.len() != grid.n_nodes() {
            return Err(Error::ShapeMismatch("interface source or initial state does not match the grid".into()));
        }
        Ok(ControlProblem {
            grid,
            coefficients,
            weights,
            data,
            epsilon,
            penalty: PenaltyWeighting::default(),
            solver: SolverOptions::default(),
        })
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        let mut out = self.clone();
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidProblem(format!("epsilon must be positive, got {epsilon}")));
        }
        out.epsilon = epsilon;
        Ok(out)
    }
}

/// Indices of the unknowns and the diagonal weights of `J`.
struct Layout {
    steps: usize,
    n_nodes: usize,
    bulk: Vec<usize>,
    control: Vec<usize>,
    /// `h·q·(state weight)` on levels `0..=N` (zero at level 0).
    state_plus: SpaceTimeField,
    state_minus: SpaceTimeField,
    /// `h·q·(T−x₀)^{15}e^{−2ψ*}` on step rows.
    control_weight: SpaceTimeField,
    /// `h·q·π/ε` on step rows.
    penalty_weight: SpaceTimeField,
}

impl Layout {
    fn new(cp: &ControlProblem) -> Result<Self> {
        let grid = &cp.grid;
        let ws = &cp.weights;
        let n = grid.n_nodes();
        let steps = grid.n_steps;
        let h = grid.dt;
        let t_final = grid.geometry.t_final;
        let bulk: Vec<usize> = (0..n).filter(|&i| row_kind(grid, i) == RowKind::Bulk).collect();
        let control: Vec<usize> =
            (0..n).filter(|&i| grid.control_mask[i] && row_kind(grid, i) == RowKind::Bulk).collect();

        let mut state_plus = SpaceTimeField::zeros(grid);
        let mut state_minus = SpaceTimeField::zeros(grid);
        for l in 1..=steps {
            let t = grid.time(l);
            for i in 0..n {
                let x = grid.x_nodes[i];
                let e = ws.power_exp_eps(t, x, 0.0);
                let qp = grid.quadrature_plus[i];
                let qm = grid.quadrature_minus[i];
                if qp > 0.0 {
                    state_plus.set(l, i, h * qp * crate::weights::power_weight(t_final, t, 6.0) * e);
                }
                if qm > 0.0 {
                    state_minus.set(l, i, h * qm * e);
                }
            }
        }
        let mut control_weight = SpaceTimeField::zeros_with_levels(grid, steps);
        let mut penalty_weight = SpaceTimeField::zeros_with_levels(grid, steps);
        for k in 0..steps {
            let t = grid.time(k);
            for &i in &bulk {
                let x = grid.x_nodes[i];
                let q = grid.quadrature[i];
                let pi = match cp.penalty {
                    PenaltyWeighting::Plain => 1.0,
                    PenaltyWeighting::Weighted => ws.m(t, x) * ws.power_exp_eps(t, x, 0.0),
                };
                penalty_weight.set(k, i, h * q * pi / cp.epsilon);
            }
            for &i in &control {
                control_weight.set(k, i, h * grid.quadrature[i] * ws.mu2(t, grid.x_nodes[i]));
            }
        }
        for (name, f) in [
            ("state weight", &state_plus),
            ("state weight", &state_minus),
            ("control weight", &control_weight),
            ("penalty weight", &penalty_weight),
        ] {
            if f.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("{name} overflows on the grid")));
            }
        }
        for k in 0..steps {
            if control.iter().any(|&i| control_weight.get(k, i) <= 0.0) {
                return Err(Error::InvalidWeights {
                    parameter: "s_hat",
                    reason: "control weight underflows to zero on the control region".into(),
                });
            }
            if bulk.iter().any(|&i| penalty_weight.get(k, i) <= 0.0) {
                return Err(Error::InvalidWeights {
                    parameter: "s_hat",
                    reason: "penalty weight underflows to zero".into(),
                });
            }
        }
        Ok(Layout { steps, n_nodes: n, bulk, control, state_plus, state_minus, control_weight, penalty_weight })
    }

    fn dof(&self) -> usize {
        self.steps * (self.bulk.len() + self.control.len())
    }

    fn split<'a>(&self, x: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        x.split_at(self.steps * self.bulk.len())
    }

    /// Step loads `s + χu` on bulk rows.
    fn loads(&self, x: &[f64], grid: &Grid) -> SpaceTimeField {
        let (s, u) = self.split(x);
        let mut out = SpaceTimeField::zeros_with_levels(grid, self.steps);
        let (nb, nc) = (self.bulk.len(), self.control.len());
        for k in 0..self.steps {
            for (j, &i) in self.bulk.iter().enumerate() {
                out.set(k, i, s[k * nb + j]);
            }
            for (j, &i) in self.control.iter().enumerate() {
                let v = out.get(k, i) + u[k * nc + j];
                out.set(k, i, v);
            }
        }
        out
    }

    /// `h·q·W ⊙ z` on every level.
    fn state_gradient(&self, z: &SpaceTimeField) -> SpaceTimeField {
        let mut g = z.clone();
        for (j, v) in g.values.iter_mut().enumerate() {
            *v *= self.state_plus.values[j] + self.state_minus.values[j];
        }
        g
    }

    /// Gathers `μ` on the unknowns and adds the diagonal block `D x`.
    fn gather(&self, mu: &SpaceTimeField, x: Option<&[f64]>, out: &mut [f64]) {
        let (nb, nc) = (self.bulk.len(), self.control.len());
        let off = self.steps * nb;
        for k in 0..self.steps {
            for (j, &i) in self.bulk.iter().enumerate() {
                out[k * nb + j] = mu.get(k, i);
            }
            for (j, &i) in self.control.iter().enumerate() {
                out[off + k * nc + j] = mu.get(k, i);
            }
        }
        if let Some(x) = x {
            for k in 0..self.steps {
                for (j, &i) in self.bulk.iter().enumerate() {
                    out[k * nb + j] += self.penalty_weight.get(k, i) * x[k * nb + j];
                }
                for (j, &i) in self.control.iter().enumerate() {
                    out[off + k * nc + j] += self.control_weight.get(k, i) * x[off + k * nc + j];
                }
            }
        }
    }

    /// Weight of the combined load on each bulk row of step `k`.
    fn load_weights(&self, k: usize, control_slot: &[usize]) -> Vec<f64> {
        let mut d: Vec<f64> = self.bulk.iter().map(|&i| self.penalty_weight.get(k, i)).collect();
        for &j in control_slot {
            let i = self.bulk[j];
            let (ws, wu) = (1.0 / self.penalty_weight.get(k, i), 1.0 / self.control_weight.get(k, i));
            d[j] = 1.0 / (ws + wu);
        }
        d
    }

    fn regularization_diagonal(&self) -> Vec<f64> {
        let (nb, nc) = (self.bulk.len(), self.control.len());
        let mut d = vec![0.0; self.dof()];
        let off = self.steps * nb;
        for k in 0..self.steps {
            for (j, &i) in self.bulk.iter().enumerate() {
                d[k * nb + j] = self.penalty_weight.get(k, i);
            }
            for (j, &i) in self.control.iter().enumerate() {
                d[off + k * nc + j] = self.control_weight.get(k, i);
            }
        }
        d
    }
}

/// Named residuals of the discrete optimality system.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimalityReport {
    /// Transposed step equations on bulk unknowns away from the interface.
    pub adjoint_pde: f64,
    /// `(T−x₀)^{15}e^{−2ψ*}u = p` on the control rows.
    pub control_law: f64,
    /// Last transposed step with `p(T) = 0`.
    pub terminal: f64,
    /// Transposed step equations next to the interface, where `p(·,0)` enters.
    pub interface: f64,
    /// `‖Dx + BᵀWz‖` at the returned point, relative to the larger part.
    pub gradient: f64,
}

impl OptimalityReport {
    pub fn max(&self) -> f64 {
        [self.adjoint_pde, self.control_law, self.terminal, self.interface].iter().fold(0.0, |m, v| m.max(*v))
    }

    pub fn entries(&self) -> [(&'static str, f64); 5] {
        [
            ("adjoint_pde", self.adjoint_pde),
            ("control_law", self.control_law),
            ("terminal", self.terminal),
            ("interface", self.interface),
            ("gradient", self.gradient),
        ]
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        self.max() <= tolerance
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlSolution {
    /// State on every level.
    pub z: SpaceTimeField,
    /// Control on step rows, zero off the control mask.
    pub u: SpaceTimeField,
    /// Bulk residual `L̃z − χu − f̃` on step rows.
    pub s: SpaceTimeField,
    /// Multiplier on step rows `0..N−1` plus the terminal level (zero).
    pub p: SpaceTimeField,
    pub j_terms: [f64; 4],
    pub j_value: f64,
    pub terminal_norm: f64,
    pub residual_pde: f64,
    /// Zero for the direct method.
    pub cg_iterations: usize,
    /// CG residual, or the relative gradient norm for the direct method.
    pub relative_residual: f64,
}

/// Result of a preconditioned CG run.
#[derive(Debug, Clone, PartialEq)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

/// Preconditioned conjugate gradients for an SPD operator.
#[allow(clippy::type_complexity)]
pub fn conjugate_gradient(
    apply: &mut dyn FnMut(&[f64], &mut [f64]) -> Result<()>,
    b: &[f64],
    mut precondition: Option<&mut dyn FnMut(&[f64], &mut [f64])>,
    tolerance: f64,
    max_iterations: usize,
) -> Result<CgOutcome> {
    let n = b.len();
    let bnorm = crate::math::norm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(CgOutcome { x, iterations: 0, relative_residual: 0.0, converged: true });
    }
    let mut precondition = |r: &[f64], z: &mut [f64]| match precondition.as_mut() {
        Some(m) => m(r, z),
        None => z.copy_from_slice(r),
    };
    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut rz = crate::math::dot(&r, &z);
    let rz0 = rz;
    let mut ap = vec![0.0; n];
    let mut rel = 1.0;
    for it in 0..max_iterations {
        apply(&p, &mut ap)?;
        let pap = crate::math::dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::CgNotConverged { iterations: it, relative_residual: rel });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        precondition(&r, &mut z);
        let rz_new = crate::math::dot(&r, &z);
        rel = (rz_new.abs() / rz0).sqrt();
        if rel <= tolerance {
            return Ok(CgOutcome { x, iterations: it + 1, relative_residual: rel, converged: true });
        }
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Ok(CgOutcome { x, iterations: max_iterations, relative_residual: rel, converged: false })
}

/// Precomputed operators of one control problem.
struct Solver<'a> {
    cp: &'a ControlProblem,
    ops: StepOperators,
    layout: Layout,
}

impl<'a> Solver<'a> {
    fn new(cp: &'a ControlProblem) -> Result<Self> {
        let ops = StepOperators::new(&cp.grid, &cp.coefficients, 0.0, RowForm::Divided)?;
        let layout = Layout::new(cp)?;
        Ok(Solver { cp, ops, layout })
    }

    /// Data loads: `f̃ = f/a` on bulk rows and `−r` on the interface row.
    fn data_loads(&self) -> SpaceTimeField {
        let grid = &self.cp.grid;
        let mut out = SpaceTimeField::zeros_with_levels(grid, grid.n_steps);
        for k in 0..grid.n_steps {
            for i in 0..grid.n_nodes() {
                let v = match row_kind(grid, i) {
                    RowKind::Dirichlet => 0.0,
                    RowKind::Interface => -self.cp.data.r[k],
                    RowKind::Bulk => self.cp.data.f.get(k, i) / self.cp.coefficients.a.get(k + 1, i),
                };
                out.set(k, i, v);
            }
        }
        out
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let zero = vec![0.0; self.layout.n_nodes];
        let z = self.ops.forward(&zero, &self.layout.loads(x, &self.cp.grid))?;
        let mu = self.ops.adjoint(&self.layout.state_gradient(&z))?;
        self.layout.gather(&mu, Some(x), out);
        Ok(())
    }

    /// Diagonal of the state block estimated column by column on a few
    /// time rows and interpolated in time.
    fn jacobi(&self) -> Result<Vec<f64>> {
        let mut diag = self.layout.regularization_diagonal();
        let (nb, nc) = (self.layout.bulk.len(), self.layout.control.len());
        let steps = self.layout.steps;
        let off = steps * nb;
        let probes: Vec<usize> = {
            let mut v: Vec<usize> = (0..8).map(|j| (j * (steps - 1)) / 7).collect();
            v.dedup();
            v
        };
        let zero = vec![0.0; self.layout.n_nodes];
        let n = self.layout.n_nodes;
        // diag(BᵀWB) at (k, i) = Σ_l W_l |z_l|² for a unit load at (k, i).
        let mut table = vec![vec![0.0; n]; probes.len()];
        for (pi, &k) in probes.iter().enumerate() {
            for &i in &self.layout.bulk {
                let mut loads = SpaceTimeField::zeros_with_levels(&self.cp.grid, steps);
                loads.set(k, i, 1.0);
                let z = self.ops.forward(&zero, &loads)?;
                let g = self.layout.state_gradient(&z);
                table[pi][i] = g.values.iter().zip(&z.values).map(|(a, b)| a * b).sum();
            }
        }
        let interp = |k: usize, i: usize| -> f64 {
            let j = probes.iter().position(|&p| p >= k).unwrap_or(probes.len() - 1);
            if probes[j] == k || j == 0 {
                table[j][i]
            } else {
                let (k0, k1) = (probes[j - 1] as f64, probes[j] as f64);
                let w = (k as f64 - k0) / (k1 - k0);
                (1.0 - w) * table[j - 1][i] + w * table[j][i]
            }
        };
        for k in 0..steps {
            for (j, &i) in self.layout.bulk.iter().enumerate() {
                diag[k * nb + j] += interp(k, i);
            }
            for (j, &i) in self.layout.control.iter().enumerate() {
                diag[off + k * nc + j] += interp(k, i);
            }
        }
        Ok(diag.into_iter().map(|d| if d > 0.0 { 1.0 / d } else { 1.0 }).collect())
    }

    fn solve(&self) -> Result<ControlSolution> {
        let opts = &self.cp.solver;
        if opts.method == Method::Riccati {
            let ric = Riccati::new(&self.ops, &self.layout)?;
            let x = ric.closed_loop(&self.ops, &self.layout, &self.data_loads(), &self.cp.data.z0);
            return self.assemble(&x, 0, None);
        }
        let z_free = self.ops.forward(&self.cp.data.z0, &self.data_loads())?;
        let mu_free = self.ops.adjoint(&self.layout.state_gradient(&z_free))?;
        let dof = self.layout.dof();
        let mut b = vec![0.0; dof];
        self.layout.gather(&mu_free, None, &mut b);
        b.iter_mut().for_each(|v| *v = -*v);

        let max_iterations = opts.max_iterations.unwrap_or_else(|| (50.0 * (dof as f64).sqrt()).ceil() as usize).max(1);
        let outcome = if opts.method == Method::JacobiCg {
            let d = self.jacobi()?;
            let mut m =
                |r: &[f64], z: &mut [f64]| z.iter_mut().zip(r.iter().zip(&d)).for_each(|(z, (r, d))| *z = r * d);
            conjugate_gradient(&mut |x, y| self.apply(x, y), &b, Some(&mut m), opts.tolerance, max_iterations)?
        } else {
            conjugate_gradient(&mut |x, y| self.apply(x, y), &b, None, opts.tolerance, max_iterations)?
        };
        if !outcome.converged {
            return Err(Error::CgNotConverged {
                iterations: outcome.iterations,
                relative_residual: outcome.relative_residual,
            });
        }
        self.assemble(&outcome.x, outcome.iterations, Some(outcome.relative_residual))
    }

    /// `‖Dx + Bᵀ W z‖` relative to the larger of its two parts.
    fn gradient_residual(&self, x: &[f64], z: &SpaceTimeField) -> Result<f64> {
        let lay = &self.layout;
        let mu = self.ops.adjoint(&lay.state_gradient(z))?;
        let mut state = vec![0.0; lay.dof()];
        lay.gather(&mu, None, &mut state);
        let mut full = vec![0.0; lay.dof()];
        lay.gather(&mu, Some(x), &mut full);
        let reg: Vec<f64> = full.iter().zip(&state).map(|(f, s)| f - s).collect();
        let scale = crate::math::norm2(&state).max(crate::math::norm2(&reg));
        let r = crate::math::norm2(&full);
        Ok(if scale > 0.0 { r / scale } else { r })
    }

    fn assemble(&self, x: &[f64], iterations: usize, rel: Option<f64>) -> Result<ControlSolution> {
        let grid = &self.cp.grid;
        let lay = &self.layout;
        let mut loads = self.data_loads();
        loads.axpy(1.0, &lay.loads(x, grid))?;
        let z = self.ops.forward(&self.cp.data.z0, &loads)?;

        let (s_flat, u_flat) = lay.split(x);
        let mut s = SpaceTimeField::zeros_with_levels(grid, lay.steps);
        let mut u = SpaceTimeField::zeros_with_levels(grid, lay.steps);
        let (nb, nc) = (lay.bulk.len(), lay.control.len());
        for k in 0..lay.steps {
            for (j, &i) in lay.bulk.iter().enumerate() {
                s.set(k, i, s_flat[k * nb + j]);
            }
            for (j, &i) in lay.control.iter().enumerate() {
                u.set(k, i, u_flat[k * nc + j]);
            }
        }

        let weighted = |w: &SpaceTimeField, f: &SpaceTimeField| -> f64 {
            w.values.iter().zip(&f.values).map(|(w, v)| w * v * v).sum()
        };
        let j1 = weighted(&lay.state_plus, &z);
        let j2 = weighted(&lay.state_minus, &z);
        let j3 = weighted(&lay.control_weight, &u);
        let j4 = weighted(&lay.penalty_weight, &s);

        // p = π s/ε on bulk rows; the interface value solves the interface
        // row of the transposed step.
        let mut p = SpaceTimeField::zeros_with_levels(grid, lay.steps + 1);
        for k in 0..lay.steps {
            for &i in &lay.bulk {
                let q = grid.dt * grid.quadrature[i];
                p.set(k, i, lay.penalty_weight.get(k, i) * s.get(k, i) / q);
            }
        }
        let g = lay.state_gradient(&z);
        let ii = grid.interface_index;
        for k in (0..lay.steps).rev() {
            let mu = multiplier_row(grid, &p, k);
            let a = &self.ops.systems[k].matrix;
            let mut rhs = g.get(k + 1, ii);
            if k + 1 < lay.steps {
                rhs += self.ops.systems[k + 1].mass[ii] * multiplier_row(grid, &p, k + 1)[ii];
            }
            let off: f64 = (ii - 2..=ii + 2).filter(|&j| j != ii).map(|j| a.get(j, ii) * mu[j]).sum();
            let mu_i = (rhs - off) / a.get(ii, ii);
            p.set(k, ii, -mu_i / grid.dt);
        }

        let terminal_norm = grid.row_norm(z.row(lay.steps));
        let residual_pde = s
            .values
            .iter()
            .enumerate()
            .map(|(j, v)| grid.dt * grid.quadrature[j % lay.n_nodes] * v * v)
            .sum::<f64>()
            .sqrt();
        let j_terms = [j1, j2, j3, j4];
        let relative_residual = match rel {
            Some(r) => r,
            None => self.gradient_residual(x, &z)?,
        };
        Ok(ControlSolution {
            z,
            u,
            s,
            p,
            j_terms,
            j_value: j1 + j2 + j3 + j4,
            terminal_norm,
            residual_pde,
            cg_iterations: iterations,
            relative_residual,
        })
    }
}

/// One step of the Riccati factorization: `z^{k+1} = F z^k + G x_k`.
struct RiccatiStep {
    f: DMatrix<f64>,
    g: DMatrix<f64>,
    /// `H⁻¹GᵀP_{k+1}F`
    gain: DMatrix<f64>,
    h: StepInverse,
    p_next: DMatrix<f64>,
}

/// Factorization of `S H S` with `S = diag(H)^{−1/2}`.
struct StepInverse {
    scale: DVector<f64>,
    factor: Factor,
}

enum Factor {
    Cholesky(Cholesky<f64, Dyn>),
    Lu(nalgebra::linalg::LU<f64, Dyn, Dyn>),
}

impl StepInverse {
    fn new(mut h: DMatrix<f64>, step: usize) -> Result<Self> {
        let scale = DVector::from_fn(h.nrows(), |i, _| {
            let d = h[(i, i)];
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                1.0
            }
        });
        for j in 0..h.ncols() {
            for i in 0..h.nrows() {
                h[(i, j)] *= scale[i] * scale[j];
            }
        }
        let factor = match Cholesky::new(h.clone()) {
            Some(c) => Factor::Cholesky(c),
            None => {
                let lu = h.lu();
                if !lu.is_invertible() {
                    return Err(Error::SingularMatrix { step, pivot_row: 0 });
                }
                Factor::Lu(lu)
            }
        };
        Ok(StepInverse { scale, factor })
    }

    fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        for j in 0..x.ncols() {
            for i in 0..x.nrows() {
                x[(i, j)] *= self.scale[i];
            }
        }
        let mut y = match &self.factor {
            Factor::Cholesky(c) => c.solve(&x),
            Factor::Lu(l) => l.solve(&x).unwrap_or(x),
        };
        for j in 0..y.ncols() {
            for i in 0..y.nrows() {
                y[(i, j)] *= self.scale[i];
            }
        }
        y
    }

    fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let m = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
        DVector::from_column_slice(self.solve(&m).as_slice())
    }
}

/// Backward sweep for the linear-quadratic problem `min Σ zᵀWz + xᵀDx`.
///
/// On a control node `s` and `u` enter the same load `v = s + u`; for fixed
/// `v` the split is explicit, so the sweep runs on `v` alone with weight
/// `(1/d_s + 1/d_u)⁻¹`.
struct Riccati {
    steps: Vec<RiccatiStep>,
    /// Position of each control node in the bulk list.
    control_slot: Vec<usize>,
}

impl Riccati {
    fn new(ops: &StepOperators, lay: &Layout) -> Result<Self> {
        let n = lay.n_nodes;
        let nb = lay.bulk.len();
        let control_slot: Vec<usize> =
            lay.control.iter().map(|i| lay.bulk.iter().position(|b| b == i).unwrap_or(0)).collect();
        let state_weight = |l: usize| -> DVector<f64> {
            DVector::from_fn(n, |i, _| lay.state_plus.get(l, i) + lay.state_minus.get(l, i))
        };
        let mut p = DMatrix::from_diagonal(&state_weight(lay.steps));
        let mut out: Vec<RiccatiStep> = Vec::with_capacity(lay.steps);
        let mut col = vec![0.0; n];
        for k in (0..lay.steps).rev() {
            let sys = &ops.systems[k];
            let mut f = DMatrix::zeros(n, n);
            for j in 0..n {
                if sys.mass[j] == 0.0 {
                    continue;
                }
                col.iter_mut().for_each(|v| *v = 0.0);
                col[j] = sys.mass[j];
                ops.solve_step(k, &mut col);
                f.set_column(j, &DVector::from_column_slice(&col));
            }
            let mut g = DMatrix::zeros(n, nb);
            for (j, &i) in lay.bulk.iter().enumerate() {
                col.iter_mut().for_each(|v| *v = 0.0);
                col[i] = 1.0;
                ops.solve_step(k, &mut col);
                g.set_column(j, &DVector::from_column_slice(&col));
            }
            let pg = &p * &g;
            let mut h = g.transpose() * &pg;
            let d = lay.load_weights(k, &control_slot);
            for j in 0..nb {
                h[(j, j)] += d[j];
            }
            let h = StepInverse::new(h, k)?;
            let pf = &p * &f;
            let gain = h.solve(&(g.transpose() * &pf));
            let mut next = f.transpose() * &pf - pf.transpose() * &g * &gain;
            let p_next = p.clone();
            next = (&next + next.transpose()) * 0.5;
            if k > 0 {
                for i in 0..n {
                    next[(i, i)] += lay.state_plus.get(k, i) + lay.state_minus.get(k, i);
                }
            }
            p = next;
            out.push(RiccatiStep { f, g, gain, h, p_next });
        }
        out.reverse();
        Ok(Riccati { steps: out, control_slot })
    }

    /// Minimizer for the affine dynamics `z^{k+1} = F z^k + G v_k + A_k⁻¹d_k`,
    /// marched forward with state feedback.
    fn closed_loop(&self, ops: &StepOperators, lay: &Layout, data: &SpaceTimeField, z0: &[f64]) -> Vec<f64> {
        let (nb, nc) = (lay.bulk.len(), lay.control.len());
        let off = lay.steps * nb;
        let n = lay.n_nodes;
        let mut q = DVector::zeros(n);
        let mut cs: Vec<DVector<f64>> = Vec::with_capacity(lay.steps);
        for k in (0..lay.steps).rev() {
            let st = &self.steps[k];
            let mut e = data.row(k).to_vec();
            ops.solve_step(k, &mut e);
            let y = &st.p_next * DVector::from_vec(e) + &q;
            let c = st.g.transpose() * &y;
            q = st.f.transpose() * &y - st.gain.transpose() * &c;
            cs.push(c);
        }
        cs.reverse();
        let mut x = vec![0.0; lay.dof()];
        let mut z = z0.to_vec();
        let mut load = vec![0.0; n];
        for (k, st) in self.steps.iter().enumerate() {
            let v = -(&st.gain * DVector::from_column_slice(&z)) - st.h.solve_vec(&cs[k]);
            load.copy_from_slice(data.row(k));
            for (j, &i) in lay.bulk.iter().enumerate() {
                x[k * nb + j] = v[j];
                load[i] += v[j];
            }
            for (c, &j) in self.control_slot.iter().enumerate() {
                let i = lay.bulk[j];
                let (ws, wu) = (1.0 / lay.penalty_weight.get(k, i), 1.0 / lay.control_weight.get(k, i));
                let mu = v[j] / (ws + wu);
                x[k * nb + j] = mu * ws;
                x[off + k * nc + c] = mu * wu;
            }
            let mut next = vec![0.0; n];
            ops.systems[k].rhs(&z, &load, &mut next);
            ops.solve_step(k, &mut next);
            z = next;
        }
        x
    }
}

/// `μ_k = −h·q·p_k` on bulk rows and `−h·p_k` on the interface row.
fn multiplier_row(grid: &Grid, p: &SpaceTimeField, k: usize) -> Vec<f64> {
    (0..grid.n_nodes())
        .map(|i| match row_kind(grid, i) {
            RowKind::Dirichlet => 0.0,
            RowKind::Interface => -grid.dt * p.get(k, i),
            RowKind::Bulk => -grid.dt * grid.quadrature[i] * p.get(k, i),
        })
        .collect()
}

/// Minimizes the penalized functional.
pub fn solve_penalized_control(cp: &ControlProblem) -> Result<ControlSolution> {
    Solver::new(cp)?.solve()
}

/// Evaluates the discrete optimality system at `sol`.
pub fn recover_adjoint_and_check(sol: &ControlSolution, cp: &ControlProblem) -> Result<OptimalityReport> {
    let solver = Solver::new(cp)?;
    let grid = &cp.grid;
    let lay = &solver.layout;
    let n = lay.n_nodes;
    let ii = grid.interface_index;
    let g = lay.state_gradient(&sol.z);

    let mut adjoint_pde: f64 = 0.0;
    let mut interface: f64 = 0.0;
    let mut terminal: f64 = 0.0;
    let mut scale: f64 = 0.0;
    let mut residuals = vec![vec![0.0; n]; lay.steps];
    for k in 0..lay.steps {
        let mu = multiplier_row(grid, &sol.p, k);
        let mut atmu = vec![0.0; n];
        solver.ops.systems[k].matrix.matvec_transpose(&mu, &mut atmu);
        let next = if k + 1 < lay.steps { multiplier_row(grid, &sol.p, k + 1) } else { vec![0.0; n] };
        let mass = if k + 1 < lay.steps { &solver.ops.systems[k + 1].mass[..] } else { &[][..] };
        for i in 1..n - 1 {
            let carried = if mass.is_empty() { 0.0 } else { mass[i] * next[i] };
            residuals[k][i] = atmu[i] - g.get(k + 1, i) - carried;
            scale = scale.max(atmu[i].abs()).max(g.get(k + 1, i).abs()).max(carried.abs());
        }
    }
    let scale = if scale > 0.0 { scale } else { 1.0 };
    for (k, row) in residuals.iter().enumerate() {
        for i in 1..n - 1 {
            let v = row[i].abs() / scale;
            if k + 1 == lay.steps {
                terminal = terminal.max(v);
            } else if i + 2 >= ii && i <= ii + 2 {
                interface = interface.max(v);
            } else {
                adjoint_pde = adjoint_pde.max(v);
            }
        }
    }

    let mut control_law: f64 = 0.0;
    let mut law_scale: f64 = 0.0;
    for k in 0..lay.steps {
        let t = grid.time(k);
        for &i in &lay.control {
            let lhs = cp.weights.mu2(t, grid.x_nodes[i]) * sol.u.get(k, i);
            let rhs = sol.p.get(k, i);
            control_law = control_law.max((lhs - rhs).abs());
            law_scale = law_scale.max(lhs.abs()).max(rhs.abs());
        }
    }
    let control_law = if law_scale > 0.0 { control_law / law_scale } else { control_law };

    let gradient = solver.gradient_residual(&flatten(lay, &sol.s, &sol.u), &sol.z)?;
    Ok(OptimalityReport { adjoint_pde, control_law, terminal, interface, gradient })
}

fn flatten(lay: &Layout, s: &SpaceTimeField, u: &SpaceTimeField) -> Vec<f64> {
    let (nb, nc) = (lay.bulk.len(), lay.control.len());
    let mut x = vec![0.0; lay.dof()];
    let off = lay.steps * nb;
    for k in 0..lay.steps {
        for (j, &i) in lay.bulk.iter().enumerate() {
            x[k * nb + j] = s.get(k, i);
        }
        for (j, &i) in lay.control.iter().enumerate() {
            x[off + k * nc + j] = u.get(k, i);
        }
    }
    x
}

/// Both sides of the duality identity and their relative gap.
#[derive(Debug, Clone, PartialEq)]
pub struct DualityReport {
    pub j_value: f64,
    /// `−(p, f̃)`
    pub source_term: f64,
    /// `−((ρ/a)p(0,·), z₀) − M p(0,0) z₀(0)`
    pub initial_term: f64,
    /// `(r, p(·,0))`
    pub interface_term: f64,
    pub gap: f64,
}

/// `J = −(p,f̃) − ((ρ/a)p(0,·),z₀) − M p(0,0)z₀(0) + (r,p(·,0))` at the optimum.
pub fn duality_identity(sol: &ControlSolution, cp: &ControlProblem) -> Result<DualityReport> {
    let grid = &cp.grid;
    let ops = StepOperators::new(grid, &cp.coefficients, 0.0, RowForm::Divided)?;
    let h = grid.dt;
    let mut source_term = 0.0;
    let mut interface_term = 0.0;
    for k in 0..grid.n_steps {
        for i in 0..grid.n_nodes() {
            match row_kind(grid, i) {
                RowKind::Bulk => {
                    let ft = cp.data.f.get(k, i) / cp.coefficients.a.get(k + 1, i);
                    source_term -= h * grid.quadrature[i] * sol.p.get(k, i) * ft;
                }
                RowKind::Interface => interface_term += h * cp.data.r[k] * sol.p.get(k, i),
                RowKind::Dirichlet => {}
            }
        }
    }
    let mass0 = &ops.systems[0].mass;
    let mut initial_term = 0.0;
    for i in 0..grid.n_nodes() {
        let w = match row_kind(grid, i) {
            RowKind::Bulk => grid.quadrature[i],
            RowKind::Interface => 1.0,
            RowKind::Dirichlet => 0.0,
        };
        initial_term -= w * h * mass0[i] * sol.p.get(0, i) * cp.data.z0[i];
    }
    let rhs = source_term + initial_term + interface_term;
    let denom = sol.j_value.abs() + rhs.abs();
    let gap = if denom > 0.0 { (sol.j_value - rhs).abs() / denom } else { 0.0 };
    Ok(DualityReport { j_value: sol.j_value, source_term, initial_term, interface_term, gap })
}

/// One row of an ε-sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub epsilon: f64,
    pub outcome: core::result::Result<SweepValues, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepValues {
    pub terminal_norm: f64,
    pub j_terms: [f64; 4],
    pub pde_residual: f64,
    pub cg_iterations: usize,
}

/// Solves once per `ε`; failures are recorded per row.
pub fn epsilon_sweep(base: &ControlProblem, epsilons: &[f64]) -> Result<Vec<SweepRow>> {
    if epsilons.iter().any(|e| !(*e > 0.0)) || epsilons.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidProblem("epsilons must be positive and strictly decreasing".into()));
    }
    Ok(epsilons
        .iter()
        .map(|&eps| {
            let outcome = base
                .with_epsilon(eps)
                .and_then(|cp| solve_penalized_control(&cp))
                .map(|sol| SweepValues {
                    terminal_norm: sol.terminal_norm,
                    j_terms: sol.j_terms,
                    pde_residual: sol.residual_pde,
                    cg_iterations: sol.cg_iterations,
                })
                .map_err(|e| format!("{e}"));
            SweepRow { epsilon: eps, outcome }
        })
        .collect())
}

/// Ratio of the weighted state norm `J₁ + J₂` to the weighted data norm
/// `Σ h q m e^{−2ψ*_ε} f̃² + ‖z₀‖² + Σ h r²`.
pub fn a_priori_ratio(sol: &ControlSolution, cp: &ControlProblem) -> f64 {
    let grid = &cp.grid;
    let ws = &cp.weights;
    let mut data = 0.0;
    for k in 0..grid.n_steps {
        let t = grid.time(k);
        for i in 0..grid.n_nodes() {
            if row_kind(grid, i) == RowKind::Bulk {
                let x = grid.x_nodes[i];
                let ft = cp.data.f.get(k, i) / cp.coefficients.a.get(k + 1, i);
                data += grid.dt * grid.quadrature[i] * ws.m(t, x) * ws.power_exp_eps(t, x, 0.0) * ft * ft;
            }
        }
        data += grid.dt * cp.data.r[k] * cp.data.r[k];
    }
    data += grid.row_norm(&cp.data.z0).powi(2);
    let state = sol.j_terms[0] + sol.j_terms[1];
    if data > 0.0 {
        (state / data).sqrt()
    } else {
        0.0
    }
}

/// `true` when every entry of `u` off the control rows is exactly zero.
pub fn control_is_masked(sol: &ControlSolution, grid: &Grid) -> bool {
    (0..sol.u.n_levels).all(|k| {
        (0..grid.n_nodes())
            .all(|i| (grid.control_mask[i] && row_kind(grid, i) == RowKind::Bulk) || sol.u.get(k, i) == 0.0)
    })
}
