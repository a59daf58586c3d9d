//! Numerical stress test of the weighted observability inequality for the
//! backward adjoint system.
//!
//! With `ϑ = (T − x₀)^{-3}` and weight `e^{ψ*}` the left side collects
//!
//! * `‖ϑ^{3/2} v e^{ψ*}‖`, `‖ϑ^{1/2} ∂₁v e^{ψ*}‖` on `Q₋`,
//! * `‖ϑ^{5/2} v e^{ψ*}‖`, `‖ϑ^{3/2} ∂₁v e^{ψ*}‖` on `Q₊`,
//! * the interface traces `ϑ^{3/2}∂₁⁺v`, `ϑ^{1/2}∂₁⁻v`, `ϑ^{1/2}∂₀v`, `ϑ^{5/2}v`,
//!
//! and the right side `‖ϑ f̃₁ e^{ψ*}‖_{Q₊}`, `‖f̃₂ e^{ψ*}‖_{Q₋}`,
//! `‖ϑ^{1/2} r̃ e^{ψ*}‖` and the observation `‖ϑ^{5/2} v e^{ψ*}‖_{Q_ω}`.
use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::forward::{solve_adjoint_backward, AdjointData};
use crate::grid::{Grid, Region, SpaceTimeField};
use crate::math::median;
use crate::model::{smooth_bump, ProblemSpec, Side};
use crate::weights::{WeightParameters, WeightSystem};

pub const LHS_NAMES: [&str; 8] = [
    "minus_v",
    "minus_dx",
    "plus_v",
    "plus_dx",
    "interface_dx_plus",
    "interface_dx_minus",
    "interface_dt",
    "interface_v",
];
pub const RHS_NAMES: [&str; 4] = ["f_plus", "f_minus", "r", "observation"];

#[derive(Debug, Clone, PartialEq)]
pub struct ObservabilityCase {
    pub v: SpaceTimeField,
    pub terminal: Vec<f64>,
    pub data: AdjointData,
    /// Values in the order of [`LHS_NAMES`].
    pub lhs_terms: [f64; 8],
    /// Values in the order of [`RHS_NAMES`].
    pub rhs_terms: [f64; 4],
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

impl ObservabilityCase {
    pub fn lhs_named(&self) -> impl Iterator<Item = (&'static str, f64)> + '_ {
        LHS_NAMES.iter().copied().zip(self.lhs_terms.iter().copied())
    }

    pub fn rhs_named(&self) -> impl Iterator<Item = (&'static str, f64)> + '_ {
        RHS_NAMES.iter().copied().zip(self.rhs_terms.iter().copied())
    }
}

/// Squared weight `ϑ^{2p} e^{2ψ*}`.
fn weight_field(grid: &Grid, ws: &WeightSystem, p: f64) -> SpaceTimeField {
    SpaceTimeField::from_fn(grid, |t, x| ws.power_exp_psi(t, x, -6.0 * p, 2.0))
}

fn line_norm(grid: &Grid, ws: &WeightSystem, values: &[f64], p: f64) -> Result<f64> {
    let mut s = 0.0;
    for (k, v) in values.iter().enumerate() {
        s += grid.time_weight(k) * ws.power_exp_psi(grid.time(k), 0.0, -6.0 * p, 2.0) * v * v;
    }
    if !s.is_finite() {
        return Err(Error::NonFinite("weighted interface norm".to_string()));
    }
    Ok(s.sqrt())
}

fn side_norm(grid: &Grid, field: &SpaceTimeField, weight: &SpaceTimeField, region: Region) -> Result<f64> {
    grid.discrete_norm(field, Some(weight), region)
}

/// Solves the backward system for `(terminal, data)` and evaluates every
/// term of the weighted inequality.
pub fn observability_ratio(
    spec: &ProblemSpec,
    grid: &Grid,
    ws: &WeightSystem,
    terminal: &[f64],
    data: &AdjointData,
) -> Result<ObservabilityCase> {
    if terminal.iter().all(|v| *v == 0.0) && data.is_zero() {
        return Err(Error::VacuousCase);
    }
    let v = solve_adjoint_backward(spec, grid, terminal, data)?;

    let w = |p: f64| weight_field(grid, ws, p);
    let dx_minus = v.side_derivative(grid, Side::Minus);
    let dx_plus = v.side_derivative(grid, Side::Plus);
    let trace = v.interface_trace();
    let mut trace_dt = vec![0.0; trace.len()];
    for k in 1..trace.len() {
        trace_dt[k] = (trace[k] - trace[k - 1]) / grid.dt;
    }
    if trace.len() > 1 {
        trace_dt[0] = trace_dt[1];
    }
    let (mut d_plus, mut d_minus) = (Vec::with_capacity(trace.len()), Vec::with_capacity(trace.len()));
    for k in 0..grid.n_levels() {
        let (p, m) = grid.interface_derivatives(v.row(k));
        d_plus.push(p);
        d_minus.push(m);
    }

    let (w12, w32, w52) = (w(0.5), w(1.5), w(2.5));
    let lhs_terms = [
        side_norm(grid, &v, &w32, Region::Minus)?,
        side_norm(grid, &dx_minus, &w12, Region::Minus)?,
        side_norm(grid, &v, &w52, Region::Plus)?,
        side_norm(grid, &dx_plus, &w32, Region::Plus)?,
        line_norm(grid, ws, &d_plus, 1.5)?,
        line_norm(grid, ws, &d_minus, 0.5)?,
        line_norm(grid, ws, &trace_dt, 0.5)?,
        line_norm(grid, ws, &trace, 2.5)?,
    ];
    let rhs_terms = [
        side_norm(grid, &data.f, &w(1.0), Region::Plus)?,
        side_norm(grid, &data.f, &w(0.0), Region::Minus)?,
        line_norm(grid, ws, &data.r, 0.5)?,
        side_norm(grid, &v, &w52, Region::Control)?,
    ];
    let lhs: f64 = lhs_terms.iter().sum();
    let rhs: f64 = rhs_terms.iter().sum();
    if !(rhs > 0.0) {
        return Err(Error::NonFinite(format!("observability ratio (right side {rhs:e})")));
    }
    Ok(ObservabilityCase {
        v,
        terminal: terminal.to_vec(),
        data: data.clone(),
        lhs_terms,
        rhs_terms,
        lhs,
        rhs,
        ratio: lhs / rhs,
    })
}

/// Random data for one ensemble member.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleData {
    pub terminal: Vec<f64>,
    pub data: AdjointData,
}

pub const SAMPLE_MODES: usize = 5;

/// Terminal states from the first five sine modes with `U(−1,1)/m`
/// amplitudes; `r̃` one or two smooth pulses in time; `f̃ = 0`.
pub fn draw_samples(grid: &Grid, n_samples: usize, seed: u64) -> Vec<SampleData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = grid.geometry;
    let t = g.t_final;
    let mut out = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let coeffs: Vec<f64> = (1..=SAMPLE_MODES).map(|m| rng.gen_range(-1.0..1.0) / m as f64).collect();
        let terminal: Vec<f64> = grid
            .x_nodes
            .iter()
            .enumerate()
            .map(|(i, x)| {
                if i == 0 || i == grid.n_nodes() - 1 {
                    return 0.0;
                }
                let theta = core::f64::consts::PI * (x - g.a) / g.length();
                coeffs.iter().enumerate().map(|(m, c)| c * ((m + 1) as f64 * theta).sin()).sum()
            })
            .collect();
        let pulses = rng.gen_range(1..=2usize);
        let params: Vec<(f64, f64, f64)> = (0..pulses)
            .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(0.2 * t..0.8 * t), rng.gen_range(0.1 * t..0.3 * t)))
            .collect();
        let r =
            grid.times().iter().map(|s| params.iter().map(|(a, c, w)| a * smooth_bump((s - c) / w)).sum()).collect();
        out.push(SampleData { terminal, data: AdjointData { f: SpaceTimeField::zeros(grid), r } });
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepEntry {
    pub s_hat: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleReport {
    pub samples: usize,
    pub seed: u64,
    pub s_hat: f64,
    pub ratios: Vec<f64>,
    pub max: f64,
    pub median: f64,
    pub min: f64,
    /// Max ratio at `ŝ₀`, `2ŝ₀`, `4ŝ₀`.
    pub s_hat_sweep: Vec<SweepEntry>,
    /// Per-sample itemized terms at `ŝ₀`.
    pub cases: Vec<([f64; 8], [f64; 4])>,
}

pub const MIN_SAMPLES: usize = 10;
pub const SWEEP_FACTORS: [f64; 3] = [1.0, 2.0, 4.0];

fn ratios_for(
    spec: &ProblemSpec,
    grid: &Grid,
    ws: &WeightSystem,
    samples: &[SampleData],
) -> Result<Vec<ObservabilityCase>> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            observability_ratio(spec, grid, ws, &s.terminal, &s.data)
                .map_err(|e| Error::Sample { index: i, reason: e.to_string() })
        })
        .collect()
}

/// Weight system with `ŝ` replaced.
pub fn with_s_hat(ws: &WeightSystem, s_hat: f64) -> Result<WeightSystem> {
    WeightSystem::new(ws.geometry, WeightParameters { s_hat, ..ws.params })
}

/// Ratio statistics over `n_samples` random members and the max ratio over
/// the `ŝ` sweep.
pub fn ensemble_constant(
    spec: &ProblemSpec,
    grid: &Grid,
    ws: &WeightSystem,
    n_samples: usize,
    seed: u64,
) -> Result<EnsembleReport> {
    if n_samples < MIN_SAMPLES {
        return Err(Error::InvalidProblem(format!("ensemble needs at least {MIN_SAMPLES} samples, got {n_samples}")));
    }
    let samples = draw_samples(grid, n_samples, seed);
    let cases = ratios_for(spec, grid, ws, &samples)?;
    let ratios: Vec<f64> = cases.iter().map(|c| c.ratio).collect();
    let mut s_hat_sweep = Vec::with_capacity(SWEEP_FACTORS.len());
    for f in SWEEP_FACTORS {
        let s_hat = f * ws.params.s_hat;
        let max = if f == 1.0 {
            max_of(&ratios)
        } else {
            let w = with_s_hat(ws, s_hat)?;
            max_of(&ratios_for(spec, grid, &w, &samples)?.iter().map(|c| c.ratio).collect::<Vec<_>>())
        };
        s_hat_sweep.push(SweepEntry { s_hat, max });
    }
    Ok(EnsembleReport {
        samples: n_samples,
        seed,
        s_hat: ws.params.s_hat,
        max: max_of(&ratios),
        median: median(&ratios),
        min: ratios.iter().copied().fold(f64::INFINITY, f64::min),
        s_hat_sweep,
        cases: cases.iter().map(|c| (c.lhs_terms, c.rhs_terms)).collect(),
        ratios,
    })
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Grid with every cell count doubled.
pub fn refined(grid: &Grid) -> Result<Grid> {
    Grid::new(grid.geometry, 2 * grid.n_minus, 2 * grid.n_plus, 2 * grid.n_steps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftRow {
    pub s_hat: f64,
    pub coarse_max: f64,
    pub fine_max: f64,
    /// `max(fine/coarse, coarse/fine)`
    pub drift: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdReport {
    pub rows: Vec<DriftRow>,
    /// Smallest `ŝ` on the ladder whose drift is at most `max_drift`.
    pub threshold: Option<f64>,
}

/// Max-ratio drift under one refinement along the ladder `ŝ₀·2^j`,
/// `j < steps`. Stops at the first `ŝ` the weight system rejects.
pub fn threshold_search(
    spec: &ProblemSpec,
    grid: &Grid,
    ws: &WeightSystem,
    n_samples: usize,
    seed: u64,
    steps: usize,
    max_drift: f64,
) -> Result<ThresholdReport> {
    let fine = refined(grid)?;
    let mut rows = Vec::new();
    let mut threshold = None;
    for j in 0..steps {
        let s_hat = ws.params.s_hat * (1u64 << j) as f64;
        let Ok(w) = with_s_hat(ws, s_hat) else { break };
        let row = drift_at(spec, grid, &fine, &w, n_samples, seed)?;
        if threshold.is_none() && row.drift <= max_drift {
            threshold = Some(s_hat);
        }
        rows.push(row);
    }
    Ok(ThresholdReport { rows, threshold })
}

/// Max-ratio drift between `coarse` and `fine` for one weight system.
pub fn drift_at(
    spec: &ProblemSpec,
    coarse: &Grid,
    fine: &Grid,
    ws: &WeightSystem,
    n_samples: usize,
    seed: u64,
) -> Result<DriftRow> {
    let c = ensemble_max(spec, coarse, ws, n_samples, seed)?;
    let f = ensemble_max(spec, fine, ws, n_samples, seed)?;
    Ok(DriftRow { s_hat: ws.params.s_hat, coarse_max: c, fine_max: f, drift: (f / c).max(c / f) })
}

fn ensemble_max(spec: &ProblemSpec, grid: &Grid, ws: &WeightSystem, n_samples: usize, seed: u64) -> Result<f64> {
    let samples = draw_samples(grid, n_samples, seed);
    Ok(max_of(&ratios_for(spec, grid, ws, &samples)?.iter().map(|c| c.ratio).collect::<Vec<_>>()))
}
