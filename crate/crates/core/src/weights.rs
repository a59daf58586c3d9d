//! Carleman weights and the penalty factors built from them.
//!
//! `ψ₁(x₁) = (x₁ + β)²`, `ψ₂(x₁) = ψ₁(0)·e^{ψ₁(x₁) − ψ₁(0)}` and
//! `φⱼ(x) = (e^{λψⱼ(x₁)} − e^{λC})/(x₀³(T − x₀)³)`. `φ_*` is `φ₂` on `Q₊` and
//! `φ₁` on `Q₋`; `ψ* = ŝ·φ_*` frozen at `x₀ = T/2` for earlier times.
use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::grid::{Grid, SpaceTimeField};
use crate::math::{exp_clamped, EXP_CLAMP};
use crate::model::{Geometry, Side};

/// Largest exponent accepted for `e^{λψ₂(b)}`, `e^{λC}` and `e^{2|ψ*_ε|}`.
const MAX_EXPONENT: f64 = 700.0;
const WEIGHT_SAMPLES: usize = 257;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PsiStarForm {
    /// `ŝ·φ_*(max(x₀, T/2), x₁)`
    #[default]
    Frozen,
    /// `η(x₁)/(T − x₀)³` with `η = ŝ·(e^{λψ_*} − e^{λC})/(T/2)³`.
    Corollary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MVariant {
    /// `m = 1` on `Q₋`, `(T − x₀)^{15}` on `Q₊`.
    #[default]
    Proposition,
    /// `m = (T − x₀)^9` on `Q₋`, `(T − x₀)^{15}` on `Q₊`.
    Theorem,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightParameters {
    pub lambda: f64,
    pub s_hat: f64,
    /// `C` in `e^{λC}`; `None` selects `ψ₂(b) + 1`.
    pub c_shift: Option<f64>,
    pub beta_offset: f64,
    pub epsilon_freeze: f64,
    pub psi_form: PsiStarForm,
    pub m_variant: MVariant,
}

impl WeightParameters {
    pub fn default_for(geometry: &Geometry) -> Self {
        WeightParameters {
            lambda: 0.01,
            s_hat: 1e-4,
            c_shift: None,
            beta_offset: 2.0,
            epsilon_freeze: 0.25 * geometry.t_final,
            psi_form: PsiStarForm::Frozen,
            m_variant: MVariant::Proposition,
        }
    }
}

/// `(T − x₀)^p` with the limit value 0 at `x₀ = T`.
#[inline]
pub fn power_weight(t_final: f64, x0: f64, p: f64) -> f64 {
    let s = t_final - x0;
    if s <= 0.0 {
        0.0
    } else {
        s.powf(p)
    }
}

/// `(T − x₀)^p·e^{−2ψ}` evaluated in log space; 0 at `x₀ = T` for `p > 0`.
#[inline]
fn power_exp(t_final: f64, x0: f64, p: f64, exponent: f64) -> f64 {
    let s = t_final - x0;
    if p == 0.0 {
        return exp_clamped(exponent);
    }
    if s <= 0.0 {
        return if p > 0.0 { 0.0 } else { exp_clamped(EXP_CLAMP) };
    }
    exp_clamped(exponent + p * s.ln())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightSystem {
    pub geometry: Geometry,
    pub params: WeightParameters,
    /// Resolved `C`.
    pub c_shift: f64,
}

impl WeightSystem {
    pub fn new(geometry: Geometry, params: WeightParameters) -> Result<Self> {
        let invalid =
            |parameter: &'static str, reason: alloc::string::String| Error::InvalidWeights { parameter, reason };
        let t = geometry.t_final;
        if !(params.lambda > 0.0 && params.lambda.is_finite()) {
            return Err(invalid("lambda", format!("must be positive, got {}", params.lambda)));
        }
        if !(params.s_hat > 0.0 && params.s_hat.is_finite()) {
            return Err(invalid("s_hat", format!("must be positive, got {}", params.s_hat)));
        }
        if !(params.beta_offset.is_finite()) {
            return Err(invalid("beta_offset", "must be finite".to_string()));
        }
        if !(params.epsilon_freeze > 0.0 && params.epsilon_freeze < 0.5 * t) {
            return Err(invalid(
                "epsilon_freeze",
                format!("must lie in (0, T/2) = (0, {}), got {}", 0.5 * t, params.epsilon_freeze),
            ));
        }
        let psi1 = |x: f64| (x + params.beta_offset).powi(2);
        let spread = psi1(geometry.b) - psi1(0.0);
        if spread > MAX_EXPONENT {
            return Err(invalid("beta_offset", format!("psi2(b) overflows (exponent {spread})")));
        }
        let psi2_b = psi1(0.0) * spread.exp();
        let psi_max = psi2_b.max(psi1(geometry.a)).max(psi1(geometry.b));
        let c_shift = params.c_shift.unwrap_or(psi2_b + 1.0);
        if !(c_shift > psi_max) {
            return Err(invalid("c_shift", format!("must exceed max psi = {psi_max}, got {c_shift}")));
        }
        if params.lambda * psi2_b > MAX_EXPONENT {
            return Err(invalid(
                "lambda",
                format!("exp(lambda psi2(b)) overflows (exponent {})", params.lambda * psi2_b),
            ));
        }
        if params.lambda * c_shift > MAX_EXPONENT {
            return Err(invalid("c_shift", format!("exp(lambda C) overflows (exponent {})", params.lambda * c_shift)));
        }
        let ws = WeightSystem { geometry, params, c_shift };
        let n = WEIGHT_SAMPLES;
        for i in 0..n {
            let x0 = t * i as f64 / (n - 1) as f64;
            for j in 0..n {
                let x1 = geometry.a + geometry.length() * j as f64 / (n - 1) as f64;
                let v = ws.psi_star_eps(x0, x1);
                if !v.is_finite() || 2.0 * v.abs() > MAX_EXPONENT {
                    return Err(invalid(
                        "s_hat",
                        format!("2|psi*_eps| = {} at ({x0}, {x1}) exceeds {MAX_EXPONENT}", 2.0 * v.abs()),
                    ));
                }
            }
        }
        Ok(ws)
    }

    pub fn psi1(&self, x1: f64) -> f64 {
        (x1 + self.params.beta_offset).powi(2)
    }

    pub fn psi2(&self, x1: f64) -> f64 {
        let p0 = self.psi1(0.0);
        p0 * (self.psi1(x1) - p0).exp()
    }

    /// `ψ₂` on `x₁ > 0`, `ψ₁` otherwise.
    pub fn psi_side(&self, x1: f64) -> f64 {
        match Side::of(x1) {
            Side::Plus => self.psi2(x1),
            Side::Minus => self.psi1(x1),
        }
    }

    /// `e^{λψ} − e^{λC}`; always negative.
    fn numerator(&self, psi: f64) -> f64 {
        let l = self.params.lambda;
        (l * psi).exp() - (l * self.c_shift).exp()
    }

    fn time_factor(&self, x0: f64) -> f64 {
        let t = self.geometry.t_final;
        (x0 * (t - x0)).powi(3)
    }

    pub fn phi1(&self, x0: f64, x1: f64) -> f64 {
        self.numerator(self.psi1(x1)) / self.time_factor(x0)
    }

    pub fn phi2(&self, x0: f64, x1: f64) -> f64 {
        self.numerator(self.psi2(x1)) / self.time_factor(x0)
    }

    pub fn phi_star(&self, x0: f64, x1: f64) -> f64 {
        self.numerator(self.psi_side(x1)) / self.time_factor(x0)
    }

    /// `ψ*`; `−∞` at `x₀ = T`.
    pub fn psi_star(&self, x0: f64, x1: f64) -> f64 {
        let t = self.geometry.t_final;
        let num = self.numerator(self.psi_side(x1));
        match self.params.psi_form {
            PsiStarForm::Frozen => self.params.s_hat * num / self.time_factor(x0.max(0.5 * t)),
            PsiStarForm::Corollary => self.params.s_hat * num / ((0.5 * t).powi(3) * (t - x0).powi(3)),
        }
    }

    /// `ψ*` frozen on `[T − ε, T]`.
    pub fn psi_star_eps(&self, x0: f64, x1: f64) -> f64 {
        let t = self.geometry.t_final;
        self.psi_star(x0.min(t - self.params.epsilon_freeze), x1)
    }

    /// C² profile equal to `x₀` on `[0, T/4]` and `T − x₀` on `[3T/4, T]`.
    pub fn theta(&self, x0: f64) -> f64 {
        let t = self.geometry.t_final;
        let l = 0.25 * t;
        if x0 <= l {
            x0
        } else if x0 >= t - l {
            t - x0
        } else {
            let u = (x0 - 0.5 * t) / l;
            l * (13.0 / 8.0 - 0.75 * u * u + 0.125 * u.powi(4))
        }
    }

    /// `φ̃ = θ^{-3}`.
    pub fn phi_tilde(&self, x0: f64) -> f64 {
        self.theta(x0).powi(-3)
    }

    pub fn m(&self, x0: f64, x1: f64) -> f64 {
        let t = self.geometry.t_final;
        match (Side::of(x1), self.params.m_variant) {
            (Side::Plus, _) => power_weight(t, x0, 15.0),
            (Side::Minus, MVariant::Proposition) => 1.0,
            (Side::Minus, MVariant::Theorem) => power_weight(t, x0, 9.0),
        }
    }

    /// `(T − x₀)^{15}·m·e^{−2ψ*}`
    pub fn mu1(&self, x0: f64, x1: f64) -> f64 {
        let t = self.geometry.t_final;
        let extra = match (Side::of(x1), self.params.m_variant) {
            (Side::Plus, _) => 15.0,
            (Side::Minus, MVariant::Proposition) => 0.0,
            (Side::Minus, MVariant::Theorem) => 9.0,
        };
        power_exp(t, x0, 15.0 + extra, -2.0 * self.psi_star(x0, x1))
    }

    /// `(T − x₀)^{15}·e^{−2ψ*}`
    pub fn mu2(&self, x0: f64, x1: f64) -> f64 {
        power_exp(self.geometry.t_final, x0, 15.0, -2.0 * self.psi_star(x0, x1))
    }

    /// `(T − x₀)^p·e^{−2ψ*_ε}`
    pub fn power_exp_eps(&self, x0: f64, x1: f64, p: f64) -> f64 {
        power_exp(self.geometry.t_final, x0, p, -2.0 * self.psi_star_eps(x0, x1))
    }

    /// `(T − x₀)^p·e^{k·ψ*}`, 0 at `x₀ = T` whenever `k > 0` or `p > 0`.
    pub fn power_exp_psi(&self, x0: f64, x1: f64, p: f64, k: f64) -> f64 {
        let t = self.geometry.t_final;
        if x0 >= t {
            return if k > 0.0 || p > 0.0 { 0.0 } else { exp_clamped(EXP_CLAMP) };
        }
        power_exp(t, x0, p, k * self.psi_star(x0, x1))
    }
}

pub fn build_weight_system(geometry: Geometry, params: WeightParameters) -> Result<WeightSystem> {
    WeightSystem::new(geometry, params)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderingViolation {
    pub level: usize,
    pub node: usize,
    pub check: &'static str,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderingReport {
    /// `min (φ₂ − φ₁)` over nodes with `x₁ > 0`.
    pub plus_margin: f64,
    /// `min (φ₁ − φ₂)` over nodes with `x₁ < 0`.
    pub minus_margin: f64,
    /// `max |φ₁ − φ₂|/|φ₁|` on `x₁ = 0`.
    pub interface_gap: f64,
    /// `max ψ*`.
    pub psi_star_max: f64,
    pub violations: Vec<OrderingViolation>,
}

impl OrderingReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks `φ₂ > φ₁` on `Q₊`, `φ₁ > φ₂` on `Q₋`, `φ₁ = φ₂` on the interface and
/// `ψ* < 0`, node by node over interior time levels.
pub fn verify_ordering(ws: &WeightSystem, grid: &Grid) -> OrderingReport {
    let mut report = OrderingReport {
        plus_margin: f64::INFINITY,
        minus_margin: f64::INFINITY,
        interface_gap: 0.0,
        psi_star_max: f64::NEG_INFINITY,
        violations: Vec::new(),
    };
    for k in 1..grid.n_steps {
        let x0 = grid.time(k);
        for (i, &x1) in grid.x_nodes.iter().enumerate() {
            let (p1, p2) = (ws.phi1(x0, x1), ws.phi2(x0, x1));
            let mut flag = |check: &'static str, value: f64| {
                report.violations.push(OrderingViolation { level: k, node: i, check, value })
            };
            if i == grid.interface_index {
                let gap = (p1 - p2).abs() / p1.abs();
                report.interface_gap = report.interface_gap.max(gap);
                if !(gap <= 1e-12) {
                    flag("phi1 = phi2 at x1 = 0", gap);
                }
            } else if x1 > 0.0 {
                report.plus_margin = report.plus_margin.min(p2 - p1);
                if !(p2 > p1) {
                    flag("phi2 > phi1 on Q+", p2 - p1);
                }
            } else {
                report.minus_margin = report.minus_margin.min(p1 - p2);
                if !(p1 > p2) {
                    flag("phi1 > phi2 on Q-", p1 - p2);
                }
            }
            let ps = ws.psi_star(x0, x1);
            report.psi_star_max = report.psi_star_max.max(ps);
            if !(ps < 0.0) {
                flag("psi* < 0", ps);
            }
        }
    }
    report
}

/// Weight fields on grid nodes at every time level.
#[derive(Debug, Clone)]
pub struct PenaltyFields {
    pub m: SpaceTimeField,
    pub mu1: SpaceTimeField,
    pub mu2: SpaceTimeField,
    /// `e^{−2ψ*_ε}`
    pub exp_m2psi_eps: SpaceTimeField,
    pub pow3: SpaceTimeField,
    pub pow15_2: SpaceTimeField,
    pub pow9_2: SpaceTimeField,
    pub pow15: SpaceTimeField,
}

pub fn penalty_factors(ws: &WeightSystem, grid: &Grid) -> Result<PenaltyFields> {
    let t = ws.geometry.t_final;
    let check = |f: SpaceTimeField, name: &str| -> Result<SpaceTimeField> {
        if f.values.iter().all(|v| v.is_finite()) {
            Ok(f)
        } else {
            Err(Error::NonFinite(format!("penalty factor {name}")))
        }
    };
    Ok(PenaltyFields {
        m: check(SpaceTimeField::from_fn(grid, |x0, x1| ws.m(x0, x1)), "m")?,
        mu1: check(SpaceTimeField::from_fn(grid, |x0, x1| ws.mu1(x0, x1)), "mu1")?,
        mu2: check(SpaceTimeField::from_fn(grid, |x0, x1| ws.mu2(x0, x1)), "mu2")?,
        exp_m2psi_eps: check(
            SpaceTimeField::from_fn(grid, |x0, x1| ws.power_exp_eps(x0, x1, 0.0)),
            "exp(-2 psi*_eps)",
        )?,
        pow3: SpaceTimeField::from_fn(grid, |x0, _| power_weight(t, x0, 3.0)),
        pow15_2: SpaceTimeField::from_fn(grid, |x0, _| power_weight(t, x0, 7.5)),
        pow9_2: SpaceTimeField::from_fn(grid, |x0, _| power_weight(t, x0, 4.5)),
        pow15: SpaceTimeField::from_fn(grid, |x0, _| power_weight(t, x0, 15.0)),
    })
}
