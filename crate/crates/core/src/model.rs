//! Continuous problem data: geometry, coefficients, nonlinearity and sources.
//!
//! The state `w` lives on `Q = (0,T) × (a,b)` and is split at `x₁ = 0` into
//! `w₁` on `Q₊ = (0,T) × (0,b)` and `w₂` on `Q₋ = (0,T) × (a,0)`. The control
//! acts on `Q_ω = (0,T) × (d,b)`.
use alloc::format;
use alloc::string::ToString;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

/// Dense sampling resolution per axis used for positivity checks.
pub const POSITIVITY_SAMPLES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub a: f64,
    pub b: f64,
    pub d: f64,
    pub t_final: f64,
}

impl Geometry {
    pub fn new(a: f64, b: f64, d: f64, t_final: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && d.is_finite() && t_final.is_finite()) {
            return Err(Error::InvalidProblem("geometry must be finite".to_string()));
        }
        if a >= 0.0 {
            return Err(Error::InvalidProblem(format!("left endpoint a = {a} must be negative")));
        }
        if b <= 0.0 {
            return Err(Error::InvalidProblem(format!("right endpoint b = {b} must be positive")));
        }
        if !(d > 0.0 && d < b) {
            return Err(Error::InvalidProblem(format!("control window edge d = {d} must lie in (0, b)")));
        }
        if t_final <= 0.0 {
            return Err(Error::InvalidProblem(format!("time horizon T = {t_final} must be positive")));
        }
        Ok(Geometry { a, b, d, t_final })
    }

    /// `c₀ = max{b, −a}`.
    pub fn c0(&self) -> f64 {
        self.b.max(-self.a)
    }

    pub fn length(&self) -> f64 {
        self.b - self.a
    }

    pub fn in_control_window(&self, x1: f64) -> bool {
        x1 >= self.d && x1 <= self.b
    }
}

/// Subdomain selector. The interface node itself is shared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Plus,
    Minus,
}

impl Side {
    pub fn of(x1: f64) -> Side {
        if x1 > 0.0 {
            Side::Plus
        } else {
            Side::Minus
        }
    }
}

type Fn2 = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
type Fn1 = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// `C^∞` bump supported on `|s| < 1`, normalized to 1 at the origin.
pub fn smooth_bump(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - s * s)).exp()
    }
}

/// Scalar function of `(x₀, x₁)` drawn from a closed preset catalogue.
#[derive(Clone)]
pub enum Field {
    Constant(f64),
    /// `c0 + c_t·x₀ + c_x·x₁`
    Affine {
        c0: f64,
        c_t: f64,
        c_x: f64,
    },
    /// `base + amplitude·sin(omega·x₀ + phase)·(x_const + x_coeff·x₁)`
    Sinusoidal {
        base: f64,
        amplitude: f64,
        omega: f64,
        phase: f64,
        x_const: f64,
        x_coeff: f64,
    },
    /// Product of smooth bumps centred at `(t_center, x_center)`.
    Bump {
        amplitude: f64,
        t_center: f64,
        t_width: f64,
        x_center: f64,
        x_width: f64,
    },
    /// Arbitrary closure; not reachable from configuration files.
    Custom(Fn2),
}

impl Field {
    pub fn zero() -> Self {
        Field::Constant(0.0)
    }

    pub fn custom(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Field::Custom(Arc::new(f))
    }

    pub fn eval(&self, x0: f64, x1: f64) -> f64 {
        match self {
            Field::Constant(c) => *c,
            Field::Affine { c0, c_t, c_x } => c0 + c_t * x0 + c_x * x1,
            Field::Sinusoidal { base, amplitude, omega, phase, x_const, x_coeff } => {
                base + amplitude * (omega * x0 + phase).sin() * (x_const + x_coeff * x1)
            }
            Field::Bump { amplitude, t_center, t_width, x_center, x_width } => {
                amplitude * smooth_bump((x0 - t_center) / t_width) * smooth_bump((x1 - x_center) / x_width)
            }
            Field::Custom(f) => f(x0, x1),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Field::Constant(c) => *c == 0.0,
            Field::Affine { c0, c_t, c_x } => *c0 == 0.0 && *c_t == 0.0 && *c_x == 0.0,
            Field::Sinusoidal { base, amplitude, .. } => *base == 0.0 && *amplitude == 0.0,
            Field::Bump { amplitude, .. } => *amplitude == 0.0,
            Field::Custom(_) => false,
        }
    }
}

impl fmt::Debug for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Field::Constant(c) => write!(f, "Constant({c})"),
            Field::Affine { c0, c_t, c_x } => write!(f, "Affine({c0} + {c_t}·x0 + {c_x}·x1)"),
            Field::Sinusoidal { base, amplitude, omega, phase, x_const, x_coeff } => {
                write!(f, "Sinusoidal({base} + {amplitude}·sin({omega}·x0 + {phase})·({x_const} + {x_coeff}·x1))")
            }
            Field::Bump { amplitude, t_center, t_width, x_center, x_width } => {
                write!(f, "Bump(amp {amplitude}, t {t_center}±{t_width}, x {x_center}±{x_width})")
            }
            Field::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Scalar function of one variable: the interface source `r(x₀)` or the
/// initial state `w₀(x₁)`.
#[derive(Clone)]
pub enum Curve {
    Constant(f64),
    /// `amplitude·sin(omega·s + phase)`
    Sine {
        amplitude: f64,
        omega: f64,
        phase: f64,
    },
    /// Smooth bump of half-width `width`.
    Pulse {
        amplitude: f64,
        center: f64,
        width: f64,
    },
    /// `Σ_k c_k sin(kπ(s − lo)/(hi − lo))`, `k = 1, 2, …`; vanishes at `lo` and `hi`.
    SineModes {
        lo: f64,
        hi: f64,
        coefficients: Vec<f64>,
    },
    Custom(Fn1),
}

impl Curve {
    pub fn zero() -> Self {
        Curve::Constant(0.0)
    }

    pub fn custom(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Curve::Custom(Arc::new(f))
    }

    pub fn eval(&self, s: f64) -> f64 {
        match self {
            Curve::Constant(c) => *c,
            Curve::Sine { amplitude, omega, phase } => amplitude * (omega * s + phase).sin(),
            Curve::Pulse { amplitude, center, width } => amplitude * smooth_bump((s - center) / width),
            Curve::SineModes { lo, hi, coefficients } => {
                let theta = core::f64::consts::PI * (s - lo) / (hi - lo);
                coefficients.iter().enumerate().map(|(k, c)| c * ((k as f64 + 1.0) * theta).sin()).sum()
            }
            Curve::Custom(f) => f(s),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Curve::Constant(c) => *c == 0.0,
            Curve::Sine { amplitude, .. } | Curve::Pulse { amplitude, .. } => *amplitude == 0.0,
            Curve::SineModes { coefficients, .. } => coefficients.iter().all(|c| *c == 0.0),
            Curve::Custom(_) => false,
        }
    }
}

impl fmt::Debug for Curve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Curve::Constant(c) => write!(f, "Constant({c})"),
            Curve::Sine { amplitude, omega, phase } => write!(f, "Sine({amplitude}, {omega}, {phase})"),
            Curve::Pulse { amplitude, center, width } => write!(f, "Pulse({amplitude}, {center}, {width})"),
            Curve::SineModes { lo, hi, coefficients } => write!(f, "SineModes([{lo}, {hi}], {coefficients:?})"),
            Curve::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Alias used where a curve is a function of time.
pub type TimeFunction = Curve;

#[derive(Debug, Clone)]
pub struct CoefficientSet {
    pub rho_plus: Field,
    pub a_plus: Field,
    pub b_plus: Field,
    pub c_plus: Field,
    pub rho_minus: Field,
    pub a_minus: Field,
    pub b_minus: Field,
    pub c_minus: Field,
    /// Declared positive lower bound for `ρ` and `a`.
    pub alpha: f64,
}

/// Sampled extrema of the principal coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientBounds {
    pub min_rho: f64,
    pub min_a: f64,
    pub max_abs_b: f64,
    pub max_abs_c: f64,
}

impl CoefficientSet {
    /// Constant coefficients shared by both subdomains.
    pub fn constant(rho: f64, a: f64, b: f64, c: f64) -> Self {
        CoefficientSet {
            rho_plus: Field::Constant(rho),
            a_plus: Field::Constant(a),
            b_plus: Field::Constant(b),
            c_plus: Field::Constant(c),
            rho_minus: Field::Constant(rho),
            a_minus: Field::Constant(a),
            b_minus: Field::Constant(b),
            c_minus: Field::Constant(c),
            alpha: rho.min(a),
        }
    }

    pub fn rho(&self, side: Side, x0: f64, x1: f64) -> f64 {
        match side {
            Side::Plus => self.rho_plus.eval(x0, x1),
            Side::Minus => self.rho_minus.eval(x0, x1),
        }
    }

    pub fn a(&self, side: Side, x0: f64, x1: f64) -> f64 {
        match side {
            Side::Plus => self.a_plus.eval(x0, x1),
            Side::Minus => self.a_minus.eval(x0, x1),
        }
    }

    pub fn b(&self, side: Side, x0: f64, x1: f64) -> f64 {
        match side {
            Side::Plus => self.b_plus.eval(x0, x1),
            Side::Minus => self.b_minus.eval(x0, x1),
        }
    }

    pub fn c(&self, side: Side, x0: f64, x1: f64) -> f64 {
        match side {
            Side::Plus => self.c_plus.eval(x0, x1),
            Side::Minus => self.c_minus.eval(x0, x1),
        }
    }

    /// Samples every coefficient on a `POSITIVITY_SAMPLES²` lattice covering
    /// each closed subdomain.
    pub fn sample_bounds(&self, geometry: &Geometry) -> Result<CoefficientBounds> {
        let n = POSITIVITY_SAMPLES;
        let mut bounds =
            CoefficientBounds { min_rho: f64::INFINITY, min_a: f64::INFINITY, max_abs_b: 0.0, max_abs_c: 0.0 };
        for (side, lo, hi) in [(Side::Minus, geometry.a, 0.0), (Side::Plus, 0.0, geometry.b)] {
            for i in 0..n {
                let x0 = geometry.t_final * i as f64 / (n - 1) as f64;
                for j in 0..n {
                    let x1 = lo + (hi - lo) * j as f64 / (n - 1) as f64;
                    let (rho, a, b, c) =
                        (self.rho(side, x0, x1), self.a(side, x0, x1), self.b(side, x0, x1), self.c(side, x0, x1));
                    if !(rho.is_finite() && a.is_finite() && b.is_finite() && c.is_finite()) {
                        return Err(Error::InvalidProblem(format!(
                            "coefficient not finite at (x0, x1) = ({x0}, {x1})"
                        )));
                    }
                    bounds.min_rho = bounds.min_rho.min(rho);
                    bounds.min_a = bounds.min_a.min(a);
                    bounds.max_abs_b = bounds.max_abs_b.max(b.abs());
                    bounds.max_abs_c = bounds.max_abs_c.max(c.abs());
                }
            }
        }
        Ok(bounds)
    }

    pub fn validate(&self, geometry: &Geometry) -> Result<CoefficientBounds> {
        if !(self.alpha > 0.0) {
            return Err(Error::InvalidProblem(format!("alpha = {} must be positive", self.alpha)));
        }
        let bounds = self.sample_bounds(geometry)?;
        if bounds.min_rho < self.alpha {
            return Err(Error::InvalidProblem(format!("rho drops to {} below alpha = {}", bounds.min_rho, self.alpha)));
        }
        if bounds.min_a < self.alpha {
            return Err(Error::InvalidProblem(format!(
                "diffusion coefficient a drops to {} below alpha = {}",
                bounds.min_a, self.alpha
            )));
        }
        Ok(bounds)
    }
}

#[derive(Clone)]
pub enum NonlinearityKind {
    /// `g = scale·ξ₁ξ₂`
    Burgers { scale: f64 },
    /// `g = scale·ξ₁³`
    Cubic { scale: f64 },
    /// `(g, ∂_{ξ₁}g, ∂_{ξ₂}g)` as closures of `(x₀, x₁, ξ₁, ξ₂)`.
    Custom {
        g: Arc<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>,
        dg_dxi1: Arc<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>,
        dg_dxi2: Arc<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>,
    },
}

/// Lower-order nonlinear term `g(x, ξ₁, ξ₂)`, shared by both subdomains,
/// with its growth exponents.
#[derive(Clone)]
pub struct Nonlinearity {
    pub kind: NonlinearityKind,
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match &self.kind {
            NonlinearityKind::Burgers { scale } => format!("Burgers({scale})"),
            NonlinearityKind::Cubic { scale } => format!("Cubic({scale})"),
            NonlinearityKind::Custom { .. } => "Custom".to_string(),
        };
        write!(f, "Nonlinearity {{ {name}, p = ({}, {}, {}) }}", self.p1, self.p2, self.p3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonlinearValue {
    pub g: f64,
    pub dg_dxi1: f64,
    pub dg_dxi2: f64,
}

impl Nonlinearity {
    pub fn burgers() -> Self {
        Self::burgers_scaled(1.0)
    }

    pub fn burgers_scaled(scale: f64) -> Self {
        Nonlinearity { kind: NonlinearityKind::Burgers { scale }, p1: 1.0, p2: 1.0, p3: 1.0 }
    }

    pub fn cubic(scale: f64) -> Self {
        Nonlinearity { kind: NonlinearityKind::Cubic { scale }, p1: 3.0, p2: 1.0, p3: 1.0 }
    }

    /// Value and partials without the finiteness check; hot loops use this.
    #[inline]
    pub fn eval_unchecked(&self, x0: f64, x1: f64, xi1: f64, xi2: f64) -> NonlinearValue {
        match &self.kind {
            NonlinearityKind::Burgers { scale } => {
                NonlinearValue { g: scale * xi1 * xi2, dg_dxi1: scale * xi2, dg_dxi2: scale * xi1 }
            }
            NonlinearityKind::Cubic { scale } => {
                NonlinearValue { g: scale * xi1 * xi1 * xi1, dg_dxi1: 3.0 * scale * xi1 * xi1, dg_dxi2: 0.0 }
            }
            NonlinearityKind::Custom { g, dg_dxi1, dg_dxi2 } => NonlinearValue {
                g: g(x0, x1, xi1, xi2),
                dg_dxi1: dg_dxi1(x0, x1, xi1, xi2),
                dg_dxi2: dg_dxi2(x0, x1, xi1, xi2),
            },
        }
    }

    pub fn eval(&self, x0: f64, x1: f64, xi1: f64, xi2: f64) -> Result<NonlinearValue> {
        let v = self.eval_unchecked(x0, x1, xi1, xi2);
        if v.g.is_finite() && v.dg_dxi1.is_finite() && v.dg_dxi2.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite(format!("nonlinearity {self:?} at (x0, x1, xi1, xi2) = ({x0}, {x1}, {xi1}, {xi2})")))
        }
    }

    fn validate(&self, geometry: &Geometry) -> Result<()> {
        for (name, p) in [("p1", self.p1), ("p2", self.p2), ("p3", self.p3)] {
            if !(p >= 1.0) {
                return Err(Error::InvalidProblem(format!("growth exponent {name} = {p} must be >= 1")));
            }
        }
        let n = 8;
        for i in 0..n {
            let x0 = geometry.t_final * i as f64 / (n - 1) as f64;
            for j in 0..n {
                let x1 = geometry.a + geometry.length() * j as f64 / (n - 1) as f64;
                self.eval(x0, x1, 0.0, 0.0)?;
            }
        }
        Ok(())
    }
}

/// Evaluates `g` and both partials at one point.
pub fn eval_nonlinearity(n: &Nonlinearity, x: (f64, f64), xi1: f64, xi2: f64) -> Result<NonlinearValue> {
    n.eval(x.0, x.1, xi1, xi2)
}

/// How the interface flux jump is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InterfaceFlux {
    /// `a₊∂z⁺ − a₋∂z⁻`
    #[default]
    Physical,
    /// `∂z⁺ − ∂z⁻`, the literal form with `aⱼ ≡ 1`.
    Raw,
}

/// Validated continuous problem.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub geometry: Geometry,
    pub coefficients: CoefficientSet,
    pub mass: f64,
    pub nonlinearity: Option<Nonlinearity>,
    pub f_plus: Field,
    pub f_minus: Field,
    pub r: Curve,
    pub w0: Curve,
    pub flux: InterfaceFlux,
    pub bounds: CoefficientBounds,
}

impl ProblemSpec {
    pub fn builder(geometry: Geometry, coefficients: CoefficientSet, mass: f64) -> ProblemBuilder {
        ProblemBuilder {
            geometry,
            coefficients,
            mass,
            nonlinearity: None,
            f_plus: Field::zero(),
            f_minus: Field::zero(),
            r: Curve::zero(),
            w0: Curve::zero(),
            flux: InterfaceFlux::Physical,
        }
    }

    pub fn is_linear(&self) -> bool {
        self.nonlinearity.is_none()
    }

    pub fn source(&self, x0: f64, x1: f64) -> f64 {
        match Side::of(x1) {
            Side::Plus => self.f_plus.eval(x0, x1),
            Side::Minus => self.f_minus.eval(x0, x1),
        }
    }

    /// Returns a copy with the nonlinearity removed.
    pub fn linear_part(&self) -> ProblemSpec {
        ProblemSpec { nonlinearity: None, ..self.clone() }
    }

    pub fn builder_from(&self) -> ProblemBuilder {
        ProblemBuilder {
            geometry: self.geometry,
            coefficients: self.coefficients.clone(),
            mass: self.mass,
            nonlinearity: self.nonlinearity.clone(),
            f_plus: self.f_plus.clone(),
            f_minus: self.f_minus.clone(),
            r: self.r.clone(),
            w0: self.w0.clone(),
            flux: self.flux,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProblemBuilder {
    geometry: Geometry,
    coefficients: CoefficientSet,
    mass: f64,
    nonlinearity: Option<Nonlinearity>,
    f_plus: Field,
    f_minus: Field,
    r: Curve,
    w0: Curve,
    flux: InterfaceFlux,
}

impl ProblemBuilder {
    pub fn nonlinearity(mut self, n: Option<Nonlinearity>) -> Self {
        self.nonlinearity = n;
        self
    }

    pub fn sources(mut self, f_plus: Field, f_minus: Field) -> Self {
        self.f_plus = f_plus;
        self.f_minus = f_minus;
        self
    }

    pub fn interface_source(mut self, r: Curve) -> Self {
        self.r = r;
        self
    }

    pub fn initial_state(mut self, w0: Curve) -> Self {
        self.w0 = w0;
        self
    }

    pub fn mass(mut self, mass: f64) -> Self {
        self.mass = mass;
        self
    }

    pub fn flux(mut self, flux: InterfaceFlux) -> Self {
        self.flux = flux;
        self
    }

    pub fn coefficients(mut self, coefficients: CoefficientSet) -> Self {
        self.coefficients = coefficients;
        self
    }

    pub fn build(self) -> Result<ProblemSpec> {
        let g = self.geometry;
        Geometry::new(g.a, g.b, g.d, g.t_final)?;
        if !(self.mass > 0.0) || !self.mass.is_finite() {
            return Err(Error::InvalidProblem(format!("mass must be positive (got {})", self.mass)));
        }
        let bounds = self.coefficients.validate(&g)?;
        if let Some(n) = &self.nonlinearity {
            n.validate(&g)?;
        }
        let scale = (0..=32).map(|i| self.w0.eval(g.a + g.length() * i as f64 / 32.0).abs()).fold(1.0, f64::max);
        let (wa, wb) = (self.w0.eval(g.a), self.w0.eval(g.b));
        if wa.abs() > 1e-12 * scale || wb.abs() > 1e-12 * scale {
            return Err(Error::InvalidProblem(format!(
                "initial state must vanish at both ends (w0(a) = {wa}, w0(b) = {wb})"
            )));
        }
        Ok(ProblemSpec {
            geometry: g,
            coefficients: self.coefficients,
            mass: self.mass,
            nonlinearity: self.nonlinearity,
            f_plus: self.f_plus,
            f_minus: self.f_minus,
            r: self.r,
            w0: self.w0,
            flux: self.flux,
            bounds,
        })
    }
}

/// Cells on `(a, 0)`, cells on `(0, b)` and time steps of the desk grid.
pub const DESK_GRID: (usize, usize, usize) = (20, 20, 40);

/// Desk-scale reference problem: `Ω = (−1, 1)`, `ω = [1/2, 1]`, `T = 1`,
/// unit coefficients, `M = 1`, `w₀ = sin(π(x₁+1)/2) + ½ sin(π(x₁+1))`,
/// `r = 0.3 sin 2x₀`, no source.
pub fn desk_problem() -> ProblemSpec {
    let geometry = Geometry { a: -1.0, b: 1.0, d: 0.5, t_final: 1.0 };
    ProblemSpec::builder(geometry, CoefficientSet::constant(1.0, 1.0, 0.0, 0.0), 1.0)
        .initial_state(Curve::SineModes { lo: -1.0, hi: 1.0, coefficients: alloc::vec![1.0, 0.5] })
        .interface_source(Curve::Sine { amplitude: 0.3, omega: 2.0, phase: 0.0 })
        .build()
        .expect("desk problem is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_geometry() -> Geometry {
        Geometry::new(-1.0, 1.0, 0.5, 1.0).unwrap()
    }

    #[test]
    fn constant_heat_system_is_valid() {
        let spec =
            ProblemSpec::builder(unit_geometry(), CoefficientSet::constant(1.0, 1.0, 0.0, 0.0), 1.0).build().unwrap();
        assert!(spec.is_linear());
        assert_eq!(spec.bounds.min_rho, 1.0);
    }

    #[test]
    fn zero_mass_is_rejected() {
        let err = ProblemSpec::builder(unit_geometry(), CoefficientSet::constant(1.0, 1.0, 0.0, 0.0), 0.0)
            .build()
            .unwrap_err();
        assert!(err.to_string().contains("mass must be positive"), "{err}");
    }

    #[test]
    fn geometry_rejections() {
        assert!(Geometry::new(0.0, 1.0, 0.5, 1.0).is_err());
        assert!(Geometry::new(-1.0, 1.0, 1.0, 1.0).is_err());
        assert!(Geometry::new(-1.0, 1.0, 0.0, 1.0).is_err());
        assert!(Geometry::new(-1.0, 1.0, 0.5, 0.0).is_err());
    }

    #[test]
    fn sinusoidal_rho_minimum_found_by_sampling() {
        // rho = 1 + 0.5 sin(x0) x1 on [0,1] x [0,1]: the minimum over the
        // closed subdomain is 1 (at x0 = 0 or x1 = 0), the sampled minimum
        // over Q is attained at x1 = 0 for any x0; never below 0.5.
        let mut coefficients = CoefficientSet::constant(1.0, 1.0, 0.0, 0.0);
        coefficients.rho_plus =
            Field::Sinusoidal { base: 1.0, amplitude: 0.5, omega: 1.0, phase: 0.0, x_const: 0.0, x_coeff: 1.0 };
        coefficients.alpha = 0.4;
        let spec = ProblemSpec::builder(unit_geometry(), coefficients.clone(), 1.0).build().unwrap();
        assert!(spec.bounds.min_rho >= 0.5 && spec.bounds.min_rho >= coefficients.alpha);

        // With a negative amplitude the minimum is 1 - 0.5 sin(1) ≈ 0.579 at (T, b).
        coefficients.rho_plus =
            Field::Sinusoidal { base: 1.0, amplitude: -0.5, omega: 1.0, phase: 0.0, x_const: 0.0, x_coeff: 1.0 };
        let bounds = coefficients.sample_bounds(&unit_geometry()).unwrap();
        assert!((bounds.min_rho - (1.0 - 0.5 * 1f64.sin())).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_coefficient_rejected() {
        let mut coefficients = CoefficientSet::constant(1.0, 1.0, 0.0, 0.0);
        coefficients.a_minus = Field::Affine { c0: 0.5, c_t: 0.0, c_x: 1.0 };
        let err = ProblemSpec::builder(unit_geometry(), coefficients, 1.0).build().unwrap_err();
        assert!(err.to_string().contains("diffusion coefficient"), "{err}");
    }

    #[test]
    fn initial_state_must_satisfy_dirichlet_ends() {
        let err = ProblemSpec::builder(unit_geometry(), CoefficientSet::constant(1.0, 1.0, 0.0, 0.0), 1.0)
            .initial_state(Curve::Constant(1.0))
            .build()
            .unwrap_err();
        assert!(err.to_string().contains("vanish"), "{err}");
        ProblemSpec::builder(unit_geometry(), CoefficientSet::constant(1.0, 1.0, 0.0, 0.0), 1.0)
            .initial_state(Curve::SineModes { lo: -1.0, hi: 1.0, coefficients: alloc::vec![1.0, 0.3] })
            .build()
            .unwrap();
    }

    #[test]
    fn burgers_values() {
        let n = Nonlinearity::burgers();
        let v = eval_nonlinearity(&n, (0.3, 0.2), 2.0, 3.0).unwrap();
        assert_eq!((v.g, v.dg_dxi1, v.dg_dxi2), (6.0, 3.0, 2.0));
        let v = eval_nonlinearity(&n, (0.3, 0.2), 0.0, -4.5).unwrap();
        assert_eq!((v.g, v.dg_dxi1, v.dg_dxi2), (0.0, -4.5, 0.0));
    }

    fn central_partials(n: &Nonlinearity, x0: f64, x1: f64, xi1: f64, xi2: f64, h: f64) -> (f64, f64) {
        let g = |a: f64, b: f64| n.eval(x0, x1, a, b).unwrap().g;
        ((g(xi1 + h, xi2) - g(xi1 - h, xi2)) / (2.0 * h), (g(xi1, xi2 + h) - g(xi1, xi2 - h)) / (2.0 * h))
    }

    #[test]
    fn burgers_partials_match_central_differences() {
        let n = Nonlinearity::burgers();
        let v = n.eval(0.0, 0.0, 0.7, -1.1).unwrap();
        let (d1, d2) = central_partials(&n, 0.0, 0.0, 0.7, -1.1, 1e-6);
        assert!((v.dg_dxi1 - d1).abs() <= 1e-8);
        assert!((v.dg_dxi2 - d2).abs() <= 1e-8);
    }

    #[test]
    fn non_finite_nonlinearity_is_reported() {
        let n = Nonlinearity {
            kind: NonlinearityKind::Custom {
                g: Arc::new(|_, _, a, _| 1.0 / a),
                dg_dxi1: Arc::new(|_, _, a, _| -1.0 / (a * a)),
                dg_dxi2: Arc::new(|_, _, _, _| 0.0),
            },
            p1: 1.0,
            p2: 1.0,
            p3: 1.0,
        };
        assert!(matches!(n.eval(0.0, 0.0, 0.0, 1.0), Err(Error::NonFinite(_))));
        let err = ProblemSpec::builder(unit_geometry(), CoefficientSet::constant(1.0, 1.0, 0.0, 0.0), 1.0)
            .nonlinearity(Some(n))
            .build()
            .unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn preset_partials_agree_with_finite_differences(
                x0 in -2.0..2.0f64, x1 in -2.0..2.0f64, xi1 in -2.0..2.0f64, xi2 in -2.0..2.0f64
            ) {
                for n in [Nonlinearity::burgers(), Nonlinearity::burgers_scaled(-0.7), Nonlinearity::cubic(0.5)] {
                    let v = n.eval(x0, x1, xi1, xi2).unwrap();
                    let (d1, d2) = central_partials(&n, x0, x1, xi1, xi2, 1e-5);
                    prop_assert!((v.dg_dxi1 - d1).abs() <= 1e-7);
                    prop_assert!((v.dg_dxi2 - d2).abs() <= 1e-7);
                }
            }
        }
    }
}
