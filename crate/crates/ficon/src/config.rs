//! Run configuration: one JSON document per run.
use ficon_core::hum::{Method, PenaltyWeighting, SolverOptions};
use ficon_core::model::{Curve, InterfaceFlux};
use ficon_core::weights::{MVariant, PsiStarForm};
use ficon_core::{CoefficientSet, Field, Geometry, Grid, Nonlinearity, ProblemSpec, WeightParameters, WeightSystem};
use serde::{Deserialize, Serialize};

use crate::run::RunError;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub weights: WeightsConfig,
    #[serde(default)]
    pub forward: ForwardConfig,
    #[serde(default)]
    pub control: ControlConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub trajectory: Option<TrajectoryConfig>,
    #[serde(default)]
    pub observability: ObservabilityConfig,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub a: f64,
    pub b: f64,
    pub d: f64,
    pub t_final: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldConfig {
    Constant(f64),
    Affine { c0: f64, c_t: f64, c_x: f64 },
    Sinusoidal { base: f64, amplitude: f64, omega: f64, phase: f64, x_const: f64, x_coeff: f64 },
    Bump { amplitude: f64, t_center: f64, t_width: f64, x_center: f64, x_width: f64 },
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig::Constant(0.0)
    }
}

impl FieldConfig {
    pub fn build(&self) -> Field {
        match *self {
            FieldConfig::Constant(c) => Field::Constant(c),
            FieldConfig::Affine { c0, c_t, c_x } => Field::Affine { c0, c_t, c_x },
            FieldConfig::Sinusoidal { base, amplitude, omega, phase, x_const, x_coeff } => {
                Field::Sinusoidal { base, amplitude, omega, phase, x_const, x_coeff }
            }
            FieldConfig::Bump { amplitude, t_center, t_width, x_center, x_width } => {
                Field::Bump { amplitude, t_center, t_width, x_center, x_width }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CurveConfig {
    Constant(f64),
    Sine { amplitude: f64, omega: f64, phase: f64 },
    Pulse { amplitude: f64, center: f64, width: f64 },
    SineModes { lo: f64, hi: f64, coefficients: Vec<f64> },
}

impl Default for CurveConfig {
    fn default() -> Self {
        CurveConfig::Constant(0.0)
    }
}

impl CurveConfig {
    pub fn build(&self) -> Curve {
        match self {
            CurveConfig::Constant(c) => Curve::Constant(*c),
            CurveConfig::Sine { amplitude, omega, phase } => {
                Curve::Sine { amplitude: *amplitude, omega: *omega, phase: *phase }
            }
            CurveConfig::Pulse { amplitude, center, width } => {
                Curve::Pulse { amplitude: *amplitude, center: *center, width: *width }
            }
            CurveConfig::SineModes { lo, hi, coefficients } => {
                Curve::SineModes { lo: *lo, hi: *hi, coefficients: coefficients.clone() }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SideCoefficients {
    pub rho: FieldConfig,
    pub a: FieldConfig,
    pub b: FieldConfig,
    pub c: FieldConfig,
}

/// Either one constant set for both sides or a field per coefficient and side.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientsConfig {
    Constant { rho: f64, a: f64, b: f64, c: f64 },
    Fields { plus: SideCoefficients, minus: SideCoefficients, alpha: f64 },
}

impl CoefficientsConfig {
    pub fn build(&self) -> CoefficientSet {
        match self {
            CoefficientsConfig::Constant { rho, a, b, c } => CoefficientSet::constant(*rho, *a, *b, *c),
            CoefficientsConfig::Fields { plus, minus, alpha } => CoefficientSet {
                rho_plus: plus.rho.build(),
                a_plus: plus.a.build(),
                b_plus: plus.b.build(),
                c_plus: plus.c.build(),
                rho_minus: minus.rho.build(),
                a_minus: minus.a.build(),
                b_minus: minus.b.build(),
                c_minus: minus.c.build(),
                alpha: *alpha,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum NonlinearityConfig {
    Burgers { scale: f64 },
    Cubic { scale: f64 },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum FluxConfig {
    #[default]
    Physical,
    Raw,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub geometry: GeometryConfig,
    pub coefficients: CoefficientsConfig,
    pub mass: f64,
    #[serde(default)]
    pub nonlinearity: Option<NonlinearityConfig>,
    #[serde(default)]
    pub f_plus: FieldConfig,
    #[serde(default)]
    pub f_minus: FieldConfig,
    #[serde(default)]
    pub r: CurveConfig,
    #[serde(default)]
    pub w0: CurveConfig,
    #[serde(default)]
    pub flux: FluxConfig,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_minus: usize,
    pub n_plus: usize,
    pub n_steps: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum PsiFormConfig {
    #[default]
    Frozen,
    Corollary,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum MVariantConfig {
    #[default]
    Proposition,
    Theorem,
}

/// Every field optional; missing ones take the library defaults.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct WeightsConfig {
    pub lambda: Option<f64>,
    pub s_hat: Option<f64>,
    pub c_shift: Option<f64>,
    pub beta_offset: Option<f64>,
    pub epsilon_freeze: Option<f64>,
    #[serde(default)]
    pub psi_form: PsiFormConfig,
    #[serde(default)]
    pub m_variant: MVariantConfig,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModeConfig {
    SemiImplicit,
    #[default]
    Newton,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(deny_unknown_fields)]
pub struct ForwardConfig {
    #[serde(default)]
    pub mode: ModeConfig,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyConfig {
    #[default]
    Plain,
    Weighted,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum MethodConfig {
    #[default]
    Riccati,
    Cg,
    JacobiCg,
}

fn default_epsilon() -> f64 {
    1e-5
}

fn default_tolerance() -> f64 {
    1e-10
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub penalty: PenaltyConfig,
    #[serde(default)]
    pub method: MethodConfig,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub max_iterations: Option<usize>,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            epsilon: default_epsilon(),
            penalty: PenaltyConfig::default(),
            method: MethodConfig::default(),
            tolerance: default_tolerance(),
            max_iterations: None,
        }
    }
}

impl ControlConfig {
    pub fn penalty(&self) -> PenaltyWeighting {
        match self.penalty {
            PenaltyConfig::Plain => PenaltyWeighting::Plain,
            PenaltyConfig::Weighted => PenaltyWeighting::Weighted,
        }
    }

    pub fn solver(&self) -> SolverOptions {
        SolverOptions {
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            method: match self.method {
                MethodConfig::Riccati => Method::Riccati,
                MethodConfig::Cg => Method::Cg,
                MethodConfig::JacobiCg => Method::JacobiCg,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub epsilons: Vec<f64>,
}

fn default_max_iters() -> usize {
    8
}

fn default_picard_tolerance() -> f64 {
    1e-4
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryConfig {
    /// Control that generates the target; must vanish off the control window.
    pub target_control: FieldConfig,
    /// Initial state of the target; the problem's `w0` when absent.
    #[serde(default)]
    pub target_w0: Option<CurveConfig>,
    /// Added to the target's initial state.
    pub perturbation: CurveConfig,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_picard_tolerance")]
    pub tolerance: f64,
}

fn default_samples() -> usize {
    20
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct ObservabilityConfig {
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for ObservabilityConfig {
    fn default() -> Self {
        ObservabilityConfig { samples: default_samples(), seed: None }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, RunError> {
        serde_json::from_str(text).map_err(|e| RunError::Config(format!("config: {e}")))
    }

    pub fn problem(&self) -> Result<ProblemSpec, RunError> {
        let p = &self.problem;
        let g = p.geometry;
        let geometry =
            Geometry::new(g.a, g.b, g.d, g.t_final).map_err(|e| RunError::Config(format!("problem.geometry: {e}")))?;
        let nonlinearity = p.nonlinearity.map(|n| match n {
            NonlinearityConfig::Burgers { scale } => Nonlinearity::burgers_scaled(scale),
            NonlinearityConfig::Cubic { scale } => Nonlinearity::cubic(scale),
        });
        ProblemSpec::builder(geometry, p.coefficients.build(), p.mass)
            .nonlinearity(nonlinearity)
            .sources(p.f_plus.build(), p.f_minus.build())
            .interface_source(p.r.build())
            .initial_state(p.w0.build())
            .flux(match p.flux {
                FluxConfig::Physical => InterfaceFlux::Physical,
                FluxConfig::Raw => InterfaceFlux::Raw,
            })
            .build()
            .map_err(|e| RunError::Config(format!("problem: {e}")))
    }

    pub fn grid(&self, geometry: Geometry) -> Result<Grid, RunError> {
        let g = self.grid;
        Grid::new(geometry, g.n_minus, g.n_plus, g.n_steps).map_err(|e| RunError::Config(format!("grid: {e}")))
    }

    pub fn weight_parameters(&self, geometry: &Geometry) -> WeightParameters {
        let w = self.weights;
        let d = WeightParameters::default_for(geometry);
        WeightParameters {
            lambda: w.lambda.unwrap_or(d.lambda),
            s_hat: w.s_hat.unwrap_or(d.s_hat),
            c_shift: w.c_shift.or(d.c_shift),
            beta_offset: w.beta_offset.unwrap_or(d.beta_offset),
            epsilon_freeze: w.epsilon_freeze.unwrap_or(d.epsilon_freeze),
            psi_form: match w.psi_form {
                PsiFormConfig::Frozen => PsiStarForm::Frozen,
                PsiFormConfig::Corollary => PsiStarForm::Corollary,
            },
            m_variant: match w.m_variant {
                MVariantConfig::Proposition => MVariant::Proposition,
                MVariantConfig::Theorem => MVariant::Theorem,
            },
        }
    }

    pub fn weight_system(&self, geometry: &Geometry) -> Result<WeightSystem, RunError> {
        WeightSystem::new(*geometry, self.weight_parameters(geometry))
            .map_err(|e| RunError::Config(format!("weights: {e}")))
    }
}
