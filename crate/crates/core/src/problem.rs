//! Problem data: diffusion operator, nonlinear memory coefficients, kernel,
//! forcing and initial data.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::mesh::{Point, Rect};

/// 2x2 tensor, row-major.
pub type Tensor = [[f64; 2]; 2];

pub const ZERO_TENSOR: Tensor = [[0.0; 2]; 2];
pub const IDENTITY: Tensor = [[1.0, 0.0], [0.0, 1.0]];

pub type ScalarField = Arc<dyn Fn(Point, f64) -> f64 + Send + Sync>;
pub type VectorField = Arc<dyn Fn(Point, f64) -> [f64; 2] + Send + Sync>;
pub type Kernel = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type InitialData = Arc<dyn Fn(Point) -> f64 + Send + Sync>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("beta(0) = {0:?}, must vanish")]
    BetaAtZero([f64; 2]),
    #[error("g(0) = {0}, must vanish")]
    GAtZero(f64),
    #[error("diffusion tensor at ({x}, {y}), t = {t} is not symmetric")]
    NonSymmetricDiffusion { x: f64, y: f64, t: f64 },
    #[error("diffusion tensor at ({x}, {y}), t = {t} is not positive definite")]
    IndefiniteDiffusion { x: f64, y: f64, t: f64 },
}

/// Coefficients of the memory operator
/// `Bu = -div(alpha(u) grad u + beta(u)) + gamma(u) . grad u + g(u)`
/// evaluated at one value of `u`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CoefficientValues {
    pub alpha: Tensor,
    pub beta: [f64; 2],
    pub gamma: [f64; 2],
    pub g: f64,
}

/// Nonlinear memory coefficients together with their derivatives in `u`.
pub trait MemoryCoefficients: Send + Sync + fmt::Debug {
    /// `false` when `alpha` vanishes identically; the two-grid scheme with the
    /// symmetric/lower-order split then needs no fine-grid history.
    fn has_alpha(&self) -> bool;

    fn values(&self, u: f64) -> CoefficientValues;

    /// Derivatives of every coefficient with respect to `u`.
    fn derivatives(&self, u: f64) -> CoefficientValues;

    /// `true` when `B` is linear in `u` (state-independent `alpha` and `gamma`,
    /// linear `beta` and `g`).
    fn is_linear(&self) -> bool {
        false
    }
}

/// `alpha = 0`, `beta = (sin u, 1 - cos u)`, `gamma = (1 - cos u, sin u)`, `g = sin u`.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrigMemory;

impl MemoryCoefficients for TrigMemory {
    fn has_alpha(&self) -> bool {
        false
    }

    fn values(&self, u: f64) -> CoefficientValues {
        let (s, c) = u.sin_cos();
        CoefficientValues { alpha: ZERO_TENSOR, beta: [s, 1.0 - c], gamma: [1.0 - c, s], g: s }
    }

    fn derivatives(&self, u: f64) -> CoefficientValues {
        let (s, c) = u.sin_cos();
        CoefficientValues { alpha: ZERO_TENSOR, beta: [c, s], gamma: [s, c], g: c }
    }
}

/// Memory operator with state-independent `alpha`, `gamma` and linear `beta`, `g`:
/// `alpha(u) = alpha`, `beta(u) = beta * u`, `gamma(u) = gamma`, `g(u) = g * u`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LinearMemory {
    pub alpha: Option<Tensor>,
    pub beta: [f64; 2],
    pub gamma: [f64; 2],
    pub g: f64,
}

impl LinearMemory {
    pub fn zero() -> Self {
        Self::default()
    }
}

impl MemoryCoefficients for LinearMemory {
    fn has_alpha(&self) -> bool {
        self.alpha.is_some()
    }

    fn values(&self, u: f64) -> CoefficientValues {
        CoefficientValues {
            alpha: self.alpha.unwrap_or(ZERO_TENSOR),
            beta: [self.beta[0] * u, self.beta[1] * u],
            gamma: self.gamma,
            g: self.g * u,
        }
    }

    fn derivatives(&self, _u: f64) -> CoefficientValues {
        CoefficientValues { alpha: ZERO_TENSOR, beta: self.beta, gamma: [0.0; 2], g: self.g }
    }

    fn is_linear(&self) -> bool {
        true
    }
}

type CoefFn<T> = Arc<dyn Fn(f64) -> T + Send + Sync>;

/// Memory coefficients built from closures, each paired with its derivative.
#[derive(Clone)]
pub struct FnMemory {
    pub alpha: Option<(CoefFn<Tensor>, CoefFn<Tensor>)>,
    pub beta: (CoefFn<[f64; 2]>, CoefFn<[f64; 2]>),
    pub gamma: (CoefFn<[f64; 2]>, CoefFn<[f64; 2]>),
    pub g: (CoefFn<f64>, CoefFn<f64>),
}

impl fmt::Debug for FnMemory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnMemory").field("has_alpha", &self.alpha.is_some()).finish_non_exhaustive()
    }
}

impl MemoryCoefficients for FnMemory {
    fn has_alpha(&self) -> bool {
        self.alpha.is_some()
    }

    fn values(&self, u: f64) -> CoefficientValues {
        CoefficientValues {
            alpha: self.alpha.as_ref().map_or(ZERO_TENSOR, |a| (a.0)(u)),
            beta: (self.beta.0)(u),
            gamma: (self.gamma.0)(u),
            g: (self.g.0)(u),
        }
    }

    fn derivatives(&self, u: f64) -> CoefficientValues {
        CoefficientValues {
            alpha: self.alpha.as_ref().map_or(ZERO_TENSOR, |a| (a.1)(u)),
            beta: (self.beta.1)(u),
            gamma: (self.gamma.1)(u),
            g: (self.g.1)(u),
        }
    }
}

/// Diffusion tensor of the elliptic operator `A u = -div(D grad u)`.
#[derive(Clone)]
pub enum Diffusion {
    Identity,
    Constant(Tensor),
    Variable { tensor: Arc<dyn Fn(Point, f64) -> Tensor + Send + Sync>, time_dependent: bool },
}

impl fmt::Debug for Diffusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Identity => write!(f, "Identity"),
            Self::Constant(d) => f.debug_tuple("Constant").field(d).finish(),
            Self::Variable { time_dependent, .. } => {
                f.debug_struct("Variable").field("time_dependent", time_dependent).finish_non_exhaustive()
            }
        }
    }
}

impl Diffusion {
    pub fn at(&self, x: Point, t: f64) -> Tensor {
        match self {
            Self::Identity => IDENTITY,
            Self::Constant(d) => *d,
            Self::Variable { tensor, .. } => tensor(x, t),
        }
    }

    pub fn is_time_dependent(&self) -> bool {
        matches!(self, Self::Variable { time_dependent: true, .. })
    }

    /// Constant tensor, if the diffusion does not vary in space or time.
    pub fn as_constant(&self) -> Option<Tensor> {
        match self {
            Self::Identity => Some(IDENTITY),
            Self::Constant(d) => Some(*d),
            Self::Variable { .. } => None,
        }
    }
}

/// Exact solution and its spatial gradient.
#[derive(Clone)]
pub struct ExactSolution {
    pub value: ScalarField,
    pub gradient: VectorField,
}

impl fmt::Debug for ExactSolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ExactSolution")
    }
}

/// Full data of a parabolic integro-differential problem
/// `u_t + A u + int_0^t K(t - s) B u(s) ds = f` with homogeneous Dirichlet data.
#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub domain: Rect,
    pub diffusion: Diffusion,
    pub memory: Arc<dyn MemoryCoefficients>,
    pub kernel: Kernel,
    pub forcing: ScalarField,
    pub initial: InitialData,
    pub exact: Option<ExactSolution>,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("diffusion", &self.diffusion)
            .field("memory", &self.memory)
            .field("has_exact", &self.exact.is_some())
            .finish_non_exhaustive()
    }
}

impl ProblemSpec {
    /// Checks `beta(0) = 0`, `g(0) = 0` and symmetry/positivity of the diffusion
    /// tensor on a 5x5 sample of the domain at `t = 0` and `t = 1`.
    pub fn validate(&self) -> Result<(), ProblemError> {
        let c = self.memory.values(0.0);
        if c.beta != [0.0, 0.0] {
            return Err(ProblemError::BetaAtZero(c.beta));
        }
        if c.g != 0.0 {
            return Err(ProblemError::GAtZero(c.g));
        }
        let d = self.domain;
        for t in [0.0, 1.0] {
            for i in 0..5 {
                for j in 0..5 {
                    let x = [
                        d.ax + (d.bx - d.ax) * i as f64 / 4.0,
                        d.ay + (d.by - d.ay) * j as f64 / 4.0,
                    ];
                    let k = self.diffusion.at(x, t);
                    let scale = k[0][0].abs().max(k[1][1].abs()).max(f64::MIN_POSITIVE);
                    if (k[0][1] - k[1][0]).abs() > 1e-12 * scale {
                        return Err(ProblemError::NonSymmetricDiffusion { x: x[0], y: x[1], t });
                    }
                    if !(k[0][0] > 0.0 && k[0][0] * k[1][1] - k[0][1] * k[1][0] > 0.0) {
                        return Err(ProblemError::IndefiniteDiffusion { x: x[0], y: x[1], t });
                    }
                }
            }
        }
        Ok(())
    }

    /// `f = 0`, `u0 = 0` on the unit square with the trigonometric memory.
    /// Every scheme must keep this problem at exactly zero.
    pub fn zero_problem() -> Self {
        Self {
            name: "zero".into(),
            domain: Rect::unit_square(),
            diffusion: Diffusion::Identity,
            memory: Arc::new(TrigMemory),
            kernel: Arc::new(|t: f64| (-t).exp()),
            forcing: Arc::new(|_, _| 0.0),
            initial: Arc::new(|_| 0.0),
            exact: Some(ExactSolution {
                value: Arc::new(|_, _| 0.0),
                gradient: Arc::new(|_, _| [0.0, 0.0]),
            }),
        }
    }

    /// Heat equation `u_t - lap u = f` with no memory, manufactured so that
    /// `u = sin(pi x1) sin(pi x2) e^{-t}`.
    pub fn heat_no_memory() -> Self {
        use std::f64::consts::PI;
        let value: ScalarField = Arc::new(|x: Point, t: f64| (PI * x[0]).sin() * (PI * x[1]).sin() * (-t).exp());
        let gradient: VectorField = Arc::new(|x: Point, t: f64| {
            let e = (-t).exp();
            [
                PI * (PI * x[0]).cos() * (PI * x[1]).sin() * e,
                PI * (PI * x[0]).sin() * (PI * x[1]).cos() * e,
            ]
        });
        Self {
            name: "heat_no_memory".into(),
            domain: Rect::unit_square(),
            diffusion: Diffusion::Identity,
            memory: Arc::new(LinearMemory::zero()),
            kernel: Arc::new(|t: f64| (-t).exp()),
            forcing: Arc::new(|x: Point, t: f64| {
                (2.0 * PI * PI - 1.0) * (PI * x[0]).sin() * (PI * x[1]).sin() * (-t).exp()
            }),
            initial: Arc::new(|x: Point| (PI * x[0]).sin() * (PI * x[1]).sin()),
            exact: Some(ExactSolution { value, gradient }),
        }
    }
}
