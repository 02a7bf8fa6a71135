//! Manufactured solutions and the forcing terms that make them exact.
//!
//! The shipped case is the bubble `u = x1(1-x1) x2(1-x2) e^{-t}` on the unit
//! square with kernel `e^{-t}`, no diffusion in the memory (`alpha = 0`),
//! `beta = (sin u, 1 - cos u)`, `gamma = (1 - cos u, sin u)` and `g = sin u`.
//! Its forcing can be evaluated from the closed form (two non-elementary time
//! integrals) or derived from the operator applied to the exact solution; the
//! two must agree.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::mesh::{Point, Rect};
use crate::problem::{Diffusion, ExactSolution, MemoryCoefficients, ProblemSpec, Tensor, TrigMemory};
use crate::quadrature::GaussLegendre;

/// How the forcing term is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ForcingMode {
    /// Closed-form expression with its two time integrals done by quadrature.
    PaperFormula,
    /// `f = u_t + A u + int_0^t K(t - s) B u(s) ds` from the exact solution.
    #[default]
    OperatorDerived,
}

/// A smooth exact solution with the derivatives needed to apply the operator.
pub trait ManufacturedSolution: Send + Sync + fmt::Debug {
    fn value(&self, x: Point, t: f64) -> f64;
    fn gradient(&self, x: Point, t: f64) -> [f64; 2];
    fn hessian(&self, x: Point, t: f64) -> Tensor;
    fn time_derivative(&self, x: Point, t: f64) -> f64;
}

/// `u = x1(1-x1) x2(1-x2) e^{-t}`.
#[derive(Debug, Clone, Copy, Default)]
pub struct BubbleSolution;

impl BubbleSolution {
    fn spatial(x: Point) -> f64 {
        x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1])
    }
}

impl ManufacturedSolution for BubbleSolution {
    fn value(&self, x: Point, t: f64) -> f64 {
        Self::spatial(x) * (-t).exp()
    }

    fn gradient(&self, x: Point, t: f64) -> [f64; 2] {
        let e = (-t).exp();
        [
            (1.0 - 2.0 * x[0]) * x[1] * (1.0 - x[1]) * e,
            x[0] * (1.0 - x[0]) * (1.0 - 2.0 * x[1]) * e,
        ]
    }

    fn hessian(&self, x: Point, t: f64) -> Tensor {
        let e = (-t).exp();
        let xy = (1.0 - 2.0 * x[0]) * (1.0 - 2.0 * x[1]) * e;
        [[-2.0 * x[1] * (1.0 - x[1]) * e, xy], [xy, -2.0 * x[0] * (1.0 - x[0]) * e]]
    }

    fn time_derivative(&self, x: Point, t: f64) -> f64 {
        -self.value(x, t)
    }
}

/// Exact solution plus the recipe for its forcing.
#[derive(Clone)]
pub struct ManufacturedProblem {
    pub solution: Arc<dyn ManufacturedSolution>,
    pub mode: ForcingMode,
    rule: GaussLegendre,
    panel_width: f64,
}

impl fmt::Debug for ManufacturedProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ManufacturedProblem")
            .field("solution", &self.solution)
            .field("mode", &self.mode)
            .field("nodes", &self.rule.nodes().len())
            .field("panel_width", &self.panel_width)
            .finish()
    }
}

impl ManufacturedProblem {
    /// Time integrals use 10-point Gauss-Legendre panels of width at most 1/2,
    /// accurate to ~1e-15 relative for the smooth shipped integrands.
    pub fn new(solution: Arc<dyn ManufacturedSolution>, mode: ForcingMode) -> Self {
        Self::with_quadrature(solution, mode, 10, 0.5)
    }

    pub fn with_quadrature(
        solution: Arc<dyn ManufacturedSolution>,
        mode: ForcingMode,
        nodes: usize,
        panel_width: f64,
    ) -> Self {
        Self { solution, mode, rule: GaussLegendre::new(nodes), panel_width }
    }

    pub fn bubble(mode: ForcingMode) -> Self {
        Self::new(Arc::new(BubbleSolution), mode)
    }

    fn panels(&self, t: f64) -> usize {
        ((t / self.panel_width).ceil() as usize).max(1)
    }

    /// Forcing at `(x, t)` in the configured mode. The closed form is only
    /// meaningful for the shipped bubble problem.
    pub fn forcing_value(&self, spec: &ProblemSpec, x: Point, t: f64) -> f64 {
        match self.mode {
            ForcingMode::PaperFormula => self.closed_form_forcing(x, t),
            ForcingMode::OperatorDerived => self.operator_forcing(spec, x, t),
        }
    }

    /// The printed closed-form forcing of the bubble problem, split into its
    /// four terms: `(polynomial, t-proportional, cosine integral, sine integral)`.
    pub fn closed_form_terms(&self, x: Point, t: f64) -> [f64; 4] {
        let (x1, x2) = (x[0], x[1]);
        let e = (-t).exp();
        let phi = BubbleSolution::spatial(x);
        let dphi = (1.0 - 2.0 * x1) * x2 * (1.0 - x2);
        let poly = (2.0 * x1 * (1.0 - x1) - phi + 2.0 * x2 * (1.0 - x2)) * e;
        let linear = dphi * t * e;
        let n = self.panels(t);
        let cos_int = self.rule.integrate(0.0, t, n, |s| (phi * (-s).exp()).cos());
        let sin_int = self.rule.integrate(0.0, t, n, |s| s.exp() * (phi * (-s).exp()).sin());
        [poly, linear, -2.0 * dphi * e * cos_int, e * sin_int]
    }

    fn closed_form_forcing(&self, x: Point, t: f64) -> f64 {
        self.closed_form_terms(x, t).iter().sum()
    }

    /// `A u` at `(x, t)` for the exact solution.
    pub fn elliptic_term(&self, spec: &ProblemSpec, x: Point, t: f64) -> f64 {
        let h = self.solution.hessian(x, t);
        let d = spec.diffusion.at(x, t);
        let mut au = -(d[0][0] * h[0][0] + d[0][1] * h[1][0] + d[1][0] * h[0][1] + d[1][1] * h[1][1]);
        if let Diffusion::Variable { .. } = spec.diffusion {
            // divergence of D picked up by central differences
            let g = self.solution.gradient(x, t);
            let eps = 1e-6;
            for i in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[i] += eps;
                xm[i] -= eps;
                let (dp, dm) = (spec.diffusion.at(xp, t), spec.diffusion.at(xm, t));
                for j in 0..2 {
                    au -= (dp[i][j] - dm[i][j]) / (2.0 * eps) * g[j];
                }
            }
        }
        au
    }

    /// Strong form `B u` of the memory operator at `(x, s)`.
    pub fn memory_integrand(&self, memory: &dyn MemoryCoefficients, x: Point, s: f64) -> f64 {
        let u = self.solution.value(x, s);
        let g = self.solution.gradient(x, s);
        let h = self.solution.hessian(x, s);
        let c = memory.values(u);
        let d = memory.derivatives(u);
        let mut div_alpha = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                div_alpha += d.alpha[i][j] * g[i] * g[j] + c.alpha[i][j] * h[i][j];
            }
        }
        let div_beta = d.beta[0] * g[0] + d.beta[1] * g[1];
        -div_alpha - div_beta + c.gamma[0] * g[0] + c.gamma[1] * g[1] + c.g
    }

    fn operator_forcing(&self, spec: &ProblemSpec, x: Point, t: f64) -> f64 {
        let ut = self.solution.time_derivative(x, t);
        let au = self.elliptic_term(spec, x, t);
        let memory = self.rule.integrate(0.0, t, self.panels(t), |s| {
            (spec.kernel)(t - s) * self.memory_integrand(spec.memory.as_ref(), x, s)
        });
        ut + au + memory
    }

    pub fn exact(&self) -> ExactSolution {
        let v = self.solution.clone();
        let g = self.solution.clone();
        ExactSolution {
            value: Arc::new(move |x, t| v.value(x, t)),
            gradient: Arc::new(move |x, t| g.gradient(x, t)),
        }
    }
}

/// The bubble problem on the unit square with the trigonometric memory and
/// kernel `e^{-t}`, its forcing evaluated in `mode`.
pub fn section5_problem(mode: ForcingMode) -> ProblemSpec {
    let mp = ManufacturedProblem::bubble(mode);
    let mut spec = ProblemSpec {
        name: "paper_section5".into(),
        domain: Rect::unit_square(),
        diffusion: Diffusion::Identity,
        memory: Arc::new(TrigMemory),
        kernel: Arc::new(|t: f64| (-t).exp()),
        forcing: Arc::new(|_, _| 0.0),
        initial: Arc::new(BubbleSolution::spatial),
        exact: Some(mp.exact()),
    };
    let base = spec.clone();
    spec.forcing = Arc::new(move |x, t| mp.forcing_value(&base, x, t));
    spec
}
