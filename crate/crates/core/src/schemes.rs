//! Time-stepping drivers: the standard fully implicit backward Euler scheme
//! and three two-grid schemes.
//!
//! All schemes advance with the same step `dt`. Each two-grid step first
//! solves the full nonlinear problem on the coarse mesh, then one linear
//! problem on the fine mesh:
//!
//! * [`Scheme::TwoGrid41`]: the fine memory sum uses `B~(U_H^i; U_h^i, v)`, so
//!   the current fine unknown enters through a (nonsymmetric) convection block.
//! * [`Scheme::TwoGrid42`]: past fine levels use `B(U_h^i, v)` and the current
//!   level uses the coarse solution, leaving `M/dt + A` as the fine matrix.
//! * [`Scheme::TwoGrid43`]: the memory form is split into `B~s(U_H^i; U_h^i, v)`
//!   and `N(U_H^i; U_H^i, v)`; the `N` part is built from coarse states only.
//!   Without `alpha`, no fine-grid history is kept at all.

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::assembly::{
    apply_dirichlet_in_place, zero_boundary, FeSpace, FormVariant, MatrixVariant, Sampled, Sampler, WeightedTerm,
};
use crate::memory::{HistoryMode, MemoryHistory, MemoryWeights};
use crate::mesh::{FeFunction, Mesh};
use crate::problem::{Diffusion, ProblemSpec};
use crate::solvers::{newton_solve, solve_nonsymmetric_from, solve_spd_from, LinearSolution, SolverConfig};
use crate::sparse::{dot, CsrMatrix};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Standard,
    #[serde(rename = "twogrid_41")]
    TwoGrid41,
    #[serde(rename = "twogrid_42")]
    TwoGrid42,
    #[serde(rename = "twogrid_43")]
    TwoGrid43,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Standard, Scheme::TwoGrid41, Scheme::TwoGrid42, Scheme::TwoGrid43];

    pub fn is_two_grid(self) -> bool {
        self != Scheme::Standard
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Standard => "standard",
            Scheme::TwoGrid41 => "twogrid_41",
            Scheme::TwoGrid42 => "twogrid_42",
            Scheme::TwoGrid43 => "twogrid_43",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "standard" => Ok(Scheme::Standard),
            "twogrid_41" | "41" | "4.1" => Ok(Scheme::TwoGrid41),
            "twogrid_42" | "42" | "4.2" => Ok(Scheme::TwoGrid42),
            "twogrid_43" | "43" | "4.3" => Ok(Scheme::TwoGrid43),
            other => Err(format!("unknown scheme `{other}` (expected standard, twogrid_41, twogrid_42 or twogrid_43)")),
        }
    }
}

/// Part of a step an error came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Setup,
    Coarse,
    Fine,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Setup => "setup",
            Phase::Coarse => "coarse",
            Phase::Fine => "fine",
        })
    }
}

fn in_step<T>(step: usize, phase: Phase, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Step { step, phase, source: Box::new(e) })
}

/// Uniform time grid `t_n = n dt`, `n = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub dt: f64,
    pub t_final: f64,
    pub steps: usize,
}

impl TimeGrid {
    /// Requires `t_final / dt` to be an integer within `1e-12`.
    pub fn new(dt: f64, t_final: f64) -> Result<Self> {
        if !(dt > 0.0 && t_final > 0.0 && dt.is_finite() && t_final.is_finite()) {
            return Err(Error::Setup(format!("need dt > 0 and T > 0 (got dt={dt}, T={t_final})")));
        }
        let ratio = t_final / dt;
        let steps = ratio.round();
        if (ratio - steps).abs() > 1e-12 * ratio.max(1.0) || steps < 1.0 {
            return Err(Error::Setup(format!("T/dt = {ratio} is not an integer number of steps")));
        }
        Ok(Self { dt, t_final, steps: steps as usize })
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }
}

/// Analytic constants entering the stability bound: coercivity `nu0` of `A`,
/// continuity `mu0` of `B` and the weight bound `k1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityConstants {
    pub nu0: f64,
    pub mu0: f64,
    pub k1: f64,
}

impl StabilityConstants {
    /// Constants for the shipped trigonometric problem on the unit square:
    /// `nu0 = 1 / (1 + P^2)` with Poincare constant `P = 1 / (pi sqrt 2)`,
    /// `mu0 = 3 + sqrt 2` from `|beta(u)| <= sqrt2 |u|`, `|gamma| <= 2`,
    /// `|g(u)| <= |u|`, and `k1 = 1` for `K = e^{-t}`.
    pub fn section5() -> Self {
        let p2 = 1.0 / (2.0 * std::f64::consts::PI.powi(2));
        Self { nu0: 1.0 / (1.0 + p2), mu0: 3.0 + 2f64.sqrt(), k1: 1.0 }
    }

    /// `ln E_n` with `E_n = 6 max{e^{2 t_n}, e^{(2 mu0 k1 t_n / nu0)^2}}`.
    pub fn ln_amplification(&self, t: f64) -> f64 {
        let a = 2.0 * t;
        let b = (2.0 * self.mu0 * self.k1 * t / self.nu0).powi(2);
        6f64.ln() + a.max(b)
    }
}

/// Step-size classification against the `L2` and `H1` stability conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepsizeCheck {
    /// `min{1/2, 7 nu0^2 / (8 mu0^2 k1^2 T)}`.
    pub l2_threshold: f64,
    /// `nu0^2 / (2 mu0^2 k1^2 T)`.
    pub h1_threshold: f64,
    pub admissible_l2: bool,
    pub admissible_h1: bool,
}

impl StepsizeCheck {
    pub fn is_inadmissible(&self) -> bool {
        !self.admissible_l2 && !self.admissible_h1
    }
}

pub fn check_stepsize(dt: f64, t_final: f64, c: &StabilityConstants) -> StepsizeCheck {
    let ratio = c.nu0 * c.nu0 / (c.mu0 * c.mu0 * c.k1 * c.k1 * t_final);
    let l2_threshold = 0.5f64.min(7.0 * ratio / 8.0);
    let h1_threshold = ratio / 2.0;
    StepsizeCheck {
        l2_threshold,
        h1_threshold,
        admissible_l2: dt <= l2_threshold,
        admissible_h1: dt <= h1_threshold,
    }
}

/// Both sides of the discrete stability inequality along a trajectory.
#[derive(Debug, Clone, Default, Serialize)]
pub struct StabilityDiagnostics {
    pub nu0: f64,
    pub mu0: f64,
    pub k1: f64,
    /// `ln E_n` per step.
    pub ln_en: Vec<f64>,
    /// `||U^n|| + (sum ||U^i - U^{i-1}||^2)^{1/2} + sqrt(nu0)/2 (sum dt ||U^i||_1^2)^{1/2}`.
    pub lhs: Vec<f64>,
    /// `ln` of `E_n^{1/2} (||U^0||^2 + dt sum ||f^i||^2)^{1/2}`; kept in log form
    /// because `E_n` overflows for large `mu0 k1 t / nu0`.
    pub ln_rhs: Vec<f64>,
}

impl StabilityDiagnostics {
    /// `true` when the left side never exceeds the right side.
    pub fn holds(&self) -> bool {
        self.lhs.iter().zip(&self.ln_rhs).all(|(l, r)| *l == 0.0 || l.ln() <= *r)
    }

    pub fn en_at_least_six(&self) -> bool {
        self.ln_en.iter().all(|&l| l >= 6f64.ln())
    }
}

struct StabilityTracker {
    constants: StabilityConstants,
    laplace: CsrMatrix,
    u0_sq: f64,
    jumps_sq: f64,
    energy_sq: f64,
    forcing_sq: f64,
    diag: StabilityDiagnostics,
}

impl StabilityTracker {
    fn record(&mut self, mass: &CsrMatrix, prev: &[f64], cur: &[f64], f_norm: f64, dt: f64, t: f64) {
        let mnorm = |v: &[f64]| dot(v, &mass.mul_vec(v)).max(0.0);
        let diff: Vec<f64> = cur.iter().zip(prev).map(|(a, b)| a - b).collect();
        self.jumps_sq += mnorm(&diff);
        let h1_sq = mnorm(cur) + dot(cur, &self.laplace.mul_vec(cur)).max(0.0);
        self.energy_sq += dt * h1_sq;
        self.forcing_sq += dt * f_norm * f_norm;
        let lhs = mnorm(cur).sqrt() + self.jumps_sq.sqrt() + 0.5 * self.constants.nu0.sqrt() * self.energy_sq.sqrt();
        let ln_en = self.constants.ln_amplification(t);
        let data = self.u0_sq + self.forcing_sq;
        let ln_rhs = 0.5 * ln_en + 0.5 * data.ln();
        self.diag.lhs.push(lhs);
        self.diag.ln_en.push(ln_en);
        self.diag.ln_rhs.push(ln_rhs);
    }
}

/// Meshes for a run. Two-grid schemes need a coarse mesh.
#[derive(Debug, Clone)]
pub struct Meshes {
    pub fine: Arc<Mesh>,
    pub coarse: Option<Arc<Mesh>>,
}

impl Meshes {
    pub fn single(fine: Arc<Mesh>) -> Self {
        Self { fine, coarse: None }
    }

    pub fn two_grid(coarse: Arc<Mesh>, fine: Arc<Mesh>) -> Self {
        Self { fine, coarse: Some(coarse) }
    }

    /// Unit-square meshes with `1/coarse` and `1/fine` cells per side.
    pub fn unit_square(coarse: Option<usize>, fine: usize) -> Result<Self> {
        Ok(Self {
            fine: Arc::new(Mesh::unit_square(fine)?),
            coarse: coarse.map(Mesh::unit_square).transpose()?.map(Arc::new),
        })
    }
}

/// Options beyond the scheme and meshes.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub solver: SolverConfig,
    pub constants: Option<StabilityConstants>,
}

/// Per-step diagnostics.
#[derive(Debug, Clone, Default, Serialize)]
pub struct StepReport {
    pub step: usize,
    pub newton_iterations: usize,
    pub linear_iterations: usize,
    pub coarse_seconds: f64,
    pub fine_seconds: f64,
    pub fine_history_entries: usize,
    pub history_bytes: usize,
}

/// Whole-run diagnostics.
#[derive(Debug, Clone, Default, Serialize)]
pub struct RunStats {
    pub steps: Vec<StepReport>,
    pub wall_seconds: f64,
    pub coarse_seconds: f64,
    pub fine_seconds: f64,
    pub peak_history_bytes: usize,
    pub peak_fine_history_bytes: usize,
    pub peak_coarse_history_bytes: usize,
    pub max_fine_history_entries: usize,
    pub fine_nodes: usize,
    pub coarse_nodes: usize,
    pub fine_matrix_assemblies: usize,
}

/// Solutions and histories at the current step.
#[derive(Debug, Clone)]
pub struct SchemeState {
    pub scheme: Scheme,
    pub step: usize,
    pub fine: Vec<f64>,
    pub coarse: Option<Vec<f64>>,
    /// Fine-grid memory data: `B(U^i)` (standard, 4.2), `B~(U_H^i; U_h^i)` (4.1)
    /// or `B~s(U_H^i; U_h^i)` (4.3 with `alpha`); empty for 4.3 without `alpha`.
    pub fine_history: MemoryHistory,
    /// Coarse-grid memory data: assembled `B(U_H^i)` vectors (4.1, 4.2) or the
    /// coarse states `U_H^i` themselves (4.3).
    pub coarse_history: Option<MemoryHistory>,
}

struct Level {
    space: FeSpace,
    mass: CsrMatrix,
    /// Stiffness, cached when the diffusion is time-independent.
    stiffness: Option<CsrMatrix>,
}

impl Level {
    fn new(mesh: Arc<Mesh>, diffusion: &Diffusion) -> Result<Self> {
        let space = FeSpace::new(mesh);
        let mass = space.assemble_mass();
        let stiffness = if diffusion.is_time_dependent() {
            None
        } else {
            Some(space.assemble_stiffness(diffusion, 0.0)?)
        };
        Ok(Self { space, mass, stiffness })
    }

    fn stiffness_at(&self, diffusion: &Diffusion, t: f64) -> Result<std::borrow::Cow<'_, CsrMatrix>> {
        Ok(match &self.stiffness {
            Some(k) => std::borrow::Cow::Borrowed(k),
            None => std::borrow::Cow::Owned(self.space.assemble_stiffness(diffusion, t)?),
        })
    }

    /// `M / dt + A(t)`.
    fn base_matrix(&self, diffusion: &Diffusion, t: f64, dt: f64) -> Result<CsrMatrix> {
        let mut m = self.mass.clone();
        m.scale(1.0 / dt);
        m.axpy(1.0, &*self.stiffness_at(diffusion, t)?)?;
        Ok(m)
    }

    fn mask(&self) -> &[bool] {
        self.space.mesh().boundary_mask()
    }

    fn interpolate_initial(&self, spec: &ProblemSpec) -> Vec<f64> {
        let init = spec.initial.clone();
        let mut u = FeFunction::interpolate(self.space.mesh().clone(), |p| init(p)).into_coeffs();
        zero_boundary(&mut u, self.mask());
        u
    }

    /// Forcing at `t` sampled at quadrature points, its load vector and `L2` norm.
    fn load(&self, spec: &ProblemSpec, t: f64) -> (Vec<f64>, f64) {
        let f = spec.forcing.clone();
        let values = self.space.eval_at_quadrature(|p| f(p, t));
        (self.space.load_from_values(&values), self.space.l2_norm_of_values(&values))
    }
}

/// Outcome of a nonlinear backward Euler step on one level.
struct NonlinearStep {
    solution: Vec<f64>,
    newton_iterations: usize,
    linear_iterations: usize,
}

/// Solves `M (U - prev)/dt + A U + dt w_nn B(U, .) + past = load` by Newton.
#[allow(clippy::too_many_arguments)]
fn nonlinear_step(
    level: &Level,
    spec: &ProblemSpec,
    base: &CsrMatrix,
    prev: &[f64],
    load: &[f64],
    past: &[f64],
    w_nn: f64,
    dt: f64,
    config: &SolverConfig,
) -> Result<NonlinearStep> {
    let mask = level.mask();
    let space = &level.space;
    let memory = spec.memory.as_ref();
    let mass_prev = level.mass.mul_vec(prev);
    let c = dt * w_nn;
    let residual = |u: &[f64]| -> Result<Vec<f64>> {
        let mut r = base.mul_vec(u);
        let su = space.sample(u)?;
        let b = space.assemble_b_vector(su, su, memory, FormVariant::FullB)?;
        for i in 0..r.len() {
            r[i] += c * b[i] + past[i] - load[i] - mass_prev[i] / dt;
            if mask[i] {
                r[i] = u[i];
            }
        }
        Ok(r)
    };
    let jacobian = |u: &[f64]| -> Result<CsrMatrix> {
        let mut j = base.clone();
        j.axpy(c, &space.assemble_b_jacobian(u, memory)?)?;
        let mut dummy = vec![0.0; u.len()];
        apply_dirichlet_in_place(&mut j, &mut dummy, mask);
        Ok(j)
    };
    let sol = newton_solve(residual, jacobian, prev.to_vec(), config)?;
    let mut solution = sol.x;
    zero_boundary(&mut solution, mask);
    Ok(NonlinearStep { solution, newton_iterations: sol.iterations, linear_iterations: sol.linear_iterations })
}

/// Result of a full run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub scheme: Scheme,
    pub fine: FeFunction,
    pub coarse: Option<FeFunction>,
    pub stability: Option<StabilityDiagnostics>,
    pub stats: RunStats,
    pub time: TimeGrid,
}

/// Step-by-step driver for one scheme on one problem.
pub struct SchemeRunner<'a> {
    scheme: Scheme,
    spec: &'a ProblemSpec,
    config: SolverConfig,
    time: TimeGrid,
    weights: MemoryWeights,
    fine: Level,
    coarse: Option<Level>,
    coarse_on_fine: Option<Sampler>,
    fine_spd: Option<CsrMatrix>,
    state: SchemeState,
    stats: RunStats,
    stability: Option<StabilityTracker>,
}

impl<'a> SchemeRunner<'a> {
    pub fn new(
        scheme: Scheme,
        spec: &'a ProblemSpec,
        meshes: Meshes,
        time: TimeGrid,
        options: &RunOptions,
    ) -> Result<Self> {
        spec.validate()?;
        if meshes.fine.domain() != spec.domain {
            return Err(Error::Setup("fine mesh does not cover the problem domain".into()));
        }
        let weights = MemoryWeights::new(spec.kernel.clone(), time.dt)?;
        let fine = Level::new(meshes.fine.clone(), &spec.diffusion)?;
        let (coarse, coarse_on_fine) = if scheme.is_two_grid() {
            let cm = meshes
                .coarse
                .clone()
                .ok_or_else(|| Error::Setup(format!("scheme {scheme} needs a coarse mesh")))?;
            if cm.domain() != spec.domain {
                return Err(Error::Setup("coarse mesh does not cover the problem domain".into()));
            }
            let sampler = fine.space.sampler_from(&cm)?;
            (Some(Level::new(cm, &spec.diffusion)?), Some(sampler))
        } else {
            (None, None)
        };
        let fine_mode = if scheme == Scheme::TwoGrid43 && !spec.memory.has_alpha() {
            HistoryMode::CoarseOnly
        } else {
            HistoryMode::FineHistory
        };
        let state = SchemeState {
            scheme,
            step: 0,
            fine: fine.interpolate_initial(spec),
            coarse: coarse.as_ref().map(|c| c.interpolate_initial(spec)),
            fine_history: MemoryHistory::new(fine_mode, fine.space.num_dofs()),
            coarse_history: coarse.as_ref().map(|c| {
                let mode = if scheme == Scheme::TwoGrid43 { HistoryMode::CoarseOnly } else { HistoryMode::FineHistory };
                MemoryHistory::new(mode, c.space.num_dofs())
            }),
        };
        let stability = match options.constants {
            Some(constants) => {
                let laplace = fine.space.assemble_stiffness(&Diffusion::Identity, 0.0)?;
                let u0_sq = dot(&state.fine, &fine.mass.mul_vec(&state.fine));
                Some(StabilityTracker {
                    constants,
                    laplace,
                    u0_sq,
                    jumps_sq: 0.0,
                    energy_sq: 0.0,
                    forcing_sq: 0.0,
                    diag: StabilityDiagnostics {
                        nu0: constants.nu0,
                        mu0: constants.mu0,
                        k1: constants.k1,
                        ..Default::default()
                    },
                })
            }
            None => None,
        };
        let stats = RunStats {
            fine_nodes: fine.space.num_dofs(),
            coarse_nodes: coarse.as_ref().map_or(0, |c| c.space.num_dofs()),
            ..Default::default()
        };
        Ok(Self {
            scheme,
            spec,
            config: options.solver,
            time,
            weights,
            fine,
            coarse,
            coarse_on_fine,
            fine_spd: None,
            state,
            stats,
            stability,
        })
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn state(&self) -> &SchemeState {
        &self.state
    }

    pub fn stats(&self) -> &RunStats {
        &self.stats
    }

    pub fn time_grid(&self) -> TimeGrid {
        self.time
    }

    pub fn fine_space(&self) -> &FeSpace {
        &self.fine.space
    }

    pub fn coarse_space(&self) -> Option<&FeSpace> {
        self.coarse.as_ref().map(|c| &c.space)
    }

    pub fn fine_mass(&self) -> &CsrMatrix {
        &self.fine.mass
    }

    /// The cached fine-grid matrix of [`Scheme::TwoGrid42`], after Dirichlet elimination.
    pub fn cached_fine_matrix(&self) -> Option<&CsrMatrix> {
        self.fine_spd.as_ref()
    }

    pub fn is_finished(&self) -> bool {
        self.state.step >= self.time.steps
    }

    /// Advances one step with the configured scheme.
    pub fn step(&mut self) -> Result<&StepReport> {
        if self.is_finished() {
            return Err(Error::Setup(format!("run already reached T = {}", self.time.t_final)));
        }
        let n = self.state.step + 1;
        let t = self.time.time(n);
        let start = Instant::now();
        let weights = in_step(n, Phase::Setup, self.weights.weights_for_step(n).map_err(Error::from))?;
        let (fine_load, f_norm) = self.fine.load(self.spec, t);
        let mut report = StepReport { step: n, ..Default::default() };
        let prev = self.state.fine.clone();
        match self.scheme {
            Scheme::Standard => self.step_standard(n, t, &weights, &fine_load, &mut report)?,
            Scheme::TwoGrid41 => {
                self.coarse_step(n, t, &weights, &mut report)?;
                let s = Instant::now();
                in_step(n, Phase::Fine, self.fine_step_41(n, t, &weights, &fine_load, &mut report))?;
                report.fine_seconds = s.elapsed().as_secs_f64();
            }
            Scheme::TwoGrid42 => {
                self.coarse_step(n, t, &weights, &mut report)?;
                let s = Instant::now();
                in_step(n, Phase::Fine, self.fine_step_42(n, t, &weights, &fine_load, &mut report))?;
                report.fine_seconds = s.elapsed().as_secs_f64();
            }
            Scheme::TwoGrid43 => {
                self.coarse_step(n, t, &weights, &mut report)?;
                let s = Instant::now();
                in_step(n, Phase::Fine, self.fine_step_43(n, t, &weights, &fine_load, &mut report))?;
                report.fine_seconds = s.elapsed().as_secs_f64();
            }
        }
        self.state.step = n;
        if let Some(tracker) = self.stability.as_mut() {
            tracker.record(&self.fine.mass, &prev, &self.state.fine, f_norm, self.time.dt, t);
        }
        let fine_bytes = self.state.fine_history.bytes();
        let coarse_bytes = self.state.coarse_history.as_ref().map_or(0, MemoryHistory::bytes);
        report.fine_history_entries = self.state.fine_history.len();
        report.history_bytes = fine_bytes + coarse_bytes;
        let stats = &mut self.stats;
        stats.peak_history_bytes = stats.peak_history_bytes.max(report.history_bytes);
        stats.peak_fine_history_bytes = stats.peak_fine_history_bytes.max(self.state.fine_history.peak_bytes());
        stats.peak_coarse_history_bytes = stats
            .peak_coarse_history_bytes
            .max(self.state.coarse_history.as_ref().map_or(0, MemoryHistory::peak_bytes));
        stats.max_fine_history_entries = stats.max_fine_history_entries.max(report.fine_history_entries);
        stats.coarse_seconds += report.coarse_seconds;
        stats.fine_seconds += report.fine_seconds;
        stats.wall_seconds += start.elapsed().as_secs_f64();
        stats.steps.push(report);
        Ok(self.stats.steps.last().expect("just pushed"))
    }

    /// Standard scheme: Newton on the fine mesh with the full memory sum.
    pub fn step_standard(
        &mut self,
        n: usize,
        t: f64,
        weights: &[f64],
        load: &[f64],
        report: &mut StepReport,
    ) -> Result<()> {
        let s = Instant::now();
        let dt = self.time.dt;
        let result: Result<()> = (|| {
            let past = self.state.fine_history.accumulate_memory(weights, n - 1, dt)?;
            let base = self.fine.base_matrix(&self.spec.diffusion, t, dt)?;
            let step = nonlinear_step(
                &self.fine,
                self.spec,
                &base,
                &self.state.fine,
                load,
                &past,
                weights[n - 1],
                dt,
                &self.config,
            )?;
            let su = self.fine.space.sample(&step.solution)?;
            let b = self.fine.space.assemble_b_vector(su, su, self.spec.memory.as_ref(), FormVariant::FullB)?;
            self.state.fine_history.push(n, b)?;
            report.newton_iterations = step.newton_iterations;
            report.linear_iterations = step.linear_iterations;
            self.state.fine = step.solution;
            Ok(())
        })();
        report.fine_seconds = s.elapsed().as_secs_f64();
        in_step(n, Phase::Fine, result)
    }

    /// Nonlinear coarse step shared by all two-grid schemes.
    fn coarse_step(&mut self, n: usize, t: f64, weights: &[f64], report: &mut StepReport) -> Result<()> {
        let s = Instant::now();
        let dt = self.time.dt;
        let result: Result<()> = (|| {
            let level = self.coarse.as_ref().expect("two-grid scheme has a coarse level");
            let history = self.state.coarse_history.as_mut().expect("two-grid scheme has a coarse history");
            let coarse_prev = self.state.coarse.as_ref().expect("two-grid scheme has a coarse state");
            let memory = self.spec.memory.as_ref();
            let past = match history.mode() {
                HistoryMode::FineHistory => history.accumulate_memory(weights, n - 1, dt)?,
                HistoryMode::CoarseOnly => {
                    let own = level.space.own_sampler();
                    let terms = history
                        .entries()
                        .zip(weights)
                        .map(|(u, &w)| {
                            let su = Sampled::new(own, u)?;
                            Ok(WeightedTerm { weight: dt * w, w: su, u: su })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    level.space.assemble_weighted_b_vector(&terms, memory, FormVariant::FullB)?
                }
            };
            let (load, _) = level.load(self.spec, t);
            let base = level.base_matrix(&self.spec.diffusion, t, dt)?;
            let step = nonlinear_step(level, self.spec, &base, coarse_prev, &load, &past, weights[n - 1], dt, &self.config)?;
            match history.mode() {
                HistoryMode::FineHistory => {
                    let su = level.space.sample(&step.solution)?;
                    history.push(n, level.space.assemble_b_vector(su, su, memory, FormVariant::FullB)?)?;
                }
                HistoryMode::CoarseOnly => history.push(n, step.solution.clone())?,
            }
            report.newton_iterations = step.newton_iterations;
            report.linear_iterations += step.linear_iterations;
            self.state.coarse = Some(step.solution);
            Ok(())
        })();
        report.coarse_seconds = s.elapsed().as_secs_f64();
        in_step(n, Phase::Coarse, result)
    }

    fn coarse_sampled(&self) -> Result<Sampled<'_>> {
        let sampler = self.coarse_on_fine.as_ref().expect("two-grid scheme has a coarse sampler");
        let coeffs = self.state.coarse.as_deref().expect("two-grid scheme has a coarse state");
        Ok(Sampled::new(sampler, coeffs)?)
    }

    /// `load + M prev / dt - memory`, boundary entries handled by elimination.
    fn fine_rhs(&self, load: &[f64], memory: &[f64]) -> Vec<f64> {
        let mp = self.fine.mass.mul_vec(&self.state.fine);
        let dt = self.time.dt;
        load.iter().zip(&mp).zip(memory).map(|((f, m), b)| f + m / dt - b).collect()
    }

    fn finish_fine_solve(&mut self, sol: LinearSolution, report: &mut StepReport) {
        report.linear_iterations += sol.iterations;
        let mut x = sol.x;
        zero_boundary(&mut x, self.fine.mask());
        self.state.fine = x;
    }

    /// Two-grid 4.1 fine step: one nonsymmetric linear solve.
    pub fn fine_step_41(
        &mut self,
        n: usize,
        t: f64,
        weights: &[f64],
        load: &[f64],
        report: &mut StepReport,
    ) -> Result<()> {
        let dt = self.time.dt;
        let w_nn = weights[n - 1];
        let memory = self.spec.memory.as_ref();
        let space = &self.fine.space;
        let cs = self.coarse_sampled()?;
        let mut matrix = self.fine.base_matrix(&self.spec.diffusion, t, dt)?;
        matrix.axpy(dt * w_nn, &space.assemble_btilde_matrix(cs, memory, MatrixVariant::LinearizedBtilde)?)?;
        let frozen = space.assemble_b_vector(cs, cs, memory, FormVariant::FrozenCoefficients)?;
        let mut mem = self.state.fine_history.accumulate_memory(weights, n - 1, dt)?;
        crate::sparse::axpy(dt * w_nn, &frozen, &mut mem);
        let mut rhs = self.fine_rhs(load, &mem);
        apply_dirichlet_in_place(&mut matrix, &mut rhs, self.fine.mask());
        let sol = solve_nonsymmetric_from(&matrix, &rhs, Some(&self.state.fine), &self.config)?;
        self.finish_fine_solve(sol, report);
        let cs = self.coarse_sampled()?;
        let fs = self.fine.space.sample(&self.state.fine)?;
        let entry = self.fine.space.assemble_b_vector(cs, fs, memory, FormVariant::LinearizedBtilde)?;
        self.state.fine_history.push(n, entry)?;
        Ok(())
    }

    /// Two-grid 4.2 fine step: SPD solve with `M/dt + A`; all memory terms are data.
    pub fn fine_step_42(
        &mut self,
        n: usize,
        t: f64,
        weights: &[f64],
        load: &[f64],
        report: &mut StepReport,
    ) -> Result<()> {
        let dt = self.time.dt;
        let memory = self.spec.memory.as_ref();
        let cs = self.coarse_sampled()?;
        let current = self.fine.space.assemble_b_vector(cs, cs, memory, FormVariant::FullB)?;
        let mut mem = self.state.fine_history.accumulate_memory(weights, n - 1, dt)?;
        crate::sparse::axpy(dt * weights[n - 1], &current, &mut mem);
        let mut rhs = self.fine_rhs(load, &mem);
        let mask = self.fine.mask().to_vec();
        if self.fine_spd.is_none() || self.spec.diffusion.is_time_dependent() {
            let mut m = self.fine.base_matrix(&self.spec.diffusion, t, dt)?;
            let mut scratch = vec![0.0; m.nrows()];
            apply_dirichlet_in_place(&mut m, &mut scratch, &mask);
            self.fine_spd = Some(m);
            self.stats.fine_matrix_assemblies += 1;
        }
        crate::assembly::zero_boundary(&mut rhs, &mask);
        let matrix = self.fine_spd.as_ref().expect("assembled above");
        let sol = solve_spd_from(matrix, &rhs, Some(&self.state.fine), &self.config)?;
        self.finish_fine_solve(sol, report);
        let fs = self.fine.space.sample(&self.state.fine)?;
        let entry = self.fine.space.assemble_b_vector(fs, fs, memory, FormVariant::FullB)?;
        self.state.fine_history.push(n, entry)?;
        Ok(())
    }

    /// Two-grid 4.3 fine step: the lower-order memory part comes from coarse
    /// states only; fine history is kept only for the `alpha` block.
    pub fn fine_step_43(
        &mut self,
        n: usize,
        t: f64,
        weights: &[f64],
        load: &[f64],
        report: &mut StepReport,
    ) -> Result<()> {
        let dt = self.time.dt;
        let memory = self.spec.memory.as_ref();
        let with_alpha = memory.has_alpha();
        let sampler = self.coarse_on_fine.as_ref().expect("two-grid scheme has a coarse sampler");
        let history = self.state.coarse_history.as_ref().expect("two-grid scheme has a coarse history");
        let terms = history
            .entries()
            .zip(weights)
            .map(|(u, &w)| {
                let su = Sampled::new(sampler, u)?;
                Ok(WeightedTerm { weight: dt * w, w: su, u: su })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut mem = self.fine.space.assemble_weighted_b_vector(&terms, memory, FormVariant::LowerOrderN)?;
        let mut matrix = self.fine.base_matrix(&self.spec.diffusion, t, dt)?;
        if with_alpha {
            let past = self.state.fine_history.accumulate_memory(weights, n - 1, dt)?;
            crate::sparse::axpy(1.0, &past, &mut mem);
            let cs = self.coarse_sampled()?;
            let bs = self.fine.space.assemble_btilde_matrix(cs, memory, MatrixVariant::SymmetricBs)?;
            matrix.axpy(dt * weights[n - 1], &bs)?;
        }
        let mut rhs = self.fine_rhs(load, &mem);
        apply_dirichlet_in_place(&mut matrix, &mut rhs, self.fine.mask());
        let symmetric = matrix.max_asymmetry() <= 1e-14 * matrix.max_abs();
        let sol = if symmetric {
            solve_spd_from(&matrix, &rhs, Some(&self.state.fine), &self.config)?
        } else {
            solve_nonsymmetric_from(&matrix, &rhs, Some(&self.state.fine), &self.config)?
        };
        self.finish_fine_solve(sol, report);
        if with_alpha {
            let cs = self.coarse_sampled()?;
            let fs = self.fine.space.sample(&self.state.fine)?;
            let entry = self.fine.space.assemble_b_vector(cs, fs, memory, FormVariant::SymmetricBs)?;
            self.state.fine_history.push(n, entry)?;
        }
        Ok(())
    }

    /// Runs the remaining steps and packages the result.
    pub fn finish(mut self) -> Result<RunOutcome> {
        while !self.is_finished() {
            self.step()?;
        }
        Ok(self.into_outcome())
    }

    pub fn into_outcome(self) -> RunOutcome {
        let fine = FeFunction::new(self.fine.space.mesh().clone(), self.state.fine).expect("fine state length");
        let coarse = match (self.coarse, self.state.coarse) {
            (Some(level), Some(c)) => Some(FeFunction::new(level.space.mesh().clone(), c).expect("coarse state length")),
            _ => None,
        };
        RunOutcome {
            scheme: self.scheme,
            fine,
            coarse,
            stability: self.stability.map(|s| s.diag),
            stats: self.stats,
            time: self.time,
        }
    }
}

/// Runs `scheme` on `spec` from `t = 0` to `t_final`.
pub fn run(
    scheme: Scheme,
    spec: &ProblemSpec,
    meshes: Meshes,
    dt: f64,
    t_final: f64,
    options: &RunOptions,
) -> Result<RunOutcome> {
    let time = TimeGrid::new(dt, t_final)?;
    if let Some(c) = options.constants {
        let check = check_stepsize(dt, t_final, &c);
        if check.is_inadmissible() {
            log::warn!(
                "dt = {dt} exceeds both stability thresholds (L2: {:.3e}, H1: {:.3e})",
                check.l2_threshold,
                check.h1_threshold
            );
        }
    }
    SchemeRunner::new(scheme, spec, meshes, time, options)?.finish()
}
