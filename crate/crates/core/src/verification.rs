//! Error norms against exact solutions, convergence studies and their
//! CSV/Markdown reports.

use std::fmt::Write as _;
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::mesh::FeFunction;
use crate::problem::{ExactSolution, ProblemSpec};
use crate::quadrature::QuadratureRule;
use crate::schemes::{Meshes, RunOptions, Scheme, SchemeRunner, TimeGrid};
use crate::{Error, Result};

/// Version tag written in the first line of every CSV report.
pub const CSV_SCHEMA: &str = "# twogrid-pide convergence csv v1";

/// Published final-time `H1` errors of the standard scheme, `(1/h, error)`.
pub const TABLE2_REFERENCE: [(usize, f64); 8] = [
    (4, 2.17183e-2),
    (8, 1.11115e-2),
    (16, 5.58847e-3),
    (32, 2.79844e-3),
    (64, 1.39977e-3),
    (128, 6.99958e-4),
    (256, 3.49990e-4),
    (512, 1.74996e-4),
];

/// Published final-time `H1` errors of two-grid scheme 4.3, `(1/H, 1/h, error)`.
pub const TABLE1_REFERENCE: [(usize, usize, f64); 8] = [
    (4, 4, 2.17236e-2),
    (6, 8, 1.11164e-2),
    (8, 16, 5.59226e-3),
    (12, 32, 2.80089e-3),
    (16, 64, 1.40136e-3),
    (23, 128, 7.00760e-4),
    (32, 256, 3.50427e-4),
    (46, 512, 1.75207e-4),
];

/// `L2` and `H1` errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorNorms {
    pub l2: f64,
    pub h1: f64,
}

/// `||U - u(t)||` and `(||U - u||^2 + ||grad U - grad u||^2)^{1/2}` with the
/// degree-4 rule on every triangle of the function's mesh.
pub fn error_norms(numeric: &FeFunction, exact: &ExactSolution, t: f64) -> ErrorNorms {
    let mesh = numeric.mesh();
    let c = numeric.coeffs();
    let rule = QuadratureRule::degree4();
    let (l2, grad): (f64, f64) = (0..mesh.num_triangles())
        .into_par_iter()
        .map(|tri| {
            let nodes = mesh.triangles()[tri];
            let geo = mesh.geometry(tri);
            let vals = [c[nodes[0]], c[nodes[1]], c[nodes[2]]];
            let mut du = [0.0; 2];
            for a in 0..3 {
                du[0] += geo.grads[a][0] * vals[a];
                du[1] += geo.grads[a][1] * vals[a];
            }
            let (mut e0, mut e1) = (0.0, 0.0);
            for (b, w) in rule.points.iter().zip(&rule.weights) {
                let x = mesh.map_point(tri, *b);
                let uh = b[0] * vals[0] + b[1] * vals[1] + b[2] * vals[2];
                let g = (exact.gradient)(x, t);
                e0 += w * (uh - (exact.value)(x, t)).powi(2);
                e1 += w * ((du[0] - g[0]).powi(2) + (du[1] - g[1]).powi(2));
            }
            (geo.area * e0, geo.area * e1)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((0.0, 0.0), |acc, x| (acc.0 + x.0, acc.1 + x.1));
    ErrorNorms { l2: l2.sqrt(), h1: (l2 + grad).sqrt() }
}

/// `log(e0 / e1) / log(p0 / p1)`.
pub fn observed_order(e0: f64, e1: f64, p0: f64, p1: f64) -> f64 {
    (e0 / e1).ln() / (p0 / p1).ln()
}

/// One refinement level: `h = 1/fine_n`, `dt = 1/dt_inv`, optional `H = 1/coarse_n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StudyRow {
    pub coarse_n: Option<usize>,
    pub fine_n: usize,
    pub dt_inv: usize,
    /// Unrounded coarse size used for the `H` order column. When absent the
    /// actual `1/coarse_n` is used.
    pub nominal_coarse: Option<f64>,
}

impl StudyRow {
    pub fn single(fine_n: usize, dt_inv: usize) -> Self {
        Self { coarse_n: None, fine_n, dt_inv, nominal_coarse: None }
    }

    pub fn two_grid(coarse_n: usize, fine_n: usize, dt_inv: usize) -> Self {
        Self { coarse_n: Some(coarse_n), fine_n, dt_inv, nominal_coarse: None }
    }

    /// Two-grid row with `H = 1/ceil(2 sqrt(1/h))`, the integer reciprocal
    /// closest to `sqrt(h)/2` from below, and the nominal `sqrt(h)/2` kept for orders.
    pub fn coupled(fine_n: usize, dt_inv: usize) -> Self {
        let h = 1.0 / fine_n as f64;
        let nominal = 0.5 * h.sqrt();
        let coarse_n = (1.0 / nominal - 1e-9).ceil() as usize;
        Self { coarse_n: Some(coarse_n), fine_n, dt_inv, nominal_coarse: Some(nominal) }
    }

    pub fn h(&self) -> f64 {
        1.0 / self.fine_n as f64
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.dt_inv as f64
    }

    pub fn coarse_h(&self) -> Option<f64> {
        self.coarse_n.map(|n| 1.0 / n as f64)
    }

    fn coarse_for_order(&self) -> Option<f64> {
        self.nominal_coarse.or_else(|| self.coarse_h())
    }
}

/// Named row sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Two-grid rows `h = 1/2^l`, `H ~ sqrt(h)/2`, `dt = 2h`, `l = 2..9`.
    Table1,
    /// Standard-scheme rows `h = 1/2^l`, `dt = 2h`, `l = 2..9`.
    Table2,
}

impl Preset {
    pub fn default_scheme(self) -> Scheme {
        match self {
            Preset::Table1 => Scheme::TwoGrid43,
            Preset::Table2 => Scheme::Standard,
        }
    }

    /// All eight rows; the last two are the large ones.
    pub fn all_rows(self) -> Vec<StudyRow> {
        (2..=9)
            .map(|l| {
                let n = 1usize << l;
                match self {
                    Preset::Table1 => StudyRow::coupled(n, n / 2),
                    Preset::Table2 => StudyRow::single(n, n / 2),
                }
            })
            .collect()
    }

    /// Rows up to `h = 1/128`, or all eight with `large`.
    pub fn rows(self, large: bool) -> Vec<StudyRow> {
        let mut rows = self.all_rows();
        if !large {
            rows.truncate(6);
        }
        rows
    }

    /// Published `H1` error for a row of this preset, if any.
    pub fn reference_error(self, row: &StudyRow) -> Option<f64> {
        match self {
            Preset::Table1 => TABLE1_REFERENCE
                .iter()
                .find(|(c, f, _)| Some(*c) == row.coarse_n && *f == row.fine_n)
                .map(|r| r.2),
            Preset::Table2 => TABLE2_REFERENCE.iter().find(|(f, _)| *f == row.fine_n).map(|r| r.1),
        }
    }
}

/// Measurements of a successful row.
#[derive(Debug, Clone, Serialize)]
pub struct RowMeasurements {
    pub errors: ErrorNorms,
    pub wall_seconds: f64,
    pub coarse_seconds: f64,
    pub fine_seconds: f64,
    pub peak_history_bytes: usize,
    pub peak_fine_history_bytes: usize,
    pub max_fine_history_entries: usize,
    pub coarse_nodes: usize,
    pub fine_nodes: usize,
    pub newton_iterations: usize,
    pub linear_iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RowResult {
    pub row: StudyRow,
    pub outcome: std::result::Result<RowMeasurements, String>,
}

/// Observed orders between two consecutive successful rows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Orders {
    pub h: Option<f64>,
    pub coarse: Option<f64>,
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub scheme: Scheme,
    pub problem: String,
    pub t_final: f64,
    pub rows: Vec<RowResult>,
    /// `orders[k]` compares rows `k` and `k + 1`.
    pub orders: Vec<Orders>,
}

fn refines(p0: f64, p1: f64) -> bool {
    (p0 / p1 - 1.0).abs() > 1e-12
}

fn compute_orders(rows: &[RowResult]) -> Vec<Orders> {
    rows.windows(2)
        .map(|w| {
            let (a, b) = (&w[0], &w[1]);
            let (Ok(ma), Ok(mb)) = (&a.outcome, &b.outcome) else {
                return Orders::default();
            };
            let (e0, e1) = (ma.errors.h1, mb.errors.h1);
            if !(e0 > 0.0 && e1 > 0.0) {
                return Orders::default();
            }
            let order = |p0: f64, p1: f64| refines(p0, p1).then(|| observed_order(e0, e1, p0, p1));
            Orders {
                h: order(a.row.h(), b.row.h()),
                coarse: match (a.row.coarse_for_order(), b.row.coarse_for_order()) {
                    (Some(p0), Some(p1)) => order(p0, p1),
                    _ => None,
                },
                dt: order(a.row.dt(), b.row.dt()),
            }
        })
        .collect()
}

/// Runs one row to `t_final` and measures its errors.
pub fn run_row(
    scheme: Scheme,
    row: &StudyRow,
    spec: &ProblemSpec,
    options: &RunOptions,
    t_final: f64,
) -> Result<RowMeasurements> {
    let exact = spec
        .exact
        .as_ref()
        .ok_or_else(|| Error::Setup(format!("problem `{}` has no exact solution", spec.name)))?;
    let coarse = if scheme.is_two_grid() {
        Some(row.coarse_n.ok_or_else(|| Error::Setup(format!("scheme {scheme} needs a coarse mesh size")))?)
    } else {
        None
    };
    let start = Instant::now();
    let meshes = Meshes::unit_square(coarse, row.fine_n)?;
    let time = TimeGrid::new(row.dt(), t_final)?;
    let outcome = SchemeRunner::new(scheme, spec, meshes, time, options)?.finish()?;
    let wall_seconds = start.elapsed().as_secs_f64();
    let errors = error_norms(&outcome.fine, exact, t_final);
    if !(errors.l2.is_finite() && errors.h1.is_finite()) {
        return Err(Error::Setup("non-finite error norm".into()));
    }
    let s = &outcome.stats;
    Ok(RowMeasurements {
        errors,
        wall_seconds,
        coarse_seconds: s.coarse_seconds,
        fine_seconds: s.fine_seconds,
        peak_history_bytes: s.peak_history_bytes,
        peak_fine_history_bytes: s.peak_fine_history_bytes,
        max_fine_history_entries: s.max_fine_history_entries,
        coarse_nodes: s.coarse_nodes,
        fine_nodes: s.fine_nodes,
        newton_iterations: s.steps.iter().map(|r| r.newton_iterations).sum(),
        linear_iterations: s.steps.iter().map(|r| r.linear_iterations).sum(),
    })
}

/// Runs every row (concurrently) and computes orders between consecutive rows.
/// A failing row is recorded and the study continues.
pub fn run_convergence_study(
    scheme: Scheme,
    rows: &[StudyRow],
    spec: &ProblemSpec,
    options: &RunOptions,
    t_final: f64,
) -> ConvergenceReport {
    let results: Vec<RowResult> = rows
        .par_iter()
        .map(|row| RowResult {
            row: *row,
            outcome: run_row(scheme, row, spec, options, t_final).map_err(|e| e.to_string()),
        })
        .collect();
    let orders = compute_orders(&results);
    ConvergenceReport { scheme, problem: spec.name.clone(), t_final, rows: results, orders }
}

fn fraction(n: usize) -> String {
    format!("1/{n}")
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(String::new, |x| format!("{x:.digits$}"))
}

impl ConvergenceReport {
    pub fn is_success(&self) -> bool {
        self.rows.iter().all(|r| r.outcome.is_ok())
    }

    pub fn failures(&self) -> impl Iterator<Item = (&StudyRow, &str)> {
        self.rows.iter().filter_map(|r| r.outcome.as_ref().err().map(|e| (&r.row, e.as_str())))
    }

    pub fn h1_errors(&self) -> Vec<Option<f64>> {
        self.rows.iter().map(|r| r.outcome.as_ref().ok().map(|m| m.errors.h1)).collect()
    }

    fn order_before(&self, k: usize) -> Orders {
        if k == 0 {
            Orders::default()
        } else {
            self.orders[k - 1]
        }
    }

    /// CSV with a versioned comment line, one row per refinement level.
    /// Timings vary between runs and are only written with `timings`.
    pub fn write_csv<W: Write>(&self, mut out: W, timings: bool) -> Result<()> {
        writeln!(out, "{CSV_SCHEMA}")?;
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![
            "scheme", "problem", "H", "h", "dt", "l2_error", "h1_error", "h_order", "H_order", "dt_order",
            "peak_history_bytes", "fine_history_bytes", "coarse_nodes", "fine_nodes", "status",
        ];
        if timings {
            header.extend(["wall_seconds", "coarse_seconds", "fine_seconds"]);
        }
        w.write_record(&header)?;
        let sci = |x: f64| format!("{x:.5e}");
        for (k, r) in self.rows.iter().enumerate() {
            let o = self.order_before(k);
            let mut rec = vec![
                self.scheme.to_string(),
                self.problem.clone(),
                r.row.coarse_h().map_or_else(String::new, sci),
                sci(r.row.h()),
                sci(r.row.dt()),
            ];
            match &r.outcome {
                Ok(m) => {
                    rec.extend([sci(m.errors.l2), sci(m.errors.h1)]);
                    rec.extend([o.h, o.coarse, o.dt].map(|v| v.map_or_else(String::new, sci)));
                    rec.extend([
                        m.peak_history_bytes.to_string(),
                        m.peak_fine_history_bytes.to_string(),
                        m.coarse_nodes.to_string(),
                        m.fine_nodes.to_string(),
                        "ok".into(),
                    ]);
                    if timings {
                        rec.extend([sci(m.wall_seconds), sci(m.coarse_seconds), sci(m.fine_seconds)]);
                    }
                }
                Err(e) => {
                    rec.extend(std::iter::repeat_n(String::new(), 9));
                    rec.push(format!("failed: {e}"));
                    if timings {
                        rec.extend(std::iter::repeat_n(String::new(), 3));
                    }
                }
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Markdown table in the column order `H, h, dt, H1 error, h order,
    /// H order, dt order`; the `H` columns are left out for single-grid runs.
    pub fn to_markdown(&self) -> String {
        let two_grid = self.rows.iter().any(|r| r.row.coarse_n.is_some());
        let mut s = String::new();
        if two_grid {
            s.push_str("| H | h | Δt | ‖U_h^T − u(T)‖₁ | h order | H order | Δt order |\n");
            s.push_str("|---|---|---|---|---|---|---|\n");
        } else {
            s.push_str("| h | Δt | ‖U_h^T − u(T)‖₁ | h order | Δt order |\n");
            s.push_str("|---|---|---|---|---|\n");
        }
        for (k, r) in self.rows.iter().enumerate() {
            let o = self.order_before(k);
            let err = match &r.outcome {
                Ok(m) => format!("{:.5e}", m.errors.h1),
                Err(_) => "failed".into(),
            };
            if two_grid {
                let _ = writeln!(
                    s,
                    "| {} | {} | {} | {} | {} | {} | {} |",
                    r.row.coarse_n.map_or_else(String::new, fraction),
                    fraction(r.row.fine_n),
                    fraction(r.row.dt_inv),
                    err,
                    fmt_opt(o.h, 2),
                    fmt_opt(o.coarse, 2),
                    fmt_opt(o.dt, 2)
                );
            } else {
                let _ = writeln!(
                    s,
                    "| {} | {} | {} | {} | {} |",
                    fraction(r.row.fine_n),
                    fraction(r.row.dt_inv),
                    err,
                    fmt_opt(o.h, 2),
                    fmt_opt(o.dt, 2)
                );
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manufactured::{ForcingMode, ManufacturedProblem};
    use crate::mesh::Mesh;
    use std::sync::Arc;

    fn bubble_exact() -> ExactSolution {
        ManufacturedProblem::bubble(ForcingMode::OperatorDerived).exact()
    }

    #[test]
    fn linear_interpolant_has_zero_error() {
        let mesh = Arc::new(Mesh::unit_square(3).unwrap());
        let exact = ExactSolution {
            value: Arc::new(|x, _| 2.0 * x[0] - x[1] + 0.5),
            gradient: Arc::new(|_, _| [2.0, -1.0]),
        };
        let u = FeFunction::interpolate(mesh, |x| 2.0 * x[0] - x[1] + 0.5);
        let e = error_norms(&u, &exact, 0.0);
        assert!(e.l2 < 1e-12 && e.h1 < 1e-12, "{e:?}");
    }

    #[test]
    fn zero_function_error_is_bubble_norm() {
        let mesh = Arc::new(Mesh::unit_square(8).unwrap());
        let e = error_norms(&FeFunction::zeros(mesh), &bubble_exact(), 1.0);
        // degree-8 integrand, so the degree-4 rule is only accurate to quadrature error
        assert!((e.l2 - (-1.0f64).exp() / 30.0).abs() < 1e-10, "{}", e.l2);
    }

    #[test]
    fn interpolation_error_is_first_order_in_h1() {
        let exact = bubble_exact();
        let errs: Vec<f64> = [8, 16, 32]
            .iter()
            .map(|&n| {
                let mesh = Arc::new(Mesh::unit_square(n).unwrap());
                let u = FeFunction::interpolate(mesh, |x| (exact.value)(x, 1.0));
                error_norms(&u, &exact, 1.0).h1
            })
            .collect();
        for w in errs.windows(2) {
            assert!((observed_order(w[0], w[1], 2.0, 1.0) - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn synthetic_orders_are_exact() {
        for k in 0..10 {
            let e0 = 3.0 * 2f64.powi(-k);
            let e1 = 3.0 * 2f64.powi(-k - 1);
            assert!((observed_order(e0, e1, 1.0, 0.5) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn coupled_coarse_sizes() {
        let got: Vec<usize> = Preset::Table1.all_rows().iter().map(|r| r.coarse_n.unwrap()).collect();
        assert_eq!(got, vec![4, 6, 8, 12, 16, 23, 32, 46]);
        let rows = Preset::Table1.all_rows();
        assert_eq!(rows.len(), 8);
        assert_eq!((rows[5].fine_n, rows[5].dt_inv), (128, 64));
        assert_eq!(Preset::Table2.rows(false).len(), 6);
        assert_eq!(Preset::Table1.reference_error(&rows[2]), Some(5.59226e-3));
    }

    #[test]
    fn single_row_has_no_orders() {
        let spec = ProblemSpec::zero_problem();
        let r = run_convergence_study(Scheme::Standard, &[StudyRow::single(2, 2)], &spec, &RunOptions::default(), 1.0);
        assert!(r.orders.is_empty());
        assert!(r.is_success());
        let md = r.to_markdown();
        assert_eq!(md.lines().count(), 3);
    }

    #[test]
    fn nominal_coarse_doubles_h_order() {
        let mk = |n: usize, e: f64| RowResult {
            row: StudyRow::coupled(n, n / 2),
            outcome: Ok(RowMeasurements {
                errors: ErrorNorms { l2: e, h1: e },
                wall_seconds: 0.0,
                coarse_seconds: 0.0,
                fine_seconds: 0.0,
                peak_history_bytes: 0,
                peak_fine_history_bytes: 0,
                max_fine_history_entries: 0,
                coarse_nodes: 0,
                fine_nodes: 0,
                newton_iterations: 0,
                linear_iterations: 0,
            }),
        };
        let o = compute_orders(&[mk(16, 4e-3), mk(32, 2e-3)]);
        assert!((o[0].h.unwrap() - 1.0).abs() < 1e-12);
        assert!((o[0].coarse.unwrap() - 2.0).abs() < 1e-12);
        assert!((o[0].dt.unwrap() - 1.0).abs() < 1e-12);
    }
}
