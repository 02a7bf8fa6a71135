//! Convergence study for two-grid scheme 4.3 with H = ceil-rounded sqrt(h)/2
//! and dt = h.
//!
//! Pass `--large` to include the two finest rows (slow).

use twogrid_pide::manufactured::{section5_problem, ForcingMode};
use twogrid_pide::schemes::RunOptions;
use twogrid_pide::verification::{run_convergence_study, Preset};

fn main() {
    let large = std::env::args().any(|a| a == "--large");
    let spec = section5_problem(ForcingMode::OperatorDerived);
    let preset = Preset::Table1;
    let report = run_convergence_study(preset.default_scheme(), &preset.rows(large), &spec, &RunOptions::default(), 1.0);
    print!("{}", report.to_markdown());
    for (row, err) in report.failures() {
        eprintln!("row h = 1/{} failed: {err}", row.fine_n);
    }
    for r in &report.rows {
        if let (Ok(m), Some(published)) = (&r.outcome, preset.reference_error(&r.row)) {
            let dev = 100.0 * (m.errors.h1 - published) / published;
            println!("H = 1/{:<3} h = 1/{:<4} ours {:.5e}  published {published:.5e}  ({dev:+.3}%)", r.row.coarse_n.unwrap_or(0), r.row.fine_n, m.errors.h1);
        }
    }
}
