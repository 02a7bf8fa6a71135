//! Convergence study for the standard scheme with h = dt coupled.
//!
//! Pass `--large` to include h = 1/256 and 1/512 (slow).

use twogrid_pide::manufactured::{section5_problem, ForcingMode};
use twogrid_pide::schemes::RunOptions;
use twogrid_pide::verification::{run_convergence_study, Preset};

fn main() -> twogrid_pide::Result<()> {
    let large = std::env::args().any(|a| a == "--large");
    let spec = section5_problem(ForcingMode::OperatorDerived);
    let preset = Preset::Table2;
    let report = run_convergence_study(preset.default_scheme(), &preset.rows(large), &spec, &RunOptions::default(), 1.0);
    print!("{}", report.to_markdown());
    for r in &report.rows {
        if let (Ok(m), Some(published)) = (&r.outcome, preset.reference_error(&r.row)) {
            println!("h = 1/{:<4} ours {:.5e}  published {published:.5e}", r.row.fine_n, m.errors.h1);
        }
    }
    report.write_csv(std::io::stdout().lock(), false)?;
    Ok(())
}
