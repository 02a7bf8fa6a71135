//! All four schemes side by side on one row of the convergence study.

use twogrid_pide::manufactured::{section5_problem, ForcingMode};
use twogrid_pide::schemes::{Meshes, RunOptions};
use twogrid_pide::verification::error_norms;
use twogrid_pide::{run, Scheme};

fn main() -> twogrid_pide::Result<()> {
    let spec = section5_problem(ForcingMode::OperatorDerived);
    let exact = spec.exact.clone().expect("exact solution");
    let options = RunOptions::default();
    let (coarse, fine, dt) = (8, 32, 1.0 / 16.0);

    println!("H = 1/{coarse}, h = 1/{fine}, dt = {dt}");
    println!("{:<12} {:>12} {:>10} {:>10} {:>14} {:>12}", "scheme", "H1 error", "coarse s", "fine s", "history bytes", "fine entries");
    for scheme in Scheme::ALL {
        let c = scheme.is_two_grid().then_some(coarse);
        let out = run(scheme, &spec, Meshes::unit_square(c, fine)?, dt, 1.0, &options)?;
        let s = &out.stats;
        println!(
            "{:<12} {:>12.5e} {:>10.3} {:>10.3} {:>14} {:>12}",
            scheme.to_string(),
            error_norms(&out.fine, &exact, 1.0).h1,
            s.coarse_seconds,
            s.fine_seconds,
            s.peak_history_bytes,
            s.max_fine_history_entries
        );
    }
    Ok(())
}
