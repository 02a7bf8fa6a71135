//! The standard Newton-based scheme on the manufactured test problem.

use twogrid_pide::manufactured::{section5_problem, ForcingMode};
use twogrid_pide::schemes::{Meshes, RunOptions};
use twogrid_pide::verification::error_norms;
use twogrid_pide::{run, Scheme};

fn main() -> twogrid_pide::Result<()> {
    let spec = section5_problem(ForcingMode::OperatorDerived);
    let exact = spec.exact.clone().expect("manufactured problem has an exact solution");
    let options = RunOptions::default();

    for (n, k) in [(8, 4), (16, 8), (32, 16)] {
        let out = run(Scheme::Standard, &spec, Meshes::unit_square(None, n)?, 1.0 / k as f64, 1.0, &options)?;
        let err = error_norms(&out.fine, &exact, 1.0);
        let newton: usize = out.stats.steps.iter().map(|s| s.newton_iterations).sum();
        println!(
            "h = 1/{n:<3} dt = 1/{k:<3} L2 {:.5e}  H1 {:.5e}  Newton its {newton}  {:.2}s",
            err.l2, err.h1, out.stats.wall_seconds
        );
    }
    Ok(())
}
