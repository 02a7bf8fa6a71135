//! Step-size admissibility and the discrete stability inequality along a run.

use twogrid_pide::manufactured::{section5_problem, ForcingMode};
use twogrid_pide::schemes::{check_stepsize, Meshes, RunOptions, StabilityConstants};
use twogrid_pide::{run, Scheme};

fn main() -> twogrid_pide::Result<()> {
    let c = StabilityConstants::section5();
    println!("nu0 = {:.6}, mu0 = {:.6}, k1 = {}", c.nu0, c.mu0, c.k1);
    for k in [8usize, 32, 64, 256] {
        let check = check_stepsize(1.0 / k as f64, 1.0, &c);
        println!(
            "dt = 1/{k:<4} L2 admissible: {:<5} H1 admissible: {:<5} (thresholds {:.4}, {:.4})",
            check.admissible_l2, check.admissible_h1, check.l2_threshold, check.h1_threshold
        );
    }

    let spec = section5_problem(ForcingMode::OperatorDerived);
    let options = RunOptions { constants: Some(c), ..Default::default() };
    let out = run(Scheme::TwoGrid43, &spec, Meshes::unit_square(Some(8), 16)?, 1.0 / 256.0, 1.0, &options)?;
    let d = out.stability.expect("diagnostics requested");
    for n in [0, 63, 127, 255] {
        println!("step {:>3}: lhs {:.4e}  ln rhs {:.4}  ln E_n {:.4}", n + 1, d.lhs[n], d.ln_rhs[n], d.ln_en[n]);
    }
    println!("inequality holds at every step: {}", d.holds());
    Ok(())
}
