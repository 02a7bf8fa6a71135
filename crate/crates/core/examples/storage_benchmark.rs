//! Memory-history storage and run time: standard scheme vs two-grid 4.3.
//!
//! The standard scheme keeps one fine vector per time level; 4.3 keeps only
//! coarse states, so its peak history shrinks by roughly coarse/fine nodes.

use twogrid_pide::manufactured::{section5_problem, ForcingMode};
use twogrid_pide::schemes::RunOptions;
use twogrid_pide::verification::{run_row, StudyRow};
use twogrid_pide::Scheme;

fn main() -> twogrid_pide::Result<()> {
    let spec = section5_problem(ForcingMode::OperatorDerived);
    let options = RunOptions::default();
    println!("{:>6} {:>16} {:>16} {:>8} {:>10} {:>10} {:>10}", "1/h", "standard bytes", "4.3 bytes", "ratio", "nodes H/h", "std s", "4.3 s");
    for fine_n in [16, 32, 64] {
        let row = StudyRow::coupled(fine_n, fine_n);
        let std = run_row(Scheme::Standard, &row, &spec, &options, 1.0)?;
        let tg = run_row(Scheme::TwoGrid43, &row, &spec, &options, 1.0)?;
        println!(
            "{fine_n:>6} {:>16} {:>16} {:>8.4} {:>10.4} {:>10.2} {:>10.2}",
            std.peak_history_bytes,
            tg.peak_history_bytes,
            tg.peak_history_bytes as f64 / std.peak_history_bytes as f64,
            tg.coarse_nodes as f64 / tg.fine_nodes as f64,
            std.wall_seconds,
            tg.wall_seconds
        );
    }
    Ok(())
}
