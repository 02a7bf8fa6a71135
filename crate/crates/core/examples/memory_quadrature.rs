//! First-order convergence of the memory quadrature on a scalar convolution.
//!
//! With K(t) = exp(-t) and B u = cos t, the exact memory term at t = 1 is
//! (cos 1 + sin 1 - exp(-1)) / 2.

use std::sync::Arc;

use twogrid_pide::problem::Kernel;
use twogrid_pide::{HistoryMode, MemoryHistory, MemoryWeights};

fn main() -> twogrid_pide::Result<()> {
    let kernel: Kernel = Arc::new(|t: f64| (-t).exp());
    let exact = 0.5 * (1f64.cos() + 1f64.sin() - (-1f64).exp());
    let mut prev: Option<f64> = None;
    for n in [8usize, 16, 32, 64, 128, 256] {
        let dt = 1.0 / n as f64;
        let mut weights = MemoryWeights::new(kernel.clone(), dt)?;
        let mut history = MemoryHistory::new(HistoryMode::FineHistory, 1);
        for i in 1..=n {
            history.push(i, vec![(i as f64 * dt).cos()])?;
        }
        let value = history.accumulate_memory(&weights.weights_for_step(n)?, n, dt)?[0];
        let err = (value - exact).abs();
        let order = prev.map_or(String::new(), |p| format!("{:.3}", (p / err).log2()));
        println!("dt = 1/{n:<4} error {err:.4e}  order {order}");
        prev = Some(err);
    }
    Ok(())
}
