//! Closed-form forcing vs forcing derived from the operator by quadrature.

use twogrid_pide::manufactured::{section5_problem, ForcingMode, ManufacturedProblem};

fn main() {
    let spec = section5_problem(ForcingMode::OperatorDerived);
    let closed = ManufacturedProblem::bubble(ForcingMode::PaperFormula);
    let derived = ManufacturedProblem::bubble(ForcingMode::OperatorDerived);
    let mut worst = 0.0f64;
    for i in 1..10 {
        for j in 1..10 {
            let x = [i as f64 / 10.0, j as f64 / 10.0];
            for t in [0.1, 0.5, 1.0] {
                let a = closed.forcing_value(&spec, x, t);
                let b = derived.forcing_value(&spec, x, t);
                worst = worst.max((a - b).abs());
            }
        }
    }
    let x = [0.3, 0.6];
    println!("terms of the closed form at x = {x:?}, t = 1: {:?}", closed.closed_form_terms(x, 1.0));
    println!("max deviation over a 9x9x3 grid: {worst:.3e}");
}
