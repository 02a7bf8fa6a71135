//! CG and BiCGStab on assembled finite element systems.

use std::sync::Arc;

use twogrid_pide::problem::Diffusion;
use twogrid_pide::solvers::{solve_nonsymmetric, solve_spd};
use twogrid_pide::sparse::norm2;
use twogrid_pide::{FeSpace, Mesh, SolverConfig};

fn main() -> twogrid_pide::Result<()> {
    let space = FeSpace::new(Arc::new(Mesh::unit_square(64)?));
    let config = SolverConfig::default();
    let mut a = space.assemble_stiffness(&Diffusion::Constant([[1.0, 0.0], [0.0, 1.0]]), 0.0)?;
    a.axpy(64.0, &space.assemble_mass())?;
    let b = space.assemble_load(|p| p[0] * (1.0 - p[1]));

    let cg = solve_spd(&a, &b, &config)?;
    println!("CG:       {} iterations, relative residual {:.2e}, |x| = {:.6e}", cg.iterations, cg.relative_residual, norm2(&cg.x));

    // a convection-like perturbation makes the system nonsymmetric
    let mut n = a.clone();
    for i in 0..n.nrows() {
        if i + 1 < n.ncols() && n.slot(i, i + 1).is_some() {
            n.add_to(i, i + 1, 0.05)?;
        }
    }
    println!("asymmetry: {:.3e}", n.max_asymmetry());
    let bi = solve_nonsymmetric(&n, &b, &config)?;
    println!("BiCGStab: {} iterations, relative residual {:.2e}", bi.iterations, bi.relative_residual);
    Ok(())
}
