//! Evaluating a coarse-grid function on a fine grid that does not nest it.
//!
//! A 6x6 coarse mesh does not align with a 16x16 fine mesh, so every fine
//! quadrature point has to be located in the coarse triangulation.

use std::sync::Arc;

use twogrid_pide::{FeFunction, Mesh};

fn main() -> twogrid_pide::Result<()> {
    let f = |p: [f64; 2]| (std::f64::consts::PI * p[0]).sin() * (std::f64::consts::PI * p[1]).sin();
    let coarse = Arc::new(Mesh::unit_square(6)?);
    let fine = Mesh::unit_square(16)?;
    let u_coarse = FeFunction::interpolate(coarse.clone(), f);

    let on_fine = u_coarse.eval_on_mesh(fine.nodes())?;
    let worst = fine
        .nodes()
        .iter()
        .zip(&on_fine)
        .map(|(&p, v)| (v - f(p)).abs())
        .fold(0.0, f64::max);
    println!("coarse {} nodes -> fine {} nodes", coarse.num_nodes(), fine.num_nodes());
    println!("max |I_H f - f| at fine nodes: {worst:.3e}");

    // values at a few points that sit strictly inside coarse triangles
    for p in [[0.1, 0.1], [0.5, 0.5], [0.77, 0.31]] {
        let (tri, bary) = coarse.locate_point(p)?;
        println!("x = {p:?}: coarse triangle {tri}, barycentric {bary:.3?}, value {:.6}", u_coarse.eval(p)?);
    }
    Ok(())
}
