mod common;

use std::sync::Arc;

use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use twogrid_pide::assembly::{apply_dirichlet, FeSpace, FormVariant, MatrixVariant, WeightedTerm};
use twogrid_pide::memory::{HistoryMode, MemoryHistory, MemoryWeights};
use twogrid_pide::problem::Diffusion;
use twogrid_pide::solvers::{solve_nonsymmetric, solve_spd, solve_spd_monitored, NonsymmetricMethod, SolverConfig};
use twogrid_pide::{Mesh, Rect};

fn mesh_strategy() -> impl Strategy<Value = Mesh> {
    (1usize..=4, 1usize..=4, -1.0f64..0.0, 0.5f64..2.0, -1.0f64..0.0, 0.5f64..2.0)
        .prop_map(|(nx, ny, ax, lx, ay, ly)| Mesh::build(nx, ny, Rect::new(ax, ax + lx, ay, ay + ly)).unwrap())
}

fn coeffs(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.5f64..1.5, n)
}

fn mesh_and_two_fields() -> impl Strategy<Value = (Mesh, Vec<f64>, Vec<f64>)> {
    mesh_strategy().prop_flat_map(|m| {
        let n = m.num_nodes();
        (Just(m), coeffs(n), coeffs(n))
    })
}

fn scale(v: &[f64]) -> f64 {
    v.iter().fold(1.0f64, |m, x| m.max(x.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mass_matches_dense_oracle(mesh in mesh_strategy()) {
        let space = FeSpace::new(Arc::new(mesh.clone()));
        let got = to_dense(&space.assemble_mass());
        prop_assert!(dense_max_diff(&got, &oracle_mass(&mesh)) < 1e-12);
    }

    #[test]
    fn stiffness_matches_dense_oracle(mesh in mesh_strategy(), a in 0.5f64..3.0, b in -0.4f64..0.4, c in 0.5f64..3.0) {
        let d = [[a, b], [b, c]];
        let space = FeSpace::new(Arc::new(mesh.clone()));
        let got = to_dense(&space.assemble_stiffness(&Diffusion::Constant(d), 0.0).unwrap());
        let want = oracle_stiffness(&mesh, d);
        prop_assert!(dense_max_diff(&got, &want) < 1e-12 * want.amax().max(1.0));
    }

    #[test]
    fn b_vectors_match_dense_oracle((mesh, w, u) in mesh_and_two_fields(), rich in any::<bool>()) {
        let memory = if rich { RefMemory::Rich } else { RefMemory::Trig };
        let mem = memory.to_crate();
        let space = FeSpace::new(Arc::new(mesh.clone()));
        let (sw, su) = (space.sample(&w).unwrap(), space.sample(&u).unwrap());
        for (variant, piece) in [
            (FormVariant::FullB, Piece::Full),
            (FormVariant::LinearizedBtilde, Piece::Frozen),
            (FormVariant::SymmetricBs, Piece::Symmetric),
            (FormVariant::LowerOrderN, Piece::LowerOrder),
            (FormVariant::FrozenCoefficients, Piece::CoefficientsOnly),
        ] {
            let got = space.assemble_b_vector(sw, su, mem.as_ref(), variant).unwrap();
            let want = oracle_form_vector(&mesh, &mesh, &w, &u, memory, piece);
            let err = max_abs_diff(&got, &want);
            prop_assert!(err < 1e-12 * scale(&want), "{variant:?}: {err:e}");
        }
    }

    #[test]
    fn btilde_matrices_match_dense_oracle((mesh, w, _u) in mesh_and_two_fields(), rich in any::<bool>()) {
        let memory = if rich { RefMemory::Rich } else { RefMemory::Trig };
        let mem = memory.to_crate();
        let space = FeSpace::new(Arc::new(mesh.clone()));
        let sw = space.sample(&w).unwrap();
        for (variant, conv) in [(MatrixVariant::LinearizedBtilde, true), (MatrixVariant::SymmetricBs, false)] {
            let got = to_dense(&space.assemble_btilde_matrix(sw, mem.as_ref(), variant).unwrap());
            let want = oracle_btilde_matrix(&mesh, &mesh, &w, memory, conv);
            prop_assert!(dense_max_diff(&got, &want) < 1e-12 * want.amax().max(1.0), "{variant:?}");
        }
    }

    #[test]
    fn cross_mesh_vectors_match_brute_force_location(
        nc in 1usize..=3, nf in 2usize..=4, seed in coeffs(16), u in coeffs(25), rich in any::<bool>()
    ) {
        let memory = if rich { RefMemory::Rich } else { RefMemory::Trig };
        let mem = memory.to_crate();
        let coarse = Arc::new(Mesh::unit_square(nc).unwrap());
        let fine = Mesh::unit_square(nf).unwrap();
        let w = &seed[..coarse.num_nodes()];
        let u = &u[..fine.num_nodes()];
        let space = FeSpace::new(Arc::new(fine.clone()));
        let sampler = space.sampler_from(&coarse).unwrap();
        let sw = twogrid_pide::assembly::Sampled::new(&sampler, w).unwrap();
        let su = space.sample(u).unwrap();
        for (variant, piece) in [(FormVariant::LinearizedBtilde, Piece::Frozen), (FormVariant::LowerOrderN, Piece::LowerOrder)] {
            let got = space.assemble_b_vector(sw, su, mem.as_ref(), variant).unwrap();
            let want = oracle_form_vector(&fine, &coarse, w, u, memory, piece);
            prop_assert!(max_abs_diff(&got, &want) < 1e-12 * scale(&want), "{variant:?}");
        }
        let got = to_dense(&space.assemble_btilde_matrix(sw, mem.as_ref(), MatrixVariant::LinearizedBtilde).unwrap());
        let want = oracle_btilde_matrix(&fine, &coarse, w, memory, true);
        prop_assert!(dense_max_diff(&got, &want) < 1e-12 * want.amax().max(1.0));
    }

    #[test]
    fn form_split_and_linearization_identities((mesh, w, u) in mesh_and_two_fields(), rich in any::<bool>()) {
        let mem = if rich { RefMemory::Rich } else { RefMemory::Trig }.to_crate();
        let space = FeSpace::new(Arc::new(mesh));
        let (sw, su) = (space.sample(&w).unwrap(), space.sample(&u).unwrap());
        let v = |variant| space.assemble_b_vector(sw, su, mem.as_ref(), variant).unwrap();
        let full = v(FormVariant::LinearizedBtilde);
        let split: Vec<f64> = v(FormVariant::SymmetricBs).iter().zip(v(FormVariant::LowerOrderN)).map(|(a, b)| a + b).collect();
        prop_assert!(max_abs_diff(&full, &split) < 1e-13 * scale(&full));
        // matrix block times u plus the coefficient-only vector is the linearized form
        let m = space.assemble_btilde_matrix(sw, mem.as_ref(), MatrixVariant::LinearizedBtilde).unwrap();
        let mut mu = m.mul_vec(&u);
        for (x, c) in mu.iter_mut().zip(v(FormVariant::FrozenCoefficients)) {
            *x += c;
        }
        prop_assert!(max_abs_diff(&mu, &full) < 1e-13 * scale(&full));
        // B(u, v) = B~(u; u, v), bit for bit
        let b = space.assemble_b_vector(su, su, mem.as_ref(), FormVariant::FullB).unwrap();
        let bt = space.assemble_b_vector(su, su, mem.as_ref(), FormVariant::LinearizedBtilde).unwrap();
        prop_assert_eq!(b, bt);
    }

    #[test]
    fn weighted_sum_equals_sum_of_vectors((mesh, w, u) in mesh_and_two_fields(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let mem = RefMemory::Trig.to_crate();
        let space = FeSpace::new(Arc::new(mesh));
        let (sw, su) = (space.sample(&w).unwrap(), space.sample(&u).unwrap());
        let terms = [WeightedTerm { weight: a, w: sw, u: sw }, WeightedTerm { weight: b, w: su, u: su }];
        let got = space.assemble_weighted_b_vector(&terms, mem.as_ref(), FormVariant::LowerOrderN).unwrap();
        let bw = space.assemble_b_vector(sw, sw, mem.as_ref(), FormVariant::LowerOrderN).unwrap();
        let bu = space.assemble_b_vector(su, su, mem.as_ref(), FormVariant::LowerOrderN).unwrap();
        let want: Vec<f64> = bw.iter().zip(&bu).map(|(x, y)| a * x + b * y).collect();
        prop_assert!(max_abs_diff(&got, &want) < 1e-13 * scale(&want));
    }
}

#[test]
fn jacobian_matches_central_differences() {
    let mesh = Arc::new(Mesh::unit_square(3).unwrap());
    let space = FeSpace::new(mesh.clone());
    for memory in [RefMemory::Trig, RefMemory::Rich] {
        let mem = memory.to_crate();
        let u: Vec<f64> = (0..mesh.num_nodes()).map(|i| 0.8 * ((i as f64) * 0.77).sin()).collect();
        let f = |x: &[f64]| {
            let s = space.sample(x).unwrap();
            space.assemble_b_vector(s, s, mem.as_ref(), FormVariant::FullB).unwrap()
        };
        let fd = fd_jacobian(f, &u, 1e-6);
        let j = to_dense(&space.assemble_b_jacobian(&u, mem.as_ref()).unwrap());
        let rel = dense_max_diff(&j, &fd) / j.amax();
        assert!(rel < 1e-6, "relative Jacobian error {rel:e}");
    }
}

fn model_system(n: usize, convection: f64) -> (twogrid_pide::sparse::CsrMatrix, Vec<f64>) {
    let mesh = Arc::new(Mesh::unit_square(n).unwrap());
    let space = FeSpace::new(mesh.clone());
    let mut a = space.assemble_mass();
    a.scale(4.0);
    a.axpy(1.0, &space.assemble_stiffness(&Diffusion::Identity, 0.0).unwrap()).unwrap();
    if convection != 0.0 {
        let mem = twogrid_pide::problem::LinearMemory { alpha: None, beta: [0.0; 2], gamma: [convection, -0.5 * convection], g: 0.0 };
        let w = vec![0.0; mesh.num_nodes()];
        let c = space.assemble_btilde_matrix(space.sample(&w).unwrap(), &mem, MatrixVariant::LinearizedBtilde).unwrap();
        a.axpy(1.0, &c).unwrap();
    }
    let rhs = space.assemble_load(|p| (3.0 * p[0]).sin() + p[1]);
    apply_dirichlet(a, rhs, mesh.boundary_mask())
}

#[test]
fn krylov_solvers_match_dense_lu() {
    let cfg = SolverConfig::default();
    let (a, b) = model_system(8, 0.0);
    let lu = to_dense(&a).lu().solve(&dvec(&b)).unwrap();
    let x = solve_spd(&a, &b, &cfg).unwrap().x;
    assert!(max_abs_diff(&x, lu.as_slice()) < 1e-9 * lu.amax());

    let (a, b) = model_system(8, 6.0);
    assert!(a.max_asymmetry() > 1e-3);
    let lu = to_dense(&a).lu().solve(&dvec(&b)).unwrap();
    for method in [NonsymmetricMethod::Bicgstab, NonsymmetricMethod::GmresRestarted] {
        let x = solve_nonsymmetric(&a, &b, &SolverConfig { nonsymmetric_method: method, ..cfg }).unwrap().x;
        assert!(max_abs_diff(&x, lu.as_slice()) < 1e-9 * lu.amax(), "{method:?}");
    }
}

#[test]
fn backward_euler_matrix_is_spd() {
    let (a, _) = model_system(4, 0.0);
    let d = to_dense(&a);
    assert!((&d - d.transpose()).amax() < 1e-14);
    let eig = d.symmetric_eigenvalues();
    assert!(eig.min() > 0.0, "smallest eigenvalue {}", eig.min());
}

#[test]
fn cg_energy_error_decreases_monotonically() {
    let (a, b) = model_system(12, 0.0);
    let dense = to_dense(&a);
    let exact = dense.clone().lu().solve(&dvec(&b)).unwrap();
    let mut energies = Vec::new();
    let cfg = SolverConfig { linear_tol: 1e-12, ..SolverConfig::default() };
    solve_spd_monitored(&a, &b, None, &cfg, |_, x| {
        let e = dvec(x) - &exact;
        energies.push((e.transpose() * &dense * &e)[(0, 0)].sqrt());
    })
    .unwrap();
    assert!(energies.len() > 3);
    for w in energies.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} > {}", w[1], w[0]);
    }
}

/// `int_0^t e^{-(t-s)} cos s ds`.
fn convolution_exact(t: f64) -> f64 {
    0.5 * (t.cos() + t.sin() - (-t).exp())
}

#[test]
fn memory_quadrature_converges_at_first_order() {
    let kernel: twogrid_pide::problem::Kernel = Arc::new(|t: f64| (-t).exp());
    let t_final = 1.0;
    let errs: Vec<f64> = [8usize, 16, 32, 64, 128]
        .iter()
        .map(|&n| {
            let dt = t_final / n as f64;
            let mut w = MemoryWeights::new(kernel.clone(), dt).unwrap();
            let mut h = MemoryHistory::new(HistoryMode::FineHistory, 1);
            for i in 1..=n {
                h.push(i, vec![(i as f64 * dt).cos()]).unwrap();
            }
            let approx = h.accumulate_memory(&w.weights_for_step(n).unwrap(), n, dt).unwrap()[0];
            (approx - convolution_exact(t_final)).abs()
        })
        .collect();
    for pair in errs.windows(2) {
        let order = (pair[0] / pair[1]).log2();
        assert!(order >= 0.9, "order {order} from {errs:?}");
    }
}

#[test]
fn dense_oracle_rule_integrates_quartics() {
    // sanity check of the oracle itself
    let rule = reference_rule();
    let sum: f64 = rule.iter().map(|r| r.1).sum();
    assert!((sum - 1.0).abs() < 1e-15);
    let m: f64 = rule.iter().map(|(b, w)| w * b[0] * b[0] * b[1] * b[1]).sum();
    assert!((m - 2.0 * 2.0 * 2.0 / 720.0).abs() < 1e-16);
    let _ = DMatrix::<f64>::identity(1, 1);
}
