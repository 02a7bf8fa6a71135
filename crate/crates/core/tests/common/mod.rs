//! Dense-loop reference implementations used as oracles by the integration
//! tests. Nothing here calls the crate's assembly code: geometry comes from
//! raw node coordinates, gradients from a 2x2 inverse, and coarse functions
//! are located by brute force over all triangles.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use twogrid_pide::sparse::CsrMatrix;
use twogrid_pide::Mesh;

/// Six-point symmetric rule exact for degree 4 (barycentric points, weights summing to 1).
pub fn reference_rule() -> Vec<([f64; 3], f64)> {
    let a = 0.445948490915965;
    let wa = 0.223381589678011;
    let b = 0.091576213509771;
    let wb = 0.109951743655322;
    // the constants above are printed to 15 digits; refine them so the rule is
    // exact to rounding, by solving the moment equations with Newton
    let (a, wa, b, wb) = refine_rule(a, wa, b, wb);
    let mut out = Vec::new();
    for (x, w) in [(a, wa), (b, wb)] {
        let y = 1.0 - 2.0 * x;
        out.push(([y, x, x], w));
        out.push(([x, y, x], w));
        out.push(([x, x, y], w));
    }
    out
}

/// Integral over the reference triangle (area 1/2) of `l0^i l1^j l2^k`,
/// normalised by the area: `2 i! j! k! / (i + j + k + 2)!`.
fn moment(i: u32, j: u32, k: u32) -> f64 {
    let f = |n: u32| (1..=n).map(f64::from).product::<f64>();
    2.0 * f(i) * f(j) * f(k) / f(i + j + k + 2)
}

fn refine_rule(mut a: f64, mut wa: f64, mut b: f64, mut wb: f64) -> (f64, f64, f64, f64) {
    // moments of l0^p for p = 0, 2, 3, 4 fix the two orbits
    let exps = [0u32, 2, 3, 4];
    let residual = |a: f64, wa: f64, b: f64, wb: f64| -> [f64; 4] {
        let orbit = |x: f64, p: u32| {
            let y = 1.0 - 2.0 * x;
            y.powi(p as i32) + 2.0 * x.powi(p as i32)
        };
        let mut r = [0.0; 4];
        for (k, &p) in exps.iter().enumerate() {
            r[k] = wa * orbit(a, p) + wb * orbit(b, p) - moment(p, 0, 0);
        }
        r
    };
    for _ in 0..20 {
        let r = residual(a, wa, b, wb);
        let h = 1e-7;
        let mut jac = nalgebra::Matrix4::<f64>::zeros();
        let x = [a, wa, b, wb];
        for c in 0..4 {
            let mut xp = x;
            let mut xm = x;
            xp[c] += h;
            xm[c] -= h;
            let rp = residual(xp[0], xp[1], xp[2], xp[3]);
            let rm = residual(xm[0], xm[1], xm[2], xm[3]);
            for k in 0..4 {
                jac[(k, c)] = (rp[k] - rm[k]) / (2.0 * h);
            }
        }
        let dx = jac.lu().solve(&nalgebra::Vector4::from(r)).expect("nonsingular moment system");
        a -= dx[0];
        wa -= dx[1];
        b -= dx[2];
        wb -= dx[3];
        if dx.amax() < 1e-17 {
            break;
        }
    }
    (a, wa, b, wb)
}

/// Vertex coordinates, area and basis gradients of one triangle.
pub struct RefTriangle {
    pub nodes: [usize; 3],
    pub x: [[f64; 2]; 3],
    pub area: f64,
    pub grads: [[f64; 2]; 3],
}

pub fn ref_triangles(mesh: &Mesh) -> Vec<RefTriangle> {
    mesh.triangles()
        .iter()
        .map(|&t| {
            let x = [mesh.nodes()[t[0]], mesh.nodes()[t[1]], mesh.nodes()[t[2]]];
            let jac = Matrix2::new(x[1][0] - x[0][0], x[2][0] - x[0][0], x[1][1] - x[0][1], x[2][1] - x[0][1]);
            let area = 0.5 * jac.determinant().abs();
            let inv_t = jac.try_inverse().expect("non-degenerate triangle").transpose();
            let g1 = inv_t * Vector2::new(1.0, 0.0);
            let g2 = inv_t * Vector2::new(0.0, 1.0);
            let g0 = -(g1 + g2);
            RefTriangle { nodes: t, x, area, grads: [[g0[0], g0[1]], [g1[0], g1[1]], [g2[0], g2[1]]] }
        })
        .collect()
}

impl RefTriangle {
    pub fn point(&self, b: [f64; 3]) -> [f64; 2] {
        [
            b[0] * self.x[0][0] + b[1] * self.x[1][0] + b[2] * self.x[2][0],
            b[0] * self.x[0][1] + b[1] * self.x[1][1] + b[2] * self.x[2][1],
        ]
    }

    pub fn value(&self, c: &[f64], b: [f64; 3]) -> f64 {
        (0..3).map(|a| b[a] * c[self.nodes[a]]).sum()
    }

    pub fn gradient(&self, c: &[f64]) -> [f64; 2] {
        let mut g = [0.0; 2];
        for a in 0..3 {
            g[0] += self.grads[a][0] * c[self.nodes[a]];
            g[1] += self.grads[a][1] * c[self.nodes[a]];
        }
        g
    }
}

/// Value and gradient at `p` of a P1 function on `mesh`, located by scanning
/// every triangle and taking the lowest index that contains `p`.
pub fn brute_force_eval(mesh: &Mesh, tris: &[RefTriangle], c: &[f64], p: [f64; 2]) -> (f64, [f64; 2]) {
    let _ = mesh;
    for t in tris {
        let m = Matrix2::new(t.x[1][0] - t.x[0][0], t.x[2][0] - t.x[0][0], t.x[1][1] - t.x[0][1], t.x[2][1] - t.x[0][1]);
        let rhs = Vector2::new(p[0] - t.x[0][0], p[1] - t.x[0][1]);
        let s = m.lu().solve(&rhs).expect("non-degenerate");
        let b = [1.0 - s[0] - s[1], s[0], s[1]];
        if b.iter().all(|&v| v >= -1e-12) {
            return (t.value(c, b), t.gradient(c));
        }
    }
    panic!("point {p:?} outside mesh");
}

/// Coefficients of a memory operator in closed form, independent of the crate's implementations.
#[derive(Clone, Copy)]
pub enum RefMemory {
    /// `alpha = 0`, `beta = (sin u, 1 - cos u)`, `gamma = (1 - cos u, sin u)`, `g = sin u`.
    Trig,
    /// `alpha = (1 + u^2/2) [[2, 1/2], [1/2, 1]]`, `beta = (u^2, sin u)`,
    /// `gamma = (cos u, u)`, `g = u^3`.
    Rich,
}

pub struct RefCoefs {
    pub alpha: [[f64; 2]; 2],
    pub beta: [f64; 2],
    pub gamma: [f64; 2],
    pub g: f64,
}

impl RefMemory {
    pub fn at(self, u: f64) -> RefCoefs {
        match self {
            RefMemory::Trig => RefCoefs {
                alpha: [[0.0; 2]; 2],
                beta: [u.sin(), 1.0 - u.cos()],
                gamma: [1.0 - u.cos(), u.sin()],
                g: u.sin(),
            },
            RefMemory::Rich => {
                let s = 1.0 + 0.5 * u * u;
                RefCoefs {
                    alpha: [[2.0 * s, 0.5 * s], [0.5 * s, s]],
                    beta: [u * u, u.sin()],
                    gamma: [u.cos(), u],
                    g: u * u * u,
                }
            }
        }
    }

    /// The same coefficients as a crate memory object.
    pub fn to_crate(self) -> std::sync::Arc<dyn twogrid_pide::problem::MemoryCoefficients> {
        use std::sync::Arc;
        use twogrid_pide::problem::{FnMemory, TrigMemory};
        match self {
            RefMemory::Trig => Arc::new(TrigMemory),
            RefMemory::Rich => Arc::new(FnMemory {
                alpha: Some((
                    Arc::new(|u: f64| {
                        let s = 1.0 + 0.5 * u * u;
                        [[2.0 * s, 0.5 * s], [0.5 * s, s]]
                    }),
                    Arc::new(|u: f64| [[2.0 * u, 0.5 * u], [0.5 * u, u]]),
                )),
                beta: (Arc::new(|u: f64| [u * u, u.sin()]), Arc::new(|u: f64| [2.0 * u, u.cos()])),
                gamma: (Arc::new(|u: f64| [u.cos(), u]), Arc::new(|u: f64| [-u.sin(), 1.0])),
                g: (Arc::new(|u: f64| u * u * u), Arc::new(|u: f64| 3.0 * u * u)),
            }),
        }
    }
}

/// Which pieces of the memory form an oracle vector includes.
#[derive(Clone, Copy, PartialEq, Debug)]
pub enum Piece {
    /// `(alpha(u) grad u + beta(u), grad v) + (gamma(u) . grad u + g(u), v)`.
    Full,
    /// Same with coefficients frozen at `w`.
    Frozen,
    /// `(alpha(w) grad u, grad v)`.
    Symmetric,
    /// `(beta(w), grad v) + (gamma(w) . grad u + g(w), v)`.
    LowerOrder,
    /// `(beta(w), grad v) + (g(w), v)`.
    CoefficientsOnly,
}

/// Dense oracle for `form(w; u, phi_j)` on `mesh`, with `w` living on `w_mesh`.
pub fn oracle_form_vector(
    mesh: &Mesh,
    w_mesh: &Mesh,
    w: &[f64],
    u: &[f64],
    memory: RefMemory,
    piece: Piece,
) -> Vec<f64> {
    let tris = ref_triangles(mesh);
    let wtris = ref_triangles(w_mesh);
    let rule = reference_rule();
    let mut out = vec![0.0; mesh.num_nodes()];
    for t in &tris {
        let gu = t.gradient(u);
        for &(b, wq) in &rule {
            let uv = t.value(u, b);
            let (wv, _) = brute_force_eval(w_mesh, &wtris, w, t.point(b));
            let c = memory.at(if piece == Piece::Full { uv } else { wv });
            let ag = [c.alpha[0][0] * gu[0] + c.alpha[0][1] * gu[1], c.alpha[1][0] * gu[0] + c.alpha[1][1] * gu[1]];
            let conv = c.gamma[0] * gu[0] + c.gamma[1] * gu[1];
            let (flux, src) = match piece {
                Piece::Full | Piece::Frozen => ([ag[0] + c.beta[0], ag[1] + c.beta[1]], conv + c.g),
                Piece::Symmetric => (ag, 0.0),
                Piece::LowerOrder => (c.beta, conv + c.g),
                Piece::CoefficientsOnly => (c.beta, c.g),
            };
            for a in 0..3 {
                let g = t.grads[a];
                out[t.nodes[a]] += wq * t.area * (flux[0] * g[0] + flux[1] * g[1] + src * b[a]);
            }
        }
    }
    out
}

/// Dense oracle for the `u`-linear part of `B~(w; u, phi_j)`; `convection`
/// toggles the `gamma(w) . grad u` block.
pub fn oracle_btilde_matrix(mesh: &Mesh, w_mesh: &Mesh, w: &[f64], memory: RefMemory, convection: bool) -> DMatrix<f64> {
    let tris = ref_triangles(mesh);
    let wtris = ref_triangles(w_mesh);
    let rule = reference_rule();
    let n = mesh.num_nodes();
    let mut m = DMatrix::zeros(n, n);
    for t in &tris {
        for &(b, wq) in &rule {
            let (wv, _) = brute_force_eval(w_mesh, &wtris, w, t.point(b));
            let c = memory.at(wv);
            for k in 0..3 {
                let gk = t.grads[k];
                let ag = [c.alpha[0][0] * gk[0] + c.alpha[0][1] * gk[1], c.alpha[1][0] * gk[0] + c.alpha[1][1] * gk[1]];
                let conv = if convection { c.gamma[0] * gk[0] + c.gamma[1] * gk[1] } else { 0.0 };
                for j in 0..3 {
                    let gj = t.grads[j];
                    m[(t.nodes[j], t.nodes[k])] += wq * t.area * (ag[0] * gj[0] + ag[1] * gj[1] + conv * b[j]);
                }
            }
        }
    }
    m
}

/// Dense mass matrix by quadrature of basis products.
pub fn oracle_mass(mesh: &Mesh) -> DMatrix<f64> {
    let n = mesh.num_nodes();
    let mut m = DMatrix::zeros(n, n);
    for t in ref_triangles(mesh) {
        for (b, wq) in reference_rule() {
            for j in 0..3 {
                for k in 0..3 {
                    m[(t.nodes[j], t.nodes[k])] += wq * t.area * b[j] * b[k];
                }
            }
        }
    }
    m
}

/// Dense stiffness matrix of `(D grad u, grad v)` for a constant tensor `D`.
pub fn oracle_stiffness(mesh: &Mesh, d: [[f64; 2]; 2]) -> DMatrix<f64> {
    let n = mesh.num_nodes();
    let mut m = DMatrix::zeros(n, n);
    for t in ref_triangles(mesh) {
        for j in 0..3 {
            for k in 0..3 {
                let gk = t.grads[k];
                let dg = [d[0][0] * gk[0] + d[0][1] * gk[1], d[1][0] * gk[0] + d[1][1] * gk[1]];
                m[(t.nodes[j], t.nodes[k])] += t.area * (t.grads[j][0] * dg[0] + t.grads[j][1] * dg[1]);
            }
        }
    }
    m
}

pub fn to_dense(a: &CsrMatrix) -> DMatrix<f64> {
    let d = a.to_dense();
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| d[i][j])
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn dense_max_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

pub fn dvec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

/// Central finite-difference Jacobian of `f` at `x`.
pub fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], eps: f64) -> DMatrix<f64> {
    let n = x.len();
    let m = f(x).len();
    let mut j = DMatrix::zeros(m, n);
    for c in 0..n {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[c] += eps;
        xm[c] -= eps;
        let (fp, fm) = (f(&xp), f(&xm));
        for r in 0..m {
            j[(r, c)] = (fp[r] - fm[r]) / (2.0 * eps);
        }
    }
    j
}
