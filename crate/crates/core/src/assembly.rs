//! P1 finite element assembly: mass, stiffness, the memory forms and their
//! linearizations, load vectors and Dirichlet elimination.
//!
//! Nonlinear integrands are integrated with the degree-4 rule. Functions that
//! enter a form through its coefficients may live on a different mesh than the
//! test functions; a [`Sampler`] maps the quadrature points of the assembly
//! mesh into the source mesh once, after which sampling is a gather.

use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::mesh::{Mesh, MeshError, Point};
use crate::problem::{CoefficientValues, Diffusion, MemoryCoefficients, Tensor};
use crate::quadrature::QuadratureRule;
use crate::sparse::CsrMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssemblyError {
    #[error("vector of length {got} does not match {expected} mesh nodes")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("sampler targets a different assembly mesh or quadrature rule")]
    SamplerMismatch,
    #[error("diffusion tensor on triangle {triangle} is not symmetric")]
    NonSymmetricDiffusion { triangle: usize },
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Which part of the memory form `B~(w; u, v)` is assembled.
///
/// With `flux = alpha(w) grad u + beta(w)` and `source = gamma(w) . grad u + g(w)`,
/// the vector entry for test function `phi_j` is `(flux, grad phi_j) + (source, phi_j)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormVariant {
    /// `B(u, v)`: coefficients evaluated at `u` itself; `w` is ignored.
    FullB,
    /// `B~(w; u, v)`, all four terms.
    LinearizedBtilde,
    /// `B~s(w; u, v) = (alpha(w) grad u, grad v)`.
    SymmetricBs,
    /// `N(w; u, v) = (beta(w), grad v) + (gamma(w) . grad u + g(w), v)`.
    LowerOrderN,
    /// The `u`-independent part `(beta(w), grad v) + (g(w), v)`.
    FrozenCoefficients,
}

/// Which `u`-linear block of `B~(w; u, v)` is assembled as a matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixVariant {
    /// `(alpha(w) grad u, grad v) + (gamma(w) . grad u, v)`.
    LinearizedBtilde,
    /// `(alpha(w) grad u, grad v)`; symmetric whenever `alpha` is.
    SymmetricBs,
}

/// Locations of the quadrature points of an assembly mesh inside a source mesh.
#[derive(Debug, Clone)]
pub struct Sampler {
    source: Arc<Mesh>,
    target_triangles: usize,
    points_per_triangle: usize,
    locations: Vec<(usize, [f64; 3])>,
}

impl Sampler {
    /// Sampler for functions living on the assembly mesh itself.
    pub fn same_mesh(mesh: &Arc<Mesh>, rule: &QuadratureRule) -> Self {
        let locations = (0..mesh.num_triangles())
            .flat_map(|t| rule.points.iter().map(move |&b| (t, b)))
            .collect();
        Self {
            source: mesh.clone(),
            target_triangles: mesh.num_triangles(),
            points_per_triangle: rule.len(),
            locations,
        }
    }

    /// Sampler for functions on `source` evaluated at the quadrature points of `target`.
    pub fn cross_mesh(source: &Arc<Mesh>, target: &Mesh, rule: &QuadratureRule) -> Result<Self, MeshError> {
        if source.nx() == target.nx() && source.ny() == target.ny() && source.domain() == target.domain() {
            return Ok(Self::same_mesh(source, rule));
        }
        let per_tri: Vec<Vec<(usize, [f64; 3])>> = (0..target.num_triangles())
            .into_par_iter()
            .map(|t| {
                rule.points
                    .iter()
                    .map(|&b| source.locate_point(target.map_point(t, b)))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            source: source.clone(),
            target_triangles: target.num_triangles(),
            points_per_triangle: rule.len(),
            locations: per_tri.into_iter().flatten().collect(),
        })
    }

    pub fn source(&self) -> &Arc<Mesh> {
        &self.source
    }

    /// Value and gradient of the source function at quadrature point `idx`
    /// (`idx = triangle * points_per_triangle + q`).
    #[inline]
    pub fn sample(&self, coeffs: &[f64], idx: usize) -> (f64, [f64; 2]) {
        let (tri, b) = self.locations[idx];
        let t = self.source.triangles()[tri];
        let g = &self.source.geometry(tri).grads;
        let (c0, c1, c2) = (coeffs[t[0]], coeffs[t[1]], coeffs[t[2]]);
        (
            b[0] * c0 + b[1] * c1 + b[2] * c2,
            [g[0][0] * c0 + g[1][0] * c1 + g[2][0] * c2, g[0][1] * c0 + g[1][1] * c1 + g[2][1] * c2],
        )
    }
}

/// A P1 coefficient vector paired with the sampler that evaluates it at
/// assembly quadrature points.
#[derive(Debug, Clone, Copy)]
pub struct Sampled<'a> {
    sampler: &'a Sampler,
    coeffs: &'a [f64],
}

impl<'a> Sampled<'a> {
    pub fn new(sampler: &'a Sampler, coeffs: &'a [f64]) -> Result<Self, AssemblyError> {
        let expected = sampler.source.num_nodes();
        if coeffs.len() != expected {
            return Err(AssemblyError::DimensionMismatch { expected, got: coeffs.len() });
        }
        Ok(Self { sampler, coeffs })
    }

    #[inline]
    fn at(&self, idx: usize) -> (f64, [f64; 2]) {
        self.sampler.sample(self.coeffs, idx)
    }
}

/// One term `weight * form(w, u, .)` of a weighted sum of memory forms.
#[derive(Debug, Clone, Copy)]
pub struct WeightedTerm<'a> {
    pub weight: f64,
    pub w: Sampled<'a>,
    pub u: Sampled<'a>,
}

/// P1 space on a mesh: sparsity pattern, element-to-pattern map and quadrature.
#[derive(Debug, Clone)]
pub struct FeSpace {
    mesh: Arc<Mesh>,
    rule: QuadratureRule,
    pattern: CsrMatrix,
    slots: Vec<[usize; 9]>,
    own: Sampler,
}

impl FeSpace {
    pub fn new(mesh: Arc<Mesh>) -> Self {
        let rule = QuadratureRule::degree4();
        let pattern = CsrMatrix::p1_pattern(&mesh);
        let slots = mesh
            .triangles()
            .iter()
            .map(|t| {
                let mut s = [0usize; 9];
                for a in 0..3 {
                    for b in 0..3 {
                        s[3 * a + b] = pattern.slot(t[a], t[b]).expect("P1 pattern covers element couplings");
                    }
                }
                s
            })
            .collect();
        let own = Sampler::same_mesh(&mesh, &rule);
        Self { mesh, rule, pattern, slots, own }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    pub fn num_dofs(&self) -> usize {
        self.mesh.num_nodes()
    }

    /// Zero matrix with this space's sparsity pattern.
    pub fn pattern(&self) -> &CsrMatrix {
        &self.pattern
    }

    /// Sampler for functions of this space at its own quadrature points.
    pub fn own_sampler(&self) -> &Sampler {
        &self.own
    }

    /// Sampler for functions of `source` at this space's quadrature points.
    pub fn sampler_from(&self, source: &Arc<Mesh>) -> Result<Sampler, MeshError> {
        Sampler::cross_mesh(source, &self.mesh, &self.rule)
    }

    pub fn sample<'a>(&'a self, coeffs: &'a [f64]) -> Result<Sampled<'a>, AssemblyError> {
        Sampled::new(&self.own, coeffs)
    }

    /// Physical quadrature points, triangle-major.
    pub fn quadrature_points(&self) -> Vec<Point> {
        (0..self.mesh.num_triangles())
            .flat_map(|t| self.rule.points.iter().map(move |&b| self.mesh.map_point(t, b)))
            .collect()
    }

    fn check_sampler(&self, s: &Sampled<'_>) -> Result<(), AssemblyError> {
        if s.sampler.target_triangles != self.mesh.num_triangles()
            || s.sampler.points_per_triangle != self.rule.len()
        {
            return Err(AssemblyError::SamplerMismatch);
        }
        Ok(())
    }

    fn check_len(&self, v: &[f64]) -> Result<(), AssemblyError> {
        if v.len() != self.num_dofs() {
            return Err(AssemblyError::DimensionMismatch { expected: self.num_dofs(), got: v.len() });
        }
        Ok(())
    }

    /// Assembles a matrix from per-triangle 3x3 blocks. Blocks are computed in
    /// parallel and scattered in triangle order, so the result does not depend
    /// on the thread count.
    pub fn assemble_matrix<F>(&self, local: F) -> CsrMatrix
    where
        F: Fn(usize) -> [[f64; 3]; 3] + Sync + Send,
    {
        let blocks: Vec<[[f64; 3]; 3]> = (0..self.mesh.num_triangles()).into_par_iter().map(local).collect();
        let mut m = self.pattern.clone();
        let vals = m.values_mut();
        for (block, slots) in blocks.iter().zip(&self.slots) {
            for a in 0..3 {
                for b in 0..3 {
                    vals[slots[3 * a + b]] += block[a][b];
                }
            }
        }
        m
    }

    /// Assembles a vector from per-triangle contributions, deterministically.
    pub fn assemble_vector<F>(&self, local: F) -> Vec<f64>
    where
        F: Fn(usize) -> [f64; 3] + Sync + Send,
    {
        let blocks: Vec<[f64; 3]> = (0..self.mesh.num_triangles()).into_par_iter().map(local).collect();
        let mut v = vec![0.0; self.num_dofs()];
        for (block, t) in blocks.iter().zip(self.mesh.triangles()) {
            for a in 0..3 {
                v[t[a]] += block[a];
            }
        }
        v
    }

    /// Consistent mass matrix, exact element formula `|T| (1 + delta_ij) / 12`.
    pub fn assemble_mass(&self) -> CsrMatrix {
        self.assemble_matrix(|t| {
            let a = self.mesh.geometry(t).area;
            let d = a / 6.0;
            let o = a / 12.0;
            [[d, o, o], [o, d, o], [o, o, d]]
        })
    }

    /// Stiffness matrix of `A(u, v) = (D grad u, grad v)` at time `t`. The tensor
    /// is averaged over each triangle with the degree-4 rule, which is exact
    /// for P1 gradients whenever `D` is a polynomial of degree at most 4.
    pub fn assemble_stiffness(&self, diffusion: &Diffusion, t: f64) -> Result<CsrMatrix, AssemblyError> {
        let ntri = self.mesh.num_triangles();
        let tensors: Vec<Tensor> = match diffusion.as_constant() {
            Some(d) => vec![d; ntri],
            None => (0..ntri)
                .into_par_iter()
                .map(|tri| {
                    let mut avg = [[0.0; 2]; 2];
                    for (b, w) in self.rule.points.iter().zip(&self.rule.weights) {
                        let d = diffusion.at(self.mesh.map_point(tri, *b), t);
                        for r in 0..2 {
                            for c in 0..2 {
                                avg[r][c] += w * d[r][c];
                            }
                        }
                    }
                    avg
                })
                .collect(),
        };
        for (tri, d) in tensors.iter().enumerate() {
            let scale = d[0][0].abs().max(d[1][1].abs()).max(f64::MIN_POSITIVE);
            if (d[0][1] - d[1][0]).abs() > 1e-12 * scale {
                return Err(AssemblyError::NonSymmetricDiffusion { triangle: tri });
            }
        }
        Ok(self.assemble_matrix(|tri| {
            let geo = self.mesh.geometry(tri);
            let d = &tensors[tri];
            let mut k = [[0.0; 3]; 3];
            for a in 0..3 {
                let ga = geo.grads[a];
                for b in 0..3 {
                    let dg = mat_vec(d, geo.grads[b]);
                    k[a][b] = geo.area * (ga[0] * dg[0] + ga[1] * dg[1]);
                }
            }
            k
        }))
    }

    /// Values of `f` at every quadrature point, triangle-major.
    pub fn eval_at_quadrature<F>(&self, f: F) -> Vec<f64>
    where
        F: Fn(Point) -> f64 + Sync,
    {
        let nq = self.rule.len();
        let mut out = vec![0.0; self.mesh.num_triangles() * nq];
        out.par_chunks_mut(nq).enumerate().for_each(|(t, chunk)| {
            for (slot, b) in chunk.iter_mut().zip(&self.rule.points) {
                *slot = f(self.mesh.map_point(t, *b));
            }
        });
        out
    }

    /// Load vector `(f, phi_j)` from values of `f` at the quadrature points.
    pub fn load_from_values(&self, values: &[f64]) -> Vec<f64> {
        let nq = self.rule.len();
        self.assemble_vector(|t| {
            let area = self.mesh.geometry(t).area;
            let mut out = [0.0; 3];
            for (q, (b, w)) in self.rule.points.iter().zip(&self.rule.weights).enumerate() {
                let fw = values[t * nq + q] * w * area;
                for a in 0..3 {
                    out[a] += fw * b[a];
                }
            }
            out
        })
    }

    /// Load vector `(f, phi_j)`.
    pub fn assemble_load<F>(&self, f: F) -> Vec<f64>
    where
        F: Fn(Point) -> f64 + Sync,
    {
        self.load_from_values(&self.eval_at_quadrature(f))
    }

    /// `L2` norm of a field given by its quadrature-point values.
    pub fn l2_norm_of_values(&self, values: &[f64]) -> f64 {
        let nq = self.rule.len();
        let mut s = 0.0;
        for t in 0..self.mesh.num_triangles() {
            let area = self.mesh.geometry(t).area;
            for (q, w) in self.rule.weights.iter().enumerate() {
                s += w * area * values[t * nq + q].powi(2);
            }
        }
        s.sqrt()
    }

    /// Vector `form(w; u, phi_j)` for every basis function.
    pub fn assemble_b_vector(
        &self,
        w: Sampled<'_>,
        u: Sampled<'_>,
        memory: &dyn MemoryCoefficients,
        variant: FormVariant,
    ) -> Result<Vec<f64>, AssemblyError> {
        self.assemble_weighted_b_vector(&[WeightedTerm { weight: 1.0, w, u }], memory, variant)
    }

    /// Vector `sum_k weight_k form(w_k; u_k, phi_j)`. The integrands are summed
    /// at each quadrature point before integration, so a long sum costs one pass
    /// over the mesh.
    pub fn assemble_weighted_b_vector(
        &self,
        terms: &[WeightedTerm<'_>],
        memory: &dyn MemoryCoefficients,
        variant: FormVariant,
    ) -> Result<Vec<f64>, AssemblyError> {
        for term in terms {
            self.check_sampler(&term.w)?;
            self.check_sampler(&term.u)?;
        }
        let nq = self.rule.len();
        Ok(self.assemble_vector(|tri| {
            let geo = self.mesh.geometry(tri);
            let mut out = [0.0; 3];
            for (q, (b, wq)) in self.rule.points.iter().zip(&self.rule.weights).enumerate() {
                let idx = tri * nq + q;
                let mut flux = [0.0; 2];
                let mut source = 0.0;
                for term in terms {
                    let (uv, ug) = term.u.at(idx);
                    let c = match variant {
                        FormVariant::FullB => memory.values(uv),
                        _ => memory.values(term.w.at(idx).0),
                    };
                    let (f, s) = integrand(&c, ug, variant);
                    flux[0] += term.weight * f[0];
                    flux[1] += term.weight * f[1];
                    source += term.weight * s;
                }
                let jxw = wq * geo.area;
                for a in 0..3 {
                    let g = geo.grads[a];
                    out[a] += jxw * (flux[0] * g[0] + flux[1] * g[1] + source * b[a]);
                }
            }
            out
        }))
    }

    /// Matrix of the `u`-linear block of `B~(w; u, v)`: `(M u)_j` equals the
    /// `alpha`/`gamma` part of `B~(w; u, phi_j)` (or just the `alpha` part).
    pub fn assemble_btilde_matrix(
        &self,
        w: Sampled<'_>,
        memory: &dyn MemoryCoefficients,
        variant: MatrixVariant,
    ) -> Result<CsrMatrix, AssemblyError> {
        self.check_sampler(&w)?;
        let nq = self.rule.len();
        let with_alpha = memory.has_alpha();
        Ok(self.assemble_matrix(|tri| {
            let geo = self.mesh.geometry(tri);
            let mut m = [[0.0; 3]; 3];
            for (q, (b, wq)) in self.rule.points.iter().zip(&self.rule.weights).enumerate() {
                let c = memory.values(w.at(tri * nq + q).0);
                let jxw = wq * geo.area;
                for k in 0..3 {
                    let gk = geo.grads[k];
                    let ag = if with_alpha { mat_vec(&c.alpha, gk) } else { [0.0; 2] };
                    let conv = match variant {
                        MatrixVariant::LinearizedBtilde => c.gamma[0] * gk[0] + c.gamma[1] * gk[1],
                        MatrixVariant::SymmetricBs => 0.0,
                    };
                    for j in 0..3 {
                        let gj = geo.grads[j];
                        m[j][k] += jxw * (ag[0] * gj[0] + ag[1] * gj[1] + conv * b[j]);
                    }
                }
            }
            m
        }))
    }

    /// Jacobian of `u -> B(u, phi_j)` at the P1 function `u` of this space.
    pub fn assemble_b_jacobian(
        &self,
        u: &[f64],
        memory: &dyn MemoryCoefficients,
    ) -> Result<CsrMatrix, AssemblyError> {
        self.check_len(u)?;
        let nq = self.rule.len();
        Ok(self.assemble_matrix(|tri| {
            let geo = self.mesh.geometry(tri);
            let mut m = [[0.0; 3]; 3];
            for (q, (b, wq)) in self.rule.points.iter().zip(&self.rule.weights).enumerate() {
                let (uv, ug) = self.own.sample(u, tri * nq + q);
                let c = memory.values(uv);
                let d = memory.derivatives(uv);
                let jxw = wq * geo.area;
                let dalpha_gu = mat_vec(&d.alpha, ug);
                let dgamma_gu = d.gamma[0] * ug[0] + d.gamma[1] * ug[1];
                for k in 0..3 {
                    let gk = geo.grads[k];
                    let ag = mat_vec(&c.alpha, gk);
                    let flux = [
                        dalpha_gu[0] * b[k] + ag[0] + d.beta[0] * b[k],
                        dalpha_gu[1] * b[k] + ag[1] + d.beta[1] * b[k],
                    ];
                    let source = dgamma_gu * b[k] + c.gamma[0] * gk[0] + c.gamma[1] * gk[1] + d.g * b[k];
                    for j in 0..3 {
                        let gj = geo.grads[j];
                        m[j][k] += jxw * (flux[0] * gj[0] + flux[1] * gj[1] + source * b[j]);
                    }
                }
            }
            m
        }))
    }
}

#[inline]
fn mat_vec(m: &Tensor, v: [f64; 2]) -> [f64; 2] {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

/// Flux and source of the selected form at one point.
#[inline]
fn integrand(c: &CoefficientValues, grad_u: [f64; 2], variant: FormVariant) -> ([f64; 2], f64) {
    let ag = mat_vec(&c.alpha, grad_u);
    let conv = c.gamma[0] * grad_u[0] + c.gamma[1] * grad_u[1];
    match variant {
        FormVariant::FullB | FormVariant::LinearizedBtilde => {
            ([ag[0] + c.beta[0], ag[1] + c.beta[1]], conv + c.g)
        }
        FormVariant::SymmetricBs => (ag, 0.0),
        FormVariant::LowerOrderN => (c.beta, conv + c.g),
        FormVariant::FrozenCoefficients => (c.beta, c.g),
    }
}

/// Symmetric elimination of homogeneous Dirichlet rows and columns in place:
/// boundary rows become identity rows with zero right-hand side and boundary
/// columns are zeroed in interior rows.
pub fn apply_dirichlet_in_place(matrix: &mut CsrMatrix, rhs: &mut [f64], mask: &[bool]) {
    assert_eq!(mask.len(), matrix.nrows(), "mask length");
    assert_eq!(rhs.len(), matrix.nrows(), "rhs length");
    let row_ptr = matrix.row_ptr().to_vec();
    let cols = matrix.col_idx().to_vec();
    let vals = matrix.values_mut();
    for i in 0..mask.len() {
        for k in row_ptr[i]..row_ptr[i + 1] {
            let j = cols[k];
            if mask[i] {
                vals[k] = if i == j { 1.0 } else { 0.0 };
            } else if mask[j] {
                vals[k] = 0.0;
            }
        }
        if mask[i] {
            rhs[i] = 0.0;
        }
    }
}

/// By-value form of [`apply_dirichlet_in_place`].
pub fn apply_dirichlet(mut matrix: CsrMatrix, mut rhs: Vec<f64>, mask: &[bool]) -> (CsrMatrix, Vec<f64>) {
    apply_dirichlet_in_place(&mut matrix, &mut rhs, mask);
    (matrix, rhs)
}

pub fn zero_boundary(v: &mut [f64], mask: &[bool]) {
    for (x, &b) in v.iter_mut().zip(mask) {
        if b {
            *x = 0.0;
        }
    }
}
