//! Structured triangulations of axis-aligned rectangles and P1 functions on them.
//!
//! Every grid cell is split along the same diagonal (lower-left to upper-right),
//! which makes point location a constant-time index computation. Coarse and fine
//! meshes never need to be nested: a function on one mesh can be evaluated at
//! arbitrary points of the other.

use std::sync::Arc;

use thiserror::Error;

/// A point in the plane, `[x1, x2]`.
pub type Point = [f64; 2];

/// Relative tolerance used when deciding whether a point lies on a grid line
/// or inside a triangle.
const LOCATE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("mesh needs at least one subdivision per axis (got nx={nx}, ny={ny})")]
    ZeroSubdivisions { nx: usize, ny: usize },
    #[error("degenerate domain [{ax}, {bx}] x [{ay}, {by}]")]
    DegenerateDomain { ax: f64, bx: f64, ay: f64, by: f64 },
    #[error("point ({x}, {y}) lies outside the mesh domain")]
    OutsideDomain { x: f64, y: f64 },
    #[error("coefficient vector has length {got}, mesh has {expected} nodes")]
    LengthMismatch { expected: usize, got: usize },
}

/// Axis-aligned rectangle `[ax, bx] x [ay, by]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub ax: f64,
    pub bx: f64,
    pub ay: f64,
    pub by: f64,
}

impl Rect {
    pub fn new(ax: f64, bx: f64, ay: f64, by: f64) -> Self {
        Self { ax, bx, ay, by }
    }

    pub fn unit_square() -> Self {
        Self::new(0.0, 1.0, 0.0, 1.0)
    }

    pub fn area(&self) -> f64 {
        (self.bx - self.ax) * (self.by - self.ay)
    }

    fn is_degenerate(&self) -> bool {
        !(self.bx > self.ax && self.by > self.ay) || !self.area().is_finite()
    }
}

impl Default for Rect {
    fn default() -> Self {
        Self::unit_square()
    }
}

/// Area and gradients of the barycentric coordinate functions of one triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangleGeometry {
    pub area: f64,
    pub grads: [[f64; 2]; 3],
}

impl TriangleGeometry {
    fn from_vertices(v: [Point; 3]) -> Self {
        let det = (v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (v[1][1] - v[0][1]);
        let inv = 1.0 / det;
        let grads = [
            [(v[1][1] - v[2][1]) * inv, (v[2][0] - v[1][0]) * inv],
            [(v[2][1] - v[0][1]) * inv, (v[0][0] - v[2][0]) * inv],
            [(v[0][1] - v[1][1]) * inv, (v[1][0] - v[0][0]) * inv],
        ];
        Self { area: 0.5 * det, grads }
    }
}

/// Structured triangulation of a rectangle with `nx * ny` cells, two triangles each.
#[derive(Debug, Clone)]
pub struct Mesh {
    nx: usize,
    ny: usize,
    domain: Rect,
    nodes: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary: Vec<bool>,
    geometry: Vec<TriangleGeometry>,
}

impl Mesh {
    /// Builds the `nx x ny` triangulation of `domain`.
    ///
    /// Node `(i, j)` has index `j * (nx + 1) + i`. Cell `(i, j)` owns triangles
    /// `2k` (below the diagonal) and `2k + 1` (above it), with `k = j * nx + i`.
    pub fn build(nx: usize, ny: usize, domain: Rect) -> Result<Self, MeshError> {
        if nx == 0 || ny == 0 {
            return Err(MeshError::ZeroSubdivisions { nx, ny });
        }
        if domain.is_degenerate() {
            return Err(MeshError::DegenerateDomain {
                ax: domain.ax,
                bx: domain.bx,
                ay: domain.ay,
                by: domain.by,
            });
        }
        let hx = (domain.bx - domain.ax) / nx as f64;
        let hy = (domain.by - domain.ay) / ny as f64;
        let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
        let mut boundary = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            // the last line is pinned to the exact domain edge
            let y = if j == ny { domain.by } else { domain.ay + j as f64 * hy };
            for i in 0..=nx {
                let x = if i == nx { domain.bx } else { domain.ax + i as f64 * hx };
                nodes.push([x, y]);
                boundary.push(i == 0 || i == nx || j == 0 || j == ny);
            }
        }
        let mut triangles = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let v00 = j * (nx + 1) + i;
                let v10 = v00 + 1;
                let v01 = v00 + nx + 1;
                let v11 = v01 + 1;
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
            }
        }
        let geometry = triangles
            .iter()
            .map(|t| TriangleGeometry::from_vertices([nodes[t[0]], nodes[t[1]], nodes[t[2]]]))
            .collect();
        Ok(Self { nx, ny, domain, nodes, triangles, boundary, geometry })
    }

    /// Square mesh of the unit square with `n` cells per side (`h = 1/n`).
    pub fn unit_square(n: usize) -> Result<Self, MeshError> {
        Self::build(n, n, Rect::unit_square())
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn domain(&self) -> Rect {
        self.domain
    }

    /// Largest cell width; `1/n` on the unit square.
    pub fn mesh_size(&self) -> f64 {
        let hx = (self.domain.bx - self.domain.ax) / self.nx as f64;
        let hy = (self.domain.by - self.domain.ay) / self.ny as f64;
        hx.max(hy)
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_mask(&self) -> &[bool] {
        &self.boundary
    }

    pub fn geometry(&self, tri: usize) -> &TriangleGeometry {
        &self.geometry[tri]
    }

    pub fn vertices(&self, tri: usize) -> [Point; 3] {
        let t = self.triangles[tri];
        [self.nodes[t[0]], self.nodes[t[1]], self.nodes[t[2]]]
    }

    /// Physical point for barycentric coordinates `bary` in triangle `tri`.
    pub fn map_point(&self, tri: usize, bary: [f64; 3]) -> Point {
        let v = self.vertices(tri);
        [
            bary[0] * v[0][0] + bary[1] * v[1][0] + bary[2] * v[2][0],
            bary[0] * v[0][1] + bary[1] * v[1][1] + bary[2] * v[2][1],
        ]
    }

    /// Barycentric coordinates of `p` with respect to triangle `tri` (unclamped).
    pub fn barycentric(&self, tri: usize, p: Point) -> [f64; 3] {
        let v = self.vertices(tri);
        let g = &self.geometry[tri].grads;
        let l1 = g[1][0] * (p[0] - v[0][0]) + g[1][1] * (p[1] - v[0][1]);
        let l2 = g[2][0] * (p[0] - v[0][0]) + g[2][1] * (p[1] - v[0][1]);
        [1.0 - l1 - l2, l1, l2]
    }

    /// Finds the triangle containing `p` and its barycentric coordinates.
    ///
    /// Points on shared edges or vertices resolve to the containing triangle
    /// with the lowest index.
    pub fn locate_point(&self, p: Point) -> Result<(usize, [f64; 3]), MeshError> {
        let d = self.domain;
        let sx = (p[0] - d.ax) / (d.bx - d.ax) * self.nx as f64;
        let sy = (p[1] - d.ay) / (d.by - d.ay) * self.ny as f64;
        let tol_x = LOCATE_TOL * self.nx as f64;
        let tol_y = LOCATE_TOL * self.ny as f64;
        if !(sx >= -tol_x && sx <= self.nx as f64 + tol_x && sy >= -tol_y && sy <= self.ny as f64 + tol_y) {
            return Err(MeshError::OutsideDomain { x: p[0], y: p[1] });
        }
        let cell_range = |s: f64, tol: f64, n: usize| {
            let lo = ((s - tol).floor().max(0.0) as usize).min(n - 1);
            let hi = ((s + tol).floor().max(0.0) as usize).min(n - 1);
            (lo, hi)
        };
        let (ilo, ihi) = cell_range(sx, tol_x, self.nx);
        let (jlo, jhi) = cell_range(sy, tol_y, self.ny);
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        // cells are visited in increasing triangle index order
        for j in jlo..=jhi {
            for i in ilo..=ihi {
                let k = j * self.nx + i;
                for tri in [2 * k, 2 * k + 1] {
                    let bary = self.barycentric(tri, p);
                    let min = bary[0].min(bary[1]).min(bary[2]);
                    if min >= -LOCATE_TOL {
                        return Ok((tri, clamp_barycentric(bary)));
                    }
                    if best.map_or(true, |b| min > b.2) {
                        best = Some((tri, bary, min));
                    }
                }
            }
        }
        // only reachable for points within tolerance of the outer boundary
        let (tri, bary, _) = best.expect("at least one candidate cell");
        Ok((tri, clamp_barycentric(bary)))
    }
}

fn clamp_barycentric(bary: [f64; 3]) -> [f64; 3] {
    let c = bary.map(|l| l.clamp(0.0, 1.0));
    let s = c[0] + c[1] + c[2];
    [c[0] / s, c[1] / s, c[2] / s]
}

/// Continuous piecewise-linear function given by its nodal values.
#[derive(Debug, Clone)]
pub struct FeFunction {
    mesh: Arc<Mesh>,
    coeffs: Vec<f64>,
}

impl FeFunction {
    pub fn new(mesh: Arc<Mesh>, coeffs: Vec<f64>) -> Result<Self, MeshError> {
        if coeffs.len() != mesh.num_nodes() {
            return Err(MeshError::LengthMismatch { expected: mesh.num_nodes(), got: coeffs.len() });
        }
        Ok(Self { mesh, coeffs })
    }

    pub fn zeros(mesh: Arc<Mesh>) -> Self {
        let n = mesh.num_nodes();
        Self { mesh, coeffs: vec![0.0; n] }
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(mesh: Arc<Mesh>, f: impl Fn(Point) -> f64) -> Self {
        let coeffs = mesh.nodes().iter().map(|&p| f(p)).collect();
        Self { mesh, coeffs }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    /// True when every boundary coefficient is exactly zero.
    pub fn satisfies_homogeneous_dirichlet(&self) -> bool {
        self.mesh
            .boundary_mask()
            .iter()
            .zip(&self.coeffs)
            .all(|(&b, &c)| !b || c == 0.0)
    }

    pub fn eval(&self, p: Point) -> Result<f64, MeshError> {
        let (tri, bary) = self.mesh.locate_point(p)?;
        Ok(self.eval_in(tri, bary))
    }

    fn eval_in(&self, tri: usize, bary: [f64; 3]) -> f64 {
        let t = self.mesh.triangles()[tri];
        bary[0] * self.coeffs[t[0]] + bary[1] * self.coeffs[t[1]] + bary[2] * self.coeffs[t[2]]
    }

    /// Evaluates the function at arbitrary points of its domain.
    pub fn eval_on_mesh(&self, points: &[Point]) -> Result<Vec<f64>, MeshError> {
        points.iter().map(|&p| self.eval(p)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_mesh() {
        let m = Mesh::unit_square(1).unwrap();
        assert_eq!(m.num_nodes(), 4);
        assert_eq!(m.num_triangles(), 2);
        assert!(m.boundary_mask().iter().all(|&b| b));
    }

    #[test]
    fn counts_follow_formulas() {
        for (nx, ny) in [(4, 4), (3, 5), (6, 6), (7, 2)] {
            let m = Mesh::build(nx, ny, Rect::unit_square()).unwrap();
            assert_eq!(m.num_nodes(), (nx + 1) * (ny + 1));
            assert_eq!(m.num_triangles(), 2 * nx * ny);
            let nb = m.boundary_mask().iter().filter(|&&b| b).count();
            assert_eq!(nb, 2 * (nx + ny));
        }
        let m = Mesh::unit_square(6).unwrap();
        assert!((m.mesh_size() - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(
            Mesh::build(0, 3, Rect::unit_square()).unwrap_err(),
            MeshError::ZeroSubdivisions { nx: 0, ny: 3 }
        );
        assert!(matches!(
            Mesh::build(2, 2, Rect::new(1.0, 1.0, 0.0, 1.0)),
            Err(MeshError::DegenerateDomain { .. })
        ));
        assert!(matches!(
            Mesh::build(2, 2, Rect::new(0.0, 1.0, 2.0, 1.0)),
            Err(MeshError::DegenerateDomain { .. })
        ));
    }

    #[test]
    fn triangles_are_counterclockwise_and_tile() {
        let d = Rect::new(-1.0, 2.0, 0.5, 1.25);
        let m = Mesh::build(5, 3, d).unwrap();
        let mut total = 0.0;
        for t in 0..m.num_triangles() {
            let a = m.geometry(t).area;
            assert!(a > 0.0);
            total += a;
        }
        assert!((total - d.area()).abs() <= 1e-12 * d.area());
    }

    #[test]
    fn boundary_flags_match_coordinates() {
        let d = Rect::new(0.0, 2.0, -1.0, 1.0);
        let m = Mesh::build(4, 3, d).unwrap();
        for (p, &b) in m.nodes().iter().zip(m.boundary_mask()) {
            let on = p[0] == d.ax || p[0] == d.bx || p[1] == d.ay || p[1] == d.by;
            assert_eq!(on, b);
        }
    }

    #[test]
    fn locate_corner() {
        let m = Mesh::unit_square(1).unwrap();
        let (tri, bary) = m.locate_point([0.0, 0.0]).unwrap();
        assert_eq!(tri, 0);
        assert_eq!(bary, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn locate_shared_vertex_prefers_lowest_index() {
        let m = Mesh::unit_square(2).unwrap();
        let (tri, bary) = m.locate_point([0.5, 0.5]).unwrap();
        assert_eq!(tri, 0);
        let center = 4;
        let local = m.triangles()[tri].iter().position(|&v| v == center).unwrap();
        assert!((bary[local] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn locate_reconstructs_point() {
        let m = Mesh::unit_square(4).unwrap();
        let p = [0.3, 0.7];
        let (tri, bary) = m.locate_point(p).unwrap();
        // cell (1, 2); p sits above that cell's diagonal
        assert_eq!(tri / 2, 2 * 4 + 1);
        let q = m.map_point(tri, bary);
        assert!((q[0] - p[0]).abs() < 1e-14 && (q[1] - p[1]).abs() < 1e-14);
        assert!(bary.iter().all(|&l| (0.0..=1.0).contains(&l)));
    }

    #[test]
    fn outside_points_rejected() {
        let m = Mesh::unit_square(3).unwrap();
        assert!(matches!(m.locate_point([1.1, 0.5]), Err(MeshError::OutsideDomain { .. })));
        assert!(matches!(m.locate_point([0.5, -1e-3]), Err(MeshError::OutsideDomain { .. })));
        assert!(m.locate_point([1.0, 1.0]).is_ok());
    }

    #[test]
    fn eval_constant_and_linear() {
        let coarse = Arc::new(Mesh::unit_square(3).unwrap());
        let fine = Mesh::unit_square(7).unwrap();
        let one = FeFunction::interpolate(coarse.clone(), |_| 1.0);
        let x1 = FeFunction::interpolate(coarse, |p| p[0]);
        let ones = one.eval_on_mesh(fine.nodes()).unwrap();
        let xs = x1.eval_on_mesh(fine.nodes()).unwrap();
        for ((v, x), p) in ones.iter().zip(&xs).zip(fine.nodes()) {
            assert!((v - 1.0).abs() < 1e-14);
            assert!((x - p[0]).abs() < 1e-14);
        }
    }

    #[test]
    fn eval_bubble_against_dense_expansion() {
        let mesh = Arc::new(Mesh::unit_square(4).unwrap());
        let bubble = |p: Point| p[0] * (1.0 - p[0]) * p[1] * (1.0 - p[1]);
        let u = FeFunction::interpolate(mesh.clone(), bubble);
        // (0.5, 0.5) is a mesh node, so the interpolant reproduces the nodal value
        assert!((u.eval([0.5, 0.5]).unwrap() - 1.0 / 16.0).abs() < 1e-15);
        // brute force: scan every triangle, keep any one containing the point
        let p = [0.41, 0.13];
        let mut oracle = None;
        for (t, verts) in mesh.triangles().iter().enumerate() {
            let v = mesh.vertices(t);
            let det = (v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (v[1][1] - v[0][1]);
            let l1 = ((p[0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (p[1] - v[0][1])) / det;
            let l2 = ((v[1][0] - v[0][0]) * (p[1] - v[0][1]) - (p[0] - v[0][0]) * (v[1][1] - v[0][1])) / det;
            let l0 = 1.0 - l1 - l2;
            if l0 >= 0.0 && l1 >= 0.0 && l2 >= 0.0 {
                let c = u.coeffs();
                oracle = Some(l0 * c[verts[0]] + l1 * c[verts[1]] + l2 * c[verts[2]]);
                break;
            }
        }
        assert!((u.eval(p).unwrap() - oracle.unwrap()).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch_rejected() {
        let mesh = Arc::new(Mesh::unit_square(2).unwrap());
        assert_eq!(
            FeFunction::new(mesh, vec![0.0; 3]).unwrap_err(),
            MeshError::LengthMismatch { expected: 9, got: 3 }
        );
    }
}
