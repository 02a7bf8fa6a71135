//! Quadrature rules: a degree-4 rule on triangles and Gauss-Legendre panels on intervals.

/// Symmetric quadrature rule on the reference triangle, in barycentric form.
///
/// Weights sum to one, so the integral over a triangle `T` is
/// `|T| * sum_q weights[q] * f(points[q])`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl QuadratureRule {
    /// Six-point rule exact for polynomials of total degree 4.
    pub fn degree4() -> Self {
        const A: f64 = 0.445_948_490_915_964_886_32;
        const WA: f64 = 0.223_381_589_678_011_465_70;
        const B: f64 = 0.091_576_213_509_770_743_46;
        const WB: f64 = 0.109_951_743_655_321_867_64;
        let ca = 1.0 - 2.0 * A;
        let cb = 1.0 - 2.0 * B;
        Self {
            points: vec![[ca, A, A], [A, ca, A], [A, A, ca], [cb, B, B], [B, cb, B], [B, B, cb]],
            weights: vec![WA, WA, WA, WB, WB, WB],
            degree: 4,
        }
    }

    /// One-point centroid rule, exact for linear polynomials.
    pub fn centroid() -> Self {
        Self { points: vec![[1.0 / 3.0; 3]], weights: vec![1.0], degree: 1 }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// `n`-point rule computed by Newton iteration on the Legendre polynomial.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Integrates `f` over `[a, b]` split into `panels` equal subintervals.
    pub fn integrate(&self, a: f64, b: f64, panels: usize, mut f: impl FnMut(f64) -> f64) -> f64 {
        if a == b {
            return 0.0;
        }
        let panels = panels.max(1);
        let width = (b - a) / panels as f64;
        let mut total = 0.0;
        for k in 0..panels {
            let lo = a + k as f64 * width;
            let half = 0.5 * width;
            let mid = lo + half;
            let mut s = 0.0;
            for (x, w) in self.nodes.iter().zip(&self.weights) {
                s += w * f(mid + half * x);
            }
            total += half * s;
        }
        total
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let dp = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, dp)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    #[test]
    fn degree4_rule_exact_on_reference_triangle() {
        let rule = QuadratureRule::degree4();
        assert!((rule.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        // reference triangle (0,0),(1,0),(0,1): int x^a y^b = a! b! / (a+b+2)!
        for a in 0..=4u32 {
            for b in 0..=(4 - a) {
                let exact = factorial(a) * factorial(b) / factorial(a + b + 2);
                let approx: f64 = rule
                    .points
                    .iter()
                    .zip(&rule.weights)
                    .map(|(l, w)| w * 0.5 * l[1].powi(a as i32) * l[2].powi(b as i32))
                    .sum();
                assert!((approx - exact).abs() < 1e-15, "x^{a} y^{b}: {approx} vs {exact}");
            }
        }
    }

    #[test]
    fn degree4_rule_not_exact_for_degree6() {
        let rule = QuadratureRule::degree4();
        let exact = factorial(6) / factorial(8);
        let approx: f64 = rule.points.iter().zip(&rule.weights).map(|(l, w)| w * 0.5 * l[1].powi(6)).sum();
        assert!((approx - exact).abs() > 1e-6);
    }

    #[test]
    fn gauss_legendre_polynomial_exactness() {
        let gl = GaussLegendre::new(5);
        assert!((gl.weights().iter().sum::<f64>() - 2.0).abs() < 1e-14);
        for k in 0..10 {
            let exact = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
            let got = gl.integrate(-1.0, 1.0, 1, |x| x.powi(k));
            assert!((got - exact).abs() < 1e-14, "x^{k}");
        }
    }

    #[test]
    fn gauss_legendre_smooth_integrand() {
        let gl = GaussLegendre::new(10);
        let got = gl.integrate(0.0, 1.0, 2, f64::exp);
        assert!((got - (std::f64::consts::E - 1.0)).abs() < 1e-14);
        assert_eq!(gl.integrate(0.3, 0.3, 4, f64::exp), 0.0);
    }
}
