//! Quadrature on the reference triangle `{(x, y) : x, y >= 0, x + y <= 1}`
//! and on the unit interval.
//!
//! Triangle rules are collapsed (Duffy) tensor products of Gauss-Legendre
//! rules; their weights sum to the reference area 1/2. Edge rules live on
//! `[0, 1]` and their weights sum to 1.

use crate::error::{Error, Result};

/// Largest supported exactness degree for either variant.
pub const MAX_EXACTNESS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleVariant {
    Triangle,
    Edge,
}

#[derive(Debug, Clone)]
pub struct QuadRule {
    pub variant: RuleVariant,
    pub exactness: usize,
    /// Barycentric coordinates `(λ0, λ1, λ2)` with respect to the reference
    /// vertices `(0,0), (1,0), (0,1)`. Edge rules store `(1 - t, t, 0)`.
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl QuadRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Reference coordinates `(x, y) = (λ1, λ2)` of point `i`.
    #[inline]
    pub fn xy(&self, i: usize) -> [f64; 2] {
        [self.points[i][1], self.points[i][2]]
    }

    /// Edge parameter `t` of point `i` (edge rules only).
    #[inline]
    pub fn t(&self, i: usize) -> f64 {
        self.points[i][1]
    }

    /// Iterate over `(reference point, weight)` pairs.
    pub fn iter(&self) -> impl Iterator<Item = ([f64; 2], f64)> + '_ {
        (0..self.len()).map(move |i| (self.xy(i), self.weights[i]))
    }

    /// Composite triangle rule refined geometrically toward reference vertex
    /// `vertex` (0, 1 or 2): at each level the corner sub-triangle is split
    /// into four and the three non-corner children receive a copy of `self`.
    pub fn graded_toward_vertex(&self, vertex: usize, levels: usize) -> QuadRule {
        assert_eq!(self.variant, RuleVariant::Triangle);
        let corners = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let c = corners[vertex];
        let a = corners[(vertex + 1) % 3];
        let b = corners[(vertex + 2) % 3];
        let mut points = Vec::new();
        let mut weights = Vec::new();
        let mut push_sub = |t: [[f64; 2]; 3]| {
            let det = (t[1][0] - t[0][0]) * (t[2][1] - t[0][1])
                - (t[2][0] - t[0][0]) * (t[1][1] - t[0][1]);
            let det = det.abs();
            for (i, w) in self.weights.iter().enumerate() {
                let l = self.points[i];
                let x = l[0] * t[0][0] + l[1] * t[1][0] + l[2] * t[2][0];
                let y = l[0] * t[0][1] + l[1] * t[1][1] + l[2] * t[2][1];
                points.push([1.0 - x - y, x, y]);
                weights.push(w * det);
            }
        };
        // Corner triangle (c, a, b) shrinks by half per level.
        let mut tri = [c, a, b];
        for _ in 0..levels {
            let mid = |p: [f64; 2], q: [f64; 2]| [(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0];
            let (m01, m12, m20) = (mid(tri[0], tri[1]), mid(tri[1], tri[2]), mid(tri[2], tri[0]));
            push_sub([m01, tri[1], m12]);
            push_sub([m20, m12, tri[2]]);
            push_sub([m01, m12, m20]);
            tri = [tri[0], m01, m20];
        }
        push_sub(tri);
        QuadRule {
            variant: RuleVariant::Triangle,
            exactness: self.exactness,
            points,
            weights,
        }
    }

    /// Edge rule concentrated at `t = 0` (or `t = 1` when `toward_end`)
    /// through the substitution `t = s³`: polynomials of degree up to the
    /// exactness stay exact, and integrands with `t^{k/3}` behaviour, such as
    /// corner singularities, become smooth in `s`.
    pub fn graded_edge(&self, toward_end: bool) -> QuadRule {
        assert_eq!(self.variant, RuleVariant::Edge);
        let (s, w) = gauss_legendre((3 * self.exactness + 2).div_ceil(2) + 1);
        let mut points = Vec::with_capacity(s.len());
        let mut weights = Vec::with_capacity(s.len());
        for (s, w) in s.iter().zip(&w) {
            let near = s.powi(3);
            points.push(if toward_end { [near, 1.0 - near, 0.0] } else { [1.0 - near, near, 0.0] });
            weights.push(w * 3.0 * s * s);
        }
        QuadRule {
            variant: RuleVariant::Edge,
            exactness: self.exactness,
            points,
            weights,
        }
    }
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Chebyshev-like initial guess, refined by Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // map [-1, 1] -> [0, 1]
        nodes[i] = 0.5 * (1.0 - x);
        nodes[n - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Shifted Legendre polynomial `L_k(t)` on `[0, 1]`, normalized so that
/// `L_k(1) = 1` and `∫_0^1 L_k L_m dt = δ_km / (2k + 1)`.
pub fn shifted_legendre(k: usize, t: f64) -> f64 {
    let x = 2.0 * t - 1.0;
    if k == 0 {
        return 1.0;
    }
    let mut p0 = 1.0;
    let mut p1 = x;
    for j in 2..=k {
        let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
        p0 = p1;
        p1 = p2;
    }
    p1
}

/// Quadrature rule of the requested exactness degree.
pub fn quad_rule(exactness: usize, variant: RuleVariant) -> Result<QuadRule> {
    if exactness > MAX_EXACTNESS {
        return Err(Error::UnsupportedExactness {
            requested: exactness,
            max: MAX_EXACTNESS,
        });
    }
    match variant {
        RuleVariant::Edge => {
            let n = exactness / 2 + 1;
            let (t, w) = gauss_legendre(n);
            Ok(QuadRule {
                variant,
                exactness,
                points: t.iter().map(|&t| [1.0 - t, t, 0.0]).collect(),
                weights: w,
            })
        }
        RuleVariant::Triangle if exactness <= 1 => Ok(QuadRule {
            variant,
            exactness,
            points: vec![[1.0 / 3.0; 3]],
            weights: vec![0.5],
        }),
        RuleVariant::Triangle => {
            // (u, v) in [0,1]^2 -> (x, y) = (u, v (1 - u)), Jacobian (1 - u).
            // A degree-d integrand becomes degree d + 1 in u.
            let n = (exactness + 2).div_ceil(2);
            let (t, w) = gauss_legendre(n);
            let mut points = Vec::with_capacity(n * n);
            let mut weights = Vec::with_capacity(n * n);
            for i in 0..n {
                for j in 0..n {
                    let (u, v) = (t[i], t[j]);
                    let x = u;
                    let y = v * (1.0 - u);
                    points.push([1.0 - x - y, x, y]);
                    weights.push(w[i] * w[j] * (1.0 - u));
                }
            }
            Ok(QuadRule {
                variant,
                exactness,
                points,
                weights,
            })
        }
    }
}

/// Rules for integrals involving non-polynomial data, graded on cells and
/// edges that touch an optional singular point.
#[derive(Debug, Clone)]
pub struct DataQuadrature {
    triangle: QuadRule,
    edge: QuadRule,
    graded_triangle: Vec<QuadRule>,
    graded_edge: [QuadRule; 2],
    singular: Option<[f64; 2]>,
}

/// Grading depth used on cells next to a singular point.
pub const SINGULAR_LEVELS: usize = 12;

impl DataQuadrature {
    pub fn new(exactness: usize, singular: Option<[f64; 2]>) -> Result<Self> {
        let triangle = quad_rule(exactness, RuleVariant::Triangle)?;
        let edge = quad_rule(exactness, RuleVariant::Edge)?;
        let (graded_triangle, graded_edge) = if singular.is_some() {
            (
                (0..3).map(|v| triangle.graded_toward_vertex(v, SINGULAR_LEVELS)).collect(),
                [edge.graded_edge(false), edge.graded_edge(true)],
            )
        } else {
            (Vec::new(), [edge.clone(), edge.clone()])
        };
        Ok(DataQuadrature {
            triangle,
            edge,
            graded_triangle,
            graded_edge,
            singular,
        })
    }

    pub fn exactness(&self) -> usize {
        self.triangle.exactness
    }

    fn is_singular(&self, x: [f64; 2], scale: f64) -> bool {
        self.singular
            .is_some_and(|s| ((s[0] - x[0]).powi(2) + (s[1] - x[1]).powi(2)).sqrt() <= 1e-12 * scale)
    }

    /// Rule for the cell with the given corners (reference vertex `i` maps to
    /// `corners[i]`).
    pub fn triangle(&self, corners: &[[f64; 2]; 3]) -> &QuadRule {
        let scale = corners.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()));
        for (v, c) in corners.iter().enumerate() {
            if self.is_singular(*c, scale) {
                return &self.graded_triangle[v];
            }
        }
        &self.triangle
    }

    /// Rule on `[0, 1]` for the segment from `a` (t = 0) to `b` (t = 1).
    pub fn edge(&self, a: [f64; 2], b: [f64; 2]) -> &QuadRule {
        let scale = a.iter().chain(&b).fold(1.0f64, |m, v| m.max(v.abs()));
        if self.is_singular(a, scale) {
            &self.graded_edge[0]
        } else if self.is_singular(b, scale) {
            &self.graded_edge[1]
        } else {
            &self.edge
        }
    }
}
