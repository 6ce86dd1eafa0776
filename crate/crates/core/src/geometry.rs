//! Affine reference-to-physical maps `x = x0 + J x̂` for triangles.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineMap {
    pub origin: [f64; 2],
    /// Columns are `x1 - x0` and `x2 - x0`.
    pub jac: [[f64; 2]; 2],
    pub det: f64,
    pub inv: [[f64; 2]; 2],
}

impl AffineMap {
    pub fn from_vertices(v: [[f64; 2]; 3]) -> Self {
        let jac = [
            [v[1][0] - v[0][0], v[2][0] - v[0][0]],
            [v[1][1] - v[0][1], v[2][1] - v[0][1]],
        ];
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        let inv = [
            [jac[1][1] / det, -jac[0][1] / det],
            [-jac[1][0] / det, jac[0][0] / det],
        ];
        AffineMap {
            origin: v[0],
            jac,
            det,
            inv,
        }
    }

    pub fn reference() -> Self {
        Self::from_vertices([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    }

    #[inline]
    pub fn to_physical(&self, xh: [f64; 2]) -> [f64; 2] {
        [
            self.origin[0] + self.jac[0][0] * xh[0] + self.jac[0][1] * xh[1],
            self.origin[1] + self.jac[1][0] * xh[0] + self.jac[1][1] * xh[1],
        ]
    }

    #[inline]
    pub fn to_reference(&self, x: [f64; 2]) -> [f64; 2] {
        let d = [x[0] - self.origin[0], x[1] - self.origin[1]];
        [
            self.inv[0][0] * d[0] + self.inv[0][1] * d[1],
            self.inv[1][0] * d[0] + self.inv[1][1] * d[1],
        ]
    }

    /// Physical gradient `J^{-T} ĝ` of a pulled-back scalar.
    #[inline]
    pub fn grad(&self, g: [f64; 2]) -> [f64; 2] {
        [
            self.inv[0][0] * g[0] + self.inv[1][0] * g[1],
            self.inv[0][1] * g[0] + self.inv[1][1] * g[1],
        ]
    }

    /// Contravariant Piola push-forward `J v̂ / det J`.
    #[inline]
    pub fn piola(&self, v: [f64; 2]) -> [f64; 2] {
        [
            (self.jac[0][0] * v[0] + self.jac[0][1] * v[1]) / self.det,
            (self.jac[1][0] * v[0] + self.jac[1][1] * v[1]) / self.det,
        ]
    }

    /// Inverse Piola pull-back `det J · J^{-1} v`.
    #[inline]
    pub fn piola_inverse(&self, v: [f64; 2]) -> [f64; 2] {
        [
            self.det * (self.inv[0][0] * v[0] + self.inv[0][1] * v[1]),
            self.det * (self.inv[1][0] * v[0] + self.inv[1][1] * v[1]),
        ]
    }

    /// `J^T J / det J`, the metric of the Piola mass form.
    pub fn piola_metric(&self) -> [[f64; 2]; 2] {
        let j = &self.jac;
        let a = (j[0][0] * j[0][0] + j[1][0] * j[1][0]) / self.det;
        let b = (j[0][0] * j[0][1] + j[1][0] * j[1][1]) / self.det;
        let c = (j[0][1] * j[0][1] + j[1][1] * j[1][1]) / self.det;
        [[a, b], [b, c]]
    }

    /// `det J · J^{-1} J^{-T}`, the metric of the stiffness form.
    pub fn stiffness_metric(&self) -> [[f64; 2]; 2] {
        let g = &self.inv;
        let a = (g[0][0] * g[0][0] + g[0][1] * g[0][1]) * self.det;
        let b = (g[0][0] * g[1][0] + g[0][1] * g[1][1]) * self.det;
        let c = (g[1][0] * g[1][0] + g[1][1] * g[1][1]) * self.det;
        [[a, b], [b, c]]
    }
}

#[inline]
pub fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[inline]
pub fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Signed area of the triangle `(a, b, c)`; positive when counter-clockwise.
#[inline]
pub fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}
