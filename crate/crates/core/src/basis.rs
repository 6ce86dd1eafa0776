//! Scalar polynomial bases on the reference triangle.
//!
//! The full degree-`k` basis is orthonormal in `L²(K̂)` and hierarchical:
//! its first `dim(r)` members span the polynomials of degree `≤ r`, and the
//! first member is the constant `√2`. Every other member is therefore
//! orthogonal to constants, so the zero-mean space is simply the basis with
//! the constant dropped. Affine maps preserve both properties up to the
//! factor `det J`.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geometry::AffineMap;
use crate::quadrature::{quad_rule, RuleVariant};

/// Dimension of the polynomials of total degree `≤ k` in two variables.
pub const fn dim(k: usize) -> usize {
    (k + 1) * (k + 2) / 2
}

const SHIFT: f64 = 1.0 / 3.0;

/// Hierarchical `L²(K̂)`-orthonormal basis, stored as a lower-triangular
/// combination of centered monomials `(x - 1/3)^a (y - 1/3)^b`.
#[derive(Debug, Clone)]
pub struct OrthoBasis {
    degree: usize,
    exps: Vec<(i32, i32)>,
    /// Row-major `n × n`; row `i` holds the monomial coefficients of member `i`.
    coeffs: Vec<f64>,
}

impl OrthoBasis {
    pub fn new(degree: usize) -> Self {
        let n = dim(degree);
        let mut exps = Vec::with_capacity(n);
        for d in 0..=degree as i32 {
            for j in 0..=d {
                exps.push((d - j, j));
            }
        }
        let rule = quad_rule(2 * degree, RuleVariant::Triangle).expect("supported degree");
        let mut basis = OrthoBasis {
            degree,
            exps,
            coeffs: DMatrix::<f64>::identity(n, n).transpose().as_slice().to_vec(),
        };
        // Two Cholesky passes: the second cleans up the rounding left by the
        // ill-conditioned monomial Gram matrix.
        for _ in 0..2 {
            let mut gram = DMatrix::<f64>::zeros(n, n);
            let mut vals = vec![0.0; n];
            for (x, w) in rule.iter() {
                basis.values_into(x, &mut vals);
                for i in 0..n {
                    for j in 0..=i {
                        gram[(i, j)] += w * vals[i] * vals[j];
                    }
                }
            }
            for i in 0..n {
                for j in 0..i {
                    gram[(j, i)] = gram[(i, j)];
                }
            }
            let chol = gram.cholesky().expect("monomials are linearly independent");
            let l_inv = chol
                .l()
                .solve_lower_triangular(&DMatrix::identity(n, n))
                .expect("nonsingular factor");
            let old = DMatrix::from_row_slice(n, n, &basis.coeffs);
            let new = l_inv * old;
            for i in 0..n {
                for j in 0..n {
                    basis.coeffs[i * n + j] = if j <= i { new[(i, j)] } else { 0.0 };
                }
            }
        }
        basis
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.exps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exps.is_empty()
    }

    fn monomials(&self, x: [f64; 2], vals: &mut [f64], grads: Option<&mut [[f64; 2]]>) {
        let s = x[0] - SHIFT;
        let t = x[1] - SHIFT;
        let k = self.degree;
        let mut sp = vec![1.0; k + 1];
        let mut tp = vec![1.0; k + 1];
        for i in 1..=k {
            sp[i] = sp[i - 1] * s;
            tp[i] = tp[i - 1] * t;
        }
        for (m, &(a, b)) in self.exps.iter().enumerate() {
            vals[m] = sp[a as usize] * tp[b as usize];
        }
        if let Some(g) = grads {
            for (m, &(a, b)) in self.exps.iter().enumerate() {
                let dx = if a > 0 { a as f64 * sp[a as usize - 1] * tp[b as usize] } else { 0.0 };
                let dy = if b > 0 { b as f64 * sp[a as usize] * tp[b as usize - 1] } else { 0.0 };
                g[m] = [dx, dy];
            }
        }
    }

    /// Values of all members at reference point `x`.
    pub fn values_into(&self, x: [f64; 2], out: &mut [f64]) {
        let n = self.len();
        let mut mono = vec![0.0; n];
        self.monomials(x, &mut mono, None);
        for i in 0..n {
            let row = &self.coeffs[i * n..i * n + i + 1];
            out[i] = row.iter().zip(&mono).map(|(c, m)| c * m).sum();
        }
    }

    /// Reference gradients of all members at `x`.
    pub fn grads_into(&self, x: [f64; 2], out: &mut [[f64; 2]]) {
        let n = self.len();
        let mut mono = vec![0.0; n];
        let mut mg = vec![[0.0; 2]; n];
        self.monomials(x, &mut mono, Some(&mut mg));
        for i in 0..n {
            let row = &self.coeffs[i * n..i * n + i + 1];
            let mut g = [0.0; 2];
            for (c, d) in row.iter().zip(&mg) {
                g[0] += c * d[0];
                g[1] += c * d[1];
            }
            out[i] = g;
        }
    }

    pub fn values(&self, x: [f64; 2]) -> Vec<f64> {
        let mut v = vec![0.0; self.len()];
        self.values_into(x, &mut v);
        v
    }

    pub fn grads(&self, x: [f64; 2]) -> Vec<[f64; 2]> {
        let mut g = vec![[0.0; 2]; self.len()];
        self.grads_into(x, &mut g);
        g
    }

    /// Evaluate `Σ c_i φ_i(x)` for a coefficient vector of length `≤ len()`.
    pub fn eval(&self, coeffs: &[f64], x: [f64; 2]) -> f64 {
        let v = self.values(x);
        coeffs.iter().zip(&v).map(|(c, v)| c * v).sum()
    }

    /// Reference gradient of `Σ c_i φ_i` at `x`.
    pub fn eval_grad(&self, coeffs: &[f64], x: [f64; 2]) -> [f64; 2] {
        let g = self.grads(x);
        let mut out = [0.0; 2];
        for (c, g) in coeffs.iter().zip(&g) {
            out[0] += c * g[0];
            out[1] += c * g[1];
        }
        out
    }
}

/// Values and reference gradients of a basis at the points of a rule,
/// stored point-major: entry `(q, i)` belongs to point `q`, member `i`.
#[derive(Debug, Clone)]
pub struct Tabulation {
    pub values: DMatrix<f64>,
    pub dx: DMatrix<f64>,
    pub dy: DMatrix<f64>,
}

impl OrthoBasis {
    pub fn tabulate(&self, points: impl Iterator<Item = [f64; 2]>) -> Tabulation {
        let pts: Vec<[f64; 2]> = points.collect();
        let n = self.len();
        let mut values = DMatrix::zeros(pts.len(), n);
        let mut dx = DMatrix::zeros(pts.len(), n);
        let mut dy = DMatrix::zeros(pts.len(), n);
        let mut v = vec![0.0; n];
        let mut g = vec![[0.0; 2]; n];
        for (q, &x) in pts.iter().enumerate() {
            self.values_into(x, &mut v);
            self.grads_into(x, &mut g);
            for i in 0..n {
                values[(q, i)] = v[i];
                dx[(q, i)] = g[i][0];
                dy[(q, i)] = g[i][1];
            }
        }
        Tabulation { values, dx, dy }
    }
}

/// Value of the constant member `φ_0 = √2` (unit `L²(K̂)` norm).
pub const CONSTANT_MEMBER: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisVariant {
    Full,
    ZeroMean,
}

/// Reference scalar basis of degree `k`, either the full space or its
/// zero-mean subspace (the full basis without its constant member).
#[derive(Debug, Clone)]
pub struct RefScalarBasis {
    pub variant: BasisVariant,
    ortho: Arc<OrthoBasis>,
}

impl RefScalarBasis {
    pub fn degree(&self) -> usize {
        self.ortho.degree
    }

    fn offset(&self) -> usize {
        match self.variant {
            BasisVariant::Full => 0,
            BasisVariant::ZeroMean => 1,
        }
    }

    pub fn len(&self) -> usize {
        self.ortho.len() - self.offset()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ortho(&self) -> &OrthoBasis {
        &self.ortho
    }

    pub fn values(&self, x: [f64; 2]) -> Vec<f64> {
        self.ortho.values(x)[self.offset()..].to_vec()
    }

    pub fn grads(&self, x: [f64; 2]) -> Vec<[f64; 2]> {
        self.ortho.grads(x)[self.offset()..].to_vec()
    }
}

pub fn make_basis(k: usize) -> RefScalarBasis {
    RefScalarBasis {
        variant: BasisVariant::Full,
        ortho: Arc::new(OrthoBasis::new(k)),
    }
}

pub fn make_zero_mean_basis(k: usize) -> Result<RefScalarBasis> {
    if k == 0 {
        return Err(Error::InvalidDegree(
            "the zero-mean space of degree 0 is trivial".into(),
        ));
    }
    Ok(RefScalarBasis {
        variant: BasisVariant::ZeroMean,
        ortho: Arc::new(OrthoBasis::new(k)),
    })
}

/// Coefficients of the `L²(K)` projection of `f` onto degree-`r`
/// polynomials, in the mapped orthonormal basis of `basis` (whose degree
/// must be at least `r`). `exactness` selects the quadrature rule.
pub fn project_l2<F>(f: F, map: &AffineMap, basis: &OrthoBasis, r: usize, exactness: usize) -> Result<Vec<f64>>
where
    F: Fn([f64; 2]) -> f64,
{
    if r > basis.degree() {
        return Err(Error::InvalidDegree(format!(
            "projection degree {r} exceeds basis degree {}",
            basis.degree()
        )));
    }
    let n = dim(r);
    let rule = quad_rule(exactness.max(2 * r), RuleVariant::Triangle)?;
    let mut c = vec![0.0; n];
    let mut vals = vec![0.0; basis.len()];
    for (xh, w) in rule.iter() {
        let fx = f(map.to_physical(xh));
        basis.values_into(xh, &mut vals);
        for i in 0..n {
            c[i] += w * fx * vals[i];
        }
    }
    Ok(c)
}
