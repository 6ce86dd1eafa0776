//! Brezzi-Douglas-Marini flux spaces and discontinuous scalar spaces.
//!
//! Reference shape functions are expressed in the "prime" basis
//! `{e_c φ_k}` with `φ_k` the orthonormal scalar basis of degree `p`. The
//! degrees of freedom are, in local order:
//!
//! * for each local edge `e` (counter-clockwise from `v[e+1]` to `v[e+2]`)
//!   the moments `∫₀¹ q·ñ_e L_k(t) dt`, `k = 0..=p`, where `ñ_e` is the
//!   outward normal scaled by the edge length and `L_k` the Legendre
//!   polynomial on `[0, 1]`;
//! * `∫ q·∇ψ` for the zero-mean orthonormal scalars of degree `p - 1`;
//! * `∫ q·curl(b w)` for the scalars `w` of degree `p - 2`, with `b` the
//!   cubic bubble.
//!
//! The edge moments are invariant under the contravariant Piola map, so a
//! physical shape function and the global basis function of an edge agree up
//! to the sign `σ^{k+1}`, where `σ = ±1` compares the local counter-clockwise
//! direction with the global low-to-high vertex direction.

use std::sync::Arc;

use faer::sparse::{SparseColMat, Triplet};
use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::basis::{dim, OrthoBasis};
use crate::error::{Error, Result};
use crate::geometry::AffineMap;
use crate::mesh::TriMesh;
use crate::quadrature::{quad_rule, shifted_legendre, DataQuadrature, RuleVariant};

const REF_VERTICES: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];

/// Counter-clockwise endpoints and scaled outward normal of reference edge `e`.
pub fn reference_edge(e: usize) -> ([f64; 2], [f64; 2], [f64; 2]) {
    let a = REF_VERTICES[(e + 1) % 3];
    let b = REF_VERTICES[(e + 2) % 3];
    (a, b, [b[1] - a[1], -(b[0] - a[0])])
}

pub fn edge_point(a: [f64; 2], b: [f64; 2], t: f64) -> [f64; 2] {
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
}

/// Reference element data shared by every cell of a [`BdmSpace`].
#[derive(Debug)]
pub struct BdmReference {
    p: usize,
    prime: Arc<OrthoBasis>,
    /// Column `j` holds shape function `j` in prime coordinates; row
    /// `c * m + k` is component `c` of member `k`, `m = dim(p)`.
    shape: DMatrix<f64>,
    /// `∫ div φ̂_j ψ̂_i` for the degree `p - 1` orthonormal scalars.
    div: DMatrix<f64>,
    /// `mass[c][d] = ∫ φ̂_{·,c} φ̂_{·,d}` (component products).
    mass: [[DMatrix<f64>; 2]; 2],
}

impl BdmReference {
    pub fn new(p: usize) -> Result<Self> {
        if !(1..=8).contains(&p) {
            return Err(Error::InvalidDegree(format!("BDM degree must be in 1..=8, got {p}")));
        }
        let prime = Arc::new(OrthoBasis::new(p));
        let m = prime.len();
        let n = 2 * m;
        let mut d = DMatrix::zeros(n, n);
        for c in 0..2 {
            for k in 0..m {
                let col = dof_functionals(p, &prime, 2 * p, |x| {
                    let v = prime.values(x)[k];
                    if c == 0 {
                        [v, 0.0]
                    } else {
                        [0.0, v]
                    }
                })?;
                d.set_column(c * m + k, &nalgebra::DVector::from_vec(col));
            }
        }
        let shape = d
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Singular("BDM degree-of-freedom matrix".into()))?;
        let xs = shape.rows(0, m).into_owned();
        let ys = shape.rows(m, m).into_owned();
        let mass = [
            [xs.transpose() * &xs, xs.transpose() * &ys],
            [ys.transpose() * &xs, ys.transpose() * &ys],
        ];
        let nd = dim(p - 1);
        let rule = quad_rule(2 * p, RuleVariant::Triangle)?;
        let mut div = DMatrix::zeros(nd, n);
        for (x, w) in rule.iter() {
            let v = prime.values(x);
            let g = prime.grads(x);
            for j in 0..n {
                let dv: f64 = (0..m).map(|k| shape[(k, j)] * g[k][0] + shape[(m + k, j)] * g[k][1]).sum();
                for i in 0..nd {
                    div[(i, j)] += w * dv * v[i];
                }
            }
        }
        Ok(BdmReference {
            p,
            prime,
            shape,
            div,
            mass,
        })
    }

    pub fn degree(&self) -> usize {
        self.p
    }

    pub fn local_dim(&self) -> usize {
        (self.p + 1) * (self.p + 2)
    }

    pub fn edge_dofs(&self) -> usize {
        self.p + 1
    }

    pub fn interior_dofs(&self) -> usize {
        self.local_dim() - 3 * (self.p + 1)
    }

    pub fn prime(&self) -> &OrthoBasis {
        &self.prime
    }

    /// Shape-function coefficients in prime coordinates.
    pub fn shape_coeffs(&self) -> &DMatrix<f64> {
        &self.shape
    }

    /// Element-independent divergence block `∫_K div φ_j ψ_i`.
    pub fn div_block(&self) -> &DMatrix<f64> {
        &self.div
    }

    /// Prime coordinates of `Σ c_j φ̂_j`.
    pub fn to_prime(&self, local: &[f64]) -> Vec<f64> {
        let m = self.prime.len();
        let mut a = vec![0.0; 2 * m];
        for (j, &c) in local.iter().enumerate() {
            if c != 0.0 {
                for (r, ar) in a.iter_mut().enumerate() {
                    *ar += self.shape[(r, j)] * c;
                }
            }
        }
        a
    }

    /// Reference shape-function values at `x`.
    pub fn values(&self, x: [f64; 2]) -> Vec<[f64; 2]> {
        let m = self.prime.len();
        let v = self.prime.values(x);
        (0..self.local_dim())
            .map(|j| {
                let mut out = [0.0; 2];
                for k in 0..m {
                    out[0] += self.shape[(k, j)] * v[k];
                    out[1] += self.shape[(m + k, j)] * v[k];
                }
                out
            })
            .collect()
    }

    /// Reference divergences of the shape functions at `x`.
    pub fn divergences(&self, x: [f64; 2]) -> Vec<f64> {
        let m = self.prime.len();
        let g = self.prime.grads(x);
        (0..self.local_dim())
            .map(|j| (0..m).map(|k| self.shape[(k, j)] * g[k][0] + self.shape[(m + k, j)] * g[k][1]).sum())
            .collect()
    }

    /// Local mass matrix `∫_K φ_i·φ_j` of the Piola-mapped shape functions.
    pub fn local_mass(&self, map: &AffineMap) -> DMatrix<f64> {
        let g = map.piola_metric();
        &self.mass[0][0] * g[0][0] + &self.mass[0][1] * g[0][1] + &self.mass[1][0] * g[1][0] + &self.mass[1][1] * g[1][1]
    }

    /// Local advection block `∫_K (β·φ_j) ψ_i` against the degree `p - 1`
    /// scalars.
    pub fn local_advection(&self, map: &AffineMap, beta: [f64; 2]) -> DMatrix<f64> {
        // J^T β, paired with the reference field; the det J factors cancel.
        let j = &map.jac;
        let b = [j[0][0] * beta[0] + j[1][0] * beta[1], j[0][1] * beta[0] + j[1][1] * beta[1]];
        let m = self.prime.len();
        let nd = dim(self.p - 1);
        let mut c = DMatrix::zeros(nd, self.local_dim());
        for jj in 0..self.local_dim() {
            for i in 0..nd {
                c[(i, jj)] = b[0] * self.shape[(i, jj)] + b[1] * self.shape[(m + i, jj)];
            }
        }
        c
    }

    /// Apply the reference degrees of freedom to a reference field.
    pub fn dofs(&self, q: impl Fn([f64; 2]) -> [f64; 2], exactness: usize) -> Result<Vec<f64>> {
        dof_functionals(self.p, &self.prime, exactness, q)
    }
}

fn dof_functionals(p: usize, prime: &OrthoBasis, exactness: usize, q: impl Fn([f64; 2]) -> [f64; 2]) -> Result<Vec<f64>> {
    let n = (p + 1) * (p + 2);
    let mut out = Vec::with_capacity(n);
    let edge = quad_rule(exactness.max(2 * p), RuleVariant::Edge)?;
    for e in 0..3 {
        let (a, b, nn) = reference_edge(e);
        for k in 0..=p {
            let mut s = 0.0;
            for (i, &w) in edge.weights.iter().enumerate() {
                let t = edge.t(i);
                let v = q(edge_point(a, b, t));
                s += w * (v[0] * nn[0] + v[1] * nn[1]) * shifted_legendre(k, t);
            }
            out.push(s);
        }
    }
    let tri = quad_rule(exactness.max(2 * p), RuleVariant::Triangle)?;
    let ng = dim(p - 1);
    let nc = if p >= 2 { dim(p - 2) } else { 0 };
    let mut acc = vec![0.0; ng - 1 + nc];
    for (x, w) in tri.iter() {
        let v = q(x);
        let g = prime.grads(x);
        for i in 1..ng {
            acc[i - 1] += w * (v[0] * g[i][0] + v[1] * g[i][1]);
        }
        if nc > 0 {
            let bub = (1.0 - x[0] - x[1]) * x[0] * x[1];
            let db = [
                (1.0 - 2.0 * x[0] - x[1]) * x[1],
                (1.0 - x[0] - 2.0 * x[1]) * x[0],
            ];
            let vals = prime.values(x);
            for j in 0..nc {
                // curl(b w) = (∂y(bw), -∂x(bw))
                let cx = db[1] * vals[j] + bub * g[j][1];
                let cy = -(db[0] * vals[j] + bub * g[j][0]);
                acc[ng - 1 + j] += w * (v[0] * cx + v[1] * cy);
            }
        }
    }
    out.extend(acc);
    debug_assert_eq!(out.len(), n);
    Ok(out)
}

/// Discontinuous scalar space of degree `k` on the mapped orthonormal basis.
/// Its mass matrix on `K` is `|det J_K| · I`.
#[derive(Debug, Clone)]
pub struct DgSpace {
    degree: usize,
    n_elements: usize,
    basis: Arc<OrthoBasis>,
}

impl DgSpace {
    pub fn new(mesh: &TriMesh, degree: usize) -> Self {
        DgSpace {
            degree,
            n_elements: mesh.num_triangles(),
            basis: Arc::new(OrthoBasis::new(degree)),
        }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn local_dim(&self) -> usize {
        dim(self.degree)
    }

    pub fn dim(&self) -> usize {
        self.local_dim() * self.n_elements
    }

    pub fn offset(&self, t: usize) -> usize {
        t * self.local_dim()
    }

    pub fn basis(&self) -> &OrthoBasis {
        &self.basis
    }

    pub fn local<'a>(&self, coeffs: &'a [f64], t: usize) -> &'a [f64] {
        &coeffs[self.offset(t)..self.offset(t) + self.local_dim()]
    }

    /// Value on element `t` at reference point `x`.
    pub fn eval(&self, coeffs: &[f64], t: usize, x: [f64; 2]) -> f64 {
        self.basis.eval(self.local(coeffs, t), x)
    }

    /// `(f, ψ_i)` for every basis function.
    pub fn load_vector(&self, mesh: &TriMesh, f: &(dyn Fn([f64; 2]) -> f64 + Sync), rules: &DataQuadrature) -> Vec<f64> {
        let n = self.local_dim();
        let blocks: Vec<Vec<f64>> = (0..mesh.num_triangles())
            .into_par_iter()
            .map(|t| {
                let map = mesh.map(t);
                let rule = rules.triangle(&mesh.corners(t));
                let mut b = vec![0.0; n];
                let mut v = vec![0.0; self.basis.len()];
                for (x, w) in rule.iter() {
                    let fx = f(map.to_physical(x)) * w * map.det;
                    self.basis.values_into(x, &mut v);
                    for i in 0..n {
                        b[i] += fx * v[i];
                    }
                }
                b
            })
            .collect();
        blocks.concat()
    }
}

/// Global BDM space of degree `p` on a mesh.
#[derive(Debug, Clone)]
pub struct BdmSpace {
    reference: Arc<BdmReference>,
    n_elements: usize,
    n_edges: usize,
    /// Per element: global index and sign of each local shape function.
    dofs: Vec<usize>,
    signs: Vec<f64>,
}

impl BdmSpace {
    pub fn new(mesh: &TriMesh, p: usize) -> Result<Self> {
        Self::with_flipped_edges(mesh, p, &[])
    }

    /// Same space with the global direction of the listed edges reversed,
    /// which negates some global basis functions.
    pub fn with_flipped_edges(mesh: &TriMesh, p: usize, flipped: &[usize]) -> Result<Self> {
        Self::with_reference(mesh, Arc::new(BdmReference::new(p)?), flipped)
    }

    pub fn with_reference(mesh: &TriMesh, reference: Arc<BdmReference>, flipped: &[usize]) -> Result<Self> {
        let p = reference.degree();
        let nl = reference.local_dim();
        let ne = p + 1;
        let ni = reference.interior_dofs();
        let n_edges = mesh.num_edges();
        let mut flip = vec![false; n_edges];
        for &e in flipped {
            *flip
                .get_mut(e)
                .ok_or_else(|| Error::InvalidParameter(format!("edge {e} out of range")))? = true;
        }
        let mut dofs = Vec::with_capacity(nl * mesh.num_triangles());
        let mut signs = Vec::with_capacity(nl * mesh.num_triangles());
        for t in 0..mesh.num_triangles() {
            let edges = mesh.triangle_edges(t);
            for (le, &ge) in edges.iter().enumerate() {
                let mut sigma = mesh.edge_orientation(t, le);
                if flip[ge] {
                    sigma = -sigma;
                }
                for k in 0..ne {
                    dofs.push(ge * ne + k);
                    signs.push(if k % 2 == 0 { sigma } else { 1.0 });
                }
            }
            for j in 0..ni {
                dofs.push(n_edges * ne + t * ni + j);
                signs.push(1.0);
            }
        }
        Ok(BdmSpace {
            reference,
            n_elements: mesh.num_triangles(),
            n_edges,
            dofs,
            signs,
        })
    }

    pub fn reference(&self) -> &BdmReference {
        &self.reference
    }

    pub fn shared_reference(&self) -> Arc<BdmReference> {
        self.reference.clone()
    }

    pub fn degree(&self) -> usize {
        self.reference.degree()
    }

    pub fn local_dim(&self) -> usize {
        self.reference.local_dim()
    }

    pub fn dim(&self) -> usize {
        self.n_edges * self.reference.edge_dofs() + self.n_elements * self.reference.interior_dofs()
    }

    pub fn num_elements(&self) -> usize {
        self.n_elements
    }

    /// Global indices and signs of the local shape functions of element `t`.
    pub fn local_dofs(&self, t: usize) -> (&[usize], &[f64]) {
        let n = self.local_dim();
        (&self.dofs[t * n..(t + 1) * n], &self.signs[t * n..(t + 1) * n])
    }

    /// Global index of moment `k` on edge `e`.
    pub fn edge_dof(&self, e: usize, k: usize) -> usize {
        e * self.reference.edge_dofs() + k
    }

    /// Local shape-function coefficients of a global vector on element `t`.
    pub fn local_coeffs(&self, coeffs: &[f64], t: usize) -> Vec<f64> {
        let (d, s) = self.local_dofs(t);
        d.iter().zip(s).map(|(&g, &s)| s * coeffs[g]).collect()
    }

    fn check(&self, coeffs: &[f64], t: usize) -> Result<()> {
        if coeffs.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "flux coefficients have length {}, space dimension is {}",
                coeffs.len(),
                self.dim()
            )));
        }
        if t >= self.n_elements {
            return Err(Error::ElementOutOfRange(t, self.n_elements));
        }
        Ok(())
    }

    /// Values of the flux on element `t` at the given reference points.
    pub fn eval_flux(&self, mesh: &TriMesh, coeffs: &[f64], t: usize, points: &[[f64; 2]]) -> Result<Vec<[f64; 2]>> {
        self.check(coeffs, t)?;
        let map = mesh.map(t);
        let a = self.reference.to_prime(&self.local_coeffs(coeffs, t));
        let m = self.reference.prime.len();
        Ok(points
            .iter()
            .map(|&x| {
                let v = self.reference.prime.values(x);
                let qh = [
                    (0..m).map(|k| a[k] * v[k]).sum(),
                    (0..m).map(|k| a[m + k] * v[k]).sum(),
                ];
                map.piola(qh)
            })
            .collect())
    }

    /// Divergence of the flux on element `t` at reference points.
    pub fn eval_div(&self, mesh: &TriMesh, coeffs: &[f64], t: usize, points: &[[f64; 2]]) -> Result<Vec<f64>> {
        self.check(coeffs, t)?;
        let det = mesh.map(t).det;
        let a = self.reference.to_prime(&self.local_coeffs(coeffs, t));
        let m = self.reference.prime.len();
        Ok(points
            .iter()
            .map(|&x| {
                let g = self.reference.prime.grads(x);
                (0..m).map(|k| a[k] * g[k][0] + a[m + k] * g[k][1]).sum::<f64>() / det
            })
            .collect())
    }

    /// Canonical interpolant of a physical vector field.
    pub fn interpolate(&self, mesh: &TriMesh, q: &(dyn Fn([f64; 2]) -> [f64; 2] + Sync), exactness: usize) -> Result<Vec<f64>> {
        let locals: Vec<Vec<f64>> = (0..self.n_elements)
            .into_par_iter()
            .map(|t| {
                let map = mesh.map(t);
                self.reference.dofs(|x| map.piola_inverse(q(map.to_physical(x))), exactness)
            })
            .collect::<Result<_>>()?;
        let mut out = vec![0.0; self.dim()];
        for (t, loc) in locals.iter().enumerate() {
            let (d, s) = self.local_dofs(t);
            for j in 0..loc.len() {
                out[d[j]] = s[j] * loc[j];
            }
        }
        Ok(out)
    }

    fn scatter(&self, blocks: Vec<DMatrix<f64>>, row_of: impl Fn(usize, usize) -> Option<usize>, rows: usize) -> Result<SparseColMat<usize, f64>> {
        let mut trip = Vec::new();
        for (t, blk) in blocks.iter().enumerate() {
            let (d, s) = self.local_dofs(t);
            for j in 0..blk.ncols() {
                for i in 0..blk.nrows() {
                    let v = blk[(i, j)];
                    if v != 0.0 {
                        if let Some(r) = row_of(t, i) {
                            trip.push(Triplet::new(r, d[j], s[j] * v));
                        }
                    }
                }
            }
        }
        SparseColMat::try_new_from_triplets(rows, self.dim(), &trip)
            .map_err(|e| Error::DimensionMismatch(format!("sparse assembly failed: {e:?}")))
    }

    /// Global mass matrix `(φ_j, φ_i)_Ω`.
    pub fn mass_matrix(&self, mesh: &TriMesh) -> Result<SparseColMat<usize, f64>> {
        let blocks: Vec<DMatrix<f64>> = (0..self.n_elements)
            .into_par_iter()
            .map(|t| self.reference.local_mass(&mesh.map(t)))
            .collect();
        let mut trip = Vec::new();
        for (t, blk) in blocks.iter().enumerate() {
            let (d, s) = self.local_dofs(t);
            for j in 0..blk.ncols() {
                for i in 0..blk.nrows() {
                    trip.push(Triplet::new(d[i], d[j], s[i] * s[j] * blk[(i, j)]));
                }
            }
        }
        SparseColMat::try_new_from_triplets(self.dim(), self.dim(), &trip)
            .map_err(|e| Error::DimensionMismatch(format!("sparse assembly failed: {e:?}")))
    }

    fn check_target(&self, target: &DgSpace) -> Result<()> {
        if target.degree() + 1 != self.degree() {
            return Err(Error::InvalidDegree(format!(
                "target scalar space has degree {}, expected {}",
                target.degree(),
                self.degree() - 1
            )));
        }
        Ok(())
    }

    /// `B[i, j] = (div φ_j, ψ_i)_Ω` for the degree `p - 1` scalar space.
    pub fn divergence_matrix(&self, target: &DgSpace) -> Result<SparseColMat<usize, f64>> {
        self.check_target(target)?;
        let nd = target.local_dim();
        let blocks = vec![self.reference.div.clone(); self.n_elements];
        self.scatter(blocks, |t, i| Some(t * nd + i), target.dim())
    }

    /// `C[i, j] = (β·φ_j, ψ_i)_Ω` for a constant `β`.
    pub fn advection_matrix(&self, mesh: &TriMesh, target: &DgSpace, beta: [f64; 2]) -> Result<SparseColMat<usize, f64>> {
        self.check_target(target)?;
        let nd = target.local_dim();
        let blocks = (0..self.n_elements)
            .into_par_iter()
            .map(|t| self.reference.local_advection(&mesh.map(t), beta))
            .collect();
        self.scatter(blocks, |t, i| Some(t * nd + i), target.dim())
    }

    /// Load vector `-∮_{∂Ω} u_D φ_j·n`.
    pub fn interpolate_boundary_term(&self, mesh: &TriMesh, u_d: &(dyn Fn([f64; 2]) -> f64 + Sync), rules: &DataQuadrature) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        let ne = self.reference.edge_dofs();
        for e in mesh.boundary_edges() {
            let (t, le) = mesh.edges()[e].plus;
            let [a, b] = mesh.local_edge_endpoints(t, le);
            let (ra, rb, nn) = reference_edge(le);
            let rule = rules.edge(a, b);
            let vals: Vec<Vec<[f64; 2]>> = rule
                .weights
                .iter()
                .enumerate()
                .map(|(i, _)| self.reference.values(edge_point(ra, rb, rule.t(i))))
                .collect();
            let (d, s) = self.local_dofs(t);
            for k in 0..ne {
                let j = le * ne + k;
                let mut acc = 0.0;
                for (i, &w) in rule.weights.iter().enumerate() {
                    let x = edge_point(a, b, rule.t(i));
                    let phi = vals[i][j];
                    acc += w * u_d(x) * (phi[0] * nn[0] + phi[1] * nn[1]);
                }
                out[d[j]] -= s[j] * acc;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_initial_mesh, DomainSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense(a: &SparseColMat<usize, f64>) -> DMatrix<f64> {
        let d = a.to_dense();
        DMatrix::from_fn(d.nrows(), d.ncols(), |i, j| d[(i, j)])
    }

    fn test_mesh() -> TriMesh {
        build_initial_mesh(&DomainSpec::l_shape(), 24).unwrap().refine(&[0, 3, 7, 11])
    }

    #[test]
    fn local_dimensions() {
        for (p, n) in [(1, 6), (2, 12), (3, 20)] {
            assert_eq!(BdmReference::new(p).unwrap().local_dim(), n);
        }
        assert!(BdmReference::new(0).is_err());
    }

    #[test]
    fn shape_functions_are_dual_to_dofs() {
        for p in 1..=4 {
            let r = BdmReference::new(p).unwrap();
            for j in 0..r.local_dim() {
                let d = r.dofs(|x| r.values(x)[j], 2 * p).unwrap();
                for (i, v) in d.iter().enumerate() {
                    let e = if i == j { 1.0 } else { 0.0 };
                    assert!((v - e).abs() < 1e-11, "p={p} dof {i} of shape {j}: {v}");
                }
            }
        }
    }

    #[test]
    fn edge_traces_are_scaled_legendre() {
        let p = 3;
        let r = BdmReference::new(p).unwrap();
        for e in 0..3 {
            let (a, b, nn) = reference_edge(e);
            for t in [0.1, 0.37, 0.8] {
                let v = r.values(edge_point(a, b, t));
                for (j, phi) in v.iter().enumerate() {
                    let tr = phi[0] * nn[0] + phi[1] * nn[1];
                    let expect = if j / (p + 1) == e && j < 3 * (p + 1) {
                        let k = j % (p + 1);
                        (2 * k + 1) as f64 * shifted_legendre(k, t)
                    } else {
                        0.0
                    };
                    assert!((tr - expect).abs() < 1e-10, "edge {e} shape {j}");
                }
            }
        }
    }

    #[test]
    fn divergence_has_degree_p_minus_one() {
        // Project div onto degree p-1 and compare pointwise.
        for p in 1..=3 {
            let r = BdmReference::new(p).unwrap();
            let low = OrthoBasis::new(p - 1);
            for j in 0..r.local_dim() {
                let c: Vec<f64> = (0..low.len()).map(|i| r.div[(i, j)]).collect();
                for x in [[0.2, 0.3], [0.7, 0.1], [0.05, 0.9]] {
                    let d = r.divergences(x)[j];
                    assert!((d - low.eval(&c, x)).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn normal_trace_is_continuous() {
        let mesh = test_mesh();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for p in 1..=3 {
            let space = BdmSpace::new(&mesh, p).unwrap();
            let c: Vec<f64> = (0..space.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            for e in 0..mesh.num_edges() {
                let Ok(pair) = mesh.jump_trace_pairs(e) else { continue };
                let n = mesh.edge_normal(e);
                let [a, b] = mesh.edge_endpoints(e);
                for s in [0.13, 0.5, 0.77] {
                    let x = edge_point(a, b, s);
                    let qp = space.eval_flux(&mesh, &c, pair.plus, &[mesh.map(pair.plus).to_reference(x)]).unwrap()[0];
                    let qm = space.eval_flux(&mesh, &c, pair.minus, &[mesh.map(pair.minus).to_reference(x)]).unwrap()[0];
                    let jump = (qp[0] - qm[0]) * n[0] + (qp[1] - qm[1]) * n[1];
                    assert!(jump.abs() < 1e-11, "p={p} edge {e}: {jump}");
                }
            }
        }
    }

    #[test]
    fn interpolation_reproduces_polynomials() {
        let mesh = test_mesh();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for p in 1..=3 {
            let space = BdmSpace::new(&mesh, p).unwrap();
            let b = OrthoBasis::new(p);
            let cx: Vec<f64> = (0..b.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let cy: Vec<f64> = (0..b.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let q = |x: [f64; 2]| [b.eval(&cx, x), b.eval(&cy, x)];
            let c = space.interpolate(&mesh, &q, 2 * p + 2).unwrap();
            for t in 0..mesh.num_triangles() {
                let pts = [[0.0, 0.0], [0.3, 0.3], [1.0, 0.0], [0.1, 0.8]];
                let vals = space.eval_flux(&mesh, &c, t, &pts).unwrap();
                let map = mesh.map(t);
                for (x, v) in pts.iter().zip(&vals) {
                    let e = q(map.to_physical(*x));
                    assert!((v[0] - e[0]).abs() < 1e-10 && (v[1] - e[1]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn constants_and_zero() {
        let mesh = build_initial_mesh(&DomainSpec::unit_square(), 2).unwrap();
        let space = BdmSpace::new(&mesh, 1).unwrap();
        let c = space.interpolate(&mesh, &|_| [1.0, 0.0], 4).unwrap();
        let zero = vec![0.0; space.dim()];
        for t in 0..2 {
            for v in space.eval_flux(&mesh, &c, t, &[[0.2, 0.2], [0.0, 1.0]]).unwrap() {
                assert!((v[0] - 1.0).abs() < 1e-14 && v[1].abs() < 1e-14);
            }
            for v in space.eval_flux(&mesh, &zero, t, &[[0.2, 0.2]]).unwrap() {
                assert_eq!(v, [0.0, 0.0]);
            }
        }
        assert!(matches!(space.eval_flux(&mesh, &zero, 2, &[[0.0, 0.0]]), Err(Error::ElementOutOfRange(2, 2))));
    }

    #[test]
    fn commuting_diagram() {
        // div Π q = Q^{p-1} div q for a polynomial q of degree p + 1.
        let mesh = test_mesh();
        for p in 1..=3 {
            let space = BdmSpace::new(&mesh, p).unwrap();
            let q = |x: [f64; 2]| [x[0].powi(p as i32 + 1) - x[1], x[0] * x[1].powi(p as i32)];
            let divq = |x: [f64; 2]| (p + 1) as f64 * x[0].powi(p as i32) + p as f64 * x[0] * x[1].powi(p as i32 - 1);
            let c = space.interpolate(&mesh, &q, 2 * p + 4).unwrap();
            for t in 0..mesh.num_triangles() {
                let map = mesh.map(t);
                let proj = crate::basis::project_l2(divq, &map, &OrthoBasis::new(p - 1), p - 1, 2 * p + 2).unwrap();
                let low = OrthoBasis::new(p - 1);
                for x in [[0.1, 0.2], [0.6, 0.3]] {
                    let d = space.eval_div(&mesh, &c, t, &[x]).unwrap()[0];
                    assert!((d - low.eval(&proj, x)).abs() < 1e-10, "p={p}");
                }
            }
        }
    }

    #[test]
    fn divergence_matrix_matches_flux_oracle() {
        let mesh = test_mesh();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for p in 1..=3 {
            let space = BdmSpace::new(&mesh, p).unwrap();
            let dg = DgSpace::new(&mesh, p - 1);
            let b = dense(&space.divergence_matrix(&dg).unwrap());
            let c: Vec<f64> = (0..space.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let bc = &b * nalgebra::DVector::from_vec(c.clone());
            // (div q, 1)_Ω: the constant is ψ_0 / √2 on every element.
            let total: f64 = (0..mesh.num_triangles())
                .map(|t| bc[dg.offset(t)] / crate::basis::CONSTANT_MEMBER)
                .sum();
            let rule = quad_rule(2 * p, RuleVariant::Edge).unwrap();
            let mut flux = 0.0;
            for e in mesh.boundary_edges() {
                let (t, le) = mesh.edges()[e].plus;
                let [a, bb] = mesh.local_edge_endpoints(t, le);
                let n = mesh.outward_normal(t, le);
                let map = mesh.map(t);
                for (i, &w) in rule.weights.iter().enumerate() {
                    let x = edge_point(a, bb, rule.t(i));
                    let v = space.eval_flux(&mesh, &c, t, &[map.to_reference(x)]).unwrap()[0];
                    flux += w * mesh.edge_length(e) * (v[0] * n[0] + v[1] * n[1]);
                }
            }
            assert!((total - flux).abs() < 1e-11, "p={p}: {total} vs {flux}");
        }
        let space = BdmSpace::new(&mesh, 2).unwrap();
        assert!(space.divergence_matrix(&DgSpace::new(&mesh, 2)).is_err());
    }

    #[test]
    fn divergence_free_shape_gives_zero_column() {
        // On the reference element the constant field has zero divergence.
        let mesh = TriMesh::from_parts(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]]).unwrap();
        let space = BdmSpace::new(&mesh, 1).unwrap();
        let dg = DgSpace::new(&mesh, 0);
        let b = dense(&space.divergence_matrix(&dg).unwrap());
        let c = space.interpolate(&mesh, &|_| [0.3, -0.7], 4).unwrap();
        let r = &b * nalgebra::DVector::from_vec(c);
        assert!(r.norm() < 1e-14);
        // row of v ≡ 1 equals net normal flux per shape function
        for j in 0..space.dim() {
            let net: f64 = (0..3)
                .map(|e| {
                    let (a, bb, nn) = reference_edge(e);
                    let rule = quad_rule(4, RuleVariant::Edge).unwrap();
                    rule.weights
                        .iter()
                        .enumerate()
                        .map(|(i, w)| {
                            let v = space.reference().values(edge_point(a, bb, rule.t(i)))[j];
                            w * (v[0] * nn[0] + v[1] * nn[1])
                        })
                        .sum::<f64>()
                })
                .sum();
            let (d, s) = space.local_dofs(0);
            let col = d.iter().position(|&g| g == j).unwrap();
            assert!((b[(0, j)] / crate::basis::CONSTANT_MEMBER - s[col] * net).abs() < 1e-13);
        }
    }

    #[test]
    fn boundary_term() {
        let mesh = build_initial_mesh(&DomainSpec::unit_square(), 2).unwrap();
        let space = BdmSpace::new(&mesh, 1).unwrap();
        let rules = DataQuadrature::new(10, None).unwrap();
        assert!(space.interpolate_boundary_term(&mesh, &|_| 0.0, &rules).iter().all(|&v| v == 0.0));
        let g = space.interpolate_boundary_term(&mesh, &|_| 1.0, &rules);
        // u_D = 1: the global moment-0 function has unit flux in the global
        // direction, i.e. flux σ through the outward normal; moment 1 has none.
        for e in 0..mesh.num_edges() {
            let edge = &mesh.edges()[e];
            let expected0 = if edge.is_boundary() {
                -mesh.edge_orientation(edge.plus.0, edge.plus.1)
            } else {
                0.0
            };
            assert!((g[space.edge_dof(e, 0)] - expected0).abs() < 1e-14, "edge {e}");
            assert!(g[space.edge_dof(e, 1)].abs() < 1e-14);
        }
    }

    #[test]
    fn flipping_edges_conjugates_matrices() {
        let mesh = test_mesh();
        let p = 2;
        let flips: Vec<usize> = (0..mesh.num_edges()).filter(|e| e % 3 == 0).collect();
        let a = BdmSpace::new(&mesh, p).unwrap();
        let b = BdmSpace::with_flipped_edges(&mesh, p, &flips).unwrap();
        let mut d = vec![1.0; a.dim()];
        for &e in &flips {
            for k in (0..=p).step_by(2) {
                d[a.edge_dof(e, k)] = -1.0;
            }
        }
        let dg = DgSpace::new(&mesh, p - 1);
        let ma = dense(&a.mass_matrix(&mesh).unwrap());
        let mb = dense(&b.mass_matrix(&mesh).unwrap());
        let ba = dense(&a.divergence_matrix(&dg).unwrap());
        let bb = dense(&b.divergence_matrix(&dg).unwrap());
        for i in 0..a.dim() {
            for j in 0..a.dim() {
                assert!((ma[(i, j)] - d[i] * d[j] * mb[(i, j)]).abs() < 1e-13);
            }
            for r in 0..dg.dim() {
                assert!((ba[(r, i)] - d[i] * bb[(r, i)]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn advection_block_matches_componentwise_quadrature() {
        let mesh = TriMesh::from_parts(vec![[0.1, 0.0], [1.3, 0.2], [0.4, 0.9]], vec![[0, 1, 2]]).unwrap();
        let space = BdmSpace::new(&mesh, 2).unwrap();
        let dg = DgSpace::new(&mesh, 1);
        let beta = [2.5, -1.0];
        let c = dense(&space.advection_matrix(&mesh, &dg, beta).unwrap());
        let rule = quad_rule(6, RuleVariant::Triangle).unwrap();
        let map = mesh.map(0);
        for j in 0..space.dim() {
            let mut unit = vec![0.0; space.dim()];
            unit[j] = 1.0;
            let mut integral = [0.0; 2];
            for (x, w) in rule.iter() {
                let v = space.eval_flux(&mesh, &unit, 0, &[x]).unwrap()[0];
                integral[0] += w * map.det * v[0];
                integral[1] += w * map.det * v[1];
            }
            let lhs = c[(0, j)] / crate::basis::CONSTANT_MEMBER;
            let rhs = beta[0] * integral[0] + beta[1] * integral[1];
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
