//! Biorthogonal boundary system for the lowest-order flux space and the
//! associated boundary Fortin operator, plus the scaled trace inequality on
//! the complement of the trace kernel.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::OrthoBasis;
use crate::error::{Error, Result};
use crate::geometry::{dist, AffineMap};
use crate::quadrature::{quad_rule, shifted_legendre, QuadRule, RuleVariant};

/// Reference faces as `(start, end)`: `(s, 0)`, `(1 - s, s)` and `(0, s)`.
pub const REFERENCE_FACES: [([f64; 2], [f64; 2]); 3] = [([0.0, 0.0], [1.0, 0.0]), ([1.0, 0.0], [0.0, 1.0]), ([0.0, 0.0], [0.0, 1.0])];

/// `|∂K̂|` for the unit reference triangle.
pub const REFERENCE_PERIMETER: f64 = 2.0 + std::f64::consts::SQRT_2;

/// Number of boundary functions for the lowest-order flux space.
pub const TRACE_DIM: usize = 6;

fn face_point(k: usize, s: f64) -> [f64; 2] {
    let (a, b) = REFERENCE_FACES[k];
    [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]
}

fn face_length(k: usize) -> f64 {
    let (a, b) = REFERENCE_FACES[k];
    dist(a, b)
}

/// Barycentric coordinates of the start and end vertex of face `k`.
fn face_barycentrics(k: usize, x: [f64; 2]) -> (f64, f64) {
    let l = [1.0 - x[0] - x[1], x[0], x[1]];
    match k {
        0 => (l[0], l[1]),
        1 => (l[1], l[2]),
        _ => (l[0], l[2]),
    }
}

/// Reference normal-trace function `i` (face `i / 2`, Legendre degree
/// `i % 2`) at parameter `s` of its face: `(2m + 1) L_m(s)`, the edge-moment
/// dual basis of the lowest-order flux space.
pub fn trace_function(i: usize, s: f64) -> f64 {
    let m = i % 2;
    (2 * m + 1) as f64 * shifted_legendre(m, s)
}

/// The three cubic functions vanishing on the two faces other than `k`:
/// `λ_a λ_b`, `λ_a² λ_b`, `λ_a λ_b²` with `λ_a`, `λ_b` the barycentrics of the
/// endpoints of face `k`.
pub fn face_cubics(k: usize, x: [f64; 2]) -> [f64; 3] {
    let (la, lb) = face_barycentrics(k, x);
    [la * lb, la * la * lb, la * lb * lb]
}

/// Reference biorthogonal set: `ψ̂_j` stored as coefficients in the
/// orthonormal degree-3 basis.
#[derive(Debug, Clone)]
pub struct BiorthogonalSet {
    /// `A` on face `k`: rows `∫_{F̂_k} φ̂_i φ̂_j` for the two trace functions of
    /// face `k`, last row `∫_{K̂} φ̂_j`.
    pub face_matrices: [Matrix3<f64>; 3],
    /// Combination coefficients of `ψ̂_{2k}`, `ψ̂_{2k+1}` in the face cubics.
    pub combinations: [[Vector3<f64>; 2]; 3],
    pub basis: OrthoBasis,
    pub psi: Vec<DVector<f64>>,
    /// `max |∫_{∂K̂} φ̂_i ψ̂_j - δ_ij|`.
    pub biorthogonality_residual: f64,
    /// `max |∫_{K̂} ψ̂_j|`.
    pub mean_residual: f64,
}

/// Integrate `f(k, s, x)` over the boundary of the reference triangle.
fn reference_boundary_integral(rule: &QuadRule, mut f: impl FnMut(usize, f64, [f64; 2]) -> f64) -> f64 {
    let mut sum = 0.0;
    for k in 0..3 {
        let len = face_length(k);
        for i in 0..rule.len() {
            let s = rule.t(i);
            sum += rule.weights[i] * len * f(k, s, face_point(k, s));
        }
    }
    sum
}

/// Construct the biorthogonal set for the lowest-order flux space.
pub fn build_biorthogonal() -> Result<BiorthogonalSet> {
    let edge = quad_rule(8, RuleVariant::Edge)?;
    let tri = quad_rule(8, RuleVariant::Triangle)?;
    let basis = OrthoBasis::new(3);
    let mut face_matrices = [Matrix3::<f64>::zeros(); 3];
    let mut combinations = [[Vector3::zeros(); 2]; 3];
    let mut psi = Vec::with_capacity(TRACE_DIM);
    for k in 0..3 {
        let a = &mut face_matrices[k];
        let len = face_length(k);
        for q in 0..edge.len() {
            let s = edge.t(q);
            let c = face_cubics(k, face_point(k, s));
            for r in 0..2 {
                for j in 0..3 {
                    a[(r, j)] += edge.weights[q] * len * trace_function(2 * k + r, s) * c[j];
                }
            }
        }
        for (x, w) in tri.iter() {
            let c = face_cubics(k, x);
            for j in 0..3 {
                a[(2, j)] += w * c[j];
            }
        }
        let lu = a.lu();
        if a.determinant().abs() < 1e-14 {
            return Err(Error::Singular(format!("face matrix {k}")));
        }
        for r in 0..2 {
            let rhs = Vector3::from_fn(|i, _| if i == r { 1.0 } else { 0.0 });
            let comb = lu.solve(&rhs).ok_or_else(|| Error::Singular(format!("face matrix {k}")))?;
            // Coefficients in the orthonormal basis by exact L² projection.
            let mut coef = DVector::zeros(basis.len());
            let mut v = vec![0.0; basis.len()];
            for (x, w) in tri.iter() {
                let c = face_cubics(k, x);
                let val = comb[0] * c[0] + comb[1] * c[1] + comb[2] * c[2];
                basis.values_into(x, &mut v);
                for (m, b) in v.iter().enumerate() {
                    coef[m] += w * val * b;
                }
            }
            combinations[k][r] = comb;
            psi.push(coef);
        }
    }
    let mut set = BiorthogonalSet {
        face_matrices,
        combinations,
        basis,
        psi,
        biorthogonality_residual: 0.0,
        mean_residual: 0.0,
    };
    let g = set.reference_gram(&edge);
    set.biorthogonality_residual = (g - DMatrix::identity(TRACE_DIM, TRACE_DIM)).amax();
    // ∫_{K̂} ψ̂ = c_0 ∫_{K̂} √2 = c_0 √2 / 2.
    set.mean_residual = set.psi.iter().map(|c| (0.5 * c[0] * crate::basis::CONSTANT_MEMBER).abs()).fold(0.0, f64::max);
    Ok(set)
}

impl BiorthogonalSet {
    /// The matrix `A` for the face `(s, 0)`.
    pub fn a_matrix(&self) -> Matrix3<f64> {
        self.face_matrices[0]
    }

    /// `ψ̂_j(x̂)`.
    pub fn psi_ref(&self, j: usize, x: [f64; 2]) -> f64 {
        self.basis.eval(self.psi[j].as_slice(), x)
    }

    /// `∫_{∂K̂} φ̂_i ψ̂_j` with `φ̂_i` supported on its own face.
    pub fn reference_gram(&self, rule: &QuadRule) -> DMatrix<f64> {
        DMatrix::from_fn(TRACE_DIM, TRACE_DIM, |i, j| {
            reference_boundary_integral(rule, |k, s, x| if i / 2 == k { trace_function(i, s) * self.psi_ref(j, x) } else { 0.0 })
        })
    }
}

/// `ξ_K = |∂K| / |∂K̂|`.
pub fn xi(corners: &[[f64; 2]; 3]) -> f64 {
    perimeter(corners) / REFERENCE_PERIMETER
}

fn perimeter(c: &[[f64; 2]; 3]) -> f64 {
    dist(c[0], c[1]) + dist(c[1], c[2]) + dist(c[2], c[0])
}

/// The biorthogonal system on a physical triangle: `ψ_j = ψ̂_j ∘ F_K⁻¹` and
/// `φ_i = c_k φ̂_i ∘ F_K⁻¹` on the image of face `k`, with
/// `c_k = ξ_K |F̂_k| / |F_k|` so that `∫_{∂K} φ_i ψ_j = ξ_K δ_ij`.
#[derive(Debug, Clone)]
pub struct ElementSystem<'a> {
    pub set: &'a BiorthogonalSet,
    pub map: AffineMap,
    pub xi: f64,
    /// Physical face lengths.
    pub lengths: [f64; 3],
    pub scale: [f64; 3],
}

impl<'a> ElementSystem<'a> {
    pub fn new(set: &'a BiorthogonalSet, corners: [[f64; 2]; 3]) -> Self {
        let map = AffineMap::from_vertices(corners);
        let xi = xi(&corners);
        let lengths = [0, 1, 2].map(|k| dist(map.to_physical(REFERENCE_FACES[k].0), map.to_physical(REFERENCE_FACES[k].1)));
        let scale = [0, 1, 2].map(|k| xi * face_length(k) / lengths[k]);
        ElementSystem { set, map, xi, lengths, scale }
    }

    /// Physical point at parameter `s` of face `k`.
    pub fn face_point(&self, k: usize, s: f64) -> [f64; 2] {
        self.map.to_physical(face_point(k, s))
    }

    /// `φ_i` at parameter `s` of face `k`.
    pub fn phi(&self, i: usize, k: usize, s: f64) -> f64 {
        if i / 2 == k {
            self.scale[k] * trace_function(i, s)
        } else {
            0.0
        }
    }

    /// `ψ_j` at parameter `s` of face `k`.
    pub fn psi(&self, j: usize, k: usize, s: f64) -> f64 {
        self.set.psi_ref(j, face_point(k, s))
    }

    /// `∫_{∂K} f(k, s)` with the physical arc length.
    pub fn boundary_integral(&self, rule: &QuadRule, mut f: impl FnMut(usize, f64) -> f64) -> f64 {
        let mut sum = 0.0;
        for k in 0..3 {
            for i in 0..rule.len() {
                sum += rule.weights[i] * self.lengths[k] * f(k, rule.t(i));
            }
        }
        sum
    }

    /// `∫_{∂K} φ_i ψ_j`.
    pub fn gram(&self, rule: &QuadRule) -> DMatrix<f64> {
        DMatrix::from_fn(TRACE_DIM, TRACE_DIM, |i, j| self.boundary_integral(rule, |k, s| self.phi(i, k, s) * self.psi(j, k, s)))
    }

    /// Coefficients `α_i(v) = ξ_K⁻¹ ∫_{∂K} φ_i v` of `Π_∂K v = Σ α_j ψ_j`.
    pub fn fortin_apply(&self, rule: &QuadRule, v: impl Fn(usize, f64) -> f64) -> [f64; TRACE_DIM] {
        let vals: Vec<Vec<f64>> = (0..3).map(|k| (0..rule.len()).map(|q| v(k, rule.t(q))).collect()).collect();
        let mut alpha = [0.0; TRACE_DIM];
        for (i, a) in alpha.iter_mut().enumerate() {
            let k = i / 2;
            let s: f64 = (0..rule.len()).map(|q| rule.weights[q] * self.lengths[k] * self.phi(i, k, rule.t(q)) * vals[k][q]).sum();
            *a = s / self.xi;
        }
        alpha
    }

    /// `(Π_∂K v)` at parameter `s` of face `k`.
    pub fn eval_projection(&self, alpha: &[f64; TRACE_DIM], k: usize, s: f64) -> f64 {
        (0..TRACE_DIM).map(|j| alpha[j] * self.psi(j, k, s)).sum()
    }

    /// `‖ψ_j‖_{∂K}`.
    pub fn psi_norm(&self, rule: &QuadRule, j: usize) -> f64 {
        self.boundary_integral(rule, |k, s| self.psi(j, k, s).powi(2)).sqrt()
    }

    /// `sup ‖Π_∂K v‖_{∂K} / ‖v‖_{∂K}` over edgewise polynomials of degree
    /// `degree` (discontinuous at the corners).
    pub fn operator_norm(&self, degree: usize) -> Result<f64> {
        let rule = quad_rule(2 * degree + 8, RuleVariant::Edge)?;
        let nb = degree + 1;
        let n = 3 * nb;
        // Edgewise Legendre basis: index k * nb + m.
        let mut mass = DMatrix::zeros(n, n);
        for k in 0..3 {
            for m in 0..nb {
                mass[(k * nb + m, k * nb + m)] = self.lengths[k] / (2 * m + 1) as f64;
            }
        }
        let g = DMatrix::from_fn(TRACE_DIM, n, |i, c| {
            let (k, m) = (c / nb, c % nb);
            self.boundary_integral(&rule, |kk, s| if kk == k { self.phi(i, k, s) * shifted_legendre(m, s) } else { 0.0 }) / self.xi
        });
        let mpsi = DMatrix::from_fn(TRACE_DIM, TRACE_DIM, |i, j| self.boundary_integral(&rule, |k, s| self.psi(i, k, s) * self.psi(j, k, s)));
        let top = g.transpose() * mpsi * &g;
        max_generalized_eigenvalue(&top, &mass).map(|l| l.max(0.0).sqrt())
    }
}

/// Largest `λ` with `a x = λ b x`, `a` symmetric, `b` symmetric positive
/// definite.
pub fn max_generalized_eigenvalue(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let chol = b.clone().cholesky().ok_or_else(|| Error::Singular("generalized eigenproblem".into()))?;
    let l = chol.l();
    let linv = l.clone().try_inverse().ok_or_else(|| Error::Singular("generalized eigenproblem".into()))?;
    let c = &linv * a * linv.transpose();
    let c = 0.5 * (&c + c.transpose());
    Ok(c.symmetric_eigen().eigenvalues.max())
}

/// Random triangle with all angles at least `min_angle_deg`.
pub fn random_triangle(rng: &mut impl Rng, min_angle_deg: f64) -> [[f64; 2]; 3] {
    loop {
        let scale = 10f64.powf(rng.random_range(-2.0..1.0));
        let c: [[f64; 2]; 3] = std::array::from_fn(|_| [scale * rng.random_range(-1.0..1.0), scale * rng.random_range(-1.0..1.0)]);
        let mut min = f64::INFINITY;
        for i in 0..3 {
            let (a, b, o) = (c[(i + 1) % 3], c[(i + 2) % 3], c[i]);
            let u = [a[0] - o[0], a[1] - o[1]];
            let v = [b[0] - o[0], b[1] - o[1]];
            let cos = (u[0] * v[0] + u[1] * v[1]) / (dist(a, o) * dist(b, o));
            min = min.min(cos.clamp(-1.0, 1.0).acos().to_degrees());
        }
        if min >= min_angle_deg {
            // Counter-clockwise orientation.
            let area = (c[1][0] - c[0][0]) * (c[2][1] - c[0][1]) - (c[2][0] - c[0][0]) * (c[1][1] - c[0][1]);
            return if area > 0.0 { c } else { [c[0], c[2], c[1]] };
        }
    }
}

/// Measurements from a sweep over random shape-regular triangles.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FortinReport {
    pub triangles: usize,
    pub samples_per_triangle: usize,
    pub a_matrix: [[f64; 3]; 3],
    pub a_determinant: f64,
    pub reference_biorthogonality_residual: f64,
    pub reference_mean_residual: f64,
    /// `max |∫_{∂K} φ_i ψ_j - ξ_K δ_ij| / ξ_K` over the sample.
    pub physical_biorthogonality_residual: f64,
    /// `max |∫_{∂K} φ_i (v - Π_∂K v)| / (ξ_K^{1/2} ‖v‖_{∂K})` over random `v`.
    pub moment_residual: f64,
    /// `max ‖Π_∂K v‖ / ‖v‖` over random `v`.
    pub max_sampled_ratio: f64,
    /// Operator norm over edgewise polynomials of the probe degree, max and
    /// min over the sample.
    pub operator_norm_max: f64,
    pub operator_norm_min: f64,
    pub probe_degree: usize,
    /// `max ‖ψ_j‖_{∂K} / ξ_K^{1/2}`.
    pub psi_bound: f64,
}

/// Sweep the boundary Fortin operator over random triangles.
pub fn fortin_sweep(triangles: usize, samples: usize, probe_degree: usize, seed: u64) -> Result<FortinReport> {
    let set = build_biorthogonal()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rule = quad_rule(2 * probe_degree + 8, RuleVariant::Edge)?;
    let a = set.a_matrix();
    let mut report = FortinReport {
        triangles,
        samples_per_triangle: samples,
        a_matrix: std::array::from_fn(|i| std::array::from_fn(|j| a[(i, j)])),
        a_determinant: a.determinant(),
        reference_biorthogonality_residual: set.biorthogonality_residual,
        reference_mean_residual: set.mean_residual,
        physical_biorthogonality_residual: 0.0,
        moment_residual: 0.0,
        max_sampled_ratio: 0.0,
        operator_norm_max: 0.0,
        operator_norm_min: f64::INFINITY,
        probe_degree,
        psi_bound: 0.0,
    };
    for _ in 0..triangles {
        let corners = random_triangle(&mut rng, 15.0);
        let sys = ElementSystem::new(&set, corners);
        let g = sys.gram(&rule) - DMatrix::identity(TRACE_DIM, TRACE_DIM) * sys.xi;
        report.physical_biorthogonality_residual = report.physical_biorthogonality_residual.max(g.amax() / sys.xi);
        for j in 0..TRACE_DIM {
            report.psi_bound = report.psi_bound.max(sys.psi_norm(&rule, j) / sys.xi.sqrt());
        }
        let op = sys.operator_norm(probe_degree)?;
        report.operator_norm_max = report.operator_norm_max.max(op);
        report.operator_norm_min = report.operator_norm_min.min(op);
        for _ in 0..samples {
            let c: Vec<[f64; 3]> = (0..probe_degree + 1).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect();
            let v = |k: usize, s: f64| c.iter().enumerate().map(|(m, ck)| ck[k] * shifted_legendre(m, s)).sum::<f64>();
            let alpha = sys.fortin_apply(&rule, v);
            let vn = sys.boundary_integral(&rule, |k, s| v(k, s).powi(2)).sqrt();
            let pn = sys.boundary_integral(&rule, |k, s| sys.eval_projection(&alpha, k, s).powi(2)).sqrt();
            report.max_sampled_ratio = report.max_sampled_ratio.max(pn / vn);
            for i in 0..TRACE_DIM {
                let r = sys.boundary_integral(&rule, |k, s| sys.phi(i, k, s) * (v(k, s) - sys.eval_projection(&alpha, k, s)));
                report.moment_residual = report.moment_residual.max(r.abs() / (sys.xi.sqrt() * vn));
            }
        }
    }
    Ok(report)
}

/// Constant of the scaled trace inequality on one element.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceConstant {
    /// `max h_K^{1/2} ‖∇v‖_K / ‖v‖_{∂K}` over the complement.
    pub constant: f64,
    /// Dimension of the trace kernel inside the zero-mean space.
    pub kernel_dim: usize,
    pub complement_dim: usize,
}

/// Stiffness and boundary mass of the zero-mean members of the degree-`k`
/// orthonormal basis on the element with the given corners.
pub fn zero_mean_matrices(k: usize, corners: [[f64; 2]; 3]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let basis = OrthoBasis::new(k);
    let n = basis.len() - 1;
    let map = AffineMap::from_vertices(corners);
    let tri = quad_rule(2 * k, RuleVariant::Triangle)?;
    let edge = quad_rule(2 * k, RuleVariant::Edge)?;
    let mut s = DMatrix::zeros(n, n);
    let mut g = vec![[0.0; 2]; basis.len()];
    for (x, w) in tri.iter() {
        basis.grads_into(x, &mut g);
        let pg: Vec<[f64; 2]> = g[1..].iter().map(|d| map.grad(*d)).collect();
        for i in 0..n {
            for j in 0..n {
                s[(i, j)] += w * map.det * (pg[i][0] * pg[j][0] + pg[i][1] * pg[j][1]);
            }
        }
    }
    let mut b = DMatrix::zeros(n, n);
    let mut v = vec![0.0; basis.len()];
    for f in 0..3 {
        let len = dist(map.to_physical(REFERENCE_FACES[f].0), map.to_physical(REFERENCE_FACES[f].1));
        for q in 0..edge.len() {
            basis.values_into(face_point(f, edge.t(q)), &mut v);
            for i in 0..n {
                for j in 0..n {
                    b[(i, j)] += edge.weights[q] * len * v[i + 1] * v[j + 1];
                }
            }
        }
    }
    Ok((s, b))
}

/// Scaled trace inequality constant on `V*^{p+2}_K`, restricted to the
/// stiffness-orthogonal complement of the functions with zero trace.
pub fn trace_constant(p: usize, corners: [[f64; 2]; 3]) -> Result<TraceConstant> {
    let (s, b) = zero_mean_matrices(p + 2, corners)?;
    let n = s.nrows();
    let eig = b.clone().symmetric_eigen();
    let top = eig.eigenvalues.amax();
    let kernel: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] <= 1e-11 * top).collect();
    // Complement: the null space of M = Nᵀ S, read off the eigenvectors of
    // the orthogonal projector I - Mᵀ (M Mᵀ)⁻¹ M with eigenvalue one.
    let w = if kernel.is_empty() {
        DMatrix::identity(n, n)
    } else {
        let nmat = DMatrix::from_fn(n, kernel.len(), |r, c| eig.eigenvectors[(r, kernel[c])]);
        let m = nmat.transpose() * &s;
        let gram = (&m * m.transpose()).try_inverse().ok_or_else(|| Error::Singular("trace kernel".into()))?;
        let proj = DMatrix::identity(n, n) - m.transpose() * gram * &m;
        let pe = (0.5 * (&proj + proj.transpose())).symmetric_eigen();
        let keep: Vec<usize> = (0..n).filter(|&i| pe.eigenvalues[i] > 0.5).collect();
        DMatrix::from_fn(n, keep.len(), |r, c| pe.eigenvectors[(r, keep[c])])
    };
    let sw = w.transpose() * &s * &w;
    let bw = w.transpose() * &b * &w;
    let lambda = max_generalized_eigenvalue(&sw, &bw)?;
    let h = {
        let c = corners;
        dist(c[0], c[1]).max(dist(c[1], c[2])).max(dist(c[2], c[0]))
    };
    Ok(TraceConstant {
        constant: (h * lambda).sqrt(),
        kernel_dim: kernel.len(),
        complement_dim: n - kernel.len(),
    })
}

/// Sweep of the trace constant over random shape-regular triangles.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceReport {
    pub p: usize,
    pub triangles: usize,
    pub max_constant: f64,
    pub min_constant: f64,
    pub kernel_dim: usize,
    /// Largest relative change of the constant under `K → sK`.
    pub scaling_drift: f64,
}

pub fn scaled_trace_inequality_check(p: usize, triangles: usize, seed: u64) -> Result<TraceReport> {
    if !(1..=3).contains(&p) {
        return Err(Error::InvalidDegree(format!("p = {p} (expected 1, 2 or 3)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = TraceReport {
        p,
        triangles,
        max_constant: 0.0,
        min_constant: f64::INFINITY,
        kernel_dim: 0,
        scaling_drift: 0.0,
    };
    for _ in 0..triangles {
        let c = random_triangle(&mut rng, 15.0);
        let t = trace_constant(p, c)?;
        let s: f64 = rng.random_range(0.01..100.0);
        let scaled = trace_constant(p, c.map(|v| [s * v[0], s * v[1]]))?;
        rep.scaling_drift = rep.scaling_drift.max((scaled.constant - t.constant).abs() / t.constant);
        rep.max_constant = rep.max_constant.max(t.constant);
        rep.min_constant = rep.min_constant.min(t.constant);
        rep.kernel_dim = t.kernel_dim;
    }
    Ok(rep)
}
