//! Element-local postprocessing of a mixed solution.
//!
//! On every element `K` the residual-minimization problem is solved in
//! saddle form: find `ε ∈ V*^{p+2}` and `ν ∈ V^{p+1}` with the mean of `u_h`
//! such that
//!
//! ```text
//! (∇ε, ∇v) + (∇ν, ∇v) = -(q_h, ∇v)   for all v ∈ V*^{p+2}
//! (∇ε, ∇w)            = 0            for all w ∈ V*^{p+1}
//! ```
//!
//! where `V*^r` is the zero-mean subspace of degree-`r` polynomials. Because
//! the scalar basis is hierarchical and orthonormal, `V*^{p+1}` is spanned by
//! a prefix of the `V*^{p+2}` basis and the mean of a function is carried by
//! its first coefficient alone.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::basis::{dim, OrthoBasis};
use crate::error::{Error, Result};
use crate::geometry::AffineMap;
use crate::mesh::TriMesh;
use crate::quadrature::{quad_rule, RuleVariant};
use crate::solver::MixedSolution;

/// Reference tables for the local problems of a flux degree `p`.
#[derive(Debug, Clone)]
pub struct LocalTables {
    p: usize,
    high: OrthoBasis,
    /// `stiff[c][d][(i, j)] = ∫ ∂_c ψ_{i+1} ∂_d ψ_{j+1}` over the zero-mean
    /// members of degree `p + 2`.
    stiff: [[DMatrix<f64>; 2]; 2],
    /// `load[c][(k, i)] = ∫ φ_k ∂_c ψ_{i+1}` for the degree-`p` members `φ_k`.
    load: [DMatrix<f64>; 2],
}

impl LocalTables {
    pub fn new(p: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::InvalidDegree("flux degree must be at least 1".into()));
        }
        let high = OrthoBasis::new(p + 2);
        let n = high.len() - 1;
        let m = dim(p);
        let rule = quad_rule(2 * (p + 2), RuleVariant::Triangle)?;
        let tab = high.tabulate(rule.iter().map(|(x, _)| x));
        let mut stiff = [[DMatrix::zeros(n, n), DMatrix::zeros(n, n)], [DMatrix::zeros(n, n), DMatrix::zeros(n, n)]];
        let mut load = [DMatrix::zeros(m, n), DMatrix::zeros(m, n)];
        for (q, &w) in rule.weights.iter().enumerate() {
            let g = [tab.dx.row(q), tab.dy.row(q)];
            for c in 0..2 {
                for d in 0..2 {
                    for j in 0..n {
                        let gj = w * g[d][j + 1];
                        for i in 0..n {
                            stiff[c][d][(i, j)] += g[c][i + 1] * gj;
                        }
                    }
                }
                for i in 0..n {
                    let gi = w * g[c][i + 1];
                    for k in 0..m {
                        load[c][(k, i)] += tab.values[(q, k)] * gi;
                    }
                }
            }
        }
        Ok(LocalTables { p, high, stiff, load })
    }

    pub fn degree(&self) -> usize {
        self.p
    }

    /// Orthonormal basis of degree `p + 2`; its members `1..` span `V*^{p+2}`.
    pub fn high_basis(&self) -> &OrthoBasis {
        &self.high
    }

    /// `dim V*^{p+2}`.
    pub fn test_dim(&self) -> usize {
        dim(self.p + 2) - 1
    }

    /// `dim V*^{p+1}`.
    pub fn trial_dim(&self) -> usize {
        dim(self.p + 1) - 1
    }

    /// Stiffness matrix `(∇ψ_j, ∇ψ_i)_K` on `V*^{p+2}`.
    pub fn stiffness(&self, map: &AffineMap) -> DMatrix<f64> {
        let h = map.stiffness_metric();
        &self.stiff[0][0] * h[0][0] + &self.stiff[0][1] * h[0][1] + &self.stiff[1][0] * h[1][0] + &self.stiff[1][1] * h[1][1]
    }

    /// `(q_h, ∇ψ_i)_K` from the prime coordinates of the pulled-back flux;
    /// the Piola map makes this element independent.
    pub fn flux_load(&self, prime: &[f64]) -> DVector<f64> {
        let m = dim(self.p);
        let ax = DVector::from_column_slice(&prime[..m]);
        let ay = DVector::from_column_slice(&prime[m..2 * m]);
        self.load[0].tr_mul(&ax) + self.load[1].tr_mul(&ay)
    }
}

/// Result of the local solve on one element.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalPostproc {
    /// Coefficients of `ν_K` in the degree `p + 1` orthonormal basis.
    pub nu: Vec<f64>,
    /// Coefficients of `ε_K` in the degree `p + 2` basis (first entry 0).
    pub epsilon: Vec<f64>,
    pub eta_tilde: f64,
}

/// Solve the local saddle problem given the stiffness matrix, the flux load
/// and the constant coefficient of `u_h`.
pub fn resmin_local(stiffness: &DMatrix<f64>, load: &DVector<f64>, u_mean_coeff: f64, trial_dim: usize) -> Result<LocalPostproc> {
    let n2 = stiffness.nrows();
    let n1 = trial_dim;
    let mut a = DMatrix::zeros(n2 + n1, n2 + n1);
    a.view_mut((0, 0), (n2, n2)).copy_from(stiffness);
    a.view_mut((0, n2), (n2, n1)).copy_from(&stiffness.columns(0, n1));
    a.view_mut((n2, 0), (n1, n2)).copy_from(&stiffness.rows(0, n1));
    let mut rhs = DVector::zeros(n2 + n1);
    rhs.rows_mut(0, n2).copy_from(&(-load));
    let x = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("local residual-minimization system".into()))?;
    let eps = x.rows(0, n2).into_owned();
    let eta2 = eps.dot(&(stiffness * &eps));
    let mut nu = Vec::with_capacity(n1 + 1);
    nu.push(u_mean_coeff);
    nu.extend(x.rows(n2, n1).iter());
    let mut epsilon = Vec::with_capacity(n2 + 1);
    epsilon.push(0.0);
    epsilon.extend(eps.iter());
    Ok(LocalPostproc {
        nu,
        epsilon,
        eta_tilde: eta2.max(0.0).sqrt(),
    })
}

/// Per-element output of the postprocessing.
#[derive(Debug, Clone, PartialEq)]
pub struct PostprocResult {
    pub p: usize,
    /// `ν_h`, `dim(p + 1)` coefficients per element.
    pub nu: Vec<f64>,
    /// `ε_h`, `dim(p + 2)` coefficients per element.
    pub epsilon: Vec<f64>,
    pub eta_tilde: Vec<f64>,
    /// `θ_h`, `dim(p + 2)` coefficients per element, when requested.
    pub theta: Option<Vec<f64>>,
}

impl PostprocResult {
    pub fn nu_dim(&self) -> usize {
        dim(self.p + 1)
    }

    pub fn high_dim(&self) -> usize {
        dim(self.p + 2)
    }

    pub fn nu_local(&self, t: usize) -> &[f64] {
        let n = self.nu_dim();
        &self.nu[t * n..(t + 1) * n]
    }

    pub fn epsilon_local(&self, t: usize) -> &[f64] {
        let n = self.high_dim();
        &self.epsilon[t * n..(t + 1) * n]
    }

    pub fn theta_local(&self, t: usize) -> Option<&[f64]> {
        let n = self.high_dim();
        self.theta.as_ref().map(|th| &th[t * n..(t + 1) * n])
    }

    /// Global `η̃ = (Σ η̃_K²)^{1/2}`.
    pub fn eta_tilde_global(&self) -> f64 {
        self.eta_tilde.iter().map(|e| e * e).sum::<f64>().sqrt()
    }
}

fn element_inputs(tables: &LocalTables, mesh: &TriMesh, sol: &MixedSolution, t: usize) -> (DMatrix<f64>, DVector<f64>, f64) {
    let map = mesh.map(t);
    let s = tables.stiffness(&map);
    let prime = sol.flux.reference().to_prime(&sol.flux.local_coeffs(&sol.q, t));
    let r = tables.flux_load(&prime);
    let u0 = sol.scalar.local(&sol.u, t)[0];
    (s, r, u0)
}

fn check(mesh: &TriMesh, sol: &MixedSolution) -> Result<()> {
    if sol.num_elements() != mesh.num_triangles() {
        return Err(Error::DimensionMismatch(format!(
            "solution has {} elements, mesh has {}",
            sol.num_elements(),
            mesh.num_triangles()
        )));
    }
    Ok(())
}

/// Residual-minimization postprocessing of every element; with
/// `with_theta` also the enriched solution `θ_h`.
pub fn postprocess(mesh: &TriMesh, sol: &MixedSolution, with_theta: bool) -> Result<PostprocResult> {
    check(mesh, sol)?;
    let p = sol.degree();
    let tables = LocalTables::new(p)?;
    let n1 = tables.trial_dim();
    let locals: Vec<(LocalPostproc, Option<Vec<f64>>)> = (0..mesh.num_triangles())
        .into_par_iter()
        .map(|t| {
            let (s, r, u0) = element_inputs(&tables, mesh, sol, t);
            let loc = resmin_local(&s, &r, u0, n1)?;
            let theta = if with_theta { Some(theta_local(&s, &r, u0)?) } else { None };
            Ok((loc, theta))
        })
        .collect::<Result<_>>()?;
    let mut out = PostprocResult {
        p,
        nu: Vec::with_capacity(locals.len() * dim(p + 1)),
        epsilon: Vec::with_capacity(locals.len() * dim(p + 2)),
        eta_tilde: Vec::with_capacity(locals.len()),
        theta: with_theta.then(Vec::new),
    };
    for (loc, th) in locals {
        out.nu.extend(loc.nu);
        out.epsilon.extend(loc.epsilon);
        out.eta_tilde.push(loc.eta_tilde);
        if let (Some(all), Some(th)) = (out.theta.as_mut(), th) {
            all.extend(th);
        }
    }
    Ok(out)
}

/// Residual-minimization postprocessing without `θ_h`.
pub fn postprocess_resmin(mesh: &TriMesh, sol: &MixedSolution) -> Result<PostprocResult> {
    postprocess(mesh, sol, false)
}

fn theta_local(s: &DMatrix<f64>, r: &DVector<f64>, u0: f64) -> Result<Vec<f64>> {
    let x = s
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("local stiffness matrix".into()))?
        .solve(&(-r));
    let mut th = Vec::with_capacity(x.len() + 1);
    th.push(u0);
    th.extend(x.iter());
    Ok(th)
}

/// Enriched solution `θ_h ∈ V^{p+2}` with `(∇θ_h, ∇v)_K = -(q_h, ∇v)_K` on
/// `V*^{p+2}` and the mean of `u_h`; `dim(p + 2)` coefficients per element.
pub fn solve_theta(mesh: &TriMesh, sol: &MixedSolution) -> Result<Vec<f64>> {
    check(mesh, sol)?;
    let tables = LocalTables::new(sol.degree())?;
    let parts: Vec<Vec<f64>> = (0..mesh.num_triangles())
        .into_par_iter()
        .map(|t| {
            let (s, r, u0) = element_inputs(&tables, mesh, sol, t);
            theta_local(&s, &r, u0)
        })
        .collect::<Result<_>>()?;
    Ok(parts.concat())
}

/// Classical local postprocessing `ũ_h ∈ V^{p+1}`: `(∇ũ_h, ∇v)_K =
/// -(q_h, ∇v)_K` on `V*^{p+1}` with the mean of `u_h`. Assembled by direct
/// physical-space quadrature and solved by Cholesky, independently of the
/// reference tables used by [`postprocess`].
pub fn stenberg_oracle(mesh: &TriMesh, sol: &MixedSolution) -> Result<Vec<f64>> {
    check(mesh, sol)?;
    let p = sol.degree();
    let basis = OrthoBasis::new(p + 1);
    let n = basis.len() - 1;
    let rule = quad_rule(2 * p + 2, RuleVariant::Triangle)?;
    let pts: Vec<[f64; 2]> = rule.iter().map(|(x, _)| x).collect();
    let parts: Vec<Vec<f64>> = (0..mesh.num_triangles())
        .into_par_iter()
        .map(|t| {
            let map = mesh.map(t);
            let q = sol.flux.eval_flux(mesh, &sol.q, t, &pts)?;
            let mut s = DMatrix::zeros(n, n);
            let mut b = DVector::zeros(n);
            for (k, (x, w)) in rule.iter().enumerate() {
                let g: Vec<[f64; 2]> = basis.grads(x).into_iter().map(|g| map.grad(g)).collect();
                let wd = w * map.det;
                for i in 0..n {
                    let gi = g[i + 1];
                    b[i] -= wd * (q[k][0] * gi[0] + q[k][1] * gi[1]);
                    for j in 0..n {
                        let gj = g[j + 1];
                        s[(i, j)] += wd * (gi[0] * gj[0] + gi[1] * gj[1]);
                    }
                }
            }
            let x = s
                .cholesky()
                .ok_or_else(|| Error::Singular("local stiffness matrix".into()))?
                .solve(&b);
            let mut out = vec![sol.scalar.local(&sol.u, t)[0]];
            out.extend(x.iter());
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(parts.concat())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bdm::{BdmSpace, DgSpace};
    use crate::mesh::{build_initial_mesh, DomainSpec};
    use crate::problem::{linear_problem, preset, ExperimentId};
    use crate::solver::{solve_problem, SolverDiagnostics};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_element() -> TriMesh {
        TriMesh::from_parts(vec![[0.2, 0.1], [1.1, 0.3], [0.5, 0.8]], vec![[0, 1, 2]]).unwrap()
    }

    fn manual_solution(mesh: &TriMesh, p: usize, q: &(dyn Fn([f64; 2]) -> [f64; 2] + Sync), u: &[f64]) -> MixedSolution {
        let flux = BdmSpace::new(mesh, p).unwrap();
        let scalar = DgSpace::new(mesh, p - 1);
        let qc = flux.interpolate(mesh, q, 2 * p + 4).unwrap();
        MixedSolution {
            flux,
            scalar,
            q: qc,
            u: u.to_vec(),
            diagnostics: SolverDiagnostics {
                unknowns: 0,
                nonzeros: 0,
                relative_residual: 0.0,
                refinement_steps: 0,
            },
        }
    }

    #[test]
    fn zero_data_gives_zero() {
        let mesh = one_element();
        for p in 1..=3 {
            let sol = manual_solution(&mesh, p, &|_| [0.0, 0.0], &vec![0.0; dim(p - 1)]);
            let r = postprocess(&mesh, &sol, true).unwrap();
            assert!(r.nu.iter().chain(&r.epsilon).chain(&r.eta_tilde).all(|v| *v == 0.0));
            assert!(stenberg_oracle(&mesh, &sol).unwrap().iter().all(|v| *v == 0.0));
            assert!(solve_theta(&mesh, &sol).unwrap().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn exact_gradient_is_recovered() {
        // q_h = -∇w with w ∈ V^{p+1}: ν = w and ε = 0.
        let mesh = one_element();
        let map = mesh.map(0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for p in 1..=3 {
            let b = OrthoBasis::new(p + 1);
            let w: Vec<f64> = (0..b.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let q = |x: [f64; 2]| {
                let g = map.grad(b.eval_grad(&w, map.to_reference(x)));
                [-g[0], -g[1]]
            };
            // u_h carries the mean of w in its first coefficient
            let mut u = vec![0.0; dim(p - 1)];
            u[0] = w[0];
            let sol = manual_solution(&mesh, p, &q, &u);
            let r = postprocess_resmin(&mesh, &sol).unwrap();
            for (a, e) in r.nu_local(0).iter().zip(&w) {
                assert!((a - e).abs() < 1e-10, "p={p}");
            }
            assert!(r.eta_tilde[0] < 1e-10);
            assert!(r.epsilon.iter().all(|e| e.abs() < 1e-9));
        }
    }

    #[test]
    fn agrees_with_stenberg_oracle_and_theta_identity() {
        let prob = preset(ExperimentId::Smooth).unwrap();
        let mesh = build_initial_mesh(&DomainSpec::unit_square(), 8).unwrap().refine(&[0, 3]);
        for p in 1..=3 {
            let sol = solve_problem(&mesh, p, &prob).unwrap();
            let r = postprocess(&mesh, &sol, true).unwrap();
            let st = stenberg_oracle(&mesh, &sol).unwrap();
            for (a, b) in r.nu.iter().zip(&st) {
                assert!((a - b).abs() < 1e-10, "p={p}");
            }
            let tables = LocalTables::new(p).unwrap();
            let n1 = tables.trial_dim();
            for t in 0..mesh.num_triangles() {
                let s = tables.stiffness(&mesh.map(t));
                let th = r.theta_local(t).unwrap();
                let nu = r.nu_local(t);
                let d = DVector::from_fn(s.nrows(), |i, _| th[i + 1] - if i < n1 { nu[i + 1] } else { 0.0 });
                let val = d.dot(&(&s * &d)).sqrt();
                assert!((val - r.eta_tilde[t]).abs() <= 1e-10 * r.eta_tilde[t] + 1e-12);
                // ν and θ carry the mean of u_h
                assert_eq!(nu[0], sol.scalar.local(&sol.u, t)[0]);
                assert_eq!(th[0], nu[0]);
                // ε is ∇-orthogonal to V*^{p+1}
                let eps = DVector::from_column_slice(&r.epsilon_local(t)[1..]);
                let se = &s * &eps;
                assert!(se.rows(0, n1).amax() < 1e-11);
            }
        }
    }

    #[test]
    fn linear_case_is_exact() {
        let prob = linear_problem();
        let mesh = build_initial_mesh(&DomainSpec::unit_square(), 8).unwrap();
        let sol = solve_problem(&mesh, 1, &prob).unwrap();
        let st = stenberg_oracle(&mesh, &sol).unwrap();
        let b = OrthoBasis::new(2);
        for t in 0..mesh.num_triangles() {
            let map = mesh.map(t);
            for x in [[0.1, 0.1], [0.5, 0.4]] {
                let v = b.eval(&st[t * 6..t * 6 + 6], x);
                assert!((v - map.to_physical(x)[0]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn mean_shift_leaves_eta_tilde_unchanged() {
        let prob = preset(ExperimentId::Smooth).unwrap();
        let mesh = build_initial_mesh(&DomainSpec::unit_square(), 8).unwrap();
        let mut sol = solve_problem(&mesh, 2, &prob).unwrap();
        let a = postprocess_resmin(&mesh, &sol).unwrap();
        for t in 0..mesh.num_triangles() {
            let o = sol.scalar.offset(t);
            sol.u[o] += 0.3 * t as f64;
        }
        let b = postprocess_resmin(&mesh, &sol).unwrap();
        for (x, y) in a.eta_tilde.iter().zip(&b.eta_tilde) {
            assert!((x - y).abs() <= 1e-13 * x.max(1.0));
        }
    }
}
