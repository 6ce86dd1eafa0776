//! Error estimators, mesh-dependent norms and exact-error measurements.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{dim, OrthoBasis};
use crate::bdm::edge_point;
use crate::error::{Error, Result};
use crate::geometry::AffineMap;
use crate::mesh::TriMesh;
use crate::postprocess::{LocalTables, PostprocResult};
use crate::problem::{ExactSolution, ProblemSpec};
use crate::quadrature::{quad_rule, shifted_legendre, DataQuadrature, QuadRule, RuleVariant};
use crate::solver::{data_quadrature, MixedSolution};

/// `(b^T S^{-1} b)^{1/2}`: the norm of the functional `v ↦ b·v` in the dual of
/// the space with Gram matrix `S`.
pub fn dual_norm_from_load(stiffness: &DMatrix<f64>, load: &DVector<f64>) -> Result<f64> {
    let chol = stiffness
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("local stiffness matrix".into()))?;
    let w = chol.solve(load);
    Ok(load.dot(&w).max(0.0).sqrt())
}

/// Discrete dual norm `sup_{v ∈ V*^{p+2}} (r, ∇v)_K / ‖∇v‖_K` of a vector
/// field on element `K`, via its Riesz representative.
pub fn dual_norm_star(tables: &LocalTables, map: &AffineMap, r: impl Fn([f64; 2]) -> [f64; 2], rule: &QuadRule) -> Result<f64> {
    let s = tables.stiffness(map);
    let b = star_load(tables, map, r, rule);
    dual_norm_from_load(&s, &b)
}

/// `(r, ∇ψ_i)_K` over the zero-mean members of degree `p + 2`.
pub fn star_load(tables: &LocalTables, map: &AffineMap, r: impl Fn([f64; 2]) -> [f64; 2], rule: &QuadRule) -> DVector<f64> {
    let high = tables.high_basis();
    let n = high.len() - 1;
    let mut b = DVector::zeros(n);
    let mut g = vec![[0.0; 2]; high.len()];
    for (x, w) in rule.iter() {
        let rv = r(map.to_physical(x));
        high.grads_into(x, &mut g);
        let wd = w * map.det;
        for i in 0..n {
            let gi = map.grad(g[i + 1]);
            b[i] += wd * (rv[0] * gi[0] + rv[1] * gi[1]);
        }
    }
    b
}

/// `‖∇(u - ν_h)‖` below this fraction of `‖∇u‖` counts as zero when forming
/// the saturation ratio.
pub const DEGENERATE_RATIO: f64 = 1e-10;

/// Per-element and global estimator data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub eta_tilde: Vec<f64>,
    /// `‖q_h + ∇ν_h‖_K`.
    pub mismatch: Vec<f64>,
    /// `½ Σ_{interior F ⊂ ∂K} h_F^{-1} ‖⟦ν_h⟧‖_F²`.
    pub jump: Vec<f64>,
    /// `Σ_{boundary F ⊂ ∂K} h_F^{-1} ‖u_D - ν_h‖_F²`.
    pub boundary: Vec<f64>,
    pub eta: Vec<f64>,
    pub eta_tilde_global: f64,
    pub eta_global: f64,
    /// Whether an exact solution was available for the error block.
    pub exact_available: bool,
    pub errors: Option<ErrorReport>,
}

/// Errors against an exact solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// `‖∇(u - ν_h)‖_K`.
    pub grad_nu: Vec<f64>,
    /// `|u - ν_h|_{1,K,h}`.
    pub broken_h1: Vec<f64>,
    /// `‖q - q_h‖_K`.
    pub flux_l2: Vec<f64>,
    /// `‖q - q_h‖_{0,K,h}`.
    pub flux_0h: Vec<f64>,
    /// `‖q - q_h‖_{*,K}`.
    pub flux_star: Vec<f64>,
    /// `‖q - q_h‖_{*,K,h}`.
    pub flux_star_h: Vec<f64>,
    /// Upper bound for the flux oscillation on `K`.
    pub osc: Vec<f64>,
    /// `‖∇(u - θ_h)‖_K`, when `θ_h` was computed.
    pub grad_theta: Option<Vec<f64>>,
    pub grad_nu_global: f64,
    pub h1h_global: f64,
    pub flux_0h_global: f64,
    pub flux_star_h_global: f64,
    pub l2_u: f64,
    pub l2_nu: f64,
    pub osc_global: f64,
    /// `(‖u - ν_h‖_{1,h}² + ‖q - q_h‖_{0,h}²)^{1/2}`.
    pub full: f64,
    /// `η / full`.
    pub effectivity: f64,
    /// `‖∇(u - θ_h)‖ / ‖∇(u - ν_h)‖`; 0 when the denominator vanishes
    /// relative to `‖∇u‖`.
    pub delta: Option<f64>,
    /// Set when the denominator of `delta` vanished.
    pub delta_degenerate: bool,
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Evaluates everything living on one element at reference points.
struct ElementEval<'a> {
    map: AffineMap,
    high: &'a OrthoBasis,
    /// Prime coordinates of the pulled-back flux.
    q_prime: Vec<f64>,
    m: usize,
    nu: &'a [f64],
    u: &'a [f64],
    vals: Vec<f64>,
    grads: Vec<[f64; 2]>,
}

impl<'a> ElementEval<'a> {
    fn new(t: usize, mesh: &TriMesh, sol: &MixedSolution, post: &'a PostprocResult, tables: &'a LocalTables, u: &'a [f64]) -> Self {
        let high = tables.high_basis();
        ElementEval {
            map: mesh.map(t),
            high,
            q_prime: sol.flux.reference().to_prime(&sol.flux.local_coeffs(&sol.q, t)),
            m: dim(sol.degree()),
            nu: post.nu_local(t),
            u,
            vals: vec![0.0; high.len()],
            grads: vec![[0.0; 2]; high.len()],
        }
    }

    fn at(&mut self, x: [f64; 2]) {
        self.high.values_into(x, &mut self.vals);
        self.high.grads_into(x, &mut self.grads);
    }

    fn q_h(&self) -> [f64; 2] {
        let m = self.m;
        let a = &self.q_prime;
        let mut q = [0.0; 2];
        for k in 0..m {
            q[0] += a[k] * self.vals[k];
            q[1] += a[m + k] * self.vals[k];
        }
        self.map.piola(q)
    }

    fn value(&self, c: &[f64]) -> f64 {
        c.iter().zip(&self.vals).map(|(c, v)| c * v).sum()
    }

    fn grad(&self, c: &[f64]) -> [f64; 2] {
        let mut g = [0.0; 2];
        for (c, d) in c.iter().zip(&self.grads) {
            g[0] += c * d[0];
            g[1] += c * d[1];
        }
        self.map.grad(g)
    }

    fn nu(&self) -> f64 {
        self.value(self.nu)
    }

    fn grad_nu(&self) -> [f64; 2] {
        self.grad(self.nu)
    }

    fn u_h(&self) -> f64 {
        self.value(self.u)
    }
}

fn sq(v: [f64; 2]) -> f64 {
    v[0] * v[0] + v[1] * v[1]
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

/// Compute the estimator block and, when the problem carries an exact
/// solution, the error block.
pub fn estimate(mesh: &TriMesh, problem: &ProblemSpec, sol: &MixedSolution, post: &PostprocResult) -> Result<EstimatorReport> {
    if post.eta_tilde.len() != mesh.num_triangles() || sol.num_elements() != mesh.num_triangles() {
        return Err(Error::DimensionMismatch("postprocessing does not match the mesh".into()));
    }
    let p = sol.degree();
    let tables = LocalTables::new(p)?;
    let rules = data_quadrature(p, problem)?;
    let poly_tri = quad_rule(2 * p + 2, RuleVariant::Triangle)?;
    let poly_edge = quad_rule(2 * p + 2, RuleVariant::Edge)?;
    let n = mesh.num_triangles();

    let mismatch: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|t| {
            let mut ev = ElementEval::new(t, mesh, sol, post, &tables, sol.scalar.local(&sol.u, t));
            let mut s = 0.0;
            for (x, w) in poly_tri.iter() {
                ev.at(x);
                let g = ev.grad_nu();
                let q = ev.q_h();
                s += w * ev.map.det * sq([q[0] + g[0], q[1] + g[1]]);
            }
            s.sqrt()
        })
        .collect();

    // Edge terms.
    let nu_basis = OrthoBasis::new(p + 1);
    let edge_terms: Vec<(usize, f64, Option<usize>)> = (0..mesh.num_edges())
        .into_par_iter()
        .map(|e| {
            let edge = &mesh.edges()[e];
            let [a, b] = mesh.edge_endpoints(e);
            let h = mesh.edge_length(e);
            let kp = edge.plus.0;
            let mp = mesh.map(kp);
            match edge.minus {
                Some((km, _)) => {
                    let mm = mesh.map(km);
                    let mut s = 0.0;
                    for (i, &w) in poly_edge.weights.iter().enumerate() {
                        let x = edge_point(a, b, poly_edge.t(i));
                        let vp = nu_basis.eval(post.nu_local(kp), mp.to_reference(x));
                        let vm = nu_basis.eval(post.nu_local(km), mm.to_reference(x));
                        s += w * h * (vp - vm).powi(2);
                    }
                    (kp, 0.5 * s / h, Some(km))
                }
                None => {
                    let rule = rules.edge(a, b);
                    let mut s = 0.0;
                    for (i, &w) in rule.weights.iter().enumerate() {
                        let x = edge_point(a, b, rule.t(i));
                        let v = nu_basis.eval(post.nu_local(kp), mp.to_reference(x));
                        s += w * h * ((problem.u_d)(x) - v).powi(2);
                    }
                    (kp, s / h, None)
                }
            }
        })
        .collect();
    let mut jump = vec![0.0; n];
    let mut boundary = vec![0.0; n];
    for (kp, v, km) in edge_terms {
        match km {
            Some(km) => {
                jump[kp] += v;
                jump[km] += v;
            }
            None => boundary[kp] += v,
        }
    }
    let eta: Vec<f64> = (0..n)
        .map(|t| (post.eta_tilde[t].powi(2) + mismatch[t].powi(2) + jump[t] + boundary[t]).sqrt())
        .collect();
    let eta_global = norm2(&eta);
    let mut report = EstimatorReport {
        eta_tilde: post.eta_tilde.clone(),
        mismatch,
        jump,
        boundary,
        eta,
        eta_tilde_global: post.eta_tilde_global(),
        eta_global,
        exact_available: problem.exact.is_some(),
        errors: None,
    };
    if let Some(exact) = &problem.exact {
        report.errors = Some(error_norms(mesh, exact, sol, post, &tables, &rules, &report)?);
    }
    Ok(report)
}

/// Error block for a known exact solution; `estimates` supplies the jump and
/// boundary terms of `ν_h`, which coincide with those of `u - ν_h`.
pub fn error_norms(
    mesh: &TriMesh,
    exact: &ExactSolution,
    sol: &MixedSolution,
    post: &PostprocResult,
    tables: &LocalTables,
    rules: &DataQuadrature,
    estimates: &EstimatorReport,
) -> Result<ErrorReport> {
    let p = sol.degree();
    let n = mesh.num_triangles();
    struct Local {
        grad_nu: f64,
        grad_u: f64,
        grad_theta: Option<f64>,
        flux_l2: f64,
        flux_bdry: f64,
        flux_star: f64,
        l2_u: f64,
        l2_nu: f64,
        osc: f64,
    }
    let locals: Vec<Local> = (0..n)
        .into_par_iter()
        .map(|t| {
            let corners = mesh.corners(t);
            let rule = rules.triangle(&corners);
            let mut ev = ElementEval::new(t, mesh, sol, post, tables, sol.scalar.local(&sol.u, t));
            let theta = post.theta_local(t);
            let (mut gn, mut gu, mut gt, mut fl, mut lu, mut ln) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
            let hk = mesh.diameter(t);
            let det = ev.map.det;
            let s = tables.stiffness(&ev.map);
            let mut star = DVector::zeros(s.nrows());
            for (x, w) in rule.iter() {
                ev.at(x);
                let xp = ev.map.to_physical(x);
                let u = (exact.u)(xp);
                let q = (exact.q)(xp);
                let du = [-q[0], -q[1]];
                let wd = w * det;
                gn += wd * sq(sub(du, ev.grad_nu()));
                gu += wd * sq(du);
                if let Some(th) = theta {
                    gt += wd * sq(sub(du, ev.grad(th)));
                }
                let dq = sub(q, ev.q_h());
                fl += wd * sq(dq);
                lu += wd * (u - ev.u_h()).powi(2);
                ln += wd * (u - ev.nu()).powi(2);
                for i in 0..star.len() {
                    let g = ev.map.grad(ev.grads[i + 1]);
                    star[i] += wd * (dq[0] * g[0] + dq[1] * g[1]);
                }
            }
            let flux_star = dual_norm_from_load(&s, &star)?;
            // Normal traces on ∂K: h_K ‖(q - q_h)·n‖² and the oscillation bound.
            let mut bdry = 0.0;
            let mut osc = 0.0;
            for le in 0..3 {
                let [a, b] = mesh.local_edge_endpoints(t, le);
                let nrm = mesh.outward_normal(t, le);
                let len = crate::geometry::dist(a, b);
                let erule = rules.edge(a, b);
                let mut gq = Vec::with_capacity(erule.len());
                for (i, &w) in erule.weights.iter().enumerate() {
                    let x = edge_point(a, b, erule.t(i));
                    ev.at(ev.map.to_reference(x));
                    let q = (exact.q)(x);
                    let dq = sub(q, ev.q_h());
                    bdry += w * len * (dq[0] * nrm[0] + dq[1] * nrm[1]).powi(2);
                    gq.push(q[0] * nrm[0] + q[1] * nrm[1]);
                }
                // Legendre coefficients of the degree-p best approximation.
                let coef: Vec<f64> = (0..=p)
                    .map(|k| {
                        (2 * k + 1) as f64
                            * erule
                                .weights
                                .iter()
                                .enumerate()
                                .map(|(i, w)| w * gq[i] * shifted_legendre(k, erule.t(i)))
                                .sum::<f64>()
                    })
                    .collect();
                for (i, &w) in erule.weights.iter().enumerate() {
                    let tt = erule.t(i);
                    let approx: f64 = coef.iter().enumerate().map(|(k, c)| c * shifted_legendre(k, tt)).sum();
                    osc += w * len * (gq[i] - approx).powi(2);
                }
            }
            Ok(Local {
                grad_nu: gn.sqrt(),
                grad_u: gu,
                grad_theta: theta.map(|_| gt.sqrt()),
                flux_l2: fl.sqrt(),
                flux_bdry: hk * bdry,
                flux_star,
                l2_u: lu,
                l2_nu: ln,
                osc: (hk * osc).sqrt(),
            })
        })
        .collect::<Result<_>>()?;

    let grad_nu: Vec<f64> = locals.iter().map(|l| l.grad_nu).collect();
    let broken_h1: Vec<f64> = (0..n)
        .map(|t| (grad_nu[t].powi(2) + estimates.jump[t] + estimates.boundary[t]).sqrt())
        .collect();
    let flux_l2: Vec<f64> = locals.iter().map(|l| l.flux_l2).collect();
    let flux_0h: Vec<f64> = locals.iter().map(|l| (l.flux_l2.powi(2) + l.flux_bdry).sqrt()).collect();
    let flux_star: Vec<f64> = locals.iter().map(|l| l.flux_star).collect();
    let flux_star_h: Vec<f64> = locals.iter().map(|l| (l.flux_star.powi(2) + l.flux_bdry).sqrt()).collect();
    let osc: Vec<f64> = locals.iter().map(|l| l.osc).collect();
    let grad_theta: Option<Vec<f64>> = locals.iter().map(|l| l.grad_theta).collect();
    let grad_nu_global = norm2(&grad_nu);
    let h1h_global = norm2(&broken_h1);
    let flux_0h_global = norm2(&flux_0h);
    let grad_u_norm = locals.iter().map(|l| l.grad_u).sum::<f64>().sqrt();
    let full = (h1h_global.powi(2) + flux_0h_global.powi(2)).sqrt();
    let (delta, delta_degenerate) = match &grad_theta {
        Some(gt) if grad_nu_global > DEGENERATE_RATIO * grad_u_norm => (Some(norm2(gt) / grad_nu_global), false),
        Some(_) => (Some(0.0), true),
        None => (None, false),
    };
    Ok(ErrorReport {
        grad_nu_global,
        h1h_global,
        flux_0h_global,
        flux_star_h_global: norm2(&flux_star_h),
        l2_u: locals.iter().map(|l| l.l2_u).sum::<f64>().sqrt(),
        l2_nu: locals.iter().map(|l| l.l2_nu).sum::<f64>().sqrt(),
        osc_global: norm2(&osc),
        full,
        effectivity: if full > 0.0 { estimates.eta_global / full } else { f64::NAN },
        delta,
        delta_degenerate,
        grad_nu,
        broken_h1,
        flux_l2,
        flux_0h,
        flux_star,
        flux_star_h,
        osc,
        grad_theta,
    })
}

/// Per-element oscillation upper bound `h_K^{1/2} (Σ_F ‖q·n - Π_p(q·n)‖_F²)^{1/2}`
/// for a flux field `q` and degree `p`.
pub fn oscillation_bound(mesh: &TriMesh, q: &(dyn Fn([f64; 2]) -> [f64; 2] + Sync), p: usize, rules: &DataQuadrature) -> Vec<f64> {
    (0..mesh.num_triangles())
        .into_par_iter()
        .map(|t| {
            let mut osc = 0.0;
            for le in 0..3 {
                let [a, b] = mesh.local_edge_endpoints(t, le);
                let nrm = mesh.outward_normal(t, le);
                let len = crate::geometry::dist(a, b);
                let rule = rules.edge(a, b);
                let g: Vec<f64> = (0..rule.len())
                    .map(|i| {
                        let v = q(edge_point(a, b, rule.t(i)));
                        v[0] * nrm[0] + v[1] * nrm[1]
                    })
                    .collect();
                let coef: Vec<f64> = (0..=p)
                    .map(|k| (2 * k + 1) as f64 * (0..rule.len()).map(|i| rule.weights[i] * g[i] * shifted_legendre(k, rule.t(i))).sum::<f64>())
                    .collect();
                for i in 0..rule.len() {
                    let approx: f64 = coef.iter().enumerate().map(|(k, c)| c * shifted_legendre(k, rule.t(i))).sum();
                    osc += rule.weights[i] * len * (g[i] - approx).powi(2);
                }
            }
            (mesh.diameter(t) * osc).sqrt()
        })
        .collect()
}

/// `‖∇(u - θ_h)‖_{T_h} / ‖∇(u - ν_h)‖_{T_h}` and a flag for a vanishing
/// denominator (reported as 0).
pub fn saturation_delta(report: &ErrorReport) -> Option<(f64, bool)> {
    report.delta.map(|d| (d, report.delta_degenerate))
}
