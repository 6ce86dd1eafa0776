//! Quick identity and property checks run by `amfem verify`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adaptivity::max_relative_gap;
use crate::basis::OrthoBasis;
use crate::error::Result;
use crate::estimators::{dual_norm_star, estimate, star_load};
use crate::fortin::{fortin_sweep, max_generalized_eigenvalue, random_triangle};
use crate::geometry::AffineMap;
use crate::mesh::build_initial_mesh;
use crate::postprocess::{postprocess, stenberg_oracle, LocalTables};
use crate::problem::{linear_problem, preset, ExperimentId};
use crate::quadrature::{quad_rule, RuleVariant};
use crate::solver::solve_problem;

/// Outcome of one check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
}

impl Check {
    fn at_most(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            passed: value <= tolerance,
            value,
            tolerance,
        }
    }
}

/// Deviation of `‖∇(θ_h - ν_h)‖_K` from `η̃_K` over a mesh.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IdentityDefect {
    pub max_absolute: f64,
    /// Largest defect relative to `η̃_K`, over elements with `η̃_K > 0`.
    pub max_relative: f64,
    /// Largest `defect - max(rel · η̃_K, abs)` for the given tolerances;
    /// non-positive when every element passes one of the two bounds.
    pub max_excess: f64,
}

/// Compare `‖∇(θ_h - ν_h)‖_K` with `η̃_K` on every element; `None` without
/// `θ_h`.
pub fn identity_defect(mesh: &crate::mesh::TriMesh, post: &crate::postprocess::PostprocResult, rel: f64, abs: f64) -> Option<IdentityDefect> {
    let theta = post.theta.as_ref()?;
    let tables = LocalTables::new(post.p).ok()?;
    let mut out = IdentityDefect {
        max_excess: f64::NEG_INFINITY,
        ..Default::default()
    };
    for t in 0..mesh.num_triangles() {
        let s = tables.stiffness(&mesh.map(t));
        let th = &theta[t * post.high_dim()..(t + 1) * post.high_dim()];
        let nu = post.nu_local(t);
        let d = nalgebra::DVector::from_fn(s.nrows(), |i, _| th[i + 1] - nu.get(i + 1).copied().unwrap_or(0.0));
        let g = d.dot(&(&s * &d)).max(0.0).sqrt();
        let e = post.eta_tilde[t];
        let defect = (g - e).abs();
        out.max_absolute = out.max_absolute.max(defect);
        if e > 0.0 {
            out.max_relative = out.max_relative.max(defect / e);
        }
        out.max_excess = out.max_excess.max(defect - (rel * e).max(abs));
    }
    Some(out)
}

/// Run the suite on small meshes.
pub fn run_checks(seed: u64) -> Result<Vec<Check>> {
    let mut out = Vec::new();

    let lin = linear_problem();
    let mesh = build_initial_mesh(&lin.domain, 8)?;
    let sol = solve_problem(&mesh, 1, &lin)?;
    let post = postprocess(&mesh, &sol, true)?;
    let rep = estimate(&mesh, &lin, &sol, &post)?;
    out.push(Check::at_most("linear solution: estimator vanishes", rep.eta_global, 1e-10));

    for id in [ExperimentId::Smooth, ExperimentId::Lshape, ExperimentId::Advdiff] {
        let prob = preset(id)?;
        let mesh = build_initial_mesh(&prob.domain, prob.initial_elements)?;
        for p in 1..=3 {
            let sol = solve_problem(&mesh, p, &prob)?;
            let post = postprocess(&mesh, &sol, true)?;
            let oracle = stenberg_oracle(&mesh, &sol)?;
            out.push(Check::at_most(format!("{id} p={p}: agrees with Stenberg postprocessing"), max_relative_gap(&mesh, &post.nu, &oracle), 1e-10));
            if let Some(d) = identity_defect(&mesh, &post, 1e-10, 1e-12) {
                out.push(Check::at_most(format!("{id} p={p}: enriched solution identity (excess over bound)"), d.max_excess, 0.0));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for p in 1..=3 {
        let tables = LocalTables::new(p)?;
        let rb = OrthoBasis::new(p + 3);
        let rule = quad_rule(2 * p + 6, RuleVariant::Triangle)?;
        for _ in 0..20 {
            let map = AffineMap::from_vertices(random_triangle(&mut rng, 15.0));
            let cx: Vec<f64> = (0..rb.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let cy: Vec<f64> = (0..rb.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let r = |x: [f64; 2]| {
                let xr = map.to_reference(x);
                [rb.eval(&cx, xr), rb.eval(&cy, xr)]
            };
            let v = dual_norm_star(&tables, &map, r, &rule)?;
            let b = star_load(&tables, &map, r, &rule);
            let s = tables.stiffness(&map);
            let rank_one = &b * b.transpose();
            let oracle = max_generalized_eigenvalue(&rank_one, &s)?.max(0.0).sqrt();
            worst = worst.max((v - oracle).abs() / oracle.max(f64::MIN_POSITIVE));
        }
    }
    out.push(Check::at_most("dual norm matches generalized eigenvalue", worst, 1e-10));

    let f = fortin_sweep(20, 3, 4, seed)?;
    out.push(Check::at_most("boundary biorthogonality", f.physical_biorthogonality_residual, 1e-11));
    out.push(Check::at_most("boundary moment preservation", f.moment_residual, 1e-11));
    Ok(out)
}
