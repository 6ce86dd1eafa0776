//! Dörfler marking and the solve, postprocess, estimate, mark, refine loop.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{estimate, EstimatorReport};
use crate::mesh::{build_initial_mesh, TriMesh};
use crate::postprocess::{postprocess, stenberg_oracle, PostprocResult};
use crate::problem::ProblemSpec;
use crate::solver::solve_problem;

/// Bulk fraction used when none is given.
pub const DEFAULT_THETA: f64 = 0.5;

/// Smallest set of elements whose squared indicators reach `theta` times the
/// total: indicators sorted descending, ties broken by element id. All-zero
/// indicators give the empty set.
pub fn dorfler_mark(eta: &[f64], theta: f64) -> Result<Vec<usize>> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::InvalidParameter(format!("bulk fraction {theta} outside (0, 1)")));
    }
    if let Some(bad) = eta.iter().position(|e| !(e.is_finite() && *e >= 0.0)) {
        return Err(Error::InvalidParameter(format!("indicator {bad} is {}", eta[bad])));
    }
    let total: f64 = eta.iter().map(|e| e * e).sum();
    if total == 0.0 {
        return Ok(Vec::new());
    }
    let mut order: Vec<usize> = (0..eta.len()).collect();
    order.sort_by(|&a, &b| eta[b].total_cmp(&eta[a]).then(a.cmp(&b)));
    let goal = theta * total;
    let mut acc = 0.0;
    let mut marked = Vec::new();
    for k in order {
        if acc >= goal {
            break;
        }
        acc += eta[k] * eta[k];
        marked.push(k);
    }
    Ok(marked)
}

/// How the mesh is refined between iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefinementMode {
    Uniform,
    Adaptive,
}

impl FromStr for RefinementMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "adaptive" => Ok(Self::Adaptive),
            _ => Err(Error::InvalidParameter(format!("unknown refinement mode '{s}'"))),
        }
    }
}

impl fmt::Display for RefinementMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Uniform => "uniform",
            Self::Adaptive => "adaptive",
        })
    }
}

/// Indicator driving the marking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Marker {
    Eta,
    EtaTilde,
}

impl FromStr for Marker {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eta" => Ok(Self::Eta),
            "eta_tilde" => Ok(Self::EtaTilde),
            _ => Err(Error::InvalidParameter(format!("unknown marker '{s}'"))),
        }
    }
}

/// Loop parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopParams {
    pub p: usize,
    pub mode: RefinementMode,
    pub theta: f64,
    /// Number of meshes solved on.
    pub iterations: usize,
    pub marker: Marker,
    /// Stop once `η` falls to or below this value.
    pub target_eta: f64,
    /// Compare against the Stenberg postprocessing on every mesh.
    pub check_equivalence: bool,
    /// Export meshes at these iterations into `export_dir`.
    pub export_iterations: Vec<usize>,
    pub export_dir: Option<PathBuf>,
    /// Keep meshes and postprocessed fields in the records.
    pub keep_fields: bool,
}

impl LoopParams {
    pub fn new(p: usize, mode: RefinementMode, iterations: usize) -> Self {
        LoopParams {
            p,
            mode,
            theta: DEFAULT_THETA,
            iterations,
            marker: Marker::Eta,
            target_eta: 0.0,
            check_equivalence: false,
            export_iterations: Vec::new(),
            export_dir: None,
            keep_fields: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.p) {
            return Err(Error::InvalidDegree(format!("p = {} (expected 1, 2 or 3)", self.p)));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidParameter("iterations must be at least 1".into()));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::InvalidParameter(format!("bulk fraction {} outside (0, 1)", self.theta)));
        }
        Ok(())
    }
}

/// One iteration of the loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    #[serde(rename = "Nel")]
    pub nel: usize,
    pub flux_dofs: usize,
    pub scalar_dofs: usize,
    pub eta_tilde: f64,
    pub eta: f64,
    pub err_full: Option<f64>,
    pub err_flux_0h: Option<f64>,
    pub err_h1h: Option<f64>,
    pub err_l2_u: Option<f64>,
    pub err_l2_nu: Option<f64>,
    pub effectivity: Option<f64>,
    pub delta: Option<f64>,
    pub delta_degenerate: bool,
    /// `max_K ‖ν_h - ũ_h‖_K / ‖ũ_h‖_Ω` against the Stenberg postprocessing.
    pub equivalence_gap: Option<f64>,
    pub relative_residual: f64,
    pub marked: usize,
    /// Centroids of the marked elements.
    pub marked_centroids: Vec<[f64; 2]>,
    pub mesh_stem: Option<String>,
    #[serde(skip)]
    pub report: Option<EstimatorReport>,
    #[serde(skip)]
    pub fields: Option<(TriMesh, PostprocResult)>,
}

/// A finished (or aborted) run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptiveRun {
    pub params: LoopParams,
    pub problem: String,
    pub records: Vec<IterationRecord>,
    /// Set when the loop stopped on a failure; the records so far are kept.
    pub failure: Option<String>,
    pub converged: bool,
}

impl AdaptiveRun {
    pub fn nel(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.nel).collect()
    }
}

/// `max_K ‖a - b‖_K / ‖b‖_Ω` for two fields with coefficients in the
/// orthonormal element basis.
pub fn max_relative_gap(mesh: &TriMesh, a: &[f64], b: &[f64]) -> f64 {
    let n = mesh.num_triangles();
    let m = a.len() / n.max(1);
    let mut worst: f64 = 0.0;
    let mut total = 0.0;
    for t in 0..n {
        let det = mesh.map(t).det;
        let (la, lb) = (&a[t * m..(t + 1) * m], &b[t * m..(t + 1) * m]);
        let d: f64 = la.iter().zip(lb).map(|(x, y)| (x - y).powi(2)).sum();
        worst = worst.max(det * d);
        total += det * lb.iter().map(|y| y * y).sum::<f64>();
    }
    if total == 0.0 {
        worst.sqrt()
    } else {
        (worst / total).sqrt()
    }
}

fn step(mesh: &TriMesh, problem: &ProblemSpec, params: &LoopParams, iter: usize) -> Result<(IterationRecord, Vec<usize>)> {
    let sol = solve_problem(mesh, params.p, problem)?;
    let with_theta = problem.exact.is_some();
    let post = postprocess(mesh, &sol, with_theta)?;
    let report = estimate(mesh, problem, &sol, &post)?;
    let equivalence_gap = if params.check_equivalence {
        Some(max_relative_gap(mesh, &post.nu, &stenberg_oracle(mesh, &sol)?))
    } else {
        None
    };
    let marked = match params.mode {
        RefinementMode::Uniform => (0..mesh.num_triangles()).collect(),
        RefinementMode::Adaptive => dorfler_mark(
            match params.marker {
                Marker::Eta => &report.eta,
                Marker::EtaTilde => &report.eta_tilde,
            },
            params.theta,
        )?,
    };
    let mut mesh_stem = None;
    if let Some(dir) = &params.export_dir {
        if params.export_iterations.contains(&iter) {
            let stem = format!("mesh_p{}_iter{iter}", params.p);
            mesh.export(dir, &stem, &problem.name)?;
            mesh_stem = Some(stem);
        }
    }
    let e = report.errors.as_ref();
    let record = IterationRecord {
        iter,
        nel: mesh.num_triangles(),
        flux_dofs: sol.flux.dim(),
        scalar_dofs: sol.scalar.dim(),
        eta_tilde: report.eta_tilde_global,
        eta: report.eta_global,
        err_full: e.map(|e| e.full),
        err_flux_0h: e.map(|e| e.flux_0h_global),
        err_h1h: e.map(|e| e.h1h_global),
        err_l2_u: e.map(|e| e.l2_u),
        err_l2_nu: e.map(|e| e.l2_nu),
        effectivity: e.map(|e| e.effectivity),
        delta: e.and_then(|e| e.delta),
        delta_degenerate: e.is_some_and(|e| e.delta_degenerate),
        equivalence_gap,
        relative_residual: sol.diagnostics.relative_residual,
        marked: marked.len(),
        marked_centroids: marked.iter().map(|&t| mesh.centroid(t)).collect(),
        mesh_stem,
        report: Some(report),
        fields: params.keep_fields.then(|| (mesh.clone(), post)),
    };
    Ok((record, marked))
}

/// Run the loop from the preset initial mesh of `problem`.
pub fn run_adaptive(problem: &ProblemSpec, params: &LoopParams) -> Result<AdaptiveRun> {
    params.validate()?;
    let mesh = build_initial_mesh(&problem.domain, problem.initial_elements)?;
    Ok(run_from_mesh(mesh, problem, params))
}

/// Run the loop from a given mesh. Failures stop the loop and are reported in
/// the returned run together with the completed iterations.
pub fn run_from_mesh(mut mesh: TriMesh, problem: &ProblemSpec, params: &LoopParams) -> AdaptiveRun {
    let mut run = AdaptiveRun {
        params: params.clone(),
        problem: problem.name.clone(),
        records: Vec::new(),
        failure: None,
        converged: false,
    };
    for iter in 0..params.iterations {
        match step(&mesh, problem, params, iter) {
            Ok((record, marked)) => {
                let done = record.eta <= params.target_eta || marked.is_empty();
                run.records.push(record);
                if done {
                    run.converged = true;
                    break;
                }
                if iter + 1 < params.iterations {
                    mesh = match params.mode {
                        RefinementMode::Uniform => mesh.refine_uniform(),
                        RefinementMode::Adaptive => mesh.refine(&marked),
                    };
                }
            }
            Err(e) => {
                run.failure = Some(e.to_string());
                break;
            }
        }
    }
    run
}
