//! Assembly and direct solution of the global mixed system
//!
//! ```text
//! [ M      -Bᵀ ] [q]   [G]
//! [ B - C   0  ] [u] = [F]
//! ```
//!
//! with `M` the flux mass matrix, `B` the divergence block, `C` the
//! advection block (absent for pure diffusion), `G = -∮ u_D φ·n` and
//! `F = (f, ψ)`.

use std::path::Path;

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::bdm::{BdmSpace, DgSpace};
use crate::error::{Error, Result};
use crate::mesh::TriMesh;
use crate::problem::ProblemSpec;
use crate::quadrature::DataQuadrature;

/// Exactness of the rules used for integrals of non-polynomial data.
pub fn data_exactness(p: usize) -> usize {
    2 * p + 8
}

pub fn data_quadrature(p: usize, problem: &ProblemSpec) -> Result<DataQuadrature> {
    DataQuadrature::new(data_exactness(p), problem.singular_point)
}

pub struct SaddleSystem {
    pub flux: BdmSpace,
    pub scalar: DgSpace,
    pub mass: SparseColMat<usize, f64>,
    pub div: SparseColMat<usize, f64>,
    pub advection: Option<SparseColMat<usize, f64>>,
    /// Boundary load `-∮ u_D φ_j·n`.
    pub g: Vec<f64>,
    /// Source load `(f, ψ_i)`.
    pub f: Vec<f64>,
}

impl SaddleSystem {
    pub fn n_flux(&self) -> usize {
        self.flux.dim()
    }

    pub fn n_scalar(&self) -> usize {
        self.scalar.dim()
    }

    pub fn dim(&self) -> usize {
        self.n_flux() + self.n_scalar()
    }

    /// The full block matrix.
    pub fn matrix(&self) -> Result<SparseColMat<usize, f64>> {
        let nq = self.n_flux();
        let mut trip = Vec::new();
        for t in self.mass.triplet_iter() {
            trip.push(Triplet::new(t.row, t.col, *t.val));
        }
        for t in self.div.triplet_iter() {
            trip.push(Triplet::new(nq + t.row, t.col, *t.val));
            trip.push(Triplet::new(t.col, nq + t.row, -*t.val));
        }
        if let Some(c) = &self.advection {
            for t in c.triplet_iter() {
                trip.push(Triplet::new(nq + t.row, t.col, -*t.val));
            }
        }
        SparseColMat::try_new_from_triplets(self.dim(), self.dim(), &trip)
            .map_err(|e| Error::DimensionMismatch(format!("block assembly failed: {e:?}")))
    }

    pub fn rhs(&self) -> Vec<f64> {
        self.g.iter().chain(&self.f).copied().collect()
    }
}

fn assemble_common(mesh: &TriMesh, p: usize, problem: &ProblemSpec) -> Result<SaddleSystem> {
    if mesh.num_triangles() == 0 {
        return Err(Error::InvalidMesh("empty mesh".into()));
    }
    let flux = BdmSpace::new(mesh, p)?;
    let scalar = DgSpace::new(mesh, p - 1);
    let rules = data_quadrature(p, problem)?;
    let mass = flux.mass_matrix(mesh)?;
    let div = flux.divergence_matrix(&scalar)?;
    let g = flux.interpolate_boundary_term(mesh, problem.u_d.as_ref(), &rules);
    let f = scalar.load_vector(mesh, problem.f.as_ref(), &rules);
    Ok(SaddleSystem {
        flux,
        scalar,
        mass,
        div,
        advection: None,
        g,
        f,
    })
}

/// Mixed Poisson system; any advection field in `problem` is ignored.
pub fn assemble_poisson(mesh: &TriMesh, p: usize, problem: &ProblemSpec) -> Result<SaddleSystem> {
    assemble_common(mesh, p, problem)
}

/// Mixed advection-diffusion system with the constant field `problem.beta`.
pub fn assemble_advection_diffusion(mesh: &TriMesh, p: usize, problem: &ProblemSpec) -> Result<SaddleSystem> {
    let mut sys = assemble_common(mesh, p, problem)?;
    sys.advection = Some(sys.flux.advection_matrix(mesh, &sys.scalar, problem.beta)?);
    Ok(sys)
}

/// Dispatch on whether the problem has advection.
pub fn assemble(mesh: &TriMesh, p: usize, problem: &ProblemSpec) -> Result<SaddleSystem> {
    if problem.has_advection() {
        assemble_advection_diffusion(mesh, p, problem)
    } else {
        assemble_poisson(mesh, p, problem)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub unknowns: usize,
    pub nonzeros: usize,
    /// `‖Ax - b‖ / max(‖b‖, ‖A‖_max ‖x‖)`.
    pub relative_residual: f64,
    pub refinement_steps: usize,
}

#[derive(Debug, Clone)]
pub struct MixedSolution {
    pub flux: BdmSpace,
    pub scalar: DgSpace,
    pub q: Vec<f64>,
    pub u: Vec<f64>,
    pub diagnostics: SolverDiagnostics,
}

impl MixedSolution {
    pub fn degree(&self) -> usize {
        self.flux.degree()
    }

    pub fn num_elements(&self) -> usize {
        self.flux.num_elements()
    }

    pub fn dump(&self) -> SolutionDump {
        SolutionDump {
            header: DumpHeader {
                p: self.degree(),
                nel: self.num_elements(),
                flux_dofs: self.q.len(),
                scalar_dofs: self.u.len(),
            },
            q: self.q.clone(),
            u: self.u.clone(),
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(&self.dump())?)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpHeader {
    pub p: usize,
    #[serde(rename = "Nel")]
    pub nel: usize,
    pub flux_dofs: usize,
    pub scalar_dofs: usize,
}

/// Serialized coefficient vectors of a [`MixedSolution`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionDump {
    pub header: DumpHeader,
    pub q: Vec<f64>,
    pub u: Vec<f64>,
}

fn residual(a: &SparseColMat<usize, f64>, x: &Mat<f64>, b: &Mat<f64>) -> Mat<f64> {
    let ax = a * x;
    Mat::from_fn(b.nrows(), 1, |i, _| b[(i, 0)] - ax[(i, 0)])
}

fn norm(v: &Mat<f64>) -> f64 {
    (0..v.nrows()).map(|i| v[(i, 0)] * v[(i, 0)]).sum::<f64>().sqrt()
}

/// Sparse LU solve of `a x = b` with up to two steps of iterative refinement.
pub fn solve_sparse(a: &SparseColMat<usize, f64>, b: &[f64]) -> Result<(Vec<f64>, SolverDiagnostics)> {
    let n = b.len();
    let lu = a.sp_lu().map_err(|e| Error::Singular(format!("sparse LU failed: {e:?}")))?;
    let rhs = Mat::from_fn(n, 1, |i, _| b[i]);
    let mut x = lu.solve(&rhs);
    if let Some(i) = (0..n).find(|&i| !x[(i, 0)].is_finite()) {
        return Err(Error::Singular(format!("zero pivot: unknown {i} is not finite after factorization")));
    }
    let amax = a.triplet_iter().fold(0.0f64, |m, t| m.max(t.val.abs()));
    let scale = |x: &Mat<f64>| norm(&rhs).max(amax * norm(x)).max(f64::MIN_POSITIVE);
    let mut r = residual(a, &x, &rhs);
    let mut rel = norm(&r) / scale(&x);
    let mut steps = 0;
    while rel > 1e-14 && steps < 2 {
        let dx = lu.solve(&r);
        x += &dx;
        r = residual(a, &x, &rhs);
        rel = norm(&r) / scale(&x);
        steps += 1;
    }
    if !rel.is_finite() || rel > 1e-8 {
        let worst = (0..n).max_by(|&i, &j| r[(i, 0)].abs().total_cmp(&r[(j, 0)].abs())).unwrap_or(0);
        return Err(Error::Singular(format!(
            "relative residual {rel:.3e} after factorization (largest at row {worst})"
        )));
    }
    let diag = SolverDiagnostics {
        unknowns: n,
        nonzeros: a.compute_nnz(),
        relative_residual: rel,
        refinement_steps: steps,
    };
    Ok(((0..n).map(|i| x[(i, 0)]).collect(), diag))
}

pub fn solve(system: SaddleSystem) -> Result<MixedSolution> {
    let a = system.matrix()?;
    let (x, diagnostics) = solve_sparse(&a, &system.rhs())?;
    let nq = system.n_flux();
    Ok(MixedSolution {
        flux: system.flux,
        scalar: system.scalar,
        q: x[..nq].to_vec(),
        u: x[nq..].to_vec(),
        diagnostics,
    })
}

/// Assemble and solve in one step.
pub fn solve_problem(mesh: &TriMesh, p: usize, problem: &ProblemSpec) -> Result<MixedSolution> {
    solve(assemble(mesh, p, problem)?)
}
