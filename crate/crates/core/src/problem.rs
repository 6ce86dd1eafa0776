//! Problem data and the built-in benchmark presets.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::DomainSpec;

pub type ScalarField = Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>;
pub type VectorField = Arc<dyn Fn([f64; 2]) -> [f64; 2] + Send + Sync>;

/// Exact pair `(u, q = -∇u)`.
#[derive(Clone)]
pub struct ExactSolution {
    pub u: ScalarField,
    pub q: VectorField,
}

/// `q + ∇u = 0`, `div q - β·q = f` in the domain, `u = u_D` on its boundary.
#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub domain: DomainSpec,
    pub f: ScalarField,
    pub u_d: ScalarField,
    pub beta: [f64; 2],
    pub exact: Option<ExactSolution>,
    /// Point where the exact solution is not smooth; data integrals on cells
    /// and edges touching it use graded quadrature.
    pub singular_point: Option<[f64; 2]>,
    /// Element count requested for the initial mesh.
    pub initial_elements: usize,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("beta", &self.beta)
            .field("exact", &self.exact.is_some())
            .field("singular_point", &self.singular_point)
            .field("initial_elements", &self.initial_elements)
            .finish()
    }
}

impl ProblemSpec {
    pub fn has_advection(&self) -> bool {
        self.beta != [0.0, 0.0]
    }

    /// Problem whose data are generated by an exact solution with
    /// `-Δu + β·∇u = f`; `lap` returns `Δu`.
    pub fn manufactured(
        name: &str,
        domain: DomainSpec,
        u: impl Fn([f64; 2]) -> f64 + Send + Sync + 'static,
        grad: impl Fn([f64; 2]) -> [f64; 2] + Send + Sync + 'static,
        lap: impl Fn([f64; 2]) -> f64 + Send + Sync + 'static,
        beta: [f64; 2],
    ) -> Self {
        let u: ScalarField = Arc::new(u);
        let grad: VectorField = Arc::new(grad);
        let g = grad.clone();
        let f: ScalarField = Arc::new(move |x| {
            let d = g(x);
            -lap(x) + beta[0] * d[0] + beta[1] * d[1]
        });
        let q: VectorField = Arc::new(move |x| {
            let d = grad(x);
            [-d[0], -d[1]]
        });
        ProblemSpec {
            name: name.to_string(),
            domain,
            f,
            u_d: u.clone(),
            beta,
            exact: Some(ExactSolution { u, q }),
            singular_point: None,
            initial_elements: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentId {
    Smooth,
    Lshape,
    Advdiff,
    Custom,
}

impl FromStr for ExperimentId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smooth" => Ok(ExperimentId::Smooth),
            "lshape" => Ok(ExperimentId::Lshape),
            "advdiff" => Ok(ExperimentId::Advdiff),
            "custom" => Ok(ExperimentId::Custom),
            other => Err(Error::UnknownExperiment(other.to_string())),
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ExperimentId::Smooth => "smooth",
            ExperimentId::Lshape => "lshape",
            ExperimentId::Advdiff => "advdiff",
            ExperimentId::Custom => "custom",
        };
        f.write_str(s)
    }
}

/// Closed-form solution used by the `custom` experiment on a user polygon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CustomSolution {
    /// `u = x`.
    Linear,
    /// `u = e^x sin y`, harmonic.
    #[default]
    Harmonic,
    /// `u = sin(πx) sin(πy)`.
    Sine,
}

/// Péclet number of the advection-diffusion benchmark.
pub const PECLET: f64 = 1000.0 / 3.0;

/// Boundary-layer profile `g(s) = s + (e^{Ps} - 1)/(1 - e^P)` and its first
/// two derivatives, written with `e^{P(s-1)}` so nothing overflows.
pub fn layer_profile(s: f64, p: f64) -> (f64, f64, f64) {
    let denom = -(-p).exp_m1(); // 1 - e^{-P}
    let e = (p * (s - 1.0)).exp();
    let tail = (-p).exp();
    let g = s - (e - tail) / denom;
    let dg = 1.0 - p * e / denom;
    let ddg = -p * p * e / denom;
    (g, dg, ddg)
}

/// Corner-singular harmonic function `r^{2/3} sin(2(π - ϑ)/3)` with
/// `ϑ = atan2(y, x) ∈ (-π/2, π]` on the L-shaped domain, and its gradient.
pub fn lshape_solution(x: [f64; 2]) -> (f64, [f64; 2]) {
    let r = x[0].hypot(x[1]);
    if r == 0.0 {
        return (0.0, [0.0, 0.0]);
    }
    let mut th = x[1].atan2(x[0]);
    if th < -PI / 2.0 {
        th += 2.0 * PI;
    }
    let a = 2.0 / 3.0;
    let ra = r.powf(a);
    let s = (a * (PI - th)).sin();
    let c = (a * (PI - th)).cos();
    let du_dr = a * r.powf(a - 1.0) * s;
    let du_dth = -a * ra * c;
    let (ct, st) = (x[0] / r, x[1] / r);
    let grad = [du_dr * ct - du_dth * st / r, du_dr * st + du_dth * ct / r];
    (ra * s, grad)
}

/// Built-in problem for `id`; `custom` requires a polygon.
pub fn preset(id: ExperimentId) -> Result<ProblemSpec> {
    match id {
        ExperimentId::Smooth => {
            let mut p = ProblemSpec::manufactured(
                "smooth",
                DomainSpec::unit_square(),
                |x| x[0] * (1.0 - x[0]) * (PI * x[1]).sin(),
                |x| {
                    [
                        (1.0 - 2.0 * x[0]) * (PI * x[1]).sin(),
                        PI * x[0] * (1.0 - x[0]) * (PI * x[1]).cos(),
                    ]
                },
                |x| (-2.0 - PI * PI * x[0] * (1.0 - x[0])) * (PI * x[1]).sin(),
                [0.0, 0.0],
            );
            p.u_d = Arc::new(|_| 0.0);
            p.initial_elements = 8;
            Ok(p)
        }
        ExperimentId::Lshape => {
            let u: ScalarField = Arc::new(|x| lshape_solution(x).0);
            let q: VectorField = Arc::new(|x| {
                let g = lshape_solution(x).1;
                [-g[0], -g[1]]
            });
            Ok(ProblemSpec {
                name: "lshape".into(),
                domain: DomainSpec::l_shape(),
                f: Arc::new(|_| 0.0),
                u_d: u.clone(),
                beta: [0.0, 0.0],
                exact: Some(ExactSolution { u, q }),
                singular_point: Some([0.0, 0.0]),
                initial_elements: 96,
            })
        }
        ExperimentId::Advdiff => {
            let pe = PECLET;
            let mut p = ProblemSpec::manufactured(
                "advdiff",
                DomainSpec::unit_square(),
                move |x| layer_profile(x[0], pe).0 * layer_profile(x[1], pe).0,
                move |x| {
                    let (gx, dx, _) = layer_profile(x[0], pe);
                    let (gy, dy, _) = layer_profile(x[1], pe);
                    [dx * gy, gx * dy]
                },
                move |x| {
                    let (gx, _, ddx) = layer_profile(x[0], pe);
                    let (gy, _, ddy) = layer_profile(x[1], pe);
                    ddx * gy + gx * ddy
                },
                [pe, pe],
            );
            // -g'' + P g' = P, so f = P (g(x) + g(y)); u vanishes on the boundary.
            p.f = Arc::new(move |x| pe * (layer_profile(x[0], pe).0 + layer_profile(x[1], pe).0));
            p.u_d = Arc::new(|_| 0.0);
            p.initial_elements = 32;
            Ok(p)
        }
        ExperimentId::Custom => Err(Error::InvalidParameter(
            "the custom experiment needs a polygon; use custom_problem".into(),
        )),
    }
}

/// Problem on a user polygon with a closed-form solution.
pub fn custom_problem(boundary: Vec<[f64; 2]>, solution: CustomSolution, initial_elements: usize) -> ProblemSpec {
    let domain = DomainSpec::polygon(boundary);
    let mut p = match solution {
        CustomSolution::Linear => ProblemSpec::manufactured("custom", domain, |x| x[0], |_| [1.0, 0.0], |_| 0.0, [0.0, 0.0]),
        CustomSolution::Harmonic => ProblemSpec::manufactured(
            "custom",
            domain,
            |x| x[0].exp() * x[1].sin(),
            |x| [x[0].exp() * x[1].sin(), x[0].exp() * x[1].cos()],
            |_| 0.0,
            [0.0, 0.0],
        ),
        CustomSolution::Sine => ProblemSpec::manufactured(
            "custom",
            domain,
            |x| (PI * x[0]).sin() * (PI * x[1]).sin(),
            |x| [PI * (PI * x[0]).cos() * (PI * x[1]).sin(), PI * (PI * x[0]).sin() * (PI * x[1]).cos()],
            |x| -2.0 * PI * PI * (PI * x[0]).sin() * (PI * x[1]).sin(),
            [0.0, 0.0],
        ),
    };
    p.initial_elements = initial_elements;
    p
}

/// `u = x` on the unit square: representable exactly for every `p ≥ 1`.
pub fn linear_problem() -> ProblemSpec {
    let mut p = custom_problem(DomainSpec::unit_square().boundary, CustomSolution::Linear, 2);
    p.name = "linear".into();
    p.domain = DomainSpec::unit_square();
    p
}
