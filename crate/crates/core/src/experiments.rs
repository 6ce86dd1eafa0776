//! Experiment configuration, batch execution and output artifacts.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adaptivity::{run_adaptive, AdaptiveRun, IterationRecord, LoopParams, Marker, RefinementMode, DEFAULT_THETA};
use crate::error::{Error, Result};
use crate::problem::{custom_problem, preset, CustomSolution, ExperimentId, ProblemSpec};

/// Header of the convergence table.
pub const CSV_HEADER: &str = "iter,Nel,sqrtNel,eta,eta_tilde,err_full,err_L2_u,err_L2_nu,delta,effectivity";

/// Meshes before this index are left out of slope fits.
pub const FIT_SKIP: usize = 2;

/// Polygon and solution for the `custom` experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomSpec {
    /// Counter-clockwise boundary vertices.
    pub boundary: Vec<[f64; 2]>,
    #[serde(default)]
    pub solution: CustomSolution,
    #[serde(default = "default_custom_elements")]
    pub initial_elements: usize,
}

fn default_custom_elements() -> usize {
    32
}

fn default_p() -> Vec<usize> {
    vec![1, 2, 3]
}

fn default_theta() -> f64 {
    DEFAULT_THETA
}

fn default_iterations() -> usize {
    10
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_dumps() -> Vec<usize> {
    vec![0, 5, 10]
}

fn default_mode() -> RefinementMode {
    RefinementMode::Adaptive
}

fn default_marker() -> Marker {
    Marker::Eta
}

/// Everything needed to reproduce a batch of runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    #[serde(default = "default_p")]
    pub p: Vec<usize>,
    #[serde(default = "default_mode")]
    pub mode: RefinementMode,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_marker")]
    pub marker: Marker,
    #[serde(default = "default_dumps")]
    pub dump_iterations: Vec<usize>,
    /// Worker threads; 1 gives bitwise reproducible output.
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub custom: Option<CustomSpec>,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentId) -> Self {
        ExperimentConfig {
            experiment,
            p: default_p(),
            mode: default_mode(),
            theta: default_theta(),
            iterations: default_iterations(),
            out: default_out(),
            seed: 0,
            marker: default_marker(),
            dump_iterations: default_dumps(),
            threads: None,
            custom: None,
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p.is_empty() {
            return Err(Error::InvalidParameter("no polynomial degree given".into()));
        }
        if let Some(p) = self.p.iter().find(|p| !(1..=3).contains(*p)) {
            return Err(Error::InvalidDegree(format!("p = {p} (expected 1, 2 or 3)")));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidParameter("iterations must be at least 1".into()));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::InvalidParameter(format!("bulk fraction {} outside (0, 1)", self.theta)));
        }
        if self.experiment == ExperimentId::Custom && self.custom.is_none() {
            return Err(Error::InvalidParameter("custom experiment needs a 'custom' section".into()));
        }
        Ok(())
    }

    pub fn problem(&self) -> Result<ProblemSpec> {
        match (self.experiment, &self.custom) {
            (ExperimentId::Custom, Some(c)) => Ok(custom_problem(c.boundary.clone(), c.solution, c.initial_elements)),
            (ExperimentId::Custom, None) => Err(Error::InvalidParameter("custom experiment needs a 'custom' section".into())),
            (id, _) => preset(id),
        }
    }

    pub fn loop_params(&self, p: usize) -> LoopParams {
        let mut params = LoopParams::new(p, self.mode, self.iterations);
        params.theta = self.theta;
        params.marker = self.marker;
        params.export_iterations = self.dump_iterations.clone();
        params.export_dir = Some(self.run_dir(p).join("meshes"));
        params
    }

    pub fn run_dir(&self, p: usize) -> PathBuf {
        self.out.join(format!("{}_{}_p{p}", self.experiment, self.mode))
    }
}

/// Least-squares slope of `-log(err)` against `log(sqrt(Nel))`, so that
/// `err ~ Nel^{-s/2}` gives `s`. Non-positive errors are skipped; fewer than
/// two usable points give `None`.
pub fn fit_slope(nel: &[usize], err: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = nel
        .iter()
        .zip(err)
        .filter(|(_, e)| e.is_finite() && **e > 0.0)
        .map(|(n, e)| ((*n as f64).sqrt().ln(), e.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(-sxy / sxx)
}

/// Fitted slopes of one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Slopes {
    pub eta: Option<f64>,
    pub eta_tilde: Option<f64>,
    pub err_full: Option<f64>,
    pub err_flux_0h: Option<f64>,
    pub err_h1h: Option<f64>,
    pub err_l2_u: Option<f64>,
    pub err_l2_nu: Option<f64>,
    /// Index of the first mesh used in the fit.
    pub first_mesh: usize,
}

/// Slopes over the records from index `skip` on.
pub fn slopes(records: &[IterationRecord], skip: usize) -> Slopes {
    let rs = records.get(skip..).unwrap_or(&[]);
    let nel: Vec<usize> = rs.iter().map(|r| r.nel).collect();
    let fit = |f: &dyn Fn(&IterationRecord) -> Option<f64>| {
        let v: Option<Vec<f64>> = rs.iter().map(f).collect();
        v.and_then(|v| fit_slope(&nel, &v))
    };
    Slopes {
        eta: fit(&|r| Some(r.eta)),
        eta_tilde: fit(&|r| Some(r.eta_tilde)),
        err_full: fit(&|r| r.err_full),
        err_flux_0h: fit(&|r| r.err_flux_0h),
        err_h1h: fit(&|r| r.err_h1h),
        err_l2_u: fit(&|r| r.err_l2_u),
        err_l2_nu: fit(&|r| r.err_l2_nu),
        first_mesh: skip,
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
}

/// Convergence table in the documented CSV schema.
pub fn convergence_csv(records: &[IterationRecord]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&format!(
            "{},{},{:.16e},{:.16e},{:.16e},{},{},{},{},{}\n",
            r.iter,
            r.nel,
            (r.nel as f64).sqrt(),
            r.eta,
            r.eta_tilde,
            fmt_opt(r.err_full),
            fmt_opt(r.err_l2_u),
            fmt_opt(r.err_l2_nu),
            fmt_opt(r.delta),
            fmt_opt(r.effectivity),
        ));
    }
    s
}

/// One JSON object per line and iteration.
pub fn json_lines(records: &[IterationRecord]) -> Result<String> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}

/// Outcome of one degree.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub p: usize,
    pub directory: PathBuf,
    pub iterations: usize,
    pub final_nel: usize,
    pub slopes: Slopes,
    pub failure: Option<String>,
    pub converged: bool,
    /// Artifacts that could not be written.
    pub io_errors: Vec<String>,
}

/// Outcome of a batch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub config: ExperimentConfig,
    pub problem: String,
    pub slope_fit: String,
    pub runs: Vec<RunSummary>,
}

fn write_artifact(path: &Path, contents: &str, errors: &mut Vec<String>) {
    let res = path
        .parent()
        .map(fs::create_dir_all)
        .transpose()
        .and_then(|_| fs::File::create(path))
        .and_then(|mut f| f.write_all(contents.as_bytes()));
    if let Err(e) = res {
        errors.push(format!("{}: {e}", path.display()));
    }
}

/// Run the configured batch and return the in-memory runs with the summary.
pub fn run_batch(config: &ExperimentConfig) -> Result<(ExperimentSummary, Vec<AdaptiveRun>)> {
    config.validate()?;
    let problem = config.problem()?;
    let work = || -> Result<(ExperimentSummary, Vec<AdaptiveRun>)> {
        let mut runs = Vec::new();
        let mut summaries = Vec::new();
        for &p in &config.p {
            let mut io_errors = Vec::new();
            let dir = config.run_dir(p);
            let mut params = config.loop_params(p);
            if let Err(e) = fs::create_dir_all(dir.join("meshes")) {
                io_errors.push(format!("{}: {e}", dir.display()));
                params.export_dir = None;
            }
            let run = run_adaptive(&problem, &params)?;
            write_artifact(&dir.join("convergence.csv"), &convergence_csv(&run.records), &mut io_errors);
            write_artifact(&dir.join("log.jsonl"), &json_lines(&run.records)?, &mut io_errors);
            let summary = RunSummary {
                p,
                directory: dir.clone(),
                iterations: run.records.len(),
                final_nel: run.records.last().map_or(0, |r| r.nel),
                slopes: slopes(&run.records, FIT_SKIP),
                failure: run.failure.clone(),
                converged: run.converged,
                io_errors,
            };
            summaries.push(summary);
            runs.push(run);
        }
        let mut summary = ExperimentSummary {
            config: config.clone(),
            problem: problem.name.clone(),
            slope_fit: format!("least squares of log error against log sqrt(Nel), meshes {FIT_SKIP} onward"),
            runs: summaries,
        };
        let text = serde_json::to_string_pretty(&summary)?;
        let mut errs = Vec::new();
        write_artifact(&config.out.join(format!("summary_{}_{}.json", config.experiment, config.mode)), &text, &mut errs);
        if let Some(first) = summary.runs.first_mut() {
            first.io_errors.extend(errs);
        }
        Ok((summary, runs))
    };
    match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    }
}

/// Run the configured batch, writing all artifacts under `config.out`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary> {
    run_batch(config).map(|(s, _)| s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let nel = [8, 32, 128, 512];
        let err: Vec<f64> = nel.iter().map(|n| 3.0 * (*n as f64).powf(-1.5)).collect();
        assert!((fit_slope(&nel, &err).unwrap() - 3.0).abs() < 1e-12);
        assert!(fit_slope(&[4], &[1.0]).is_none());
        assert!(fit_slope(&[4, 4], &[1.0, 2.0]).is_none());
    }

    #[test]
    fn config_defaults_and_validation() {
        let c: ExperimentConfig = serde_json::from_str(r#"{"experiment":"lshape"}"#).unwrap();
        assert_eq!(c.p, vec![1, 2, 3]);
        assert_eq!(c.mode, RefinementMode::Adaptive);
        assert_eq!(c.theta, 0.5);
        assert_eq!(c.dump_iterations, vec![0, 5, 10]);
        c.validate().unwrap();
        let mut bad = c.clone();
        bad.p = vec![4];
        assert!(bad.validate().is_err());
        let mut bad = c.clone();
        bad.theta = 1.0;
        assert!(bad.validate().is_err());
        let bad = ExperimentConfig::new(ExperimentId::Custom);
        assert!(bad.validate().is_err());
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"experiment":"nope"}"#).is_err());
    }

    #[test]
    fn csv_has_documented_header() {
        let text = convergence_csv(&[]);
        assert_eq!(text.trim_end(), CSV_HEADER);
    }
}
