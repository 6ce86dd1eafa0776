use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use amfem::adaptivity::{Marker, RefinementMode};
use amfem::experiments::{run_experiment, ExperimentConfig};
use amfem::fortin::{fortin_sweep, scaled_trace_inequality_check};
use amfem::problem::ExperimentId;
use amfem::verify::run_checks;

#[derive(Parser)]
#[command(name = "amfem", version, about = "Adaptive mixed finite elements with residual-minimization postprocessing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write convergence tables, logs and mesh dumps.
    Run(RunArgs),
    /// Run the identity and property checks.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Report on the boundary Fortin operator and the scaled trace inequality.
    Fortin {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        triangles: usize,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON file with the same fields as the flags; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    experiment: Option<ExperimentId>,
    /// Comma-separated polynomial degrees.
    #[arg(long, value_delimiter = ',')]
    p: Option<Vec<usize>>,
    #[arg(long)]
    mode: Option<RefinementMode>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Indicator used for marking: eta or eta_tilde.
    #[arg(long)]
    marker: Option<Marker>,
    #[arg(long)]
    threads: Option<usize>,
}

fn build_config(args: RunArgs) -> amfem::Result<ExperimentConfig> {
    let mut cfg = match (&args.config, args.experiment) {
        (Some(path), _) => ExperimentConfig::from_json_file(path)?,
        (None, Some(id)) => ExperimentConfig::new(id),
        (None, None) => return Err(amfem::Error::InvalidParameter("give --experiment or --config".into())),
    };
    if let Some(id) = args.experiment {
        cfg.experiment = id;
    }
    if let Some(p) = args.p {
        cfg.p = p;
    }
    if let Some(m) = args.mode {
        cfg.mode = m;
    }
    if let Some(t) = args.theta {
        cfg.theta = t;
    }
    if let Some(i) = args.iters {
        cfg.iterations = i;
    }
    if let Some(o) = args.out {
        cfg.out = o;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(m) = args.marker {
        cfg.marker = m;
    }
    if args.threads.is_some() {
        cfg.threads = args.threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn fmt_slope(s: Option<f64>) -> String {
    s.map_or("-".into(), |v| format!("{v:.2}"))
}

fn run(cli: Cli) -> amfem::Result<bool> {
    match cli.command {
        Command::Run(args) => {
            let cfg = build_config(args)?;
            let summary = run_experiment(&cfg)?;
            let mut ok = true;
            for r in &summary.runs {
                println!(
                    "p={} meshes={} final Nel={} slopes: full {} L2(u-u_h) {} L2(u-nu_h) {} eta {}  -> {}",
                    r.p,
                    r.iterations,
                    r.final_nel,
                    fmt_slope(r.slopes.err_full),
                    fmt_slope(r.slopes.err_l2_u),
                    fmt_slope(r.slopes.err_l2_nu),
                    fmt_slope(r.slopes.eta),
                    r.directory.display()
                );
                if let Some(f) = &r.failure {
                    eprintln!("p={}: stopped early: {f}", r.p);
                    ok = false;
                }
                for e in &r.io_errors {
                    eprintln!("p={}: could not write {e}", r.p);
                    ok = false;
                }
            }
            Ok(ok)
        }
        Command::Verify { seed } => {
            let checks = run_checks(seed)?;
            let mut ok = true;
            for c in &checks {
                println!("{} {}: {:.3e} (tolerance {:.0e})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value, c.tolerance);
                ok &= c.passed;
            }
            Ok(ok)
        }
        Command::Fortin { seed, triangles, out } => {
            let fortin = fortin_sweep(triangles, 10, 4, seed)?;
            let trace: Vec<_> = (1..=3).map(|p| scaled_trace_inequality_check(p, triangles, seed)).collect::<amfem::Result<_>>()?;
            let report = serde_json::json!({ "fortin": fortin, "trace_inequality": trace });
            let text = serde_json::to_string_pretty(&report)?;
            match out {
                Some(path) => std::fs::write(path, text)?,
                None => println!("{text}"),
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
