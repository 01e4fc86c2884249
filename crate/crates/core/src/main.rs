//! `wdrograph` command-line front end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use wdrograph::error::{Error, Result};
use wdrograph::experiment::{
    csv_bytes, learn, reliability_curve, run_sweep, select_best_epsilon, summarize, ExperimentConfig, LearnSettings,
    SolverKind, SweepOptions,
};
use wdrograph::general::qnorm_dual;
use wdrograph::io::{read_bundle, read_graph, read_labels, write_atomic, write_bundle, write_graph, write_json};
use wdrograph::metrics::{self, MetricsReport, DEFAULT_EDGE_THRESHOLD};
use wdrograph::synth::{generate_dataset, DatasetSpec};

#[derive(Parser)]
#[command(name = "wdrograph", version, about = "Wasserstein-robust graph Laplacian learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset bundle from a JSON spec.
    Generate {
        #[arg(long)]
        spec: PathBuf,
        /// Bundle directory to create (replaced if present).
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn a graph from the training columns of a bundle.
    Learn {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        /// Directory receiving graph.json and result.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a learned graph against the bundle's ground truth.
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        /// result.json from `learn`; enables certificate reliability.
        #[arg(long)]
        result: Option<PathBuf>,
        /// Predicted vertex labels, scored against labels.csv by NMI.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_EDGE_THRESHOLD)]
        threshold: f64,
        /// Output file; `.csv` selects CSV, anything else JSON. Stdout if absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a parameter sweep described by a JSON config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's out_dir.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Worker threads; WDRO_JOBS takes precedence.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Also write best_epsilon.csv with the max-mean-MCC radius per setting.
        #[arg(long)]
        select_best_epsilon: bool,
        /// Fill the runtime_ms column (output is then not reproducible).
        #[arg(long)]
        timing: bool,
    },
    /// Certificate reliability on the held-out columns across radii.
    Reliability {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        /// Comma-separated radii.
        #[arg(long, value_delimiter = ',', required = true)]
        epsilons: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long, default_value = "wdro-general")]
    solver: SolverKind,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.1)]
    eta: f64,
    /// Trace penalty weight (default 0.5 d).
    #[arg(long)]
    beta: Option<f64>,
    /// Transport cost norm order; `inf` allowed. The regularizer uses its conjugate.
    #[arg(long, default_value_t = 2.0, conflicts_with = "q")]
    p: f64,
    /// Regularizer norm order, as an alternative to --p.
    #[arg(long)]
    q: Option<f64>,
}

impl SolverArgs {
    fn settings(&self) -> Result<LearnSettings> {
        let q = match self.q {
            Some(q) if q >= 1.0 => q,
            Some(q) => return Err(Error::InvalidArgument(format!("q must be >= 1, got {q}"))),
            None => qnorm_dual(self.p)?,
        };
        Ok(LearnSettings { solver: self.solver, epsilon: self.epsilon, eta: self.eta, beta: self.beta, q })
    }
}

fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
}

fn emit<T: Serialize>(out: Option<&Path>, report: &T) -> Result<()> {
    let bytes = match out {
        Some(p) if p.extension().is_some_and(|e| e == "csv") => csv_bytes(std::slice::from_ref(report))?,
        _ => wdrograph::io::to_json_bytes(report)?,
    };
    match out {
        Some(p) => write_atomic(p, &bytes),
        None => {
            print!("{}", String::from_utf8_lossy(&bytes));
            Ok(())
        }
    }
}

fn jobs(flag: usize) -> Result<usize> {
    match std::env::var("WDRO_JOBS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| Error::InvalidArgument(format!("WDRO_JOBS must be a positive integer, got {v:?}"))),
        Err(_) => Ok(flag.max(1)),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { spec, out } => {
            let spec: DatasetSpec = read_config(&spec)?;
            let data = generate_dataset(&spec)?;
            write_bundle(&out, &data, &spec)
        }
        Command::Learn { dataset, solver, out } => {
            let bundle = read_bundle(&dataset)?;
            let outcome = learn(&bundle.train()?, &solver.settings()?)?;
            if !outcome.converged {
                eprintln!("warning: solver did not converge after {} iterations", outcome.iterations);
            }
            fs::create_dir_all(&out)?;
            write_graph(&out.join("graph.json"), &outcome.laplacian)?;
            write_json(&out.join("result.json"), &outcome)
        }
        Command::Evaluate { dataset, graph, result, labels, threshold, out } => {
            let bundle = read_bundle(&dataset)?;
            let truth = bundle
                .groundtruth
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("bundle has no ground truth graph".into()))?;
            let learned = read_graph(&graph)?;
            let reliability = match result {
                Some(path) => {
                    let v: serde_json::Value = read_config(&path)?;
                    let field = |k: &str| {
                        v.get(k)
                            .and_then(serde_json::Value::as_f64)
                            .ok_or_else(|| Error::Format(format!("{}: missing numeric {k}", path.display())))
                    };
                    let (r_star, eta) = (field("worst_case_risk")?, field("eta")?);
                    Some(metrics::reliability(&bundle.test()?, &learned, eta, r_star)?)
                }
                None => None,
            };
            let nmi = match (labels, &bundle.labels) {
                (Some(path), Some(truth_labels)) => Some(metrics::nmi(&read_labels(&path)?, truth_labels)?),
                (Some(_), None) => return Err(Error::InvalidArgument("bundle has no labels.csv to compare with".into())),
                _ => None,
            };
            let report = MetricsReport {
                mcc: metrics::mcc(&learned, truth, threshold)?,
                dog: metrics::dog(&learned, truth)?,
                reliability,
                nmi,
            };
            emit(out.as_deref(), &report)
        }
        Command::Sweep { config, out_dir, jobs: jobs_flag, select_best_epsilon: best, timing } => {
            let text = fs::read_to_string(&config).map_err(|e| Error::InvalidArgument(format!("{}: {e}", config.display())))?;
            let config = ExperimentConfig::from_json(&text)?;
            let rows = run_sweep(&config, &SweepOptions { jobs: jobs(jobs_flag)?, timing })?;
            let dir = out_dir.unwrap_or_else(|| PathBuf::from(&config.out_dir));
            fs::create_dir_all(&dir)?;
            write_atomic(&dir.join("results.csv"), &csv_bytes(&rows)?)?;
            write_atomic(&dir.join("summary.csv"), &csv_bytes(&summarize(&rows))?)?;
            if best {
                write_atomic(&dir.join("best_epsilon.csv"), &csv_bytes(&select_best_epsilon(&rows))?)?;
            }
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            if failed > 0 {
                eprintln!("warning: {failed} of {} runs failed", rows.len());
            }
            if failed == rows.len() {
                let first = rows[0].error.clone().unwrap_or_default();
                return Err(Error::InvalidArgument(format!("every run failed; first error: {first}")));
            }
            Ok(())
        }
        Command::Reliability { dataset, solver, epsilons, out } => {
            let bundle = read_bundle(&dataset)?;
            let test = bundle.test()?;
            let rows = reliability_curve(&bundle.train()?, &test, &solver.settings()?, &epsilons)?;
            write_atomic(&out, &csv_bytes(&rows)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 3 } else { 2 })
        }
    }
}
