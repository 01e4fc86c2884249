//! Solver dispatch, parameter sweeps and reliability curves.
//!
//! Trial `t` of a sweep uses seed `base_seed + t` for both the ground truth
//! graph and the signals, so any single row can be regenerated on its own.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{gaussian_certificate, solve_gaussian, GaussianSolverConfig};
use crate::general::{general_certificate, qnorm_dual, solve_general, GeneralSolverConfig};
use crate::graph::{prune_edges, LaplacianMatrix, WeightVector};
use crate::metrics::{self, DEFAULT_EDGE_THRESHOLD};
use crate::moments::{empirical_moments, SignalMatrix};
use crate::synth::{signals_on, GraphSpec};

/// Learned weights at or below this are dropped before a graph is saved.
pub const PRUNE_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Saa,
    WdroGaussian,
    WdroGeneral,
}

impl SolverKind {
    pub fn name(&self) -> &'static str {
        match self {
            SolverKind::Saa => "saa",
            SolverKind::WdroGaussian => "wdro-gaussian",
            SolverKind::WdroGeneral => "wdro-general",
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "saa" => Ok(SolverKind::Saa),
            "wdro-gaussian" => Ok(SolverKind::WdroGaussian),
            "wdro-general" => Ok(SolverKind::WdroGeneral),
            _ => Err(Error::arg(format!("unknown solver {s:?} (expected saa, wdro-gaussian or wdro-general)"))),
        }
    }
}

/// Everything that selects and parameterizes a solver run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LearnSettings {
    pub solver: SolverKind,
    /// Ignored by SAA.
    pub epsilon: f64,
    pub eta: f64,
    pub beta: Option<f64>,
    /// Dual norm order for the general solver.
    pub q: f64,
}

impl Default for LearnSettings {
    fn default() -> Self {
        Self { solver: SolverKind::WdroGeneral, epsilon: 0.1, eta: 0.1, beta: None, q: 2.0 }
    }
}

/// A learned, pruned graph with its worst-case risk certificate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearnOutcome {
    pub solver: SolverKind,
    pub epsilon: f64,
    pub eta: f64,
    pub beta: f64,
    pub q: f64,
    pub laplacian: LaplacianMatrix,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Certificate of the pruned graph.
    pub worst_case_risk: f64,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub trace_before_rescale: f64,
}

/// Learns a graph from training signals, prunes it and recomputes the
/// certificate for the pruned graph.
pub fn learn(train: &SignalMatrix, settings: &LearnSettings) -> Result<LearnOutcome> {
    let moments = empirical_moments(train);
    let d = moments.dim();
    if d < 2 {
        return Err(Error::arg("need at least 2 vertices"));
    }
    match settings.solver {
        SolverKind::Saa | SolverKind::WdroGeneral => {
            let epsilon = if settings.solver == SolverKind::Saa { 0.0 } else { settings.epsilon };
            let config = GeneralSolverConfig { epsilon, eta: settings.eta, beta: settings.beta, q: settings.q, ..Default::default() };
            let res = solve_general(moments.theta_n(), &config, &WeightVector::uniform_complete(d)?)?;
            let laplacian = prune_edges(&res.laplacian, PRUNE_THRESHOLD)?;
            let worst_case_risk = general_certificate(&laplacian, moments.theta_n(), &config)?;
            Ok(LearnOutcome {
                solver: settings.solver,
                epsilon,
                eta: settings.eta,
                beta: config.beta_for(d),
                q: settings.q,
                laplacian,
                gamma: None,
                worst_case_risk,
                objective_trace: res.objective_trace,
                iterations: res.iterations,
                converged: res.converged,
                trace_before_rescale: res.trace_before_rescale,
            })
        }
        SolverKind::WdroGaussian => {
            let config = GaussianSolverConfig { epsilon: settings.epsilon, eta: settings.eta, beta: settings.beta, ..Default::default() };
            let res = solve_gaussian(&moments, &config)?;
            let laplacian = prune_edges(&res.laplacian, PRUNE_THRESHOLD)?;
            let (bis, worst_case_risk) = gaussian_certificate(&laplacian, moments.sigma_x(), &config)?;
            Ok(LearnOutcome {
                solver: settings.solver,
                epsilon: settings.epsilon,
                eta: settings.eta,
                beta: config.beta_for(d),
                q: 2.0,
                laplacian,
                gamma: Some(bis.gamma),
                worst_case_risk,
                objective_trace: res.objective_trace,
                iterations: res.iterations,
                converged: res.converged && res.gamma_converged && bis.converged,
                trace_before_rescale: res.trace_before_rescale,
            })
        }
    }
}

/// Parameter grids; an absent grid falls back to the scalar setting.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grids {
    pub epsilon: Option<Vec<f64>>,
    pub n: Option<Vec<usize>>,
    pub noise_sigma: Option<Vec<f64>>,
    /// Transport cost norm orders; `null` stands for infinity.
    pub p: Option<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub solver: SolverKind,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default)]
    pub beta: Option<f64>,
    /// Used when `grids.p` is absent.
    #[serde(default = "default_q")]
    pub q: f64,
    #[serde(default)]
    pub grids: Grids,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
    pub graph: GraphSpec,
    /// Training samples when `grids.n` is absent.
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    /// Held-out samples per trial for reliability; 0 disables it.
    #[serde(default)]
    pub test_n: usize,
    #[serde(default = "default_threshold")]
    pub edge_threshold: f64,
}

fn default_epsilon() -> f64 {
    0.1
}
fn default_eta() -> f64 {
    0.1
}
fn default_q() -> f64 {
    2.0
}
fn default_trials() -> usize {
    20
}
fn default_out_dir() -> String {
    "results".into()
}
fn default_n() -> usize {
    100
}
fn default_noise() -> f64 {
    0.1
}
fn default_threshold() -> f64 {
    DEFAULT_EDGE_THRESHOLD
}

/// One grid point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub epsilon: f64,
    pub n: usize,
    pub noise_sigma: f64,
    /// Transport cost norm order, possibly infinite.
    pub p: f64,
}

fn check_grid<T>(name: &str, grid: &Option<Vec<T>>) -> Result<()> {
    if grid.as_ref().is_some_and(Vec::is_empty) {
        return Err(Error::arg(format!("grid {name} is empty")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| Error::arg(format!("bad experiment config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::arg("trials must be >= 1"));
        }
        check_grid("epsilon", &self.grids.epsilon)?;
        check_grid("n", &self.grids.n)?;
        check_grid("noise_sigma", &self.grids.noise_sigma)?;
        check_grid("p", &self.grids.p)?;
        let points = self.grid_points()?;
        for pt in &points {
            if pt.n == 0 || !(pt.epsilon >= 0.0) || !(pt.noise_sigma >= 0.0) {
                return Err(Error::arg(format!("invalid grid point {pt:?}")));
            }
        }
        if !(self.eta >= 0.0) || self.beta.is_some_and(|b| !(b > 0.0)) || !(self.q >= 1.0) {
            return Err(Error::arg("need eta >= 0, beta > 0 and q >= 1"));
        }
        if !(self.edge_threshold >= 0.0) {
            return Err(Error::arg("edge_threshold must be >= 0"));
        }
        if self.graph.dim() < 2 {
            return Err(Error::arg("graph needs at least 2 vertices"));
        }
        Ok(())
    }

    /// Grid points in output order: `n`, then noise, then `p`, then `epsilon`.
    /// SAA has no radius, so its epsilon grid collapses to 0.
    pub fn grid_points(&self) -> Result<Vec<GridPoint>> {
        let eps = match self.solver {
            SolverKind::Saa => vec![0.0],
            _ => self.grids.epsilon.clone().unwrap_or_else(|| vec![self.epsilon]),
        };
        let ns = self.grids.n.clone().unwrap_or_else(|| vec![self.n]);
        let noises = self.grids.noise_sigma.clone().unwrap_or_else(|| vec![self.noise_sigma]);
        let ps = match &self.grids.p {
            Some(ps) => ps.iter().map(|p| p.unwrap_or(f64::INFINITY)).collect(),
            None => vec![qnorm_dual(self.q)?],
        };
        let mut out = Vec::new();
        for &n in &ns {
            for &noise_sigma in &noises {
                for &p in &ps {
                    qnorm_dual(p)?;
                    for &epsilon in &eps {
                        out.push(GridPoint { epsilon, n, noise_sigma, p });
                    }
                }
            }
        }
        Ok(out)
    }

    fn settings(&self, pt: &GridPoint) -> Result<LearnSettings> {
        Ok(LearnSettings { solver: self.solver, epsilon: pt.epsilon, eta: self.eta, beta: self.beta, q: qnorm_dual(pt.p)? })
    }
}

/// One (grid point, trial) result. Failed rows carry an error message and
/// empty metric cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub trial: usize,
    pub seed: u64,
    pub epsilon: f64,
    pub n: usize,
    pub noise_sigma: f64,
    pub p: f64,
    pub mcc: Option<f64>,
    pub dog: Option<f64>,
    pub reliability: Option<f64>,
    pub objective: Option<f64>,
    pub runtime_ms: Option<f64>,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepOptions {
    pub jobs: usize,
    /// Record wall-clock time; rows are then no longer reproducible.
    pub timing: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { jobs: 1, timing: false }
    }
}

struct TrialMetrics {
    mcc: f64,
    dog: f64,
    reliability: Option<f64>,
    objective: f64,
    converged: bool,
}

fn run_trial(config: &ExperimentConfig, pt: &GridPoint, seed: u64) -> Result<TrialMetrics> {
    let (groundtruth, _) = config.graph.build(seed)?;
    let signals = signals_on(&groundtruth, pt.n, config.test_n, pt.noise_sigma, seed)?;
    let train = signals.columns(0, pt.n)?;
    let out = learn(&train, &config.settings(pt)?)?;
    let reliability = if config.test_n > 0 {
        let test = signals.columns(pt.n, config.test_n)?;
        Some(metrics::reliability(&test, &out.laplacian, config.eta, out.worst_case_risk)?)
    } else {
        None
    };
    Ok(TrialMetrics {
        mcc: metrics::mcc(&out.laplacian, &groundtruth, config.edge_threshold)?,
        dog: metrics::dog(&out.laplacian, &groundtruth)?,
        reliability,
        objective: out.worst_case_risk,
        converged: out.converged,
    })
}

/// Runs every grid point for every trial. Rows come back in grid order,
/// trials innermost, whatever order they finish in.
pub fn run_sweep(config: &ExperimentConfig, opts: &SweepOptions) -> Result<Vec<SweepRow>> {
    config.validate()?;
    let points = config.grid_points()?;
    let tasks: Vec<(GridPoint, usize)> = points.iter().flat_map(|pt| (0..config.trials).map(move |t| (*pt, t))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| Error::arg(format!("cannot start worker pool: {e}")))?;
    let rows = pool.install(|| {
        tasks
            .par_iter()
            .map(|(pt, trial)| {
                let seed = config.base_seed + *trial as u64;
                let start = Instant::now();
                let res = run_trial(config, pt, seed);
                let runtime_ms = opts.timing.then(|| start.elapsed().as_secs_f64() * 1e3);
                let mut row = SweepRow {
                    trial: *trial,
                    seed,
                    epsilon: pt.epsilon,
                    n: pt.n,
                    noise_sigma: pt.noise_sigma,
                    p: pt.p,
                    mcc: None,
                    dog: None,
                    reliability: None,
                    objective: None,
                    runtime_ms,
                    converged: false,
                    error: None,
                };
                match res {
                    Ok(m) => {
                        row.mcc = Some(m.mcc);
                        row.dog = Some(m.dog);
                        row.reliability = m.reliability;
                        row.objective = Some(m.objective);
                        row.converged = m.converged;
                    }
                    Err(e) => row.error = Some(e.to_string()),
                }
                row
            })
            .collect()
    });
    Ok(rows)
}

/// Header plus one line per record.
pub fn write_csv<T: Serialize, W: Write>(w: W, rows: &[T]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_csv(&mut buf, rows)?;
    Ok(buf)
}

/// Averages over the successful trials of one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub epsilon: f64,
    pub n: usize,
    pub noise_sigma: f64,
    pub p: f64,
    pub mean_mcc: Option<f64>,
    pub mean_dog: Option<f64>,
    pub mean_reliability: Option<f64>,
    pub succeeded: usize,
    pub converged: usize,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

fn same_point(a: &SweepRow, b: &SweepRow) -> bool {
    a.epsilon == b.epsilon && a.n == b.n && a.noise_sigma == b.noise_sigma && a.p == b.p
}

/// One summary per grid point, in the order the points first appear.
pub fn summarize(rows: &[SweepRow]) -> Vec<GridSummary> {
    let mut out: Vec<GridSummary> = Vec::new();
    let mut seen: Vec<&SweepRow> = Vec::new();
    for r in rows {
        if seen.iter().any(|s| same_point(s, r)) {
            continue;
        }
        seen.push(r);
        let group: Vec<&SweepRow> = rows.iter().filter(|x| same_point(x, r)).collect();
        out.push(GridSummary {
            epsilon: r.epsilon,
            n: r.n,
            noise_sigma: r.noise_sigma,
            p: r.p,
            mean_mcc: mean(group.iter().filter_map(|x| x.mcc)),
            mean_dog: mean(group.iter().filter_map(|x| x.dog)),
            mean_reliability: mean(group.iter().filter_map(|x| x.reliability)),
            succeeded: group.iter().filter(|x| x.error.is_none()).count(),
            converged: group.iter().filter(|x| x.converged).count(),
        });
    }
    out
}

/// For every `(n, noise_sigma, p)` the epsilon with the highest mean MCC;
/// ties go to the smaller epsilon.
pub fn select_best_epsilon(rows: &[SweepRow]) -> Vec<GridSummary> {
    let mut best: Vec<GridSummary> = Vec::new();
    for s in summarize(rows) {
        let Some(m) = s.mean_mcc else { continue };
        let slot = best.iter_mut().find(|b| b.n == s.n && b.noise_sigma == s.noise_sigma && b.p == s.p);
        match slot {
            None => best.push(s),
            Some(b) => {
                let better = match b.mean_mcc {
                    Some(bm) => m > bm || (m == bm && s.epsilon < b.epsilon),
                    None => true,
                };
                if better {
                    *b = s;
                }
            }
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityRow {
    pub epsilon: f64,
    pub reliability: Option<f64>,
    pub worst_case_risk: Option<f64>,
    pub converged: bool,
    pub error: Option<String>,
}

/// Certificate reliability on `test` of graphs learned from `train`, one row
/// per radius in `epsilons`.
pub fn reliability_curve(
    train: &SignalMatrix,
    test: &SignalMatrix,
    settings: &LearnSettings,
    epsilons: &[f64],
) -> Result<Vec<ReliabilityRow>> {
    if test.dim() != train.dim() {
        return Err(Error::arg("train and test signals differ in dimension"));
    }
    if epsilons.is_empty() {
        return Err(Error::arg("epsilon grid is empty"));
    }
    Ok(epsilons
        .iter()
        .map(|&epsilon| {
            let res = learn(train, &LearnSettings { epsilon, ..*settings }).and_then(|out| {
                let r = metrics::reliability(test, &out.laplacian, out.eta, out.worst_case_risk)?;
                Ok((r, out))
            });
            match res {
                Ok((r, out)) => ReliabilityRow {
                    epsilon,
                    reliability: Some(r),
                    worst_case_risk: Some(out.worst_case_risk),
                    converged: out.converged,
                    error: None,
                },
                Err(e) => ReliabilityRow { epsilon, reliability: None, worst_case_risk: None, converged: false, error: Some(e.to_string()) },
            }
        })
        .collect())
}
