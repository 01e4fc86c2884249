//! Synthetic ground-truth graphs and smooth graph signals.
//!
//! Randomness comes from ChaCha8 seeded with `seed_from_u64(seed)`; each
//! consumer draws from its own stream (`set_stream`) so that changing, say,
//! the noise level never perturbs the signals:
//!
//! | stream | use                      |
//! |--------|--------------------------|
//! | 0      | RBF vertex coordinates   |
//! | 1      | SBM edge draws           |
//! | 2      | training signals         |
//! | 3      | training noise           |
//! | 4      | held-out signals         |
//! | 5      | held-out noise           |
//!
//! Signals are drawn column by column, so the first `N` columns of a draw of
//! `N' > N` samples equal a draw of `N` samples.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{edge_count, lower_index, weights_to_laplacian, LaplacianMatrix, WeightVector};
use crate::moments::SignalMatrix;

pub const STREAM_COORDS: u64 = 0;
pub const STREAM_SBM: u64 = 1;
pub const STREAM_SIGNALS: u64 = 2;
pub const STREAM_NOISE: u64 = 3;
pub const STREAM_TEST_SIGNALS: u64 = 4;
pub const STREAM_TEST_NOISE: u64 = 5;

/// Relative eigenvalue cutoff for the pseudo-inverse.
const PINV_CUTOFF: f64 = 1e-10;

pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfGraphSpec {
    pub coords: Vec<[f64; 2]>,
    pub sigma: f64,
    pub tau: f64,
}

impl RbfGraphSpec {
    /// `d` points drawn uniformly in the unit square.
    pub fn random(d: usize, sigma: f64, tau: f64, seed: u64) -> Self {
        let mut rng = rng_for(seed, STREAM_COORDS);
        let coords = (0..d).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
        Self { coords, sigma, tau }
    }

    fn validate(&self) -> Result<()> {
        if self.coords.len() < 2 {
            return Err(Error::arg("RBF graph needs at least 2 vertices"));
        }
        if !(self.sigma > 0.0) || !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::arg(format!("RBF graph needs sigma > 0 and tau in [0, 1], got {} / {}", self.sigma, self.tau)));
        }
        if self.coords.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::arg("RBF coordinates must lie in the unit square"));
        }
        Ok(())
    }
}

/// Gaussian-kernel similarity graph; an edge is kept when its weight exceeds `tau`.
pub fn rbf_graph(spec: &RbfGraphSpec) -> Result<LaplacianMatrix> {
    spec.validate()?;
    let d = spec.coords.len();
    let mut values = vec![0.0; edge_count(d)];
    for j in 0..d {
        for i in (j + 1)..d {
            let (a, b) = (spec.coords[i], spec.coords[j]);
            let dist2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
            let w = (-dist2 / (2.0 * spec.sigma * spec.sigma)).exp();
            if w > spec.tau {
                values[lower_index(i, j, d)] = w;
            }
        }
    }
    Ok(weights_to_laplacian(&WeightVector::new(d, values)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmGraphSpec {
    pub cluster_sizes: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
    pub seed: u64,
}

/// Stochastic block model with unit edge weights. Returns the Laplacian and
/// the cluster label of every vertex.
pub fn sbm_graph(spec: &SbmGraphSpec) -> Result<(LaplacianMatrix, Vec<usize>)> {
    if spec.cluster_sizes.is_empty() || spec.cluster_sizes.contains(&0) {
        return Err(Error::arg("SBM cluster sizes must be positive"));
    }
    if !(0.0 <= spec.p_out && spec.p_out <= spec.p_in && spec.p_in <= 1.0) {
        return Err(Error::arg(format!("SBM needs 0 <= p_out <= p_in <= 1, got {} / {}", spec.p_out, spec.p_in)));
    }
    let labels: Vec<usize> = spec.cluster_sizes.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect();
    let d = labels.len();
    if d < 2 {
        return Err(Error::arg("SBM graph needs at least 2 vertices"));
    }
    let mut rng = rng_for(spec.seed, STREAM_SBM);
    let mut values = vec![0.0; edge_count(d)];
    for j in 0..d {
        for i in (j + 1)..d {
            let p = if labels[i] == labels[j] { spec.p_in } else { spec.p_out };
            // one draw per pair regardless of p keeps the stream aligned
            let u: f64 = rng.random();
            if u < p {
                values[lower_index(i, j, d)] = 1.0;
            }
        }
    }
    Ok((weights_to_laplacian(&WeightVector::new(d, values)?), labels))
}

/// `U diag(lambda^+)^{1/2}`, the square root of the pseudo-inverse in factored form.
fn pinv_sqrt_factor(l: &LaplacianMatrix) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(l.as_matrix().clone());
    let lmax = eig.eigenvalues.max();
    let mut factor = eig.eigenvectors;
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        let s = if lmax > 0.0 && lam > PINV_CUTOFF * lmax { lam.sqrt().recip() } else { 0.0 };
        factor.column_mut(k).scale_mut(s);
    }
    factor
}

/// Moore-Penrose pseudo-inverse of a Laplacian with the same cutoff the
/// sampler uses.
pub fn laplacian_pinv(l: &LaplacianMatrix) -> DMatrix<f64> {
    let f = pinv_sqrt_factor(l);
    &f * f.transpose()
}

fn standard_normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut z = DMatrix::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            z[(i, j)] = rng.sample(StandardNormal);
        }
    }
    z
}

fn draw_signals(l: &LaplacianMatrix, n: usize, rng: &mut ChaCha8Rng) -> Result<SignalMatrix> {
    if n == 0 {
        return Err(Error::arg("need at least one sample"));
    }
    let z = standard_normal_matrix(l.dim(), n, rng);
    SignalMatrix::new(pinv_sqrt_factor(l) * z)
}

/// `N` samples from `N(0, L^+)`.
pub fn sample_smooth_signals(l: &LaplacianMatrix, n: usize, seed: u64) -> Result<SignalMatrix> {
    draw_signals(l, n, &mut rng_for(seed, STREAM_SIGNALS))
}

fn noisy(x: &SignalMatrix, sigma_w: f64, rng: &mut ChaCha8Rng) -> Result<SignalMatrix> {
    if !(sigma_w >= 0.0) {
        return Err(Error::arg(format!("noise level must be >= 0, got {sigma_w}")));
    }
    if sigma_w == 0.0 {
        return Ok(x.clone());
    }
    let z = standard_normal_matrix(x.dim(), x.samples(), rng);
    SignalMatrix::new(x.as_matrix() + z * sigma_w)
}

/// Adds i.i.d. `N(0, sigma_w^2)` noise entrywise.
pub fn add_noise(x: &SignalMatrix, sigma_w: f64, seed: u64) -> Result<SignalMatrix> {
    noisy(x, sigma_w, &mut rng_for(seed, STREAM_NOISE))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GraphSpec {
    Rbf {
        d: usize,
        #[serde(default = "default_sigma")]
        sigma: f64,
        #[serde(default = "default_tau")]
        tau: f64,
    },
    Sbm {
        cluster_sizes: Vec<usize>,
        p_in: f64,
        p_out: f64,
    },
}

fn default_sigma() -> f64 {
    0.5
}

fn default_tau() -> f64 {
    0.7
}

impl GraphSpec {
    pub fn dim(&self) -> usize {
        match self {
            GraphSpec::Rbf { d, .. } => *d,
            GraphSpec::Sbm { cluster_sizes, .. } => cluster_sizes.iter().sum(),
        }
    }

    /// Ground truth graph and, for SBM, the planted labels.
    pub fn build(&self, seed: u64) -> Result<(LaplacianMatrix, Option<Vec<usize>>)> {
        match self {
            GraphSpec::Rbf { d, sigma, tau } => Ok((rbf_graph(&RbfGraphSpec::random(*d, *sigma, *tau, seed))?, None)),
            GraphSpec::Sbm { cluster_sizes, p_in, p_out } => {
                let (l, labels) = sbm_graph(&SbmGraphSpec { cluster_sizes: cluster_sizes.clone(), p_in: *p_in, p_out: *p_out, seed })?;
                Ok((l, Some(labels)))
            }
        }
    }
}

/// Everything needed to regenerate a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    #[serde(flatten)]
    pub graph: GraphSpec,
    /// Training samples.
    pub n: usize,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
    /// Held-out samples appended after the training columns.
    #[serde(default)]
    pub test_n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub groundtruth: LaplacianMatrix,
    pub labels: Option<Vec<usize>>,
    /// Training columns followed by `n_test` held-out columns.
    pub signals: SignalMatrix,
    pub n_test: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Dataset {
    pub fn n_train(&self) -> usize {
        self.signals.samples() - self.n_test
    }

    pub fn train(&self) -> Result<SignalMatrix> {
        self.signals.columns(0, self.n_train())
    }

    pub fn test(&self) -> Result<SignalMatrix> {
        self.signals.columns(self.n_train(), self.n_test)
    }
}

/// Noisy signals on a fixed graph: training block from streams 2/3, held-out
/// block from streams 4/5.
pub fn signals_on(groundtruth: &LaplacianMatrix, n: usize, test_n: usize, noise_sigma: f64, seed: u64) -> Result<SignalMatrix> {
    let train = noisy(&draw_signals(groundtruth, n, &mut rng_for(seed, STREAM_SIGNALS))?, noise_sigma, &mut rng_for(seed, STREAM_NOISE))?;
    if test_n == 0 {
        return Ok(train);
    }
    let test = noisy(
        &draw_signals(groundtruth, test_n, &mut rng_for(seed, STREAM_TEST_SIGNALS))?,
        noise_sigma,
        &mut rng_for(seed, STREAM_TEST_NOISE),
    )?;
    let d = groundtruth.dim();
    let mut all = DMatrix::zeros(d, n + test_n);
    all.columns_mut(0, n).copy_from(train.as_matrix());
    all.columns_mut(n, test_n).copy_from(test.as_matrix());
    SignalMatrix::new(all)
}

pub fn generate_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    if spec.n == 0 {
        return Err(Error::arg("dataset needs n >= 1"));
    }
    let (groundtruth, labels) = spec.graph.build(spec.seed)?;
    let signals = signals_on(&groundtruth, spec.n, spec.test_n, spec.noise_sigma, spec.seed)?;
    Ok(Dataset { groundtruth, labels, signals, n_test: spec.test_n, noise_sigma: spec.noise_sigma, seed: spec.seed })
}

/// Mean of `x^T L x` over the columns of `x`.
pub fn mean_smoothness(l: &LaplacianMatrix, x: &SignalMatrix) -> f64 {
    let lx = l.as_matrix() * x.as_matrix();
    lx.component_mul(x.as_matrix()).sum() / x.samples() as f64
}

/// Number of eigenvalues above the pseudo-inverse cutoff.
pub fn numerical_rank(l: &LaplacianMatrix) -> usize {
    let eig: DVector<f64> = l.eigenvalues();
    let lmax = eig.max();
    eig.iter().filter(|&&x| lmax > 0.0 && x > PINV_CUTOFF * lmax).count()
}
