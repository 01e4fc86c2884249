//! Empirical first and second moments of a signal matrix.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `d x N` observations; column `i` is one graph signal.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalMatrix(DMatrix<f64>);

impl SignalMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.ncols() == 0 {
            return Err(Error::arg("signal matrix needs at least one sample"));
        }
        if m.nrows() == 0 {
            return Err(Error::arg("signal matrix needs at least one vertex"));
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::arg("signal matrix contains non-finite entries"));
        }
        Ok(Self(m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn samples(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Columns `range` as a new signal matrix.
    pub fn columns(&self, start: usize, count: usize) -> Result<Self> {
        if start + count > self.samples() {
            return Err(Error::arg(format!(
                "column range {start}..{} exceeds {} samples",
                start + count,
                self.samples()
            )));
        }
        Self::new(self.0.columns(start, count).into_owned())
    }
}

/// Sample mean, covariance and uncentered second moment.
///
/// The combined matrix `Sigma_n + mu mu^T` and the second moment
/// `(1/N) X X^T` are the same quantity, so it is stored once.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMoments {
    pub mu_n: DVector<f64>,
    pub sigma_n: DMatrix<f64>,
    second: DMatrix<f64>,
    samples: usize,
}

impl EmpiricalMoments {
    /// Builds moments from a mean and covariance directly.
    pub fn from_mean_cov(mu_n: DVector<f64>, sigma_n: DMatrix<f64>) -> Result<Self> {
        if !sigma_n.is_square() || sigma_n.nrows() != mu_n.len() {
            return Err(Error::arg("covariance shape does not match mean"));
        }
        let second = &sigma_n + &mu_n * mu_n.transpose();
        Ok(Self { mu_n, sigma_n, second, samples: 0 })
    }

    pub fn dim(&self) -> usize {
        self.mu_n.len()
    }

    /// Number of samples the moments were estimated from (0 if built directly).
    pub fn samples(&self) -> usize {
        self.samples
    }

    /// `Sigma_x = Sigma_n + mu_n mu_n^T`.
    pub fn sigma_x(&self) -> &DMatrix<f64> {
        &self.second
    }

    /// `Theta_n = (1/N) sum_i x_i x_i^T`.
    pub fn theta_n(&self) -> &DMatrix<f64> {
        &self.second
    }
}

/// Mean, covariance (normalized by `N`) and second moment of `x`.
pub fn empirical_moments(x: &SignalMatrix) -> EmpiricalMoments {
    let m = x.as_matrix();
    let n = m.ncols() as f64;
    let mu_n = m.column_mean();
    let centered = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] - mu_n[i]);
    let sigma_n = symmetrize(&centered * centered.transpose() / n);
    let second = symmetrize(m * m.transpose() / n);
    EmpiricalMoments { mu_n, sigma_n, second, samples: m.ncols() }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}
