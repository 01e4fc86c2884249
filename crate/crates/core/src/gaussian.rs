//! Robust graph learning when every distribution in the Wasserstein ball is
//! Gaussian.
//!
//! The worst-case risk of a Laplacian `L` reduces to a one-dimensional dual
//! problem over `gamma > lambda_max(L)`:
//!
//! ```text
//! g(gamma, L) = gamma (eps^2 - Tr Sx) + gamma^2 Tr((gamma I - L)^-1 Sx) + eta ||L||_F^2
//! ```
//!
//! with `Sx = Sigma_n + mu_n mu_n^T`. `g` is jointly convex, so the solver
//! alternates a bisection on `dg/dgamma` with projected gradient descent on
//! the edge weights, the trace constraint being relaxed into the penalty
//! `beta (Tr L - d)^2`.
//!
//! Internally `g` is evaluated as `gamma eps^2 + gamma Tr(L (gamma I - L)^-1 Sx)
//! + eta ||L||_F^2`, which is the same function without the cancellation
//! between the two leading terms when `gamma` is large.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{adjoint_unchecked, laplacian_from_slice, weights_to_laplacian, LaplacianMatrix, WeightVector};
use crate::moments::EmpiricalMoments;
use crate::pgd::{self, LineSearch, PgdOptions};

/// Margin below which `gamma` counts as sitting on the spectrum.
const DOMAIN_MARGIN: f64 = 1e-12;
const MAX_DOUBLINGS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaussianSolverConfig {
    pub epsilon: f64,
    pub eta: f64,
    /// Trace penalty weight; `None` means `0.5 d`.
    pub beta: Option<f64>,
    /// Initial upper bracket is `bracket_a * lambda_max`.
    pub bracket_a: f64,
    /// Initial lower bracket is `lambda_max + bracket_b`.
    pub bracket_b: f64,
    pub bisect_tol: f64,
    pub pgd_tol: f64,
    pub bcd_tol: f64,
    pub max_iter_bisect: usize,
    pub max_iter_pgd: usize,
    pub max_iter_bcd: usize,
    pub ls_shrink: f64,
    pub ls_c: f64,
}

impl Default for GaussianSolverConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            eta: 0.1,
            beta: None,
            bracket_a: 10.0,
            bracket_b: 1e-6,
            bisect_tol: 1e-6,
            pgd_tol: 1e-8,
            bcd_tol: 1e-6,
            max_iter_bisect: 200,
            max_iter_pgd: 5000,
            max_iter_bcd: 200,
            ls_shrink: 0.5,
            ls_c: 1e-4,
        }
    }
}

impl GaussianSolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !(self.eta >= 0.0) {
            return Err(Error::arg("epsilon and eta must be >= 0"));
        }
        if let Some(b) = self.beta {
            if !(b > 0.0) {
                return Err(Error::arg(format!("beta must be > 0, got {b}")));
            }
        }
        if !(self.bracket_a > 1.0) || !(self.bracket_b > 0.0) {
            return Err(Error::arg("bracket parameters need a > 1 and b > 0"));
        }
        for (name, t) in [("bisect_tol", self.bisect_tol), ("pgd_tol", self.pgd_tol), ("bcd_tol", self.bcd_tol)] {
            if !(t > 0.0) {
                return Err(Error::arg(format!("{name} must be > 0, got {t}")));
            }
        }
        if self.max_iter_bisect == 0 || self.max_iter_pgd == 0 || self.max_iter_bcd == 0 {
            return Err(Error::arg("iteration caps must be >= 1"));
        }
        if !(self.ls_shrink > 0.0 && self.ls_shrink < 1.0) || !(self.ls_c > 0.0 && self.ls_c < 1.0) {
            return Err(Error::arg("line search needs shrink and c in (0, 1)"));
        }
        Ok(())
    }

    pub fn beta_for(&self, d: usize) -> f64 {
        self.beta.unwrap_or(0.5 * d as f64)
    }

    fn pgd_options(&self) -> PgdOptions {
        PgdOptions {
            tol: self.pgd_tol,
            max_iter: self.max_iter_pgd,
            line_search: LineSearch { shrink: self.ls_shrink, armijo_c: self.ls_c, initial_step: 1.0 },
            subgradient_fallback: false,
        }
    }
}

/// `g(., L)` expressed in the eigenbasis of `L`, so that each evaluation in
/// `gamma` is O(d).
#[derive(Debug, Clone)]
struct SpectralDual {
    lambdas: DVector<f64>,
    /// Diagonal of `U^T Sx U`.
    weights: DVector<f64>,
    lambda_max: f64,
    frob_sq: f64,
}

impl SpectralDual {
    fn new(l: &DMatrix<f64>, sigma_x: &DMatrix<f64>) -> Self {
        let eig = SymmetricEigen::new(l.clone());
        let u = &eig.eigenvectors;
        let weights = DVector::from_iterator(
            l.nrows(),
            (0..l.nrows()).map(|i| {
                let col = u.column(i);
                (col.transpose() * sigma_x * col)[(0, 0)]
            }),
        );
        let lambda_max = eig.eigenvalues.max().max(0.0);
        Self { lambdas: eig.eigenvalues, weights, lambda_max, frob_sq: l.norm_squared() }
    }

    fn check(&self, gamma: f64) -> Result<()> {
        if !(gamma > self.lambda_max + DOMAIN_MARGIN) || !gamma.is_finite() {
            return Err(Error::Domain { gamma, lambda_max: self.lambda_max });
        }
        Ok(())
    }

    fn g(&self, gamma: f64, eps: f64, eta: f64) -> f64 {
        let frac: f64 = self.lambdas.iter().zip(self.weights.iter()).map(|(l, s)| l * s / (gamma - l)).sum();
        gamma * eps * eps + gamma * frac + eta * self.frob_sq
    }

    fn g_gamma(&self, gamma: f64, eps: f64) -> f64 {
        let sum: f64 = self
            .lambdas
            .iter()
            .zip(self.weights.iter())
            .map(|(l, s)| {
                let r = l / (gamma - l);
                r * r * s
            })
            .sum();
        eps * eps - sum
    }
}

/// Dual objective `g(gamma, L)`.
pub fn eval_g(gamma: f64, l: &LaplacianMatrix, sigma_x: &DMatrix<f64>, epsilon: f64, eta: f64) -> Result<f64> {
    check_sigma(l, sigma_x)?;
    let dual = SpectralDual::new(l.as_matrix(), sigma_x);
    dual.check(gamma)?;
    Ok(dual.g(gamma, epsilon, eta))
}

/// `dg/dgamma = eps^2 - Tr((I - gamma (gamma I - L)^-1)^2 Sx)`.
pub fn eval_g_gamma(gamma: f64, l: &LaplacianMatrix, sigma_x: &DMatrix<f64>, epsilon: f64) -> Result<f64> {
    check_sigma(l, sigma_x)?;
    let dual = SpectralDual::new(l.as_matrix(), sigma_x);
    dual.check(gamma)?;
    Ok(dual.g_gamma(gamma, epsilon))
}

fn check_sigma(l: &LaplacianMatrix, sigma_x: &DMatrix<f64>) -> Result<()> {
    if sigma_x.nrows() != l.dim() || sigma_x.ncols() != l.dim() {
        return Err(Error::arg(format!(
            "second-moment matrix is {}x{}, Laplacian is {}x{}",
            sigma_x.nrows(),
            sigma_x.ncols(),
            l.dim(),
            l.dim()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BisectionOutcome {
    pub gamma: f64,
    pub iterations: usize,
    /// False when no sign change of `dg/dgamma` exists above `lambda_max`;
    /// `gamma` is then `lb + bisect_tol`, the boundary of the domain.
    pub converged: bool,
}

/// Minimizes `g(., L)` by bisection on its derivative.
pub fn bisection_gamma(
    l: &LaplacianMatrix,
    sigma_x: &DMatrix<f64>,
    epsilon: f64,
    config: &GaussianSolverConfig,
) -> Result<BisectionOutcome> {
    check_sigma(l, sigma_x)?;
    if !(epsilon > 0.0) {
        return Err(Error::arg(format!("bisection needs epsilon > 0, got {epsilon}")));
    }
    let dual = SpectralDual::new(l.as_matrix(), sigma_x);
    Ok(bisect(&dual, epsilon, config))
}

fn bisect(dual: &SpectralDual, eps: f64, config: &GaussianSolverConfig) -> BisectionOutcome {
    let lmax = dual.lambda_max;
    let mut lb = lmax + config.bracket_b;
    let degenerate = BisectionOutcome { gamma: lb + config.bisect_tol, iterations: 0, converged: false };

    let g_lb = dual.g_gamma(lb, eps);
    if g_lb > 0.0 {
        return degenerate;
    }
    if g_lb == 0.0 {
        return BisectionOutcome { gamma: lb, iterations: 0, converged: true };
    }

    let mut ub = config.bracket_a * lmax;
    if ub <= lb {
        ub = lb + lmax.max(1.0);
    }
    let mut doublings = 0;
    while dual.g_gamma(ub, eps) <= 0.0 {
        if doublings == MAX_DOUBLINGS {
            return degenerate;
        }
        ub *= 2.0;
        doublings += 1;
    }

    let mut iterations = 0;
    while ub - lb > config.bisect_tol && iterations < config.max_iter_bisect {
        let mid = 0.5 * (lb + ub);
        if mid <= lb || mid >= ub {
            break;
        }
        if dual.g_gamma(mid, eps) > 0.0 {
            ub = mid;
        } else {
            lb = mid;
        }
        iterations += 1;
    }
    BisectionOutcome { gamma: 0.5 * (lb + ub), iterations, converged: ub - lb <= config.bisect_tol }
}

/// Objective of the Laplacian block for fixed `gamma`.
struct LaplacianBlock<'a> {
    d: usize,
    gamma: f64,
    sigma_x: &'a DMatrix<f64>,
    eta: f64,
    beta: f64,
}

impl LaplacianBlock<'_> {
    fn shifted_matrix(&self, l: &DMatrix<f64>) -> DMatrix<f64> {
        let mut m = -l;
        for i in 0..self.d {
            m[(i, i)] += self.gamma;
        }
        m
    }

    /// `r(v) - gamma Tr(Sx)`; `+inf` when `gamma I - Tv` is not positive definite.
    fn value_shifted(&self, v: &DVector<f64>) -> f64 {
        let l = laplacian_from_slice(self.d, v.as_slice());
        let Some(chol) = Cholesky::new(self.shifted_matrix(&l)) else {
            return f64::INFINITY;
        };
        let a_sigma = chol.solve(self.sigma_x);
        let frac = (&l * a_sigma).trace();
        let pen = l.trace() - self.d as f64;
        self.gamma * frac + self.eta * l.norm_squared() + self.beta * pen * pen
    }

    fn value(&self, v: &DVector<f64>) -> f64 {
        self.value_shifted(v) + self.gamma * self.sigma_x.trace()
    }

    fn gradient(&self, v: &DVector<f64>) -> DVector<f64> {
        let l = laplacian_from_slice(self.d, v.as_slice());
        let Some(chol) = Cholesky::new(self.shifted_matrix(&l)) else {
            return DVector::from_element(v.len(), f64::NAN);
        };
        // (gamma I - L)^-1 Sx (gamma I - L)^-1
        let a_sigma = chol.solve(self.sigma_x);
        let inner = chol.solve(&a_sigma.transpose());
        let pen = l.trace() - self.d as f64;
        let mut grad = adjoint_unchecked(&inner) * (self.gamma * self.gamma);
        grad += adjoint_unchecked(&l) * (2.0 * self.eta);
        // T* I is the all-twos vector
        grad.add_scalar_mut(4.0 * self.beta * pen);
        grad
    }
}

/// The Laplacian block objective
/// `r(v) = gamma^2 Tr(Sx (gamma I - Tv)^-1) + eta ||Tv||_F^2 + beta (Tr Tv - d)^2`.
pub fn objective_r(
    gamma: f64,
    sigma_x: &DMatrix<f64>,
    config: &GaussianSolverConfig,
    v: &WeightVector,
) -> Result<f64> {
    let d = v.dim();
    let block = LaplacianBlock { d, gamma, sigma_x, eta: config.eta, beta: config.beta_for(d) };
    let value = block.value(v.values());
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Domain { gamma, lambda_max: crate::graph::max_eigenvalue(&weights_to_laplacian(v)) })
    }
}

/// Gradient of [`objective_r`] with respect to the edge weights.
pub fn gradient_r(
    gamma: f64,
    sigma_x: &DMatrix<f64>,
    config: &GaussianSolverConfig,
    v: &WeightVector,
) -> Result<DVector<f64>> {
    let d = v.dim();
    let block = LaplacianBlock { d, gamma, sigma_x, eta: config.eta, beta: config.beta_for(d) };
    let grad = block.gradient(v.values());
    if grad.iter().all(|x| x.is_finite()) {
        Ok(grad)
    } else {
        Err(Error::Domain { gamma, lambda_max: crate::graph::max_eigenvalue(&weights_to_laplacian(v)) })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianUpdate {
    pub weights: WeightVector,
    /// `r` at the returned weights.
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Projected gradient descent on `r` for fixed `gamma`, starting from `v0`.
pub fn update_laplacian_gaussian(
    gamma: f64,
    sigma_x: &DMatrix<f64>,
    config: &GaussianSolverConfig,
    v0: &WeightVector,
) -> Result<LaplacianUpdate> {
    config.validate()?;
    let d = v0.dim();
    if sigma_x.nrows() != d || sigma_x.ncols() != d {
        return Err(Error::arg("second-moment matrix does not match the weight dimension"));
    }
    let block = LaplacianBlock { d, gamma, sigma_x, eta: config.eta, beta: config.beta_for(d) };
    if !block.value_shifted(v0.values()).is_finite() {
        return Err(Error::Domain { gamma, lambda_max: crate::graph::max_eigenvalue(&weights_to_laplacian(v0)) });
    }
    let out = pgd::minimize(
        |v| block.value_shifted(v),
        |v| block.gradient(v),
        v0.values().clone(),
        &config.pgd_options(),
    );
    let weights = WeightVector::from_vector(d, out.point)?;
    Ok(LaplacianUpdate {
        value: out.value + gamma * sigma_x.trace(),
        weights,
        iterations: out.iterations,
        converged: out.converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaussianSolveResult {
    pub laplacian: LaplacianMatrix,
    pub gamma: f64,
    /// `g(gamma*, L*)` for the trace-normalized Laplacian.
    pub worst_case_risk: f64,
    /// `g + beta (Tr L - d)^2` after every block-coordinate sweep.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// False if any bisection hit the degenerate no-root case.
    pub gamma_converged: bool,
    /// `Tr L` before the final rescale to `d`.
    pub trace_before_rescale: f64,
}

/// Tightest dual certificate for a fixed Laplacian: `(gamma*, g(gamma*, L))`.
pub fn gaussian_certificate(
    l: &LaplacianMatrix,
    sigma_x: &DMatrix<f64>,
    config: &GaussianSolverConfig,
) -> Result<(BisectionOutcome, f64)> {
    check_sigma(l, sigma_x)?;
    if !(config.epsilon > 0.0) {
        return Err(Error::arg("epsilon must be > 0"));
    }
    let dual = SpectralDual::new(l.as_matrix(), sigma_x);
    let bis = bisect(&dual, config.epsilon, config);
    Ok((bis, dual.g(bis.gamma, config.epsilon, config.eta)))
}

/// Block coordinate descent over `(gamma, L)`.
pub fn solve_gaussian(moments: &EmpiricalMoments, config: &GaussianSolverConfig) -> Result<GaussianSolveResult> {
    config.validate()?;
    let d = moments.dim();
    if d < 2 {
        return Err(Error::arg("need at least 2 vertices"));
    }
    if !(config.epsilon > 0.0) {
        return Err(Error::arg(format!("Gaussian solver needs epsilon > 0, got {}", config.epsilon)));
    }
    let sigma_x = moments.sigma_x();
    let eps = config.epsilon;
    let beta = config.beta_for(d);
    let penalty = |l: &DMatrix<f64>| {
        let p = l.trace() - d as f64;
        beta * p * p
    };

    let mut v = WeightVector::uniform_complete(d)?;
    let mut l = laplacian_from_slice(d, v.values().as_slice());
    let mut gamma_prev: Option<f64> = None;
    let mut trace = Vec::new();
    let mut gamma_converged = true;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iter_bcd {
        iterations += 1;
        let dual = SpectralDual::new(&l, sigma_x);
        let bis = bisect(&dual, eps, config);
        gamma_converged &= bis.converged;
        let mut gamma = bis.gamma;
        if let Some(gp) = gamma_prev {
            // keep the previous gamma if bisection round-off would raise g
            if gp > dual.lambda_max + DOMAIN_MARGIN && dual.g(gp, eps, config.eta) < dual.g(gamma, eps, config.eta) {
                gamma = gp;
            }
        }

        let step = update_laplacian_gaussian(gamma, sigma_x, config, &v)?;
        let l_next = laplacian_from_slice(d, step.weights.values().as_slice());
        let g_next = SpectralDual::new(&l_next, sigma_x).g(gamma, eps, config.eta);
        trace.push(g_next + penalty(&l_next));

        let change = (&l_next - &l).norm();
        v = step.weights;
        l = l_next;
        gamma_prev = Some(gamma);
        if change < config.bcd_tol {
            converged = true;
            break;
        }
    }

    let fitted = weights_to_laplacian(&v);
    let trace_before_rescale = fitted.trace();
    let laplacian = fitted.normalized_trace();
    let (bis, worst_case_risk) = gaussian_certificate(&laplacian, sigma_x, config)?;
    gamma_converged &= bis.converged;

    Ok(GaussianSolveResult {
        laplacian,
        gamma: bis.gamma,
        worst_case_risk,
        objective_trace: trace,
        iterations,
        converged,
        gamma_converged,
        trace_before_rescale,
    })
}
