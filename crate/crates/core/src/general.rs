//! Distribution-free robust graph learning.
//!
//! Without a Gaussian prior the worst-case risk becomes the sample average
//! plus a norm penalty on the Laplacian,
//!
//! ```text
//! m(v) = Tr(Theta_n Tv) + eta ||Tv||_F^2 + eps ||vec(Tv)||_q + beta (Tr Tv - d)^2
//! ```
//!
//! where `q` is the Hölder conjugate of the transport cost norm `p`. Setting
//! `eps = 0` recovers the sample average approximation (SAA) baseline.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{adjoint_unchecked, laplacian_from_slice, weights_to_laplacian, LaplacianMatrix, WeightVector};
use crate::pgd::{self, LineSearch, PgdOptions};

/// Hölder conjugate `q` of `p`, with `1/p + 1/q = 1`.
pub fn qnorm_dual(p: f64) -> Result<f64> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::arg(format!("norm order must be >= 1, got {p}")));
    }
    Ok(if p == 1.0 {
        f64::INFINITY
    } else if p.is_infinite() {
        1.0
    } else {
        p / (p - 1.0)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeneralSolverConfig {
    pub epsilon: f64,
    pub eta: f64,
    /// Trace penalty weight; `None` means `0.5 d`.
    pub beta: Option<f64>,
    /// Dual norm order, `f64::INFINITY` allowed.
    pub q: f64,
    pub pgd_tol: f64,
    pub max_iter: usize,
    pub ls_shrink: f64,
    pub ls_c: f64,
}

impl Default for GeneralSolverConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            eta: 0.1,
            beta: None,
            q: 2.0,
            pgd_tol: 1e-8,
            max_iter: 20_000,
            ls_shrink: 0.5,
            ls_c: 1e-4,
        }
    }
}

impl GeneralSolverConfig {
    pub fn saa(eta: f64, beta: Option<f64>) -> Self {
        Self { epsilon: 0.0, eta, beta, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !(self.eta >= 0.0) {
            return Err(Error::arg("epsilon and eta must be >= 0"));
        }
        if let Some(b) = self.beta {
            if !(b > 0.0) {
                return Err(Error::arg(format!("beta must be > 0, got {b}")));
            }
        }
        if !(self.q >= 1.0) {
            return Err(Error::arg(format!("q must be >= 1, got {}", self.q)));
        }
        if !(self.pgd_tol > 0.0) || self.max_iter == 0 {
            return Err(Error::arg("pgd_tol must be > 0 and max_iter >= 1"));
        }
        if !(self.ls_shrink > 0.0 && self.ls_shrink < 1.0) || !(self.ls_c > 0.0 && self.ls_c < 1.0) {
            return Err(Error::arg("line search needs shrink and c in (0, 1)"));
        }
        Ok(())
    }

    pub fn beta_for(&self, d: usize) -> f64 {
        self.beta.unwrap_or(0.5 * d as f64)
    }

    fn is_smooth(&self) -> bool {
        self.epsilon == 0.0 || (self.q > 1.0 && self.q.is_finite())
    }
}

/// `||vec(m)||_q` over all entries, diagonal included.
pub fn entry_norm(m: &DMatrix<f64>, q: f64) -> f64 {
    let amax = m.amax();
    if q.is_infinite() || amax == 0.0 {
        return amax;
    }
    if q == 1.0 {
        return m.iter().map(|x| x.abs()).sum();
    }
    // scale by the largest entry to keep |x|^q in range
    amax * m.iter().map(|x| (x.abs() / amax).powf(q)).sum::<f64>().powf(1.0 / q)
}

/// A (sub)gradient of `||vec(L)||_q` with respect to `L`.
fn entry_norm_gradient(l: &DMatrix<f64>, q: f64) -> DMatrix<f64> {
    let amax = l.amax();
    if amax == 0.0 {
        return DMatrix::zeros(l.nrows(), l.ncols());
    }
    if q == 1.0 {
        return l.map(|x| if x == 0.0 { 0.0 } else { x.signum() });
    }
    if q.is_infinite() {
        // ties share the unit mass equally
        let tie = |x: f64| x.abs() >= amax * (1.0 - 1e-12);
        let count = l.iter().filter(|x| tie(**x)).count() as f64;
        return l.map(|x| if tie(x) { x.signum() / count } else { 0.0 });
    }
    let norm = entry_norm(l, q);
    // sign(x) |x|^(q-1) / ||x||_q^(q-1), evaluated on x / ||x||_q
    l.map(|x| {
        let r = x.abs() / norm;
        if r == 0.0 {
            0.0
        } else {
            x.signum() * r.powf(q - 1.0)
        }
    })
}

struct GeneralObjective<'a> {
    d: usize,
    theta: &'a DMatrix<f64>,
    adj_theta: DVector<f64>,
    eta: f64,
    eps: f64,
    beta: f64,
    q: f64,
}

impl<'a> GeneralObjective<'a> {
    fn new(theta: &'a DMatrix<f64>, config: &GeneralSolverConfig) -> Self {
        let d = theta.nrows();
        Self {
            d,
            theta,
            adj_theta: adjoint_unchecked(theta),
            eta: config.eta,
            eps: config.epsilon,
            beta: config.beta_for(d),
            q: config.q,
        }
    }

    fn value(&self, v: &DVector<f64>) -> f64 {
        let l = laplacian_from_slice(self.d, v.as_slice());
        let pen = l.trace() - self.d as f64;
        let mut value = self.adj_theta.dot(v) + self.eta * l.norm_squared() + self.beta * pen * pen;
        if self.eps > 0.0 {
            value += self.eps * entry_norm(&l, self.q);
        }
        value
    }

    fn gradient(&self, v: &DVector<f64>) -> DVector<f64> {
        let l = laplacian_from_slice(self.d, v.as_slice());
        let pen = l.trace() - self.d as f64;
        let mut grad = &self.adj_theta + adjoint_unchecked(&l) * (2.0 * self.eta);
        grad.add_scalar_mut(4.0 * self.beta * pen);
        if self.eps > 0.0 {
            grad += adjoint_unchecked(&entry_norm_gradient(&l, self.q)) * self.eps;
        }
        grad
    }

    fn certificate(&self, l: &DMatrix<f64>) -> f64 {
        let mut r = (l * self.theta).trace() + self.eta * l.norm_squared();
        if self.eps > 0.0 {
            r += self.eps * entry_norm(l, self.q);
        }
        r
    }
}

fn check_theta(theta: &DMatrix<f64>) -> Result<()> {
    if !theta.is_square() || theta.nrows() < 2 {
        return Err(Error::arg(format!("second moment must be square with d >= 2, got {}x{}", theta.nrows(), theta.ncols())));
    }
    let asym = (theta - theta.transpose()).amax();
    if asym > 1e-10 * theta.amax().max(1.0) {
        return Err(Error::arg("second moment is not symmetric"));
    }
    let eig = SymmetricEigen::new(theta.clone()).eigenvalues;
    if eig.min() < -1e-8 * eig.amax().max(1.0) {
        return Err(Error::arg(format!("second moment is not PSD (min eigenvalue {})", eig.min())));
    }
    Ok(())
}

/// `m(v)` including the trace penalty.
pub fn eval_objective_general(v: &WeightVector, theta_n: &DMatrix<f64>, config: &GeneralSolverConfig) -> Result<f64> {
    if theta_n.nrows() != v.dim() || theta_n.ncols() != v.dim() {
        return Err(Error::arg("second moment does not match the weight dimension"));
    }
    Ok(GeneralObjective::new(theta_n, config).value(v.values()))
}

/// `grad m(v)`; at `Tv = 0` the norm term contributes zero.
pub fn gradient_general(v: &WeightVector, theta_n: &DMatrix<f64>, config: &GeneralSolverConfig) -> Result<DVector<f64>> {
    if theta_n.nrows() != v.dim() || theta_n.ncols() != v.dim() {
        return Err(Error::arg("second moment does not match the weight dimension"));
    }
    Ok(GeneralObjective::new(theta_n, config).gradient(v.values()))
}

/// Worst-case risk `Tr(L Theta_n) + eta ||L||_F^2 + eps ||vec(L)||_q` of a fixed Laplacian.
pub fn general_certificate(l: &LaplacianMatrix, theta_n: &DMatrix<f64>, config: &GeneralSolverConfig) -> Result<f64> {
    if theta_n.nrows() != l.dim() || theta_n.ncols() != l.dim() {
        return Err(Error::arg("second moment does not match the Laplacian dimension"));
    }
    Ok(GeneralObjective::new(theta_n, config).certificate(l.as_matrix()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneralSolveResult {
    pub laplacian: LaplacianMatrix,
    pub worst_case_risk: f64,
    /// `m(v)` at the start and after every accepted step.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub trace_before_rescale: f64,
}

/// Projected gradient descent on `m` from `v0`, followed by an exact trace
/// rescale to `d`.
pub fn solve_general(theta_n: &DMatrix<f64>, config: &GeneralSolverConfig, v0: &WeightVector) -> Result<GeneralSolveResult> {
    config.validate()?;
    check_theta(theta_n)?;
    let d = theta_n.nrows();
    if v0.dim() != d {
        return Err(Error::arg(format!("initial weights are for d = {}, data has d = {d}", v0.dim())));
    }
    let objective = GeneralObjective::new(theta_n, config);
    let opts = PgdOptions {
        tol: config.pgd_tol,
        max_iter: config.max_iter,
        line_search: LineSearch { shrink: config.ls_shrink, armijo_c: config.ls_c, initial_step: 1.0 },
        subgradient_fallback: !config.is_smooth(),
    };
    let out = pgd::minimize(|v| objective.value(v), |v| objective.gradient(v), v0.values().clone(), &opts);
    let fitted = weights_to_laplacian(&WeightVector::from_vector(d, out.point)?);
    let trace_before_rescale = fitted.trace();
    let laplacian = fitted.normalized_trace();
    let worst_case_risk = objective.certificate(laplacian.as_matrix());
    Ok(GeneralSolveResult {
        laplacian,
        worst_case_risk,
        objective_trace: out.trace,
        iterations: out.iterations,
        converged: out.converged,
        trace_before_rescale,
    })
}

/// Sample average approximation: [`solve_general`] with `eps = 0`.
pub fn solve_saa(theta_n: &DMatrix<f64>, eta: f64, beta: Option<f64>, v0: &WeightVector) -> Result<GeneralSolveResult> {
    solve_general(theta_n, &GeneralSolverConfig::saa(eta, beta), v0)
}

/// Closed form of `sup_x x^T L x - gamma ||x - x_i||_2^2`, i.e.
/// `gamma^2 x_i^T (gamma I - L)^-1 x_i - gamma ||x_i||^2`.
pub fn dual_inner_sup_oracle(l: &LaplacianMatrix, gamma: f64, x_i: &DVector<f64>) -> Result<f64> {
    let d = l.dim();
    if x_i.len() != d {
        return Err(Error::arg(format!("sample has {} entries, Laplacian has d = {d}", x_i.len())));
    }
    let mut shifted = -l.as_matrix();
    for i in 0..d {
        shifted[(i, i)] += gamma;
    }
    let lambda_max = || crate::graph::max_eigenvalue(l);
    let chol = Cholesky::new(shifted).ok_or_else(|| Error::Domain { gamma, lambda_max: lambda_max() })?;
    if gamma <= lambda_max() + 1e-12 {
        return Err(Error::Domain { gamma, lambda_max: lambda_max() });
    }
    let y = chol.solve(x_i);
    Ok(gamma * gamma * x_i.dot(&y) - gamma * x_i.norm_squared())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::graph::edge_count;

    fn w(d: usize, v: &[f64]) -> WeightVector {
        WeightVector::new(d, v.to_vec()).unwrap()
    }

    #[test]
    fn conjugate_orders() {
        assert_eq!(qnorm_dual(2.0).unwrap(), 2.0);
        assert_eq!(qnorm_dual(1.0).unwrap(), f64::INFINITY);
        assert_eq!(qnorm_dual(f64::INFINITY).unwrap(), 1.0);
        assert_abs_diff_eq!(qnorm_dual(4.0).unwrap(), 4.0 / 3.0, epsilon = 1e-15);
        assert!(qnorm_dual(0.5).is_err());
        assert!(qnorm_dual(f64::NAN).is_err());
    }

    #[test]
    fn objective_examples() {
        let cfg = GeneralSolverConfig { epsilon: 0.7, eta: 0.3, beta: Some(2.0), ..Default::default() };
        let theta = DMatrix::identity(3, 3);
        assert_abs_diff_eq!(eval_objective_general(&WeightVector::zeros(3).unwrap(), &theta, &cfg).unwrap(), 2.0 * 9.0);

        let eye = DMatrix::identity(2, 2);
        for (eta, eps) in [(0.0, 0.0), (0.5, 1.0), (2.0, 0.25)] {
            let cfg = GeneralSolverConfig { epsilon: eps, eta, beta: Some(3.0), q: 2.0, ..Default::default() };
            let m = eval_objective_general(&w(2, &[1.0]), &eye, &cfg).unwrap();
            assert_abs_diff_eq!(m, 2.0 + 4.0 * eta + 2.0 * eps, epsilon = 1e-12);
            let cfg = GeneralSolverConfig { q: 1.0, ..cfg };
            let m = eval_objective_general(&w(2, &[1.0]), &eye, &cfg).unwrap();
            assert_abs_diff_eq!(m, 2.0 + 4.0 * eta + 4.0 * eps, epsilon = 1e-12);
        }
    }

    #[test]
    fn gradient_hand_example() {
        let cfg = GeneralSolverConfig { epsilon: 1.0, eta: 0.0, beta: Some(1.0), q: 2.0, ..Default::default() };
        let g = gradient_general(&w(2, &[1.0]), &DMatrix::identity(2, 2), &cfg).unwrap();
        assert_abs_diff_eq!(g[0], 4.0, epsilon = 1e-12);
    }

    #[test]
    fn gradient_without_radius_is_saa_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = 5;
        let b = DMatrix::from_fn(d, d, |_, _| rng.random::<f64>() - 0.5);
        let theta = &b * b.transpose();
        let v = WeightVector::new(d, (0..edge_count(d)).map(|_| rng.random()).collect()).unwrap();
        let cfg = GeneralSolverConfig { epsilon: 0.0, eta: 0.4, beta: Some(1.5), q: 3.0, ..Default::default() };
        let got = gradient_general(&v, &theta, &cfg).unwrap();
        let l = weights_to_laplacian(&v);
        let mut expect = adjoint_unchecked(&theta) + adjoint_unchecked(l.as_matrix()) * 0.8;
        expect += adjoint_unchecked(&DMatrix::identity(d, d)) * (2.0 * 1.5 * (l.trace() - d as f64));
        assert_eq!(got, expect);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for q in [4.0 / 3.0, 1.5, 2.0, 3.0, 4.0] {
            for _ in 0..20 {
                let d = rng.random_range(2..7);
                let b = DMatrix::from_fn(d, d, |_, _| rng.random::<f64>() - 0.5);
                let theta = &b * b.transpose();
                let v: Vec<f64> = (0..edge_count(d)).map(|_| rng.random_range(0.1..1.0)).collect();
                let cfg = GeneralSolverConfig { epsilon: 0.8, eta: 0.2, beta: Some(1.0), q, ..Default::default() };
                let an = gradient_general(&w(d, &v), &theta, &cfg).unwrap();
                let obj = GeneralObjective::new(&theta, &cfg);
                let h = 1e-6;
                for k in 0..v.len() {
                    let mut p = DVector::from_vec(v.clone());
                    let mut m = p.clone();
                    p[k] += h;
                    m[k] -= h;
                    let fd = (obj.value(&p) - obj.value(&m)) / (2.0 * h);
                    assert!((fd - an[k]).abs() <= 1e-5 * an[k].abs().max(1.0), "q={q} k={k}: {fd} vs {}", an[k]);
                }
            }
        }
    }

    #[test]
    fn norm_gradient_at_origin_is_zero() {
        let cfg = GeneralSolverConfig { epsilon: 1.0, eta: 0.0, beta: Some(1.0), q: 2.0, ..Default::default() };
        let g = gradient_general(&WeightVector::zeros(3).unwrap(), &DMatrix::zeros(3, 3), &cfg).unwrap();
        // only the trace penalty: 2 beta (0 - 3) T*I = -12
        assert_eq!(g.as_slice(), &[-12.0, -12.0, -12.0]);
    }

    #[test]
    fn entry_norms() {
        let l = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        assert_abs_diff_eq!(entry_norm(&l, 2.0), 2.0, epsilon = 1e-15);
        assert_eq!(entry_norm(&l, 1.0), 4.0);
        assert_eq!(entry_norm(&l, f64::INFINITY), 1.0);
        assert_abs_diff_eq!(entry_norm(&l, 3.0), 4f64.powf(1.0 / 3.0), epsilon = 1e-15);
        // q = inf subgradient splits over the four tied entries
        let g = entry_norm_gradient(&l, f64::INFINITY);
        assert_eq!(g, l.map(|x| x / 4.0));
    }

    #[test]
    fn saa_one_dimensional_optimum() {
        // theta with T* theta = 1: stationarity of v + 2v^2 + (2v - 2)^2 gives 7/12
        let theta = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]);
        let out = solve_saa(&theta, 0.5, Some(1.0), &w(2, &[0.2])).unwrap();
        assert!(out.converged);
        assert_abs_diff_eq!(out.trace_before_rescale / 2.0, 7.0 / 12.0, epsilon = 1e-3);

        // theta = I has T* theta = 2, so the optimum moves to 1/2
        let out = solve_saa(&DMatrix::identity(2, 2), 0.5, Some(1.0), &w(2, &[0.2])).unwrap();
        assert_abs_diff_eq!(out.trace_before_rescale / 2.0, 0.5, epsilon = 1e-3);
    }

    #[test]
    fn zero_moment_is_driven_by_trace_penalty() {
        let out = solve_saa(&DMatrix::zeros(4, 4), 0.1, Some(100.0), &WeightVector::uniform_complete(4).unwrap()).unwrap();
        assert!((out.trace_before_rescale - 4.0).abs() < 1e-2);
        assert_abs_diff_eq!(out.laplacian.trace(), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_radius_equals_saa_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let d = 6;
        let b = DMatrix::from_fn(d, 10, |_, _| rng.random::<f64>() - 0.5);
        let theta = &b * b.transpose() / 10.0;
        let v0 = WeightVector::uniform_complete(d).unwrap();
        for q in [1.0, 2.0, f64::INFINITY] {
            let cfg = GeneralSolverConfig { epsilon: 0.0, eta: 0.2, beta: None, q, ..Default::default() };
            assert_eq!(solve_general(&theta, &cfg, &v0).unwrap(), solve_saa(&theta, 0.2, None, &v0).unwrap());
        }
    }

    #[test]
    fn larger_radius_shrinks_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = 6;
        let b = DMatrix::from_fn(d, 30, |_, _| rng.random::<f64>() - 0.5);
        let theta = &b * b.transpose() / 30.0;
        let v0 = WeightVector::uniform_complete(d).unwrap();
        for q in [4.0 / 3.0, 2.0, 3.0] {
            let mut last = f64::INFINITY;
            for eps in [0.0, 0.05, 0.2, 0.5, 1.0] {
                let cfg = GeneralSolverConfig { epsilon: eps, eta: 0.05, beta: None, q, pgd_tol: 1e-12, ..Default::default() };
                let out = solve_general(&theta, &cfg, &v0).unwrap();
                let unscaled = out.laplacian.scaled(out.trace_before_rescale / d as f64);
                let n = entry_norm(unscaled.as_matrix(), q);
                assert!(n <= last + 1e-6, "q={q} eps={eps}: {n} > {last}");
                last = n;
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let v0 = WeightVector::uniform_complete(3).unwrap();
        let mut theta = DMatrix::identity(3, 3);
        theta[(0, 0)] = -1.0;
        assert!(solve_saa(&theta, 0.1, None, &v0).is_err());
        assert!(solve_saa(&DMatrix::identity(4, 4), 0.1, None, &v0).is_err());
        let cfg = GeneralSolverConfig { q: 0.5, ..Default::default() };
        assert!(solve_general(&DMatrix::identity(3, 3), &cfg, &v0).is_err());
    }

    #[test]
    fn inner_sup_examples() {
        let l = weights_to_laplacian(&w(2, &[1.0]));
        assert_eq!(dual_inner_sup_oracle(&l, 4.0, &DVector::zeros(2)).unwrap(), 0.0);
        let x = DVector::from_vec(vec![1.0, 0.0]);
        assert_abs_diff_eq!(dual_inner_sup_oracle(&l, 4.0, &x).unwrap(), 2.0, epsilon = 1e-12);
        let zero = weights_to_laplacian(&WeightVector::zeros(3).unwrap());
        let x3 = DVector::from_vec(vec![0.3, -1.2, 2.0]);
        assert_abs_diff_eq!(dual_inner_sup_oracle(&zero, 1.7, &x3).unwrap(), 0.0, epsilon = 1e-12);
        assert!(matches!(dual_inner_sup_oracle(&l, 2.0, &x), Err(Error::Domain { .. })));
    }

    #[test]
    fn inner_sup_matches_direct_maximization() {
        // the maximizer of x^T L x - gamma ||x - x_i||^2 is x = gamma (gamma I - L)^-1 x_i;
        // check by gradient ascent, which never uses the closed form
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let d = rng.random_range(2..5);
            let v: Vec<f64> = (0..edge_count(d)).map(|_| rng.random()).collect();
            let l = weights_to_laplacian(&w(d, &v));
            let gamma = crate::graph::max_eigenvalue(&l) + rng.random_range(0.5..3.0);
            let xi = DVector::from_fn(d, |_, _| rng.random::<f64>() - 0.5);
            let lm = l.as_matrix();
            let mut x = xi.clone();
            for _ in 0..20_000 {
                let grad = lm * &x * 2.0 - (&x - &xi) * (2.0 * gamma);
                x += grad * (0.25 / gamma);
            }
            let direct = (x.transpose() * lm * &x)[(0, 0)] - gamma * (&x - &xi).norm_squared();
            let closed = dual_inner_sup_oracle(&l, gamma, &xi).unwrap();
            assert_abs_diff_eq!(direct, closed, epsilon = 1e-9);
        }
    }
}
