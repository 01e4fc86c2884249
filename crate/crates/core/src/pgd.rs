//! Projected gradient descent on the nonnegative orthant with a backtracking
//! Armijo line search.
//!
//! The trial step for the first iteration is `initial_step`; later trials use
//! the Barzilai-Borwein ratio of the last accepted move, then shrink until the
//! projected Armijo condition
//!
//! ```text
//! f(x+) <= f(x) + c <grad f(x), x+ - x>,   x+ = max(x - s grad f(x), 0)
//! ```
//!
//! holds. Objectives report infeasible points as `+inf`, which the line search
//! treats as a failed trial. Accepted steps never increase `f`. The run stops
//! after two consecutive moves shorter than `tol`.

use nalgebra::DVector;

/// Step sizes below this are treated as a stalled search.
pub const MIN_STEP: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearch {
    pub shrink: f64,
    pub armijo_c: f64,
    pub initial_step: f64,
}

impl Default for LineSearch {
    fn default() -> Self {
        Self { shrink: 0.5, armijo_c: 1e-4, initial_step: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgdOptions {
    /// Stop once `||x_k - x_{k-1}||_2` stays below this for two steps.
    pub tol: f64,
    pub max_iter: usize,
    pub line_search: LineSearch,
    /// Fall back to plain descent steps of size `initial_step / k` when the
    /// Armijo search stalls. Needed for nonsmooth objectives.
    pub subgradient_fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PgdOutcome {
    pub point: DVector<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value at the start and after every accepted step.
    pub trace: Vec<f64>,
}

fn project(x: &mut DVector<f64>) {
    x.iter_mut().for_each(|v| {
        if !(*v > 0.0) {
            *v = 0.0
        }
    });
}

pub fn minimize<F, G>(mut f: F, mut grad: G, x0: DVector<f64>, opts: &PgdOptions) -> PgdOutcome
where
    F: FnMut(&DVector<f64>) -> f64,
    G: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let ls = opts.line_search;
    let mut x = x0;
    project(&mut x);
    let mut fx = f(&x);
    let mut trace = vec![fx];
    let mut g = grad(&x);
    let mut trial_step = ls.initial_step;
    let mut iterations = 0;
    let mut converged = false;
    let mut last_move = f64::INFINITY;

    while iterations < opts.max_iter {
        iterations += 1;

        let mut s = trial_step;
        let mut accepted = None;
        let mut predicted = 0.0;
        while s >= MIN_STEP {
            let mut cand = &x - &g * s;
            project(&mut cand);
            let decrease = g.dot(&(&cand - &x));
            if decrease >= 0.0 {
                // projected gradient vanishes: x is stationary
                break;
            }
            if s == trial_step {
                predicted = decrease;
            }
            let fc = f(&cand);
            if fc.is_finite() && fc <= fx + ls.armijo_c * decrease {
                accepted = Some((cand, fc));
                break;
            }
            s *= ls.shrink;
        }

        if accepted.is_none() && opts.subgradient_fallback {
            let mut s = ls.initial_step / iterations as f64;
            while s >= MIN_STEP {
                let mut cand = &x - &g * s;
                project(&mut cand);
                let fc = f(&cand);
                if fc.is_finite() && fc < fx {
                    accepted = Some((cand, fc));
                    break;
                }
                s *= ls.shrink;
            }
        }

        let Some((next, f_next)) = accepted else {
            // no admissible move: either the projected gradient vanishes or
            // the predicted decrease is below what f can resolve
            let mut probe = &x - &g * ls.initial_step.max(1.0);
            project(&mut probe);
            let roundoff = 8.0 * f64::EPSILON * fx.abs().max(1.0);
            converged = (probe - &x).norm() < opts.tol || -predicted <= roundoff;
            break;
        };

        let dx = &next - &x;
        let g_next = grad(&next);
        let dg = &g_next - &g;
        let curv = dx.dot(&dg);
        trial_step = if curv > 0.0 {
            (dx.norm_squared() / curv).clamp(1e-12, 1e12)
        } else {
            ls.initial_step
        };

        let moved = dx.norm();
        x = next;
        fx = f_next;
        g = g_next;
        trace.push(fx);
        // Barzilai-Borwein alternates short and long steps, so a single short
        // move is not evidence of convergence
        if moved < opts.tol && last_move < opts.tol {
            converged = true;
            break;
        }
        last_move = moved;
    }

    PgdOutcome { point: x, value: fx, iterations, converged, trace }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn opts() -> PgdOptions {
        PgdOptions { tol: 1e-10, max_iter: 10_000, line_search: LineSearch::default(), subgradient_fallback: false }
    }

    #[test]
    fn quadratic_with_active_bound() {
        // min (x0 - 1)^2 + 10 (x1 + 2)^2 over x >= 0 -> (1, 0)
        let f = |x: &DVector<f64>| (x[0] - 1.0).powi(2) + 10.0 * (x[1] + 2.0).powi(2);
        let g = |x: &DVector<f64>| DVector::from_vec(vec![2.0 * (x[0] - 1.0), 20.0 * (x[1] + 2.0)]);
        let out = minimize(f, g, DVector::from_vec(vec![5.0, 5.0]), &opts());
        assert!(out.converged);
        assert_abs_diff_eq!(out.point[0], 1.0, epsilon = 1e-8);
        assert_eq!(out.point[1], 0.0);
        assert!(out.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn ill_conditioned_quadratic() {
        let scales = [1e-2, 1.0, 1e3];
        let f = |x: &DVector<f64>| x.iter().zip(scales).map(|(v, a)| a * (v - 1.0).powi(2)).sum::<f64>();
        let g = |x: &DVector<f64>| DVector::from_iterator(3, x.iter().zip(scales).map(|(v, a)| 2.0 * a * (v - 1.0)));
        let out = minimize(f, g, DVector::zeros(3), &opts());
        assert!(out.converged, "{} iterations", out.iterations);
        // a step-length test only pins the flat direction to about tol * cond
        assert!(out.value < 1e-10, "{}", out.value);
        for v in out.point.iter() {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-4);
        }
    }

    #[test]
    fn infeasible_region_is_avoided() {
        // f has a pole at x = 2; start at 0 and head toward the pole
        let f = |x: &DVector<f64>| if x[0] < 2.0 { 1.0 / (2.0 - x[0]) - x[0] } else { f64::INFINITY };
        let g = |x: &DVector<f64>| DVector::from_element(1, 1.0 / (2.0 - x[0]).powi(2) - 1.0);
        let out = minimize(f, g, DVector::zeros(1), &opts());
        assert!(out.converged);
        assert_abs_diff_eq!(out.point[0], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn nonsmooth_with_fallback() {
        // |x - 1| + 0.1 x has its minimum at the kink x = 1
        let f = |x: &DVector<f64>| (x[0] - 1.0).abs() + 0.1 * x[0];
        let g = |x: &DVector<f64>| DVector::from_element(1, (x[0] - 1.0).signum() + 0.1);
        let mut o = opts();
        o.subgradient_fallback = true;
        o.tol = 1e-9;
        let out = minimize(f, g, DVector::from_element(1, 3.3), &o);
        assert_abs_diff_eq!(out.point[0], 1.0, epsilon = 1e-3);
        assert!(out.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn respects_iteration_cap() {
        let f = |x: &DVector<f64>| (x[0] - 1.0e6).powi(2) * 1e-12;
        let g = |x: &DVector<f64>| DVector::from_element(1, 2e-12 * (x[0] - 1.0e6));
        let mut o = opts();
        o.max_iter = 1;
        let out = minimize(f, g, DVector::zeros(1), &o);
        assert_eq!(out.iterations, 1);
        assert!(!out.converged);
    }
}
