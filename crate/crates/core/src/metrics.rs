//! Recovery and reliability metrics for learned graphs.

use std::collections::HashMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::LaplacianMatrix;
use crate::moments::SignalMatrix;

/// Weight above which an edge counts as present.
pub const DEFAULT_EDGE_THRESHOLD: f64 = 1e-4;

/// Edge-presence confusion counts over the `d(d-1)/2` vertex pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// Matthews correlation; 0 when any marginal is empty.
    pub fn mcc(&self) -> f64 {
        let (tp, tn, fp, fn_) = (self.tp as f64, self.tn as f64, self.fp as f64, self.fn_ as f64);
        let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
        if denom == 0.0 {
            return 0.0;
        }
        (tp * tn - fp * fn_) / denom.sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mcc: f64,
    pub dog: f64,
    pub reliability: Option<f64>,
    pub nmi: Option<f64>,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Header plus one data row; absent fields are empty cells.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.serialize(self)?;
        wtr.flush()?;
        Ok(())
    }
}

fn same_dim(a: &LaplacianMatrix, b: &LaplacianMatrix) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::arg(format!("dimension mismatch: {} vs {}", a.dim(), b.dim())));
    }
    Ok(())
}

/// Confusion counts of `learned` against `truth`; an edge is present when its
/// weight `-L_ij` exceeds `threshold`.
pub fn confusion(learned: &LaplacianMatrix, truth: &LaplacianMatrix, threshold: f64) -> Result<ConfusionCounts> {
    same_dim(learned, truth)?;
    if !(threshold >= 0.0) {
        return Err(Error::arg(format!("edge threshold must be >= 0, got {threshold}")));
    }
    let (a, b) = (learned.as_matrix(), truth.as_matrix());
    let mut c = ConfusionCounts::default();
    for j in 0..learned.dim() {
        for i in j + 1..learned.dim() {
            match (-a[(i, j)] > threshold, -b[(i, j)] > threshold) {
                (true, true) => c.tp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
            }
        }
    }
    Ok(c)
}

pub fn mcc(learned: &LaplacianMatrix, truth: &LaplacianMatrix, threshold: f64) -> Result<f64> {
    Ok(confusion(learned, truth, threshold)?.mcc())
}

/// Relative Frobenius error `||L - L_gt||_F / ||L_gt||_F`.
pub fn dog(learned: &LaplacianMatrix, truth: &LaplacianMatrix) -> Result<f64> {
    same_dim(learned, truth)?;
    let norm = truth.as_matrix().norm();
    if norm == 0.0 {
        return Err(Error::arg("ground truth Laplacian is zero"));
    }
    Ok((learned.as_matrix() - truth.as_matrix()).norm() / norm)
}

/// Fraction of test columns whose risk `x^T L x + eta ||L||_F^2` is strictly
/// below the certificate `r_star`.
pub fn reliability(x_test: &SignalMatrix, l: &LaplacianMatrix, eta: f64, r_star: f64) -> Result<f64> {
    if x_test.dim() != l.dim() {
        return Err(Error::arg(format!("test signals have d = {}, Laplacian has d = {}", x_test.dim(), l.dim())));
    }
    if !r_star.is_finite() {
        return Err(Error::arg("certificate must be finite"));
    }
    let offset = eta * l.frobenius_sq();
    let x = x_test.as_matrix();
    let lx = l.as_matrix() * x;
    let below = (0..x.ncols()).filter(|&t| lx.column(t).dot(&x.column(t)) + offset < r_star).count();
    Ok(below as f64 / x.ncols() as f64)
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information normalized by the mean of the two entropies. A
/// labeling with zero entropy scores 0.
pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::arg(format!("labelings have lengths {} and {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::arg("labelings are empty"));
    }
    let n = a.len() as f64;
    let mut ca: HashMap<usize, usize> = HashMap::new();
    let mut cb: HashMap<usize, usize> = HashMap::new();
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *ca.entry(x).or_default() += 1;
        *cb.entry(y).or_default() += 1;
        *joint.entry((x, y)).or_default() += 1;
    }
    let ha = entropy(ca.values().copied(), n);
    let hb = entropy(cb.values().copied(), n);
    if ha == 0.0 || hb == 0.0 {
        return Ok(0.0);
    }
    let mi: f64 = joint
        .iter()
        .map(|(&(x, y), &c)| {
            let pxy = c as f64 / n;
            pxy * (pxy * n * n / (ca[&x] as f64 * cb[&y] as f64)).ln()
        })
        .sum();
    Ok((mi / (0.5 * (ha + hb))).clamp(0.0, 1.0))
}

/// Square root of a symmetric PSD matrix; negative round-off eigenvalues are
/// clipped.
fn psd_sqrt(m: &DMatrix<f64>, name: &str) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::arg(format!("{name} is not square")));
    }
    let sym = (m + m.transpose()) * 0.5;
    if (&sym - m).amax() > 1e-10 * m.amax().max(1.0) {
        return Err(Error::arg(format!("{name} is not symmetric")));
    }
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.amax().max(1.0);
    if eig.eigenvalues.min() < -1e-10 * scale {
        return Err(Error::arg(format!("{name} is not PSD (min eigenvalue {})", eig.eigenvalues.min())));
    }
    let root = eig.eigenvalues.map(|x| x.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose())
}

/// Type-2 Wasserstein distance between `N(mu1, s1)` and `N(mu2, s2)`.
pub fn wasserstein2_gaussian(mu1: &DVector<f64>, s1: &DMatrix<f64>, mu2: &DVector<f64>, s2: &DMatrix<f64>) -> Result<f64> {
    let d = mu1.len();
    if mu2.len() != d || s1.shape() != (d, d) || s2.shape() != (d, d) {
        return Err(Error::arg("mean and covariance shapes do not agree"));
    }
    psd_sqrt(s1, "first covariance")?;
    let r2 = psd_sqrt(s2, "second covariance")?;
    let cross = psd_sqrt(&(&r2 * s1 * &r2), "cross term")?;
    let cov_term = (s1.trace() + s2.trace() - 2.0 * cross.trace()).max(0.0);
    Ok(((mu1 - mu2).norm_squared() + cov_term).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{weights_to_laplacian, WeightVector};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn lap(d: usize, w: Vec<f64>) -> LaplacianMatrix {
        weights_to_laplacian(&WeightVector::new(d, w).unwrap())
    }

    #[test]
    fn mcc_extremes() {
        let a = lap(4, vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let b = lap(4, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert_eq!(mcc(&a, &a, 1e-4).unwrap(), 1.0);
        assert_abs_diff_eq!(mcc(&a, &b, 1e-4).unwrap(), -1.0, epsilon = 1e-15);
    }

    #[test]
    fn mcc_from_counts() {
        let c = ConfusionCounts { tp: 3, tn: 4, fp: 1, fn_: 2 };
        assert_abs_diff_eq!(c.mcc(), 10.0 / 600f64.sqrt(), epsilon = 1e-15);
        // realize the same counts on a d = 5 graph (10 pairs)
        let learned = lap(5, vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let truth = lap(5, vec![1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let got = confusion(&learned, &truth, 1e-4).unwrap();
        assert_eq!(got, c);
        assert_eq!(got.total(), 10);
    }

    #[test]
    fn mcc_degenerate_and_mismatch() {
        let empty = lap(3, vec![0.0; 3]);
        let full = lap(3, vec![1.0; 3]);
        assert_eq!(mcc(&empty, &full, 1e-4).unwrap(), 0.0);
        assert!(mcc(&empty, &lap(4, vec![0.0; 6]), 1e-4).is_err());
        // weights at the threshold are absent
        let tiny = lap(3, vec![1e-4, 1.0, 1.0]);
        assert_eq!(confusion(&tiny, &full, 1e-4).unwrap().fn_, 1);
    }

    #[test]
    fn dog_examples() {
        let gt = lap(3, vec![1.0, 0.5, 2.0]);
        assert_eq!(dog(&gt, &gt).unwrap(), 0.0);
        assert_abs_diff_eq!(dog(&lap(3, vec![0.0; 3]), &gt).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(dog(&gt.scaled(2.0), &gt).unwrap(), 1.0, epsilon = 1e-15);
        assert!(dog(&gt, &lap(3, vec![0.0; 3])).is_err());
    }

    #[test]
    fn reliability_examples() {
        let l = lap(2, vec![1.0]);
        // risks x^T L x = (x1 - x2)^2 of 0, 1, 4, 9
        let x = SignalMatrix::new(DMatrix::from_row_slice(2, 4, &[0.0, 1.0, 2.0, 3.0, 0.0, 0.0, 0.0, 0.0])).unwrap();
        assert_eq!(reliability(&x, &l, 0.0, 100.0).unwrap(), 1.0);
        assert_eq!(reliability(&x, &l, 0.0, 0.0).unwrap(), 0.0);
        assert_eq!(reliability(&x, &l, 0.0, 2.0).unwrap(), 0.5);
        // strict comparison, eta shifts every risk by eta ||L||^2 = 4 eta
        assert_eq!(reliability(&x, &l, 0.0, 1.0).unwrap(), 0.25);
        assert_eq!(reliability(&x, &l, 0.25, 2.0).unwrap(), 0.25);
        assert!(reliability(&x, &l, 0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn nmi_examples() {
        let a = [0, 0, 1, 1, 2, 2];
        assert_abs_diff_eq!(nmi(&a, &a).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(nmi(&a, &[7, 7, 3, 3, 5, 5]).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(nmi(&[4; 6], &a).unwrap(), 0.0);
        assert!(nmi(&a, &[0, 1]).is_err());
        // independent halves share no information
        assert_abs_diff_eq!(nmi(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn w2_examples() {
        let z = DVector::zeros(2);
        let i = DMatrix::<f64>::identity(2, 2);
        assert_abs_diff_eq!(wasserstein2_gaussian(&z, &i, &z, &i).unwrap(), 0.0, epsilon = 1e-12);
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        assert_abs_diff_eq!(wasserstein2_gaussian(&z, &i, &e1, &i).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(wasserstein2_gaussian(&z, &(&i * 4.0), &z, &i).unwrap(), 2f64.sqrt(), epsilon = 1e-12);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(wasserstein2_gaussian(&z, &bad, &z, &i).is_err());
    }

    #[test]
    fn report_serializes() {
        let r = MetricsReport { mcc: 0.5, dog: 0.25, reliability: Some(1.0), nmi: None };
        let json = r.to_json().unwrap();
        assert_eq!(serde_json::from_str::<MetricsReport>(&json).unwrap(), r);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "mcc,dog,reliability,nmi\n0.5,0.25,1.0,\n");
    }

    fn gaussian(d: usize) -> impl Strategy<Value = (DVector<f64>, DMatrix<f64>)> {
        (proptest::collection::vec(-2.0f64..2.0, d), proptest::collection::vec(-1.0f64..1.0, d * d)).prop_map(move |(m, a)| {
            let a = DMatrix::from_vec(d, d, a);
            (DVector::from_vec(m), &a * a.transpose())
        })
    }

    proptest! {
        #[test]
        fn w2_is_a_metric(a in gaussian(3), b in gaussian(3), c in gaussian(3)) {
            let ab = wasserstein2_gaussian(&a.0, &a.1, &b.0, &b.1).unwrap();
            let ba = wasserstein2_gaussian(&b.0, &b.1, &a.0, &a.1).unwrap();
            let bc = wasserstein2_gaussian(&b.0, &b.1, &c.0, &c.1).unwrap();
            let ac = wasserstein2_gaussian(&a.0, &a.1, &c.0, &c.1).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() <= 1e-8);
            prop_assert!(ac <= ab + bc + 1e-8);
        }

        #[test]
        fn mcc_is_symmetric(a in proptest::collection::vec(0.0f64..1.0, 10), b in proptest::collection::vec(0.0f64..1.0, 10)) {
            let sparse = |w: Vec<f64>| lap(5, w.into_iter().map(|x| if x < 0.5 { 0.0 } else { x }).collect());
            let (la, lb) = (sparse(a), sparse(b));
            prop_assert_eq!(mcc(&la, &lb, 1e-4).unwrap(), mcc(&lb, &la, 1e-4).unwrap());
        }

        #[test]
        fn reliability_ignores_column_order(x in proptest::collection::vec(-2.0f64..2.0, 3 * 8), shift in 0usize..8, r in 0.0f64..6.0) {
            let l = lap(3, vec![1.0, 0.5, 0.2]);
            let m = DMatrix::from_vec(3, 8, x);
            let rotated = DMatrix::from_fn(3, 8, |i, j| m[(i, (j + shift) % 8)]);
            let a = reliability(&SignalMatrix::new(m).unwrap(), &l, 0.1, r).unwrap();
            let b = reliability(&SignalMatrix::new(rotated).unwrap(), &l, 0.1, r).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
