//! Laplacian representation and the weight/Laplacian operator pair.
//!
//! A graph on `d` vertices is parameterized by the `d(d-1)/2` nonnegative
//! weights of its lower triangle. The forward operator builds the Laplacian
//! from those weights; its adjoint maps a symmetric matrix back to weight
//! space so that
//!
//! ```text
//! <T v, V>_F = <v, T* V>
//! ```
//!
//! Weights are stored column by column over the strict lower triangle, i.e.
//! (2,1), (3,1), ..., (d,1), (3,2), ..., (d,d-1). With 1-based indices the
//! position of edge (i, j), i > j, is `i - j + (j-1)(2d-j)/2`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};

/// Number of free edge weights on `d` vertices.
pub fn edge_count(d: usize) -> usize {
    d * d.saturating_sub(1) / 2
}

/// 1-based position of edge `(i, j)` with `i > j` in the weight vector.
pub fn index_map(i: usize, j: usize, d: usize) -> Result<usize> {
    if j < 1 || i <= j || i > d {
        return Err(Error::arg(format!(
            "edge index ({i}, {j}) out of range for d = {d}; need 1 <= j < i <= d"
        )));
    }
    Ok(i - j + (j - 1) * (2 * d - j) / 2)
}

/// 0-based variant of [`index_map`] without range checks.
#[inline]
pub(crate) fn lower_index(i: usize, j: usize, d: usize) -> usize {
    debug_assert!(j < i && i < d);
    // (i+1) - (j+1) + j(2d - j - 1)/2 - 1
    i - j - 1 + j * (2 * d - j - 1) / 2
}

/// Nonnegative edge weights of an undirected graph without self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    d: usize,
    values: DVector<f64>,
}

impl WeightVector {
    pub fn new(d: usize, values: Vec<f64>) -> Result<Self> {
        Self::from_vector(d, DVector::from_vec(values))
    }

    pub fn from_vector(d: usize, values: DVector<f64>) -> Result<Self> {
        if d < 2 {
            return Err(Error::arg(format!("need at least 2 vertices, got {d}")));
        }
        if values.len() != edge_count(d) {
            return Err(Error::arg(format!(
                "weight vector for d = {d} must have {} entries, got {}",
                edge_count(d),
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::arg(format!("edge weights must be finite and >= 0, got {bad}")));
        }
        Ok(Self { d, values })
    }

    pub fn zeros(d: usize) -> Result<Self> {
        Self::from_vector(d, DVector::zeros(edge_count(d)))
    }

    /// Complete graph with equal weights and trace `d`.
    pub fn uniform_complete(d: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::arg(format!("need at least 2 vertices, got {d}")));
        }
        let w = 1.0 / (d as f64 - 1.0);
        Self::from_vector(d, DVector::from_element(edge_count(d), w))
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_values(self) -> DVector<f64> {
        self.values
    }

    /// Weight of edge `(i, j)`, 0-based, either order.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        match i.cmp(&j) {
            std::cmp::Ordering::Greater => self.values[lower_index(i, j, self.d)],
            std::cmp::Ordering::Less => self.values[lower_index(j, i, self.d)],
            std::cmp::Ordering::Equal => 0.0,
        }
    }
}

/// Symmetric matrix with zero row sums and nonpositive off-diagonal entries.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianMatrix(DMatrix<f64>);

impl LaplacianMatrix {
    /// Wraps `m` after checking every Laplacian constraint at tolerance `tol`.
    pub fn try_from_matrix(m: DMatrix<f64>, tol: f64) -> Result<Self> {
        if !m.is_square() || m.nrows() < 2 {
            return Err(Error::arg(format!(
                "Laplacian must be square with d >= 2, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let report = validate_laplacian(&m, tol)?;
        if !report.all_pass() {
            return Err(Error::arg(format!("matrix is not a Laplacian: {report:?}")));
        }
        Ok(Self(m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.0.norm_squared()
    }

    /// Edge weights `-L_ij`, clamped at zero to absorb round-off.
    pub fn weights(&self) -> WeightVector {
        let d = self.dim();
        let mut values = Vec::with_capacity(edge_count(d));
        for j in 0..d {
            for i in (j + 1)..d {
                values.push((-0.5 * (self.0[(i, j)] + self.0[(j, i)])).max(0.0));
            }
        }
        WeightVector { d, values: DVector::from_vec(values) }
    }

    /// Multiplies every entry by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self(&self.0 * factor)
    }

    /// Rescales so that the trace equals the number of vertices. A zero
    /// Laplacian is returned unchanged.
    pub fn normalized_trace(&self) -> Self {
        let tr = self.trace();
        if tr > 0.0 {
            let w = self.weights();
            let factor = self.dim() as f64 / tr;
            weights_to_laplacian(&WeightVector { d: w.d, values: w.values * factor })
        } else {
            self.clone()
        }
    }

    pub fn eigenvalues(&self) -> DVector<f64> {
        SymmetricEigen::new(self.0.clone()).eigenvalues
    }

    /// Rows of the matrix, with the negative zeros of absent edges as `0.0`.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.0.row_iter().map(|r| r.iter().map(|x| x + 0.0).collect()).collect()
    }
}

impl Serialize for LaplacianMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(s)
    }
}

/// Builds the Laplacian of `d` vertices from raw lower-triangle weights.
pub(crate) fn laplacian_from_slice(d: usize, v: &[f64]) -> DMatrix<f64> {
    debug_assert_eq!(v.len(), edge_count(d));
    let mut l = DMatrix::zeros(d, d);
    let mut k = 0;
    for j in 0..d {
        for i in (j + 1)..d {
            let w = v[k];
            l[(i, j)] = -w;
            l[(j, i)] = -w;
            l[(i, i)] += w;
            l[(j, j)] += w;
            k += 1;
        }
    }
    l
}

/// The forward operator `T`.
pub fn weights_to_laplacian(v: &WeightVector) -> LaplacianMatrix {
    LaplacianMatrix(laplacian_from_slice(v.d, v.values.as_slice()))
}

/// `T* V` without the shape checks of [`adjoint_weights`].
pub(crate) fn adjoint_unchecked(m: &DMatrix<f64>) -> DVector<f64> {
    let d = m.nrows();
    let mut out = DVector::zeros(edge_count(d));
    let mut k = 0;
    for j in 0..d {
        for i in (j + 1)..d {
            out[k] = m[(i, i)] - m[(i, j)] - m[(j, i)] + m[(j, j)];
            k += 1;
        }
    }
    out
}

/// The adjoint operator `T*`: `[T* V]_k = V_ii - V_ij - V_ji + V_jj`.
pub fn adjoint_weights(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    if !m.is_square() {
        return Err(Error::arg(format!("adjoint needs a square matrix, got {}x{}", m.nrows(), m.ncols())));
    }
    if m.nrows() < 2 {
        return Err(Error::arg("adjoint needs d >= 2"));
    }
    Ok(adjoint_unchecked(m))
}

/// Largest eigenvalue of a Laplacian.
pub fn max_eigenvalue(l: &LaplacianMatrix) -> f64 {
    sym_max_eigenvalue(&l.0)
}

pub(crate) fn sym_max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.max()
}

/// Drops edges lighter than `threshold` and restores zero row sums.
pub fn prune_edges(l: &LaplacianMatrix, threshold: f64) -> Result<LaplacianMatrix> {
    if !(threshold >= 0.0) {
        return Err(Error::arg(format!("prune threshold must be >= 0, got {threshold}")));
    }
    let mut w = l.weights();
    w.values.iter_mut().filter(|x| **x < threshold).for_each(|x| *x = 0.0);
    Ok(weights_to_laplacian(&w))
}

/// Per-constraint membership of a matrix in the Laplacian set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstraintReport {
    pub symmetric: bool,
    pub zero_row_sums: bool,
    pub offdiag_sign: bool,
    pub trace_value: f64,
    pub psd: bool,
}

impl ConstraintReport {
    pub fn all_pass(&self) -> bool {
        self.symmetric && self.zero_row_sums && self.offdiag_sign && self.psd
    }
}

/// Checks symmetry, zero row sums, off-diagonal sign and positive
/// semi-definiteness, each at tolerance `tol` scaled by the entry magnitude.
pub fn validate_laplacian(m: &DMatrix<f64>, tol: f64) -> Result<ConstraintReport> {
    if !m.is_square() {
        return Err(Error::arg(format!("expected a square matrix, got {}x{}", m.nrows(), m.ncols())));
    }
    let d = m.nrows();
    let mut symmetric = true;
    let mut offdiag_sign = true;
    for i in 0..d {
        for j in 0..d {
            let a = m[(i, j)];
            if !a.is_finite() {
                symmetric = false;
            }
            if (a - m[(j, i)]).abs() > tol * a.abs().max(1.0) {
                symmetric = false;
            }
            if i != j && a > tol * a.abs().max(1.0) {
                offdiag_sign = false;
            }
        }
    }
    let zero_row_sums = m.row_iter().all(|r| {
        let scale = r.iter().fold(1.0_f64, |acc, x| acc.max(x.abs()));
        r.sum().abs() <= tol * scale
    });
    let psd = if symmetric {
        let eig = SymmetricEigen::new(m.clone()).eigenvalues;
        let scale = eig.iter().fold(1.0_f64, |acc, x| acc.max(x.abs()));
        eig.min() >= -1e-8 * scale
    } else {
        false
    };
    Ok(ConstraintReport { symmetric, zero_row_sums, offdiag_sign, trace_value: m.trace(), psd })
}
