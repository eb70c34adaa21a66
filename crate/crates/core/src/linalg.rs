//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Spectral condition number of a symmetric positive definite matrix;
/// infinite when it is not positive definite.
pub fn spd_condition(m: &DMatrix<f64>) -> f64 {
    let eig = symmetrize(m).symmetric_eigenvalues();
    let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Relative singular value cutoff used for rank decisions.
pub const RANK_RTOL: f64 = 1e-12;

/// Minimum-norm least-squares solution of `m x = rhs` together with the
/// numerical rank of `m`.
pub fn lstsq_min_norm(m: &DMatrix<f64>, rhs: &DVector<f64>) -> (DVector<f64>, usize) {
    if m.nrows() == 0 || m.ncols() == 0 {
        return (DVector::zeros(m.ncols()), 0);
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cutoff = RANK_RTOL * smax.max(f64::MIN_POSITIVE) * (m.nrows().max(m.ncols()) as f64);
    let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
    let x = svd
        .solve(rhs, cutoff)
        .expect("SVD computed with both U and V");
    (x, rank)
}

/// Orthonormal basis (as columns) of the null space of `m`.
pub fn null_space(m: &DMatrix<f64>) -> DMatrix<f64> {
    let cols = m.ncols();
    if m.nrows() == 0 {
        return DMatrix::identity(cols, cols);
    }
    // pad to at least square so that V is complete
    let mut padded = DMatrix::zeros(m.nrows().max(cols), cols);
    padded.rows_mut(0, m.nrows()).copy_from(m);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cutoff = RANK_RTOL * smax.max(f64::MIN_POSITIVE) * (m.nrows().max(cols) as f64);
    let basis: Vec<DVector<f64>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= cutoff)
        .map(|(idx, _)| v_t.row(idx).transpose())
        .collect();
    if basis.is_empty() {
        DMatrix::zeros(cols, 0)
    } else {
        DMatrix::from_columns(&basis)
    }
}

/// Smallest singular value (zero for an empty or wide-deficient matrix).
pub fn min_singular_value(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    let sv = m.clone().singular_values();
    let smallest = sv.iter().copied().fold(f64::INFINITY, f64::min);
    // fewer singular values than rows means the rows cannot be independent
    if m.nrows() > m.ncols() {
        0.0
    } else {
        smallest
    }
}

fn fd_step(v: f64) -> f64 {
    1e-6 * (1.0 + v.abs())
}

/// Central-difference Jacobian of `f` at `x`.
pub fn fd_jacobian<F>(x: &DVector<f64>, f: F) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let rows = f(x).len();
    let mut jac = DMatrix::zeros(rows, x.len());
    for c in 0..x.len() {
        let h = fd_step(x[c]);
        let mut plus = x.clone();
        plus[c] += h;
        let mut minus = x.clone();
        minus[c] -= h;
        let col = (f(&plus) - f(&minus)) / (2.0 * h);
        jac.set_column(c, &col);
    }
    jac
}

/// Central-difference gradient of a scalar function at `x`.
pub fn fd_gradient<F>(x: &DVector<f64>, f: F) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    DVector::from_iterator(
        x.len(),
        (0..x.len()).map(|c| {
            let h = fd_step(x[c]);
            let mut plus = x.clone();
            plus[c] += h;
            let mut minus = x.clone();
            minus[c] -= h;
            (f(&plus) - f(&minus)) / (2.0 * h)
        }),
    )
}

pub fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}
