//! Dense complex matrix kernel: Hermitian eigendecomposition, matrix
//! exponentials with Hermitian generators, Kronecker products, partial
//! traces and ordered operator products.
//!
//! Everything above this module is expressed in these operations. All
//! functions are pure; matrices at desk scale (dim ≲ 64) only.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
/// Dense complex matrix, the carrier for every operator in the crate.
pub type CMatrix = DMatrix<C64>;

/// Relative Hermiticity tolerance against the max-norm of the input.
pub const HERMITICITY_RTOL: f64 = 1e-10;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn cr(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Build a matrix from rows given in row-major logical order.
pub fn matrix_from_rows(rows: &[Vec<C64>]) -> Result<CMatrix> {
    let r = rows.len();
    if r == 0 {
        return Err(Error::BadDimension("matrix needs at least one row".into()));
    }
    let cols = rows[0].len();
    if cols == 0 || rows.iter().any(|row| row.len() != cols) {
        return Err(Error::BadDimension("ragged or empty matrix rows".into()));
    }
    let flat: Vec<C64> = rows.iter().flat_map(|row| row.iter().copied()).collect();
    Ok(CMatrix::from_row_slice(r, cols, &flat))
}

pub fn identity(dim: usize) -> CMatrix {
    CMatrix::identity(dim, dim)
}

/// Max-norm ‖m‖_max = max |entry|.
pub fn max_norm(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Max-norm of the anti-Hermitian part, ‖m − m†‖_max.
pub fn max_asymmetry(m: &CMatrix) -> f64 {
    max_norm(&(m - m.adjoint()))
}

pub fn is_finite(m: &CMatrix) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

fn require_square(m: &CMatrix) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare { rows: m.nrows(), cols: m.ncols() });
    }
    Ok(())
}

/// Check Hermiticity within the relative tolerance and return the
/// symmetrized matrix (m + m†)/2. Inputs beyond tolerance are rejected
/// rather than silently symmetrized.
pub fn require_hermitian(m: &CMatrix) -> Result<CMatrix> {
    require_square(m)?;
    let asym = max_asymmetry(m);
    let tol = HERMITICITY_RTOL * max_norm(m);
    if asym > tol {
        return Err(Error::NotHermitian { max_asymmetry: asym, tolerance: tol });
    }
    Ok((m + m.adjoint()).scale(0.5))
}

/// Hermitian eigendecomposition m = V diag(λ) V†.
///
/// Eigenvalues come out ascending with stable tie-breaking; eigenvector
/// columns are gauged so their largest-magnitude entry is real positive,
/// and near-degenerate subspaces are re-orthonormalized.
pub fn eig_hermitian(m: &CMatrix) -> Result<(Vec<f64>, CMatrix)> {
    let h = require_hermitian(m)?;
    let dim = h.nrows();
    let eig = nalgebra::SymmetricEigen::new(h);
    // Ascending sort, ties broken by original column index.
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .unwrap()
            .then(a.cmp(&b))
    });
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMatrix::zeros(dim, dim);
    for (col, &i) in order.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(i));
    }
    reorthonormalize_degenerate(&values, &mut vectors);
    gauge_columns(&mut vectors);
    Ok((values, vectors))
}

/// Modified Gram-Schmidt inside clusters of (near-)equal eigenvalues.
fn reorthonormalize_degenerate(values: &[f64], vectors: &mut CMatrix) {
    let dim = values.len();
    let spread = if dim > 1 { values[dim - 1] - values[0] } else { 0.0 };
    let tol = 1e-12 * (1.0 + spread.abs());
    let mut start = 0;
    while start < dim {
        let mut end = start + 1;
        while end < dim && values[end] - values[end - 1] <= tol {
            end += 1;
        }
        if end - start > 1 {
            for j in start..end {
                let mut col = vectors.column(j).into_owned();
                for k in start..j {
                    let prev = vectors.column(k);
                    let overlap = prev.dotc(&col);
                    col -= prev.into_owned() * overlap;
                }
                let norm = col.norm();
                if norm > 0.0 {
                    col /= cr(norm);
                }
                vectors.set_column(j, &col);
            }
        }
        start = end;
    }
}

/// Phase gauge: rotate each column so its largest-magnitude entry
/// (first such row on ties) is real positive.
fn gauge_columns(vectors: &mut CMatrix) {
    let (rows, cols) = (vectors.nrows(), vectors.ncols());
    for j in 0..cols {
        let mut best = 0;
        let mut best_mag = 0.0f64;
        for i in 0..rows {
            let mag = vectors[(i, j)].norm();
            if mag > best_mag + 1e-12 {
                best_mag = mag;
                best = i;
            }
        }
        let pivot = vectors[(best, j)];
        if pivot.norm() > 0.0 {
            let phase = pivot / cr(pivot.norm());
            let correction = phase.conj();
            for i in 0..rows {
                vectors[(i, j)] *= correction;
            }
        }
    }
}

/// exp(−i s h) for Hermitian h, via eigendecomposition. The result is
/// unitary by construction; no Padé or scaling-and-squaring is involved.
pub fn expm_hermitian_phase(h: &CMatrix, s: f64) -> Result<CMatrix> {
    let (values, vectors) = eig_hermitian(h)?;
    let phases = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        values.len(),
        values.iter().map(|&lambda| c(0.0, -s * lambda).exp()),
    ));
    Ok(&vectors * phases * vectors.adjoint())
}

/// Kronecker product with index convention (i_A, i_B) → i_A·dim_B + i_B.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Trace out the second (B) factor of a (dim_a·dim_b)-dimensional operator.
pub fn partial_trace_b(m: &CMatrix, dim_a: usize, dim_b: usize) -> Result<CMatrix> {
    let total = dim_a * dim_b;
    if m.nrows() != total || m.ncols() != total {
        return Err(Error::DimensionMismatch(format!(
            "expected {total}x{total} for dims {dim_a}x{dim_b}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let mut out = CMatrix::zeros(dim_a, dim_a);
    for i in 0..dim_a {
        for j in 0..dim_a {
            let mut acc = C64::default();
            for k in 0..dim_b {
                acc += m[(i * dim_b + k, j * dim_b + k)];
            }
            out[(i, j)] = acc;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProductOrder {
    /// A_1 A_2 ··· A_n
    Forward,
    /// A_n ··· A_2 A_1
    Reverse,
}

/// Ordered product of square factors of equal dimension; the empty
/// product is the identity of the given dimension.
pub fn ordered_product(dim: usize, factors: &[CMatrix], order: ProductOrder) -> Result<CMatrix> {
    let mut acc = identity(dim);
    let mut apply = |f: &CMatrix| -> Result<()> {
        if f.nrows() != dim || f.ncols() != dim {
            return Err(Error::DimensionMismatch(format!(
                "factor is {}x{}, expected {dim}x{dim}",
                f.nrows(),
                f.ncols()
            )));
        }
        acc = &acc * f;
        Ok(())
    };
    match order {
        ProductOrder::Forward => {
            for f in factors {
                apply(f)?;
            }
        }
        ProductOrder::Reverse => {
            for f in factors.iter().rev() {
                apply(f)?;
            }
        }
    }
    Ok(acc)
}

/// tr(a·b†) computed without forming the product.
pub fn trace_of_product_adjoint(a: &CMatrix, b: &CMatrix) -> C64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| x * y.conj()).sum()
}

pub fn trace(m: &CMatrix) -> C64 {
    m.diagonal().iter().sum()
}

/// Pauli matrices and a few standard states, used pervasively in tests
/// and shipped witnesses.
pub mod qubit {
    use super::{c, cr, CMatrix};

    pub fn sigma_x() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[cr(0.0), cr(1.0), cr(1.0), cr(0.0)])
    }

    pub fn sigma_y() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[cr(0.0), c(0.0, -1.0), c(0.0, 1.0), cr(0.0)])
    }

    pub fn sigma_z() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[cr(1.0), cr(0.0), cr(0.0), cr(-1.0)])
    }

    /// |0⟩⟨0|
    pub fn ket0_proj() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[cr(1.0), cr(0.0), cr(0.0), cr(0.0)])
    }

    /// |1⟩⟨1|
    pub fn ket1_proj() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[cr(0.0), cr(0.0), cr(0.0), cr(1.0)])
    }

    /// |+⟩⟨+|
    pub fn plus_proj() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[cr(0.5), cr(0.5), cr(0.5), cr(0.5)])
    }

    /// |−⟩⟨−|
    pub fn minus_proj() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[cr(0.5), cr(-0.5), cr(-0.5), cr(0.5)])
    }
}
