//! Linear parameterization of a switched affine plant.
//!
//! The dynamics `ẋ = A x + B u` are rewritten as `ẋ = Y(x, u) θ` with
//!
//! ```text
//! Y = [ I_n ⊗ xᵀ   I_n ⊗ uᵀ ]            (n × n(n+m))
//! θ = [ vec(Aᵀ) ; vec(Bᵀ) ]              (rows of A, then rows of B)
//! ```
//!
//! `vec` stacks columns, so `vec(Aᵀ)` is the row-major flattening of `A`.

use nalgebra::{DMatrix, DVector};

use crate::error::{mismatch, Error, Result};

/// Problem sizes: state dimension `n`, input dimension `m` and number of
/// subsystems.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dimensions {
    n: usize,
    m: usize,
    subsystems: usize,
}

impl Dimensions {
    pub fn new(n: usize, m: usize, subsystems: usize) -> Result<Self> {
        if n == 0 || m == 0 || subsystems == 0 {
            return Err(Error::InvalidDimensions(format!(
                "n, m and the subsystem count must be at least 1 (got n={n}, m={m}, M={subsystems})"
            )));
        }
        Ok(Self { n, m, subsystems })
    }

    pub fn states(&self) -> usize {
        self.n
    }

    pub fn inputs(&self) -> usize {
        self.m
    }

    pub fn subsystems(&self) -> usize {
        self.subsystems
    }

    /// Length of a stacked parameter vector, `n (n + m)`.
    pub fn param_len(&self) -> usize {
        self.n * (self.n + self.m)
    }

    pub(crate) fn check_subsystem(&self, index: usize) -> Result<()> {
        if index >= self.subsystems {
            return Err(Error::IndexOutOfRange {
                index,
                count: self.subsystems,
            });
        }
        Ok(())
    }
}

/// Stacked parameters `θ = [vec(Aᵀ); vec(Bᵀ)]`, optionally tagged with the
/// (zero-based) subsystem it belongs to.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    entries: DVector<f64>,
    subsystem: Option<usize>,
}

impl ParamVector {
    pub fn new(entries: DVector<f64>, dims: &Dimensions) -> Result<Self> {
        if entries.len() != dims.param_len() {
            return Err(mismatch("parameter vector", dims.param_len(), entries.len()));
        }
        Ok(Self {
            entries,
            subsystem: None,
        })
    }

    pub fn zeros(dims: &Dimensions) -> Self {
        Self {
            entries: DVector::zeros(dims.param_len()),
            subsystem: None,
        }
    }

    pub fn with_subsystem(mut self, index: usize) -> Self {
        self.subsystem = Some(index);
        self
    }

    pub fn subsystem(&self) -> Option<usize> {
        self.subsystem
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.entries
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Dense `n × n(n+m)` regressor. Only the Kronecker blocks are populated.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressorMatrix(DMatrix<f64>);

impl RegressorMatrix {
    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }
}

/// Builds `Y(x, u) = [I_n ⊗ xᵀ, I_n ⊗ uᵀ]`.
pub fn build_regressor(
    x: &DVector<f64>,
    u: &DVector<f64>,
    dims: &Dimensions,
) -> Result<RegressorMatrix> {
    let (n, m) = (dims.n, dims.m);
    if x.len() != n {
        return Err(mismatch("state vector", n, x.len()));
    }
    if u.len() != m {
        return Err(mismatch("input vector", m, u.len()));
    }
    Ok(RegressorMatrix(regressor_unchecked(x, u, n, m)))
}

pub(crate) fn regressor_unchecked(x: &DVector<f64>, u: &DVector<f64>, n: usize, m: usize) -> DMatrix<f64> {
    let mut y = DMatrix::zeros(n, n * (n + m));
    let u_offset = n * n;
    for row in 0..n {
        for (k, &xk) in x.iter().enumerate() {
            y[(row, row * n + k)] = xk;
        }
        for (k, &uk) in u.iter().enumerate() {
            y[(row, u_offset + row * m + k)] = uk;
        }
    }
    y
}

/// Packs `(A, B)` into `θ`: the rows of `A` followed by the rows of `B`.
pub fn pack_params(a: &DMatrix<f64>, b: &DMatrix<f64>, dims: &Dimensions) -> Result<ParamVector> {
    let (n, m) = (dims.n, dims.m);
    if a.shape() != (n, n) {
        return Err(mismatch("A matrix", format!("{n}x{n}"), format!("{}x{}", a.nrows(), a.ncols())));
    }
    if b.shape() != (n, m) {
        return Err(mismatch("B matrix", format!("{n}x{m}"), format!("{}x{}", b.nrows(), b.ncols())));
    }
    let mut entries = Vec::with_capacity(dims.param_len());
    for row in 0..n {
        entries.extend(a.row(row).iter());
    }
    for row in 0..n {
        entries.extend(b.row(row).iter());
    }
    Ok(ParamVector {
        entries: DVector::from_vec(entries),
        subsystem: None,
    })
}

/// Inverse of [`pack_params`].
pub fn unpack_params(theta: &ParamVector, dims: &Dimensions) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    unpack_slice(theta.as_vector().as_slice(), dims)
}

pub(crate) fn unpack_slice(theta: &[f64], dims: &Dimensions) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (n, m) = (dims.n, dims.m);
    if theta.len() != dims.param_len() {
        return Err(mismatch("parameter vector", dims.param_len(), theta.len()));
    }
    let a = DMatrix::from_row_slice(n, n, &theta[..n * n]);
    let b = DMatrix::from_row_slice(n, m, &theta[n * n..]);
    Ok((a, b))
}

/// Predicted state derivative `Y θ`.
pub fn predict_derivative(y: &RegressorMatrix, theta: &ParamVector) -> Result<DVector<f64>> {
    if y.0.ncols() != theta.len() {
        return Err(mismatch("regressor columns", theta.len(), y.0.ncols()));
    }
    Ok(&y.0 * theta.as_vector())
}
