//! Covariance families and matrix-variate normal sampling.
//!
//! A `p x n` data matrix `X ~ N(mu 1', Sigma (x) Psi)` has row (variable)
//! covariance `Sigma` and column (sample) covariance `Psi`. Draws are realized
//! as `X = mu 1' + Sigma^{1/2} Z Psi^{1/2}` with `Z` filled from a
//! counter-based normal stream.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::NormalStream;

/// Eigendecomposition of a symmetric matrix, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

/// A symmetric covariance matrix with strictly positive diagonal.
#[derive(Clone, Debug)]
pub struct CovMatrix {
    entries: DMatrix<f64>,
    spectrum: OnceLock<Spectrum>,
}

impl CovMatrix {
    /// Wraps `entries` after checking squareness, exact symmetry, finiteness
    /// and a positive diagonal.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let (r, c) = entries.shape();
        if r != c || r == 0 {
            return Err(Error::Dimension(format!(
                "covariance must be square and non-empty, got {r}x{c}"
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("covariance has non-finite entries"));
        }
        for i in 0..r {
            if entries[(i, i)] <= 0.0 {
                return Err(Error::param(format!("diagonal entry {i} is not positive")));
            }
            for j in 0..i {
                if entries[(i, j)] != entries[(j, i)] {
                    return Err(Error::param(format!(
                        "covariance is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self {
            entries,
            spectrum: OnceLock::new(),
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            entries: DMatrix::identity(dim, dim),
            spectrum: OnceLock::new(),
        }
    }

    // Generators build symmetric matrices by construction.
    fn from_fn(dim: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let entries = DMatrix::from_fn(dim, dim, |i, j| if i <= j { f(i, j) } else { f(j, i) });
        Self {
            entries,
            spectrum: OnceLock::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.entries.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_diagonal(&self) -> bool {
        let d = self.dim();
        (0..d).all(|j| (0..d).all(|i| i == j || self.entries[(i, j)] == 0.0))
    }

    pub fn is_identity(&self) -> bool {
        self.is_diagonal() && (0..self.dim()).all(|i| self.entries[(i, i)] == 1.0)
    }

    /// Cached eigendecomposition (eigenvalues ascending).
    pub fn spectrum(&self) -> &Spectrum {
        self.spectrum.get_or_init(|| {
            let eig = SymmetricEigen::new(self.entries.clone());
            let d = self.dim();
            let mut order: Vec<usize> = (0..d).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
            let eigenvalues = DVector::from_iterator(d, order.iter().map(|&k| eig.eigenvalues[k]));
            let mut eigenvectors = DMatrix::zeros(d, d);
            for (dst, &src) in order.iter().enumerate() {
                eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
            }
            Spectrum {
                eigenvalues,
                eigenvectors,
            }
        })
    }

    /// Inverse through a Cholesky factorization.
    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        let chol = self.entries.clone().cholesky().ok_or(Error::NotPsd {
            min_eigenvalue: self.spectrum().eigenvalues[0],
            tolerance: 0.0,
        })?;
        let mut inv = chol.inverse();
        symmetrize(&mut inv);
        Ok(inv)
    }

    /// Returns the matrix with rows and columns permuted by `perm`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let d = self.dim();
        if perm.len() != d {
            return Err(Error::Dimension("permutation length".into()));
        }
        Ok(Self::from_fn(d, |i, j| self.entries[(perm[i], perm[j])]))
    }
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let d = m.nrows();
    for j in 0..d {
        for i in 0..j {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// AR(1)-type autocorrelation matrix, entry `rho^|i-j|`.
pub fn gen_autocorr(dim: usize, rho: f64) -> Result<CovMatrix> {
    if dim == 0 {
        return Err(Error::param("dim must be positive"));
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::param(format!(
            "autocorrelation rho must lie in [0, 1), got {rho}"
        )));
    }
    Ok(CovMatrix::from_fn(dim, |i, j| rho.powi((j - i) as i32)))
}

/// Banded matrix: 1 on the diagonal, 0.6 and 0.3 on the first two off-diagonals.
pub fn gen_banded(dim: usize) -> Result<CovMatrix> {
    if dim < 3 {
        return Err(Error::param(format!(
            "banded matrix needs dim >= 3, got {dim}"
        )));
    }
    Ok(CovMatrix::from_fn(dim, |i, j| match j - i {
        0 => 1.0,
        1 => 0.6,
        2 => 0.3,
        _ => 0.0,
    }))
}

/// Block-diagonal matrix with `block x block` equicorrelated blocks. A
/// trailing partial block (when `block` does not divide `dim`) is identity.
pub fn gen_block(dim: usize, block: usize, offdiag: f64) -> Result<CovMatrix> {
    if dim == 0 || block == 0 {
        return Err(Error::param("dim and block must be positive"));
    }
    if block > 1 && (offdiag >= 1.0 || offdiag <= -1.0 / (block as f64 - 1.0)) {
        return Err(Error::param(format!(
            "off-diagonal {offdiag} makes a {block}x{block} block indefinite"
        )));
    }
    let full = (dim / block) * block;
    Ok(CovMatrix::from_fn(dim, |i, j| {
        if i == j {
            1.0
        } else if j < full && i / block == j / block {
            offdiag
        } else {
            0.0
        }
    }))
}

/// Equicorrelation `rho 11' + (1 - rho) I`.
pub fn gen_equicorr(dim: usize, rho: f64) -> Result<CovMatrix> {
    if dim == 0 {
        return Err(Error::param("dim must be positive"));
    }
    let lower = if dim > 1 {
        -1.0 / (dim as f64 - 1.0)
    } else {
        f64::NEG_INFINITY
    };
    if !(rho > lower && rho < 1.0) {
        return Err(Error::param(format!(
            "equicorrelation rho {rho} outside ({lower}, 1)"
        )));
    }
    Ok(CovMatrix::from_fn(
        dim,
        |i, j| if i == j { 1.0 } else { rho },
    ))
}

/// Sample covariance with a single correlated pair:
/// `psi_12 = psi_21 = kappa * sqrt(ln n / p)`, identity elsewhere.
pub fn gen_sparse_pair(n: usize, p: usize, kappa: f64) -> Result<CovMatrix> {
    if n < 2 || p == 0 {
        return Err(Error::param("sparse pair needs n >= 2 and p >= 1"));
    }
    if !(kappa >= 0.0) {
        return Err(Error::param(format!(
            "kappa must be nonnegative, got {kappa}"
        )));
    }
    let off = kappa * ((n as f64).ln() / p as f64).sqrt();
    if off >= 1.0 {
        return Err(Error::param(format!("sparse-pair off-diagonal {off} >= 1")));
    }
    Ok(CovMatrix::from_fn(n, |i, j| match (i, j) {
        _ if i == j => 1.0,
        (0, 1) => off,
        _ => 0.0,
    }))
}

/// Symmetric PSD square root. Eigenvalues in `[-1e-8 max|S|, 0)` are clamped
/// to zero; anything more negative is an error.
pub fn sym_sqrt(s: &CovMatrix) -> Result<DMatrix<f64>> {
    let d = s.dim();
    if s.is_diagonal() {
        return Ok(DMatrix::from_fn(d, d, |i, j| {
            if i == j {
                s.get(i, i).sqrt()
            } else {
                0.0
            }
        }));
    }
    let tol = 1e-8 * s.max_abs();
    let spec = s.spectrum();
    let min = spec.eigenvalues[0];
    if min < -tol {
        return Err(Error::NotPsd {
            min_eigenvalue: min,
            tolerance: tol,
        });
    }
    let roots = spec.eigenvalues.map(|l| l.max(0.0).sqrt());
    let u = &spec.eigenvectors;
    let mut scaled = u.clone();
    for (k, mut col) in scaled.column_iter_mut().enumerate() {
        col *= roots[k];
    }
    let mut a = scaled * u.transpose();
    symmetrize(&mut a);
    Ok(a)
}

/// A `p x n` data matrix; column `i` is sample `i`, row `k` is variable `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
}

impl DataMatrix {
    /// Requires `p >= 2`, `n >= 3` and finite entries.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        let (p, n) = values.shape();
        if p < 2 || n < 3 {
            return Err(Error::Dimension(format!(
                "data matrix needs p >= 2 and n >= 3, got {p}x{n}"
            )));
        }
        Self::checked(values)
    }

    /// Like [`DataMatrix::new`] but only requires `n >= 2`; used by small
    /// hand-worked cases where the `n - 1` divisor is still defined.
    pub fn new_small(values: DMatrix<f64>) -> Result<Self> {
        let (p, n) = values.shape();
        if p < 1 || n < 2 {
            return Err(Error::Dimension(format!(
                "data matrix needs p >= 1 and n >= 2, got {p}x{n}"
            )));
        }
        Self::checked(values)
    }

    fn checked(values: DMatrix<f64>) -> Result<Self> {
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let p = values.nrows();
            return Err(Error::Data(format!(
                "non-finite value at row {}, column {}",
                pos % p,
                pos / p
            )));
        }
        Ok(Self { values })
    }

    /// Builds from row-major nested vectors (one inner vector per variable).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.len();
        let n = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::new(DMatrix::from_fn(p, n, |k, i| rows[k][i]))
    }

    pub fn p(&self) -> usize {
        self.values.nrows()
    }

    pub fn n(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    /// `c * X`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            values: &self.values * c,
        }
    }

    /// Reorders samples so that new column `i` is old column `perm[i]`.
    pub fn permute_samples(&self, perm: &[usize]) -> Self {
        let mut v = DMatrix::zeros(self.p(), self.n());
        for (dst, &src) in perm.iter().enumerate() {
            v.set_column(dst, &self.values.column(src));
        }
        Self { values: v }
    }

    /// Variables with their sample mean removed (each row centered).
    pub fn centered(&self) -> DMatrix<f64> {
        let n = self.n() as f64;
        let mut c = self.values.clone();
        for mut row in c.row_iter_mut() {
            let mean = row.sum() / n;
            row.add_scalar_mut(-mean);
        }
        c
    }
}

/// Named covariance generator, as used in experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CovSpec {
    Identity,
    Ar {
        rho: f64,
    },
    Band,
    Block {
        #[serde(default = "default_block")]
        block: usize,
        #[serde(default = "default_block_offdiag")]
        offdiag: f64,
    },
    Equicorr {
        rho: f64,
    },
    SparsePair {
        kappa: f64,
    },
}

fn default_block() -> usize {
    10
}

fn default_block_offdiag() -> f64 {
    0.5
}

impl CovSpec {
    /// Materializes the generator at dimension `dim`; `n` and `p` feed the
    /// sparse-pair signal scale.
    pub fn build(&self, dim: usize, n: usize, p: usize) -> Result<CovMatrix> {
        match *self {
            CovSpec::Identity => Ok(CovMatrix::identity(dim)),
            CovSpec::Ar { rho } => gen_autocorr(dim, rho),
            CovSpec::Band => gen_banded(dim),
            CovSpec::Block { block, offdiag } => gen_block(dim, block, offdiag),
            CovSpec::Equicorr { rho } => gen_equicorr(dim, rho),
            CovSpec::SparsePair { kappa } => {
                if dim != n {
                    return Err(Error::Config(
                        "sparse-pair is a sample-covariance generator (dim must be n)".into(),
                    ));
                }
                gen_sparse_pair(n, p, kappa)
            }
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, CovSpec::Identity)
            || matches!(self, CovSpec::SparsePair { kappa } if *kappa == 0.0)
    }
}

/// Reusable sampler for `N(mu 1', Sigma (x) Psi)` with precomputed square roots.
#[derive(Clone, Debug)]
pub struct MatNormSampler {
    mu: DVector<f64>,
    sigma_root: Option<DMatrix<f64>>,
    psi_root: Option<DMatrix<f64>>,
    p: usize,
    n: usize,
}

impl MatNormSampler {
    pub fn new(mu: &[f64], sigma: &CovMatrix, psi: &CovMatrix) -> Result<Self> {
        let (p, n) = (sigma.dim(), psi.dim());
        if mu.len() != p {
            return Err(Error::Dimension(format!(
                "mean has length {}, Sigma is {p}x{p}",
                mu.len()
            )));
        }
        let root = |c: &CovMatrix| -> Result<Option<DMatrix<f64>>> {
            if c.is_identity() {
                Ok(None)
            } else {
                sym_sqrt(c).map(Some)
            }
        };
        Ok(Self {
            mu: DVector::from_column_slice(mu),
            sigma_root: root(sigma)?,
            psi_root: root(psi)?,
            p,
            n,
        })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Draws one matrix. `Z` is filled column-major: entry `(k, i)` takes
    /// position `i * p + k` of the stream.
    pub fn sample(&self, stream: &mut NormalStream) -> DMatrix<f64> {
        let mut z = DMatrix::zeros(self.p, self.n);
        stream.fill_normal(z.as_mut_slice());
        let mut x = match &self.sigma_root {
            Some(a) => a * z,
            None => z,
        };
        if let Some(b) = &self.psi_root {
            x = x * b;
        }
        if self.mu.iter().any(|&m| m != 0.0) {
            for mut col in x.column_iter_mut() {
                col += &self.mu;
            }
        }
        x
    }

    pub fn sample_data(&self, stream: &mut NormalStream) -> Result<DataMatrix> {
        DataMatrix::new(self.sample(stream))
    }
}

/// One draw of `X ~ N(mu 1', Sigma (x) Psi)` from stream 0 of `seed`.
pub fn sample_matnorm(
    mu: &[f64],
    sigma: &CovMatrix,
    psi: &CovMatrix,
    seed: u64,
) -> Result<DataMatrix> {
    let sampler = MatNormSampler::new(mu, sigma, psi)?;
    sampler.sample_data(&mut NormalStream::new(seed, 0))
}
