//! Quadratic functionals of the row and column covariances from a single
//! data matrix whose samples may be correlated.
//!
//! * `B_n = ||Psi||_F^2 / n` measures average correlation among samples.
//! * `A_p = p ||Sigma||_F^2 / (tr Sigma)^2` measures correlation among variables.
//!
//! `A_p` is estimated by plugging in a thresholded column covariance whose
//! threshold level adapts to the estimated `B_n`, which keeps the estimate
//! ratio-consistent when samples are dependent. The fixed-level threshold
//! used under independence is provided as a comparator.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covmodel::{CovMatrix, DataMatrix};
use crate::error::{Error, Result};

/// Default threshold constant; the ratio-consistency guarantee needs it above `sqrt(2)`.
pub const DEFAULT_DELTA: f64 = 1.42;

/// Row sample covariance `(psi_hat_ij)` over the `n` samples, together with
/// the per-variable sample variances `sigma_hat_kk`.
#[derive(Clone, Debug, PartialEq)]
pub struct RowCov {
    /// `psi_hat_ij = (1/p) sum_k (X_ki - Xbar_k)(X_kj - Xbar_k)`.
    pub psi_hat: DMatrix<f64>,
    /// `sigma_hat_kk = (1/(n-1)) sum_i (X_ki - Xbar_k)^2`.
    pub sigma_diag: DVector<f64>,
}

impl RowCov {
    pub fn n(&self) -> usize {
        self.psi_hat.nrows()
    }

    pub fn p(&self) -> usize {
        self.sigma_diag.len()
    }

    /// `tr(Sigma_hat) = sum_k sigma_hat_kk`.
    pub fn trace_sigma(&self) -> f64 {
        self.sigma_diag.sum()
    }

    /// `(1/p) tr(Sigma_hat)`, the scale of `psi_hat` relative to `Psi`.
    pub fn mean_variance(&self) -> f64 {
        self.trace_sigma() / self.p() as f64
    }
}

/// Centered data plus the row covariance, shared by every downstream statistic.
#[derive(Clone, Debug)]
pub struct SampleMoments {
    /// `p x n`, each variable centered over samples.
    pub centered: DMatrix<f64>,
    pub row_cov: RowCov,
}

impl SampleMoments {
    pub fn new(x: &DataMatrix) -> Self {
        let centered = x.centered();
        let (p, n) = centered.shape();
        let mut psi_hat = centered.tr_mul(&centered);
        psi_hat /= p as f64;
        crate::covmodel::symmetrize(&mut psi_hat);
        let sigma_diag = DVector::from_iterator(
            p,
            centered
                .row_iter()
                .map(|r| r.norm_squared() / (n as f64 - 1.0)),
        );
        Self {
            centered,
            row_cov: RowCov {
                psi_hat,
                sigma_diag,
            },
        }
    }

    pub fn p(&self) -> usize {
        self.centered.nrows()
    }

    pub fn n(&self) -> usize {
        self.centered.ncols()
    }

    fn check_variances(&self) -> Result<()> {
        match self.row_cov.sigma_diag.iter().position(|&v| v <= 0.0) {
            Some(row) => Err(Error::DegenerateVariable { row }),
            None => Ok(()),
        }
    }

    /// `B_hat_n`, clamped at zero.
    pub fn bn_hat(&self) -> Result<f64> {
        let tr = self.row_cov.trace_sigma();
        if !(tr > 0.0) {
            return Err(Error::Data("trace of the sample covariance is zero".into()));
        }
        let (p, n) = (self.p() as f64, self.n() as f64);
        let scale = p / tr;
        let psi = &self.row_cov.psi_hat;
        let fro2 = psi.iter().map(|v| v * v).sum::<f64>() * scale * scale;
        let trace = psi.trace() * scale;
        Ok(((fro2 - trace * trace / p) / n).max(0.0))
    }

    /// Visits every off-diagonal column covariance `sigma_hat_ij`, `i < j`,
    /// computing the `p x p` Gram matrix block by block so memory stays `O(p n)`.
    pub(crate) fn for_each_offdiag(&self, mut f: impl FnMut(usize, usize, f64)) {
        const BLOCK: usize = 192;
        let (p, n) = self.centered.shape();
        let denom = n as f64 - 1.0;
        let xt = self.centered.transpose();
        let mut start_i = 0;
        while start_i < p {
            let len_i = BLOCK.min(p - start_i);
            let rows_i = self.centered.rows(start_i, len_i);
            let mut start_j = start_i;
            while start_j < p {
                let len_j = BLOCK.min(p - start_j);
                let gram = &rows_i * xt.columns(start_j, len_j);
                for jj in 0..len_j {
                    let j = start_j + jj;
                    let col = gram.column(jj);
                    let upper = if start_j == start_i { jj } else { len_i };
                    for ii in 0..upper {
                        f(start_i + ii, j, col[ii] / denom);
                    }
                }
                start_j += len_j;
            }
            start_i += len_i;
        }
    }

    /// Adaptive threshold level `delta * sqrt(B_hat_n log p / n)`.
    pub fn threshold_level(&self, bn_hat: f64, delta: f64) -> f64 {
        let (p, n) = (self.p() as f64, self.n() as f64);
        delta * (bn_hat * p.ln() / n).sqrt()
    }

    /// Adaptive-threshold estimates without materializing the `p x p` matrix.
    pub fn estimate_ap(&self, delta: f64) -> Result<QuadEstimates> {
        Ok(self.estimate_ap_with_iid(delta, None)?.0)
    }

    /// One Gram pass producing the adaptive estimates and, when `iid_lambda`
    /// is given, the fixed-level comparator `A_tilde_p`.
    pub fn estimate_ap_with_iid(
        &self,
        delta: f64,
        iid_lambda: Option<f64>,
    ) -> Result<(QuadEstimates, Option<IidEstimate>)> {
        check_delta(delta)?;
        if let Some(l) = iid_lambda {
            check_lambda(l)?;
        }
        self.check_variances()?;
        let bn_hat = self.bn_hat()?;
        let level = self.threshold_level(bn_hat, delta);
        let var = &self.row_cov.sigma_diag;
        let diag_sq: f64 = var.iter().map(|v| v * v).sum();
        let trace = var.sum();
        let iid_level = iid_lambda.map(|l| self.iid_level(l));

        let (mut off_sq, mut kept) = (0.0, 0usize);
        let (mut iid_off_sq, mut iid_kept) = (0.0, 0usize);
        self.for_each_offdiag(|i, j, s| {
            if keep_adaptive(correlation(s, var[i], var[j]), level) {
                off_sq += s * s;
                kept += 1;
            }
            if let Some(t) = iid_level {
                if s.abs() >= t {
                    iid_off_sq += s * s;
                    iid_kept += 1;
                }
            }
        });
        let p = self.p() as f64;
        let fro2 = diag_sq + 2.0 * off_sq;
        let est = QuadEstimates {
            bn_hat,
            sigma_fro2_hat: fro2,
            ap_hat: p * fro2 / (trace * trace),
            delta,
            threshold_level: level,
            kept_offdiag: 2 * kept,
        };
        let iid = iid_lambda.map(|lambda| {
            let fro2 = diag_sq + 2.0 * iid_off_sq;
            IidEstimate {
                lambda,
                sigma_fro2: fro2,
                ap_tilde: p * fro2 / (trace * trace),
                kept_offdiag: 2 * iid_kept,
            }
        });
        Ok((est, iid))
    }

    fn iid_level(&self, lambda: f64) -> f64 {
        lambda * ((self.p() as f64).ln() / self.n() as f64).sqrt()
    }

    /// Full column sample covariance and correlation matrices.
    pub fn col_cov_corr(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check_variances()?;
        let n = self.n() as f64;
        let mut cov = &self.centered * self.centered.transpose();
        cov /= n - 1.0;
        crate::covmodel::symmetrize(&mut cov);
        let var = &self.row_cov.sigma_diag;
        let p = self.p();
        for k in 0..p {
            cov[(k, k)] = var[k];
        }
        let corr = DMatrix::from_fn(p, p, |i, j| {
            if i == j {
                1.0
            } else {
                correlation(cov[(i, j)], var[i], var[j])
            }
        });
        Ok((cov, corr))
    }
}

#[inline]
pub(crate) fn correlation(cov: f64, var_i: f64, var_j: f64) -> f64 {
    cov / (var_i * var_j).sqrt()
}

/// Keep rule `|rho| / (1 - rho^2) >= level`; `|rho| >= 1` is always kept.
#[inline]
pub fn keep_adaptive(rho: f64, level: f64) -> bool {
    let r = rho.abs();
    r >= 1.0 || r / (1.0 - r * r) >= level
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta >= 0.0) {
        return Err(Error::param(format!(
            "delta must be nonnegative, got {delta}"
        )));
    }
    if delta <= std::f64::consts::SQRT_2 {
        log::warn!("delta = {delta} <= sqrt(2): ratio consistency of the thresholded estimator is not guaranteed");
    }
    Ok(())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) {
        return Err(Error::param(format!(
            "lambda must be nonnegative, got {lambda}"
        )));
    }
    Ok(())
}

/// Adaptive-threshold estimates of `B_n`, `||Sigma||_F^2` and `A_p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadEstimates {
    pub bn_hat: f64,
    pub sigma_fro2_hat: f64,
    pub ap_hat: f64,
    pub delta: f64,
    pub threshold_level: f64,
    /// Number of retained off-diagonal entries (both triangles).
    pub kept_offdiag: usize,
}

/// Fixed-level (independence-calibrated) threshold comparator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IidEstimate {
    pub lambda: f64,
    pub sigma_fro2: f64,
    pub ap_tilde: f64,
    pub kept_offdiag: usize,
}

pub fn row_sample_cov(x: &DataMatrix) -> RowCov {
    SampleMoments::new(x).row_cov
}

/// Column sample covariance `sigma_hat` and correlation `rho_hat` (`p x p`).
pub fn col_sample_corr(x: &DataMatrix) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    SampleMoments::new(x).col_cov_corr()
}

pub fn estimate_bn(x: &DataMatrix) -> Result<f64> {
    SampleMoments::new(x).bn_hat()
}

/// `||Psi||_F^2 / n`.
pub fn true_bn(psi: &CovMatrix) -> f64 {
    psi.frobenius_sq() / psi.dim() as f64
}

/// `p ||Sigma||_F^2 / (tr Sigma)^2`.
pub fn true_ap(sigma: &CovMatrix) -> f64 {
    let tr = sigma.trace();
    sigma.dim() as f64 * sigma.frobenius_sq() / (tr * tr)
}

/// Adaptive thresholded covariance matrix and its estimates.
pub fn threshold_cov(x: &DataMatrix, delta: f64) -> Result<(DMatrix<f64>, QuadEstimates)> {
    check_delta(delta)?;
    let m = SampleMoments::new(x);
    let bn_hat = m.bn_hat()?;
    let level = m.threshold_level(bn_hat, delta);
    let (mut cov, corr) = m.col_cov_corr()?;
    let p = m.p();
    let mut kept = 0;
    for j in 0..p {
        for i in 0..p {
            if i == j {
                continue;
            }
            if keep_adaptive(corr[(i, j)], level) {
                kept += 1;
            } else {
                cov[(i, j)] = 0.0;
            }
        }
    }
    let fro2: f64 = cov.iter().map(|v| v * v).sum();
    let tr = cov.trace();
    let est = QuadEstimates {
        bn_hat,
        sigma_fro2_hat: fro2,
        ap_hat: p as f64 * fro2 / (tr * tr),
        delta,
        threshold_level: level,
        kept_offdiag: kept,
    };
    Ok((cov, est))
}

/// `A_hat_p` from the adaptive threshold, computed blockwise.
pub fn estimate_ap(x: &DataMatrix, delta: f64) -> Result<QuadEstimates> {
    SampleMoments::new(x).estimate_ap(delta)
}

/// Fixed-level thresholded covariance: off-diagonals kept iff
/// `|sigma_hat_ij| >= lambda sqrt(log p / n)`.
pub fn iid_threshold_cov(x: &DataMatrix, lambda: f64) -> Result<(DMatrix<f64>, IidEstimate)> {
    check_lambda(lambda)?;
    let m = SampleMoments::new(x);
    let level = m.iid_level(lambda);
    let (mut cov, _) = m.col_cov_corr()?;
    let p = m.p();
    let mut kept = 0;
    for j in 0..p {
        for i in 0..p {
            if i != j {
                if cov[(i, j)].abs() >= level {
                    kept += 1;
                } else {
                    cov[(i, j)] = 0.0;
                }
            }
        }
    }
    let fro2: f64 = cov.iter().map(|v| v * v).sum();
    let tr = cov.trace();
    Ok((
        cov,
        IidEstimate {
            lambda,
            sigma_fro2: fro2,
            ap_tilde: p as f64 * fro2 / (tr * tr),
            kept_offdiag: kept,
        },
    ))
}
