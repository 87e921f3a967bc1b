//! Global test that the `n` samples (columns) are independent.
//!
//! The statistic is built from the row sample covariance, bias-corrected for
//! centering, studentized pairwise and scaled by `p / A_hat_p`. Its maximum
//! over sample pairs, centered by `4 log n - log log n`, converges under the
//! null to a type I extreme value law with CDF
//! `exp(-(8 pi)^{-1/2} exp(-t/2))`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covmodel::{CovMatrix, DataMatrix};
use crate::error::{Error, Result};
use crate::quadfunc::{SampleMoments, DEFAULT_DELTA};
use crate::rng::NormalStream;

/// How the critical value is obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CriticalMode {
    /// Extreme-value quantile `q_alpha + 4 log n - log log n`.
    Limiting,
    /// Empirical `(1 - alpha)` quantile of `m` statistics under `N(0, I (x) I)`.
    MonteCarlo { m: usize, seed: u64 },
}

impl CriticalMode {
    pub fn name(&self) -> &'static str {
        match self {
            CriticalMode::Limiting => "limiting",
            CriticalMode::MonteCarlo { .. } => "monte-carlo",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndTestResult {
    pub statistic: f64,
    /// `statistic - 4 log n + log log n`.
    pub centered: f64,
    pub critical_value: f64,
    pub alpha: f64,
    pub reject: bool,
    pub ap_hat: f64,
    pub bn_hat: f64,
    pub argmax_i: usize,
    pub argmax_j: usize,
    pub mode: String,
}

/// The max statistic together with the pair achieving it.
#[derive(Clone, Debug, PartialEq)]
pub struct MaxStatistic {
    pub value: f64,
    pub argmax: (usize, usize),
    pub ap_hat: f64,
    pub bn_hat: f64,
}

/// `T_ij = psi_hat_ij + (1/(n p)) sum_k sigma_hat_kk` for every pair (the
/// diagonal is filled by the same formula but never enters the max).
pub fn bias_corrected_t(x: &DataMatrix) -> DMatrix<f64> {
    let rc = SampleMoments::new(x).row_cov;
    bias_corrected_from(&rc.psi_hat, rc.trace_sigma(), rc.p())
}

fn bias_corrected_from(psi_hat: &DMatrix<f64>, trace_sigma: f64, p: usize) -> DMatrix<f64> {
    let n = psi_hat.nrows();
    let shift = trace_sigma / (n as f64 * p as f64);
    psi_hat.add_scalar(shift)
}

/// Max statistic from precomputed moments.
pub fn max_statistic(m: &SampleMoments, delta: f64) -> Result<MaxStatistic> {
    let rc = &m.row_cov;
    let n = rc.n();
    if n < 3 {
        return Err(Error::Dimension(format!(
            "independence test needs n >= 3, got {n}"
        )));
    }
    if let Some(index) = (0..n).find(|&i| !(rc.psi_hat[(i, i)] > 0.0)) {
        return Err(Error::DegenerateSample { index });
    }
    let est = m.estimate_ap(delta)?;
    let t = bias_corrected_from(&rc.psi_hat, rc.trace_sigma(), rc.p());
    let mut best = f64::NEG_INFINITY;
    let mut argmax = (0, 1);
    // Column-major walk; lexicographically smallest (i, j) wins ties.
    let mut best_ratio = vec![(f64::NEG_INFINITY, 0usize); n];
    for j in 1..n {
        let djj = rc.psi_hat[(j, j)];
        for i in 0..j {
            let tij = t[(i, j)];
            let r = tij * tij / (rc.psi_hat[(i, i)] * djj);
            if r > best_ratio[i].0 {
                best_ratio[i] = (r, j);
            }
        }
    }
    for (i, &(r, j)) in best_ratio.iter().enumerate().take(n - 1) {
        if r > best {
            best = r;
            argmax = (i, j);
        }
    }
    Ok(MaxStatistic {
        value: m.p() as f64 / est.ap_hat * best,
        argmax,
        ap_hat: est.ap_hat,
        bn_hat: est.bn_hat,
    })
}

/// `T_hat_{n,p} = (p / A_hat_p) max_{i<j} T_ij^2 / (psi_hat_ii psi_hat_jj)`.
pub fn test_statistic(x: &DataMatrix, delta: f64) -> Result<f64> {
    Ok(max_statistic(&SampleMoments::new(x), delta)?.value)
}

/// `4 log n - log log n`.
pub fn centering(n: usize) -> f64 {
    let ln = (n as f64).ln();
    4.0 * ln - ln.ln()
}

/// CDF of the limiting extreme value law, `exp(-(8 pi)^{-1/2} e^{-t/2})`.
pub fn evd_cdf(t: f64) -> f64 {
    (-(8.0 * PI).sqrt().recip() * (-t / 2.0).exp()).exp()
}

/// Upper `alpha` quantile `q_alpha = -log(8 pi) - 2 log log (1 - alpha)^{-1}`.
pub fn evd_quantile(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::param(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    Ok(-(8.0 * PI).ln() - 2.0 * (-(-alpha).ln_1p()).ln())
}

/// `M` null statistics from `N(0, I_p (x) I_n)`, replication `r` drawn from
/// stream `r` of `seed`. Returned in replication order.
pub fn mc_null_statistics(n: usize, p: usize, m: usize, seed: u64, delta: f64) -> Result<Vec<f64>> {
    if n < 3 || p < 2 {
        return Err(Error::Dimension(format!(
            "need n >= 3 and p >= 2, got n={n}, p={p}"
        )));
    }
    (0..m as u64)
        .into_par_iter()
        .map(|r| {
            let mut z = DMatrix::zeros(p, n);
            NormalStream::new(seed, r).fill_normal(z.as_mut_slice());
            let x = DataMatrix::new(z)?;
            Ok(max_statistic(&SampleMoments::new(&x), delta)?.value)
        })
        .collect()
}

/// Empirical quantile: the order statistic at 1-based rank `ceil((1 - alpha) M)`
/// of the ascending sample. `alpha = 0` gives the maximum.
pub fn empirical_upper_quantile(values: &[f64], alpha: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::param("no values"));
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::param(format!(
            "alpha must lie in [0, 1), got {alpha}"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    // The small slack keeps e.g. 0.95 * 2000 from rounding up to rank 1901.
    let rank = (((1.0 - alpha) * m as f64) - 1e-9)
        .ceil()
        .clamp(1.0, m as f64) as usize;
    Ok(sorted[rank - 1])
}

/// Monte-Carlo critical value `c_alpha` with the default threshold constant.
pub fn mc_critical(n: usize, p: usize, m: usize, alpha: f64, seed: u64) -> Result<f64> {
    mc_critical_with_delta(n, p, m, alpha, seed, DEFAULT_DELTA)
}

pub fn mc_critical_with_delta(
    n: usize,
    p: usize,
    m: usize,
    alpha: f64,
    seed: u64,
    delta: f64,
) -> Result<f64> {
    if m < 100 {
        return Err(Error::param(format!(
            "Monte-Carlo critical value needs M >= 100, got {m}"
        )));
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::param(format!(
            "alpha must lie in [0, 1), got {alpha}"
        )));
    }
    let stats = mc_null_statistics(n, p, m, seed, delta)?;
    empirical_upper_quantile(&stats, alpha)
}

/// Critical value on the statistic scale for the given mode.
pub fn critical_value(
    n: usize,
    p: usize,
    alpha: f64,
    mode: &CriticalMode,
    delta: f64,
) -> Result<f64> {
    match *mode {
        CriticalMode::Limiting => Ok(evd_quantile(alpha)? + centering(n)),
        CriticalMode::MonteCarlo { m, seed } => mc_critical_with_delta(n, p, m, alpha, seed, delta),
    }
}

/// Runs the test with a critical value already known (the harness reuses one
/// Monte-Carlo critical value across replications).
pub fn run_test_with_critical(
    m: &SampleMoments,
    alpha: f64,
    mode: &CriticalMode,
    critical: f64,
    delta: f64,
) -> Result<IndTestResult> {
    let stat = max_statistic(m, delta)?;
    let n = m.n();
    let centered = stat.value - centering(n);
    let reject = match mode {
        CriticalMode::Limiting => centered >= evd_quantile(alpha)?,
        CriticalMode::MonteCarlo { .. } => stat.value >= critical,
    };
    Ok(IndTestResult {
        statistic: stat.value,
        centered,
        critical_value: critical,
        alpha,
        reject,
        ap_hat: stat.ap_hat,
        bn_hat: stat.bn_hat,
        argmax_i: stat.argmax.0,
        argmax_j: stat.argmax.1,
        mode: mode.name().to_string(),
    })
}

pub fn run_test(
    x: &DataMatrix,
    alpha: f64,
    mode: &CriticalMode,
    delta: f64,
) -> Result<IndTestResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::param(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let critical = critical_value(x.n(), x.p(), alpha, mode, delta)?;
    run_test_with_critical(&SampleMoments::new(x), alpha, mode, critical, delta)
}

/// Power diagnostic `d_{n,Psi} = max_{i<j} |d_ij|` of a sample covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct DnPsi {
    pub value: f64,
    pub argmax: (usize, usize),
    pub n: usize,
}

impl DnPsi {
    /// `delta * sqrt(A_p log n / p)`: the test rejects with probability tending
    /// to one when `value` exceeds this for some `delta > 2`.
    pub fn boundary(&self, p: usize, ap: f64, delta: f64) -> f64 {
        delta * (ap * (self.n as f64).ln() / p as f64).sqrt()
    }
}

pub fn dn_psi(psi: &CovMatrix) -> Result<DnPsi> {
    let n = psi.dim();
    if n < 2 {
        return Err(Error::param("d_{n,Psi} needs n >= 2"));
    }
    let e = psi.entries();
    let nf = n as f64;
    let row_off: Vec<f64> = (0..n).map(|i| e.row(i).sum() - e[(i, i)]).collect();
    let total_off: f64 = row_off.iter().sum();
    let tail = total_off / (nf * nf * (nf - 1.0));
    let mut best = (f64::NEG_INFINITY, (0, 1));
    for i in 0..n {
        for j in i + 1..n {
            let d = (e[(i, j)] - row_off[i] / nf - row_off[j] / nf - tail).abs();
            if d > best.0 {
                best = (d, (i, j));
            }
        }
    }
    Ok(DnPsi {
        value: best.0,
        argmax: best.1,
        n,
    })
}
