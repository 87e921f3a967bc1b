//! Multiple testing of pairwise correlations between variables when the
//! samples are correlated.
//!
//! The naive statistic `sqrt(n) rho_hat_ij` is too dispersed under sample
//! dependence. Two remedies are offered: dividing by `sqrt(B_n)`, or
//! decorrelating the samples with a CLIME estimate of the sample precision
//! matrix (the "sandwich" correlation). Discoveries are selected with a
//! Benjamini-Hochberg style threshold over all `p (p - 1) / 2` pairs.

pub mod lp;

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covmodel::{symmetrize, CovMatrix, DataMatrix};
use crate::error::{Error, Result};
use crate::normal;
use crate::quadfunc::SampleMoments;

pub use lp::{ColumnSolution, LpOptions};

/// Statistic used for the pairwise tests.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MtcMethod {
    Sandwich,
    Naive,
    VarianceCorrected,
}

impl MtcMethod {
    pub fn name(self) -> &'static str {
        match self {
            MtcMethod::Sandwich => "sandwich",
            MtcMethod::Naive => "naive",
            MtcMethod::VarianceCorrected => "variance-corrected",
        }
    }
}

impl std::str::FromStr for MtcMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sandwich" => Ok(MtcMethod::Sandwich),
            "naive" => Ok(MtcMethod::Naive),
            "variance-corrected" => Ok(MtcMethod::VarianceCorrected),
            _ => Err(Error::param(format!(
                "unknown method '{s}' (expected sandwich, naive or variance-corrected)"
            ))),
        }
    }
}

/// `sqrt(n) rho_hat_ij` for all pairs; the diagonal holds `sqrt(n)`.
pub fn naive_stats(x: &DataMatrix) -> Result<DMatrix<f64>> {
    naive_from(&SampleMoments::new(x))
}

fn naive_from(m: &SampleMoments) -> Result<DMatrix<f64>> {
    let (_, corr) = m.col_cov_corr()?;
    Ok(corr * (m.n() as f64).sqrt())
}

/// Naive statistics divided by `sqrt(bn)`.
pub fn corrected_stats(x: &DataMatrix, bn: f64) -> Result<DMatrix<f64>> {
    check_bn(bn)?;
    Ok(naive_stats(x)? / bn.sqrt())
}

fn check_bn(bn: f64) -> Result<()> {
    if !(bn > 0.0) || !bn.is_finite() {
        return Err(Error::param(format!(
            "B_n must be positive and finite, got {bn}"
        )));
    }
    Ok(())
}

/// One CLIME column: `argmin ||beta||_1` s.t. `||R beta - e_i||_inf <= lambda`.
pub fn clime_column(r: &DMatrix<f64>, i: usize, lambda: f64) -> Result<Vec<f64>> {
    Ok(lp::solve_column(r, i, lambda, &LpOptions::default())?.beta)
}

/// Per-column solver report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnStatus {
    pub iterations: usize,
    pub l1_norm: f64,
    /// `||R beta - e_i||_inf - lambda`; at most the solver tolerance.
    pub max_violation: f64,
}

/// Symmetrized CLIME estimate of the sample precision matrix.
#[derive(Clone, Debug)]
pub struct PrecisionEstimate {
    pub gamma_hat: DMatrix<f64>,
    /// Column solutions before symmetrization.
    pub gamma_raw: DMatrix<f64>,
    pub lambda: f64,
    pub columns: Vec<ColumnStatus>,
}

/// Smaller magnitude wins: `g_ij = g1_ij` if `|g1_ij| <= |g1_ji|`, else `g1_ji`.
pub fn symmetrize_min_abs(g1: &DMatrix<f64>) -> DMatrix<f64> {
    let n = g1.nrows();
    let mut g = g1.clone();
    for j in 0..n {
        for i in 0..j {
            let (a, b) = (g1[(i, j)], g1[(j, i)]);
            let v = if a.abs() <= b.abs() { a } else { b };
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// CLIME on a given `n x n` matrix, columns solved in parallel.
pub fn clime_matrix(r: &DMatrix<f64>, lambda: f64) -> Result<PrecisionEstimate> {
    clime_path(r, &[lambda]).pop().expect("one level")
}

/// CLIME along a nonincreasing sequence of levels; each column warm-starts
/// from its solution at the previous level.
pub fn clime_path(r: &DMatrix<f64>, lambdas: &[f64]) -> Vec<Result<PrecisionEstimate>> {
    let n = r.nrows();
    let opts = LpOptions::default();
    let mut paths: Vec<std::vec::IntoIter<Result<ColumnSolution>>> = (0..n)
        .into_par_iter()
        .map(|i| lp::solve_column_path(r, i, lambdas, &opts))
        .collect::<Vec<_>>()
        .into_iter()
        .map(Vec::into_iter)
        .collect();
    let mut out = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let mut raw = DMatrix::zeros(n, n);
        let mut columns = Vec::with_capacity(n);
        let mut err = None;
        for (i, path) in paths.iter_mut().enumerate() {
            match path.next() {
                Some(Ok(s)) => {
                    raw.column_mut(i).copy_from_slice(&s.beta);
                    columns.push(ColumnStatus {
                        iterations: s.iterations,
                        l1_norm: s.objective,
                        max_violation: s.max_violation,
                    });
                }
                Some(Err(e)) => {
                    err.get_or_insert(e);
                }
                None => {
                    err.get_or_insert(Error::param("lambda path validation failed"));
                }
            }
        }
        out.push(match err {
            Some(e) => Err(e),
            None => Ok(PrecisionEstimate {
                gamma_hat: symmetrize_min_abs(&raw),
                gamma_raw: raw,
                lambda,
                columns,
            }),
        });
    }
    out
}

/// CLIME estimate of the sample precision from the row sample covariance.
pub fn clime_precision(x: &DataMatrix, lambda: f64) -> Result<PrecisionEstimate> {
    clime_matrix(&SampleMoments::new(x).row_cov.psi_hat, lambda)
}

/// Sandwich covariance `(1/n) Xc Gamma Xc'` and its correlation matrix.
pub fn sandwich_corr(x: &DataMatrix, gamma: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    sandwich_from(&x.centered(), gamma)
}

fn sandwich_from(xc: &DMatrix<f64>, gamma: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (p, n) = xc.shape();
    if gamma.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "precision is {:?}, expected {n}x{n}",
            gamma.shape()
        )));
    }
    let w = xc * gamma;
    let mut cov = w * xc.transpose();
    cov /= n as f64;
    symmetrize(&mut cov);
    let diag: Vec<f64> = (0..p).map(|k| cov[(k, k)]).collect();
    if let Some(index) = diag.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::DegenerateSandwich {
            index,
            value: diag[index],
        });
    }
    let inv_sd: Vec<f64> = diag.iter().map(|v| 1.0 / v.sqrt()).collect();
    let corr = DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            1.0
        } else {
            cov[(i, j)] * inv_sd[i] * inv_sd[j]
        }
    });
    Ok((cov, corr))
}

/// `sqrt(n) rho_hat_ij,Y` from a precision matrix.
pub fn sandwich_stats(x: &DataMatrix, gamma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(sandwich_corr(x, gamma)?.1 * (x.n() as f64).sqrt())
}

/// `20` log-spaced values over `[0.01, 1] * (1/n + sqrt(log n / p))`.
pub fn default_lambda_grid(n: usize, p: usize) -> Vec<f64> {
    let scale = 1.0 / n as f64 + ((n as f64).ln() / p as f64).sqrt();
    log_grid(0.01 * scale, scale, 20)
}

/// `len` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..len)
        .map(|k| (a + (b - a) * k as f64 / (len - 1) as f64).exp())
        .collect()
}

/// Absolute upper-triangle values `|T_ij|`, `i < j`, sorted ascending.
pub fn sorted_abs_pairs(stats: &DMatrix<f64>) -> Vec<f64> {
    let p = stats.nrows();
    let mut v = Vec::with_capacity(p * (p - 1) / 2);
    for j in 1..p {
        for i in 0..j {
            v.push(stats[(i, j)].abs());
        }
    }
    v.sort_unstable_by(f64::total_cmp);
    v
}

/// `#{v in sorted : v >= t}`.
fn count_at_least(sorted: &[f64], t: f64) -> usize {
    sorted.len() - sorted.partition_point(|&v| v < t)
}

/// Tuning objective `sum_{k=3}^{9} (frac(k) - 1)^2` with
/// `frac(k) = #{i != j : |T_ij| >= z_{1-k/20}} / (k (p^2 - p) / 10)`.
pub fn tuning_objective(stats: &DMatrix<f64>) -> f64 {
    let p = stats.nrows() as f64;
    let sorted = sorted_abs_pairs(stats);
    (3..=9)
        .map(|k| {
            let z = normal::ppf(1.0 - k as f64 / 20.0);
            let both = 2.0 * count_at_least(&sorted, z) as f64;
            let frac = both / (k as f64 * (p * p - p) / 10.0);
            (frac - 1.0) * (frac - 1.0)
        })
        .sum()
}

/// Outcome at one grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lambda: f64,
    /// `None` when the point was infeasible or gave an unusable sandwich.
    pub objective: Option<f64>,
}

/// Tuned lambda plus the fit at that lambda.
#[derive(Clone, Debug)]
pub struct Tuned {
    pub lambda: f64,
    pub objective: f64,
    pub grid: Vec<GridPoint>,
    pub precision: PrecisionEstimate,
    pub statistics: DMatrix<f64>,
}

/// Grid search for the CLIME level. Points are solved from the largest down,
/// each warm-started from the previous one; once a level is infeasible every
/// smaller level is too.
pub fn tune_lambda(x: &DataMatrix, grid: &[f64]) -> Result<Tuned> {
    tune_from(&SampleMoments::new(x), grid)
}

fn tune_from(m: &SampleMoments, grid: &[f64]) -> Result<Tuned> {
    if grid.is_empty() {
        return Err(Error::param("lambda grid is empty"));
    }
    if let Some(l) = grid.iter().find(|l| !(**l >= 0.0) || !l.is_finite()) {
        return Err(Error::param(format!(
            "lambda grid values must be finite and nonnegative, got {l}"
        )));
    }
    let mut order: Vec<f64> = grid.to_vec();
    order.sort_by(|a, b| b.total_cmp(a));
    order.dedup();
    let sqrt_n = (m.n() as f64).sqrt();
    let mut points = Vec::with_capacity(order.len());
    let mut best: Option<Tuned> = None;
    let mut last_err = None;
    let fits = clime_path(&m.row_cov.psi_hat, &order);
    for (&lambda, fit) in order.iter().zip(fits) {
        let fit = fit.and_then(|prec| {
            sandwich_from(&m.centered, &prec.gamma_hat).map(|(_, corr)| (prec, corr * sqrt_n))
        });
        match fit {
            Ok((precision, statistics)) => {
                let objective = tuning_objective(&statistics);
                points.push(GridPoint {
                    lambda,
                    objective: Some(objective),
                });
                // descending scan: `<=` lets the smaller lambda win ties
                if best.as_ref().is_none_or(|b| objective <= b.objective) {
                    best = Some(Tuned {
                        lambda,
                        objective,
                        grid: Vec::new(),
                        precision,
                        statistics,
                    });
                }
            }
            Err(
                e @ (Error::Infeasible { .. }
                | Error::DegenerateSandwich { .. }
                | Error::Convergence { .. }),
            ) => {
                log::debug!("lambda {lambda}: {e}");
                points.push(GridPoint {
                    lambda,
                    objective: None,
                });
                last_err = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    points.reverse();
    match best {
        Some(mut t) => {
            t.grid = points;
            Ok(t)
        }
        None => Err(Error::Tuning(format!(
            "no usable lambda among {} grid points (last failure: {})",
            order.len(),
            last_err.map_or_else(|| "none".to_string(), |e| e.to_string())
        ))),
    }
}

/// Search bound `b_p = sqrt(4 log p - 2 log log p)`.
pub fn bh_search_bound(p: usize) -> f64 {
    let lp = (p as f64).ln();
    (4.0 * lp - 2.0 * lp.ln()).sqrt()
}

/// Threshold used when no level in `[0, b_p]` qualifies.
pub fn bh_fallback(p: usize) -> f64 {
    (4.0 * (p as f64).ln()).sqrt()
}

/// BH threshold and the pairs it rejects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BhResult {
    pub t_hat: f64,
    pub rejections: Vec<(usize, usize)>,
    /// `true` when the fallback `sqrt(4 log p)` was used.
    pub fallback: bool,
}

/// `t_hat = inf { t in [0, b_p] : (1 - Phi(t)) (p^2 - p) / max(R(t), 1) <= alpha }`.
///
/// `R(t)` is a step function, so the infimum is found exactly by scanning
/// the intervals between consecutive distinct `|T_ij|`: on each interval the
/// smallest admissible `t` is either its left end or the normal quantile
/// solving the inequality with the interval's count.
pub fn bh_threshold(stats: &DMatrix<f64>, alpha: f64) -> Result<BhResult> {
    let p = stats.nrows();
    if p < 2 || stats.ncols() != p {
        return Err(Error::param(format!(
            "BH threshold needs a square statistic matrix with p >= 2, got {:?}",
            stats.shape()
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::param(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if let Some(v) = stats.iter().find(|v| v.is_nan()) {
        return Err(Error::Data(format!("statistic is {v}")));
    }
    let sorted = sorted_abs_pairs(stats);
    let (t_hat, fallback) = match bh_search(&sorted, p, alpha) {
        Some(t) => (t, false),
        None => (bh_fallback(p), true),
    };
    Ok(BhResult {
        t_hat,
        rejections: rejections_at(stats, t_hat),
        fallback,
    })
}

/// `(1 - Phi(t)) (p^2 - p) / max(R, 1) <= alpha`.
pub fn bh_condition(t: f64, count: usize, p: usize, alpha: f64) -> bool {
    let m = (p * p - p) as f64;
    normal::sf(t) * m / count.max(1) as f64 <= alpha
}

fn bh_search(sorted: &[f64], p: usize, alpha: f64) -> Option<f64> {
    let bound = bh_search_bound(p);
    let m = (p * p - p) as f64;
    let total = sorted.len();
    // Intervals [0, u1], (u1, u2], ..., (uK, inf) over distinct values u; on
    // (lo, hi] the count is #{v >= hi}.
    let mut lo = 0.0f64;
    let mut start = 0;
    loop {
        let (hi, count) = if start < total {
            (sorted[start], total - start)
        } else {
            (f64::INFINITY, 0)
        };
        let level = alpha * count.max(1) as f64 / m;
        let needed = if level >= 0.5 {
            0.0
        } else {
            normal::isf(level)
        };
        let mut t = lo.max(needed);
        let top = hi.min(bound);
        if t <= top {
            // step past rounding in the quantile so the condition holds as evaluated
            while !bh_condition(t, count, p, alpha) {
                t = t.next_up();
            }
            if t <= top {
                return Some(t);
            }
        }
        if start >= total || hi >= bound {
            return None;
        }
        lo = hi;
        while start < total && sorted[start] <= lo {
            start += 1;
        }
    }
}

/// `{ (i, j) : i < j, |T_ij| >= t }` in column-major order of `j` then `i`.
pub fn rejections_at(stats: &DMatrix<f64>, t: f64) -> Vec<(usize, usize)> {
    let p = stats.nrows();
    let mut out = Vec::new();
    for i in 0..p {
        for j in i + 1..p {
            if stats[(i, j)].abs() >= t {
                out.push((i, j));
            }
        }
    }
    out
}

/// Which pairs `i < j` are truly correlated.
#[derive(Clone, Debug, PartialEq)]
pub struct TruthSet {
    p: usize,
    alternative: Vec<bool>,
}

impl TruthSet {
    /// Alternatives are the nonzero off-diagonal entries of `sigma`.
    pub fn from_cov(sigma: &CovMatrix) -> Self {
        Self::from_support(sigma.entries())
    }

    /// Alternatives are the pairs `i < j` with `m_ij != 0`.
    pub fn from_support(m: &DMatrix<f64>) -> Self {
        let p = m.nrows();
        let mut alternative = vec![false; p * p];
        for j in 0..p {
            for i in 0..j {
                alternative[i * p + j] = m[(i, j)] != 0.0;
            }
        }
        Self { p, alternative }
    }

    /// From an explicit list of correlated pairs.
    pub fn from_pairs(p: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut alternative = vec![false; p * p];
        for &(a, b) in pairs {
            let (i, j) = (a.min(b), a.max(b));
            if i == j || j >= p {
                return Err(Error::param(format!("invalid pair ({a}, {b}) for p = {p}")));
            }
            alternative[i * p + j] = true;
        }
        Ok(Self { p, alternative })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn is_alternative(&self, i: usize, j: usize) -> bool {
        let (i, j) = (i.min(j), i.max(j));
        self.alternative[i * self.p + j]
    }

    pub fn h1(&self) -> usize {
        self.alternative.iter().filter(|&&a| a).count()
    }

    pub fn h0(&self) -> usize {
        self.p * (self.p - 1) / 2 - self.h1()
    }
}

/// False discovery proportion and power of a rejection set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub fdp: f64,
    pub power: f64,
    pub h0: usize,
    pub h1: usize,
}

pub fn evaluate(rejections: &[(usize, usize)], truth: &TruthSet) -> Evaluation {
    let true_rej = rejections
        .iter()
        .filter(|&&(i, j)| truth.is_alternative(i, j))
        .count();
    let false_rej = rejections.len() - true_rej;
    let h1 = truth.h1();
    Evaluation {
        fdp: false_rej as f64 / rejections.len().max(1) as f64,
        power: true_rej as f64 / h1.max(1) as f64,
        h0: truth.h0(),
        h1,
    }
}

/// Where the statistic's normalizer comes from.
#[derive(Clone, Debug, Default)]
pub struct MtcOptions {
    /// Fixed CLIME level; when absent the level is tuned over `grid`.
    pub lambda: Option<f64>,
    /// Tuning grid; defaults to [`default_lambda_grid`].
    pub grid: Option<Vec<f64>>,
    /// Known `B_n` for the variance-corrected method; estimated when absent.
    pub bn: Option<f64>,
    /// Known sample precision for the sandwich method (skips CLIME).
    pub precision: Option<DMatrix<f64>>,
}

#[derive(Clone, Debug)]
pub struct MtcResult {
    pub statistics: DMatrix<f64>,
    pub t_hat: f64,
    pub rejections: Vec<(usize, usize)>,
    pub alpha: f64,
    pub method: MtcMethod,
    /// CLIME level, for the sandwich method with an estimated precision.
    pub lambda: Option<f64>,
    /// `B_n` used by the variance-corrected method.
    pub bn: Option<f64>,
    pub evaluation: Option<Evaluation>,
}

/// Compact summary for JSON output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MtcSummary {
    pub t_hat: f64,
    pub alpha: f64,
    pub method: MtcMethod,
    pub lambda: Option<f64>,
    pub bn: Option<f64>,
    pub n_rejections: usize,
    pub fdp: Option<f64>,
    pub power: Option<f64>,
}

impl MtcResult {
    pub fn summary(&self) -> MtcSummary {
        MtcSummary {
            t_hat: self.t_hat,
            alpha: self.alpha,
            method: self.method,
            lambda: self.lambda,
            bn: self.bn,
            n_rejections: self.rejections.len(),
            fdp: self.evaluation.map(|e| e.fdp),
            power: self.evaluation.map(|e| e.power),
        }
    }

    /// One row `i,j,statistic,rejected` per pair `i < j`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["i", "j", "statistic", "rejected"])?;
        let p = self.statistics.nrows();
        for i in 0..p {
            for j in i + 1..p {
                let s = self.statistics[(i, j)];
                let rejected = s.abs() >= self.t_hat;
                w.write_record([
                    i.to_string(),
                    j.to_string(),
                    crate::io::format_f64(s),
                    rejected.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

/// Full pipeline: statistics for `method`, BH threshold at `alpha`, and an
/// evaluation when `truth` is given.
pub fn run_mtc(
    x: &DataMatrix,
    method: MtcMethod,
    alpha: f64,
    opts: &MtcOptions,
    truth: Option<&TruthSet>,
) -> Result<MtcResult> {
    if let Some(t) = truth {
        if t.p() != x.p() {
            return Err(Error::Dimension(format!(
                "truth set has p = {}, data has p = {}",
                t.p(),
                x.p()
            )));
        }
    }
    let m = SampleMoments::new(x);
    let (statistics, lambda, bn) = match method {
        MtcMethod::Naive => (naive_from(&m)?, None, None),
        MtcMethod::VarianceCorrected => {
            let bn = match opts.bn {
                Some(b) => b,
                None => m.bn_hat()?,
            };
            check_bn(bn)?;
            (naive_from(&m)? / bn.sqrt(), None, Some(bn))
        }
        MtcMethod::Sandwich => {
            let sqrt_n = (m.n() as f64).sqrt();
            if let Some(g) = &opts.precision {
                (sandwich_from(&m.centered, g)?.1 * sqrt_n, None, None)
            } else if let Some(l) = opts.lambda {
                let prec = clime_matrix(&m.row_cov.psi_hat, l)?;
                (
                    sandwich_from(&m.centered, &prec.gamma_hat)?.1 * sqrt_n,
                    Some(l),
                    None,
                )
            } else {
                let grid = opts
                    .grid
                    .clone()
                    .unwrap_or_else(|| default_lambda_grid(m.n(), m.p()));
                let tuned = tune_from(&m, &grid)?;
                (tuned.statistics, Some(tuned.lambda), None)
            }
        }
    };
    let bh = bh_threshold(&statistics, alpha)?;
    let evaluation = truth.map(|t| evaluate(&bh.rejections, t));
    Ok(MtcResult {
        statistics,
        t_hat: bh.t_hat,
        rejections: bh.rejections,
        alpha,
        method,
        lambda,
        bn,
        evaluation,
    })
}
