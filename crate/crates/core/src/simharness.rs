//! Seeded Monte-Carlo experiments: size and power of the independence test,
//! FDP and power of correlation screening, and accuracy of the `A_p`
//! estimators.
//!
//! Replication `r` draws its data from stream `r` of the master seed, so each
//! record depends only on `(config, r)` and the report is identical for any
//! number of worker threads.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corrtest::{self, MtcMethod, MtcOptions, TruthSet};
use crate::covmodel::{CovMatrix, CovSpec, MatNormSampler};
use crate::error::{Error, Result};
use crate::indtest::{self, CriticalMode};
use crate::io;
use crate::quadfunc::{self, SampleMoments, DEFAULT_DELTA};
use crate::rng::NormalStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Size,
    Power,
    Mtc,
    QuadfuncError,
}

/// Correlation-screening variants compared by `mtc` experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HarnessMethod {
    /// Sandwich with a tuned CLIME precision.
    Sandwich,
    /// Sandwich with the true `Psi^{-1}`.
    SandwichTrue,
    Naive,
    /// Naive statistics divided by the true `sqrt(B_n)`.
    VarianceCorrected,
}

impl HarnessMethod {
    pub fn column_prefix(self) -> &'static str {
        match self {
            HarnessMethod::Sandwich => "sandwich",
            HarnessMethod::SandwichTrue => "sandwich_true",
            HarnessMethod::Naive => "naive",
            HarnessMethod::VarianceCorrected => "variance_corrected",
        }
    }
}

fn default_alpha() -> f64 {
    0.05
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

fn default_identity() -> CovSpec {
    CovSpec::Identity
}

fn default_mode() -> CriticalMode {
    CriticalMode::Limiting
}

fn default_methods() -> Vec<HarnessMethod> {
    vec![
        HarnessMethod::Sandwich,
        HarnessMethod::SandwichTrue,
        HarnessMethod::Naive,
        HarnessMethod::VarianceCorrected,
    ]
}

fn default_iid_lambda() -> f64 {
    2.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub n: usize,
    pub p: usize,
    /// Variable covariance generator.
    #[serde(default = "default_identity")]
    pub sigma: CovSpec,
    /// Sample covariance generator.
    #[serde(default = "default_identity")]
    pub psi: CovSpec,
    pub reps: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Critical value source for `size` and `power`.
    #[serde(default = "default_mode")]
    pub mode: CriticalMode,
    /// Fixed CLIME level for `mtc`; tuned over `lambda_grid` when absent.
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub lambda_grid: Option<Vec<f64>>,
    #[serde(default = "default_methods")]
    pub methods: Vec<HarnessMethod>,
    /// Level of the fixed-threshold comparator in `quadfunc-error`.
    #[serde(default = "default_iid_lambda")]
    pub iid_lambda: f64,
}

impl ExperimentConfig {
    pub fn new(
        kind: ExperimentKind,
        n: usize,
        p: usize,
        sigma: CovSpec,
        psi: CovSpec,
        reps: usize,
    ) -> Self {
        Self {
            kind,
            n,
            p,
            sigma,
            psi,
            reps,
            alpha: default_alpha(),
            seed: 0,
            delta: default_delta(),
            mode: default_mode(),
            lambda: None,
            lambda_grid: None,
            methods: default_methods(),
            iid_lambda: default_iid_lambda(),
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n < 3 || self.p < 2 {
            return bad(format!(
                "need n >= 3 and p >= 2, got n={}, p={}",
                self.n, self.p
            ));
        }
        if self.reps == 0 {
            return bad("reps must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.delta > 0.0) || !(self.iid_lambda > 0.0) {
            return bad("delta and iid_lambda must be positive".into());
        }
        match self.kind {
            ExperimentKind::Size if self.psi != CovSpec::Identity => {
                bad("size experiments need psi = identity".into())
            }
            ExperimentKind::Power if self.psi == CovSpec::Identity => {
                bad("power experiments need a non-identity psi".into())
            }
            ExperimentKind::Mtc
                if !matches!(
                    self.sigma,
                    CovSpec::Band | CovSpec::Block { .. } | CovSpec::Identity
                ) =>
            {
                bad("mtc experiments need a sparse sigma (band, block or identity)".into())
            }
            ExperimentKind::Mtc if self.methods.is_empty() => {
                bad("mtc experiments need at least one method".into())
            }
            _ => Ok(()),
        }
    }

    fn build_covs(&self) -> Result<(CovMatrix, CovMatrix)> {
        let sigma = self
            .sigma
            .build(self.p, self.n, self.p)
            .map_err(config_err)?;
        let psi = self.psi.build(self.n, self.n, self.p).map_err(config_err)?;
        Ok((sigma, psi))
    }
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Parameter(m) => Error::Config(m),
        other => other,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub rep: usize,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub columns: Vec<String>,
    pub records: Vec<Record>,
    pub aggregates: BTreeMap<String, f64>,
    pub wall_time_secs: f64,
}

impl ExperimentReport {
    fn assemble(
        config: ExperimentConfig,
        columns: Vec<String>,
        records: Vec<Record>,
        start: Instant,
    ) -> Self {
        let aggregates = compute_aggregates(config.kind, &columns, &records);
        Self {
            config,
            columns,
            records,
            aggregates,
            wall_time_secs: start.elapsed().as_secs_f64(),
        }
    }

    /// Values of one column across replications.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.records.iter().map(|r| r.values[k]).collect())
    }

    pub fn aggregate(&self, name: &str) -> Option<f64> {
        self.aggregates.get(name).copied()
    }

    /// For `size` and `power`: rejections divided by replications.
    pub fn rejection_rate(&self) -> Option<f64> {
        self.aggregate("rejection_rate")
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    /// Loads a report and checks that its aggregates match its records.
    pub fn load(path: &Path) -> Result<Self> {
        let r: Self = io::read_json(path)?;
        r.verify()?;
        Ok(r)
    }

    pub fn verify(&self) -> Result<()> {
        if self.records.len() != self.config.reps {
            return Err(Error::Data(format!(
                "{} records for {} reps",
                self.records.len(),
                self.config.reps
            )));
        }
        if let Some(r) = self
            .records
            .iter()
            .find(|r| r.values.len() != self.columns.len())
        {
            return Err(Error::Data(format!(
                "record {} has {} values for {} columns",
                r.rep,
                r.values.len(),
                self.columns.len()
            )));
        }
        if compute_aggregates(self.config.kind, &self.columns, &self.records) != self.aggregates {
            return Err(Error::Data(
                "aggregates do not match the per-replication records".into(),
            ));
        }
        Ok(())
    }

    /// One line per replication: `rep` followed by the record columns.
    pub fn write_records_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(std::iter::once("rep").chain(self.columns.iter().map(String::as_str)))?;
        for r in &self.records {
            w.write_record(
                std::iter::once(r.rep.to_string())
                    .chain(r.values.iter().map(|&v| io::format_f64(v))),
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Mean, sample sd and quantiles of every column; `rejection_rate` for the
/// testing experiments.
pub fn compute_aggregates(
    kind: ExperimentKind,
    columns: &[String],
    records: &[Record],
) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for (k, name) in columns.iter().enumerate() {
        let v: Vec<f64> = records.iter().map(|r| r.values[k]).collect();
        let (mean, sd) = mean_sd(&v);
        out.insert(format!("{name}_mean"), mean);
        out.insert(format!("{name}_sd"), sd);
        for (tag, q) in [
            ("q10", 0.1),
            ("q25", 0.25),
            ("median", 0.5),
            ("q75", 0.75),
            ("q90", 0.9),
        ] {
            out.insert(format!("{name}_{tag}"), quantile(&v, q));
        }
    }
    if matches!(kind, ExperimentKind::Size | ExperimentKind::Power) {
        if let Some(k) = columns.iter().position(|c| c == "reject") {
            let count = records.iter().filter(|r| r.values[k] != 0.0).count();
            out.insert("rejection_rate".into(), count as f64 / records.len() as f64);
        }
    }
    out
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = v.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Linearly interpolated quantile of the sorted values.
pub fn quantile(v: &[f64], q: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let h = (s.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}

/// Runs the experiment named by `config.kind`.
pub fn run(config: &ExperimentConfig) -> Result<ExperimentReport> {
    match config.kind {
        ExperimentKind::Size => run_size(config),
        ExperimentKind::Power => run_power(config),
        ExperimentKind::Mtc => run_mtc(config),
        ExperimentKind::QuadfuncError => run_quadfunc_error(config),
    }
}

fn replicate<F>(config: &ExperimentConfig, sampler: &MatNormSampler, f: F) -> Result<Vec<Record>>
where
    F: Fn(crate::covmodel::DataMatrix) -> Result<Vec<f64>> + Sync,
{
    (0..config.reps)
        .into_par_iter()
        .map(|rep| {
            let mut stream = NormalStream::new(config.seed, rep as u64);
            let x = sampler.sample_data(&mut stream)?;
            Ok(Record { rep, values: f(x)? })
        })
        .collect()
}

fn names(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

/// Empirical size of the independence test.
pub fn run_size(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    if config.kind != ExperimentKind::Size {
        return Err(Error::Config("run_size needs kind = size".into()));
    }
    run_testing(config)
}

/// Empirical power of the independence test.
pub fn run_power(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    if config.kind != ExperimentKind::Power {
        return Err(Error::Config("run_power needs kind = power".into()));
    }
    run_testing(config)
}

fn run_testing(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    let (sigma, psi) = config.build_covs()?;
    let sampler = MatNormSampler::new(&vec![0.0; config.p], &sigma, &psi)?;
    let critical =
        indtest::critical_value(config.n, config.p, config.alpha, &config.mode, config.delta)?;
    let records = replicate(config, &sampler, |x| {
        let m = SampleMoments::new(&x);
        let r = indtest::run_test_with_critical(
            &m,
            config.alpha,
            &config.mode,
            critical,
            config.delta,
        )?;
        Ok(vec![
            r.statistic,
            r.centered,
            r.critical_value,
            if r.reject { 1.0 } else { 0.0 },
            r.ap_hat,
            r.bn_hat,
        ])
    })?;
    let columns = names(&[
        "statistic",
        "centered",
        "critical_value",
        "reject",
        "ap_hat",
        "bn_hat",
    ]);
    Ok(ExperimentReport::assemble(
        config.clone(),
        columns,
        records,
        start,
    ))
}

/// FDP and power of each requested screening method.
pub fn run_mtc(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    if config.kind != ExperimentKind::Mtc {
        return Err(Error::Config("run_mtc needs kind = mtc".into()));
    }
    let start = Instant::now();
    let (sigma, psi) = config.build_covs()?;
    let sampler = MatNormSampler::new(&vec![0.0; config.p], &sigma, &psi)?;
    let truth = TruthSet::from_cov(&sigma);
    let psi_inv: Option<DMatrix<f64>> = if config.methods.contains(&HarnessMethod::SandwichTrue) {
        Some(psi.inverse()?)
    } else {
        None
    };
    let bn_true = quadfunc::true_bn(&psi);

    let mut columns = Vec::new();
    for m in &config.methods {
        let pre = m.column_prefix();
        for suffix in ["fdp", "power", "rejections", "t_hat"] {
            columns.push(format!("{pre}_{suffix}"));
        }
        if *m == HarnessMethod::Sandwich {
            columns.push("sandwich_lambda".into());
        }
    }

    let records = replicate(config, &sampler, |x| {
        let mut values = Vec::with_capacity(columns.len());
        for m in &config.methods {
            let (method, opts) = match m {
                HarnessMethod::Sandwich => (
                    MtcMethod::Sandwich,
                    MtcOptions {
                        lambda: config.lambda,
                        grid: config.lambda_grid.clone(),
                        ..Default::default()
                    },
                ),
                HarnessMethod::SandwichTrue => (
                    MtcMethod::Sandwich,
                    MtcOptions {
                        precision: psi_inv.clone(),
                        ..Default::default()
                    },
                ),
                HarnessMethod::Naive => (MtcMethod::Naive, MtcOptions::default()),
                HarnessMethod::VarianceCorrected => (
                    MtcMethod::VarianceCorrected,
                    MtcOptions {
                        bn: Some(bn_true),
                        ..Default::default()
                    },
                ),
            };
            let r = corrtest::run_mtc(&x, method, config.alpha, &opts, Some(&truth))?;
            let ev = r.evaluation.expect("truth supplied");
            values.extend([ev.fdp, ev.power, r.rejections.len() as f64, r.t_hat]);
            if *m == HarnessMethod::Sandwich {
                values.push(r.lambda.expect("CLIME level"));
            }
        }
        Ok(values)
    })?;
    Ok(ExperimentReport::assemble(
        config.clone(),
        columns,
        records,
        start,
    ))
}

/// Relative errors of the adaptive and fixed-level estimates of `||Sigma||_F^2`.
pub fn run_quadfunc_error(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    if config.kind != ExperimentKind::QuadfuncError {
        return Err(Error::Config(
            "run_quadfunc_error needs kind = quadfunc-error".into(),
        ));
    }
    let start = Instant::now();
    let (sigma, psi) = config.build_covs()?;
    let sampler = MatNormSampler::new(&vec![0.0; config.p], &sigma, &psi)?;
    let fro2 = sigma.frobenius_sq();
    let ap = quadfunc::true_ap(&sigma);
    let records = replicate(config, &sampler, |x| {
        let m = SampleMoments::new(&x);
        let (est, iid) = m.estimate_ap_with_iid(config.delta, Some(config.iid_lambda))?;
        let iid = iid.expect("iid level supplied");
        Ok(vec![
            est.bn_hat,
            est.ap_hat,
            iid.ap_tilde,
            est.ap_hat / ap,
            (est.sigma_fro2_hat - fro2).abs() / fro2,
            (iid.sigma_fro2 - fro2).abs() / fro2,
        ])
    })?;
    let columns = names(&[
        "bn_hat",
        "ap_hat",
        "ap_tilde",
        "ap_ratio",
        "adaptive_error",
        "iid_error",
    ]);
    Ok(ExperimentReport::assemble(
        config.clone(),
        columns,
        records,
        start,
    ))
}
