//! Monte Carlo checks of the estimators and tests at moderate scale.

mod common;

use nalgebra::DMatrix;
use sampind::corrtest::{self, MtcMethod, MtcOptions};
use sampind::covmodel::{self, MatNormSampler};
use sampind::indtest::CriticalMode;
use sampind::quadfunc::{self, SampleMoments};
use sampind::rng::NormalStream;
use sampind::simharness::{
    self, mean_sd, quantile, ExperimentConfig, ExperimentKind, HarnessMethod,
};
use sampind::{CovMatrix, CovSpec};

fn sampler(sigma: &CovMatrix, psi: &CovMatrix) -> MatNormSampler {
    MatNormSampler::new(&vec![0.0; sigma.dim()], sigma, psi).unwrap()
}

fn config(
    kind: ExperimentKind,
    n: usize,
    p: usize,
    sigma: CovSpec,
    psi: CovSpec,
    reps: usize,
    seed: u64,
) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(kind, n, p, sigma, psi, reps);
    c.seed = seed;
    c
}

#[test]
fn sample_mean_matches_location() {
    let sigma = covmodel::gen_autocorr(3, 0.5).unwrap();
    let psi = covmodel::gen_autocorr(2, 0.3).unwrap();
    let mu = [2.5, -1.0, 0.0];
    let s = MatNormSampler::new(&mu, &sigma, &psi).unwrap();
    let mut stream = NormalStream::new(4, 0);
    let reps = 100_000;
    let total: f64 = (0..reps).map(|_| s.sample(&mut stream)[(0, 0)]).sum();
    assert!((total / reps as f64 - 2.5).abs() <= 4.0 / (reps as f64).sqrt());
}

#[test]
fn independent_samples_are_decorrelated() {
    let sigma = covmodel::gen_banded(40).unwrap();
    let s = sampler(&sigma, &CovMatrix::identity(5));
    let mut stream = NormalStream::new(8, 0);
    let reps = 20_000;
    let vals: Vec<f64> = (0..reps)
        .map(|_| {
            let x = s.sample(&mut stream);
            x.column(0).dot(&x.column(1)) / 40.0
        })
        .collect();
    let (m, sd) = mean_sd(&vals);
    assert!(m.abs() <= 5.0 * sd / (reps as f64).sqrt(), "{m}");
}

#[test]
fn bn_hat_mean() {
    let r = simharness::run(&config(
        ExperimentKind::QuadfuncError,
        100,
        1000,
        CovSpec::Identity,
        CovSpec::Identity,
        200,
        1,
    ))
    .unwrap();
    let m = r.aggregate("bn_hat_mean").unwrap();
    assert!((m - 1.0).abs() <= 0.1, "{m}");

    let psi = covmodel::gen_autocorr(100, 0.5).unwrap();
    let bn = quadfunc::true_bn(&psi);
    let r = simharness::run(&config(
        ExperimentKind::QuadfuncError,
        100,
        2000,
        CovSpec::Identity,
        CovSpec::Ar { rho: 0.5 },
        50,
        2,
    ))
    .unwrap();
    let m = r.aggregate("bn_hat_mean").unwrap();
    assert!((m - bn).abs() <= 0.15, "{m} vs {bn}");
}

#[test]
fn ap_hat_is_ratio_consistent() {
    let r = simharness::run(&config(
        ExperimentKind::QuadfuncError,
        200,
        1000,
        CovSpec::Identity,
        CovSpec::Identity,
        100,
        3,
    ))
    .unwrap();
    let m = r.aggregate("ap_hat_mean").unwrap();
    assert!((m - 1.0).abs() <= 0.1, "{m}");

    let r = simharness::run(&config(
        ExperimentKind::QuadfuncError,
        200,
        1000,
        CovSpec::Ar { rho: 0.5 },
        CovSpec::Identity,
        100,
        4,
    ))
    .unwrap();
    let inside = r
        .column("ap_ratio")
        .unwrap()
        .iter()
        .filter(|v| (0.85..=1.15).contains(*v))
        .count();
    assert!(inside >= 95, "{inside}");

    let sigma = covmodel::gen_banded(500).unwrap();
    let fro = sigma.frobenius_sq();
    let s = sampler(&sigma, &CovMatrix::identity(200));
    let mut inside = 0;
    for rep in 0..100 {
        let x = s.sample_data(&mut NormalStream::new(5, rep)).unwrap();
        let ratio = quadfunc::estimate_ap(&x, 1.42).unwrap().sigma_fro2_hat / fro;
        if (0.8..=1.2).contains(&ratio) {
            inside += 1;
        }
    }
    assert!(inside >= 95, "{inside}");
}

#[test]
fn adaptive_threshold_errors() {
    let mut c = config(
        ExperimentKind::QuadfuncError,
        200,
        1000,
        CovSpec::Ar { rho: 0.5 },
        CovSpec::Ar { rho: 0.8 },
        30,
        6,
    );
    c.iid_lambda = 2.0;
    let r = simharness::run(&c).unwrap();
    let adaptive = r.aggregate("adaptive_error_median").unwrap();
    let iid = r.aggregate("iid_error_median").unwrap();
    assert!(adaptive < iid, "{adaptive} vs {iid}");

    let r = simharness::run(&config(
        ExperimentKind::QuadfuncError,
        200,
        1000,
        CovSpec::Identity,
        CovSpec::Identity,
        30,
        7,
    ))
    .unwrap();
    let adaptive = r.aggregate("adaptive_error_median").unwrap();
    assert!(adaptive <= 0.1, "{adaptive}");
}

#[test]
fn corrected_statistic_spread() {
    let psi = covmodel::gen_autocorr(100, 0.5).unwrap();
    let bn = quadfunc::true_bn(&psi);
    let s = sampler(&CovMatrix::identity(50), &psi);
    let mut stream = NormalStream::new(9, 0);
    let vals: Vec<f64> = (0..2000)
        .map(|_| {
            let x = s.sample_data(&mut stream).unwrap();
            let (_, rho) = quadfunc::col_sample_corr(&x).unwrap();
            10.0 * rho[(0, 1)]
        })
        .collect();
    let (_, sd) = mean_sd(&vals);
    assert!((sd - bn.sqrt()).abs() <= 0.05, "{sd} vs {}", bn.sqrt());
}

#[test]
fn true_precision_decorrelates() {
    let sigma = covmodel::gen_banded(200).unwrap();
    let psi = covmodel::gen_autocorr(100, 0.5).unwrap();
    let gamma = psi.inverse().unwrap();
    let s = sampler(&sigma, &psi);
    let mut stream = NormalStream::new(10, 0);
    let vals: Vec<f64> = (0..2000)
        .map(|_| {
            let x = s.sample_data(&mut stream).unwrap();
            let stats = corrtest::sandwich_stats(&x, &gamma).unwrap();
            stats[(0, 3)]
        })
        .collect();
    let (_, sd) = mean_sd(&vals);
    assert!((sd - 1.0).abs() <= 0.05, "{sd}");
}

#[test]
fn corrected_and_naive_agree_for_independent_samples() {
    let s = sampler(&CovMatrix::identity(1000), &CovMatrix::identity(100));
    let x = s.sample_data(&mut NormalStream::new(11, 0)).unwrap();
    let bn = quadfunc::estimate_bn(&x).unwrap();
    let naive = corrtest::naive_stats(&x).unwrap();
    let corrected = corrtest::corrected_stats(&x, bn).unwrap();
    let factor = corrected[(0, 1)] / naive[(0, 1)];
    assert!((0.9..=1.1).contains(&factor), "{factor}");
}

#[test]
fn clime_error_shrinks_with_p() {
    let n = 50;
    let psi = covmodel::gen_autocorr(n, 0.5).unwrap();
    let psi_inv = psi.inverse().unwrap();
    let median_error = |p: usize| -> f64 {
        let s = sampler(&CovMatrix::identity(p), &psi);
        let grid = corrtest::default_lambda_grid(n, p);
        let errs: Vec<f64> = (0..20)
            .map(|rep| {
                let x = s.sample_data(&mut NormalStream::new(12, rep)).unwrap();
                let m = SampleMoments::new(&x);
                // psi_hat estimates (tr Sigma / p) Psi, so Gamma_hat targets (p / tr Sigma) Psi^{-1}
                let target: DMatrix<f64> = &psi_inv * (p as f64 / m.row_cov.trace_sigma());
                let t = corrtest::tune_lambda(&x, &grid).unwrap();
                (t.precision.gamma_hat - target).amax()
            })
            .collect();
        quantile(&errs, 0.5)
    };
    let small = median_error(500);
    let large = median_error(2000);
    assert!(large < small, "{large} vs {small}");
}

#[test]
fn monte_carlo_calibration_beats_limiting_at_small_n() {
    let size = |mode: CriticalMode| -> f64 {
        let mut c = config(
            ExperimentKind::Size,
            50,
            200,
            CovSpec::Identity,
            CovSpec::Identity,
            1000,
            13,
        );
        c.mode = mode;
        simharness::run(&c).unwrap().rejection_rate().unwrap()
    };
    let limiting = size(CriticalMode::Limiting);
    let mc = size(CriticalMode::MonteCarlo { m: 2000, seed: 14 });
    assert!(
        (mc - 0.05).abs() < (limiting - 0.05).abs(),
        "mc {mc} limiting {limiting}"
    );
}

#[test]
fn sparse_pair_without_signal_is_a_null() {
    let r = simharness::run(&config(
        ExperimentKind::Power,
        50,
        1000,
        CovSpec::Band,
        CovSpec::SparsePair { kappa: 0.0 },
        200,
        15,
    ))
    .unwrap();
    let rate = r.rejection_rate().unwrap();
    assert!(rate <= 0.08, "{rate}");
}

#[test]
fn power_against_band_sigma() {
    let r = simharness::run(&config(
        ExperimentKind::Power,
        50,
        1000,
        CovSpec::Band,
        CovSpec::Ar { rho: 0.7 },
        100,
        16,
    ))
    .unwrap();
    assert!(r.rejection_rate().unwrap() >= 0.95);
}

#[test]
fn sandwich_with_true_precision_on_block_sigma() {
    let mut c = config(
        ExperimentKind::Mtc,
        100,
        1000,
        CovSpec::Block {
            block: 10,
            offdiag: 0.5,
        },
        CovSpec::Ar { rho: 0.2 },
        20,
        17,
    );
    c.methods = vec![HarnessMethod::SandwichTrue];
    let r = simharness::run(&c).unwrap();
    let power = r.aggregate("sandwich_true_power_mean").unwrap();
    assert!((power - 0.966).abs() <= 0.10, "{power}");
}

#[test]
fn independent_samples_cost_little_power() {
    let mut c = config(
        ExperimentKind::Mtc,
        100,
        1000,
        CovSpec::Band,
        CovSpec::Identity,
        20,
        18,
    );
    c.methods = vec![HarnessMethod::Sandwich, HarnessMethod::Naive];
    let r = simharness::run(&c).unwrap();
    let sandwich = r.aggregate("sandwich_power_mean").unwrap();
    let naive = r.aggregate("naive_power_mean").unwrap();
    assert!((naive - sandwich).abs() <= 0.13, "{sandwich} vs {naive}");
}

#[test]
fn naive_screening_rejects_more_under_dependence() {
    let sigma = covmodel::gen_banded(300).unwrap();
    let psi = covmodel::gen_autocorr(60, 0.8).unwrap();
    let x = sampler(&sigma, &psi)
        .sample_data(&mut NormalStream::new(19, 0))
        .unwrap();
    let opts = MtcOptions::default();
    let naive = corrtest::run_mtc(&x, MtcMethod::Naive, 0.05, &opts, None).unwrap();
    let sandwich = corrtest::run_mtc(&x, MtcMethod::Sandwich, 0.05, &opts, None).unwrap();
    assert!(naive.rejections.len() > sandwich.rejections.len());
}
