//! Library estimators against straightforward double-loop re-implementations.

mod common;

use common::*;
use nalgebra::DMatrix;
use sampind::corrtest::{self, lp};
use sampind::indtest;
use sampind::quadfunc::{self, SampleMoments};
use sampind::DataMatrix;

const TOL: f64 = 1e-12;

fn shapes() -> Vec<(usize, usize, u64)> {
    let mut v = Vec::new();
    for p in 2..=6 {
        for n in 3..=6 {
            v.push((p, n, (100 * p + n) as u64));
        }
    }
    v
}

#[test]
fn row_and_column_covariances() {
    for (p, n, seed) in shapes() {
        let x = data(p, n, seed);
        let m = SampleMoments::new(&x);
        assert_mat_close(&m.row_cov.psi_hat, &psi_hat(x.values()), TOL, "psi_hat");
        let s = sigma_hat(x.values());
        for k in 0..p {
            assert!(close(m.row_cov.sigma_diag[k], s[(k, k)], TOL));
        }
        let (cov, rho) = quadfunc::col_sample_corr(&x).unwrap();
        assert_mat_close(&cov, &s, TOL, "sigma_hat");
        assert_mat_close(&rho, &corr(x.values()), TOL, "rho_hat");
    }
}

#[test]
fn bn_and_ap_estimates() {
    for (p, n, seed) in shapes() {
        let x = data(p, n, seed);
        assert!(
            close(quadfunc::estimate_bn(&x).unwrap(), bn_hat(x.values()), TOL),
            "bn at {p}x{n}"
        );
        for delta in [0.0, 0.5, 1.42, 3.0] {
            let (thr, est) = quadfunc::threshold_cov(&x, delta).unwrap();
            let (want, ap) = threshold(x.values(), delta);
            assert_mat_close(&thr, &want, TOL, "thresholded");
            assert!(
                close(est.ap_hat, ap, TOL),
                "ap at {p}x{n} delta {delta}: {} vs {ap}",
                est.ap_hat
            );
            assert!(close(
                quadfunc::estimate_ap(&x, delta).unwrap().ap_hat,
                ap,
                TOL
            ));
        }
    }
}

#[test]
fn max_statistic() {
    for (p, n, seed) in shapes() {
        let x = data(p, n, seed);
        let got = indtest::test_statistic(&x, 1.42).unwrap();
        let want = test_statistic(x.values(), 1.42);
        assert!(close(got, want, TOL), "{p}x{n}: {got} vs {want}");
    }
}

#[test]
fn bias_corrected_entries() {
    let x = data(4, 5, 9);
    let t = indtest::bias_corrected_t(&x);
    let ps = psi_hat(x.values());
    let shift = trace_sigma(x.values()) / 20.0;
    for i in 0..5 {
        for j in 0..5 {
            assert!(close(t[(i, j)], ps[(i, j)] + shift, TOL));
        }
    }
}

#[test]
fn sandwich_against_pairwise_sums() {
    for (p, n, seed) in shapes() {
        let x = data(p, n, seed);
        let gamma = random_spd(n, seed + 1);
        let (_, rho) = corrtest::sandwich_corr(&x, &gamma).unwrap();
        assert_mat_close(
            &rho,
            &common::sandwich_corr(x.values(), &gamma),
            TOL,
            "sandwich",
        );
        let stats = corrtest::sandwich_stats(&x, &gamma).unwrap();
        assert_mat_close(&stats, &(rho * (n as f64).sqrt()), TOL, "sandwich stats");
    }
}

#[test]
fn naive_and_corrected_statistics() {
    for (p, n, seed) in shapes() {
        let x = data(p, n, seed);
        let rho = corr(x.values());
        let naive = corrtest::naive_stats(&x).unwrap();
        let corrected = corrtest::corrected_stats(&x, 1.7).unwrap();
        for a in 0..p {
            for b in 0..p {
                if a != b {
                    let z = (n as f64).sqrt() * rho[(a, b)];
                    assert!(close(naive[(a, b)], z, TOL));
                    assert!(close(corrected[(a, b)], z / 1.7f64.sqrt(), TOL));
                }
            }
        }
    }
}

#[test]
fn tuning_objective_counts() {
    for seed in 0..20 {
        let p = 3 + (seed as usize % 4);
        let s = gaussian(p, p, seed) * 1.5;
        let stats = (&s + s.transpose()) * 0.5;
        let got = corrtest::tuning_objective(&stats);
        let want = common::tuning_objective(&stats);
        assert!(close(got, want, TOL), "{got} vs {want}");
    }
}

#[test]
fn bh_threshold_against_candidate_scan() {
    for seed in 0..60 {
        let p = 2 + (seed as usize % 5);
        let scale = [0.5, 1.0, 2.0, 3.0][seed as usize % 4];
        let s = gaussian(p, p, 500 + seed) * scale;
        let stats = (&s + s.transpose()) * 0.5;
        for alpha in [0.05, 0.1, 0.3] {
            let got = corrtest::bh_threshold(&stats, alpha).unwrap().t_hat;
            let want = common::bh_threshold(&stats, alpha);
            assert!(
                close(got, want, TOL),
                "seed {seed} p {p} alpha {alpha}: {got} vs {want}"
            );
        }
    }
}

#[test]
fn bh_analytic_example() {
    let stats = DMatrix::from_element(3, 3, 10.0);
    let r = corrtest::bh_threshold(&stats, 0.05).unwrap();
    assert!((r.t_hat - 1.95996).abs() <= 1e-5, "{}", r.t_hat);
    assert_eq!(r.rejections.len(), 3);
}

#[test]
fn limiting_quantile() {
    let q = indtest::evd_quantile(0.05).unwrap();
    assert!((q - 2.7163).abs() <= 1e-4, "{q}");
}

fn check_lp_column(r: &DMatrix<f64>, col: usize, lambda: f64) {
    let n = r.nrows();
    let oracle = clime_by_vertices(r, col, lambda);
    let got = lp::solve_column(r, col, lambda, &lp::LpOptions::default());
    let Some((value, optima)) = oracle else {
        assert!(got.is_err(), "oracle infeasible, solver returned {got:?}");
        return;
    };
    let sol = got.unwrap_or_else(|e| panic!("n {n} col {col} lambda {lambda}: {e}"));
    let l1: f64 = sol.beta.iter().map(|v| v.abs()).sum();
    assert!((l1 - value).abs() <= 1e-8, "objective {l1} vs {value}");
    // with a unique optimum the vertex itself must be reproduced
    if optima.len() == 1 {
        for (a, b) in sol.beta.iter().zip(&optima[0]) {
            assert!(
                (a - b).abs() <= 1e-8,
                "beta {:?} vs {:?}",
                sol.beta,
                optima[0]
            );
        }
    }
    for k in 0..n {
        let e = if k == col { 1.0 } else { 0.0 };
        let res: f64 = (0..n).map(|j| r[(k, j)] * sol.beta[j]).sum::<f64>() - e;
        assert!(res.abs() <= lambda + 1e-8);
    }
}

#[test]
fn clime_columns_match_vertex_enumeration() {
    for n in 1..=4 {
        for seed in 0..6u64 {
            let r = random_spd(n, 900 + 10 * n as u64 + seed);
            let diag_max = (0..n).map(|k| r[(k, k)]).fold(0.0, f64::max);
            for lambda in [0.0, 0.05, 0.2, 0.5] {
                for col in 0..n {
                    check_lp_column(&r, col, lambda);
                }
            }
            check_lp_column(&r, 0, 1.0 + diag_max);
        }
    }
}

#[test]
fn clime_on_sample_row_covariance() {
    // psi_hat is singular (its rows sum to zero), so small lambda is infeasible
    for seed in 0..4u64 {
        let x = data(30, 4, 77 + seed);
        let r = SampleMoments::new(&x).row_cov.psi_hat;
        for lambda in [0.1, 0.25, 0.5, 1.0] {
            for col in 0..4 {
                check_lp_column(&r, col, lambda);
            }
        }
    }
}

#[test]
fn clime_matrix_symmetrizes_columns() {
    let r = random_spd(4, 3);
    let est = corrtest::clime_matrix(&r, 0.1).unwrap();
    for j in 0..4 {
        let col = corrtest::clime_column(&r, j, 0.1).unwrap();
        for i in 0..4 {
            assert_eq!(est.gamma_raw[(i, j)], col[i]);
        }
    }
    for i in 0..4 {
        for j in 0..4 {
            let (a, b) = (est.gamma_raw[(i, j)], est.gamma_raw[(j, i)]);
            let want = if a.abs() <= b.abs() { a } else { b };
            assert_eq!(est.gamma_hat[(i, j)], want);
        }
    }
}

#[test]
fn true_functionals() {
    for seed in 0..5u64 {
        let m = random_spd(6, seed);
        let cov = sampind::CovMatrix::new(m.clone()).unwrap();
        let fro: f64 = m.iter().map(|v| v * v).sum();
        let tr = m.trace();
        assert!(close(quadfunc::true_ap(&cov), 6.0 * fro / (tr * tr), TOL));
        assert!(close(quadfunc::true_bn(&cov), fro / 6.0, TOL));
    }
}

#[test]
fn small_hand_worked_case() {
    // p = 1, n = 2: psi_hat = [[0.25, -0.25], [-0.25, 0.25]], sigma_hat_11 = 0.5
    let x = DataMatrix::new_small(DMatrix::from_row_slice(1, 2, &[1.0, 0.0])).unwrap();
    let m = SampleMoments::new(&x);
    assert_eq!(
        m.row_cov.psi_hat,
        DMatrix::from_row_slice(2, 2, &[0.25, -0.25, -0.25, 0.25])
    );
    assert_eq!(m.row_cov.sigma_diag[0], 0.5);
}
