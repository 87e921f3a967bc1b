//! Double-loop re-implementations used as oracles, plus data helpers.
#![allow(dead_code)]

use nalgebra::DMatrix;
use sampind::normal;
use sampind::rng::NormalStream;
use sampind::DataMatrix;

pub fn gaussian(p: usize, n: usize, seed: u64) -> DMatrix<f64> {
    let mut s = NormalStream::new(seed, 0);
    DMatrix::from_fn(p, n, |_, _| s.next_normal())
}

pub fn data(p: usize, n: usize, seed: u64) -> DataMatrix {
    DataMatrix::new(gaussian(p, n, seed)).unwrap()
}

/// Small integers, so every sum the estimators form is exact.
pub fn integer_data(p: usize, n: usize, seed: u64) -> DataMatrix {
    let mut s = NormalStream::new(seed, 0);
    DataMatrix::new(DMatrix::from_fn(p, n, |_, _| {
        (s.next_normal() * 8.0).round()
    }))
    .unwrap()
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

pub fn assert_mat_close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64, what: &str) {
    assert_eq!(a.shape(), b.shape(), "{what}: shape");
    for (k, (x, y)) in a.iter().zip(b.iter()).enumerate() {
        assert!(close(*x, *y, tol), "{what}: entry {k}: {x} vs {y}");
    }
}

fn row_means(x: &DMatrix<f64>) -> Vec<f64> {
    let (p, n) = x.shape();
    (0..p)
        .map(|k| (0..n).map(|i| x[(k, i)]).sum::<f64>() / n as f64)
        .collect()
}

/// `psi_hat_ij = (1/p) sum_k (X_ki - Xbar_k)(X_kj - Xbar_k)`.
pub fn psi_hat(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (p, n) = x.shape();
    let m = row_means(x);
    DMatrix::from_fn(n, n, |i, j| {
        (0..p)
            .map(|k| (x[(k, i)] - m[k]) * (x[(k, j)] - m[k]))
            .sum::<f64>()
            / p as f64
    })
}

/// Column sample covariance with divisor `n - 1`.
pub fn sigma_hat(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (p, n) = x.shape();
    let m = row_means(x);
    DMatrix::from_fn(p, p, |a, b| {
        (0..n)
            .map(|i| (x[(a, i)] - m[a]) * (x[(b, i)] - m[b]))
            .sum::<f64>()
            / (n as f64 - 1.0)
    })
}

pub fn corr(x: &DMatrix<f64>) -> DMatrix<f64> {
    let s = sigma_hat(x);
    DMatrix::from_fn(s.nrows(), s.nrows(), |a, b| {
        if a == b {
            1.0
        } else {
            s[(a, b)] / (s[(a, a)] * s[(b, b)]).sqrt()
        }
    })
}

pub fn trace_sigma(x: &DMatrix<f64>) -> f64 {
    sigma_hat(x).trace()
}

/// `B_hat_n = (1/n)(||Psi_hat||_F^2 - (tr Psi_hat)^2 / p)` with `Psi_hat = (p / tr Sigma_hat) psi_hat`, floored at 0.
pub fn bn_hat(x: &DMatrix<f64>) -> f64 {
    let (p, n) = x.shape();
    let scale = p as f64 / trace_sigma(x);
    let ps = psi_hat(x) * scale;
    let mut fro = 0.0;
    for i in 0..n {
        for j in 0..n {
            fro += ps[(i, j)] * ps[(i, j)];
        }
    }
    let tr: f64 = (0..n).map(|i| ps[(i, i)]).sum();
    ((fro - tr * tr / p as f64) / n as f64).max(0.0)
}

/// Adaptive thresholded covariance and `A_hat_p`.
pub fn threshold(x: &DMatrix<f64>, delta: f64) -> (DMatrix<f64>, f64) {
    let (p, n) = x.shape();
    let s = sigma_hat(x);
    let level = delta * (bn_hat(x) * (p as f64).ln() / n as f64).sqrt();
    let t = DMatrix::from_fn(p, p, |a, b| {
        if a == b {
            return s[(a, a)];
        }
        let r = s[(a, b)] / (s[(a, a)] * s[(b, b)]).sqrt();
        let keep = r.abs() >= 1.0 || r.abs() / (1.0 - r * r) >= level;
        if keep {
            s[(a, b)]
        } else {
            0.0
        }
    });
    let fro: f64 = t.iter().map(|v| v * v).sum();
    let tr: f64 = (0..p).map(|k| t[(k, k)]).sum();
    let ap = p as f64 * fro / (tr * tr);
    (t, ap)
}

/// `T_hat = (p / A_hat_p) max_{i<j} T_ij^2 / (psi_ii psi_jj)` with `T_ij = psi_ij + tr Sigma_hat / (n p)`.
pub fn test_statistic(x: &DMatrix<f64>, delta: f64) -> f64 {
    let (p, n) = x.shape();
    let ps = psi_hat(x);
    let shift = trace_sigma(x) / (n as f64 * p as f64);
    let (_, ap) = threshold(x, delta);
    let mut best = f64::NEG_INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            let t = ps[(i, j)] + shift;
            best = best.max(t * t / (ps[(i, i)] * ps[(j, j)]));
        }
    }
    p as f64 / ap * best
}

/// Sandwich correlation by explicit per-pair sums.
pub fn sandwich_corr(x: &DMatrix<f64>, gamma: &DMatrix<f64>) -> DMatrix<f64> {
    let (p, n) = x.shape();
    let m = row_means(x);
    let cov = |a: usize, b: usize| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += (x[(a, i)] - m[a]) * gamma[(i, j)] * (x[(b, j)] - m[b]);
            }
        }
        s / n as f64
    };
    let diag: Vec<f64> = (0..p).map(|a| cov(a, a)).collect();
    DMatrix::from_fn(p, p, |a, b| {
        if a == b {
            1.0
        } else {
            cov(a, b) / (diag[a] * diag[b]).sqrt()
        }
    })
}

/// Tuning objective counted over ordered pairs `i != j`.
pub fn tuning_objective(stats: &DMatrix<f64>) -> f64 {
    let p = stats.nrows();
    let mut total = 0.0;
    for k in 3..=9 {
        let z = normal::ppf(1.0 - k as f64 / 20.0);
        let mut count = 0usize;
        for i in 0..p {
            for j in 0..p {
                if i != j && stats[(i, j)].abs() >= z {
                    count += 1;
                }
            }
        }
        let frac = count as f64 / (k as f64 * (p * p - p) as f64 / 10.0);
        total += (frac - 1.0) * (frac - 1.0);
    }
    total
}

fn bh_count(stats: &DMatrix<f64>, t: f64) -> usize {
    let p = stats.nrows();
    let mut c = 0;
    for i in 0..p {
        for j in i + 1..p {
            if stats[(i, j)].abs() >= t {
                c += 1;
            }
        }
    }
    c
}

fn bh_holds(stats: &DMatrix<f64>, t: f64, alpha: f64) -> bool {
    let p = stats.nrows();
    normal::sf(t) * (p * p - p) as f64 / bh_count(stats, t).max(1) as f64 <= alpha
}

/// Smallest admissible `t` among every place the infimum can sit: zero, an
/// order statistic, or the normal quantile solving the inequality for some count.
pub fn bh_threshold(stats: &DMatrix<f64>, alpha: f64) -> f64 {
    let p = stats.nrows();
    let lp = (p as f64).ln();
    let bound = (4.0 * lp - 2.0 * lp.ln()).sqrt();
    let m = (p * p - p) as f64;
    let pairs = p * (p - 1) / 2;
    let mut cands = vec![0.0];
    for i in 0..p {
        for j in i + 1..p {
            cands.push(stats[(i, j)].abs());
        }
    }
    for r in 1..=pairs {
        let level = alpha * r as f64 / m;
        if level < 0.5 {
            cands.push(normal::isf(level));
        }
    }
    cands.retain(|&t| (0.0..=bound).contains(&t));
    cands.sort_by(f64::total_cmp);
    for &t in &cands {
        // allow for the last-bit rounding of the quantile
        if bh_holds(stats, t, alpha) || bh_holds(stats, t * (1.0 + 1e-14), alpha) {
            return t;
        }
    }
    (4.0 * lp).sqrt()
}

/// Exhaustive vertex search for `min ||beta||_1 s.t. ||R beta - e_col||_inf <= lambda`
/// in the split form `beta = u - v`, `u, v >= 0`. Returns the optimal value
/// and the distinct optimal `beta` vectors.
pub fn clime_by_vertices(
    r: &DMatrix<f64>,
    col: usize,
    lambda: f64,
) -> Option<(f64, Vec<Vec<f64>>)> {
    let n = r.nrows();
    let dim = 2 * n;
    // Halfspaces a'z <= b over z = (u, v).
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for k in 0..dim {
        let mut a = vec![0.0; dim];
        a[k] = -1.0;
        rows.push((a, 0.0));
    }
    for k in 0..n {
        let e = if k == col { 1.0 } else { 0.0 };
        let mut plus = vec![0.0; dim];
        let mut minus = vec![0.0; dim];
        for j in 0..n {
            plus[j] = r[(k, j)];
            plus[n + j] = -r[(k, j)];
            minus[j] = -r[(k, j)];
            minus[n + j] = r[(k, j)];
        }
        rows.push((plus, lambda + e));
        rows.push((minus, lambda - e));
    }
    let total = rows.len();
    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
    let mut pick = Vec::with_capacity(dim);
    enumerate(total, dim, 0, &mut pick, &mut |idx| {
        let a = DMatrix::from_fn(dim, dim, |i, j| rows[idx[i]].0[j]);
        let b = nalgebra::DVector::from_iterator(dim, idx.iter().map(|&i| rows[i].1));
        let Some(z) = a.full_piv_lu().solve(&b) else {
            return;
        };
        // near-singular active sets give huge spurious solutions
        if z.amax() > 1e6 {
            return;
        }
        if rows
            .iter()
            .any(|(a, b)| a.iter().zip(z.iter()).map(|(x, y)| x * y).sum::<f64>() > b + 1e-9)
        {
            return;
        }
        let obj: f64 = z.iter().sum();
        let beta: Vec<f64> = (0..n).map(|j| z[j] - z[n + j]).collect();
        match &mut best {
            None => best = Some((obj, vec![beta])),
            Some((v, list)) => {
                if obj < *v - 1e-10 {
                    *v = obj;
                    *list = vec![beta];
                } else if (obj - *v).abs() <= 1e-10
                    && !list
                        .iter()
                        .any(|b| b.iter().zip(&beta).all(|(x, y)| (x - y).abs() < 1e-9))
                {
                    list.push(beta);
                }
            }
        }
    });
    best
}

fn enumerate(
    total: usize,
    k: usize,
    start: usize,
    pick: &mut Vec<usize>,
    f: &mut impl FnMut(&[usize]),
) {
    if pick.len() == k {
        f(pick);
        return;
    }
    for i in start..total {
        if total - i < k - pick.len() {
            break;
        }
        pick.push(i);
        enumerate(total, k, i + 1, pick, f);
        pick.pop();
    }
}

/// A random symmetric positive definite `n x n` matrix.
pub fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
    let a = gaussian(n, n + 2, seed);
    let mut m = &a * a.transpose() / (n + 2) as f64;
    for k in 0..n {
        m[(k, k)] += 0.1;
    }
    (m.clone() + m.transpose()) * 0.5
}
