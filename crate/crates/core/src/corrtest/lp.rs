//! Dense bounded dual simplex for the CLIME column program
//!
//! ```text
//! minimize ||beta||_1  subject to  || R beta - e_i ||_inf <= lambda
//! ```
//!
//! written with `beta = u - v`, `u, v >= 0` and one ranged row slack per
//! constraint:
//!
//! ```text
//! R u - R v - s = e_i,   -lambda <= s <= lambda.
//! ```
//!
//! All costs are nonnegative, so the all-slack basis is dual feasible and only
//! row `i` starts primal infeasible. The explicit basis inverse is updated in
//! product form and rebuilt from an LU factorization every `REFACTOR_EVERY`
//! pivots.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const REFACTOR_EVERY: usize = 100;

/// Solver tolerances.
#[derive(Clone, Copy, Debug)]
pub struct LpOptions {
    /// Allowed bound violation of basic variables at termination.
    pub primal_tol: f64,
    /// Pivot elements smaller than this are never chosen.
    pub pivot_tol: f64,
    /// Iteration cap; `None` means `10 n^2`.
    pub max_iter: Option<usize>,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self {
            primal_tol: 1e-9,
            pivot_tol: 1e-11,
            max_iter: None,
        }
    }
}

/// Solution of one column program.
#[derive(Clone, Debug)]
pub struct ColumnSolution {
    pub beta: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// `||R beta - e_i||_inf - lambda`, positive only within tolerance.
    pub max_violation: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Status {
    Basic,
    Lower,
    Upper,
}

struct Problem<'a> {
    r: &'a DMatrix<f64>,
    n: usize,
    lambda: f64,
}

impl Problem<'_> {
    // Variables: [0, n) = u, [n, 2n) = v, [2n, 3n) = s.
    fn cost(&self, j: usize) -> f64 {
        if j < 2 * self.n {
            1.0
        } else {
            0.0
        }
    }

    fn lower(&self, j: usize) -> f64 {
        if j < 2 * self.n {
            0.0
        } else {
            -self.lambda
        }
    }

    fn upper(&self, j: usize) -> f64 {
        if j < 2 * self.n {
            f64::INFINITY
        } else {
            self.lambda
        }
    }

    /// Writes column `j` of the constraint matrix into `out`.
    fn column(&self, j: usize, out: &mut [f64]) {
        let n = self.n;
        if j < n {
            out.copy_from_slice(self.r.column(j).as_slice());
        } else if j < 2 * n {
            for (o, v) in out.iter_mut().zip(self.r.column(j - n).iter()) {
                *o = -v;
            }
        } else {
            out.fill(0.0);
            out[j - 2 * n] = -1.0;
        }
    }
}

struct State<'a> {
    prob: Problem<'a>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    status: Vec<Status>,
    x: Vec<f64>,
    d: Vec<f64>,
    /// Row-major basis inverse.
    binv: Vec<f64>,
}

impl<'a> State<'a> {
    fn new(prob: Problem<'a>, col: usize) -> Self {
        let n = prob.n;
        let mut rhs = vec![0.0; n];
        rhs[col] = 1.0;
        let basis: Vec<usize> = (2 * n..3 * n).collect();
        let mut status = vec![Status::Lower; 3 * n];
        for &b in &basis {
            status[b] = Status::Basic;
        }
        let mut x = vec![0.0; 3 * n];
        // B = -I, so x_B = -rhs
        for k in 0..n {
            x[2 * n + k] = -rhs[k];
        }
        let d = (0..3 * n).map(|j| prob.cost(j)).collect();
        let mut binv = vec![0.0; n * n];
        for k in 0..n {
            binv[k * n + k] = -1.0;
        }
        Self {
            prob,
            rhs,
            basis,
            status,
            x,
            d,
            binv,
        }
    }

    fn n(&self) -> usize {
        self.prob.n
    }

    /// Rebuilds the basis inverse, basic values and reduced costs from scratch.
    fn refactor(&mut self, col: usize) -> Result<()> {
        let n = self.n();
        let mut bmat = DMatrix::zeros(n, n);
        let mut buf = vec![0.0; n];
        for (pos, &j) in self.basis.iter().enumerate() {
            self.prob.column(j, &mut buf);
            bmat.column_mut(pos).copy_from_slice(&buf);
        }
        let inv = bmat.try_inverse().ok_or(Error::Convergence {
            column: col,
            iterations: 0,
        })?;
        for r in 0..n {
            for c in 0..n {
                self.binv[r * n + c] = inv[(r, c)];
            }
        }
        // rhs minus nonbasic contributions
        let mut w = self.rhs.clone();
        for j in 0..3 * n {
            if self.status[j] != Status::Basic && self.x[j] != 0.0 {
                self.prob.column(j, &mut buf);
                for k in 0..n {
                    w[k] -= buf[k] * self.x[j];
                }
            }
        }
        for (pos, &j) in self.basis.iter().enumerate() {
            let row = &self.binv[pos * n..(pos + 1) * n];
            self.x[j] = row.iter().zip(&w).map(|(a, b)| a * b).sum();
        }
        // y' = c_B' B^{-1}
        let mut y = vec![0.0; n];
        for (pos, &j) in self.basis.iter().enumerate() {
            let c = self.prob.cost(j);
            if c != 0.0 {
                let row = &self.binv[pos * n..(pos + 1) * n];
                for k in 0..n {
                    y[k] += c * row[k];
                }
            }
        }
        for j in 0..3 * n {
            if self.status[j] == Status::Basic {
                self.d[j] = 0.0;
            } else {
                self.prob.column(j, &mut buf);
                self.d[j] = self.prob.cost(j) - buf.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        Ok(())
    }

    /// Basic position with the largest bound violation.
    fn select_leaving(&self, tol: f64) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        let mut worst = tol;
        for (pos, &j) in self.basis.iter().enumerate() {
            let v = self.x[j];
            let (lo, hi) = (self.prob.lower(j), self.prob.upper(j));
            let viol = if v < lo {
                lo - v
            } else if v > hi {
                v - hi
            } else {
                0.0
            };
            if viol > worst {
                worst = viol;
                best = Some((pos, if v < lo { lo } else { hi }));
            }
        }
        best
    }
}

/// Solves one CLIME column. `r` must be square; `col` selects `e_col`.
pub fn solve_column(
    r: &DMatrix<f64>,
    col: usize,
    lambda: f64,
    opts: &LpOptions,
) -> Result<ColumnSolution> {
    solve_column_path(r, col, &[lambda], opts)
        .pop()
        .expect("one level")
}

/// Solves one column for a decreasing sequence of levels, warm-starting
/// each solve from the previous optimal basis (which stays dual feasible
/// because only the slack bounds change). After the first failure the
/// remaining levels report the same error kind without being solved.
pub fn solve_column_path(
    r: &DMatrix<f64>,
    col: usize,
    lambdas: &[f64],
    opts: &LpOptions,
) -> Vec<Result<ColumnSolution>> {
    let n = r.nrows();
    let mut out = Vec::with_capacity(lambdas.len());
    let check = || -> Result<()> {
        if r.ncols() != n || col >= n {
            return Err(Error::Dimension(format!(
                "R is {}x{}, column {col}",
                n,
                r.ncols()
            )));
        }
        if let Some(l) = lambdas.iter().find(|l| !(**l >= 0.0) || !l.is_finite()) {
            return Err(Error::param(format!(
                "lambda must be finite and nonnegative, got {l}"
            )));
        }
        if lambdas.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::param("lambda path must be nonincreasing"));
        }
        Ok(())
    };
    if let Err(e) = check() {
        out.push(Err(e));
        return out;
    }
    if lambdas.is_empty() {
        return out;
    }
    let max_iter = opts.max_iter.unwrap_or(10 * n * n).max(1);
    let mut st = State::new(
        Problem {
            r,
            n,
            lambda: lambdas[0],
        },
        col,
    );
    let mut failed: Option<Error> = None;
    for (k, &lambda) in lambdas.iter().enumerate() {
        if let Some(e) = &failed {
            out.push(Err(match e {
                Error::Infeasible { column, .. } => Error::Infeasible {
                    column: *column,
                    lambda,
                },
                Error::Convergence { column, iterations } => Error::Convergence {
                    column: *column,
                    iterations: *iterations,
                },
                other => Error::Data(other.to_string()),
            }));
            continue;
        }
        if k > 0 {
            st.set_lambda(lambda);
            if let Err(e) = st.refactor(col) {
                out.push(Err(e));
                failed = Some(Error::Convergence {
                    column: col,
                    iterations: 0,
                });
                continue;
            }
        }
        let res = st.optimize(col, max_iter, opts).map(|iterations| {
            let beta: Vec<f64> = (0..n).map(|j| st.x[j] - st.x[n + j]).collect();
            let objective = beta.iter().map(|b| b.abs()).sum();
            let max_violation = residual_inf(r, &beta, col) - lambda;
            ColumnSolution {
                beta,
                objective,
                iterations,
                max_violation,
            }
        });
        if let Err(e) = &res {
            failed = Some(match e {
                Error::Infeasible { column, lambda } => Error::Infeasible {
                    column: *column,
                    lambda: *lambda,
                },
                Error::Convergence { column, iterations } => Error::Convergence {
                    column: *column,
                    iterations: *iterations,
                },
                other => Error::Data(other.to_string()),
            });
        }
        out.push(res);
    }
    out
}

impl State<'_> {
    /// Moves nonbasic slacks to the new bounds; basic values are stale until
    /// the next refactor.
    fn set_lambda(&mut self, lambda: f64) {
        self.prob.lambda = lambda;
        let n = self.n();
        for j in 2 * n..3 * n {
            match self.status[j] {
                Status::Lower => self.x[j] = -lambda,
                Status::Upper => self.x[j] = lambda,
                Status::Basic => {}
            }
        }
    }

    /// Dual simplex pivots until primal feasible; returns the pivot count.
    fn optimize(&mut self, col: usize, max_iter: usize, opts: &LpOptions) -> Result<usize> {
        let n = self.n();
        let mut alpha_row = vec![0.0; 3 * n];
        let mut rho = vec![0.0; n];
        let mut acol = vec![0.0; n];
        let mut alpha_q = vec![0.0; n];
        let mut iterations = 0;
        loop {
            let mut since_refactor = 0;
            loop {
                let Some((r_pos, target)) = self.select_leaving(opts.primal_tol) else {
                    break;
                };
                if iterations >= max_iter {
                    return Err(Error::Convergence {
                        column: col,
                        iterations,
                    });
                }
                iterations += 1;
                let leaving = self.basis[r_pos];
                // +1 when the leaving variable must increase to its lower bound
                let dir = if self.x[leaving] < target { 1.0 } else { -1.0 };

                rho.copy_from_slice(&self.binv[r_pos * n..(r_pos + 1) * n]);
                let rs = self.prob.r.as_slice();
                for j in 0..n {
                    let a = dot(&rs[j * n..(j + 1) * n], &rho);
                    alpha_row[j] = a;
                    alpha_row[n + j] = -a;
                    alpha_row[2 * n + j] = -rho[j];
                }

                // Harris two-pass ratio test.
                // slacks are fixed at zero when lambda = 0 and may never re-enter
                let fixed_slacks = self.prob.lambda == 0.0;
                let eligible = |j: usize, a: f64, s: Status| -> bool {
                    if a.abs() <= opts.pivot_tol || (fixed_slacks && j >= 2 * n) {
                        return false;
                    }
                    match s {
                        Status::Basic => false,
                        Status::Lower => dir * a < 0.0,
                        Status::Upper => dir * a > 0.0,
                    }
                };
                let mut bound = f64::INFINITY;
                for j in 0..3 * n {
                    let a = alpha_row[j];
                    if eligible(j, a, self.status[j]) {
                        let slack = self.d[j].abs() + 1e-12;
                        bound = bound.min(slack / a.abs());
                    }
                }
                if !bound.is_finite() {
                    return Err(Error::Infeasible {
                        column: col,
                        lambda: self.prob.lambda,
                    });
                }
                let mut entering = usize::MAX;
                let mut best_pivot = 0.0;
                for j in 0..3 * n {
                    let a = alpha_row[j];
                    if eligible(j, a, self.status[j])
                        && self.d[j].abs() / a.abs() <= bound
                        && a.abs() > best_pivot
                    {
                        best_pivot = a.abs();
                        entering = j;
                    }
                }
                debug_assert!(entering != usize::MAX);
                let q = entering;
                let apiv = alpha_row[q];

                // Entering column in the current basis.
                self.prob.column(q, &mut acol);
                for k in 0..n {
                    let row = &self.binv[k * n..(k + 1) * n];
                    alpha_q[k] = dot(row, &acol);
                }

                // Primal step.
                let step = (self.x[leaving] - target) / apiv;
                for (pos, &j) in self.basis.iter().enumerate() {
                    self.x[j] -= step * alpha_q[pos];
                }
                self.x[q] += step;
                self.x[leaving] = target;

                // Dual step.
                let theta = self.d[q] / apiv;
                for j in 0..3 * n {
                    if self.status[j] != Status::Basic {
                        self.d[j] -= theta * alpha_row[j];
                    }
                }
                self.d[q] = 0.0;
                self.d[leaving] = -theta;

                self.status[leaving] = if target == self.prob.lower(leaving) {
                    Status::Lower
                } else {
                    Status::Upper
                };
                self.status[q] = Status::Basic;
                self.basis[r_pos] = q;

                // Basis inverse update.
                let piv = alpha_q[r_pos];
                let (head, rest) = self.binv.split_at_mut(r_pos * n);
                let (prow, tail) = rest.split_at_mut(n);
                for v in prow.iter_mut() {
                    *v /= piv;
                }
                for (k, row) in head.chunks_exact_mut(n).enumerate() {
                    let f = alpha_q[k];
                    if f != 0.0 {
                        for (a, b) in row.iter_mut().zip(prow.iter()) {
                            *a -= f * b;
                        }
                    }
                }
                for (k, row) in tail.chunks_exact_mut(n).enumerate() {
                    let f = alpha_q[r_pos + 1 + k];
                    if f != 0.0 {
                        for (a, b) in row.iter_mut().zip(prow.iter()) {
                            *a -= f * b;
                        }
                    }
                }

                since_refactor += 1;
                if since_refactor >= REFACTOR_EVERY {
                    self.refactor(col)?;
                    since_refactor = 0;
                }
            }

            if since_refactor == 0 {
                return Ok(iterations);
            }
            // Clean values; pivot again if drift reopened a violation.
            self.refactor(col)?;
            if self.select_leaving(opts.primal_tol).is_none() {
                return Ok(iterations);
            }
        }
    }
}

/// Dot product with four independent accumulators so it vectorizes.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `||R beta - e_col||_inf`.
pub fn residual_inf(r: &DMatrix<f64>, beta: &[f64], col: usize) -> f64 {
    let n = r.nrows();
    (0..n)
        .map(|k| {
            let v: f64 = (0..n).map(|j| r[(k, j)] * beta[j]).sum();
            (v - if k == col { 1.0 } else { 0.0 }).abs()
        })
        .fold(0.0, f64::max)
}
