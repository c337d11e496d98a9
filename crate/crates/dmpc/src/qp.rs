//! Dense strictly convex QP solver:
//!
//! ```text
//!     minimize    1/2 x' H x + g' x
//!     subject to  a_i' x  = b_i   (first n_eq rows)
//!                 a_i' x <= b_i   (remaining rows)
//! ```
//!
//! Primary method is a dual active-set iteration started from the
//! unconstrained minimizer, adding the most violated row per step with
//! partial (constraint-dropping) steps; it detects primal infeasibility when
//! the dual step is unbounded. After `max_active_set_iters` it falls back to
//! Nesterov-accelerated projected gradient ascent on the dual. Instances here
//! are tiny (tens of variables), so factorizations are recomputed per step.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QpError {
    #[error("polytope infeasible (dual unbounded along row {row})")]
    Infeasible { row: usize },
    #[error("solver stalled at kkt residual {residual:.3e}")]
    MaxIterations { best: Box<QpSolution>, residual: f64 },
    #[error("cost Hessian is not positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: {what}")]
    DimensionMismatch { what: String },
}

#[derive(Debug, Clone, Copy)]
pub struct QpOptions {
    pub max_active_set_iters: usize,
    pub fallback_max_iters: usize,
    pub kkt_tol: f64,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self { max_active_set_iters: 500, fallback_max_iters: 500_000, kkt_tol: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// One multiplier per constraint row (zero for inactive rows).
    pub multipliers: DVector<f64>,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub fallback_used: bool,
}

/// Factorization cache for repeated solves that share `(H, A, b)` and vary
/// only the linear term, as the PDGD inner problems do.
#[derive(Debug, Clone)]
pub struct QpCache {
    h: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    a_mat: DMatrix<f64>,
    b_vec: DVector<f64>,
    n_eq: usize,
    /// H^{-1} a_i for every row, precomputed.
    hinv_at: DMatrix<f64>,
}

const FEAS_TOL: f64 = 1e-10;
const PIVOT_TOL: f64 = 1e-12;

impl QpCache {
    pub fn new(
        h: DMatrix<f64>,
        a_mat: DMatrix<f64>,
        b_vec: DVector<f64>,
        n_eq: usize,
    ) -> Result<Self, QpError> {
        let n = h.nrows();
        if a_mat.ncols() != n && a_mat.nrows() > 0 {
            return Err(QpError::DimensionMismatch {
                what: format!("constraint matrix has {} cols, expected {n}", a_mat.ncols()),
            });
        }
        if a_mat.nrows() != b_vec.len() {
            return Err(QpError::DimensionMismatch {
                what: format!("{} rows vs {} bounds", a_mat.nrows(), b_vec.len()),
            });
        }
        let chol = Cholesky::new(h.clone()).ok_or(QpError::NotPositiveDefinite)?;
        let hinv_at = chol.solve(&a_mat.transpose());
        Ok(Self { h, chol, a_mat, b_vec, n_eq, hinv_at })
    }

    pub fn n_rows(&self) -> usize {
        self.a_mat.nrows()
    }

    pub fn solve(&self, g: &DVector<f64>, opts: &QpOptions) -> Result<QpSolution, QpError> {
        let x0 = -self.chol.solve(g);
        if self.a_mat.nrows() == 0 {
            return Ok(QpSolution {
                x: x0,
                multipliers: DVector::zeros(0),
                kkt_residual: 0.0,
                iterations: 0,
                fallback_used: false,
            });
        }
        match self.active_set(g, x0, opts) {
            Ok(sol) => Ok(sol),
            Err(QpError::MaxIterations { .. }) => self.fallback(g, opts),
            Err(e) => Err(e),
        }
    }

    pub fn kkt_residual(&self, g: &DVector<f64>, x: &DVector<f64>, mu: &DVector<f64>) -> f64 {
        let stationarity = (&self.h * x + g + self.a_mat.transpose() * mu).norm();
        let slack = &self.a_mat * x - &self.b_vec;
        let mut comp = 0.0;
        let mut primal = 0.0;
        let mut dual = 0.0;
        for i in 0..self.a_mat.nrows() {
            if i < self.n_eq {
                primal += slack[i].abs();
            } else {
                comp += (mu[i] * slack[i]).abs();
                primal += slack[i].max(0.0);
                dual += (-mu[i]).max(0.0);
            }
        }
        stationarity + comp + primal + dual
    }

    fn active_set(
        &self,
        g: &DVector<f64>,
        mut x: DVector<f64>,
        opts: &QpOptions,
    ) -> Result<QpSolution, QpError> {
        let n_rows = self.a_mat.nrows();
        let mut working: Vec<usize> = Vec::new();
        // Orientation flips equality rows so the pending violation is >= 0.
        let mut orient: Vec<f64> = Vec::new();
        let mut mult: Vec<f64> = Vec::new();
        let mut steps = 0usize;

        let slack = |x: &DVector<f64>, i: usize| self.a_mat.row(i).transpose().dot(x) - self.b_vec[i];

        // Equality rows enter the working set first and never leave.
        for p in 0..self.n_eq {
            let s = slack(&x, p);
            let sigma = if s >= 0.0 { 1.0 } else { -1.0 };
            self.drive_in(g, p, sigma, &mut x, &mut working, &mut orient, &mut mult, &mut steps, opts)?;
        }

        loop {
            // most violated inequality row outside the working set
            let mut p_best = None;
            let mut viol = FEAS_TOL;
            for p in self.n_eq..n_rows {
                if working.contains(&p) {
                    continue;
                }
                let s = slack(&x, p);
                if s > viol {
                    viol = s;
                    p_best = Some(p);
                }
            }
            let Some(p) = p_best else {
                let mu = self.collect_multipliers(n_rows, &working, &orient, &mult);
                let residual = self.kkt_residual(g, &x, &mu);
                return Ok(QpSolution {
                    x,
                    multipliers: mu,
                    kkt_residual: residual,
                    iterations: steps,
                    fallback_used: false,
                });
            };
            if steps >= opts.max_active_set_iters {
                let mu = self.collect_multipliers(n_rows, &working, &orient, &mult);
                let residual = self.kkt_residual(g, &x, &mu);
                return Err(QpError::MaxIterations {
                    best: Box::new(QpSolution {
                        x,
                        multipliers: mu,
                        kkt_residual: residual,
                        iterations: steps,
                        fallback_used: false,
                    }),
                    residual,
                });
            }
            self.drive_in(g, p, 1.0, &mut x, &mut working, &mut orient, &mut mult, &mut steps, opts)?;
        }
    }

    /// Adds row `p` (with orientation `sigma`) to the working set, taking
    /// partial steps that drop inequality rows whose multipliers hit zero.
    #[allow(clippy::too_many_arguments)]
    fn drive_in(
        &self,
        g: &DVector<f64>,
        p: usize,
        sigma: f64,
        x: &mut DVector<f64>,
        working: &mut Vec<usize>,
        orient: &mut Vec<f64>,
        mult: &mut Vec<f64>,
        steps: &mut usize,
        opts: &QpOptions,
    ) -> Result<(), QpError> {
        let a_p = self.a_mat.row(p).transpose() * sigma;
        let hinv_ap = self.hinv_at.column(p).clone_owned() * sigma;
        let mut s_p = a_p.dot(x) - sigma * self.b_vec[p];
        let mut u_p = 0.0;

        loop {
            *steps += 1;
            if *steps > opts.max_active_set_iters + self.a_mat.nrows() + 8 {
                let mu = self.collect_multipliers(self.a_mat.nrows(), working, orient, mult);
                let residual = self.kkt_residual(g, x, &mu);
                return Err(QpError::MaxIterations {
                    best: Box::new(QpSolution {
                        x: x.clone(),
                        multipliers: mu,
                        kkt_residual: residual,
                        iterations: *steps,
                        fallback_used: false,
                    }),
                    residual,
                });
            }
            let k = working.len();
            // z: primal direction, r: rate of change of working multipliers
            let (z, r) = if k == 0 {
                (hinv_ap.clone(), DVector::zeros(0))
            } else {
                let mut n_hinv_ap = DVector::zeros(k);
                let mut s_mat = DMatrix::zeros(k, k);
                for (ri, &wi) in working.iter().enumerate() {
                    let row_i = self.a_mat.row(wi).transpose() * orient[ri];
                    n_hinv_ap[ri] = row_i.dot(&hinv_ap);
                    for (rj, &wj) in working.iter().enumerate() {
                        s_mat[(ri, rj)] = row_i.dot(&(self.hinv_at.column(wj) * orient[rj]));
                    }
                }
                match Cholesky::new(s_mat) {
                    Some(ch) => {
                        let r = ch.solve(&n_hinv_ap);
                        let mut z = hinv_ap.clone();
                        for (ri, &wi) in working.iter().enumerate() {
                            z -= self.hinv_at.column(wi) * (orient[ri] * r[ri]);
                        }
                        (z, r)
                    }
                    // dependent working set: no primal motion possible
                    None => (DVector::zeros(x.len()), DVector::zeros(k)),
                }
            };

            let az = a_p.dot(&z);
            let t2 = if az > PIVOT_TOL { Some(s_p / az) } else { None };
            let mut t1: Option<(f64, usize)> = None;
            for (ri, &wi) in working.iter().enumerate() {
                if wi < self.n_eq {
                    continue; // equality rows never leave
                }
                if r[ri] > PIVOT_TOL {
                    let cand = mult[ri] / r[ri];
                    if t1.map_or(true, |(t, _)| cand < t) {
                        t1 = Some((cand, ri));
                    }
                }
            }

            if s_p <= FEAS_TOL {
                // already on (or inside) the boundary: register the row when it
                // carries a multiplier or is an independent equality row
                if az > PIVOT_TOL && (p < self.n_eq || u_p > 0.0) {
                    working.push(p);
                    orient.push(sigma);
                    mult.push(u_p);
                }
                return Ok(());
            }

            match (t1, t2) {
                (None, None) => return Err(QpError::Infeasible { row: p }),
                (Some((t, ri)), None) => {
                    // partial step only
                    *x -= &z * t;
                    for (rj, m) in mult.iter_mut().enumerate() {
                        *m -= t * r[rj];
                    }
                    u_p += t;
                    s_p = a_p.dot(x) - sigma * self.b_vec[p];
                    working.remove(ri);
                    orient.remove(ri);
                    mult.remove(ri);
                }
                (t1_opt, Some(t_full)) => {
                    let take_partial = t1_opt.map_or(false, |(t, _)| t < t_full);
                    if take_partial {
                        let (t, ri) = t1_opt.unwrap();
                        *x -= &z * t;
                        for (rj, m) in mult.iter_mut().enumerate() {
                            *m -= t * r[rj];
                        }
                        u_p += t;
                        s_p = a_p.dot(x) - sigma * self.b_vec[p];
                        working.remove(ri);
                        orient.remove(ri);
                        mult.remove(ri);
                    } else {
                        *x -= &z * t_full;
                        for (rj, m) in mult.iter_mut().enumerate() {
                            *m -= t_full * r[rj];
                        }
                        u_p += t_full;
                        working.push(p);
                        orient.push(sigma);
                        mult.push(u_p);
                        return Ok(());
                    }
                }
            }
        }
    }

    fn collect_multipliers(
        &self,
        n_rows: usize,
        working: &[usize],
        orient: &[f64],
        mult: &[f64],
    ) -> DVector<f64> {
        let mut mu = DVector::zeros(n_rows);
        for (ri, &wi) in working.iter().enumerate() {
            mu[wi] = orient[ri] * mult[ri];
        }
        mu
    }

    /// Nesterov-accelerated projected gradient ascent on the dual.
    fn fallback(&self, g: &DVector<f64>, opts: &QpOptions) -> Result<QpSolution, QpError> {
        let n_rows = self.a_mat.nrows();
        let gram = &self.a_mat * &self.hinv_at;
        let lips = gram
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(0.0_f64, f64::max)
            .max(PIVOT_TOL);
        let step = 1.0 / lips;
        let project = |mu: &mut DVector<f64>| {
            for i in self.n_eq..n_rows {
                if mu[i] < 0.0 {
                    mu[i] = 0.0;
                }
            }
        };

        let x_of = |mu: &DVector<f64>| -self.chol.solve(&(g + self.a_mat.transpose() * mu));

        let mut mu = DVector::zeros(n_rows);
        let mut momentum = mu.clone();
        let mut theta = 1.0_f64;
        let mut best: Option<(f64, DVector<f64>, DVector<f64>)> = None;
        for k in 0..opts.fallback_max_iters {
            let grad = &self.a_mat * x_of(&momentum) - &self.b_vec;
            let mut mu_next = &momentum + &grad * step;
            project(&mut mu_next);
            let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
            momentum = &mu_next + (&mu_next - &mu) * ((theta - 1.0) / theta_next);
            mu = mu_next;
            theta = theta_next;

            if k % 32 == 0 || k + 1 == opts.fallback_max_iters {
                let x = x_of(&mu);
                let res = self.kkt_residual(g, &x, &mu);
                if best.as_ref().map_or(true, |(b, _, _)| res < *b) {
                    best = Some((res, x.clone(), mu.clone()));
                }
                if res <= opts.kkt_tol {
                    return Ok(QpSolution {
                        x,
                        multipliers: mu,
                        kkt_residual: res,
                        iterations: k + 1,
                        fallback_used: true,
                    });
                }
            }
        }
        let (residual, x, mu) = best.expect("fallback ran at least one iteration");
        Err(QpError::MaxIterations {
            best: Box::new(QpSolution {
                x,
                multipliers: mu,
                kkt_residual: residual,
                iterations: opts.fallback_max_iters,
                fallback_used: true,
            }),
            residual,
        })
    }
}

/// One-shot convenience wrapper around [`QpCache`].
pub fn solve_qp(
    h: DMatrix<f64>,
    g: &DVector<f64>,
    a_mat: DMatrix<f64>,
    b_vec: DVector<f64>,
    n_eq: usize,
    opts: &QpOptions,
) -> Result<QpSolution, QpError> {
    QpCache::new(h, a_mat, b_vec, n_eq)?.solve(g, opts)
}

/// Reference solver by brute-force enumeration of candidate active sets
/// (all subsets of rows up to size `n`). Exponential; only for cross-checking
/// the active-set solver on small instances in tests.
pub fn solve_by_enumeration(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    a_mat: &DMatrix<f64>,
    b_vec: &DVector<f64>,
) -> Option<DVector<f64>> {
    let n = h.nrows();
    let n_rows = a_mat.nrows();
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut subset: Vec<usize> = Vec::new();

    fn visit(
        start: usize,
        subset: &mut Vec<usize>,
        max_size: usize,
        n_rows: usize,
        check: &mut dyn FnMut(&[usize]),
    ) {
        check(subset);
        if subset.len() == max_size {
            return;
        }
        for i in start..n_rows {
            subset.push(i);
            visit(i + 1, subset, max_size, n_rows, check);
            subset.pop();
        }
    }

    let mut check = |active: &[usize]| {
        let k = active.len();
        // KKT system for the candidate active set: [H N'; N 0][x; u] = [-g; b_S]
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(h);
        for (ri, &row) in active.iter().enumerate() {
            for c in 0..n {
                kkt[(n + ri, c)] = a_mat[(row, c)];
                kkt[(c, n + ri)] = a_mat[(row, c)];
            }
        }
        let mut rhs = DVector::zeros(n + k);
        for c in 0..n {
            rhs[c] = -g[c];
        }
        for (ri, &row) in active.iter().enumerate() {
            rhs[n + ri] = b_vec[row];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { return };
        let x = sol.rows(0, n).clone_owned();
        let u = sol.rows(n, k).clone_owned();
        // multipliers nonnegative, all rows satisfied
        if u.iter().any(|&ui| ui < -1e-9) {
            return;
        }
        for r in 0..n_rows {
            if a_mat.row(r).transpose().dot(&x) - b_vec[r] > 1e-9 {
                return;
            }
        }
        let obj = 0.5 * x.dot(&(h * &x)) + g.dot(&x);
        if best.as_ref().map_or(true, |(b, _)| obj < *b) {
            best = Some((obj, x));
        }
    };
    visit(0, &mut subset, n.min(n_rows), n_rows, &mut check);
    best.map(|(_, x)| x)
}
