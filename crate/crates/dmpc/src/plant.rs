//! Per-agent LTI plant data: dynamics, local boxes, MPC cost weights,
//! terminal ingredients, and condensation of the coupled constraint over the
//! horizon into `f_i(x, u) = F_i x + G_i u <= b(eps)`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

const PSD_TOL: f64 = 1e-10;
const DECREASE_TOL: f64 = 1e-8;

/// Halfspaces used to outer-approximate the terminal ellipsoid.
pub const TERMINAL_FACETS: usize = 16;

#[derive(Debug, Error)]
pub enum PlantError {
    #[error("eps = {eps} outside (0, 1/(N*l)) = (0, {max})")]
    EpsOutOfRange { eps: f64, max: f64 },
    #[error("dimension mismatch: {what}")]
    DimensionMismatch { what: String },
    #[error("agent {agent}: G_i'G_i min eigenvalue {min_eig:.3e} <= 1e-10, coupling map is rank deficient")]
    RankDeficient { agent: usize, min_eig: f64 },
    #[error("terminal level eta = {eta} is not positive")]
    DegenerateTerminal { eta: f64 },
    #[error("{what} is not positive (semi)definite: min eigenvalue {min_eig:.3e}")]
    NotPositiveDefinite { what: String, min_eig: f64 },
    #[error("terminal decrease violated: max eigenvalue of A_K'PA_K - P + Q + K'RK is {max_eig:.3e}")]
    TerminalDecreaseViolated { max_eig: f64 },
}

/// One subsystem: dynamics x+ = Ax + Bu, local boxes, stage/terminal cost and
/// terminal feedback data. Immutable once built.
#[derive(Debug, Clone)]
pub struct AgentPlant {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub state_lo: DVector<f64>,
    pub state_hi: DVector<f64>,
    pub input_lo: DVector<f64>,
    pub input_hi: DVector<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub k_gain: DMatrix<f64>,
    /// Terminal-region level; INFINITY until set via [`AgentPlant::with_terminal_levels`].
    pub eta: f64,
    /// Inner terminal level eta_f < eta.
    pub eta_f: f64,
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

fn max_eig(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

impl AgentPlant {
    /// Validates cost definiteness and the terminal decrease condition
    /// A_K'PA_K - P + Q + K'RK <= tol*I with A_K = A + BK.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        state_lo: DVector<f64>,
        state_hi: DVector<f64>,
        input_lo: DVector<f64>,
        input_hi: DVector<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        p: DMatrix<f64>,
        k_gain: DMatrix<f64>,
    ) -> Result<Self, PlantError> {
        let n = a.nrows();
        let m = b.ncols();
        if a.ncols() != n || b.nrows() != n {
            return Err(PlantError::DimensionMismatch {
                what: format!("A is {}x{}, B is {}x{}", a.nrows(), a.ncols(), b.nrows(), b.ncols()),
            });
        }
        for (name, v, len) in [
            ("state_lo", &state_lo, n),
            ("state_hi", &state_hi, n),
            ("input_lo", &input_lo, m),
            ("input_hi", &input_hi, m),
        ] {
            if v.len() != len {
                return Err(PlantError::DimensionMismatch {
                    what: format!("{name} has length {}, expected {len}", v.len()),
                });
            }
        }
        if q.nrows() != n || q.ncols() != n || p.nrows() != n || p.ncols() != n {
            return Err(PlantError::DimensionMismatch { what: "Q/P must be n x n".into() });
        }
        if r.nrows() != m || r.ncols() != m || k_gain.nrows() != m || k_gain.ncols() != n {
            return Err(PlantError::DimensionMismatch { what: "R must be m x m, K must be m x n".into() });
        }

        let q_min = min_eig(&q);
        if q_min < -PSD_TOL {
            return Err(PlantError::NotPositiveDefinite { what: "Q".into(), min_eig: q_min });
        }
        let r_min = min_eig(&r);
        if r_min <= PSD_TOL {
            return Err(PlantError::NotPositiveDefinite { what: "R".into(), min_eig: r_min });
        }
        let p_min = min_eig(&p);
        if p_min <= PSD_TOL {
            return Err(PlantError::NotPositiveDefinite { what: "P".into(), min_eig: p_min });
        }
        let a_k = &a + &b * &k_gain;
        let decrease = a_k.transpose() * &p * &a_k - &p + &q + k_gain.transpose() * &r * &k_gain;
        let d_max = max_eig(&decrease);
        if d_max > DECREASE_TOL {
            return Err(PlantError::TerminalDecreaseViolated { max_eig: d_max });
        }

        Ok(Self {
            a,
            b,
            state_lo,
            state_hi,
            input_lo,
            input_hi,
            q,
            r,
            p,
            k_gain,
            eta: f64::INFINITY,
            eta_f: f64::INFINITY,
        })
    }

    pub fn with_terminal_levels(mut self, eta: f64, eta_f: f64) -> Result<Self, PlantError> {
        if !(eta > 0.0) {
            return Err(PlantError::DegenerateTerminal { eta });
        }
        if !(eta_f > 0.0 && eta_f < eta) {
            return Err(PlantError::DegenerateTerminal { eta: eta_f });
        }
        self.eta = eta;
        self.eta_f = eta_f;
        Ok(self)
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn a_closed(&self) -> DMatrix<f64> {
        &self.a + &self.b * &self.k_gain
    }

    /// Terminal cost V_f(x) = x'Px.
    pub fn terminal_cost(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.p * x))
    }

    /// Stage cost F(x, u) = x'Qx + u'Ru.
    pub fn stage_cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        x.dot(&(&self.q * x)) + u.dot(&(&self.r * u))
    }
}

/// The globally coupled constraint sum_i (Phi_x x_i + Phi_u u_i) <= 1_p.
#[derive(Debug, Clone)]
pub struct CoupledConstraint {
    pub phi_x: Vec<DMatrix<f64>>,
    pub phi_u: Vec<DMatrix<f64>>,
    pub p: usize,
    pub rhs: DVector<f64>,
}

impl CoupledConstraint {
    pub fn new(phi_x: Vec<DMatrix<f64>>, phi_u: Vec<DMatrix<f64>>) -> Result<Self, PlantError> {
        if phi_x.len() != phi_u.len() {
            return Err(PlantError::DimensionMismatch {
                what: format!("{} Phi_x blocks vs {} Phi_u blocks", phi_x.len(), phi_u.len()),
            });
        }
        let p = phi_x.first().map_or(0, |m| m.nrows());
        for (i, (px, pu)) in phi_x.iter().zip(&phi_u).enumerate() {
            if px.nrows() != p || pu.nrows() != p {
                return Err(PlantError::DimensionMismatch {
                    what: format!("agent {i}: Phi blocks must all have {p} rows"),
                });
            }
        }
        Ok(Self { phi_x, phi_u, p, rhs: DVector::from_element(p, 1.0) })
    }
}

/// Horizon-condensed coupling: per-agent (F_i, G_i) and the shared tightened
/// right-hand side b(eps), plus the eigenvalue bounds of G_i'G_i.
#[derive(Debug, Clone)]
pub struct CondensedCoupling {
    pub f_mats: Vec<DMatrix<f64>>,
    pub g_mats: Vec<DMatrix<f64>>,
    pub b_eps: DVector<f64>,
    pub eps: f64,
    pub horizon: usize,
    pub zeta_lo: f64,
    pub zeta_hi: f64,
    /// Per-agent min eigenvalue of G_i'G_i, kept so rank failures name the agent.
    pub zeta_lo_per_agent: Vec<f64>,
}

impl CondensedCoupling {
    /// The step-size/certificate machinery needs G_i'G_i uniformly positive
    /// definite; condensation itself stays valid without it, so the check is
    /// separate and runs when a full problem is assembled.
    pub fn check_rank(&self) -> Result<(), PlantError> {
        for (agent, &lo) in self.zeta_lo_per_agent.iter().enumerate() {
            if lo <= PSD_TOL {
                return Err(PlantError::RankDeficient { agent, min_eig: lo });
            }
        }
        Ok(())
    }
}

/// Stacked prediction maps over the horizon: `x_stack = a_stack x0 + g_stack u`
/// with `x_stack = (x(1), ..., x(N))`.
pub fn prediction_matrices(plant: &AgentPlant, n_horizon: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = plant.state_dim();
    let m = plant.input_dim();
    let mut a_stack = DMatrix::zeros(n_horizon * n, n);
    let mut g_stack = DMatrix::zeros(n_horizon * n, n_horizon * m);
    let mut a_pow = DMatrix::identity(n, n);
    for s in 0..n_horizon {
        // block s holds x(s+1) = A^{s+1} x0 + sum_j A^{s-j} B u(j)
        if s > 0 {
            for j in 0..s {
                let src = g_stack.view((((s - 1) * n), j * m), (n, m)).clone_owned();
                g_stack.view_mut((s * n, j * m), (n, m)).copy_from(&(&plant.a * src));
            }
        }
        g_stack.view_mut((s * n, s * m), (n, m)).copy_from(&plant.b);
        a_pow = &plant.a * a_pow;
        a_stack.view_mut((s * n, 0), (n, n)).copy_from(&a_pow);
    }
    (a_stack, g_stack)
}

/// Builds b(eps) with block s equal to (1 - eps*l*(s+1)) * 1_p.
pub fn tightened_rhs(eps: f64, l: usize, p: usize, n_horizon: usize) -> DVector<f64> {
    let mut b = DVector::zeros(n_horizon * p);
    for s in 0..n_horizon {
        let v = 1.0 - eps * (l as f64) * ((s + 1) as f64);
        for r in 0..p {
            b[s * p + r] = v;
        }
    }
    b
}

/// Condenses the stagewise coupled constraint into per-agent (F_i, G_i) and
/// the shared b(eps). Block s of F_i x + G_i u equals
/// Phi_x x(s|t) + Phi_u u(s|t) under the dynamics rollout.
pub fn condense_coupling(
    plants: &[AgentPlant],
    coupled: &CoupledConstraint,
    n_horizon: usize,
    eps: f64,
) -> Result<CondensedCoupling, PlantError> {
    let l = plants.len();
    if coupled.phi_x.len() != l {
        return Err(PlantError::DimensionMismatch {
            what: format!("{} coupling blocks for {l} agents", coupled.phi_x.len()),
        });
    }
    let eps_max = 1.0 / ((n_horizon * l) as f64);
    if !(eps > 0.0 && eps < eps_max) {
        return Err(PlantError::EpsOutOfRange { eps, max: eps_max });
    }
    let p = coupled.p;
    let mut f_mats = Vec::with_capacity(l);
    let mut g_mats = Vec::with_capacity(l);
    let mut zeta_lo = f64::INFINITY;
    let mut zeta_hi = f64::NEG_INFINITY;
    let mut zeta_lo_per_agent = Vec::with_capacity(l);

    for (i, plant) in plants.iter().enumerate() {
        let n = plant.state_dim();
        let m = plant.input_dim();
        let phi_x = &coupled.phi_x[i];
        let phi_u = &coupled.phi_u[i];
        if phi_x.ncols() != n || phi_u.ncols() != m {
            return Err(PlantError::DimensionMismatch {
                what: format!("agent {i}: Phi_x is p x {}, Phi_u is p x {}", phi_x.ncols(), phi_u.ncols()),
            });
        }

        let mut f_i = DMatrix::zeros(n_horizon * p, n);
        let mut g_i = DMatrix::zeros(n_horizon * p, n_horizon * m);
        let mut a_pow = DMatrix::identity(n, n);
        for s in 0..n_horizon {
            // row block s: Phi_x A^s x0 + sum_{j<s} Phi_x A^{s-1-j} B u(j) + Phi_u u(s)
            f_i.view_mut((s * p, 0), (p, n)).copy_from(&(phi_x * &a_pow));
            g_i.view_mut((s * p, s * m), (p, m)).copy_from(phi_u);
            let mut a_jpow = DMatrix::identity(n, n);
            for j in (0..s).rev() {
                // a_jpow = A^{s-1-j}
                g_i.view_mut((s * p, j * m), (p, m)).copy_from(&(phi_x * &a_jpow * &plant.b));
                a_jpow = &plant.a * a_jpow;
            }
            a_pow = &plant.a * a_pow;
        }

        let gram = g_i.transpose() * &g_i;
        let lo = min_eig(&gram);
        let hi = max_eig(&gram);
        zeta_lo = zeta_lo.min(lo);
        zeta_hi = zeta_hi.max(hi);
        zeta_lo_per_agent.push(lo);
        f_mats.push(f_i);
        g_mats.push(g_i);
    }

    Ok(CondensedCoupling {
        f_mats,
        g_mats,
        b_eps: tightened_rhs(eps, l, p, n_horizon),
        eps,
        horizon: n_horizon,
        zeta_lo,
        zeta_hi,
        zeta_lo_per_agent,
    })
}

/// Rolls the dynamics forward: returns (x(0), ..., x(N)) stacked.
pub fn predict(plant: &AgentPlant, x0: &DVector<f64>, useq: &DVector<f64>) -> Result<DVector<f64>, PlantError> {
    let n = plant.state_dim();
    let m = plant.input_dim();
    if x0.len() != n {
        return Err(PlantError::DimensionMismatch {
            what: format!("x0 has length {}, expected {n}", x0.len()),
        });
    }
    if useq.len() % m != 0 {
        return Err(PlantError::DimensionMismatch {
            what: format!("input sequence length {} is not a multiple of m = {m}", useq.len()),
        });
    }
    let n_horizon = useq.len() / m;
    let mut traj = DVector::zeros((n_horizon + 1) * n);
    traj.rows_mut(0, n).copy_from(x0);
    let mut x = x0.clone();
    for s in 0..n_horizon {
        let u = useq.rows(s * m, m);
        x = &plant.a * &x + &plant.b * u.clone_owned();
        traj.rows_mut((s + 1) * n, n).copy_from(&x);
    }
    Ok(traj)
}

/// Halfspace set `{u : e_mat u <= e_vec}`.
#[derive(Debug, Clone)]
pub struct Polytope {
    pub e_mat: DMatrix<f64>,
    pub e_vec: DVector<f64>,
}

impl Polytope {
    pub fn n_rows(&self) -> usize {
        self.e_mat.nrows()
    }

    /// Largest violation of `e_mat u <= e_vec` (negative when interior).
    pub fn max_violation(&self, u: &DVector<f64>) -> f64 {
        if self.n_rows() == 0 {
            return f64::NEG_INFINITY;
        }
        (&self.e_mat * u - &self.e_vec).max()
    }
}

/// Unit directions used for the terminal ellipsoid facets. Evenly spaced
/// angles in 2-D, axis directions in 1-D, seeded Gaussian samples otherwise.
pub fn facet_directions(n: usize, count: usize) -> Vec<DVector<f64>> {
    match n {
        0 => Vec::new(),
        1 => vec![DVector::from_row_slice(&[1.0]), DVector::from_row_slice(&[-1.0])],
        2 => (0..count)
            .map(|j| {
                let th = 2.0 * std::f64::consts::PI * (j as f64) / (count as f64);
                DVector::from_row_slice(&[th.cos(), th.sin()])
            })
            .collect(),
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(0x7e55);
            (0..count)
                .map(|_| {
                    let mut v = DVector::from_fn(n, |_, _| {
                        // Box-Muller pair, first component only
                        let u1: f64 = rng.gen_range(1e-12..1.0);
                        let u2: f64 = rng.gen_range(0.0..1.0);
                        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                    });
                    let norm = v.norm();
                    v /= norm.max(1e-12);
                    v
                })
                .collect()
        }
    }
}

/// Stacks the local feasible set of input sequences from `x0`:
/// input box rows for s = 0..N-1, state box rows for predicted x(1..N-1),
/// and (when the plant carries finite terminal levels) tangent halfspaces of
/// the terminal ellipsoid V_f(x(N)) <= eta_f. Infinite bounds produce no rows.
pub fn local_feasible_polytope(plant: &AgentPlant, x0: &DVector<f64>, n_horizon: usize) -> Polytope {
    let n = plant.state_dim();
    let m = plant.input_dim();
    let (a_stack, g_stack) = prediction_matrices(plant, n_horizon);

    let mut rows: Vec<DVector<f64>> = Vec::new();
    let mut bounds: Vec<f64> = Vec::new();
    let nu = n_horizon * m;

    // input boxes
    for s in 0..n_horizon {
        for k in 0..m {
            if plant.input_hi[k].is_finite() {
                let mut row = DVector::zeros(nu);
                row[s * m + k] = 1.0;
                rows.push(row);
                bounds.push(plant.input_hi[k]);
            }
        }
        for k in 0..m {
            if plant.input_lo[k].is_finite() {
                let mut row = DVector::zeros(nu);
                row[s * m + k] = -1.0;
                rows.push(row);
                bounds.push(-plant.input_lo[k]);
            }
        }
    }

    // state boxes for x(1..N-1); block s-1 of the stacked prediction is x(s)
    for s in 1..n_horizon {
        let block = (s - 1) * n;
        let free = (&a_stack.rows(block, n) * x0).clone_owned();
        for k in 0..n {
            if plant.state_hi[k].is_finite() {
                rows.push(g_stack.row(block + k).transpose());
                bounds.push(plant.state_hi[k] - free[k]);
            }
        }
        for k in 0..n {
            if plant.state_lo[k].is_finite() {
                rows.push(-g_stack.row(block + k).transpose());
                bounds.push(free[k] - plant.state_lo[k]);
            }
        }
    }

    // terminal ellipsoid outer polytope: v'x(N) <= sqrt(eta_f * v'P^{-1}v)
    if plant.eta_f.is_finite() && n_horizon >= 1 {
        let p_inv = plant
            .p
            .clone()
            .cholesky()
            .expect("P validated positive definite")
            .inverse();
        let block = (n_horizon - 1) * n;
        let free = (&a_stack.rows(block, n) * x0).clone_owned();
        for v in facet_directions(n, TERMINAL_FACETS) {
            let support = (plant.eta_f * v.dot(&(&p_inv * &v))).sqrt();
            let row = (v.transpose() * g_stack.rows(block, n)).transpose();
            rows.push(row);
            bounds.push(support - v.dot(&free));
        }
    }

    let n_rows = rows.len();
    let mut e_mat = DMatrix::zeros(n_rows, nu);
    for (i, r) in rows.iter().enumerate() {
        e_mat.row_mut(i).copy_from(&r.transpose());
    }
    Polytope { e_mat, e_vec: DVector::from_vec(bounds) }
}

/// Largest eta such that every x with x'Px <= eta satisfies Kx in the input
/// box, x in the state box, and the per-agent coupled share
/// (Phi_x + Phi_u K) x <= (1 - eps*N*l)/l per row. Returns (eta, 0.9*eta).
pub fn terminal_levels(
    plant: &AgentPlant,
    coupled: &CoupledConstraint,
    agent_idx: usize,
    eps: f64,
    n_horizon: usize,
    l: usize,
) -> Result<(f64, f64), PlantError> {
    let n = plant.state_dim();
    let p_inv = plant
        .p
        .clone()
        .cholesky()
        .ok_or(PlantError::NotPositiveDefinite { what: "P".into(), min_eig: 0.0 })?
        .inverse();

    // each halfspace c'x <= d caps eta at d^2 / (c'P^{-1}c)
    let mut cap = f64::INFINITY;
    let mut add_row = |c: DVector<f64>, d: f64| -> Result<(), PlantError> {
        if d <= 0.0 {
            return Err(PlantError::DegenerateTerminal { eta: d });
        }
        let quad = c.dot(&(&p_inv * &c));
        if quad > 0.0 {
            cap = cap.min(d * d / quad);
        }
        Ok(())
    };

    for k in 0..plant.k_gain.nrows() {
        let kr = plant.k_gain.row(k).transpose();
        if plant.input_hi[k].is_finite() {
            add_row(kr.clone(), plant.input_hi[k])?;
        }
        if plant.input_lo[k].is_finite() {
            add_row(-kr, -plant.input_lo[k])?;
        }
    }
    for k in 0..n {
        let mut e = DVector::zeros(n);
        e[k] = 1.0;
        if plant.state_hi[k].is_finite() {
            add_row(e.clone(), plant.state_hi[k])?;
        }
        if plant.state_lo[k].is_finite() {
            add_row(-e, -plant.state_lo[k])?;
        }
    }
    if coupled.p > 0 {
        let share = (1.0 - eps * (n_horizon as f64) * (l as f64)) / (l as f64);
        let phi_k = &coupled.phi_x[agent_idx] + &coupled.phi_u[agent_idx] * &plant.k_gain;
        for r in 0..coupled.p {
            add_row(phi_k.row(r).transpose(), share)?;
        }
    }

    if !(cap > 0.0) || !cap.is_finite() {
        return Err(PlantError::DegenerateTerminal { eta: cap });
    }
    Ok((cap, 0.9 * cap))
}
