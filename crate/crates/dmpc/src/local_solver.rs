//! Each agent's inner problem: minimize the condensed quadratic MPC cost plus
//! the price term `lambda'(f_i(x, u) - b(eps)/l)` over the local polytope, and
//! evaluate the dual function value and gradient at a given multiplier.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::plant::{local_feasible_polytope, prediction_matrices, AgentPlant, CondensedCoupling, PlantError, Polytope};
use crate::qp::{QpCache, QpError, QpOptions};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("local polytope infeasible for agent {agent}")]
    InfeasiblePolytope { agent: usize },
    #[error("inner QP stalled for agent {agent} at kkt residual {residual:.3e}")]
    MaxIterations { agent: usize, residual: f64 },
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error("qp setup failed: {0}")]
    Qp(#[from] QpError),
}

/// Condensed inner problem for one agent at one MPC step. The Hessian is
/// constant, so its factorization and the polytope rows are cached.
#[derive(Debug, Clone)]
pub struct LocalSubproblem {
    pub agent: usize,
    /// Hessian of the condensed cost (2x the quadratic form).
    pub h_cost: DMatrix<f64>,
    /// Linear cost term from the measured state.
    pub g_base: DVector<f64>,
    /// State-only cost contribution, so J values are exact.
    pub const_term: f64,
    pub f_mat: DMatrix<f64>,
    pub g_mat: DMatrix<f64>,
    /// Shared tightened right-hand side b(eps).
    pub b_eps: DVector<f64>,
    pub l: usize,
    pub polytope: Polytope,
    /// Strong-convexity and smoothness constants of the condensed cost.
    pub m_j: f64,
    pub l_j: f64,
    /// F_i x(t), fixed during the PDGD run.
    pub f_base: DVector<f64>,
    pub horizon: usize,
    /// Coupled rows per stage (p).
    pub p_rows: usize,
    pub eps: f64,
    cache: QpCache,
    opts: QpOptions,
}

impl LocalSubproblem {
    /// Compiles the condensed cost `J(u) = 1/2 u'Hu + g'u + const` and the
    /// feasible polytope for agent `agent` at state `x0`. When
    /// `use_terminal_set` is false the terminal facets are left out even if
    /// the plant carries finite levels.
    pub fn build(
        plant: &AgentPlant,
        condensed: &CondensedCoupling,
        agent: usize,
        x0: &DVector<f64>,
        use_terminal_set: bool,
    ) -> Result<Self, SolverError> {
        let n = plant.state_dim();
        if x0.len() != n {
            return Err(PlantError::DimensionMismatch {
                what: format!("x0 has length {}, expected {n}", x0.len()),
            }
            .into());
        }
        let n_horizon = condensed.horizon;
        let (a_stack, g_stack) = prediction_matrices(plant, n_horizon);

        // Q~ = blockdiag(Q, ..., Q, P) over x(1..N); the x(0) stage term is constant
        let mut q_stack = DMatrix::zeros(n_horizon * n, n_horizon * n);
        for s in 0..n_horizon {
            let blk = if s + 1 == n_horizon { &plant.p } else { &plant.q };
            q_stack.view_mut((s * n, s * n), (n, n)).copy_from(blk);
        }
        let m = plant.input_dim();
        let mut r_stack = DMatrix::zeros(n_horizon * m, n_horizon * m);
        for s in 0..n_horizon {
            r_stack.view_mut((s * m, s * m), (m, m)).copy_from(&plant.r);
        }

        let qg = &q_stack * &g_stack;
        let h_cost = (g_stack.transpose() * &qg + &r_stack) * 2.0;
        let ax = &a_stack * x0;
        let g_base = (qg.transpose() * &ax) * 2.0;
        let const_term = x0.dot(&(&plant.q * x0)) + ax.dot(&(&q_stack * &ax));

        let eigs = h_cost.clone().symmetric_eigen().eigenvalues;
        let m_j = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
        let l_j = eigs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

        let polytope = if use_terminal_set {
            local_feasible_polytope(plant, x0, n_horizon)
        } else {
            let mut trimmed = plant.clone();
            trimmed.eta = f64::INFINITY;
            trimmed.eta_f = f64::INFINITY;
            local_feasible_polytope(&trimmed, x0, n_horizon)
        };

        let cache = QpCache::new(h_cost.clone(), polytope.e_mat.clone(), polytope.e_vec.clone(), 0)?;
        let p_rows = if n_horizon > 0 { condensed.b_eps.len() / n_horizon } else { 0 };
        Ok(Self {
            agent,
            h_cost,
            g_base,
            const_term,
            f_mat: condensed.f_mats[agent].clone(),
            g_mat: condensed.g_mats[agent].clone(),
            b_eps: condensed.b_eps.clone(),
            l: condensed.f_mats.len(),
            polytope,
            m_j,
            l_j,
            f_base: &condensed.f_mats[agent] * x0,
            horizon: n_horizon,
            p_rows,
            eps: condensed.eps,
            cache,
            opts: QpOptions::default(),
        })
    }

    /// Condensed MPC cost J(u) including the state-only constant.
    pub fn cost(&self, u: &DVector<f64>) -> f64 {
        0.5 * u.dot(&(&self.h_cost * u)) + self.g_base.dot(u) + self.const_term
    }

    /// Coupling value f_i(x, u) = F_i x + G_i u.
    pub fn coupling_value(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.f_base + &self.g_mat * u
    }

    /// Solves `argmin J(u) + lambda'(f_i(x, u) - b/l)` over the polytope.
    /// Returns the minimizer and the achieved KKT residual.
    pub fn solve_local(&self, lambda: &DVector<f64>) -> Result<(DVector<f64>, f64), SolverError> {
        let g = &self.g_base + self.g_mat.transpose() * lambda;
        match self.cache.solve(&g, &self.opts) {
            Ok(sol) => Ok((sol.x, sol.kkt_residual)),
            Err(QpError::Infeasible { .. }) => Err(SolverError::InfeasiblePolytope { agent: self.agent }),
            Err(QpError::MaxIterations { best, residual }) => {
                let _ = best;
                Err(SolverError::MaxIterations { agent: self.agent, residual })
            }
            Err(e) => Err(SolverError::Qp(e)),
        }
    }

    /// Dual value Psi_i(lambda) and gradient via Danskin:
    /// grad = -(f_i(x, u(lambda)) - b/l).
    pub fn dual_value_and_gradient(&self, lambda: &DVector<f64>) -> Result<(f64, DVector<f64>), SolverError> {
        let (u, _) = self.solve_local(lambda)?;
        let resid = self.coupling_value(&u) - &self.b_eps / (self.l as f64);
        let psi = -self.cost(&u) - lambda.dot(&resid);
        Ok((psi, -resid))
    }

    /// Residual f_i(x, u) - b/l used by the PDGD updates.
    pub fn local_residual(&self, u: &DVector<f64>) -> DVector<f64> {
        self.coupling_value(u) - &self.b_eps / (self.l as f64)
    }

    pub fn n_inputs(&self) -> usize {
        self.h_cost.nrows()
    }

    pub fn np_dim(&self) -> usize {
        self.b_eps.len()
    }
}
