//! Centralized reference solutions used to validate the distributed
//! iteration: the stacked QP with the coupled constraint as an inequality,
//! and the saddle point of the consensus dynamics, obtained from the same
//! stacked QP with the coupled rows held at equality (the fixed point of the
//! unprojected primal-dual iteration forces them active because the gamma
//! initialization pins sum_i gamma_i = 0).

use nalgebra::{DMatrix, DVector};

use crate::local_solver::{LocalSubproblem, SolverError};
use crate::qp::{QpCache, QpError, QpOptions};

/// Saddle point of the Laplacian-consensus dual dynamics: the consensus
/// multiplier, per-agent stationary gamma, and the primal minimizers.
#[derive(Debug, Clone)]
pub struct SaddlePoint {
    pub lambda_star: DVector<f64>,
    pub gamma_star: Vec<DVector<f64>>,
    pub u_star: Vec<DVector<f64>>,
    /// Multipliers of the stacked local rows, per agent.
    pub local_multipliers: Vec<DVector<f64>>,
}

fn stack_problem(
    subs: &[LocalSubproblem],
    coupled_as_equality: bool,
) -> Result<(QpCache, DVector<f64>, Vec<usize>, usize), QpError> {
    let np = subs[0].np_dim();
    let n_total: usize = subs.iter().map(|s| s.n_inputs()).sum();
    let local_rows: usize = subs.iter().map(|s| s.polytope.n_rows()).sum();
    let n_rows = np + local_rows;

    let mut h = DMatrix::zeros(n_total, n_total);
    let mut g = DVector::zeros(n_total);
    let mut a_mat = DMatrix::zeros(n_rows, n_total);
    let mut b_vec = DVector::zeros(n_rows);

    // coupled rows first so they can be flagged as equalities
    let mut b_coupled = subs[0].b_eps.clone();
    let mut col = 0usize;
    for sub in subs {
        let nu = sub.n_inputs();
        h.view_mut((col, col), (nu, nu)).copy_from(&sub.h_cost);
        g.rows_mut(col, nu).copy_from(&sub.g_base);
        a_mat.view_mut((0, col), (np, nu)).copy_from(&sub.g_mat);
        b_coupled -= &sub.f_base;
        col += nu;
    }
    b_vec.rows_mut(0, np).copy_from(&b_coupled);

    let mut row = np;
    let mut col = 0usize;
    let mut offsets = Vec::with_capacity(subs.len());
    for sub in subs {
        let nu = sub.n_inputs();
        let k = sub.polytope.n_rows();
        a_mat.view_mut((row, col), (k, nu)).copy_from(&sub.polytope.e_mat);
        b_vec.rows_mut(row, k).copy_from(&sub.polytope.e_vec);
        offsets.push(row);
        row += k;
        col += nu;
    }

    let n_eq = if coupled_as_equality { np } else { 0 };
    Ok((QpCache::new(h, a_mat, b_vec, n_eq)?, g, offsets, np))
}

fn map_err(e: QpError) -> SolverError {
    match e {
        QpError::Infeasible { .. } => SolverError::InfeasiblePolytope { agent: usize::MAX },
        QpError::MaxIterations { residual, .. } => SolverError::MaxIterations { agent: usize::MAX, residual },
        other => SolverError::Qp(other),
    }
}

fn split_inputs(subs: &[LocalSubproblem], x: &DVector<f64>) -> Vec<DVector<f64>> {
    let mut out = Vec::with_capacity(subs.len());
    let mut col = 0;
    for sub in subs {
        out.push(x.rows(col, sub.n_inputs()).clone_owned());
        col += sub.n_inputs();
    }
    out
}

/// Solves the full problem with every agent's variables stacked and the
/// coupled tightened constraint as an inequality. Returns per-agent inputs.
pub fn centralized_qp(subs: &[LocalSubproblem]) -> Result<Vec<DVector<f64>>, SolverError> {
    let (cache, g, _, _) = stack_problem(subs, false).map_err(map_err)?;
    let sol = cache.solve(&g, &QpOptions::default()).map_err(map_err)?;
    Ok(split_inputs(subs, &sol.x))
}

/// As [`centralized_qp`] but also returns the coupled-row multipliers.
pub fn centralized_qp_with_multipliers(
    subs: &[LocalSubproblem],
) -> Result<(Vec<DVector<f64>>, DVector<f64>), SolverError> {
    let (cache, g, _, np) = stack_problem(subs, false).map_err(map_err)?;
    let sol = cache.solve(&g, &QpOptions::default()).map_err(map_err)?;
    Ok((split_inputs(subs, &sol.x), sol.multipliers.rows(0, np).clone_owned()))
}

/// Fixed point of the unprojected PDGD: coupled rows at equality. The row
/// multiplier is the consensus lambda; gamma_i* = f_i(u_i*) - b/l.
pub fn saddle_point(subs: &[LocalSubproblem]) -> Result<SaddlePoint, SolverError> {
    let (cache, g, offsets, np) = stack_problem(subs, true).map_err(map_err)?;
    let sol = cache.solve(&g, &QpOptions::default()).map_err(map_err)?;
    let u_star = split_inputs(subs, &sol.x);
    let lambda_star = sol.multipliers.rows(0, np).clone_owned();
    let gamma_star: Vec<DVector<f64>> = subs
        .iter()
        .zip(&u_star)
        .map(|(sub, u)| sub.local_residual(u))
        .collect();
    let local_multipliers = subs
        .iter()
        .zip(&offsets)
        .map(|(sub, &off)| sol.multipliers.rows(off, sub.polytope.n_rows()).clone_owned())
        .collect();
    Ok(SaddlePoint { lambda_star, gamma_star, u_star, local_multipliers })
}
