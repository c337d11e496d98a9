//! The distributed primal-dual gradient iteration over the communication
//! graph: per-agent multiplier copies descend the local dual, the consensus
//! variables integrate the Laplacian disagreement, and the loop stops at the
//! certified iteration bound or as soon as the distributed residual test
//! passes. Synchronous rounds: every update reads iteration-k snapshots.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::contraction::riemannian_energy;
use crate::graph::CommGraph;
use crate::local_solver::{LocalSubproblem, SolverError};
use crate::oracle::SaddlePoint;

#[derive(Debug, Error)]
pub enum PdgError {
    #[error("step-size denominator nonpositive for degree {degree}")]
    DenominatorNonpositive { degree: f64 },
    #[error("agent {agent} has degree zero; consensus cannot run")]
    IsolatedAgent { agent: usize },
    #[error("initial residual below 1e-14; already eps-feasible with zero iterations")]
    ZeroInitialResidual,
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Step sizes, rate, and stopping data for the iteration. Uniform (alpha,
/// beta) across agents keeps sum(gamma) conserved; per-agent degrees only
/// enter through the bounds and the rate.
#[derive(Debug, Clone)]
pub struct PdgParams {
    pub alpha: f64,
    pub beta: f64,
    pub rho: f64,
    pub tau: f64,
    pub k_bar: usize,
    pub project_lambda: bool,
}

/// Iteration state: per-agent multiplier copies, consensus variables, and
/// the inner minimizers at the current multipliers.
#[derive(Debug, Clone)]
pub struct PdgState {
    pub lambda: Vec<DVector<f64>>,
    pub gamma: Vec<DVector<f64>>,
    pub u_tilde: Vec<DVector<f64>>,
    pub iter: usize,
}

/// Picks uniform step sizes satisfying the contraction bounds for every
/// agent degree, with a 0.99 safety factor, and the resulting rate
/// tau = sqrt(1 - rho*alpha*beta*min_i d_i).
///
/// The beta cap uses sigma_lo: the energy-decrease certificate needs
/// beta*d <= sigma_lo/2 (the sigma_hi form printed alongside the rate
/// condition does not certify; see check_stepsizes for both bounds).
pub fn select_stepsizes(
    sigma_lo: f64,
    sigma_hi: f64,
    degrees: &[f64],
    rho: f64,
) -> Result<PdgParams, PdgError> {
    assert!(sigma_lo > 0.0 && sigma_hi >= sigma_lo, "need 0 < sigma_lo <= sigma_hi");
    assert!(rho > 0.0 && rho < 1.0, "need rho in (0, 1)");
    for (agent, &d) in degrees.iter().enumerate() {
        if d <= 0.0 {
            return Err(PdgError::IsolatedAgent { agent });
        }
    }
    let d_min = degrees.iter().cloned().fold(f64::INFINITY, f64::min);
    let d_max = degrees.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    let beta = 0.99 * degrees.iter().map(|&d| sigma_lo / (2.0 * d)).fold(f64::INFINITY, f64::min);
    let mut alpha = f64::INFINITY;
    for &d in degrees {
        let den = 2.0 * sigma_hi * sigma_hi - (3.0 + rho) * sigma_lo * beta * d;
        if den <= 0.0 {
            return Err(PdgError::DenominatorNonpositive { degree: d });
        }
        alpha = alpha.min(0.99 * (1.0 - rho) * sigma_lo / den);
    }
    let tau = (1.0 - rho * alpha * beta * d_min).sqrt();
    debug_assert!(rho < 1.0 / (alpha * beta * d_max));
    debug_assert!(tau > 0.0 && tau < 1.0);
    Ok(PdgParams { alpha, beta, rho, tau, k_bar: 0, project_lambda: false })
}

/// Mean-centers the local residuals so the consensus variables start with
/// sum_i gamma_i = 0 exactly.
pub fn center_residuals(residuals: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let l = residuals.len();
    let dim = residuals[0].len();
    let mut mean = DVector::zeros(dim);
    for r in residuals {
        mean += r;
    }
    mean /= l as f64;
    residuals.iter().map(|r| r - &mean).collect()
}

/// Sets lambda to the given warm start (zeros by default), solves the inner
/// problems, and centers gamma on the resulting residuals.
pub fn initialize(
    subs: &[LocalSubproblem],
    lambda0: Option<Vec<DVector<f64>>>,
) -> Result<PdgState, PdgError> {
    let np = subs[0].np_dim();
    let lambda = lambda0.unwrap_or_else(|| vec![DVector::zeros(np); subs.len()]);
    let mut u_tilde = Vec::with_capacity(subs.len());
    let mut residuals = Vec::with_capacity(subs.len());
    for (sub, lam) in subs.iter().zip(&lambda) {
        let (u, _) = sub.solve_local(lam)?;
        residuals.push(sub.local_residual(&u));
        u_tilde.push(u);
    }
    let gamma = center_residuals(&residuals);
    Ok(PdgState { lambda, gamma, u_tilde, iter: 0 })
}

/// One synchronous round: all agents read iteration-k snapshots of their
/// neighbors' lambda, update (lambda, gamma), then re-solve the inner
/// problems at the new lambda.
pub fn pdg_iterate(
    state: &PdgState,
    params: &PdgParams,
    graph: &CommGraph,
    subs: &[LocalSubproblem],
) -> Result<PdgState, PdgError> {
    let l = subs.len();
    let mut lambda_next = Vec::with_capacity(l);
    let mut gamma_next = Vec::with_capacity(l);
    for i in 0..l {
        // gradient of the local dual at the snapshot multiplier
        let grad = -subs[i].local_residual(&state.u_tilde[i]);
        let mut lam = &state.lambda[i] - (&grad + &state.gamma[i]) * params.alpha;
        if params.project_lambda {
            lam.apply(|v| *v = v.max(0.0));
        }
        lambda_next.push(lam);

        let mut consensus = &state.lambda[i] * graph.degrees[i];
        for j in 0..l {
            let w = graph.adjacency[(i, j)];
            if w > 0.0 {
                consensus -= &state.lambda[j] * w;
            }
        }
        gamma_next.push(&state.gamma[i] + consensus * params.beta);
    }
    let mut u_next = Vec::with_capacity(l);
    for (sub, lam) in subs.iter().zip(&lambda_next) {
        let (u, _) = sub.solve_local(lam)?;
        u_next.push(u);
    }
    Ok(PdgState { lambda: lambda_next, gamma: gamma_next, u_tilde: u_next, iter: state.iter + 1 })
}

/// Iteration bound k_bar = ceil(log(eps*p*N / Gamma0) / log tau), clamped to
/// at least 1. Errs with ZeroInitialResidual when Gamma0 <= 1e-14 (already
/// feasible; callers run zero iterations).
pub fn stopping_iteration(
    eps: f64,
    p: usize,
    n_horizon: usize,
    gamma0_norm_max: f64,
    tau: f64,
) -> Result<usize, PdgError> {
    assert!(tau > 0.0 && tau < 1.0, "need tau in (0, 1)");
    if gamma0_norm_max <= 1e-14 {
        return Err(PdgError::ZeroInitialResidual);
    }
    let target = eps * (p as f64) * (n_horizon as f64);
    let ratio = target / gamma0_norm_max;
    if ratio >= 1.0 {
        return Ok(1);
    }
    Ok(((ratio.ln() / tau.ln()).ceil() as usize).max(1))
}

/// Options for a full Algorithm-1 run.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Stop as soon as every gamma component is <= eps (checked each round,
    /// including before the first).
    pub disable_early_exit: bool,
    /// Run exactly this many iterations instead of the certified bound.
    pub k_bar_override: Option<usize>,
    pub record_trace: bool,
    /// When set, the trace carries per-agent M-distances to this fixed point.
    pub oracle: Option<SaddlePoint>,
    /// Per-agent metrics for the oracle distances (each 2Np x 2Np).
    pub metrics: Option<Vec<DMatrix<f64>>>,
    /// Reuse these multipliers instead of starting from zero; gamma is
    /// re-centered on the residuals at the warm multipliers.
    pub warm_lambda: Option<Vec<DVector<f64>>>,
}

/// One residual-trace row per (iteration, agent).
#[derive(Debug, Clone)]
pub struct ResidualRecord {
    pub k: usize,
    pub agent: usize,
    /// Norm of the lambda-update direction grad Psi_i + gamma_i.
    pub stationarity: f64,
    pub gamma_max: f64,
    /// Distance of this agent's multiplier from the all-agent mean.
    pub lambda_spread: f64,
    pub m_distance: Option<f64>,
}

/// Result of a full run: final inputs, iterations actually used, the
/// distributed-test outcome, and the trace when requested.
#[derive(Debug)]
pub struct Algorithm1Run {
    pub state: PdgState,
    pub iterations_used: usize,
    pub k_bar: usize,
    /// Whether every gamma component was <= eps at the stop.
    pub gamma_test_ok: bool,
    /// Largest gamma component minus eps at the stop (negative when ok).
    pub gamma_max_violation: f64,
    pub early_exit: bool,
    pub trace: Vec<ResidualRecord>,
}

impl Algorithm1Run {
    pub fn u_tilde(&self) -> &[DVector<f64>] {
        &self.state.u_tilde
    }
}

fn gamma_test(state: &PdgState, eps: f64) -> (bool, f64) {
    let mut worst = f64::NEG_INFINITY;
    for g in &state.gamma {
        worst = worst.max(g.max());
    }
    (worst <= eps, worst - eps)
}

fn record_trace(
    trace: &mut Vec<ResidualRecord>,
    state: &PdgState,
    subs: &[LocalSubproblem],
    opts: &RunOptions,
) {
    let l = subs.len();
    let np = subs[0].np_dim();
    let mut lambda_mean = DVector::zeros(np);
    for lam in &state.lambda {
        lambda_mean += lam;
    }
    lambda_mean /= l as f64;
    for i in 0..l {
        let grad = -subs[i].local_residual(&state.u_tilde[i]);
        let m_distance = match (&opts.oracle, &opts.metrics) {
            (Some(sp), Some(ms)) => {
                let mut y = DVector::zeros(2 * np);
                y.rows_mut(0, np).copy_from(&(&state.lambda[i] - &sp.lambda_star));
                y.rows_mut(np, np).copy_from(&(&state.gamma[i] - &sp.gamma_star[i]));
                Some(riemannian_energy(&y, &DVector::zeros(2 * np), &ms[i]).sqrt())
            }
            _ => None,
        };
        trace.push(ResidualRecord {
            k: state.iter,
            agent: i,
            stationarity: (&grad + &state.gamma[i]).norm(),
            gamma_max: state.gamma[i].max(),
            lambda_spread: (&state.lambda[i] - &lambda_mean).norm(),
            m_distance,
        });
    }
}

/// Runs the distributed iteration: initialize at lambda = 0 (centering
/// gamma), derive the stopping bound from the initial residual, then iterate
/// with the early-exit test. Returns the final state and diagnostics; the
/// distributed-test outcome is reported, not asserted, because the per-agent
/// stationary gamma need not vanish when the coupled constraint binds
/// unevenly across agents.
pub fn run_algorithm1(
    subs: &[LocalSubproblem],
    graph: &CommGraph,
    params: &PdgParams,
    eps: f64,
    opts: &RunOptions,
) -> Result<Algorithm1Run, PdgError> {
    if subs[0].np_dim() == 0 {
        // no coupling rows: nothing to iterate on
        let state = initialize(subs, None)?;
        return Ok(Algorithm1Run {
            iterations_used: 0,
            k_bar: 0,
            gamma_test_ok: true,
            gamma_max_violation: f64::NEG_INFINITY,
            early_exit: false,
            trace: Vec::new(),
            state,
        });
    }
    let mut state = initialize(subs, opts.warm_lambda.clone())?;
    let gamma0_max = state.gamma.iter().map(|g| g.norm()).fold(0.0, f64::max);
    let k_bar = match opts.k_bar_override {
        Some(k) => k,
        None => match stopping_iteration(eps, subs[0].p_rows, subs[0].horizon, gamma0_max, params.tau) {
            Ok(k) => k,
            Err(PdgError::ZeroInitialResidual) => 0,
            Err(e) => return Err(e),
        },
    };

    let mut trace = Vec::new();
    if opts.record_trace {
        record_trace(&mut trace, &state, subs, opts);
    }

    let mut early = false;
    while state.iter < k_bar {
        if !opts.disable_early_exit {
            let (ok, _) = gamma_test(&state, eps);
            if ok {
                early = true;
                break;
            }
        }
        state = pdg_iterate(&state, params, graph, subs)?;
        if opts.record_trace {
            record_trace(&mut trace, &state, subs, opts);
        }
    }

    let (gamma_test_ok, gamma_max_violation) = gamma_test(&state, eps);
    Ok(Algorithm1Run {
        iterations_used: state.iter,
        k_bar,
        gamma_test_ok,
        gamma_max_violation,
        early_exit: early,
        trace,
        state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;
    use crate::oracle;
    use crate::plant::{condense_coupling, AgentPlant, CoupledConstraint};
    use crate::testutil;
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn stepsizes_match_plugin_arithmetic() {
        let params = select_stepsizes(1.0, 1.0, &[2.0, 2.0], 0.5).unwrap();
        assert_abs_diff_eq!(params.beta, 0.2475, epsilon = 1e-15);
        let alpha_bound = 0.5 / (2.0 - 3.5 * 1.0 * 0.2475 * 2.0);
        assert_abs_diff_eq!(alpha_bound, 1.869_158_878_504_672_9, epsilon = 1e-12);
        assert_abs_diff_eq!(params.alpha, 0.99 * alpha_bound, epsilon = 1e-12);
        let tau = (1.0 - 0.5 * params.alpha * params.beta * 2.0).sqrt();
        assert_abs_diff_eq!(params.tau, tau, epsilon = 1e-15);
        assert!(params.rho < 1.0 / (params.alpha * params.beta * 2.0));
    }

    #[test]
    fn vanishing_rho_gives_no_contraction() {
        let params = select_stepsizes(1.0, 1.0, &[2.0], 1e-9).unwrap();
        assert!(params.tau > 1.0 - 1e-8);
        assert!(params.tau < 1.0);
    }

    #[test]
    fn isolated_agent_rejected() {
        match select_stepsizes(1.0, 1.0, &[2.0, 0.0], 0.5) {
            Err(PdgError::IsolatedAgent { agent: 1 }) => {}
            other => panic!("expected IsolatedAgent, got {other:?}"),
        }
    }

    #[test]
    fn centering_arithmetic() {
        let rs = vec![
            DVector::from_row_slice(&[1.0, 0.0]),
            DVector::from_row_slice(&[0.0, 1.0]),
        ];
        let centered = center_residuals(&rs);
        assert_abs_diff_eq!(centered[0], DVector::from_row_slice(&[0.5, -0.5]), epsilon = 1e-15);
        assert_abs_diff_eq!(centered[1], DVector::from_row_slice(&[-0.5, 0.5]), epsilon = 1e-15);
    }

    #[test]
    fn identical_agents_center_to_zero() {
        let (plants, cc) = testutil::watertank_condensed(0.02);
        let x0 = DVector::from_row_slice(&[-0.3, -0.2]);
        let subs: Vec<_> = (0..4)
            .map(|i| LocalSubproblem::build(&plants[i], &cc, i, &x0, false).unwrap())
            .collect();
        let state = initialize(&subs, None).unwrap();
        for g in &state.gamma {
            assert!(g.norm() <= 1e-12);
        }
    }

    #[test]
    fn benchmark_gamma_sums_to_zero() {
        let subs = testutil::watertank_subproblems(0.02);
        let state = initialize(&subs, None).unwrap();
        let mut total = DVector::zeros(8);
        for g in &state.gamma {
            total += g;
        }
        assert!(total.norm() <= 1e-12, "sum gamma = {}", total.norm());
    }

    #[test]
    fn stopping_iteration_boundaries() {
        // Gamma0 equal to the target: ratio 1, clamped to 1
        assert_eq!(stopping_iteration(0.02, 1, 8, 0.16, 0.9).unwrap(), 1);
        // log_0.9(0.81) = 2
        assert_eq!(stopping_iteration(0.1, 1, 1, 0.1 / 0.81, 0.9).unwrap(), 2);
        match stopping_iteration(0.02, 1, 8, 1e-15, 0.9) {
            Err(PdgError::ZeroInitialResidual) => {}
            other => panic!("expected ZeroInitialResidual, got {other:?}"),
        }
    }

    #[test]
    fn single_agent_reduces_to_gradient_descent() {
        // l = 1: gamma starts centered at zero and never moves; lambda does
        // plain gradient descent on the (unconstrained) quadratic dual
        let plant = {
            let mut p = testutil::watertank_plant();
            p.state_lo = DVector::from_element(2, f64::NEG_INFINITY);
            p.state_hi = DVector::from_element(2, f64::INFINITY);
            p.input_lo = DVector::from_element(1, f64::NEG_INFINITY);
            p.input_hi = DVector::from_element(1, f64::INFINITY);
            p
        };
        let coupled = CoupledConstraint::new(
            vec![DMatrix::zeros(1, 2)],
            vec![DMatrix::from_row_slice(1, 1, &[4.0])],
        )
        .unwrap();
        let cc = condense_coupling(&[plant.clone()], &coupled, 4, 0.1).unwrap();
        let x0 = DVector::from_row_slice(&[-0.4, -0.3]);
        let sub = LocalSubproblem::build(&plant, &cc, 0, &x0, false).unwrap();
        let graph = build_graph(DMatrix::zeros(1, 1)).unwrap();
        let params = PdgParams { alpha: 0.05, beta: 0.1, rho: 0.5, tau: 0.9, k_bar: 0, project_lambda: false };

        let mut state = initialize(&[sub.clone()], None).unwrap();
        assert!(state.gamma[0].norm() <= 1e-14);
        let mut lambda_manual = DVector::zeros(4);
        for _ in 0..10 {
            let (_, grad) = sub.dual_value_and_gradient(&lambda_manual).unwrap();
            lambda_manual -= grad * 0.05;
            state = pdg_iterate(&state, &params, &graph, &[sub.clone()]).unwrap();
            assert!(state.gamma[0].norm() <= 1e-14);
            assert_abs_diff_eq!(state.lambda[0], lambda_manual, epsilon = 1e-10);
        }
    }

    #[test]
    fn two_agent_linear_map_oracle() {
        // unconstrained inner problems make the whole iteration an affine map
        // on (lambda_1, lambda_2, gamma_1, gamma_2); N = 1, p = 1
        let plant = AgentPlant::new(
            DMatrix::from_row_slice(1, 1, &[0.5]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DVector::from_element(1, f64::NEG_INFINITY),
            DVector::from_element(1, f64::INFINITY),
            DVector::from_element(1, f64::NEG_INFINITY),
            DVector::from_element(1, f64::INFINITY),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DMatrix::from_row_slice(1, 1, &[1.1327822185373186]),
            DMatrix::from_row_slice(1, 1, &[-0.26556443707463854]),
        )
        .unwrap();
        let coupled = CoupledConstraint::new(
            vec![DMatrix::zeros(1, 1); 2],
            vec![DMatrix::from_row_slice(1, 1, &[2.0]); 2],
        )
        .unwrap();
        let cc = condense_coupling(&vec![plant.clone(); 2], &coupled, 1, 0.2).unwrap();
        let x0s = [DVector::from_row_slice(&[-0.8]), DVector::from_row_slice(&[0.6])];
        let subs: Vec<_> = (0..2)
            .map(|i| LocalSubproblem::build(&plant, &cc, i, &x0s[i], false).unwrap())
            .collect();
        let weight = 0.7;
        let graph = build_graph(DMatrix::from_row_slice(2, 2, &[0., weight, weight, 0.])).unwrap();
        let (alpha, beta) = (0.04, 0.03);
        let params = PdgParams { alpha, beta, rho: 0.5, tau: 0.9, k_bar: 0, project_lambda: false };

        // closed form: u_i(lam) = -(g_i + G lam)/H, grad_i = c_i + theta*lam
        let h = subs[0].h_cost[(0, 0)];
        let g_coef = 2.0; // G entry
        let theta = g_coef * g_coef / h;
        let c: Vec<f64> = subs
            .iter()
            .map(|s| g_coef * s.g_base[0] / h + s.b_eps[0] / 2.0 - s.f_base[0])
            .collect();
        // grad_i(lam) = -(G u + f_base - b/l) = c_i + theta lam with c_i above

        let mut state = initialize(&subs, None).unwrap();
        // manual state (l1, l2, g1, g2)
        let grad0: Vec<f64> = (0..2).map(|i| c[i]).collect();
        let r0: Vec<f64> = grad0.iter().map(|gr| -gr).collect();
        let rbar = 0.5 * (r0[0] + r0[1]);
        let mut z = [0.0, 0.0, r0[0] - rbar, r0[1] - rbar];
        assert_abs_diff_eq!(state.gamma[0][0], z[2], epsilon = 1e-12);

        for _ in 0..25 {
            let grad = [c[0] + theta * z[0], c[1] + theta * z[1]];
            let z_new = [
                z[0] - alpha * (grad[0] + z[2]),
                z[1] - alpha * (grad[1] + z[3]),
                z[2] + beta * (weight * z[0] - weight * z[1]),
                z[3] + beta * (weight * z[1] - weight * z[0]),
            ];
            z = z_new;
            state = pdg_iterate(&state, &params, &graph, &subs).unwrap();
            assert_abs_diff_eq!(state.lambda[0][0], z[0], epsilon = 1e-12);
            assert_abs_diff_eq!(state.lambda[1][0], z[1], epsilon = 1e-12);
            assert_abs_diff_eq!(state.gamma[0][0], z[2], epsilon = 1e-12);
            assert_abs_diff_eq!(state.gamma[1][0], z[3], epsilon = 1e-12);
        }
    }

    #[test]
    fn saddle_point_is_fixed_point() {
        let subs = testutil::watertank_subproblems(0.02);
        let graph = testutil::watertank_graph();
        let sp = oracle::saddle_point(&subs).unwrap();
        let params = PdgParams { alpha: 0.01, beta: 0.005, rho: 0.5, tau: 0.99, k_bar: 0, project_lambda: false };
        let state = PdgState {
            lambda: vec![sp.lambda_star.clone(); 4],
            gamma: sp.gamma_star.clone(),
            u_tilde: sp.u_star.clone(),
            iter: 0,
        };
        let next = pdg_iterate(&state, &params, &graph, &subs).unwrap();
        for i in 0..4 {
            assert!((&next.lambda[i] - &state.lambda[i]).norm() <= 1e-7,
                "lambda moved by {}", (&next.lambda[i] - &state.lambda[i]).norm());
            assert!((&next.gamma[i] - &state.gamma[i]).norm() <= 1e-9);
        }
    }

    #[test]
    fn gamma_conservation_over_200_iterations() {
        let subs = testutil::watertank_subproblems(0.02);
        let graph = testutil::watertank_graph();
        let params = PdgParams { alpha: 0.0177, beta: 0.0067, rho: 0.5, tau: 0.9999, k_bar: 0, project_lambda: false };
        let mut state = initialize(&subs, None).unwrap();
        let total0: DVector<f64> = state.gamma.iter().fold(DVector::zeros(8), |acc, g| acc + g);
        for _ in 0..200 {
            state = pdg_iterate(&state, &params, &graph, &subs).unwrap();
        }
        let total: DVector<f64> = state.gamma.iter().fold(DVector::zeros(8), |acc, g| acc + g);
        assert!((total - total0).norm() <= 1e-10);
    }

    #[test]
    fn slack_coupling_exits_immediately() {
        // identical agents and a far-away coupled bound: gamma^0 = 0, so the
        // distributed test passes before the first iteration
        let (plants, _) = testutil::watertank_condensed(0.02);
        let coupled = CoupledConstraint::new(
            vec![DMatrix::zeros(1, 2); 4],
            vec![DMatrix::from_row_slice(1, 1, &[0.001]); 4],
        )
        .unwrap();
        let cc = condense_coupling(&plants, &coupled, 8, 0.02).unwrap();
        let x0 = DVector::from_row_slice(&[-0.3, -0.25]);
        let subs: Vec<_> = (0..4)
            .map(|i| LocalSubproblem::build(&plants[i], &cc, i, &x0, false).unwrap())
            .collect();
        let graph = testutil::watertank_graph();
        let params = select_stepsizes(0.01, 0.5, &[2.0; 4], 0.5).unwrap();
        let run = run_algorithm1(&subs, &graph, &params, 0.02, &RunOptions::default()).unwrap();
        assert_eq!(run.iterations_used, 0);
        assert!(run.gamma_test_ok);
        for (sub, u) in subs.iter().zip(run.u_tilde()) {
            let (u0, _) = sub.solve_local(&DVector::zeros(8)).unwrap();
            assert_abs_diff_eq!(u.clone(), u0, epsilon = 1e-12);
        }
    }

    #[test]
    fn projected_variant_keeps_lambda_nonnegative() {
        let subs = testutil::watertank_subproblems(0.02);
        let graph = testutil::watertank_graph();
        let mut params = select_stepsizes(0.027, 0.616, &[2.0; 4], 0.5).unwrap();
        params.project_lambda = true;
        let mut state = initialize(&subs, None).unwrap();
        for _ in 0..100 {
            state = pdg_iterate(&state, &params, &graph, &subs).unwrap();
            for lam in &state.lambda {
                assert!(lam.min() >= 0.0);
            }
        }
    }
}
