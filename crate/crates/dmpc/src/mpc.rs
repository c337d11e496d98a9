//! Receding-horizon execution: sample states, run the distributed iteration,
//! apply the first inputs, shift — plus the closed-loop monitors (coupled
//! constraint in original units, Lyapunov decrease, shifted-candidate
//! feasibility, terminal-region entry and invariance).

use nalgebra::DVector;

use crate::graph::CommGraph;
use crate::local_solver::LocalSubproblem;
use crate::pdg::{run_algorithm1, PdgError, PdgParams, RunOptions};
use crate::plant::{predict, AgentPlant, CondensedCoupling, CoupledConstraint};

/// Lyapunov decrease tolerance: inner solves at 1e-8 KKT residual accumulate
/// over the horizon stages.
pub const LYAPUNOV_TOL: f64 = 1e-6;
const CANDIDATE_TOL: f64 = 1e-8;

/// Everything fixed across MPC steps.
#[derive(Debug, Clone)]
pub struct MpcSetup {
    pub plants: Vec<AgentPlant>,
    pub graph: CommGraph,
    pub coupled: CoupledConstraint,
    pub condensed: CondensedCoupling,
    pub params: PdgParams,
    pub use_terminal_set: bool,
    pub warm_start: bool,
    pub terminal_law_after: bool,
}

/// Outcome of one MPC step.
#[derive(Debug)]
pub struct StepResult {
    pub u_applied: Vec<DVector<f64>>,
    pub u_seqs: Vec<DVector<f64>>,
    pub lyapunov: f64,
    pub iterations_used: usize,
    pub eps_feasible: bool,
    pub eps_max_violation: f64,
    pub gamma_test_ok: bool,
    pub lambda_final: Vec<DVector<f64>>,
    pub used_terminal_law: bool,
}

/// One row of the closed-loop trace.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub t: usize,
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub lyapunov: f64,
    pub iterations_used: usize,
    /// Realized coupled constraint rows sum_i (Phi_x x_i + Phi_u u_i).
    pub coupled_lhs: DVector<f64>,
    pub eps_feasible: bool,
    pub eps_max_violation: f64,
    pub gamma_test_ok: bool,
    /// Whether the candidate shifted in from step t-1 was feasible for this
    /// step's constraints (None at t = 0).
    pub candidate_feasible: Option<bool>,
    pub candidate_violation: Option<f64>,
    /// V(t) - V(t-1) <= -sum_i F(x_i(t-1), u_i(t-1)) + tol (None at t = 0).
    pub lyap_decrease_ok: Option<bool>,
    pub lyap_margin: Option<f64>,
    pub terminal_reached: bool,
    pub used_terminal_law: bool,
}

#[derive(Debug)]
pub struct ClosedLoopTrace {
    pub records: Vec<StepRecord>,
    pub final_states: Vec<DVector<f64>>,
    pub terminal_reached_at: Option<usize>,
}

impl MpcSetup {
    pub fn n_agents(&self) -> usize {
        self.plants.len()
    }

    /// Builds the per-agent inner problems at the sampled states.
    pub fn subproblems(&self, x: &[DVector<f64>]) -> Result<Vec<LocalSubproblem>, PdgError> {
        x.iter()
            .enumerate()
            .map(|(i, xi)| {
                LocalSubproblem::build(&self.plants[i], &self.condensed, i, xi, self.use_terminal_set)
                    .map_err(PdgError::from)
            })
            .collect()
    }

    /// All agents inside the inner terminal region?
    pub fn terminal_reached(&self, x: &[DVector<f64>]) -> bool {
        self.plants
            .iter()
            .zip(x)
            .all(|(p, xi)| p.eta_f.is_finite() && p.terminal_cost(xi) <= p.eta_f)
    }

    /// One MPC step: solve (distributed, or directly when there is no
    /// coupling or the terminal law is active), report diagnostics.
    pub fn mpc_step(
        &self,
        x: &[DVector<f64>],
        warm_lambda: Option<Vec<DVector<f64>>>,
    ) -> Result<StepResult, PdgError> {
        if self.terminal_law_after && self.terminal_reached(x) {
            // local feedback u = Kx, bypassing the optimization
            let u_applied: Vec<DVector<f64>> =
                self.plants.iter().zip(x).map(|(p, xi)| &p.k_gain * xi).collect();
            let subs = self.subproblems(x)?;
            let u_seqs: Vec<DVector<f64>> = self
                .plants
                .iter()
                .zip(x)
                .map(|(p, xi)| terminal_law_sequence(p, xi, self.condensed.horizon))
                .collect();
            let lyapunov = lyapunov_value(&subs, &u_seqs);
            let (ok, viol) = check_eps_feasible(&u_seqs, &subs);
            let np = subs[0].np_dim();
            return Ok(StepResult {
                u_applied,
                u_seqs,
                lyapunov,
                iterations_used: 0,
                eps_feasible: ok,
                eps_max_violation: viol,
                gamma_test_ok: true,
                lambda_final: vec![DVector::zeros(np); self.n_agents()],
                used_terminal_law: true,
            });
        }

        let subs = self.subproblems(x)?;
        let np = subs[0].np_dim();

        if np == 0 {
            // no coupling rows: the problem separates into local QPs
            let mut u_seqs = Vec::with_capacity(subs.len());
            for sub in &subs {
                let (u, _) = sub.solve_local(&DVector::zeros(0))?;
                u_seqs.push(u);
            }
            let lyapunov = lyapunov_value(&subs, &u_seqs);
            let u_applied = first_inputs(&self.plants, &u_seqs);
            return Ok(StepResult {
                u_applied,
                u_seqs,
                lyapunov,
                iterations_used: 0,
                eps_feasible: true,
                eps_max_violation: f64::NEG_INFINITY,
                gamma_test_ok: true,
                lambda_final: vec![DVector::zeros(0); subs.len()],
                used_terminal_law: false,
            });
        }

        let opts = RunOptions { warm_lambda, ..Default::default() };
        let run = run_algorithm1(&subs, &self.graph, &self.params, self.condensed.eps, &opts)?;
        let (ok, viol) = check_eps_feasible(run.u_tilde(), &subs);
        let lyapunov = lyapunov_value(&subs, run.u_tilde());
        let u_applied = first_inputs(&self.plants, run.u_tilde());
        Ok(StepResult {
            u_applied,
            u_seqs: run.state.u_tilde.clone(),
            lyapunov,
            iterations_used: run.iterations_used,
            eps_feasible: ok,
            eps_max_violation: viol,
            gamma_test_ok: run.gamma_test_ok,
            lambda_final: run.state.lambda,
            used_terminal_law: false,
        })
    }
}

fn first_inputs(plants: &[AgentPlant], u_seqs: &[DVector<f64>]) -> Vec<DVector<f64>> {
    plants
        .iter()
        .zip(u_seqs)
        .map(|(p, u)| u.rows(0, p.input_dim()).clone_owned())
        .collect()
}

/// The input sequence generated by u = Kx along the closed loop, used when
/// the terminal law replaces the optimizer.
fn terminal_law_sequence(plant: &AgentPlant, x0: &DVector<f64>, n_horizon: usize) -> DVector<f64> {
    let m = plant.input_dim();
    let a_k = plant.a_closed();
    let mut u = DVector::zeros(n_horizon * m);
    let mut xs = x0.clone();
    for s in 0..n_horizon {
        u.rows_mut(s * m, m).copy_from(&(&plant.k_gain * &xs));
        xs = &a_k * xs;
    }
    u
}

/// Shifted candidate for the next step: (u(1|t), ..., u(N-1|t), K x(N|t)).
pub fn shift_candidate(
    prev_u: &[DVector<f64>],
    prev_x_pred: &[DVector<f64>],
    plants: &[AgentPlant],
) -> Vec<DVector<f64>> {
    plants
        .iter()
        .zip(prev_u.iter().zip(prev_x_pred))
        .map(|(plant, (u, traj))| {
            let m = plant.input_dim();
            let n = plant.state_dim();
            let n_horizon = u.len() / m;
            let mut cand = DVector::zeros(u.len());
            if n_horizon > 1 {
                cand.rows_mut(0, (n_horizon - 1) * m).copy_from(&u.rows(m, (n_horizon - 1) * m));
            }
            let x_terminal = traj.rows(n_horizon * n, n).clone_owned();
            cand.rows_mut((n_horizon - 1) * m, m).copy_from(&(&plant.k_gain * x_terminal));
            cand
        })
        .collect()
}

/// Definition-3 test: sum_i f_i(x_i, u_i) - b(eps) <= eps*l componentwise.
/// Returns (ok, largest exceedance over eps*l).
pub fn check_eps_feasible(u_seqs: &[DVector<f64>], subs: &[LocalSubproblem]) -> (bool, f64) {
    let np = subs[0].np_dim();
    if np == 0 {
        return (true, f64::NEG_INFINITY);
    }
    let l = subs.len() as f64;
    let mut total = -subs[0].b_eps.clone();
    for (sub, u) in subs.iter().zip(u_seqs) {
        total += sub.coupling_value(u);
    }
    let max_violation = total.max() - subs[0].eps * l;
    (max_violation <= 0.0, max_violation)
}

/// Aggregate cost of the given sequences, the Lyapunov candidate.
pub fn lyapunov_value(subs: &[LocalSubproblem], u_seqs: &[DVector<f64>]) -> f64 {
    subs.iter().zip(u_seqs).map(|(s, u)| s.cost(u)).sum()
}

/// Feasibility of a candidate for the constraints encoded in `subs`: local
/// polytopes plus the tightened coupled rows (no eps*l slack — the shifted
/// candidate must satisfy the nominal tightened problem).
pub fn check_candidate(subs: &[LocalSubproblem], candidates: &[DVector<f64>]) -> (bool, f64) {
    let mut worst = f64::NEG_INFINITY;
    for (sub, cand) in subs.iter().zip(candidates) {
        worst = worst.max(sub.polytope.max_violation(cand));
    }
    if subs[0].np_dim() > 0 {
        let mut total = -subs[0].b_eps.clone();
        for (sub, cand) in subs.iter().zip(candidates) {
            total += sub.coupling_value(cand);
        }
        worst = worst.max(total.max());
    }
    (worst <= CANDIDATE_TOL, worst)
}

/// Runs the closed loop for `t_steps` MPC steps from `x0`. Monitors are
/// recorded, never asserted; infeasibility of a monitor shows up as a false
/// flag in the trace.
pub fn simulate_closed_loop(
    setup: &MpcSetup,
    x0: &[DVector<f64>],
    t_steps: usize,
) -> Result<ClosedLoopTrace, PdgError> {
    let mut x: Vec<DVector<f64>> = x0.to_vec();
    let mut records = Vec::with_capacity(t_steps);
    let mut terminal_reached_at = None;
    let mut warm: Option<Vec<DVector<f64>>> = None;
    let mut prev: Option<(StepResult, Vec<DVector<f64>>, Vec<DVector<f64>>)> = None;

    for t in 0..t_steps {
        let terminal_now = setup.terminal_reached(&x);
        if terminal_now && terminal_reached_at.is_none() {
            terminal_reached_at = Some(t);
        }

        let subs = setup.subproblems(&x)?;
        let step = setup.mpc_step(&x, warm.take())?;

        // monitors against the previous step
        let (candidate_feasible, candidate_violation, lyap_decrease_ok, lyap_margin) =
            if let Some((prev_step, prev_x, prev_pred)) = &prev {
                let cand = shift_candidate(&prev_step.u_seqs, prev_pred, &setup.plants);
                let (cand_ok, cand_viol) = check_candidate(&subs, &cand);
                let stage: f64 = setup
                    .plants
                    .iter()
                    .zip(prev_x.iter().zip(&prev_step.u_applied))
                    .map(|(p, (xi, ui))| p.stage_cost(xi, ui))
                    .sum();
                let margin = step.lyapunov - prev_step.lyapunov + stage;
                (
                    Some(cand_ok),
                    Some(cand_viol),
                    Some(margin <= LYAPUNOV_TOL),
                    Some(margin),
                )
            } else {
                (None, None, None, None)
            };

        let coupled_lhs = realized_coupled_rows(&setup.coupled, &x, &step.u_applied);

        if setup.warm_start {
            warm = Some(step.lambda_final.clone());
        }

        let preds: Vec<DVector<f64>> = setup
            .plants
            .iter()
            .zip(x.iter().zip(&step.u_seqs))
            .map(|(p, (xi, u))| predict(p, xi, u).expect("dimensions fixed by setup"))
            .collect();

        records.push(StepRecord {
            t,
            x: x.clone(),
            u: step.u_applied.clone(),
            lyapunov: step.lyapunov,
            iterations_used: step.iterations_used,
            coupled_lhs,
            eps_feasible: step.eps_feasible,
            eps_max_violation: step.eps_max_violation,
            gamma_test_ok: step.gamma_test_ok,
            candidate_feasible,
            candidate_violation,
            lyap_decrease_ok,
            lyap_margin,
            terminal_reached: terminal_now,
            used_terminal_law: step.used_terminal_law,
        });

        let x_next: Vec<DVector<f64>> = setup
            .plants
            .iter()
            .zip(x.iter().zip(&step.u_applied))
            .map(|(p, (xi, ui))| &p.a * xi + &p.b * ui)
            .collect();
        prev = Some((step, x.clone(), preds));
        x = x_next;
    }

    if setup.terminal_reached(&x) && terminal_reached_at.is_none() {
        terminal_reached_at = Some(t_steps);
    }

    Ok(ClosedLoopTrace { records, final_states: x, terminal_reached_at })
}

/// sum_i (Phi_x x_i + Phi_u u_i) at one time instant.
pub fn realized_coupled_rows(
    coupled: &CoupledConstraint,
    x: &[DVector<f64>],
    u: &[DVector<f64>],
) -> DVector<f64> {
    let mut total = DVector::zeros(coupled.p);
    for i in 0..x.len() {
        total += &coupled.phi_x[i] * &x[i] + &coupled.phi_u[i] * &u[i];
    }
    total
}
