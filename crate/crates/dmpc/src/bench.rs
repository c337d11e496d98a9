//! Benchmark orchestration: closed-loop runs with CSV emission, parameter
//! sweeps, the certificate report, and the reference-solution dump. All
//! output is deterministic text so repeated runs produce identical bytes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use thiserror::Error;

use crate::config::{build_setup, BuildInfo, ConfigError, ProblemConfig};
use crate::contraction::{check_stepsizes, metric_matrix};
use crate::mpc::{simulate_closed_loop, ClosedLoopTrace, MpcSetup};
use crate::oracle;
use crate::pdg::{run_algorithm1, Algorithm1Run, PdgError, RunOptions};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Runtime(#[from] PdgError),
    #[error(transparent)]
    Solver(#[from] crate::local_solver::SolverError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl BenchError {
    /// CLI exit code: 2 for validation failures, 3 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) => 2,
            _ => 3,
        }
    }
}

fn fmt_f(v: f64) -> String {
    format!("{v:?}")
}

fn initial_states(cfg: &ProblemConfig) -> Vec<DVector<f64>> {
    cfg.agents.iter().map(|a| a.x0.clone()).collect()
}

/// Per-agent metrics from the selected step sizes and agent degrees.
pub fn agent_metrics(setup: &MpcSetup, np_dim: usize) -> Vec<nalgebra::DMatrix<f64>> {
    (0..setup.n_agents())
        .map(|i| metric_matrix(setup.params.alpha, setup.params.beta, setup.graph.degrees[i], np_dim))
        .collect()
}

/// Runs the first MPC step with full tracing against the saddle oracle.
pub fn first_step_analysis(setup: &MpcSetup, cfg: &ProblemConfig) -> Result<Algorithm1Run, BenchError> {
    let x0 = initial_states(cfg);
    let subs = setup.subproblems(&x0)?;
    let sp = oracle::saddle_point(&subs)?;
    let np = subs[0].np_dim();
    let opts = RunOptions {
        record_trace: true,
        oracle: Some(sp),
        metrics: Some(agent_metrics(setup, np)),
        ..Default::default()
    };
    Ok(run_algorithm1(&subs, &setup.graph, &setup.params, setup.condensed.eps, &opts)?)
}

// ---------------------------------------------------------------------------
// CSV emission

fn trace_csv(trace: &ClosedLoopTrace, setup: &MpcSetup) -> String {
    let n = setup.plants[0].state_dim();
    let m = setup.plants[0].input_dim();
    let p = setup.coupled.p;
    let mut s = String::new();
    let _ = write!(s, "t,agent");
    for k in 0..n {
        let _ = write!(s, ",x{k}");
    }
    for k in 0..m {
        let _ = write!(s, ",u{k}");
    }
    let _ = write!(s, ",lyapunov");
    for k in 0..p {
        let _ = write!(s, ",coupled{k}");
    }
    let _ = writeln!(
        s,
        ",iterations_used,eps_feasible,lyapunov_decrease_ok,candidate_feasible,gamma_test_ok,terminal_reached"
    );
    for rec in &trace.records {
        for agent in 0..setup.n_agents() {
            let _ = write!(s, "{},{agent}", rec.t);
            for k in 0..n {
                let _ = write!(s, ",{}", fmt_f(rec.x[agent][k]));
            }
            for k in 0..m {
                let _ = write!(s, ",{}", fmt_f(rec.u[agent][k]));
            }
            let _ = write!(s, ",{}", fmt_f(rec.lyapunov));
            for k in 0..p {
                let _ = write!(s, ",{}", fmt_f(rec.coupled_lhs[k]));
            }
            let _ = writeln!(
                s,
                ",{},{},{},{},{},{}",
                rec.iterations_used,
                rec.eps_feasible,
                rec.lyap_decrease_ok.map_or(String::new(), |b| b.to_string()),
                rec.candidate_feasible.map_or(String::new(), |b| b.to_string()),
                rec.gamma_test_ok,
                rec.terminal_reached,
            );
        }
    }
    // final state row: no inputs or monitors
    let t_final = trace.records.len();
    for (agent, x) in trace.final_states.iter().enumerate() {
        let _ = write!(s, "{t_final},{agent}");
        for k in 0..n {
            let _ = write!(s, ",{}", fmt_f(x[k]));
        }
        for _ in 0..m {
            let _ = write!(s, ",");
        }
        let _ = write!(s, ",");
        for _ in 0..p {
            let _ = write!(s, ",");
        }
        let _ = writeln!(s, ",,,,,");
    }
    s
}

fn residuals_csv(run: &Algorithm1Run) -> String {
    let mut s = String::from("k,agent,stationarity,gamma_max,lambda_spread,m_distance\n");
    for rec in &run.trace {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            rec.k,
            rec.agent,
            fmt_f(rec.stationarity),
            fmt_f(rec.gamma_max),
            fmt_f(rec.lambda_spread),
            rec.m_distance.map_or(String::new(), fmt_f),
        );
    }
    s
}

fn fig_inputs_csv(trace: &ClosedLoopTrace, cfg: &ProblemConfig) -> String {
    let l = cfg.n_agents();
    let m = cfg.agents[0].b.ncols();
    let mut s = String::from("t");
    for i in 0..l {
        for k in 0..m {
            let _ = write!(s, ",u{}_{k}", i + 1);
        }
    }
    s.push_str(",total_u,total_q\n");
    for rec in &trace.records {
        let _ = write!(s, "{}", rec.t);
        let mut total = 0.0;
        let mut total_q = 0.0;
        for i in 0..l {
            for k in 0..m {
                let _ = write!(s, ",{}", fmt_f(rec.u[i][k]));
                total += rec.u[i][k];
                total_q += rec.u[i][k] + cfg.agents[i].u_offset[k];
            }
        }
        let _ = writeln!(s, ",{},{}", fmt_f(total), fmt_f(total_q));
    }
    s
}

fn fig_states_csv(trace: &ClosedLoopTrace, cfg: &ProblemConfig) -> String {
    let n = cfg.agents[0].a.nrows();
    let mut s = String::from("t,agent");
    for k in 0..n {
        let _ = write!(s, ",x{k}");
    }
    s.push('\n');
    for rec in &trace.records {
        for (agent, x) in rec.x.iter().enumerate() {
            let _ = write!(s, "{},{agent}", rec.t);
            for k in 0..n {
                let _ = write!(s, ",{}", fmt_f(x[k]));
            }
            s.push('\n');
        }
    }
    let t_final = trace.records.len();
    for (agent, x) in trace.final_states.iter().enumerate() {
        let _ = write!(s, "{t_final},{agent}");
        for k in 0..n {
            let _ = write!(s, ",{}", fmt_f(x[k]));
        }
        s.push('\n');
    }
    s
}

/// The certificate table printed by `certify` and written by `simulate`.
pub fn certificate_report(setup: &MpcSetup, info: &BuildInfo) -> String {
    let mut s = String::new();
    let p = &setup.params;
    let _ = writeln!(
        s,
        "step sizes: alpha = {}, beta = {}, rho = {}, tau = {}, project_lambda = {}",
        fmt_f(p.alpha),
        fmt_f(p.beta),
        fmt_f(p.rho),
        fmt_f(p.tau),
        p.project_lambda
    );
    let _ = writeln!(s, "curvature: m_J = {}, L_J = {}, zeta = [{}, {}], sigma = [{}, {}]",
        fmt_f(info.m_j), fmt_f(info.l_j), fmt_f(info.zeta_lo), fmt_f(info.zeta_hi), fmt_f(info.sigma_lo), fmt_f(info.sigma_hi));
    if info.stepsizes_overridden {
        let _ = writeln!(s, "step sizes taken from config override");
    }
    if info.theta_rank_deficient {
        let _ = writeln!(s, "WARNING: G_i is rank deficient for some agent; the sigma interval applies on the row space only and the direct test below is the authoritative check");
    }
    let chk = check_stepsizes(p.alpha, p.beta, info.sigma_lo, info.sigma_hi, setup.graph.degrees.as_slice(), p.rho);
    let _ = writeln!(s, "bounds: alpha <= {} ({}), beta <= {} certified ({}), beta <= {} rate-form ({})",
        fmt_f(chk.alpha_bound), pass(chk.alpha_ok), fmt_f(chk.beta_bound_certified), pass(chk.beta_ok_certified),
        fmt_f(chk.beta_bound_nominal), pass(chk.beta_ok_nominal));
    let _ = writeln!(s, "agent,degree,upsilon3_min_eig,schur_min_eig,direct_lambda_max,tau_sq,valid");
    for (i, cert) in info.certificates.iter().enumerate() {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            i,
            fmt_f(setup.graph.degrees[i]),
            fmt_f(cert.upsilon3_mineig),
            fmt_f(cert.schur_mineig),
            fmt_f(cert.direct_lambda_max),
            fmt_f(cert.tau * cert.tau),
            cert.valid
        );
    }
    let _ = writeln!(s, "certificate valid: {}", info.certificate_valid);
    s
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "fail"
    }
}

/// Reference solutions of the first-step problem: consensus multiplier,
/// per-agent saddle inputs and stationary gamma, and the inequality-QP
/// solution for comparison.
pub fn oracle_report(cfg: &ProblemConfig) -> Result<String, BenchError> {
    let (setup, _) = build_setup(cfg)?;
    let x0 = initial_states(cfg);
    let subs = setup.subproblems(&x0)?;
    let mut s = String::new();
    if subs[0].np_dim() == 0 {
        let _ = writeln!(s, "kind,agent,component,value");
        for (i, sub) in subs.iter().enumerate() {
            let (u, _) = sub.solve_local(&DVector::zeros(0))?;
            for (k, v) in u.iter().enumerate() {
                let _ = writeln!(s, "u_local,{i},{k},{}", fmt_f(*v));
            }
        }
        return Ok(s);
    }
    let sp = oracle::saddle_point(&subs)?;
    let qp = oracle::centralized_qp(&subs)?;
    let _ = writeln!(s, "kind,agent,component,value");
    for (k, v) in sp.lambda_star.iter().enumerate() {
        let _ = writeln!(s, "lambda_star,,{k},{}", fmt_f(*v));
    }
    for (i, u) in sp.u_star.iter().enumerate() {
        for (k, v) in u.iter().enumerate() {
            let _ = writeln!(s, "u_saddle,{i},{k},{}", fmt_f(*v));
        }
    }
    for (i, g) in sp.gamma_star.iter().enumerate() {
        for (k, v) in g.iter().enumerate() {
            let _ = writeln!(s, "gamma_star,{i},{k},{}", fmt_f(*v));
        }
    }
    for (i, u) in qp.iter().enumerate() {
        for (k, v) in u.iter().enumerate() {
            let _ = writeln!(s, "u_qp,{i},{k},{}", fmt_f(*v));
        }
    }
    Ok(s)
}

/// Files produced by a benchmark run.
#[derive(Debug)]
pub struct BenchmarkArtifacts {
    pub trace: PathBuf,
    pub residuals: PathBuf,
    pub certificate: PathBuf,
    pub fig_inputs: PathBuf,
    pub fig_states: PathBuf,
}

/// Full benchmark: validates, runs the closed loop for the configured number
/// of steps, and writes the trace, first-step residuals, certificate table
/// and figure-ready CSVs into `out_dir`.
pub fn run_benchmark(cfg: &ProblemConfig, out_dir: &Path) -> Result<(BenchmarkArtifacts, ClosedLoopTrace), BenchError> {
    let (setup, info) = build_setup(cfg)?;
    if !info.certificates.is_empty() && !info.certificate_valid {
        return Err(BenchError::Config(ConfigError::Invalid {
            msg: "contraction certificate invalid for the configured step sizes".into(),
        }));
    }
    std::fs::create_dir_all(out_dir)?;

    let x0 = initial_states(cfg);
    let trace = simulate_closed_loop(&setup, &x0, cfg.steps)?;

    let artifacts = BenchmarkArtifacts {
        trace: out_dir.join("trace.csv"),
        residuals: out_dir.join("residuals.csv"),
        certificate: out_dir.join("certificate.txt"),
        fig_inputs: out_dir.join("fig_inputs.csv"),
        fig_states: out_dir.join("fig_states.csv"),
    };
    std::fs::write(&artifacts.trace, trace_csv(&trace, &setup))?;
    if setup.coupled.p > 0 && cfg.steps > 0 {
        let run = first_step_analysis(&setup, cfg)?;
        std::fs::write(&artifacts.residuals, residuals_csv(&run))?;
    } else {
        std::fs::write(&artifacts.residuals, "k,agent,stationarity,gamma_max,lambda_spread,m_distance\n")?;
    }
    std::fs::write(&artifacts.certificate, certificate_report(&setup, &info))?;
    std::fs::write(&artifacts.fig_inputs, fig_inputs_csv(&trace, cfg))?;
    std::fs::write(&artifacts.fig_states, fig_states_csv(&trace, cfg))?;
    Ok((artifacts, trace))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Rho,
    Eps,
}

/// Per-value summary of a sweep run.
#[derive(Debug, Clone)]
pub struct SweepSummary {
    pub value: f64,
    pub peak_total_input: f64,
    /// Largest per-step change of the total input.
    pub max_total_input_delta: f64,
    /// First step from which max_i ||x_i|| stays below 5% of its initial value.
    pub settling_step: Option<usize>,
    pub total_u: Vec<f64>,
}

/// Sweeps rho or eps, holding (alpha, beta) fixed at the base configuration's
/// values so the swept parameter acts only through the rate tau and the
/// stopping bound; each value is validated (including its certificate) before
/// running. Writes one aligned total-input series per value plus summary rows.
pub fn sweep(
    cfg: &ProblemConfig,
    param: SweepParam,
    values: &[f64],
    out_dir: &Path,
) -> Result<(PathBuf, Vec<SweepSummary>), BenchError> {
    let (base_setup, _) = build_setup(cfg)?;
    let (alpha, beta) = (base_setup.params.alpha, base_setup.params.beta);

    let mut summaries = Vec::with_capacity(values.len());
    for &v in values {
        let mut c = cfg.clone();
        match param {
            SweepParam::Rho => c.rho = v,
            SweepParam::Eps => c.eps = v,
        }
        if base_setup.coupled.p > 0 {
            c.alpha = Some(alpha);
            c.beta = Some(beta);
        }
        let (setup, info) = build_setup(&c)?;
        if !info.certificates.is_empty() && !info.certificate_valid {
            return Err(BenchError::Config(ConfigError::Invalid {
                msg: format!("certificate invalid at {param:?} = {v}"),
            }));
        }
        let x0 = initial_states(&c);
        let trace = simulate_closed_loop(&setup, &x0, c.steps)?;

        let total_u: Vec<f64> = trace
            .records
            .iter()
            .map(|r| r.u.iter().map(|u| u.sum()).sum())
            .collect();
        let peak = total_u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let max_delta = total_u
            .windows(2)
            .map(|w| (w[1] - w[0]).abs())
            .fold(0.0, f64::max);
        let x0_scale = x0.iter().map(|x| x.norm()).fold(0.0, f64::max);
        let mut settling = None;
        for t in 0..trace.records.len() {
            let tail_ok = (t..trace.records.len())
                .all(|s| trace.records[s].x.iter().map(|x| x.norm()).fold(0.0, f64::max) <= 0.05 * x0_scale)
                && trace.final_states.iter().map(|x| x.norm()).fold(0.0, f64::max) <= 0.05 * x0_scale;
            if tail_ok {
                settling = Some(t);
                break;
            }
        }
        summaries.push(SweepSummary {
            value: v,
            peak_total_input: peak,
            max_total_input_delta: max_delta,
            settling_step: settling,
            total_u,
        });
    }

    std::fs::create_dir_all(out_dir)?;
    let name = match param {
        SweepParam::Rho => "sweep_rho.csv",
        SweepParam::Eps => "sweep_eps.csv",
    };
    let path = out_dir.join(name);
    let mut s = String::from("t");
    for sm in &summaries {
        let _ = write!(s, ",total_u@{}", fmt_f(sm.value));
    }
    s.push('\n');
    let t_len = summaries.first().map_or(0, |sm| sm.total_u.len());
    for t in 0..t_len {
        let _ = write!(s, "{t}");
        for sm in &summaries {
            let _ = write!(s, ",{}", fmt_f(sm.total_u[t]));
        }
        s.push('\n');
    }
    let _ = write!(s, "peak");
    for sm in &summaries {
        let _ = write!(s, ",{}", fmt_f(sm.peak_total_input));
    }
    s.push('\n');
    let _ = write!(s, "max_delta");
    for sm in &summaries {
        let _ = write!(s, ",{}", fmt_f(sm.max_total_input_delta));
    }
    s.push('\n');
    let _ = write!(s, "settling");
    for sm in &summaries {
        match sm.settling_step {
            Some(t) => {
                let _ = write!(s, ",{t}");
            }
            None => s.push(','),
        }
    }
    s.push('\n');
    std::fs::write(&path, &s)?;
    Ok((path, summaries))
}
