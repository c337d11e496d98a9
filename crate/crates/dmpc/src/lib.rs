//! Distributed model predictive control for coupled discrete-time linear
//! subsystems. The globally coupled constraint is tightened over the horizon
//! and handled through per-agent copies of the dual variable that coordinate
//! via Laplacian consensus; the saddle-point problem is solved by a
//! primal-dual gradient iteration whose geometric convergence rate is
//! certified numerically through a constant-metric contraction test.

pub mod bench;
pub mod config;
pub mod contraction;
pub mod graph;
pub mod local_solver;
pub mod mpc;
pub mod oracle;
pub mod pdg;
pub mod plant;
pub mod qp;

pub use bench::{certificate_report, first_step_analysis, oracle_report, run_benchmark, sweep, BenchError, SweepParam, SweepSummary};
pub use config::{build_setup, emit_config, load_config, parse_config, watertank, BuildInfo, ConfigError, ProblemConfig};
pub use contraction::{
    build_certificate, check_stepsizes, metric_matrix, riemannian_energy, theta_bounds,
    CertError, ContractionCertificate, StepsizeCheck,
};
pub use graph::{build_graph, validate_connectivity, CommGraph, GraphError};
pub use local_solver::{LocalSubproblem, SolverError};
pub use mpc::{
    check_candidate, check_eps_feasible, lyapunov_value, realized_coupled_rows, shift_candidate,
    simulate_closed_loop, ClosedLoopTrace, MpcSetup, StepRecord, StepResult,
};
pub use oracle::{centralized_qp, saddle_point, SaddlePoint};
pub use pdg::{
    initialize, pdg_iterate, run_algorithm1, select_stepsizes, stopping_iteration,
    Algorithm1Run, PdgError, PdgParams, PdgState, RunOptions,
};
pub use plant::{
    condense_coupling, local_feasible_polytope, predict, terminal_levels, AgentPlant,
    CondensedCoupling, CoupledConstraint, PlantError, Polytope,
};
pub use qp::{solve_qp, QpCache, QpError, QpOptions, QpSolution};

#[cfg(test)]
pub(crate) mod testutil {
    use nalgebra::{DMatrix, DVector};

    use crate::graph::{build_graph, CommGraph};
    use crate::local_solver::LocalSubproblem;
    use crate::plant::{condense_coupling, AgentPlant, CondensedCoupling, CoupledConstraint};

    pub fn watertank_plant() -> AgentPlant {
        AgentPlant::new(
            DMatrix::from_row_slice(2, 2, &[0.8750, 0.1250, 0.1250, 0.8047]),
            DMatrix::from_row_slice(2, 1, &[0.3, 0.0]),
            DVector::from_row_slice(&[-1.0, -0.64]),
            DVector::from_row_slice(&[1.0, 0.64]),
            DVector::from_row_slice(&[-0.3]),
            DVector::from_row_slice(&[0.3]),
            DMatrix::identity(2, 2) * 10.0,
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DMatrix::from_row_slice(2, 2, &[31.7459, 9.8300, 9.8300, 56.3415]),
            DMatrix::from_row_slice(1, 2, &[-1.7916, -0.7337]),
        )
        .unwrap()
    }

    pub fn watertank_initial_states() -> Vec<DVector<f64>> {
        vec![
            DVector::from_row_slice(&[-0.2264, -0.3981]),
            DVector::from_row_slice(&[0.4520, -0.3689]),
            DVector::from_row_slice(&[-0.5311, -0.2828]),
            DVector::from_row_slice(&[-0.4397, -0.4897]),
        ]
    }

    pub fn watertank_graph() -> CommGraph {
        build_graph(DMatrix::from_row_slice(4, 4, &[
            0., 1., 0., 1.,
            1., 0., 1., 0.,
            0., 1., 0., 1.,
            1., 0., 1., 0.,
        ]))
        .unwrap()
    }

    pub fn watertank_condensed(eps: f64) -> (Vec<AgentPlant>, CondensedCoupling) {
        let plants = vec![watertank_plant(); 4];
        let coupled = CoupledConstraint::new(
            vec![DMatrix::zeros(1, 2); 4],
            vec![DMatrix::from_row_slice(1, 1, &[1.25]); 4],
        )
        .unwrap();
        let cc = condense_coupling(&plants, &coupled, 8, eps).unwrap();
        (plants, cc)
    }

    pub fn watertank_subproblems(eps: f64) -> Vec<LocalSubproblem> {
        let (plants, cc) = watertank_condensed(eps);
        watertank_initial_states()
            .iter()
            .enumerate()
            .map(|(i, x0)| LocalSubproblem::build(&plants[i], &cc, i, x0, false).unwrap())
            .collect()
    }
}
