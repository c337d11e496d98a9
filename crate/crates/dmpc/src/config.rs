//! Problem configuration: a flat sectioned text format ([graph], [agent.N],
//! [coupling], [solver], [sim]) with matrices as bracketed row-major rows,
//! the bundled water-tank benchmark definition, and assembly of a validated
//! [`MpcSetup`] plus its contraction certificate.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::contraction::{build_certificate, theta_bounds, CertError, ContractionCertificate};
use crate::graph::{build_graph, validate_connectivity, GraphError};
use crate::local_solver::LocalSubproblem;
use crate::mpc::MpcSetup;
use crate::pdg::{select_stepsizes, PdgError, PdgParams};
use crate::plant::{condense_coupling, terminal_levels, AgentPlant, CoupledConstraint, PlantError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{origin}:{line}: {msg}")]
    Parse { origin: String, line: usize, msg: String },
    #[error("eps = {eps} out of range: must lie in (0, 1/(N*l)) = (0, {bound})")]
    EpsOutOfRange { eps: f64, bound: f64 },
    #[error("dimension mismatch: {msg}")]
    DimensionMismatch { msg: String },
    #[error("invalid configuration: {msg}")]
    Invalid { msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<GraphError> for ConfigError {
    fn from(e: GraphError) -> Self {
        ConfigError::Invalid { msg: e.to_string() }
    }
}

impl From<PlantError> for ConfigError {
    fn from(e: PlantError) -> Self {
        match e {
            PlantError::EpsOutOfRange { eps, max } => ConfigError::EpsOutOfRange { eps, bound: max },
            PlantError::DimensionMismatch { what } => ConfigError::DimensionMismatch { msg: what },
            other => ConfigError::Invalid { msg: other.to_string() },
        }
    }
}

impl From<CertError> for ConfigError {
    fn from(e: CertError) -> Self {
        ConfigError::Invalid { msg: e.to_string() }
    }
}

impl From<PdgError> for ConfigError {
    fn from(e: PdgError) -> Self {
        ConfigError::Invalid { msg: e.to_string() }
    }
}

/// Per-agent blocks as they appear in the file.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub x_min: DVector<f64>,
    pub x_max: DVector<f64>,
    pub u_min: DVector<f64>,
    pub u_max: DVector<f64>,
    pub x0: DVector<f64>,
    /// Steady-state input in original units, used only when reporting totals
    /// (e.g. flow rates); zero when absent from the file.
    pub u_offset: DVector<f64>,
    pub phi_x: DMatrix<f64>,
    pub phi_u: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemConfig {
    pub adjacency: DMatrix<f64>,
    pub agents: Vec<AgentConfig>,
    pub horizon: usize,
    pub eps: f64,
    pub rho: f64,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub project_lambda: bool,
    pub use_terminal_set: bool,
    pub steps: usize,
    pub warm_start: bool,
    pub terminal_law_after: bool,
}

impl ProblemConfig {
    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }
}

// ---------------------------------------------------------------------------
// parsing

struct RawConfig {
    origin: String,
    entries: BTreeMap<(String, String), (String, usize)>,
    sections: Vec<(String, usize)>,
}

fn parse_raw(text: &str, origin: &str) -> Result<RawConfig, ConfigError> {
    let mut entries = BTreeMap::new();
    let mut sections = Vec::new();
    let mut current: Option<String> = None;
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            let name = name.trim().to_string();
            if sections.iter().any(|(s, _)| s == &name) {
                return Err(ConfigError::Parse {
                    origin: origin.into(),
                    line: line_no,
                    msg: format!("duplicate section [{name}]"),
                });
            }
            sections.push((name.clone(), line_no));
            current = Some(name);
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::Parse {
                origin: origin.into(),
                line: line_no,
                msg: format!("expected `key = value`, got `{line}`"),
            });
        };
        let Some(section) = current.clone() else {
            return Err(ConfigError::Parse {
                origin: origin.into(),
                line: line_no,
                msg: "key outside of any [section]".into(),
            });
        };
        let key = key.trim().to_string();
        if entries
            .insert((section.clone(), key.clone()), (value.trim().to_string(), line_no))
            .is_some()
        {
            return Err(ConfigError::Parse {
                origin: origin.into(),
                line: line_no,
                msg: format!("duplicate key `{key}` in [{section}]"),
            });
        }
    }
    Ok(RawConfig { origin: origin.into(), entries, sections })
}

impl RawConfig {
    fn err(&self, line: usize, msg: String) -> ConfigError {
        ConfigError::Parse { origin: self.origin.clone(), line, msg }
    }

    fn take(&mut self, section: &str, key: &str) -> Result<(String, usize), ConfigError> {
        self.entries.remove(&(section.into(), key.into())).ok_or_else(|| {
            let line = self
                .sections
                .iter()
                .find(|(s, _)| s == section)
                .map(|&(_, l)| l)
                .unwrap_or(0);
            self.err(line, format!("missing key `{key}` in [{section}]"))
        })
    }

    fn take_opt(&mut self, section: &str, key: &str) -> Option<(String, usize)> {
        self.entries.remove(&(section.into(), key.into()))
    }

    fn matrix(&mut self, section: &str, key: &str) -> Result<DMatrix<f64>, ConfigError> {
        let (value, line) = self.take(section, key)?;
        parse_matrix(&value).map_err(|msg| self.err(line, format!("{key}: {msg}")))
    }

    fn vector(&mut self, section: &str, key: &str) -> Result<DVector<f64>, ConfigError> {
        let m = self.matrix(section, key)?;
        if m.nrows() != 1 {
            return Err(ConfigError::DimensionMismatch {
                msg: format!("[{section}] {key}: expected a single bracketed row"),
            });
        }
        Ok(m.row(0).transpose())
    }

    fn scalar(&mut self, section: &str, key: &str) -> Result<(f64, usize), ConfigError> {
        let (value, line) = self.take(section, key)?;
        value
            .parse::<f64>()
            .map(|v| (v, line))
            .map_err(|_| self.err(line, format!("{key}: expected a number, got `{value}`")))
    }

    fn scalar_opt(&mut self, section: &str, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.take_opt(section, key) {
            None => Ok(None),
            Some((value, line)) => value
                .parse::<f64>()
                .map(Some)
                .map_err(|_| self.err(line, format!("{key}: expected a number, got `{value}`"))),
        }
    }

    fn integer(&mut self, section: &str, key: &str, min: usize) -> Result<usize, ConfigError> {
        let (value, line) = self.take(section, key)?;
        let v: usize = value
            .parse()
            .map_err(|_| self.err(line, format!("{key}: expected an integer, got `{value}`")))?;
        if v < min {
            return Err(self.err(line, format!("{key} must be >= {min}, got {v}")));
        }
        Ok(v)
    }

    fn boolean(&mut self, section: &str, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.take_opt(section, key) {
            None => Ok(default),
            Some((value, line)) => match value.as_str() {
                "true" => Ok(true),
                "false" => Ok(false),
                other => Err(self.err(line, format!("{key}: expected true/false, got `{other}`"))),
            },
        }
    }
}

fn parse_matrix(value: &str) -> Result<DMatrix<f64>, String> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rest = value.trim();
    while !rest.is_empty() {
        if !rest.starts_with('[') {
            return Err(format!("expected `[`, got `{rest}`"));
        }
        let close = rest.find(']').ok_or("unclosed `[`")?;
        let body = &rest[1..close];
        let mut row = Vec::new();
        for tok in body.split_whitespace() {
            row.push(tok.parse::<f64>().map_err(|_| format!("bad number `{tok}`"))?);
        }
        rows.push(row);
        rest = rest[close + 1..].trim_start();
    }
    if rows.is_empty() {
        return Ok(DMatrix::zeros(0, 0));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err("rows have unequal lengths".into());
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

/// Parses the sectioned text format. `origin` labels error messages (a file
/// path or a synthetic name).
pub fn parse_config(text: &str, origin: &str) -> Result<ProblemConfig, ConfigError> {
    let mut raw = parse_raw(text, origin)?;

    let adjacency = raw.matrix("graph", "adjacency")?;
    let l = adjacency.nrows();
    if l == 0 {
        return Err(ConfigError::Invalid { msg: "adjacency matrix is empty".into() });
    }

    let mut agents = Vec::with_capacity(l);
    for i in 1..=l {
        let s = format!("agent.{i}");
        if !raw.sections.iter().any(|(name, _)| name == &s) {
            return Err(ConfigError::Invalid {
                msg: format!("adjacency is {l}x{l} but section [{s}] is missing"),
            });
        }
        let a = raw.matrix(&s, "A")?;
        let b = raw.matrix(&s, "B")?;
        let q = raw.matrix(&s, "Q")?;
        let r = raw.matrix(&s, "R")?;
        let p = raw.matrix(&s, "P")?;
        let k = raw.matrix(&s, "K")?;
        let x_min = raw.vector(&s, "x_min")?;
        let x_max = raw.vector(&s, "x_max")?;
        let u_min = raw.vector(&s, "u_min")?;
        let u_max = raw.vector(&s, "u_max")?;
        let x0 = raw.vector(&s, "x0")?;
        let n = a.nrows();
        let m = b.ncols();
        let u_offset = match raw.take_opt(&s, "u_offset") {
            Some((value, line)) => {
                let mat = parse_matrix(&value).map_err(|msg| raw.err(line, format!("u_offset: {msg}")))?;
                if mat.nrows() != 1 {
                    return Err(raw.err(line, "u_offset: expected a single bracketed row".into()));
                }
                mat.row(0).transpose()
            }
            None => DVector::zeros(m),
        };
        let phi_x = match raw.take_opt("coupling", &format!("phi_x.{i}")) {
            Some((value, line)) => {
                let mat = parse_matrix(&value).map_err(|msg| raw.err(line, format!("phi_x.{i}: {msg}")))?;
                if mat.nrows() == 0 { DMatrix::zeros(0, n) } else { mat }
            }
            None => DMatrix::zeros(0, n),
        };
        let phi_u = match raw.take_opt("coupling", &format!("phi_u.{i}")) {
            Some((value, line)) => {
                let mat = parse_matrix(&value).map_err(|msg| raw.err(line, format!("phi_u.{i}: {msg}")))?;
                if mat.nrows() == 0 { DMatrix::zeros(0, m) } else { mat }
            }
            None => DMatrix::zeros(0, m),
        };
        agents.push(AgentConfig {
            a, b, q, r, p, k, x_min, x_max, u_min, u_max, x0, u_offset, phi_x, phi_u,
        });
    }

    let horizon = raw.integer("solver", "horizon", 1)?;
    let (eps, _) = raw.scalar("solver", "eps")?;
    let (rho, rho_line) = raw.scalar("solver", "rho")?;
    if !(rho > 0.0 && rho < 1.0) {
        return Err(raw.err(rho_line, format!("rho must lie in (0, 1), got {rho}")));
    }
    let alpha = raw.scalar_opt("solver", "alpha")?;
    let beta = raw.scalar_opt("solver", "beta")?;
    if alpha.is_some() != beta.is_some() {
        return Err(ConfigError::Invalid {
            msg: "alpha and beta overrides must be given together".into(),
        });
    }
    let project_lambda = raw.boolean("solver", "project_lambda", false)?;
    let use_terminal_set = raw.boolean("solver", "use_terminal_set", true)?;

    let steps = raw.integer("sim", "steps", 0)?;
    let warm_start = raw.boolean("sim", "warm_start", false)?;
    let terminal_law_after = raw.boolean("sim", "terminal_law_after", false)?;

    if let Some(((section, key), (_, line))) = raw.entries.iter().next() {
        return Err(ConfigError::Parse {
            origin: origin.into(),
            line: *line,
            msg: format!("unknown key `{key}` in [{section}]"),
        });
    }

    Ok(ProblemConfig {
        adjacency,
        agents,
        horizon,
        eps,
        rho,
        alpha,
        beta,
        project_lambda,
        use_terminal_set,
        steps,
        warm_start,
        terminal_law_after,
    })
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ProblemConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let config = parse_config(&text, &path.display().to_string())?;
    build_setup(&config)?; // full validation
    Ok(config)
}

// ---------------------------------------------------------------------------
// emission

fn fmt_matrix(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        if i > 0 {
            out.push(' ');
        }
        out.push('[');
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{:?}", m[(i, j)]);
        }
        out.push(']');
    }
    out
}

fn fmt_vector(v: &DVector<f64>) -> String {
    fmt_matrix(&DMatrix::from_fn(1, v.len(), |_, j| v[j]))
}

/// Writes the canonical text form; `parse_config` of the output reproduces
/// the config field-for-field.
pub fn emit_config(cfg: &ProblemConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "[graph]");
    let _ = writeln!(s, "adjacency = {}", fmt_matrix(&cfg.adjacency));
    for (i, ag) in cfg.agents.iter().enumerate() {
        let _ = writeln!(s, "\n[agent.{}]", i + 1);
        let _ = writeln!(s, "A = {}", fmt_matrix(&ag.a));
        let _ = writeln!(s, "B = {}", fmt_matrix(&ag.b));
        let _ = writeln!(s, "Q = {}", fmt_matrix(&ag.q));
        let _ = writeln!(s, "R = {}", fmt_matrix(&ag.r));
        let _ = writeln!(s, "P = {}", fmt_matrix(&ag.p));
        let _ = writeln!(s, "K = {}", fmt_matrix(&ag.k));
        let _ = writeln!(s, "x_min = {}", fmt_vector(&ag.x_min));
        let _ = writeln!(s, "x_max = {}", fmt_vector(&ag.x_max));
        let _ = writeln!(s, "u_min = {}", fmt_vector(&ag.u_min));
        let _ = writeln!(s, "u_max = {}", fmt_vector(&ag.u_max));
        let _ = writeln!(s, "x0 = {}", fmt_vector(&ag.x0));
        if ag.u_offset.iter().any(|&v| v != 0.0) {
            let _ = writeln!(s, "u_offset = {}", fmt_vector(&ag.u_offset));
        }
    }
    let _ = writeln!(s, "\n[coupling]");
    for (i, ag) in cfg.agents.iter().enumerate() {
        if ag.phi_x.nrows() > 0 {
            let _ = writeln!(s, "phi_x.{} = {}", i + 1, fmt_matrix(&ag.phi_x));
            let _ = writeln!(s, "phi_u.{} = {}", i + 1, fmt_matrix(&ag.phi_u));
        }
    }
    let _ = writeln!(s, "\n[solver]");
    let _ = writeln!(s, "horizon = {}", cfg.horizon);
    let _ = writeln!(s, "eps = {:?}", cfg.eps);
    let _ = writeln!(s, "rho = {:?}", cfg.rho);
    if let (Some(a), Some(b)) = (cfg.alpha, cfg.beta) {
        let _ = writeln!(s, "alpha = {a:?}");
        let _ = writeln!(s, "beta = {b:?}");
    }
    let _ = writeln!(s, "project_lambda = {}", cfg.project_lambda);
    let _ = writeln!(s, "use_terminal_set = {}", cfg.use_terminal_set);
    let _ = writeln!(s, "\n[sim]");
    let _ = writeln!(s, "steps = {}", cfg.steps);
    let _ = writeln!(s, "warm_start = {}", cfg.warm_start);
    let _ = writeln!(s, "terminal_law_after = {}", cfg.terminal_law_after);
    s
}

// ---------------------------------------------------------------------------
// problem assembly

/// Products of validation that the CLI reports alongside the runnable setup.
#[derive(Debug)]
pub struct BuildInfo {
    pub m_j: f64,
    pub l_j: f64,
    pub zeta_lo: f64,
    pub zeta_hi: f64,
    pub sigma_lo: f64,
    pub sigma_hi: f64,
    /// One certificate per agent (degree and coupling map may differ).
    pub certificates: Vec<ContractionCertificate>,
    pub certificate_valid: bool,
    /// Np exceeds the rank of G_i for some agent: the interval lower bound
    /// applies only on the row space and the direct test is authoritative.
    pub theta_rank_deficient: bool,
    /// Terminal levels (eta, eta_f) per agent when computable.
    pub terminal: Vec<Option<(f64, f64)>>,
    pub stepsizes_overridden: bool,
}

/// Validates the config end to end and assembles the runnable problem:
/// graph, plants (with terminal levels), condensed coupling, step sizes
/// (selected or taken from the override) and the contraction certificates.
pub fn build_setup(cfg: &ProblemConfig) -> Result<(MpcSetup, BuildInfo), ConfigError> {
    let graph = build_graph(cfg.adjacency.clone())?;
    let l = cfg.n_agents();

    let mut plants = Vec::with_capacity(l);
    for (i, ag) in cfg.agents.iter().enumerate() {
        let plant = AgentPlant::new(
            ag.a.clone(),
            ag.b.clone(),
            ag.x_min.clone(),
            ag.x_max.clone(),
            ag.u_min.clone(),
            ag.u_max.clone(),
            ag.q.clone(),
            ag.r.clone(),
            ag.p.clone(),
            ag.k.clone(),
        )
        .map_err(|e| ConfigError::Invalid { msg: format!("agent {}: {e}", i + 1) })?;
        if ag.x0.len() != plant.state_dim() {
            return Err(ConfigError::DimensionMismatch {
                msg: format!("agent {}: x0 has length {}, expected {}", i + 1, ag.x0.len(), plant.state_dim()),
            });
        }
        plants.push(plant);
    }

    let coupled = CoupledConstraint::new(
        cfg.agents.iter().map(|a| a.phi_x.clone()).collect(),
        cfg.agents.iter().map(|a| a.phi_u.clone()).collect(),
    )?;
    let has_coupling = coupled.p > 0;

    if has_coupling && l > 1 && !validate_connectivity(&graph) {
        return Err(ConfigError::Invalid {
            msg: "communication graph is not connected; consensus cannot run".into(),
        });
    }

    let condensed = condense_coupling(&plants, &coupled, cfg.horizon, cfg.eps)?;
    if has_coupling {
        condensed.check_rank()?;
    }

    // terminal levels feed both the polytope and the closed-loop monitors
    let mut terminal = Vec::with_capacity(l);
    for i in 0..l {
        match terminal_levels(&plants[i], &coupled, i, cfg.eps, cfg.horizon, l) {
            Ok((eta, eta_f)) => {
                plants[i] = plants[i]
                    .clone()
                    .with_terminal_levels(eta, eta_f)
                    .map_err(|e| ConfigError::Invalid { msg: format!("agent {}: {e}", i + 1) })?;
                terminal.push(Some((eta, eta_f)));
            }
            Err(e) if cfg.use_terminal_set => {
                return Err(ConfigError::Invalid { msg: format!("agent {}: {e}", i + 1) });
            }
            Err(_) => terminal.push(None),
        }
    }

    // cost curvature is state independent; probe it at the origin
    let probe = LocalSubproblem::build(
        &plants[0],
        &condensed,
        0,
        &DVector::zeros(plants[0].state_dim()),
        false,
    )
    .map_err(|e| ConfigError::Invalid { msg: e.to_string() })?;
    let (m_j, l_j) = (probe.m_j, probe.l_j);

    let (sigma_lo, sigma_hi, params, certificates, theta_rank_deficient) = if has_coupling {
        let (sigma_lo, sigma_hi) = theta_bounds(m_j, l_j, condensed.zeta_lo, condensed.zeta_hi)?;
        let mut params = match (cfg.alpha, cfg.beta) {
            (Some(a), Some(b)) => PdgParams {
                alpha: a,
                beta: b,
                rho: cfg.rho,
                tau: rate_tau(a, b, cfg.rho, graph.degrees.as_slice())?,
                k_bar: 0,
                project_lambda: cfg.project_lambda,
            },
            _ => select_stepsizes(sigma_lo, sigma_hi, graph.degrees.as_slice(), cfg.rho)?,
        };
        params.project_lambda = cfg.project_lambda;

        let mut certificates = Vec::with_capacity(l);
        let mut rank_deficient = false;
        if graph.degrees.iter().all(|&d| d > 0.0) {
            let h_inv_scale = |scale: f64, g: &DMatrix<f64>| g * g.transpose() / scale;
            let h_chol = probe.h_cost.clone().cholesky().expect("H positive definite");
            for i in 0..l {
                let g_i = &condensed.g_mats[i];
                let np = g_i.nrows();
                let rank_ok = condensed.zeta_lo_per_agent[i] > 1e-10 && np <= g_i.ncols();
                rank_deficient |= !rank_ok;
                let theta_exact = g_i * h_chol.solve(&g_i.transpose());
                let samples = vec![
                    h_inv_scale(m_j, g_i),
                    h_inv_scale(l_j, g_i),
                    (&theta_exact + theta_exact.transpose()).scale(0.5),
                ];
                certificates.push(build_certificate(
                    params.alpha,
                    params.beta,
                    graph.degrees[i],
                    cfg.rho,
                    sigma_lo,
                    sigma_hi,
                    &samples,
                )?);
            }
        }
        (sigma_lo, sigma_hi, params, certificates, rank_deficient)
    } else {
        // no coupling rows: the PDGD never runs; fill inert parameters
        let params = PdgParams {
            alpha: cfg.alpha.unwrap_or(0.0),
            beta: cfg.beta.unwrap_or(0.0),
            rho: cfg.rho,
            tau: 1.0,
            k_bar: 0,
            project_lambda: cfg.project_lambda,
        };
        (0.0, 0.0, params, Vec::new(), false)
    };

    let certificate_valid = !certificates.is_empty() && certificates.iter().all(|c| c.valid);
    let info = BuildInfo {
        m_j,
        l_j,
        zeta_lo: condensed.zeta_lo,
        zeta_hi: condensed.zeta_hi,
        sigma_lo,
        sigma_hi,
        certificates,
        certificate_valid,
        theta_rank_deficient,
        terminal,
        stepsizes_overridden: cfg.alpha.is_some(),
    };
    let setup = MpcSetup {
        plants,
        graph,
        coupled,
        condensed,
        params,
        use_terminal_set: cfg.use_terminal_set,
        warm_start: cfg.warm_start,
        terminal_law_after: cfg.terminal_law_after,
    };
    Ok((setup, info))
}

fn rate_tau(alpha: f64, beta: f64, rho: f64, degrees: &[f64]) -> Result<f64, ConfigError> {
    let d_min = degrees.iter().cloned().fold(f64::INFINITY, f64::min);
    let d_max = degrees.iter().cloned().fold(0.0_f64, f64::max);
    if d_max > 0.0 && rho >= 1.0 / (alpha * beta * d_max) {
        return Err(ConfigError::Invalid {
            msg: format!("rho = {rho} must be below 1/(alpha*beta*d_max) = {}", 1.0 / (alpha * beta * d_max)),
        });
    }
    let t2 = 1.0 - rho * alpha * beta * d_min;
    if !(t2 > 0.0 && t2 < 1.0) {
        return Err(ConfigError::Invalid {
            msg: format!("tau^2 = {t2} outside (0, 1) for the given alpha/beta/rho"),
        });
    }
    Ok(t2.sqrt())
}

/// The four-tank benchmark: ring topology, identical tanks, a shared bound on
/// the total inflow, horizon 8. eps defaults to 0.02 (a value as large as 0.1
/// would violate eps < 1/(N*l) = 0.03125). The
/// terminal-set rows are off because the initial levels cannot reach the
/// terminal region in 8 steps under |u| <= 0.3 (the constrained problem would
/// be infeasible at t = 0), and the multiplier projection is on: without it
/// the conserved consensus variables force the coupled rows to equality even
/// once slack, which measurably breaks the closed-loop cost decrease.
pub fn watertank() -> ProblemConfig {
    let a = DMatrix::from_row_slice(2, 2, &[0.8750, 0.1250, 0.1250, 0.8047]);
    let b = DMatrix::from_row_slice(2, 1, &[0.3, 0.0]);
    let q = DMatrix::identity(2, 2) * 10.0;
    let r = DMatrix::from_row_slice(1, 1, &[1.0]);
    let p = DMatrix::from_row_slice(2, 2, &[31.7459, 9.8300, 9.8300, 56.3415]);
    let k = DMatrix::from_row_slice(1, 2, &[-1.7916, -0.7337]);
    let x0s = [
        [-0.2264, -0.3981],
        [0.4520, -0.3689],
        [-0.5311, -0.2828],
        [-0.4397, -0.4897],
    ];
    let agents = x0s
        .iter()
        .map(|x0| AgentConfig {
            a: a.clone(),
            b: b.clone(),
            q: q.clone(),
            r: r.clone(),
            p: p.clone(),
            k: k.clone(),
            x_min: DVector::from_row_slice(&[-1.0, -0.64]),
            x_max: DVector::from_row_slice(&[1.0, 0.64]),
            u_min: DVector::from_row_slice(&[-0.3]),
            u_max: DVector::from_row_slice(&[0.3]),
            x0: DVector::from_row_slice(x0),
            u_offset: DVector::from_row_slice(&[0.3]),
            phi_x: DMatrix::zeros(1, 2),
            phi_u: DMatrix::from_row_slice(1, 1, &[1.25]),
        })
        .collect();
    ProblemConfig {
        adjacency: DMatrix::from_row_slice(4, 4, &[
            0., 1., 0., 1.,
            1., 0., 1., 0.,
            0., 1., 0., 1.,
            1., 0., 1., 0.,
        ]),
        agents,
        horizon: 8,
        eps: 0.02,
        rho: 0.5,
        alpha: None,
        beta: None,
        project_lambda: true,
        use_terminal_set: false,
        steps: 60,
        warm_start: false,
        terminal_law_after: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn watertank_roundtrip() {
        let cfg = watertank();
        let text = emit_config(&cfg);
        let parsed = parse_config(&text, "emitted").unwrap();
        assert_eq!(parsed, cfg);
    }

    const WATERTANK_PATH: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../watertank.cfg");

    /// Regenerates the bundled file: `cargo test -p dmpc write_watertank -- --ignored`
    #[test]
    #[ignore]
    fn write_watertank_cfg() {
        std::fs::write(WATERTANK_PATH, emit_config(&watertank())).unwrap();
    }

    #[test]
    fn bundled_watertank_file_in_sync() {
        let text = std::fs::read_to_string(WATERTANK_PATH).expect("watertank.cfg bundled at repo root");
        assert_eq!(text, emit_config(&watertank()));
        let cfg = parse_config(&text, WATERTANK_PATH).unwrap();
        assert_eq!(cfg, watertank());
    }

    #[test]
    fn watertank_matches_model() {
        let cfg = watertank();
        assert_abs_diff_eq!(cfg.agents[0].a[(0, 0)], 0.8750, epsilon = 0.0);
        assert_abs_diff_eq!(cfg.agents[0].a[(1, 1)], 0.8047, epsilon = 0.0);
        assert_abs_diff_eq!(cfg.agents[0].b[(0, 0)], 0.3, epsilon = 0.0);
        let (setup, info) = build_setup(&cfg).unwrap();
        assert_eq!(setup.n_agents(), 4);
        assert!(info.certificate_valid);
        assert!(!info.theta_rank_deficient);
        // terminal levels computed even though the rows are off
        for t in &info.terminal {
            let (eta, eta_f) = t.unwrap();
            assert!(eta > 0.0 && eta_f < eta);
            assert_abs_diff_eq!(eta_f / eta, 0.9, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_horizon_is_parse_error() {
        let cfg = watertank();
        let text = emit_config(&cfg).replace("horizon = 8", "horizon = 0");
        match parse_config(&text, "test") {
            Err(ConfigError::Parse { msg, .. }) => assert!(msg.contains(">= 1"), "{msg}"),
            other => panic!("expected ParseError, got {other:?}"),
        }
    }

    #[test]
    fn invalid_eps_names_the_bound() {
        let cfg = watertank();
        let text = emit_config(&cfg).replace("eps = 0.02", "eps = 0.1");
        let parsed = parse_config(&text, "test").unwrap();
        match build_setup(&parsed) {
            Err(ConfigError::EpsOutOfRange { eps, bound }) => {
                assert_eq!(eps, 0.1);
                assert_abs_diff_eq!(bound, 0.03125, epsilon = 1e-15);
            }
            other => panic!("expected EpsOutOfRange, got {other:?}"),
        }
    }

    #[test]
    fn unknown_key_rejected() {
        let text = format!("{}\nbogus = 1\n", emit_config(&watertank()));
        assert!(matches!(parse_config(&text, "test"), Err(ConfigError::Parse { .. })));
    }

    #[test]
    fn comments_and_infinities_parse() {
        let text = "\
[graph]
adjacency = [0] # single agent
[agent.1]
A = [1.0]
B = [1.0]
Q = [1.0]
R = [1.0]
P = [1.6180339887498949]
K = [-0.6180339887498949]
x_min = [-inf]
x_max = [inf]
u_min = [-1.0]
u_max = [1.0]
x0 = [0.5]
[solver]
horizon = 2
eps = 0.2
rho = 0.5
use_terminal_set = false
[sim]
steps = 3
";
        let cfg = parse_config(text, "inline").unwrap();
        assert_eq!(cfg.n_agents(), 1);
        assert!(cfg.agents[0].x_max[0].is_infinite());
        // no coupling rows at all: builds with inert step sizes
        let (setup, info) = build_setup(&cfg).unwrap();
        assert_eq!(setup.coupled.p, 0);
        assert!(info.certificates.is_empty());
    }

    #[test]
    fn disconnected_graph_with_coupling_rejected() {
        let mut cfg = watertank();
        cfg.adjacency = DMatrix::zeros(4, 4);
        match build_setup(&cfg) {
            Err(ConfigError::Invalid { msg }) => assert!(msg.contains("not connected")),
            other => panic!("expected Invalid, got {other:?}"),
        }
    }

    #[test]
    fn override_stepsizes_are_checked() {
        let mut cfg = watertank();
        cfg.alpha = Some(0.0177);
        cfg.beta = Some(0.0067);
        let (setup, info) = build_setup(&cfg).unwrap();
        assert!(info.stepsizes_overridden);
        assert_abs_diff_eq!(setup.params.alpha, 0.0177, epsilon = 0.0);
        assert!(info.certificate_valid);
    }
}
