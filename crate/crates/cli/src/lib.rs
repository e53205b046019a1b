//! Config parsing and experiment dispatch for the `sdelab` binary.
//!
//! Configs are JSON with unknown keys rejected and a mandatory `seed`; all
//! other sections have defaults. Every run first writes the fully resolved
//! configuration (`resolved-config.json`) into the output directory, which
//! is sufficient to reproduce the run bit-identically. Nothing is written
//! when parsing fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use sdelab_core::chains::{
    pushforward_density_1d, sga_trajectory, sgd_trajectory, write_trajectory_csv, ChainConfig,
};
use sdelab_core::fields::bump;
use sdelab_core::grid::{DensityGrid, Grid1d};
use sdelab_core::harness::{
    contraction_and_confinement_suite, run_weak_error, taylor_remainder_study, Evaluation,
    ExperimentPlan, OracleMode, PlanTarget, SuiteConfig,
};
use sdelab_core::problems::{DataModel, LossProblem};
use sdelab_core::sde::{ApproxOrder, NoiseModel};
use sdelab_core::sphere::SpherePoint;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("config parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Core(#[from] sdelab_core::Error),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    /// Process exit status: 1 for errors (2, reserved for invariant-suite
    /// failures, is produced by dispatch, not by errors).
    pub fn exit_code(&self) -> i32 {
        1
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

// ---- configuration schema ----------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    SgdRun,
    PcaRun,
    WeakOrder,
    TaylorStudy,
    InvariantSuite,
    DensityPush,
}

impl std::fmt::Display for Subcommand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Subcommand::SgdRun => "sgd-run",
            Subcommand::PcaRun => "pca-run",
            Subcommand::WeakOrder => "weak-order",
            Subcommand::TaylorStudy => "taylor-study",
            Subcommand::InvariantSuite => "invariant-suite",
            Subcommand::DensityPush => "density-push",
        };
        f.write_str(name)
    }
}

/// Loss-family section; mirrors the built-in constructors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProblemConfig {
    QuadraticSum {
        centers: Vec<Vec<f64>>,
        curvatures: Vec<Vec<Vec<f64>>>,
        #[serde(default)]
        linears: Option<Vec<Vec<f64>>>,
        weights: Vec<f64>,
    },
    DoubleWell1d {
        tilts: Vec<f64>,
        weights: Vec<f64>,
    },
    Confining {
        gradient_scale: f64,
        tilts: Vec<Vec<f64>>,
        weights: Vec<f64>,
    },
}

impl Default for ProblemConfig {
    /// The two-atom quadratic used throughout the order measurements.
    fn default() -> Self {
        ProblemConfig::QuadraticSum {
            centers: vec![vec![1.0], vec![-1.0]],
            curvatures: vec![vec![vec![1.0]], vec![vec![1.0]]],
            linears: None,
            weights: vec![0.5, 0.5],
        }
    }
}

impl ProblemConfig {
    pub fn build(&self) -> Result<LossProblem> {
        let problem = match self {
            ProblemConfig::QuadraticSum {
                centers,
                curvatures,
                linears,
                weights,
            } => {
                let n = centers.len();
                let dim = centers.first().map_or(0, |c| c.len());
                let centers = centers
                    .iter()
                    .map(|c| DVector::from_vec(c.clone()))
                    .collect();
                let curvatures = curvatures
                    .iter()
                    .map(|m| {
                        let flat: Vec<f64> = m.iter().flatten().copied().collect();
                        nalgebra::DMatrix::from_row_slice(dim, dim, &flat)
                    })
                    .collect();
                let linears = match linears {
                    Some(ls) => ls.iter().map(|g| DVector::from_vec(g.clone())).collect(),
                    None => vec![DVector::zeros(dim); n],
                };
                LossProblem::quadratic_sum(centers, curvatures, linears, weights.clone())
            }
            ProblemConfig::DoubleWell1d { tilts, weights } => {
                LossProblem::double_well_1d(tilts.clone(), weights.clone())
            }
            ProblemConfig::Confining {
                gradient_scale,
                tilts,
                weights,
            } => LossProblem::confining(
                *gradient_scale,
                tilts.iter().map(|t| DVector::from_vec(t.clone())).collect(),
                weights.clone(),
            ),
        }?;
        Ok(problem)
    }
}

/// Finite-support data model section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub atoms: Vec<Vec<f64>>,
    pub probs: Vec<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            atoms: vec![vec![1.0, 0.0], vec![-0.5, 0.5], vec![-0.5, -0.5]],
            probs: vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        }
    }
}

impl ModelConfig {
    pub fn build(&self) -> Result<DataModel> {
        Ok(DataModel::new(
            self.atoms.iter().map(|a| DVector::from_vec(a.clone())).collect(),
            self.probs.clone(),
        )?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSection {
    #[serde(default = "defaults::eta")]
    pub eta: f64,
    #[serde(default = "defaults::chain_steps")]
    pub n_steps: usize,
    /// Start state: a point in R^d (sgd-run) or a direction to normalize
    /// (pca-run).
    #[serde(default = "defaults::start")]
    pub start: Vec<f64>,
    #[serde(default = "defaults::one")]
    pub trajectories: usize,
}

impl Default for ChainSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpaceChoice {
    Euclidean,
    Circle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseChoice {
    GradientVariance,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EvaluationChoice {
    Grid,
    MonteCarlo { samples: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OracleChoice {
    Pde,
    FineSde { substep_divisor: f64, samples: usize },
}

/// Initial test function for expectation propagation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TestFunctionChoice {
    /// `exp(-(x - center)^2 / (2 width^2))` on the line.
    Gaussian { center: f64, width: f64 },
    /// Compactly supported mollifier bump on the line.
    Bump { center: f64, halfwidth: f64 },
    /// Truncated Fourier series in the angle (circle runs).
    Fourier { cos: Vec<f64>, sin: Vec<f64> },
}

impl TestFunctionChoice {
    fn build(&self, space: SpaceChoice) -> Result<Arc<dyn Fn(f64) -> f64 + Send + Sync>> {
        match (self, space) {
            (TestFunctionChoice::Gaussian { center, width }, SpaceChoice::Euclidean) => {
                if !(*width > 0.0) {
                    return Err(CliError::Config("gaussian width must be positive".into()));
                }
                let (c, w) = (*center, *width);
                Ok(Arc::new(move |x: f64| {
                    (-(x - c) * (x - c) / (2.0 * w * w)).exp()
                }))
            }
            (TestFunctionChoice::Bump { center, halfwidth }, SpaceChoice::Euclidean) => {
                if !(*halfwidth > 0.0) {
                    return Err(CliError::Config("bump halfwidth must be positive".into()));
                }
                let b = bump(*center, *halfwidth);
                Ok(Arc::new(b))
            }
            (TestFunctionChoice::Fourier { cos, sin }, SpaceChoice::Circle) => {
                if cos.len() != sin.len() {
                    return Err(CliError::Config(
                        "fourier cos/sin coefficient lists must have equal length".into(),
                    ));
                }
                let (a, b) = (cos.clone(), sin.clone());
                Ok(Arc::new(move |t: f64| {
                    a.iter()
                        .zip(&b)
                        .enumerate()
                        .map(|(i, (ak, bk))| {
                            let k = (i + 1) as f64;
                            ak * (k * t).cos() + bk * (k * t).sin()
                        })
                        .sum()
                }))
            }
            (choice, space) => Err(CliError::Config(format!(
                "test function {choice:?} does not fit the {space:?} space"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSection {
    #[serde(default = "defaults::space")]
    pub space: SpaceChoice,
    #[serde(default = "defaults::order")]
    pub order: u8,
    #[serde(default = "defaults::noise")]
    pub noise: NoiseChoice,
    #[serde(default = "defaults::etas")]
    pub etas: Vec<f64>,
    #[serde(default = "defaults::one_f")]
    pub horizon: f64,
    #[serde(default)]
    pub grid_cells: Option<usize>,
    #[serde(default)]
    pub oracle_cells: Option<usize>,
    /// Truncated interval for Euclidean runs.
    #[serde(default = "defaults::domain")]
    pub domain: [f64; 2],
    #[serde(default = "defaults::evaluation")]
    pub evaluation: EvaluationChoice,
    #[serde(default = "defaults::oracle")]
    pub oracle: OracleChoice,
    #[serde(default)]
    pub test_function: Option<TestFunctionChoice>,
}

impl Default for PlanSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaylorSection {
    #[serde(default = "defaults::pairs")]
    pub pairs: usize,
    #[serde(default = "defaults::eta_top")]
    pub eta_top: f64,
    #[serde(default = "defaults::halvings")]
    pub halvings: usize,
}

impl Default for TaylorSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteSection {
    #[serde(default = "defaults::eta")]
    pub eta: f64,
    #[serde(default = "defaults::suite_phis")]
    pub test_functions: usize,
    #[serde(default = "defaults::suite_apps")]
    pub applications: usize,
    #[serde(default = "defaults::grid")]
    pub grid_cells: usize,
    #[serde(default = "defaults::radius")]
    pub radius: f64,
    #[serde(default = "defaults::suite_traj")]
    pub trajectories: usize,
    #[serde(default = "defaults::suite_steps")]
    pub steps_per_trajectory: usize,
}

impl Default for SuiteSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySection {
    #[serde(default = "defaults::density_eta")]
    pub eta: f64,
    #[serde(default = "defaults::density_steps")]
    pub steps: usize,
    #[serde(default = "defaults::grid")]
    pub grid_cells: usize,
    #[serde(default = "defaults::domain")]
    pub domain: [f64; 2],
    #[serde(default = "defaults::bump_center")]
    pub bump_center: f64,
    #[serde(default = "defaults::bump_halfwidth")]
    pub bump_halfwidth: f64,
}

impl Default for DensitySection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

mod defaults {
    use super::*;

    pub fn eta() -> f64 {
        0.1
    }
    pub fn density_eta() -> f64 {
        0.05
    }
    pub fn chain_steps() -> usize {
        1000
    }
    pub fn density_steps() -> usize {
        10
    }
    pub fn start() -> Vec<f64> {
        vec![0.5]
    }
    pub fn one() -> usize {
        1
    }
    pub fn one_f() -> f64 {
        1.0
    }
    pub fn space() -> SpaceChoice {
        SpaceChoice::Euclidean
    }
    pub fn order() -> u8 {
        1
    }
    pub fn noise() -> NoiseChoice {
        NoiseChoice::GradientVariance
    }
    pub fn etas() -> Vec<f64> {
        vec![0.2, 0.1, 0.05, 0.025]
    }
    pub fn domain() -> [f64; 2] {
        [-6.0, 6.0]
    }
    pub fn evaluation() -> EvaluationChoice {
        EvaluationChoice::Grid
    }
    pub fn oracle() -> OracleChoice {
        OracleChoice::Pde
    }
    pub fn pairs() -> usize {
        10
    }
    pub fn eta_top() -> f64 {
        0.02
    }
    pub fn halvings() -> usize {
        3
    }
    pub fn grid() -> usize {
        4096
    }
    pub fn radius() -> f64 {
        2.0
    }
    pub fn suite_phis() -> usize {
        20
    }
    pub fn suite_apps() -> usize {
        10
    }
    pub fn suite_traj() -> usize {
        100
    }
    pub fn suite_steps() -> usize {
        10_000
    }
    pub fn bump_center() -> f64 {
        0.0
    }
    pub fn bump_halfwidth() -> f64 {
        1.2
    }
}

/// Top-level run configuration. `seed` is mandatory; everything else has
/// defaults that are echoed back in `resolved-config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subcommand: Option<Subcommand>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<ChainSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<PlanSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taylor: Option<TaylorSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suite: Option<SuiteSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<DensitySection>,
}

/// Parse a config document; unknown keys, type mismatches, and a missing
/// seed are reported with line/column context.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let config: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    validate(&config)?;
    Ok(config)
}

/// Serialize a config; `parse_config(emit_config(c)) == c`.
pub fn emit_config(config: &RunConfig) -> String {
    serde_json::to_string_pretty(config).expect("configs are serializable")
}

fn require_positive(value: f64, what: &str) -> Result<()> {
    if !(value > 0.0) || !value.is_finite() {
        return Err(CliError::Config(format!("{what} must be positive, got {value}")));
    }
    Ok(())
}

fn validate(config: &RunConfig) -> Result<()> {
    if let Some(plan) = &config.plan {
        for &eta in &plan.etas {
            require_positive(eta, "plan.etas entries")?;
        }
        require_positive(plan.horizon, "plan.horizon")?;
        if !(plan.order == 1 || plan.order == 2) {
            return Err(CliError::Config(format!(
                "plan.order must be 1 or 2, got {}",
                plan.order
            )));
        }
        if !(plan.domain[0] < plan.domain[1]) {
            return Err(CliError::Config("plan.domain must be increasing".into()));
        }
    }
    if let Some(chain) = &config.chain {
        require_positive(chain.eta, "chain.eta")?;
        if chain.trajectories == 0 {
            return Err(CliError::Config("chain.trajectories must be at least 1".into()));
        }
    }
    if let Some(t) = &config.taylor {
        require_positive(t.eta_top, "taylor.eta_top")?;
    }
    if let Some(s) = &config.suite {
        require_positive(s.eta, "suite.eta")?;
        require_positive(s.radius, "suite.radius")?;
    }
    if let Some(d) = &config.density {
        require_positive(d.eta, "density.eta")?;
        require_positive(d.bump_halfwidth, "density.bump_halfwidth")?;
        if !(d.domain[0] < d.domain[1]) {
            return Err(CliError::Config("density.domain must be increasing".into()));
        }
    }
    Ok(())
}

// ---- dispatch ------------------------------------------------------------

/// Outcome of a dispatched run: process exit status and the one-line
/// summary printed to standard output.
pub struct RunOutcome {
    pub exit_code: i32,
    pub summary: String,
}

/// Resolve defaults for `subcommand`, filling in any missing sections the
/// experiment needs, and pin the output directory and seed overrides.
pub fn resolve(
    mut config: RunConfig,
    subcommand: Subcommand,
    out_override: Option<&Path>,
    seed_override: Option<u64>,
) -> Result<RunConfig> {
    match config.subcommand {
        None => config.subcommand = Some(subcommand),
        Some(declared) if declared == subcommand => {}
        Some(declared) => {
            return Err(CliError::Config(format!(
                "config declares subcommand {declared} but {subcommand} was invoked"
            )));
        }
    }
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    if let Some(dir) = out_override {
        config.output_dir = Some(dir.to_string_lossy().into_owned());
    } else if config.output_dir.is_none() {
        config.output_dir = Some("sdelab-out".into());
    }
    match subcommand {
        Subcommand::SgdRun => {
            config.problem.get_or_insert_with(Default::default);
            config.chain.get_or_insert_with(Default::default);
        }
        Subcommand::PcaRun => {
            config.model.get_or_insert_with(Default::default);
            let chain = config.chain.get_or_insert_with(Default::default);
            if chain.start.len() < 2 {
                chain.start = vec![1.0, 0.0];
            }
        }
        Subcommand::WeakOrder => {
            let plan = config.plan.get_or_insert_with(Default::default);
            match plan.space {
                SpaceChoice::Euclidean => {
                    config.problem.get_or_insert_with(Default::default);
                    plan.grid_cells.get_or_insert(4096);
                }
                SpaceChoice::Circle => {
                    config.model.get_or_insert_with(Default::default);
                    plan.grid_cells.get_or_insert(2048);
                }
            }
            let cells = plan.grid_cells.expect("filled above");
            plan.oracle_cells.get_or_insert(cells);
            if plan.test_function.is_none() {
                plan.test_function = Some(match plan.space {
                    SpaceChoice::Euclidean => TestFunctionChoice::Gaussian {
                        center: 0.0,
                        width: 0.5,
                    },
                    SpaceChoice::Circle => TestFunctionChoice::Fourier {
                        cos: vec![1.0, 0.0],
                        sin: vec![0.0, 0.4],
                    },
                });
            }
        }
        Subcommand::TaylorStudy => {
            config.model.get_or_insert_with(Default::default);
            config.taylor.get_or_insert_with(Default::default);
        }
        Subcommand::InvariantSuite => {
            config.suite.get_or_insert_with(Default::default);
            config.model.get_or_insert_with(Default::default);
            if config.problem.is_none() {
                // The confinement row needs closed-form constants, so the
                // suite defaults to the confining family.
                config.problem = Some(ProblemConfig::Confining {
                    gradient_scale: 1.0,
                    tilts: vec![vec![0.1], vec![-0.1]],
                    weights: vec![0.5, 0.5],
                });
            }
        }
        Subcommand::DensityPush => {
            config.problem.get_or_insert_with(Default::default);
            config.density.get_or_insert_with(Default::default);
        }
    }
    validate(&config)?;
    Ok(config)
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(io_err(&path))?;
    Ok(())
}

/// Run a resolved configuration: write `resolved-config.json` plus the
/// experiment artifacts and return the exit status and summary line.
pub fn dispatch(config: &RunConfig) -> Result<RunOutcome> {
    let subcommand = config
        .subcommand
        .ok_or_else(|| CliError::Config("dispatch needs a resolved subcommand".into()))?;
    let out_dir = PathBuf::from(
        config
            .output_dir
            .as_ref()
            .ok_or_else(|| CliError::Config("dispatch needs a resolved output directory".into()))?,
    );
    fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;
    write_file(&out_dir, "resolved-config.json", &emit_config(config))?;

    match subcommand {
        Subcommand::SgdRun => run_sgd(config, &out_dir),
        Subcommand::PcaRun => run_pca(config, &out_dir),
        Subcommand::WeakOrder => run_weak_order(config, &out_dir),
        Subcommand::TaylorStudy => run_taylor(config, &out_dir),
        Subcommand::InvariantSuite => run_suite(config, &out_dir),
        Subcommand::DensityPush => run_density(config, &out_dir),
    }
}

fn run_sgd(config: &RunConfig, out_dir: &Path) -> Result<RunOutcome> {
    let problem = config.problem.as_ref().expect("resolved").build()?;
    let section = config.chain.as_ref().expect("resolved");
    if section.start.len() != problem.dim() {
        return Err(CliError::Config(format!(
            "chain.start has dimension {}, problem has {}",
            section.start.len(),
            problem.dim()
        )));
    }
    let chain = ChainConfig::new(section.eta, section.n_steps, config.seed)?;
    let mut last = DVector::zeros(problem.dim());
    for j in 0..section.trajectories {
        let traj = sgd_trajectory(
            &problem,
            &chain,
            DVector::from_vec(section.start.clone()),
            j as u64,
        );
        last = traj.last().unwrap().clone();
        let name = trajectory_file_name(j, section.trajectories);
        let path = out_dir.join(name);
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        write_trajectory_csv(std::io::BufWriter::new(file), section.eta, &traj)
            .map_err(io_err(&path))?;
    }
    Ok(RunOutcome {
        exit_code: 0,
        summary: format!(
            "sgd-run: {} trajectories of {} steps (eta {}), final state of last trajectory {:?}",
            section.trajectories,
            section.n_steps,
            section.eta,
            last.as_slice()
        ),
    })
}

fn run_pca(config: &RunConfig, out_dir: &Path) -> Result<RunOutcome> {
    let model = config.model.as_ref().expect("resolved").build()?;
    let section = config.chain.as_ref().expect("resolved");
    let w0 = SpherePoint::normalize(&DVector::from_vec(section.start.clone()))?;
    if w0.dim() != model.dim() {
        return Err(CliError::Config(format!(
            "chain.start has dimension {}, model has {}",
            w0.dim(),
            model.dim()
        )));
    }
    let chain = ChainConfig::new(section.eta, section.n_steps, config.seed)?;
    // Alignment with the top covariance eigenvector, for the summary line.
    let eig = model.covariance().clone().symmetric_eigen();
    let top = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| eig.eigenvectors.column(i).into_owned())
        .unwrap();
    let mut alignment = 0.0;
    for j in 0..section.trajectories {
        let traj = sga_trajectory(&model, &chain, w0.clone(), j as u64)?;
        let states: Vec<DVector<f64>> =
            traj.iter().map(|w| w.as_vector().clone()).collect();
        alignment = traj.last().unwrap().as_vector().dot(&top).abs();
        let name = trajectory_file_name(j, section.trajectories);
        let path = out_dir.join(name);
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        write_trajectory_csv(std::io::BufWriter::new(file), section.eta, &states)
            .map_err(io_err(&path))?;
    }
    Ok(RunOutcome {
        exit_code: 0,
        summary: format!(
            "pca-run: {} trajectories of {} steps (eta {}), |w . v_top| = {alignment:.6}",
            section.trajectories, section.n_steps, section.eta
        ),
    })
}

fn trajectory_file_name(index: usize, total: usize) -> String {
    if total == 1 {
        "trajectory.csv".into()
    } else {
        format!("trajectory-{index:04}.csv")
    }
}

fn run_weak_order(config: &RunConfig, out_dir: &Path) -> Result<RunOutcome> {
    let section = config.plan.as_ref().expect("resolved");
    let target = match section.space {
        SpaceChoice::Euclidean => PlanTarget::Euclidean1d {
            problem: config.problem.as_ref().expect("resolved").build()?,
            lo: section.domain[0],
            hi: section.domain[1],
        },
        SpaceChoice::Circle => PlanTarget::Circle {
            model: config.model.as_ref().expect("resolved").build()?,
        },
    };
    let plan = ExperimentPlan {
        target,
        order: if section.order == 1 {
            ApproxOrder::First
        } else {
            ApproxOrder::Second
        },
        noise: match section.noise {
            NoiseChoice::GradientVariance => NoiseModel::GradientVariance,
            NoiseChoice::Zero => NoiseModel::Zero,
        },
        etas: section.etas.clone(),
        horizon: section.horizon,
        grid_cells: section.grid_cells.expect("resolved"),
        oracle_cells: section.oracle_cells.expect("resolved"),
        evaluation: match section.evaluation {
            EvaluationChoice::Grid => Evaluation::GridDeterministic,
            EvaluationChoice::MonteCarlo { samples } => Evaluation::MonteCarlo { samples },
        },
        oracle: match section.oracle {
            OracleChoice::Pde => OracleMode::Pde,
            OracleChoice::FineSde {
                substep_divisor,
                samples,
            } => OracleMode::FineSde {
                substep_divisor,
                samples,
            },
        },
        test_function: section
            .test_function
            .as_ref()
            .expect("resolved")
            .build(section.space)?,
        seed: config.seed,
    };
    let report = run_weak_error(&plan)?;
    write_file(
        out_dir,
        "report.json",
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    write_file(out_dir, "report.txt", &report.text_table())?;
    write_file(out_dir, "errors.csv", &report.csv_pairs())?;
    let summary = match &report.fit {
        Some(fit) => format!(
            "weak-order: {} order {} slope {:.4} +- {:.4} (residual {:.4}, {} points)",
            report.space, report.order, fit.slope, fit.ci_halfwidth, fit.residual, fit.points_used
        ),
        None => format!(
            "weak-order: {} order {} produced no fit ({} warnings)",
            report.space,
            report.order,
            report.warnings.len()
        ),
    };
    Ok(RunOutcome {
        exit_code: 0,
        summary,
    })
}

fn run_taylor(config: &RunConfig, out_dir: &Path) -> Result<RunOutcome> {
    let model = config.model.as_ref().expect("resolved").build()?;
    let section = config.taylor.as_ref().expect("resolved");
    let study = taylor_remainder_study(
        &model,
        section.pairs,
        section.eta_top,
        section.halvings,
        config.seed,
    )?;
    write_file(
        out_dir,
        "taylor.json",
        &serde_json::to_string_pretty(&study).expect("study serializes"),
    )?;
    write_file(out_dir, "taylor.txt", &study.text_table())?;
    let mut csv = String::from("kind,dim,pair,ratio\n");
    for (kind, rows) in [("perturbed-move", &study.perturbation_rows), ("one-step", &study.one_step_rows)] {
        for row in rows.iter() {
            for r in &row.ratios {
                csv.push_str(&format!("{kind},{},{},{r:.16e}\n", row.dim, row.pair));
            }
        }
    }
    write_file(out_dir, "ratios.csv", &csv)?;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for r in study.all_ratios() {
        lo = lo.min(r);
        hi = hi.max(r);
    }
    Ok(RunOutcome {
        exit_code: 0,
        summary: format!(
            "taylor-study: {} pairs, remainder ratios in [{lo:.3}, {hi:.3}] (cubic decay ~ 8)",
            section.pairs
        ),
    })
}

fn run_suite(config: &RunConfig, out_dir: &Path) -> Result<RunOutcome> {
    let problem = config.problem.as_ref().expect("resolved").build()?;
    let model = config.model.as_ref().expect("resolved").build()?;
    let section = config.suite.as_ref().expect("resolved");
    let cfg = SuiteConfig {
        eta: section.eta,
        seed: config.seed,
        test_functions: section.test_functions,
        applications: section.applications,
        grid_cells: section.grid_cells,
        radius: section.radius,
        trajectories: section.trajectories,
        steps_per_trajectory: section.steps_per_trajectory,
    };
    let report = contraction_and_confinement_suite(&problem, &model, &cfg)?;
    write_file(
        out_dir,
        "suite.json",
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    write_file(out_dir, "suite.txt", &report.text_table())?;
    let failures = report.rows.iter().filter(|r| r.pass == Some(false)).count();
    let skipped = report.rows.iter().filter(|r| !r.hypotheses_met).count();
    Ok(RunOutcome {
        exit_code: if report.failed() { 2 } else { 0 },
        summary: format!(
            "invariant-suite: {} checks, {failures} failures, {skipped} outside hypotheses",
            report.rows.len()
        ),
    })
}

fn run_density(config: &RunConfig, out_dir: &Path) -> Result<RunOutcome> {
    let problem = config.problem.as_ref().expect("resolved").build()?;
    if problem.dim() != 1 {
        return Err(CliError::Config("density-push needs a 1D problem".into()));
    }
    let section = config.density.as_ref().expect("resolved");
    let grid = Grid1d::interval(section.domain[0], section.domain[1], section.grid_cells)?;
    let initial = DensityGrid::sample(grid, bump(section.bump_center, section.bump_halfwidth))?;
    let mass_before = initial.mass();

    let path = out_dir.join("density-initial.csv");
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    initial
        .function()
        .write_csv(std::io::BufWriter::new(file))
        .map_err(io_err(&path))?;

    let mut density = initial;
    let mut clamped_total = 0.0;
    for _ in 0..section.steps {
        let pushed = pushforward_density_1d(&density, &problem, section.eta)?;
        clamped_total += pushed.clamped_mass;
        density = pushed.density;
    }
    let mass_after = density.mass();

    let path = out_dir.join("density-final.csv");
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    density
        .function()
        .write_csv(std::io::BufWriter::new(file))
        .map_err(io_err(&path))?;

    #[derive(Serialize)]
    struct DensityReport {
        steps: usize,
        eta: f64,
        mass_before: f64,
        mass_after: f64,
        mass_gap: f64,
        clamped_mass_total: f64,
    }
    let report = DensityReport {
        steps: section.steps,
        eta: section.eta,
        mass_before,
        mass_after,
        mass_gap: (mass_after - mass_before).abs(),
        clamped_mass_total: clamped_total,
    };
    write_file(
        out_dir,
        "density.json",
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    Ok(RunOutcome {
        exit_code: 0,
        summary: format!(
            "density-push: {} steps, mass {mass_before:.12} -> {mass_after:.12} (gap {:.3e}, clamped {:.3e})",
            section.steps, report.mass_gap, clamped_total
        ),
    })
}
