//! Command-line front end.
//!
//! Exit codes: 0 success, 2 bad input (I/O, parse, shape, empty grid),
//! 3 unsupported game structure, 4 solver failure, 5 a verification ran
//! and failed. The report is still written for exit code 5.

pub mod files;
pub mod report;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::consistency::{
    auto_mu, consistency_multipliers_lq, epsilon_bound_general, epsilon_bound_lq,
    penalty_threshold, ConsistencyError,
};
use crate::equilibrium::{brute_force_ne, nash_gaps, EquilibriumError, GridSpec, DEFAULT_BUDGET};
use crate::game_model::{DynamicGame, GameError, GenericGame, LqGame};
use crate::ocp_solver::{DescentOptions, OcpError};
use crate::registry::{default_epsilon_rules, default_minimizers};
use crate::structure::{
    check_coercivity_lq, decompose_quasi_potential_lq, verify_quasi_potential_property,
    StructureError, COERCIVITY_TOL, DEFAULT_VERIFY_SAMPLES, SHARED_Q_TOL,
};

use files::{load_game, load_point, load_profile, parse_grid, profile_to_nested};
use report::{
    EpsilonSection, GapSection, OracleSection, RunConfig, RunReport, SolutionSection,
    StructureSection,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_STRUCTURE: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;
pub const EXIT_VERIFICATION: i32 = 5;

/// Default absolute tolerance on best-response gaps.
pub const DEFAULT_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CliError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}: field `{field}`: {message}")]
    Parse {
        path: String,
        field: String,
        message: String,
    },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Structure(#[from] StructureError),
    #[error(transparent)]
    Solver(#[from] OcpError),
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
    #[error(transparent)]
    Consistency(#[from] ConsistencyError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. }
            | CliError::Parse { .. }
            | CliError::Usage(_)
            | CliError::Game(_) => EXIT_INPUT,
            CliError::Structure(_) => EXIT_STRUCTURE,
            CliError::Solver(e) => solver_code(e),
            CliError::Equilibrium(e) => match e {
                EquilibriumError::EmptyGrid { .. } | EquilibriumError::Game(_) => EXIT_INPUT,
                EquilibriumError::BudgetExceeded { .. } => EXIT_SOLVER,
                EquilibriumError::Solver(e) => solver_code(e),
            },
            CliError::Consistency(e) => match e {
                ConsistencyError::InfeasiblePoint { .. }
                | ConsistencyError::InvalidPlayer { .. }
                | ConsistencyError::InvalidMu(_)
                | ConsistencyError::Game(_) => EXIT_INPUT,
                ConsistencyError::QNotPositiveDefinite { .. } => EXIT_STRUCTURE,
                ConsistencyError::SingularKkt { .. }
                | ConsistencyError::MuBelowThreshold { .. } => EXIT_SOLVER,
                ConsistencyError::Solver(e) => solver_code(e),
            },
        }
    }
}

fn solver_code(e: &OcpError) -> i32 {
    match e {
        OcpError::NotCoercive(_)
        | OcpError::NotQuasiPotential(_)
        | OcpError::NonConvexPlayerProblem { .. } => EXIT_STRUCTURE,
        OcpError::Game(_) => EXIT_INPUT,
        _ => EXIT_SOLVER,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "dtdg",
    version,
    about = "Open-loop Nash equilibria of LQ dynamic games"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Absolute tolerance on best-response gaps.
    #[arg(long, global = true, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
    /// Seed for every randomized check.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Omit wall-clock timing, making reports reproducible byte for byte.
    #[arg(long, global = true)]
    pub no_timing: bool,
    /// Exit with code 5 unless the profile is a Nash equilibrium.
    #[arg(long, global = true)]
    pub require_nash: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Minimize the quasi-potential and certify the result by best responses.
    Solve {
        game: PathBuf,
        /// Potential minimizer, by registered name.
        #[arg(long, default_value = "riccati")]
        solver: String,
        /// Random probes for the quasi-potential identity check.
        #[arg(long, default_value_t = DEFAULT_VERIFY_SAMPLES)]
        samples: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Best-response gaps of a control profile (or a `solve` report).
    Gaps {
        game: PathBuf,
        profile: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Epsilon-Nash bound of a consistent-conjecture point.
    Epsilon {
        game: PathBuf,
        point: PathBuf,
        /// One penalty parameter per player.
        #[arg(long, num_args = 1.., allow_negative_numbers = true, conflicts_with = "auto_mu")]
        mu: Option<Vec<f64>>,
        /// Set each mu just above its multiplier threshold, with this margin.
        #[arg(long)]
        auto_mu: Option<f64>,
        /// Which rivals enter the bound, by registered name.
        #[arg(long, default_value = "all-rivals")]
        rule: String,
        #[command(flatten)]
        common: Common,
    },
    /// Enumerate pure Nash equilibria over a finite control grid.
    Oracle {
        game: PathBuf,
        /// Comma-separated values (fractions `a/b` allowed), or one list per
        /// player separated by `;`.
        #[arg(long, allow_hyphen_values = true)]
        grid: String,
        /// Largest number of cost evaluations allowed.
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: u64,
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::Solve { common, .. }
            | Command::Gaps { common, .. }
            | Command::Epsilon { common, .. }
            | Command::Oracle { common, .. } => common,
        }
    }
}

/// A finished run: the report and the exit code it implies.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub report: RunReport,
    pub exit_code: i32,
}

fn config(game: &Path, common: &Common) -> RunConfig {
    RunConfig {
        game: game.display().to_string(),
        input: None,
        tol: common.tol,
        solver: None,
        samples: None,
        rule: None,
        mu: None,
        auto_mu_margin: None,
        grid: None,
        budget: None,
        require_nash: common.require_nash,
    }
}

fn new_report(command: &str, config: RunConfig, seed: u64) -> RunReport {
    RunReport {
        report_version: report::REPORT_VERSION.to_string(),
        command: command.to_string(),
        config,
        structure: None,
        solution: None,
        gaps: None,
        epsilon: None,
        oracle: None,
        passed: true,
        seed,
        timing_ms: None,
    }
}

fn check_tol(tol: f64) -> Result<(), CliError> {
    if !(tol.is_finite() && tol >= 0.0) {
        return Err(CliError::Usage(format!(
            "--tol must be finite and non-negative, got {tol}"
        )));
    }
    Ok(())
}

/// Runs a parsed command. Errors carry their exit code; verification
/// failures are reported through [`Outcome::exit_code`].
pub fn execute(command: &Command) -> Result<Outcome, CliError> {
    let common = command.common();
    check_tol(common.tol)?;
    let start = Instant::now();
    let mut report = match command {
        Command::Solve {
            game,
            solver,
            samples,
            ..
        } => cmd_solve(game, solver, *samples, common)?,
        Command::Gaps { game, profile, .. } => cmd_gaps(game, profile, common)?,
        Command::Epsilon {
            game,
            point,
            mu,
            auto_mu,
            rule,
            ..
        } => cmd_epsilon(game, point, mu.as_deref(), *auto_mu, rule, common)?,
        Command::Oracle {
            game, grid, budget, ..
        } => cmd_oracle(game, grid, *budget, common)?,
    };
    if !common.no_timing {
        report.timing_ms = Some(start.elapsed().as_secs_f64() * 1e3);
    }
    let nash_required = common.require_nash && report.gaps.as_ref().is_some_and(|g| !g.is_nash);
    let exit_code = if !report.passed || nash_required {
        EXIT_VERIFICATION
    } else {
        EXIT_OK
    };
    Ok(Outcome { report, exit_code })
}

pub fn cmd_solve(
    path: &Path,
    solver: &str,
    samples: usize,
    common: &Common,
) -> Result<RunReport, CliError> {
    let registry = default_minimizers();
    let minimizer = registry.get(solver).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown solver {solver:?}; available: {}",
            registry.names().join(", ")
        ))
    })?;
    let game = load_game(path)?;
    let decomp = decompose_quasi_potential_lq(&game, SHARED_Q_TOL)?;
    let coercivity = check_coercivity_lq(&game, COERCIVITY_TOL);
    if !coercivity.coercive {
        return Err(OcpError::NotCoercive(coercivity).into());
    }
    let qp = verify_quasi_potential_property(&game, &decomp, samples, common.seed)?;
    let solution = minimizer.minimize(&game, &decomp)?;
    let gaps = nash_gaps(&game, &solution.controls, common.tol)?;

    let mut cfg = config(path, common);
    cfg.solver = Some(solver.to_string());
    cfg.samples = Some(samples);
    let mut report = new_report("solve", cfg, common.seed);
    report.passed = qp.passed && gaps.is_nash;
    report.structure = Some(StructureSection::new(&coercivity, &qp));
    report.solution = Some(SolutionSection::new(
        minimizer.name(),
        minimizer.exact(),
        &solution,
    ));
    report.gaps = Some(GapSection::new(&gaps));
    Ok(report)
}

pub fn cmd_gaps(path: &Path, profile: &Path, common: &Common) -> Result<RunReport, CliError> {
    let game = load_game(path)?;
    let controls = load_profile(profile, game.dims())?;
    let gaps = nash_gaps(&game, &controls, common.tol)?;
    let mut cfg = config(path, common);
    cfg.input = Some(profile.display().to_string());
    let mut report = new_report("gaps", cfg, common.seed);
    report.gaps = Some(GapSection::new(&gaps));
    Ok(report)
}

pub fn cmd_epsilon(
    path: &Path,
    point: &Path,
    mu: Option<&[f64]>,
    margin: Option<f64>,
    rule: &str,
    common: &Common,
) -> Result<RunReport, CliError> {
    let rules = default_epsilon_rules();
    let rule = rules.get(rule).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown rule {rule:?}; available: {}",
            rules.names().join(", ")
        ))
    })?;
    if let Some(m) = margin {
        if !(m.is_finite() && m > 0.0) {
            return Err(CliError::Usage(format!(
                "--auto-mu margin must be positive, got {m}"
            )));
        }
    }
    let game = load_game(path)?;
    let (controls, conj) = load_point(point, game.dims())?;

    let eps = if rule.uses_thresholds() {
        let mu = match (mu, margin) {
            (Some(mu), None) => mu.to_vec(),
            (None, Some(m)) => {
                let multipliers = consistency_multipliers_lq(&game, &controls, &conj)?;
                auto_mu(&penalty_threshold(&multipliers), m)
            }
            _ => {
                return Err(CliError::Usage(
                    "give exactly one of --mu and --auto-mu".into(),
                ))
            }
        };
        epsilon_bound_lq(&game, &controls, &conj, &mu)?
    } else {
        let mu = mu.ok_or_else(|| {
            CliError::Usage(format!("rule {:?} needs explicit --mu", rule.name()))
        })?;
        let generic = GenericGame::from_lq(&game);
        epsilon_bound_general(&generic, &controls, &conj, mu, &DescentOptions::default())?
    };

    let mut cfg = config(path, common);
    cfg.input = Some(point.display().to_string());
    cfg.rule = Some(rule.name().to_string());
    cfg.mu = mu.map(<[f64]>::to_vec);
    cfg.auto_mu_margin = margin;
    let mut report = new_report("epsilon", cfg, common.seed);
    report.passed = eps.sound;
    report.epsilon = Some(EpsilonSection::new(&eps));
    Ok(report)
}

pub fn cmd_oracle(
    path: &Path,
    grid: &str,
    budget: u64,
    common: &Common,
) -> Result<RunReport, CliError> {
    let game: LqGame = load_game(path)?;
    let dims = game.dims();
    let lists = parse_grid(grid, dims.players)?;
    let spec = GridSpec::per_player(dims, &lists);
    let equilibria = brute_force_ne(&game, &spec, common.tol, budget)?;
    let joint_profiles = spec
        .values
        .iter()
        .flatten()
        .map(|o| o.len() as u64)
        .product();

    let mut cfg = config(path, common);
    cfg.grid = Some(lists);
    cfg.budget = Some(budget);
    let mut report = new_report("oracle", cfg, common.seed);
    report.oracle = Some(OracleSection {
        joint_profiles,
        tol: common.tol,
        equilibria: equilibria.iter().map(profile_to_nested).collect(),
    });
    Ok(report)
}

/// Serialized report, pretty-printed with a trailing newline.
pub fn render(report: &RunReport) -> String {
    let mut s =
        serde_json::to_string_pretty(report).expect("reports hold only serializable values");
    s.push('\n');
    s
}

/// Parses `args`, runs the command, writes the report and returns the
/// process exit code. Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let out = cli.command.common().out.clone();
    match execute(&cli.command) {
        Ok(outcome) => {
            let text = render(&outcome.report);
            match out {
                Some(path) => {
                    if let Err(e) = std::fs::write(&path, text) {
                        eprintln!("error: {}: {e}", path.display());
                        return EXIT_INPUT;
                    }
                }
                None => print!("{text}"),
            }
            if outcome.exit_code == EXIT_VERIFICATION {
                eprintln!("verification failed");
            }
            outcome.exit_code
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
