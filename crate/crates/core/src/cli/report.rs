//! Machine-readable run reports. Floats are written in shortest
//! round-trip form, so reading a report back recovers every value exactly.

use serde::{Deserialize, Serialize};

use super::files::{profile_to_nested, trajectory_to_nested};
use crate::consistency::EpsilonReport;
use crate::equilibrium::GapReport;
use crate::ocp_solver::OcpSolution;
use crate::structure::{CoercivityReport, QuasiPotentialReport, VerificationMode};

pub const REPORT_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub report_version: String,
    pub command: String,
    pub config: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structure: Option<StructureSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solution: Option<SolutionSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaps: Option<GapSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<EpsilonSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSection>,
    /// Whether every check the command performs passed.
    pub passed: bool,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing_ms: Option<f64>,
}

/// Resolved configuration: every input and default that shaped the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub game: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
    pub tol: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auto_mu_margin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<u64>,
    pub require_nash: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureSection {
    pub shared_q: bool,
    pub coercive: bool,
    pub min_eig_q: f64,
    pub min_eig_r: f64,
    pub quasi_potential_samples: usize,
    pub quasi_potential_max_violation: f64,
    pub quasi_potential_passed: bool,
    pub verification_mode: String,
}

impl StructureSection {
    pub fn new(coercivity: &CoercivityReport, qp: &QuasiPotentialReport) -> Self {
        StructureSection {
            shared_q: true,
            coercive: coercivity.coercive,
            min_eig_q: coercivity.min_eig_q,
            min_eig_r: coercivity.min_eig_r,
            quasi_potential_samples: qp.samples,
            quasi_potential_max_violation: qp.max_violation,
            quasi_potential_passed: qp.passed,
            verification_mode: match qp.mode {
                VerificationMode::PlayerTerms => "player-terms",
                VerificationMode::TotalCost => "total-cost",
            }
            .to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionSection {
    pub solver: String,
    pub exact: bool,
    /// `controls[i][k]`, same layout as a profile file.
    pub controls: Vec<Vec<Vec<f64>>>,
    /// State after each stage.
    pub trajectory: Vec<Vec<f64>>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
}

impl SolutionSection {
    pub fn new(solver: &str, exact: bool, sol: &OcpSolution) -> Self {
        SolutionSection {
            solver: solver.to_string(),
            exact,
            controls: profile_to_nested(&sol.controls),
            trajectory: trajectory_to_nested(&sol.trajectory),
            objective: sol.objective,
            iterations: sol.iterations,
            converged: sol.converged,
            grad_norm: sol.grad_norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapSection {
    pub gaps: Vec<f64>,
    pub costs: Vec<f64>,
    pub best_response_costs: Vec<f64>,
    /// Player `i`'s own best-response controls, `best_responses[i][k]`.
    pub best_responses: Vec<Vec<Vec<f64>>>,
    pub tol: f64,
    pub is_nash: bool,
    pub is_epsilon_nash_at: f64,
    pub exact: bool,
}

impl GapSection {
    pub fn new(r: &GapReport) -> Self {
        GapSection {
            gaps: r.gaps.clone(),
            costs: r.costs.clone(),
            best_response_costs: r.best_responses.iter().map(|b| b.objective).collect(),
            best_responses: r
                .best_responses
                .iter()
                .enumerate()
                .map(|(i, b)| {
                    b.controls
                        .player_controls(i)
                        .iter()
                        .map(|v| v.iter().copied().collect())
                        .collect()
                })
                .collect(),
            tol: r.tol,
            is_nash: r.is_nash,
            is_epsilon_nash_at: r.is_epsilon_nash_at,
            exact: r.exact,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonSection {
    pub rule: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_star: Option<Vec<f64>>,
    pub mu: Vec<f64>,
    pub eps_i: Vec<f64>,
    pub eps: f64,
    pub measured_gaps: Vec<f64>,
    pub sound: bool,
    pub exact_best_responses: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multipliers_redundant: Option<Vec<bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_responses_interior: Option<Vec<bool>>,
    pub best_response_trajectories: Vec<Vec<Vec<f64>>>,
}

impl EpsilonSection {
    pub fn new(r: &EpsilonReport) -> Self {
        EpsilonSection {
            rule: r.mode.clone(),
            mu_star: r.mu_star.clone(),
            mu: r.mu_used.clone(),
            eps_i: r.eps_i.clone(),
            eps: r.eps,
            measured_gaps: r.measured_gaps.clone(),
            sound: r.sound,
            exact_best_responses: r.exact_best_responses,
            multipliers_redundant: r.multipliers_redundant.clone(),
            best_responses_interior: r.best_responses_interior.clone(),
            best_response_trajectories: r
                .br_trajectories
                .iter()
                .map(trajectory_to_nested)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    pub joint_profiles: u64,
    pub tol: f64,
    /// Grid equilibria, each as `controls[i][k]`, in enumeration order.
    pub equilibria: Vec<Vec<Vec<Vec<f64>>>>,
}
