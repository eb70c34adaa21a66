//! Certification of open-loop Nash equilibria by best-response gaps, and a
//! brute-force enumeration oracle over finite control grids.

use nalgebra::DVector;
use rayon::prelude::*;
use thiserror::Error;

use crate::game_model::{all_costs, ControlProfile, DynamicGame, GameDims, GameError, LqGame};
use crate::ocp_solver::{
    best_response_descent, best_response_lq, solve_lq_with_decomposition, DescentOptions, OcpError,
    OcpSolution,
};
use crate::structure::{decompose_quasi_potential_lq, SHARED_Q_TOL};

/// Cost comparisons on a grid treat differences below this as ties.
pub const GRID_TOL: f64 = 1e-12;
/// Default cap on cost evaluations for [`brute_force_ne`].
pub const DEFAULT_BUDGET: u64 = 10_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EquilibriumError {
    #[error("grid needs {required} cost evaluations, budget is {budget}")]
    BudgetExceeded { required: u128, budget: u64 },
    #[error("grid for player {player} at stage {stage} is empty")]
    EmptyGrid { player: usize, stage: usize },
    #[error(transparent)]
    Solver(#[from] OcpError),
    #[error(transparent)]
    Game(#[from] GameError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    /// `J^i(u) - inf J^i(.; u^{-i})` per player.
    pub gaps: Vec<f64>,
    /// `J^i(u)` per player.
    pub costs: Vec<f64>,
    pub best_responses: Vec<OcpSolution>,
    pub tol: f64,
    pub is_nash: bool,
    /// Largest gap: the profile is an epsilon-Nash equilibrium for this epsilon.
    pub is_epsilon_nash_at: f64,
    /// False when best responses came from local search.
    pub exact: bool,
}

impl GapReport {
    fn assemble(costs: Vec<f64>, best_responses: Vec<OcpSolution>, tol: f64, exact: bool) -> Self {
        let gaps: Vec<f64> = costs
            .iter()
            .zip(&best_responses)
            .map(|(c, br)| c - br.objective)
            .collect();
        let worst = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        GapReport {
            is_nash: worst <= tol,
            is_epsilon_nash_at: worst,
            gaps,
            costs,
            best_responses,
            tol,
            exact,
        }
    }
}

/// Exact best-response gaps of an LQ game (each player's problem is convex).
pub fn nash_gaps(
    game: &LqGame,
    controls: &ControlProfile,
    tol: f64,
) -> Result<GapReport, EquilibriumError> {
    let costs = all_costs(game, controls)?;
    let best_responses = (0..game.dims().players)
        .into_par_iter()
        .map(|i| best_response_lq(game, i, controls))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GapReport::assemble(costs, best_responses, tol, true))
}

/// Gaps against local best responses found by descent from `controls`.
/// Flagged non-exact: a nonconvex player problem may hide a better response.
pub fn nash_gaps_generic<G: DynamicGame + ?Sized>(
    game: &G,
    controls: &ControlProfile,
    tol: f64,
    opts: &DescentOptions,
) -> Result<GapReport, EquilibriumError> {
    let costs = all_costs(game, controls)?;
    let best_responses = (0..game.dims().players)
        .into_par_iter()
        .map(|i| match best_response_descent(game, i, controls, opts) {
            Ok(sol) => Ok(sol),
            Err(e) => e.best_iterate().cloned().ok_or(e),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GapReport::assemble(costs, best_responses, tol, false))
}

/// Finite control sets: `values[i][k]` lists player `i`'s options at stage
/// `k`. A player's pure strategies are all sequences across stages.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub values: Vec<Vec<Vec<DVector<f64>>>>,
}

impl GridSpec {
    /// The same scalar list for every player and stage; vector controls take
    /// every combination of list entries across their components.
    pub fn uniform(dims: &GameDims, scalars: &[f64]) -> Self {
        GridSpec::per_player(dims, &vec![scalars.to_vec(); dims.players])
    }

    pub fn per_player(dims: &GameDims, lists: &[Vec<f64>]) -> Self {
        let values = dims
            .control_dims
            .iter()
            .zip(lists)
            .map(|(&m, list)| {
                let options = cartesian_power(list, m);
                vec![options; dims.stages]
            })
            .collect();
        GridSpec { values }
    }

    pub fn validate(&self, dims: &GameDims) -> Result<(), EquilibriumError> {
        if self.values.len() != dims.players {
            return Err(GameError::Shape {
                stage: 0,
                player: None,
                what: format!(
                    "grid covers {} players, game has {}",
                    self.values.len(),
                    dims.players
                ),
            }
            .into());
        }
        for (i, per_stage) in self.values.iter().enumerate() {
            if per_stage.len() != dims.stages {
                return Err(GameError::Shape {
                    stage: per_stage.len(),
                    player: Some(i),
                    what: format!(
                        "grid covers {} stages, game has {}",
                        per_stage.len(),
                        dims.stages
                    ),
                }
                .into());
            }
            for (k, options) in per_stage.iter().enumerate() {
                if options.is_empty() {
                    return Err(EquilibriumError::EmptyGrid {
                        player: i,
                        stage: k,
                    });
                }
                if let Some(bad) = options.iter().find(|v| v.len() != dims.control_dims[i]) {
                    return Err(GameError::Shape {
                        stage: k,
                        player: Some(i),
                        what: format!(
                            "grid value has length {}, expected {}",
                            bad.len(),
                            dims.control_dims[i]
                        ),
                    }
                    .into());
                }
            }
        }
        Ok(())
    }

    fn strategy_count(&self, player: usize) -> u128 {
        self.values[player]
            .iter()
            .map(|o| o.len() as u128)
            .product()
    }

    /// Player `i`'s `s`-th pure strategy written into `profile`.
    fn apply(&self, player: usize, mut s: usize, profile: &mut ControlProfile) {
        for (k, options) in self.values[player].iter().enumerate() {
            *profile.get_mut(player, k) = options[s % options.len()].clone();
            s /= options.len();
        }
    }
}

fn cartesian_power(list: &[f64], m: usize) -> Vec<DVector<f64>> {
    let mut out: Vec<Vec<f64>> = vec![Vec::new()];
    for _ in 0..m {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                list.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    out.into_iter().map(DVector::from_vec).collect()
}

/// Every joint grid profile at which no player gains more than `tol` by
/// switching to another of their grid strategies.
pub fn brute_force_ne<G: DynamicGame + ?Sized>(
    game: &G,
    grid: &GridSpec,
    tol: f64,
    budget: u64,
) -> Result<Vec<ControlProfile>, EquilibriumError> {
    let dims = game.dims();
    grid.validate(dims)?;
    let counts: Vec<u128> = (0..dims.players).map(|i| grid.strategy_count(i)).collect();
    let joint = counts
        .iter()
        .try_fold(1u128, |acc, &c| acc.checked_mul(c))
        .unwrap_or(u128::MAX);
    let required = joint.saturating_mul(dims.players as u128);
    if required > budget as u128 {
        return Err(EquilibriumError::BudgetExceeded { required, budget });
    }
    let counts: Vec<usize> = counts.into_iter().map(|c| c as usize).collect();
    let joint = joint as usize;

    let decode = |mut idx: usize| -> Vec<usize> {
        counts
            .iter()
            .map(|&c| {
                let s = idx % c;
                idx /= c;
                s
            })
            .collect()
    };
    let encode = |strategies: &[usize]| -> usize {
        strategies
            .iter()
            .zip(&counts)
            .rev()
            .fold(0, |acc, (&s, &c)| acc * c + s)
    };
    let profile_of = |strategies: &[usize]| -> ControlProfile {
        let mut p = ControlProfile::zeros(dims);
        for (i, &s) in strategies.iter().enumerate() {
            grid.apply(i, s, &mut p);
        }
        p
    };

    let table: Vec<Vec<f64>> = (0..joint)
        .into_par_iter()
        .map(|idx| all_costs(game, &profile_of(&decode(idx))))
        .collect::<Result<_, _>>()?;

    let equilibria = (0..joint)
        .into_par_iter()
        .filter(|&idx| {
            let strategies = decode(idx);
            (0..dims.players).all(|i| {
                let current = table[idx][i];
                (0..counts[i]).all(|alt| {
                    let mut deviated = strategies.clone();
                    deviated[i] = alt;
                    table[encode(&deviated)][i] >= current - tol
                })
            })
        })
        .map(|idx| profile_of(&decode(idx)))
        .collect();
    Ok(equilibria)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimizerCheck {
    pub solution: OcpSolution,
    pub report: GapReport,
    pub pass: bool,
}

/// Decompose, minimize the quasi-potential, and confirm that the minimizer
/// leaves every player a best-response gap of at most `tol`.
pub fn verify_potential_minimizer(
    game: &LqGame,
    tol: f64,
) -> Result<MinimizerCheck, EquilibriumError> {
    let decomp = decompose_quasi_potential_lq(game, SHARED_Q_TOL).map_err(OcpError::from)?;
    let solution = solve_lq_with_decomposition(game, &decomp)?;
    let report = nash_gaps(game, &solution.controls, tol)?;
    Ok(MinimizerCheck {
        pass: report.is_nash,
        solution,
        report,
    })
}
