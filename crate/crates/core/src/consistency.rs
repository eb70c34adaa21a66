//! The consistent-conjecture game.
//!
//! Every player carries a private copy `x^i` of the state trajectory that
//! must obey the state equation under the joint controls and agree with
//! the other players' copies. This module checks membership in that
//! feasible set, recovers the multipliers of the agreement constraints at
//! a point, turns them into penalty thresholds, and bounds how far an
//! equilibrium of the consistent game is from a Nash equilibrium of the
//! original one.
//!
//! Players are indexed from zero, so the next labelled player of `i` is
//! `(i + 1) mod N`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::game_model::{
    rollout, total_cost, ControlProfile, DynamicGame, GameDims, GameError, LqGame, Trajectory,
};
use crate::linalg;
use crate::ocp_solver::{best_response_descent, best_response_lq, DescentOptions, OcpError};
use crate::registry::{AllRivals, EpsilonRule, NextLabelled};

/// Largest residual at which a point counts as consistent-feasible.
pub const FEASIBILITY_TOL: f64 = 1e-8;
/// Relative stationarity tolerance for recovered multipliers.
pub const KKT_TOL: f64 = 1e-8;
/// Slack allowed between a measured best-response gap and its bound.
pub const SOUNDNESS_SLACK: f64 = 1e-8;
/// Smallest singular value for constraint gradients to count as independent.
pub const MFCQ_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConsistencyError {
    #[error("point is not consistent-feasible (residual {residual:e})")]
    InfeasiblePoint { residual: f64 },
    #[error(
        "multiplier system of player {player} has no solution (stationarity residual {residual:e})"
    )]
    SingularKkt { player: usize, residual: f64 },
    #[error("mu of player {player} is {mu}, must exceed the threshold {mu_star}")]
    MuBelowThreshold {
        player: usize,
        mu: f64,
        mu_star: f64,
    },
    #[error("Q of player {player} at stage {stage} is not positive definite (min eigenvalue {min_eig:e})")]
    QNotPositiveDefinite {
        player: usize,
        stage: usize,
        min_eig: f64,
    },
    #[error("player index {index} out of range for {players} players")]
    InvalidPlayer { index: usize, players: usize },
    #[error("invalid penalty parameters: {0}")]
    InvalidMu(String),
    #[error(transparent)]
    Solver(#[from] OcpError),
    #[error(transparent)]
    Game(#[from] GameError),
}

/// One conjectured trajectory per player.
#[derive(Debug, Clone, PartialEq)]
pub struct ConjectureProfile {
    pub x: Vec<Trajectory>,
}

impl ConjectureProfile {
    pub fn new(x: Vec<Trajectory>) -> Self {
        ConjectureProfile { x }
    }

    /// Every player conjectures the same trajectory.
    pub fn replicated(traj: &Trajectory, players: usize) -> Self {
        ConjectureProfile {
            x: vec![traj.clone(); players],
        }
    }

    pub fn validate(&self, dims: &GameDims) -> Result<(), GameError> {
        if self.x.len() != dims.players {
            return Err(GameError::Shape {
                stage: 0,
                player: None,
                what: format!("{} conjectures for {} players", self.x.len(), dims.players),
            });
        }
        for (i, t) in self.x.iter().enumerate() {
            t.validate(dims).map_err(|e| match e {
                GameError::Shape { stage, what, .. } => GameError::Shape {
                    stage,
                    player: Some(i),
                    what,
                },
                other => other,
            })?;
        }
        Ok(())
    }
}

/// `max_k ||x^i_{k+1} - f_k(x^i_k, u_k)||_inf` for one player's conjecture.
fn dynamics_residual<G: DynamicGame + ?Sized>(
    game: &G,
    controls: &ControlProfile,
    conj: &Trajectory,
) -> f64 {
    let x0 = game.initial_state();
    (0..game.dims().stages)
        .map(|k| {
            let predicted = game.step(k, conj.state_before(k, x0), controls.stage(k));
            (conj.state_after(k) - predicted).amax()
        })
        .fold(0.0, nan_max)
}

fn nan_max(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

/// Zero exactly when every conjecture follows the state equation and all
/// conjectures coincide: the larger of the worst dynamics residual and the
/// worst pairwise disagreement (both sup-norms).
pub fn consistent_feasibility<G: DynamicGame + ?Sized>(
    game: &G,
    controls: &ControlProfile,
    conj: &ConjectureProfile,
) -> Result<f64, GameError> {
    controls.validate(game.dims())?;
    conj.validate(game.dims())?;
    let mut worst = conj
        .x
        .iter()
        .map(|x| dynamics_residual(game, controls, x))
        .fold(0.0, nan_max);
    for (i, xi) in conj.x.iter().enumerate() {
        for xj in &conj.x[i + 1..] {
            worst = nan_max(worst, xi.max_abs_distance(xj));
        }
    }
    Ok(worst)
}

/// Next labelled player, cyclic and zero-based.
pub fn next_labelled_player(player: usize, players: usize) -> Result<usize, ConsistencyError> {
    if player >= players {
        return Err(ConsistencyError::InvalidPlayer {
            index: player,
            players,
        });
    }
    Ok((player + 1) % players)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConsistencyMode {
    /// Agree with every other player's conjecture.
    AllRivals,
    /// Agree with the next labelled player's conjecture only.
    NextLabelled,
}

/// Membership of player `i`'s (controls, conjecture) in their feasible set
/// given the others' conjectures, under either consistency requirement.
pub fn player_feasible<G: DynamicGame + ?Sized>(
    game: &G,
    player: usize,
    controls: &ControlProfile,
    conj: &ConjectureProfile,
    mode: ConsistencyMode,
    tol: f64,
) -> Result<bool, ConsistencyError> {
    controls.validate(game.dims())?;
    conj.validate(game.dims())?;
    let n = game.dims().players;
    let partners: Vec<usize> = match mode {
        ConsistencyMode::AllRivals => AllRivals.rivals(player, n),
        ConsistencyMode::NextLabelled => vec![next_labelled_player(player, n)?],
    };
    let own = &conj.x[player];
    Ok(dynamics_residual(game, controls, own) <= tol
        && partners
            .iter()
            .all(|&j| own.max_abs_distance(&conj.x[j]) <= tol))
}

/// Multipliers of one point of the consistent-conjecture LQ game.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierSet {
    /// `costates[i][k]`: multiplier of player `i`'s state equation at stage `k`.
    pub costates: Vec<Vec<DVector<f64>>>,
    /// `consistency[i][j][k]`: multiplier of `x^i_{k+1} = x^j_{k+1}`;
    /// empty when `j == i`.
    pub consistency: Vec<Vec<Vec<DVector<f64>>>>,
    pub stationarity_residual: Vec<f64>,
    /// The multipliers were not unique and a minimum-norm choice was made.
    pub redundant: Vec<bool>,
}

impl MultiplierSet {
    pub fn lambda(&self, player: usize, rival: usize, stage: usize) -> Option<&DVector<f64>> {
        self.consistency.get(player)?.get(rival)?.get(stage)
    }
}

/// Recovers, for every player, the KKT multipliers of their problem in the
/// consistent-conjecture LQ game at the given point.
///
/// The Lagrangian of player `i` is
/// `J^i - sum_k p_k'(x_{k+1} - A_k x_k - B^i_k u_k - c_k) + sum_{j,k} lambda^{ij}_k'(x_{k+1} - x^j_{k+1})`,
/// giving `R^{ii}_k u_k + B^i_k' p_k = 0` and
/// `sum_j lambda^{ij}_k = p_k - A_{k+1}' p_{k+1} - Q^i_k x_{k+1}`.
/// When `B^i_k'` has a null space the costates are not unique; the free
/// part is chosen to minimize the consistency multipliers, which are then
/// split evenly across rivals (the minimum-norm split).
pub fn consistency_multipliers_lq(
    game: &LqGame,
    controls: &ControlProfile,
    conj: &ConjectureProfile,
) -> Result<MultiplierSet, ConsistencyError> {
    let residual = consistent_feasibility(game, controls, conj)?;
    if !(residual <= FEASIBILITY_TOL) {
        return Err(ConsistencyError::InfeasiblePoint { residual });
    }
    let dims = game.dims();
    let mut out = MultiplierSet {
        costates: Vec::with_capacity(dims.players),
        consistency: Vec::with_capacity(dims.players),
        stationarity_residual: Vec::with_capacity(dims.players),
        redundant: Vec::with_capacity(dims.players),
    };
    for i in 0..dims.players {
        let (costates, lambdas, stat, redundant) =
            player_multipliers(game, i, controls, &conj.x[i])?;
        out.costates.push(costates);
        out.consistency.push(lambdas);
        out.stationarity_residual.push(stat);
        out.redundant.push(redundant);
    }
    Ok(out)
}

type PlayerMultipliers = (Vec<DVector<f64>>, Vec<Vec<DVector<f64>>>, f64, bool);

fn player_multipliers(
    game: &LqGame,
    i: usize,
    controls: &ControlProfile,
    x: &Trajectory,
) -> Result<PlayerMultipliers, ConsistencyError> {
    let dims = game.dims();
    let (big_k, n, players) = (dims.stages, dims.state_dim, dims.players);

    // Costates solving the control rows: p_k = base_k + free_k * theta_k.
    let mut base = Vec::with_capacity(big_k);
    let mut free = Vec::with_capacity(big_k);
    for k in 0..big_k {
        let bt = game.b(k, i).transpose();
        let rhs = -(game.r(i, k, i) * controls.get(i, k));
        let (p0, _) = linalg::lstsq_min_norm(&bt, &rhs);
        base.push(p0);
        free.push(linalg::null_space(&bt));
    }
    let offsets: Vec<usize> = free
        .iter()
        .scan(0, |acc, f| {
            let o = *acc;
            *acc += f.ncols();
            Some(o)
        })
        .collect();
    let dof: usize = free.iter().map(|f| f.ncols()).sum();

    // s = s0 + M theta with s_k = p_k - A_{k+1}' p_{k+1} - Q_k x_{k+1}.
    let mut s0 = DVector::zeros(big_k * n);
    let mut m = DMatrix::zeros(big_k * n, dof);
    for k in 0..big_k {
        let mut sk = &base[k] - game.q(i, k) * x.state_after(k);
        m.view_mut((k * n, offsets[k]), (n, free[k].ncols()))
            .copy_from(&free[k]);
        if k + 1 < big_k {
            let at = game.a(k + 1).transpose();
            sk -= &at * &base[k + 1];
            let coupled = -(&at * &free[k + 1]);
            m.view_mut((k * n, offsets[k + 1]), (n, free[k + 1].ncols()))
                .copy_from(&coupled);
        }
        s0.rows_mut(k * n, n).copy_from(&sk);
    }
    let theta = if dof > 0 {
        -linalg::lstsq_min_norm(&m, &s0).0
    } else {
        DVector::zeros(0)
    };
    let costates: Vec<DVector<f64>> = (0..big_k)
        .map(|k| &base[k] + &free[k] * theta.rows(offsets[k], free[k].ncols()))
        .collect();
    let sums = &s0 + &m * &theta;

    let lambdas: Vec<Vec<DVector<f64>>> = (0..players)
        .map(|j| {
            if j == i {
                Vec::new()
            } else {
                (0..big_k)
                    .map(|k| sums.rows(k * n, n) / (players - 1) as f64)
                    .collect()
            }
        })
        .collect();

    // Residual of the full stationarity system with the recovered multipliers.
    let mut residual: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for k in 0..big_k {
        let ru = game.r(i, k, i) * controls.get(i, k);
        scale = scale.max(ru.amax());
        residual = residual.max((&ru + game.b(k, i).tr_mul(&costates[k])).amax());
        let qx = game.q(i, k) * x.state_after(k);
        scale = scale.max(qx.amax());
        let mut rx = qx - &costates[k];
        if k + 1 < big_k {
            rx += game.a(k + 1).tr_mul(&costates[k + 1]);
        }
        for (j, lj) in lambdas.iter().enumerate() {
            if j != i {
                rx += &lj[k];
            }
        }
        residual = residual.max(rx.amax());
    }
    if !(residual <= KKT_TOL * (1.0 + scale)) {
        return Err(ConsistencyError::SingularKkt {
            player: i,
            residual,
        });
    }
    let redundant = players >= 3 || dof > 0;
    Ok((costates, lambdas, residual, redundant))
}

/// `mu*_i = max_{j != i, k} ||lambda^{ij}_k||_inf` (zero with no rivals).
pub fn penalty_threshold(multipliers: &MultiplierSet) -> Vec<f64> {
    multipliers
        .consistency
        .iter()
        .map(|per_rival| {
            per_rival
                .iter()
                .flatten()
                .map(|l| l.amax())
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Penalty parameters strictly above the thresholds:
/// `mu_i = mu*_i (1 + margin) + margin`.
pub fn auto_mu(mu_star: &[f64], margin: f64) -> Vec<f64> {
    mu_star
        .iter()
        .map(|m| m * (1.0 + margin) + margin)
        .collect()
}

/// Whether the point is an equilibrium of the consistent-conjecture LQ
/// game: each player's problem is convex, so recoverable multipliers are
/// both necessary and sufficient.
pub fn is_consistent_equilibrium_lq(
    game: &LqGame,
    controls: &ControlProfile,
    conj: &ConjectureProfile,
) -> Result<bool, ConsistencyError> {
    match consistency_multipliers_lq(game, controls, conj) {
        Ok(_) => Ok(true),
        Err(ConsistencyError::SingularKkt { .. })
        | Err(ConsistencyError::InfeasiblePoint { .. }) => Ok(false),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonReport {
    /// Name of the [`EpsilonRule`] used.
    pub mode: String,
    /// Multiplier-based thresholds; `None` when not computable.
    pub mu_star: Option<Vec<f64>>,
    pub mu_used: Vec<f64>,
    /// Best-response trajectories in the original game.
    pub br_trajectories: Vec<Trajectory>,
    pub eps_i: Vec<f64>,
    pub eps: f64,
    /// `J^i(u*) - J^i(best response)`.
    pub measured_gaps: Vec<f64>,
    /// Every measured gap is within its bound (plus slack).
    pub sound: bool,
    pub exact_best_responses: bool,
    pub multipliers_redundant: Option<Vec<bool>>,
    /// With box bounds, whether each best response lies strictly inside
    /// its player's box (checked after the fact, not guaranteed).
    pub best_responses_interior: Option<Vec<bool>>,
}

fn epsilon_terms(
    rule: &dyn EpsilonRule,
    mu: &[f64],
    br: &[Trajectory],
    conj: &ConjectureProfile,
) -> (Vec<f64>, f64) {
    let players = conj.x.len();
    let eps_i: Vec<f64> = (0..players)
        .map(|i| {
            let spread: f64 = rule
                .rivals(i, players)
                .into_iter()
                .map(|j| br[i].l1_distance(&conj.x[j]))
                .sum();
            rule.weight() * mu[i] * spread
        })
        .collect();
    let eps = eps_i.iter().copied().fold(0.0, f64::max);
    (eps_i, eps)
}

fn check_mu(mu: &[f64], players: usize) -> Result<(), ConsistencyError> {
    if mu.len() != players {
        return Err(ConsistencyError::InvalidMu(format!(
            "{} values for {players} players",
            mu.len()
        )));
    }
    if mu.iter().any(|m| !m.is_finite() || *m < 0.0) {
        return Err(ConsistencyError::InvalidMu(
            "values must be finite and non-negative".into(),
        ));
    }
    Ok(())
}

/// Epsilon-Nash bound for a consistent-conjecture equilibrium of a convex
/// LQ game, measured against all rivals with weight 1/2.
///
/// Requires `mu_i` strictly above the multiplier threshold `mu*_i`. The
/// report also measures the true best-response gaps and flags whether they
/// respect the bound.
pub fn epsilon_bound_lq(
    game: &LqGame,
    controls: &ControlProfile,
    conj: &ConjectureProfile,
    mu: &[f64],
) -> Result<EpsilonReport, ConsistencyError> {
    let dims = game.dims();
    check_mu(mu, dims.players)?;
    for i in 0..dims.players {
        for k in 0..dims.stages {
            let min_eig = linalg::min_eigenvalue(game.q(i, k));
            if !(min_eig > 0.0) {
                return Err(ConsistencyError::QNotPositiveDefinite {
                    player: i,
                    stage: k,
                    min_eig,
                });
            }
        }
    }
    let multipliers = consistency_multipliers_lq(game, controls, conj)?;
    let mu_star = penalty_threshold(&multipliers);
    for (i, (&m, &ms)) in mu.iter().zip(&mu_star).enumerate() {
        if !(m > ms) {
            return Err(ConsistencyError::MuBelowThreshold {
                player: i,
                mu: m,
                mu_star: ms,
            });
        }
    }
    let traj = rollout(game, controls)?;
    let mut br_trajectories = Vec::with_capacity(dims.players);
    let mut measured_gaps = Vec::with_capacity(dims.players);
    for i in 0..dims.players {
        let br = best_response_lq(game, i, controls)?;
        measured_gaps.push(total_cost(game, i, controls, &traj)? - br.objective);
        br_trajectories.push(br.trajectory);
    }
    let (eps_i, eps) = epsilon_terms(&AllRivals, mu, &br_trajectories, conj);
    let sound = measured_gaps
        .iter()
        .zip(&eps_i)
        .all(|(g, e)| *g <= e + SOUNDNESS_SLACK);
    Ok(EpsilonReport {
        mode: AllRivals.name().to_string(),
        mu_star: Some(mu_star),
        mu_used: mu.to_vec(),
        br_trajectories,
        eps_i,
        eps,
        measured_gaps,
        sound,
        exact_best_responses: true,
        multipliers_redundant: Some(multipliers.redundant),
        best_responses_interior: None,
    })
}

/// Epsilon-Nash bound for a general game, measured against the next
/// labelled player only, with weight 1. The penalty parameters are taken
/// as given; best responses come from local descent and are flagged
/// non-exact.
pub fn epsilon_bound_general<G: DynamicGame + ?Sized>(
    game: &G,
    controls: &ControlProfile,
    conj: &ConjectureProfile,
    mu: &[f64],
    opts: &DescentOptions,
) -> Result<EpsilonReport, ConsistencyError> {
    let dims = game.dims();
    check_mu(mu, dims.players)?;
    let residual = consistent_feasibility(game, controls, conj)?;
    if !(residual <= FEASIBILITY_TOL) {
        return Err(ConsistencyError::InfeasiblePoint { residual });
    }
    let traj = rollout(game, controls)?;
    let mut br_trajectories = Vec::with_capacity(dims.players);
    let mut measured_gaps = Vec::with_capacity(dims.players);
    let mut interior = Vec::with_capacity(dims.players);
    for i in 0..dims.players {
        let br = match best_response_descent(game, i, controls, opts) {
            Ok(sol) => sol,
            Err(e) => e.best_iterate().cloned().ok_or(e)?,
        };
        measured_gaps.push(total_cost(game, i, controls, &traj)? - br.objective);
        if let Some(b) = &opts.bounds {
            interior.push(
                br.controls
                    .player_controls(i)
                    .iter()
                    .flat_map(|v| v.iter())
                    .all(|&c| b.lower[i] < c && c < b.upper[i]),
            );
        }
        br_trajectories.push(br.trajectory);
    }
    let (eps_i, eps) = epsilon_terms(&NextLabelled, mu, &br_trajectories, conj);
    let sound = measured_gaps
        .iter()
        .zip(&eps_i)
        .all(|(g, e)| *g <= e + SOUNDNESS_SLACK);
    Ok(EpsilonReport {
        mode: NextLabelled.name().to_string(),
        mu_star: None,
        mu_used: mu.to_vec(),
        br_trajectories,
        eps_i,
        eps,
        measured_gaps,
        sound,
        exact_best_responses: false,
        multipliers_redundant: None,
        best_responses_interior: opts.bounds.as_ref().map(|_| interior),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MfcqReport {
    pub holds: bool,
    pub min_singular_value: f64,
    pub per_player: Vec<f64>,
}

/// Jacobian of player `i`'s equality constraints when conjectures need only
/// agree with the next labelled player. Columns: `u^i_0..u^i_{K-1}` then
/// `x^i_1..x^i_K`. Rows: state equations, then agreement (omitted for a
/// lone player, whose agreement constraint is vacuous).
pub fn alternate_constraint_jacobian(game: &LqGame, player: usize) -> DMatrix<f64> {
    let dims = game.dims();
    let (big_k, n, m) = (dims.stages, dims.state_dim, dims.control_dims[player]);
    let ucols = big_k * m;
    let with_agreement = dims.players > 1;
    let rows = if with_agreement {
        2 * big_k * n
    } else {
        big_k * n
    };
    let mut jac = DMatrix::zeros(rows, ucols + big_k * n);
    let eye = DMatrix::<f64>::identity(n, n);
    for k in 0..big_k {
        let r = k * n;
        jac.view_mut((r, k * m), (n, m))
            .copy_from(&(-game.b(k, player)));
        jac.view_mut((r, ucols + k * n), (n, n)).copy_from(&eye);
        if k > 0 {
            jac.view_mut((r, ucols + (k - 1) * n), (n, n))
                .copy_from(&(-game.a(k)));
        }
        if with_agreement {
            jac.view_mut((big_k * n + r, ucols + k * n), (n, n))
                .copy_from(&eye);
        }
    }
    jac
}

/// Linear independence of constraint gradients (rows of `jac`).
pub fn rows_independent(jac: &DMatrix<f64>) -> (bool, f64) {
    let s = linalg::min_singular_value(jac);
    (s > MFCQ_TOL, s)
}

/// Constraint qualification for every player's problem in the
/// next-labelled consistent game. The constraints are affine, so only the
/// point's shape matters.
pub fn mfcq_check(
    game: &LqGame,
    controls: &ControlProfile,
    conj: &ConjectureProfile,
) -> Result<MfcqReport, GameError> {
    controls.validate(game.dims())?;
    conj.validate(game.dims())?;
    let per_player: Vec<f64> = (0..game.dims().players)
        .map(|i| rows_independent(&alternate_constraint_jacobian(game, i)).1)
        .collect();
    let min_singular_value = per_player.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(MfcqReport {
        holds: min_singular_value > MFCQ_TOL,
        min_singular_value,
        per_player,
    })
}
