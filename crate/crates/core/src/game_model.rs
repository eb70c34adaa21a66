//! Discrete-time dynamic games: dimensions, linear-quadratic and generic
//! games, control profiles, trajectories and the rollout/cost primitives
//! everything else is built on.
//!
//! Stage indices are zero-based throughout: stage `k` maps `x_k` to
//! `x_{k+1}`, where `x_0` is the game's initial state. A [`Trajectory`]
//! holds only the `K` states produced by the state equation.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::linalg;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GameError {
    #[error("invalid dimensions: {0}")]
    InvalidDims(String),
    #[error("shape mismatch at stage {stage}, player {player:?}: {what}")]
    Shape {
        stage: usize,
        player: Option<usize>,
        what: String,
    },
    #[error("Q of player {player} at stage {stage} is not symmetric (asymmetry {asymmetry:e})")]
    QNotSymmetric {
        player: usize,
        stage: usize,
        asymmetry: f64,
    },
    #[error("R^ii of player {player} at stage {stage} is not symmetric positive definite")]
    RNotPositiveDefinite { player: usize, stage: usize },
    #[error("non-finite value while evaluating {0}")]
    NumericOverflow(String),
    #[error(
        "{what} at stage {stage} disagrees with finite differences (relative error {rel_err:e})"
    )]
    DerivativeMismatch {
        what: String,
        stage: usize,
        rel_err: f64,
    },
}

/// Sizes of a game: players `N`, stages `K`, state dimension `n` and the
/// per-player control dimensions `m_i` (constant over stages).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GameDims {
    pub players: usize,
    pub stages: usize,
    pub state_dim: usize,
    pub control_dims: Vec<usize>,
}

impl GameDims {
    pub fn new(
        players: usize,
        stages: usize,
        state_dim: usize,
        control_dims: Vec<usize>,
    ) -> Result<Self, GameError> {
        let dims = GameDims {
            players,
            stages,
            state_dim,
            control_dims,
        };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<(), GameError> {
        if self.players == 0 || self.stages == 0 || self.state_dim == 0 {
            return Err(GameError::InvalidDims(format!(
                "players={}, stages={}, state_dim={} must all be positive",
                self.players, self.stages, self.state_dim
            )));
        }
        if self.control_dims.len() != self.players {
            return Err(GameError::InvalidDims(format!(
                "{} control dimensions given for {} players",
                self.control_dims.len(),
                self.players
            )));
        }
        if let Some(i) = self.control_dims.iter().position(|&m| m == 0) {
            return Err(GameError::InvalidDims(format!(
                "player {i} has zero control dimension"
            )));
        }
        Ok(())
    }

    /// Total number of scalar decision variables across all players and stages.
    pub fn total_controls(&self) -> usize {
        self.stages * self.control_dims.iter().sum::<usize>()
    }
}

/// Actions `u^i_k` of every player at every stage.
///
/// Stored stage-major so that the controls entering one stage of the state
/// equation form a contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlProfile {
    stages: Vec<Vec<DVector<f64>>>,
}

impl ControlProfile {
    pub fn zeros(dims: &GameDims) -> Self {
        let stages = (0..dims.stages)
            .map(|_| {
                dims.control_dims
                    .iter()
                    .map(|&m| DVector::zeros(m))
                    .collect()
            })
            .collect();
        ControlProfile { stages }
    }

    /// Builds a profile from player-major data `u[i][k]`.
    pub fn from_players(u: Vec<Vec<DVector<f64>>>) -> Self {
        let players = u.len();
        let stages = u.first().map_or(0, Vec::len);
        let mut by_stage: Vec<Vec<DVector<f64>>> =
            (0..stages).map(|_| Vec::with_capacity(players)).collect();
        for per_player in u {
            for (k, v) in per_player.into_iter().enumerate() {
                if k < by_stage.len() {
                    by_stage[k].push(v);
                } else {
                    // ragged input; keep it so validate() can report it
                    by_stage.push(vec![v]);
                }
            }
        }
        ControlProfile { stages: by_stage }
    }

    /// Convenience for games where every control is scalar: `u[i][k]`.
    pub fn from_scalars(u: &[Vec<f64>]) -> Self {
        Self::from_players(
            u.iter()
                .map(|row| row.iter().map(|&v| DVector::from_element(1, v)).collect())
                .collect(),
        )
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn num_players(&self) -> usize {
        self.stages.first().map_or(0, Vec::len)
    }

    pub fn get(&self, player: usize, stage: usize) -> &DVector<f64> {
        &self.stages[stage][player]
    }

    pub fn get_mut(&mut self, player: usize, stage: usize) -> &mut DVector<f64> {
        &mut self.stages[stage][player]
    }

    /// All players' controls at one stage.
    pub fn stage(&self, stage: usize) -> &[DVector<f64>] {
        &self.stages[stage]
    }

    /// Player-major copy `u[i][k]`.
    pub fn to_players(&self) -> Vec<Vec<DVector<f64>>> {
        (0..self.num_players())
            .map(|i| {
                (0..self.num_stages())
                    .map(|k| self.get(i, k).clone())
                    .collect()
            })
            .collect()
    }

    /// A copy in which player `i`'s controls are replaced by `own`.
    pub fn with_player(&self, player: usize, own: &[DVector<f64>]) -> Self {
        let mut out = self.clone();
        for (k, v) in own.iter().enumerate() {
            out.stages[k][player] = v.clone();
        }
        out
    }

    pub fn player_controls(&self, player: usize) -> Vec<DVector<f64>> {
        (0..self.num_stages())
            .map(|k| self.get(player, k).clone())
            .collect()
    }

    pub fn validate(&self, dims: &GameDims) -> Result<(), GameError> {
        if self.stages.len() != dims.stages {
            return Err(GameError::Shape {
                stage: self.stages.len(),
                player: None,
                what: format!(
                    "profile has {} stages, game has {}",
                    self.stages.len(),
                    dims.stages
                ),
            });
        }
        for (k, stage) in self.stages.iter().enumerate() {
            if stage.len() != dims.players {
                return Err(GameError::Shape {
                    stage: k,
                    player: None,
                    what: format!("{} players given, expected {}", stage.len(), dims.players),
                });
            }
            for (i, u) in stage.iter().enumerate() {
                if u.len() != dims.control_dims[i] {
                    return Err(GameError::Shape {
                        stage: k,
                        player: Some(i),
                        what: format!(
                            "control has length {}, expected {}",
                            u.len(),
                            dims.control_dims[i]
                        ),
                    });
                }
            }
        }
        Ok(())
    }

    /// Flattens into one vector, stage-major then player.
    pub fn to_flat(&self) -> DVector<f64> {
        let data: Vec<f64> = self
            .stages
            .iter()
            .flat_map(|s| s.iter().flat_map(|v| v.iter().copied()))
            .collect();
        DVector::from_vec(data)
    }

    pub fn from_flat(dims: &GameDims, flat: &DVector<f64>) -> Self {
        let mut out = Self::zeros(dims);
        let mut off = 0;
        for k in 0..dims.stages {
            for (i, &m) in dims.control_dims.iter().enumerate() {
                out.stages[k][i].copy_from(&flat.rows(off, m));
                off += m;
            }
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.to_flat().norm()
    }
}

/// States `x_1..x_K` reached from the initial state `x_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn new(states: Vec<DVector<f64>>) -> Self {
        Trajectory { states }
    }

    pub fn from_scalars(x: &[f64]) -> Self {
        Trajectory {
            states: x.iter().map(|&v| DVector::from_element(1, v)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// State entering stage `k` (the initial state for `k = 0`).
    pub fn state_before<'a>(&'a self, stage: usize, x0: &'a DVector<f64>) -> &'a DVector<f64> {
        if stage == 0 {
            x0
        } else {
            &self.states[stage - 1]
        }
    }

    /// State produced by stage `k`.
    pub fn state_after(&self, stage: usize) -> &DVector<f64> {
        &self.states[stage]
    }

    pub fn validate(&self, dims: &GameDims) -> Result<(), GameError> {
        if self.states.len() != dims.stages {
            return Err(GameError::Shape {
                stage: self.states.len(),
                player: None,
                what: format!(
                    "trajectory has {} states, expected {}",
                    self.states.len(),
                    dims.stages
                ),
            });
        }
        for (k, x) in self.states.iter().enumerate() {
            if x.len() != dims.state_dim {
                return Err(GameError::Shape {
                    stage: k,
                    player: None,
                    what: format!("state has length {}, expected {}", x.len(), dims.state_dim),
                });
            }
        }
        Ok(())
    }

    /// Sum over stages of the 1-norm of the state difference.
    pub fn l1_distance(&self, other: &Trajectory) -> f64 {
        self.states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| (a - b).lp_norm(1))
            .sum()
    }

    pub fn max_abs_distance(&self, other: &Trajectory) -> f64 {
        self.states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max)
    }
}

/// Gradient of a stage function `g(x_{k+1}, u_k, x_k)` with respect to each
/// of its arguments.
#[derive(Debug, Clone, PartialEq)]
pub struct StageGradient {
    pub x_next: DVector<f64>,
    pub controls: Vec<DVector<f64>>,
    pub x: DVector<f64>,
}

impl StageGradient {
    pub fn zeros(dims: &GameDims) -> Self {
        StageGradient {
            x_next: DVector::zeros(dims.state_dim),
            controls: dims
                .control_dims
                .iter()
                .map(|&m| DVector::zeros(m))
                .collect(),
            x: DVector::zeros(dims.state_dim),
        }
    }
}

/// State equation `x_{k+1} = f_k(x_k, u^1_k, .., u^N_k)` with Jacobians.
pub trait StageDynamics: Send + Sync {
    fn step(&self, stage: usize, x: &DVector<f64>, u: &[DVector<f64>]) -> DVector<f64>;
    fn jacobian_x(&self, stage: usize, x: &DVector<f64>, u: &[DVector<f64>]) -> DMatrix<f64>;
    fn jacobian_u(
        &self,
        stage: usize,
        x: &DVector<f64>,
        u: &[DVector<f64>],
        player: usize,
    ) -> DMatrix<f64>;
}

/// Stage costs `g^i_k(x_{k+1}, u^1_k, .., u^N_k, x_k)` with gradients.
pub trait StageCosts: Send + Sync {
    fn cost(
        &self,
        player: usize,
        stage: usize,
        x_next: &DVector<f64>,
        u: &[DVector<f64>],
        x: &DVector<f64>,
    ) -> f64;
    fn gradient(
        &self,
        player: usize,
        stage: usize,
        x_next: &DVector<f64>,
        u: &[DVector<f64>],
        x: &DVector<f64>,
    ) -> StageGradient;
}

/// Anything with an initial state, a state equation and stage-additive
/// costs. Both [`LqGame`] and [`GenericGame`] implement it.
pub trait DynamicGame: StageDynamics + StageCosts {
    fn dims(&self) -> &GameDims;
    fn initial_state(&self) -> &DVector<f64>;
}

/// Linear-quadratic game:
/// `x_{k+1} = A_k x_k + sum_j B^j_k u^j_k`,
/// `g^i_k = 1/2 (x_{k+1}' Q^i_k x_{k+1} + sum_j u^j_k' R^{ij}_k u^j_k)`.
///
/// `q[i][k]` weighs the state produced by stage `k`; `r[i][k][j]` is `R^{ij}_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LqGame {
    dims: GameDims,
    x1: DVector<f64>,
    a: Vec<DMatrix<f64>>,
    b: Vec<Vec<DMatrix<f64>>>,
    q: Vec<Vec<DMatrix<f64>>>,
    r: Vec<Vec<Vec<DMatrix<f64>>>>,
}

const SYMMETRY_TOL: f64 = 1e-12;

impl LqGame {
    /// Validates every shape, symmetrizes `Q` (rejecting anything that is
    /// not symmetric to within 1e-12) and checks `R^{ii} > 0`.
    pub fn new(
        dims: GameDims,
        x1: DVector<f64>,
        a: Vec<DMatrix<f64>>,
        b: Vec<Vec<DMatrix<f64>>>,
        q: Vec<Vec<DMatrix<f64>>>,
        r: Vec<Vec<Vec<DMatrix<f64>>>>,
    ) -> Result<Self, GameError> {
        dims.validate()?;
        let n = dims.state_dim;
        let big_k = dims.stages;
        let big_n = dims.players;
        let shape = |stage: usize, player: Option<usize>, what: String| GameError::Shape {
            stage,
            player,
            what,
        };
        if x1.len() != n {
            return Err(shape(
                0,
                None,
                format!("x1 has length {}, expected {n}", x1.len()),
            ));
        }
        if a.len() != big_k || b.len() != big_k {
            return Err(shape(
                a.len().min(b.len()),
                None,
                format!(
                    "{} A and {} B stages given, expected {big_k}",
                    a.len(),
                    b.len()
                ),
            ));
        }
        for k in 0..big_k {
            if a[k].shape() != (n, n) {
                return Err(shape(
                    k,
                    None,
                    format!("A is {:?}, expected ({n}, {n})", a[k].shape()),
                ));
            }
            if b[k].len() != big_n {
                return Err(shape(
                    k,
                    None,
                    format!("{} B blocks, expected {big_n}", b[k].len()),
                ));
            }
            for (j, bj) in b[k].iter().enumerate() {
                let m = dims.control_dims[j];
                if bj.shape() != (n, m) {
                    return Err(shape(
                        k,
                        Some(j),
                        format!("B is {:?}, expected ({n}, {m})", bj.shape()),
                    ));
                }
            }
        }
        if q.len() != big_n || r.len() != big_n {
            return Err(shape(
                0,
                None,
                format!(
                    "{} Q and {} R players given, expected {big_n}",
                    q.len(),
                    r.len()
                ),
            ));
        }
        let mut q = q;
        for i in 0..big_n {
            if q[i].len() != big_k || r[i].len() != big_k {
                return Err(shape(
                    q[i].len().min(r[i].len()),
                    Some(i),
                    format!(
                        "{} Q and {} R stages, expected {big_k}",
                        q[i].len(),
                        r[i].len()
                    ),
                ));
            }
            for k in 0..big_k {
                let qik = &mut q[i][k];
                if qik.shape() != (n, n) {
                    return Err(shape(
                        k,
                        Some(i),
                        format!("Q is {:?}, expected ({n}, {n})", qik.shape()),
                    ));
                }
                let asymmetry = (&*qik - qik.transpose()).amax();
                if !asymmetry.is_finite() || asymmetry > SYMMETRY_TOL {
                    return Err(GameError::QNotSymmetric {
                        player: i,
                        stage: k,
                        asymmetry,
                    });
                }
                *qik = linalg::symmetrize(qik);
                if r[i][k].len() != big_n {
                    return Err(shape(
                        k,
                        Some(i),
                        format!("{} R blocks, expected {big_n}", r[i][k].len()),
                    ));
                }
                for (j, rij) in r[i][k].iter().enumerate() {
                    let m = dims.control_dims[j];
                    if rij.shape() != (m, m) {
                        return Err(shape(
                            k,
                            Some(i),
                            format!("R^({i},{j}) is {:?}, expected ({m}, {m})", rij.shape()),
                        ));
                    }
                }
                let rii = &r[i][k][i];
                if (rii - rii.transpose()).amax() > SYMMETRY_TOL || rii.clone().cholesky().is_none()
                {
                    return Err(GameError::RNotPositiveDefinite {
                        player: i,
                        stage: k,
                    });
                }
            }
        }
        let all_finite = x1.iter().all(|v| v.is_finite())
            && a.iter().all(|m| m.iter().all(|v| v.is_finite()))
            && b.iter().flatten().all(|m| m.iter().all(|v| v.is_finite()))
            && q.iter().flatten().all(|m| m.iter().all(|v| v.is_finite()))
            && r.iter()
                .flatten()
                .flatten()
                .all(|m| m.iter().all(|v| v.is_finite()));
        if !all_finite {
            return Err(GameError::NumericOverflow("game data".into()));
        }
        Ok(LqGame {
            dims,
            x1,
            a,
            b,
            q,
            r,
        })
    }

    pub fn x1(&self) -> &DVector<f64> {
        &self.x1
    }

    pub fn a(&self, stage: usize) -> &DMatrix<f64> {
        &self.a[stage]
    }

    pub fn b(&self, stage: usize, player: usize) -> &DMatrix<f64> {
        &self.b[stage][player]
    }

    /// `[B^1_k .. B^N_k]`.
    pub fn stacked_b(&self, stage: usize) -> DMatrix<f64> {
        let n = self.dims.state_dim;
        let total: usize = self.dims.control_dims.iter().sum();
        let mut out = DMatrix::zeros(n, total);
        let mut off = 0;
        for bj in &self.b[stage] {
            out.columns_mut(off, bj.ncols()).copy_from(bj);
            off += bj.ncols();
        }
        out
    }

    pub fn q(&self, player: usize, stage: usize) -> &DMatrix<f64> {
        &self.q[player][stage]
    }

    pub fn r(&self, player: usize, stage: usize, other: usize) -> &DMatrix<f64> {
        &self.r[player][stage][other]
    }

    pub fn with_x1(&self, x1: DVector<f64>) -> Result<Self, GameError> {
        LqGame::new(
            self.dims.clone(),
            x1,
            self.a.clone(),
            self.b.clone(),
            self.q.clone(),
            self.r.clone(),
        )
    }

    pub fn with_q(&self, player: usize, stage: usize, q: DMatrix<f64>) -> Result<Self, GameError> {
        let mut qs = self.q.clone();
        qs[player][stage] = q;
        LqGame::new(
            self.dims.clone(),
            self.x1.clone(),
            self.a.clone(),
            self.b.clone(),
            qs,
            self.r.clone(),
        )
    }

    /// Player `i`'s stage cost excluding the rivals' control terms.
    fn own_stage_cost(&self, i: usize, k: usize, x_next: &DVector<f64>, u: &[DVector<f64>]) -> f64 {
        let mut c = x_next.dot(&(&self.q[i][k] * x_next));
        for (j, uj) in u.iter().enumerate() {
            c += uj.dot(&(&self.r[i][k][j] * uj));
        }
        0.5 * c
    }
}

impl StageDynamics for LqGame {
    fn step(&self, stage: usize, x: &DVector<f64>, u: &[DVector<f64>]) -> DVector<f64> {
        let mut next = &self.a[stage] * x;
        for (bj, uj) in self.b[stage].iter().zip(u) {
            next.gemv(1.0, bj, uj, 1.0);
        }
        next
    }

    fn jacobian_x(&self, stage: usize, _x: &DVector<f64>, _u: &[DVector<f64>]) -> DMatrix<f64> {
        self.a[stage].clone()
    }

    fn jacobian_u(
        &self,
        stage: usize,
        _x: &DVector<f64>,
        _u: &[DVector<f64>],
        player: usize,
    ) -> DMatrix<f64> {
        self.b[stage][player].clone()
    }
}

impl StageCosts for LqGame {
    fn cost(
        &self,
        player: usize,
        stage: usize,
        x_next: &DVector<f64>,
        u: &[DVector<f64>],
        _x: &DVector<f64>,
    ) -> f64 {
        self.own_stage_cost(player, stage, x_next, u)
    }

    fn gradient(
        &self,
        player: usize,
        stage: usize,
        x_next: &DVector<f64>,
        u: &[DVector<f64>],
        _x: &DVector<f64>,
    ) -> StageGradient {
        let r = &self.r[player][stage];
        // R^{ij} need not be symmetric: d/du (u'Ru)/2 = (R + R')u/2
        let controls = u
            .iter()
            .enumerate()
            .map(|(j, uj)| 0.5 * (&r[j] * uj + r[j].tr_mul(uj)))
            .collect();
        StageGradient {
            x_next: &self.q[player][stage] * x_next,
            controls,
            x: DVector::zeros(self.dims.state_dim),
        }
    }
}

impl DynamicGame for LqGame {
    fn dims(&self) -> &GameDims {
        &self.dims
    }

    fn initial_state(&self) -> &DVector<f64> {
        &self.x1
    }
}

/// A game defined by user-supplied evaluators.
#[derive(Clone)]
pub struct GenericGame {
    dims: GameDims,
    x1: DVector<f64>,
    dynamics: Arc<dyn StageDynamics>,
    costs: Arc<dyn StageCosts>,
}

impl std::fmt::Debug for GenericGame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GenericGame")
            .field("dims", &self.dims)
            .field("x1", &self.x1)
            .finish_non_exhaustive()
    }
}

/// Relative tolerance for the construction-time derivative spot check.
pub const DERIVATIVE_CHECK_TOL: f64 = 1e-5;

impl GenericGame {
    /// Builds the game and spot-checks every Jacobian and gradient against
    /// central finite differences at a few seeded random points.
    pub fn new(
        dims: GameDims,
        x1: DVector<f64>,
        dynamics: Arc<dyn StageDynamics>,
        costs: Arc<dyn StageCosts>,
    ) -> Result<Self, GameError> {
        let game = Self::new_unchecked(dims, x1, dynamics, costs)?;
        game.check_derivatives(3, 0x5eed)?;
        Ok(game)
    }

    /// Same as [`GenericGame::new`] without the derivative spot check.
    pub fn new_unchecked(
        dims: GameDims,
        x1: DVector<f64>,
        dynamics: Arc<dyn StageDynamics>,
        costs: Arc<dyn StageCosts>,
    ) -> Result<Self, GameError> {
        dims.validate()?;
        if x1.len() != dims.state_dim {
            return Err(GameError::Shape {
                stage: 0,
                player: None,
                what: format!("x1 has length {}, expected {}", x1.len(), dims.state_dim),
            });
        }
        Ok(GenericGame {
            dims,
            x1,
            dynamics,
            costs,
        })
    }

    /// Views a linear-quadratic game through the generic evaluator interface.
    pub fn from_lq(game: &LqGame) -> Self {
        let shared = Arc::new(game.clone());
        GenericGame {
            dims: game.dims.clone(),
            x1: game.x1.clone(),
            dynamics: shared.clone(),
            costs: shared,
        }
    }

    pub fn check_derivatives(&self, probes: usize, seed: u64) -> Result<(), GameError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.dims.state_dim;
        let mut randn = |len: usize| -> DVector<f64> {
            DVector::from_iterator(len, (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)))
        };
        for _ in 0..probes {
            for k in 0..self.dims.stages {
                let x = randn(n);
                let x_next = randn(n);
                let u: Vec<DVector<f64>> =
                    self.dims.control_dims.iter().map(|&m| randn(m)).collect();

                let jx = self.dynamics.jacobian_x(k, &x, &u);
                let fd = linalg::fd_jacobian(&x, |xp| self.dynamics.step(k, xp, &u));
                check_close("dynamics Jacobian in x", k, &jx, &fd)?;
                for j in 0..self.dims.players {
                    let ju = self.dynamics.jacobian_u(k, &x, &u, j);
                    let fd = linalg::fd_jacobian(&u[j], |uj| {
                        let mut up = u.clone();
                        up[j] = uj.clone();
                        self.dynamics.step(k, &x, &up)
                    });
                    check_close("dynamics Jacobian in u", k, &ju, &fd)?;
                }
                for i in 0..self.dims.players {
                    let g = self.costs.gradient(i, k, &x_next, &u, &x);
                    let fd = linalg::fd_gradient(&x_next, |xn| self.costs.cost(i, k, xn, &u, &x));
                    check_close_vec("cost gradient in x_next", k, &g.x_next, &fd)?;
                    let fd = linalg::fd_gradient(&x, |xp| self.costs.cost(i, k, &x_next, &u, xp));
                    check_close_vec("cost gradient in x", k, &g.x, &fd)?;
                    for j in 0..self.dims.players {
                        let fd = linalg::fd_gradient(&u[j], |uj| {
                            let mut up = u.clone();
                            up[j] = uj.clone();
                            self.costs.cost(i, k, &x_next, &up, &x)
                        });
                        check_close_vec("cost gradient in u", k, &g.controls[j], &fd)?;
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_close(
    what: &str,
    stage: usize,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
) -> Result<(), GameError> {
    if a.shape() != b.shape() {
        return Err(GameError::Shape {
            stage,
            player: None,
            what: format!("{what} has shape {:?}, expected {:?}", a.shape(), b.shape()),
        });
    }
    let rel_err = (a - b).amax() / (1.0 + b.amax());
    if !(rel_err <= DERIVATIVE_CHECK_TOL) {
        return Err(GameError::DerivativeMismatch {
            what: what.to_string(),
            stage,
            rel_err,
        });
    }
    Ok(())
}

fn check_close_vec(
    what: &str,
    stage: usize,
    a: &DVector<f64>,
    b: &DVector<f64>,
) -> Result<(), GameError> {
    check_close(
        what,
        stage,
        &DMatrix::from_column_slice(a.len(), 1, a.as_slice()),
        &DMatrix::from_column_slice(b.len(), 1, b.as_slice()),
    )
}

impl StageDynamics for GenericGame {
    fn step(&self, stage: usize, x: &DVector<f64>, u: &[DVector<f64>]) -> DVector<f64> {
        self.dynamics.step(stage, x, u)
    }
    fn jacobian_x(&self, stage: usize, x: &DVector<f64>, u: &[DVector<f64>]) -> DMatrix<f64> {
        self.dynamics.jacobian_x(stage, x, u)
    }
    fn jacobian_u(
        &self,
        stage: usize,
        x: &DVector<f64>,
        u: &[DVector<f64>],
        player: usize,
    ) -> DMatrix<f64> {
        self.dynamics.jacobian_u(stage, x, u, player)
    }
}

impl StageCosts for GenericGame {
    fn cost(
        &self,
        player: usize,
        stage: usize,
        x_next: &DVector<f64>,
        u: &[DVector<f64>],
        x: &DVector<f64>,
    ) -> f64 {
        self.costs.cost(player, stage, x_next, u, x)
    }
    fn gradient(
        &self,
        player: usize,
        stage: usize,
        x_next: &DVector<f64>,
        u: &[DVector<f64>],
        x: &DVector<f64>,
    ) -> StageGradient {
        self.costs.gradient(player, stage, x_next, u, x)
    }
}

impl DynamicGame for GenericGame {
    fn dims(&self) -> &GameDims {
        &self.dims
    }
    fn initial_state(&self) -> &DVector<f64> {
        &self.x1
    }
}

/// Runs the state equation forward from the initial state.
pub fn rollout<G: DynamicGame + ?Sized>(
    game: &G,
    controls: &ControlProfile,
) -> Result<Trajectory, GameError> {
    controls.validate(game.dims())?;
    let mut states = Vec::with_capacity(game.dims().stages);
    let mut x = game.initial_state().clone();
    for k in 0..game.dims().stages {
        let next = game.step(k, &x, controls.stage(k));
        if next.len() != game.dims().state_dim {
            return Err(GameError::Shape {
                stage: k,
                player: None,
                what: format!("state equation returned length {}", next.len()),
            });
        }
        states.push(next.clone());
        x = next;
    }
    Ok(Trajectory { states })
}

/// `J^i = sum_k g^i_k(x_{k+1}, u_k, x_k)` along a trajectory produced by
/// [`rollout`] (not re-checked).
pub fn total_cost<G: DynamicGame + ?Sized>(
    game: &G,
    player: usize,
    controls: &ControlProfile,
    traj: &Trajectory,
) -> Result<f64, GameError> {
    let dims = game.dims();
    if player >= dims.players {
        return Err(GameError::Shape {
            stage: 0,
            player: Some(player),
            what: format!("player index out of range (N = {})", dims.players),
        });
    }
    controls.validate(dims)?;
    traj.validate(dims)?;
    let x0 = game.initial_state();
    let mut total = 0.0;
    for k in 0..dims.stages {
        let c = game.cost(
            player,
            k,
            traj.state_after(k),
            controls.stage(k),
            traj.state_before(k, x0),
        );
        if !c.is_finite() {
            return Err(GameError::NumericOverflow(format!(
                "cost of player {player} at stage {k}"
            )));
        }
        total += c;
    }
    if !total.is_finite() {
        return Err(GameError::NumericOverflow(format!(
            "total cost of player {player}"
        )));
    }
    Ok(total)
}

/// All players' total costs at a profile (rolls out once).
pub fn all_costs<G: DynamicGame + ?Sized>(
    game: &G,
    controls: &ControlProfile,
) -> Result<Vec<f64>, GameError> {
    let traj = rollout(game, controls)?;
    (0..game.dims().players)
        .map(|i| total_cost(game, i, controls, &traj))
        .collect()
}

/// `max_k ||x_{k+1} - f_k(x_k, u_k)||_inf`.
pub fn feasibility_residual<G: DynamicGame + ?Sized>(
    game: &G,
    controls: &ControlProfile,
    traj: &Trajectory,
) -> Result<f64, GameError> {
    controls.validate(game.dims())?;
    traj.validate(game.dims())?;
    let x0 = game.initial_state();
    let mut worst: f64 = 0.0;
    for k in 0..game.dims().stages {
        let predicted = game.step(k, traj.state_before(k, x0), controls.stage(k));
        let r = (traj.state_after(k) - predicted).amax();
        worst = if r.is_nan() { f64::NAN } else { worst.max(r) };
    }
    Ok(worst)
}
