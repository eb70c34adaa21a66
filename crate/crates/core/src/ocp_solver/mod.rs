//! Minimizers of stage-additive objectives over trajectories generated by
//! the state equation.
//!
//! * [`solve_lq_quasi_potential`]: exact backward Riccati solve of the
//!   quasi-potential problem of an LQ game.
//! * [`solve_generic_descent`]: projected gradient descent with Armijo
//!   backtracking, gradients from [`adjoint_gradient`].
//! * [`best_response_lq`]: one player's exact best response, an
//!   affine-quadratic tracking problem with the rivals' inputs as drift.

mod adjoint;
mod best_response;
mod descent;
mod riccati;

use nalgebra::DVector;
use thiserror::Error;

pub use adjoint::adjoint_gradient;
pub use best_response::{best_response_descent, best_response_lq, NONCONVEX_TOL};
pub use descent::{solve_generic_descent, BoxBounds, DescentOptions};
pub use riccati::{solve_lq_quasi_potential, solve_lq_with_decomposition, MAX_STAGE_CONDITION};

use crate::game_model::{ControlProfile, DynamicGame, GameError, StageGradient, Trajectory};
use crate::structure::{CoercivityReport, StageObjective, StructureError};

#[derive(Debug, Clone, PartialEq)]
pub struct OcpSolution {
    pub controls: ControlProfile,
    pub trajectory: Trajectory,
    /// Value of the minimized objective at `controls`.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OcpError {
    #[error("quasi-potential is not coercive (min eig Q = {}, min eig R = {})", .0.min_eig_q, .0.min_eig_r)]
    NotCoercive(CoercivityReport),
    #[error("game has no quasi-potential: {0}")]
    NotQuasiPotential(#[from] StructureError),
    #[error("stage {stage} Riccati system has condition number {condition:e}")]
    RiccatiIllConditioned { stage: usize, condition: f64 },
    #[error("no convergence within {} iterations (gradient norm {:e})", .best.iterations, .best.grad_norm)]
    MaxItersExceeded { best: Box<OcpSolution> },
    #[error("line search stalled after {} iterations (gradient norm {:e})", .best.iterations, .best.grad_norm)]
    LineSearchStalled { best: Box<OcpSolution> },
    #[error(
        "player {player}'s problem is not convex: Q at stage {stage} has eigenvalue {min_eig:e}"
    )]
    NonConvexPlayerProblem {
        player: usize,
        stage: usize,
        min_eig: f64,
    },
    #[error("invalid solver options: {0}")]
    InvalidOptions(String),
    #[error(transparent)]
    Game(#[from] GameError),
}

impl OcpError {
    /// The best iterate carried by iteration-budget and line-search failures.
    pub fn best_iterate(&self) -> Option<&OcpSolution> {
        match self {
            OcpError::MaxItersExceeded { best } | OcpError::LineSearchStalled { best } => {
                Some(best)
            }
            _ => None,
        }
    }
}

/// Player `i`'s own stage costs viewed as a stage-additive objective.
pub struct PlayerObjective<'a, G: ?Sized> {
    pub game: &'a G,
    pub player: usize,
}

impl<'a, G: DynamicGame + ?Sized> PlayerObjective<'a, G> {
    pub fn new(game: &'a G, player: usize) -> Self {
        PlayerObjective { game, player }
    }
}

impl<G: DynamicGame + ?Sized> StageObjective for PlayerObjective<'_, G> {
    fn value(
        &self,
        stage: usize,
        x_next: &DVector<f64>,
        u: &[DVector<f64>],
        x: &DVector<f64>,
    ) -> f64 {
        self.game.cost(self.player, stage, x_next, u, x)
    }

    fn gradient(
        &self,
        stage: usize,
        x_next: &DVector<f64>,
        u: &[DVector<f64>],
        x: &DVector<f64>,
    ) -> StageGradient {
        self.game.gradient(self.player, stage, x_next, u, x)
    }
}
