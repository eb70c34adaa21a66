use nalgebra::{DMatrix, DVector};

use super::descent::solve_block_descent;
use super::{adjoint_gradient, DescentOptions, OcpError, OcpSolution, PlayerObjective};
use crate::game_model::{
    rollout, total_cost, ControlProfile, DynamicGame, GameError, LqGame, StageDynamics,
};
use crate::linalg;

/// Most negative eigenvalue of `Q^i` still treated as positive semidefinite.
pub const NONCONVEX_TOL: f64 = 1e-10;

/// Player `i`'s exact best response to the rivals' controls in `others`
/// (player `i`'s own entries are ignored).
///
/// With rivals fixed the state obeys `x_{k+1} = A x_k + B^i u^i_k + c_k`,
/// `c_k = sum_{j != i} B^j u^j_k`, so the value function is affine-quadratic
/// `1/2 x'S x + s'x + const` and the backward recursion carries the
/// feedforward term `s`. The reported objective is the full cost `J^i`,
/// rivals' control terms included.
pub fn best_response_lq(
    game: &LqGame,
    player: usize,
    others: &ControlProfile,
) -> Result<OcpSolution, OcpError> {
    let dims = game.dims();
    if player >= dims.players {
        return Err(GameError::Shape {
            stage: 0,
            player: Some(player),
            what: format!("player index out of range (N = {})", dims.players),
        }
        .into());
    }
    others.validate(dims)?;
    for k in 0..dims.stages {
        let min_eig = linalg::min_eigenvalue(game.q(player, k));
        if min_eig < -NONCONVEX_TOL {
            return Err(OcpError::NonConvexPlayerProblem {
                player,
                stage: k,
                min_eig,
            });
        }
    }

    let big_k = dims.stages;
    let n = dims.state_dim;
    let drift: Vec<DVector<f64>> = (0..big_k)
        .map(|k| {
            let mut c = DVector::zeros(n);
            for j in (0..dims.players).filter(|&j| j != player) {
                c += game.b(k, j) * others.get(j, k);
            }
            c
        })
        .collect();

    let mut feedback: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::with_capacity(big_k);
    let mut quad = game.q(player, big_k - 1).clone();
    let mut lin = DVector::zeros(n);
    for k in (0..big_k).rev() {
        let a = game.a(k);
        let b = game.b(k, player);
        let r = game.r(player, k, player);
        let c = &drift[k];
        let h = linalg::symmetrize(&(r + b.tr_mul(&(&quad * b))));
        let chol = h
            .clone()
            .cholesky()
            .ok_or(OcpError::RiccatiIllConditioned {
                stage: k,
                condition: linalg::spd_condition(&h),
            })?;
        let gain = chol.solve(&b.tr_mul(&(&quad * a)));
        let offset = chol.solve(&b.tr_mul(&(&quad * c + &lin)));
        let closed = a - b * &gain;
        let closed_drift = c - b * &offset;
        let mut next_quad = gain.tr_mul(&(r * &gain)) + closed.tr_mul(&(&quad * &closed));
        let next_lin = gain.tr_mul(&(r * &offset)) + closed.tr_mul(&(&quad * closed_drift + &lin));
        if k > 0 {
            next_quad += game.q(player, k - 1);
        }
        quad = linalg::symmetrize(&next_quad);
        lin = next_lin;
        feedback.push((gain, offset));
    }
    feedback.reverse();

    let mut controls = others.clone();
    let mut x = game.x1().clone();
    for (k, (gain, offset)) in feedback.iter().enumerate() {
        *controls.get_mut(player, k) = -(gain * &x) - offset;
        x = game.step(k, &x, controls.stage(k));
    }
    finish(game, player, controls, 0, true)
}

fn finish<G: DynamicGame + ?Sized>(
    game: &G,
    player: usize,
    controls: ControlProfile,
    iterations: usize,
    converged: bool,
) -> Result<OcpSolution, OcpError> {
    let trajectory = rollout(game, &controls)?;
    let objective = total_cost(game, player, &controls, &trajectory)?;
    let grad = adjoint_gradient(game, &PlayerObjective::new(game, player), &controls)?;
    let grad_norm = grad
        .player_controls(player)
        .iter()
        .map(|g| g.norm_squared())
        .sum::<f64>()
        .sqrt();
    Ok(OcpSolution {
        controls,
        trajectory,
        objective,
        iterations,
        converged,
        grad_norm,
    })
}

/// Local best response by descent on player `i`'s own cost, starting from
/// `start`. Only a local certificate: without convexity it may miss the
/// global best response.
pub fn best_response_descent<G: DynamicGame + ?Sized>(
    game: &G,
    player: usize,
    start: &ControlProfile,
    opts: &DescentOptions,
) -> Result<OcpSolution, OcpError> {
    if player >= game.dims().players {
        return Err(GameError::Shape {
            stage: 0,
            player: Some(player),
            what: format!("player index out of range (N = {})", game.dims().players),
        }
        .into());
    }
    let objective = PlayerObjective::new(game, player);
    solve_block_descent(game, &objective, player, start, opts)
}
