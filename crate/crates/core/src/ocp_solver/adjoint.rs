use crate::game_model::{rollout, ControlProfile, DynamicGame, GameError};
use crate::structure::StageObjective;

/// Gradient of `sum_k f_k(x_{k+1}, u_k, x_k)` with respect to every control,
/// the states being eliminated through the state equation.
///
/// Costates run backward: `p_k = df_k/dx_{k+1} + lambda_{k+1}` and
/// `lambda_k = df_k/dx_k + (df_k/dx)' p_k`, so that
/// `dF/du^i_k = df_k/du^i_k + (df_k/du^i)' p_k`.
pub fn adjoint_gradient<G, O>(
    game: &G,
    objective: &O,
    controls: &ControlProfile,
) -> Result<ControlProfile, GameError>
where
    G: DynamicGame + ?Sized,
    O: StageObjective + ?Sized,
{
    let traj = rollout(game, controls)?;
    let dims = game.dims();
    let x0 = game.initial_state();
    let mut grad = ControlProfile::zeros(dims);
    let mut downstream = nalgebra::DVector::zeros(dims.state_dim);
    for k in (0..dims.stages).rev() {
        let x = traj.state_before(k, x0);
        let x_next = traj.state_after(k);
        let u = controls.stage(k);
        let g = objective.gradient(k, x_next, u, x);
        let costate = &g.x_next + &downstream;
        for i in 0..dims.players {
            let ju = game.jacobian_u(k, x, u, i);
            *grad.get_mut(i, k) = &g.controls[i] + ju.tr_mul(&costate);
        }
        downstream = &g.x + game.jacobian_x(k, x, u).tr_mul(&costate);
    }
    Ok(grad)
}
