use nalgebra::DMatrix;

use super::{adjoint_gradient, OcpError, OcpSolution};
use crate::game_model::{rollout, ControlProfile, DynamicGame, LqGame, StageDynamics};
use crate::linalg;
use crate::structure::{
    check_coercivity_lq, decompose_quasi_potential_lq, QuasiPotentialDecomposition, COERCIVITY_TOL,
    SHARED_Q_TOL,
};

/// Largest tolerated condition number of a stage system `R + B' S B`.
pub const MAX_STAGE_CONDITION: f64 = 1e12;

/// Minimizes the quasi-potential of a shared-`Q` LQ game exactly. The
/// minimizer is an open-loop Nash equilibrium of the game.
pub fn solve_lq_quasi_potential(game: &LqGame) -> Result<OcpSolution, OcpError> {
    let decomp = decompose_quasi_potential_lq(game, SHARED_Q_TOL)?;
    solve_lq_with_decomposition(game, &decomp)
}

/// As [`solve_lq_quasi_potential`] with a decomposition already in hand.
pub fn solve_lq_with_decomposition(
    game: &LqGame,
    decomp: &QuasiPotentialDecomposition,
) -> Result<OcpSolution, OcpError> {
    let coercivity = check_coercivity_lq(game, COERCIVITY_TOL);
    if !coercivity.coercive {
        return Err(OcpError::NotCoercive(coercivity));
    }
    let rebuilt;
    let forms = match decomp.lq_forms() {
        Some(f) => f,
        None => {
            rebuilt = decompose_quasi_potential_lq(game, SHARED_Q_TOL)?;
            rebuilt
                .lq_forms()
                .expect("LQ decomposition carries matrix forms")
        }
    };
    let dims = game.dims();
    let big_k = dims.stages;

    // Backward pass. `cost_to_go` prices the state produced by stage k,
    // including that state's own Q term.
    let mut gains: Vec<DMatrix<f64>> = vec![DMatrix::zeros(0, 0); big_k];
    let mut cost_to_go = forms.q[big_k - 1].clone();
    for k in (0..big_k).rev() {
        let a = game.a(k);
        let b = game.stacked_b(k);
        let r = linalg::block_diag(&forms.r[k].iter().collect::<Vec<_>>());
        let sb = &cost_to_go * &b;
        let h = linalg::symmetrize(&(r + b.tr_mul(&sb)));
        let condition = linalg::spd_condition(&h);
        if !(condition <= MAX_STAGE_CONDITION) {
            return Err(OcpError::RiccatiIllConditioned {
                stage: k,
                condition,
            });
        }
        let chol = h.cholesky().ok_or(OcpError::RiccatiIllConditioned {
            stage: k,
            condition: f64::INFINITY,
        })?;
        let gain = chol.solve(&(sb.tr_mul(a)));
        let closed = a - &b * &gain;
        let mut next = a.tr_mul(&(&cost_to_go * closed));
        if k > 0 {
            next += &forms.q[k - 1];
        }
        cost_to_go = linalg::symmetrize(&next);
        gains[k] = gain;
    }

    // Forward pass: record the open-loop sequence produced by the feedback law.
    let mut controls = ControlProfile::zeros(dims);
    let mut x = game.x1().clone();
    for (k, gain) in gains.iter().enumerate() {
        let stacked = -(gain * &x);
        let mut off = 0;
        for (i, &m) in dims.control_dims.iter().enumerate() {
            *controls.get_mut(i, k) = stacked.rows(off, m).into_owned();
            off += m;
        }
        x = game.step(k, &x, controls.stage(k));
    }
    let trajectory = rollout(game, &controls)?;
    let objective = decomp.evaluate(game, &controls)?;
    let grad_norm = adjoint_gradient(game, decomp, &controls)?.norm();
    Ok(OcpSolution {
        controls,
        trajectory,
        objective,
        iterations: 0,
        converged: true,
        grad_norm,
    })
}
