use nalgebra::DVector;

use super::{adjoint_gradient, OcpError, OcpSolution};
use crate::game_model::{ControlProfile, DynamicGame, GameDims, Trajectory};
use crate::structure::{objective_along, StageObjective};

/// Per-player scalar bounds applied to every control component.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentOptions {
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Trial step of the first iteration; later iterations start from the
    /// Barzilai-Borwein step.
    pub initial_step: f64,
    pub shrink: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
    pub bounds: Option<BoxBounds>,
}

impl Default for DescentOptions {
    fn default() -> Self {
        DescentOptions {
            max_iters: 10_000,
            grad_tol: 1e-9,
            initial_step: 1.0,
            shrink: 0.5,
            armijo: 1e-4,
            max_backtracks: 60,
            bounds: None,
        }
    }
}

impl DescentOptions {
    pub fn validate(&self, dims: &GameDims) -> Result<(), OcpError> {
        let bad = |msg: &str| Err(OcpError::InvalidOptions(msg.to_string()));
        if !(self.grad_tol > 0.0)
            || !(self.initial_step > 0.0)
            || !(self.armijo > 0.0 && self.armijo < 1.0)
        {
            return bad("grad_tol and initial_step must be positive, armijo in (0, 1)");
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return bad("shrink factor must lie in (0, 1)");
        }
        if self.max_backtracks == 0 {
            return bad("max_backtracks must be positive");
        }
        if let Some(b) = &self.bounds {
            if b.lower.len() != dims.players || b.upper.len() != dims.players {
                return bad("bounds need one lower and one upper value per player");
            }
            if b.lower.iter().zip(&b.upper).any(|(lo, hi)| !(lo <= hi)) {
                return bad("lower bound exceeds upper bound");
            }
        }
        Ok(())
    }
}

/// Flat-vector view of the problem restricted to an optional set of players.
struct Problem<'a, G: ?Sized, O: ?Sized> {
    game: &'a G,
    objective: &'a O,
    active: Option<usize>,
    bounds: Option<&'a BoxBounds>,
    /// Per flat entry: owning player.
    owner: Vec<usize>,
}

impl<'a, G, O> Problem<'a, G, O>
where
    G: DynamicGame + ?Sized,
    O: StageObjective + ?Sized,
{
    fn new(
        game: &'a G,
        objective: &'a O,
        active: Option<usize>,
        bounds: Option<&'a BoxBounds>,
    ) -> Self {
        let dims = game.dims();
        let owner = (0..dims.stages)
            .flat_map(|_| {
                dims.control_dims
                    .iter()
                    .enumerate()
                    .flat_map(|(i, &m)| std::iter::repeat_n(i, m))
            })
            .collect();
        Problem {
            game,
            objective,
            active,
            bounds,
            owner,
        }
    }

    fn profile(&self, flat: &DVector<f64>) -> ControlProfile {
        ControlProfile::from_flat(self.game.dims(), flat)
    }

    fn value(&self, flat: &DVector<f64>) -> Result<(f64, Trajectory), OcpError> {
        Ok(objective_along(
            self.game,
            self.objective,
            &self.profile(flat),
        )?)
    }

    fn gradient(&self, flat: &DVector<f64>) -> Result<DVector<f64>, OcpError> {
        let mut g = adjoint_gradient(self.game, self.objective, &self.profile(flat))?.to_flat();
        if let Some(i) = self.active {
            for (gv, &owner) in g.iter_mut().zip(&self.owner) {
                if owner != i {
                    *gv = 0.0;
                }
            }
        }
        Ok(g)
    }

    fn project(&self, flat: &mut DVector<f64>) {
        if let Some(b) = self.bounds {
            for (v, &owner) in flat.iter_mut().zip(&self.owner) {
                *v = v.clamp(b.lower[owner], b.upper[owner]);
            }
        }
    }

    /// Norm of the projected-gradient step `u - P(u - g)`.
    fn stationarity(&self, flat: &DVector<f64>, grad: &DVector<f64>) -> f64 {
        if self.bounds.is_none() {
            return grad.norm();
        }
        let mut moved = flat - grad;
        self.project(&mut moved);
        (flat - moved).norm()
    }
}

/// Minimizes a stage-additive objective over all controls (states
/// eliminated through the state equation) by projected gradient descent
/// with Barzilai-Borwein trial steps and Armijo backtracking.
///
/// On budget exhaustion or a stalled line search the error carries the
/// best iterate found.
pub fn solve_generic_descent<G, O>(
    game: &G,
    objective: &O,
    init: &ControlProfile,
    opts: &DescentOptions,
) -> Result<OcpSolution, OcpError>
where
    G: DynamicGame + ?Sized,
    O: StageObjective + ?Sized,
{
    descend(
        Problem::new(game, objective, None, opts.bounds.as_ref()),
        init,
        opts,
    )
}

/// Descent over a single player's controls, the others held fixed.
pub(super) fn solve_block_descent<G, O>(
    game: &G,
    objective: &O,
    player: usize,
    init: &ControlProfile,
    opts: &DescentOptions,
) -> Result<OcpSolution, OcpError>
where
    G: DynamicGame + ?Sized,
    O: StageObjective + ?Sized,
{
    descend(
        Problem::new(game, objective, Some(player), opts.bounds.as_ref()),
        init,
        opts,
    )
}

fn descend<G, O>(
    problem: Problem<'_, G, O>,
    init: &ControlProfile,
    opts: &DescentOptions,
) -> Result<OcpSolution, OcpError>
where
    G: DynamicGame + ?Sized,
    O: StageObjective + ?Sized,
{
    opts.validate(problem.game.dims())?;
    init.validate(problem.game.dims())?;
    let mut u = init.to_flat();
    problem.project(&mut u);
    let (mut f, mut traj) = problem.value(&u)?;
    let mut g = problem.gradient(&u)?;
    let mut stat = problem.stationarity(&u, &g);
    let mut prev: Option<(DVector<f64>, DVector<f64>)> = None;
    let mut iterations = 0;

    let snapshot =
        |u: &DVector<f64>, traj: &Trajectory, f: f64, stat: f64, iters: usize, converged: bool| {
            OcpSolution {
                controls: problem.profile(u),
                trajectory: traj.clone(),
                objective: f,
                iterations: iters,
                converged,
                grad_norm: stat,
            }
        };

    loop {
        if stat <= opts.grad_tol {
            return Ok(snapshot(&u, &traj, f, stat, iterations, true));
        }
        if iterations >= opts.max_iters {
            return Err(OcpError::MaxItersExceeded {
                best: Box::new(snapshot(&u, &traj, f, stat, iterations, false)),
            });
        }

        let mut step = opts.initial_step;
        if let Some((s, y)) = &prev {
            let sy = s.dot(y);
            if sy > 0.0 {
                let bb = s.norm_squared() / sy;
                if bb.is_finite() && bb > 0.0 {
                    step = bb;
                }
            }
        }

        // rounding slack for the flat region right around a minimizer
        let slack = 8.0 * f64::EPSILON * (1.0 + f.abs());
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let mut trial = &u - &g * step;
            problem.project(&mut trial);
            let decrease = g.dot(&(&trial - &u));
            let (f_trial, traj_trial) = problem.value(&trial)?;
            if f_trial.is_finite() {
                if f_trial <= f + opts.armijo * decrease {
                    accepted = Some((trial, f_trial, traj_trial, None));
                    break;
                }
                if f_trial <= f + slack {
                    let g_trial = problem.gradient(&trial)?;
                    let stat_trial = problem.stationarity(&trial, &g_trial);
                    if stat_trial <= (1.0 - opts.armijo) * stat {
                        accepted = Some((trial, f_trial, traj_trial, Some(g_trial)));
                        break;
                    }
                }
            }
            step *= opts.shrink;
        }

        let Some((u_new, f_new, traj_new, g_known)) = accepted else {
            return Err(OcpError::LineSearchStalled {
                best: Box::new(snapshot(&u, &traj, f, stat, iterations, false)),
            });
        };
        let g_new = match g_known {
            Some(g) => g,
            None => problem.gradient(&u_new)?,
        };
        prev = Some((&u_new - &u, &g_new - &g));
        u = u_new;
        f = f_new;
        traj = traj_new;
        g = g_new;
        stat = problem.stationarity(&u, &g);
        iterations += 1;
    }
}
