//! Quasi-potential and potential structure of a game's costs.
//!
//! A quasi-potential splits every player's stage cost as
//! `g^i_k = Psi^i_k(u_k) + h_k(x_k, u_k, x_{k+1})`, where the control parts
//! `Psi^i_k` share an exact potential `pi_k` and `h_k` is common to all
//! players. Unilateral changes in `J^i` then equal changes in
//! `sum_k pi_k + h_k`, so minimizing that sum over feasible trajectories
//! yields an open-loop equilibrium.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::game_model::{
    rollout, total_cost, ControlProfile, DynamicGame, GameDims, GameError, LqGame, StageGradient,
};
use crate::linalg;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StructureError {
    #[error(
        "Q not shared: players {player_a} and {player_b} differ at stage {stage} by {max_diff:e}"
    )]
    QNotShared {
        player_a: usize,
        player_b: usize,
        stage: usize,
        max_diff: f64,
    },
    #[error(transparent)]
    Game(#[from] GameError),
}

/// Default absolute tolerance for treating two players' `Q` as equal.
pub const SHARED_Q_TOL: f64 = 1e-9;
/// Largest acceptable violation of the quasi-potential difference identity.
pub const QUASI_POTENTIAL_TOL: f64 = 1e-8;
pub const DEFAULT_VERIFY_SAMPLES: usize = 1000;
pub const COERCIVITY_TOL: f64 = 1e-10;

/// A stage-additive objective `sum_k f_k(x_{k+1}, u_k, x_k)`.
pub trait StageObjective: Send + Sync {
    fn value(
        &self,
        stage: usize,
        x_next: &DVector<f64>,
        u: &[DVector<f64>],
        x: &DVector<f64>,
    ) -> f64;
    fn gradient(
        &self,
        stage: usize,
        x_next: &DVector<f64>,
        u: &[DVector<f64>],
        x: &DVector<f64>,
    ) -> StageGradient;
}

/// Stage potential `pi_k(u^1_k, .., u^N_k)`.
pub trait StagePotential: Send + Sync {
    fn value(&self, stage: usize, u: &[DVector<f64>]) -> f64;
    fn gradient(&self, stage: usize, u: &[DVector<f64>]) -> Vec<DVector<f64>>;
}

/// Player-independent part `h_k(x_k, u_k, x_{k+1})`.
pub trait StageCoupling: Send + Sync {
    fn value(
        &self,
        stage: usize,
        x_next: &DVector<f64>,
        u: &[DVector<f64>],
        x: &DVector<f64>,
    ) -> f64;
    fn gradient(
        &self,
        stage: usize,
        x_next: &DVector<f64>,
        u: &[DVector<f64>],
        x: &DVector<f64>,
    ) -> StageGradient;
}

/// Per-player control terms `Psi^i_k(u_k)`; kept for verification only.
pub trait PlayerTerms: Send + Sync {
    fn value(&self, player: usize, stage: usize, u: &[DVector<f64>]) -> f64;
}

/// Matrix form of the linear-quadratic decomposition:
/// `pi_k = 1/2 sum_i u^i' R^{ii}_k u^i`, `h_k = 1/2 x_{k+1}' Q_k x_{k+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LqForms {
    /// Shared `Q` for the state produced by each stage.
    pub q: Vec<DMatrix<f64>>,
    /// `r[k][i]` is `R^{ii}_k`.
    pub r: Vec<Vec<DMatrix<f64>>>,
}

impl StagePotential for LqForms {
    fn value(&self, stage: usize, u: &[DVector<f64>]) -> f64 {
        0.5 * self.r[stage]
            .iter()
            .zip(u)
            .map(|(r, ui)| ui.dot(&(r * ui)))
            .sum::<f64>()
    }

    fn gradient(&self, stage: usize, u: &[DVector<f64>]) -> Vec<DVector<f64>> {
        self.r[stage].iter().zip(u).map(|(r, ui)| r * ui).collect()
    }
}

impl StageCoupling for LqForms {
    fn value(
        &self,
        stage: usize,
        x_next: &DVector<f64>,
        _u: &[DVector<f64>],
        _x: &DVector<f64>,
    ) -> f64 {
        0.5 * x_next.dot(&(&self.q[stage] * x_next))
    }

    fn gradient(
        &self,
        stage: usize,
        x_next: &DVector<f64>,
        u: &[DVector<f64>],
        x: &DVector<f64>,
    ) -> StageGradient {
        StageGradient {
            x_next: &self.q[stage] * x_next,
            controls: u.iter().map(|ui| DVector::zeros(ui.len())).collect(),
            x: DVector::zeros(x.len()),
        }
    }
}

/// `Psi^i_k = 1/2 sum_j u^j' R^{ij}_k u^j` of a linear-quadratic game.
struct LqPlayerTerms {
    r: Vec<Vec<Vec<DMatrix<f64>>>>,
}

impl PlayerTerms for LqPlayerTerms {
    fn value(&self, player: usize, stage: usize, u: &[DVector<f64>]) -> f64 {
        0.5 * self.r[player][stage]
            .iter()
            .zip(u)
            .map(|(r, uj)| uj.dot(&(r * uj)))
            .sum::<f64>()
    }
}

#[derive(Clone)]
pub struct QuasiPotentialDecomposition {
    pub pi: Arc<dyn StagePotential>,
    pub h: Arc<dyn StageCoupling>,
    pub psi: Option<Arc<dyn PlayerTerms>>,
    lq: Option<LqForms>,
}

impl std::fmt::Debug for QuasiPotentialDecomposition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("QuasiPotentialDecomposition")
            .field("has_psi", &self.psi.is_some())
            .field("lq", &self.lq)
            .finish_non_exhaustive()
    }
}

impl QuasiPotentialDecomposition {
    /// User-supplied decomposition for a generic game.
    pub fn new(
        pi: Arc<dyn StagePotential>,
        h: Arc<dyn StageCoupling>,
        psi: Option<Arc<dyn PlayerTerms>>,
    ) -> Self {
        QuasiPotentialDecomposition {
            pi,
            h,
            psi,
            lq: None,
        }
    }

    pub fn lq_forms(&self) -> Option<&LqForms> {
        self.lq.as_ref()
    }

    /// `sum_k pi_k(u_k)`.
    pub fn potential(&self, controls: &ControlProfile) -> f64 {
        (0..controls.num_stages())
            .map(|k| self.pi.value(k, controls.stage(k)))
            .sum()
    }

    /// `Phi_i = sum_k Psi^i_k`, when the player terms are known.
    pub fn phi(&self, player: usize, controls: &ControlProfile) -> Option<f64> {
        let psi = self.psi.as_ref()?;
        Some(
            (0..controls.num_stages())
                .map(|k| psi.value(player, k, controls.stage(k)))
                .sum(),
        )
    }

    /// The quasi-potential `sum_k pi_k + h_k` along the rollout of `controls`.
    pub fn evaluate<G: DynamicGame + ?Sized>(
        &self,
        game: &G,
        controls: &ControlProfile,
    ) -> Result<f64, GameError> {
        objective_along(game, self, controls).map(|(v, _)| v)
    }
}

impl StageObjective for QuasiPotentialDecomposition {
    fn value(
        &self,
        stage: usize,
        x_next: &DVector<f64>,
        u: &[DVector<f64>],
        x: &DVector<f64>,
    ) -> f64 {
        self.pi.value(stage, u) + self.h.value(stage, x_next, u, x)
    }

    fn gradient(
        &self,
        stage: usize,
        x_next: &DVector<f64>,
        u: &[DVector<f64>],
        x: &DVector<f64>,
    ) -> StageGradient {
        let mut g = self.h.gradient(stage, x_next, u, x);
        for (gi, pi) in g.controls.iter_mut().zip(self.pi.gradient(stage, u)) {
            *gi += pi;
        }
        g
    }
}

/// An exact potential supplied as a stage-additive objective.
#[derive(Clone)]
pub struct PotentialSpec {
    pub stage: Arc<dyn StageObjective>,
}

impl PotentialSpec {
    pub fn new(stage: Arc<dyn StageObjective>) -> Self {
        PotentialSpec { stage }
    }

    /// The potential `sum_k pi_k + h_k` of an LQ game with shared `Q`.
    pub fn from_decomposition(decomp: QuasiPotentialDecomposition) -> Self {
        PotentialSpec {
            stage: Arc::new(decomp),
        }
    }
}

impl StageObjective for PotentialSpec {
    fn value(
        &self,
        stage: usize,
        x_next: &DVector<f64>,
        u: &[DVector<f64>],
        x: &DVector<f64>,
    ) -> f64 {
        self.stage.value(stage, x_next, u, x)
    }

    fn gradient(
        &self,
        stage: usize,
        x_next: &DVector<f64>,
        u: &[DVector<f64>],
        x: &DVector<f64>,
    ) -> StageGradient {
        self.stage.gradient(stage, x_next, u, x)
    }
}

/// Evaluates a stage-additive objective along the rollout of `controls`.
pub fn objective_along<G, O>(
    game: &G,
    objective: &O,
    controls: &ControlProfile,
) -> Result<(f64, crate::game_model::Trajectory), GameError>
where
    G: DynamicGame + ?Sized,
    O: StageObjective + ?Sized,
{
    let traj = rollout(game, controls)?;
    let x0 = game.initial_state();
    let mut total = 0.0;
    for k in 0..game.dims().stages {
        total += objective.value(
            k,
            traj.state_after(k),
            controls.stage(k),
            traj.state_before(k, x0),
        );
    }
    if !total.is_finite() {
        return Err(GameError::NumericOverflow("objective".into()));
    }
    Ok((total, traj))
}

/// Builds the quasi-potential of a linear-quadratic game whose players all
/// weigh the state with the same `Q` (to within `tol`, absolute).
pub fn decompose_quasi_potential_lq(
    game: &LqGame,
    tol: f64,
) -> Result<QuasiPotentialDecomposition, StructureError> {
    let dims = game.dims();
    let mut worst: Option<(usize, usize, usize, f64)> = None;
    for k in 0..dims.stages {
        for a in 0..dims.players {
            for b in (a + 1)..dims.players {
                let diff = (game.q(a, k) - game.q(b, k)).amax();
                if worst.is_none_or(|w| diff > w.3) {
                    worst = Some((a, b, k, diff));
                }
            }
        }
    }
    if let Some((player_a, player_b, stage, max_diff)) = worst {
        if !(max_diff <= tol) {
            return Err(StructureError::QNotShared {
                player_a,
                player_b,
                stage,
                max_diff,
            });
        }
    }
    let forms = LqForms {
        q: (0..dims.stages).map(|k| game.q(0, k).clone()).collect(),
        r: (0..dims.stages)
            .map(|k| (0..dims.players).map(|i| game.r(i, k, i).clone()).collect())
            .collect(),
    };
    let psi = LqPlayerTerms {
        r: (0..dims.players)
            .map(|i| {
                (0..dims.stages)
                    .map(|k| (0..dims.players).map(|j| game.r(i, k, j).clone()).collect())
                    .collect()
            })
            .collect(),
    };
    let shared = Arc::new(forms.clone());
    Ok(QuasiPotentialDecomposition {
        pi: shared.clone(),
        h: shared,
        psi: Some(Arc::new(psi)),
        lq: Some(forms),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerificationMode {
    /// `Phi_i` differences compared with `pi` differences.
    PlayerTerms,
    /// Full `J^i` differences compared with quasi-potential differences
    /// (used when no player terms were supplied).
    TotalCost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuasiPotentialReport {
    pub samples: usize,
    pub max_violation: f64,
    pub passed: bool,
    pub mode: VerificationMode,
}

/// Monte-Carlo check of the quasi-potential difference identity under
/// unilateral deviations, with standard-normal probes.
pub fn verify_quasi_potential_property<G: DynamicGame + ?Sized>(
    game: &G,
    decomp: &QuasiPotentialDecomposition,
    samples: usize,
    seed: u64,
) -> Result<QuasiPotentialReport, GameError> {
    let dims = game.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mode = if decomp.psi.is_some() {
        VerificationMode::PlayerTerms
    } else {
        VerificationMode::TotalCost
    };
    let mut max_violation: f64 = 0.0;
    for _ in 0..samples {
        let base = random_profile(dims, &mut rng);
        for i in 0..dims.players {
            let mut tilde = base.clone();
            let mut hat = base.clone();
            for k in 0..dims.stages {
                *tilde.get_mut(i, k) = randn(dims.control_dims[i], &mut rng);
                *hat.get_mut(i, k) = randn(dims.control_dims[i], &mut rng);
            }
            let violation = match mode {
                VerificationMode::PlayerTerms => {
                    let d_phi = decomp.phi(i, &tilde).unwrap_or_default()
                        - decomp.phi(i, &hat).unwrap_or_default();
                    let d_pi = decomp.potential(&tilde) - decomp.potential(&hat);
                    (d_phi - d_pi).abs()
                }
                VerificationMode::TotalCost => {
                    let tt = rollout(game, &tilde)?;
                    let th = rollout(game, &hat)?;
                    let d_j = total_cost(game, i, &tilde, &tt)? - total_cost(game, i, &hat, &th)?;
                    let d_p = decomp.evaluate(game, &tilde)? - decomp.evaluate(game, &hat)?;
                    (d_j - d_p).abs()
                }
            };
            max_violation = if violation.is_nan() {
                f64::INFINITY
            } else {
                max_violation.max(violation)
            };
        }
    }
    Ok(QuasiPotentialReport {
        samples,
        max_violation,
        passed: max_violation <= QUASI_POTENTIAL_TOL,
        mode,
    })
}

fn randn(len: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_iterator(len, (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

pub(crate) fn random_profile(dims: &GameDims, rng: &mut ChaCha8Rng) -> ControlProfile {
    let mut u = ControlProfile::zeros(dims);
    for k in 0..dims.stages {
        for (i, &m) in dims.control_dims.iter().enumerate() {
            *u.get_mut(i, k) = randn(m, rng);
        }
    }
    u
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoercivityReport {
    pub coercive: bool,
    pub min_eig_q: f64,
    pub min_eig_r: f64,
}

/// Positive definiteness of every `Q` and every `R^{ii}`, which makes the
/// quasi-potential coercive on the feasible set.
pub fn check_coercivity_lq(game: &LqGame, tol: f64) -> CoercivityReport {
    let dims = game.dims();
    let mut min_eig_q = f64::INFINITY;
    let mut min_eig_r = f64::INFINITY;
    for i in 0..dims.players {
        for k in 0..dims.stages {
            min_eig_q = min_eig_q.min(linalg::min_eigenvalue(game.q(i, k)));
            min_eig_r = min_eig_r.min(linalg::min_eigenvalue(game.r(i, k, i)));
        }
    }
    CoercivityReport {
        coercive: min_eig_q > tol && min_eig_r > tol,
        min_eig_q,
        min_eig_r,
    }
}
