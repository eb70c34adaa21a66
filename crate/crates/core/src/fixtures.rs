//! Reference games: the scalar two-player game used throughout the docs,
//! seeded random linear-quadratic games, and two smooth non-quadratic
//! potential games.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::game_model::{GameDims, GenericGame, LqGame, StageCosts, StageDynamics, StageGradient};
use crate::structure::{LqForms, PlayerTerms, QuasiPotentialDecomposition, StageCoupling};

fn scalar(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

/// Two players, one stage, scalar state: `x_1 = x_0 + u^1 + u^2`, `x_0 = 1`,
/// `J^i = 1/2 (x_1^2 + (u^i)^2)`.
pub fn g1() -> LqGame {
    let dims = GameDims::new(2, 1, 1, vec![1, 1]).expect("static dims");
    LqGame::new(
        dims,
        DVector::from_element(1, 1.0),
        vec![scalar(1.0)],
        vec![vec![scalar(1.0), scalar(1.0)]],
        vec![vec![scalar(1.0)], vec![scalar(1.0)]],
        vec![
            vec![vec![scalar(1.0), scalar(0.0)]],
            vec![vec![scalar(0.0), scalar(1.0)]],
        ],
    )
    .expect("static game")
}

/// One player, one stage: `x_1 = 1 + u`, `J = 1/2 (x_1^2 + u^2)`.
pub fn g1_single_player() -> LqGame {
    let dims = GameDims::new(1, 1, 1, vec![1]).expect("static dims");
    LqGame::new(
        dims,
        DVector::from_element(1, 1.0),
        vec![scalar(1.0)],
        vec![vec![scalar(1.0)]],
        vec![vec![scalar(1.0)]],
        vec![vec![vec![scalar(1.0)]]],
    )
    .expect("static game")
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomGameSpec {
    pub players: usize,
    pub stages: usize,
    pub state_dim: usize,
    pub control_dims: Vec<usize>,
    /// Give every player the same `Q` (quasi-potential games).
    pub shared_q: bool,
}

impl RandomGameSpec {
    pub fn new(players: usize, stages: usize, state_dim: usize, control_dims: Vec<usize>) -> Self {
        RandomGameSpec {
            players,
            stages,
            state_dim,
            control_dims,
            shared_q: true,
        }
    }
}

fn uniform(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..=1.0))
}

/// `M M' / dim + shift * I` with `M` uniform in [-1, 1].
fn random_spd(rng: &mut impl Rng, dim: usize, shift: f64) -> DMatrix<f64> {
    let m = uniform(rng, dim, dim);
    let s = &m * m.transpose() / dim as f64 + DMatrix::identity(dim, dim) * shift;
    crate::linalg::symmetrize(&s)
}

fn random_symmetric(rng: &mut impl Rng, dim: usize) -> DMatrix<f64> {
    let m = uniform(rng, dim, dim);
    (&m + m.transpose()) * 0.5
}

/// Random game with `A`, `B` and `x_0` uniform in [-1, 1], SPD `Q` and
/// `R^{ii}`, and symmetric (possibly indefinite) `R^{ij}`.
pub fn random_lq_game(rng: &mut impl Rng, spec: &RandomGameSpec) -> LqGame {
    let dims = GameDims::new(
        spec.players,
        spec.stages,
        spec.state_dim,
        spec.control_dims.clone(),
    )
    .expect("valid random game dims");
    let n = spec.state_dim;
    let x1 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..=1.0));
    let a: Vec<_> = (0..spec.stages).map(|_| uniform(rng, n, n)).collect();
    let b: Vec<Vec<_>> = (0..spec.stages)
        .map(|_| {
            spec.control_dims
                .iter()
                .map(|&m| uniform(rng, n, m))
                .collect()
        })
        .collect();
    let shared: Vec<_> = (0..spec.stages).map(|_| random_spd(rng, n, 0.2)).collect();
    let q: Vec<Vec<_>> = (0..spec.players)
        .map(|_| {
            if spec.shared_q {
                shared.clone()
            } else {
                (0..spec.stages).map(|_| random_spd(rng, n, 0.2)).collect()
            }
        })
        .collect();
    let r: Vec<Vec<Vec<_>>> = (0..spec.players)
        .map(|i| {
            (0..spec.stages)
                .map(|_| {
                    spec.control_dims
                        .iter()
                        .enumerate()
                        .map(|(j, &m)| {
                            if i == j {
                                random_spd(rng, m, 0.5)
                            } else {
                                random_symmetric(rng, m)
                            }
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    LqGame::new(dims, x1, a, b, q, r).expect("random game satisfies invariants")
}

/// `x_{k+1} = A x_k + gain * sin(x_k) + sum_j B^j u^j_k` (sin elementwise).
#[derive(Debug, Clone)]
pub struct SinusoidalDynamics {
    pub a: DMatrix<f64>,
    pub b: Vec<DMatrix<f64>>,
    pub gain: f64,
}

impl StageDynamics for SinusoidalDynamics {
    fn step(&self, _stage: usize, x: &DVector<f64>, u: &[DVector<f64>]) -> DVector<f64> {
        let mut next = &self.a * x + x.map(f64::sin) * self.gain;
        for (bj, uj) in self.b.iter().zip(u) {
            next += bj * uj;
        }
        next
    }

    fn jacobian_x(&self, _stage: usize, x: &DVector<f64>, _u: &[DVector<f64>]) -> DMatrix<f64> {
        &self.a + DMatrix::from_diagonal(&(x.map(f64::cos) * self.gain))
    }

    fn jacobian_u(
        &self,
        _stage: usize,
        _x: &DVector<f64>,
        _u: &[DVector<f64>],
        player: usize,
    ) -> DMatrix<f64> {
        self.b[player].clone()
    }
}

/// `h(x_{k+1}) = 1/2 x' Q x + quartic/4 * sum_c x_c^4`.
#[derive(Debug, Clone)]
pub struct QuarticStateCost {
    pub q: DMatrix<f64>,
    pub quartic: f64,
}

impl QuarticStateCost {
    fn value_at(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q * x)) + 0.25 * self.quartic * x.iter().map(|v| v.powi(4)).sum::<f64>()
    }

    fn gradient_at(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.q * x + x.map(|v| v.powi(3)) * self.quartic
    }
}

impl StageCoupling for QuarticStateCost {
    fn value(
        &self,
        _stage: usize,
        x_next: &DVector<f64>,
        _u: &[DVector<f64>],
        _x: &DVector<f64>,
    ) -> f64 {
        self.value_at(x_next)
    }

    fn gradient(
        &self,
        _stage: usize,
        x_next: &DVector<f64>,
        u: &[DVector<f64>],
        x: &DVector<f64>,
    ) -> StageGradient {
        StageGradient {
            x_next: self.gradient_at(x_next),
            controls: u.iter().map(|v| DVector::zeros(v.len())).collect(),
            x: DVector::zeros(x.len()),
        }
    }
}

/// `g^i = h(x_{k+1}) + 1/2 sum_j u^j' R^{ij} u^j` with a shared `h`.
#[derive(Debug, Clone)]
pub struct QuarticCosts {
    pub state: QuarticStateCost,
    /// `r[i][j]`, stage-invariant.
    pub r: Vec<Vec<DMatrix<f64>>>,
}

impl PlayerTerms for QuarticCosts {
    fn value(&self, player: usize, _stage: usize, u: &[DVector<f64>]) -> f64 {
        0.5 * self.r[player]
            .iter()
            .zip(u)
            .map(|(r, uj)| uj.dot(&(r * uj)))
            .sum::<f64>()
    }
}

impl StageCosts for QuarticCosts {
    fn cost(
        &self,
        player: usize,
        stage: usize,
        x_next: &DVector<f64>,
        u: &[DVector<f64>],
        _x: &DVector<f64>,
    ) -> f64 {
        self.state.value_at(x_next) + PlayerTerms::value(self, player, stage, u)
    }

    fn gradient(
        &self,
        player: usize,
        _stage: usize,
        x_next: &DVector<f64>,
        u: &[DVector<f64>],
        x: &DVector<f64>,
    ) -> StageGradient {
        StageGradient {
            x_next: self.state.gradient_at(x_next),
            controls: self.r[player].iter().zip(u).map(|(r, uj)| r * uj).collect(),
            x: DVector::zeros(x.len()),
        }
    }
}

/// A generic game together with its quasi-potential.
#[derive(Debug, Clone)]
pub struct SmoothPotentialGame {
    pub game: GenericGame,
    pub potential: QuasiPotentialDecomposition,
}

fn smooth_game(
    x1: DVector<f64>,
    stages: usize,
    dynamics: SinusoidalDynamics,
    costs: QuarticCosts,
) -> SmoothPotentialGame {
    let players = costs.r.len();
    let control_dims: Vec<usize> = (0..players).map(|i| costs.r[i][i].nrows()).collect();
    let dims = GameDims::new(players, stages, x1.len(), control_dims).expect("static dims");
    let pi = LqForms {
        q: vec![DMatrix::zeros(x1.len(), x1.len()); stages],
        r: (0..stages)
            .map(|_| (0..players).map(|i| costs.r[i][i].clone()).collect())
            .collect(),
    };
    let costs = Arc::new(costs);
    let potential = QuasiPotentialDecomposition::new(
        Arc::new(pi),
        Arc::new(costs.state.clone()),
        Some(costs.clone()),
    );
    let game =
        GenericGame::new(dims, x1, Arc::new(dynamics), costs).expect("derivatives consistent");
    SmoothPotentialGame { game, potential }
}

/// Two players, three stages, planar linear dynamics, quartic state penalty.
pub fn quartic_potential_game() -> SmoothPotentialGame {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, -0.2, 0.9]);
    let b = vec![
        DMatrix::from_row_slice(2, 1, &[1.0, 0.2]),
        DMatrix::from_row_slice(2, 1, &[-0.3, 0.8]),
    ];
    let costs = QuarticCosts {
        state: QuarticStateCost {
            q: DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]),
            quartic: 0.8,
        },
        r: vec![
            vec![scalar(0.7), scalar(0.4)],
            vec![scalar(-0.3), scalar(1.2)],
        ],
    };
    smooth_game(
        DVector::from_vec(vec![1.5, -1.0]),
        3,
        SinusoidalDynamics { a, b, gain: 0.0 },
        costs,
    )
}

/// Three players, four stages, scalar state with a sinusoidal drift and a
/// quartic state penalty; player 2 has a two-dimensional control.
pub fn nonlinear_potential_game() -> SmoothPotentialGame {
    let costs = QuarticCosts {
        state: QuarticStateCost {
            q: scalar(0.6),
            quartic: 0.5,
        },
        r: vec![
            vec![
                scalar(1.0),
                scalar(0.3),
                DMatrix::from_row_slice(2, 2, &[0.2, 0.0, 0.0, -0.1]),
            ],
            vec![scalar(0.5), scalar(0.8), DMatrix::zeros(2, 2)],
            vec![
                scalar(-0.4),
                scalar(0.1),
                DMatrix::from_row_slice(2, 2, &[1.1, 0.2, 0.2, 0.9]),
            ],
        ],
    };
    let dynamics = SinusoidalDynamics {
        a: scalar(0.9),
        b: vec![
            scalar(1.0),
            scalar(0.5),
            DMatrix::from_row_slice(1, 2, &[0.7, -0.4]),
        ],
        gain: 0.3,
    };
    smooth_game(DVector::from_element(1, 2.0), 4, dynamics, costs)
}
