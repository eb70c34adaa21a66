//! Independent reference computations shared by the integration tests.
//!
//! Nothing here calls the recursions under test: quadratic programs are
//! stacked into one dense KKT system and solved by LU, gradients come from
//! central differences of plain rollouts.

#![allow(dead_code)]

use dtdg_core::fixtures::{random_lq_game, RandomGameSpec};
use dtdg_core::game_model::{ControlProfile, DynamicGame, LqGame, Trajectory};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Hand-derived values for the scalar two-player game: `x_1 = 1 + u1 + u2`,
/// `J^i = 1/2 (x_1^2 + u_i^2)`. Stationarity `x_1 + u_i = 0` for both
/// players gives `u_i = -1/3`, `x_1 = 1/3`; the potential
/// `1/2 (x_1^2 + u1^2 + u2^2)` is then `1/6` and each cost `1/9`.
pub mod g1 {
    pub const U: f64 = -1.0 / 3.0;
    pub const X: f64 = 1.0 / 3.0;
    pub const POTENTIAL: f64 = 1.0 / 6.0;
    pub const COST: f64 = 1.0 / 9.0;
    /// Against a silent rival the best reply is `-1/2`, costing `1/4`,
    /// while staying at zero costs `1/2`: gap `1/4`.
    pub const GAP_AT_ZERO: f64 = 0.25;
}

/// The 50 seeded coercive shared-`Q` games: `n <= 3`, `N in {2, 3}`,
/// `K <= 4`, control dimensions up to 2.
pub fn random_suite() -> Vec<LqGame> {
    (0..50u64)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let players = rng.random_range(2..=3);
            let stages = rng.random_range(1..=4);
            let n = rng.random_range(1..=3);
            let m = (0..players).map(|_| rng.random_range(1..=2)).collect();
            random_lq_game(&mut rng, &RandomGameSpec::new(players, stages, n, m))
        })
        .collect()
}

/// Column offsets of the stacked variable `z = (u_0, .., u_{K-1}, x_1, .., x_K)`,
/// `u_k` holding all players' controls at stage `k`.
struct Layout {
    player_u: Vec<Vec<usize>>,
    x: usize,
    total: usize,
}

fn layout(game: &LqGame) -> Layout {
    let d = game.dims();
    let mut player_u = vec![Vec::new(); d.players];
    let mut off = 0;
    for _ in 0..d.stages {
        for (i, &m) in d.control_dims.iter().enumerate() {
            player_u[i].push(off);
            off += m;
        }
    }
    let x = off;
    Layout {
        player_u,
        x,
        total: x + d.stages * d.state_dim,
    }
}

/// Equality constraints `x_{k+1} - A_k x_k - B_k u_k = 0` as `C z = d`.
fn dynamics_rows(game: &LqGame, l: &Layout) -> (DMatrix<f64>, DVector<f64>) {
    let d = game.dims();
    let n = d.state_dim;
    let mut c = DMatrix::zeros(d.stages * n, l.total);
    let mut rhs = DVector::zeros(d.stages * n);
    for k in 0..d.stages {
        let r = k * n;
        for i in 0..n {
            c[(r + i, l.x + k * n + i)] = 1.0;
        }
        for (j, &m) in d.control_dims.iter().enumerate() {
            let b = game.b(k, j);
            for p in 0..n {
                for q in 0..m {
                    c[(r + p, l.player_u[j][k] + q)] = -b[(p, q)];
                }
            }
        }
        if k == 0 {
            rhs.rows_mut(0, n).copy_from(&(game.a(0) * game.x1()));
        } else {
            let a = game.a(k);
            for p in 0..n {
                for q in 0..n {
                    c[(r + p, l.x + (k - 1) * n + q)] = -a[(p, q)];
                }
            }
        }
    }
    (c, rhs)
}

fn solve_kkt(
    h: &DMatrix<f64>,
    lin: &DVector<f64>,
    c: &DMatrix<f64>,
    d: &DVector<f64>,
) -> DVector<f64> {
    let (nz, nc) = (h.nrows(), c.nrows());
    let mut kkt = DMatrix::zeros(nz + nc, nz + nc);
    kkt.view_mut((0, 0), (nz, nz)).copy_from(h);
    kkt.view_mut((0, nz), (nz, nc)).copy_from(&c.transpose());
    kkt.view_mut((nz, 0), (nc, nz)).copy_from(c);
    let mut rhs = DVector::zeros(nz + nc);
    rhs.rows_mut(0, nz).copy_from(&(-lin));
    rhs.rows_mut(nz, nc).copy_from(d);
    let sol = kkt.lu().solve(&rhs).expect("KKT matrix is nonsingular");
    sol.rows(0, nz).into_owned()
}

fn unpack(game: &LqGame, l: &Layout, z: &DVector<f64>) -> ControlProfile {
    let d = game.dims();
    ControlProfile::from_players(
        (0..d.players)
            .map(|i| {
                (0..d.stages)
                    .map(|k| z.rows(l.player_u[i][k], d.control_dims[i]).into_owned())
                    .collect()
            })
            .collect(),
    )
}

fn add_block(h: &mut DMatrix<f64>, at: usize, block: &DMatrix<f64>) {
    let mut v = h.view_mut((at, at), (block.nrows(), block.ncols()));
    v += block;
}

/// Minimizer of `sum_k 1/2 (x_{k+1}' Q_k x_{k+1} + sum_i u^i' R^{ii} u^i)`
/// (shared `Q` read from player 0) and its optimal value.
pub fn dense_potential_minimizer(game: &LqGame) -> (ControlProfile, f64) {
    let d = game.dims();
    let l = layout(game);
    let mut h = DMatrix::zeros(l.total, l.total);
    for k in 0..d.stages {
        for i in 0..d.players {
            add_block(&mut h, l.player_u[i][k], game.r(i, k, i));
        }
        add_block(&mut h, l.x + k * d.state_dim, game.q(0, k));
    }
    let (c, rhs) = dynamics_rows(game, &l);
    let z = solve_kkt(&h, &DVector::zeros(l.total), &c, &rhs);
    let value = 0.5 * z.dot(&(&h * &z));
    (unpack(game, &l, &z), value)
}

/// Player `i`'s exact best response to `others`, with the full cost
/// including rivals' control terms, by one dense KKT solve.
pub fn dense_best_response(
    game: &LqGame,
    player: usize,
    others: &ControlProfile,
) -> (ControlProfile, f64) {
    dense_player_problem(game, player, others)
}

fn dense_player_problem(
    game: &LqGame,
    player: usize,
    others: &ControlProfile,
) -> (ControlProfile, f64) {
    let d = game.dims();
    let l = layout(game);
    let mut h = DMatrix::zeros(l.total, l.total);
    for k in 0..d.stages {
        for j in 0..d.players {
            add_block(&mut h, l.player_u[j][k], game.r(player, k, j));
        }
        add_block(&mut h, l.x + k * d.state_dim, game.q(player, k));
    }
    let (dyn_c, dyn_rhs) = dynamics_rows(game, &l);
    let mut fixed = Vec::new();
    for j in (0..d.players).filter(|&j| j != player) {
        for k in 0..d.stages {
            for q in 0..d.control_dims[j] {
                fixed.push((l.player_u[j][k] + q, others.get(j, k)[q]));
            }
        }
    }
    let rows = dyn_c.nrows();
    let mut c = DMatrix::zeros(rows + fixed.len(), l.total);
    let mut rhs = DVector::zeros(rows + fixed.len());
    c.rows_mut(0, rows).copy_from(&dyn_c);
    rhs.rows_mut(0, rows).copy_from(&dyn_rhs);
    for (r, &(col, value)) in fixed.iter().enumerate() {
        c[(rows + r, col)] = 1.0;
        rhs[rows + r] = value;
    }
    let z = solve_kkt(&h, &DVector::zeros(l.total), &c, &rhs);
    let value = 0.5 * z.dot(&(&h * &z));
    (unpack(game, &l, &z), value)
}

/// Player `i`'s controls in the consistent-conjecture problem: rivals'
/// controls fixed and the player's states forced onto `traj`. With the
/// states fixed the problem splits by stage into
/// `min 1/2 u' R^{ii} u  s.t.  B^i_k u = x_{k+1} - A_k x_k - sum_j B^j_k u^j_k`,
/// solved on the null space of `B^i_k`.
pub fn pinned_player_controls(
    game: &LqGame,
    player: usize,
    u: &ControlProfile,
    traj: &Trajectory,
) -> Vec<DVector<f64>> {
    let d = game.dims();
    (0..d.stages)
        .map(|k| {
            let prev = if k == 0 {
                game.x1().clone()
            } else {
                traj.states[k - 1].clone()
            };
            let mut r = &traj.states[k] - game.a(k) * prev;
            for j in (0..d.players).filter(|&j| j != player) {
                r -= game.b(k, j) * u.get(j, k);
            }
            let b = game.b(k, player);
            let m = b.ncols();
            let particular = b
                .clone()
                .svd(true, true)
                .solve(&r, 1e-12)
                .expect("svd solve");
            // B'B is m x m, so its SVD carries the full null space of B
            let full = (b.transpose() * b).svd(true, true);
            let v_t = full.v_t.expect("right singular vectors");
            let cutoff = 1e-12 * full.singular_values.max();
            let rank = full.singular_values.iter().filter(|s| **s > cutoff).count();
            if rank == m {
                return particular;
            }
            let null = v_t.rows(rank, m - rank).transpose();
            let rii = game.r(player, k, player);
            let reduced = null.transpose() * rii * &null;
            let z = reduced
                .lu()
                .solve(&(-(null.transpose() * rii * &particular)))
                .expect("reduced Hessian is nonsingular");
            particular + null * z
        })
        .collect()
}

/// Central-difference gradient of `f` with respect to the flattened profile
/// (stage-major, then player), step scaled to each coordinate.
pub fn central_difference<F>(
    dims: &dtdg_core::game_model::GameDims,
    u: &ControlProfile,
    f: F,
) -> DVector<f64>
where
    F: Fn(&ControlProfile) -> f64,
{
    let flat = u.to_flat();
    DVector::from_fn(flat.len(), |i, _| {
        let h = 1e-6 * (1.0 + flat[i].abs());
        let mut plus = flat.clone();
        let mut minus = flat.clone();
        plus[i] += h;
        minus[i] -= h;
        (f(&ControlProfile::from_flat(dims, &plus)) - f(&ControlProfile::from_flat(dims, &minus)))
            / (2.0 * h)
    })
}

/// Largest relative distance between two profiles, `||a - b|| / ||b||`.
pub fn relative_error(a: &ControlProfile, b: &ControlProfile) -> f64 {
    let diff = (a.to_flat() - b.to_flat()).norm();
    let scale = b.to_flat().norm();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

pub fn dtdg_binary() -> &'static str {
    env!("CARGO_BIN_EXE_dtdg")
}

pub fn fixture_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// Bundled games that admit a quasi-potential.
pub fn potential_fixtures() -> Vec<std::path::PathBuf> {
    let mut out: Vec<_> = std::fs::read_dir(fixture_dir())
        .expect("fixture directory")
        .map(|e| e.expect("dir entry").path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .filter(|p| {
            !p.file_stem()
                .unwrap()
                .to_string_lossy()
                .contains("nonshared")
        })
        .collect();
    out.sort();
    out
}
