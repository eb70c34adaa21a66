//! Acceptance checks, one line per criterion. Runs as a plain binary so
//! every verdict is printed; exits nonzero if any criterion fails.

mod common;

use std::process::Command;
use std::time::Instant;

use dtdg_core::consistency::{
    auto_mu, consistency_multipliers_lq, consistent_feasibility, epsilon_bound_lq,
    penalty_threshold, ConjectureProfile, ConsistencyError,
};
use dtdg_core::equilibrium::{brute_force_ne, nash_gaps, GridSpec, DEFAULT_BUDGET, GRID_TOL};
use dtdg_core::fixtures::{self, random_lq_game, RandomGameSpec, SmoothPotentialGame};
use dtdg_core::game_model::{
    all_costs, rollout, ControlProfile, DynamicGame, GenericGame, LqGame, Trajectory,
};
use dtdg_core::ocp_solver::{
    adjoint_gradient, solve_generic_descent, solve_lq_quasi_potential, DescentOptions,
    PlayerObjective,
};
use dtdg_core::structure::{
    decompose_quasi_potential_lq, objective_along, StageObjective, SHARED_Q_TOL,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Verdict = Result<String, String>;

fn check(cond: bool, ok: String, fail: String) -> Verdict {
    if cond {
        Ok(ok)
    } else {
        Err(fail)
    }
}

fn normal_profile(game: &impl DynamicGame, rng: &mut ChaCha8Rng) -> ControlProfile {
    let flat_len = game.dims().total_controls();
    let flat = nalgebra::DVector::from_fn(flat_len, |_, _| rng.sample::<f64, _>(StandardNormal));
    ControlProfile::from_flat(game.dims(), &flat)
}

fn criterion_1(suite: &[LqGame]) -> Verdict {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for (g, game) in suite.iter().enumerate() {
        let sol = solve_lq_quasi_potential(game).map_err(|e| format!("game {g}: {e}"))?;
        let report = nash_gaps(game, &sol.controls, 0.0).map_err(|e| format!("game {g}: {e}"))?;
        for (gap, cost) in report.gaps.iter().zip(&report.costs) {
            worst = worst.max(gap / (1.0 + cost.abs()));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-7 && secs < 5.0,
        format!("worst relative gap {worst:.2e} over 50 games in {secs:.2}s"),
        format!("worst relative gap {worst:.2e} (limit 1e-7), runtime {secs:.2}s (limit 5s)"),
    )
}

fn criterion_2(suite: &[LqGame]) -> Verdict {
    let (mut worst_u, mut worst_obj): (f64, f64) = (0.0, 0.0);
    for (g, game) in suite.iter().enumerate() {
        let sol = solve_lq_quasi_potential(game).map_err(|e| format!("game {g}: {e}"))?;
        let (u_ref, obj_ref) = common::dense_potential_minimizer(game);
        worst_u = worst_u.max(common::relative_error(&sol.controls, &u_ref));
        worst_obj = worst_obj.max((sol.objective - obj_ref).abs() / obj_ref.abs());
    }
    check(
        worst_u <= 1e-8 && worst_obj <= 1e-8,
        format!("controls rel err {worst_u:.2e}, objective rel err {worst_obj:.2e}"),
        format!("controls rel err {worst_u:.2e}, objective rel err {worst_obj:.2e} (limit 1e-8)"),
    )
}

fn gradient_error<G, O>(game: &G, obj: &O, u: &ControlProfile) -> Result<f64, String>
where
    G: DynamicGame,
    O: StageObjective,
{
    let grad = adjoint_gradient(game, obj, u)
        .map_err(|e| e.to_string())?
        .to_flat();
    let fd = common::central_difference(game.dims(), u, |p| {
        objective_along(game, obj, p).expect("rollout").0
    });
    Ok((&grad - &fd).norm() / grad.norm().max(1e-12))
}

fn criterion_3() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut probes = 0;
    for _ in 0..8 {
        let players = rng.random_range(1..=3);
        let spec = RandomGameSpec::new(
            players,
            rng.random_range(1..=4),
            rng.random_range(1..=3),
            (0..players).map(|_| rng.random_range(1..=2)).collect(),
        );
        let game = random_lq_game(&mut rng, &spec);
        let decomp =
            decompose_quasi_potential_lq(&game, SHARED_Q_TOL).map_err(|e| e.to_string())?;
        for p in 0..10 {
            let u = normal_profile(&game, &mut rng);
            let err = if p % 2 == 0 {
                gradient_error(&game, &decomp, &u)?
            } else {
                gradient_error(&game, &PlayerObjective::new(&game, p % players), &u)?
            };
            worst = worst.max(err);
            probes += 1;
        }
    }
    let smooth: [SmoothPotentialGame; 2] = [
        fixtures::quartic_potential_game(),
        fixtures::nonlinear_potential_game(),
    ];
    for sg in &smooth {
        let players = sg.game.dims().players;
        for p in 0..10 {
            let u = normal_profile(&sg.game, &mut rng);
            let err = if p % 2 == 0 {
                gradient_error(&sg.game, &sg.potential, &u)?
            } else {
                gradient_error(&sg.game, &PlayerObjective::new(&sg.game, p % players), &u)?
            };
            worst = worst.max(err);
            probes += 1;
        }
    }
    check(
        worst <= 1e-6 && probes == 100,
        format!("{probes} probes over 10 games, worst relative error {worst:.2e}"),
        format!("{probes} probes, worst relative error {worst:.2e} (limit 1e-6)"),
    )
}

fn criterion_4() -> Verdict {
    let g1 = fixtures::g1();
    let grid = GridSpec::uniform(g1.dims(), &[-2.0 / 3.0, -1.0 / 3.0, 0.0, 1.0 / 3.0]);
    let ne = brute_force_ne(&g1, &grid, GRID_TOL, DEFAULT_BUDGET).map_err(|e| e.to_string())?;
    let target = [common::g1::U, common::g1::U];
    let near: Vec<[f64; 2]> = ne
        .iter()
        .map(|p| [p.get(0, 0)[0], p.get(1, 0)[0]])
        .filter(|p| ((p[0] - target[0]).powi(2) + (p[1] - target[1]).powi(2)).sqrt() <= 0.4)
        .collect();
    let sol = solve_lq_quasi_potential(&g1).map_err(|e| e.to_string())?;
    let resolution = 1.0 / 3.0;
    let cont_err = (sol.controls.get(0, 0)[0] - target[0])
        .abs()
        .max((sol.controls.get(1, 0)[0] - target[1]).abs());
    check(
        near == vec![target] && cont_err <= resolution / 2.0,
        format!(
            "{} grid equilibria, exactly (-1/3,-1/3) within 0.4; continuous solution off by {cont_err:.1e}",
            ne.len()
        ),
        format!("grid equilibria near target {near:?}, continuous error {cont_err:.2e}"),
    )
}

fn criterion_5() -> Verdict {
    let g1 = fixtures::g1();
    let sol = solve_lq_quasi_potential(&g1).map_err(|e| e.to_string())?;
    let gaps = nash_gaps(&g1, &sol.controls, 1e-10).map_err(|e| e.to_string())?;
    let errs = [
        (sol.controls.get(0, 0)[0] - common::g1::U).abs(),
        (sol.controls.get(1, 0)[0] - common::g1::U).abs(),
        (sol.trajectory.states[0][0] - common::g1::X).abs(),
        (sol.objective - common::g1::POTENTIAL).abs(),
        gaps.gaps[0].abs(),
        gaps.gaps[1].abs(),
        (gaps.costs[0] - common::g1::COST).abs(),
    ];
    let worst = errs.iter().copied().fold(0.0, f64::max);
    check(
        worst <= 1e-10,
        format!("u, x, objective, costs and gaps match hand values to {worst:.1e}"),
        format!("largest deviation from hand values {worst:.2e} (limit 1e-10): {errs:?}"),
    )
}

fn criterion_6() -> Verdict {
    let g1 = fixtures::g1();
    let zero = ControlProfile::zeros(g1.dims());
    let conj = ConjectureProfile::replicated(&Trajectory::from_scalars(&[1.0]), 2);
    let mult = consistency_multipliers_lq(&g1, &zero, &conj).map_err(|e| e.to_string())?;
    let mu_star = penalty_threshold(&mult);
    if (mu_star[0] - 1.0).abs() > 1e-9 {
        return Err(format!("mu*_1 = {} (expected 1 +- 1e-9)", mu_star[0]));
    }
    let r = epsilon_bound_lq(&g1, &zero, &conj, &[1.001, 1.001]).map_err(|e| e.to_string())?;
    if !((r.eps_i[0] - 0.25025).abs() <= 1e-9
        && (r.measured_gaps[0] - common::g1::GAP_AT_ZERO).abs() <= 1e-12
        && r.measured_gaps[0] <= r.eps_i[0]
        && r.sound)
    {
        return Err(format!(
            "eps_1 = {}, gap = {}",
            r.eps_i[0], r.measured_gaps[0]
        ));
    }
    match epsilon_bound_lq(&g1, &zero, &conj, &[0.5, 0.5]) {
        Err(ConsistencyError::MuBelowThreshold { .. }) => {}
        other => return Err(format!("mu = 0.5 was not refused: {other:?}")),
    }

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut worst_lambda, mut worst_eps): (f64, f64) = (0.0, 0.0);
    for g in 0..20 {
        let players = rng.random_range(2..=3);
        let spec = RandomGameSpec::new(
            players,
            rng.random_range(1..=4),
            rng.random_range(1..=3),
            (0..players).map(|_| rng.random_range(1..=2)).collect(),
        );
        let game = random_lq_game(&mut rng, &spec);
        let sol = solve_lq_quasi_potential(&game).map_err(|e| format!("game {g}: {e}"))?;
        let gaps = nash_gaps(&game, &sol.controls, 1e-9).map_err(|e| format!("game {g}: {e}"))?;
        if !gaps.is_nash {
            return Err(format!(
                "game {g}: solver output is not a verified equilibrium"
            ));
        }
        let conj = ConjectureProfile::replicated(&sol.trajectory, players);
        let mult = consistency_multipliers_lq(&game, &sol.controls, &conj)
            .map_err(|e| format!("game {g}: {e}"))?;
        let thresholds = penalty_threshold(&mult);
        worst_lambda = worst_lambda.max(thresholds.iter().copied().fold(0.0, f64::max));
        let r = epsilon_bound_lq(&game, &sol.controls, &conj, &auto_mu(&thresholds, 1e-6))
            .map_err(|e| format!("game {g}: {e}"))?;
        worst_eps = worst_eps.max(r.eps);
    }
    check(
        worst_lambda <= 1e-7 && worst_eps <= 1e-5,
        format!(
            "G1: mu* = 1, eps_1 = 0.25025 >= gap 0.25, mu = 0.5 refused; 20 games: max |lambda| {worst_lambda:.1e}, max eps {worst_eps:.1e}"
        ),
        format!("max |lambda| {worst_lambda:.2e} (limit 1e-7), max eps {worst_eps:.2e} (limit 1e-5)"),
    )
}

fn criterion_7() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut worst_exact, mut weakest_perturbed): (f64, f64) = (0.0, f64::INFINITY);
    for probe in 0..100 {
        let players = rng.random_range(1..=3);
        let n = rng.random_range(1..=3);
        let spec = RandomGameSpec::new(
            players,
            rng.random_range(1..=4),
            n,
            (0..players).map(|_| rng.random_range(1..=2)).collect(),
        );
        let game = random_lq_game(&mut rng, &spec);
        let u = normal_profile(&game, &mut rng);
        let traj = rollout(&game, &u).map_err(|e| e.to_string())?;
        let mut conj = ConjectureProfile::replicated(&traj, players);
        worst_exact =
            worst_exact.max(consistent_feasibility(&game, &u, &conj).map_err(|e| e.to_string())?);

        let i = rng.random_range(0..players);
        let k = rng.random_range(0..spec.stages);
        let c = rng.random_range(0..n);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        conj.x[i].states[k][c] += sign * 1e-3;
        let perturbed = consistent_feasibility(&game, &u, &conj).map_err(|e| e.to_string())?;
        weakest_perturbed = weakest_perturbed.min(perturbed);
        if perturbed < 1e-3 - 1e-10 {
            return Err(format!("probe {probe}: perturbed residual {perturbed:e}"));
        }
    }
    check(
        worst_exact <= 1e-10,
        format!(
            "100 probes: replicated rollouts residual <= {worst_exact:.1e}, perturbed residual >= {weakest_perturbed:.4e}"
        ),
        format!("replicated rollout residual {worst_exact:.2e} (limit 1e-10)"),
    )
}

fn local_perturbation_gain(game: &GenericGame, u: &ControlProfile) -> f64 {
    let base = all_costs(game, u).expect("costs");
    let mut best_gain: f64 = f64::NEG_INFINITY;
    let dims = game.dims();
    for (i, own_cost) in base.iter().enumerate() {
        for k in 0..dims.stages {
            for c in 0..dims.control_dims[i] {
                for step in [1e-3, -1e-3] {
                    let mut moved = u.clone();
                    moved.get_mut(i, k)[c] += step;
                    let cost = all_costs(game, &moved).expect("costs")[i];
                    best_gain = best_gain.max(own_cost - cost);
                }
            }
        }
    }
    best_gain
}

fn criterion_8(suite: &[LqGame]) -> Verdict {
    let opts = DescentOptions::default();
    let mut worst_lq: f64 = 0.0;
    for (g, game) in suite.iter().enumerate() {
        let decomp = decompose_quasi_potential_lq(game, SHARED_Q_TOL).map_err(|e| e.to_string())?;
        let exact = solve_lq_quasi_potential(game).map_err(|e| format!("game {g}: {e}"))?;
        let approx =
            solve_generic_descent(game, &decomp, &ControlProfile::zeros(game.dims()), &opts)
                .map_err(|e| format!("game {g}: {e}"))?;
        worst_lq = worst_lq.max((approx.objective - exact.objective).abs());
    }
    if worst_lq > 1e-6 {
        return Err(format!(
            "descent objective off Riccati by {worst_lq:.2e} (limit 1e-6)"
        ));
    }
    let opts = DescentOptions {
        grad_tol: 1e-8,
        ..DescentOptions::default()
    };
    let mut notes = Vec::new();
    for (name, sg) in [
        ("quartic", fixtures::quartic_potential_game()),
        ("nonlinear", fixtures::nonlinear_potential_game()),
    ] {
        let sol = solve_generic_descent(
            &sg.game,
            &sg.potential,
            &ControlProfile::zeros(sg.game.dims()),
            &opts,
        )
        .map_err(|e| format!("{name}: {e}"))?;
        let gain = local_perturbation_gain(&sg.game, &sol.controls);
        if !(sol.converged && sol.grad_norm <= 1e-8 && gain <= 1e-9) {
            return Err(format!(
                "{name}: converged {}, grad {:.2e}, best unilateral gain {gain:.2e}",
                sol.converged, sol.grad_norm
            ));
        }
        notes.push(format!("{name} grad {:.1e} gain {gain:.1e}", sol.grad_norm));
    }
    Ok(format!(
        "50 LQ games within {worst_lq:.1e} of Riccati; {}",
        notes.join(", ")
    ))
}

fn run_cli(args: &[&str]) -> Result<(i32, Vec<u8>), String> {
    let out = Command::new(common::dtdg_binary())
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    Ok((out.status.code().unwrap_or(-1), out.stdout))
}

fn criterion_9() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fixtures = common::potential_fixtures();
    if fixtures.is_empty() {
        return Err("no bundled fixtures found".into());
    }
    for path in &fixtures {
        let p = path.to_str().expect("utf-8 path");
        let solve = ["solve", p, "--seed", "42", "--no-timing"];
        let (code_a, a) = run_cli(&solve)?;
        let (code_b, b) = run_cli(&solve)?;
        if code_a != 0 || code_b != 0 || a != b {
            return Err(format!(
                "{p}: solve exit {code_a}/{code_b}, identical {}",
                a == b
            ));
        }
        let report = dir.path().join("solve.json");
        std::fs::write(&report, &a).map_err(|e| e.to_string())?;
        let r = report.to_str().expect("utf-8 path");
        let gaps = [
            "gaps",
            p,
            r,
            "--require-nash",
            "--no-timing",
            "--seed",
            "42",
        ];
        let (code, g1) = run_cli(&gaps)?;
        let (_, g2) = run_cli(&gaps)?;
        let parsed: serde_json::Value = serde_json::from_slice(&g1).map_err(|e| e.to_string())?;
        if code != 0 || parsed["gaps"]["is_nash"] != serde_json::Value::Bool(true) || g1 != g2 {
            return Err(format!(
                "{p}: gaps round trip exit {code}, is_nash {}",
                parsed["gaps"]["is_nash"]
            ));
        }
    }
    Ok(format!(
        "{} fixtures: identical solve and gaps reports, every round trip is Nash",
        fixtures.len()
    ))
}

fn main() {
    let suite = common::random_suite();
    let results: Vec<(&str, Verdict)> = vec![
        ("1 potential minimizers are equilibria", criterion_1(&suite)),
        ("2 Riccati matches dense KKT", criterion_2(&suite)),
        ("3 adjoint gradient vs finite differences", criterion_3()),
        ("4 grid oracle on the scalar game", criterion_4()),
        ("5 closed-form scalar game", criterion_5()),
        ("6 epsilon-Nash soundness", criterion_6()),
        ("7 consistent feasibility", criterion_7()),
        ("8 descent convergence", criterion_8(&suite)),
        ("9 CLI determinism and round trip", criterion_9()),
    ];
    let mut failed = 0;
    for (name, verdict) in &results {
        match verdict {
            Ok(detail) => println!("PASS  criterion {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  criterion {name}: {detail}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
