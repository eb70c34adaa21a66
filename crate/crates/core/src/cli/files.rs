//! Input documents: games, control profiles and consistent points.
//!
//! All are JSON. Matrices are row-major nested arrays, vectors plain
//! arrays. Unknown fields are rejected.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::CliError;
use crate::consistency::ConjectureProfile;
use crate::game_model::{ControlProfile, DynamicGame, GameDims, LqGame, Trajectory};

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GameKind {
    #[serde(rename = "lq")]
    Lq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimsFile {
    pub players: usize,
    pub stages: usize,
    pub state_dim: usize,
    pub control_dims: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageFile {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    /// One input matrix per player.
    #[serde(rename = "B")]
    pub b: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlayerFile {
    /// One state weight per stage, applied to the state that stage produces.
    #[serde(rename = "Q")]
    pub q: Vec<Vec<Vec<f64>>>,
    /// `R[k][j]`: weight on player `j`'s control at stage `k`.
    #[serde(rename = "R")]
    pub r: Vec<Vec<Vec<Vec<f64>>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameFile {
    pub schema_version: String,
    pub kind: GameKind,
    pub dims: DimsFile,
    pub x1: Vec<f64>,
    pub stages: Vec<StageFile>,
    pub players: Vec<PlayerFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileFile {
    /// `controls[i][k]`: player `i`'s control at stage `k`.
    pub controls: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointFile {
    pub controls: Vec<Vec<Vec<f64>>>,
    /// `conjectures[i][k]`: player `i`'s conjectured state after stage `k`.
    pub conjectures: Vec<Vec<Vec<f64>>>,
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn parse<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T, CliError> {
    let mut de = serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| CliError::Parse {
        path: path.display().to_string(),
        field: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

fn invalid(path: &Path, field: impl Into<String>, message: impl Into<String>) -> CliError {
    CliError::Parse {
        path: path.display().to_string(),
        field: field.into(),
        message: message.into(),
    }
}

fn matrix(
    path: &Path,
    field: &str,
    rows: &[Vec<f64>],
    shape: (usize, usize),
) -> Result<DMatrix<f64>, CliError> {
    let (r, c) = shape;
    if rows.len() != r || rows.iter().any(|row| row.len() != c) {
        let got_cols = rows.first().map_or(0, Vec::len);
        return Err(invalid(
            path,
            field,
            format!(
                "expected a {r}x{c} matrix, got {} rows (first of length {got_cols})",
                rows.len()
            ),
        ));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn count(path: &Path, field: &str, got: usize, want: usize) -> Result<(), CliError> {
    if got != want {
        return Err(invalid(
            path,
            field,
            format!("expected {want} entries, got {got}"),
        ));
    }
    Ok(())
}

impl GameFile {
    pub fn to_game(&self, path: &Path) -> Result<LqGame, CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(
                path,
                "schema_version",
                format!(
                    "unsupported version {:?}, expected {SCHEMA_VERSION:?}",
                    self.schema_version
                ),
            ));
        }
        let d = &self.dims;
        let dims = GameDims::new(d.players, d.stages, d.state_dim, d.control_dims.clone())
            .map_err(|e| invalid(path, "dims", e.to_string()))?;
        let n = dims.state_dim;
        count(path, "x1", self.x1.len(), n)?;
        count(path, "stages", self.stages.len(), dims.stages)?;
        count(path, "players", self.players.len(), dims.players)?;

        let mut a = Vec::with_capacity(dims.stages);
        let mut b = Vec::with_capacity(dims.stages);
        for (k, st) in self.stages.iter().enumerate() {
            a.push(matrix(path, &format!("stages[{k}].A"), &st.a, (n, n))?);
            count(path, &format!("stages[{k}].B"), st.b.len(), dims.players)?;
            let bk =
                st.b.iter()
                    .enumerate()
                    .map(|(j, bj)| {
                        matrix(
                            path,
                            &format!("stages[{k}].B[{j}]"),
                            bj,
                            (n, dims.control_dims[j]),
                        )
                    })
                    .collect::<Result<Vec<_>, _>>()?;
            b.push(bk);
        }
        let mut q = Vec::with_capacity(dims.players);
        let mut r = Vec::with_capacity(dims.players);
        for (i, pl) in self.players.iter().enumerate() {
            count(path, &format!("players[{i}].Q"), pl.q.len(), dims.stages)?;
            count(path, &format!("players[{i}].R"), pl.r.len(), dims.stages)?;
            let qi =
                pl.q.iter()
                    .enumerate()
                    .map(|(k, m)| matrix(path, &format!("players[{i}].Q[{k}]"), m, (n, n)))
                    .collect::<Result<Vec<_>, _>>()?;
            let mut ri = Vec::with_capacity(dims.stages);
            for (k, rk) in pl.r.iter().enumerate() {
                count(
                    path,
                    &format!("players[{i}].R[{k}]"),
                    rk.len(),
                    dims.players,
                )?;
                let row = rk
                    .iter()
                    .enumerate()
                    .map(|(j, m)| {
                        let mj = dims.control_dims[j];
                        matrix(path, &format!("players[{i}].R[{k}][{j}]"), m, (mj, mj))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                ri.push(row);
            }
            q.push(qi);
            r.push(ri);
        }
        LqGame::new(dims, DVector::from_vec(self.x1.clone()), a, b, q, r).map_err(CliError::from)
    }

    pub fn from_game(game: &LqGame) -> Self {
        let dims = game.dims();
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..m.nrows())
                .map(|i| m.row(i).iter().copied().collect())
                .collect()
        };
        GameFile {
            schema_version: SCHEMA_VERSION.to_string(),
            kind: GameKind::Lq,
            dims: DimsFile {
                players: dims.players,
                stages: dims.stages,
                state_dim: dims.state_dim,
                control_dims: dims.control_dims.clone(),
            },
            x1: game.x1().iter().copied().collect(),
            stages: (0..dims.stages)
                .map(|k| StageFile {
                    a: rows(game.a(k)),
                    b: (0..dims.players).map(|j| rows(game.b(k, j))).collect(),
                })
                .collect(),
            players: (0..dims.players)
                .map(|i| PlayerFile {
                    q: (0..dims.stages).map(|k| rows(game.q(i, k))).collect(),
                    r: (0..dims.stages)
                        .map(|k| (0..dims.players).map(|j| rows(game.r(i, k, j))).collect())
                        .collect(),
                })
                .collect(),
        }
    }
}

pub fn load_game(path: &Path) -> Result<LqGame, CliError> {
    let text = read(path)?;
    parse::<GameFile>(path, &text)?.to_game(path)
}

pub fn profile_to_nested(controls: &ControlProfile) -> Vec<Vec<Vec<f64>>> {
    controls
        .to_players()
        .into_iter()
        .map(|per_stage| {
            per_stage
                .into_iter()
                .map(|v| v.iter().copied().collect())
                .collect()
        })
        .collect()
}

pub fn trajectory_to_nested(traj: &Trajectory) -> Vec<Vec<f64>> {
    traj.states
        .iter()
        .map(|v| v.iter().copied().collect())
        .collect()
}

fn nested_to_profile(
    path: &Path,
    field: &str,
    u: &[Vec<Vec<f64>>],
    dims: &GameDims,
) -> Result<ControlProfile, CliError> {
    count(path, field, u.len(), dims.players)?;
    for (i, per_stage) in u.iter().enumerate() {
        count(path, &format!("{field}[{i}]"), per_stage.len(), dims.stages)?;
        for (k, v) in per_stage.iter().enumerate() {
            count(
                path,
                &format!("{field}[{i}][{k}]"),
                v.len(),
                dims.control_dims[i],
            )?;
        }
    }
    let profile = ControlProfile::from_players(
        u.iter()
            .map(|per_stage| {
                per_stage
                    .iter()
                    .map(|v| DVector::from_vec(v.clone()))
                    .collect()
            })
            .collect(),
    );
    profile.validate(dims)?;
    Ok(profile)
}

/// Reads a control profile: either a profile document or a run report
/// carrying a solution (so `solve` output can be fed straight to `gaps`).
pub fn load_profile(path: &Path, dims: &GameDims) -> Result<ControlProfile, CliError> {
    let text = read(path)?;
    let value: serde_json::Value = parse(path, &text)?;
    if value.get("command").is_some() {
        let controls = value
            .pointer("/solution/controls")
            .ok_or_else(|| invalid(path, "solution.controls", "report carries no solution"))?;
        let nested: Vec<Vec<Vec<f64>>> = serde_json::from_value(controls.clone())
            .map_err(|e| invalid(path, "solution.controls", e.to_string()))?;
        return nested_to_profile(path, "solution.controls", &nested, dims);
    }
    let file: ProfileFile = parse(path, &text)?;
    nested_to_profile(path, "controls", &file.controls, dims)
}

pub fn load_point(
    path: &Path,
    dims: &GameDims,
) -> Result<(ControlProfile, ConjectureProfile), CliError> {
    let text = read(path)?;
    let file: PointFile = parse(path, &text)?;
    let controls = nested_to_profile(path, "controls", &file.controls, dims)?;
    count(path, "conjectures", file.conjectures.len(), dims.players)?;
    let mut x = Vec::with_capacity(dims.players);
    for (i, per_stage) in file.conjectures.iter().enumerate() {
        count(
            path,
            &format!("conjectures[{i}]"),
            per_stage.len(),
            dims.stages,
        )?;
        for (k, v) in per_stage.iter().enumerate() {
            count(
                path,
                &format!("conjectures[{i}][{k}]"),
                v.len(),
                dims.state_dim,
            )?;
        }
        x.push(Trajectory::new(
            per_stage
                .iter()
                .map(|v| DVector::from_vec(v.clone()))
                .collect(),
        ));
    }
    let conj = ConjectureProfile::new(x);
    conj.validate(dims)?;
    Ok((controls, conj))
}

/// Grid values: comma-separated numbers or fractions `a/b`, shared by all
/// players, or one such list per player separated by `;`.
pub fn parse_grid(spec: &str, players: usize) -> Result<Vec<Vec<f64>>, CliError> {
    let bad = |m: String| CliError::Usage(format!("--grid: {m}"));
    let lists: Vec<&str> = spec.split(';').collect();
    if lists.len() != 1 && lists.len() != players {
        return Err(bad(format!("{} lists for {players} players", lists.len())));
    }
    let parsed = lists
        .iter()
        .map(|list| {
            if list.trim().is_empty() {
                return Ok(Vec::new());
            }
            list.split(',')
                .map(|tok| parse_number(tok.trim()).map_err(&bad))
                .collect()
        })
        .collect::<Result<Vec<Vec<f64>>, CliError>>()?;
    Ok(if parsed.len() == 1 {
        vec![parsed[0].clone(); players]
    } else {
        parsed
    })
}

fn parse_number(tok: &str) -> Result<f64, String> {
    let num = |s: &str| -> Result<f64, String> {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| format!("{tok:?} is not a finite number"))
    };
    match tok.split_once('/') {
        Some((a, b)) => {
            let den = num(b)?;
            if den == 0.0 {
                return Err(format!("{tok:?} divides by zero"));
            }
            Ok(num(a)? / den)
        }
        None => num(tok),
    }
}
