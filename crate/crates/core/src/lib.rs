//! Open-loop Nash equilibria of discrete-time dynamic games, computed by
//! minimizing a (quasi-)potential over the trajectory-feasible set and
//! certified by per-player best responses.

// `!(x <= tol)` is used on purpose throughout: NaN must fail every check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod consistency;
pub mod equilibrium;
pub mod fixtures;
pub mod game_model;
pub mod linalg;
pub mod ocp_solver;
pub mod registry;
pub mod structure;
