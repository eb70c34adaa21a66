//! Named, runtime-selectable strategies.
//!
//! Two families are registered by default:
//!
//! * potential minimizers for LQ games (`riccati`, `descent`), selected by
//!   the CLI's `--solver` flag;
//! * epsilon rules deciding which rivals' conjectures enter a player's
//!   epsilon-Nash bound and with what weight (`all-rivals`, `next-labelled`).

use std::collections::BTreeMap;

use crate::game_model::{ControlProfile, DynamicGame, LqGame};
use crate::ocp_solver::{
    solve_generic_descent, solve_lq_with_decomposition, DescentOptions, OcpError, OcpSolution,
};
use crate::structure::QuasiPotentialDecomposition;

/// Minimizes the quasi-potential of a shared-`Q` LQ game.
pub trait PotentialMinimizer: Send + Sync {
    fn name(&self) -> &'static str;
    /// Whether the result is the exact global minimizer.
    fn exact(&self) -> bool;
    fn minimize(
        &self,
        game: &LqGame,
        decomp: &QuasiPotentialDecomposition,
    ) -> Result<OcpSolution, OcpError>;
}

/// Backward Riccati recursion.
#[derive(Debug, Default, Clone, Copy)]
pub struct RiccatiMinimizer;

impl PotentialMinimizer for RiccatiMinimizer {
    fn name(&self) -> &'static str {
        "riccati"
    }

    fn exact(&self) -> bool {
        true
    }

    fn minimize(
        &self,
        game: &LqGame,
        decomp: &QuasiPotentialDecomposition,
    ) -> Result<OcpSolution, OcpError> {
        solve_lq_with_decomposition(game, decomp)
    }
}

/// Gradient descent from the zero profile.
#[derive(Debug, Default, Clone)]
pub struct DescentMinimizer {
    pub options: DescentOptions,
}

impl PotentialMinimizer for DescentMinimizer {
    fn name(&self) -> &'static str {
        "descent"
    }

    fn exact(&self) -> bool {
        false
    }

    fn minimize(
        &self,
        game: &LqGame,
        decomp: &QuasiPotentialDecomposition,
    ) -> Result<OcpSolution, OcpError> {
        solve_generic_descent(
            game,
            decomp,
            &ControlProfile::zeros(game.dims()),
            &self.options,
        )
    }
}

/// Which rivals' conjectures a player's epsilon bound is measured against,
/// and the weight on `mu_i * sum ||x_hat^i - x^j||_1`.
pub trait EpsilonRule: Send + Sync {
    fn name(&self) -> &'static str;
    fn rivals(&self, player: usize, players: usize) -> Vec<usize>;
    fn weight(&self) -> f64;
    /// Whether `mu` must exceed multiplier-based thresholds (convex LQ
    /// games, exact best responses) rather than being taken as given.
    fn uses_thresholds(&self) -> bool;
}

/// Every other player, weight 1/2 (convex LQ games with multiplier-based
/// penalty thresholds).
#[derive(Debug, Default, Clone, Copy)]
pub struct AllRivals;

impl EpsilonRule for AllRivals {
    fn name(&self) -> &'static str {
        "all-rivals"
    }

    fn rivals(&self, player: usize, players: usize) -> Vec<usize> {
        (0..players).filter(|&j| j != player).collect()
    }

    fn weight(&self) -> f64 {
        0.5
    }

    fn uses_thresholds(&self) -> bool {
        true
    }
}

/// Only the next labelled player (cyclically), weight 1.
#[derive(Debug, Default, Clone, Copy)]
pub struct NextLabelled;

impl EpsilonRule for NextLabelled {
    fn name(&self) -> &'static str {
        "next-labelled"
    }

    fn rivals(&self, player: usize, players: usize) -> Vec<usize> {
        vec![(player + 1) % players]
    }

    fn weight(&self) -> f64 {
        1.0
    }

    fn uses_thresholds(&self) -> bool {
        false
    }
}

/// Name-keyed collection of boxed strategies.
pub struct Registry<T: ?Sized> {
    entries: BTreeMap<&'static str, Box<T>>,
}

impl<T: ?Sized> Default for Registry<T> {
    fn default() -> Self {
        Registry {
            entries: BTreeMap::new(),
        }
    }
}

impl<T: ?Sized> Registry<T> {
    pub fn register(&mut self, name: &'static str, entry: Box<T>) -> Option<Box<T>> {
        self.entries.insert(name, entry)
    }

    pub fn get(&self, name: &str) -> Option<&T> {
        self.entries.get(name).map(|b| b.as_ref())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }
}

impl Registry<dyn PotentialMinimizer> {
    pub fn add(&mut self, m: Box<dyn PotentialMinimizer>) {
        self.register(m.name(), m);
    }
}

impl Registry<dyn EpsilonRule> {
    pub fn add(&mut self, r: Box<dyn EpsilonRule>) {
        self.register(r.name(), r);
    }
}

pub fn default_minimizers() -> Registry<dyn PotentialMinimizer> {
    let mut reg: Registry<dyn PotentialMinimizer> = Registry::default();
    reg.add(Box::new(RiccatiMinimizer));
    reg.add(Box::new(DescentMinimizer::default()));
    reg
}

pub fn default_epsilon_rules() -> Registry<dyn EpsilonRule> {
    let mut reg: Registry<dyn EpsilonRule> = Registry::default();
    reg.add(Box::new(AllRivals));
    reg.add(Box::new(NextLabelled));
    reg
}
