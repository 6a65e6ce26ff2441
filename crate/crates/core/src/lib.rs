//! Sequential optimistic matching for episodic Markov matching markets.
//!
//! A planner steers a context process through its actions while two-sided
//! agents are matched at every step with transferable utilities. Utilities
//! and transitions are linear in known features. The crate contains:
//!
//! - [`market`]: the ground-truth simulator (features, utilities, kernel).
//! - [`matching`]: exact static matching (max-weight assignment, dual prices,
//!   transfers, stability, Subset Instability) plus brute-force oracles.
//! - [`estimation`]: ridge estimators with optimistic bonuses for utilities
//!   and for the planner's Q-function.
//! - [`som`]: the episode loop (backward estimation, forward acting).
//! - [`evaluation`]: dynamic-programming oracles and the regret ledger.
//! - [`experiment`]: config files, seeded runs and CSV output for the `som`
//!   binary.

pub mod error;
pub mod estimation;
pub mod evaluation;
pub mod experiment;
pub mod market;
pub mod matching;
pub mod som;

pub use error::{Error, Result};
