//! Small-horizon portfolio optimization for an n-asset stochastic-volatility
//! market.
//!
//! The library provides, for a market of n correlated risky assets whose
//! drifts and volatilities are driven by a one-dimensional stochastic
//! factor:
//!
//! - closed-form first- and second-order horizon expansions of the HJB
//!   value function ([`expansion`]),
//! - the truncated-Neumann near-optimal portfolio and a backward
//!   time-stepping scheme for longer horizons ([`policy`], [`scheme`]),
//! - a Monte-Carlo simulator of the wealth/factor dynamics that serves as
//!   an empirical oracle for the expansion's quadratic error bound ([`mc`]),
//! - a benchmark against the constant-coefficient closed form and CSV/JSON
//!   reporting ([`mod@bench`], [`runner`]).

pub mod bench;
pub mod config;
pub mod error;
pub mod expansion;
pub mod field;
pub mod market;
pub mod mc;
pub mod policy;
pub mod runner;
pub mod scheme;
pub mod stats;
pub mod utility;

pub use error::{Error, Result};
pub use expansion::{ExpansionTerms, PartialBundle};
pub use field::{FieldValue, ScalarField};
pub use market::{validate_model, DominanceReport, MarketModel, ModelViolation};
pub use mc::{PathEnsemble, Policy, SimConfig};
pub use policy::HjbLinearSystem;
pub use scheme::SchemeGrid;
pub use utility::{UtilityFamily, WealthPoint};
