//! Panel-data difference-in-differences estimation.
//!
//! The crate estimates treatment effects from grouped panel or repeated
//! cross-section data. Beyond the textbook two-period contrast it builds
//! higher-order backward-difference estimators that stay valid when group
//! gaps drift polynomially, combines them with weights estimated from a
//! cluster bootstrap, extends the machinery to staggered adoption, and
//! reports equivalence-style bounds on pre-treatment trends instead of
//! bare significance tests.

pub mod cli;
pub mod error;
pub mod estimators;
pub mod gmm;
pub mod inference;
pub mod panel;
pub mod regression;
pub mod sim;
pub mod staggered;

pub use error::{Error, Result};
