//! circforge: exact computations around group-circulant singularities.
//!
//! Modules are layered bottom-up: [`cyclotomic`] and [`abelian`] provide the
//! arithmetic and group combinatorics, [`polyring`] the polynomial ring with
//! fractional divisorial exponents, and the remaining modules build the
//! circulant, resolution-invariant, blow-up and normal-crossings machinery.

pub mod abelian;
pub mod blowup;
pub mod cyclotomic;
pub mod error;
pub mod gcirc;
pub mod linalg;
pub mod polyring;
pub mod quotient_nc;
pub mod resinv;
pub mod split;

pub mod cli;

pub use error::{Error, Result};
