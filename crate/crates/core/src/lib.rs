//! Exact construction of self-affine non-removable Hölder graphs, finite-level
//! certification of the estimates that drive them, and evaluation of the
//! Whitney-sum and modulus-integral removability criteria.
//!
//! The crate is organised around five modules:
//!
//! * [`tower`]: the nested rectangles Γₙ, densities Aₙ and potentials uₙ,
//!   evaluated in exact rational arithmetic.
//! * [`verifier`]: bound reports, series diagnostics, Hölder and box-counting
//!   estimates for the tower.
//! * [`criterion`]: moduli of continuity, the modulus integral test, Whitney
//!   decomposition of a sampled graph and the shadow-weighted square sum.
//! * [`qcmap`]: the map F(z) = z + u and its Beltrami coefficient.
//! * [`cli`]: command-line front end, reports and file formats.

pub mod cli;
pub mod criterion;
pub mod error;
pub mod exact;
pub mod qcmap;
pub mod tower;
pub mod verifier;

pub use error::{Error, Result};
pub use exact::ExactScalar;
