//! Congruence subgroups of SL2(Z) represented by their finite images modulo
//! n: modular-curve invariants (index, elliptic points, cusps, genus),
//! Siegel-effectivity verdicts, and exhaustive classification of the groups
//! with few cusps at prime, prime-power, and mixed levels.

pub mod adjoint;
pub mod classify;
pub mod error;
pub mod group;
pub mod invariants;
pub mod matrix;
pub mod mixed;
pub mod tables;

pub use error::{Error, Result};
pub use group::{Budget, CongruenceGroup};
pub use matrix::ResidueMatrix;
