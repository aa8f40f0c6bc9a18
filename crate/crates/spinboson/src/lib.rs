//! Simulators for closed and open dynamics of spin-boson systems.
//!
//! Three engines share one model description:
//!
//! * a variational ansatz built from superpositions of displaced-squeezed
//!   Gaussian states attached to spin configurations, evolved by projecting
//!   the Schrodinger (or effective non-Hermitian) flow onto the tangent
//!   space of the ansatz manifold, with quantum-jump unraveling of Lindblad
//!   channels ([`trajectory`]);
//! * a truncated Wigner engine that samples discrete spin and Gaussian
//!   bosonic phase-space distributions and integrates the corresponding
//!   stochastic equations of motion ([`twa`]);
//! * a dense truncated-Fock reference that propagates exact states and
//!   density matrices for benchmarking ([`oracle`]).
//!
//! The primary interface is the `examples/` directory (one runnable example
//! per capability); a thin `spinboson` binary drives the same machinery from
//! TOML run configurations.

pub mod config;
pub mod energy;
pub mod error;
pub mod gaussian;
pub mod geometry;
pub mod integrate;
pub mod operator;
pub mod oracle;
pub mod presets;
pub mod runner;
pub mod trajectory;
pub mod twa;

pub use error::{Error, Result};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;
