//! Emulation-based observers for singularly perturbed networked control
//! systems.
//!
//! The crate covers the whole workflow for a linear two-time-scale plant
//! whose slow and fast outputs reach an observer over a shared network:
//!
//! * [`model`]: plant, observer gains, error coordinates and the derived
//!   boundary-layer / reduced-system blocks.
//! * [`protocols`]: UGES scheduling protocols (zeroing, round-robin,
//!   try-once-discard) with their Lyapunov certificates.
//! * [`design`]: LMI feasibility checks and a derivative-free gain search.
//! * [`bounds`]: the MATI function `T(L, γ, λ)` and the constants pipeline
//!   that yields the admissible time-scale ratio `ε*`, the fast MATI and
//!   the DISS gains.
//! * [`hybridsim`]: event-exact simulation of the hybrid closed loop and a
//!   pointwise check of the DISS bound.
//! * [`cli`]: config-driven `verify`, `design`, `mati` and `simulate`
//!   commands.

pub mod bounds;
pub mod cli;
pub mod config;
pub mod design;
pub mod error;
pub mod exec;
pub mod hybridsim;
pub mod model;
pub mod numerics;
pub mod presets;
pub mod protocols;

pub use error::{Error, Result};
pub use exec::Exec;
