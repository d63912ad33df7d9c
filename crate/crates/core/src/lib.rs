//! Deterministic driven-compass model with dichotomic measurements and
//! Bell/CHSH correlation experiments.
//!
//! The crate simulates a compass needle in a fixed plus a rotating magnetic
//! field, a system with both regular and chaotic regimes, and uses pairs of
//! such systems as a classical analogue of the EPRB experiment: the initial
//! conditions play the role of hidden variables, the fixed-field amplitude
//! `x` is the analyser knob, and the measurement dichotomizes the needle
//! orientation at a fixed measuring time. On top of that it provides
//! synthesis routines that pick arbitrarily small setting-dependent
//! corrections of the hidden variables so the pair correlation reproduces
//! the quantum `cos 2(a-b)` law, plus a separatrix-based construction where
//! the same synthesis is exact for every correction scale.

pub mod dynamics;
pub mod eprb;
pub mod error;
pub mod nonlocal;
pub mod ode;
pub mod separatrix;

pub use error::{Error, Result};
