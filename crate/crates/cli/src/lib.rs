//! Configuration schema and output envelope of the `compass-bell` binary,
//! exposed as a library so tests and downstream tooling can validate
//! emitted documents against the same types.

pub mod config;
pub mod output;
