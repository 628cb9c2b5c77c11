//! Config-driven experiment harness around `fairlens`.

pub mod audit_cmd;
pub mod config;
pub mod error;
pub mod generate;
pub mod io;
pub mod manifest;
pub mod plot;
pub mod sweep;
pub mod table1;
