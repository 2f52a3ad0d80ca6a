//! Files, configuration and the command line around `fairrisk-core`.
//!
//! The binary exposes five subcommands:
//!
//! * `simulate`: gaussian-linear study over a grid of `x`, analytic and Monte
//!   Carlo series side by side;
//! * `generate`: synthetic motor portfolio with its true coefficients;
//! * `audit`: two-step pricing audit of a portfolio CSV;
//! * `sensitivity`: analytic, plug-in and finite-difference sensitivities;
//! * `report`: CSV tables from a saved audit report.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use config::{Overrides, RunConfig};
pub use error::{CliError, Result};
