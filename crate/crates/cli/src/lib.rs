// Copyright 2026 The ddsim Authors
// SPDX-License-Identifier: Apache-2.0

//! Command-line harness for `ddsim`: configuration, subcommands and output
//! files.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod verify;

pub use commands::{aht_verify, fit_csv, rerun, scan, simulate, AhtArgs, Outcome};
pub use config::{ConfigError, FileConfig, Preset, Resolved};
pub use error::CliError;
pub use output::RunManifest;
