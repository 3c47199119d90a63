//! Workflows behind the `avtse` binary.

pub mod commands;
pub mod config;
pub mod exit;
