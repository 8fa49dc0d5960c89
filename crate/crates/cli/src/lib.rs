//! Command-line front end and audit HTTP server.

pub mod config;
pub mod server;
