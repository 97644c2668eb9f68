//! Command implementations and the HTTP router behind the `clickforge` binary.

pub mod commands;
pub mod server;
