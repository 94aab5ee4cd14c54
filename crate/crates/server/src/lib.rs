//! HTTP service and command-line front end for the docent engine.
//!
//! [`ops::Service`] holds the operations; [`api`] exposes them over HTTP and
//! [`cli`] as subcommands, so both surfaces share one call path.

pub mod api;
pub mod cli;
pub mod config;
pub mod ops;
pub mod render;
