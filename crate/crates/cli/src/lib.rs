//! Command line and HTTP/WebSocket front ends for `nc-core`.
//!
//! Both front ends go through [`ops::Workspace`], so every capability of
//! the service has a command line equivalent.

pub mod cli;
pub mod error;
pub mod library;
pub mod ops;
pub mod service;
pub mod views;

pub use error::Failure;
pub use ops::Workspace;
