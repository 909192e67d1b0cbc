//! Library surface of the experiment CLI, exposed so integration tests can
//! drive the commands directly.

pub mod commands;
pub mod config;
pub mod hash;
pub mod results;
