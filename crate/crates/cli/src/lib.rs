//! Library side of the `cdiff` binary: configuration, the preparation
//! pipeline and one module per subcommand.

pub mod commands;
pub mod config;
pub mod pipeline;
