//! Command-line front end of the `ocprom` toolkit: configuration, the
//! offline pipeline stages and the online query commands.

pub mod commands;
pub mod config;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] ocprom::Error),

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(String),

    #[error("cli: missing artifact {0}")]
    Missing(String),
}
