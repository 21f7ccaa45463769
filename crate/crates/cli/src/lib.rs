//! Pipeline orchestration behind the `stresslab` binary: stage commands,
//! artifact layout, figure rendering, and the deterministic fixture builder.

pub mod figures;
pub mod fixtures;
pub mod layout;
pub mod stages;

use std::path::{Path, PathBuf};

use stresslab::model::{load_config, ConfigError, RunConfig};

/// Errors with a stable exit-code contract: 2 config, 3 missing artifact,
/// 4 numerical failure, 1 anything else.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingArtifact(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

/// Which portfolios a command operates on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PortfolioFilter {
    A,
    B,
    Both,
}

impl PortfolioFilter {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "A" | "a" => Ok(PortfolioFilter::A),
            "B" | "b" => Ok(PortfolioFilter::B),
            "both" => Ok(PortfolioFilter::Both),
            other => Err(CliError::Config(format!("unknown portfolio filter '{other}' (A|B|both)"))),
        }
    }

    pub fn keeps(&self, id: &str) -> bool {
        match self {
            PortfolioFilter::A => id == "A",
            PortfolioFilter::B => id == "B",
            PortfolioFilter::Both => true,
        }
    }
}

/// Which stress channels end up in the emitted tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelFilter {
    Vol,
    Linear,
    Nonlinear,
    All,
}

impl ChannelFilter {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "vol" => Ok(ChannelFilter::Vol),
            "linear" => Ok(ChannelFilter::Linear),
            "nonlinear" => Ok(ChannelFilter::Nonlinear),
            "all" => Ok(ChannelFilter::All),
            other => {
                Err(CliError::Config(format!("unknown channel filter '{other}' (vol|linear|nonlinear|all)")))
            }
        }
    }

    pub fn keeps(&self, channel: &str) -> bool {
        match self {
            ChannelFilter::Vol => channel == "vol",
            ChannelFilter::Linear => channel == "linear",
            ChannelFilter::Nonlinear => channel == "nonlinear",
            ChannelFilter::All => true,
        }
    }
}

/// Everything a stage needs: validated config plus the shared flags.
#[derive(Debug, Clone)]
pub struct StageCtx {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub offline: bool,
    pub provider_spec: String,
    pub portfolios: PortfolioFilter,
    pub channels: ChannelFilter,
}

impl StageCtx {
    /// Load and validate the config, applying an optional seed override.
    pub fn load(
        config_path: &Path,
        out: &Path,
        seed: Option<u64>,
        offline: bool,
        provider_spec: Option<String>,
        portfolios: PortfolioFilter,
        channels: ChannelFilter,
    ) -> Result<Self, CliError> {
        let mut cfg = load_config(config_path)?;
        if let Some(seed) = seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(StageCtx {
            cfg,
            out: out.to_path_buf(),
            offline,
            provider_spec: provider_spec.unwrap_or_else(|| "fixture".to_string()),
            portfolios,
            channels,
        })
    }
}
