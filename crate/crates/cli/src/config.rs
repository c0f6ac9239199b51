use std::path::{Path, PathBuf};

use blindsr::degradation::DegradationSpace;
use blindsr::discriminator::DiscriminatorConfig;
use blindsr::evaluation::BenchmarkLadder;
use blindsr::generator::GeneratorConfig;
use blindsr::losses::{LossWeights, PerceptualConfig};
use blindsr::training::{RunConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathSettings {
    pub hr_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

/// Everything a command can be configured with. Every key is optional in the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AppConfig {
    pub schema_version: u32,
    pub train: TrainConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub loss: LossWeights,
    pub perceptual: PerceptualConfig,
    pub degradation: DegradationSpace,
    pub benchmark: BenchmarkLadder,
    pub paths: PathSettings,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            train: TrainConfig::default(),
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            loss: LossWeights::default(),
            perceptual: PerceptualConfig::default(),
            degradation: DegradationSpace::default(),
            benchmark: BenchmarkLadder::default(),
            paths: PathSettings::default(),
        }
    }
}

fn path_error<E: std::fmt::Display>(e: serde_path_to_error::Error<E>) -> CliError {
    let path = e.path().to_string();
    CliError::Config {
        key: if path == "." { String::new() } else { path },
        message: e.inner().to_string().lines().map(str::trim).filter(|l| !l.is_empty()).last().unwrap_or_default().to_string(),
    }
}

impl AppConfig {
    /// Parses a TOML document; errors carry the offending key path.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let de = toml::Deserializer::parse(text).map_err(|e| CliError::Config {
            key: String::new(),
            message: e.to_string().trim().to_string(),
        })?;
        serde_path_to_error::deserialize(de).map_err(path_error)
    }

    /// Parses the JSON form printed in run logs.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let mut de = serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(&mut de).map_err(path_error)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::ConfigFile {
                    path: p.to_path_buf(),
                    source: e,
                })?;
                Self::from_toml(&text)
            }
        }
    }

    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            train: self.train.clone(),
            generator: self.generator.clone(),
            discriminator: self.discriminator.clone(),
            loss: self.loss.clone(),
            perceptual: self.perceptual.clone(),
            degradation: self.degradation.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config {
                key: "schema_version".into(),
                message: format!("{} is unsupported; this build reads {SCHEMA_VERSION}", self.schema_version),
            });
        }
        self.run_config().validate()?;
        self.benchmark.validate("benchmark")?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config is always serialisable")
    }
}
