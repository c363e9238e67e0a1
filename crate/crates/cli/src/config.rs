//! Configuration file and exit codes.
//!
//! The file is TOML with three optional tables:
//!
//! ```toml
//! [offline]      # any ExampleConfig field, applied on top of the example defaults
//! n_train = 500
//! [train]        # any TrainConfig field
//! epochs = 300
//! [eval]
//! test_size = 1000
//! seed = 7
//! plots = true
//! ```
//!
//! `RB_OPERON_THREADS` caps the worker pool.

use std::path::Path;

use rb_operon::branchnet::TrainConfig;
use rb_operon::harness::pipeline::ExampleConfig;
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] rb_operon::Error),
    #[error("benchmark gate failed")]
    Gate,
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Gate => 4,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(rb_operon::Error::Io(_)) => 1,
            CliError::Core(_) => 2,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub test_size: usize,
    pub seed: u64,
    pub plots: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { test_size: 1000, seed: 7, plots: true }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct File {
    offline: Option<toml::Table>,
    train: Option<toml::Table>,
    eval: Option<EvalSettings>,
}

pub struct Settings {
    offline: toml::Table,
    pub train: TrainConfig,
    pub eval: EvalSettings,
}

fn overlay<T: serde::Serialize + serde::de::DeserializeOwned>(base: &T, patch: &toml::Table, what: &str) -> Result<T, CliError> {
    let bad = |e: String| CliError::Config(format!("[{what}] {e}"));
    let mut t = toml::Table::try_from(base).map_err(|e| bad(e.to_string()))?;
    for (k, v) in patch {
        if !t.contains_key(k) {
            return Err(bad(format!("unknown key '{k}'")));
        }
        t.insert(k.clone(), v.clone());
    }
    t.try_into().map_err(|e: toml::de::Error| bad(e.to_string()))
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let file: File = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?
            }
            None => File::default(),
        };
        let train = overlay(&TrainConfig::default(), &file.train.unwrap_or_default(), "train")?;
        let s = Self { offline: file.offline.unwrap_or_default(), train, eval: file.eval.unwrap_or_default() };
        s.offline(1)?;
        Ok(s)
    }

    /// Offline settings of an example with the file overrides applied.
    pub fn offline(&self, example: u8) -> Result<ExampleConfig, CliError> {
        if !(1..=3).contains(&example) {
            return Err(CliError::Config("example must be 1, 2 or 3".into()));
        }
        let mut c = overlay(&ExampleConfig::example(example), &self.offline, "offline")?;
        c.example = example;
        c.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(c)
    }

    pub fn install_threads(&self) -> Result<(), CliError> {
        let Ok(v) = std::env::var("RB_OPERON_THREADS") else {
            return Ok(());
        };
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| CliError::Config(format!("RB_OPERON_THREADS must be a positive integer, got '{v}'")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))
    }
}
