//! Run configuration aggregating every stage's settings.

use std::fs;
use std::path::{Path, PathBuf};

use prefinfer_core::agent::AgentHyper;
use prefinfer_core::datahub::ColumnSpec;
use prefinfer_core::dwpi::{weight_grid, DwpiHyper};
use prefinfer_core::env::EnvConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const DEFAULT_OUT_DIR: &str = "prefinfer-out";

/// Where the training day and the seven evaluation days come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        train_seed: u64,
        eval_seed: u64,
    },
    Csv {
        price: PathBuf,
        renewable: PathBuf,
        background: PathBuf,
        #[serde(default)]
        columns: ColumnSpec,
        /// Day index (after alignment) used for training and demonstrations.
        train_day: usize,
        /// First of the seven evaluation days.
        eval_start_day: usize,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            train_seed: 7,
            eval_seed: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSource,
    pub env: EnvConfig,
    pub agent: AgentHyper,
    pub dwpi: DwpiHyper,
    pub grid_step: f64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            data: DataSource::default(),
            env: EnvConfig::default(),
            agent: AgentHyper::default(),
            dwpi: DwpiHyper::default(),
            grid_step: 0.01,
            out_dir: PathBuf::from(DEFAULT_OUT_DIR),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |e: &dyn std::fmt::Display| CliError::Config(e.to_string());
        self.env.validate().map_err(|e| bad(&e))?;
        self.agent.validate().map_err(|e| bad(&e))?;
        self.dwpi.validate().map_err(|e| bad(&e))?;
        weight_grid(self.grid_step).map_err(|e| bad(&e))?;
        if let DataSource::Csv {
            train_day,
            eval_start_day,
            ..
        } = &self.data
        {
            if (*eval_start_day..*eval_start_day + 7).contains(train_day) {
                return Err(CliError::Config(
                    "train_day must not fall inside the evaluation days".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}
