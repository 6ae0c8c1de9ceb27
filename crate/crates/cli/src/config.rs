//! Run configuration: a flat JSON schema whose values are overridden by
//! command-line flags. Every command echoes the resolved configuration to its
//! output directory so runs can be reproduced exactly.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use actinet::autonet::{ConvSpec, PoolSpec};
use actinet::eval::CnnHyperParams;
use actinet::train::{TaskMode, TrainConfig};

/// All tunables, each optional in the file; unset values fall back to the
/// library defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub l2: Option<f64>,

    pub hidden: Option<usize>,
    pub dropout: Option<f64>,
    pub share_extractors: Option<bool>,
    pub conv1_filters: Option<usize>,
    pub conv1_width: Option<usize>,
    pub conv1_stride: Option<usize>,
    pub conv2_filters: Option<usize>,
    pub conv2_width: Option<usize>,
    pub conv2_stride: Option<usize>,
    pub pool_width: Option<usize>,
    pub pool_stride: Option<usize>,

    pub lr_l2_grid: Option<Vec<f64>>,
    pub lr_max_iters: Option<usize>,
    pub rf_trees: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("cannot read config file {}", p.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("invalid config file {}", p.display()))
            }
        }
    }

    pub fn train_config(&self, seed: u64, task_mode: TaskMode) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            momentum: self.momentum.unwrap_or(d.momentum),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            max_epochs: self.max_epochs.unwrap_or(d.max_epochs),
            patience: self.patience.unwrap_or(d.patience),
            seed,
            task_mode,
            l2: self.l2.unwrap_or(d.l2),
        }
    }

    pub fn cnn_params(&self) -> CnnHyperParams {
        let d = CnnHyperParams::default();
        CnnHyperParams {
            conv1: ConvSpec {
                filters: self.conv1_filters.unwrap_or(d.conv1.filters),
                width: self.conv1_width.unwrap_or(d.conv1.width),
                stride: self.conv1_stride.unwrap_or(d.conv1.stride),
            },
            conv2: ConvSpec {
                filters: self.conv2_filters.unwrap_or(d.conv2.filters),
                width: self.conv2_width.unwrap_or(d.conv2.width),
                stride: self.conv2_stride.unwrap_or(d.conv2.stride),
            },
            pool: PoolSpec {
                width: self.pool_width.unwrap_or(d.pool.width),
                stride: self.pool_stride.unwrap_or(d.pool.stride),
            },
            dropout_p: self.dropout.unwrap_or(d.dropout_p),
            hidden: self.hidden.unwrap_or(d.hidden),
            share_extractors: self.share_extractors.unwrap_or(d.share_extractors),
        }
    }

    pub fn lr_l2_grid(&self) -> Vec<f64> {
        self.lr_l2_grid
            .clone()
            .unwrap_or_else(|| vec![0.001, 0.01, 0.1, 1.0, 10.0])
    }

    pub fn lr_max_iters(&self) -> usize {
        self.lr_max_iters.unwrap_or(2000)
    }

    pub fn rf_trees(&self) -> usize {
        self.rf_trees.unwrap_or(200)
    }
}

/// Writes the fully resolved configuration (every effective value, including
/// defaults that were not overridden) into `dir/config.json`.
pub fn echo_config(dir: &Path, effective: &serde_json::Value) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join("config.json"),
        serde_json::to_string_pretty(effective)? + "\n",
    )?;
    Ok(())
}
