//! Shared command plumbing: exit-code discipline, config resolution with
//! overrides, and reconstruction of a trained model from a run directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use surfrec_core::networks::Model;
use surfrec_core::num::Real;
use surfrec_core::scenes::{read_json, write_json, SceneDataset};
use surfrec_core::trainer::TrainConfig;

/// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
#[derive(Debug)]
pub enum CmdError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CmdError {
    pub fn code(&self) -> i32 {
        match self {
            CmdError::Usage(_) => 1,
            CmdError::Data(_) => 2,
            CmdError::Numerical(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CmdError::Usage(m) | CmdError::Data(m) | CmdError::Numerical(m) => m,
        }
    }
}

pub type CmdResult<T> = Result<T, CmdError>;

pub fn data_err<E: std::fmt::Display>(e: E) -> CmdError {
    CmdError::Data(e.to_string())
}

/// Everything a run needs to be reproduced from its output directory alone.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSnapshot {
    pub config: TrainConfig,
    pub dataset: PathBuf,
}

/// Load a config file (or defaults), apply `--set key.path=value` overrides,
/// and reject unknown keys via the typed parse.
pub fn resolve_config(file: Option<&Path>, overrides: &[String]) -> CmdResult<TrainConfig> {
    let mut value: serde_json::Value = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CmdError::Data(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CmdError::Data(format!("{}: {e}", path.display())))?
        }
        None => serde_json::to_value(TrainConfig::default()).unwrap(),
    };
    for ov in overrides {
        let (key, raw) = ov
            .split_once('=')
            .ok_or_else(|| CmdError::Usage(format!("override `{ov}` is not key=value")))?;
        let parsed: serde_json::Value = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        let parts: Vec<&str> = key.split('.').collect();
        let mut slot = &mut value;
        for part in &parts[..parts.len() - 1] {
            let obj = slot.as_object_mut().ok_or_else(|| {
                CmdError::Usage(format!("override key `{key}`: `{part}` is not an object"))
            })?;
            slot = obj
                .entry(part.to_string())
                .or_insert_with(|| serde_json::Value::Object(Default::default()));
        }
        let last = parts.last().unwrap();
        slot.as_object_mut()
            .ok_or_else(|| CmdError::Usage(format!("override key `{key}`: parent is not an object")))?
            .insert(last.to_string(), parsed);
    }
    let cfg: TrainConfig = serde_json::from_value(value)
        .map_err(|e| CmdError::Usage(format!("invalid configuration: {e}")))?;
    cfg.validate().map_err(CmdError::Usage)?;
    Ok(cfg)
}

pub fn write_snapshot(dir: &Path, snapshot: &RunSnapshot) -> CmdResult<()> {
    std::fs::create_dir_all(dir).map_err(data_err)?;
    write_json(&dir.join("config_resolved.json"), snapshot).map_err(data_err)
}

pub fn read_snapshot(run_dir: &Path) -> CmdResult<RunSnapshot> {
    read_json(&run_dir.join("config_resolved.json")).map_err(data_err)
}

/// Rebuild the trained model of a run: config snapshot + dataset + checkpoint.
pub fn load_trained_model<T: Real>(
    run_dir: &Path,
    dataset_override: Option<&Path>,
    checkpoint_tag: &str,
) -> CmdResult<(RunSnapshot, SceneDataset, Model<T>)> {
    let snapshot = read_snapshot(run_dir)?;
    let ds_path = dataset_override.unwrap_or(&snapshot.dataset);
    let dataset = SceneDataset::load(ds_path).map_err(data_err)?;
    let trainer = surfrec_core::trainer::Trainer::<T>::new(snapshot.config.clone(), dataset)
        .map_err(data_err)?;
    let mut model = trainer.into_model();
    surfrec_core::autodiff::checkpoint::load_into(
        &mut model.params,
        &run_dir.join(format!("{checkpoint_tag}.ckpt")),
    )
    .map_err(data_err)?;
    let dataset = SceneDataset::load(ds_path).map_err(data_err)?;
    Ok((snapshot, dataset, model))
}
