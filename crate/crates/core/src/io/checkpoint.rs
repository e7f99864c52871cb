//! Checkpoints: parameters, model config and optimizer state in one container.
//!
//! Entries: `config` (JSON text), `meta` (JSON text), `param/<name>`,
//! `adam.m/<name>`, `adam.v/<name>` (all f32).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::spft::Container;
use crate::model::{Model, ModelConfig};
use crate::nn::params::ParamStore;
use crate::train::{Adam, AdamConfig, Checkpoint};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    epoch: usize,
    val_rmse_cm: f64,
    adam: AdamConfig,
    adam_step: u64,
    names: Vec<String>,
}

pub fn checkpoint_container(ck: &Checkpoint) -> Result<Container> {
    ck.adam.check(&ck.params)?;
    let mut c = Container::new();
    c.insert_text("config", &serde_json::to_string_pretty(&ck.config)?)?;
    let meta = Meta {
        epoch: ck.epoch,
        val_rmse_cm: ck.val_rmse_cm,
        adam: ck.adam.config,
        adam_step: ck.adam.step,
        names: ck.params.names().to_vec(),
    };
    c.insert_text("meta", &serde_json::to_string_pretty(&meta)?)?;
    for (i, name) in ck.params.names().iter().enumerate() {
        c.insert_f32(format!("param/{name}"), &ck.params.values()[i])?;
        c.insert_f32(format!("adam.m/{name}"), &ck.adam.m[i])?;
        c.insert_f32(format!("adam.v/{name}"), &ck.adam.v[i])?;
    }
    Ok(c)
}

pub fn save_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    checkpoint_container(ck)?.save(path)
}

/// The config stored in a checkpoint file.
pub fn checkpoint_config(c: &Container) -> Result<ModelConfig> {
    Ok(serde_json::from_str(&c.text("config")?)?)
}

/// Rebuilds a checkpoint. With `expect`, a differing stored config is
/// rejected before any tensor is read.
pub fn checkpoint_from_container(c: &Container, expect: Option<&ModelConfig>) -> Result<Checkpoint> {
    let config = checkpoint_config(c)?;
    if let Some(want) = expect {
        if *want != config {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint config {} differs from requested {}",
                serde_json::to_string(&config)?,
                serde_json::to_string(want)?
            )));
        }
    }
    let meta: Meta = serde_json::from_str(&c.text("meta")?)?;
    let mut params = ParamStore::new();
    let (mut m, mut v) = (Vec::new(), Vec::new());
    for name in &meta.names {
        params.add(name.clone(), c.tensor_f32(&format!("param/{name}"))?)?;
        m.push(c.tensor_f32(&format!("adam.m/{name}"))?);
        v.push(c.tensor_f32(&format!("adam.v/{name}"))?);
    }
    // layout check happens before the store is handed out
    let model = Model::with_params(&config, params)?;
    let adam = Adam {
        config: meta.adam,
        step: meta.adam_step,
        m,
        v,
    };
    adam.check(&model.params)?;
    Ok(Checkpoint {
        config,
        params: model.params,
        adam,
        epoch: meta.epoch,
        val_rmse_cm: meta.val_rmse_cm,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>, expect: Option<&ModelConfig>) -> Result<Checkpoint> {
    checkpoint_from_container(&Container::load(path)?, expect)
}

/// Copies checkpoint parameters into `model` after checking its config.
pub fn load_into(model: &mut Model<f32>, path: impl AsRef<Path>) -> Result<Checkpoint> {
    let ck = load_checkpoint(path, Some(&model.config))?;
    model.params = ck.params.clone();
    Ok(ck)
}
