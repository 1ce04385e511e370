//! Checkpointing: named parameter tensors as CBTF files plus a JSON header
//! carrying the config, its hash, and the optimizer step.

use std::path::Path;

use serde::{Deserialize, Serialize};

use numcore::optim::AdamWState;
use synthdata::cbtf;
use synthdata::manifest::config_hash;

use crate::params::ParamStore;
use crate::{MfeError, Result};

pub const HEADER_FILE: &str = "header.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamMeta {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointHeader {
    /// What produced this checkpoint ("encoder", "decoder", ...).
    pub kind: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub step: u64,
    pub params: Vec<ParamMeta>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MfeError + '_ {
    move |e| MfeError::Io {
        path: path.display().to_string(),
        source: e,
    }
}

/// Writes the store under `dir`: header + one CBTF per tensor, with AdamW
/// moments alongside so training can resume exactly.
pub fn save_checkpoint<C: Serialize>(
    dir: &Path,
    kind: &str,
    config: &C,
    store: &ParamStore,
) -> Result<()> {
    std::fs::create_dir_all(dir.join("params")).map_err(io_err(dir))?;
    let mut metas = Vec::new();
    for (i, (name, value, trainable, state)) in store.export().into_iter().enumerate() {
        let file = format!("params/p_{i:04}.cbtf");
        cbtf::write_f32(&value, &dir.join(&file))?;
        cbtf::write_f32(&state.m, &dir.join(format!("params/p_{i:04}.m.cbtf")))?;
        cbtf::write_f32(&state.v, &dir.join(format!("params/p_{i:04}.v.cbtf")))?;
        std::fs::write(
            dir.join(format!("params/p_{i:04}.step")),
            state.step.to_string(),
        )
        .map_err(io_err(dir))?;
        metas.push(ParamMeta {
            name,
            file,
            shape: value.shape().to_vec(),
            trainable,
        });
    }
    let header = CheckpointHeader {
        kind: kind.to_string(),
        config: serde_json::to_value(config).expect("config serializes"),
        config_hash: config_hash(config),
        step: store.step,
        params: metas,
    };
    let text = serde_json::to_string_pretty(&header).expect("header serializes");
    std::fs::write(dir.join(HEADER_FILE), text).map_err(io_err(dir))?;
    Ok(())
}

pub fn load_header(dir: &Path) -> Result<CheckpointHeader> {
    let path = dir.join(HEADER_FILE);
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| MfeError::Config(format!(
        "{}: {e}",
        path.display()
    )))
}

pub fn load_checkpoint(dir: &Path) -> Result<(CheckpointHeader, ParamStore)> {
    let header = load_header(dir)?;
    let mut entries = Vec::new();
    for (i, meta) in header.params.iter().enumerate() {
        let value = cbtf::read_f32(&dir.join(&meta.file))?;
        if value.shape() != meta.shape.as_slice() {
            return Err(MfeError::Config(format!(
                "checkpoint param {} shape {:?} != recorded {:?}",
                meta.name,
                value.shape(),
                meta.shape
            )));
        }
        let m = cbtf::read_f32(&dir.join(format!("params/p_{i:04}.m.cbtf")))?;
        let v = cbtf::read_f32(&dir.join(format!("params/p_{i:04}.v.cbtf")))?;
        let step_path = dir.join(format!("params/p_{i:04}.step"));
        let step: u64 = std::fs::read_to_string(&step_path)
            .map_err(io_err(&step_path))?
            .trim()
            .parse()
            .map_err(|e| MfeError::Config(format!("bad step file for {}: {e}", meta.name)))?;
        entries.push((
            meta.name.clone(),
            value,
            meta.trainable,
            AdamWState { step, m, v },
        ));
    }
    Ok((header.clone(), ParamStore::import(entries, header.step)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use numcore::Tensor;

    #[test]
    fn roundtrip_preserves_values_and_flags() {
        let mut store = ParamStore::new();
        store.insert("a.w", Tensor::from_fn(&[3, 2], |i| i as f32 * 0.5), true);
        store.insert("frozen", Tensor::from_fn(&[4], |i| -(i as f32)), false);
        store.step = 17;

        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), "encoder", &serde_json::json!({"v": 1}), &store).unwrap();
        let (header, loaded) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(header.kind, "encoder");
        assert_eq!(header.step, 17);
        assert_eq!(loaded.step, 17);
        assert_eq!(loaded.get("a.w").unwrap(), store.get("a.w").unwrap());
        assert_eq!(loaded.get("frozen").unwrap(), store.get("frozen").unwrap());
        assert!(loaded.is_trainable("a.w"));
        assert!(!loaded.is_trainable("frozen"));
    }
}
