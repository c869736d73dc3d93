//! Checkpoint directories: a JSON manifest plus one raw tensor file per
//! named parameter and optimizer moment. Round-trips are bit-exact.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::nets::{FadeState, StagePlan};
use crate::tensor::{ParameterStore, Tensor};

use super::{Result, TrainError};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    file: String,
}

/// Everything needed to resume training bit-exactly.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub plan: StagePlan,
    pub use_mbstd: bool,
    pub seed: u64,
    pub fade: FadeState,
    pub images_seen: u64,
    pub images_in_stage: u64,
    pub restarts: u32,
    /// Trainer RNG position within its ChaCha stream.
    pub rng_word_pos_hi: u64,
    pub rng_word_pos_lo: u64,
    pub data_epoch: u64,
    pub data_cursor: u64,
    pub gen_step: u64,
    pub critic_step: u64,
    tensors: Vec<TensorEntry>,
}

pub struct Checkpoint {
    pub manifest: Manifest,
    pub gen_params: Vec<(String, Tensor)>,
    pub critic_params: Vec<(String, Tensor)>,
    /// (name, m, v) triples per store.
    pub gen_moments: Vec<(String, Tensor, Tensor)>,
    pub critic_moments: Vec<(String, Tensor, Tensor)>,
}

pub struct SaveState<'a> {
    pub plan: &'a StagePlan,
    pub use_mbstd: bool,
    pub seed: u64,
    pub fade: FadeState,
    pub images_seen: u64,
    pub images_in_stage: u64,
    pub restarts: u32,
    pub rng_word_pos: u128,
    pub data_epoch: u64,
    pub data_cursor: u64,
    pub gen_store: &'a ParameterStore,
    pub critic_store: &'a ParameterStore,
}

/// Write a checkpoint directory (`ckpt_<images_seen>` layout is chosen by
/// the caller).
pub fn save_checkpoint(dir: &Path, state: &SaveState) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut tensors = Vec::new();
    let mut next_file = 0usize;
    let mut save_tensor = |name: String, t: &Tensor, tensors: &mut Vec<TensorEntry>| -> Result<()> {
        let file = format!("t{next_file:05}.tnsr");
        next_file += 1;
        t.save(&dir.join(&file))?;
        tensors.push(TensorEntry { name, file });
        Ok(())
    };

    for (prefix, store) in [("gen", state.gen_store), ("critic", state.critic_store)] {
        for name in store.names() {
            save_tensor(format!("p:{prefix}:{name}"), store.get(name)?, &mut tensors)?;
            let (m, v) = store.moments(name)?;
            save_tensor(format!("m:{prefix}:{name}"), m, &mut tensors)?;
            save_tensor(format!("v:{prefix}:{name}"), v, &mut tensors)?;
        }
    }

    let manifest = Manifest {
        format: 1,
        plan: state.plan.clone(),
        use_mbstd: state.use_mbstd,
        seed: state.seed,
        fade: state.fade,
        images_seen: state.images_seen,
        images_in_stage: state.images_in_stage,
        restarts: state.restarts,
        rng_word_pos_hi: (state.rng_word_pos >> 64) as u64,
        rng_word_pos_lo: state.rng_word_pos as u64,
        data_epoch: state.data_epoch,
        data_cursor: state.data_cursor,
        gen_step: state.gen_store.step_count(),
        critic_step: state.critic_store.step_count(),
        tensors,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
    std::fs::write(dir.join(MANIFEST_NAME), json)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest_path = dir.join(MANIFEST_NAME);
    let json = std::fs::read_to_string(&manifest_path)?;
    let manifest: Manifest =
        serde_json::from_str(&json).map_err(|e| TrainError::Checkpoint(format!("{}: {e}", manifest_path.display())))?;
    if manifest.format != 1 {
        return Err(TrainError::Checkpoint(format!("unsupported checkpoint format {}", manifest.format)));
    }

    let mut gen_params = Vec::new();
    let mut critic_params = Vec::new();
    let mut gen_m: Vec<(String, Tensor)> = Vec::new();
    let mut gen_v: Vec<(String, Tensor)> = Vec::new();
    let mut critic_m: Vec<(String, Tensor)> = Vec::new();
    let mut critic_v: Vec<(String, Tensor)> = Vec::new();

    for entry in &manifest.tensors {
        let t = Tensor::load(&dir.join(&entry.file))?;
        let mut parts = entry.name.splitn(3, ':');
        let (kind, store, name) = (
            parts.next().unwrap_or(""),
            parts.next().unwrap_or(""),
            parts.next().unwrap_or("").to_string(),
        );
        match (kind, store) {
            ("p", "gen") => gen_params.push((name, t)),
            ("p", "critic") => critic_params.push((name, t)),
            ("m", "gen") => gen_m.push((name, t)),
            ("v", "gen") => gen_v.push((name, t)),
            ("m", "critic") => critic_m.push((name, t)),
            ("v", "critic") => critic_v.push((name, t)),
            _ => {
                return Err(TrainError::Checkpoint(format!(
                    "unknown tensor entry '{}'",
                    entry.name
                )))
            }
        }
    }

    let zip_moments = |ms: Vec<(String, Tensor)>, vs: Vec<(String, Tensor)>| -> Result<Vec<(String, Tensor, Tensor)>> {
        if ms.len() != vs.len() {
            return Err(TrainError::Checkpoint("unpaired optimizer moments".into()));
        }
        ms.into_iter()
            .zip(vs)
            .map(|((mn, m), (vn, v))| {
                if mn != vn {
                    return Err(TrainError::Checkpoint(format!("moment order mismatch: {mn} vs {vn}")));
                }
                Ok((mn, m, v))
            })
            .collect()
    };

    Ok(Checkpoint {
        manifest,
        gen_params,
        critic_params,
        gen_moments: zip_moments(gen_m, gen_v)?,
        critic_moments: zip_moments(critic_m, critic_v)?,
    })
}

/// Checkpoint directories under a run directory, sorted by images_seen.
pub fn list_checkpoints(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found: Vec<(u64, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(run_dir)? {
        let path = entry?.path();
        if !path.is_dir() {
            continue;
        }
        if let Some(rest) = path.file_name().and_then(|n| n.to_str()).and_then(|n| n.strip_prefix("ckpt_")) {
            if let Ok(images) = rest.parse::<u64>() {
                if path.join(MANIFEST_NAME).is_file() {
                    found.push((images, path));
                }
            }
        }
    }
    found.sort_by_key(|(images, _)| *images);
    Ok(found.into_iter().map(|(_, p)| p).collect())
}
