//! Model files on disk: `<stem>.toml` holds the configuration and
//! `<stem>.ckpt` the parameters in the checkpoint archive format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::autodiff::{read_checkpoint, write_checkpoint, AutodiffError, CheckpointError, Float, Params};

#[derive(Debug, thiserror::Error)]
pub enum PersistError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("config: {0}")]
    Config(String),
    #[error("parameters: {0}")]
    Params(#[from] AutodiffError),
}

pub fn save_model<C: Serialize, T: Float>(
    dir: &Path,
    stem: &str,
    config: &C,
    params: &Params<T>,
) -> Result<(), PersistError> {
    std::fs::create_dir_all(dir)?;
    let text = toml::to_string(config).map_err(|e| PersistError::Config(e.to_string()))?;
    std::fs::write(dir.join(format!("{stem}.toml")), text)?;
    let mut out = BufWriter::new(File::create(dir.join(format!("{stem}.ckpt")))?);
    write_checkpoint(&mut out, &params.named_values())?;
    out.flush()?;
    Ok(())
}

pub fn load_config<C: DeserializeOwned>(dir: &Path, stem: &str) -> Result<C, PersistError> {
    let text = std::fs::read_to_string(dir.join(format!("{stem}.toml")))?;
    toml::from_str(&text).map_err(|e| PersistError::Config(e.to_string()))
}

/// Overwrites every tensor of `params` with the stored values.
pub fn load_params<T: Float>(dir: &Path, stem: &str, params: &mut Params<T>) -> Result<(), PersistError> {
    let input = BufReader::new(File::open(dir.join(format!("{stem}.ckpt")))?);
    let tensors = read_checkpoint::<T, _>(input)?;
    params.load_from(&tensors)?;
    Ok(())
}
