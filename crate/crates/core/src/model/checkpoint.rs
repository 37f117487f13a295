//! Versioned JSON checkpoints. Floats are written in shortest round-trip
//! form, so `load(save(x)) == x` bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelParams, OptimizerState};
use crate::error::{FddmError, Result};
use crate::seeds::SeedLineage;

pub const CHECKPOINT_FORMAT: &str = "fddm-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub params: ModelParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerState>,
    pub seeds: SeedLineage,
}

impl Checkpoint {
    pub fn new(params: ModelParams, optimizer: Option<OptimizerState>, seeds: SeedLineage) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            params,
            optimizer,
            seeds,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| FddmError::Input(format!("checkpoint serialization failed: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text).map_err(|e| FddmError::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(FddmError::Schema {
                line: 1,
                message: format!("not a checkpoint (format `{}`)", ckpt.format),
            });
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(FddmError::Schema {
                line: 1,
                message: format!("unsupported checkpoint version {}", ckpt.version),
            });
        }
        ckpt.params.config.validate()?;
        let expected = super::init_params(&ckpt.params.config, 0)?;
        if !same_shapes(&expected, &ckpt.params) {
            return Err(FddmError::Schema {
                line: 1,
                message: "parameter shapes do not match the stored config".into(),
            });
        }
        Ok(ckpt)
    }
}

fn same_shapes(a: &ModelParams, b: &ModelParams) -> bool {
    let layer_shapes = |p: &ModelParams| {
        let mut shapes: Vec<((usize, usize), usize)> = p
            .encoder
            .iter()
            .chain(std::iter::once(&p.head))
            .map(|l| (l.weights.shape(), l.bias.len()))
            .collect();
        if let Some(pr) = &p.projector {
            shapes.push((pr.hidden.weights.shape(), pr.hidden.bias.len()));
            shapes.push((pr.output.weights.shape(), pr.output.bias.len()));
        }
        shapes
    };
    layer_shapes(a) == layer_shapes(b)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = ckpt.to_json()?;
    text.push('\n');
    fs::write(path, text).map_err(|e| FddmError::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| FddmError::io(path, e))?;
    Checkpoint::from_json(&text)
}
