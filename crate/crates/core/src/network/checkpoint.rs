use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{expected_shapes, ArchConfig, InputScaler, Model};
use crate::diffcore::{ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::jsonio;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

/// One parameter array, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Everything needed to rebuild and apply a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub schema_version: u32,
    pub arch: ArchConfig,
    /// Class labels in output order.
    pub categories: Vec<String>,
    pub input_scaler: Option<InputScaler>,
    pub params: BTreeMap<String, NamedArray>,
    /// Free-form training manifest: task, seeds, epochs, final metrics.
    pub manifest: serde_json::Value,
}

impl ModelCheckpoint {
    pub fn from_model(
        model: &Model,
        categories: &[String],
        input_scaler: Option<InputScaler>,
        manifest: serde_json::Value,
    ) -> Self {
        let params = model
            .params
            .iter()
            .map(|(name, t)| {
                (
                    name.to_string(),
                    NamedArray {
                        shape: t.shape().to_vec(),
                        values: t.data().to_vec(),
                    },
                )
            })
            .collect();
        ModelCheckpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            arch: model.arch.clone(),
            categories: categories.to_vec(),
            input_scaler,
            params,
            manifest,
        }
    }

    /// Rebuilds the model, checking that every parameter is present exactly
    /// once with the shape the architecture implies.
    pub fn to_model(&self) -> Result<Model> {
        let expected = expected_shapes(&self.arch);
        if expected.len() != self.params.len() {
            let known: Vec<&String> = expected.iter().map(|(n, _)| n).collect();
            let extra: Vec<&String> = self.params.keys().filter(|k| !known.contains(k)).collect();
            return Err(Error::Dimension(format!(
                "checkpoint has {} parameter arrays, architecture expects {} (unexpected: {extra:?})",
                self.params.len(),
                expected.len()
            )));
        }
        let mut p = ParamSet::new();
        for (name, _) in expected {
            let a = self
                .params
                .get(&name)
                .ok_or_else(|| Error::Dimension(format!("checkpoint lacks parameter `{name}`")))?;
            p.insert(name, Tensor::new(a.shape.clone(), a.values.clone())?)?;
        }
        Model::from_parts(self.arch.clone(), p)
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &ModelCheckpoint) -> Result<()> {
    jsonio::write_json(path, ckpt)
}

pub fn load_checkpoint(path: &Path) -> Result<ModelCheckpoint> {
    let ckpt: ModelCheckpoint = jsonio::read_json(path)?;
    if ckpt.schema_version != CHECKPOINT_SCHEMA_VERSION {
        return Err(Error::Dataset(format!(
            "{}: checkpoint schema {} is not supported (expected {CHECKPOINT_SCHEMA_VERSION})",
            path.display(),
            ckpt.schema_version
        )));
    }
    Ok(ckpt)
}
