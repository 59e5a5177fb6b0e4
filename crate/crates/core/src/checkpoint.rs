//! JSON checkpoints: architecture, named tensors, the training config and
//! optimizer state needed to resume.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::datasets::TaskDims;
use crate::error::{contract_err, DespError, Result};
use crate::nn::{EnergyModel, ModelDims};
use crate::training::{
    write_atomic, BaselinePredictor, ElementwiseBaseline, SetLossKind, TrainConfig, TrainState,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    Energy,
    BaselineChamfer,
    BaselineHungarian,
    Elementwise,
}

/// A trained model of any kind together with its task shape.
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Energy { model: EnergyModel, task: TaskDims },
    Baseline { model: BaselinePredictor, loss: SetLossKind },
    Elementwise(ElementwiseBaseline),
}

impl Model {
    pub fn kind(&self) -> CheckpointKind {
        match self {
            Model::Energy { .. } => CheckpointKind::Energy,
            Model::Baseline { loss: SetLossKind::Chamfer, .. } => CheckpointKind::BaselineChamfer,
            Model::Baseline { loss: SetLossKind::Hungarian, .. } => CheckpointKind::BaselineHungarian,
            Model::Elementwise(_) => CheckpointKind::Elementwise,
        }
    }

    pub fn task(&self) -> TaskDims {
        match self {
            Model::Energy { task, .. } => *task,
            Model::Baseline { model, .. } => model.task,
            Model::Elementwise(m) => m.task,
        }
    }

    /// Short name used in metrics files.
    pub fn label(&self) -> &'static str {
        match self.kind() {
            CheckpointKind::Energy => "desp",
            CheckpointKind::BaselineChamfer => "baseline_chamfer",
            CheckpointKind::BaselineHungarian => "baseline_hungarian",
            CheckpointKind::Elementwise => "baseline_elementwise",
        }
    }

    fn named(&self) -> Vec<(String, Tensor)> {
        match self {
            Model::Energy { model, .. } => model
                .param_names()
                .into_iter()
                .zip(model.params().into_iter().cloned())
                .collect(),
            Model::Baseline { model, .. } => model.named(),
            Model::Elementwise(m) => m.named(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub task: TaskDims,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<ModelDims>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub widths: Option<Vec<usize>>,
    pub tensors: BTreeMap<String, Tensor>,
    pub config: TrainConfig,
    pub config_hash: String,
    pub train_state: TrainState,
}

impl Checkpoint {
    pub fn new(model: &Model, config: &TrainConfig, state: &TrainState) -> Self {
        let (dims, widths) = match model {
            Model::Energy { model, .. } => (Some(model.dims.clone()), None),
            Model::Baseline { model, .. } => (None, Some(model.decoder.widths())),
            Model::Elementwise(m) => (None, Some(vec![m.width()])),
        };
        Self {
            kind: model.kind(),
            task: model.task(),
            dims,
            widths,
            tensors: model.named().into_iter().collect(),
            config: config.clone(),
            config_hash: config.hash(),
            train_state: state.clone(),
        }
    }

    pub fn model(&self) -> Result<Model> {
        let named: Vec<(String, Tensor)> = self.tensors.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        let widths = || {
            self.widths
                .clone()
                .ok_or_else(|| DespError::Contract("checkpoint lacks layer widths".into()))
        };
        Ok(match self.kind {
            CheckpointKind::Energy => {
                let Some(dims) = self.dims.clone() else {
                    return contract_err("energy checkpoint lacks dims");
                };
                Model::Energy {
                    model: EnergyModel::from_named(dims, &named)?,
                    task: self.task,
                }
            }
            CheckpointKind::BaselineChamfer | CheckpointKind::BaselineHungarian => Model::Baseline {
                model: BaselinePredictor::from_named(self.task, &widths()?, &named)?,
                loss: if self.kind == CheckpointKind::BaselineChamfer {
                    SetLossKind::Chamfer
                } else {
                    SetLossKind::Hungarian
                },
            },
            CheckpointKind::Elementwise => {
                let w = widths()?;
                let Some(&width) = w.first() else {
                    return contract_err("elementwise checkpoint lacks its width");
                };
                Model::Elementwise(ElementwiseBaseline::from_named(self.task, width, &named)?)
            }
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: Self = serde_json::from_str(&text)
            .map_err(|e| DespError::Parse(format!("{}: {e}", path.display())))?;
        if ckpt.config.hash() != ckpt.config_hash {
            return Err(DespError::Parse(format!(
                "{}: config hash does not match its config",
                path.display()
            )));
        }
        Ok(ckpt)
    }
}
