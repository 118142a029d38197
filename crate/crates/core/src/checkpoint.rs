//! Model kinds and the checkpoint file shared by every model.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{CentralModel, CentralParams};
use crate::dmf::{HyperParams, NodeState};
use crate::eval::{DmfScorer, Scorer};
use crate::scalar::Scalar;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Dmf,
    Mf,
    Bpr,
    /// DMF without personal item factors.
    Gdmf,
    /// DMF without communication.
    Ldmf,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [ModelKind::Dmf, ModelKind::Mf, ModelKind::Bpr, ModelKind::Gdmf, ModelKind::Ldmf];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Dmf => "dmf",
            ModelKind::Mf => "mf",
            ModelKind::Bpr => "bpr",
            ModelKind::Gdmf => "gdmf",
            ModelKind::Ldmf => "ldmf",
        }
    }

    pub fn is_decentralized(self) -> bool {
        matches!(self, ModelKind::Dmf | ModelKind::Gdmf | ModelKind::Ldmf)
    }

    /// Rewrites DMF hyper-parameters into this ablation's configuration.
    pub fn configure<T: Scalar>(self, mut hp: HyperParams<T>) -> HyperParams<T> {
        match self {
            ModelKind::Gdmf => hp.freeze_q = true,
            ModelKind::Ldmf => hp.walk.max_distance = 0,
            _ => {}
        }
        hp
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("unknown model kind `{0}` (expected dmf, mf, bpr, gdmf or ldmf)")]
pub struct UnknownModelKind(String);

impl FromStr for ModelKind {
    type Err = UnknownModelKind;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| UnknownModelKind(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, bound = "T: Scalar")]
pub enum CheckpointBody<T> {
    Decentralized { hp: HyperParams<T>, states: Vec<NodeState<T>> },
    Central { hp: CentralParams<T>, model: CentralModel<T> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Checkpoint<T> {
    pub schema_version: u32,
    pub model_kind: ModelKind,
    pub epochs_completed: usize,
    #[serde(flatten)]
    pub body: CheckpointBody<T>,
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("unsupported checkpoint schema version {0}")]
    SchemaVersion(u32),
    #[error("checkpoint body does not match model kind {0}")]
    KindMismatch(ModelKind),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl<T: Scalar> Checkpoint<T> {
    pub fn decentralized(kind: ModelKind, epochs_completed: usize, hp: HyperParams<T>, states: Vec<NodeState<T>>) -> Self {
        Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            model_kind: kind,
            epochs_completed,
            body: CheckpointBody::Decentralized { hp, states },
        }
    }

    pub fn central(kind: ModelKind, epochs_completed: usize, hp: CentralParams<T>, model: CentralModel<T>) -> Self {
        Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            model_kind: kind,
            epochs_completed,
            body: CheckpointBody::Central { hp, model },
        }
    }

    /// Scorer view over the stored model.
    pub fn scorer(&self) -> Box<dyn Scorer + '_> {
        match &self.body {
            CheckpointBody::Decentralized { states, .. } => Box::new(DmfScorer(states)),
            CheckpointBody::Central { model, .. } => Box::new(model.clone()),
        }
    }

    pub fn to_json(&self) -> Result<String, CheckpointError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        let ckpt: Checkpoint<T> = serde_json::from_str(text)?;
        if ckpt.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(CheckpointError::SchemaVersion(ckpt.schema_version));
        }
        let decentralized = matches!(ckpt.body, CheckpointBody::Decentralized { .. });
        if decentralized != ckpt.model_kind.is_decentralized() {
            return Err(CheckpointError::KindMismatch(ckpt.model_kind));
        }
        Ok(ckpt)
    }
}
