//! Model specifications, construction and checkpoint packaging.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diff::checkpoint::Checkpoint;
use crate::diff::ParamStore;
use crate::embed::EmbedConfig;
use crate::nets::{SepConfig, SepNet, TpeConfig, TpeNet, TsrConfig, TsrNet};
use crate::seed::str_hash;
use crate::train::{restore_params, CheckpointCodec, TrainError};

pub const HEADER_FORMAT: &str = "textcue-model";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    Tpe(TpeConfig),
    Dprnn(SepConfig),
    Tsr(TsrConfig),
}

impl ModelSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelSpec::Tpe(_) => "tpe",
            ModelSpec::Dprnn(_) => "dprnn",
            ModelSpec::Tsr(_) => "tsr",
        }
    }
}

#[derive(Clone, Debug)]
pub enum Net {
    Tpe(TpeNet),
    Dprnn(SepNet),
    Tsr(TsrNet),
}

/// Everything needed to rebuild a model and its input pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelCard {
    pub spec: ModelSpec,
    pub embed: EmbedConfig,
    pub sample_rate: u32,
    pub init_seed: u64,
}

impl ModelCard {
    pub fn build(&self) -> Result<(Net, ParamStore<f32>), TrainError> {
        let mut store = ParamStore::new(self.init_seed);
        let net = match &self.spec {
            ModelSpec::Tpe(c) => Net::Tpe(TpeNet::build(c, &mut store)?),
            ModelSpec::Dprnn(c) => Net::Dprnn(SepNet::build(c, &mut store)?),
            ModelSpec::Tsr(c) => Net::Tsr(TsrNet::build(c, &mut store)?),
        };
        Ok((net, store))
    }
}

impl CheckpointCodec for ModelCard {
    fn config_hash(&self) -> u64 {
        str_hash(&serde_json::to_string(&self.spec).expect("spec serializes"))
    }

    fn header(&self) -> serde_json::Value {
        serde_json::json!({ "format": HEADER_FORMAT, "model": self })
    }
}

/// A model restored from a checkpoint.
#[derive(Clone, Debug)]
pub struct LoadedModel {
    pub card: ModelCard,
    pub net: Net,
    pub store: ParamStore<f32>,
    pub checkpoint: Checkpoint,
}

impl LoadedModel {
    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self, TrainError> {
        if ck.header.get("format").and_then(|v| v.as_str()) != Some(HEADER_FORMAT) {
            return Err(TrainError::Data(
                "checkpoint header is not a model header".into(),
            ));
        }
        let card: ModelCard = serde_json::from_value(ck.header["model"].clone())
            .map_err(|e| TrainError::Data(format!("model header: {e}")))?;
        if card.config_hash() != ck.config_hash {
            return Err(TrainError::Data(
                "checkpoint config hash does not match its header".into(),
            ));
        }
        let (net, mut store) = card.build()?;
        restore_params(&mut store, &ck)?;
        Ok(Self {
            card,
            net,
            store,
            checkpoint: ck,
        })
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<(), TrainError> {
        if self.card.spec.kind() != kind {
            return Err(TrainError::Data(format!(
                "checkpoint holds a {} model, expected {kind}",
                self.card.spec.kind()
            )));
        }
        Ok(())
    }

    pub fn tpe(&self) -> Result<&TpeNet, TrainError> {
        match &self.net {
            Net::Tpe(n) => Ok(n),
            _ => Err(self.expect_kind("tpe").unwrap_err()),
        }
    }

    pub fn sep(&self) -> Result<&SepNet, TrainError> {
        match &self.net {
            Net::Dprnn(n) => Ok(n),
            _ => Err(self.expect_kind("dprnn").unwrap_err()),
        }
    }

    pub fn tsr(&self) -> Result<&TsrNet, TrainError> {
        match &self.net {
            Net::Tsr(n) => Ok(n),
            _ => Err(self.expect_kind("tsr").unwrap_err()),
        }
    }
}

/// Parameters only, without optimizer state.
pub fn model_checkpoint(card: &ModelCard, store: &ParamStore<f32>) -> Checkpoint {
    Checkpoint {
        config_hash: card.config_hash(),
        header: card.header(),
        tensors: crate::train::params_to_tensors(store),
    }
}
