//! The three hyperparameter presets and their overridable fields.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Adamw,
}

/// Noise model for the decoder-side time features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeNoise {
    Normal,
    LogNormal,
}

/// Which attributes the decoder consumes and predicts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderRouting {
    All,
    ActivityAndTime,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperparameterSetting {
    pub id: u8,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub hidden_size: usize,
    pub optimizer: OptimizerKind,
    pub time_noise: TimeNoise,
    pub decoder_routing: DecoderRouting,
}

impl HyperparameterSetting {
    pub fn preset(id: u8) -> Result<Self> {
        let s = match id {
            1 => Self {
                id,
                encoder_layers: 2,
                decoder_layers: 2,
                hidden_size: 128,
                optimizer: OptimizerKind::Adam,
                time_noise: TimeNoise::Normal,
                decoder_routing: DecoderRouting::All,
            },
            2 => Self {
                id,
                encoder_layers: 4,
                decoder_layers: 4,
                hidden_size: 128,
                optimizer: OptimizerKind::Adamw,
                time_noise: TimeNoise::Normal,
                decoder_routing: DecoderRouting::ActivityAndTime,
            },
            3 => Self {
                id,
                encoder_layers: 4,
                decoder_layers: 4,
                hidden_size: 128,
                optimizer: OptimizerKind::Adamw,
                time_noise: TimeNoise::LogNormal,
                decoder_routing: DecoderRouting::ActivityAndTime,
            },
            _ => return Err(CoreError::Config(format!("unknown setting {id}, expected 1, 2 or 3"))),
        };
        Ok(s)
    }

    pub fn with_hidden(mut self, hidden: usize) -> Self {
        self.hidden_size = hidden;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_layers == 0 || self.hidden_size == 0 {
            return Err(CoreError::Config("layer count and hidden size must be positive".into()));
        }
        if self.encoder_layers != self.decoder_layers {
            return Err(CoreError::Config(format!(
                "encoder ({}) and decoder ({}) need the same number of layers for the state hand-off",
                self.encoder_layers, self.decoder_layers
            )));
        }
        Ok(())
    }
}

impl Default for HyperparameterSetting {
    fn default() -> Self {
        Self::preset(2).expect("preset 2 exists")
    }
}
