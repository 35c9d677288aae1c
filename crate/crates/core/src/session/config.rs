use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::slicer::{SlicerConfig, SlicerConfigError};

use super::encoding::{FRAME_UNITS, MARKER_UNITS};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("tick_seconds must be positive and finite, got {0}")]
    TickSeconds(f64),
    #[error("max_tokens_per_chunk must be at least 1")]
    ZeroChunk,
    #[error("top_p must lie in [0, 1], got {0}")]
    TopP(f64),
    #[error("temperature must be non-negative, got {0}")]
    Temperature(f64),
    #[error("max_context {got} cannot hold a single slice pair (needs {need})")]
    ContextTooSmall { got: usize, need: usize },
    #[error(transparent)]
    Slicer(#[from] SlicerConfigError),
}

/// Every numeric knob of a live session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    /// Tick interval in seconds.
    pub tick_seconds: f64,
    pub max_tokens_per_chunk: usize,
    pub temperature: f64,
    pub top_p: f64,
    /// 0 disables top-k filtering.
    pub top_k: u32,
    /// Context budget in units (words, tokens and framing markers).
    pub max_context: usize,
    pub slicer: SlicerConfig,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            tick_seconds: 2.0,
            max_tokens_per_chunk: 10,
            temperature: 0.8,
            top_p: 0.8,
            top_k: 0,
            max_context: 4096,
            slicer: SlicerConfig::default(),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.tick_seconds.is_finite() && self.tick_seconds > 0.0) {
            return Err(ConfigError::TickSeconds(self.tick_seconds));
        }
        if self.max_tokens_per_chunk == 0 {
            return Err(ConfigError::ZeroChunk);
        }
        if !(0.0..=1.0).contains(&self.top_p) {
            return Err(ConfigError::TopP(self.top_p));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(ConfigError::Temperature(self.temperature));
        }
        self.slicer.validate()?;
        let need = self.max_pair_units();
        if self.max_context < need {
            return Err(ConfigError::ContextTooSmall {
                got: self.max_context,
                need,
            });
        }
        Ok(())
    }

    /// Worst-case size of one recorded pair.
    pub fn max_pair_units(&self) -> usize {
        self.slicer.user_width_max + self.max_tokens_per_chunk + FRAME_UNITS + MARKER_UNITS
    }
}
