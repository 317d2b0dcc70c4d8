//! Text-to-text model backends.
//!
//! A [`ModelHandle`] names an immutable checkpoint together with the
//! fine-tuning phases that produced it. Fine-tuning always writes a new
//! checkpoint and returns a new handle; the input handle stays valid.

mod mock;
mod process;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::canonical_digest;
use crate::par::{self, Parallelism};

pub use mock::MockBackend;
pub use process::ProcessBackend;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("no training pairs supplied")]
    EmptyPairs,
    #[error("pipeline exhausted: {0} handles cannot be fine-tuned further")]
    PipelineExhausted(Stage),
    #[error("text pair {index}: {reason}")]
    InvalidPair { index: usize, reason: String },
    #[error("invalid fine-tuning config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint `{0}` cannot be resolved")]
    Unresolvable(String),
    #[error("training failed: {0}")]
    Training(String),
    #[error("plugin error: {0}")]
    Plugin(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    M0,
    M1,
    M2,
}

impl Stage {
    pub fn from_lineage_len(len: usize) -> Option<Self> {
        match len {
            0 => Some(Self::M0),
            1 => Some(Self::M1),
            2 => Some(Self::M2),
            _ => None,
        }
    }

    pub fn next(self) -> Option<Self> {
        match self {
            Self::M0 => Some(Self::M1),
            Self::M1 => Some(Self::M2),
            Self::M2 => None,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::M0 => "M0",
            Self::M1 => "M1",
            Self::M2 => "M2",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineageEntry {
    pub phase: String,
    pub config_digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelHandle {
    pub stage: Stage,
    pub backend_id: String,
    pub checkpoint_ref: String,
    pub lineage: Vec<LineageEntry>,
}

impl ModelHandle {
    pub fn pretrained(backend_id: impl Into<String>, checkpoint_ref: impl Into<String>) -> Self {
        Self {
            stage: Stage::M0,
            backend_id: backend_id.into(),
            checkpoint_ref: checkpoint_ref.into(),
            lineage: Vec::new(),
        }
    }

    /// Handle for the checkpoint produced by one more fine-tuning phase.
    pub fn advanced(
        &self,
        phase: &str,
        cfg: &FinetuneConfig,
        checkpoint_ref: impl Into<String>,
    ) -> Result<Self, BackendError> {
        let stage = self
            .stage
            .next()
            .ok_or(BackendError::PipelineExhausted(self.stage))?;
        let mut lineage = self.lineage.clone();
        lineage.push(LineageEntry {
            phase: phase.to_string(),
            config_digest: cfg.digest(),
        });
        Ok(Self {
            stage,
            backend_id: self.backend_id.clone(),
            checkpoint_ref: checkpoint_ref.into(),
            lineage,
        })
    }

    pub fn is_consistent(&self) -> bool {
        Stage::from_lineage_len(self.lineage.len()) == Some(self.stage)
    }
}

/// A supervised (source → target) example for either fine-tuning phase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextPair {
    pub source: String,
    pub target: String,
}

impl TextPair {
    pub fn new(source: impl Into<String>, target: impl Into<String>) -> Self {
        Self {
            source: source.into(),
            target: target.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub epochs: u32,
    pub learning_rate: f64,
    pub batch_size: u32,
    pub seed: u64,
    pub max_source_len: usize,
    pub max_target_len: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 2,
            learning_rate: 3e-4,
            batch_size: 8,
            seed: 0,
            max_source_len: 512,
            max_target_len: 256,
        }
    }
}

impl FinetuneConfig {
    pub fn digest(&self) -> String {
        canonical_digest(self)
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |what: &str| Err(BackendError::InvalidConfig(format!("{what} must be positive")));
        if self.epochs == 0 {
            return bad("epochs");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate");
        }
        if self.batch_size == 0 {
            return bad("batch_size");
        }
        if self.max_source_len == 0 {
            return bad("max_source_len");
        }
        if self.max_target_len == 0 {
            return bad("max_target_len");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "lowercase")]
pub enum Decoding {
    Greedy,
    Beam { width: u32 },
    Sample { temperature: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub decoding: Decoding,
    pub max_new_tokens: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            decoding: Decoding::Greedy,
            max_new_tokens: 256,
        }
    }
}

/// One entry of a backend's ordered call log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum BackendCall {
    Finetune {
        phase: String,
        from_stage: Stage,
        pairs: usize,
    },
    Generate {
        stage: Stage,
        source: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Finetuned {
    pub handle: ModelHandle,
    /// Mean training loss per epoch, in epoch order.
    pub epoch_losses: Vec<f64>,
}

/// Checks shared by every backend before training starts.
pub fn check_finetune_inputs(
    model: &ModelHandle,
    pairs: &[TextPair],
    cfg: &FinetuneConfig,
) -> Result<(), BackendError> {
    if model.stage == Stage::M2 {
        return Err(BackendError::PipelineExhausted(Stage::M2));
    }
    if pairs.is_empty() {
        return Err(BackendError::EmptyPairs);
    }
    cfg.validate()?;
    for (index, pair) in pairs.iter().enumerate() {
        if pair.source.trim().is_empty() || pair.target.trim().is_empty() {
            return Err(BackendError::InvalidPair {
                index,
                reason: "source and target must be nonempty".into(),
            });
        }
    }
    Ok(())
}

/// A text-to-text model that can be fine-tuned and decoded.
///
/// `finetune` takes `&mut self`, so training is exclusive per backend.
/// `generate` may be called concurrently only when `read_safe` is true.
pub trait Backend: Send + Sync {
    fn id(&self) -> &str;

    /// Handle to the untuned starting checkpoint.
    fn pretrained(&self) -> ModelHandle;

    fn finetune(
        &mut self,
        model: &ModelHandle,
        pairs: &[TextPair],
        cfg: &FinetuneConfig,
        phase: &str,
        out_dir: &Path,
    ) -> Result<Finetuned, BackendError>;

    fn generate(
        &self,
        model: &ModelHandle,
        source: &str,
        cfg: &GenConfig,
    ) -> Result<String, BackendError>;

    /// Outputs are returned in input order.
    fn generate_batch(
        &self,
        model: &ModelHandle,
        sources: &[String],
        cfg: &GenConfig,
        mode: Parallelism,
    ) -> Result<Vec<String>, BackendError> {
        let mode = if self.read_safe() {
            mode
        } else {
            Parallelism::Sequential
        };
        par::try_map(mode, sources, |s| self.generate(model, s, cfg))
    }

    fn read_safe(&self) -> bool {
        false
    }

    /// Whitespace-token count used for length limits.
    fn count_tokens(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }

    fn call_log(&self) -> Vec<BackendCall>;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lineage_tracks_stage() {
        let m0 = ModelHandle::pretrained("mock", "base");
        assert!(m0.is_consistent());
        let cfg = FinetuneConfig::default();
        let m1 = m0.advanced("phase1", &cfg, "c1").unwrap();
        let m2 = m1.advanced("phase2", &cfg, "c2").unwrap();
        assert_eq!((m1.stage, m2.stage), (Stage::M1, Stage::M2));
        assert!(m1.is_consistent() && m2.is_consistent());
        assert_eq!(m2.lineage[0].phase, "phase1");
        assert!(m0.lineage.is_empty());
        assert!(matches!(
            m2.advanced("phase3", &cfg, "c3"),
            Err(BackendError::PipelineExhausted(Stage::M2))
        ));
    }

    #[test]
    fn digest_is_deterministic_and_sensitive() {
        let a = FinetuneConfig::default();
        assert_eq!(a.digest(), a.clone().digest());
        let b = FinetuneConfig { epochs: 3, ..a.clone() };
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
    }

    #[test]
    fn config_validation() {
        assert!(FinetuneConfig::default().validate().is_ok());
        for bad in [
            FinetuneConfig { epochs: 0, ..Default::default() },
            FinetuneConfig { learning_rate: 0.0, ..Default::default() },
            FinetuneConfig { batch_size: 0, ..Default::default() },
            FinetuneConfig { max_target_len: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn call_log_wire_shape() {
        let call = BackendCall::Finetune {
            phase: "phase1".into(),
            from_stage: Stage::M0,
            pairs: 2,
        };
        assert_eq!(
            serde_json::to_string(&call).unwrap(),
            r#"{"op":"finetune","phase":"phase1","from_stage":"M0","pairs":2}"#
        );
    }
}
