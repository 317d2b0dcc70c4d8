//! Target-oriented stance detection with knowledge-infused, two-phase
//! fine-tuning.
//!
//! - [`corpus`]: VAST-style CSV loading and label verbalizers
//! - [`retrieval`]: per-target web knowledge with a persistent cache
//! - [`backend`]: text-to-text model interface, a deterministic mock, and a
//!   process plugin for real models
//! - [`pipeline`]: phase 1, rationale generation, input fusion, phase 2,
//!   prediction, and the four ablation variants
//! - [`evaluation`]: per-class and macro F1
//! - [`runner`] and [`config`]: experiment commands and run persistence

pub mod backend;
pub mod config;
pub mod corpus;
pub mod digest;
pub mod evaluation;
pub mod par;
pub mod pipeline;
pub mod retrieval;
pub mod runner;

pub use backend::{Backend, MockBackend, ModelHandle, Stage};
pub use config::RunConfig;
pub use corpus::{Instance, StanceLabel};
pub use evaluation::{evaluate, EvalReport};
pub use par::Parallelism;
pub use pipeline::{AblationVariant, RunResult};
