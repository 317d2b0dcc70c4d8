//! Run configuration.
//!
//! The file format is flat `section.key = value` lines, which is a subset of
//! TOML. [`RunConfig::snapshot`] writes every effective setting back in that
//! form with keys sorted, and the config digest is the SHA-256 of that text.
//!
//! ```text
//! run_id = "toy"
//! seed = 13
//! data.train = "data/train.csv"
//! data.test = "data/test.csv"
//! phase1.epochs = 2
//! search.top_k = 5
//! pipeline.variant = "lot"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Decoding, FinetuneConfig, GenConfig};
use crate::corpus::{ColumnMap, LabelMap};
use crate::digest::{derive_seed, sha256_hex};
use crate::par::Parallelism;
use crate::pipeline::{AblationVariant, PipelineSettings, Templates};
use crate::retrieval::RetrievalConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    pub columns: ColumnMap,
    pub label_map: LabelMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Process,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Plugin program and arguments for the process backend.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub command: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_checkpoint: Option<String>,
    /// JSONL of {source, target} answers the mock's untuned checkpoint knows.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pretrained_table: Option<PathBuf>,
}

/// Per-phase training knobs; the seed is derived from the root seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseSettings {
    pub epochs: u32,
    pub learning_rate: f64,
    pub batch_size: u32,
    pub max_source_len: usize,
    pub max_target_len: usize,
}

impl Default for PhaseSettings {
    fn default() -> Self {
        let d = FinetuneConfig::default();
        Self {
            epochs: d.epochs,
            learning_rate: d.learning_rate,
            batch_size: d.batch_size,
            max_source_len: 1024,
            max_target_len: d.max_target_len,
        }
    }
}

impl PhaseSettings {
    pub fn finetune_config(&self, seed: u64) -> FinetuneConfig {
        FinetuneConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            seed,
            max_source_len: self.max_source_len,
            max_target_len: self.max_target_len,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodingKind {
    #[default]
    Greedy,
    Beam,
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationSettings {
    pub decoding: DecodingKind,
    pub beam_width: u32,
    pub temperature: f64,
    pub max_new_tokens: usize,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        Self {
            decoding: DecodingKind::Greedy,
            beam_width: 4,
            temperature: 1.0,
            max_new_tokens: GenConfig::default().max_new_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineOptions {
    pub variant: AblationVariant,
    pub rationales_for_dev: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_input_chars: Option<usize>,
    pub parallel: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            variant: AblationVariant::LoT,
            rationales_for_dev: false,
            max_input_chars: Some(6000),
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run_id: String,
    pub runs_root: PathBuf,
    pub seed: u64,
    pub data: DataConfig,
    pub backend: BackendConfig,
    pub phase1: PhaseSettings,
    pub phase2: PhaseSettings,
    pub generation: GenerationSettings,
    pub search: RetrievalConfig,
    pub templates: Templates,
    pub pipeline: PipelineOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run_id: "run".into(),
            runs_root: PathBuf::from("runs"),
            seed: 42,
            data: DataConfig::default(),
            backend: BackendConfig::default(),
            phase1: PhaseSettings::default(),
            phase2: PhaseSettings {
                epochs: 3,
                ..PhaseSettings::default()
            },
            generation: GenerationSettings::default(),
            search: RetrievalConfig::default(),
            templates: Templates::default(),
            pipeline: PipelineOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Relative data, cache and fixture paths resolve against the config
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::parse(&text)?;
        if let Some(base) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut self.data.train, &mut self.data.dev, &mut self.data.test]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        for p in [
            &mut self.search.cache,
            &mut self.search.fixtures,
            &mut self.backend.pretrained_table,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.run_id.trim().is_empty()
            || self.run_id.contains(['/', '\\'])
            || self.run_id.starts_with('.')
        {
            return invalid("run_id must be a plain, nonempty directory name");
        }
        if self.search.top_k == 0 {
            return invalid("search.top_k must be positive");
        }
        if self.search.max_knowledge_len == 0 {
            return invalid("search.max_knowledge_len must be positive");
        }
        if self.generation.max_new_tokens == 0 {
            return invalid("generation.max_new_tokens must be positive");
        }
        for (name, phase) in [("phase1", &self.phase1), ("phase2", &self.phase2)] {
            phase
                .finetune_config(0)
                .validate()
                .map_err(|e| ConfigError::Invalid(format!("{name}: {e}")))?;
        }
        if self.backend.kind == BackendKind::Process && self.backend.command.is_empty() {
            return invalid("backend.command is required for the process backend");
        }
        Ok(())
    }

    pub fn phase_seed(&self, phase: &str) -> u64 {
        derive_seed(self.seed, phase)
    }

    pub fn phase1_config(&self) -> FinetuneConfig {
        self.phase1.finetune_config(self.phase_seed("phase1"))
    }

    pub fn phase2_config(&self) -> FinetuneConfig {
        self.phase2.finetune_config(self.phase_seed("phase2"))
    }

    pub fn gen_config(&self) -> GenConfig {
        let g = &self.generation;
        let decoding = match g.decoding {
            DecodingKind::Greedy => Decoding::Greedy,
            DecodingKind::Beam => Decoding::Beam { width: g.beam_width },
            DecodingKind::Sample => Decoding::Sample {
                temperature: g.temperature,
                seed: self.phase_seed("generation"),
            },
        };
        GenConfig {
            decoding,
            max_new_tokens: g.max_new_tokens,
        }
    }

    pub fn parallelism(&self) -> Parallelism {
        Parallelism::from_flag(self.pipeline.parallel)
    }

    pub fn pipeline_settings(&self) -> PipelineSettings {
        PipelineSettings {
            phase1: self.phase1_config(),
            phase2: self.phase2_config(),
            generation: self.gen_config(),
            templates: self.templates.clone(),
            max_input_chars: self.pipeline.max_input_chars,
            rationales_for_dev: self.pipeline.rationales_for_dev,
            parallelism: self.parallelism(),
        }
    }

    pub fn cache_path(&self) -> PathBuf {
        self.search
            .cache
            .clone()
            .unwrap_or_else(|| self.runs_root.join("knowledge_cache.jsonl"))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.runs_root.join(&self.run_id)
    }

    /// Every effective setting as sorted `dotted.key = value` lines.
    pub fn snapshot(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let mut lines = Vec::new();
        flatten(&value, &mut Vec::new(), &mut lines);
        lines.sort();
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }

    pub fn digest(&self) -> String {
        sha256_hex(self.snapshot().as_bytes())
    }
}

fn toml_key(segment: &str) -> String {
    let bare = !segment.is_empty()
        && segment
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
    if bare {
        segment.to_string()
    } else {
        serde_json::Value::String(segment.to_string()).to_string()
    }
}

/// JSON scalars and arrays of scalars are also valid TOML inline values,
/// and JSON string escapes keep every value on one line.
fn to_toml(value: &serde_json::Value) -> Option<String> {
    use serde_json::Value as J;
    match value {
        J::Null | J::Object(_) => None,
        J::Array(items) => Some(format!(
            "[{}]",
            items.iter().filter_map(to_toml).collect::<Vec<_>>().join(", ")
        )),
        leaf => Some(leaf.to_string()),
    }
}

fn flatten(value: &serde_json::Value, path: &mut Vec<String>, out: &mut Vec<String>) {
    match value {
        serde_json::Value::Object(map) => {
            for (k, v) in map {
                path.push(toml_key(k));
                flatten(v, path, out);
                path.pop();
            }
        }
        leaf => {
            if let Some(v) = to_toml(leaf) {
                out.push(format!("{} = {v}", path.join(".")));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::StanceLabel;

    #[test]
    fn flat_dotted_keys_parse() {
        let cfg = RunConfig::parse(
            r#"
run_id = "toy"
seed = 7
data.train = "train.csv"
data.label_map.pro = "positive"
phase1.epochs = 4
phase2.learning_rate = 1e-4
search.top_k = 3
search.query_suffix = "background"
pipeline.variant = "phase1-only"
generation.decoding = "beam"
"#,
        )
        .unwrap();
        assert_eq!(cfg.run_id, "toy");
        assert_eq!(cfg.phase1.epochs, 4);
        assert_eq!(cfg.phase2.learning_rate, 1e-4);
        assert_eq!(cfg.search.top_k, 3);
        assert_eq!(cfg.pipeline.variant, AblationVariant::Phase1Only);
        assert_eq!(cfg.data.label_map.get("pro"), Some(StanceLabel::Positive));
        assert_eq!(cfg.gen_config().decoding, Decoding::Beam { width: 4 });
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::parse("search.topk = 3\n").unwrap_err();
        assert!(err.to_string().contains("topk"));
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::parse("phase1.epochs = 0\n").is_err());
        assert!(RunConfig::parse("run_id = \"../x\"\n").is_err());
        assert!(RunConfig::parse("backend.kind = \"process\"\n").is_err());
    }

    #[test]
    fn snapshot_round_trips_and_is_flat() {
        let mut cfg = RunConfig::default();
        cfg.data.train = Some("a b/train.csv".into());
        cfg.backend.command = vec!["python3".into(), "plugin.py".into()];
        cfg.search.rate_per_sec = 2.5;
        cfg.templates.elicitation = "say \"{target}\"\n{document}".into();
        let snap = cfg.snapshot();
        for line in snap.lines() {
            assert!(line.contains(" = "), "not flat: {line}");
            assert!(!line.starts_with('['));
        }
        let back = RunConfig::parse(&snap).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.snapshot(), snap);
        assert_eq!(back.digest(), cfg.digest());
    }

    #[test]
    fn phase_seeds_derive_from_root() {
        let a = RunConfig::default();
        let b = RunConfig {
            seed: 43,
            ..RunConfig::default()
        };
        assert_ne!(a.phase1_config().seed, a.phase2_config().seed);
        assert_ne!(a.phase1_config().seed, b.phase1_config().seed);
        assert_eq!(a.phase1_config(), RunConfig::default().phase1_config());
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "data.train = \"t.csv\"\nsearch.fixtures = \"/abs/f.jsonl\"\n").unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.data.train.unwrap(), dir.path().join("t.csv"));
        assert_eq!(cfg.search.fixtures.unwrap(), PathBuf::from("/abs/f.jsonl"));
    }
}
