use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use super::{
    check_finetune_inputs, Backend, BackendCall, BackendError, FinetuneConfig, Finetuned, GenConfig,
    ModelHandle, TextPair,
};
use crate::par::{self, Parallelism};

const PRETRAINED_REF: &str = "mock://pretrained";
const STATE_FILE: &str = "state.jsonl";

/// Deterministic stand-in for a real model.
///
/// Fine-tuning memorizes the supplied pairs on top of the parent checkpoint's
/// table; generation answers exact-source lookups and otherwise echoes the
/// first `max_new_tokens` tokens of the source. The reported loss for epoch
/// `e` is `1/e`.
#[derive(Debug, Default)]
pub struct MockBackend {
    pretrained: Arc<BTreeMap<String, String>>,
    states: RwLock<HashMap<String, Arc<BTreeMap<String, String>>>>,
    log: Mutex<Vec<BackendCall>>,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Answers the untuned checkpoint gives before any fine-tuning.
    pub fn with_pretrained(table: BTreeMap<String, String>) -> Self {
        Self {
            pretrained: Arc::new(table),
            ..Self::default()
        }
    }

    pub fn clear_log(&self) {
        self.log.lock().unwrap().clear();
    }

    fn resolve(&self, checkpoint_ref: &str) -> Result<Arc<BTreeMap<String, String>>, BackendError> {
        if checkpoint_ref == PRETRAINED_REF {
            return Ok(self.pretrained.clone());
        }
        if let Some(state) = self.states.read().unwrap().get(checkpoint_ref) {
            return Ok(state.clone());
        }
        let path = PathBuf::from(checkpoint_ref).join(STATE_FILE);
        let file = fs::File::open(&path)
            .map_err(|_| BackendError::Unresolvable(checkpoint_ref.to_string()))?;
        let mut table = BTreeMap::new();
        for line in BufReader::new(file).lines() {
            let pair: TextPair = serde_json::from_str(&line?)
                .map_err(|_| BackendError::Unresolvable(checkpoint_ref.to_string()))?;
            table.insert(pair.source, pair.target);
        }
        let table = Arc::new(table);
        self.states
            .write()
            .unwrap()
            .insert(checkpoint_ref.to_string(), table.clone());
        Ok(table)
    }

    fn answer(table: &BTreeMap<String, String>, source: &str, cfg: &GenConfig) -> String {
        let text = table.get(source).map_or(source, String::as_str);
        cap_tokens(text, cfg.max_new_tokens).to_string()
    }
}

/// Prefix of `text` holding at most `max_tokens` whitespace tokens, with the
/// original spacing between them.
fn cap_tokens(text: &str, max_tokens: usize) -> &str {
    let mut count = 0;
    let mut in_token = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if in_token && count == max_tokens {
                return &text[..i];
            }
            in_token = false;
        } else if !in_token {
            if count == max_tokens {
                return text[..i].trim_end();
            }
            in_token = true;
            count += 1;
        }
    }
    text
}

impl Backend for MockBackend {
    fn id(&self) -> &str {
        "mock"
    }

    fn pretrained(&self) -> ModelHandle {
        ModelHandle::pretrained(self.id(), PRETRAINED_REF)
    }

    fn finetune(
        &mut self,
        model: &ModelHandle,
        pairs: &[TextPair],
        cfg: &FinetuneConfig,
        phase: &str,
        out_dir: &Path,
    ) -> Result<Finetuned, BackendError> {
        check_finetune_inputs(model, pairs, cfg)?;
        for (index, pair) in pairs.iter().enumerate() {
            let (src, tgt) = (self.count_tokens(&pair.source), self.count_tokens(&pair.target));
            if src > cfg.max_source_len || tgt > cfg.max_target_len {
                return Err(BackendError::InvalidPair {
                    index,
                    reason: format!(
                        "{src}/{tgt} tokens exceed limits {}/{}",
                        cfg.max_source_len, cfg.max_target_len
                    ),
                });
            }
        }
        let parent = self.resolve(&model.checkpoint_ref)?;
        self.log.lock().unwrap().push(BackendCall::Finetune {
            phase: phase.to_string(),
            from_stage: model.stage,
            pairs: pairs.len(),
        });

        let mut table = (*parent).clone();
        for pair in pairs {
            table.insert(pair.source.clone(), pair.target.clone());
        }
        fs::create_dir_all(out_dir)?;
        let mut file = fs::File::create(out_dir.join(STATE_FILE))?;
        for (source, target) in &table {
            let line = serde_json::to_string(&TextPair::new(source.clone(), target.clone()))
                .expect("pairs serialize");
            writeln!(file, "{line}")?;
        }
        file.flush()?;

        let checkpoint_ref = out_dir.to_string_lossy().into_owned();
        let handle = model.advanced(phase, cfg, checkpoint_ref.clone())?;
        self.states
            .write()
            .unwrap()
            .insert(checkpoint_ref, Arc::new(table));
        let epoch_losses = (1..=cfg.epochs).map(|e| 1.0 / f64::from(e)).collect();
        Ok(Finetuned {
            handle,
            epoch_losses,
        })
    }

    fn generate(
        &self,
        model: &ModelHandle,
        source: &str,
        cfg: &GenConfig,
    ) -> Result<String, BackendError> {
        let table = self.resolve(&model.checkpoint_ref)?;
        self.log.lock().unwrap().push(BackendCall::Generate {
            stage: model.stage,
            source: source.to_string(),
        });
        Ok(Self::answer(&table, source, cfg))
    }

    /// Lookups fan out; the call log is appended afterwards in input order so
    /// it stays deterministic.
    fn generate_batch(
        &self,
        model: &ModelHandle,
        sources: &[String],
        cfg: &GenConfig,
        mode: Parallelism,
    ) -> Result<Vec<String>, BackendError> {
        let table = self.resolve(&model.checkpoint_ref)?;
        let outputs = par::map(mode, sources, |s| Self::answer(&table, s, cfg));
        self.log
            .lock()
            .unwrap()
            .extend(sources.iter().map(|s| BackendCall::Generate {
                stage: model.stage,
                source: s.clone(),
            }));
        Ok(outputs)
    }

    fn read_safe(&self) -> bool {
        true
    }

    fn call_log(&self) -> Vec<BackendCall> {
        self.log.lock().unwrap().clone()
    }
}
