//! Experiment commands: knowledge warm-up, single runs, the four-variant
//! ablation, the phase-1 epoch sweep, and standalone re-scoring.
//!
//! A run writes `runs/<run_id>/` with `config.snapshot`, `knowledge/`,
//! `rationales/`, `enhanced_inputs/`, `checkpoints/<stage>/`, `predictions/`,
//! `report.json` and `manifest.json`. Record files are line-delimited JSON
//! keyed by `instance_id` and are written atomically after the pipeline
//! succeeds, so a failed run never leaves prediction files behind.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendCall, BackendError, MockBackend, ModelHandle, ProcessBackend, Stage, TextPair};
use crate::config::{BackendKind, ConfigError, RunConfig};
use crate::corpus::{load_dataset, CorpusError, Instance, Split, StanceLabel};
use crate::digest::{canonical_digest, sha256_hex};
use crate::evaluation::{evaluate, EvalError, EvalReport};
use crate::pipeline::{run_variant, AblationVariant, Dataset, PipelineError, RunResult, Templates};
use crate::retrieval::{
    normalize_target, Clock, KnowledgeCache, KnowledgeDoc, KnowledgeStore, MockSearchClient,
    RetrievalError, SearchClient, SerperClient, WarmStats,
};

/// Environment variable holding the live search API key.
pub const SEARCH_KEY_ENV: &str = "STANCEKIT_SEARCH_KEY";

/// Published full-scale macro-F1 (x100) per variant, in table order. These
/// come from a 780M-parameter FLAN-T5 fine-tuned on all of VAST with live
/// web search and are not reproducible at desk scale; they are shown next to
/// ablation output for orientation only.
pub const REFERENCE_ABLATION_F1: [(AblationVariant, f64); 4] = [
    (AblationVariant::Baseline, 73.4),
    (AblationVariant::CoT, 73.1),
    (AblationVariant::Phase1Only, 74.2),
    (AblationVariant::LoT, 79.2),
];

/// Published full-scale trend for the phase-1 epoch sweep.
pub const REFERENCE_SWEEP_TREND: &str =
    "full-scale reference: macro-F1 peaks at about 2 phase-1 epochs and declines with more";

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{0}")]
    Usage(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunnerError + '_ {
    move |source| RunnerError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes via a sibling temp file and a rename.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RunnerError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let tmp = path.with_extension("partial");
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn jsonl<T: Serialize>(records: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("records serialize");
        out.push(b'\n');
    }
    out
}

fn pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("records serialize");
    out.push(b'\n');
    out
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, RunnerError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| RunnerError::Record {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Search client plus the clock used to stamp fetched knowledge. The mock
/// client uses a fixed clock so mock runs are byte-reproducible.
pub struct SearchSetup {
    pub client: Arc<dyn SearchClient>,
    pub clock: Clock,
}

pub fn mock_search(cfg: &RunConfig) -> Result<SearchSetup, RunnerError> {
    let client = match &cfg.search.fixtures {
        Some(path) => MockSearchClient::from_file(path)?,
        None => MockSearchClient::default(),
    };
    Ok(SearchSetup {
        client: Arc::new(client),
        clock: Arc::new(|| DateTime::<Utc>::UNIX_EPOCH),
    })
}

pub fn live_search(api_key: Option<String>) -> Result<SearchSetup, RunnerError> {
    let key = api_key
        .filter(|k| !k.trim().is_empty())
        .ok_or_else(|| RunnerError::Usage(format!("live search needs an API key in {SEARCH_KEY_ENV}")))?;
    Ok(SearchSetup {
        client: Arc::new(SerperClient::new(key)),
        clock: Arc::new(Utc::now),
    })
}

pub fn open_store(cfg: &RunConfig, search: &SearchSetup) -> Result<KnowledgeStore, RunnerError> {
    let cache = KnowledgeCache::open(&cfg.cache_path())?;
    Ok(KnowledgeStore::new(cache, cfg.search.clone()).with_clock(search.clock.clone()))
}

pub fn open_backend(cfg: &RunConfig) -> Result<Box<dyn Backend>, RunnerError> {
    match cfg.backend.kind {
        BackendKind::Mock => {
            let table = match &cfg.backend.pretrained_table {
                Some(path) => read_jsonl::<TextPair>(path)?
                    .into_iter()
                    .map(|p| (p.source, p.target))
                    .collect(),
                None => BTreeMap::new(),
            };
            Ok(Box::new(MockBackend::with_pretrained(table)))
        }
        BackendKind::Process => {
            let base = cfg.backend.base_checkpoint.clone().unwrap_or_default();
            Ok(Box::new(ProcessBackend::spawn(&cfg.backend.command, base)?))
        }
    }
}

pub fn load_splits(cfg: &RunConfig) -> Result<Dataset, RunnerError> {
    let load = |path: &Option<PathBuf>, split| -> Result<Vec<Instance>, RunnerError> {
        match path {
            Some(p) => Ok(load_dataset(p, split, &cfg.data.columns, &cfg.data.label_map)?),
            None => Ok(Vec::new()),
        }
    };
    Ok(Dataset {
        train: load(&cfg.data.train, Split::Train)?,
        dev: load(&cfg.data.dev, Split::Dev)?,
        test: load(&cfg.data.test, Split::Test)?,
    })
}

#[derive(Debug, Clone, Serialize)]
struct CommandManifest<'a, T: Serialize> {
    command: &'a str,
    config_digest: String,
    result: T,
}

/// Warms the knowledge cache for every unique target in the configured splits.
pub fn cmd_retrieve(
    cfg: &RunConfig,
    search: &SearchSetup,
    store: &KnowledgeStore,
) -> Result<WarmStats, RunnerError> {
    let data = load_splits(cfg)?;
    let targets: Vec<&str> = data
        .train
        .iter()
        .chain(&data.dev)
        .chain(&data.test)
        .map(|i| i.target.as_str())
        .collect();
    let stats = store.warm(&targets, search.client.as_ref(), cfg.parallelism())?;
    let dir = cfg.run_dir();
    write_atomic(&dir.join("config.snapshot"), cfg.snapshot().as_bytes())?;
    write_atomic(
        &dir.join("retrieve_manifest.json"),
        &pretty(&CommandManifest {
            command: "retrieve",
            config_digest: cfg.digest(),
            result: stats,
        }),
    )?;
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeRecord {
    pub instance_id: String,
    #[serde(flatten)]
    pub doc: KnowledgeDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldRecord {
    pub instance_id: String,
    pub label: StanceLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseManifest {
    pub stage: Stage,
    /// Relative to the run directory.
    pub checkpoint: String,
    pub lineage: Vec<crate::backend::LineageEntry>,
    pub config_digest: String,
    pub epoch_losses: Vec<f64>,
    pub pairs: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub root: u64,
    pub phase1: u64,
    pub phase2: u64,
    pub generation: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub rationales: usize,
    pub finetune_calls: usize,
    pub generate_calls: usize,
    pub invalid_predictions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub variant: AblationVariant,
    pub config_digest: String,
    pub seeds: Seeds,
    pub templates: Templates,
    pub backend_id: String,
    pub phase1: Option<PhaseManifest>,
    pub phase2: PhaseManifest,
    pub call_log_digest: String,
    pub counts: Counts,
    pub macro_f1: f64,
    /// SHA-256 of every record file, keyed by path relative to the run directory.
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub result: RunResult,
    pub report: EvalReport,
    pub manifest: RunManifest,
    /// Backend calls made by this run, in order.
    pub calls: Vec<BackendCall>,
}

const RUN_DATA: [&str; 7] = [
    "knowledge",
    "rationales",
    "enhanced_inputs",
    "checkpoints",
    "predictions",
    "report.json",
    "manifest.json",
];

fn clear_run_dir(dir: &Path) -> Result<(), RunnerError> {
    for name in RUN_DATA {
        let p = dir.join(name);
        if p.is_dir() {
            fs::remove_dir_all(&p).map_err(io_err(&p))?;
        } else if p.exists() {
            fs::remove_file(&p).map_err(io_err(&p))?;
        }
    }
    Ok(())
}

fn knowledge_for(
    instances: &[Instance],
    store: &KnowledgeStore,
    client: &dyn SearchClient,
    cfg: &RunConfig,
) -> Result<(HashMap<String, KnowledgeDoc>, Vec<KnowledgeRecord>), RunnerError> {
    let targets: Vec<&str> = instances.iter().map(|i| i.target.as_str()).collect();
    store.warm(&targets, client, cfg.parallelism())?;
    let mut by_key = HashMap::new();
    let mut records = Vec::with_capacity(instances.len());
    for inst in instances {
        let key = normalize_target(&inst.target)?;
        let doc = store
            .cache()
            .get(&key)
            .ok_or_else(|| PipelineError::MissingKnowledge(key.clone()))?;
        records.push(KnowledgeRecord {
            instance_id: inst.id.clone(),
            doc: doc.clone(),
        });
        by_key.insert(key, doc);
    }
    Ok((by_key, records))
}

fn relative(run_dir: &Path, checkpoint: &str) -> String {
    Path::new(checkpoint)
        .strip_prefix(run_dir)
        .map(|p| p.to_string_lossy().into_owned())
        .unwrap_or_else(|_| checkpoint.to_string())
}

fn phase_manifest(run_dir: &Path, p: &crate::pipeline::PhaseReport, cfg_digest: String) -> PhaseManifest {
    let ModelHandle {
        stage,
        checkpoint_ref,
        lineage,
        ..
    } = &p.handle;
    PhaseManifest {
        stage: *stage,
        checkpoint: relative(run_dir, checkpoint_ref),
        lineage: lineage.clone(),
        config_digest: cfg_digest,
        epoch_losses: p.epoch_losses.clone(),
        pairs: p.pairs,
        skipped: p.skipped,
    }
}

/// Runs the configured variant end to end, scores it and persists the run.
pub fn cmd_run(
    cfg: &RunConfig,
    backend: &mut dyn Backend,
    search: &SearchSetup,
    store: &KnowledgeStore,
) -> Result<RunOutcome, RunnerError> {
    cfg.validate()?;
    let data = load_splits(cfg)?;
    if data.train.is_empty() {
        return Err(RunnerError::Usage("data.train is missing or empty".into()));
    }
    let variant = cfg.pipeline.variant;
    let (knowledge, knowledge_records) = if variant.spec().do_phase1_finetune {
        knowledge_for(&data.train, store, search.client.as_ref(), cfg)?
    } else {
        (HashMap::new(), Vec::new())
    };

    let run_dir = cfg.run_dir();
    fs::create_dir_all(&run_dir).map_err(io_err(&run_dir))?;
    clear_run_dir(&run_dir)?;
    let settings = cfg.pipeline_settings();
    let log_start = backend.call_log().len();
    let m0 = backend.pretrained();
    let result = run_variant(
        variant,
        &data,
        backend,
        &m0,
        &knowledge,
        &settings,
        &run_dir.join("checkpoints"),
    )?;
    let calls: Vec<BackendCall> = backend.call_log().split_off(log_start);
    let golds: Vec<StanceLabel> = data.test.iter().map(|i| i.gold).collect();
    let report = evaluate(&result.scored(), &golds)?;

    let gold_records: Vec<GoldRecord> = data
        .test
        .iter()
        .map(|i| GoldRecord {
            instance_id: i.id.clone(),
            label: i.gold,
        })
        .collect();
    let enhanced: Vec<_> = result
        .enhanced_train
        .iter()
        .chain(&result.enhanced_dev)
        .chain(&result.enhanced_test)
        .cloned()
        .collect();
    let files: Vec<(&str, Vec<u8>)> = vec![
        ("knowledge/knowledge.jsonl", jsonl(&knowledge_records)),
        ("rationales/rationales.jsonl", jsonl(&result.rationales)),
        ("enhanced_inputs/enhanced_inputs.jsonl", jsonl(&enhanced)),
        ("predictions/golds.jsonl", jsonl(&gold_records)),
        ("predictions/predictions.jsonl", jsonl(&result.predictions)),
        ("report.json", pretty(&report)),
    ];

    let phase1 = result
        .phase1
        .as_ref()
        .map(|p| phase_manifest(&run_dir, p, settings.phase1.digest()));
    let phase2 = phase_manifest(&run_dir, &result.phase2, settings.phase2.digest());
    let finetune_calls = calls
        .iter()
        .filter(|c| matches!(c, BackendCall::Finetune { .. }))
        .count();
    let manifest = RunManifest {
        run_id: cfg.run_id.clone(),
        variant,
        config_digest: cfg.digest(),
        seeds: Seeds {
            root: cfg.seed,
            phase1: settings.phase1.seed,
            phase2: settings.phase2.seed,
            generation: cfg.phase_seed("generation"),
        },
        templates: settings.templates.clone(),
        backend_id: backend.id().to_string(),
        phase1,
        phase2,
        call_log_digest: canonical_digest(&calls),
        counts: Counts {
            train: data.train.len(),
            dev: data.dev.len(),
            test: data.test.len(),
            rationales: result.rationales.len(),
            finetune_calls,
            generate_calls: calls.len() - finetune_calls,
            invalid_predictions: report.invalid_count,
        },
        macro_f1: report.macro_f1,
        files: files
            .iter()
            .map(|(name, bytes)| (name.to_string(), sha256_hex(bytes)))
            .collect(),
    };

    write_atomic(&run_dir.join("config.snapshot"), cfg.snapshot().as_bytes())?;
    for (name, bytes) in &files {
        write_atomic(&run_dir.join(name), bytes)?;
    }
    for p in [&manifest.phase1, &Some(manifest.phase2.clone())].into_iter().flatten() {
        write_atomic(&run_dir.join(&p.checkpoint).join("manifest.json"), &pretty(p))?;
    }
    write_atomic(&run_dir.join("manifest.json"), &pretty(&manifest))?;
    log::info!(
        "{} ({variant}): macro-F1 {:.4} over {} test instances",
        cfg.run_id,
        report.macro_f1,
        report.n
    );
    Ok(RunOutcome {
        run_dir,
        result,
        report,
        manifest,
        calls,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub run_id: String,
    pub macro_f1: f64,
    pub invalid_predictions: usize,
    /// Published full-scale value (x100), for orientation only.
    pub reference_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn render_table(&self) -> String {
        let mut out = format!(
            "{:<12} {:>9} {:>8} {:>15}\n",
            "variant", "macro-F1", "invalid", "reference (x100)"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<12} {:>9.4} {:>8} {:>15.1}\n",
                r.variant.display_name(),
                r.macro_f1,
                r.invalid_predictions,
                r.reference_f1
            ));
        }
        out
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("variant\trun_id\tmacro_f1\tinvalid\treference_f1\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                r.variant.slug(),
                r.run_id,
                r.macro_f1,
                r.invalid_predictions,
                r.reference_f1
            ));
        }
        out
    }
}

/// Runs all four variants with the same data, seeds, templates and knowledge
/// cache. Child runs are `<run_id>-<variant>`.
pub fn cmd_ablation(
    cfg: &RunConfig,
    backend: &mut dyn Backend,
    search: &SearchSetup,
    store: &KnowledgeStore,
) -> Result<(AblationReport, Vec<RunOutcome>), RunnerError> {
    let mut rows = Vec::new();
    let mut outcomes = Vec::new();
    for (variant, reference_f1) in REFERENCE_ABLATION_F1 {
        let mut child = cfg.clone();
        child.run_id = format!("{}-{}", cfg.run_id, variant.slug());
        child.pipeline.variant = variant;
        let outcome = cmd_run(&child, backend, search, store)?;
        rows.push(AblationRow {
            variant,
            run_id: child.run_id,
            macro_f1: outcome.report.macro_f1,
            invalid_predictions: outcome.report.invalid_count,
            reference_f1,
        });
        outcomes.push(outcome);
    }
    let report = AblationReport { rows };
    let dir = cfg.run_dir();
    write_atomic(&dir.join("config.snapshot"), cfg.snapshot().as_bytes())?;
    write_atomic(&dir.join("ablation.tsv"), report.to_tsv().as_bytes())?;
    write_atomic(
        &dir.join("ablation_manifest.json"),
        &pretty(&CommandManifest {
            command: "ablation",
            config_digest: cfg.digest(),
            result: &report,
        }),
    )?;
    Ok((report, outcomes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub phase1_epochs: u32,
    pub macro_f1: f64,
    pub phase1_final_loss: f64,
    pub phase2_config_digest: String,
    pub run_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub entries: Vec<SweepEntry>,
}

impl SweepResult {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("phase1_epochs\tmacro_f1\tphase1_final_loss\n");
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\t{}\n", e.phase1_epochs, e.macro_f1, e.phase1_final_loss));
        }
        out
    }
}

/// Full LoT runs at each phase-1 epoch setting, everything else fixed.
/// Settings run one after another; child runs are `<run_id>-e<epochs>`.
pub fn cmd_epoch_sweep(
    cfg: &RunConfig,
    epochs: &[u32],
    backend: &mut dyn Backend,
    search: &SearchSetup,
    store: &KnowledgeStore,
) -> Result<SweepResult, RunnerError> {
    if epochs.is_empty() {
        return Err(RunnerError::Usage("epoch list is empty".into()));
    }
    if epochs[0] == 0 || epochs.windows(2).any(|w| w[0] >= w[1]) {
        return Err(RunnerError::Usage(
            "epoch settings must be positive and strictly increasing".into(),
        ));
    }
    let mut entries = Vec::with_capacity(epochs.len());
    for &e in epochs {
        let mut child = cfg.clone();
        child.run_id = format!("{}-e{e}", cfg.run_id);
        child.pipeline.variant = AblationVariant::LoT;
        child.phase1.epochs = e;
        let outcome = cmd_run(&child, backend, search, store)?;
        let phase1 = outcome
            .result
            .phase1
            .as_ref()
            .expect("LoT always runs phase 1");
        entries.push(SweepEntry {
            phase1_epochs: e,
            macro_f1: outcome.report.macro_f1,
            phase1_final_loss: phase1.epoch_losses.last().copied().unwrap_or(f64::NAN),
            phase2_config_digest: outcome.manifest.phase2.config_digest.clone(),
            run_id: child.run_id,
        });
    }
    let sweep = SweepResult { entries };
    let dir = cfg.run_dir();
    write_atomic(&dir.join("config.snapshot"), cfg.snapshot().as_bytes())?;
    write_atomic(&dir.join("sweep.tsv"), sweep.to_tsv().as_bytes())?;
    write_atomic(
        &dir.join("sweep_manifest.json"),
        &pretty(&CommandManifest {
            command: "epoch-sweep",
            config_digest: cfg.digest(),
            result: &sweep,
        }),
    )?;
    Ok(sweep)
}

#[derive(Deserialize)]
struct PredictionLine {
    instance_id: String,
    label: StanceLabel,
    #[serde(default)]
    was_invalid: bool,
}

/// Re-scores a predictions file against a gold file. Both are JSONL keyed by
/// `instance_id`; every prediction needs a gold label and vice versa.
pub fn cmd_evaluate(predictions_path: &Path, golds_path: &Path) -> Result<EvalReport, RunnerError> {
    let preds: Vec<PredictionLine> = read_jsonl(predictions_path)?;
    let golds: Vec<GoldRecord> = read_jsonl(golds_path)?;
    let gold_of: HashMap<&str, StanceLabel> =
        golds.iter().map(|g| (g.instance_id.as_str(), g.label)).collect();
    if gold_of.len() != golds.len() {
        return Err(RunnerError::Usage(format!("{}: duplicate instance ids", golds_path.display())));
    }
    let mut scored = Vec::with_capacity(preds.len());
    let mut gold_labels = Vec::with_capacity(preds.len());
    for p in &preds {
        let gold = gold_of.get(p.instance_id.as_str()).ok_or_else(|| {
            RunnerError::Usage(format!("no gold label for instance `{}`", p.instance_id))
        })?;
        scored.push((p.label, p.was_invalid));
        gold_labels.push(*gold);
    }
    if preds.len() != golds.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        }
        .into());
    }
    Ok(evaluate(&scored, &gold_labels)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_leaves_no_partial() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b.jsonl");
        write_atomic(&p, b"x\n").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"x\n");
        assert!(!p.with_extension("partial").exists());
    }

    #[test]
    fn evaluate_files() {
        let dir = tempfile::tempdir().unwrap();
        let preds = dir.path().join("p.jsonl");
        let golds = dir.path().join("g.jsonl");
        fs::write(
            &preds,
            "{\"instance_id\":\"a\",\"label\":\"positive\",\"was_invalid\":false}\n\
             {\"instance_id\":\"b\",\"label\":\"neutral\",\"was_invalid\":true}\n",
        )
        .unwrap();
        fs::write(
            &golds,
            "{\"instance_id\":\"b\",\"label\":\"negative\"}\n{\"instance_id\":\"a\",\"label\":\"positive\"}\n",
        )
        .unwrap();
        let r = cmd_evaluate(&preds, &golds).unwrap();
        assert_eq!(r.n, 2);
        assert_eq!(r.invalid_count, 1);
        assert!((r.macro_f1 - 1.0 / 3.0).abs() < 1e-12);

        fs::write(&golds, "{\"instance_id\":\"a\",\"label\":\"positive\"}\n").unwrap();
        assert!(cmd_evaluate(&preds, &golds).unwrap_err().to_string().contains("`b`"));

        fs::write(&golds, "{\"instance_id\":\"a\",\"label\":\"maybe\"}\n").unwrap();
        assert!(matches!(
            cmd_evaluate(&preds, &golds).unwrap_err(),
            RunnerError::Record { line: 1, .. }
        ));
    }

    #[test]
    fn sweep_rejects_bad_grids() {
        let cfg = RunConfig::default();
        let search = mock_search(&cfg).unwrap();
        let store = KnowledgeStore::new(KnowledgeCache::in_memory(), cfg.search.clone());
        let mut backend = MockBackend::new();
        for grid in [&[][..], &[2, 1][..], &[0, 1][..], &[1, 1][..]] {
            assert!(matches!(
                cmd_epoch_sweep(&cfg, grid, &mut backend, &search, &store),
                Err(RunnerError::Usage(_))
            ));
        }
    }

    #[test]
    fn reference_table_order_matches_variants() {
        let order: Vec<_> = REFERENCE_ABLATION_F1.iter().map(|(v, _)| *v).collect();
        assert_eq!(order, AblationVariant::ALL);
    }

    #[test]
    fn live_search_needs_key() {
        assert!(matches!(live_search(None), Err(RunnerError::Usage(_))));
        assert!(live_search(Some("k".into())).is_ok());
    }
}
