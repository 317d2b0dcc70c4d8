//! Two-phase progressive fine-tuning.
//!
//! Phase 1 teaches the pretrained model (M0) to produce the retrieved
//! background knowledge for a (document, target) pair, giving M1. M1 then
//! writes a rationale for every instance, the rationale is fused into the
//! classification input, and phase 2 fine-tunes M1 on those enhanced inputs
//! to give the predictor M2.
//!
//! [`AblationVariant`] switches off pieces of this: Baseline skips phase 1
//! and rationales, CoT takes rationales from M0, Phase1-Only keeps phase 1
//! but leaves rationales out of the inputs.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, FinetuneConfig, Finetuned, GenConfig, ModelHandle, Stage, TextPair};
use crate::corpus::{decode_label, encode_label, Decoded, Instance, StanceLabel};
use crate::par::Parallelism;
use crate::retrieval::{normalize_target, KnowledgeDoc};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("no retrieved knowledge for target `{0}`")]
    MissingKnowledge(String),
    #[error("no gold label for instance `{0}`")]
    MissingGold(String),
    #[error("instance `{id}`: {field} is empty")]
    EmptyField { id: String, field: &'static str },
    #[error("rationales must come from M0 or M1, got {0}")]
    WrongStage(Stage),
    #[error("no test instances to predict")]
    NoTestInstances,
    #[error("unknown variant `{0}` (expected baseline, cot, phase1-only or lot)")]
    UnknownVariant(String),
}

/// Prompt templates. `{document}`, `{target}` and `{knowledge}` are
/// substituted in a single pass, so placeholder-like text inside a document
/// is left alone.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Templates {
    pub elicitation: String,
    pub fusion_with_knowledge: String,
    pub fusion_without_knowledge: String,
}

impl Default for Templates {
    fn default() -> Self {
        Self {
            elicitation: "Explain the background relevant to the stance of the document on the target. target: {target} document: {document}".into(),
            fusion_with_knowledge: "stance target: {target} document: {document} knowledge: {knowledge}".into(),
            fusion_without_knowledge: "stance target: {target} document: {document}".into(),
        }
    }
}

/// Single-pass `{name}` substitution. Unknown placeholders are kept verbatim.
pub fn fill_template(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + values.iter().map(|(_, v)| v.len()).sum::<usize>());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                let name = &after[..close];
                match values.iter().find(|(k, _)| *k == name) {
                    Some((_, v)) => out.push_str(v),
                    None => out.push_str(&rest[open..open + close + 2]),
                }
                rest = &after[close + 1..];
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KnowledgeSource {
    Phase1Model,
    PretrainedModel,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rationale {
    pub instance_id: String,
    pub text: String,
    pub generator_stage: Stage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnhancedInput {
    pub instance_id: String,
    pub text: String,
    pub knowledge_used: bool,
    pub knowledge_source: KnowledgeSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AblationVariant {
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "cot")]
    CoT,
    #[serde(rename = "phase1-only")]
    Phase1Only,
    #[serde(rename = "lot")]
    LoT,
}

/// What a variant does: whether phase 1 runs, which stage writes rationales,
/// and whether rationales enter the classification input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VariantSpec {
    pub do_phase1_finetune: bool,
    pub rationale_generator: Option<Stage>,
    pub include_knowledge_in_input: bool,
}

impl VariantSpec {
    /// Rationales are only generated when they are going to be used.
    pub fn generates_rationales(&self) -> bool {
        self.include_knowledge_in_input && self.rationale_generator.is_some()
    }
}

impl AblationVariant {
    /// Comparison-table order.
    pub const ALL: [AblationVariant; 4] = [Self::Baseline, Self::CoT, Self::Phase1Only, Self::LoT];

    pub fn spec(self) -> VariantSpec {
        let (do_phase1_finetune, rationale_generator, include_knowledge_in_input) = match self {
            Self::Baseline => (false, None, false),
            Self::CoT => (false, Some(Stage::M0), true),
            Self::Phase1Only => (true, Some(Stage::M1), false),
            Self::LoT => (true, Some(Stage::M1), true),
        };
        VariantSpec {
            do_phase1_finetune,
            rationale_generator,
            include_knowledge_in_input,
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::CoT => "cot",
            Self::Phase1Only => "phase1-only",
            Self::LoT => "lot",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Self::Baseline => "Baseline",
            Self::CoT => "CoT",
            Self::Phase1Only => "Phase1-Only",
            Self::LoT => "LoT",
        }
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl FromStr for AblationVariant {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().replace('_', "-").as_str() {
            "baseline" => Ok(Self::Baseline),
            "cot" => Ok(Self::CoT),
            "phase1-only" | "phase1only" => Ok(Self::Phase1Only),
            "lot" => Ok(Self::LoT),
            other => Err(PipelineError::UnknownVariant(other.to_string())),
        }
    }
}

pub fn elicitation_source(templates: &Templates, inst: &Instance) -> String {
    fill_template(
        &templates.elicitation,
        &[("target", &inst.target), ("document", &inst.document)],
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phase1Pairs {
    pub pairs: Vec<TextPair>,
    /// Instances dropped because their target has no retrieved knowledge.
    pub skipped: usize,
}

/// One pair per instance: elicitation prompt over (document, target) to the
/// target's retrieved knowledge. Instances whose knowledge is an empty-result
/// marker are skipped.
pub fn build_phase1_pairs(
    instances: &[Instance],
    knowledge: &HashMap<String, KnowledgeDoc>,
    templates: &Templates,
) -> Result<Phase1Pairs, PipelineError> {
    let mut pairs = Vec::with_capacity(instances.len());
    let mut skipped = 0;
    for inst in instances {
        let key = normalize_target(&inst.target).map_err(|_| PipelineError::EmptyField {
            id: inst.id.clone(),
            field: "target",
        })?;
        let doc = knowledge
            .get(&key)
            .ok_or_else(|| PipelineError::MissingKnowledge(key.clone()))?;
        if doc.is_empty_marker() {
            skipped += 1;
            continue;
        }
        pairs.push(TextPair::new(elicitation_source(templates, inst), doc.text.clone()));
    }
    Ok(Phase1Pairs { pairs, skipped })
}

pub fn run_phase1(
    backend: &mut dyn Backend,
    m0: &ModelHandle,
    pairs: &[TextPair],
    cfg: &FinetuneConfig,
    out_dir: &Path,
) -> Result<Finetuned, PipelineError> {
    Ok(backend.finetune(m0, pairs, cfg, "phase1", out_dir)?)
}

pub fn run_phase2(
    backend: &mut dyn Backend,
    start: &ModelHandle,
    pairs: &[TextPair],
    cfg: &FinetuneConfig,
    out_dir: &Path,
) -> Result<Finetuned, PipelineError> {
    Ok(backend.finetune(start, pairs, cfg, "phase2", out_dir)?)
}

fn check_generator(model: &ModelHandle) -> Result<(), PipelineError> {
    match model.stage {
        Stage::M0 | Stage::M1 => Ok(()),
        other => Err(PipelineError::WrongStage(other)),
    }
}

pub fn generate_rationale(
    backend: &dyn Backend,
    model: &ModelHandle,
    inst: &Instance,
    gcfg: &GenConfig,
    templates: &Templates,
) -> Result<Rationale, PipelineError> {
    check_generator(model)?;
    let text = backend.generate(model, &elicitation_source(templates, inst), gcfg)?;
    Ok(Rationale {
        instance_id: inst.id.clone(),
        text,
        generator_stage: model.stage,
    })
}

/// Batched [`generate_rationale`]; output order follows `instances`.
pub fn generate_rationales(
    backend: &dyn Backend,
    model: &ModelHandle,
    instances: &[&Instance],
    gcfg: &GenConfig,
    templates: &Templates,
    mode: Parallelism,
) -> Result<Vec<Rationale>, PipelineError> {
    check_generator(model)?;
    let sources: Vec<String> = instances
        .iter()
        .map(|inst| elicitation_source(templates, inst))
        .collect();
    let texts = backend.generate_batch(model, &sources, gcfg, mode)?;
    Ok(instances
        .iter()
        .zip(texts)
        .map(|(inst, text)| Rationale {
            instance_id: inst.id.clone(),
            text,
            generator_stage: model.stage,
        })
        .collect())
}

/// Fuses document, optional rationale and target. When `max_chars` is set and
/// the fused text would exceed it, characters are dropped from the end of the
/// rationale only; document and target are never cut.
pub fn integrate_inputs(
    instance_id: &str,
    document: &str,
    rationale: Option<&Rationale>,
    target: &str,
    templates: &Templates,
    max_chars: Option<usize>,
) -> Result<EnhancedInput, PipelineError> {
    let empty = |field| PipelineError::EmptyField {
        id: instance_id.to_string(),
        field,
    };
    if document.trim().is_empty() {
        return Err(empty("document"));
    }
    if target.trim().is_empty() {
        return Err(empty("target"));
    }
    let Some(rationale) = rationale else {
        return Ok(EnhancedInput {
            instance_id: instance_id.to_string(),
            text: fill_template(
                &templates.fusion_without_knowledge,
                &[("target", target), ("document", document)],
            ),
            knowledge_used: false,
            knowledge_source: KnowledgeSource::None,
        });
    };
    let fuse = |knowledge: &str| {
        fill_template(
            &templates.fusion_with_knowledge,
            &[("target", target), ("document", document), ("knowledge", knowledge)],
        )
    };
    let mut knowledge = rationale.text.as_str();
    if let Some(limit) = max_chars {
        let fixed = fuse("").chars().count();
        let room = limit.saturating_sub(fixed);
        if knowledge.chars().count() > room {
            let end = knowledge.char_indices().nth(room).map_or(knowledge.len(), |(i, _)| i);
            knowledge = &knowledge[..end];
        }
    }
    let knowledge_source = match rationale.generator_stage {
        Stage::M0 => KnowledgeSource::PretrainedModel,
        _ => KnowledgeSource::Phase1Model,
    };
    Ok(EnhancedInput {
        instance_id: instance_id.to_string(),
        text: fuse(knowledge),
        knowledge_used: true,
        knowledge_source,
    })
}

/// One pair per enhanced input, in order: fused text to the gold verbalizer.
pub fn build_phase2_pairs(
    enhanced: &[EnhancedInput],
    golds: &HashMap<String, StanceLabel>,
) -> Result<Vec<TextPair>, PipelineError> {
    enhanced
        .iter()
        .map(|e| {
            let gold = golds
                .get(&e.instance_id)
                .ok_or_else(|| PipelineError::MissingGold(e.instance_id.clone()))?;
            Ok(TextPair::new(e.text.clone(), encode_label(*gold)))
        })
        .collect()
}

/// Decodes a generation into a label; undecodable text becomes Neutral and
/// is flagged.
pub fn label_from_generation(text: &str) -> (StanceLabel, bool) {
    match decode_label(text) {
        Decoded::Label(label) => (label, false),
        Decoded::Invalid => (StanceLabel::Neutral, true),
    }
}

pub fn predict(
    backend: &dyn Backend,
    model: &ModelHandle,
    enhanced: &EnhancedInput,
    gcfg: &GenConfig,
) -> Result<(StanceLabel, bool), PipelineError> {
    let text = backend.generate(model, &enhanced.text, gcfg)?;
    Ok(label_from_generation(&text))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub instance_id: String,
    pub label: StanceLabel,
    pub was_invalid: bool,
    pub raw: String,
}

/// The splits a run works on.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub train: Vec<Instance>,
    pub dev: Vec<Instance>,
    pub test: Vec<Instance>,
}

#[derive(Debug, Clone, Default)]
pub struct PipelineSettings {
    pub phase1: FinetuneConfig,
    pub phase2: FinetuneConfig,
    pub generation: GenConfig,
    pub templates: Templates,
    pub max_input_chars: Option<usize>,
    /// Also produce rationales and enhanced inputs for the dev split.
    pub rationales_for_dev: bool,
    pub parallelism: Parallelism,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub handle: ModelHandle,
    pub epoch_losses: Vec<f64>,
    pub pairs: usize,
    #[serde(default)]
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub variant: AblationVariant,
    pub phase1: Option<PhaseReport>,
    pub phase2: PhaseReport,
    pub rationales: Vec<Rationale>,
    pub enhanced_train: Vec<EnhancedInput>,
    pub enhanced_dev: Vec<EnhancedInput>,
    pub enhanced_test: Vec<EnhancedInput>,
    /// One per test instance, in test order.
    pub predictions: Vec<Prediction>,
}

impl RunResult {
    pub fn scored(&self) -> Vec<(StanceLabel, bool)> {
        self.predictions.iter().map(|p| (p.label, p.was_invalid)).collect()
    }
}

/// Runs one variant end to end. Checkpoints land in
/// `checkpoint_root/<stage>/`.
pub fn run_variant(
    variant: AblationVariant,
    dataset: &Dataset,
    backend: &mut dyn Backend,
    m0: &ModelHandle,
    knowledge: &HashMap<String, KnowledgeDoc>,
    settings: &PipelineSettings,
    checkpoint_root: &Path,
) -> Result<RunResult, PipelineError> {
    if dataset.test.is_empty() {
        return Err(PipelineError::NoTestInstances);
    }
    let spec = variant.spec();
    let stage_dir = |stage: Stage| checkpoint_root.join(stage.to_string());

    let phase1 = if spec.do_phase1_finetune {
        let built = build_phase1_pairs(&dataset.train, knowledge, &settings.templates)?;
        log::info!(
            "{variant}: phase 1 on {} pairs ({} skipped without knowledge)",
            built.pairs.len(),
            built.skipped
        );
        let tuned = run_phase1(backend, m0, &built.pairs, &settings.phase1, &stage_dir(Stage::M1))?;
        Some(PhaseReport {
            handle: tuned.handle,
            epoch_losses: tuned.epoch_losses,
            pairs: built.pairs.len(),
            skipped: built.skipped,
        })
    } else {
        None
    };
    let start = phase1.as_ref().map_or(m0, |p| &p.handle);

    let dev_rationales = settings.rationales_for_dev;
    let mut rationale_of: HashMap<String, Rationale> = HashMap::new();
    let mut rationales = Vec::new();
    if spec.generates_rationales() {
        let generator = match spec.rationale_generator {
            Some(Stage::M0) => m0,
            _ => start,
        };
        let mut targets: Vec<&Instance> = dataset.train.iter().chain(&dataset.test).collect();
        if dev_rationales {
            targets.extend(&dataset.dev);
        }
        rationales = generate_rationales(
            &*backend,
            generator,
            &targets,
            &settings.generation,
            &settings.templates,
            settings.parallelism,
        )?;
        rationale_of = rationales
            .iter()
            .map(|r| (r.instance_id.clone(), r.clone()))
            .collect();
    }

    let enhance = |instances: &[Instance]| -> Result<Vec<EnhancedInput>, PipelineError> {
        instances
            .iter()
            .map(|inst| {
                integrate_inputs(
                    &inst.id,
                    &inst.document,
                    rationale_of.get(&inst.id),
                    &inst.target,
                    &settings.templates,
                    settings.max_input_chars,
                )
            })
            .collect()
    };
    let enhanced_train = enhance(&dataset.train)?;
    let enhanced_test = enhance(&dataset.test)?;
    let enhanced_dev = if dev_rationales {
        enhance(&dataset.dev)?
    } else {
        Vec::new()
    };

    let golds: HashMap<String, StanceLabel> =
        dataset.train.iter().map(|i| (i.id.clone(), i.gold)).collect();
    let pairs = build_phase2_pairs(&enhanced_train, &golds)?;
    let predictor_stage = start.stage.next().ok_or(BackendError::PipelineExhausted(start.stage))?;
    let tuned = run_phase2(backend, start, &pairs, &settings.phase2, &stage_dir(predictor_stage))?;
    let phase2 = PhaseReport {
        handle: tuned.handle,
        epoch_losses: tuned.epoch_losses,
        pairs: pairs.len(),
        skipped: 0,
    };

    let sources: Vec<String> = enhanced_test.iter().map(|e| e.text.clone()).collect();
    let outputs = backend.generate_batch(
        &phase2.handle,
        &sources,
        &settings.generation,
        settings.parallelism,
    )?;
    let predictions = enhanced_test
        .iter()
        .zip(outputs)
        .map(|(e, raw)| {
            let (label, was_invalid) = label_from_generation(&raw);
            Prediction {
                instance_id: e.instance_id.clone(),
                label,
                was_invalid,
                raw,
            }
        })
        .collect();

    Ok(RunResult {
        variant,
        phase1,
        phase2,
        rationales,
        enhanced_train,
        enhanced_dev,
        enhanced_test,
        predictions,
    })
}
