//! Grounding instruction synthesis.
//!
//! Direct instructions name the element (textual templates, general
//! templates, or model-written descriptions and captions), functional ones
//! state what the element is for (model-written, buttons and menus only), and
//! spatial ones locate it relative to labelled anchors. Template instructions
//! need nothing but the corpus; model-backed variants go through
//! [`client::submit_prompts`] and are only produced when an endpoint is
//! configured.

pub mod client;
pub mod export;
pub mod mix;
pub mod prompts;
pub mod spatial;
pub mod templates;

use std::collections::HashMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, UiCategory, UiElement};
use crate::dedup::normalize_label;
use client::{submit_prompts, ChatTransport, ClientConfig, SubmitResult};
use prompts::{build_prompt, validate_response, ImageRefs, PromptError, PromptKind, PromptRequest};
use spatial::{spatial_relations, Relation, SpatialConfig, SpatialRelation};
use templates::{has_unresolved_placeholder, render, TemplateError, TemplateLibrary};

pub use export::{
    export_sft, load_sft, pick_samples_for, pool_element_ids, rejection_sample_errors, select_rl_unseen, SftRecord,
};
pub use mix::{mix_counts, sample_mix, MixFractions, MixSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstructionKind {
    Direct,
    Functional,
    Spatial,
}

impl InstructionKind {
    pub const ALL: [InstructionKind; 3] = [
        InstructionKind::Direct,
        InstructionKind::Functional,
        InstructionKind::Spatial,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InstructionKind::Direct => "direct",
            InstructionKind::Functional => "functional",
            InstructionKind::Spatial => "spatial",
        }
    }
}

impl fmt::Display for InstructionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for InstructionKind {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim())
            .ok_or_else(|| SynthError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subkind {
    Textual,
    Visual,
    General,
    Description,
    FunctionalGoal,
    SpatialRelative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Template,
    Model,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionSample {
    pub id: String,
    pub screenshot_id: String,
    pub element_id: String,
    pub instruction: String,
    pub kind: InstructionKind,
    pub subkind: Subkind,
    pub provenance: Provenance,
    #[serde(default)]
    pub anchors: Vec<String>,
}

impl InstructionSample {
    /// Structural checks every emitted sample must pass.
    pub fn check(&self) -> Result<(), SynthError> {
        let bad = |why: &str| {
            Err(SynthError::InvalidSample {
                id: self.id.clone(),
                reason: why.to_string(),
            })
        };
        if self.instruction.trim().is_empty() {
            return bad("empty instruction");
        }
        if has_unresolved_placeholder(&self.instruction) {
            return bad("unresolved placeholder");
        }
        let spatial = self.kind == InstructionKind::Spatial;
        if spatial != !self.anchors.is_empty() {
            return bad("anchors must be present exactly for spatial instructions");
        }
        if spatial && !(1..=2).contains(&self.anchors.len()) {
            return bad("spatial instructions take one or two anchors");
        }
        if spatial != (self.subkind == Subkind::SpatialRelative) {
            return bad("subkind does not match kind");
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("element {0} is not textual (needs OCR text matching its label, or the information display category)")]
    NotTextual(String),
    #[error("element {0} has an empty label")]
    EmptyLabel(String),
    #[error("unknown instruction kind {0:?}")]
    UnknownKind(String),
    #[error("unknown element {0}")]
    UnknownElement(String),
    #[error("{relation:?} needs {expected} anchor(s), got {got}")]
    AnchorCount {
        relation: Relation,
        expected: usize,
        got: usize,
    },
    #[error("spatial template {template} is for {template_relation:?}, not {relation:?}")]
    RelationMismatch {
        template: usize,
        template_relation: Relation,
        relation: Relation,
    },
    #[error("no spatial template for {0:?}")]
    NoTemplate(Relation),
    #[error("sample {id}: {reason}")]
    InvalidSample { id: String, reason: String },
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Textual elements show their label as on-screen text: the OCR reading
/// equals the label after normalization, or the element is an information
/// display.
pub fn is_textual(e: &UiElement) -> bool {
    let ocr_match = e
        .ocr_text
        .as_deref()
        .is_some_and(|t| !normalize_label(t).is_empty() && normalize_label(t) == normalize_label(&e.label));
    ocr_match || e.ui_category == Some(UiCategory::InformationDisplay)
}

fn choose(len: usize, template_id: Option<usize>, seed: u64) -> usize {
    template_id.unwrap_or_else(|| ChaCha8Rng::seed_from_u64(seed).random_range(1..=len.max(1)))
}

fn label_of(e: &UiElement) -> Result<&str, SynthError> {
    let label = e.label.trim();
    if label.is_empty() {
        return Err(SynthError::EmptyLabel(e.id.clone()));
    }
    Ok(label)
}

fn finish(sample: InstructionSample) -> Result<InstructionSample, SynthError> {
    sample.check()?;
    Ok(sample)
}

fn template_sample(e: &UiElement, subkind: Subkind, template_id: usize, instruction: String) -> InstructionSample {
    let tag = match subkind {
        Subkind::Textual => "textual",
        _ => "general",
    };
    InstructionSample {
        id: format!("{}:{tag}:{template_id}", e.id),
        screenshot_id: e.screenshot_id.clone(),
        element_id: e.id.clone(),
        instruction,
        kind: InstructionKind::Direct,
        subkind,
        provenance: Provenance::Template,
        anchors: Vec::new(),
    }
}

/// Fill a textual template with the element's label. Without a template id
/// one is drawn from `seed`.
pub fn make_textual_instruction(
    e: &UiElement,
    lib: &TemplateLibrary,
    template_id: Option<usize>,
    seed: u64,
) -> Result<InstructionSample, SynthError> {
    if !is_textual(e) {
        return Err(SynthError::NotTextual(e.id.clone()));
    }
    let label = label_of(e)?;
    let id = choose(lib.textual.len(), template_id, seed);
    let text = render(lib.textual_template(id)?, &[("text", label)])?;
    finish(template_sample(e, Subkind::Textual, id, text))
}

/// Fill a general template; applies to any labelled element.
pub fn make_general_instruction(
    e: &UiElement,
    lib: &TemplateLibrary,
    template_id: Option<usize>,
    seed: u64,
) -> Result<InstructionSample, SynthError> {
    let label = label_of(e)?;
    let id = choose(lib.general.len(), template_id, seed);
    let text = render(lib.general_template(id)?, &[("text", label)])?;
    finish(template_sample(e, Subkind::General, id, text))
}

/// Fill a spatial template with the anchor labels. `anchors` are the anchor
/// elements in the order of `relation.anchors`.
pub fn make_spatial_instruction(
    target: &UiElement,
    relation: &SpatialRelation,
    anchors: &[&UiElement],
    lib: &TemplateLibrary,
    template_id: Option<usize>,
    seed: u64,
) -> Result<InstructionSample, SynthError> {
    let r = relation.relation;
    for got in [relation.anchors.len(), anchors.len()] {
        if got != r.anchor_count() {
            return Err(SynthError::AnchorCount {
                relation: r,
                expected: r.anchor_count(),
                got,
            });
        }
    }
    let id = match template_id {
        Some(id) => id,
        None => {
            let ids = lib.spatial_ids_for(r);
            if ids.is_empty() {
                return Err(SynthError::NoTemplate(r));
            }
            ids[choose(ids.len(), None, seed) - 1]
        }
    };
    let template = lib.spatial_template(id)?;
    if template.relation != r {
        return Err(SynthError::RelationMismatch {
            template: id,
            template_relation: template.relation,
            relation: r,
        });
    }
    let labels = anchors.iter().map(|a| label_of(a)).collect::<Result<Vec<_>, _>>()?;
    let values: Vec<(&str, &str)> = if r == Relation::Between {
        vec![("element_1", labels[0]), ("element_2", labels[1])]
    } else {
        vec![("element", labels[0])]
    };
    let text = render(&template.text, &values)?;
    finish(InstructionSample {
        id: format!("{}:spatial:{id}:{}", target.id, relation.anchors.join("+")),
        screenshot_id: target.screenshot_id.clone(),
        element_id: target.id.clone(),
        instruction: text,
        kind: InstructionKind::Spatial,
        subkind: Subkind::SpatialRelative,
        provenance: Provenance::Template,
        anchors: relation.anchors.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub kinds: Vec<InstructionKind>,
    pub spatial: SpatialConfig,
    /// Also ask the model for general instructions, next to the templates.
    pub model_general: bool,
    /// Extra submission rounds for prompts whose answer was rejected.
    pub regeneration_budget: u32,
    pub client: ClientConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            kinds: InstructionKind::ALL.to_vec(),
            spatial: SpatialConfig::default(),
            model_general: false,
            regeneration_budget: 0,
            client: ClientConfig::default(),
        }
    }
}

impl SynthConfig {
    pub fn wants(&self, kind: InstructionKind) -> bool {
        self.kinds.contains(&kind)
    }
}

/// Per-element seed, independent of processing order.
pub fn element_seed(seed: u64, element_id: &str) -> u64 {
    // FNV-1a over the id, folded into the run seed.
    let h = element_id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    });
    h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn resolve<'a>(corpus: &'a Corpus, unique_ids: &[String]) -> Result<Vec<&'a UiElement>, SynthError> {
    let lookup = corpus.element_lookup();
    unique_ids
        .iter()
        .map(|id| {
            lookup
                .get(id.as_str())
                .map(|&i| &corpus.elements()[i])
                .ok_or_else(|| SynthError::UnknownElement(id.clone()))
        })
        .collect()
}

fn template_samples_for(
    corpus: &Corpus,
    e: &UiElement,
    lib: &TemplateLibrary,
    cfg: &SynthConfig,
    seed: u64,
) -> Result<Vec<InstructionSample>, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(element_seed(seed, &e.id));
    let mut out = Vec::new();
    if e.label.trim().is_empty() {
        return Ok(out);
    }
    if cfg.wants(InstructionKind::Direct) {
        let s = rng.random();
        out.push(if is_textual(e) {
            make_textual_instruction(e, lib, None, s)?
        } else {
            make_general_instruction(e, lib, None, s)?
        });
    }
    if cfg.wants(InstructionKind::Spatial) {
        let on_shot: Vec<&UiElement> = corpus.elements_on(&e.screenshot_id).collect();
        let relations: Vec<SpatialRelation> = spatial_relations(e, &on_shot, &cfg.spatial)
            .into_iter()
            .filter(|r| !lib.spatial_ids_for(r.relation).is_empty())
            .collect();
        if !relations.is_empty() {
            let rel = &relations[rng.random_range(0..relations.len())];
            let by_id: HashMap<&str, &UiElement> = on_shot.iter().map(|a| (a.id.as_str(), *a)).collect();
            let anchors: Vec<&UiElement> = rel.anchors.iter().map(|id| by_id[id.as_str()]).collect();
            out.push(make_spatial_instruction(e, rel, &anchors, lib, None, rng.random())?);
        }
    }
    Ok(out)
}

/// Template-only synthesis over the unique elements, parallel across
/// elements. Output order follows `unique_ids`.
pub fn synthesize_templates(
    corpus: &Corpus,
    unique_ids: &[String],
    lib: &TemplateLibrary,
    cfg: &SynthConfig,
    seed: u64,
) -> Result<Vec<InstructionSample>, SynthError> {
    let elements = resolve(corpus, unique_ids)?;
    let per_element: Vec<Vec<InstructionSample>> = elements
        .par_iter()
        .map(|e| template_samples_for(corpus, e, lib, cfg, seed))
        .collect::<Result<_, _>>()?;
    Ok(per_element.into_iter().flatten().collect())
}

fn prompt_target(kind: PromptKind) -> (InstructionKind, Subkind) {
    match kind {
        PromptKind::Description => (InstructionKind::Direct, Subkind::Description),
        PromptKind::VisualCaption => (InstructionKind::Direct, Subkind::Visual),
        PromptKind::GeneralInstruction => (InstructionKind::Direct, Subkind::General),
        PromptKind::FunctionalGoal => (InstructionKind::Functional, Subkind::FunctionalGoal),
    }
}

/// Prompts for the model-backed variants of each unique element: a
/// description for every element, a caption for visual elements, a
/// functional goal for buttons and menus, and optionally a general
/// instruction. Request ids are `<element id>:<prompt kind>`.
pub fn model_requests(
    corpus: &Corpus,
    unique_ids: &[String],
    cfg: &SynthConfig,
) -> Result<Vec<PromptRequest>, SynthError> {
    let mut out = Vec::new();
    for e in resolve(corpus, unique_ids)? {
        if e.label.trim().is_empty() {
            continue;
        }
        let mut kinds = Vec::new();
        if cfg.wants(InstructionKind::Direct) {
            kinds.push(PromptKind::Description);
            if e.ui_category == Some(UiCategory::VisualElements) {
                kinds.push(PromptKind::VisualCaption);
            }
            if cfg.model_general {
                kinds.push(PromptKind::GeneralInstruction);
            }
        }
        if cfg.wants(InstructionKind::Functional)
            && matches!(e.ui_category, Some(UiCategory::Button | UiCategory::Menu))
        {
            kinds.push(PromptKind::FunctionalGoal);
        }
        let shot = corpus.screenshot_of(e);
        let refs = ImageRefs {
            image: corpus.image_path(shot).display().to_string(),
            target_box: e.bbox,
        };
        for k in kinds {
            out.push(build_prompt(
                format!("{}:{}", e.id, k.as_str()),
                k,
                &shot.app_name,
                e.label.trim(),
                &refs,
            )?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedPrompt {
    pub request_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ModelSynthesis {
    pub samples: Vec<InstructionSample>,
    pub rejected: Vec<RejectedPrompt>,
}

/// Send the model prompts and keep the accepted answers. Rejected or failed
/// prompts are retried for `regeneration_budget` extra rounds, then dropped.
pub fn synthesize_with_model(
    corpus: &Corpus,
    unique_ids: &[String],
    cfg: &SynthConfig,
    transport: &dyn ChatTransport,
) -> Result<ModelSynthesis, SynthError> {
    let requests = model_requests(corpus, unique_ids, cfg)?;
    let element_of: HashMap<&str, &UiElement> = resolve(corpus, unique_ids)?
        .into_iter()
        .map(|e| (e.id.as_str(), e))
        .collect();
    let mut accepted: HashMap<String, String> = HashMap::new();
    let mut reasons: HashMap<String, String> = HashMap::new();
    let mut pending: Vec<PromptRequest> = requests.clone();
    for round in 0..=cfg.regeneration_budget {
        if pending.is_empty() {
            break;
        }
        log::info!("model round {round}: {} prompt(s)", pending.len());
        let results: Vec<SubmitResult> = submit_prompts(&pending, &cfg.client, transport);
        let mut retry = Vec::new();
        for (req, res) in pending.into_iter().zip(results) {
            let verdict = match (&res.error, &res.response) {
                (None, Some(r)) => validate_response(r).map_err(|e| e.to_string()),
                (Some(err), _) => Err(err.clone()),
                (None, None) => Err("no response".to_string()),
            };
            match verdict {
                Ok(text) => {
                    reasons.remove(&req.id);
                    accepted.insert(req.id.clone(), text);
                }
                Err(reason) => {
                    reasons.insert(req.id.clone(), reason);
                    retry.push(req);
                }
            }
        }
        pending = retry;
    }

    let mut out = ModelSynthesis::default();
    for req in &requests {
        let element_id = req.id.rsplit_once(':').map_or(req.id.as_str(), |(e, _)| e);
        let e = element_of[element_id];
        match accepted.remove(&req.id) {
            Some(text) => {
                let (kind, subkind) = prompt_target(req.prompt_kind);
                out.samples.push(finish(InstructionSample {
                    id: req.id.clone(),
                    screenshot_id: e.screenshot_id.clone(),
                    element_id: e.id.clone(),
                    instruction: text,
                    kind,
                    subkind,
                    provenance: Provenance::Model,
                    anchors: Vec::new(),
                })?);
            }
            None => out.rejected.push(RejectedPrompt {
                request_id: req.id.clone(),
                reason: reasons.remove(&req.id).unwrap_or_default(),
            }),
        }
    }
    Ok(out)
}
