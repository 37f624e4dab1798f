//! Prompts for the model-backed instruction variants and response handling.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::templates::{render, TemplateError};
use crate::corpus::BoundingBox;

const DESCRIPTION: &str = include_str!("../../templates/prompt_description.txt");
const GENERAL_INSTRUCTION: &str = include_str!("../../templates/prompt_general_instruction.txt");
const FUNCTIONAL_GOAL: &str = include_str!("../../templates/prompt_functional_goal.txt");
const VISUAL_CAPTION: &str = include_str!("../../templates/prompt_visual_caption.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Description,
    GeneralInstruction,
    FunctionalGoal,
    VisualCaption,
}

impl PromptKind {
    pub const ALL: [PromptKind; 4] = [
        PromptKind::Description,
        PromptKind::GeneralInstruction,
        PromptKind::FunctionalGoal,
        PromptKind::VisualCaption,
    ];

    pub fn template(self) -> &'static str {
        match self {
            PromptKind::Description => DESCRIPTION,
            PromptKind::GeneralInstruction => GENERAL_INSTRUCTION,
            PromptKind::FunctionalGoal => FUNCTIONAL_GOAL,
            PromptKind::VisualCaption => VISUAL_CAPTION,
        }
    }

    /// Key holding the generated text in the model's JSON answer.
    pub fn response_key(self) -> &'static str {
        match self {
            PromptKind::Description => "description",
            PromptKind::GeneralInstruction => "instruction",
            PromptKind::FunctionalGoal => "function",
            PromptKind::VisualCaption => "caption",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::Description => "description",
            PromptKind::GeneralInstruction => "general_instruction",
            PromptKind::FunctionalGoal => "functional_goal",
            PromptKind::VisualCaption => "visual_caption",
        }
    }
}

impl FromStr for PromptKind {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| PromptError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("unknown prompt kind {0:?}")]
    UnknownKind(String),
    #[error("element label is empty")]
    EmptyLabel,
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// Where the model finds the screenshot and the element crop. Transports
/// draw the red box themselves from `image` and `target_box`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRefs {
    pub image: String,
    pub target_box: BoundingBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub id: String,
    pub prompt_kind: PromptKind,
    pub platform: String,
    pub element_label: String,
    pub full_image_ref: String,
    pub crop_image_ref: String,
    pub target_box: BoundingBox,
    pub rendered_prompt: String,
}

pub fn render_prompt(kind: PromptKind, platform: &str, label: &str) -> Result<String, PromptError> {
    if label.trim().is_empty() {
        return Err(PromptError::EmptyLabel);
    }
    Ok(render(kind.template(), &[("platform", platform), ("text", label)])?)
}

pub fn build_prompt(
    id: impl Into<String>,
    kind: PromptKind,
    platform: &str,
    label: &str,
    refs: &ImageRefs,
) -> Result<PromptRequest, PromptError> {
    let b = refs.target_box;
    Ok(PromptRequest {
        id: id.into(),
        prompt_kind: kind,
        platform: platform.to_string(),
        element_label: label.to_string(),
        full_image_ref: refs.image.clone(),
        crop_image_ref: format!("{}#box={},{},{},{}", refs.image, b.x1, b.y1, b.x2, b.y2),
        target_box: b,
        rendered_prompt: render_prompt(kind, platform, label)?,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub visible: bool,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub raw: String,
    pub parsed: Option<ParsedResponse>,
}

/// Drop a surrounding Markdown code fence, which chat models often add.
fn strip_fence(raw: &str) -> &str {
    let t = raw.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    let rest = rest.strip_prefix("json").unwrap_or(rest);
    rest.strip_suffix("```").unwrap_or(rest).trim()
}

impl ModelResponse {
    /// `parsed` is set only when `raw` is a JSON object with a boolean
    /// `visible` and a string under the kind's response key.
    pub fn from_raw(raw: impl Into<String>, kind: PromptKind) -> Self {
        let raw = raw.into();
        let parsed = serde_json::from_str::<serde_json::Value>(strip_fence(&raw))
            .ok()
            .and_then(|v| {
                Some(ParsedResponse {
                    visible: v.get("visible")?.as_bool()?,
                    text: v.get(kind.response_key())?.as_str()?.to_string(),
                })
            });
        Self { raw, parsed }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[serde(rename_all = "snake_case")]
pub enum Rejection {
    #[error("response is not JSON with the expected keys")]
    Malformed,
    #[error("not visible")]
    NotVisible,
    #[error("empty text")]
    EmptyText,
    #[error("references annotation artifact")]
    ReferencesAnnotation,
}

const FORBIDDEN_PHRASES: [&str; 2] = ["bounding box", "highlighted"];

/// Accepted instruction text, or the reason it was rejected.
pub fn validate_response(r: &ModelResponse) -> Result<String, Rejection> {
    let p = r.parsed.as_ref().ok_or(Rejection::Malformed)?;
    if !p.visible {
        return Err(Rejection::NotVisible);
    }
    let text = p.text.trim();
    if text.is_empty() {
        return Err(Rejection::EmptyText);
    }
    let lower = text.to_lowercase();
    if FORBIDDEN_PHRASES.iter().any(|f| lower.contains(f)) {
        return Err(Rejection::ReferencesAnnotation);
    }
    Ok(text.to_string())
}
