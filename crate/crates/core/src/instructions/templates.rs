//! Instruction template sets and placeholder substitution.
//!
//! The shipped sets live in `templates/` as plain data files: one template per
//! line for textual and general instructions, JSON lines tagged with a
//! relation for spatial ones. Template ids are 1-based line numbers.

use std::collections::HashMap;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::spatial::Relation;

/// Bumped whenever a shipped template file changes.
pub const TEMPLATE_SET_VERSION: u32 = 1;

const TEXTUAL: &str = include_str!("../../templates/textual.txt");
const GENERAL: &str = include_str!("../../templates/general.txt");
const SPATIAL: &str = include_str!("../../templates/spatial.jsonl");

static PLACEHOLDER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{([a-z][a-z0-9_]*)\}").expect("valid regex"));

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("template {id} does not exist in the {set} set ({len} templates)")]
    UnknownTemplate { set: &'static str, id: usize, len: usize },
    #[error("no value for placeholder {{{0}}}")]
    MissingValue(String),
    #[error("template file {path}: {message}")]
    BadFile { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpatialTemplate {
    pub relation: Relation,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateLibrary {
    pub textual: Vec<String>,
    pub general: Vec<String>,
    pub spatial: Vec<SpatialTemplate>,
}

impl Default for TemplateLibrary {
    fn default() -> Self {
        Self::builtin()
    }
}

fn lines(src: &str) -> Vec<String> {
    src.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

fn parse_spatial(src: &str, origin: &str) -> Result<Vec<SpatialTemplate>, TemplateError> {
    src.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| TemplateError::BadFile {
                path: origin.to_string(),
                message: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

impl TemplateLibrary {
    pub fn builtin() -> Self {
        Self {
            textual: lines(TEXTUAL),
            general: lines(GENERAL),
            spatial: parse_spatial(SPATIAL, "builtin spatial.jsonl").expect("shipped spatial templates parse"),
        }
    }

    /// Load `textual.txt`, `general.txt` and `spatial.jsonl` from a directory.
    pub fn from_dir(dir: &Path) -> Result<Self, TemplateError> {
        let read = |name: &str| {
            let path = dir.join(name);
            std::fs::read_to_string(&path).map_err(|e| TemplateError::BadFile {
                path: path.display().to_string(),
                message: e.to_string(),
            })
        };
        let lib = Self {
            textual: lines(&read("textual.txt")?),
            general: lines(&read("general.txt")?),
            spatial: parse_spatial(
                &read("spatial.jsonl")?,
                &dir.join("spatial.jsonl").display().to_string(),
            )?,
        };
        for (set, list) in [("textual", &lib.textual), ("general", &lib.general)] {
            if list.is_empty() {
                return Err(TemplateError::BadFile {
                    path: dir.display().to_string(),
                    message: format!("{set} set is empty"),
                });
            }
        }
        Ok(lib)
    }

    pub fn textual_template(&self, id: usize) -> Result<&str, TemplateError> {
        pick("textual", &self.textual, id).map(String::as_str)
    }

    pub fn general_template(&self, id: usize) -> Result<&str, TemplateError> {
        pick("general", &self.general, id).map(String::as_str)
    }

    pub fn spatial_template(&self, id: usize) -> Result<&SpatialTemplate, TemplateError> {
        pick("spatial", &self.spatial, id)
    }

    /// Ids of the spatial templates written for `relation`.
    pub fn spatial_ids_for(&self, relation: Relation) -> Vec<usize> {
        self.spatial
            .iter()
            .enumerate()
            .filter(|(_, t)| t.relation == relation)
            .map(|(i, _)| i + 1)
            .collect()
    }
}

fn pick<'a, T>(set: &'static str, list: &'a [T], id: usize) -> Result<&'a T, TemplateError> {
    id.checked_sub(1)
        .and_then(|i| list.get(i))
        .ok_or(TemplateError::UnknownTemplate {
            set,
            id,
            len: list.len(),
        })
}

/// Substitute every `{name}` in one pass, so substituted values are never
/// themselves expanded.
pub fn render(template: &str, values: &[(&str, &str)]) -> Result<String, TemplateError> {
    let lookup: HashMap<&str, &str> = values.iter().copied().collect();
    let mut missing = None;
    let out = PLACEHOLDER.replace_all(template, |caps: &regex::Captures<'_>| {
        let name = &caps[1];
        match lookup.get(name) {
            Some(v) => (*v).to_string(),
            None => {
                missing.get_or_insert_with(|| name.to_string());
                caps[0].to_string()
            }
        }
    });
    match missing {
        Some(name) => Err(TemplateError::MissingValue(name)),
        None => Ok(out.into_owned()),
    }
}

/// Placeholders used by the shipped templates and prompts.
pub const KNOWN_PLACEHOLDERS: [&str; 5] = ["text", "element", "element_1", "element_2", "platform"];

/// True when `s` contains a `{name}` token for one of [`KNOWN_PLACEHOLDERS`].
pub fn has_unresolved_placeholder(s: &str) -> bool {
    PLACEHOLDER
        .captures_iter(s)
        .any(|c| KNOWN_PLACEHOLDERS.contains(&&c[1]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_set_sizes() {
        let lib = TemplateLibrary::builtin();
        assert_eq!(lib.textual.len(), 100);
        assert_eq!(lib.general.len(), 120);
        assert!(lib.spatial.len() >= 5);
        for r in [
            Relation::LeftOf,
            Relation::RightOf,
            Relation::Above,
            Relation::Below,
            Relation::Between,
        ] {
            assert!(!lib.spatial_ids_for(r).is_empty(), "{r:?}");
        }
    }

    #[test]
    fn every_template_uses_its_placeholders() {
        let lib = TemplateLibrary::builtin();
        for t in lib.textual.iter().chain(&lib.general) {
            assert!(t.contains("{text}"), "{t}");
            assert!(!has_unresolved_placeholder(&render(t, &[("text", "X")]).unwrap()));
        }
        for t in &lib.spatial {
            let vals = [("element", "A"), ("element_1", "A"), ("element_2", "B")];
            let out = render(&t.text, &vals).unwrap();
            assert!(!has_unresolved_placeholder(&out));
            assert_eq!(
                t.text.contains("{element_1}"),
                t.relation == Relation::Between,
                "{}",
                t.text
            );
        }
    }

    #[test]
    fn published_exemplars_lead_the_sets() {
        let lib = TemplateLibrary::builtin();
        assert_eq!(
            lib.textual_template(1).unwrap(),
            "Do you see the text '{text}'? Please click on it."
        );
        assert_eq!(
            lib.textual_template(3).unwrap(),
            "Make your way to the `{text}` label with your cursor."
        );
        assert_eq!(
            lib.general_template(1).unwrap(),
            "Click on the following element: {text}"
        );
        assert_eq!(lib.spatial_template(2).unwrap().relation, Relation::LeftOf);
        assert!(lib.textual_template(0).is_err());
        assert!(lib.textual_template(101).is_err());
    }

    #[test]
    fn render_is_single_pass() {
        assert_eq!(render("a {text} b", &[("text", "{text}")]).unwrap(), "a {text} b");
        assert!(matches!(render("{element}", &[("text", "x")]), Err(TemplateError::MissingValue(n)) if n == "element"));
        // JSON braces are not placeholders.
        assert_eq!(render("{\n  \"a\": 1\n}", &[]).unwrap(), "{\n  \"a\": 1\n}");
    }

    #[test]
    fn loads_from_directory() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("textual.txt"), "Click '{text}'.\n").unwrap();
        std::fs::write(dir.path().join("general.txt"), "Use {text}.\n\n").unwrap();
        std::fs::write(
            dir.path().join("spatial.jsonl"),
            "{\"relation\":\"above\",\"text\":\"Above {element}.\"}\n",
        )
        .unwrap();
        let lib = TemplateLibrary::from_dir(dir.path()).unwrap();
        assert_eq!(lib.general, vec!["Use {text}."]);
        assert_eq!(lib.spatial_ids_for(Relation::Above), vec![1]);
    }
}
