//! Annotated screenshot corpora: data model, on-disk layout and validation.
//!
//! A corpus directory holds a `manifest.json` naming two JSONL files, one
//! with screenshot records and one with element records. Boxes are stored as
//! `[x1, y1, x2, y2]` in pixels with the origin at the top-left corner.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::jsonl::{self, JsonlError};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

/// Accepted screenshot size range in megapixels. Outside it validation warns.
pub const MIN_MEGAPIXELS: f64 = 0.1;
pub const MAX_MEGAPIXELS: f64 = 16.0;

/// The twelve desktop software categories screenshots are filed under.
pub const APP_CATEGORIES: [&str; 12] = [
    "Education",
    "Browsers",
    "Development",
    "Productivity",
    "Graphics and Design",
    "Video and Audio Production",
    "Communication",
    "Entertainment",
    "System Utilities",
    "Security",
    "Finance and Business Analytics",
    "Scientific",
];

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("no manifest found at {0}")]
    MissingManifest(PathBuf),
    #[error("invalid manifest {path}: {message}")]
    InvalidManifest { path: PathBuf, message: String },
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("element {element_id} references unknown screenshot {screenshot_id}")]
    UnresolvedScreenshot { element_id: String, screenshot_id: String },
    #[error("duplicate screenshot id {0}")]
    DuplicateScreenshot(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Axis-aligned box in pixel coordinates. Boundary points count as inside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn is_finite(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite())
    }

    /// `x1 <= x2 && y1 <= y2`.
    pub fn is_ordered(&self) -> bool {
        self.x1 <= self.x2 && self.y1 <= self.y2
    }

    pub fn is_degenerate(&self) -> bool {
        self.width() <= 0.0 || self.height() <= 0.0
    }

    pub fn within_image(&self, width: f64, height: f64) -> bool {
        self.x1 >= 0.0 && self.y1 >= 0.0 && self.x2 <= width && self.y2 <= height
    }

    pub fn clamped_to(&self, width: f64, height: f64) -> Self {
        Self {
            x1: self.x1.clamp(0.0, width),
            y1: self.y1.clamp(0.0, height),
            x2: self.x2.clamp(0.0, width),
            y2: self.y2.clamp(0.0, height),
        }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }
}

impl From<[f64; 4]> for BoundingBox {
    fn from(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.x1, self.y1, self.x2, self.y2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Screenshot {
    pub id: String,
    pub app_name: String,
    pub category: String,
    pub width: u32,
    pub height: u32,
    pub image_path: String,
}

impl Screenshot {
    pub fn megapixels(&self) -> f64 {
        f64::from(self.width) * f64::from(self.height) / 1e6
    }
}

/// High-level UI element categories. Roughly half of annotated elements carry one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UiCategory {
    InputElement,
    Sidebar,
    InformationDisplay,
    Button,
    Navigation,
    VisualElements,
    Menu,
    Others,
}

impl UiCategory {
    pub const ALL: [UiCategory; 8] = [
        UiCategory::InputElement,
        UiCategory::Sidebar,
        UiCategory::InformationDisplay,
        UiCategory::Button,
        UiCategory::Navigation,
        UiCategory::VisualElements,
        UiCategory::Menu,
        UiCategory::Others,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            UiCategory::InputElement => "input_element",
            UiCategory::Sidebar => "sidebar",
            UiCategory::InformationDisplay => "information_display",
            UiCategory::Button => "button",
            UiCategory::Navigation => "navigation",
            UiCategory::VisualElements => "visual_elements",
            UiCategory::Menu => "menu",
            UiCategory::Others => "others",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UiElement {
    pub id: String,
    pub screenshot_id: String,
    pub bbox: BoundingBox,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ocr_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ui_category: Option<UiCategory>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    pub screenshots_file: String,
    pub elements_file: String,
    pub version: u32,
}

impl Manifest {
    pub fn standard(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            screenshots_file: "screenshots.jsonl".into(),
            elements_file: "elements.jsonl".into(),
            version: MANIFEST_VERSION,
        }
    }
}

/// A fully indexed corpus. Every element's screenshot id resolves.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    name: String,
    root: PathBuf,
    screenshots: Vec<Screenshot>,
    elements: Vec<UiElement>,
    screenshot_pos: HashMap<String, usize>,
    by_screenshot: Vec<Vec<usize>>,
}

impl Corpus {
    /// Build and index a corpus. `root` is the directory image paths are relative to.
    pub fn new(
        name: impl Into<String>,
        root: impl Into<PathBuf>,
        screenshots: Vec<Screenshot>,
        elements: Vec<UiElement>,
    ) -> Result<Self, CorpusError> {
        let mut screenshot_pos = HashMap::with_capacity(screenshots.len());
        for (i, s) in screenshots.iter().enumerate() {
            if screenshot_pos.insert(s.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateScreenshot(s.id.clone()));
            }
        }
        let mut by_screenshot = vec![Vec::new(); screenshots.len()];
        for (i, e) in elements.iter().enumerate() {
            let pos = screenshot_pos
                .get(&e.screenshot_id)
                .ok_or_else(|| CorpusError::UnresolvedScreenshot {
                    element_id: e.id.clone(),
                    screenshot_id: e.screenshot_id.clone(),
                })?;
            by_screenshot[*pos].push(i);
        }
        Ok(Self {
            name: name.into(),
            root: root.into(),
            screenshots,
            elements,
            screenshot_pos,
            by_screenshot,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn screenshots(&self) -> &[Screenshot] {
        &self.screenshots
    }

    pub fn elements(&self) -> &[UiElement] {
        &self.elements
    }

    pub fn screenshot(&self, id: &str) -> Option<&Screenshot> {
        self.screenshot_pos.get(id).map(|&i| &self.screenshots[i])
    }

    pub fn screenshot_of(&self, element: &UiElement) -> &Screenshot {
        // Resolved at construction.
        self.screenshot(&element.screenshot_id)
            .expect("element screenshot resolved at construction")
    }

    /// Elements annotated on one screenshot, in file order.
    pub fn elements_on(&self, screenshot_id: &str) -> impl Iterator<Item = &UiElement> {
        let positions: &[usize] = self
            .screenshot_pos
            .get(screenshot_id)
            .map(|&i| self.by_screenshot[i].as_slice())
            .unwrap_or(&[]);
        positions.iter().map(move |&i| &self.elements[i])
    }

    pub fn element_count_on(&self, screenshot_id: &str) -> usize {
        self.screenshot_pos
            .get(screenshot_id)
            .map_or(0, |&i| self.by_screenshot[i].len())
    }

    /// Map from element id to its position in [`Corpus::elements`].
    pub fn element_lookup(&self) -> HashMap<&str, usize> {
        self.elements
            .iter()
            .enumerate()
            .map(|(i, e)| (e.id.as_str(), i))
            .collect()
    }

    pub fn image_path(&self, screenshot: &Screenshot) -> PathBuf {
        self.root.join(&screenshot.image_path)
    }

    fn elements_mut(&mut self) -> &mut [UiElement] {
        &mut self.elements
    }
}

/// Load a corpus from a directory containing `manifest.json` or from the
/// manifest file itself.
pub fn load_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let manifest_path = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    if !manifest_path.is_file() {
        return Err(CorpusError::MissingManifest(manifest_path));
    }
    let raw = fs::read_to_string(&manifest_path).map_err(|source| CorpusError::Io {
        path: manifest_path.clone(),
        source,
    })?;
    let manifest: Manifest = serde_json::from_str(&raw).map_err(|e| CorpusError::InvalidManifest {
        path: manifest_path.clone(),
        message: e.to_string(),
    })?;
    if manifest.version != MANIFEST_VERSION {
        return Err(CorpusError::InvalidManifest {
            path: manifest_path,
            message: format!("unsupported version {}", manifest.version),
        });
    }
    let root = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let screenshots = jsonl::read_jsonl(&root.join(&manifest.screenshots_file))?;
    let elements = jsonl::read_jsonl(&root.join(&manifest.elements_file))?;
    Corpus::new(manifest.name, root, screenshots, elements)
}

/// Write `manifest.json`, `screenshots.jsonl` and `elements.jsonl` into `dir`.
pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<(), CorpusError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CorpusError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest = Manifest::standard(corpus.name());
    let manifest_path = dir.join(MANIFEST_FILE);
    let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, body + "\n").map_err(io_err(&manifest_path))?;
    jsonl::write_jsonl(&dir.join(&manifest.screenshots_file), corpus.screenshots())?;
    jsonl::write_jsonl(&dir.join(&manifest.elements_file), corpus.elements())?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    DuplicateElementId,
    ResolutionOutOfRange,
    UnknownAppCategory,
    NonFiniteBox,
    InvertedBox,
    BoxOutsideImage,
    DegenerateBox,
}

impl Rule {
    pub fn is_bbox_rule(&self) -> bool {
        matches!(
            self,
            Rule::NonFiniteBox | Rule::InvertedBox | Rule::BoxOutsideImage | Rule::DegenerateBox
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub rule: Rule,
    pub record_id: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: usize,
    pub warnings: usize,
    pub diagnostics: Vec<Diagnostic>,
}

impl ValidationReport {
    fn push(&mut self, severity: Severity, rule: Rule, record_id: &str, message: String) {
        match severity {
            Severity::Warning => self.warnings += 1,
            Severity::Error => self.errors += 1,
        }
        self.diagnostics.push(Diagnostic {
            severity,
            rule,
            record_id: record_id.to_string(),
            message,
        });
    }

    pub fn is_clean(&self) -> bool {
        self.errors == 0 && self.warnings == 0
    }

    pub fn count_rule(&self, rule: Rule) -> usize {
        self.diagnostics.iter().filter(|d| d.rule == rule).count()
    }
}

/// Check every corpus invariant and report violations.
///
/// In non-strict mode boxes that overshoot the image are clamped in place and
/// degenerate boxes are kept, both with a warning. Strict mode reports both as
/// errors and leaves the boxes untouched.
pub fn validate_corpus(corpus: &mut Corpus, strict: bool) -> ValidationReport {
    let mut report = ValidationReport::default();
    let soft = if strict { Severity::Error } else { Severity::Warning };

    for s in corpus.screenshots() {
        let mp = s.megapixels();
        if !(MIN_MEGAPIXELS..=MAX_MEGAPIXELS).contains(&mp) {
            report.push(
                Severity::Warning,
                Rule::ResolutionOutOfRange,
                &s.id,
                format!(
                    "{}x{} is {mp:.3} MP, outside [{MIN_MEGAPIXELS}, {MAX_MEGAPIXELS}]",
                    s.width, s.height
                ),
            );
        }
        if !APP_CATEGORIES.contains(&s.category.as_str()) {
            report.push(
                Severity::Warning,
                Rule::UnknownAppCategory,
                &s.id,
                format!("unknown software category {:?}", s.category),
            );
        }
    }

    let dims: HashMap<String, (f64, f64)> = corpus
        .screenshots()
        .iter()
        .map(|s| (s.id.clone(), (f64::from(s.width), f64::from(s.height))))
        .collect();
    let mut seen = HashSet::new();
    for e in corpus.elements_mut() {
        if !seen.insert(e.id.clone()) {
            report.push(
                Severity::Error,
                Rule::DuplicateElementId,
                &e.id,
                "element id appears more than once".into(),
            );
        }
        let b = e.bbox;
        if !b.is_finite() {
            report.push(
                Severity::Error,
                Rule::NonFiniteBox,
                &e.id,
                format!("non-finite box {b}"),
            );
            continue;
        }
        if !b.is_ordered() {
            report.push(Severity::Error, Rule::InvertedBox, &e.id, format!("inverted box {b}"));
            continue;
        }
        let (w, h) = dims[&e.screenshot_id];
        if !b.within_image(w, h) {
            let clamped = b.clamped_to(w, h);
            if strict {
                report.push(
                    soft,
                    Rule::BoxOutsideImage,
                    &e.id,
                    format!("box {b} exceeds {w}x{h} image"),
                );
            } else {
                report.push(
                    soft,
                    Rule::BoxOutsideImage,
                    &e.id,
                    format!("box {b} exceeds {w}x{h} image, clamped to {clamped}"),
                );
                e.bbox = clamped;
            }
        }
        if e.bbox.is_degenerate() {
            report.push(soft, Rule::DegenerateBox, &e.id, format!("degenerate box {}", e.bbox));
        }
    }
    report
}
