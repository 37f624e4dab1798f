//! Grounding evaluation: parse model outputs, check point-in-box, aggregate
//! accuracy overall and per tag value.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::sync::LazyLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::BoundingBox;
use crate::geometry::{point_in_box, Point};
use crate::jsonl::{self, JsonlError};

/// Tag value used for records that lack a tag key other records carry.
pub const UNTAGGED: &str = "untagged";

/// How numeric pairs in model output map to pixels. Always declared, never guessed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordSpace {
    /// Already in pixels.
    Pixel,
    /// Fractions of width and height.
    Unit,
    /// Thousandths of width and height.
    Milli,
}

impl CoordSpace {
    pub fn to_pixels(self, x: f64, y: f64, width: f64, height: f64) -> Point {
        match self {
            CoordSpace::Pixel => Point::new(x, y),
            CoordSpace::Unit => Point::new(x * width, y * height),
            CoordSpace::Milli => Point::new(x * width / 1000.0, y * height / 1000.0),
        }
    }
}

impl FromStr for CoordSpace {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pixel" => Ok(Self::Pixel),
            "unit" => Ok(Self::Unit),
            "milli" => Ok(Self::Milli),
            other => Err(format!(
                "unknown coordinate space {other:?} (expected pixel, unit or milli)"
            )),
        }
    }
}

/// Which coordinate pair wins when the output contains several.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairPolicy {
    First,
    #[default]
    Last,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no coordinate pair found in {0:?}")]
pub struct ParseError(pub String);

static PAIR_RE: LazyLock<Regex> = LazyLock::new(|| {
    let num = r"([-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?)";
    Regex::new(&format!(r"[\(\[]\s*{num}\s*,\s*{num}\s*[\)\]]")).expect("valid regex")
});

/// Extract an `(x, y)` or `[x, y]` pair from model output and scale it to pixels.
pub fn parse_prediction(
    raw: &str,
    space: CoordSpace,
    width: f64,
    height: f64,
    policy: PairPolicy,
) -> Result<Point, ParseError> {
    let mut pairs = PAIR_RE.captures_iter(raw);
    let caps = match policy {
        PairPolicy::First => pairs.next(),
        PairPolicy::Last => pairs.last(),
    }
    .ok_or_else(|| ParseError(raw.to_string()))?;
    let x: f64 = caps[1].parse().map_err(|_| ParseError(raw.to_string()))?;
    let y: f64 = caps[2].parse().map_err(|_| ParseError(raw.to_string()))?;
    let p = space.to_pixels(x, y, width, height);
    if !p.is_finite() {
        return Err(ParseError(raw.to_string()));
    }
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub id: String,
    pub image_w: u32,
    pub image_h: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
    pub instruction: String,
    pub gt_box: BoundingBox,
    #[serde(default)]
    pub tags: BTreeMap<String, String>,
}

/// One model answer for a benchmark record: a pixel point or raw output text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPrediction", into = "RawPrediction")]
pub struct PredictionRecord {
    pub record_id: String,
    pub answer: Answer,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Answer {
    Point(Point),
    Text(String),
}

#[derive(Serialize, Deserialize)]
struct RawPrediction {
    record_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    point: Option<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
}

impl TryFrom<RawPrediction> for PredictionRecord {
    type Error = String;

    fn try_from(raw: RawPrediction) -> Result<Self, Self::Error> {
        let answer = match (raw.point, raw.text) {
            (Some(p), None) => Answer::Point(p),
            (None, Some(t)) => Answer::Text(t),
            _ => {
                return Err(format!(
                    "prediction {} needs exactly one of point or text",
                    raw.record_id
                ))
            }
        };
        Ok(Self {
            record_id: raw.record_id,
            answer,
        })
    }
}

impl From<PredictionRecord> for RawPrediction {
    fn from(p: PredictionRecord) -> Self {
        let (point, text) = match p.answer {
            Answer::Point(pt) => (Some(pt), None),
            Answer::Text(t) => (None, Some(t)),
        };
        Self {
            record_id: p.record_id,
            point,
            text,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("benchmark record {id}: {message}")]
    InvalidRecord { id: String, message: String },
    #[error("{} prediction(s) reference unknown records, first: {}", .0.len(), .0[0])]
    UnknownRecords(Vec<String>),
    #[error("layout key {0:?} is not a tag in this report")]
    UnknownLayoutKey(String),
}

pub fn load_benchmark(path: &Path) -> Result<Vec<BenchmarkRecord>, EvalError> {
    let records: Vec<BenchmarkRecord> = jsonl::read_jsonl(path)?;
    validate_benchmark(&records)?;
    Ok(records)
}

pub fn load_predictions(path: &Path) -> Result<Vec<PredictionRecord>, EvalError> {
    Ok(jsonl::read_jsonl(path)?)
}

pub fn validate_benchmark(records: &[BenchmarkRecord]) -> Result<(), EvalError> {
    let mut ids = HashSet::new();
    for r in records {
        let invalid = |message: String| EvalError::InvalidRecord {
            id: r.id.clone(),
            message,
        };
        if !ids.insert(r.id.as_str()) {
            return Err(invalid("duplicate id".into()));
        }
        if !r.gt_box.is_finite() || !r.gt_box.is_ordered() {
            return Err(invalid(format!("malformed box {}", r.gt_box)));
        }
        if !r.gt_box.within_image(f64::from(r.image_w), f64::from(r.image_h)) {
            return Err(invalid(format!(
                "box {} exceeds the {}x{} image",
                r.gt_box, r.image_w, r.image_h
            )));
        }
        if let Some(k) = r.tags.keys().find(|k| k.to_lowercase() != **k) {
            return Err(invalid(format!("tag key {k:?} is not lowercase")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreOptions {
    pub coord_space: Option<CoordSpace>,
    pub pair_policy: PairPolicy,
    /// Treat box edges as outside.
    pub exclusive_bounds: bool,
    /// Fail when a prediction names a record the benchmark does not contain.
    pub strict_ids: bool,
}

impl ScoreOptions {
    pub fn new(coord_space: CoordSpace) -> Self {
        Self {
            coord_space: Some(coord_space),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TagStats {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

impl TagStats {
    fn add(&mut self, hit: bool) {
        self.total += 1;
        self.correct += usize::from(hit);
    }

    fn finish(&mut self) {
        self.accuracy = ratio(self.correct, self.total);
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub missing: usize,
    pub unparseable: usize,
    pub duplicate_predictions: usize,
    pub unmatched: Vec<String>,
    pub by_tag: BTreeMap<String, BTreeMap<String, TagStats>>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Correct,
    Wrong,
    Missing,
    Unparseable,
}

/// Score predictions against a benchmark. Missing and unparseable predictions
/// count as incorrect. When a record has several predictions the first wins.
pub fn score(
    benchmark: &[BenchmarkRecord],
    predictions: &[PredictionRecord],
    opts: &ScoreOptions,
) -> Result<EvalReport, EvalError> {
    let known: HashSet<&str> = benchmark.iter().map(|r| r.id.as_str()).collect();
    let mut by_record: HashMap<&str, &Answer> = HashMap::with_capacity(predictions.len());
    let mut unmatched = Vec::new();
    let mut duplicates = 0;
    for p in predictions {
        if !known.contains(p.record_id.as_str()) {
            unmatched.push(p.record_id.clone());
        } else if by_record.contains_key(p.record_id.as_str()) {
            duplicates += 1;
        } else {
            by_record.insert(&p.record_id, &p.answer);
        }
    }
    if opts.strict_ids && !unmatched.is_empty() {
        return Err(EvalError::UnknownRecords(unmatched));
    }
    unmatched.sort();

    let outcomes: Vec<Outcome> = benchmark
        .par_iter()
        .map(|r| judge(r, by_record.get(r.id.as_str()).copied(), opts))
        .collect();

    let tag_keys: BTreeMap<&str, ()> = benchmark
        .iter()
        .flat_map(|r| r.tags.keys().map(|k| (k.as_str(), ())))
        .collect();
    let mut report = EvalReport {
        total: benchmark.len(),
        duplicate_predictions: duplicates,
        unmatched,
        ..EvalReport::default()
    };
    for (r, outcome) in benchmark.iter().zip(&outcomes) {
        let hit = *outcome == Outcome::Correct;
        report.correct += usize::from(hit);
        match outcome {
            Outcome::Missing => report.missing += 1,
            Outcome::Unparseable => report.unparseable += 1,
            _ => {}
        }
        for key in tag_keys.keys() {
            let value = r.tags.get(*key).map_or(UNTAGGED, String::as_str);
            report
                .by_tag
                .entry((*key).to_string())
                .or_default()
                .entry(value.to_string())
                .or_default()
                .add(hit);
        }
    }
    report.accuracy = ratio(report.correct, report.total);
    for values in report.by_tag.values_mut() {
        values.values_mut().for_each(TagStats::finish);
    }
    Ok(report)
}

fn judge(record: &BenchmarkRecord, answer: Option<&Answer>, opts: &ScoreOptions) -> Outcome {
    let w = f64::from(record.image_w);
    let h = f64::from(record.image_h);
    let point = match answer {
        None => return Outcome::Missing,
        Some(Answer::Point(p)) => *p,
        Some(Answer::Text(t)) => {
            let Some(space) = opts.coord_space else {
                return Outcome::Unparseable;
            };
            match parse_prediction(t, space, w, h, opts.pair_policy) {
                Ok(p) => p,
                Err(_) => return Outcome::Unparseable,
            }
        }
    };
    let b = &record.gt_box;
    let hit = if opts.exclusive_bounds {
        b.x1 < point.u && point.u < b.x2 && b.y1 < point.v && point.v < b.y2
    } else {
        point_in_box(point, b)
    };
    if hit {
        Outcome::Correct
    } else {
        Outcome::Wrong
    }
}

/// Percentage rounded to one decimal, the precision used in result tables.
pub fn percent_1dp(accuracy: f64) -> f64 {
    (accuracy * 1000.0).round() / 10.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub text: String,
    pub json: serde_json::Value,
}

/// Render accuracy rows for the requested tag keys, in layout order and then
/// by tag value.
pub fn report_table(report: &EvalReport, layout: &[String]) -> Result<ReportTable, EvalError> {
    for key in layout {
        if !report.by_tag.contains_key(key) {
            return Err(EvalError::UnknownLayoutKey(key.clone()));
        }
    }
    let mut rows: Vec<(String, String, usize, usize, f64)> = Vec::new();
    if report.total > 0 {
        rows.push((
            "overall".into(),
            "all".into(),
            report.correct,
            report.total,
            percent_1dp(report.accuracy),
        ));
    }
    let mut json_tags = serde_json::Map::new();
    for key in layout {
        let mut json_values = serde_json::Map::new();
        for (value, s) in &report.by_tag[key] {
            let pct = percent_1dp(s.accuracy);
            rows.push((key.clone(), value.clone(), s.correct, s.total, pct));
            json_values.insert(
                value.clone(),
                serde_json::json!({"accuracy": pct, "correct": s.correct, "total": s.total}),
            );
        }
        json_tags.insert(key.clone(), json_values.into());
    }

    let headers = ["group", "value", "correct", "total", "accuracy"];
    let cells: Vec<[String; 5]> = rows
        .iter()
        .map(|(g, v, c, t, a)| [g.clone(), v.clone(), c.to_string(), t.to_string(), format!("{a:.1}")])
        .collect();
    let mut widths = headers.map(str::len);
    for row in &cells {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut text = String::new();
    let line = |text: &mut String, cols: [&str; 5]| {
        let mut out = String::new();
        for (i, (col, w)) in cols.iter().zip(widths).enumerate() {
            if i > 0 {
                out.push_str("  ");
            }
            if i >= 2 {
                let _ = write!(out, "{col:>w$}");
            } else {
                let _ = write!(out, "{col:<w$}");
            }
        }
        text.push_str(out.trim_end());
        text.push('\n');
    };
    line(&mut text, headers);
    for row in &cells {
        line(&mut text, [&row[0], &row[1], &row[2], &row[3], &row[4]]);
    }

    let json = serde_json::json!({
        "overall": {
            "accuracy": percent_1dp(report.accuracy),
            "correct": report.correct,
            "total": report.total,
            "missing": report.missing,
            "unparseable": report.unparseable,
            "unmatched": report.unmatched.len(),
        },
        "by_tag": json_tags,
    });
    Ok(ReportTable { text, json })
}
