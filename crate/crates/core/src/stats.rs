//! Corpus statistics: density, resolution and element-size distributions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;

/// Width of the linear resolution histogram bins, in megapixels.
pub const RESOLUTION_BIN_MP: f64 = 0.25;
/// Width of the annotations-per-screenshot histogram bins.
pub const ANNOTATION_BIN: f64 = 10.0;
/// Relative-area bins: ten per decade from 1e-5 % up to 1e2 %.
pub const AREA_BINS_PER_DECADE: usize = 10;
pub const AREA_MIN_LOG10_PCT: i32 = -5;
pub const AREA_MAX_LOG10_PCT: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum StatsError {
    #[error("corpus has no screenshots")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Bins of fixed `width`, spanning only the occupied range.
    fn linear(values: &[f64], width: f64) -> Self {
        if values.is_empty() {
            return Self {
                edges: vec![0.0, width],
                counts: vec![0],
            };
        }
        let bin = |v: f64| (v / width).floor() as i64;
        let lo = values.iter().map(|&v| bin(v)).min().expect("non-empty");
        let hi = values.iter().map(|&v| bin(v)).max().expect("non-empty");
        let mut counts = vec![0; (hi - lo + 1) as usize];
        for &v in values {
            counts[(bin(v) - lo) as usize] += 1;
        }
        let edges = (lo..=hi + 1).map(|k| k as f64 * width).collect();
        Self { edges, counts }
    }

    /// Fixed log-spaced grid, trimmed to the occupied bins. Values beyond the
    /// grid land in the first or last bin.
    fn log_area(values_pct: &[f64]) -> Self {
        let last = (AREA_MAX_LOG10_PCT - AREA_MIN_LOG10_PCT) as usize * AREA_BINS_PER_DECADE - 1;
        let bin = |pct: f64| -> usize {
            if pct <= 0.0 {
                return 0;
            }
            let k = ((pct.log10() - f64::from(AREA_MIN_LOG10_PCT)) * AREA_BINS_PER_DECADE as f64).floor();
            (k.max(0.0) as usize).min(last)
        };
        let edge = |k: usize| 10f64.powf(f64::from(AREA_MIN_LOG10_PCT) + k as f64 / AREA_BINS_PER_DECADE as f64);
        let (lo, hi) = if values_pct.is_empty() {
            (0, 0)
        } else {
            (
                values_pct.iter().map(|&v| bin(v)).min().expect("non-empty"),
                values_pct.iter().map(|&v| bin(v)).max().expect("non-empty"),
            )
        };
        let mut counts = vec![0; hi - lo + 1];
        for &v in values_pct {
            counts[bin(v) - lo] += 1;
        }
        Self {
            edges: (lo..=hi + 1).map(edge).collect(),
            counts,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MegapixelSummary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub screenshots: usize,
    pub elements: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub name: String,
    pub num_screenshots: usize,
    pub num_elements: usize,
    pub avg_elements_per_screenshot: f64,
    pub max_elements_per_screenshot: usize,
    pub megapixels: MegapixelSummary,
    /// Mean over elements of `100 * element area / screenshot area`.
    pub mean_element_area_pct: f64,
    pub ui_category_counts: BTreeMap<String, usize>,
    pub uncategorized: usize,
    pub app_categories: BTreeMap<String, CategoryCounts>,
    pub resolution_hist: Histogram,
    pub relative_area_hist: Histogram,
    pub annotations_hist: Histogram,
}

/// Order-independent mean: values are summed in sorted order.
fn stable_mean(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn compute_stats(corpus: &Corpus) -> Result<CorpusStats, StatsError> {
    let shots = corpus.screenshots();
    if shots.is_empty() {
        return Err(StatsError::Empty);
    }
    let mut app_categories: BTreeMap<String, CategoryCounts> = BTreeMap::new();
    let mut megapixels = Vec::with_capacity(shots.len());
    let mut per_shot_counts = Vec::with_capacity(shots.len());
    for s in shots {
        let count = corpus.element_count_on(&s.id);
        let entry = app_categories.entry(s.category.clone()).or_default();
        entry.screenshots += 1;
        entry.elements += count;
        megapixels.push(s.megapixels());
        per_shot_counts.push(count as f64);
    }

    let mut ui_category_counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut uncategorized = 0;
    let mut area_pct = Vec::with_capacity(corpus.elements().len());
    for e in corpus.elements() {
        match e.ui_category {
            Some(c) => *ui_category_counts.entry(c.as_str().to_string()).or_default() += 1,
            None => uncategorized += 1,
        }
        let s = corpus.screenshot_of(e);
        let screen_area = f64::from(s.width) * f64::from(s.height);
        area_pct.push(100.0 * e.bbox.area().max(0.0) / screen_area);
    }

    let num_elements = corpus.elements().len();
    let min_mp = megapixels.iter().copied().fold(f64::INFINITY, f64::min);
    let max_mp = megapixels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(CorpusStats {
        name: corpus.name().to_string(),
        num_screenshots: shots.len(),
        num_elements,
        avg_elements_per_screenshot: num_elements as f64 / shots.len() as f64,
        max_elements_per_screenshot: per_shot_counts.iter().copied().fold(0.0, f64::max) as usize,
        resolution_hist: Histogram::linear(&megapixels, RESOLUTION_BIN_MP),
        annotations_hist: Histogram::linear(&per_shot_counts, ANNOTATION_BIN),
        relative_area_hist: Histogram::log_area(&area_pct),
        megapixels: MegapixelSummary {
            mean: stable_mean(megapixels),
            min: min_mp,
            max: max_mp,
        },
        mean_element_area_pct: stable_mean(area_pct),
        ui_category_counts,
        uncategorized,
        app_categories,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Table,
}

/// Serialize stats. The table uses the column names of the usual dataset
/// comparison table: S, E, Res Range, EleArea, #AvgE.
pub fn emit_report(stats: &CorpusStats, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(stats).expect("stats serialize") + "\n",
        ReportFormat::Table => {
            let headers = ["Dataset", "S", "E", "Res Range", "EleArea", "#AvgE"];
            let row = [
                stats.name.clone(),
                stats.num_screenshots.to_string(),
                stats.num_elements.to_string(),
                format!("({:.1}, {:.1})", stats.megapixels.min, stats.megapixels.max),
                format!("{:.2}%", stats.mean_element_area_pct),
                format!("{:.1}", stats.avg_elements_per_screenshot),
            ];
            let widths: Vec<usize> = headers
                .iter()
                .zip(&row)
                .map(|(h, r)| h.chars().count().max(r.chars().count()))
                .collect();
            let render = |cells: Vec<&str>| {
                cells
                    .iter()
                    .zip(&widths)
                    .map(|(c, w)| format!("{c:<w$}"))
                    .collect::<Vec<_>>()
                    .join("  ")
                    .trim_end()
                    .to_string()
            };
            format!(
                "{}\n{}\n",
                render(headers.to_vec()),
                render(row.iter().map(String::as_str).collect())
            )
        }
    }
}
