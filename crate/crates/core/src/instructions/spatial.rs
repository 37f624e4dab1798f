//! Relative-position relations between a target element and labelled anchors.
//!
//! `RightOf` means the target sits to the right of its anchor. An anchor
//! qualifies for a horizontal relation when it lies entirely on that side of
//! the target and the two boxes overlap vertically by at least
//! `min_overlap_frac` of the shorter height; vertical relations swap the axes.
//! Only the nearest qualifying anchors (ties included) are considered, and a
//! relation is emitted only when such an anchor also has a reliable label. A
//! farther anchor is never promoted, since the instruction would then describe
//! the unlabelled element in between.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{BoundingBox, UiElement};
use crate::dedup::normalize_label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    LeftOf,
    RightOf,
    Above,
    Below,
    Between,
}

impl Relation {
    pub const SINGLE: [Relation; 4] = [Relation::RightOf, Relation::LeftOf, Relation::Above, Relation::Below];

    pub fn anchor_count(self) -> usize {
        if self == Relation::Between {
            2
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpatialConfig {
    /// Largest gap on either side for a `Between` relation.
    pub max_gap_px: f64,
    pub min_overlap_frac: f64,
    pub max_label_chars: usize,
}

impl Default for SpatialConfig {
    fn default() -> Self {
        Self {
            max_gap_px: 200.0,
            min_overlap_frac: 0.5,
            max_label_chars: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpatialRelation {
    pub relation: Relation,
    /// One anchor id, or left then right anchor for `Between`.
    pub anchors: Vec<String>,
}

fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    a1.min(b1) - a0.max(b0)
}

/// Gap between target and anchor when the anchor qualifies geometrically for
/// a single-anchor relation.
pub fn relation_gap(
    relation: Relation,
    target: &BoundingBox,
    anchor: &BoundingBox,
    cfg: &SpatialConfig,
) -> Option<f64> {
    let (t, a) = (target, anchor);
    let v_ok = || overlap(t.y1, t.y2, a.y1, a.y2) >= cfg.min_overlap_frac * t.height().min(a.height());
    let h_ok = || overlap(t.x1, t.x2, a.x1, a.x2) >= cfg.min_overlap_frac * t.width().min(a.width());
    match relation {
        Relation::RightOf if a.x2 <= t.x1 && v_ok() => Some(t.x1 - a.x2),
        Relation::LeftOf if t.x2 <= a.x1 && v_ok() => Some(a.x1 - t.x2),
        Relation::Below if a.y2 <= t.y1 && h_ok() => Some(t.y1 - a.y2),
        Relation::Above if t.y2 <= a.y1 && h_ok() => Some(a.y1 - t.y2),
        _ => None,
    }
}

/// Anchors are usable when their label is short, non-empty and unique among
/// the elements of the screenshot.
pub fn reliable_anchor(e: &UiElement, label_counts: &HashMap<String, usize>, cfg: &SpatialConfig) -> bool {
    let label = e.label.trim();
    let norm = normalize_label(label);
    !norm.is_empty()
        && label.chars().count() <= cfg.max_label_chars
        && label_counts.get(&norm).copied().unwrap_or(0) == 1
}

pub fn label_counts<'a>(elements: impl IntoIterator<Item = &'a UiElement>) -> HashMap<String, usize> {
    let mut counts = HashMap::new();
    for e in elements {
        *counts.entry(normalize_label(&e.label)).or_insert(0) += 1;
    }
    counts
}

/// Nearest qualifying anchors for `relation` with their gap.
fn nearest<'a>(
    relation: Relation,
    target: &UiElement,
    others: &[&'a UiElement],
    cfg: &SpatialConfig,
) -> (f64, Vec<&'a UiElement>) {
    let mut best = f64::INFINITY;
    let mut found = Vec::new();
    for &a in others {
        let Some(gap) = relation_gap(relation, &target.bbox, &a.bbox, cfg) else {
            continue;
        };
        if gap < best {
            best = gap;
            found.clear();
        }
        if gap == best {
            found.push(a);
        }
    }
    (best, found)
}

/// Every relation that describes `target` unambiguously on its screenshot.
/// Elements from other screenshots and the target itself are ignored.
pub fn spatial_relations(target: &UiElement, all: &[&UiElement], cfg: &SpatialConfig) -> Vec<SpatialRelation> {
    let same_shot: Vec<&UiElement> = all
        .iter()
        .copied()
        .filter(|e| e.screenshot_id == target.screenshot_id)
        .collect();
    let counts = label_counts(same_shot.iter().copied());
    let others: Vec<&UiElement> = same_shot.iter().copied().filter(|e| e.id != target.id).collect();

    let mut out = Vec::new();
    let mut nearest_by_relation = HashMap::new();
    for relation in Relation::SINGLE {
        let (gap, anchors) = nearest(relation, target, &others, cfg);
        let reliable: Vec<&UiElement> = anchors
            .into_iter()
            .filter(|a| reliable_anchor(a, &counts, cfg))
            .collect();
        for a in &reliable {
            out.push(SpatialRelation {
                relation,
                anchors: vec![a.id.clone()],
            });
        }
        nearest_by_relation.insert(relation, (gap, reliable));
    }

    let (left_gap, left) = &nearest_by_relation[&Relation::RightOf];
    let (right_gap, right) = &nearest_by_relation[&Relation::LeftOf];
    if *left_gap <= cfg.max_gap_px && *right_gap <= cfg.max_gap_px {
        for a in left {
            for b in right {
                out.push(SpatialRelation {
                    relation: Relation::Between,
                    anchors: vec![a.id.clone(), b.id.clone()],
                });
            }
        }
    }
    out
}
