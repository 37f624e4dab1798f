//! Near-duplicate element collapsing.
//!
//! Two elements are duplicates when their labels match (exactly, or after
//! [`normalize_label`]) and the perceptual hashes of their crops are within
//! the Hamming threshold. Clusters are the transitive closure of that
//! relation. Each cluster keeps one representative, picked from a seeded
//! round-robin over screenshots so no single screen dominates the pool.

pub mod phash;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use petgraph::unionfind::UnionFind;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Screenshot, UiElement};
use crate::jsonl::{read_jsonl, write_jsonl, JsonlError};
pub use phash::{hamming, phash, GrayCrop, PerceptualHash};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    Exact,
    #[default]
    Normalized,
}

impl std::str::FromStr for LabelMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(Self::Exact),
            "normalized" => Ok(Self::Normalized),
            other => Err(format!("unknown label mode {other:?} (expected exact or normalized)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DedupConfig {
    pub hamming_threshold: u32,
    pub label_mode: LabelMode,
    pub min_crop_px: usize,
}

impl Default for DedupConfig {
    fn default() -> Self {
        Self {
            hamming_threshold: 5,
            label_mode: LabelMode::Normalized,
            min_crop_px: 8,
        }
    }
}

impl DedupConfig {
    pub fn validate(&self) -> Result<(), DedupError> {
        if self.hamming_threshold > 64 {
            return Err(DedupError::Threshold(self.hamming_threshold));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DedupError {
    #[error("hamming threshold {0} exceeds 64")]
    Threshold(u32),
    #[error("failed to build worker pool: {0}")]
    Pool(String),
}

/// Lowercase (Unicode-aware), trim, and collapse whitespace runs.
pub fn normalize_label(s: &str) -> String {
    s.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

fn label_key(label: &str, mode: LabelMode) -> String {
    match mode {
        LabelMode::Exact => label.to_string(),
        LabelMode::Normalized => normalize_label(label),
    }
}

/// An element ready for clustering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashedElement {
    pub element_id: String,
    pub screenshot_id: String,
    pub label: String,
    pub hash: PerceptualHash,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub representative: String,
    /// Member ids in input order.
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub representative: String,
    pub size: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupReport {
    /// Elements that were hashed and clustered.
    pub input_count: usize,
    pub unique_count: usize,
    /// Elements dropped because their screenshot could not be read.
    pub skipped_count: usize,
    pub skipped: Vec<String>,
    /// Cluster size -> number of clusters of that size.
    pub cluster_size_histogram: BTreeMap<usize, usize>,
    pub clusters: Vec<ClusterSummary>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DedupOutcome {
    /// Representatives in selection order.
    pub unique_ids: Vec<String>,
    /// Clusters in the same order as `unique_ids`.
    pub clusters: Vec<Cluster>,
    pub report: DedupReport,
}

/// Cluster pre-hashed elements and pick one representative per cluster.
pub fn cluster_hashed(items: &[HashedElement], cfg: &DedupConfig, seed: u64) -> DedupOutcome {
    let n = items.len();
    let mut uf = UnionFind::<usize>::new(n);

    let mut buckets: HashMap<String, Vec<usize>> = HashMap::new();
    for (i, item) in items.iter().enumerate() {
        buckets
            .entry(label_key(&item.label, cfg.label_mode))
            .or_default()
            .push(i);
    }
    for members in buckets.values() {
        // Identical hashes merge outright; only distinct hashes need pairwise checks.
        let mut by_hash: BTreeMap<PerceptualHash, usize> = BTreeMap::new();
        for &i in members {
            match by_hash.get(&items[i].hash) {
                Some(&first) => {
                    uf.union(first, i);
                }
                None => {
                    by_hash.insert(items[i].hash, i);
                }
            }
        }
        let distinct: Vec<(PerceptualHash, usize)> = by_hash.into_iter().collect();
        for (a, &(ha, ia)) in distinct.iter().enumerate() {
            for &(hb, ib) in &distinct[a + 1..] {
                if hamming(ha, hb) <= cfg.hamming_threshold {
                    uf.union(ia, ib);
                }
            }
        }
    }

    let rank = selection_rank(items, seed);
    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for i in 0..n {
        groups.entry(uf.find_mut(i)).or_default().push(i);
    }
    let mut clusters: Vec<(usize, Vec<usize>)> = groups
        .into_values()
        .map(|members| {
            let rep = *members.iter().min_by_key(|&&i| rank[i]).expect("non-empty cluster");
            (rep, members)
        })
        .collect();
    clusters.sort_by_key(|(rep, _)| rank[*rep]);

    let mut report = DedupReport {
        input_count: n,
        unique_count: clusters.len(),
        ..DedupReport::default()
    };
    let mut unique_ids = Vec::with_capacity(clusters.len());
    let mut out = Vec::with_capacity(clusters.len());
    for (rep, members) in clusters {
        let representative = items[rep].element_id.clone();
        *report.cluster_size_histogram.entry(members.len()).or_default() += 1;
        report.clusters.push(ClusterSummary {
            representative: representative.clone(),
            size: members.len(),
        });
        unique_ids.push(representative.clone());
        out.push(Cluster {
            representative,
            members: members.iter().map(|&i| items[i].element_id.clone()).collect(),
        });
    }
    DedupOutcome {
        unique_ids,
        clusters: out,
        report,
    }
}

/// Position of every item in a seeded round-robin over shuffled screenshots.
fn selection_rank(items: &[HashedElement], seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<&str> = Vec::new();
    let mut per_shot: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, item) in items.iter().enumerate() {
        per_shot
            .entry(item.screenshot_id.as_str())
            .or_insert_with(|| {
                order.push(item.screenshot_id.as_str());
                Vec::new()
            })
            .push(i);
    }
    order.shuffle(&mut rng);
    let mut queues: Vec<Vec<usize>> = order
        .iter()
        .map(|id| {
            let mut q = per_shot.remove(id).expect("screenshot listed once");
            q.shuffle(&mut rng);
            q.reverse();
            q
        })
        .collect();

    let mut rank = vec![0; items.len()];
    let mut next = 0;
    while next < items.len() {
        for q in queues.iter_mut() {
            if let Some(i) = q.pop() {
                rank[i] = next;
                next += 1;
            }
        }
    }
    rank
}

/// Pixel rectangle covering a box, at least one pixel wide and tall, inside the image.
fn crop_bounds(e: &UiElement, width: u32, height: u32) -> (u32, u32, u32, u32) {
    let clamp_lo = |v: f64, max: u32| (v.floor().max(0.0) as u32).min(max.saturating_sub(1));
    let x0 = clamp_lo(e.bbox.x1, width);
    let y0 = clamp_lo(e.bbox.y1, height);
    let x1 = (e.bbox.x2.ceil().min(f64::from(width)) as u32).max(x0 + 1);
    let y1 = (e.bbox.y2.ceil().min(f64::from(height)) as u32).max(y0 + 1);
    (x0, y0, x1, y1)
}

fn hash_screenshot(
    corpus: &Corpus,
    shot: &Screenshot,
    cfg: &DedupConfig,
) -> Result<Vec<(String, PerceptualHash)>, String> {
    let path: PathBuf = corpus.image_path(shot);
    let img = image::open(&path)
        .map_err(|e| format!("{}: {e}", path.display()))?
        .to_rgb8();
    corpus
        .elements_on(&shot.id)
        .map(|e| {
            let (x0, y0, x1, y1) = crop_bounds(e, img.width(), img.height());
            let crop = GrayCrop::from_rgb_region(&img, x0, y0, x1, y1).map_err(|err| format!("{}: {err}", e.id))?;
            Ok((e.id.clone(), phash(&crop, cfg.min_crop_px)))
        })
        .collect()
}

/// Hash every element crop (in parallel across screenshots) and cluster.
///
/// Screenshots whose image cannot be read are skipped with a warning; their
/// elements are listed in the report and left out of clustering.
pub fn dedup_elements(
    corpus: &Corpus,
    cfg: &DedupConfig,
    seed: u64,
    workers: usize,
) -> Result<DedupOutcome, DedupError> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| DedupError::Pool(e.to_string()))?;
    let per_shot: Vec<Result<Vec<(String, PerceptualHash)>, String>> = pool.install(|| {
        corpus
            .screenshots()
            .par_iter()
            .map(|s| hash_screenshot(corpus, s, cfg))
            .collect()
    });

    let mut hashes: HashMap<String, PerceptualHash> = HashMap::with_capacity(corpus.elements().len());
    for (shot, result) in corpus.screenshots().iter().zip(per_shot) {
        match result {
            Ok(list) => hashes.extend(list),
            Err(msg) => log::warn!(
                "skipping {} element(s) of screenshot {}: {msg}",
                corpus.element_count_on(&shot.id),
                shot.id
            ),
        }
    }
    let mut items = Vec::with_capacity(hashes.len());
    let mut skipped = Vec::new();
    for e in corpus.elements() {
        match hashes.get(&e.id) {
            Some(&hash) => items.push(HashedElement {
                element_id: e.id.clone(),
                screenshot_id: e.screenshot_id.clone(),
                label: e.label.clone(),
                hash,
            }),
            None => skipped.push(e.id.clone()),
        }
    }
    let mut outcome = cluster_hashed(&items, cfg, seed);
    outcome.report.skipped_count = skipped.len();
    outcome.report.skipped = skipped;
    Ok(outcome)
}

/// One line of the unique-id list handed to instruction synthesis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniqueId {
    pub element_id: String,
}

pub fn write_unique_ids(path: &Path, ids: &[String]) -> Result<(), JsonlError> {
    let rows: Vec<UniqueId> = ids.iter().map(|id| UniqueId { element_id: id.clone() }).collect();
    write_jsonl(path, &rows)
}

pub fn read_unique_ids(path: &Path) -> Result<Vec<String>, JsonlError> {
    Ok(read_jsonl::<UniqueId>(path)?
        .into_iter()
        .map(|u| u.element_id)
        .collect())
}
