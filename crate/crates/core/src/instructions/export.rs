//! SFT export, RL subset selection and the on-disk instruction pool.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::templates::TEMPLATE_SET_VERSION;
use super::{element_seed, InstructionKind, InstructionSample};
use crate::corpus::{BoundingBox, Corpus};
use crate::geometry::{point_in_box, Point};
use crate::jsonl::{read_jsonl, write_jsonl, JsonlError};

pub const POOL_MANIFEST: &str = "manifest.json";
pub const POOL_SAMPLES: &str = "samples.jsonl";
pub const POOL_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("sample {sample_id} refers to unknown element {element_id}")]
    UnresolvedElement { sample_id: String, element_id: String },
    #[error("only {available} unseen element(s) available, {requested} requested")]
    InsufficientUnseen { available: usize, requested: usize },
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("{path}: {message}")]
    Pool { path: PathBuf, message: String },
}

/// One supervised example: predict `target_point` on `image`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub image: String,
    pub instruction: String,
    pub target_point: Point,
    pub target_box: BoundingBox,
    pub kind: InstructionKind,
    pub element_id: String,
}

pub fn to_sft_records(dataset: &[InstructionSample], corpus: &Corpus) -> Result<Vec<SftRecord>, ExportError> {
    let lookup = corpus.element_lookup();
    dataset
        .iter()
        .map(|s| {
            let e = lookup
                .get(s.element_id.as_str())
                .map(|&i| &corpus.elements()[i])
                .ok_or_else(|| ExportError::UnresolvedElement {
                    sample_id: s.id.clone(),
                    element_id: s.element_id.clone(),
                })?;
            let (cx, cy) = e.bbox.center();
            Ok(SftRecord {
                image: corpus.image_path(corpus.screenshot_of(e)).display().to_string(),
                instruction: s.instruction.clone(),
                target_point: Point { u: cx, v: cy },
                target_box: e.bbox,
                kind: s.kind,
                element_id: e.id.clone(),
            })
        })
        .collect()
}

/// Resolve every sample against the corpus, then write JSONL.
pub fn export_sft(dataset: &[InstructionSample], corpus: &Corpus, out: &Path) -> Result<Vec<SftRecord>, ExportError> {
    let records = to_sft_records(dataset, corpus)?;
    write_jsonl(out, &records)?;
    Ok(records)
}

pub fn load_sft(path: &Path) -> Result<Vec<SftRecord>, ExportError> {
    Ok(read_jsonl(path)?)
}

/// `k` ids drawn uniformly from `pool` minus `sft_used`, in pool order.
/// Repeated pool ids count once.
pub fn select_rl_unseen(
    pool: &[String],
    sft_used: &HashSet<String>,
    k: usize,
    seed: u64,
) -> Result<Vec<String>, ExportError> {
    let mut seen = HashSet::new();
    let unseen: Vec<&String> = pool
        .iter()
        .filter(|id| !sft_used.contains(*id) && seen.insert(id.as_str()))
        .collect();
    if unseen.len() < k {
        return Err(ExportError::InsufficientUnseen {
            available: unseen.len(),
            requested: k,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, unseen.len(), k).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| unseen[i].clone()).collect())
}

/// One pool sample per selected element, drawn with the element's own seed.
/// Elements without samples are skipped.
pub fn pick_samples_for(selected: &[String], pool: &[InstructionSample], seed: u64) -> Vec<InstructionSample> {
    let mut by_element: HashMap<&str, Vec<&InstructionSample>> = HashMap::new();
    for s in pool {
        by_element.entry(s.element_id.as_str()).or_default().push(s);
    }
    selected
        .iter()
        .filter_map(|id| {
            let options = by_element.get(id.as_str())?;
            let mut rng = ChaCha8Rng::seed_from_u64(element_seed(seed, id));
            Some(options[rng.random_range(0..options.len())].clone())
        })
        .collect()
}

/// Distinct element ids of a pool, in first-seen order.
pub fn pool_element_ids(pool: &[InstructionSample]) -> Vec<String> {
    let mut seen = HashSet::new();
    pool.iter()
        .filter(|s| seen.insert(s.element_id.as_str()))
        .map(|s| s.element_id.clone())
        .collect()
}

/// Keep the records whose predicted point misses the target box and return a
/// seeded uniform subset of at most `k` of them, in input order.
pub fn rejection_sample_errors(records: &[(SftRecord, Point)], k: usize, seed: u64) -> Vec<SftRecord> {
    let errors: Vec<&SftRecord> = records
        .iter()
        .filter(|(r, p)| !point_in_box(*p, &r.target_box))
        .map(|(r, _)| r)
        .collect();
    let n = k.min(errors.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, errors.len(), n).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| errors[i].clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolManifest {
    pub version: u32,
    pub corpus: String,
    pub corpus_root: String,
    pub seed: u64,
    pub template_set_version: u32,
    pub counts: BTreeMap<InstructionKind, usize>,
    pub samples_file: String,
}

impl PoolManifest {
    pub fn describe(corpus: &Corpus, seed: u64, samples: &[InstructionSample]) -> Self {
        let mut counts = BTreeMap::new();
        for s in samples {
            *counts.entry(s.kind).or_insert(0) += 1;
        }
        Self {
            version: POOL_VERSION,
            corpus: corpus.name().to_string(),
            corpus_root: corpus.root().display().to_string(),
            seed,
            template_set_version: TEMPLATE_SET_VERSION,
            counts,
            samples_file: POOL_SAMPLES.to_string(),
        }
    }
}

pub fn write_pool(dir: &Path, manifest: &PoolManifest, samples: &[InstructionSample]) -> Result<(), ExportError> {
    let pool_err = |e: std::io::Error| ExportError::Pool {
        path: dir.to_path_buf(),
        message: e.to_string(),
    };
    std::fs::create_dir_all(dir).map_err(pool_err)?;
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes") + "\n";
    std::fs::write(dir.join(POOL_MANIFEST), text).map_err(pool_err)?;
    write_jsonl(&dir.join(&manifest.samples_file), samples)?;
    Ok(())
}

pub fn load_pool(dir: &Path) -> Result<(PoolManifest, Vec<InstructionSample>), ExportError> {
    let path = dir.join(POOL_MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| ExportError::Pool {
        path: path.clone(),
        message: e.to_string(),
    })?;
    let manifest: PoolManifest = serde_json::from_str(&text).map_err(|e| ExportError::Pool {
        path: path.clone(),
        message: e.to_string(),
    })?;
    if manifest.version != POOL_VERSION {
        return Err(ExportError::Pool {
            path,
            message: format!("unsupported pool version {}", manifest.version),
        });
    }
    let samples = read_jsonl(&dir.join(&manifest.samples_file))?;
    Ok((manifest, samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tests::{elem, shot};
    use crate::instructions::{Provenance, Subkind};

    fn sample(id: &str, element: &str) -> InstructionSample {
        InstructionSample {
            id: id.into(),
            screenshot_id: "s".into(),
            element_id: element.into(),
            instruction: format!("Click {element}"),
            kind: InstructionKind::Direct,
            subkind: Subkind::General,
            provenance: Provenance::Template,
            anchors: vec![],
        }
    }

    fn corpus() -> Corpus {
        Corpus::new(
            "t",
            "/data/c",
            vec![shot("s", 100, 100)],
            vec![
                elem("e1", "s", [10.0, 20.0, 30.0, 40.0], "a"),
                elem("e2", "s", [5.0, 5.0, 5.0, 5.0], "b"),
                elem("e3", "s", [0.1, 0.2, 0.7, 0.3], "c"),
            ],
        )
        .unwrap()
    }

    #[test]
    fn targets_are_box_centres() {
        let r = to_sft_records(&[sample("x", "e1"), sample("y", "e2")], &corpus()).unwrap();
        assert_eq!(r[0].target_point, Point { u: 20.0, v: 30.0 });
        assert_eq!(r[1].target_point, Point { u: 5.0, v: 5.0 });
        assert!(r[0].image.starts_with("/data/c"));
    }

    #[test]
    fn unresolved_element_is_an_error() {
        assert!(matches!(
            to_sft_records(&[sample("x", "nope")], &corpus()),
            Err(ExportError::UnresolvedElement { .. })
        ));
    }

    #[test]
    fn export_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sft.jsonl");
        let written = export_sft(&[sample("x", "e1"), sample("y", "e3")], &corpus(), &path).unwrap();
        assert_eq!(load_sft(&path).unwrap(), written);
        for r in &written {
            assert!(point_in_box(r.target_point, &r.target_box));
        }
    }

    #[test]
    fn unseen_selection() {
        let pool: Vec<String> = (0..100).map(|i| format!("e{i}")).collect();
        let used: HashSet<String> = pool[..90].iter().cloned().collect();
        assert_eq!(select_rl_unseen(&pool, &used, 10, 1).unwrap(), pool[90..].to_vec());
        assert!(select_rl_unseen(&pool, &used, 0, 1).unwrap().is_empty());
        let err = select_rl_unseen(&pool, &used, 11, 1).unwrap_err();
        assert!(matches!(
            err,
            ExportError::InsufficientUnseen {
                available: 10,
                requested: 11
            }
        ));

        let none = HashSet::new();
        let a = select_rl_unseen(&pool, &none, 10, 5).unwrap();
        assert_eq!(a, select_rl_unseen(&pool, &none, 10, 5).unwrap());
        assert_eq!(a.iter().collect::<HashSet<_>>().len(), 10);
    }

    #[test]
    fn error_mining() {
        let recs = to_sft_records(
            &[
                sample("a", "e1"),
                sample("b", "e1"),
                sample("c", "e1"),
                sample("d", "e1"),
            ],
            &corpus(),
        )
        .unwrap();
        let hit = Point { u: 15.0, v: 25.0 };
        let miss = Point { u: 90.0, v: 90.0 };
        let pairs: Vec<(SftRecord, Point)> = recs.iter().cloned().zip([hit, miss, hit, miss]).collect();
        let errors = rejection_sample_errors(&pairs, 10, 0);
        assert_eq!(errors.len(), 2);
        assert_eq!(errors[0].instruction, recs[1].instruction);
        assert_eq!(rejection_sample_errors(&pairs, 1, 0).len(), 1);

        let all_hit: Vec<(SftRecord, Point)> = recs.iter().cloned().map(|r| (r, hit)).collect();
        assert!(rejection_sample_errors(&all_hit, 10, 0).is_empty());
    }

    #[test]
    fn rl_sample_picking() {
        let pool = vec![sample("x1", "e1"), sample("x2", "e1"), sample("y", "e2")];
        assert_eq!(pool_element_ids(&pool), vec!["e1", "e2"]);
        let ids = vec!["e2".to_string(), "e1".to_string(), "zz".to_string()];
        let a = pick_samples_for(&ids, &pool, 3);
        assert_eq!(a.len(), 2);
        assert_eq!(a[0].id, "y");
        assert_eq!(a[1].element_id, "e1");
        assert_eq!(a, pick_samples_for(&ids, &pool, 3));
    }

    #[test]
    fn pool_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let samples = vec![sample("x", "e1")];
        let m = PoolManifest::describe(&corpus(), 7, &samples);
        write_pool(dir.path(), &m, &samples).unwrap();
        let (m2, s2) = load_pool(dir.path()).unwrap();
        assert_eq!(m2, m);
        assert_eq!(s2, samples);
        assert_eq!(m.counts[&InstructionKind::Direct], 1);
    }
}
