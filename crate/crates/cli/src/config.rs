//! Run configuration: defaults, overlaid by an optional JSON file, overlaid
//! by command-line flags.

use std::path::{Path, PathBuf};

use groundkit::dedup::DedupConfig;
use groundkit::evaluation::{CoordSpace, PairPolicy};
use groundkit::instructions::{MixSpec, SynthConfig};
use serde::{Deserialize, Serialize};

pub const ENV_WORKERS: &str = "GROUNDKIT_WORKERS";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub coord_space: Option<CoordSpace>,
    pub pair_policy: PairPolicy,
    pub exclusive_bounds: bool,
    pub strict_ids: bool,
    pub by: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardServerSection {
    pub listen: Option<String>,
    pub pair_policy: PairPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlSection {
    pub k: usize,
}

impl Default for RlSection {
    fn default() -> Self {
        Self { k: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GlobalConfig {
    pub corpus: Option<PathBuf>,
    pub seed: u64,
    pub workers: Option<usize>,
    pub log_level: String,
    pub dedup: DedupConfig,
    pub synth: SynthConfig,
    pub mix: MixSpec,
    pub eval: EvalSection,
    pub reward_server: RewardServerSection,
    pub rl: RlSection,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            seed: 0,
            workers: None,
            log_level: "info".into(),
            dedup: DedupConfig::default(),
            synth: SynthConfig::default(),
            mix: MixSpec::default(),
            eval: EvalSection::default(),
            reward_server: RewardServerSection::default(),
            rl: RlSection::default(),
        }
    }
}

impl GlobalConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("config {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("config {}: {e}", path.display()))
    }

    /// Flag, then `GROUNDKIT_WORKERS`, then the config file, then the number
    /// of available cores.
    pub fn resolve_workers(&mut self, flag: Option<usize>) -> Result<(), String> {
        let env = match std::env::var(ENV_WORKERS) {
            Ok(v) if !v.trim().is_empty() => Some(
                v.trim()
                    .parse::<usize>()
                    .map_err(|e| format!("{ENV_WORKERS}={v:?}: {e}"))?,
            ),
            _ => None,
        };
        let n = flag
            .or(env)
            .or(self.workers)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        if n == 0 {
            return Err("worker count must be at least 1".into());
        }
        self.workers = Some(n);
        Ok(())
    }

    pub fn workers(&self) -> usize {
        self.workers.unwrap_or(1)
    }
}
