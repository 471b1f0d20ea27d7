//! Run configuration: a JSON file, then environment, then flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use atlas_core::aggregate::Grouping;
use atlas_core::linkage::CandidateParams;
use atlas_core::numeric::sha256_hex;
use atlas_core::reweight::CoverageRule;
use atlas_core::validate::Thresholds;
use atlas_stats::ForestParams;
use serde::{Deserialize, Serialize};

pub const DEFAULT_SEED: u64 = 20_240_601;
pub const SEED_ENV: &str = "ATLAS_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Coverage {
    pub window_start: i32,
    pub window_end: i32,
    pub min_groups: usize,
}

impl Default for Coverage {
    fn default() -> Self {
        let r = CoverageRule::default();
        Coverage { window_start: *r.window.start(), window_end: *r.window.end(), min_groups: r.min_groups }
    }
}

impl Coverage {
    pub fn rule(&self) -> CoverageRule {
        CoverageRule { window: self.window_start..=self.window_end, min_groups: self.min_groups }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsConfig {
    pub span: f64,
    pub grid_points: usize,
    pub bins: usize,
    pub resamples: usize,
    pub level: f64,
    pub forest: ForestParams,
    pub shap_seeds: Vec<u64>,
    pub importance_repeats: usize,
}

impl Default for StatsConfig {
    fn default() -> Self {
        StatsConfig {
            span: 0.75,
            grid_points: 25,
            bins: atlas_stats::ale::DEFAULT_BINS,
            resamples: 200,
            level: 0.95,
            forest: ForestParams::default(),
            shap_seeds: vec![1, 2, 3, 4, 5],
            importance_repeats: 5,
        }
    }
}

/// Everything a run reads. Paths are relative to the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub labels_format: Option<String>,
    pub comparison_labels: Option<PathBuf>,
    pub paraphrase_variants: Vec<PathBuf>,
    pub registry: Option<PathBuf>,
    pub task_weights: Option<PathBuf>,
    pub bridge: Option<PathBuf>,
    pub bridge_variant: String,
    pub isco_digits: usize,
    pub graph: Option<PathBuf>,
    pub tasks: Option<PathBuf>,
    pub activities: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub votes: Option<PathBuf>,
    pub candidates: CandidateParams,
    pub votes_per_edge: u32,
    pub employment: Option<PathBuf>,
    pub coverage: Coverage,
    pub covariates: Option<PathBuf>,
    pub covariate_window: [i32; 2],
    pub lexicon: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    pub thresholds: Thresholds,
    pub divergence_groups: [String; 2],
    pub grouping: String,
    pub stats: StatsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            output_dir: None,
            labels: None,
            labels_format: None,
            comparison_labels: None,
            paraphrase_variants: Vec::new(),
            registry: None,
            task_weights: None,
            bridge: None,
            bridge_variant: "weighted".into(),
            isco_digits: 1,
            graph: None,
            tasks: None,
            activities: None,
            embeddings: None,
            votes: None,
            candidates: CandidateParams::default(),
            votes_per_edge: 3,
            employment: None,
            coverage: Coverage::default(),
            covariates: None,
            covariate_window: [2015, 2025],
            lexicon: None,
            stopwords: None,
            thresholds: Thresholds::default(),
            divergence_groups: ["low".into(), "high".into()],
            grouping: "income_group".into(),
            stats: StatsConfig::default(),
        }
    }
}

/// Resolved run settings shared by every command.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: RunConfig,
    pub base: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    pub digest: String,
    pub command: String,
}

impl Run {
    /// Precedence: flag, then `ATLAS_SEED`, then the config file. `apply`
    /// writes command-line overrides into the config before it is digested.
    pub fn resolve(
        config_path: Option<&Path>,
        seed_flag: Option<u64>,
        out_flag: Option<&Path>,
        command: &str,
        apply: impl FnOnce(&mut RunConfig),
    ) -> Result<Run> {
        let (mut config, base) = match config_path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("{}", p.display()))?;
                let cfg: RunConfig =
                    serde_json::from_str(&text).with_context(|| format!("{}: invalid config", p.display()))?;
                (cfg, p.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (RunConfig::default(), PathBuf::new()),
        };
        apply(&mut config);
        let env_seed = match std::env::var(SEED_ENV) {
            Ok(v) if !v.trim().is_empty() => {
                Some(v.trim().parse::<u64>().with_context(|| format!("{SEED_ENV}={v:?} is not an unsigned integer"))?)
            }
            _ => None,
        };
        let seed = seed_flag.or(env_seed).or(config.seed).unwrap_or(DEFAULT_SEED);
        config.seed = Some(seed);
        let out = match (out_flag, &config.output_dir) {
            (Some(o), _) => o.to_path_buf(),
            (None, Some(o)) => base.join(o),
            (None, None) => PathBuf::from("atlas-out"),
        };
        config.output_dir = None;
        let digest = config_digest(&config);
        let run = Run { config, base, out, seed, digest, command: command.to_string() };
        run.check_paths()?;
        Ok(run)
    }

    pub fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    /// A configured path, or an error naming the missing key.
    pub fn require(&self, value: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
        match value {
            Some(p) => Ok(self.path(p)),
            None => bail!("no {key} configured (set it in the config file or pass the flag)"),
        }
    }

    pub fn optional(&self, value: &Option<PathBuf>) -> Option<PathBuf> {
        value.as_deref().map(|p| self.path(p))
    }

    pub fn grouping(&self) -> Result<Grouping> {
        self.config.grouping.parse().map_err(anyhow::Error::msg)
    }

    fn check_paths(&self) -> Result<()> {
        let c = &self.config;
        let singles = [
            &c.labels,
            &c.comparison_labels,
            &c.registry,
            &c.task_weights,
            &c.bridge,
            &c.graph,
            &c.tasks,
            &c.activities,
            &c.embeddings,
            &c.votes,
            &c.employment,
            &c.covariates,
            &c.lexicon,
            &c.stopwords,
        ];
        for p in singles.into_iter().flatten().chain(&c.paraphrase_variants) {
            let full = self.path(p);
            if !full.exists() {
                bail!("{}: no such file", full.display());
            }
        }
        Ok(())
    }
}

/// Flag paths are relative to the working directory, config paths to the
/// config file, so flag values are made absolute before they are stored.
pub fn flag_path(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

/// Digest of the canonical JSON form. The output directory and worker
/// count are not part of the config, so they do not change it.
pub fn config_digest(config: &RunConfig) -> String {
    sha256_hex(serde_json::to_string(config).expect("config serializes").as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sead": 3}"#).is_err());
    }

    #[test]
    fn digest_tracks_content() {
        let a = RunConfig::default();
        let b = RunConfig { seed: Some(9), ..RunConfig::default() };
        assert_ne!(config_digest(&a), config_digest(&b));
        assert_eq!(config_digest(&a), config_digest(&a.clone()));
    }
}
