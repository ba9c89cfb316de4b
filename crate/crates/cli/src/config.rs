//! Experiment configuration (JSON).

use std::path::{Path, PathBuf};

use mpf_core::envs::{ContextSpec, ContextVector, EnvInstance, Environment};
use mpf_core::sac::TrainConfig;
use mpf_core::selection::IndexConfig;
use mpf_core::tpe::GenerationConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, IoContext};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegretConfig {
    pub pools: usize,
    pub pool_size: usize,
    /// Held-out contexts per candidate; `None` uses all of them.
    pub heldout_contexts: Option<usize>,
    /// Generation trials per context; `None` uses `generation.k_max`.
    pub k_max: Option<usize>,
}

impl Default for RegretConfig {
    fn default() -> Self {
        Self {
            pools: 1000,
            pool_size: 5,
            heldout_contexts: None,
            k_max: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `linerunner_dir`, `linerunner_vel`, or `ballbounce32`.
    pub env: String,
    /// Bundled spec name or a JSON file relative to the config; defaults to
    /// the environment's own context space.
    pub context_spec: Option<String>,
    pub train: TrainConfig,
    /// Number of candidate policies K.
    pub candidates: usize,
    /// Size of the selection context set |C|.
    pub context_set_size: usize,
    pub index: IndexConfig,
    pub generation: GenerationConfig,
    pub heldout_contexts: usize,
    pub heldout_seed: u64,
    pub regret: RegretConfig,
    pub out: Option<PathBuf>,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: "linerunner_dir".into(),
            context_spec: None,
            train: TrainConfig::default(),
            candidates: 5,
            context_set_size: 2,
            index: IndexConfig::default(),
            generation: GenerationConfig::default(),
            heldout_contexts: 32,
            heldout_seed: 0,
            regret: RegretConfig::default(),
            out: None,
            seed: 0,
        }
    }
}

/// A validated configuration with its resolved context space.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub spec: ContextSpec,
    pub out: PathBuf,
    /// SHA-256 of the effective configuration.
    pub config_hash: String,
}

impl Experiment {
    pub fn load(path: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).at(path)?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| CliError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        let base = path.parent().unwrap_or(Path::new("."));
        let out = out.or_else(|| cfg.out.clone().map(|o| base.join(o)));
        let out = out.ok_or_else(|| CliError::Config {
            path: path.to_path_buf(),
            msg: "no output directory: set `out` or pass --out".into(),
        })?;
        Self::new(cfg, base, out).map_err(|e| match e {
            CliError::Config { msg, .. } => CliError::Config {
                path: path.to_path_buf(),
                msg,
            },
            other => other,
        })
    }

    /// `base` resolves a relative `context_spec` path.
    pub fn new(cfg: ExperimentConfig, base: &Path, out: PathBuf) -> Result<Self, CliError> {
        let bad = |msg: String| CliError::Config {
            path: PathBuf::from("<config>"),
            msg,
        };
        let env = EnvInstance::by_name(&cfg.env).map_err(|_| bad(format!("unknown env `{}`", cfg.env)))?;
        let spec = match &cfg.context_spec {
            None => env.context_spec().clone(),
            Some(name) if ContextSpec::bundled_names().any(|n| n == name) => ContextSpec::bundled(name)?,
            Some(file) => {
                let p = base.join(file);
                if !p.exists() {
                    return Err(bad(format!("context spec file {} does not exist", p.display())));
                }
                ContextSpec::from_json(&std::fs::read_to_string(&p).at(&p)?)?
            }
        };
        if spec.len() != env.context_dim() {
            return Err(bad(format!(
                "context spec has {} dims but {} expects {}",
                spec.len(),
                cfg.env,
                env.context_dim()
            )));
        }
        if cfg.candidates == 0 {
            return Err(bad("candidates must be at least 1".into()));
        }
        if cfg.context_set_size == 0 {
            return Err(bad("context_set_size must be at least 1".into()));
        }
        if cfg.heldout_contexts == 0 {
            return Err(bad("heldout_contexts must be at least 1".into()));
        }
        if cfg.regret.pool_size == 0 || cfg.regret.pools == 0 {
            return Err(bad("regret pools and pool_size must be positive".into()));
        }
        cfg.train.validate().map_err(|e| bad(e.to_string()))?;
        let hashed = ExperimentConfig {
            out: None,
            ..cfg.clone()
        };
        let canonical = serde_json::to_string(&hashed).expect("config serializes");
        let config_hash = format!("{:x}", Sha256::digest(canonical.as_bytes()));
        Ok(Self {
            cfg,
            spec,
            out,
            config_hash,
        })
    }

    pub fn env(&self) -> EnvInstance {
        EnvInstance::by_name(&self.cfg.env).expect("validated env name")
    }

    pub fn candidate_seed(&self, k: usize) -> u64 {
        self.cfg.seed.wrapping_add(k as u64)
    }

    pub fn candidate_seeds(&self) -> Vec<u64> {
        (0..self.cfg.candidates).map(|k| self.candidate_seed(k)).collect()
    }

    /// Selection context set: every discrete combination when their number
    /// equals |C|, otherwise |C| training-distribution draws.
    pub fn context_set(&self) -> Vec<ContextVector> {
        let n = self.cfg.context_set_size;
        match self.spec.combinations() {
            Some(all) if all.len() == n => all,
            _ => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, STREAM_CONTEXT_SET, 0));
                (0..n).map(|_| self.spec.sample(&mut rng)).collect()
            }
        }
    }

    pub fn heldout(&self) -> Vec<ContextVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.heldout_seed);
        (0..self.cfg.heldout_contexts)
            .map(|_| self.spec.sample_heldout(&mut rng))
            .collect()
    }
}

pub const STREAM_CONTEXT_SET: u64 = 1;
pub const STREAM_INDEX: u64 = 2;
pub const STREAM_GENERATE: u64 = 3;
pub const STREAM_REGRET: u64 = 4;

/// Independent per-purpose seed derived from the global seed.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(u128::from(index) * 2);
    rng.random()
}
