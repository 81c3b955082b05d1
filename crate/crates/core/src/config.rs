//! Experiment configuration and the parameter file written by training.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Ensemble, MseMode, SystemSpec};
use crate::num::derive_seed;
use crate::sketch::SketchKind;
use crate::solver::{ParamSchedule, Variant};
use crate::unfold::{AdamConfig, LogEntry, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL: &str = "dupsista";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSpec {
    pub batch_size: usize,
    pub inner_loops: usize,
    pub adam: AdamConfig,
    pub incremental: bool,
    #[serde(default)]
    pub freeze_prefix: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    pub systems: usize,
    pub samples_per_system: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    /// Directory for outputs when no explicit path is given.
    pub dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Free-form notes keyed by field name; ignored by every command and by the config hash.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub doc: BTreeMap<String, String>,
    pub system: SystemSpec,
    /// Number of unrolled iterations `T`.
    pub iterations: usize,
    /// `null` keeps the default schedule instead of training.
    pub training: Option<TrainingSpec>,
    pub ensemble: EnsembleSpec,
    #[serde(default)]
    pub mse_mode: MseMode,
    pub seed: u64,
    pub outputs: Outputs,
}

impl Default for ExperimentConfig {
    /// The small system: n=256, m=128, l=64, P=2, σ²=0.01, batches of 50, 50 inner loops.
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            doc: BTreeMap::new(),
            system: SystemSpec {
                n: 256,
                m: 128,
                l: 64,
                variant: Variant::Psista { period: 2 },
                sketch_kind: SketchKind::Gaussian,
                sigma2: 0.01,
                p_nonzero: 0.05,
            },
            iterations: 40,
            training: Some(TrainingSpec {
                batch_size: 50,
                inner_loops: 50,
                adam: AdamConfig::with_learning_rate(1e-4),
                incremental: true,
                freeze_prefix: false,
            }),
            ensemble: EnsembleSpec {
                systems: 50,
                samples_per_system: 50,
            },
            mse_mode: MseMode::PerElement,
            seed: 1,
            outputs: Outputs { dir: "out".into() },
        }
    }
}

fn default_doc() -> BTreeMap<String, String> {
    [
        ("schema_version", "format version of this file"),
        ("system.n", "signal length"),
        ("system.m", "number of observations (rows of A, entries N(0,1))"),
        ("system.l", "sketch rows; ignored by ista"),
        ("system.variant", "{\"kind\":\"ista\"}, {\"kind\":\"sketched_ista\"} or {\"kind\":\"psista\",\"period\":P}; dense update when (t-1) mod P == 0"),
        ("system.sketch_kind", "gaussian (entries N(0,1/l)) or count (one +-1 per column)"),
        ("system.sigma2", "observation noise variance"),
        ("system.p_nonzero", "probability that a signal entry is N(0,1) rather than 0"),
        ("iterations", "unrolled depth T"),
        ("training", "null to keep eta_t = lambda_t = 1/lambda_max(A^T A); otherwise mini-batch Adam"),
        ("training.adam", "learning_rate required; beta1, beta2, eps default to 0.9, 0.999, 1e-8"),
        ("training.incremental", "grow the depth one layer per stage, retraining all layers"),
        ("training.freeze_prefix", "with incremental, train only the newest layer per stage"),
        ("ensemble", "evaluation draws: systems (A, S) pairs, each with samples_per_system signals"),
        ("mse_mode", "per_element (divide by n) or total"),
        ("seed", "master seed; evaluation and analysis derive their own seeds from it"),
        ("outputs.dir", "default directory for files when --out is not given"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

impl ExperimentConfig {
    /// Default config with every field documented in `doc`.
    pub fn documented() -> Self {
        Self {
            doc: default_doc(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.system.validate()?;
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        if self.ensemble.systems == 0 || self.ensemble.samples_per_system == 0 {
            return Err(Error::Config("ensemble counts must be >= 1".into()));
        }
        if let Some(tr) = &self.training {
            if tr.batch_size == 0 {
                return Err(Error::Config("training.batch_size must be >= 1".into()));
            }
            tr.adam.validate()?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// SHA-256 of the compact JSON form without `doc`, as 16 hex digits.
    pub fn hash(&self) -> String {
        let stripped = Self {
            doc: BTreeMap::new(),
            ..self.clone()
        };
        let bytes = serde_json::to_vec(&stripped).expect("config serializes");
        short_hash(&bytes)
    }

    pub fn meta(&self) -> Meta {
        Meta::new(self.hash(), self.seed)
    }

    pub fn train_config(&self) -> Option<TrainConfig> {
        self.training.map(|tr| TrainConfig {
            system: self.system,
            iterations: self.iterations,
            batch_size: tr.batch_size,
            inner_loops: tr.inner_loops,
            adam: tr.adam,
            incremental: tr.incremental,
            freeze_prefix: tr.freeze_prefix,
            seed: self.seed,
        })
    }

    /// Evaluation ensemble, seeded apart from training.
    pub fn eval_ensemble(&self) -> Ensemble {
        Ensemble {
            systems: self.ensemble.systems,
            samples_per_system: self.ensemble.samples_per_system,
            seed: derive_seed(self.seed, "eval"),
        }
    }
}

pub fn short_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Provenance stamped on every output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Meta {
    pub fn new(config_hash: String, seed: u64) -> Self {
        Self {
            tool: TOOL.into(),
            version: VERSION.into(),
            config_hash,
            seed,
        }
    }

    /// First line of every CSV output.
    pub fn csv_comment(&self) -> String {
        format!(
            "# {} {} config_hash={} seed={}",
            self.tool, self.version, self.config_hash, self.seed
        )
    }
}

/// Training log as CSV rows `stage,inner,loss` (no comment line).
pub fn log_csv(log: &[LogEntry]) -> String {
    let mut s = String::from("stage,inner,loss\n");
    for e in log {
        s.push_str(&format!("{},{},{}\n", e.stage, e.inner, e.loss));
    }
    s
}

/// Learned or default parameters together with what produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    pub meta: Meta,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "P")]
    pub p: usize,
    pub variant: Variant,
    pub l: usize,
    pub n: usize,
    pub m: usize,
    pub sketch_kind: SketchKind,
    pub etas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub training_config: Option<TrainConfig>,
    /// SHA-256 prefix of the training log CSV; absent for untrained parameters.
    pub training_log_digest: Option<String>,
}

impl ParamsFile {
    pub fn new(
        config: &ExperimentConfig,
        schedule: &ParamSchedule,
        training_config: Option<TrainConfig>,
        log: Option<&[LogEntry]>,
    ) -> Self {
        let sys = &config.system;
        Self {
            meta: config.meta(),
            t: schedule.len(),
            p: sys.variant.period(),
            variant: sys.variant,
            l: sys.l,
            n: sys.n,
            m: sys.m,
            sketch_kind: sys.sketch_kind,
            etas: schedule.etas().to_vec(),
            lambdas: schedule.lambdas().to_vec(),
            training_config,
            training_log_digest: log.map(|l| short_hash(log_csv(l).as_bytes())),
        }
    }

    pub fn schedule(&self) -> Result<ParamSchedule> {
        if self.etas.len() != self.t {
            return Err(Error::Config(format!(
                "params T={} but {} step sizes",
                self.t,
                self.etas.len()
            )));
        }
        ParamSchedule::new(self.etas.clone(), self.lambdas.clone())
    }

    /// System spec these parameters were produced for, with the config's noise and signal model.
    pub fn system(&self, config: &ExperimentConfig) -> SystemSpec {
        SystemSpec {
            n: self.n,
            m: self.m,
            l: self.l,
            variant: self.variant,
            sketch_kind: self.sketch_kind,
            ..config.system
        }
    }

    /// Rejects parameters whose dimensions or depth differ from the config.
    pub fn check_compatible(&self, config: &ExperimentConfig, same_variant: bool) -> Result<()> {
        let sys = &config.system;
        let mut problems = Vec::new();
        if (self.n, self.m) != (sys.n, sys.m) {
            problems.push(format!(
                "(n, m) = ({}, {}) vs config ({}, {})",
                self.n, self.m, sys.n, sys.m
            ));
        }
        if self.t != config.iterations {
            problems.push(format!("T = {} vs config {}", self.t, config.iterations));
        }
        if same_variant && (self.variant != sys.variant || self.l != sys.l || self.sketch_kind != sys.sketch_kind) {
            problems.push(format!(
                "variant {} (l={}, {}) vs config {} (l={}, {})",
                self.variant, self.l, self.sketch_kind, sys.variant, sys.l, sys.sketch_kind
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "params do not match config: {}",
                problems.join("; ")
            )))
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let p: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        p.schedule()?;
        Ok(p)
    }
}
