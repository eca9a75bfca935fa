//! Pipeline configuration: a sectioned `key = value` file where every key is
//! optional and defaults to the reference settings.

use std::path::Path;

use guitarflow_core::flowmatch::TrainConfig;
use guitarflow_core::odesolve::SolverKind;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub codec: CodecConfig,
    pub train: TrainSection,
    pub solver: SolverSection,
    pub amp: AmpConfig,
    pub synthdata: SynthSection,
    pub eval: EvalSection,
    pub stats: StatsSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 2025,
            paths: PathsConfig::default(),
            codec: CodecConfig::default(),
            train: TrainSection::default(),
            solver: SolverSection::default(),
            amp: AmpConfig::default(),
            synthdata: SynthSection::default(),
            eval: EvalSection::default(),
            stats: StatsSection::default(),
        }
    }
}

/// Directories, relative to the working directory unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub scores_dir: String,
    pub audio_dir: String,
    pub cache_dir: String,
    pub checkpoint_dir: String,
    pub reports_dir: String,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            scores_dir: "scores".into(),
            audio_dir: "audio".into(),
            cache_dir: "cache".into(),
            checkpoint_dir: "checkpoints".into(),
            reports_dir: "reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecConfig {
    pub dims: usize,
    pub chunk_seconds: f64,
    pub sample_rate: u32,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self { dims: 64, chunk_seconds: 4.0, sample_rate: 44_100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub lr: f32,
    pub epochs: usize,
    pub base_channels: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self { batch_size: 64, lr: 1e-4, epochs: 50, base_channels: 32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    /// `euler`, `rk4` or `dopri5`.
    pub kind: String,
    pub steps: usize,
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self { kind: "dopri5".into(), steps: 100, rtol: 1e-4, atol: 1e-4, max_steps: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AmpConfig {
    pub normalize_db: f64,
    pub drive: f64,
    /// Tone filter cutoff; 0 bypasses the filter.
    pub cutoff_hz: f64,
}

impl Default for AmpConfig {
    fn default() -> Self {
        Self { normalize_db: -9.0, drive: 6.0, cutoff_hz: 5_000.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n_scores: usize,
    pub bars: u32,
    pub test_fraction: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self { n_scores: 10, bars: 8, test_fraction: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// RBF bandwidth for KAD; 0 selects the median heuristic.
    pub kad_bandwidth: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { kad_bandwidth: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsSection {
    pub alpha: f64,
    /// Bonferroni comparison count; 0 uses the number of pairwise tests.
    pub comparisons: usize,
}

impl Default for StatsSection {
    fn default() -> Self {
        Self { alpha: 0.05, comparisons: 0 }
    }
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("config {}: {e}", path.display()))
    }

    pub fn validate(&self) -> Result<(), String> {
        let mut bad = Vec::new();
        if ![64, 1024].contains(&self.codec.dims) {
            bad.push(format!("codec.dims must be 64 or 1024, got {}", self.codec.dims));
        }
        if !(self.codec.chunk_seconds > 0.0) {
            bad.push("codec.chunk_seconds must be positive".to_string());
        }
        if self.codec.sample_rate < 8_000 {
            bad.push("codec.sample_rate must be at least 8000".to_string());
        }
        if self.train.batch_size == 0 || self.train.epochs == 0 || !(self.train.lr > 0.0) || self.train.base_channels == 0 {
            bad.push("train.batch_size, train.epochs, train.lr and train.base_channels must be positive".to_string());
        }
        if let Err(e) = self.solver_kind() {
            bad.push(e);
        }
        if !(self.amp.drive > 0.0) || self.amp.cutoff_hz < 0.0 {
            bad.push("amp.drive must be positive and amp.cutoff_hz non-negative".to_string());
        }
        if !(0.0..1.0).contains(&self.synthdata.test_fraction) || self.synthdata.bars == 0 {
            bad.push("synthdata.test_fraction must be in [0, 1) and synthdata.bars positive".to_string());
        }
        if self.eval.kad_bandwidth < 0.0 {
            bad.push("eval.kad_bandwidth must be non-negative".to_string());
        }
        if !(self.stats.alpha > 0.0 && self.stats.alpha < 1.0) {
            bad.push("stats.alpha must be in (0, 1)".to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(bad.join("; "))
        }
    }

    pub fn solver_kind(&self) -> Result<SolverKind, String> {
        let s = &self.solver;
        let kind = match s.kind.as_str() {
            "euler" => SolverKind::Euler { steps: s.steps },
            "rk4" => SolverKind::Rk4 { steps: s.steps },
            "dopri5" => SolverKind::Dopri5 { rtol: s.rtol, atol: s.atol, max_steps: s.max_steps },
            other => return Err(format!("solver.kind must be euler, rk4 or dopri5, got {other:?}")),
        };
        kind.validate().map_err(|e| e.to_string())?;
        Ok(kind)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.train.batch_size,
            lr: self.train.lr,
            epochs: self.train.epochs,
            // Offset so the shuffle stream differs from the weight-init stream.
            seed: self.seed.wrapping_add(1),
            dims: self.codec.dims,
            chunk_seconds: self.codec.chunk_seconds,
        }
    }

    /// Canonical text form; the hash is taken over this.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of [`Self::to_toml`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}
