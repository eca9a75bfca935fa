//! The six pipeline commands over a working directory.
//!
//! Layout under the working directory (names configurable in `[paths]`):
//! `scores/<stem>.gftab`, `audio/{train,test}/{render,real,guitarflow}/<stem>.wav`,
//! `cache/{render,real}/<stem>.chunk<k>.lat`, `checkpoints/model.ckpt`,
//! `checkpoints/loss_history.csv`, `reports/*.csv`.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use guitarflow_core::audio::{read_wav, write_wav, AudioBuffer, WavFormat};
use guitarflow_core::audiodist::{embed, fad, kad, kad_with_bandwidth, recon_distance, EmbeddingSet, MetricReport};
use guitarflow_core::fixtures::random_score;
use guitarflow_core::flowmatch::{loss_history_csv, train_with, transfer_latent, FlowDataset, LossRecord};
use guitarflow_core::latentcodec::{
    chunk, chunk_file_name, chunk_len, dechunk, decode, encode, load_latent, save_latent, AudioChunk, ChunkPair, LatentSeq,
};
use guitarflow_core::mosstats::{analyze, bonferroni, mos_csv, mos_summary, results_csv, NamedResult, RatingTable};
use guitarflow_core::neuralnet::{load_checkpoint, save_checkpoint, AdamState, Checkpoint, UNet, UNetConfig, VelocityModel};
use guitarflow_core::stringsynth::{amp_process, normalize_rms, render, RenderStyle};
use guitarflow_core::tabscore::{parse_score, serialize_score, Score};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};

pub const SOURCE_STYLE: &str = "synthetic";
pub const TARGET_STYLE: &str = "pseudo_real";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOSS_FILE: &str = "loss_history.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const STATS_FILE: &str = "stats_results.csv";
pub const MOS_FILE: &str = "mos_summary.csv";

/// Evaluation condition: raw DI signal, or normalized then amplified.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    Di,
    Amp,
}

impl Condition {
    pub fn name(self) -> &'static str {
        match self {
            Condition::Di => "di",
            Condition::Amp => "amp",
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "di" => Some(Condition::Di),
            "amp" => Some(Condition::Amp),
            _ => None,
        }
    }
}

/// Model description stored as TOML in the checkpoint header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEcho {
    pub config_hash: String,
    pub dims: usize,
    pub base_channels: usize,
    pub kernel: usize,
    pub seed: u64,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointEcho {
    pub model: ModelEcho,
    pub config: PipelineConfig,
}

impl CheckpointEcho {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::data(format!("checkpoint header is not a model description: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSummary {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub pairs: usize,
    pub steps: usize,
    pub final_loss: f32,
    pub wall_seconds: f64,
    pub checkpoint: PathBuf,
    pub loss_csv: PathBuf,
}

impl TrainSummary {
    pub fn steps_per_second(&self) -> f64 {
        self.steps as f64 / self.wall_seconds.max(1e-9)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatsSummary {
    pub alpha: f64,
    pub m: usize,
    pub threshold: f64,
    /// Per condition (empty name when the CSV has no condition column).
    pub results: Vec<(String, Vec<NamedResult>)>,
    pub results_csv: PathBuf,
    pub mos_csv: PathBuf,
}

pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub workdir: PathBuf,
    hash: String,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, workdir: impl Into<PathBuf>) -> Self {
        let hash = cfg.hash();
        Self { cfg, workdir: workdir.into(), hash }
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    fn under(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.workdir.join(p)
        }
    }

    pub fn scores_dir(&self) -> PathBuf {
        self.under(&self.cfg.paths.scores_dir)
    }

    /// `audio/<split>/<system>`.
    pub fn audio_dir(&self, split: &str, system: &str) -> PathBuf {
        self.under(&self.cfg.paths.audio_dir).join(split).join(system)
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.under(&self.cfg.paths.cache_dir)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.under(&self.cfg.paths.checkpoint_dir).join(CHECKPOINT_FILE)
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.under(&self.cfg.paths.reports_dir)
    }

    fn stamp(&self) -> String {
        format!("config_hash={}", self.hash)
    }

    fn write_audio(&self, path: &Path, audio: &AudioBuffer) -> CliResult<()> {
        if let Some(dir) = path.parent() {
            create_dir(dir)?;
        }
        write_wav(path, audio, WavFormat::Float32, Some(&self.stamp())).map_err(|e| CliError::from(e).context(path.display()))
    }

    fn read_audio(&self, path: &Path) -> CliResult<AudioBuffer> {
        let audio = read_wav(path).map_err(|e| CliError::from(e).context(path.display()))?.audio;
        if audio.sample_rate() != self.cfg.codec.sample_rate {
            return Err(CliError::data(format!(
                "{}: sample rate {} Hz, config expects {} Hz",
                path.display(),
                audio.sample_rate(),
                self.cfg.codec.sample_rate
            )));
        }
        Ok(audio)
    }

    /// Generates `n` random scores and their paired renders, holding out the
    /// last scores as the test split.
    pub fn synthdata(&self, n: Option<usize>) -> CliResult<SynthSummary> {
        let n = n.unwrap_or(self.cfg.synthdata.n_scores);
        if n == 0 {
            return Err(CliError::Usage("synthdata needs at least one score".into()));
        }
        let n_test = split_test_count(n, self.cfg.synthdata.test_fraction);
        let scores_dir = self.scores_dir();
        create_dir(&scores_dir)?;
        clear_files(&scores_dir, "gftab")?;
        for split in ["train", "test"] {
            for system in ["render", "real"] {
                let d = self.audio_dir(split, system);
                create_dir(&d)?;
                clear_files(&d, "wav")?;
            }
        }
        // Latents cached from earlier audio would go stale.
        let cache = self.cache_dir();
        if cache.exists() {
            fs::remove_dir_all(&cache).map_err(|e| CliError::data(format!("cannot clear {}: {e}", cache.display())))?;
        }

        let (source, target) = styles();
        let sr = self.cfg.codec.sample_rate;
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        let mut summary = SynthSummary { train: Vec::new(), test: Vec::new() };
        for i in 0..n {
            let score = random_score(&mut rng, self.cfg.synthdata.bars);
            let stem = format!("score_{i:03}");
            let split = if i >= n - n_test { "test" } else { "train" };
            let text = format!("{}# {}\n", serialize_score(&score), self.stamp());
            let path = scores_dir.join(format!("{stem}.gftab"));
            fs::write(&path, text).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))?;
            self.write_audio(&self.audio_dir(split, "render").join(format!("{stem}.wav")), &render(&score, &source, sr)?)?;
            self.write_audio(&self.audio_dir(split, "real").join(format!("{stem}.wav")), &render(&score, &target, sr)?)?;
            if split == "test" { &mut summary.test } else { &mut summary.train }.push(stem);
        }
        Ok(summary)
    }

    /// Renders one score file to WAV.
    pub fn render(&self, score: &Path, style: &str, output: &Path) -> CliResult<()> {
        let style = RenderStyle::by_name(style)
            .ok_or_else(|| CliError::Usage(format!("unknown style {style:?}; expected synthetic or pseudo_real")))?;
        let score = read_score(score)?;
        self.write_audio(output, &render(&score, &style, self.cfg.codec.sample_rate)?)
    }

    /// Chunk latents for one WAV, encoding and caching them on first use.
    /// Values are always read back from the cache so that cold and warm runs
    /// train on identical numbers.
    fn cached_latents(&self, wav: &Path, cache: &Path, stem: &str) -> CliResult<Vec<LatentSeq>> {
        let dims = self.cfg.codec.dims;
        if !cache.join(chunk_file_name(stem, 0)).exists() {
            create_dir(cache)?;
            let audio = self.read_audio(wav)?;
            for (k, c) in chunk(&audio, self.cfg.codec.chunk_seconds).iter().enumerate() {
                let path = cache.join(chunk_file_name(stem, k));
                save_latent(&path, &encode(&c.audio, dims)?).map_err(|e| CliError::from(e).context(path.display()))?;
            }
        }
        let mut out = Vec::new();
        loop {
            let path = cache.join(chunk_file_name(stem, out.len()));
            if !path.exists() {
                break;
            }
            let lat = load_latent(&path).map_err(|e| CliError::from(e).context(path.display()))?;
            if lat.dims() != dims {
                return Err(CliError::data(format!(
                    "{}: cached latents have {} dims but codec.dims is {dims}; delete {} to re-encode",
                    path.display(),
                    lat.dims(),
                    self.cache_dir().display()
                )));
            }
            out.push(lat);
        }
        Ok(out)
    }

    /// Encodes the training pairs and fits the velocity network.
    pub fn train(&self) -> CliResult<TrainSummary> {
        let src_dir = self.audio_dir("train", "render");
        let tgt_dir = self.audio_dir("train", "real");
        let stems = paired_stems(&[&src_dir, &tgt_dir])?;
        let mut pairs = Vec::new();
        for stem in &stems {
            let src = self.cached_latents(&src_dir.join(format!("{stem}.wav")), &self.cache_dir().join("render"), stem)?;
            let tgt = self.cached_latents(&tgt_dir.join(format!("{stem}.wav")), &self.cache_dir().join("real"), stem)?;
            if src.len() != tgt.len() {
                return Err(CliError::data(format!("{stem}: {} source chunks but {} target chunks", src.len(), tgt.len())));
            }
            for (s, t) in src.into_iter().zip(tgt) {
                pairs.push(ChunkPair::new(s, t).map_err(|e| CliError::from(e).context(stem))?);
            }
        }
        if pairs.is_empty() {
            return Err(CliError::data(format!("no training pairs found in {}", src_dir.display())));
        }

        let tc = self.cfg.train_config();
        let data = FlowDataset::from_chunk_pairs(&pairs)?;
        let unet_cfg = UNetConfig {
            dims: self.cfg.codec.dims,
            base_channels: self.cfg.train.base_channels,
            kernel: 3,
            seed: self.cfg.seed,
        };
        let mut net = UNet::new(unet_cfg.clone());
        let adam = AdamState::new(net.params(), tc.lr);
        let total = tc.total_steps(data.len());
        eprintln!("train: {} pairs, {} epochs, {total} steps", pairs.len(), tc.epochs);
        let start = Instant::now();
        let report = train_with(&mut net, &data, &tc, adam, |r: &LossRecord| {
            if r.step + 1 == total || (r.step + 1) % 10 == 0 {
                eprintln!("  step {}/{total} epoch {} loss {:.6}", r.step + 1, r.epoch + 1, r.loss);
            }
        })?;
        let wall_seconds = start.elapsed().as_secs_f64();

        let echo = CheckpointEcho {
            model: ModelEcho {
                config_hash: self.hash.clone(),
                dims: unet_cfg.dims,
                base_channels: unet_cfg.base_channels,
                kernel: unet_cfg.kernel,
                seed: unet_cfg.seed,
                steps: report.adam.step,
            },
            config: self.cfg.clone(),
        };
        let checkpoint = self.checkpoint_path();
        create_dir(checkpoint.parent().expect("checkpoint path has a directory"))?;
        let ck = Checkpoint {
            config_echo: toml::to_string(&echo).expect("echo serializes"),
            params: net.params().clone(),
            adam: report.adam,
        };
        save_checkpoint(&checkpoint, &ck).map_err(|e| CliError::from(e).context(checkpoint.display()))?;
        let loss_csv = checkpoint.with_file_name(LOSS_FILE);
        write_text(&loss_csv, &format!("# {}\n{}", self.stamp(), loss_history_csv(&report.history)))?;
        Ok(TrainSummary {
            pairs: pairs.len(),
            steps: report.history.len(),
            final_loss: report.history.last().map_or(f32::NAN, |r| r.loss),
            wall_seconds,
            checkpoint,
            loss_csv,
        })
    }

    /// Loads a checkpoint written by [`Self::train`] and checks it against the codec config.
    pub fn load_model(&self, path: &Path) -> CliResult<(UNet, CheckpointEcho)> {
        let ck = load_checkpoint(path).map_err(|e| CliError::data(format!("unreadable checkpoint {}: {e}", path.display())))?;
        let echo = CheckpointEcho::parse(&ck.config_echo).map_err(|e| e.context(path.display()))?;
        if echo.model.dims != self.cfg.codec.dims {
            return Err(CliError::data(format!(
                "checkpoint {} has {} latent dims but codec.dims is {}",
                path.display(),
                echo.model.dims,
                self.cfg.codec.dims
            )));
        }
        let mut net = UNet::new(UNetConfig {
            dims: echo.model.dims,
            base_channels: echo.model.base_channels,
            kernel: echo.model.kernel,
            seed: echo.model.seed,
        });
        net.params_mut().assign(ck.params).map_err(|e| CliError::data(format!("checkpoint {}: {e}", path.display())))?;
        Ok((net, echo))
    }

    /// Chunk, encode, transport, decode and reassemble one signal.
    pub fn transfer_audio(&self, net: &UNet, audio: &AudioBuffer) -> CliResult<AudioBuffer> {
        let solver = self.cfg.solver_kind().map_err(CliError::Usage)?;
        let dims = self.cfg.codec.dims;
        let len = chunk_len(self.cfg.codec.chunk_seconds, audio.sample_rate());
        let mut out = Vec::new();
        for c in chunk(audio, self.cfg.codec.chunk_seconds) {
            let moved = transfer_latent(net, &encode(&c.audio, dims)?, solver)?;
            // Decoding covers whole frames only; the tail is padding either way.
            let mut samples = decode(&moved).into_samples();
            samples.resize(len, 0.0);
            out.push(AudioChunk { audio: AudioBuffer::new(samples, audio.sample_rate())?, valid_len: c.valid_len });
        }
        Ok(dechunk(&out, audio.sample_rate()))
    }

    /// Transfers a WAV or score file, or every WAV in a directory. Returns
    /// the written paths.
    pub fn transfer(&self, checkpoint: Option<&Path>, input: Option<&Path>, output: Option<&Path>) -> CliResult<Vec<PathBuf>> {
        let checkpoint = checkpoint.map_or_else(|| self.checkpoint_path(), Path::to_path_buf);
        let input = input.map_or_else(|| self.audio_dir("test", "render"), Path::to_path_buf);
        let (net, _) = self.load_model(&checkpoint)?;
        let default_out = self.audio_dir("test", "guitarflow");
        let jobs: Vec<(PathBuf, PathBuf)> = if input.is_dir() {
            let out_dir = output.map_or(default_out, Path::to_path_buf);
            list_stems(&input, "wav")?
                .into_iter()
                .map(|s| (input.join(format!("{s}.wav")), out_dir.join(format!("{s}.wav"))))
                .collect()
        } else if input.is_file() {
            let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let out = match output {
                Some(o) if o.is_dir() => o.join(format!("{stem}.wav")),
                Some(o) => o.to_path_buf(),
                None => default_out.join(format!("{stem}.wav")),
            };
            vec![(input.clone(), out)]
        } else {
            return Err(CliError::data(format!("input {} does not exist", input.display())));
        };
        if jobs.is_empty() {
            return Err(CliError::data(format!("no .wav files in {}", input.display())));
        }
        let mut written = Vec::new();
        for (src, dst) in jobs {
            let audio = if src.extension().is_some_and(|e| e == "gftab") {
                render(&read_score(&src)?, &styles().0, self.cfg.codec.sample_rate)?
            } else {
                self.read_audio(&src)?
            };
            let moved = self.transfer_audio(&net, &audio).map_err(|e| e.context(src.display()))?;
            self.write_audio(&dst, &moved)?;
            eprintln!("transfer: {} -> {}", src.display(), dst.display());
            written.push(dst);
        }
        Ok(written)
    }

    fn condition_audio(&self, audio: AudioBuffer, cond: Condition) -> CliResult<AudioBuffer> {
        match cond {
            Condition::Di => Ok(audio),
            Condition::Amp => {
                let amp = &self.cfg.amp;
                let (normalized, _) = normalize_rms(&audio, amp.normalize_db)?;
                let cutoff = (amp.cutoff_hz > 0.0).then_some(amp.cutoff_hz);
                Ok(amp_process(&normalized, amp.drive, cutoff))
            }
        }
    }

    /// FAD, KAD and paired reconstruction distance of the rendered and
    /// transferred corpora against the real corpus. Writes `metrics.csv`.
    pub fn eval(
        &self,
        real: Option<&Path>,
        render_dir: Option<&Path>,
        guitarflow: Option<&Path>,
        conditions: &[Condition],
    ) -> CliResult<MetricReport> {
        let real = real.map_or_else(|| self.audio_dir("test", "real"), Path::to_path_buf);
        let render_dir = render_dir.map_or_else(|| self.audio_dir("test", "render"), Path::to_path_buf);
        let guitarflow = guitarflow.map_or_else(|| self.audio_dir("test", "guitarflow"), Path::to_path_buf);
        let stems = paired_stems(&[&real, &render_dir, &guitarflow])?;
        if stems.is_empty() {
            return Err(CliError::data(format!("no .wav files in {}", real.display())));
        }
        let systems = [("render", &render_dir), ("guitarflow", &guitarflow)];
        let mut report = MetricReport::default();
        for &cond in conditions {
            let mut real_sets = Vec::new();
            let mut sys_sets = vec![Vec::new(); systems.len()];
            let mut paired = vec![(Vec::new(), Vec::new()); systems.len()];
            for stem in &stems {
                let load = |dir: &Path| -> CliResult<EmbeddingSet> {
                    let path = dir.join(format!("{stem}.wav"));
                    let audio = self.condition_audio(self.read_audio(&path)?, cond).map_err(|e| e.context(path.display()))?;
                    embed(&audio).map_err(|e| CliError::from(e).context(path.display()))
                };
                let r = load(&real)?;
                for (k, (_, dir)) in systems.iter().enumerate() {
                    let s = load(dir)?;
                    // Lengths may differ by a partial frame; pair the common prefix.
                    let m = r.len().min(s.len());
                    paired[k].0.push(r.truncated(m));
                    paired[k].1.push(s.truncated(m));
                    sys_sets[k].push(s);
                }
                real_sets.push(r);
            }
            let real_all = EmbeddingSet::concat(&real_sets, "real")?;
            for (k, (name, _)) in systems.iter().enumerate() {
                let sys_all = EmbeddingSet::concat(&sys_sets[k], *name)?;
                report.push(cond.name(), "fad", name, fad(&sys_all, &real_all)?);
                let kad_value = if self.cfg.eval.kad_bandwidth > 0.0 {
                    kad_with_bandwidth(&real_all, &sys_all, self.cfg.eval.kad_bandwidth)?
                } else {
                    kad(&real_all, &sys_all)?
                };
                report.push(cond.name(), "kad", name, kad_value);
                let a = EmbeddingSet::concat(&paired[k].1, *name)?;
                let b = EmbeddingSet::concat(&paired[k].0, "real")?;
                report.push(cond.name(), "recon", name, recon_distance(&a, &b)?);
            }
        }
        let out = self.reports_dir().join(METRICS_FILE);
        let comments = [self.stamp(), format!("stems={}", stems.len()), "reference=real".to_string()];
        write_text(&out, &report.to_csv(&comments))?;
        Ok(report)
    }

    /// Friedman and pairwise Wilcoxon tests per condition plus MOS summaries.
    pub fn stats(&self, ratings: &Path, m: Option<usize>, alpha: Option<f64>, out_dir: Option<&Path>) -> CliResult<StatsSummary> {
        let alpha = alpha.unwrap_or(self.cfg.stats.alpha);
        let text = fs::read_to_string(ratings).map_err(|e| CliError::data(format!("cannot read {}: {e}", ratings.display())))?;
        let groups = split_conditions(&text).map_err(|e| e.context(ratings.display()))?;
        let mut tables = Vec::new();
        for (cond, body) in groups {
            let table = RatingTable::from_csv(&body).map_err(|e| CliError::from(e).context(format!("{} {cond}", ratings.display())))?;
            tables.push((cond, table));
        }
        let k = tables.iter().map(|(_, t)| t.systems().len()).max().unwrap_or(0);
        let m = match m.or((self.cfg.stats.comparisons > 0).then_some(self.cfg.stats.comparisons)) {
            Some(m) => m,
            None => (k * k.saturating_sub(1) / 2).max(1),
        };
        let threshold = bonferroni(alpha, m)?;

        let mut all = Vec::new();
        let mut results = Vec::new();
        let mut mos = Vec::new();
        for (cond, table) in &tables {
            let mut named = analyze(table, alpha, m).map_err(|e| CliError::from(e).context(format!("condition {cond:?}")))?;
            for r in &mut named {
                if r.test == "friedman" {
                    r.result.alpha_corrected = Some(alpha);
                }
                if !cond.is_empty() {
                    r.comparison = format!("{cond}: {}", r.comparison);
                }
            }
            for mut s in mos_summary(table)? {
                if !cond.is_empty() {
                    s.system = format!("{cond}: {}", s.system);
                }
                mos.push(s);
            }
            all.extend(named.iter().cloned());
            results.push((cond.clone(), named));
        }
        let dir = out_dir.map_or_else(|| self.reports_dir(), Path::to_path_buf);
        let comments = [
            self.stamp(),
            format!("alpha={alpha} m={m} bonferroni_threshold={threshold:.4}"),
        ];
        let results_path = dir.join(STATS_FILE);
        write_text(&results_path, &results_csv(&all, &comments))?;
        let mos_path = dir.join(MOS_FILE);
        write_text(&mos_path, &mos_csv(&mos, &comments[..1]))?;
        Ok(StatsSummary { alpha, m, threshold, results, results_csv: results_path, mos_csv: mos_path })
    }
}

fn styles() -> (RenderStyle, RenderStyle) {
    (
        RenderStyle::by_name(SOURCE_STYLE).expect("built-in style"),
        RenderStyle::by_name(TARGET_STYLE).expect("built-in style"),
    )
}

/// Held-out score count: `round(n * fraction)`, at least one when `n >= 2`
/// and a positive fraction, never all of them.
pub fn split_test_count(n: usize, fraction: f64) -> usize {
    if n < 2 || fraction <= 0.0 {
        return 0;
    }
    ((n as f64 * fraction).round() as usize).clamp(1, n - 1)
}

fn read_score(path: &Path) -> CliResult<Score> {
    let text = fs::read_to_string(path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    parse_score(&text).map_err(|e| CliError::from(e).context(path.display()))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        create_dir(dir)?;
    }
    fs::write(path, text).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

fn clear_files(dir: &Path, ext: &str) -> CliResult<()> {
    for stem in list_stems(dir, ext)? {
        let p = dir.join(format!("{stem}.{ext}"));
        fs::remove_file(&p).map_err(|e| CliError::data(format!("cannot remove {}: {e}", p.display())))?;
    }
    Ok(())
}

/// Sorted file stems with extension `ext` in `dir`.
pub fn list_stems(dir: &Path, ext: &str) -> CliResult<Vec<String>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::data(format!("cannot read directory {}: {e}", dir.display())))?;
    let mut stems = Vec::new();
    for entry in entries {
        let p = entry?.path();
        if p.is_file() && p.extension().is_some_and(|e| e == ext) {
            if let Some(s) = p.file_stem() {
                stems.push(s.to_string_lossy().into_owned());
            }
        }
    }
    stems.sort();
    Ok(stems)
}

/// Stems present in every directory; any stem missing somewhere is an error.
pub fn paired_stems(dirs: &[&Path]) -> CliResult<Vec<String>> {
    let lists = dirs.iter().map(|d| list_stems(d, "wav")).collect::<CliResult<Vec<_>>>()?;
    let union: BTreeSet<&String> = lists.iter().flatten().collect();
    let mut missing = Vec::new();
    for (dir, list) in dirs.iter().zip(&lists) {
        for stem in &union {
            if !list.contains(stem) {
                missing.push(format!("{stem} missing from {}", dir.display()));
            }
        }
    }
    if !missing.is_empty() {
        return Err(CliError::data(format!("stem mismatch: {}", missing.join("; "))));
    }
    Ok(union.into_iter().cloned().collect())
}

/// Splits a ratings CSV by its optional leading `condition` column into
/// plain `rater,item,system,score` tables.
pub fn split_conditions(text: &str) -> CliResult<Vec<(String, String)>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    let Some((_, header)) = lines.next() else { return Err(CliError::data("empty ratings table")) };
    if header.trim() != "condition,rater,item,system,score" {
        return Ok(vec![(String::new(), text.to_string())]);
    }
    let mut groups: Vec<(String, String)> = Vec::new();
    for (i, line) in lines {
        let Some((cond, rest)) = line.split_once(',') else {
            return Err(CliError::data(format!("ratings line {}: expected 5 fields", i + 1)));
        };
        let cond = cond.trim();
        let idx = match groups.iter().position(|(c, _)| c == cond) {
            Some(idx) => idx,
            None => {
                groups.push((cond.to_string(), "rater,item,system,score\n".to_string()));
                groups.len() - 1
            }
        };
        groups[idx].1.push_str(rest);
        groups[idx].1.push('\n');
    }
    if groups.is_empty() {
        return Err(CliError::data("empty ratings table"));
    }
    Ok(groups)
}
