use std::fs;
use std::path::Path;
use std::process::Command;

use guitarflow_cli::pipeline::{split_test_count, CheckpointEcho, ModelEcho, CHECKPOINT_FILE, STATS_FILE};
use guitarflow_cli::{Condition, Pipeline, PipelineConfig};
use guitarflow_core::audio::read_wav;
use guitarflow_core::latentcodec::{chunk, decode, encode};
use guitarflow_core::neuralnet::{save_checkpoint, AdamState, Checkpoint, UNet, UNetConfig, VelocityModel};
use guitarflow_core::tabscore::parse_score;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_guitarflow"))
}

fn exit_code(args: &[&str], workdir: &Path) -> i32 {
    let out = bin().args(args).arg("--workdir").arg(workdir).output().unwrap();
    out.status.code().unwrap()
}

/// Two one-bar scores: one train, one test.
fn small_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.synthdata.n_scores = 2;
    cfg.synthdata.bars = 1;
    cfg.synthdata.test_fraction = 0.5;
    cfg.train.epochs = 2;
    cfg.train.base_channels = 4;
    cfg.solver.kind = "euler".into();
    cfg.solver.steps = 2;
    cfg
}

fn files_under(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn zero_checkpoint(p: &Pipeline) {
    let cfg = UNetConfig { dims: p.cfg.codec.dims, base_channels: 4, kernel: 3, seed: 1 };
    let net = UNet::new(cfg.clone());
    let echo = CheckpointEcho {
        model: ModelEcho { config_hash: p.config_hash().into(), dims: cfg.dims, base_channels: 4, kernel: 3, seed: 1, steps: 0 },
        config: p.cfg.clone(),
    };
    let ck = Checkpoint {
        config_echo: toml::to_string(&echo).unwrap(),
        params: net.params().clone(),
        adam: AdamState::new(net.params(), 1e-4),
    };
    let path = p.checkpoint_path();
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    save_checkpoint(&path, &ck).unwrap();
}

#[test]
fn exit_codes_follow_the_failure_class() {
    let dir = TempDir::new().unwrap();
    assert_eq!(exit_code(&["--help"], dir.path()), 0);
    assert_eq!(exit_code(&["--version"], dir.path()), 0);
    assert_eq!(exit_code(&["frobnicate"], dir.path()), 1);
    assert_eq!(exit_code(&["synthdata", "--n-scores", "0"], dir.path()), 1);
    fs::write(dir.path().join("bad.toml"), "[train]\nepoch = 3\n").unwrap();
    let bad = dir.path().join("bad.toml");
    assert_eq!(exit_code(&["--config", bad.to_str().unwrap(), "train"], dir.path()), 1);
    assert_eq!(exit_code(&["train"], dir.path()), 2);
    fs::write(dir.path().join("empty.csv"), "").unwrap();
    assert_eq!(exit_code(&["stats", "--ratings", "empty.csv"], dir.path()), 2);
}

#[test]
fn missing_audio_dir_names_the_directory() {
    let dir = TempDir::new().unwrap();
    let err = Pipeline::new(PipelineConfig::default(), dir.path()).train().unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("train/render"), "{err}");
}

#[test]
fn split_holds_out_a_tenth_by_score() {
    assert_eq!(split_test_count(10, 0.1), 1);
    assert_eq!(split_test_count(20, 0.1), 2);
    assert_eq!(split_test_count(1, 0.1), 0);
    assert_eq!(split_test_count(2, 0.9), 1);
}

#[test]
fn synthdata_is_deterministic_and_parseable() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let cfg = small_config();
    let s = Pipeline::new(cfg.clone(), a.path()).synthdata(None).unwrap();
    Pipeline::new(cfg.clone(), b.path()).synthdata(None).unwrap();
    assert_eq!((s.train.len(), s.test.len()), (1, 1));
    let fa = files_under(a.path());
    assert_eq!(fa.len(), 2 + 4);
    assert_eq!(fa, files_under(b.path()));
    let hash = cfg.hash();
    for (name, bytes) in &fa {
        if name.ends_with(".gftab") {
            let text = String::from_utf8(bytes.clone()).unwrap();
            parse_score(&text).unwrap();
            assert!(text.contains(&format!("config_hash={hash}")));
        } else {
            let wav = read_wav(&a.path().join(name)).unwrap();
            assert_eq!(wav.comment.unwrap(), format!("config_hash={hash}"));
        }
    }
    let mut other = cfg;
    other.seed += 1;
    Pipeline::new(other, b.path()).synthdata(None).unwrap();
    assert_ne!(fa, files_under(b.path()));
}

#[test]
fn train_replays_bit_for_bit_and_guards_cache_dims() {
    let dir = TempDir::new().unwrap();
    let p = Pipeline::new(small_config(), dir.path());
    p.synthdata(None).unwrap();
    let s = p.train().unwrap();
    assert!(s.steps >= 2 && s.final_loss.is_finite());
    let first = fs::read(&s.checkpoint).unwrap();
    let loss = fs::read_to_string(&s.loss_csv).unwrap();
    assert!(loss.starts_with(&format!("# config_hash={}\nstep,epoch,loss\n", p.config_hash())));
    // Warm cache must give the same bytes as the cold run.
    assert_eq!(p.train().unwrap().checkpoint.file_name().unwrap(), CHECKPOINT_FILE);
    assert_eq!(fs::read(&s.checkpoint).unwrap(), first);

    let mut wide = small_config();
    wide.codec.dims = 1024;
    let err = Pipeline::new(wide.clone(), dir.path()).train().unwrap_err();
    assert!(err.to_string().contains("cached latents have 64 dims"), "{err}");
    let err = Pipeline::new(wide, dir.path()).transfer(None, None, None).unwrap_err();
    assert!(err.to_string().contains("64 latent dims"), "{err}");
}

#[test]
fn zero_flow_transfer_is_codec_round_trip() {
    let dir = TempDir::new().unwrap();
    let mut cfg = small_config();
    cfg.codec.dims = 1024;
    let p = Pipeline::new(cfg, dir.path());
    p.synthdata(None).unwrap();
    zero_checkpoint(&p);
    let written = p.transfer(None, None, None).unwrap();
    assert_eq!(written.len(), 1);
    let input = read_wav(&p.audio_dir("test", "render").join("score_001.wav")).unwrap().audio;
    let bytes = fs::read(&written[0]).unwrap();
    let output = read_wav(&written[0]).unwrap();
    assert_eq!(output.audio.len(), input.len());
    assert_eq!(output.comment.unwrap(), format!("config_hash={}", p.config_hash()));

    let c = &chunk(&input, 4.0)[0];
    let round = decode(&encode(&c.audio, 1024).unwrap());
    let n = round.len().min(c.valid_len);
    let err = (0..n).map(|i| (round.samples()[i] - output.audio.samples()[i]).abs()).fold(0.0f32, f32::max);
    assert!(err < 1e-4, "max deviation from codec round trip {err}");

    p.transfer(None, None, None).unwrap();
    assert_eq!(fs::read(&written[0]).unwrap(), bytes);

    let score = p.scores_dir().join("score_001.gftab");
    let out = dir.path().join("from_score.wav");
    p.transfer(None, Some(&score), Some(&out)).unwrap();
    assert_eq!(read_wav(&out).unwrap().audio.len(), input.len());
}

#[test]
fn unreadable_checkpoint_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let p = Pipeline::new(small_config(), dir.path());
    p.synthdata(None).unwrap();
    fs::create_dir_all(p.checkpoint_path().parent().unwrap()).unwrap();
    fs::write(p.checkpoint_path(), b"not a checkpoint").unwrap();
    let err = p.transfer(None, None, None).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("unreadable checkpoint"), "{err}");
}

#[test]
fn eval_self_distance_and_stem_mismatch() {
    let dir = TempDir::new().unwrap();
    let mut cfg = small_config();
    cfg.synthdata.test_fraction = 0.0;
    let p = Pipeline::new(cfg, dir.path());
    p.synthdata(None).unwrap();
    let real = p.audio_dir("train", "real");
    let render = p.audio_dir("train", "render");
    let report = p.eval(Some(&real), Some(&render), Some(&real), &[Condition::Di, Condition::Amp]).unwrap();
    for cond in ["di", "amp"] {
        assert!(report.get(cond, "fad", "guitarflow").unwrap().abs() < 1e-6);
        assert_eq!(report.get(cond, "recon", "guitarflow").unwrap(), 0.0);
        assert!(report.get(cond, "fad", "render").unwrap() > 1e-3);
        assert!(report.get(cond, "recon", "render").unwrap() > 0.0);
    }
    let csv = fs::read_to_string(p.reports_dir().join("metrics.csv")).unwrap();
    assert!(csv.contains("condition,metric,system,value"));
    assert!(csv.contains(p.config_hash()));

    fs::remove_file(render.join("score_001.wav")).unwrap();
    let err = p.eval(Some(&real), Some(&render), Some(&real), &[Condition::Di]).unwrap_err();
    assert!(err.to_string().contains("score_001 missing"), "{err}");
}

fn dominant_ratings(conditions: &[&str]) -> String {
    let mut csv = String::from(if conditions.is_empty() { "rater,item,system,score\n" } else { "condition,rater,item,system,score\n" });
    let conds: Vec<&str> = if conditions.is_empty() { vec![""] } else { conditions.to_vec() };
    for cond in conds {
        let prefix = if cond.is_empty() { String::new() } else { format!("{cond},") };
        for r in 0..6 {
            for i in 0..4 {
                let jitter = ((r * 7 + i * 3) % 5) as f64 * 0.1;
                for (sys, base) in [("real", 4.5), ("guitarflow", 3.0), ("render", 2.0)] {
                    let score = if sys == "real" { base } else { base + jitter };
                    csv.push_str(&format!("{prefix}r{r},i{i},{sys},{score}\n"));
                }
            }
        }
    }
    csv
}

#[test]
fn stats_detects_a_dominant_system_and_echoes_threshold() {
    let dir = TempDir::new().unwrap();
    let ratings = dir.path().join("ratings.csv");
    fs::write(&ratings, dominant_ratings(&[])).unwrap();
    let p = Pipeline::new(PipelineConfig::default(), dir.path());
    let s = p.stats(&ratings, Some(3), Some(0.05), None).unwrap();
    assert!((s.threshold - 0.05 / 3.0).abs() < 1e-15);
    let results = &s.results[0].1;
    assert!(results[0].result.p_value < 0.05);
    for r in &results[1..] {
        assert!(r.result.p_value < s.threshold, "{} p = {}", r.comparison, r.result.p_value);
    }
    let csv = fs::read_to_string(dir.path().join("reports").join(STATS_FILE)).unwrap();
    assert!(csv.contains("bonferroni_threshold=0.0167"));
    assert!(csv.contains(",0.0167,true,"));

    let out = bin()
        .args(["stats", "--m", "3", "--ratings"])
        .arg(&ratings)
        .arg("--workdir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("0.0167"));
}

#[test]
fn stats_splits_conditions_and_reports_incomplete_blocks() {
    let dir = TempDir::new().unwrap();
    let ratings = dir.path().join("ratings.csv");
    fs::write(&ratings, dominant_ratings(&["di", "amp"])).unwrap();
    let p = Pipeline::new(PipelineConfig::default(), dir.path());
    let s = p.stats(&ratings, None, None, None).unwrap();
    assert_eq!(s.m, 3);
    assert_eq!(s.results.iter().map(|(c, _)| c.as_str()).collect::<Vec<_>>(), ["di", "amp"]);

    let mut broken = dominant_ratings(&[]);
    broken.push_str("r9,i9,real,4\n");
    fs::write(&ratings, broken).unwrap();
    let err = p.stats(&ratings, None, None, None).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("rater r9 item i9 lacks guitarflow"), "{err}");
}

#[test]
fn render_command_writes_requested_style() {
    let dir = TempDir::new().unwrap();
    let p = Pipeline::new(small_config(), dir.path());
    p.synthdata(None).unwrap();
    let score = p.scores_dir().join("score_000.gftab");
    let out = dir.path().join("x.wav");
    p.render(&score, "pseudo_real", &out).unwrap();
    let expected = fs::read(p.audio_dir("train", "real").join("score_000.wav")).unwrap();
    assert_eq!(fs::read(&out).unwrap(), expected);
    assert_eq!(p.render(&score, "cello", &out).unwrap_err().exit_code(), 1);
}
