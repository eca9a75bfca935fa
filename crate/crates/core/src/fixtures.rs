//! Deterministic corpora and implementation-independent oracles shared by the
//! test suites and the data-synthesis command.
//!
//! Nothing here calls into the modules it is used to check; the DCT, pitch
//! and onset oracles are written from their textbook definitions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tabscore::{NoteEvent, Score, Technique, STANDARD_TUNING};

pub const TOY_CORPUS_SIZE: usize = 10;
pub const TOY_CORPUS_SEED: u64 = 2025;

/// Paired draws `(x0, x1)` with `x0 ~ N(0, I)` and `x1 ~ N((3, 3), 0.25 I)`.
pub fn gaussian_2d_pairs(n: usize, seed: u64) -> Vec<([f64; 2], [f64; 2])> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    (0..n)
        .map(|_| {
            let x0 = [normal(), normal()];
            let x1 = [3.0 + 0.5 * normal(), 3.0 + 0.5 * normal()];
            (x0, x1)
        })
        .collect()
}

/// Direct O(N^2) orthonormal DCT-II.
pub fn oracle_dct(frame: &[f64]) -> Vec<f64> {
    let n = frame.len() as f64;
    (0..frame.len())
        .map(|k| {
            let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            let sum: f64 = frame
                .iter()
                .enumerate()
                .map(|(i, &x)| x * (std::f64::consts::PI * (i as f64 + 0.5) * k as f64 / n).cos())
                .sum();
            scale * sum
        })
        .collect()
}

/// Fundamental frequency by normalized autocorrelation with parabolic peak
/// refinement. Picks the shortest lag whose correlation is within 10% of the
/// best lag in `[sr/fmax, sr/fmin]`, which avoids sub-octave errors.
pub fn detect_pitch(x: &[f64], sr: f64, fmin: f64, fmax: f64) -> Option<f64> {
    let min_lag = (sr / fmax).floor().max(1.0) as usize;
    let max_lag = (sr / fmin).ceil() as usize;
    if x.len() <= max_lag + 2 {
        return None;
    }
    let span = x.len() - max_lag - 1;
    let corr = |lag: usize| -> f64 {
        let mut num = 0.0;
        let mut ea = 0.0;
        let mut eb = 0.0;
        for i in 0..span {
            num += x[i] * x[i + lag];
            ea += x[i] * x[i];
            eb += x[i + lag] * x[i + lag];
        }
        if ea == 0.0 || eb == 0.0 {
            0.0
        } else {
            num / (ea * eb).sqrt()
        }
    };
    let r: Vec<f64> = (min_lag - 1..=max_lag + 1).map(corr).collect();
    let best = r[1..r.len() - 1].iter().copied().fold(f64::MIN, f64::max);
    if best <= 0.0 {
        return None;
    }
    for i in 1..r.len() - 1 {
        if r[i] >= 0.9 * best && r[i] >= r[i - 1] && r[i] >= r[i + 1] {
            let denom = r[i - 1] - 2.0 * r[i] + r[i + 1];
            let shift = if denom.abs() > 1e-15 { 0.5 * (r[i - 1] - r[i + 1]) / denom } else { 0.0 };
            let lag = (min_lag - 1 + i) as f64 + shift;
            return Some(sr / lag);
        }
    }
    None
}

/// RMS level in dB of `x` between `t0` and `t1` seconds.
pub fn window_rms_db(x: &[f64], sr: f64, t0: f64, t1: f64) -> f64 {
    let a = ((t0 * sr) as usize).min(x.len());
    let b = ((t1 * sr) as usize).min(x.len());
    let seg = &x[a..b];
    let ms = seg.iter().map(|v| v * v).sum::<f64>() / seg.len().max(1) as f64;
    10.0 * (ms + 1e-30).log10()
}

/// Counts note onsets as sharp rises of short-time energy.
///
/// Frames of 512 samples (hop 256); an onset is a frame at least 6 dB above
/// the quietest of the previous four frames, within 40 dB of the loudest
/// frame, and at least 60 ms after the previous onset.
pub fn count_onsets(x: &[f64], sr: f64) -> usize {
    onset_times(x, sr).len()
}

pub fn onset_times(x: &[f64], sr: f64) -> Vec<f64> {
    const LEN: usize = 512;
    const HOP: usize = 256;
    if x.len() < LEN {
        return Vec::new();
    }
    let db: Vec<f64> = (0..=(x.len() - LEN) / HOP)
        .map(|f| {
            let seg = &x[f * HOP..f * HOP + LEN];
            10.0 * (seg.iter().map(|v| v * v).sum::<f64>() / LEN as f64 + 1e-20).log10()
        })
        .collect();
    let loudest = db.iter().copied().fold(f64::MIN, f64::max);
    let refractory = (0.06 * sr / HOP as f64).ceil() as usize;
    let mut onsets = Vec::new();
    let mut last: Option<usize> = None;
    for i in 0..db.len() {
        let floor = db[i.saturating_sub(4)..i].iter().copied().fold(f64::MAX, f64::min);
        let floor = if i == 0 { -200.0 } else { floor };
        let rising = db[i] - floor >= 6.0 && db[i] > loudest - 40.0;
        if rising && last.is_none_or(|l| i - l >= refractory) {
            onsets.push((i * HOP) as f64 / sr);
            last = Some(i);
        }
    }
    onsets
}

const CHORD_SHAPES: [[Option<u8>; 6]; 6] = [
    // string 6 .. string 1
    [Some(3), Some(2), Some(0), Some(0), Some(0), Some(3)],
    [None, Some(3), Some(2), Some(0), Some(1), Some(0)],
    [None, None, Some(0), Some(2), Some(3), Some(2)],
    [Some(0), Some(2), Some(2), Some(1), Some(0), Some(0)],
    [None, Some(0), Some(2), Some(2), Some(2), Some(0)],
    [Some(0), Some(2), Some(2), None, None, None],
];

/// A random playable score of about `bars` bars of 4/4 mixing single notes,
/// strummed chords and every technique.
pub fn random_score(rng: &mut impl Rng, bars: u32) -> Score {
    const Q: u64 = 960;
    let tempo = [90.0, 100.0, 110.0, 120.0][rng.random_range(0..4)];
    let end = u64::from(bars) * 4 * Q;
    let mut events = Vec::new();
    let mut cursor = 0u64;
    let mut prev_single: Option<(u8, u8)> = None;
    while cursor < end {
        let dur = [Q / 2, Q, Q, 2 * Q][rng.random_range(0..4)].min(end - cursor);
        if rng.random_bool(0.3) {
            let shape = CHORD_SHAPES[rng.random_range(0..CHORD_SHAPES.len())];
            let shift = if rng.random_bool(0.3) { rng.random_range(1..=5) } else { 0 };
            let muted = rng.random_bool(0.2);
            for (i, fret) in shape.iter().enumerate() {
                if let Some(f) = fret {
                    let string = 6 - i as u8;
                    let tech = if muted { Technique::PalmMute } else { Technique::None };
                    events.push(NoteEvent::new(cursor, string, f + shift, dur).with_technique(tech));
                }
            }
            prev_single = None;
        } else {
            let string = rng.random_range(1..=6u8);
            let fret = rng.random_range(0..=12u8);
            let roll: f64 = rng.random();
            let tech = match roll {
                r if r < 0.55 => Technique::None,
                r if r < 0.63 && string <= 3 => Technique::Bend { cents: [50, 100, 200][rng.random_range(0..3)] },
                r if r < 0.71 => Technique::Vibrato,
                r if r < 0.79 => Technique::PalmMute,
                r if r < 0.86 => Technique::Slide { to_fret: (fret + rng.random_range(1..=5)).min(24) },
                _ => match prev_single {
                    Some((s, f)) if s == string && f < 22 && fret != f => {
                        if fret > f {
                            Technique::HammerOn
                        } else {
                            Technique::PullOff
                        }
                    }
                    _ => Technique::None,
                },
            };
            let velocity = rng.random_range(70..=120u8);
            events.push(NoteEvent::new(cursor, string, fret, dur).with_technique(tech).with_velocity(velocity));
            prev_single = Some((string, fret));
        }
        cursor += dur;
    }
    Score::new(tempo, STANDARD_TUNING, events).expect("generator emits valid scores")
}

/// The shared toy corpus: ten eight-bar scores from a fixed seed.
pub fn toy_corpus(seed: u64) -> Vec<Score> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..TOY_CORPUS_SIZE).map(|_| random_score(&mut rng, 8)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabscore::{parse_score, serialize_score};

    #[test]
    fn gaussian_pairs_are_reproducible() {
        assert_eq!(gaussian_2d_pairs(5, 7), gaussian_2d_pairs(5, 7));
        assert_eq!(gaussian_2d_pairs(1, 7).len(), 1);
        let n = 4000;
        let pairs = gaussian_2d_pairs(n, 11);
        for axis in 0..2 {
            let mean = pairs.iter().map(|p| p.0[axis]).sum::<f64>() / n as f64;
            assert!(mean.abs() < 3.0 / (n as f64).sqrt(), "{mean}");
            let mean1 = pairs.iter().map(|p| p.1[axis]).sum::<f64>() / n as f64;
            assert!((mean1 - 3.0).abs() < 1.5 / (n as f64).sqrt(), "{mean1}");
        }
    }

    #[test]
    fn dct_of_constant_is_dc_only() {
        let c = oracle_dct(&[0.5; 1024]);
        assert!((c[0] - 0.5 * 32.0).abs() < 1e-9);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn dct_of_impulse_is_basis_row() {
        let n = 1024;
        let mut frame = vec![0.0; n];
        frame[37] = 1.0;
        let c = oracle_dct(&frame);
        for (k, v) in c.iter().enumerate() {
            let s = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
            let basis = s * (std::f64::consts::PI * 37.5 * k as f64 / n as f64).cos();
            assert!((v - basis).abs() < 1e-12);
        }
    }

    #[test]
    fn pitch_of_sine() {
        let x: Vec<f64> = (0..8192).map(|n| (std::f64::consts::TAU * 440.0 * n as f64 / 44100.0).sin()).collect();
        let f = detect_pitch(&x, 44100.0, 60.0, 1500.0).unwrap();
        assert!((1200.0 * (f / 440.0).log2()).abs() < 1.0, "{f}");
    }

    #[test]
    fn toy_corpus_is_valid_and_stable() {
        let a = toy_corpus(TOY_CORPUS_SEED);
        assert_eq!(a.len(), TOY_CORPUS_SIZE);
        assert_eq!(a, toy_corpus(TOY_CORPUS_SEED));
        for s in &a {
            assert_eq!(&parse_score(&serialize_score(s)).unwrap(), s);
            assert!(!s.events().is_empty());
        }
        let techniques: std::collections::HashSet<_> = a
            .iter()
            .flat_map(|s| s.events().iter().map(|e| std::mem::discriminant(&e.technique)))
            .collect();
        assert_eq!(techniques.len(), 7);
    }
}
