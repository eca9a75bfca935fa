//! Karplus-Strong tablature renderer, amplifier waveshaper and RMS normalization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::audio::{AudioBuffer, AudioError};
use crate::tabscore::{event_pitch, NoteEvent, Score, Technique};

pub const CHORD_STAGGER_SECONDS: f64 = 0.008;
pub const RELEASE_TAIL_SECONDS: f64 = 1.0;
pub const MIN_SAMPLE_RATE: u32 = 8_000;
pub const DEFAULT_DRIVE: f64 = 6.0;
pub const DEFAULT_TONE_CUTOFF_HZ: f64 = 5_000.0;

const PALM_MUTE_DECAY: f64 = 0.25;
const VIBRATO_DEPTH_SEMITONES: f64 = 0.2;
const VIBRATO_RATE_HZ: f64 = 5.5;
const LEGATO_GAIN: f64 = 0.5;
const BASE_T60_SECONDS: f64 = 4.0;
const RELEASE_T60_SECONDS: f64 = 0.1;
const MASTER_GAIN: f64 = 0.3;
const CUT_FADE_SECONDS: f64 = 0.002;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("score has no events")]
    EmptyScore,
    #[error("sample rate {0} Hz is below the minimum of {MIN_SAMPLE_RATE} Hz")]
    SampleRate(u32),
    #[error("event at tick {onset} reaches {pitch_hz:.1} Hz, above a quarter of the sample rate ({limit:.1} Hz)")]
    PitchTooHigh { onset: u64, pitch_hz: f64, limit: f64 },
    #[error("cannot normalize silence")]
    Silence,
    #[error(transparent)]
    Audio(#[from] AudioError),
}

/// Timbre and performance parameters of a rendering pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderStyle {
    pub excitation_seed: u64,
    /// Loop-filter brightness in [0, 1]; 1 disables the averaging lowpass.
    pub brightness: f64,
    pub decay_scale: f64,
    /// Per-note random detune bound in cents.
    pub detune_cents: f64,
    /// Per-note random onset shift bound in milliseconds.
    pub timing_jitter_ms: f64,
    pub pick_noise_gain: f64,
}

impl RenderStyle {
    /// Plain sample-player rendering: no jitter, no detune, no pick noise.
    pub fn synthetic() -> Self {
        Self {
            excitation_seed: 0x5EED_0001,
            brightness: 0.35,
            decay_scale: 1.0,
            detune_cents: 0.0,
            timing_jitter_ms: 0.0,
            pick_noise_gain: 0.0,
        }
    }

    /// Stand-in for a human performance of the same content.
    pub fn pseudo_real() -> Self {
        Self {
            excitation_seed: 0x5EED_0002,
            brightness: 0.85,
            decay_scale: 0.6,
            detune_cents: 4.0,
            timing_jitter_ms: 6.0,
            pick_noise_gain: 0.25,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "synthetic" => Some(Self::synthetic()),
            "pseudo_real" => Some(Self::pseudo_real()),
            _ => None,
        }
    }
}

/// Where and how one event sounds in the rendered timeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NotePlan {
    pub event: NoteEvent,
    pub onset_seconds: f64,
    pub end_seconds: f64,
    pub pitch_hz: f64,
}

/// Onset times after chord stagger and style jitter, in score order.
pub fn plan_notes(score: &Score, style: &RenderStyle) -> Vec<NotePlan> {
    let events = score.events();
    let mut rng = ChaCha8Rng::seed_from_u64(style.excitation_seed ^ 0x0A5E_7000);
    let mut plans = Vec::with_capacity(events.len());
    let mut i = 0;
    while i < events.len() {
        let onset = events[i].onset_ticks;
        let chord_end = events[i..].iter().position(|e| e.onset_ticks != onset).map_or(events.len(), |p| i + p);
        // Events are sorted by string ascending; the strum starts from the lowest string.
        let chord = &events[i..chord_end];
        for (k, ev) in chord.iter().enumerate() {
            let rank = (chord.len() - 1 - k) as f64;
            let jitter = if style.timing_jitter_ms > 0.0 {
                rng.random_range(-style.timing_jitter_ms..=style.timing_jitter_ms) * 1e-3
            } else {
                0.0
            };
            let detune = if style.detune_cents > 0.0 {
                rng.random_range(-style.detune_cents..=style.detune_cents)
            } else {
                0.0
            };
            let start = (score.ticks_to_seconds(ev.onset_ticks) + rank * CHORD_STAGGER_SECONDS + jitter).max(0.0);
            plans.push(NotePlan {
                event: *ev,
                onset_seconds: start,
                end_seconds: start + score.ticks_to_seconds(ev.duration_ticks),
                pitch_hz: event_pitch(score, ev) * (detune / 1200.0).exp2(),
            });
        }
        i = chord_end;
    }
    plans
}

/// Pitch offset in semitones at `t` seconds into a note of length `dur`.
fn pitch_offset(ev: &NoteEvent, t: f64, dur: f64) -> f64 {
    let progress = (t / dur).clamp(0.0, 1.0);
    match ev.technique {
        Technique::Bend { .. } => ev.technique.bend_semitones() * progress,
        Technique::Slide { to_fret } => (f64::from(to_fret) - f64::from(ev.fret)) * progress,
        Technique::Vibrato => VIBRATO_DEPTH_SEMITONES * (std::f64::consts::TAU * VIBRATO_RATE_HZ * t).sin(),
        _ => 0.0,
    }
}

fn max_pitch_offset(ev: &NoteEvent) -> f64 {
    match ev.technique {
        Technique::Bend { .. } => ev.technique.bend_semitones(),
        Technique::Slide { to_fret } => (f64::from(to_fret) - f64::from(ev.fret)).max(0.0),
        Technique::Vibrato => VIBRATO_DEPTH_SEMITONES,
        _ => 0.0,
    }
}

fn read_interp(y: &[f64], pos: f64) -> f64 {
    if pos < 0.0 {
        return 0.0;
    }
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    let a = y.get(i).copied().unwrap_or(0.0);
    let b = y.get(i + 1).copied().unwrap_or(0.0);
    a + frac * (b - a)
}

/// Synthesizes one plucked note for `len` samples.
fn pluck(plan: &NotePlan, style: &RenderStyle, sr: f64, len: usize, seed: u64) -> Vec<f64> {
    let ev = &plan.event;
    let muted = ev.technique == Technique::PalmMute;
    let legato = matches!(ev.technique, Technique::HammerOn | Technique::PullOff);
    let brightness = if muted { style.brightness * 0.5 } else { style.brightness }.clamp(0.0, 1.0);
    let decay_scale = style.decay_scale * if muted { PALM_MUTE_DECAY } else { 1.0 };
    let amp = f64::from(ev.velocity) / 127.0 * if legato { LEGATO_GAIN } else { 1.0 };
    let dur = plan.end_seconds - plan.onset_seconds;
    let note_len = (dur * sr).round() as usize;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let period = (sr / plan.pitch_hz).round().max(2.0) as usize;
    let mut burst: Vec<f64> = (0..period).map(|_| rng.random_range(-1.0..1.0)).collect();
    // Darker styles get a smoother excitation.
    let smooth = 0.9 * (1.0 - brightness);
    let mut state = 0.0;
    for v in burst.iter_mut() {
        state = smooth * state + (1.0 - smooth) * *v;
        *v = state;
    }
    let mean = burst.iter().sum::<f64>() / period as f64;
    let peak = burst.iter().fold(1e-12f64, |m, v| m.max((v - mean).abs()));
    for v in burst.iter_mut() {
        *v = (*v - mean) / peak * amp;
    }
    let pick_len = ((0.015 * sr) as usize).min(len);
    let pick: Vec<f64> = (0..pick_len)
        .map(|n| style.pick_noise_gain * amp * rng.random_range(-1.0..1.0) * (-(n as f64) / (0.003 * sr)).exp())
        .collect();

    let t60_base = BASE_T60_SECONDS * decay_scale * (82.4 / plan.pitch_hz).sqrt();
    let filter_delay = (1.0 - brightness) * 0.5;
    let mut y = vec![0.0; len];
    for n in 0..len {
        let t = n as f64 / sr;
        let f = plan.pitch_hz * (pitch_offset(ev, t, dur) / 12.0).exp2();
        let t60 = if n < note_len { t60_base } else { RELEASE_T60_SECONDS.min(t60_base) };
        let loop_gain = 10f64.powf(-3.0 / (t60 * f));
        let delay = sr / f - filter_delay;
        let s0 = read_interp(&y, n as f64 - delay);
        let s1 = read_interp(&y, n as f64 - delay - 1.0);
        let filtered = brightness * s0 + (1.0 - brightness) * 0.5 * (s0 + s1);
        let excitation = burst.get(n).copied().unwrap_or(0.0);
        y[n] = excitation + loop_gain * filtered;
    }
    for (v, p) in y.iter_mut().zip(&pick) {
        *v += p;
    }
    y
}

/// Renders a score with a Karplus-Strong string model.
///
/// Output length is the last note-off time plus a one second release tail.
/// The result is deterministic for fixed inputs.
pub fn render(score: &Score, style: &RenderStyle, sample_rate: u32) -> Result<AudioBuffer, SynthError> {
    if score.events().is_empty() {
        return Err(SynthError::EmptyScore);
    }
    if sample_rate < MIN_SAMPLE_RATE {
        return Err(SynthError::SampleRate(sample_rate));
    }
    let sr = f64::from(sample_rate);
    let limit = sr / 4.0;
    for ev in score.events() {
        let top = event_pitch(score, ev) * (max_pitch_offset(ev) / 12.0).exp2();
        if top > limit {
            return Err(SynthError::PitchTooHigh { onset: ev.onset_ticks, pitch_hz: top, limit });
        }
    }

    let plans = plan_notes(score, style);
    let total = ((score.end_seconds() + RELEASE_TAIL_SECONDS) * sr).round() as usize;
    let mut mix = vec![0.0f64; total];
    let release = (0.5 * sr) as usize;
    let fade = ((CUT_FADE_SECONDS * sr) as usize).max(1);
    for (idx, plan) in plans.iter().enumerate() {
        let start = (plan.onset_seconds * sr).round() as usize;
        if start >= total {
            continue;
        }
        // A string stops ringing when it is plucked again.
        let next_same_string = plans[idx + 1..]
            .iter()
            .filter(|p| p.event.string == plan.event.string)
            .map(|p| (p.onset_seconds * sr).round() as usize)
            .min();
        let natural_end = start + ((plan.end_seconds - plan.onset_seconds) * sr).round() as usize + release;
        let end = natural_end.min(next_same_string.unwrap_or(usize::MAX)).min(total);
        if end <= start {
            continue;
        }
        let len = end - start;
        let seed = style.excitation_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(idx as u64);
        let mut voice = pluck(plan, style, sr, len, seed);
        if end < natural_end {
            let f = fade.min(len);
            for (k, v) in voice[len - f..].iter_mut().enumerate() {
                *v *= 1.0 - (k + 1) as f64 / f as f64;
            }
        }
        for (m, v) in mix[start..end].iter_mut().zip(&voice) {
            *m += MASTER_GAIN * v;
        }
    }
    let peak = mix.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.99 {
        let g = 0.99 / peak;
        mix.iter_mut().for_each(|v| *v *= g);
    }
    Ok(AudioBuffer::from_f64(&mix, sample_rate)?)
}

/// The memoryless nonlinearity of the amplifier model.
pub fn amp_shaper(x: f64, drive: f64) -> f64 {
    (drive * x).tanh()
}

/// Amplifier model: `post * lowpass(tanh(drive * x))`.
///
/// `tone_cutoff` of `None` bypasses the one-pole lowpass. `post` maps the
/// larger of full scale and the input peak to an output peak of at most 1.
pub fn amp_process(audio: &AudioBuffer, drive: f64, tone_cutoff: Option<f64>) -> AudioBuffer {
    let sr = f64::from(audio.sample_rate());
    let peak_in = f64::from(audio.peak()).max(1.0);
    let post = 1.0 / amp_shaper(peak_in, drive);
    let coeff = tone_cutoff
        .filter(|&fc| fc < sr / 2.0)
        .map(|fc| 1.0 - (-std::f64::consts::TAU * fc / sr).exp());
    let mut state = 0.0;
    let out: Vec<f64> = audio
        .samples()
        .iter()
        .map(|&x| {
            let shaped = amp_shaper(f64::from(x), drive);
            let filtered = match coeff {
                Some(a) => {
                    state += a * (shaped - state);
                    state
                }
                None => shaped,
            };
            (post * filtered).clamp(-1.0, 1.0)
        })
        .collect();
    AudioBuffer::from_f64(&out, audio.sample_rate()).expect("tanh output is finite")
}

/// Scales `audio` so its RMS level equals `target_db` dBFS. Returns the gain used.
pub fn normalize_rms(audio: &AudioBuffer, target_db: f64) -> Result<(AudioBuffer, f64), SynthError> {
    let current = audio.rms();
    if current == 0.0 {
        return Err(SynthError::Silence);
    }
    let gain = 10f64.powf(target_db / 20.0) / current;
    let scaled: Vec<f64> = audio.samples().iter().map(|&s| f64::from(s) * gain).collect();
    Ok((AudioBuffer::from_f64(&scaled, audio.sample_rate())?, gain))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::rms;
    use crate::fixtures::{count_onsets, detect_pitch, window_rms_db};
    use crate::tabscore::{parse_score, STANDARD_TUNING};

    fn single(string: u8, fret: u8, ticks: u64, tech: Technique) -> Score {
        Score::new(120.0, STANDARD_TUNING, vec![NoteEvent::new(0, string, fret, ticks).with_technique(tech)]).unwrap()
    }

    fn cents(a: f64, b: f64) -> f64 {
        1200.0 * (a / b).log2()
    }

    #[test]
    fn open_low_e_pitch() {
        let score = single(6, 0, 1920, Technique::None);
        let audio = render(&score, &RenderStyle::synthetic(), 44100).unwrap();
        let x = audio.to_f64();
        let f = detect_pitch(&x[4410..4410 + 8192], 44100.0, 60.0, 1500.0).unwrap();
        assert!(cents(f, 82.406_889).abs() < 10.0, "{f}");
    }

    #[test]
    fn fret_twelve_doubles() {
        let a = render(&single(6, 0, 1920, Technique::None), &RenderStyle::synthetic(), 44100).unwrap();
        let b = render(&single(6, 12, 1920, Technique::None), &RenderStyle::synthetic(), 44100).unwrap();
        let fa = detect_pitch(&a.to_f64()[4410..12602], 44100.0, 60.0, 1500.0).unwrap();
        let fb = detect_pitch(&b.to_f64()[4410..12602], 44100.0, 60.0, 1500.0).unwrap();
        assert!(cents(fb, 2.0 * fa).abs() < 10.0, "{fa} {fb}");
    }

    #[test]
    fn palm_mute_decays_faster() {
        let style = RenderStyle::synthetic();
        let open = render(&single(6, 0, 1920, Technique::None), &style, 44100).unwrap();
        let muted = render(&single(6, 0, 1920, Technique::PalmMute), &style, 44100).unwrap();
        let a = window_rms_db(&open.to_f64(), 44100.0, 0.4, 0.6);
        let b = window_rms_db(&muted.to_f64(), 44100.0, 0.4, 0.6);
        assert!(b <= a - 6.0, "open {a} dB, muted {b} dB");
    }

    #[test]
    fn length_includes_release_tail() {
        let score = single(6, 0, 960, Technique::None);
        let audio = render(&score, &RenderStyle::synthetic(), 44100).unwrap();
        assert_eq!(audio.len(), 44100 + 22050);
        assert!(audio.peak() <= 1.0);
    }

    #[test]
    fn deterministic() {
        let score = parse_score("gftab 1\ntempo 100\ntuning 40 45 50 55 59 64\n0 6 3 960\n0 5 2 960\n0 4 0 960\n960 3 7 480 bend:1.5\n1440 3 9 480 hammer\n").unwrap();
        for style in [RenderStyle::synthetic(), RenderStyle::pseudo_real()] {
            let a = render(&score, &style, 44100).unwrap();
            let b = render(&score, &style, 44100).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn chords_are_staggered_from_the_lowest_string() {
        let score = parse_score("gftab 1\ntempo 120\ntuning 40 45 50 55 59 64\n0 6 3 960\n0 5 2 960\n0 1 0 960\n").unwrap();
        let plans = plan_notes(&score, &RenderStyle::synthetic());
        let by_string = |s: u8| plans.iter().find(|p| p.event.string == s).unwrap().onset_seconds;
        assert_eq!(by_string(6), 0.0);
        assert!((by_string(5) - 0.008).abs() < 1e-12);
        assert!((by_string(1) - 0.016).abs() < 1e-12);
    }

    #[test]
    fn bend_glides_up() {
        let score = single(3, 7, 1920, Technique::Bend { cents: 200 });
        let audio = render(&score, &RenderStyle::synthetic(), 44100).unwrap();
        let x = audio.to_f64();
        let early = detect_pitch(&x[2000..6096], 44100.0, 100.0, 1500.0).unwrap();
        let late = detect_pitch(&x[40000..44096], 44100.0, 100.0, 1500.0).unwrap();
        // D4 on string 3, fret 7; the glide has covered about 0.2 semitones by then.
        let start = crate::tabscore::midi_to_hz(62.0);
        assert!(cents(early, start).abs() < 25.0, "{early}");
        // Close to the end of the bend (0.91 to 1.0 s of a 1 s note).
        assert!(cents(late, start * (2.0f64 / 12.0).exp2()).abs() < 30.0, "{late}");
    }

    #[test]
    fn legato_is_quieter() {
        let plain = render(&single(3, 7, 960, Technique::None), &RenderStyle::synthetic(), 44100).unwrap();
        let ham = render(&single(3, 7, 960, Technique::HammerOn), &RenderStyle::synthetic(), 44100).unwrap();
        let ratio = 20.0 * (ham.rms() / plain.rms()).log10();
        assert!((ratio + 6.02).abs() < 0.1, "{ratio}");
    }

    #[test]
    fn paired_styles_share_onsets() {
        let score = parse_score(
            "gftab 1\ntempo 120\ntuning 40 45 50 55 59 64\n0 6 0 960\n960 5 2 960\n1920 4 2 960\n2880 3 2 960 vibrato\n3840 6 0 960 mute\n",
        )
        .unwrap();
        let a = plan_notes(&score, &RenderStyle::synthetic());
        let b = plan_notes(&score, &RenderStyle::pseudo_real());
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert!((x.onset_seconds - y.onset_seconds).abs() <= 0.010);
        }
        let ra = render(&score, &RenderStyle::synthetic(), 44100).unwrap();
        let rb = render(&score, &RenderStyle::pseudo_real(), 44100).unwrap();
        assert_eq!(count_onsets(&ra.to_f64(), 44100.0), 5);
        assert_eq!(count_onsets(&rb.to_f64(), 44100.0), 5);
    }

    #[test]
    fn render_errors() {
        let empty = Score::new(120.0, STANDARD_TUNING, vec![]).unwrap();
        assert!(matches!(render(&empty, &RenderStyle::synthetic(), 44100), Err(SynthError::EmptyScore)));
        let high = Score::new(120.0, [80, 85, 90, 95, 99, 104], vec![NoteEvent::new(0, 1, 24, 960)]).unwrap();
        assert!(matches!(render(&high, &RenderStyle::synthetic(), 8000), Err(SynthError::PitchTooHigh { .. })));
        assert!(matches!(render(&high, &RenderStyle::synthetic(), 4000), Err(SynthError::SampleRate(4000))));
    }

    #[test]
    fn amp_zero_in_zero_out() {
        let out = amp_process(&AudioBuffer::silence(100, 44100), 6.0, Some(5000.0));
        assert!(out.samples().iter().all(|&s| s == 0.0));
        assert_eq!(out.len(), 100);
    }

    #[test]
    fn amp_small_signal_is_linear() {
        let x: Vec<f64> = (0..4410).map(|n| 0.1 * (n as f64 * 0.05).sin()).collect();
        let input = AudioBuffer::from_f64(&x, 44100).unwrap();
        let drive = 1e-3;
        let out = amp_process(&input, drive, None);
        let scale = drive / drive.tanh();
        let dev = out
            .samples()
            .iter()
            .zip(input.samples())
            .map(|(&y, &x)| (f64::from(y) - scale * f64::from(x)).abs())
            .fold(0.0, f64::max);
        assert!(dev < 1e-4, "{dev}");
    }

    #[test]
    fn amp_shaper_value() {
        assert!((amp_shaper(1.0, 2.0) - 0.964_027_580_075_8).abs() < 1e-12);
    }

    #[test]
    fn amp_is_bounded_and_order_preserving() {
        let x: Vec<f64> = (0..2000).map(|n| 3.0 * ((n as f64) * 0.013).sin() * ((n as f64) * 0.0007).cos()).collect();
        let input = AudioBuffer::from_f64(&x, 44100).unwrap();
        let out = amp_process(&input, 6.0, Some(5000.0));
        assert!(out.samples().iter().all(|s| s.abs() <= 1.0));
        let bypass = amp_process(&input, 6.0, None);
        let mut pairs: Vec<(f32, f32)> = input.samples().iter().copied().zip(bypass.samples().iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!(pairs.windows(2).all(|w| w[0].1 <= w[1].1));
    }

    #[test]
    fn normalize_sine() {
        let x: Vec<f64> = (0..44100).map(|n| (std::f64::consts::TAU * 441.0 * n as f64 / 44100.0).sin()).collect();
        let input = AudioBuffer::from_f64(&x, 44100).unwrap();
        let (out, gain) = normalize_rms(&input, -9.0).unwrap();
        let expected = 10f64.powf(-9.0 / 20.0) / std::f64::consts::FRAC_1_SQRT_2;
        assert!((gain - expected).abs() < 1e-6, "{gain}");
        assert!((gain - 0.5012).abs() < 1e-3);
        let target = 10f64.powf(-9.0 / 20.0);
        assert!((rms(&out.to_f64()) / target - 1.0).abs() < 1e-6);
        let (again, g2) = normalize_rms(&out, -9.0).unwrap();
        assert!((g2 - 1.0).abs() < 1e-6);
        assert_eq!(again.len(), out.len());
        assert!(matches!(normalize_rms(&AudioBuffer::silence(10, 44100), -9.0), Err(SynthError::Silence)));
    }
}
