//! Guitar tablature data model and the line-based GFTab text format.
//!
//! A GFTab file looks like:
//!
//! ```text
//! gftab 1
//! tempo 120.0
//! tuning 40 45 50 55 59 64
//! # onset string fret duration [technique] [vel:<n>]
//! 0 6 0 960
//! 960 3 7 480 bend:1.0
//! ```
//!
//! Strings are numbered 1 (high E) to 6 (low E); the tuning line lists the
//! open-string MIDI pitches from string 6 to string 1.

use std::fmt::{self, Write as _};

use thiserror::Error;

/// Tick resolution of every score.
pub const TICKS_PER_QUARTER: u32 = 960;
/// Standard tuning, string 6 to string 1.
pub const STANDARD_TUNING: [u8; 6] = [40, 45, 50, 55, 59, 64];
pub const MAX_FRET: u8 = 24;
pub const MAX_BEND_CENTS: u16 = 400;
pub const DEFAULT_VELOCITY: u8 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Technique {
    #[default]
    None,
    /// Bend amount in cents, 1..=400 (at most four semitones).
    Bend { cents: u16 },
    HammerOn,
    PullOff,
    Slide { to_fret: u8 },
    PalmMute,
    Vibrato,
}

impl Technique {
    /// Bend amount in semitones, zero for every other technique.
    pub fn bend_semitones(&self) -> f64 {
        match self {
            Technique::Bend { cents } => f64::from(*cents) / 100.0,
            _ => 0.0,
        }
    }

    fn token(&self) -> Option<String> {
        match self {
            Technique::None => None,
            Technique::Bend { cents } => Some(format!("bend:{}", format_cents(*cents))),
            Technique::HammerOn => Some("hammer".into()),
            Technique::PullOff => Some("pull".into()),
            Technique::Slide { to_fret } => Some(format!("slide:{to_fret}")),
            Technique::PalmMute => Some("mute".into()),
            Technique::Vibrato => Some("vibrato".into()),
        }
    }
}

/// `150` -> `1.5`, `100` -> `1.0`, `25` -> `0.25`.
fn format_cents(cents: u16) -> String {
    let whole = cents / 100;
    let frac = cents % 100;
    if frac == 0 {
        format!("{whole}.0")
    } else if frac % 10 == 0 {
        format!("{whole}.{}", frac / 10)
    } else {
        format!("{whole}.{frac:02}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NoteEvent {
    pub onset_ticks: u64,
    pub duration_ticks: u64,
    /// 1 (highest) ..= 6 (lowest).
    pub string: u8,
    pub fret: u8,
    pub velocity: u8,
    pub technique: Technique,
}

impl NoteEvent {
    pub fn new(onset_ticks: u64, string: u8, fret: u8, duration_ticks: u64) -> Self {
        Self {
            onset_ticks,
            duration_ticks,
            string,
            fret,
            velocity: DEFAULT_VELOCITY,
            technique: Technique::None,
        }
    }

    pub fn with_technique(mut self, technique: Technique) -> Self {
        self.technique = technique;
        self
    }

    pub fn with_velocity(mut self, velocity: u8) -> Self {
        self.velocity = velocity;
        self
    }

    pub fn end_ticks(&self) -> u64 {
        self.onset_ticks + self.duration_ticks
    }

    fn check(&self) -> Result<(), String> {
        if !(1..=6).contains(&self.string) {
            return Err(format!("string out of range ({} not in 1..=6)", self.string));
        }
        if self.fret > MAX_FRET {
            return Err(format!("fret out of range ({} > {MAX_FRET})", self.fret));
        }
        if self.duration_ticks == 0 {
            return Err("duration must be positive".into());
        }
        if !(1..=127).contains(&self.velocity) {
            return Err(format!("velocity out of range ({} not in 1..=127)", self.velocity));
        }
        match self.technique {
            Technique::Bend { cents } if cents == 0 || cents > MAX_BEND_CENTS => {
                Err(format!("bend out of range ({} semitones not in (0, 4])", f64::from(cents) / 100.0))
            }
            Technique::Slide { to_fret } if to_fret > MAX_FRET => {
                Err(format!("slide target fret out of range ({to_fret} > {MAX_FRET})"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TabErrorKind {
    Syntax(String),
    Domain(String),
    MissingHeader(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {kind}")]
pub struct TabError {
    pub line: usize,
    pub column: usize,
    pub kind: TabErrorKind,
}

impl fmt::Display for TabErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TabErrorKind::Syntax(m) => write!(f, "syntax error: {m}"),
            TabErrorKind::Domain(m) => write!(f, "domain error: {m}"),
            TabErrorKind::MissingHeader(m) => write!(f, "missing header: {m}"),
        }
    }
}

impl TabError {
    fn syntax(line: usize, column: usize, msg: impl Into<String>) -> Self {
        Self { line, column, kind: TabErrorKind::Syntax(msg.into()) }
    }

    fn domain(line: usize, column: usize, msg: impl Into<String>) -> Self {
        Self { line, column, kind: TabErrorKind::Domain(msg.into()) }
    }

    pub fn is_domain(&self) -> bool {
        matches!(self.kind, TabErrorKind::Domain(_))
    }
}

/// A validated tablature: events sorted by `(onset, string)`, no same-string
/// overlap, strictly ascending tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    tempo_bpm: f64,
    tuning: [u8; 6],
    events: Vec<NoteEvent>,
}

impl Score {
    /// Validates and sorts `events`. Errors carry no source position (line 0).
    pub fn new(tempo_bpm: f64, tuning: [u8; 6], mut events: Vec<NoteEvent>) -> Result<Self, TabError> {
        if !(tempo_bpm.is_finite() && tempo_bpm > 0.0) {
            return Err(TabError::domain(0, 0, format!("tempo must be positive, got {tempo_bpm}")));
        }
        check_tuning(&tuning).map_err(|m| TabError::domain(0, 0, m))?;
        for ev in &events {
            ev.check().map_err(|m| TabError::domain(0, 0, m))?;
        }
        events.sort_by_key(|e| (e.onset_ticks, e.string));
        if let Some((_, m)) = find_overlap(&events) {
            return Err(TabError::domain(0, 0, m));
        }
        Ok(Self { tempo_bpm, tuning, events })
    }

    pub fn ticks_per_quarter(&self) -> u32 {
        TICKS_PER_QUARTER
    }

    pub fn tempo_bpm(&self) -> f64 {
        self.tempo_bpm
    }

    /// Open-string MIDI pitches, string 6 first.
    pub fn tuning(&self) -> [u8; 6] {
        self.tuning
    }

    pub fn events(&self) -> &[NoteEvent] {
        &self.events
    }

    /// MIDI pitch of the open string (1..=6).
    pub fn open_pitch(&self, string: u8) -> u8 {
        self.tuning[6 - usize::from(string)]
    }

    pub fn seconds_per_tick(&self) -> f64 {
        60.0 / (self.tempo_bpm * f64::from(TICKS_PER_QUARTER))
    }

    pub fn ticks_to_seconds(&self, ticks: u64) -> f64 {
        ticks as f64 * self.seconds_per_tick()
    }

    /// Time at which the last event ends.
    pub fn end_seconds(&self) -> f64 {
        let end = self.events.iter().map(NoteEvent::end_ticks).max().unwrap_or(0);
        self.ticks_to_seconds(end)
    }
}

fn check_tuning(tuning: &[u8; 6]) -> Result<(), String> {
    if tuning.windows(2).all(|w| w[0] < w[1]) && tuning.iter().all(|&p| p <= 127) {
        Ok(())
    } else {
        Err(format!("tuning must strictly increase from string 6 to string 1, got {tuning:?}"))
    }
}

/// Index of the first event that overlaps an earlier one on the same string.
/// `events` must already be sorted by onset.
fn find_overlap(events: &[NoteEvent]) -> Option<(usize, String)> {
    let mut last_end = [None::<u64>; 7];
    for (i, ev) in events.iter().enumerate() {
        let slot = &mut last_end[usize::from(ev.string)];
        if let Some(end) = *slot {
            if ev.onset_ticks < end {
                return Some((
                    i,
                    format!(
                        "overlapping events on string {} (onset {} before previous end {end})",
                        ev.string, ev.onset_ticks
                    ),
                ));
            }
        }
        *slot = Some(ev.end_ticks());
    }
    None
}

/// Frequency in Hz of an event under the score's tuning (A4 = MIDI 69 = 440 Hz).
pub fn event_pitch(score: &Score, ev: &NoteEvent) -> f64 {
    midi_to_hz(f64::from(score.open_pitch(ev.string)) + f64::from(ev.fret))
}

pub fn midi_to_hz(midi: f64) -> f64 {
    440.0 * ((midi - 69.0) / 12.0).exp2()
}

struct Token<'a> {
    text: &'a str,
    column: usize,
}

fn tokenize(line: &str) -> Vec<Token<'_>> {
    let content = line.split('#').next().unwrap_or("");
    let mut tokens = Vec::new();
    let mut start = None;
    for (i, c) in content.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                tokens.push(Token { text: &content[s..i], column: content[..s].chars().count() + 1 });
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        tokens.push(Token { text: &content[s..], column: content[..s].chars().count() + 1 });
    }
    tokens
}

fn parse_int<T: std::str::FromStr>(tok: &Token<'_>, line: usize, what: &str) -> Result<T, TabError> {
    if !tok.text.bytes().all(|b| b.is_ascii_digit()) {
        return Err(TabError::syntax(line, tok.column, format!("expected {what}, found `{}`", tok.text)));
    }
    tok.text
        .parse()
        .map_err(|_| TabError::domain(line, tok.column, format!("{what} `{}` out of range", tok.text)))
}

/// Parses a decimal semitone amount with at most two fractional digits into cents.
fn parse_cents(text: &str) -> Option<u32> {
    let (whole, frac) = match text.split_once('.') {
        Some((w, f)) => (w, f),
        None => (text, ""),
    };
    if whole.is_empty() || !whole.bytes().all(|b| b.is_ascii_digit()) || frac.len() > 2 {
        return None;
    }
    if !frac.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let whole: u32 = whole.parse().ok()?;
    let mut frac_val: u32 = if frac.is_empty() { 0 } else { frac.parse().ok()? };
    if frac.len() == 1 {
        frac_val *= 10;
    }
    whole.checked_mul(100)?.checked_add(frac_val)
}

/// Parses GFTab text into a validated [`Score`].
pub fn parse_score(text: &str) -> Result<Score, TabError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, tokenize(l)))
        .filter(|(_, toks)| !toks.is_empty());

    let (ln, magic) = lines
        .next()
        .ok_or_else(|| TabError { line: 1, column: 1, kind: TabErrorKind::MissingHeader("expected `gftab 1`".into()) })?;
    if magic.len() != 2 || magic[0].text != "gftab" {
        return Err(TabError { line: ln, column: 1, kind: TabErrorKind::MissingHeader("expected `gftab 1`".into()) });
    }
    if magic[1].text != "1" {
        return Err(TabError::syntax(ln, magic[1].column, format!("unsupported version `{}`", magic[1].text)));
    }

    let (ln, tempo_line) = lines
        .next()
        .ok_or_else(|| TabError { line: ln + 1, column: 1, kind: TabErrorKind::MissingHeader("expected `tempo <bpm>`".into()) })?;
    if tempo_line[0].text != "tempo" {
        return Err(TabError { line: ln, column: 1, kind: TabErrorKind::MissingHeader("expected `tempo <bpm>`".into()) });
    }
    if tempo_line.len() != 2 {
        return Err(TabError::syntax(ln, 1, "expected exactly one tempo value"));
    }
    let tempo_bpm: f64 = tempo_line[1]
        .text
        .parse()
        .map_err(|_| TabError::syntax(ln, tempo_line[1].column, format!("bad tempo `{}`", tempo_line[1].text)))?;
    if !(tempo_bpm.is_finite() && tempo_bpm > 0.0) {
        return Err(TabError::domain(ln, tempo_line[1].column, "tempo must be positive"));
    }

    let (ln, tuning_line) = lines
        .next()
        .ok_or_else(|| TabError { line: ln + 1, column: 1, kind: TabErrorKind::MissingHeader("expected `tuning`".into()) })?;
    if tuning_line[0].text != "tuning" {
        return Err(TabError { line: ln, column: 1, kind: TabErrorKind::MissingHeader("expected `tuning <6 pitches>`".into()) });
    }
    if tuning_line.len() != 7 {
        return Err(TabError::syntax(ln, 1, format!("expected 6 tuning pitches, found {}", tuning_line.len() - 1)));
    }
    let mut tuning = [0u8; 6];
    for (slot, tok) in tuning.iter_mut().zip(&tuning_line[1..]) {
        *slot = parse_int(tok, ln, "MIDI pitch")?;
    }
    check_tuning(&tuning).map_err(|m| TabError::domain(ln, tuning_line[1].column, m))?;

    let mut events = Vec::new();
    let mut positions = Vec::new();
    for (ln, toks) in lines {
        if toks.len() < 4 {
            return Err(TabError::syntax(ln, 1, "expected `<onset> <string> <fret> <duration> [technique]`"));
        }
        let onset_ticks = parse_int(&toks[0], ln, "onset ticks")?;
        let string: u8 = parse_int(&toks[1], ln, "string")?;
        if !(1..=6).contains(&string) {
            return Err(TabError::domain(ln, toks[1].column, format!("string out of range ({string} not in 1..=6)")));
        }
        let fret: u8 = parse_int(&toks[2], ln, "fret")?;
        if fret > MAX_FRET {
            return Err(TabError::domain(ln, toks[2].column, format!("fret out of range ({fret} > {MAX_FRET})")));
        }
        let duration_ticks: u64 = parse_int(&toks[3], ln, "duration ticks")?;
        if duration_ticks == 0 {
            return Err(TabError::domain(ln, toks[3].column, "duration must be positive"));
        }
        let mut ev = NoteEvent::new(onset_ticks, string, fret, duration_ticks);
        let mut seen_technique = false;
        for tok in &toks[4..] {
            if let Some(v) = tok.text.strip_prefix("vel:") {
                let v = Token { text: v, column: tok.column + 4 };
                ev.velocity = parse_int(&v, ln, "velocity")?;
                if !(1..=127).contains(&ev.velocity) {
                    return Err(TabError::domain(ln, tok.column, format!("velocity out of range ({})", ev.velocity)));
                }
                continue;
            }
            if seen_technique {
                return Err(TabError::syntax(ln, tok.column, "at most one technique per event"));
            }
            seen_technique = true;
            ev.technique = parse_technique(tok, ln)?;
        }
        events.push(ev);
        positions.push(ln);
    }

    let mut order: Vec<usize> = (0..events.len()).collect();
    order.sort_by_key(|&i| (events[i].onset_ticks, events[i].string));
    let events: Vec<NoteEvent> = order.iter().map(|&i| events[i]).collect();
    if let Some((i, m)) = find_overlap(&events) {
        return Err(TabError::domain(positions[order[i]], 1, m));
    }
    Ok(Score { tempo_bpm, tuning, events })
}

fn parse_technique(tok: &Token<'_>, ln: usize) -> Result<Technique, TabError> {
    let arg_col = tok.column + tok.text.find(':').map_or(0, |i| i + 1);
    match tok.text.split_once(':') {
        Some(("bend", amount)) => {
            let cents = parse_cents(amount)
                .ok_or_else(|| TabError::syntax(ln, arg_col, format!("bad bend amount `{amount}`")))?;
            if cents == 0 || cents > u32::from(MAX_BEND_CENTS) {
                return Err(TabError::domain(ln, arg_col, format!("bend out of range ({amount} semitones not in (0, 4])")));
            }
            Ok(Technique::Bend { cents: cents as u16 })
        }
        Some(("slide", target)) => {
            let to_fret: u8 = parse_int(&Token { text: target, column: arg_col }, ln, "slide target fret")?;
            if to_fret > MAX_FRET {
                return Err(TabError::domain(ln, arg_col, format!("slide target fret out of range ({to_fret} > {MAX_FRET})")));
            }
            Ok(Technique::Slide { to_fret })
        }
        None => match tok.text {
            "hammer" => Ok(Technique::HammerOn),
            "pull" => Ok(Technique::PullOff),
            "mute" => Ok(Technique::PalmMute),
            "vibrato" => Ok(Technique::Vibrato),
            other => Err(TabError::syntax(ln, tok.column, format!("unknown technique `{other}`"))),
        },
        Some(_) => Err(TabError::syntax(ln, tok.column, format!("unknown technique `{}`", tok.text))),
    }
}

/// Writes a score in canonical GFTab form. `parse_score` inverts this exactly.
pub fn serialize_score(score: &Score) -> String {
    let mut out = String::new();
    out.push_str("gftab 1\n");
    let _ = writeln!(out, "tempo {:?}", score.tempo_bpm);
    let tuning: Vec<String> = score.tuning.iter().map(u8::to_string).collect();
    let _ = writeln!(out, "tuning {}", tuning.join(" "));
    for ev in &score.events {
        let _ = write!(out, "{} {} {} {}", ev.onset_ticks, ev.string, ev.fret, ev.duration_ticks);
        if let Some(tok) = ev.technique.token() {
            let _ = write!(out, " {tok}");
        }
        if ev.velocity != DEFAULT_VELOCITY {
            let _ = write!(out, " vel:{}", ev.velocity);
        }
        out.push('\n');
    }
    out
}
