//! Mono audio buffers and RIFF/WAVE I/O.

use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

pub const DEFAULT_SAMPLE_RATE: u32 = 44_100;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("wav format: {0}")]
    Format(String),
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("sample rate must be positive")]
    ZeroRate,
}

/// Mono sample sequence. Samples are nominally in [-1, 1] and always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::ZeroRate);
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(AudioError::NonFinite(i));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn from_f64(samples: &[f64], sample_rate: u32) -> Result<Self, AudioError> {
        Self::new(samples.iter().map(|&s| s as f32).collect(), sample_rate)
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self { samples: vec![0.0; len], sample_rate: sample_rate.max(1) }
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.samples.iter().map(|&s| f64::from(s)).collect()
    }

    pub fn rms(&self) -> f64 {
        rms(&self.to_f64())
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WavFormat {
    Pcm16,
    #[default]
    Float32,
}

impl WavFormat {
    fn tag(self) -> u16 {
        match self {
            WavFormat::Pcm16 => 1,
            WavFormat::Float32 => 3,
        }
    }

    fn bits(self) -> u16 {
        match self {
            WavFormat::Pcm16 => 16,
            WavFormat::Float32 => 32,
        }
    }
}

/// Encodes `buf` as a mono WAV. `comment`, when given, is stored in a
/// `LIST/INFO/ICMT` chunk after the sample data.
pub fn encode_wav(buf: &AudioBuffer, format: WavFormat, comment: Option<&str>) -> Vec<u8> {
    let bytes_per_sample = usize::from(format.bits() / 8);
    let data_len = buf.len() * bytes_per_sample;
    let list = comment.map(info_chunk);
    let riff_len = 4 + (8 + 16) + (8 + data_len + data_len % 2) + list.as_ref().map_or(0, Vec::len);

    let mut out = Vec::with_capacity(8 + riff_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(riff_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&format.tag().to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&buf.sample_rate.to_le_bytes());
    out.extend_from_slice(&(buf.sample_rate * bytes_per_sample as u32).to_le_bytes());
    out.extend_from_slice(&(bytes_per_sample as u16).to_le_bytes());
    out.extend_from_slice(&format.bits().to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &buf.samples {
        match format {
            WavFormat::Pcm16 => {
                let q = (f64::from(s) * 32767.0).round().clamp(-32768.0, 32767.0) as i16;
                out.extend_from_slice(&q.to_le_bytes());
            }
            WavFormat::Float32 => out.extend_from_slice(&s.to_le_bytes()),
        }
    }
    if data_len % 2 == 1 {
        out.push(0);
    }
    if let Some(list) = list {
        out.extend_from_slice(&list);
    }
    out
}

fn info_chunk(comment: &str) -> Vec<u8> {
    let mut text = comment.as_bytes().to_vec();
    text.push(0);
    if text.len() % 2 == 1 {
        text.push(0);
    }
    let mut chunk = Vec::with_capacity(text.len() + 20);
    chunk.extend_from_slice(b"LIST");
    chunk.extend_from_slice(&((4 + 8 + text.len()) as u32).to_le_bytes());
    chunk.extend_from_slice(b"INFO");
    chunk.extend_from_slice(b"ICMT");
    chunk.extend_from_slice(&(text.len() as u32).to_le_bytes());
    chunk.extend_from_slice(&text);
    chunk
}

/// A decoded WAV file: audio, source sample format, and the `ICMT` comment if any.
#[derive(Debug, Clone, PartialEq)]
pub struct WavFile {
    pub audio: AudioBuffer,
    pub format: WavFormat,
    pub comment: Option<String>,
}

pub fn decode_wav(bytes: &[u8]) -> Result<WavFile, AudioError> {
    let bad = |m: &str| AudioError::Format(m.to_string());
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(bad("not a RIFF/WAVE file"));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    let mut comment = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let len = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body = bytes.get(pos + 8..pos + 8 + len).ok_or_else(|| bad("truncated chunk"))?;
        match id {
            b"fmt " => {
                if len < 16 {
                    return Err(bad("short fmt chunk"));
                }
                let u16_at = |o: usize| u16::from_le_bytes([body[o], body[o + 1]]);
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                fmt = Some((u16_at(0), u16_at(2), rate, u16_at(14)));
            }
            b"data" => data = Some(body),
            b"LIST" if body.len() >= 4 && &body[0..4] == b"INFO" => {
                let mut p = 4;
                while p + 8 <= body.len() {
                    let sub_len = u32::from_le_bytes(body[p + 4..p + 8].try_into().unwrap()) as usize;
                    let sub = body.get(p + 8..p + 8 + sub_len).ok_or_else(|| bad("truncated INFO"))?;
                    if &body[p..p + 4] == b"ICMT" {
                        let end = sub.iter().position(|&b| b == 0).unwrap_or(sub.len());
                        comment = Some(String::from_utf8_lossy(&sub[..end]).into_owned());
                    }
                    p += 8 + sub_len + sub_len % 2;
                }
            }
            _ => {}
        }
        pos += 8 + len + len % 2;
    }
    let (tag, channels, rate, bits) = fmt.ok_or_else(|| bad("missing fmt chunk"))?;
    let data = data.ok_or_else(|| bad("missing data chunk"))?;
    if channels != 1 {
        return Err(AudioError::Format(format!("expected mono, found {channels} channels")));
    }
    let (format, samples) = match (tag, bits) {
        (1, 16) => (
            WavFormat::Pcm16,
            data.chunks_exact(2).map(|c| f32::from(i16::from_le_bytes([c[0], c[1]])) / 32767.0).collect(),
        ),
        (3, 32) => (
            WavFormat::Float32,
            data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
        ),
        _ => return Err(AudioError::Format(format!("unsupported encoding (tag {tag}, {bits} bits)"))),
    };
    Ok(WavFile { audio: AudioBuffer::new(samples, rate)?, format, comment })
}

pub fn write_wav(
    path: &Path,
    buf: &AudioBuffer,
    format: WavFormat,
    comment: Option<&str>,
) -> Result<(), AudioError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_wav(buf, format, comment))?;
    Ok(())
}

pub fn read_wav(path: &Path) -> Result<WavFile, AudioError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_wav(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(AudioBuffer::new(vec![0.0, f32::NAN], 44100), Err(AudioError::NonFinite(1))));
        assert!(matches!(AudioBuffer::new(vec![], 0), Err(AudioError::ZeroRate)));
    }

    #[test]
    fn pcm16_quantizes() {
        let buf = AudioBuffer::new(vec![0.0, 0.5, -1.0, 1.0], 8000).unwrap();
        let wav = decode_wav(&encode_wav(&buf, WavFormat::Pcm16, None)).unwrap();
        assert_eq!(wav.format, WavFormat::Pcm16);
        assert_eq!(wav.audio.sample_rate(), 8000);
        for (a, b) in wav.audio.samples().iter().zip(buf.samples()) {
            assert!((a - b).abs() <= 1.0 / 32767.0);
        }
    }

    #[test]
    fn comment_survives() {
        let buf = AudioBuffer::new(vec![0.25; 3], 44100).unwrap();
        let bytes = encode_wav(&buf, WavFormat::Float32, Some("config=abc"));
        let wav = decode_wav(&bytes).unwrap();
        assert_eq!(wav.comment.as_deref(), Some("config=abc"));
        assert_eq!(wav.audio, buf);
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize, bytes.len() - 8);
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode_wav(b"RIFX0000WAVE").is_err());
        assert!(decode_wav(&[]).is_err());
    }

    proptest! {
        #[test]
        fn float_round_trip_is_bit_exact(samples in prop::collection::vec(-1.0f32..1.0, 0..300), rate in 8000u32..96000) {
            let buf = AudioBuffer::new(samples, rate).unwrap();
            let bytes = encode_wav(&buf, WavFormat::Float32, None);
            let back = decode_wav(&bytes).unwrap();
            prop_assert_eq!(&back.audio, &buf);
            prop_assert_eq!(encode_wav(&back.audio, WavFormat::Float32, None), bytes);
        }
    }
}
