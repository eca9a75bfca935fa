//! Invertible frame-transform codec (Hann-windowed orthonormal DCT-II) and
//! fixed-length chunking.
//!
//! Frames are 1024 samples with a hop of 512; a periodic Hann window at 50%
//! overlap sums to one, so full-mode (1024 coefficient) decoding reconstructs
//! the interior of the input exactly up to rounding.

use std::f64::consts::PI;
use std::io::{self, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::audio::{AudioBuffer, AudioError};

pub const FRAME_LEN: usize = 1024;
pub const HOP: usize = 512;
pub const TRUNCATED_DIMS: usize = 64;
pub const FULL_DIMS: usize = 1024;
pub const CHUNK_SECONDS: f64 = 4.0;

/// Overlap-add normalization never divides by less than this.
const MIN_WINDOW_POWER: f64 = 1e-2;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("audio has {0} samples, fewer than one {FRAME_LEN}-sample frame")]
    TooShort(usize),
    #[error("latent dims must be {TRUNCATED_DIMS} or {FULL_DIMS}, got {0}")]
    Dims(usize),
    #[error("latent shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite latent value at frame {frame}, dim {dim}")]
    NonFinite { frame: usize, dim: usize },
    #[error("latent file: {0}")]
    File(String),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Audio(#[from] AudioError),
}

/// Latent frames, `n_frames` rows of `dims` coefficients, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSeq {
    data: Vec<f64>,
    n_frames: usize,
    dims: usize,
    frame_hop: usize,
    frame_len: usize,
    sample_rate: u32,
}

impl LatentSeq {
    pub fn new(data: Vec<f64>, n_frames: usize, dims: usize, sample_rate: u32) -> Result<Self, CodecError> {
        if dims != TRUNCATED_DIMS && dims != FULL_DIMS {
            return Err(CodecError::Dims(dims));
        }
        if n_frames == 0 || data.len() != n_frames * dims {
            return Err(CodecError::Shape(format!("{} values for {n_frames} x {dims}", data.len())));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(CodecError::NonFinite { frame: i / dims, dim: i % dims });
        }
        Ok(Self { data, n_frames, dims, frame_hop: HOP, frame_len: FRAME_LEN, sample_rate })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn frame_hop(&self) -> usize {
        self.frame_hop
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frame(&self, f: usize) -> &[f64] {
        &self.data[f * self.dims..(f + 1) * self.dims]
    }

    pub fn same_shape(&self, other: &LatentSeq) -> bool {
        self.n_frames == other.n_frames && self.dims == other.dims
    }

    /// Channels-first (`dims x n_frames`) copy, the layout the velocity network consumes.
    pub fn to_channels_first(&self) -> Vec<f32> {
        let mut out = vec![0.0f32; self.data.len()];
        for f in 0..self.n_frames {
            for d in 0..self.dims {
                out[d * self.n_frames + f] = self.data[f * self.dims + d] as f32;
            }
        }
        out
    }

    /// Inverse of [`to_channels_first`](Self::to_channels_first) with the same shape as `self`.
    pub fn with_channels_first(&self, values: &[f32]) -> Result<Self, CodecError> {
        if values.len() != self.data.len() {
            return Err(CodecError::Shape(format!("{} values for {} x {}", values.len(), self.dims, self.n_frames)));
        }
        let mut data = vec![0.0; values.len()];
        for f in 0..self.n_frames {
            for d in 0..self.dims {
                data[f * self.dims + d] = f64::from(values[d * self.n_frames + f]);
            }
        }
        Self::new(data, self.n_frames, self.dims, self.sample_rate)
    }
}

/// Source and target latents of one content-identical chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkPair {
    source: LatentSeq,
    target: LatentSeq,
}

impl ChunkPair {
    pub fn new(source: LatentSeq, target: LatentSeq) -> Result<Self, CodecError> {
        if !source.same_shape(&target) {
            return Err(CodecError::Shape(format!(
                "source {}x{} vs target {}x{}",
                source.n_frames, source.dims, target.n_frames, target.dims
            )));
        }
        Ok(Self { source, target })
    }

    pub fn source(&self) -> &LatentSeq {
        &self.source
    }

    pub fn target(&self) -> &LatentSeq {
        &self.target
    }
}

/// Number of frames the codec produces for `n` samples.
pub fn frame_count(n: usize) -> usize {
    if n < FRAME_LEN {
        0
    } else {
        (n - FRAME_LEN) / HOP + 1
    }
}

/// Periodic Hann window of length [`FRAME_LEN`].
pub fn hann_window() -> Vec<f64> {
    (0..FRAME_LEN).map(|n| 0.5 * (1.0 - (2.0 * PI * n as f64 / FRAME_LEN as f64).cos())).collect()
}

/// Orthonormal DCT-II / DCT-III pair computed through one complex FFT
/// (Makhoul's even/odd reordering).
pub struct Dct {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    twiddle: Vec<Complex<f64>>,
}

impl Dct {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let twiddle = (0..n).map(|k| Complex::from_polar(1.0, -PI * k as f64 / (2.0 * n as f64))).collect();
        Self { n, forward: planner.plan_fft_forward(n), inverse: planner.plan_fft_inverse(n), twiddle }
    }

    fn scale(&self, k: usize) -> f64 {
        if k == 0 {
            (1.0 / self.n as f64).sqrt()
        } else {
            (2.0 / self.n as f64).sqrt()
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        assert_eq!(x.len(), n);
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        for i in 0..n / 2 {
            buf[i].re = x[2 * i];
            buf[n - 1 - i].re = x[2 * i + 1];
        }
        self.forward.process(&mut buf);
        (0..n).map(|k| (buf[k] * self.twiddle[k]).re * self.scale(k)).collect()
    }

    pub fn inverse(&self, c: &[f64]) -> Vec<f64> {
        let n = self.n;
        assert_eq!(c.len(), n);
        let raw = |k: usize| if k < n { c[k] / self.scale(k) } else { 0.0 };
        let mut buf: Vec<Complex<f64>> = (0..n)
            .map(|k| {
                let z = if k == 0 { Complex::new(raw(0), 0.0) } else { Complex::new(raw(k), -raw(n - k)) };
                z * self.twiddle[k].conj()
            })
            .collect();
        self.inverse.process(&mut buf);
        let mut x = vec![0.0; n];
        for i in 0..n / 2 {
            x[2 * i] = buf[i].re / n as f64;
            x[2 * i + 1] = buf[n - 1 - i].re / n as f64;
        }
        x
    }
}

/// Frame transform: Hann window, DCT-II, keep the first `dims` coefficients.
pub fn encode(audio: &AudioBuffer, dims: usize) -> Result<LatentSeq, CodecError> {
    encode_samples(&audio.to_f64(), audio.sample_rate(), dims)
}

/// [`encode`] over 64-bit samples.
pub fn encode_samples(x: &[f64], sample_rate: u32, dims: usize) -> Result<LatentSeq, CodecError> {
    if dims != TRUNCATED_DIMS && dims != FULL_DIMS {
        return Err(CodecError::Dims(dims));
    }
    let n_frames = frame_count(x.len());
    if n_frames == 0 {
        return Err(CodecError::TooShort(x.len()));
    }
    let window = hann_window();
    let dct = Dct::new(FRAME_LEN);
    let mut data = Vec::with_capacity(n_frames * dims);
    let mut frame = vec![0.0; FRAME_LEN];
    for f in 0..n_frames {
        let start = f * HOP;
        for (i, v) in frame.iter_mut().enumerate() {
            *v = x[start + i] * window[i];
        }
        data.extend_from_slice(&dct.forward(&frame)[..dims]);
    }
    LatentSeq::new(data, n_frames, dims, sample_rate)
}

/// Inverse transform with weighted overlap-add.
///
/// Output length is `(n_frames - 1) * hop + frame_len`.
pub fn decode(latent: &LatentSeq) -> AudioBuffer {
    let n_frames = latent.n_frames;
    let len = (n_frames - 1) * HOP + FRAME_LEN;
    let window = hann_window();
    let dct = Dct::new(FRAME_LEN);
    let mut out = vec![0.0; len];
    let mut norm = vec![0.0; len];
    let mut coeffs = vec![0.0; FRAME_LEN];
    for f in 0..n_frames {
        coeffs[..latent.dims].copy_from_slice(latent.frame(f));
        let frame = dct.inverse(&coeffs);
        let start = f * HOP;
        for i in 0..FRAME_LEN {
            out[start + i] += frame[i] * window[i];
            norm[start + i] += window[i] * window[i];
        }
    }
    for (o, w) in out.iter_mut().zip(&norm) {
        *o /= w.max(MIN_WINDOW_POWER);
    }
    AudioBuffer::from_f64(&out, latent.sample_rate).expect("finite latent decodes to finite audio")
}

/// One fixed-length chunk and the number of leading samples that are real
/// content (the rest is zero padding).
#[derive(Debug, Clone, PartialEq)]
pub struct AudioChunk {
    pub audio: AudioBuffer,
    pub valid_len: usize,
}

pub fn chunk_len(seconds: f64, sample_rate: u32) -> usize {
    (seconds * f64::from(sample_rate)).round() as usize
}

/// Splits audio into consecutive `seconds`-long chunks, zero-padding the last.
pub fn chunk(audio: &AudioBuffer, seconds: f64) -> Vec<AudioChunk> {
    let len = chunk_len(seconds, audio.sample_rate()).max(1);
    audio
        .samples()
        .chunks(len)
        .map(|part| {
            let mut samples = part.to_vec();
            samples.resize(len, 0.0);
            AudioChunk {
                audio: AudioBuffer::new(samples, audio.sample_rate()).expect("input samples are finite"),
                valid_len: part.len(),
            }
        })
        .collect()
}

/// Concatenates the unpadded parts of `chunks`.
pub fn dechunk(chunks: &[AudioChunk], sample_rate: u32) -> AudioBuffer {
    let samples = chunks.iter().flat_map(|c| c.audio.samples()[..c.valid_len].iter().copied()).collect();
    AudioBuffer::new(samples, sample_rate).expect("chunk samples are finite")
}

/// Latent cache file name for chunk `k` of `stem`.
pub fn chunk_file_name(stem: &str, k: usize) -> String {
    format!("{stem}.chunk{k}.lat")
}

/// Binary cache record: `F, D, hop, frame_len, rate` as little-endian `u32`,
/// then `F * D` row-major little-endian `f32` coefficients.
pub fn write_latent(w: &mut impl Write, latent: &LatentSeq) -> Result<(), CodecError> {
    for v in [latent.n_frames, latent.dims, latent.frame_hop, latent.frame_len, latent.sample_rate as usize] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    let mut bytes = Vec::with_capacity(latent.data.len() * 4);
    for &v in &latent.data {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_latent(r: &mut impl Read) -> Result<LatentSeq, CodecError> {
    let mut header = [0u8; 20];
    r.read_exact(&mut header).map_err(|_| CodecError::File("truncated header".into()))?;
    let field = |i: usize| u32::from_le_bytes(header[i * 4..i * 4 + 4].try_into().unwrap()) as usize;
    let (n_frames, dims, hop, frame_len, rate) = (field(0), field(1), field(2), field(3), field(4) as u32);
    if hop != HOP || frame_len != FRAME_LEN {
        return Err(CodecError::File(format!("unsupported framing hop {hop}, frame {frame_len}")));
    }
    let count = n_frames
        .checked_mul(dims)
        .filter(|&c| c <= 1 << 28)
        .ok_or_else(|| CodecError::File("implausible shape".into()))?;
    let mut body = vec![0u8; count * 4];
    r.read_exact(&mut body).map_err(|_| CodecError::File("truncated coefficients".into()))?;
    let data = body.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap()))).collect();
    LatentSeq::new(data, n_frames, dims, rate)
}

pub fn save_latent(path: &Path, latent: &LatentSeq) -> Result<(), CodecError> {
    let mut f = io::BufWriter::new(std::fs::File::create(path)?);
    write_latent(&mut f, latent)?;
    f.flush()?;
    Ok(())
}

pub fn load_latent(path: &Path) -> Result<LatentSeq, CodecError> {
    read_latent(&mut io::BufReader::new(std::fs::File::open(path)?))
}
