//! Log-filterbank embeddings and the distribution and reconstruction
//! distances computed on them.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::audio::AudioBuffer;
use crate::latentcodec::{frame_count, hann_window, FRAME_LEN, HOP};

pub const EMBED_DIMS: usize = 64;
pub const BAND_LOW_HZ: f64 = 60.0;
pub const BAND_HIGH_HZ: f64 = 8000.0;
pub const LOG_FLOOR: f64 = 1e-8;
/// Added to every covariance diagonal before the Fréchet distance.
pub const COV_JITTER: f64 = 1e-6;
/// Eigenvalues in `(-EIG_TOLERANCE, 0)` are rounding noise and clamp to zero.
pub const EIG_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("audio of {0} samples is shorter than one {FRAME_LEN}-sample frame")]
    TooShort(usize),
    #[error("embedding widths differ: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("need at least {needed} vectors, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("frame counts differ: {0} vs {1}; reconstruction distance needs paired content")]
    FrameMismatch(usize, usize),
    #[error("matrix square root failed: eigenvalue {0} is negative")]
    NegativeEigenvalue(f64),
    #[error("non-finite embedding value")]
    NonFinite,
}

/// `M` vectors of width `E`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    data: Vec<f64>,
    dims: usize,
    pub label: String,
}

impl EmbeddingSet {
    pub fn new(data: Vec<f64>, dims: usize, label: impl Into<String>) -> Result<Self, MetricError> {
        if dims == 0 || data.len() % dims != 0 {
            return Err(MetricError::DimMismatch(data.len(), dims));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(MetricError::NonFinite);
        }
        Ok(Self { data, dims, label: label.into() })
    }

    pub fn from_rows(rows: &[Vec<f64>], label: impl Into<String>) -> Result<Self, MetricError> {
        let dims = rows.first().map_or(1, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != dims) {
            return Err(MetricError::DimMismatch(r.len(), dims));
        }
        Self::new(rows.concat(), dims, label)
    }

    /// Pools the frames of several sets into one.
    pub fn concat(sets: &[EmbeddingSet], label: impl Into<String>) -> Result<Self, MetricError> {
        let dims = sets.first().map_or(EMBED_DIMS, |s| s.dims);
        if let Some(s) = sets.iter().find(|s| s.dims != dims) {
            return Err(MetricError::DimMismatch(s.dims, dims));
        }
        Ok(Self { data: sets.iter().flat_map(|s| s.data.iter().copied()).collect(), dims, label: label.into() })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dims
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dims..(i + 1) * self.dims]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dims)
    }

    /// First `m` rows.
    pub fn truncated(&self, m: usize) -> Self {
        Self { data: self.data[..m.min(self.len()) * self.dims].to_vec(), dims: self.dims, label: self.label.clone() }
    }

    fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.len(), self.dims, &self.data)
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filters over the `FRAME_LEN / 2 + 1` FFT bins. Each row
/// covers at least one bin and sums to one.
pub fn mel_filterbank(sample_rate: u32) -> Vec<Vec<f64>> {
    let n_bins = FRAME_LEN / 2 + 1;
    let bin_hz = f64::from(sample_rate) / FRAME_LEN as f64;
    let high = BAND_HIGH_HZ.min(f64::from(sample_rate) / 2.0);
    let (m_lo, m_hi) = (hz_to_mel(BAND_LOW_HZ), hz_to_mel(high));
    let edges: Vec<f64> =
        (0..EMBED_DIMS + 2).map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (EMBED_DIMS + 1) as f64)).collect();
    (0..EMBED_DIMS)
        .map(|b| {
            let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            let mut w: Vec<f64> = (0..n_bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect();
            if w.iter().all(|&v| v == 0.0) {
                // Narrow low bands fall between bins: use the bin nearest the centre.
                w[((mid / bin_hz).round() as usize).min(n_bins - 1)] = 1.0;
            }
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= s);
            w
        })
        .collect()
}

/// Centre frequency of each embedding band.
pub fn band_centers() -> Vec<f64> {
    let (m_lo, m_hi) = (hz_to_mel(BAND_LOW_HZ), hz_to_mel(BAND_HIGH_HZ));
    (1..=EMBED_DIMS).map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (EMBED_DIMS + 1) as f64)).collect()
}

/// Per-frame log filterbank magnitudes, framed exactly like the codec.
pub fn embed(audio: &AudioBuffer) -> Result<EmbeddingSet, MetricError> {
    let x = audio.to_f64();
    let n_frames = frame_count(x.len());
    if n_frames == 0 {
        return Err(MetricError::TooShort(x.len()));
    }
    let window = hann_window();
    let bank = mel_filterbank(audio.sample_rate());
    let fft = FftPlanner::new().plan_fft_forward(FRAME_LEN);
    let mut data = Vec::with_capacity(n_frames * EMBED_DIMS);
    let mut buf = vec![Complex::new(0.0, 0.0); FRAME_LEN];
    for f in 0..n_frames {
        for (i, z) in buf.iter_mut().enumerate() {
            *z = Complex::new(x[f * HOP + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        let mag: Vec<f64> = buf[..FRAME_LEN / 2 + 1].iter().map(|z| z.norm()).collect();
        for w in &bank {
            let e: f64 = w.iter().zip(&mag).map(|(a, b)| a * b).sum();
            data.push((e + LOG_FLOOR).ln());
        }
    }
    EmbeddingSet::new(data, EMBED_DIMS, "")
}

/// Mean and covariance of an embedding set.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFit {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianFit {
    /// Sample mean and unbiased covariance plus [`COV_JITTER`] on the diagonal.
    pub fn fit(set: &EmbeddingSet) -> Result<Self, MetricError> {
        let m = set.len();
        if m < 2 {
            return Err(MetricError::TooFew { needed: 2, got: m });
        }
        let x = set.matrix();
        let mean = x.row_mean().transpose();
        let mut centered = x;
        for mut row in centered.row_iter_mut() {
            row -= mean.transpose();
        }
        let mut cov = centered.transpose() * &centered / (m - 1) as f64;
        cov = (&cov + cov.transpose()) * 0.5;
        for i in 0..cov.nrows() {
            cov[(i, i)] += COV_JITTER;
        }
        Ok(Self { mean, cov })
    }
}

fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>, MetricError> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = clamped_roots(&eig.eigenvalues)?;
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

fn clamped_roots(values: &DVector<f64>) -> Result<DVector<f64>, MetricError> {
    let mut out = values.clone();
    for v in out.iter_mut() {
        if *v < -EIG_TOLERANCE {
            return Err(MetricError::NegativeEigenvalue(*v));
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(out)
}

/// Fréchet distance between two Gaussians.
pub fn frechet_distance(a: &GaussianFit, b: &GaussianFit) -> Result<f64, MetricError> {
    if a.mean.len() != b.mean.len() {
        return Err(MetricError::DimMismatch(a.mean.len(), b.mean.len()));
    }
    let diff = &a.mean - &b.mean;
    let sa = psd_sqrt(&a.cov)?;
    let inner = &sa * &b.cov * &sa;
    let eig = SymmetricEigen::new((&inner + inner.transpose()) * 0.5);
    let tr_sqrt: f64 = clamped_roots(&eig.eigenvalues)?.sum();
    Ok((diff.norm_squared() + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt).max(0.0))
}

pub fn fad(a: &EmbeddingSet, b: &EmbeddingSet) -> Result<f64, MetricError> {
    if a.dims != b.dims {
        return Err(MetricError::DimMismatch(a.dims, b.dims));
    }
    frechet_distance(&GaussianFit::fit(a)?, &GaussianFit::fit(b)?)
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Median pairwise Euclidean distance over the pooled rows, ignoring exact
/// duplicates so that repeated silent frames cannot collapse the bandwidth.
pub fn median_bandwidth(a: &EmbeddingSet, b: &EmbeddingSet) -> f64 {
    let pooled: Vec<&[f64]> = a.rows().chain(b.rows()).collect();
    let mut d: Vec<f64> = Vec::with_capacity(pooled.len() * pooled.len().saturating_sub(1) / 2);
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            let v = sq_dist(pooled[i], pooled[j]);
            if v > 0.0 {
                d.push(v);
            }
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    m.sqrt()
}

/// Unbiased squared MMD with a Gaussian RBF kernel of the median-heuristic bandwidth.
pub fn kad(a: &EmbeddingSet, b: &EmbeddingSet) -> Result<f64, MetricError> {
    if a.dims != b.dims {
        return Err(MetricError::DimMismatch(a.dims, b.dims));
    }
    kad_with_bandwidth(a, b, median_bandwidth(a, b))
}

/// Unbiased squared MMD with `k(x, y) = exp(-|x - y|^2 / (2 sigma^2))`.
pub fn kad_with_bandwidth(a: &EmbeddingSet, b: &EmbeddingSet, sigma: f64) -> Result<f64, MetricError> {
    if a.dims != b.dims {
        return Err(MetricError::DimMismatch(a.dims, b.dims));
    }
    let (m, n) = (a.len(), b.len());
    if m < 2 || n < 2 {
        return Err(MetricError::TooFew { needed: 2, got: m.min(n) });
    }
    let gamma = 1.0 / (2.0 * sigma * sigma);
    let k = |x: &[f64], y: &[f64]| (-gamma * sq_dist(x, y)).exp();
    let within = |s: &EmbeddingSet| {
        let mut acc = 0.0;
        for i in 0..s.len() {
            for j in i + 1..s.len() {
                acc += k(s.row(i), s.row(j));
            }
        }
        2.0 * acc / (s.len() * (s.len() - 1)) as f64
    };
    let mut cross = 0.0;
    for x in a.rows() {
        for y in b.rows() {
            cross += k(x, y);
        }
    }
    Ok(within(a) + within(b) - 2.0 * cross / (m * n) as f64)
}

/// Mean over frames of the Euclidean norm of the per-frame difference.
pub fn recon_distance(a: &EmbeddingSet, b: &EmbeddingSet) -> Result<f64, MetricError> {
    if a.dims != b.dims {
        return Err(MetricError::DimMismatch(a.dims, b.dims));
    }
    if a.len() != b.len() {
        return Err(MetricError::FrameMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricError::TooFew { needed: 1, got: 0 });
    }
    Ok(a.rows().zip(b.rows()).map(|(x, y)| sq_dist(x, y).sqrt()).sum::<f64>() / a.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub condition: String,
    pub metric: String,
    pub system: String,
    pub value: f64,
}

/// Table of metric values by condition, metric and system.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub fn push(&mut self, condition: &str, metric: &str, system: &str, value: f64) {
        self.rows.push(MetricRow { condition: condition.into(), metric: metric.into(), system: system.into(), value });
    }

    pub fn get(&self, condition: &str, metric: &str, system: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.condition == condition && r.metric == metric && r.system == system)
            .map(|r| r.value)
    }

    /// `condition,metric,system,value` rows, preceded by `# ` comment lines.
    pub fn to_csv(&self, comments: &[String]) -> String {
        let mut out = String::new();
        for c in comments {
            let _ = writeln!(out, "# {c}");
        }
        out.push_str("condition,metric,system,value\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{}", r.condition, r.metric, r.system, r.value);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, String> {
        let mut report = Self::default();
        let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
        if lines.next() != Some("condition,metric,system,value") {
            return Err("missing header condition,metric,system,value".into());
        }
        for (i, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            let [c, m, s, v] = f[..] else { return Err(format!("row {}: expected 4 fields", i + 1)) };
            let value = v.parse().map_err(|_| format!("row {}: bad value {v:?}", i + 1))?;
            report.push(c, m, s, value);
        }
        Ok(report)
    }

    /// Aligned text table: one line per condition and metric, one column per system.
    pub fn to_table(&self) -> String {
        let mut systems: Vec<&str> = Vec::new();
        let mut keys: Vec<(&str, &str)> = Vec::new();
        for r in &self.rows {
            if !systems.contains(&r.system.as_str()) {
                systems.push(&r.system);
            }
            if !keys.contains(&(r.condition.as_str(), r.metric.as_str())) {
                keys.push((&r.condition, &r.metric));
            }
        }
        let mut out = format!("{:<10}{:<8}", "condition", "metric");
        for s in &systems {
            let _ = write!(out, "{s:>14}");
        }
        out.push('\n');
        for (c, m) in keys {
            let _ = write!(out, "{c:<10}{m:<8}");
            for s in &systems {
                match self.get(c, m, s) {
                    Some(v) => {
                        let _ = write!(out, "{v:>14.6}");
                    }
                    None => {
                        let _ = write!(out, "{:>14}", "-");
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal_set(n: usize, dims: usize, shift: f64, seed: u64) -> EmbeddingSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * dims).map(|_| StandardNormal.sample(&mut rng)).map(|v: f64| v + shift).collect();
        EmbeddingSet::new(data, dims, "").unwrap()
    }

    fn sine(freq: f64, len: usize) -> AudioBuffer {
        let x: Vec<f64> = (0..len).map(|n| 0.5 * (std::f64::consts::TAU * freq * n as f64 / 44100.0).sin()).collect();
        AudioBuffer::from_f64(&x, 44100).unwrap()
    }

    #[test]
    fn filterbank_rows_are_normalized() {
        let bank = mel_filterbank(44100);
        assert_eq!(bank.len(), EMBED_DIMS);
        for row in &bank {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn silence_embeds_to_floor() {
        let e = embed(&AudioBuffer::silence(4096, 44100)).unwrap();
        assert_eq!(e.len(), frame_count(4096));
        assert!(e.rows().flatten().all(|&v| v == LOG_FLOOR.ln()));
        assert!(matches!(embed(&AudioBuffer::silence(1000, 44100)), Err(MetricError::TooShort(1000))));
    }

    #[test]
    fn sine_peaks_in_its_band() {
        let centers = band_centers();
        let nearest = (0..EMBED_DIMS)
            .min_by(|&i, &j| (centers[i] - 440.0).abs().total_cmp(&(centers[j] - 440.0).abs()))
            .unwrap();
        let e = embed(&sine(440.0, 44100)).unwrap();
        assert_eq!(e.len(), crate::latentcodec::frame_count(44100));
        for row in e.rows() {
            let arg = (0..EMBED_DIMS).max_by(|&i, &j| row[i].total_cmp(&row[j])).unwrap();
            assert_eq!(arg, nearest);
        }
    }

    #[test]
    fn fad_closed_forms() {
        let x = normal_set(500, 4, 0.0, 1);
        assert!(fad(&x, &x).unwrap().abs() < 1e-6);

        let a = normal_set(100_000, 1, 0.0, 2);
        let b = normal_set(100_000, 1, 1.0, 3);
        assert!((fad(&a, &b).unwrap() - 1.0).abs() < 0.05);

        let pa = GaussianFit { mean: DVector::zeros(2), cov: DMatrix::identity(2, 2) };
        let pb = GaussianFit { mean: DVector::zeros(2), cov: DMatrix::identity(2, 2) * 4.0 };
        assert_eq!(frechet_distance(&pa, &pb).unwrap(), 2.0);
    }

    #[test]
    fn fad_rejects_indefinite_covariance() {
        let pa = GaussianFit { mean: DVector::zeros(2), cov: DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.5])) };
        let pb = GaussianFit { mean: DVector::zeros(2), cov: DMatrix::identity(2, 2) };
        assert!(matches!(frechet_distance(&pa, &pb), Err(MetricError::NegativeEigenvalue(_))));
    }

    #[test]
    fn fad_grows_with_separation() {
        let base = normal_set(10_000, 1, 0.0, 4);
        let d: Vec<f64> = [0.5, 1.0, 2.0].iter().map(|&s| fad(&base, &normal_set(10_000, 1, s, 5)).unwrap()).collect();
        assert!(d[0] < d[1] && d[1] < d[2], "{d:?}");
    }

    #[test]
    fn fad_is_rotation_invariant() {
        let a = normal_set(400, 2, 0.0, 6);
        let b = normal_set(400, 2, 0.7, 7);
        let (s, c) = 0.6f64.sin_cos();
        let rot = |e: &EmbeddingSet| {
            let rows: Vec<Vec<f64>> = e.rows().map(|r| vec![c * r[0] - s * r[1], s * r[0] + c * r[1]]).collect();
            EmbeddingSet::from_rows(&rows, "").unwrap()
        };
        assert!((fad(&a, &b).unwrap() - fad(&rot(&a), &rot(&b)).unwrap()).abs() < 1e-6);
        assert!((fad(&a, &b).unwrap() - fad(&b, &a).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn kad_hand_value() {
        let a = EmbeddingSet::new(vec![0.0, 0.0], 1, "").unwrap();
        let b = EmbeddingSet::new(vec![1.0, 1.0], 1, "").unwrap();
        let expected = 2.0 - 2.0 * (-0.5f64).exp();
        assert!((kad_with_bandwidth(&a, &b, 1.0).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn kad_separates() {
        let pool = normal_set(2000, 1, 0.0, 8);
        let same_a = EmbeddingSet::new(pool.data[..1000].to_vec(), 1, "").unwrap();
        let same_b = EmbeddingSet::new(pool.data[1000..].to_vec(), 1, "").unwrap();
        let baseline = kad(&same_a, &same_b).unwrap();
        assert!(baseline.abs() < 0.01, "{baseline}");
        let shifted = kad(&same_a, &normal_set(1000, 1, 5.0, 9)).unwrap();
        assert!(shifted > 10.0 * baseline.abs(), "{shifted} vs {baseline}");
        assert!((kad(&same_a, &same_b).unwrap() - kad(&same_b, &same_a).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn recon_cases() {
        let a = EmbeddingSet::new(vec![0.0; 4], 4, "").unwrap();
        let b = EmbeddingSet::new(vec![3.0, 4.0, 0.0, 0.0], 4, "").unwrap();
        assert_eq!(recon_distance(&a, &b).unwrap(), 5.0);
        assert_eq!(recon_distance(&b, &b).unwrap(), 0.0);
        let c = EmbeddingSet::new(vec![6.0, 8.0, 0.0, 0.0], 4, "").unwrap();
        assert_eq!(recon_distance(&a, &c).unwrap(), 10.0);
        let two = EmbeddingSet::new(vec![0.0; 8], 4, "").unwrap();
        assert!(matches!(recon_distance(&a, &two), Err(MetricError::FrameMismatch(1, 2))));
    }

    #[test]
    fn report_round_trip() {
        let mut r = MetricReport::default();
        r.push("di", "fad", "render", 1.25);
        r.push("di", "fad", "guitarflow", 0.5);
        r.push("amp", "kad", "render", -0.001);
        let csv = r.to_csv(&["config_hash=abc".into()]);
        assert!(csv.starts_with("# config_hash=abc\ncondition,metric,system,value\n"));
        assert_eq!(MetricReport::from_csv(&csv).unwrap(), r);
        let table = r.to_table();
        assert!(table.contains("guitarflow") && table.lines().count() == 3);
    }

    proptest! {
        #[test]
        fn recon_triangle_inequality(v in prop::collection::vec(-5.0f64..5.0, 18)) {
            let a = EmbeddingSet::new(v[0..6].to_vec(), 3, "").unwrap();
            let b = EmbeddingSet::new(v[6..12].to_vec(), 3, "").unwrap();
            let c = EmbeddingSet::new(v[12..18].to_vec(), 3, "").unwrap();
            let ab = recon_distance(&a, &b).unwrap();
            let bc = recon_distance(&b, &c).unwrap();
            let ac = recon_distance(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-12);
        }
    }
}
