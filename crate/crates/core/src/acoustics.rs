//! Frame-level low-level descriptors (LLDs) and functional pooling.
//!
//! Descriptors are computed once over the whole utterance on 25 ms Hann
//! frames with a 10 ms hop. A segment's functionals are the mean and
//! population std of the frames whose centers fall inside the selected
//! spans, so top-n "concatenation" never creates junction frames.
//!
//! Functional layout (`9 + 2 * n_mfcc` values, 35 by default):
//! F0 log mean/std (voiced frames), voiced fraction, energy dB mean/std,
//! spectral tilt mean/std, centroid mean/std, MFCC 1..n means, MFCC 1..n stds.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pooling::{frames_in_spans, mean_std};
use crate::selection::SpanSelection;
use crate::sfv::{SfvError, SfvMatrix};

pub const WIN_S: f64 = 0.025;
pub const HOP_S: f64 = 0.010;

/// Frames quieter than this RMS are never voiced.
const SILENCE_RMS: f64 = 1e-4;
const ENERGY_FLOOR: f64 = 1e-10;
const TILT_BAND_HZ: (f64, f64) = (60.0, 5000.0);
const MEL_BAND_HZ: (f64, f64) = (0.0, 8000.0);
/// Reference for the log-F0 scale: `log2(f0 / 27.5)`.
const F0_REFERENCE_HZ: f64 = 27.5;
/// Candidate lags within this fraction of the best peak win if shorter.
const PEAK_PREFERENCE: f64 = 0.9;

pub const COL_F0_LOG: usize = 0;
pub const COL_ENERGY: usize = 1;
pub const COL_TILT: usize = 2;
pub const COL_CENTROID: usize = 3;
pub const COL_MFCC: usize = 4;

#[derive(Debug, Error)]
pub enum AcousticsError {
    #[error("empty segment: no frames inside spans {0:?}")]
    EmptySegment(Vec<(f64, f64)>),
    #[error("selection is for {selection:?}, frames for {frames:?}")]
    UtteranceMismatch { selection: String, frames: String },
    #[error("LLD cache: {0}")]
    Cache(#[from] SfvError),
    #[error("LLD cache for {0:?} has an unexpected column count {1}")]
    CacheShape(String, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcousticsConfig {
    pub f0_min_hz: f64,
    pub f0_max_hz: f64,
    pub voicing_threshold: f64,
    pub fft_size: usize,
    pub n_mel: usize,
    pub n_mfcc: usize,
}

impl Default for AcousticsConfig {
    fn default() -> Self {
        Self {
            f0_min_hz: 60.0,
            f0_max_hz: 500.0,
            voicing_threshold: 0.45,
            fft_size: 512,
            n_mel: 26,
            n_mfcc: 13,
        }
    }
}

impl AcousticsConfig {
    pub fn functional_dim(&self) -> usize {
        9 + 2 * self.n_mfcc
    }
}

/// One analysis frame: the raw samples and their Hann-windowed copy.
#[derive(Debug, Clone)]
pub struct Frame {
    pub raw: Vec<f64>,
    pub windowed: Vec<f64>,
}

pub fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

fn frame_geometry(sample_rate: u32) -> (usize, usize) {
    let sr = f64::from(sample_rate);
    ((WIN_S * sr).round() as usize, (HOP_S * sr).round() as usize)
}

pub fn frame_count(n_samples: usize, sample_rate: u32) -> usize {
    let (win, hop) = frame_geometry(sample_rate);
    if n_samples < win {
        0
    } else {
        (n_samples - win) / hop + 1
    }
}

/// Splits a signal into 25 ms frames every 10 ms. The trailing partial frame
/// is dropped; a signal shorter than one window yields no frames.
pub fn frame_signal(samples: &[f32], sample_rate: u32) -> Vec<Frame> {
    let (win, hop) = frame_geometry(sample_rate);
    let window = hann(win);
    (0..frame_count(samples.len(), sample_rate))
        .map(|i| {
            let raw: Vec<f64> = samples[i * hop..i * hop + win].iter().map(|&s| f64::from(s)).collect();
            let windowed = raw.iter().zip(&window).map(|(s, w)| s * w).collect();
            Frame { raw, windowed }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F0Estimate {
    /// `None` when the frame is unvoiced.
    pub f0_hz: Option<f64>,
    /// Normalized autocorrelation at the chosen lag.
    pub strength: f64,
}

pub fn rms(raw: &[f64]) -> f64 {
    if raw.is_empty() {
        return 0.0;
    }
    (raw.iter().map(|s| s * s).sum::<f64>() / raw.len() as f64).sqrt()
}

/// Normalized-autocorrelation pitch estimate over the configured F0 range.
pub fn estimate_f0(raw: &[f64], sample_rate: u32, cfg: &AcousticsConfig) -> F0Estimate {
    let unvoiced = |strength| F0Estimate { f0_hz: None, strength };
    let n = raw.len();
    if rms(raw) < SILENCE_RMS || n < 4 {
        return unvoiced(0.0);
    }
    let mean = raw.iter().sum::<f64>() / n as f64;
    let x: Vec<f64> = raw.iter().map(|s| s - mean).collect();
    let sr = f64::from(sample_rate);
    let min_lag = ((sr / cfg.f0_max_hz).floor() as usize).max(2);
    let max_lag = ((sr / cfg.f0_min_hz).ceil() as usize).min(n * 3 / 4);
    if min_lag + 1 >= max_lag {
        return unvoiced(0.0);
    }
    // One lag of margin on each side for peak tests and interpolation.
    let corr: Vec<f64> = (min_lag - 1..=max_lag + 1)
        .map(|lag| {
            let (a, b) = (&x[..n - lag], &x[lag..]);
            let num: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
            let ea: f64 = a.iter().map(|v| v * v).sum();
            let eb: f64 = b.iter().map(|v| v * v).sum();
            let den = (ea * eb).sqrt();
            if den > 0.0 {
                num / den
            } else {
                0.0
            }
        })
        .collect();
    let at = |lag: usize| corr[lag + 1 - min_lag];
    let peaks: Vec<usize> = (min_lag..=max_lag)
        .filter(|&lag| at(lag) > 0.0 && at(lag) >= at(lag - 1) && at(lag) >= at(lag + 1))
        .collect();
    let Some(best) = peaks.iter().map(|&l| at(l)).max_by(f64::total_cmp) else {
        return unvoiced(0.0);
    };
    let lag = *peaks
        .iter()
        .find(|&&l| at(l) >= PEAK_PREFERENCE * best)
        .expect("best peak qualifies");
    let strength = at(lag);
    if strength < cfg.voicing_threshold {
        return unvoiced(strength);
    }
    let (l, c, r) = (at(lag - 1), at(lag), at(lag + 1));
    let curvature = l - 2.0 * c + r;
    let shift = if curvature < 0.0 {
        (0.5 * (l - r) / curvature).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    F0Estimate {
        f0_hz: Some(sr / (lag as f64 + shift)),
        strength,
    }
}

pub fn f0_log(f0_hz: f64) -> f64 {
    (f0_hz / F0_REFERENCE_HZ).log2()
}

/// RMS level of the unwindowed frame in dB, floored at -200 dB.
pub fn compute_energy(raw: &[f64]) -> f64 {
    20.0 * (rms(raw) + ENERGY_FLOOR).log10()
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDescriptors {
    /// Least-squares slope of dB magnitude against log10 frequency (dB/decade).
    pub tilt: f64,
    pub centroid_hz: f64,
    /// Coefficients 1..=n_mfcc; c0 is excluded.
    pub mfcc: Vec<f64>,
}

/// Magnitude spectrum, mel filterbank and DCT for one FFT size.
pub struct SpectralAnalyzer {
    fft: Arc<dyn Fft<f64>>,
    fft_size: usize,
    bin_hz: f64,
    /// Sparse triangular filters: (bin, weight).
    filters: Vec<Vec<(usize, f64)>>,
    /// `n_mfcc x n_mel`, rows for coefficients 1..=n_mfcc.
    dct: Vec<Vec<f64>>,
}

impl SpectralAnalyzer {
    pub fn new(cfg: &AcousticsConfig, sample_rate: u32) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
        let bin_hz = f64::from(sample_rate) / cfg.fft_size as f64;
        let n_bins = cfg.fft_size / 2 + 1;
        let hi = MEL_BAND_HZ.1.min(f64::from(sample_rate) / 2.0);
        let (mlo, mhi) = (hz_to_mel(MEL_BAND_HZ.0), hz_to_mel(hi));
        let edges: Vec<f64> = (0..cfg.n_mel + 2)
            .map(|i| mel_to_hz(mlo + (mhi - mlo) * i as f64 / (cfg.n_mel + 1) as f64))
            .collect();
        let filters = edges
            .windows(3)
            .map(|w| {
                let (left, center, right) = (w[0], w[1], w[2]);
                (0..n_bins)
                    .filter_map(|k| {
                        let f = k as f64 * bin_hz;
                        let weight = if f > left && f <= center {
                            (f - left) / (center - left)
                        } else if f > center && f < right {
                            (right - f) / (right - center)
                        } else {
                            0.0
                        };
                        (weight > 0.0).then_some((k, weight))
                    })
                    .collect()
            })
            .collect();
        let m = cfg.n_mel as f64;
        let dct = (1..=cfg.n_mfcc)
            .map(|k| {
                (0..cfg.n_mel)
                    .map(|j| (2.0 / m).sqrt() * (PI * k as f64 * (j as f64 + 0.5) / m).cos())
                    .collect()
            })
            .collect();
        Self {
            fft,
            fft_size: cfg.fft_size,
            bin_hz,
            filters,
            dct,
        }
    }

    pub fn bin_hz(&self) -> f64 {
        self.bin_hz
    }

    /// |X[k]| for k = 0..=fft_size/2 of the zero-padded frame.
    pub fn magnitude(&self, windowed: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = windowed
            .iter()
            .take(self.fft_size)
            .map(|&v| Complex::new(v, 0.0))
            .collect();
        buf.resize(self.fft_size, Complex::new(0.0, 0.0));
        self.fft.process(&mut buf);
        buf[..=self.fft_size / 2].iter().map(|c| c.norm()).collect()
    }

    pub fn centroid(&self, mags: &[f64]) -> f64 {
        let total: f64 = mags.iter().sum();
        if total <= 0.0 {
            return 0.0;
        }
        mags.iter().enumerate().map(|(k, m)| k as f64 * self.bin_hz * m).sum::<f64>() / total
    }

    pub fn tilt(&self, mags: &[f64]) -> f64 {
        let points: Vec<(f64, f64)> = mags
            .iter()
            .enumerate()
            .filter_map(|(k, &m)| {
                let f = k as f64 * self.bin_hz;
                (f >= TILT_BAND_HZ.0 && f <= TILT_BAND_HZ.1).then(|| (f.log10(), 20.0 * (m + 1e-12).log10()))
            })
            .collect();
        if points.len() < 2 {
            return 0.0;
        }
        let n = points.len() as f64;
        let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
        let my = points.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = points.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
        sxy / sxx
    }

    /// Natural-log mel energies of the power spectrum.
    pub fn log_mel(&self, mags: &[f64]) -> Vec<f64> {
        self.filters
            .iter()
            .map(|f| {
                let e: f64 = f.iter().map(|&(k, w)| w * mags[k] * mags[k]).sum();
                e.max(f64::MIN_POSITIVE).ln()
            })
            .collect()
    }

    pub fn mfcc_from_log_mel(&self, log_mel: &[f64]) -> Vec<f64> {
        self.dct
            .iter()
            .map(|row| row.iter().zip(log_mel).map(|(c, v)| c * v).sum())
            .collect()
    }

    pub fn describe(&self, windowed: &[f64]) -> SpectralDescriptors {
        let mags = self.magnitude(windowed);
        SpectralDescriptors {
            tilt: self.tilt(&mags),
            centroid_hz: self.centroid(&mags),
            mfcc: self.mfcc_from_log_mel(&self.log_mel(&mags)),
        }
    }
}

/// Per-frame descriptors of one utterance. Row layout:
/// `[f0_log, energy_db, tilt, centroid_hz, mfcc_1..mfcc_n]`; `f0_log` is 0
/// on unvoiced frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSeries {
    pub utterance_id: String,
    pub hop_s: f64,
    pub win_s: f64,
    pub n_mfcc: usize,
    pub voiced: Vec<bool>,
    pub rows: Vec<f64>,
}

impl FrameSeries {
    pub fn n_frames(&self) -> usize {
        self.voiced.len()
    }

    pub fn d_lld(&self) -> usize {
        COL_MFCC + self.n_mfcc
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.d_lld();
        &self.rows[i * d..(i + 1) * d]
    }

    pub fn frame_center(&self, i: usize) -> f64 {
        self.win_s / 2.0 + i as f64 * self.hop_s
    }

    /// Cache layout: the voicing flag (0/1) followed by the descriptor row.
    pub fn to_sfv(&self) -> SfvMatrix {
        let mut data = Vec::with_capacity(self.n_frames() * (self.d_lld() + 1));
        for i in 0..self.n_frames() {
            data.push(if self.voiced[i] { 1.0 } else { 0.0 });
            data.extend(self.row(i).iter().map(|&v| v as f32));
        }
        SfvMatrix {
            n_frames: self.n_frames(),
            dim: self.d_lld() + 1,
            hop_s: self.hop_s,
            offset_s: self.win_s / 2.0,
            data,
        }
    }

    pub fn from_sfv(utterance_id: &str, m: &SfvMatrix) -> Result<Self, AcousticsError> {
        if m.dim < COL_MFCC + 1 {
            return Err(AcousticsError::CacheShape(utterance_id.to_string(), m.dim));
        }
        let mut voiced = Vec::with_capacity(m.n_frames);
        let mut rows = Vec::with_capacity(m.n_frames * (m.dim - 1));
        for i in 0..m.n_frames {
            let r = m.row(i);
            voiced.push(r[0] != 0.0);
            rows.extend(r[1..].iter().map(|&v| f64::from(v)));
        }
        Ok(Self {
            utterance_id: utterance_id.to_string(),
            hop_s: m.hop_s,
            win_s: 2.0 * m.offset_s,
            n_mfcc: m.dim - 1 - COL_MFCC,
            voiced,
            rows,
        })
    }

    /// Rounds every descriptor through `f32`, matching a cache round trip.
    pub fn quantized(&self) -> Self {
        Self {
            rows: self.rows.iter().map(|&v| f64::from(v as f32)).collect(),
            ..self.clone()
        }
    }
}

/// Computes every LLD for whole utterances.
pub struct LldExtractor {
    cfg: AcousticsConfig,
    sample_rate: u32,
    spectral: SpectralAnalyzer,
}

impl LldExtractor {
    pub fn new(cfg: &AcousticsConfig, sample_rate: u32) -> Self {
        Self {
            cfg: cfg.clone(),
            sample_rate,
            spectral: SpectralAnalyzer::new(cfg, sample_rate),
        }
    }

    pub fn spectral(&self) -> &SpectralAnalyzer {
        &self.spectral
    }

    pub fn extract(&self, utterance_id: &str, samples: &[f32]) -> FrameSeries {
        let frames = frame_signal(samples, self.sample_rate);
        let mut voiced = Vec::with_capacity(frames.len());
        let mut rows = Vec::with_capacity(frames.len() * (COL_MFCC + self.cfg.n_mfcc));
        for frame in &frames {
            let f0 = estimate_f0(&frame.raw, self.sample_rate, &self.cfg);
            let spec = self.spectral.describe(&frame.windowed);
            voiced.push(f0.f0_hz.is_some());
            rows.push(f0.f0_hz.map_or(0.0, f0_log));
            rows.push(compute_energy(&frame.raw));
            rows.push(spec.tilt);
            rows.push(spec.centroid_hz);
            rows.extend(spec.mfcc);
        }
        FrameSeries {
            utterance_id: utterance_id.to_string(),
            hop_s: HOP_S,
            win_s: WIN_S,
            n_mfcc: self.cfg.n_mfcc,
            voiced,
            rows,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalVector(pub Vec<f64>);

impl FunctionalVector {
    pub fn names(n_mfcc: usize) -> Vec<String> {
        let mut names: Vec<String> = [
            "F0_log_mean",
            "F0_log_std",
            "voiced_fraction",
            "energy_db_mean",
            "energy_db_std",
            "tilt_mean",
            "tilt_std",
            "centroid_mean",
            "centroid_std",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        names.extend((1..=n_mfcc).map(|k| format!("mfcc{k}_mean")));
        names.extend((1..=n_mfcc).map(|k| format!("mfcc{k}_std")));
        names
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PooledFunctionals {
    pub vector: FunctionalVector,
    pub n_frames: usize,
    /// No selected frame was voiced; the F0 entries are zero.
    pub no_voiced_frames: bool,
}

fn pool_rows(frames: &FrameSeries, rows: &[usize]) -> PooledFunctionals {
    let d = frames.d_lld();
    let (mean, std) = mean_std(d, rows, |i| frames.row(i));
    let voiced_rows: Vec<usize> = rows.iter().copied().filter(|&i| frames.voiced[i]).collect();
    let (f0_mean, f0_std) = if voiced_rows.is_empty() {
        (0.0, 0.0)
    } else {
        let (m, s) = mean_std(1, &voiced_rows, |i| &frames.row(i)[COL_F0_LOG..=COL_F0_LOG]);
        (m[0], s[0])
    };
    let mut v = Vec::with_capacity(9 + 2 * frames.n_mfcc);
    v.extend([
        f0_mean,
        f0_std,
        voiced_rows.len() as f64 / rows.len() as f64,
        mean[COL_ENERGY],
        std[COL_ENERGY],
        mean[COL_TILT],
        std[COL_TILT],
        mean[COL_CENTROID],
        std[COL_CENTROID],
    ]);
    v.extend_from_slice(&mean[COL_MFCC..]);
    v.extend_from_slice(&std[COL_MFCC..]);
    PooledFunctionals {
        vector: FunctionalVector(v),
        n_frames: rows.len(),
        no_voiced_frames: voiced_rows.is_empty(),
    }
}

pub fn pool_functionals(frames: &FrameSeries, selection: &SpanSelection) -> Result<PooledFunctionals, AcousticsError> {
    if selection.utterance_id != frames.utterance_id {
        return Err(AcousticsError::UtteranceMismatch {
            selection: selection.utterance_id.clone(),
            frames: frames.utterance_id.clone(),
        });
    }
    let rows = frames_in_spans(frames.n_frames(), |i| frames.frame_center(i), &selection.spans);
    if rows.is_empty() {
        return Err(AcousticsError::EmptySegment(selection.spans.clone()));
    }
    Ok(pool_rows(frames, &rows))
}

/// Unselected baseline: every frame of the utterance.
pub fn pool_functionals_all(frames: &FrameSeries) -> Result<PooledFunctionals, AcousticsError> {
    if frames.n_frames() == 0 {
        return Err(AcousticsError::EmptySegment(Vec::new()));
    }
    let rows: Vec<usize> = (0..frames.n_frames()).collect();
    Ok(pool_rows(frames, &rows))
}
