//! Short-time spectral analysis: STFT, mel spectrogram in dB, onset strength
//! and per-interval intensity statistics.
//!
//! Frame `t` covers samples `[t * hop, t * hop + n_fft)` with no padding; its
//! center sits at `t * hop + n_fft / 2`.

use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};
use thiserror::Error;

use crate::audio::AudioBuffer;

pub const DEFAULT_N_FFT: usize = 2048;
pub const DEFAULT_HOP: usize = 512;
pub const DEFAULT_N_MELS: usize = 80;

/// Power floor applied before the dB conversion (-100 dB).
pub const POWER_FLOOR: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum DspError {
    #[error("invalid argument: {0}")]
    Argument(String),
}

fn arg<T>(msg: impl Into<String>) -> Result<T, DspError> {
    Err(DspError::Argument(msg.into()))
}

/// Squared-magnitude STFT, `frames x (n_fft / 2 + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrogram {
    pub frames: Vec<Vec<f64>>,
    pub n_fft: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

impl PowerSpectrogram {
    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

pub fn stft(buffer: &AudioBuffer, n_fft: usize, hop: usize) -> Result<PowerSpectrogram, DspError> {
    if buffer.is_empty() {
        return arg("empty audio buffer");
    }
    if !n_fft.is_power_of_two() || n_fft < 2 {
        return arg(format!("n_fft {n_fft} is not a power of two"));
    }
    if hop == 0 || hop > n_fft {
        return arg(format!("hop {hop} outside (0, {n_fft}]"));
    }
    let x = buffer.samples();
    let n_frames = if x.len() < n_fft {
        1
    } else {
        (x.len() - n_fft) / hop + 1
    };
    let window = hann(n_fft);
    let fft = FftPlanner::new().plan_fft_forward(n_fft);
    let mut scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
    let mut buf = vec![Complex::default(); n_fft];
    let n_bins = n_fft / 2 + 1;

    let frames = (0..n_frames)
        .map(|t| {
            let start = t * hop;
            for (i, c) in buf.iter_mut().enumerate() {
                let s = x.get(start + i).copied().unwrap_or(0.0);
                *c = Complex::new(s * window[i], 0.0);
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            buf[..n_bins].iter().map(|c| c.norm_sqr()).collect()
        })
        .collect();

    Ok(PowerSpectrogram {
        frames,
        n_fft,
        hop,
        sample_rate: buffer.sample_rate(),
    })
}

/// Time-domain energy of a windowed frame, recovered from its one-sided power row.
pub fn frame_energy(row: &[f64], n_fft: usize) -> f64 {
    let nyquist = n_fft / 2;
    let interior: f64 = row[1..nyquist].iter().sum();
    (row[0] + row[nyquist] + 2.0 * interior) / n_fft as f64
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

#[derive(Debug, Clone, PartialEq)]
struct MelFilter {
    first_bin: usize,
    weights: Vec<f64>,
}

/// Triangular filters, equally spaced on the mel scale, peak weight 1.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    filters: Vec<MelFilter>,
    n_bins: usize,
}

impl MelFilterbank {
    pub fn new(
        n_mels: usize,
        n_fft: usize,
        sample_rate: u32,
        fmin: f64,
        fmax: f64,
    ) -> Result<Self, DspError> {
        if n_mels == 0 {
            return arg("n_mels must be positive");
        }
        let nyquist = sample_rate as f64 / 2.0;
        if !(fmin >= 0.0 && fmin < fmax && fmax <= nyquist) {
            return arg(format!("need 0 <= fmin < fmax <= {nyquist}, got {fmin}..{fmax}"));
        }
        let n_bins = n_fft / 2 + 1;
        let (mlo, mhi) = (hz_to_mel(fmin), hz_to_mel(fmax));
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(mlo + (mhi - mlo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / n_fft as f64;

        let filters = edges
            .windows(3)
            .map(|e| {
                let (lo, mid, hi) = (e[0], e[1], e[2]);
                let weight = |k: usize| {
                    let f = k as f64 * bin_hz;
                    let up = (f - lo) / (mid - lo);
                    let down = (hi - f) / (hi - mid);
                    up.min(down).max(0.0)
                };
                let first = (lo / bin_hz).floor() as usize;
                let last = ((hi / bin_hz).ceil() as usize).min(n_bins - 1);
                let mut weights: Vec<f64> = (first..=last).map(weight).collect();
                let lead = weights.iter().take_while(|&&w| w == 0.0).count();
                weights.drain(..lead);
                while weights.last() == Some(&0.0) {
                    weights.pop();
                }
                MelFilter {
                    first_bin: first + lead,
                    weights,
                }
            })
            .collect();
        Ok(Self { filters, n_bins })
    }

    pub fn n_mels(&self) -> usize {
        self.filters.len()
    }

    /// Dense row `m` of the filterbank matrix.
    pub fn row(&self, m: usize) -> Vec<f64> {
        let f = &self.filters[m];
        let mut row = vec![0.0; self.n_bins];
        row[f.first_bin..f.first_bin + f.weights.len()].copy_from_slice(&f.weights);
        row
    }

    pub fn apply(&self, power: &[f64]) -> Vec<f64> {
        self.filters
            .iter()
            .map(|f| {
                f.weights
                    .iter()
                    .zip(&power[f.first_bin..])
                    .map(|(w, p)| w * p)
                    .sum()
            })
            .collect()
    }
}

pub fn power_to_db(power: f64) -> f64 {
    10.0 * power.max(POWER_FLOOR).log10()
}

/// Mel-band magnitudes in dB, time-major, shifted so the global maximum is 0 dB.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub frames: Vec<Vec<f64>>,
    pub n_mels: usize,
    pub n_fft: usize,
    pub hop: usize,
    pub sample_rate: u32,
    /// The raw dB value that was mapped to 0 dB.
    pub reference_db: f64,
}

impl MelSpectrogram {
    /// Wraps an already-computed dB matrix (no shift applied).
    pub fn from_db(frames: Vec<Vec<f64>>, n_fft: usize, hop: usize, sample_rate: u32) -> Self {
        let n_mels = frames.first().map_or(0, Vec::len);
        Self {
            frames,
            n_mels,
            n_fft,
            hop,
            sample_rate,
            reference_db: 0.0,
        }
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn hop_s(&self) -> f64 {
        self.hop as f64 / self.sample_rate as f64
    }

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }

    pub fn frame_center_s(&self, t: usize) -> f64 {
        (t * self.hop) as f64 / self.sample_rate as f64
            + (self.n_fft / 2) as f64 / self.sample_rate as f64
    }

    /// Frames whose center lies in `[start_s, end_s)`, or the single frame
    /// nearest the interval midpoint when none does.
    pub fn frames_in(&self, start_s: f64, end_s: f64) -> Result<std::ops::Range<usize>, DspError> {
        if !(start_s >= 0.0 && start_s < end_s) {
            return arg(format!("invalid interval [{start_s}, {end_s})"));
        }
        if self.frames.is_empty() {
            return arg("empty mel spectrogram");
        }
        let (offset, hop_s) = (self.frame_center_s(0), self.hop_s());
        // first t with center >= x
        let first_at = |x: f64| -> usize {
            let mut t = ((x - offset) / hop_s).ceil().max(0.0) as usize;
            while t > 0 && self.frame_center_s(t - 1) >= x {
                t -= 1;
            }
            while t < self.n_frames() && self.frame_center_s(t) < x {
                t += 1;
            }
            t.min(self.n_frames())
        };
        let (lo, hi) = (first_at(start_s), first_at(end_s));
        if lo < hi {
            return Ok(lo..hi);
        }
        let mid = 0.5 * (start_s + end_s);
        let nearest = ((mid - offset) / hop_s)
            .round()
            .clamp(0.0, (self.n_frames() - 1) as f64) as usize;
        Ok(nearest..nearest + 1)
    }
}

pub fn mel_spectrogram(
    spec: &PowerSpectrogram,
    n_mels: usize,
    fmin: f64,
    fmax: f64,
) -> Result<MelSpectrogram, DspError> {
    let bank = MelFilterbank::new(n_mels, spec.n_fft, spec.sample_rate, fmin, fmax)?;
    Ok(mel_spectrogram_with(spec, &bank))
}

pub fn mel_spectrogram_with(spec: &PowerSpectrogram, bank: &MelFilterbank) -> MelSpectrogram {
    let mut frames: Vec<Vec<f64>> = spec
        .frames
        .iter()
        .map(|col| bank.apply(col).into_iter().map(power_to_db).collect())
        .collect();
    let reference_db = frames
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    for v in frames.iter_mut().flatten() {
        *v -= reference_db;
    }
    MelSpectrogram {
        frames,
        n_mels: bank.n_mels(),
        n_fft: spec.n_fft,
        hop: spec.hop,
        sample_rate: spec.sample_rate,
        reference_db,
    }
}

/// Per-frame onset strength.
#[derive(Debug, Clone, PartialEq)]
pub struct OnsetEnvelope {
    pub values: Vec<f64>,
    pub frame_rate: f64,
    /// Timestamp of `values[0]`; value `t` sits at `offset_s + t / frame_rate`.
    pub offset_s: f64,
}

impl OnsetEnvelope {
    pub fn time_of(&self, t: usize) -> f64 {
        self.offset_s + t as f64 / self.frame_rate
    }

    pub fn duration_s(&self) -> f64 {
        self.values.len() as f64 / self.frame_rate
    }
}

/// Mean over mel bands of the half-wave rectified first difference in dB.
///
/// Value `t` is stamped at the middle of the hop of samples that first enter
/// frame `t`, i.e. `t * hop + n_fft - hop / 2`. A sharp attack raises the flux
/// in the first frame whose window reaches it, so this is where the attack is.
pub fn onset_strength(mel: &MelSpectrogram) -> Result<OnsetEnvelope, DspError> {
    if mel.n_frames() < 2 {
        return arg("onset strength needs at least two frames");
    }
    let n_mels = mel.n_mels.max(1) as f64;
    let values = std::iter::once(0.0)
        .chain(mel.frames.windows(2).map(|w| {
            w[1].iter()
                .zip(&w[0])
                .map(|(cur, prev)| (cur - prev).max(0.0))
                .sum::<f64>()
                / n_mels
        }))
        .collect();
    let sr = mel.sample_rate as f64;
    Ok(OnsetEnvelope {
        values,
        frame_rate: mel.frame_rate(),
        offset_s: (mel.n_fft as f64 - mel.hop as f64 / 2.0) / sr,
    })
}

/// Arithmetic mean of every dB entry in frames centered inside `[start_s, end_s)`.
pub fn segment_mean_intensity(mel: &MelSpectrogram, start_s: f64, end_s: f64) -> Result<f64, DspError> {
    let range = mel.frames_in(start_s, end_s)?;
    let count = range.len() * mel.n_mels;
    let sum: f64 = mel.frames[range].iter().flatten().sum();
    Ok(sum / count as f64)
}

/// Per-band mean dB over the same frames as [`segment_mean_intensity`].
pub fn segment_band_means(mel: &MelSpectrogram, start_s: f64, end_s: f64) -> Result<Vec<f64>, DspError> {
    let range = mel.frames_in(start_s, end_s)?;
    let n = range.len() as f64;
    let mut acc = vec![0.0; mel.n_mels];
    for frame in &mel.frames[range] {
        for (a, v) in acc.iter_mut().zip(frame) {
            *a += v;
        }
    }
    Ok(acc.into_iter().map(|a| a / n).collect())
}
