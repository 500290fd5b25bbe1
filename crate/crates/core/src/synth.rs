//! Synthetic test signals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::AudioBuffer;

/// Click onset times in seconds: `offset_s + k * 60 / bpm` below `duration_s`.
pub fn click_times(bpm: f64, duration_s: f64, offset_s: f64) -> Vec<f64> {
    let period = 60.0 / bpm;
    (0..)
        .map(|k| offset_s + k as f64 * period)
        .take_while(|&t| t < duration_s)
        .collect()
}

/// White-noise bursts of `burst_s` seconds at each click time, scaled by
/// `gain(t)`, over digital silence.
pub fn click_track(
    times: &[f64],
    duration_s: f64,
    sample_rate: u32,
    burst_s: f64,
    seed: u64,
    gain: impl Fn(f64) -> f64,
) -> AudioBuffer {
    let n = (duration_s * sample_rate as f64).round() as usize;
    let burst = ((burst_s * sample_rate as f64).round() as usize).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = vec![0.0; n];
    for &t in times {
        let start = (t * sample_rate as f64).round() as usize;
        let amp = gain(t).clamp(0.0, 1.0);
        for s in samples.iter_mut().skip(start).take(burst) {
            *s = amp * rng.random_range(-0.9..0.9);
        }
    }
    AudioBuffer::new(samples, sample_rate).expect("finite samples")
}

/// Constant-amplitude sine.
pub fn sine(freq_hz: f64, amplitude: f64, duration_s: f64, sample_rate: u32) -> AudioBuffer {
    let n = (duration_s * sample_rate as f64).round() as usize;
    let w = 2.0 * std::f64::consts::PI * freq_hz / sample_rate as f64;
    AudioBuffer::new(
        (0..n).map(|i| amplitude * (w * i as f64).sin()).collect(),
        sample_rate,
    )
    .expect("finite samples")
}
