//! Global tempo estimation, dynamic-programming beat tracking and
//! beat-delimited segmentation.

use thiserror::Error;

use crate::dsp::OnsetEnvelope;

/// Minimum envelope length accepted by [`estimate_tempo`].
pub const MIN_TEMPO_SECONDS: f64 = 4.0;

#[derive(Debug, Error, PartialEq)]
pub enum BeatError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid argument: {0}")]
    Argument(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TempoConfig {
    pub bpm_min: f64,
    pub bpm_max: f64,
    pub prior_bpm: f64,
    pub prior_spread_octaves: f64,
}

impl Default for TempoConfig {
    fn default() -> Self {
        Self {
            bpm_min: 40.0,
            bpm_max: 220.0,
            prior_bpm: 120.0,
            prior_spread_octaves: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TempoEstimate {
    pub bpm: f64,
    /// Envelope frames per beat.
    pub period_frames: f64,
}

impl TempoEstimate {
    pub fn from_bpm(bpm: f64, frame_rate: f64) -> Self {
        Self {
            bpm,
            period_frames: frame_rate * 60.0 / bpm,
        }
    }
}

/// Lag-smoothed autocorrelation of the mean-removed envelope weighted by a log-Gaussian
/// tempo prior, maximised over integer lags and refined with a parabola
/// through the peak and its neighbours.
///
/// A flat objective (no positive weighted correlation) returns the prior
/// center exactly.
pub fn estimate_tempo(env: &OnsetEnvelope, cfg: &TempoConfig) -> Result<TempoEstimate, BeatError> {
    if !(cfg.bpm_min > 0.0 && cfg.bpm_min < cfg.bpm_max && cfg.prior_spread_octaves > 0.0) {
        return Err(BeatError::Argument(format!("bad tempo config {cfg:?}")));
    }
    if env.duration_s() < MIN_TEMPO_SECONDS {
        return Err(BeatError::InsufficientData(format!(
            "onset envelope spans {:.2} s, need {MIN_TEMPO_SECONDS} s",
            env.duration_s()
        )));
    }
    let fr = env.frame_rate;
    let n = env.values.len();
    let prior = TempoEstimate::from_bpm(cfg.prior_bpm, fr);

    let mean = env.values.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = env.values.iter().map(|v| v - mean).collect();
    let lag_min = ((60.0 * fr / cfg.bpm_max).ceil() as usize).max(1);
    let lag_max = ((60.0 * fr / cfg.bpm_min).floor() as usize).min(n - 1);
    if lag_min > lag_max {
        return Err(BeatError::InsufficientData("no admissible tempo lag".into()));
    }

    let weight = |lag: f64| {
        let octaves = (60.0 * fr / lag / cfg.prior_bpm).log2() / cfg.prior_spread_octaves;
        (-0.5 * octaves * octaves).exp()
    };
    let ac = |lag: usize| -> f64 {
        if lag >= n {
            return 0.0;
        }
        centered[lag..].iter().zip(&centered).map(|(a, b)| a * b).sum()
    };
    // [1/4, 1/2, 1/4] smoothing across lags so a period that falls between
    // two integer lags is not split in half
    let raw: Vec<f64> = (lag_min - 1..=lag_max + 1).map(ac).collect();
    let score: Vec<f64> = raw
        .windows(3)
        .zip(lag_min..=lag_max)
        .map(|(w, lag)| (0.25 * w[0] + 0.5 * w[1] + 0.25 * w[2]) * weight(lag as f64))
        .collect();

    let prior_distance = |i: usize| ((lag_min + i) as f64 / prior.period_frames).ln().abs();
    let best = (0..score.len()).fold(None::<usize>, |best, i| match best {
        None => Some(i),
        Some(b) if score[i] > score[b] => Some(i),
        Some(b) if score[i] == score[b] && prior_distance(i) < prior_distance(b) => Some(i),
        keep => keep,
    });
    let best = best.expect("non-empty lag range");
    if score[best] <= 0.0 {
        return Ok(prior);
    }

    let mut lag = (lag_min + best) as f64;
    if best > 0 && best + 1 < score.len() {
        let (a, b, c) = (score[best - 1], score[best], score[best + 1]);
        let denom = a - 2.0 * b + c;
        if denom < 0.0 {
            lag += (0.5 * (a - c) / denom).clamp(-0.5, 0.5);
        }
    }
    let bpm = (60.0 * fr / lag).clamp(cfg.bpm_min, cfg.bpm_max);
    Ok(TempoEstimate::from_bpm(bpm, fr))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BeatGrid {
    /// Envelope frame of each beat.
    pub beat_frames: Vec<usize>,
    /// Strictly increasing beat times in seconds.
    pub beat_times_s: Vec<f64>,
}

impl BeatGrid {
    pub fn len(&self) -> usize {
        self.beat_times_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beat_times_s.is_empty()
    }
}

/// Onset envelope divided by its standard deviation (or its maximum when the
/// deviation is zero). This is the local score the tracker maximises.
pub fn normalized_onset(env: &OnsetEnvelope) -> Vec<f64> {
    let n = env.values.len().max(1) as f64;
    let mean = env.values.iter().sum::<f64>() / n;
    let var = env.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let max = env.values.iter().copied().fold(0.0, f64::max);
    let scale = if var > 0.0 { var.sqrt() } else { max };
    if scale <= 0.0 {
        return vec![0.0; env.values.len()];
    }
    env.values.iter().map(|v| v / scale).collect()
}

/// Finds the beat sequence maximising
/// `sum(score[b_i]) - tightness * sum(ln(gap_i / period)^2)` where `score` is
/// [`normalized_onset`] and every gap lies in `[period / 2, 2 * period]`.
///
/// A chain may start at any frame. An envelope shorter than one period or
/// with no positive onset yields an empty grid.
pub fn track_beats(
    env: &OnsetEnvelope,
    tempo: &TempoEstimate,
    tightness: f64,
) -> Result<BeatGrid, BeatError> {
    if !(tightness > 0.0) {
        return Err(BeatError::Argument(format!("tightness {tightness} must be positive")));
    }
    let period = tempo.period_frames;
    if !(period > 0.0 && period.is_finite()) {
        return Err(BeatError::Argument(format!("invalid beat period {period}")));
    }
    let n = env.values.len();
    if (n as f64) < period {
        return Ok(BeatGrid::default());
    }
    let local = normalized_onset(env);
    if local.iter().all(|&v| v <= 0.0) {
        return Ok(BeatGrid::default());
    }

    let gap_min = ((period / 2.0).ceil() as usize).max(1);
    let gap_max = ((2.0 * period).floor() as usize).max(gap_min);
    let penalty: Vec<f64> = (gap_min..=gap_max)
        .map(|gap| tightness * (gap as f64 / period).ln().powi(2))
        .collect();

    let mut cum = vec![0.0; n];
    let mut back: Vec<Option<usize>> = vec![None; n];
    for t in 0..n {
        let mut best = 0.0;
        let mut link = None;
        for (gap, pen) in (gap_min..=gap_max).zip(&penalty) {
            if gap > t {
                break;
            }
            let cand = cum[t - gap] - pen;
            if cand > best {
                best = cand;
                link = Some(t - gap);
            }
        }
        cum[t] = local[t] + best;
        back[t] = link;
    }

    let end = (0..n)
        .max_by(|&a, &b| cum[a].total_cmp(&cum[b]))
        .expect("non-empty envelope");
    if cum[end] <= 0.0 {
        return Ok(BeatGrid::default());
    }
    let mut frames = vec![end];
    while let Some(prev) = back[*frames.last().unwrap()] {
        frames.push(prev);
    }
    frames.reverse();
    let beat_times_s = frames.iter().map(|&f| env.time_of(f)).collect();
    Ok(BeatGrid {
        beat_frames: frames,
        beat_times_s,
    })
}

/// A half-open time interval `[start_s, end_s)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Span {
    pub start_s: f64,
    pub end_s: f64,
}

impl Span {
    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start_s && t < self.end_s
    }
}

/// Splits `[0, duration_s)` at every beat. Spans shorter than
/// `min_segment_s` merge into their predecessor, or into their successor
/// when they come first.
pub fn segments_from_beats(beats: &BeatGrid, duration_s: f64, min_segment_s: f64) -> Vec<Span> {
    let mut cuts = vec![0.0];
    cuts.extend(
        beats
            .beat_times_s
            .iter()
            .copied()
            .filter(|&b| b > 0.0 && b < duration_s),
    );
    cuts.push(duration_s);
    cuts.dedup();

    let mut out: Vec<Span> = Vec::with_capacity(cuts.len());
    let mut carry: Option<f64> = None;
    for w in cuts.windows(2) {
        let span = Span {
            start_s: carry.take().unwrap_or(w[0]),
            end_s: w[1],
        };
        if span.duration_s() >= min_segment_s {
            out.push(span);
        } else if let Some(last) = out.last_mut() {
            last.end_s = span.end_s;
        } else {
            carry = Some(span.start_s);
        }
    }
    if let Some(start_s) = carry {
        out.push(Span {
            start_s,
            end_s: duration_s,
        });
    }
    out
}
