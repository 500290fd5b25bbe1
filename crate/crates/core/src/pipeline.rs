//! End-to-end composition: audio analysis, then guidance preparation and plan
//! compilation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{resample, AudioBuffer, AudioError, DEFAULT_ANALYSIS_RATE};
use crate::beat::{
    estimate_tempo, segments_from_beats, track_beats, BeatError, BeatGrid, Span, TempoConfig,
    TempoEstimate, MIN_TEMPO_SECONDS,
};
use crate::dsp::{
    mel_spectrogram, onset_strength, segment_band_means, segment_mean_intensity, stft, DspError,
    MelSpectrogram, OnsetEnvelope, DEFAULT_HOP, DEFAULT_N_FFT, DEFAULT_N_MELS,
};
use crate::embed::{stub_audio_embedding, stub_text_embedding, EmbedError, EmbeddingStore};
use crate::lyrics::{assign_lyrics, LyricsTrack};
use crate::schedule::{compile_plan, CompileConfig, Plan, ScheduleError, SegmentInput};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Beat(#[from] BeatError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

impl PipelineError {
    pub fn is_insufficient_data(&self) -> bool {
        matches!(self, PipelineError::Beat(BeatError::InsufficientData(_)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    pub analysis_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    /// Defaults to the Nyquist frequency of the analysis rate.
    pub fmax: Option<f64>,
    pub tempo: TempoConfig,
    pub tightness: f64,
    pub min_segment_s: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            analysis_rate: DEFAULT_ANALYSIS_RATE,
            n_fft: DEFAULT_N_FFT,
            hop: DEFAULT_HOP,
            n_mels: DEFAULT_N_MELS,
            fmin: 0.0,
            fmax: None,
            tempo: TempoConfig::default(),
            tightness: 100.0,
            min_segment_s: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentStats {
    pub span: Span,
    pub mean_db: f64,
    pub band_means_db: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub duration_s: f64,
    pub tempo: TempoEstimate,
    pub beats: BeatGrid,
    pub onset: OnsetEnvelope,
    pub mel: MelSpectrogram,
    pub segments: Vec<SegmentStats>,
}

pub fn analyze(buffer: &AudioBuffer, cfg: &AnalysisConfig) -> Result<Analysis, PipelineError> {
    let buffer = resample(buffer, cfg.analysis_rate)?;
    if buffer.duration_s() < MIN_TEMPO_SECONDS {
        return Err(BeatError::InsufficientData(format!(
            "track is {:.2} s long, need at least {MIN_TEMPO_SECONDS} s",
            buffer.duration_s()
        ))
        .into());
    }
    let spec = stft(&buffer, cfg.n_fft, cfg.hop)?;
    let fmax = cfg.fmax.unwrap_or(cfg.analysis_rate as f64 / 2.0);
    let mel = mel_spectrogram(&spec, cfg.n_mels, cfg.fmin, fmax)?;
    let onset = onset_strength(&mel)?;
    let tempo = estimate_tempo(&onset, &cfg.tempo)?;
    let beats = track_beats(&onset, &tempo, cfg.tightness)?;
    let duration_s = buffer.duration_s();
    let segments = segments_from_beats(&beats, duration_s, cfg.min_segment_s)
        .into_iter()
        .map(|span| {
            Ok(SegmentStats {
                span,
                mean_db: segment_mean_intensity(&mel, span.start_s, span.end_s)?,
                band_means_db: segment_band_means(&mel, span.start_s, span.end_s)?,
            })
        })
        .collect::<Result<Vec<_>, DspError>>()?;
    log::info!(
        "analyzed {duration_s:.2} s: {:.1} BPM, {} beats, {} segments",
        tempo.bpm,
        beats.len(),
        segments.len()
    );
    Ok(Analysis {
        duration_s,
        tempo,
        beats,
        onset,
        mel,
        segments,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub start: f64,
    pub end: f64,
    pub mean_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnsetReport {
    pub frame_rate: f64,
    pub values: Vec<f64>,
}

/// Serialized form of an [`Analysis`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub tempo_bpm: f64,
    pub beats: Vec<f64>,
    pub segments: Vec<SegmentReport>,
    pub onset: OnsetReport,
}

impl From<&Analysis> for AnalysisReport {
    fn from(a: &Analysis) -> Self {
        Self {
            tempo_bpm: a.tempo.bpm,
            beats: a.beats.beat_times_s.clone(),
            segments: a
                .segments
                .iter()
                .map(|s| SegmentReport {
                    start: s.span.start_s,
                    end: s.span.end_s,
                    mean_db: s.mean_db,
                })
                .collect(),
            onset: OnsetReport {
                frame_rate: a.onset.frame_rate,
                values: a.onset.values.clone(),
            },
        }
    }
}

pub fn audio_id(segment: usize) -> String {
    format!("audio:{segment}")
}

pub fn text_id(segment: usize) -> String {
    format!("text:{segment}")
}

/// Builds compiler inputs, adding stub embeddings to `store` for any
/// `audio:{k}` / `text:{k}` id it lacks. Returns the inputs and the number of
/// embeddings added.
pub fn prepare_segments(
    analysis: &Analysis,
    lyrics: &LyricsTrack,
    store: &mut EmbeddingStore,
    seed: u64,
) -> Result<(Vec<SegmentInput>, usize), PipelineError> {
    let spans: Vec<Span> = analysis.segments.iter().map(|s| s.span).collect();
    let assignment = assign_lyrics(lyrics, &spans);
    for &i in &assignment.beyond_end {
        log::warn!(
            "lyric at {:.2} s lies past the end of the track; assigned to the last segment",
            lyrics.lines[i].time_s
        );
    }
    let mut added = 0;
    let mut inputs = Vec::with_capacity(spans.len());
    for (k, (stats, lyric)) in analysis.segments.iter().zip(assignment.texts).enumerate() {
        let aid = audio_id(k);
        if !store.contains(&aid) {
            let mut e = stub_audio_embedding(&stats.band_means_db, store.dim(), seed);
            e.id = aid.clone();
            store.insert(e)?;
            added += 1;
        }
        let tid = lyric.as_ref().map(|_| text_id(k));
        if let (Some(tid), Some(text)) = (&tid, &lyric) {
            if !store.contains(tid) {
                let mut e = stub_text_embedding(text, store.dim(), seed);
                e.id = tid.clone();
                store.insert(e)?;
                added += 1;
            }
        }
        inputs.push(SegmentInput {
            span: stats.span,
            mean_intensity_db: stats.mean_db,
            audio_id: aid,
            lyric,
            text_id: tid,
        });
    }
    Ok((inputs, added))
}

/// Compiles a plan from an analysis, filling `store` with any missing
/// guidance embeddings.
pub fn build_plan(
    analysis: &Analysis,
    lyrics: &LyricsTrack,
    store: &mut EmbeddingStore,
    cfg: &CompileConfig,
) -> Result<Plan, PipelineError> {
    let (inputs, _) = prepare_segments(analysis, lyrics, store, cfg.seed)?;
    Ok(compile_plan(&inputs, analysis.duration_s, cfg)?)
}
