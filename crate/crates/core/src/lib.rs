//! Music-driven video plan compiler and guided latent optimization harness.
//!
//! A track is decoded ([`audio`]), analysed into a mel spectrogram and onset
//! envelope ([`dsp`]), beat-tracked and split into beat-length segments
//! ([`beat`]). Timed lyrics ([`lyrics`]) and guidance embeddings ([`embed`])
//! are combined into a frame-by-frame [`schedule::Plan`], which [`optim`]
//! executes against a generator/encoder backend.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audio;
pub mod beat;
pub mod dsp;
pub mod embed;
pub mod lyrics;
pub mod optim;
pub mod pipeline;
pub mod schedule;
pub mod synth;

pub use audio::{decode_wav, resample, AudioBuffer, AudioError};
pub use beat::{BeatGrid, Span, TempoConfig, TempoEstimate};
pub use dsp::{MelSpectrogram, OnsetEnvelope};
pub use embed::{EmbeddingStore, Modality, PromptEmbedding};
pub use lyrics::{parse_lrc, LyricLine, LyricsTrack};
pub use optim::{make_stub_backend, run_plan, Backend, FrameResult, L1Update, StepConfig, StubBackend};
pub use pipeline::{analyze, Analysis, AnalysisConfig, AnalysisReport, PipelineError};
pub use schedule::{
    validate_plan, BlendScope, CompileConfig, GuidanceMode, Plan, PlanEntry, Segment, Violation,
};
