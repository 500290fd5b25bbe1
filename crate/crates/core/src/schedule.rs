//! The plan compiler.
//!
//! Segment intensities are min-max normalized, mapped linearly to a frame
//! rate, and turned into a frame count per segment. Each frame receives a
//! guidance reference: the segment's lyric embedding when it has one, its
//! audio embedding otherwise (or an audio/text alternation for the baseline
//! mode). Scene changes can then be softened by blending the previous
//! segment's guidance into the new one with equal weights.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::beat::Span;
use crate::embed::{EmbeddingStore, Modality};

pub const SCHEMA_VERSION: &str = "1";
pub const DEFAULT_FPS_MIN: f64 = 1.0;
pub const DEFAULT_FPS_MAX: f64 = 10.0;

const WEIGHT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("config: {0}")]
    Config(String),
    #[error("segment {0} has no audio embedding")]
    MissingAudio(usize),
    #[error("plan: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GuidanceMode {
    SegmentLocked,
    Alternating,
}

impl FromStr for GuidanceMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "segment-locked" => Ok(Self::SegmentLocked),
            "alternating" => Ok(Self::Alternating),
            other => Err(format!("unknown guidance mode {other:?}")),
        }
    }
}

/// Which frames of a transitioned segment receive the blended guidance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlendScope {
    None,
    FullSegment,
    FirstFrames(usize),
}

impl fmt::Display for BlendScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlendScope::None => f.write_str("none"),
            BlendScope::FullSegment => f.write_str("full"),
            BlendScope::FirstFrames(k) => write!(f, "first:{k}"),
        }
    }
}

impl FromStr for BlendScope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Self::None),
            "full" => Ok(Self::FullSegment),
            _ => s
                .strip_prefix("first:")
                .and_then(|k| k.parse().ok())
                .map(Self::FirstFrames)
                .ok_or_else(|| format!("blend scope must be none, full or first:K, got {s:?}")),
        }
    }
}

impl Serialize for BlendScope {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BlendScope {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub index: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub mean_intensity_db: f64,
    pub normalized_intensity: f64,
    pub frame_count: usize,
    /// Segment-level guidance: the lyric embedding if present, else audio.
    pub guidance_id: String,
    pub audio_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lyric: Option<String>,
}

impl Segment {
    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }

    pub fn fps(&self, fps_min: f64, fps_max: f64) -> f64 {
        fps_min + self.normalized_intensity * (fps_max - fps_min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceWeight {
    pub id: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub frame_index: usize,
    pub time_s: f64,
    pub guidance: Vec<GuidanceWeight>,
    pub segment_index: usize,
    pub transition: bool,
    pub modality: Modality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanMeta {
    pub schema_version: String,
    pub audio_source: String,
    pub duration_s: f64,
    pub fps_min: f64,
    pub fps_max: f64,
    pub guidance_mode: GuidanceMode,
    pub blend_scope: BlendScope,
    pub seed: u64,
    pub segments: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub meta: PlanMeta,
    pub entries: Vec<PlanEntry>,
}

impl Plan {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plan serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ScheduleError> {
        serde_json::from_str(text).map_err(|e| ScheduleError::Json(e.to_string()))
    }
}

/// Per-track min-max normalization; a flat track maps to 0.5 everywhere.
pub fn normalize_intensities(means_db: &[f64]) -> Vec<f64> {
    let lo = means_db.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = means_db.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.5; means_db.len()];
    }
    means_db.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

pub fn check_fps(fps_min: f64, fps_max: f64) -> Result<(), ScheduleError> {
    if !(fps_min > 0.0) {
        return Err(ScheduleError::Config(format!("fps_min {fps_min} must be positive")));
    }
    if !(fps_min <= fps_max) || !fps_max.is_finite() {
        return Err(ScheduleError::Config(format!(
            "fps_min {fps_min} exceeds fps_max {fps_max}"
        )));
    }
    Ok(())
}

/// `max(1, round(fps * duration))` with `fps` interpolated between the bounds.
pub fn allocate_frames(
    normalized_intensity: f64,
    duration_s: f64,
    fps_min: f64,
    fps_max: f64,
) -> Result<usize, ScheduleError> {
    check_fps(fps_min, fps_max)?;
    let fps = fps_min + normalized_intensity * (fps_max - fps_min);
    Ok(((fps * duration_s).round() as usize).max(1))
}

/// Uniformly spaced frame timestamps starting at the segment start.
pub fn frame_times(start_s: f64, end_s: f64, count: usize) -> Vec<f64> {
    let step = (end_s - start_s) / count as f64;
    (0..count).map(|i| start_s + i as f64 * step).collect()
}

/// Inputs for one segment of the compiler.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentInput {
    pub span: Span,
    pub mean_intensity_db: f64,
    pub audio_id: String,
    pub lyric: Option<String>,
    /// Embedding id for the lyric text; required when `lyric` is set.
    pub text_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompileConfig {
    pub fps_min: f64,
    pub fps_max: f64,
    pub mode: GuidanceMode,
    pub blend_scope: BlendScope,
    pub seed: u64,
    pub audio_source: String,
}

impl Default for CompileConfig {
    fn default() -> Self {
        Self {
            fps_min: DEFAULT_FPS_MIN,
            fps_max: DEFAULT_FPS_MAX,
            mode: GuidanceMode::SegmentLocked,
            blend_scope: BlendScope::FullSegment,
            seed: 0,
            audio_source: String::new(),
        }
    }
}

/// Produces one single-guidance entry per frame.
///
/// Segment-locked: every frame uses the segment guidance (lyric text when
/// present). Alternating: frames of lyric-bearing segments alternate audio,
/// text, audio, ... starting with audio.
pub fn assign_guidance(
    segments: &mut [Segment],
    mode: GuidanceMode,
) -> Result<Vec<PlanEntry>, ScheduleError> {
    let mut entries = Vec::new();
    for seg in segments.iter_mut() {
        if seg.audio_id.is_empty() {
            return Err(ScheduleError::MissingAudio(seg.index));
        }
        let text = seg.lyric.as_ref().and(seg.text_id.clone());
        seg.guidance_id = text.clone().unwrap_or_else(|| seg.audio_id.clone());
        for (i, time_s) in frame_times(seg.start_s, seg.end_s, seg.frame_count)
            .into_iter()
            .enumerate()
        {
            let (id, modality) = match (&text, mode) {
                (Some(t), GuidanceMode::SegmentLocked) => (t.clone(), Modality::Text),
                (Some(t), GuidanceMode::Alternating) if i % 2 == 1 => (t.clone(), Modality::Text),
                _ => (seg.audio_id.clone(), Modality::Audio),
            };
            entries.push(PlanEntry {
                frame_index: entries.len(),
                time_s,
                guidance: vec![GuidanceWeight { id, weight: 1.0 }],
                segment_index: seg.index,
                transition: false,
                modality,
            });
        }
    }
    Ok(entries)
}

/// Where segment guidance changes, mixes the previous segment's guidance into
/// the affected frames with weights one half each and flags them.
pub fn apply_transition_blend(plan: &mut Plan, scope: BlendScope) {
    plan.meta.blend_scope = scope;
    if scope == BlendScope::None {
        return;
    }
    let segments = &plan.meta.segments;
    let mut frame_in_segment = 0;
    let mut current = usize::MAX;
    for entry in &mut plan.entries {
        if entry.segment_index != current {
            current = entry.segment_index;
            frame_in_segment = 0;
        } else {
            frame_in_segment += 1;
        }
        let t = entry.segment_index;
        if t == 0 || t >= segments.len() {
            continue;
        }
        let (prev, this) = (&segments[t - 1].guidance_id, &segments[t].guidance_id);
        let in_scope = match scope {
            BlendScope::FullSegment => true,
            BlendScope::FirstFrames(k) => frame_in_segment < k,
            BlendScope::None => false,
        };
        if prev == this || !in_scope || entry.guidance.len() != 1 || &entry.guidance[0].id == prev {
            continue;
        }
        let own = entry.guidance[0].id.clone();
        entry.guidance = vec![
            GuidanceWeight {
                id: prev.clone(),
                weight: 0.5,
            },
            GuidanceWeight {
                id: own,
                weight: 0.5,
            },
        ];
        entry.transition = true;
        entry.modality = Modality::Blend;
    }
}

/// Runs normalization, frame allocation, guidance assignment and transition
/// blending.
pub fn compile_plan(
    inputs: &[SegmentInput],
    duration_s: f64,
    cfg: &CompileConfig,
) -> Result<Plan, ScheduleError> {
    check_fps(cfg.fps_min, cfg.fps_max)?;
    if inputs.is_empty() {
        return Err(ScheduleError::Config("no segments".into()));
    }
    let means: Vec<f64> = inputs.iter().map(|s| s.mean_intensity_db).collect();
    let normalized = normalize_intensities(&means);
    let mut segments = inputs
        .iter()
        .zip(normalized)
        .enumerate()
        .map(|(index, (input, norm))| {
            if input.lyric.is_some() && input.text_id.is_none() {
                return Err(ScheduleError::Config(format!(
                    "segment {index} has a lyric but no text embedding id"
                )));
            }
            Ok(Segment {
                index,
                start_s: input.span.start_s,
                end_s: input.span.end_s,
                mean_intensity_db: input.mean_intensity_db,
                normalized_intensity: norm,
                frame_count: allocate_frames(norm, input.span.duration_s(), cfg.fps_min, cfg.fps_max)?,
                guidance_id: String::new(),
                audio_id: input.audio_id.clone(),
                text_id: input.text_id.clone(),
                lyric: input.lyric.clone(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let entries = assign_guidance(&mut segments, cfg.mode)?;
    let mut plan = Plan {
        meta: PlanMeta {
            schema_version: SCHEMA_VERSION.to_string(),
            audio_source: cfg.audio_source.clone(),
            duration_s,
            fps_min: cfg.fps_min,
            fps_max: cfg.fps_max,
            guidance_mode: cfg.mode,
            blend_scope: BlendScope::None,
            seed: cfg.seed,
            segments,
        },
        entries,
    };
    apply_transition_blend(&mut plan, cfg.blend_scope);
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub frame: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.frame {
            Some(i) => write!(f, "frame {i}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Checks every plan invariant, plus id resolvability when a store is given.
pub fn validate_plan(plan: &Plan, store: Option<&EmbeddingStore>) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut global = |message: String| {
        out.push(Violation {
            frame: None,
            message,
        })
    };
    let meta = &plan.meta;
    if meta.schema_version != SCHEMA_VERSION {
        global(format!("unsupported schema version {:?}", meta.schema_version));
    }
    if let Err(e) = check_fps(meta.fps_min, meta.fps_max) {
        global(e.to_string());
    }
    let segs = &meta.segments;
    for (k, s) in segs.iter().enumerate() {
        if s.index != k {
            global(format!("segment {k} carries index {}", s.index));
        }
        if !(s.start_s < s.end_s) {
            global(format!("segment {k} has start {} >= end {}", s.start_s, s.end_s));
        }
        if s.frame_count == 0 {
            global(format!("segment {k} has no frames"));
        }
        if !(0.0..=1.0).contains(&s.normalized_intensity) {
            global(format!("segment {k} intensity {} outside [0, 1]", s.normalized_intensity));
        }
        if k > 0 && segs[k - 1].end_s != s.start_s {
            global(format!("segment {k} does not start where segment {} ends", k - 1));
        }
    }
    if let (Some(first), Some(last)) = (segs.first(), segs.last()) {
        if first.start_s != 0.0 || (last.end_s - meta.duration_s).abs() > 1e-9 {
            global(format!(
                "segments cover [{}, {}) instead of [0, {})",
                first.start_s, last.end_s, meta.duration_s
            ));
        }
    }
    let expected: usize = segs.iter().map(|s| s.frame_count).sum();
    if expected != plan.entries.len() {
        global(format!(
            "plan has {} entries but segments allocate {expected} frames",
            plan.entries.len()
        ));
    }

    let mut prev_time = f64::NEG_INFINITY;
    for (i, e) in plan.entries.iter().enumerate() {
        let mut bad = |message: String| {
            out.push(Violation {
                frame: Some(i),
                message,
            })
        };
        if e.frame_index != i {
            bad(format!("frame_index {} out of order", e.frame_index));
        }
        if !(e.time_s >= 0.0 && e.time_s <= meta.duration_s) {
            bad(format!("time {} outside [0, {}]", e.time_s, meta.duration_s));
        }
        if e.time_s < prev_time {
            bad(format!("time {} decreases (previous {prev_time})", e.time_s));
        }
        prev_time = prev_time.max(e.time_s);
        match segs.get(e.segment_index) {
            None => bad(format!("unknown segment {}", e.segment_index)),
            Some(s) if !(e.time_s >= s.start_s && e.time_s < s.end_s) => bad(format!(
                "time {} outside segment {} [{}, {})",
                e.time_s, s.index, s.start_s, s.end_s
            )),
            Some(_) => {}
        }
        if e.guidance.is_empty() {
            bad("no guidance".into());
        }
        let total: f64 = e.guidance.iter().map(|g| g.weight).sum();
        if e.guidance.iter().any(|g| !(g.weight > 0.0)) {
            bad("non-positive guidance weight".into());
        }
        if !e.guidance.is_empty() && (total - 1.0).abs() > WEIGHT_TOLERANCE {
            bad(format!("guidance weights sum to {total}"));
        }
        if let Some(store) = store {
            for g in &e.guidance {
                if !store.contains(&g.id) {
                    bad(format!("guidance id {:?} not in embedding store", g.id));
                }
            }
        }
    }
    out
}
