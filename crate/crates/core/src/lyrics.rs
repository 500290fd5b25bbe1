//! LRC lyric parsing and lyric-to-segment assignment.
//!
//! ```text
//! [ti:Song title]
//! [00:12.50]be my weasel
//! [00:15.00][00:45.00]repeated line
//! ```

use thiserror::Error;

use crate::beat::Span;

#[derive(Debug, Error, PartialEq)]
pub enum LyricsError {
    #[error("line {line}: malformed timestamp {tag:?}")]
    Timestamp { line: usize, tag: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyricLine {
    pub time_s: f64,
    pub text: String,
}

/// Lines sorted by time (stable for equal times).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LyricsTrack {
    pub lines: Vec<LyricLine>,
}

impl LyricsTrack {
    pub fn new(mut lines: Vec<LyricLine>) -> Self {
        lines.sort_by(|a, b| a.time_s.total_cmp(&b.time_s));
        Self { lines }
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }
}

fn is_metadata(tag: &str) -> bool {
    match tag.split_once(':') {
        Some((key, _)) => !key.is_empty() && key.chars().all(|c| c.is_ascii_alphabetic()),
        None => false,
    }
}

fn parse_timestamp(tag: &str) -> Option<f64> {
    let (min, sec) = tag.split_once(':')?;
    if min.is_empty() || !min.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    let (whole, frac) = match sec.split_once('.') {
        Some((w, f)) => (w, Some(f)),
        None => (sec, None),
    };
    let digits = |s: &str| !s.is_empty() && s.chars().all(|c| c.is_ascii_digit());
    if !digits(whole) || whole.len() > 2 || frac.is_some_and(|f| !digits(f)) {
        return None;
    }
    let seconds: f64 = sec.parse().ok()?;
    if seconds >= 60.0 {
        return None;
    }
    Some(min.parse::<f64>().ok()? * 60.0 + seconds)
}

pub fn parse_lrc(text: &str) -> Result<LyricsTrack, LyricsError> {
    let mut lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let mut rest = raw.trim();
        if rest.is_empty() {
            continue;
        }
        if !rest.starts_with('[') {
            log::warn!("line {line_no}: no timestamp, skipped");
            continue;
        }
        let mut times = Vec::new();
        while let Some(body) = rest.strip_prefix('[') {
            let Some(close) = body.find(']') else {
                return Err(LyricsError::Timestamp {
                    line: line_no,
                    tag: rest.to_string(),
                });
            };
            let tag = &body[..close];
            match parse_timestamp(tag) {
                Some(t) => times.push(t),
                None if times.is_empty() && is_metadata(tag) => break,
                None => {
                    return Err(LyricsError::Timestamp {
                        line: line_no,
                        tag: tag.to_string(),
                    })
                }
            }
            rest = body[close + 1..].trim_start();
        }
        let text = rest.trim();
        if times.is_empty() || text.is_empty() {
            continue;
        }
        lines.extend(times.into_iter().map(|time_s| LyricLine {
            time_s,
            text: text.to_string(),
        }));
    }
    Ok(LyricsTrack::new(lines))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyricAssignment {
    /// One entry per segment; lyrics sharing a segment are joined with a space.
    pub texts: Vec<Option<String>>,
    /// Indices into the track of lines timed at or past the final segment's end.
    pub beyond_end: Vec<usize>,
}

impl LyricAssignment {
    pub fn lyric_segments(&self) -> usize {
        self.texts.iter().filter(|t| t.is_some()).count()
    }
}

/// Maps each lyric to the segment whose half-open interval contains its time.
/// Lines timed before the first segment go to the first one; lines past the
/// end go to the last one and are reported in `beyond_end`.
pub fn assign_lyrics(track: &LyricsTrack, segments: &[Span]) -> LyricAssignment {
    let mut texts: Vec<Option<String>> = vec![None; segments.len()];
    let mut beyond_end = Vec::new();
    if segments.is_empty() {
        return LyricAssignment {
            texts,
            beyond_end: (0..track.lines.len()).collect(),
        };
    }
    let mut sorted: Vec<(usize, &LyricLine)> = track.lines.iter().enumerate().collect();
    sorted.sort_by(|a, b| a.1.time_s.total_cmp(&b.1.time_s));
    for (i, line) in sorted {
        let mut k = segments.partition_point(|s| s.end_s <= line.time_s);
        if k == segments.len() {
            k -= 1;
            beyond_end.push(i);
        }
        match &mut texts[k] {
            Some(t) => {
                t.push(' ');
                t.push_str(&line.text);
            }
            slot => *slot = Some(line.text.clone()),
        }
    }
    LyricAssignment { texts, beyond_end }
}
