//! WAV decoding and sample-rate conversion.
//!
//! Everything downstream works on a mono [`AudioBuffer`] of `f64` amplitudes.
//! Multi-channel input is downmixed with an unweighted mean.

use thiserror::Error;

/// Analysis rate used by the default pipeline.
pub const DEFAULT_ANALYSIS_RATE: u32 = 22_050;

const WAVE_FORMAT_PCM: u16 = 0x0001;
const WAVE_FORMAT_IEEE_FLOAT: u16 = 0x0003;
const WAVE_FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Error, PartialEq)]
pub enum AudioError {
    #[error("malformed WAV at byte offset {offset}: {reason}")]
    Malformed { offset: usize, reason: String },
    #[error("unsupported WAV format: {0}")]
    Unsupported(String),
    #[error("truncated data chunk: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("invalid argument: {0}")]
    Argument(String),
}

/// Mono audio at a known sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioBuffer {
    /// Builds a buffer, clamping every sample into `[-1, 1]`.
    ///
    /// Non-finite samples are rejected.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::Argument("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(AudioError::Argument(format!("sample {i} is not finite")));
        }
        let samples = samples.into_iter().map(|s| s.clamp(-1.0, 1.0)).collect();
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SampleFormat {
    Pcm16,
    Pcm24,
    Float32,
}

impl SampleFormat {
    fn bytes(self) -> usize {
        match self {
            SampleFormat::Pcm16 => 2,
            SampleFormat::Pcm24 => 3,
            SampleFormat::Float32 => 4,
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], AudioError> {
        if self.bytes.len() - self.pos < n {
            return Err(AudioError::Malformed {
                offset: self.pos,
                reason: format!("unexpected end of file reading {what}"),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self, what: &str) -> Result<u16, AudioError> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32, AudioError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Decodes a RIFF/WAVE file (PCM16, PCM24 or float32, one or two channels) to mono.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioBuffer, AudioError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "RIFF tag")? != b"RIFF" {
        return Err(AudioError::Malformed {
            offset: 0,
            reason: "missing RIFF tag".into(),
        });
    }
    r.u32("RIFF size")?;
    if r.take(4, "WAVE tag")? != b"WAVE" {
        return Err(AudioError::Malformed {
            offset: 8,
            reason: "missing WAVE tag".into(),
        });
    }

    let mut format: Option<(SampleFormat, u16, u32)> = None;
    loop {
        let chunk_offset = r.pos;
        let id = r.take(4, "chunk id")?;
        let size = r.u32("chunk size")? as usize;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(AudioError::Malformed {
                        offset: chunk_offset,
                        reason: format!("fmt chunk too small ({size} bytes)"),
                    });
                }
                let body_start = r.pos;
                let mut tag = r.u16("format tag")?;
                let channels = r.u16("channel count")?;
                let sample_rate = r.u32("sample rate")?;
                r.u32("byte rate")?;
                let block_align = r.u16("block align")?;
                let bits = r.u16("bits per sample")?;
                if tag == WAVE_FORMAT_EXTENSIBLE {
                    if size < 40 {
                        return Err(AudioError::Malformed {
                            offset: chunk_offset,
                            reason: "extensible fmt chunk too small".into(),
                        });
                    }
                    r.take(8, "extensible header")?;
                    tag = r.u16("sub-format")?;
                }
                let fmt = match (tag, bits) {
                    (WAVE_FORMAT_PCM, 16) => SampleFormat::Pcm16,
                    (WAVE_FORMAT_PCM, 24) => SampleFormat::Pcm24,
                    (WAVE_FORMAT_IEEE_FLOAT, 32) => SampleFormat::Float32,
                    (tag, bits) => {
                        return Err(AudioError::Unsupported(format!(
                            "format tag {tag:#06x} with {bits} bits per sample"
                        )))
                    }
                };
                if !(1..=2).contains(&channels) {
                    return Err(AudioError::Unsupported(format!("{channels} channels")));
                }
                if sample_rate == 0 {
                    return Err(AudioError::Malformed {
                        offset: body_start + 4,
                        reason: "zero sample rate".into(),
                    });
                }
                if block_align as usize != fmt.bytes() * channels as usize {
                    return Err(AudioError::Malformed {
                        offset: body_start + 12,
                        reason: format!("block align {block_align} inconsistent with format"),
                    });
                }
                r.pos = body_start;
                r.take(size + (size & 1), "fmt chunk body")?;
                format = Some((fmt, channels, sample_rate));
            }
            b"data" => {
                let (fmt, channels, sample_rate) = format.ok_or(AudioError::Malformed {
                    offset: chunk_offset,
                    reason: "data chunk before fmt chunk".into(),
                })?;
                let available = bytes.len() - r.pos;
                let frame_bytes = fmt.bytes() * channels as usize;
                if size > available || !size.is_multiple_of(frame_bytes) {
                    return Err(AudioError::Truncated {
                        expected: size.div_ceil(frame_bytes) * frame_bytes,
                        found: available.min(size),
                    });
                }
                let data = &bytes[r.pos..r.pos + size];
                let samples = data
                    .chunks_exact(frame_bytes)
                    .map(|frame| {
                        let sum: f64 = frame.chunks_exact(fmt.bytes()).map(|s| sample(fmt, s)).sum();
                        sum / channels as f64
                    })
                    .collect();
                return AudioBuffer::new(samples, sample_rate);
            }
            _ => {
                r.take(size + (size & 1), "chunk body").map_err(|_| AudioError::Malformed {
                    offset: chunk_offset,
                    reason: format!("chunk {:?} overruns file", String::from_utf8_lossy(id)),
                })?;
            }
        }
    }
}

fn sample(fmt: SampleFormat, b: &[u8]) -> f64 {
    match fmt {
        SampleFormat::Pcm16 => i16::from_le_bytes([b[0], b[1]]) as f64 / 32_768.0,
        SampleFormat::Pcm24 => {
            let v = i32::from_le_bytes([0, b[0], b[1], b[2]]) >> 8;
            v as f64 / 8_388_608.0
        }
        SampleFormat::Float32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
    }
}

/// Encodes a mono buffer as a 16-bit PCM WAV file.
pub fn encode_wav_pcm16(buffer: &AudioBuffer) -> Vec<u8> {
    let data_len = buffer.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&WAVE_FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&buffer.sample_rate().to_le_bytes());
    out.extend_from_slice(&(buffer.sample_rate() * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in buffer.samples() {
        let v = (s * 32_768.0).round().clamp(-32_768.0, 32_767.0) as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Linear-interpolation resampling.
///
/// Output sample `i` reads the source at position `i * source / target`;
/// positions past the last source sample hold the last value.
pub fn resample(buffer: &AudioBuffer, target_rate: u32) -> Result<AudioBuffer, AudioError> {
    if target_rate == 0 {
        return Err(AudioError::Argument("target rate must be positive".into()));
    }
    let source_rate = buffer.sample_rate();
    if target_rate == source_rate {
        return Ok(buffer.clone());
    }
    let src = buffer.samples();
    let out_len = (src.len() as f64 * target_rate as f64 / source_rate as f64).round() as usize;
    let ratio = source_rate as f64 / target_rate as f64;
    let last = src.len().saturating_sub(1);
    let samples = (0..out_len)
        .map(|i| {
            let pos = i as f64 * ratio;
            let k = pos.floor() as usize;
            if k >= last {
                return src[last];
            }
            let frac = pos - k as f64;
            src[k] + (src[k + 1] - src[k]) * frac
        })
        .collect();
    AudioBuffer::new(samples, target_rate)
}
