//! Mono waveforms, RIFF/WAVE I/O and the framing arithmetic shared by the
//! encoder, decoder and segmentation.

use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum AudioError {
    #[error("file not found: {0}")]
    Missing(PathBuf),
    #[error("multi-channel audio ({0} channels) is not supported")]
    MultiChannel(u16),
    #[error("unsupported encoding: {0}")]
    Unsupported(String),
    #[error("malformed WAV: {0}")]
    Malformed(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("empty signal")]
    Empty,
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("invalid sample rate {0}")]
    SampleRate(u32),
    #[error("invalid frame length {0} (must be even and ≥ 2)")]
    FrameLength(usize),
}

/// Mono waveform. Samples are nominally in [−1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct AudioSignal {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioSignal {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::SampleRate(sample_rate));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(AudioError::NonFinite(i));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate: sample_rate.max(1),
        }
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// T_seq.
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.samples.iter().map(|&v| v as f64).collect()
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }
}

/// Root mean square.
pub fn rms(signal: &AudioSignal) -> Result<f64, AudioError> {
    rms_slice(signal.samples())
}

pub fn rms_slice(x: &[f32]) -> Result<f64, AudioError> {
    if x.is_empty() {
        return Err(AudioError::Empty);
    }
    Ok((x.iter().map(|&v| v as f64 * v as f64).sum::<f64>() / x.len() as f64).sqrt())
}

/// Window length `L` with hop `L/2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameSpec {
    frame_length: usize,
}

impl FrameSpec {
    pub fn new(frame_length: usize) -> Result<Self, AudioError> {
        if frame_length < 2 || frame_length % 2 != 0 {
            return Err(AudioError::FrameLength(frame_length));
        }
        Ok(Self { frame_length })
    }

    pub fn frame_length(&self) -> usize {
        self.frame_length
    }

    pub fn hop(&self) -> usize {
        self.frame_length / 2
    }

    /// Length after end-padding with zeros to a whole number of frames.
    pub fn padded_len(&self, t_seq: usize) -> usize {
        (frame_count(t_seq, *self) - 1) * self.hop() + self.frame_length
    }
}

/// `floor((T_padded − L)/hop) + 1`, where the signal is zero-padded so that
/// `T_padded − L` is a multiple of the hop. Lengths below `L` pad to one frame.
pub fn frame_count(t_seq: usize, spec: FrameSpec) -> usize {
    let (l, hop) = (spec.frame_length, spec.hop());
    if t_seq <= l {
        1
    } else {
        (t_seq - l).div_ceil(hop) + 1
    }
}

/// Slice a (padded) signal into `T × L` frames with 50% overlap.
pub fn frame_signal(x: &[f64], spec: FrameSpec) -> Vec<Vec<f64>> {
    let (l, hop) = (spec.frame_length, spec.hop());
    let t = frame_count(x.len(), spec);
    (0..t)
        .map(|i| {
            (0..l)
                .map(|k| x.get(i * hop + k).copied().unwrap_or(0.0))
                .collect()
        })
        .collect()
}

/// Sum 50%-overlapping frames; output length `(T−1)·L/2 + L`.
pub fn overlap_add(frames: &[Vec<f64>], spec: FrameSpec) -> Vec<f64> {
    let (l, hop) = (spec.frame_length, spec.hop());
    if frames.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; (frames.len() - 1) * hop + l];
    for (i, f) in frames.iter().enumerate() {
        for (k, &v) in f.iter().take(l).enumerate() {
            out[i * hop + k] += v;
        }
    }
    out
}

// ---- WAV ---------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum WavFormat {
    Pcm16,
    #[default]
    Float32,
}

/// Result of encoding: how many samples were clipped to ±1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct WriteReport {
    pub clipped: usize,
}

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

/// Encode a mono signal as a RIFF/WAVE byte stream.
pub fn encode_wav(signal: &AudioSignal, format: WavFormat) -> (Vec<u8>, WriteReport) {
    let (tag, bits) = match format {
        WavFormat::Pcm16 => (FORMAT_PCM, 16u16),
        WavFormat::Float32 => (FORMAT_FLOAT, 32u16),
    };
    let bps = (bits / 8) as usize;
    let data_len = signal.len() * bps;
    let mut b = Vec::with_capacity(44 + data_len);
    b.extend_from_slice(b"RIFF");
    b.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    b.extend_from_slice(b"WAVE");
    b.extend_from_slice(b"fmt ");
    b.extend_from_slice(&16u32.to_le_bytes());
    b.extend_from_slice(&tag.to_le_bytes());
    b.extend_from_slice(&1u16.to_le_bytes());
    b.extend_from_slice(&signal.sample_rate.to_le_bytes());
    b.extend_from_slice(&(signal.sample_rate * bps as u32).to_le_bytes());
    b.extend_from_slice(&(bps as u16).to_le_bytes());
    b.extend_from_slice(&bits.to_le_bytes());
    b.extend_from_slice(b"data");
    b.extend_from_slice(&(data_len as u32).to_le_bytes());
    let mut rep = WriteReport::default();
    for &v in &signal.samples {
        let c = v.clamp(-1.0, 1.0);
        if c != v {
            rep.clipped += 1;
        }
        match format {
            WavFormat::Pcm16 => b.extend_from_slice(&((c * 32767.0).round() as i16).to_le_bytes()),
            WavFormat::Float32 => b.extend_from_slice(&c.to_le_bytes()),
        }
    }
    (b, rep)
}

pub fn write_wav(
    signal: &AudioSignal,
    path: &Path,
    format: WavFormat,
) -> Result<WriteReport, AudioError> {
    let (bytes, rep) = encode_wav(signal, format);
    if rep.clipped > 0 {
        log::warn!("{}: clipped {} samples to ±1", path.display(), rep.clipped);
    }
    std::fs::write(path, bytes)?;
    Ok(rep)
}

pub fn read_wav(path: &Path) -> Result<AudioSignal, AudioError> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => AudioError::Missing(path.to_path_buf()),
        _ => AudioError::Io(e),
    })?;
    decode_wav(&bytes)
}

fn le16(b: &[u8]) -> u16 {
    u16::from_le_bytes([b[0], b[1]])
}

fn le32(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

/// Decode a RIFF/WAVE byte stream (mono, 16-bit PCM or 32-bit float).
pub fn decode_wav(bytes: &[u8]) -> Result<AudioSignal, AudioError> {
    let bad = |m: &str| AudioError::Malformed(m.to_string());
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(bad("missing RIFF/WAVE header"));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let len = le32(&bytes[pos + 4..pos + 8]) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(len)
            .ok_or_else(|| bad("chunk length overflow"))?;
        if id == b"data" {
            // tolerate a data chunk whose declared size runs past the end
            // only when it is the streaming placeholder 0xFFFFFFFF
            let end = if body_end > bytes.len() && len == u32::MAX as usize {
                bytes.len()
            } else {
                body_end
            };
            if end > bytes.len() {
                return Err(bad("truncated data chunk"));
            }
            data = Some(&bytes[body_start..end]);
            break;
        }
        if body_end > bytes.len() {
            return Err(bad("truncated chunk"));
        }
        if id == b"fmt " {
            if len < 16 {
                return Err(bad("fmt chunk too short"));
            }
            let c = &bytes[body_start..body_end];
            let mut tag = le16(&c[0..2]);
            if tag == FORMAT_EXTENSIBLE {
                if len < 40 {
                    return Err(bad("extensible fmt chunk too short"));
                }
                tag = le16(&c[24..26]);
            }
            fmt = Some((tag, le16(&c[2..4]), le32(&c[4..8]), le16(&c[14..16])));
        }
        pos = body_end + (len & 1);
    }
    let (tag, channels, rate, bits) = fmt.ok_or_else(|| bad("no fmt chunk"))?;
    if channels != 1 {
        return Err(AudioError::MultiChannel(channels));
    }
    if rate == 0 {
        return Err(AudioError::SampleRate(rate));
    }
    let data = data.ok_or_else(|| bad("no data chunk"))?;
    let samples: Vec<f32> = match (tag, bits) {
        (FORMAT_PCM, 16) => data
            .chunks_exact(2)
            .map(|c| (i16::from_le_bytes([c[0], c[1]]) as f32 / 32767.0).max(-1.0))
            .collect(),
        (FORMAT_FLOAT, 32) => data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
        (t, b) => return Err(AudioError::Unsupported(format!("format tag {t}, {b} bits"))),
    };
    AudioSignal::new(samples, rate)
}
