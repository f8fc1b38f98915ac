//! Embedding providers for prompts and audio clips.
//!
//! The stub providers are seeded pure functions; [`PrecomputedStore`] serves
//! vectors produced elsewhere (for example by a frozen pretrained encoder).

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::AudioSignal;
use crate::seed::{mix, str_hash};

pub const DEFAULT_DIM: usize = 512;
const LOG_FLOOR: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("signal of {len} samples is shorter than one {window}-sample window")]
    TooShort { len: usize, window: usize },
    #[error("missing key {0:?}")]
    MissingKey(String),
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TextEmbedding {
    pub vector: Vec<f32>,
    pub provider_id: String,
    pub token_sequence: Option<Vec<Vec<f32>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AudioEmbedding {
    pub vector: Vec<f32>,
    pub frame_sequence: Option<Vec<Vec<f32>>>,
}

impl TextEmbedding {
    /// Token sequence, or the pooled vector as a length-1 sequence.
    pub fn sequence(&self) -> Vec<Vec<f32>> {
        self.token_sequence
            .clone()
            .unwrap_or_else(|| vec![self.vector.clone()])
    }
}

impl AudioEmbedding {
    pub fn sequence(&self) -> Vec<Vec<f32>> {
        self.frame_sequence
            .clone()
            .unwrap_or_else(|| vec![self.vector.clone()])
    }
}

fn l2_normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    n
}

fn pooled(seq: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut m = vec![0.0; dim];
    for v in seq {
        for (a, b) in m.iter_mut().zip(v) {
            *a += b;
        }
    }
    m
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

fn unit_fallback(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    l2_normalize(&mut v);
    v
}

/// Normalize to unit length; a vanishing vector maps to a fixed seeded direction.
fn unit_or(mut v: Vec<f64>, seed: u64) -> Vec<f64> {
    let n = l2_normalize(&mut v);
    if n < 1e-9 {
        unit_fallback(v.len(), seed)
    } else {
        v
    }
}

/// Settings that pin down the stub providers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedConfig {
    pub seed: u64,
    pub dim: usize,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            seed: 5,
            dim: DEFAULT_DIM,
        }
    }
}

impl EmbedConfig {
    pub fn text(&self) -> StubTextProvider {
        StubTextProvider::new(mix(self.seed, 1), self.dim)
    }

    pub fn audio(&self, sample_rate: u32) -> StubAudioProvider {
        StubAudioProvider::new(mix(self.seed, 2), self.dim, sample_rate)
    }
}

/// Lowercased whitespace tokens with surrounding punctuation removed.
pub fn tokenize(prompt: &str) -> Vec<String> {
    prompt
        .split_whitespace()
        .map(|t| {
            t.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

/// Hash-seeded Gaussian token vectors, mean-pooled.
#[derive(Clone, Debug)]
pub struct StubTextProvider {
    pub seed: u64,
    pub dim: usize,
}

impl StubTextProvider {
    pub fn new(seed: u64, dim: usize) -> Self {
        Self { seed, dim }
    }

    pub fn provider_id(&self) -> String {
        format!("stub-text/{}/{}", self.dim, self.seed)
    }

    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(mix(self.seed, 0x7e47), str_hash(token)));
        let sd = 1.0 / (self.dim as f64).sqrt();
        (0..self.dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * sd)
            .collect()
    }

    pub fn embed_text(&self, prompt: &str) -> Result<TextEmbedding, EmbedError> {
        let toks = tokenize(prompt);
        if toks.is_empty() {
            return Err(EmbedError::EmptyPrompt);
        }
        let seq: Vec<Vec<f64>> = toks.iter().map(|t| self.token_vector(t)).collect();
        let v = unit_or(pooled(&seq, self.dim), mix(self.seed, 1));
        Ok(TextEmbedding {
            vector: to_f32(&v),
            provider_id: self.provider_id(),
            token_sequence: Some(seq.iter().map(|s| to_f32(s)).collect()),
        })
    }
}

/// Log filterbank energies over 32 ms windows, projected by a seeded matrix.
#[derive(Clone)]
pub struct StubAudioProvider {
    pub seed: u64,
    pub dim: usize,
    pub bands: usize,
    sample_rate: u32,
    window: usize,
    hop: usize,
    projection: Arc<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for StubAudioProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StubAudioProvider")
            .field("seed", &self.seed)
            .field("dim", &self.dim)
            .field("bands", &self.bands)
            .field("sample_rate", &self.sample_rate)
            .field("window", &self.window)
            .finish()
    }
}

impl StubAudioProvider {
    pub fn new(seed: u64, dim: usize, sample_rate: u32) -> Self {
        let bands = 64;
        let window = ((0.032 * sample_rate as f64).round() as usize).max(2);
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0xa0d10));
        let sd = 1.0 / (bands as f64).sqrt();
        let projection = (0..dim * bands)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * sd)
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(window);
        Self {
            seed,
            dim,
            bands,
            sample_rate,
            window,
            hop: window / 2,
            projection: Arc::new(projection),
            fft,
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Per-window centered log band energies, `bands` values per window.
    pub fn log_energies(&self, x: &[f32]) -> Result<Vec<Vec<f64>>, EmbedError> {
        if x.len() < self.window {
            return Err(EmbedError::TooShort {
                len: x.len(),
                window: self.window,
            });
        }
        let w = self.window;
        let frames = (x.len() - w) / self.hop + 1;
        let hann: Vec<f64> = (0..w)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / w as f64).cos())
            .collect();
        let nbins = w / 2 + 1;
        let mut buf = vec![Complex::new(0.0, 0.0); w];
        let mut out = Vec::with_capacity(frames);
        for f in 0..frames {
            for i in 0..w {
                buf[i] = Complex::new(x[f * self.hop + i] as f64 * hann[i], 0.0);
            }
            self.fft.process(&mut buf);
            let mut e = vec![0.0f64; self.bands];
            for (b, band) in e.iter_mut().enumerate() {
                let lo = b * nbins / self.bands;
                let hi = ((b + 1) * nbins / self.bands).max(lo + 1).min(nbins);
                *band = (LOG_FLOOR + buf[lo..hi].iter().map(|c| c.norm_sqr()).sum::<f64>()).ln();
            }
            let m = e.iter().sum::<f64>() / self.bands as f64;
            for v in e.iter_mut() {
                *v -= m;
            }
            out.push(e);
        }
        Ok(out)
    }

    pub fn embed_audio(&self, signal: &AudioSignal) -> Result<AudioEmbedding, EmbedError> {
        self.embed_samples(signal.samples())
    }

    pub fn embed_samples(&self, x: &[f32]) -> Result<AudioEmbedding, EmbedError> {
        let le = self.log_energies(x)?;
        let p = &self.projection;
        let frames: Vec<Vec<f64>> = le
            .iter()
            .map(|e| {
                let v = (0..self.dim)
                    .map(|d| {
                        p[d * self.bands..(d + 1) * self.bands]
                            .iter()
                            .zip(e)
                            .map(|(a, b)| a * b)
                            .sum()
                    })
                    .collect();
                unit_or(v, mix(self.seed, 2))
            })
            .collect();
        let v = unit_or(pooled(&frames, self.dim), mix(self.seed, 3));
        Ok(AudioEmbedding {
            vector: to_f32(&v),
            frame_sequence: Some(frames.iter().map(|f| to_f32(f)).collect()),
        })
    }
}

/// Key under which a prompt is looked up when stored by hash.
pub fn prompt_key(prompt: &str) -> String {
    format!("{:016x}", str_hash(prompt.trim()))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoreLine {
    key: String,
    vector: Vec<f32>,
}

/// Exact vectors loaded from a JSON Lines file of `{key, vector}` objects.
#[derive(Clone, Debug, PartialEq)]
pub struct PrecomputedStore {
    dim: usize,
    map: HashMap<String, Vec<f32>>,
}

impl PrecomputedStore {
    pub fn parse(text: &str) -> Result<Self, EmbedError> {
        let mut map = HashMap::new();
        let mut dim = None;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fail = |msg: String| EmbedError::Format { line: i + 1, msg };
            let l: StoreLine = serde_json::from_str(line).map_err(|e| fail(e.to_string()))?;
            if l.vector.is_empty() {
                return Err(fail("empty vector".into()));
            }
            if l.vector.iter().any(|v| !v.is_finite()) {
                return Err(fail("non-finite component".into()));
            }
            match dim {
                None => dim = Some(l.vector.len()),
                Some(d) if d != l.vector.len() => {
                    return Err(fail(format!(
                        "dimension {} differs from {}",
                        l.vector.len(),
                        d
                    )))
                }
                _ => {}
            }
            if map.insert(l.key.clone(), l.vector).is_some() {
                return Err(fail(format!("duplicate key {:?}", l.key)));
            }
        }
        Ok(Self {
            dim: dim.unwrap_or(0),
            map,
        })
    }

    pub fn load(path: &Path) -> Result<Self, EmbedError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn get(&self, key: &str) -> Result<&[f32], EmbedError> {
        self.map
            .get(key)
            .map(|v| v.as_slice())
            .ok_or_else(|| EmbedError::MissingKey(key.to_string()))
    }

    /// Look a prompt up by its exact text, falling back to [`prompt_key`].
    pub fn text(&self, prompt: &str) -> Result<TextEmbedding, EmbedError> {
        let v = self
            .get(prompt)
            .or_else(|_| self.get(&prompt_key(prompt)))?;
        Ok(TextEmbedding {
            vector: v.to_vec(),
            provider_id: "precomputed".into(),
            token_sequence: None,
        })
    }

    pub fn audio(&self, clip_id: &str) -> Result<AudioEmbedding, EmbedError> {
        Ok(AudioEmbedding {
            vector: self.get(clip_id)?.to_vec(),
            frame_sequence: None,
        })
    }
}

/// Cosine similarity.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na: f64 = a.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    d / (na * nb).max(1e-12)
}
