//! Synthetic paired text–speech corpus.
//!
//! Each token of the vocabulary is a narrowband pattern (center frequency,
//! relative chirp, amplitude envelope). Tokens are grouped into topics of
//! consecutive indices; an utterance speaks every token of one topic in a
//! random order and with random durations, as one continuous gliding tone
//! shaped by the speaker's pitch modulation. The prompt names a subset of the
//! target's tokens, so it is related to, but never aligned with, the audio.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::audio::{self, rms_slice, AudioError, AudioSignal, WavFormat};
use crate::seed::{mix, str_hash};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("unknown token {0:?}")]
    UnknownToken(String),
    #[error("empty token list")]
    NoTokens,
    #[error("duration {0} s is below the 0.25 s minimum")]
    TooShort(f64),
    #[error("zero-energy {0}")]
    ZeroEnergy(&'static str),
    #[error("length or rate mismatch: {0}")]
    Mismatch(String),
    #[error("insufficient speakers: {0}")]
    Speakers(String),
    #[error("invalid corpus config: {0}")]
    Config(String),
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

// ---- configuration -------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitCounts {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub enabled: bool,
    /// Requested noise SDR range in dB, measured against the target.
    pub sdr_range: [f64; 2],
    /// Optional directory of mono WAV files used instead of synthetic noise.
    pub pool_dir: Option<PathBuf>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            sdr_range: [-3.0, 3.0],
            pool_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub sample_rate: u32,
    /// Seconds per example.
    pub duration: f64,
    pub vocab_size: usize,
    /// Tokens per topic; every utterance speaks one whole topic.
    pub topic_size: usize,
    /// Interfering speakers per mixture (1 → 2-mix, 2 → 3-mix).
    pub interferers: usize,
    /// Share of the target's tokens named in the prompt.
    pub prompt_fraction: f64,
    /// Interferer SDR range in dB.
    pub sdr_range: [f64; 2],
    /// Allow interferers to speak the target's topic.
    pub token_overlap: bool,
    pub counts: SplitCounts,
    pub speakers: SplitCounts,
    pub noise: NoiseConfig,
    pub wav_format: WavFormatName,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WavFormatName {
    Pcm16,
    #[default]
    Float32,
}

impl From<WavFormatName> for WavFormat {
    fn from(w: WavFormatName) -> Self {
        match w {
            WavFormatName::Pcm16 => WavFormat::Pcm16,
            WavFormatName::Float32 => WavFormat::Float32,
        }
    }
}

impl Default for SplitCounts {
    fn default() -> Self {
        Self {
            train: 2000,
            valid: 200,
            test: 200,
        }
    }
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            sample_rate: 8000,
            duration: 1.0,
            vocab_size: 64,
            topic_size: 4,
            interferers: 1,
            prompt_fraction: 0.5,
            sdr_range: [-3.0, 3.0],
            token_overlap: false,
            counts: SplitCounts::default(),
            speakers: SplitCounts {
                train: 50,
                valid: 5,
                test: 4,
            },
            noise: NoiseConfig::default(),
            wav_format: WavFormatName::Float32,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: String| Err(CorpusError::Config(m));
        if self.sample_rate < 2000 {
            return bad(format!("sample_rate {} below 2000 Hz", self.sample_rate));
        }
        if self.duration < 0.25 {
            return Err(CorpusError::TooShort(self.duration));
        }
        if self.topic_size == 0 || self.vocab_size % self.topic_size != 0 {
            return bad(format!(
                "vocab_size {} is not a multiple of topic_size {}",
                self.vocab_size, self.topic_size
            ));
        }
        if self.vocab_size > 4900 {
            return bad(format!("vocab_size {} above 4900", self.vocab_size));
        }
        let topics = self.vocab_size / self.topic_size;
        if !(1..=3).contains(&self.interferers) {
            return bad(format!(
                "interferers must be 1..=3, got {}",
                self.interferers
            ));
        }
        if !self.token_overlap && topics < self.interferers + 1 {
            return bad(format!(
                "{} topics cannot give {} interferers disjoint topics",
                topics, self.interferers
            ));
        }
        if !(self.prompt_fraction > 0.0 && self.prompt_fraction < 1.0) {
            return bad(format!(
                "prompt_fraction {} outside (0, 1)",
                self.prompt_fraction
            ));
        }
        if self.sdr_range[0] > self.sdr_range[1]
            || self.noise.sdr_range[0] > self.noise.sdr_range[1]
        {
            return bad("sdr ranges must be [low, high]".into());
        }
        let s = &self.speakers;
        if s.train == 0 || s.valid == 0 || s.test == 0 {
            return Err(CorpusError::Speakers(format!(
                "pools {}/{}/{} must all be non-empty",
                s.train, s.valid, s.test
            )));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        (self.duration * self.sample_rate as f64).round() as usize
    }

    pub fn topics(&self) -> usize {
        self.vocab_size / self.topic_size
    }

    /// Tokens per prompt.
    pub fn prompt_len(&self) -> usize {
        ((self.topic_size as f64 * self.prompt_fraction).floor() as usize).clamp(1, self.topic_size)
    }
}

// ---- vocabulary ----------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Envelope {
    Flat,
    Swell,
    Dip,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenRule {
    pub center_hz: f64,
    /// Hz per second.
    pub slope_hz_s: f64,
    pub envelope: Envelope,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenVocabulary {
    tokens: Vec<String>,
    rules: Vec<TokenRule>,
    topic_size: usize,
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

fn syllable(i: usize) -> String {
    let c = CONSONANTS[i % CONSONANTS.len()] as char;
    let v = VOWELS[(i / CONSONANTS.len()) % VOWELS.len()] as char;
    format!("{c}{v}")
}

/// Pronounceable, unique token names for indices below 4900.
pub fn token_name(i: usize) -> String {
    let r = i % 70;
    let q = i / 70;
    format!("{}{}", syllable(r), syllable((q + 7 * r) % 70))
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl TokenVocabulary {
    /// Deterministic in `(size, topic_size, sample_rate, seed)`.
    ///
    /// Centers sit on a log grid over [250 Hz, 0.375·sr]; a stride
    /// permutation keeps tokens of the same topic far apart in frequency.
    pub fn new(size: usize, topic_size: usize, sample_rate: u32, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, str_hash("vocabulary")));
        let (lo, hi) = (250.0f64, 0.375 * sample_rate as f64);
        let mut stride = ((size as f64 * 0.42).round() as usize).max(1);
        while size > 1 && gcd(stride, size) != 1 {
            stride += 1;
        }
        let offset = if size > 0 {
            rng.random_range(0..size)
        } else {
            0
        };
        let rules = (0..size)
            .map(|k| {
                let slot = (offset + stride * k) % size.max(1);
                let frac = if size > 1 {
                    slot as f64 / (size - 1) as f64
                } else {
                    0.0
                };
                let center_hz = lo * (hi / lo).powf(frac);
                let slope_hz_s = rng.random_range(-0.15..0.15) * center_hz;
                let envelope = match rng.random_range(0..3) {
                    0 => Envelope::Flat,
                    1 => Envelope::Swell,
                    _ => Envelope::Dip,
                };
                TokenRule {
                    center_hz,
                    slope_hz_s,
                    envelope,
                }
            })
            .collect();
        Self {
            tokens: (0..size).map(token_name).collect(),
            rules,
            topic_size,
        }
    }

    pub fn from_config(cfg: &CorpusConfig, seed: u64) -> Self {
        Self::new(cfg.vocab_size, cfg.topic_size, cfg.sample_rate, seed)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn rule(&self, i: usize) -> &TokenRule {
        &self.rules[i]
    }

    pub fn index(&self, token: &str) -> Option<usize> {
        self.tokens.iter().position(|t| t == token)
    }

    pub fn topic_of(&self, i: usize) -> usize {
        i / self.topic_size
    }

    pub fn topic_tokens(&self, topic: usize) -> std::ops::Range<usize> {
        topic * self.topic_size..(topic + 1) * self.topic_size
    }
}

// ---- speakers ------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerProfile {
    pub speaker_id: String,
    pub pitch_base: f64,
    pub harmonic_weights: Vec<f64>,
}

impl SpeakerProfile {
    pub fn new(speaker_id: &str, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, str_hash(speaker_id)));
        Self {
            speaker_id: speaker_id.to_string(),
            pitch_base: rng.random_range(90.0..260.0),
            harmonic_weights: (0..3).map(|_| rng.random_range(0.2..1.0)).collect(),
        }
    }
}

pub fn speaker_id(global_index: usize) -> String {
    format!("spk{global_index:03}")
}

/// Disjoint speaker pools, in split order train/valid/test.
pub fn speaker_pools(cfg: &CorpusConfig) -> [Vec<String>; 3] {
    let s = &cfg.speakers;
    let ids = |from: usize, n: usize| (from..from + n).map(speaker_id).collect::<Vec<_>>();
    [
        ids(0, s.train),
        ids(s.train, s.valid),
        ids(s.train + s.valid, s.test),
    ]
}

// ---- rendering -----------------------------------------------------------------

/// Moving average of width `w` with edge replication.
fn box_smooth(x: &[f64], w: usize) -> Vec<f64> {
    if w <= 1 || x.is_empty() {
        return x.to_vec();
    }
    let n = x.len();
    let half = w / 2;
    let at = |i: isize| x[i.clamp(0, n as isize - 1) as usize];
    let mut out = Vec::with_capacity(n);
    let mut acc: f64 = (0..w).map(|k| at(k as isize - half as isize)).sum();
    for i in 0..n {
        out.push(acc / w as f64);
        acc += at((i + w) as isize - half as isize) - at(i as isize - half as isize);
    }
    out
}

/// Triangular smoothing (two cascaded boxes) spanning `span` samples.
fn smooth(x: &[f64], span: usize) -> Vec<f64> {
    let w = (span / 2).max(1);
    box_smooth(&box_smooth(x, w), w)
}

/// Render one utterance speaking `tokens` in order.
pub fn render_utterance(
    tokens: &[String],
    vocab: &TokenVocabulary,
    profile: &SpeakerProfile,
    duration: f64,
    sample_rate: u32,
    seed: u64,
) -> Result<AudioSignal, CorpusError> {
    if tokens.is_empty() {
        return Err(CorpusError::NoTokens);
    }
    if duration < 0.25 {
        return Err(CorpusError::TooShort(duration));
    }
    let idx: Vec<usize> = tokens
        .iter()
        .map(|t| {
            vocab
                .index(t)
                .ok_or_else(|| CorpusError::UnknownToken(t.clone()))
        })
        .collect::<Result<_, _>>()?;
    let sr = sample_rate as f64;
    let n = (duration * sr).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = idx.iter().map(|_| rng.random_range(0.6..1.4)).collect();
    let total: f64 = weights.iter().sum();
    let mut bounds = vec![0usize];
    let mut acc = 0.0;
    for w in &weights {
        acc += w;
        bounds.push(((acc / total) * n as f64) as usize);
    }
    *bounds.last_mut().unwrap() = n;
    let mut freq = vec![0.0; n];
    let mut amp = vec![1.0; n];
    for (i, &tok) in idx.iter().enumerate() {
        let (a, b) = (bounds[i], bounds[i + 1]);
        let rule = vocab.rule(tok);
        let mid = (b - a) as f64 / 2.0 / sr;
        for j in a..b {
            let t = (j - a) as f64 / sr;
            freq[j] = rule.center_hz + rule.slope_hz_s * (t - mid);
            let x = if b - a > 1 {
                (j - a) as f64 / (b - a - 1) as f64
            } else {
                0.5
            };
            amp[j] = match rule.envelope {
                Envelope::Flat => 1.0,
                Envelope::Swell => 0.6 + 0.4 * (PI * x).sin(),
                Envelope::Dip => 1.0 - 0.4 * (PI * x).sin(),
            };
        }
    }
    let span = (0.04 * sr) as usize;
    let freq = smooth(&freq, span);
    let amp = smooth(&amp, span);
    let hw = &profile.harmonic_weights;
    let wsum: f64 = hw.iter().sum::<f64>().max(1e-9);
    let ph_am: Vec<f64> = hw.iter().map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let mut phase = rng.random_range(0.0..2.0 * PI);
    let fade = (0.01 * sr).max(1.0);
    let mut out = vec![0.0f64; n];
    for j in 0..n {
        phase += 2.0 * PI * freq[j] / sr;
        let t = j as f64 / sr;
        let am: f64 = hw
            .iter()
            .enumerate()
            .map(|(h, w)| w * (2.0 * PI * (h + 1) as f64 * profile.pitch_base * t + ph_am[h]).cos())
            .sum::<f64>()
            / wsum;
        let edge = (j.min(n - 1 - j) as f64 / fade).min(1.0);
        out[j] = amp[j] * (1.0 + 0.2 * am) * edge * phase.sin();
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let g = 0.9 / (peak + 1e-9);
    Ok(AudioSignal::new(
        out.iter().map(|v| (v * g) as f32).collect(),
        sample_rate,
    )?)
}

// ---- mixing --------------------------------------------------------------------

/// Scale factor putting `interferer` at `sdr_db` below `target`.
pub fn alpha_for_sdr(
    target: &AudioSignal,
    interferer: &AudioSignal,
    sdr_db: f64,
) -> Result<f64, CorpusError> {
    let rs = rms_slice(target.samples()).map_err(|_| CorpusError::ZeroEnergy("target"))?;
    let rv = rms_slice(interferer.samples()).map_err(|_| CorpusError::ZeroEnergy("interferer"))?;
    if rs <= 0.0 {
        return Err(CorpusError::ZeroEnergy("target"));
    }
    if rv <= 0.0 {
        return Err(CorpusError::ZeroEnergy("interferer"));
    }
    Ok(rs / (rv * 10f64.powf(sdr_db / 20.0)))
}

/// SDR of `target` against `alpha · other`, in dB.
pub fn achieved_sdr(target: &AudioSignal, other: &AudioSignal, alpha: f64) -> f64 {
    let rs = rms_slice(target.samples()).unwrap_or(0.0);
    let rv = rms_slice(other.samples()).unwrap_or(0.0);
    20.0 * (rs / (alpha * rv)).log10()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureExample {
    pub id: String,
    pub split: String,
    pub target: AudioSignal,
    /// Unscaled interferers v_i.
    pub interferers: Vec<AudioSignal>,
    pub alphas: Vec<f64>,
    pub noise: Option<AudioSignal>,
    pub noise_alpha: Option<f64>,
    pub mixture: AudioSignal,
    pub prompt: String,
    pub prompt_tokens: Vec<String>,
    pub target_tokens: Vec<String>,
    pub interferer_tokens: Vec<Vec<String>>,
    pub speaker_ids: Vec<String>,
    pub requested_sdrs: Vec<f64>,
    pub noise_sdr: Option<f64>,
}

impl MixtureExample {
    /// α_i · v_i.
    pub fn scaled_interferer(&self, i: usize) -> Vec<f32> {
        let a = self.alphas[i];
        self.interferers[i]
            .samples()
            .iter()
            .map(|&v| (a * v as f64) as f32)
            .collect()
    }

    pub fn scaled_noise(&self) -> Option<Vec<f32>> {
        let (n, a) = (self.noise.as_ref()?, self.noise_alpha?);
        Some(n.samples().iter().map(|&v| (a * v as f64) as f32).collect())
    }

    /// Largest |x − (s + Σ α_i v_i + α_n n)|.
    pub fn reconstruction_residual(&self) -> f64 {
        (0..self.mixture.len())
            .map(|j| {
                let mut want = self.target.samples()[j] as f64;
                for (v, a) in self.interferers.iter().zip(&self.alphas) {
                    want += a * v.samples()[j] as f64;
                }
                if let (Some(n), Some(a)) = (&self.noise, self.noise_alpha) {
                    want += a * n.samples()[j] as f64;
                }
                (self.mixture.samples()[j] as f64 - want).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn n_interferers(&self) -> usize {
        self.interferers.len()
    }
}

/// Pieces produced by [`make_mixture`] before corpus metadata is attached.
#[derive(Clone, Debug, PartialEq)]
pub struct Mixed {
    pub mixture: AudioSignal,
    pub alphas: Vec<f64>,
    pub noise_alpha: Option<f64>,
}

/// `x = s + Σ α_i v_i (+ α_n n)`, each α chosen to hit its requested SDR.
pub fn make_mixture(
    target: &AudioSignal,
    interferers: &[AudioSignal],
    sdrs: &[f64],
    noise: Option<(&AudioSignal, f64)>,
) -> Result<Mixed, CorpusError> {
    if interferers.len() != sdrs.len() {
        return Err(CorpusError::Mismatch(format!(
            "{} interferers, {} SDRs",
            interferers.len(),
            sdrs.len()
        )));
    }
    if interferers.is_empty() && noise.is_none() {
        return Err(CorpusError::Mismatch("no interferers and no noise".into()));
    }
    let check = |s: &AudioSignal, what: &str| {
        if s.len() != target.len() || s.sample_rate() != target.sample_rate() {
            Err(CorpusError::Mismatch(format!(
                "{what}: {} samples @ {} Hz vs target {} @ {}",
                s.len(),
                s.sample_rate(),
                target.len(),
                target.sample_rate()
            )))
        } else {
            Ok(())
        }
    };
    let mut acc: Vec<f64> = target.to_f64();
    let mut alphas = Vec::with_capacity(interferers.len());
    for (v, &sdr) in interferers.iter().zip(sdrs) {
        check(v, "interferer")?;
        let a = alpha_for_sdr(target, v, sdr)?;
        for (x, &y) in acc.iter_mut().zip(v.samples()) {
            *x += a * y as f64;
        }
        alphas.push(a);
    }
    let mut noise_alpha = None;
    if let Some((n, sdr)) = noise {
        check(n, "noise")?;
        let a = alpha_for_sdr(target, n, sdr)?;
        for (x, &y) in acc.iter_mut().zip(n.samples()) {
            *x += a * y as f64;
        }
        noise_alpha = Some(a);
    }
    let mixture = AudioSignal::new(
        acc.iter().map(|&v| v as f32).collect(),
        target.sample_rate(),
    )?;
    Ok(Mixed {
        mixture,
        alphas,
        noise_alpha,
    })
}

/// Seeded low-pass Gaussian noise at unit peak.
pub fn synth_noise(n: usize, sample_rate: u32, seed: u64) -> AudioSignal {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: f64 = rng.random_range(0.3..0.9);
    let mut y = 0.0f64;
    let mut out: Vec<f64> = (0..n)
        .map(|_| {
            let w: f64 = rng.sample(StandardNormal);
            y = a * y + (1.0 - a) * w;
            y
        })
        .collect();
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
    for v in out.iter_mut() {
        *v *= 0.9 / peak;
    }
    AudioSignal::new(out.iter().map(|&v| v as f32).collect(), sample_rate).expect("finite noise")
}

// ---- example generation --------------------------------------------------------

pub const SPLITS: [&str; 3] = ["train", "valid", "test"];

fn split_index(split: &str) -> Result<usize, CorpusError> {
    SPLITS
        .iter()
        .position(|s| *s == split)
        .ok_or_else(|| CorpusError::Config(format!("unknown split {split:?}")))
}

/// Everything needed to build examples: config, vocabulary, speaker pools and
/// an optional file-backed noise pool.
#[derive(Clone, Debug)]
pub struct Generator {
    pub cfg: CorpusConfig,
    pub seed: u64,
    pub vocab: TokenVocabulary,
    pools: [Vec<String>; 3],
    noise_pool: Vec<AudioSignal>,
}

impl Generator {
    pub fn new(cfg: CorpusConfig, seed: u64) -> Result<Self, CorpusError> {
        cfg.validate()?;
        let vocab = TokenVocabulary::from_config(&cfg, seed);
        let pools = speaker_pools(&cfg);
        let mut noise_pool = Vec::new();
        if let (true, Some(dir)) = (cfg.noise.enabled, &cfg.noise.pool_dir) {
            let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
                .collect();
            files.sort();
            for f in files {
                noise_pool.push(audio::read_wav(&f)?);
            }
            if noise_pool.is_empty() {
                return Err(CorpusError::Config(format!(
                    "noise pool {} has no WAV files",
                    dir.display()
                )));
            }
        }
        Ok(Self {
            cfg,
            seed,
            vocab,
            pools,
            noise_pool,
        })
    }

    pub fn pool(&self, split: &str) -> Result<&[String], CorpusError> {
        Ok(&self.pools[split_index(split)?])
    }

    pub fn count(&self, split: &str) -> Result<usize, CorpusError> {
        let c = &self.cfg.counts;
        Ok([c.train, c.valid, c.test][split_index(split)?])
    }

    pub fn example_seed(&self, split: &str, index: usize) -> Result<u64, CorpusError> {
        Ok(mix(
            mix(self.seed, split_index(split)? as u64 + 1),
            index as u64,
        ))
    }

    fn noise_for(&self, n: usize, seed: u64) -> AudioSignal {
        if self.noise_pool.is_empty() {
            return synth_noise(n, self.cfg.sample_rate, seed);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src = &self.noise_pool[rng.random_range(0..self.noise_pool.len())];
        let s = src.samples();
        let start = if s.is_empty() {
            0
        } else {
            rng.random_range(0..s.len())
        };
        let v: Vec<f32> = (0..n)
            .map(|j| {
                if s.is_empty() {
                    0.0
                } else {
                    s[(start + j) % s.len()]
                }
            })
            .collect();
        AudioSignal::new(v, self.cfg.sample_rate).expect("finite pool noise")
    }

    /// Build example `index` of `split`; a pure function of (config, seed, split, index).
    pub fn example(&self, split: &str, index: usize) -> Result<MixtureExample, CorpusError> {
        let cfg = &self.cfg;
        let seed = self.example_seed(split, index)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pool = self.pool(split)?;
        let k = cfg.interferers;
        let speakers: Vec<String> = if pool.len() > k {
            pool.choose_multiple(&mut rng, k + 1).cloned().collect()
        } else {
            (0..=k)
                .map(|_| pool[rng.random_range(0..pool.len())].clone())
                .collect()
        };
        let topics = cfg.topics();
        let mut chosen: Vec<usize> = Vec::with_capacity(k + 1);
        let target_topic = rng.random_range(0..topics);
        chosen.push(target_topic);
        for _ in 0..k {
            let t = loop {
                let t = rng.random_range(0..topics);
                if cfg.token_overlap || !chosen.contains(&t) {
                    break t;
                }
            };
            chosen.push(t);
        }
        let utter_tokens = |topic: usize, rng: &mut ChaCha8Rng| {
            let mut v: Vec<usize> = self.vocab.topic_tokens(topic).collect();
            v.shuffle(rng);
            v.into_iter()
                .map(|i| self.vocab.tokens()[i].clone())
                .collect::<Vec<_>>()
        };
        let mut token_sets: Vec<Vec<String>> = Vec::with_capacity(k + 1);
        for &t in &chosen {
            token_sets.push(utter_tokens(t, &mut rng));
        }
        let mut prompt_tokens = token_sets[0].clone();
        prompt_tokens.shuffle(&mut rng);
        prompt_tokens.truncate(cfg.prompt_len());
        let sdrs: Vec<f64> = (0..k)
            .map(|_| rng.random_range(cfg.sdr_range[0]..=cfg.sdr_range[1]))
            .collect();
        let noise_sdr = cfg
            .noise
            .enabled
            .then(|| rng.random_range(cfg.noise.sdr_range[0]..=cfg.noise.sdr_range[1]));
        let n = cfg.n_samples();
        let mut signals = Vec::with_capacity(k + 1);
        for (i, (spk, toks)) in speakers.iter().zip(&token_sets).enumerate() {
            let prof = SpeakerProfile::new(spk, self.seed);
            signals.push(render_utterance(
                toks,
                &self.vocab,
                &prof,
                cfg.duration,
                cfg.sample_rate,
                mix(seed, 100 + i as u64),
            )?);
        }
        let noise = noise_sdr.map(|_| self.noise_for(n, mix(seed, 99)));
        let mut target = signals.remove(0);
        let mut interferers = signals;
        let mut mixed = make_mixture(&target, &interferers, &sdrs, noise.as_ref().zip(noise_sdr))?;
        let mut noise = noise;
        // keep the mixture inside ±1 by scaling every component together
        let peak = mixed.mixture.peak();
        if peak > 0.99 {
            let g = 0.99 / peak;
            let sc = |s: &AudioSignal| {
                AudioSignal::new(
                    s.samples().iter().map(|&v| v * g).collect(),
                    s.sample_rate(),
                )
                .expect("finite")
            };
            target = sc(&target);
            interferers = interferers.iter().map(sc).collect();
            noise = noise.as_ref().map(sc);
            mixed = make_mixture(&target, &interferers, &sdrs, noise.as_ref().zip(noise_sdr))?;
        }
        let prompt = prompt_tokens.join(" ");
        let target_tokens = token_sets.remove(0);
        Ok(MixtureExample {
            id: format!("{split}-{index:06}"),
            split: split.to_string(),
            target,
            interferers,
            alphas: mixed.alphas,
            noise,
            noise_alpha: mixed.noise_alpha,
            mixture: mixed.mixture,
            prompt,
            prompt_tokens,
            target_tokens,
            interferer_tokens: token_sets,
            speaker_ids: speakers,
            requested_sdrs: sdrs,
            noise_sdr,
        })
    }

    /// All examples of one split, built on `workers` threads. The result does
    /// not depend on the worker count.
    pub fn split_examples(
        &self,
        split: &str,
        workers: usize,
    ) -> Result<Vec<MixtureExample>, CorpusError> {
        let n = self.count(split)?;
        parallel_map(n, workers, |i| self.example(split, i))
    }
}

/// Map `f` over `0..n` on up to `workers` threads, preserving order.
pub fn parallel_map<T: Send, E: Send>(
    n: usize,
    workers: usize,
    f: impl Fn(usize) -> Result<T, E> + Sync,
) -> Result<Vec<T>, E> {
    let workers = workers.clamp(1, n.max(1));
    if workers == 1 {
        return (0..n).map(f).collect();
    }
    let chunk = n.div_ceil(workers);
    let f = &f;
    let parts: Vec<Result<Vec<T>, E>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                s.spawn(move || {
                    (w * chunk..((w + 1) * chunk).min(n))
                        .map(f)
                        .collect::<Result<Vec<T>, E>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(n);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

// ---- manifest ------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub split: String,
    pub mixture_path: String,
    pub target_path: String,
    pub interferer_paths: Vec<String>,
    pub alphas: Vec<f64>,
    pub sdrs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_sdr: Option<f64>,
    pub prompt: String,
    pub prompt_tokens: Vec<String>,
    #[serde(default)]
    pub target_tokens: Vec<String>,
    #[serde(default)]
    pub interferer_tokens: Vec<Vec<String>>,
    pub speaker_ids: Vec<String>,
}

pub const MANIFEST_NAME: &str = "manifest.jsonl";

/// Parse JSON Lines manifest text. Blank lines are skipped.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let e: ManifestEntry = serde_json::from_str(line).map_err(|e| CorpusError::Manifest {
            line: i + 1,
            msg: e.to_string(),
        })?;
        validate_entry(&e).map_err(|msg| CorpusError::Manifest { line: i + 1, msg })?;
        out.push(e);
    }
    Ok(out)
}

fn validate_entry(e: &ManifestEntry) -> Result<(), String> {
    if e.alphas.len() != e.interferer_paths.len() || e.sdrs.len() != e.interferer_paths.len() {
        return Err(format!(
            "{} interferers, {} alphas, {} sdrs",
            e.interferer_paths.len(),
            e.alphas.len(),
            e.sdrs.len()
        ));
    }
    if e.alphas.iter().chain(&e.sdrs).any(|v| !v.is_finite()) {
        return Err("non-finite alpha or sdr".into());
    }
    if e.noise_path.is_some() != e.noise_alpha.is_some() {
        return Err("noise_path and noise_alpha must appear together".into());
    }
    if !SPLITS.contains(&e.split.as_str()) {
        return Err(format!("unknown split {:?}", e.split));
    }
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, CorpusError> {
    let f = std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => {
            CorpusError::Config(format!("manifest not found: {}", path.display()))
        }
        _ => CorpusError::Io(e),
    })?;
    let mut text = String::new();
    for line in std::io::BufReader::new(f).lines() {
        text.push_str(&line?);
        text.push('\n');
    }
    parse_manifest(&text)
}

/// Load the audio behind a manifest entry; paths are relative to `root`.
pub fn load_example(entry: &ManifestEntry, root: &Path) -> Result<MixtureExample, CorpusError> {
    let rd = |p: &str| audio::read_wav(&root.join(p));
    let interferers = entry
        .interferer_paths
        .iter()
        .map(|p| rd(p))
        .collect::<Result<Vec<_>, _>>()?;
    let noise = entry.noise_path.as_deref().map(rd).transpose()?;
    Ok(MixtureExample {
        id: entry.id.clone(),
        split: entry.split.clone(),
        target: rd(&entry.target_path)?,
        interferers,
        alphas: entry.alphas.clone(),
        noise,
        noise_alpha: entry.noise_alpha,
        mixture: rd(&entry.mixture_path)?,
        prompt: entry.prompt.clone(),
        prompt_tokens: entry.prompt_tokens.clone(),
        target_tokens: entry.target_tokens.clone(),
        interferer_tokens: entry.interferer_tokens.clone(),
        speaker_ids: entry.speaker_ids.clone(),
        requested_sdrs: entry.sdrs.clone(),
        noise_sdr: entry.noise_sdr,
    })
}

/// Load every example of `split` from a corpus directory.
pub fn load_split(
    root: &Path,
    split: &str,
    workers: usize,
) -> Result<Vec<MixtureExample>, CorpusError> {
    let entries: Vec<ManifestEntry> = read_manifest(&root.join(MANIFEST_NAME))?
        .into_iter()
        .filter(|e| e.split == split)
        .collect();
    parallel_map(entries.len(), workers, |i| load_example(&entries[i], root))
}

fn entry_for(ex: &MixtureExample) -> ManifestEntry {
    let base = format!("{}/{}", ex.split, ex.id);
    ManifestEntry {
        id: ex.id.clone(),
        split: ex.split.clone(),
        mixture_path: format!("{base}_mix.wav"),
        target_path: format!("{base}_s.wav"),
        interferer_paths: (0..ex.interferers.len())
            .map(|i| format!("{base}_v{}.wav", i + 1))
            .collect(),
        alphas: ex.alphas.clone(),
        sdrs: ex.requested_sdrs.clone(),
        noise_path: ex.noise.as_ref().map(|_| format!("{base}_n.wav")),
        noise_alpha: ex.noise_alpha,
        noise_sdr: ex.noise_sdr,
        prompt: ex.prompt.clone(),
        prompt_tokens: ex.prompt_tokens.clone(),
        target_tokens: ex.target_tokens.clone(),
        interferer_tokens: ex.interferer_tokens.clone(),
        speaker_ids: ex.speaker_ids.clone(),
    }
}

/// Summary returned by [`generate_corpus`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorpusSummary {
    pub manifest: PathBuf,
    pub examples: usize,
    pub clipped_samples: usize,
}

/// Write the WAV tree and `manifest.jsonl` under `out_dir`.
pub fn generate_corpus(
    cfg: &CorpusConfig,
    seed: u64,
    out_dir: &Path,
    workers: usize,
) -> Result<CorpusSummary, CorpusError> {
    let gen = Generator::new(cfg.clone(), seed)?;
    let fmt: WavFormat = cfg.wav_format.into();
    let mut lines = Vec::new();
    let mut clipped = 0;
    for split in SPLITS {
        std::fs::create_dir_all(out_dir.join(split))?;
        let n = gen.count(split)?;
        let entries = parallel_map(
            n,
            workers,
            |i| -> Result<(ManifestEntry, usize), CorpusError> {
                let ex = gen.example(split, i)?;
                let e = entry_for(&ex);
                let mut c =
                    audio::write_wav(&ex.mixture, &out_dir.join(&e.mixture_path), fmt)?.clipped;
                c += audio::write_wav(&ex.target, &out_dir.join(&e.target_path), fmt)?.clipped;
                for (v, p) in ex.interferers.iter().zip(&e.interferer_paths) {
                    c += audio::write_wav(v, &out_dir.join(p), fmt)?.clipped;
                }
                if let (Some(nz), Some(p)) = (&ex.noise, &e.noise_path) {
                    c += audio::write_wav(nz, &out_dir.join(p), fmt)?.clipped;
                }
                Ok((e, c))
            },
        )?;
        for (e, c) in entries {
            clipped += c;
            lines.push(serde_json::to_string(&e).expect("manifest entry serializes"));
        }
    }
    let manifest = out_dir.join(MANIFEST_NAME);
    let mut f = std::io::BufWriter::new(std::fs::File::create(&manifest)?);
    for l in &lines {
        writeln!(f, "{l}")?;
    }
    f.flush()?;
    Ok(CorpusSummary {
        manifest,
        examples: lines.len(),
        clipped_samples: clipped,
    })
}

/// Speaker ids used by a split's examples.
pub fn speakers_in(examples: &[MixtureExample]) -> BTreeSet<String> {
    examples
        .iter()
        .flat_map(|e| e.speaker_ids.iter().cloned())
        .collect()
}
