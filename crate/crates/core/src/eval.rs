//! Metrics, scoring of extraction runs and report data.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{parallel_map, MixtureExample};
use crate::diff::{ParamStore, DB_CLAMP};
use crate::embed::{EmbedConfig, StubAudioProvider, StubTextProvider};
use crate::nets::{best_permutation, RandomAssociation, SepNet, TpeNet, TsrNet};
use crate::pipeline::{run_separator, run_tpe, select_stream};
use crate::seed::mix;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("reference has zero energy")]
    ZeroReference,
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("example {id}: {msg}")]
    Example { id: String, msg: String },
    #[error("{0}")]
    Report(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn check(est: &[f32], refr: &[f32]) -> Result<(), EvalError> {
    if est.len() != refr.len() {
        return Err(EvalError::Length(est.len(), refr.len()));
    }
    if refr.iter().all(|&v| v == 0.0) {
        return Err(EvalError::ZeroReference);
    }
    Ok(())
}

fn centered(x: &[f32]) -> Vec<f64> {
    let m = x.iter().map(|&v| v as f64).sum::<f64>() / x.len() as f64;
    x.iter().map(|&v| v as f64 - m).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `10·log10(num/den)` clamped to ±60, with the degenerate ratios sent to
/// the clamp instead of through an ε.
fn ratio_db(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        return if num == 0.0 { -DB_CLAMP } else { DB_CLAMP };
    }
    if num == 0.0 {
        return -DB_CLAMP;
    }
    (10.0 * (num / den).log10()).clamp(-DB_CLAMP, DB_CLAMP)
}

/// Scale-invariant SDR in dB after removing each signal's mean, clamped to ±60.
/// Exact in the estimate's scale: no ε enters the ratio.
pub fn si_sdr(est: &[f32], refr: &[f32]) -> Result<f64, EvalError> {
    check(est, refr)?;
    let (e, r) = (centered(est), centered(refr));
    let rr = dot(&r, &r);
    if rr == 0.0 {
        return Err(EvalError::ZeroReference);
    }
    let a = dot(&e, &r) / rr;
    let den = e
        .iter()
        .zip(&r)
        .map(|(x, y)| (x - a * y).powi(2))
        .sum::<f64>();
    Ok(ratio_db(a * a * rr, den))
}

/// Plain energy-ratio SDR in dB, clamped to ±60.
pub fn sdr(est: &[f32], refr: &[f32]) -> Result<f64, EvalError> {
    check(est, refr)?;
    let num: f64 = refr.iter().map(|&r| (r as f64).powi(2)).sum();
    let den: f64 = est
        .iter()
        .zip(refr)
        .map(|(&e, &r)| (e as f64 - r as f64).powi(2))
        .sum();
    Ok(ratio_db(num, den))
}

/// `metric(est, ref) − metric(mixture, ref)`.
pub fn improvement(
    metric: fn(&[f32], &[f32]) -> Result<f64, EvalError>,
    est: &[f32],
    mixture: &[f32],
    refr: &[f32],
) -> Result<f64, EvalError> {
    Ok(metric(est, refr)? - metric(mixture, refr)?)
}

/// True when the estimate is closer (in SI-SDR) to the target than to
/// every interferer.
pub fn extraction_correct(
    est: &[f32],
    target: &[f32],
    interferers: &[&[f32]],
) -> Result<bool, EvalError> {
    let t = si_sdr(est, target)?;
    for v in interferers {
        if si_sdr(est, v)? >= t {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Tpe,
    DprnnTsr,
    Pit,
    Random,
}

impl std::str::FromStr for EvalMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "tpe" => Ok(EvalMode::Tpe),
            "dprnn_tsr" | "dprnn-tsr" => Ok(EvalMode::DprnnTsr),
            "pit" => Ok(EvalMode::Pit),
            "random" => Ok(EvalMode::Random),
            other => Err(format!(
                "unknown mode {other:?} (expected tpe, dprnn_tsr, pit or random)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub id: String,
    pub si_sdr: f64,
    pub si_sdri: f64,
    pub sdr: f64,
    pub sdri: f64,
    pub correct: bool,
    /// Requested SDR of the strongest interferer (lowest target-to-interferer ratio).
    pub interferer_sdr: f64,
    pub interferer_sdr_bin: Option<usize>,
    /// Separated stream used as the estimate, for two-stage modes.
    pub stream: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub count: usize,
    pub mean_si_sdri: f64,
    pub mean_sdri: f64,
    /// Percentage of correctly extracted utterances.
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub mode: EvalMode,
    pub seed: u64,
    pub records: Vec<UtteranceRecord>,
    pub aggregates: Aggregates,
    pub histogram: Histogram,
    /// Reserved; not computed.
    pub pesqi: Option<f64>,
    /// Reserved; not computed.
    pub stoii: Option<f64>,
}

/// `[−30, −28, …, 30]`.
pub fn default_histogram_edges() -> Vec<f64> {
    (0..=30).map(|i| -30.0 + 2.0 * i as f64).collect()
}

/// 1 dB bins over `[−10, 10]` for the interference-SDR curves.
pub fn default_sdr_edges() -> Vec<f64> {
    (0..=20).map(|i| -10.0 + i as f64).collect()
}

fn validate_edges(edges: &[f64]) -> Result<(), EvalError> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(EvalError::Report(
            "bin edges must be at least two strictly increasing values".into(),
        ));
    }
    Ok(())
}

/// Bin of `v` among `edges` (half-open, last bin closed); `None` outside.
pub fn bin_of(v: f64, edges: &[f64]) -> Option<usize> {
    let n = edges.len().checked_sub(1)?;
    if n == 0 || !(v >= edges[0] && v <= edges[n]) {
        return None;
    }
    Some(
        edges
            .partition_point(|&e| e <= v)
            .saturating_sub(1)
            .min(n - 1),
    )
}

/// Counts with out-of-range values clamped into the end bins.
pub fn histogram(values: &[f64], edges: &[f64]) -> Result<Histogram, EvalError> {
    validate_edges(edges)?;
    let n = edges.len() - 1;
    let mut counts = vec![0; n];
    for &v in values {
        let b = if v < edges[0] {
            0
        } else if v > edges[n] {
            n - 1
        } else {
            bin_of(v, edges).unwrap_or(n - 1)
        };
        counts[b] += 1;
    }
    Ok(Histogram {
        edges: edges.to_vec(),
        counts,
    })
}

pub fn aggregate(records: &[UtteranceRecord]) -> Aggregates {
    let n = records.len();
    let mean = |f: fn(&UtteranceRecord) -> f64| {
        if n == 0 {
            0.0
        } else {
            records.iter().map(f).sum::<f64>() / n as f64
        }
    };
    let correct = records.iter().filter(|r| r.correct).count();
    Aggregates {
        count: n,
        mean_si_sdri: mean(|r| r.si_sdri),
        mean_sdri: mean(|r| r.sdri),
        accuracy: if n == 0 {
            0.0
        } else {
            100.0 * correct as f64 / n as f64
        },
    }
}

pub fn build_report(
    mode: EvalMode,
    seed: u64,
    records: Vec<UtteranceRecord>,
) -> Result<EvalReport, EvalError> {
    let values: Vec<f64> = records.iter().map(|r| r.si_sdri).collect();
    Ok(EvalReport {
        schema_version: SCHEMA_VERSION,
        mode,
        seed,
        aggregates: aggregate(&records),
        histogram: histogram(&values, &default_histogram_edges())?,
        records,
        pesqi: None,
        stoii: None,
    })
}

/// Score one estimate of `ex`'s target.
pub fn score(
    ex: &MixtureExample,
    est: &[f32],
    stream: Option<usize>,
) -> Result<UtteranceRecord, EvalError> {
    let wrap = |e: EvalError| EvalError::Example {
        id: ex.id.clone(),
        msg: e.to_string(),
    };
    let (s, x) = (ex.target.samples(), ex.mixture.samples());
    let interf: Vec<Vec<f32>> = (0..ex.n_interferers())
        .map(|i| ex.scaled_interferer(i))
        .collect();
    let refs: Vec<&[f32]> = interf.iter().map(|v| v.as_slice()).collect();
    let si = si_sdr(est, s).map_err(wrap)?;
    let sd = sdr(est, s).map_err(wrap)?;
    let interferer_sdr = ex
        .requested_sdrs
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let interferer_sdr = if interferer_sdr.is_finite() {
        interferer_sdr
    } else {
        0.0
    };
    Ok(UtteranceRecord {
        id: ex.id.clone(),
        si_sdr: si,
        si_sdri: si - si_sdr(x, s).map_err(wrap)?,
        sdr: sd,
        sdri: sd - sdr(x, s).map_err(wrap)?,
        correct: extraction_correct(est, s, &refs).map_err(wrap)?,
        interferer_sdr,
        interferer_sdr_bin: bin_of(interferer_sdr, &default_sdr_edges()),
        stream,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_si_sdri: Option<f64>,
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curves {
    pub schema_version: u32,
    pub mode: EvalMode,
    pub interference: Vec<CurvePoint>,
    pub histogram: Histogram,
}

/// Per-bin mean SI-SDRi and accuracy against interference SDR, plus the
/// SI-SDRi histogram. Empty bins carry `None`.
pub fn report_curves(report: &EvalReport, sdr_edges: &[f64]) -> Result<Curves, EvalError> {
    validate_edges(sdr_edges)?;
    let mut sums = vec![(0usize, 0.0f64, 0usize); sdr_edges.len() - 1];
    for r in &report.records {
        if let Some(b) = bin_of(r.interferer_sdr, sdr_edges) {
            sums[b].0 += 1;
            sums[b].1 += r.si_sdri;
            sums[b].2 += r.correct as usize;
        }
    }
    let interference = sums
        .iter()
        .enumerate()
        .map(|(i, &(n, s, c))| CurvePoint {
            lo: sdr_edges[i],
            hi: sdr_edges[i + 1],
            count: n,
            mean_si_sdri: (n > 0).then(|| s / n as f64),
            accuracy: (n > 0).then(|| 100.0 * c as f64 / n as f64),
        })
        .collect();
    let values: Vec<f64> = report.records.iter().map(|r| r.si_sdri).collect();
    Ok(Curves {
        schema_version: SCHEMA_VERSION,
        mode: report.mode,
        interference,
        histogram: histogram(&values, &report.histogram.edges)?,
    })
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), EvalError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_report(path: &Path) -> Result<EvalReport, EvalError> {
    let r: EvalReport = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if r.schema_version != SCHEMA_VERSION {
        return Err(EvalError::Report(format!(
            "unsupported report schema {}",
            r.schema_version
        )));
    }
    Ok(r)
}

pub fn write_records_csv(records: &[UtteranceRecord], path: &Path) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

// ---- extraction strategies ------------------------------------------------------

/// An estimate of the target plus, for two-stage systems, the chosen stream.
pub type Extraction = (Vec<f32>, Option<usize>);

pub trait Extractor: Sync {
    fn extract(&self, ex: &MixtureExample, index: usize) -> Result<Extraction, EvalError>;
}

fn model_err(ex: &MixtureExample, e: impl std::fmt::Display) -> EvalError {
    EvalError::Example {
        id: ex.id.clone(),
        msg: e.to_string(),
    }
}

/// Returns the mixture unchanged.
pub struct MixtureExtractor;

impl Extractor for MixtureExtractor {
    fn extract(&self, ex: &MixtureExample, _: usize) -> Result<Extraction, EvalError> {
        Ok((ex.mixture.samples().to_vec(), None))
    }
}

pub struct TpeExtractor<'a> {
    pub net: &'a TpeNet,
    pub store: &'a ParamStore<f32>,
    pub text: StubTextProvider,
}

impl Extractor for TpeExtractor<'_> {
    fn extract(&self, ex: &MixtureExample, _: usize) -> Result<Extraction, EvalError> {
        let t = self
            .text
            .embed_text(&ex.prompt)
            .map_err(|e| model_err(ex, e))?;
        let y = run_tpe(self.net, self.store, &[ex.mixture.samples()], &[&t.vector])
            .map_err(|e| model_err(ex, e))?;
        Ok((y.into_iter().next().expect("one output"), None))
    }
}

/// Produces candidate streams for a mixture.
pub trait StreamSource: Sync {
    fn streams(&self, ex: &MixtureExample, index: usize) -> Result<Vec<Vec<f32>>, EvalError>;
}

pub struct ModelSeparator<'a> {
    pub net: &'a SepNet,
    pub store: &'a ParamStore<f32>,
}

impl StreamSource for ModelSeparator<'_> {
    fn streams(&self, ex: &MixtureExample, _: usize) -> Result<Vec<Vec<f32>>, EvalError> {
        run_separator(self.net, self.store, ex.mixture.samples()).map_err(|e| model_err(ex, e))
    }
}

/// Perfect separation: the clean sources in a seeded random order.
pub struct OracleSeparator {
    pub seed: u64,
}

impl StreamSource for OracleSeparator {
    fn streams(&self, ex: &MixtureExample, index: usize) -> Result<Vec<Vec<f32>>, EvalError> {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut s = vec![ex.target.samples().to_vec()];
        s.extend((0..ex.n_interferers()).map(|i| ex.scaled_interferer(i)));
        s.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(mix(
            self.seed,
            index as u64,
        )));
        Ok(s)
    }
}

pub enum Selector<'a> {
    /// Stream assigned to the target by the best permutation against the references.
    Pit,
    /// Uniform choice seeded per example.
    Random { seed: u64 },
    Tsr {
        net: &'a TsrNet,
        store: &'a ParamStore<f32>,
        text: StubTextProvider,
        audio: StubAudioProvider,
    },
}

pub struct TwoStage<'a, S: StreamSource> {
    pub source: S,
    pub selector: Selector<'a>,
}

impl<'a, S: StreamSource> TwoStage<'a, S> {
    pub fn with_tsr(
        source: S,
        net: &'a TsrNet,
        store: &'a ParamStore<f32>,
        embed: &EmbedConfig,
        sr: u32,
    ) -> Self {
        Self {
            source,
            selector: Selector::Tsr {
                net,
                store,
                text: embed.text(),
                audio: embed.audio(sr),
            },
        }
    }
}

impl<S: StreamSource> Extractor for TwoStage<'_, S> {
    fn extract(&self, ex: &MixtureExample, index: usize) -> Result<Extraction, EvalError> {
        let mut streams = self.source.streams(ex, index)?;
        let pick = match &self.selector {
            Selector::Pit => {
                let mut refs = vec![ex.target.samples().to_vec()];
                refs.extend((0..ex.n_interferers()).map(|i| ex.scaled_interferer(i)));
                if refs.len() != streams.len() {
                    return Err(model_err(
                        ex,
                        format!("{} streams for {} sources", streams.len(), refs.len()),
                    ));
                }
                let scores = streams
                    .iter()
                    .map(|e| {
                        refs.iter()
                            .map(|r| si_sdr(e, r))
                            .collect::<Result<Vec<_>, _>>()
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let (perm, _) = best_permutation(&scores).map_err(|e| model_err(ex, e))?;
                perm.iter()
                    .position(|&r| r == 0)
                    .expect("permutation covers the target")
            }
            Selector::Random { seed } => RandomAssociation::new(mix(*seed, index as u64))
                .choose(streams.len())
                .map_err(|e| model_err(ex, e))?,
            Selector::Tsr {
                net,
                store,
                text,
                audio,
            } => {
                let prompt = text
                    .embed_text(&ex.prompt)
                    .map_err(|e| model_err(ex, e))?
                    .sequence();
                select_stream(net, store, &prompt, &streams, audio)
                    .map_err(|e| model_err(ex, e))?
                    .0
            }
        };
        Ok((streams.swap_remove(pick), Some(pick)))
    }
}

/// Score every example; records stay in input order.
pub fn evaluate(
    examples: &[MixtureExample],
    extractor: &dyn Extractor,
    mode: EvalMode,
    seed: u64,
    workers: usize,
) -> Result<EvalReport, EvalError> {
    let records = parallel_map(examples.len(), workers, |i| {
        let (est, stream) = extractor.extract(&examples[i], i)?;
        score(&examples[i], &est, stream)
    })?;
    build_report(mode, seed, records)
}
