use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use textcue::audio::{read_wav, write_wav, AudioError, AudioSignal, WavFormat};
use textcue::config::{Config, ConfigError, CONFIG_ENV};
use textcue::corpus::{generate_corpus, load_split, CorpusError};
use textcue::diff::checkpoint::Checkpoint;
use textcue::diff::DiffError;
use textcue::embed::EmbedError;
use textcue::eval::{
    evaluate, read_report, report_curves, write_json, write_records_csv, EvalError, EvalMode,
    Extractor, ModelSeparator, OracleSeparator, Selector, TpeExtractor, TwoStage,
};
use textcue::models::{LoadedModel, ModelCard, ModelSpec, Net};
use textcue::objectives::{
    embed_split, SepData, SepObjective, TpeData, TpeObjective, TsrObjective,
};
use textcue::pipeline::{run_separator, run_tpe, select_stream, SelectError};
use textcue::seed::mix;
use textcue::train::{Objective, TrainConfig, TrainError, Trainer};

#[derive(Parser)]
#[command(
    name = "textcue",
    version,
    about = "Text-cued target speaker extraction toolkit"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone, Debug)]
struct Common {
    /// TOML configuration file.
    #[arg(long, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Root seed for every random choice.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dotted configuration override, e.g. `train.tpe.lr=1e-3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Threads for data-parallel sections.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Corpus directory written by `generate-corpus`.
    #[arg(long)]
    corpus: PathBuf,
    /// Output directory for checkpoints and the training log.
    #[arg(long)]
    out: PathBuf,
    /// Continue from a `last.ckpt` written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Override the epoch cap from the configuration.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Render the synthetic paired corpus to WAV files plus a manifest.
    GenerateCorpus {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the text-conditioned extraction network.
    TrainTpe(TrainArgs),
    /// Train the blind separator with permutation-invariant loss.
    TrainDprnn(TrainArgs),
    /// Train the prompt-to-speech matcher.
    TrainTsr(TrainArgs),
    /// Score a corpus split and write a report.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// tpe, dprnn_tsr, pit or random.
        #[arg(long)]
        mode: EvalMode,
        #[arg(long)]
        tpe: Option<PathBuf>,
        /// Separator checkpoint; `random` without one picks among the clean sources.
        #[arg(long)]
        dprnn: Option<PathBuf>,
        #[arg(long)]
        tsr: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract the prompted speaker from one mixture.
    Extract {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mixture: PathBuf,
        #[arg(long)]
        prompt: String,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output WAV; a JSON sidecar is written next to it.
        #[arg(long)]
        out: PathBuf,
        /// Clean reference for scoring the estimate.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Split one mixture into the separator's streams.
    Separate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mixture: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score every WAV in a directory against a prompt; prints JSON.
    Match {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        prompt: String,
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Turn an evaluation report into histogram and curve data.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Interference-SDR bin edges, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        sdr_edges: Option<Vec<f64>>,
    },
}

#[derive(Debug)]
enum Failure {
    Data(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Data(_) => 3,
            Failure::Numeric(_) => 4,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let (kind, msg) = match self {
            Failure::Data(m) => ("data", m),
            Failure::Numeric(m) => ("numeric", m),
        };
        write!(
            f,
            "error kind={kind} msg={}",
            serde_json::Value::String(msg.replace('\n', " "))
        )
    }
}

macro_rules! data_errors {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure::Data(e.to_string())
            }
        }
    )*};
}
data_errors!(
    ConfigError,
    CorpusError,
    AudioError,
    EmbedError,
    EvalError,
    std::io::Error,
    serde_json::Error
);

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        if e.is_numeric() {
            Failure::Numeric(e.to_string())
        } else {
            Failure::Data(e.to_string())
        }
    }
}

impl From<DiffError> for Failure {
    fn from(e: DiffError) -> Self {
        match e {
            DiffError::NonFinite(_) => Failure::Numeric(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<SelectError> for Failure {
    fn from(e: SelectError) -> Self {
        match e {
            SelectError::Diff(d) => d.into(),
            other => Failure::Data(other.to_string()),
        }
    }
}

fn resolve(c: &Common) -> Result<Config, Failure> {
    let base = match &c.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    Ok(base.with_overrides(&c.set)?)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{f}");
            ExitCode::from(f.code())
        }
    }
}

fn run(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::GenerateCorpus { common, out } => {
            let cfg = resolve(&common)?;
            let summary = generate_corpus(&cfg.corpus, common.seed, &out, common.workers)?;
            cfg.write_resolved(&out)?;
            println!("{}", serde_json::to_string(&summary)?);
            Ok(())
        }
        Cmd::TrainTpe(a) => train(a, Kind::Tpe),
        Cmd::TrainDprnn(a) => train(a, Kind::Dprnn),
        Cmd::TrainTsr(a) => train(a, Kind::Tsr),
        Cmd::Evaluate {
            common,
            corpus,
            split,
            mode,
            tpe,
            dprnn,
            tsr,
            out,
        } => {
            let cfg = resolve(&common)?;
            let examples = load_split(&corpus, &split, common.workers)?;
            let load =
                |p: &Option<PathBuf>, flag: &str, kind: &str| -> Result<LoadedModel, Failure> {
                    let p = p
                        .as_ref()
                        .ok_or_else(|| Failure::Data(format!("mode {mode:?} needs --{flag}")))?;
                    let m = LoadedModel::load(p)?;
                    m.expect_kind(kind)?;
                    Ok(m)
                };
            let report = match mode {
                EvalMode::Tpe => {
                    let m = load(&tpe, "tpe", "tpe")?;
                    let ex = TpeExtractor {
                        net: m.tpe()?,
                        store: &m.store,
                        text: m.card.embed.text(),
                    };
                    evaluate(&examples, &ex, mode, common.seed, common.workers)?
                }
                EvalMode::Pit | EvalMode::Random | EvalMode::DprnnTsr => {
                    let sep = match (&dprnn, mode) {
                        (None, EvalMode::Random) => None,
                        _ => Some(load(&dprnn, "dprnn", "dprnn")?),
                    };
                    let tsr_model = match mode {
                        EvalMode::DprnnTsr => Some(load(&tsr, "tsr", "tsr")?),
                        _ => None,
                    };
                    let selector = match &tsr_model {
                        Some(m) => Selector::Tsr {
                            net: m.tsr()?,
                            store: &m.store,
                            text: m.card.embed.text(),
                            audio: m.card.embed.audio(m.card.sample_rate),
                        },
                        None if mode == EvalMode::Pit => Selector::Pit,
                        None => Selector::Random { seed: common.seed },
                    };
                    match &sep {
                        Some(m) => {
                            let src = ModelSeparator {
                                net: m.sep()?,
                                store: &m.store,
                            };
                            run_eval(
                                &examples,
                                &TwoStage {
                                    source: src,
                                    selector,
                                },
                                mode,
                                &common,
                            )?
                        }
                        None => {
                            let src = OracleSeparator { seed: common.seed };
                            run_eval(
                                &examples,
                                &TwoStage {
                                    source: src,
                                    selector,
                                },
                                mode,
                                &common,
                            )?
                        }
                    }
                }
            };
            std::fs::create_dir_all(&out)?;
            write_json(&report, &out.join("report.json"))?;
            write_records_csv(&report.records, &out.join("records.csv"))?;
            cfg.write_resolved(&out)?;
            println!("{}", serde_json::to_string(&report.aggregates)?);
            Ok(())
        }
        Cmd::Extract {
            common,
            mixture,
            prompt,
            checkpoint,
            out,
            reference,
        } => {
            let _ = resolve(&common)?;
            let m = LoadedModel::load(&checkpoint)?;
            let net = m.tpe()?;
            let x = read_input(&mixture, m.card.sample_rate)?;
            let t = m.card.embed.text().embed_text(&prompt)?;
            let est = run_tpe(net, &m.store, &[x.samples()], &[&t.vector])?.remove(0);
            let est = AudioSignal::new(est, m.card.sample_rate)?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            write_wav(&est, &out, WavFormat::Float32)?;
            let mut side = json!({
                "mixture": mixture,
                "prompt": prompt,
                "checkpoint": checkpoint,
                "samples": est.len(),
                "sample_rate": est.sample_rate(),
            });
            if let Some(r) = reference {
                let r = read_input(&r, m.card.sample_rate)?;
                let si = textcue::eval::si_sdr(est.samples(), r.samples())?;
                let base = textcue::eval::si_sdr(x.samples(), r.samples())?;
                side["reference"] = json!(r.len());
                side["si_sdr"] = json!(si);
                side["si_sdri"] = json!(si - base);
            }
            write_json(&side, &out.with_extension("json"))?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                resolve(&common)?.write_resolved(dir)?;
            }
            Ok(())
        }
        Cmd::Separate {
            common,
            mixture,
            checkpoint,
            out,
        } => {
            let cfg = resolve(&common)?;
            let m = LoadedModel::load(&checkpoint)?;
            let x = read_input(&mixture, m.card.sample_rate)?;
            let streams = run_separator(m.sep()?, &m.store, x.samples())?;
            std::fs::create_dir_all(&out)?;
            for (i, s) in streams.into_iter().enumerate() {
                write_wav(
                    &AudioSignal::new(s, m.card.sample_rate)?,
                    &out.join(format!("stream_{i}.wav")),
                    WavFormat::Float32,
                )?;
            }
            cfg.write_resolved(&out)?;
            Ok(())
        }
        Cmd::Match {
            common,
            prompt,
            dir,
            checkpoint,
        } => {
            let _ = resolve(&common)?;
            let m = LoadedModel::load(&checkpoint)?;
            let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
                .collect();
            files.sort();
            let streams = files
                .iter()
                .map(|p| read_input(p, m.card.sample_rate).map(|s| s.into_samples()))
                .collect::<Result<Vec<_>, _>>()?;
            let text = m.card.embed.text().embed_text(&prompt)?;
            let (idx, p) = select_stream(
                m.tsr()?,
                &m.store,
                &text.sequence(),
                &streams,
                &m.card.embed.audio(m.card.sample_rate),
            )?;
            println!(
                "{}",
                json!({ "index": idx, "file": files[idx], "probabilities": p, "files": files })
            );
            Ok(())
        }
        Cmd::Report {
            common,
            report,
            out,
            sdr_edges,
        } => {
            let cfg = resolve(&common)?;
            let r = read_report(&report)?;
            let edges = sdr_edges.unwrap_or_else(textcue::eval::default_sdr_edges);
            let curves = report_curves(&r, &edges)?;
            std::fs::create_dir_all(&out)?;
            write_json(&curves, &out.join("curves.json"))?;
            write_json(&curves.histogram, &out.join("histogram.json"))?;
            cfg.write_resolved(&out)?;
            Ok(())
        }
    }
}

fn run_eval(
    examples: &[textcue::corpus::MixtureExample],
    ex: &dyn Extractor,
    mode: EvalMode,
    common: &Common,
) -> Result<textcue::eval::EvalReport, Failure> {
    Ok(evaluate(examples, ex, mode, common.seed, common.workers)?)
}

fn read_input(path: &Path, sample_rate: u32) -> Result<AudioSignal, Failure> {
    let s = read_wav(path)?;
    if s.sample_rate() != sample_rate {
        return Err(Failure::Data(format!(
            "{} is {} Hz, the model expects {sample_rate} Hz",
            path.display(),
            s.sample_rate()
        )));
    }
    Ok(s)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Kind {
    Tpe,
    Dprnn,
    Tsr,
}

fn train(a: TrainArgs, kind: Kind) -> Result<(), Failure> {
    let cfg = resolve(&a.common)?;
    let (spec, mut tc, tag) = match kind {
        Kind::Tpe => (ModelSpec::Tpe(cfg.tpe.clone()), cfg.train.tpe.clone(), 1),
        Kind::Dprnn => (
            ModelSpec::Dprnn(cfg.dprnn.clone()),
            cfg.train.dprnn.clone(),
            2,
        ),
        Kind::Tsr => (ModelSpec::Tsr(cfg.tsr.clone()), cfg.train.tsr.clone(), 3),
    };
    if let Some(e) = a.epochs {
        tc.max_epochs = e;
    }
    let train_set = load_split(&a.corpus, "train", a.common.workers)?;
    let valid_set = load_split(&a.corpus, "valid", a.common.workers)?;
    let sample_rate = train_set
        .first()
        .map(|e| e.mixture.sample_rate())
        .unwrap_or(cfg.corpus.sample_rate);
    let card = ModelCard {
        spec,
        embed: cfg.embed.clone(),
        sample_rate,
        init_seed: mix(a.common.seed, tag),
    };
    let (net, store) = card.build()?;
    cfg.write_resolved(&a.out)?;
    let run_seed = mix(a.common.seed, 0x7a1);
    match &net {
        Net::Tpe(n) => {
            let obj = TpeObjective {
                net: n,
                train: TpeData::new(&train_set, &card.embed)?,
                valid: TpeData::new(&valid_set, &card.embed)?,
            };
            fit(&obj, &card, store, tc, run_seed, &a)
        }
        Net::Dprnn(n) => {
            let obj = SepObjective {
                net: n,
                train: SepData::new(&train_set, n.cfg.streams)?,
                valid: SepData::new(&valid_set, n.cfg.streams)?,
            };
            fit(&obj, &card, store, tc, run_seed, &a)
        }
        Net::Tsr(n) => {
            let obj = TsrObjective {
                net: n,
                train: embed_split(&train_set, &card.embed, sample_rate)?,
                valid: embed_split(&valid_set, &card.embed, sample_rate)?,
                k_neg: n.cfg.k_neg,
                seed: run_seed,
            };
            fit(&obj, &card, store, tc, run_seed, &a)
        }
    }
}

fn fit<O: Objective>(
    obj: &O,
    card: &ModelCard,
    store: textcue::diff::ParamStore<f32>,
    tc: TrainConfig,
    seed: u64,
    a: &TrainArgs,
) -> Result<(), Failure> {
    let mut t = Trainer::new(obj, card, store, tc, seed)?.with_output(&a.out);
    if let Some(p) = &a.resume {
        t.resume(&Checkpoint::load(p).map_err(TrainError::from)?)?;
    }
    let log = t.run()?;
    println!(
        "{}",
        serde_json::to_string(&json!({ "epochs": log.len(), "log": log }))?
    );
    Ok(())
}
