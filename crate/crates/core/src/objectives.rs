//! Training objectives for the three models over in-memory corpus splits.

use crate::corpus::MixtureExample;
use crate::diff::{DiffError, Graph, ParamStore, Tensor, Var};
use crate::embed::{EmbedConfig, EmbedError};
use crate::nets::tsr::{embed_example, make_training_group, stack_sequences, EmbeddedExample};
use crate::nets::{pit_loss, tpe_loss, tsr_loss, SepNet, TpeNet, TsrNet};
use crate::seed::mix;
use crate::train::{Objective, TrainError};

const EVAL_BATCH: usize = 20;
const VALID_STREAM: u64 = 0x7a11d;

impl From<EmbedError> for TrainError {
    fn from(e: EmbedError) -> Self {
        TrainError::Data(e.to_string())
    }
}

fn equal_length(examples: &[MixtureExample]) -> Result<usize, TrainError> {
    let len = examples
        .first()
        .map(|e| e.mixture.len())
        .ok_or_else(|| TrainError::Data("empty split".into()))?;
    if examples.iter().any(|e| e.mixture.len() != len) {
        return Err(TrainError::Data(
            "examples in a split must share one length".into(),
        ));
    }
    Ok(len)
}

fn stack(rows: &[&[f32]], shape: &[usize]) -> Result<Tensor<f32>, DiffError> {
    let mut data = Vec::with_capacity(shape.iter().product());
    for r in rows {
        data.extend_from_slice(r);
    }
    Tensor::new(shape, data)
}

fn pick<'a>(v: &'a [Vec<f32>], idx: &[usize]) -> Vec<&'a [f32]> {
    idx.iter().map(|&i| v[i].as_slice()).collect()
}

/// Mixtures, clean targets and pooled prompt vectors.
#[derive(Clone, Debug)]
pub struct TpeData {
    pub len: usize,
    pub mixtures: Vec<Vec<f32>>,
    pub targets: Vec<Vec<f32>>,
    pub texts: Vec<Vec<f32>>,
}

impl TpeData {
    pub fn new(examples: &[MixtureExample], embed: &EmbedConfig) -> Result<Self, TrainError> {
        let len = equal_length(examples)?;
        let text = embed.text();
        Ok(Self {
            len,
            mixtures: examples
                .iter()
                .map(|e| e.mixture.samples().to_vec())
                .collect(),
            targets: examples
                .iter()
                .map(|e| e.target.samples().to_vec())
                .collect(),
            texts: examples
                .iter()
                .map(|e| text.embed_text(&e.prompt).map(|t| t.vector))
                .collect::<Result<_, _>>()?,
        })
    }

    fn inputs(&self, g: &mut Graph<f32>, idx: &[usize]) -> Result<(Var, Var, Var), TrainError> {
        let n = idx.len();
        let d = self.texts[0].len();
        let x = g.input(stack(&pick(&self.mixtures, idx), &[n, self.len])?);
        let t = g.input(stack(&pick(&self.texts, idx), &[n, d])?);
        let s = g.input(stack(&pick(&self.targets, idx), &[n, self.len])?);
        Ok((x, t, s))
    }
}

pub struct TpeObjective<'a> {
    pub net: &'a TpeNet,
    pub train: TpeData,
    pub valid: TpeData,
}

impl TpeObjective<'_> {
    fn loss(
        &self,
        g: &mut Graph<f32>,
        s: &ParamStore<f32>,
        data: &TpeData,
        idx: &[usize],
    ) -> Result<Var, TrainError> {
        let (x, t, r) = data.inputs(g, idx)?;
        let y = self.net.forward(g, s, x, t)?;
        Ok(tpe_loss(g, y, r)?)
    }
}

fn batched_mean(
    n: usize,
    mut f: impl FnMut(&[usize]) -> Result<f64, TrainError>,
) -> Result<f64, TrainError> {
    let idx: Vec<usize> = (0..n).collect();
    let mut total = 0.0;
    for c in idx.chunks(EVAL_BATCH) {
        total += f(c)? * c.len() as f64;
    }
    Ok(total / n.max(1) as f64)
}

impl Objective for TpeObjective<'_> {
    fn train_len(&self) -> usize {
        self.train.mixtures.len()
    }

    fn batch_loss(
        &self,
        g: &mut Graph<f32>,
        s: &ParamStore<f32>,
        idx: &[usize],
        _: usize,
    ) -> Result<Var, TrainError> {
        self.loss(g, s, &self.train, idx)
    }

    fn validation_loss(&self, s: &ParamStore<f32>) -> Result<f64, TrainError> {
        batched_mean(self.valid.mixtures.len(), |c| {
            let mut g = Graph::inference();
            let l = self.loss(&mut g, s, &self.valid, c)?;
            Ok(g.value(l).item() as f64)
        })
    }
}

/// Mixtures and their `I` reference sources (target first, then the
/// scaled interferers).
#[derive(Clone, Debug)]
pub struct SepData {
    pub len: usize,
    pub streams: usize,
    pub mixtures: Vec<Vec<f32>>,
    pub sources: Vec<Vec<f32>>,
}

impl SepData {
    pub fn new(examples: &[MixtureExample], streams: usize) -> Result<Self, TrainError> {
        let len = equal_length(examples)?;
        let mut sources = Vec::with_capacity(examples.len());
        for e in examples {
            if e.n_interferers() + 1 != streams {
                return Err(TrainError::Data(format!(
                    "example {} has {} sources, the separator emits {streams}",
                    e.id,
                    e.n_interferers() + 1
                )));
            }
            let mut row = e.target.samples().to_vec();
            for i in 0..e.n_interferers() {
                row.extend(e.scaled_interferer(i));
            }
            sources.push(row);
        }
        Ok(Self {
            len,
            streams,
            mixtures: examples
                .iter()
                .map(|e| e.mixture.samples().to_vec())
                .collect(),
            sources,
        })
    }
}

pub struct SepObjective<'a> {
    pub net: &'a SepNet,
    pub train: SepData,
    pub valid: SepData,
}

impl SepObjective<'_> {
    fn loss(
        &self,
        g: &mut Graph<f32>,
        s: &ParamStore<f32>,
        data: &SepData,
        idx: &[usize],
    ) -> Result<Var, TrainError> {
        let n = idx.len();
        let x = g.input(stack(&pick(&data.mixtures, idx), &[n, data.len])?);
        let r = g.input(stack(
            &pick(&data.sources, idx),
            &[n, data.streams, data.len],
        )?);
        let y = self.net.forward(g, s, x)?;
        Ok(pit_loss(g, y, r)?.0)
    }
}

impl Objective for SepObjective<'_> {
    fn train_len(&self) -> usize {
        self.train.mixtures.len()
    }

    fn batch_loss(
        &self,
        g: &mut Graph<f32>,
        s: &ParamStore<f32>,
        idx: &[usize],
        _: usize,
    ) -> Result<Var, TrainError> {
        self.loss(g, s, &self.train, idx)
    }

    fn validation_loss(&self, s: &ParamStore<f32>) -> Result<f64, TrainError> {
        batched_mean(self.valid.mixtures.len(), |c| {
            let mut g = Graph::inference();
            let l = self.loss(&mut g, s, &self.valid, c)?;
            Ok(g.value(l).item() as f64)
        })
    }
}

pub fn embed_split(
    examples: &[MixtureExample],
    embed: &EmbedConfig,
    sample_rate: u32,
) -> Result<Vec<EmbeddedExample>, TrainError> {
    let (text, audio) = (embed.text(), embed.audio(sample_rate));
    examples
        .iter()
        .map(|e| embed_example(e, &text, &audio).map_err(TrainError::from))
        .collect()
}

pub struct TsrObjective<'a> {
    pub net: &'a TsrNet,
    pub train: Vec<EmbeddedExample>,
    pub valid: Vec<EmbeddedExample>,
    pub k_neg: usize,
    pub seed: u64,
}

impl TsrObjective<'_> {
    fn loss(
        &self,
        g: &mut Graph<f32>,
        s: &ParamStore<f32>,
        data: &[EmbeddedExample],
        idx: &[usize],
        stream: u64,
    ) -> Result<Var, TrainError> {
        let groups = idx
            .iter()
            .map(|&i| {
                make_training_group(data, i, self.k_neg, mix(mix(self.seed, stream), i as u64))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let j = groups[0].candidates.len();
        if groups.iter().any(|gr| gr.candidates.len() != j) {
            return Err(TrainError::Data(
                "candidate counts differ within a batch".into(),
            ));
        }
        let prompts: Vec<&Vec<Vec<f32>>> = groups.iter().map(|gr| &gr.prompt).collect();
        let cands: Vec<&Vec<Vec<f32>>> =
            groups.iter().flat_map(|gr| gr.candidates.iter()).collect();
        let labels: Vec<f32> = groups
            .iter()
            .flat_map(|gr| gr.labels.iter().copied())
            .collect();
        let t = g.input(stack_sequences(&prompts)?);
        let c = g.input(stack_sequences(&cands)?);
        let out = self.net.match_logits(g, s, t, c)?;
        Ok(tsr_loss(g, out.probs, &labels)?)
    }
}

impl Objective for TsrObjective<'_> {
    fn train_len(&self) -> usize {
        self.train.len()
    }

    fn batch_loss(
        &self,
        g: &mut Graph<f32>,
        s: &ParamStore<f32>,
        idx: &[usize],
        epoch: usize,
    ) -> Result<Var, TrainError> {
        self.loss(g, s, &self.train, idx, epoch as u64)
    }

    fn validation_loss(&self, s: &ParamStore<f32>) -> Result<f64, TrainError> {
        batched_mean(self.valid.len(), |c| {
            let mut g = Graph::inference();
            let l = self.loss(&mut g, s, &self.valid, c, VALID_STREAM)?;
            Ok(g.value(l).item() as f64)
        })
    }
}
