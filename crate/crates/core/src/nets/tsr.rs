//! Prompt-to-speech matcher: per-modality adapters, residual cross-attention
//! and candidate-wise softmax scoring.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::Linear;
use crate::corpus::MixtureExample;
use crate::diff::{DiffError, Graph, InitScheme, ParamStore, Scalar, Tensor, Var};
use crate::embed::DEFAULT_DIM;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TsrConfig {
    /// Embedding width in and out of the adapters; also the attention width.
    pub dim: usize,
    /// Adapter hidden width.
    pub hidden: usize,
    pub heads: usize,
    /// Cross-example negatives per prompt during training.
    pub k_neg: usize,
}

impl Default for TsrConfig {
    fn default() -> Self {
        Self {
            dim: DEFAULT_DIM,
            hidden: 2048,
            heads: 1,
            k_neg: 2,
        }
    }
}

impl TsrConfig {
    pub fn desk() -> Self {
        Self {
            hidden: 512,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DiffError> {
        if self.dim == 0 || self.hidden == 0 {
            return Err(DiffError::Shape(format!(
                "zero-sized matcher dimension in {self:?}"
            )));
        }
        if self.heads != 1 {
            return Err(DiffError::Shape(format!(
                "only single-head attention is supported, got {}",
                self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Adapter {
    up: Linear,
    down: Linear,
}

impl Adapter {
    fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        hidden: usize,
    ) -> Result<Self, DiffError> {
        Ok(Self {
            up: Linear::new(store, &format!("{name}.up"), dim, hidden, true)?,
            down: Linear::new(store, &format!("{name}.down"), hidden, dim, true)?,
        })
    }

    fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        x: Var,
    ) -> Result<Var, DiffError> {
        let h = self.up.forward(g, s, x)?;
        let h = g.relu(h)?;
        self.down.forward(g, s, h)
    }
}

#[derive(Clone, Debug)]
struct Qkv {
    q: Linear,
    k: Linear,
    v: Linear,
}

impl Qkv {
    fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
    ) -> Result<Self, DiffError> {
        let v = store.add(&format!("{name}.v.w"), &[dim, dim], InitScheme::Zeros)?;
        Ok(Self {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, false)?,
            k: Linear::new(store, &format!("{name}.k"), dim, dim, false)?,
            v: Linear { w: v, b: None },
        })
    }
}

/// Matcher outputs for a batch of prompt groups.
#[derive(Clone, Copy, Debug)]
pub struct MatchOutput {
    /// `[E, J]` raw scores.
    pub logits: Var,
    /// `[E, J]` candidate-wise softmax.
    pub probs: Var,
}

#[derive(Clone, Debug)]
pub struct TsrNet {
    pub cfg: TsrConfig,
    text_adapter: Adapter,
    audio_adapter: Adapter,
    text_attn: Qkv,
    audio_attn: Qkv,
}

impl TsrNet {
    pub fn build<T: Scalar>(cfg: &TsrConfig, store: &mut ParamStore<T>) -> Result<Self, DiffError> {
        cfg.validate()?;
        Ok(Self {
            cfg: cfg.clone(),
            text_adapter: Adapter::new(store, "adapt_text", cfg.dim, cfg.hidden)?,
            audio_adapter: Adapter::new(store, "adapt_audio", cfg.dim, cfg.hidden)?,
            text_attn: Qkv::new(store, "attn_text", cfg.dim)?,
            audio_attn: Qkv::new(store, "attn_audio", cfg.dim)?,
        })
    }

    /// Adapt a sequence batch `[m, len, dim]`.
    pub fn adapt_text<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        x: Var,
    ) -> Result<Var, DiffError> {
        self.check_dim(g, x)?;
        self.text_adapter.forward(g, s, x)
    }

    pub fn adapt_audio<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        x: Var,
    ) -> Result<Var, DiffError> {
        self.check_dim(g, x)?;
        self.audio_adapter.forward(g, s, x)
    }

    fn check_dim<T: Scalar>(&self, g: &Graph<T>, x: Var) -> Result<(), DiffError> {
        let sh = g.shape(x);
        if sh.len() != 3 || sh[2] != self.cfg.dim || sh[1] == 0 {
            return Err(DiffError::Shape(format!(
                "matcher expects non-empty [m, len, {}] sequences, got {:?}",
                self.cfg.dim, sh
            )));
        }
        Ok(())
    }

    /// Pooled `(M_t, M_s)`, each `[m, dim]`, for adapted `xt [m, n_t, dim]`
    /// and `xs [m, n_s, dim]`.
    pub fn cross_attend<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        xt: Var,
        xs: Var,
    ) -> Result<(Var, Var), DiffError> {
        let (at, as_) = (&self.text_attn, &self.audio_attn);
        let qt = at.q.forward(g, s, xt)?;
        let kt = at.k.forward(g, s, xt)?;
        let vt = at.v.forward(g, s, xt)?;
        let qs = as_.q.forward(g, s, xs)?;
        let ks = as_.k.forward(g, s, xs)?;
        let vs = as_.v.forward(g, s, xs)?;
        let t2s = g.scaled_dot_attention(qt, ks, vs)?;
        let s2t = g.scaled_dot_attention(qs, kt, vt)?;
        let t2s = g.mean_axis(t2s, 1)?;
        let s2t = g.mean_axis(s2t, 1)?;
        let mo = g.add(t2s, s2t)?;
        let pt = g.mean_axis(xt, 1)?;
        let ps = g.mean_axis(xs, 1)?;
        Ok((g.add(pt, mo)?, g.add(ps, mo)?))
    }

    /// Score `J` candidates against each of `E` prompts.
    ///
    /// `text [E, n_t, dim]`, `cands [E·J, n_s, dim]` grouped by prompt.
    pub fn match_logits<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        text: Var,
        cands: Var,
    ) -> Result<MatchOutput, DiffError> {
        let (ts, cs) = (g.shape(text).to_vec(), g.shape(cands).to_vec());
        if ts.is_empty() || cs.is_empty() || ts[0] == 0 || cs[0] % ts[0] != 0 || cs[0] == 0 {
            return Err(DiffError::Shape(format!(
                "match: text {ts:?} vs candidates {cs:?}"
            )));
        }
        let (e, j) = (ts[0], cs[0] / ts[0]);
        let xt = self.adapt_text(g, s, text)?;
        let xs = self.adapt_audio(g, s, cands)?;
        let xt = if j == 1 {
            xt
        } else {
            let x4 = g.reshape(xt, &[e, 1, ts[1], self.cfg.dim])?;
            let rep = g.concat(&vec![x4; j], 1)?;
            g.reshape(rep, &[e * j, ts[1], self.cfg.dim])?
        };
        let (mt, ms) = self.cross_attend(g, s, xt, xs)?;
        let prod = g.mul(mt, ms)?;
        let dot = g.mean_axis(prod, 1)?;
        let dot = g.scale(dot, self.cfg.dim as f64)?;
        let logits = g.reshape(dot, &[e, j])?;
        let probs = g.softmax(logits)?;
        Ok(MatchOutput { logits, probs })
    }
}

/// Mean binary cross-entropy of candidate probabilities against labels.
pub fn tsr_loss<T: Scalar>(g: &mut Graph<T>, probs: Var, labels: &[T]) -> Result<Var, DiffError> {
    let n = g.value(probs).len();
    let flat = g.reshape(probs, &[n])?;
    g.bce_mean(flat, labels)
}

/// One prompt with its candidate clips.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchGroup {
    pub prompt: Vec<Vec<f32>>,
    pub candidates: Vec<Vec<Vec<f32>>>,
    pub labels: Vec<f32>,
}

impl MatchGroup {
    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1.0).count()
    }
}

/// Prompt and clean-source embeddings for one corpus example.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddedExample {
    pub prompt: Vec<Vec<f32>>,
    pub target: Vec<Vec<f32>>,
    pub interferers: Vec<Vec<Vec<f32>>>,
    pub target_tokens: Vec<String>,
}

/// Contrastive group for `examples[index]`: the clean target (label 1), its
/// clean interferers and `k_neg` targets of other examples that share no
/// token with it (label 0). The positive comes first.
pub fn make_training_group(
    examples: &[EmbeddedExample],
    index: usize,
    k_neg: usize,
    seed: u64,
) -> Result<MatchGroup, DiffError> {
    let ex = examples
        .get(index)
        .ok_or_else(|| DiffError::Shape(format!("example {index} of {}", examples.len())))?;
    let mut candidates = vec![ex.target.clone()];
    candidates.extend(ex.interferers.iter().cloned());
    if k_neg > 0 {
        let pool: Vec<usize> = (0..examples.len())
            .filter(|&o| {
                o != index
                    && !examples[o]
                        .target_tokens
                        .iter()
                        .any(|t| ex.target_tokens.contains(t))
            })
            .collect();
        if pool.is_empty() {
            return Err(DiffError::Shape("empty negative pool".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..k_neg {
            let &o = pool.choose(&mut rng).expect("non-empty pool");
            candidates.push(examples[o].target.clone());
        }
    }
    if candidates.len() < 2 && k_neg == 0 && ex.interferers.is_empty() {
        return Err(DiffError::Shape(
            "example has no interferer and no negatives were requested".into(),
        ));
    }
    let mut labels = vec![0.0; candidates.len()];
    labels[0] = 1.0;
    Ok(MatchGroup {
        prompt: ex.prompt.clone(),
        candidates,
        labels,
    })
}

/// Embed prompt and clean sources of a corpus example.
pub fn embed_example(
    ex: &MixtureExample,
    text: &crate::embed::StubTextProvider,
    audio: &crate::embed::StubAudioProvider,
) -> Result<EmbeddedExample, crate::embed::EmbedError> {
    Ok(EmbeddedExample {
        prompt: text.embed_text(&ex.prompt)?.sequence(),
        target: audio.embed_audio(&ex.target)?.sequence(),
        interferers: ex
            .interferers
            .iter()
            .map(|v| audio.embed_audio(v).map(|e| e.sequence()))
            .collect::<Result<_, _>>()?,
        target_tokens: ex.target_tokens.clone(),
    })
}

/// Stack equal-length sequences into a `[m, len, dim]` tensor.
pub fn stack_sequences<T: Scalar>(seqs: &[&Vec<Vec<f32>>]) -> Result<Tensor<T>, DiffError> {
    let first = seqs
        .first()
        .ok_or_else(|| DiffError::Shape("no sequences to stack".into()))?;
    let (len, dim) = (first.len(), first.first().map_or(0, |v| v.len()));
    if len == 0 || dim == 0 {
        return Err(DiffError::Shape("empty sequence".into()));
    }
    let mut data = Vec::with_capacity(seqs.len() * len * dim);
    for s in seqs {
        if s.len() != len || s.iter().any(|v| v.len() != dim) {
            return Err(DiffError::Shape(format!(
                "ragged sequences: {}×? vs {len}×{dim}",
                s.len()
            )));
        }
        for v in s.iter() {
            data.extend(v.iter().map(|&x| T::from_f64c(x as f64)));
        }
    }
    Tensor::new(&[seqs.len(), len, dim], data)
}

/// Probabilities for one prompt against candidates of any lengths.
pub fn score_candidates(
    net: &TsrNet,
    store: &ParamStore<f32>,
    prompt: &[Vec<f32>],
    candidates: &[Vec<Vec<f32>>],
) -> Result<Vec<f64>, DiffError> {
    if candidates.is_empty() {
        return Err(DiffError::Shape("no candidates".into()));
    }
    let prompt = prompt.to_vec();
    let mut logits = Vec::with_capacity(candidates.len());
    for c in candidates {
        let mut g = Graph::<f32>::inference();
        let t = g.input(stack_sequences(&[&prompt])?);
        let a = g.input(stack_sequences(&[c])?);
        let out = net.match_logits(&mut g, store, t, a)?;
        logits.push(g.value(out.logits).data()[0] as f64);
    }
    Ok(softmax(&logits))
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Index of the most probable candidate; ties go to the lowest index.
pub fn argmax_first(p: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in p.iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}
