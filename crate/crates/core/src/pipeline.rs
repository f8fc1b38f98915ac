//! Inference with trained models on raw waveforms.

use crate::diff::{DiffError, Graph, ParamStore, Tensor};
use crate::embed::{EmbedError, StubAudioProvider};
use crate::nets::tsr::{argmax_first, score_candidates};
use crate::nets::{SepNet, TpeNet, TsrNet};

/// Extract the prompted speaker from each mixture (`texts` are pooled
/// prompt vectors). All mixtures must share one length.
pub fn run_tpe(
    net: &TpeNet,
    store: &ParamStore<f32>,
    mixtures: &[&[f32]],
    texts: &[&[f32]],
) -> Result<Vec<Vec<f32>>, DiffError> {
    let n = mixtures.len();
    if n == 0 || texts.len() != n {
        return Err(DiffError::Shape(format!(
            "{n} mixtures with {} prompts",
            texts.len()
        )));
    }
    let len = mixtures[0].len();
    let mut g = Graph::inference();
    let x = g.input(Tensor::new(&[n, len], mixtures.concat())?);
    let t = g.input(Tensor::new(&[n, texts[0].len()], texts.concat())?);
    let y = net.forward(&mut g, store, x, t)?;
    Ok(g.value(y).data().chunks(len).map(|c| c.to_vec()).collect())
}

/// Split one mixture into the separator's `I` streams.
pub fn run_separator(
    net: &SepNet,
    store: &ParamStore<f32>,
    mixture: &[f32],
) -> Result<Vec<Vec<f32>>, DiffError> {
    let len = mixture.len();
    let mut g = Graph::inference();
    let x = g.input(Tensor::new(&[1, len], mixture.to_vec())?);
    let y = net.forward(&mut g, store, x)?;
    Ok(g.value(y).data().chunks(len).map(|c| c.to_vec()).collect())
}

#[derive(Debug, thiserror::Error)]
pub enum SelectError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("no candidate streams")]
    Empty,
}

/// Pick the stream that best matches the prompt token sequence. Ties go to
/// the lowest index.
pub fn select_stream(
    net: &TsrNet,
    store: &ParamStore<f32>,
    prompt: &[Vec<f32>],
    streams: &[Vec<f32>],
    audio: &StubAudioProvider,
) -> Result<(usize, Vec<f64>), SelectError> {
    if streams.is_empty() {
        return Err(SelectError::Empty);
    }
    let cands = streams
        .iter()
        .map(|s| audio.embed_samples(s).map(|e| e.sequence()))
        .collect::<Result<Vec<_>, _>>()?;
    let p = score_candidates(net, store, prompt, &cands)?;
    let idx = argmax_first(&p).ok_or(SelectError::Empty)?;
    if p.iter().filter(|&&v| v == p[idx]).count() > 1 {
        log::debug!("tied match probabilities; keeping stream {idx}");
    }
    Ok((idx, p))
}
