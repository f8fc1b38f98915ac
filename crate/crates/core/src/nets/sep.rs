//! Blind multi-stream separator and permutation-invariant scoring.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Linear, Norm, NormKind};
use super::masker::{repeat_streams, CoreConfig, Decoder, Encoder, MaskEstimator};
use crate::diff::{DiffError, Graph, ParamStore, Scalar, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SepConfig {
    pub d: usize,
    pub b: usize,
    pub hidden: usize,
    pub l: usize,
    pub r: usize,
    pub k: usize,
    /// Output streams I.
    pub streams: usize,
}

impl Default for SepConfig {
    fn default() -> Self {
        Self {
            d: 256,
            b: 64,
            hidden: 128,
            l: 40,
            r: 6,
            k: 80,
            streams: 2,
        }
    }
}

impl SepConfig {
    pub fn desk() -> Self {
        Self {
            d: 64,
            b: 16,
            hidden: 32,
            l: 40,
            r: 2,
            k: 20,
            streams: 2,
        }
    }

    pub fn core(&self) -> CoreConfig {
        CoreConfig {
            d: self.d,
            b: self.b,
            hidden: self.hidden,
            l: self.l,
            r: self.r,
            k: self.k,
        }
    }

    pub fn validate(&self) -> Result<(), DiffError> {
        self.core().validate()?;
        if self.streams < 2 {
            return Err(DiffError::Shape(format!(
                "separator needs at least 2 streams, got {}",
                self.streams
            )));
        }
        if self.b > self.d || self.d % self.b != 0 || !(self.d / self.b).is_power_of_two() {
            return Err(DiffError::Shape(format!(
                "D={} must be B={} times a power of two",
                self.d, self.b
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SepNet {
    pub cfg: SepConfig,
    encoder: Encoder,
    reduce: Vec<(Linear, Norm)>,
    masker: MaskEstimator,
    decoder: Decoder,
}

impl SepNet {
    pub fn build<T: Scalar>(cfg: &SepConfig, store: &mut ParamStore<T>) -> Result<Self, DiffError> {
        cfg.validate()?;
        let core = cfg.core();
        let encoder = Encoder::new(store, &core)?;
        let mut reduce = Vec::new();
        let mut c = cfg.d;
        while c > cfg.b {
            let lv = reduce.len();
            reduce.push((
                Linear::new(store, &format!("reduce{lv}.proj"), c, c / 2, true)?,
                Norm::new(store, &format!("reduce{lv}.norm"), c / 2, NormKind::Global)?,
            ));
            c /= 2;
        }
        Ok(Self {
            cfg: cfg.clone(),
            encoder,
            reduce,
            masker: MaskEstimator::new(store, &core, cfg.streams)?,
            decoder: Decoder::new(store, &core)?,
        })
    }

    /// `mixture [n, T_seq]` → estimates `[n, I, T_seq]`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        mixture: Var,
    ) -> Result<Var, DiffError> {
        let ms = g.shape(mixture).to_vec();
        let x = self.encoder.forward(g, s, mixture)?;
        let mut f = x;
        for (proj, norm) in &self.reduce {
            let p = proj.forward(g, s, f)?;
            f = norm.forward(g, s, p)?;
        }
        let masks = self.masker.forward(g, s, f)?;
        let xr = repeat_streams(g, x, self.cfg.streams)?;
        let masked = g.mul(masks, xr)?;
        let y = self.decoder.forward(g, s, masked, ms[1])?;
        g.reshape(y, &[ms[0], self.cfg.streams, ms[1]])
    }
}

/// Best assignment for a score matrix `scores[i][j]` (estimate i against
/// reference j): the permutation maximizing the mean matched score, found by
/// exhaustive lexicographic enumeration. Ties keep the earliest permutation.
pub fn best_permutation(scores: &[Vec<f64>]) -> Result<(Vec<usize>, f64), DiffError> {
    let n = scores.len();
    if n == 0 || scores.iter().any(|r| r.len() != n) {
        return Err(DiffError::Shape(format!(
            "score matrix must be square and non-empty, got {n} rows"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = (perm.clone(), f64::NEG_INFINITY);
    loop {
        let v = perm
            .iter()
            .enumerate()
            .map(|(i, &j)| scores[i][j])
            .sum::<f64>()
            / n as f64;
        if v > best.1 {
            best = (perm.clone(), v);
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    Ok(best)
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Permutation-invariant negative SI-SDR for `est, refs: [n, I, T]`.
///
/// Returns the batch-mean loss and the chosen permutation per item
/// (`perm[i]` = reference matched to estimate `i`).
pub fn pit_loss<T: Scalar>(
    g: &mut Graph<T>,
    est: Var,
    refs: Var,
) -> Result<(Var, Vec<Vec<usize>>), DiffError> {
    let es = g.shape(est).to_vec();
    if es.len() != 3 || g.shape(refs) != es.as_slice() {
        return Err(DiffError::Shape(format!(
            "pit_loss: {:?} vs {:?}",
            es,
            g.shape(refs)
        )));
    }
    let (n, i, t) = (es[0], es[1], es[2]);
    // all pairs: e[b, a, c] = est[b, a], r[b, a, c] = ref[b, c]
    let e4 = g.reshape(est, &[n, i, 1, t])?;
    let e_all = g.concat(&vec![e4; i], 2)?;
    let r4 = g.reshape(refs, &[n, 1, i, t])?;
    let r_all = g.concat(&vec![r4; i], 1)?;
    let e_all = g.reshape(e_all, &[n * i * i, t])?;
    let r_all = g.reshape(r_all, &[n * i * i, t])?;
    let pair = g.si_sdr(e_all, r_all)?;
    let pv = g.value(pair).data().to_vec();
    let mut select = vec![T::zero(); n * i * i];
    let mut perms = Vec::with_capacity(n);
    let w = T::from_f64c(-1.0 / (n * i) as f64);
    for b in 0..n {
        let scores: Vec<Vec<f64>> = (0..i)
            .map(|a| (0..i).map(|c| pv[(b * i + a) * i + c].to_f64c()).collect())
            .collect();
        let (perm, _) = best_permutation(&scores)?;
        for (a, &c) in perm.iter().enumerate() {
            select[(b * i + a) * i + c] = w;
        }
        perms.push(perm);
    }
    let sel = g.input(Tensor::new(&[n * i * i], select)?);
    let weighted = g.mul(pair, sel)?;
    Ok((g.sum_all(weighted)?, perms))
}

/// Uniform stream picker standing in for a matcher.
#[derive(Clone, Debug)]
pub struct RandomAssociation {
    rng: ChaCha8Rng,
}

impl RandomAssociation {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn choose(&mut self, streams: usize) -> Result<usize, DiffError> {
        if streams < 2 {
            return Err(DiffError::Shape(format!(
                "random association over {streams} streams"
            )));
        }
        Ok(self.rng.random_range(0..streams))
    }
}
