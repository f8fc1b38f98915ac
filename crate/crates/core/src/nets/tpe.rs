//! Text-conditioned extraction network: encoder, text-modulated fusion
//! stack, dual-path mask estimator and masked decoding.

use serde::{Deserialize, Serialize};

use super::layers::{Conv1d, Linear, Norm, NormKind};
use super::masker::{CoreConfig, Decoder, Encoder, MaskEstimator};
use crate::diff::{DiffError, Graph, ParamStore, Scalar, Var};
use crate::embed::DEFAULT_DIM;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TpeConfig {
    pub d: usize,
    pub b: usize,
    pub hidden: usize,
    pub l: usize,
    pub r: usize,
    pub k: usize,
    /// Fusion repeats; each halves the channel count.
    pub n: usize,
    /// Text embedding width.
    pub d_emb: usize,
}

impl Default for TpeConfig {
    fn default() -> Self {
        Self {
            d: 256,
            b: 64,
            hidden: 128,
            l: 40,
            r: 6,
            k: 80,
            n: 2,
            d_emb: DEFAULT_DIM,
        }
    }
}

impl TpeConfig {
    /// Desk-scale settings used for CPU training runs.
    pub fn desk() -> Self {
        Self {
            d: 64,
            b: 16,
            hidden: 32,
            l: 40,
            r: 2,
            k: 20,
            n: 2,
            d_emb: DEFAULT_DIM,
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
        if self.n == 0 || self.n >= usize::BITS as usize || self.d >> self.n << self.n != self.d {
            return Err(DiffError::Shape(format!(
                "D={} is not divisible by 2^N with N={}",
                self.d, self.n
            )));
        }
        if self.b != self.d >> self.n {
            return Err(DiffError::Shape(format!(
                "B={} must equal D/2^N = {}",
                self.b,
                self.d >> self.n
            )));
        }
        if self.d_emb == 0 {
            return Err(DiffError::Shape("zero text embedding width".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct FusionLevel {
    down: Linear,
    gamma: Linear,
    beta: Linear,
    conv: Conv1d,
    norm: Norm,
}

/// Intermediate values of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct TpeParts {
    /// `[n, T, D]`
    pub latent: Var,
    /// `[n, T, B]`
    pub fused: Var,
    /// `[n, T, D]`
    pub mask: Var,
    /// `[n, T_seq]`
    pub estimate: Var,
}

#[derive(Clone, Debug)]
pub struct TpeNet {
    pub cfg: TpeConfig,
    encoder: Encoder,
    fusion: Vec<FusionLevel>,
    masker: MaskEstimator,
    decoder: Decoder,
}

impl TpeNet {
    /// Register all parameters in `store` and return the network layout.
    pub fn build<T: Scalar>(cfg: &TpeConfig, store: &mut ParamStore<T>) -> Result<Self, DiffError> {
        cfg.validate()?;
        let core = cfg.core();
        let encoder = Encoder::new(store, &core)?;
        let mut fusion = Vec::with_capacity(cfg.n);
        let (mut c, mut td) = (cfg.d, cfg.d_emb);
        for lv in 0..cfg.n {
            let p = format!("fuse{lv}");
            fusion.push(FusionLevel {
                down: Linear::new(store, &format!("{p}.down"), td, c, true)?,
                gamma: Linear::constant(store, &format!("{p}.gamma"), c, c, 1.0)?,
                beta: Linear::constant(store, &format!("{p}.beta"), c, c, 0.0)?,
                conv: Conv1d::new(store, &format!("{p}.conv"), c, c / 2, cfg.l, 1, true)?
                    .same(cfg.l),
                norm: Norm::new(store, &format!("{p}.norm"), c / 2, NormKind::Global)?,
            });
            td = c;
            c /= 2;
        }
        Ok(Self {
            cfg: cfg.clone(),
            encoder,
            fusion,
            masker: MaskEstimator::new(store, &core, 1)?,
            decoder: Decoder::new(store, &core)?,
        })
    }

    /// `mixture [n, T_seq]`, `text [n, d_emb]`.
    pub fn forward_parts<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        mixture: Var,
        text: Var,
    ) -> Result<TpeParts, DiffError> {
        let (ms, ts) = (g.shape(mixture).to_vec(), g.shape(text).to_vec());
        if ts.len() != 2 || ms.len() != 2 || ts[0] != ms[0] || ts[1] != self.cfg.d_emb {
            return Err(DiffError::Shape(format!(
                "text embedding {ts:?} does not fit mixture {ms:?} with width {}",
                self.cfg.d_emb
            )));
        }
        let latent = self.encoder.forward(g, s, mixture)?;
        let fused = self.fuse(g, s, latent, text)?;
        let mask = self.masker.forward(g, s, fused)?;
        let masked = g.mul(mask, latent)?;
        let estimate = self.decoder.forward(g, s, masked, ms[1])?;
        Ok(TpeParts {
            latent,
            fused,
            mask,
            estimate,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        mixture: Var,
        text: Var,
    ) -> Result<Var, DiffError> {
        Ok(self.forward_parts(g, s, mixture, text)?.estimate)
    }

    fn fuse<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        x: Var,
        text: Var,
    ) -> Result<Var, DiffError> {
        let (mut f, mut t) = (x, text);
        for lv in &self.fusion {
            t = lv.down.forward(g, s, t)?;
            let gm = lv.gamma.forward(g, s, t)?;
            let bt = lv.beta.forward(g, s, t)?;
            let m = g.film(f, gm, bt)?;
            let c = lv.conv.forward(g, s, m)?;
            f = lv.norm.forward(g, s, c)?;
        }
        Ok(f)
    }
}

/// Mean negative SI-SDR over the batch.
pub fn tpe_loss<T: Scalar>(
    g: &mut Graph<T>,
    estimate: Var,
    reference: Var,
) -> Result<Var, DiffError> {
    let v = g.si_sdr(estimate, reference)?;
    let m = g.mean_all(v)?;
    g.scale(m, -1.0)
}
