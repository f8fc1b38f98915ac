//! Encoder, dual-path mask estimator and decoder shared by the extraction
//! and separation networks.

use serde::{Deserialize, Serialize};

use super::layers::{Conv1d, DualPathBlock, Linear};
use crate::audio::{frame_count, FrameSpec};
use crate::diff::{DiffError, Graph, ParamStore, Scalar, Var};

/// Hyperparameters of the encoder / dual-path / decoder core.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoreConfig {
    /// Latent channels.
    pub d: usize,
    /// Bottleneck channels inside the dual-path stack.
    pub b: usize,
    /// LSTM hidden size per direction.
    pub hidden: usize,
    /// Encoder kernel; stride is `l/2`.
    pub l: usize,
    /// Dual-path repeats.
    pub r: usize,
    /// Chunk size (hop `k/2`).
    pub k: usize,
}

impl CoreConfig {
    pub fn validate(&self) -> Result<(), DiffError> {
        let bad = |m: String| Err(DiffError::Shape(m));
        if self.d == 0 || self.b == 0 || self.hidden == 0 || self.r == 0 {
            return bad(format!("zero-sized network dimension in {self:?}"));
        }
        if self.l < 2 || self.l % 2 != 0 {
            return bad(format!("kernel L={} must be even and ≥ 2", self.l));
        }
        if self.k < 2 || self.k % 2 != 0 {
            return bad(format!("chunk size K={} must be even and ≥ 2", self.k));
        }
        Ok(())
    }

    pub fn frame_spec(&self) -> FrameSpec {
        FrameSpec::new(self.l).expect("validated kernel")
    }

    pub fn frames(&self, t_seq: usize) -> usize {
        frame_count(t_seq, self.frame_spec())
    }
}

/// Chunk size suggested for a latent of `frames` frames: `≈ √(2·frames)`, even.
pub fn suggested_chunk(frames: usize) -> usize {
    let k = ((2.0 * frames as f64).sqrt().round() as usize).max(2);
    k + k % 2
}

#[derive(Clone, Debug)]
pub struct Encoder {
    conv: Conv1d,
    spec: FrameSpec,
}

impl Encoder {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: &CoreConfig) -> Result<Self, DiffError> {
        Ok(Self {
            conv: Conv1d::new(store, "enc", 1, cfg.d, cfg.l, cfg.l / 2, false)?,
            spec: cfg.frame_spec(),
        })
    }

    /// `[n, T_seq]` → `[n, T, D]`, non-negative.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        x: Var,
    ) -> Result<Var, DiffError> {
        let sh = g.shape(x).to_vec();
        if sh.len() != 2 || sh[1] == 0 {
            return Err(DiffError::Shape(format!(
                "encoder expects [n, T_seq], got {sh:?}"
            )));
        }
        let x3 = g.reshape(x, &[sh[0], sh[1], 1])?;
        let pad = self.spec.padded_len(sh[1]) - sh[1];
        let y = self.conv.forward_padded(g, s, x3, pad)?;
        g.relu(y)
    }
}

#[derive(Clone, Debug)]
pub struct Decoder {
    basis: Linear,
    hop: usize,
}

impl Decoder {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: &CoreConfig) -> Result<Self, DiffError> {
        Ok(Self {
            basis: Linear::new(store, "dec", cfg.d, cfg.l, false)?,
            hop: cfg.l / 2,
        })
    }

    /// `[m, T, D]` → `[m, t_seq]` by per-frame basis synthesis, overlap-add and trim.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        latent: Var,
        t_seq: usize,
    ) -> Result<Var, DiffError> {
        let frames = self.basis.forward(g, s, latent)?;
        let wave = g.overlap_add(frames, self.hop)?;
        let len = g.shape(wave)[1];
        if len < t_seq {
            return Err(DiffError::Shape(format!(
                "decoded {len} samples, need {t_seq}"
            )));
        }
        g.narrow(wave, 1, 0, t_seq)
    }
}

/// Dual-path stack plus gated mask head emitting `streams` masks.
#[derive(Clone, Debug)]
pub struct MaskEstimator {
    blocks: Vec<DualPathBlock>,
    gate_t: Linear,
    gate_s: Linear,
    out: Linear,
    k: usize,
    b: usize,
    d: usize,
    streams: usize,
}

impl MaskEstimator {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        cfg: &CoreConfig,
        streams: usize,
    ) -> Result<Self, DiffError> {
        let blocks = (0..cfg.r)
            .map(|i| DualPathBlock::new(store, &format!("dp{i}"), cfg.b, cfg.hidden))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            blocks,
            gate_t: Linear::new(store, "head.tanh", cfg.b, cfg.b * streams, true)?,
            gate_s: Linear::new(store, "head.sigmoid", cfg.b, cfg.b * streams, true)?,
            out: Linear::new(store, "head.out", cfg.b, cfg.d, true)?,
            k: cfg.k,
            b: cfg.b,
            d: cfg.d,
            streams,
        })
    }

    /// `[n, T, B]` → masks `[n·I, T, D]` (stream index fastest within an item).
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        f: Var,
    ) -> Result<Var, DiffError> {
        let sh = g.shape(f).to_vec();
        if sh.len() != 3 || sh[2] != self.b {
            return Err(DiffError::Shape(format!(
                "mask estimator expects [n, T, {}], got {sh:?}",
                self.b
            )));
        }
        let (n, t) = (sh[0], sh[1]);
        let (w, geo) = g.segment(f, self.k)?;
        let mut w = g.permute(w, &[1, 0, 2, 3])?;
        for blk in &self.blocks {
            w = blk.forward(g, s, w)?;
        }
        let w = g.permute(w, &[1, 0, 2, 3])?;
        let f = g.aggregate(w, geo)?;
        let a = self.gate_t.forward(g, s, f)?;
        let a = g.tanh(a)?;
        let c = self.gate_s.forward(g, s, f)?;
        let c = g.sigmoid(c)?;
        let gated = g.mul(a, c)?;
        let gated = g.reshape(gated, &[n, t, self.streams, self.b])?;
        let gated = g.permute(gated, &[0, 2, 1, 3])?;
        let gated = g.reshape(gated, &[n * self.streams, t, self.b])?;
        let m = self.out.forward(g, s, gated)?;
        let m = g.relu(m)?;
        debug_assert_eq!(g.shape(m), [n * self.streams, t, self.d]);
        Ok(m)
    }
}

/// Repeat `[n, T, D]` into `[n·I, T, D]` matching the mask layout.
pub fn repeat_streams<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    streams: usize,
) -> Result<Var, DiffError> {
    if streams == 1 {
        return Ok(x);
    }
    let sh = g.shape(x).to_vec();
    let x4 = g.reshape(x, &[sh[0], 1, sh[1], sh[2]])?;
    let parts = vec![x4; streams];
    let rep = g.concat(&parts, 1)?;
    g.reshape(rep, &[sh[0] * streams, sh[1], sh[2]])
}
