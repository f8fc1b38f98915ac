//! Parameterized building blocks shared by the networks.

use crate::diff::{DiffError, Graph, InitScheme, LstmWeights, ParamId, ParamStore, Scalar, Var};

/// `y = x·Wᵀ + b` over the last axis.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
    ) -> Result<Self, DiffError> {
        let w = store.add(
            &format!("{name}.w"),
            &[d_out, d_in],
            InitScheme::FanIn { fan_in: d_in },
        )?;
        let b = if bias {
            Some(store.add(&format!("{name}.b"), &[d_out], InitScheme::Zeros)?)
        } else {
            None
        };
        Ok(Self { w, b })
    }

    /// Fixed initial map: every weight zero, every bias `bias`.
    pub fn constant<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: f64,
    ) -> Result<Self, DiffError> {
        let w = store.add(&format!("{name}.w"), &[d_out, d_in], InitScheme::Zeros)?;
        let b = store.add(&format!("{name}.b"), &[d_out], InitScheme::Constant(bias))?;
        Ok(Self { w, b: Some(b) })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        x: Var,
    ) -> Result<Var, DiffError> {
        let w = g.param(s, self.w);
        let b = self.b.map(|b| g.param(s, b));
        g.linear(x, w, b)
    }
}

/// 1-D convolution over `[n, T, C]`.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub stride: usize,
    pub pad_l: usize,
    pub pad_r: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
    ) -> Result<Self, DiffError> {
        let fan_in = c_in * kernel;
        let w = store.add(
            &format!("{name}.w"),
            &[c_out, kernel, c_in],
            InitScheme::FanIn { fan_in },
        )?;
        let b = if bias {
            Some(store.add(&format!("{name}.b"), &[c_out], InitScheme::Zeros)?)
        } else {
            None
        };
        Ok(Self {
            w,
            b,
            stride,
            pad_l: 0,
            pad_r: 0,
        })
    }

    /// Stride-1 padding that keeps the frame count: `(k−1)/2` left, rest right.
    pub fn same(mut self, kernel: usize) -> Self {
        self.pad_l = (kernel - 1) / 2;
        self.pad_r = kernel - 1 - self.pad_l;
        self
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        x: Var,
    ) -> Result<Var, DiffError> {
        self.forward_padded(g, s, x, 0)
    }

    /// Forward with `extra_r` more zeros appended on the right.
    pub fn forward_padded<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        x: Var,
        extra_r: usize,
    ) -> Result<Var, DiffError> {
        let w = g.param(s, self.w);
        let b = self.b.map(|b| g.param(s, b));
        g.conv1d(x, w, b, self.stride, self.pad_l, self.pad_r + extra_r)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormKind {
    /// Per frame, over channels.
    Frame,
    /// Per item, over frames and channels.
    Global,
}

/// Normalization with per-channel affine, initialized to the identity affine.
#[derive(Clone, Debug)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub kind: NormKind,
}

pub const NORM_EPS: f64 = 1e-5;

impl Norm {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        c: usize,
        kind: NormKind,
    ) -> Result<Self, DiffError> {
        let gamma = store.add(&format!("{name}.gamma"), &[c], InitScheme::Constant(1.0))?;
        let beta = store.add(&format!("{name}.beta"), &[c], InitScheme::Zeros)?;
        Ok(Self { gamma, beta, kind })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        x: Var,
    ) -> Result<Var, DiffError> {
        let (gm, bt) = (g.param(s, self.gamma), g.param(s, self.beta));
        match self.kind {
            NormKind::Frame => g.layer_norm(x, gm, bt, NORM_EPS),
            NormKind::Global => g.global_norm(x, gm, bt, NORM_EPS),
        }
    }
}

/// Bidirectional LSTM over time-major `[S, N, C]`.
#[derive(Clone, Debug)]
pub struct Blstm {
    dirs: [(ParamId, ParamId, ParamId); 2],
}

impl Blstm {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        hidden: usize,
    ) -> Result<Self, DiffError> {
        let mut dir = |d: &str| -> Result<(ParamId, ParamId, ParamId), DiffError> {
            let fan = InitScheme::FanIn { fan_in: hidden };
            let w_ih = store.add(&format!("{name}.{d}.w_ih"), &[4 * hidden, c_in], fan)?;
            let w_hh = store.add(&format!("{name}.{d}.w_hh"), &[4 * hidden, hidden], fan)?;
            let b = store.add(&format!("{name}.{d}.b"), &[4 * hidden], InitScheme::Zeros)?;
            // forget gate starts open
            let bv = store.value_mut(b);
            for v in &mut bv.data_mut()[hidden..2 * hidden] {
                *v = T::one();
            }
            Ok((w_ih, w_hh, b))
        };
        let fwd = dir("fwd")?;
        let bwd = dir("bwd")?;
        Ok(Self { dirs: [fwd, bwd] })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        x: Var,
    ) -> Result<Var, DiffError> {
        let mut w = self.dirs.iter().map(|&(a, b, c)| LstmWeights {
            w_ih: g.param(s, a),
            w_hh: g.param(s, b),
            b: g.param(s, c),
        });
        let (f, b) = (w.next().unwrap(), w.next().unwrap());
        drop(w);
        g.blstm(x, f, b)
    }
}

/// One dual-path block: intra-chunk then inter-chunk recurrence, each with
/// a projection, residual add and per-frame normalization.
#[derive(Clone, Debug)]
pub struct DualPathBlock {
    intra: Blstm,
    intra_proj: Linear,
    intra_norm: Norm,
    inter: Blstm,
    inter_proj: Linear,
    inter_norm: Norm,
}

impl DualPathBlock {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        b: usize,
        hidden: usize,
    ) -> Result<Self, DiffError> {
        Ok(Self {
            intra: Blstm::new(store, &format!("{name}.intra"), b, hidden)?,
            intra_proj: Linear::new(store, &format!("{name}.intra_proj"), 2 * hidden, b, true)?,
            intra_norm: Norm::new(store, &format!("{name}.intra_norm"), b, NormKind::Frame)?,
            inter: Blstm::new(store, &format!("{name}.inter"), b, hidden)?,
            inter_proj: Linear::new(store, &format!("{name}.inter_proj"), 2 * hidden, b, true)?,
            inter_norm: Norm::new(store, &format!("{name}.inter_norm"), b, NormKind::Frame)?,
        })
    }

    /// `x` is `[K, n, P, B]`; the result has the same layout.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        x: Var,
    ) -> Result<Var, DiffError> {
        let sh = g.shape(x).to_vec();
        let (k, n, p, b) = (sh[0], sh[1], sh[2], sh[3]);
        let seq = g.reshape(x, &[k, n * p, b])?;
        let y = residual(g, s, seq, &self.intra, &self.intra_proj, &self.intra_norm)?;
        let y = g.reshape(y, &[k, n, p, b])?;
        let y = g.permute(y, &[2, 1, 0, 3])?;
        let seq = g.reshape(y, &[p, n * k, b])?;
        let z = residual(g, s, seq, &self.inter, &self.inter_proj, &self.inter_norm)?;
        let z = g.reshape(z, &[p, n, k, b])?;
        g.permute(z, &[2, 1, 0, 3])
    }
}

fn residual<T: Scalar>(
    g: &mut Graph<T>,
    s: &ParamStore<T>,
    x: Var,
    rnn: &Blstm,
    proj: &Linear,
    norm: &Norm,
) -> Result<Var, DiffError> {
    let h = rnn.forward(g, s, x)?;
    let h = proj.forward(g, s, h)?;
    let y = g.add(x, h)?;
    norm.forward(g, s, y)
}
