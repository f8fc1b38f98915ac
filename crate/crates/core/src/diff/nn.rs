//! Convolution, normalization, modulation and the framing ops used by the
//! masking networks. Everything is channels-last: `[batch, time, channels]`.

use super::graph::{Graph, Var};
use super::scalar::{gemm, Scalar};
use super::tensor::Tensor;
use super::DiffError;

/// Chunking of a length-`len` axis into windows of `k` with hop `k/2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SegmentGeometry {
    pub len: usize,
    pub k: usize,
    pub hop: usize,
    pub chunks: usize,
    pub padded_len: usize,
}

impl SegmentGeometry {
    pub fn new(len: usize, k: usize) -> Result<Self, DiffError> {
        if k < 2 || k % 2 != 0 {
            return Err(DiffError::Shape(format!(
                "chunk size must be even and ≥ 2, got {k}"
            )));
        }
        let hop = k / 2;
        let chunks = if len <= k {
            1
        } else {
            (len - k).div_ceil(hop) + 1
        };
        Ok(Self {
            len,
            k,
            hop,
            chunks,
            padded_len: (chunks - 1) * hop + k,
        })
    }

    /// Number of chunks covering padded position `t`.
    fn coverage(&self, t: usize) -> usize {
        (0..self.chunks)
            .filter(|&p| t >= p * self.hop && t < p * self.hop + self.k)
            .count()
    }
}

fn conv_geometry(
    t: usize,
    k: usize,
    stride: usize,
    pl: usize,
    pr: usize,
) -> Result<usize, DiffError> {
    if stride == 0 || k == 0 {
        return Err(DiffError::Shape(
            "conv1d stride and kernel must be positive".into(),
        ));
    }
    let padded = t + pl + pr;
    if padded < k {
        return Err(DiffError::Shape(format!(
            "conv1d input length {padded} shorter than kernel {k}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    x: &[T],
    n: usize,
    t: usize,
    cin: usize,
    k: usize,
    stride: usize,
    pl: usize,
    tout: usize,
) -> Vec<T> {
    let row = k * cin;
    let mut cols = vec![T::zero(); n * tout * row];
    for b in 0..n {
        for o in 0..tout {
            let dst = &mut cols[(b * tout + o) * row..(b * tout + o + 1) * row];
            for kk in 0..k {
                let src = (o * stride + kk) as isize - pl as isize;
                if src < 0 || src as usize >= t {
                    continue;
                }
                let s = (b * t + src as usize) * cin;
                dst[kk * cin..(kk + 1) * cin].copy_from_slice(&x[s..s + cin]);
            }
        }
    }
    cols
}

impl<T: Scalar> Graph<T> {
    /// 1-D cross-correlation: `y[b,o,c] = bias[c] + Σ_k Σ_i w[c,k,i] · x[b, o·stride + k − pad_l, i]`.
    ///
    /// `x` is `[n, T, C_in]`, `w` is `[C_out, K, C_in]`, output `[n, T', C_out]`
    /// with `T' = (T + pad_l + pad_r − K)/stride + 1`.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad_l: usize,
        pad_r: usize,
    ) -> Result<Var, DiffError> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 3 || ws.len() != 3 || ws[2] != xs[2] {
            return Err(DiffError::Shape(format!(
                "conv1d: x {:?} with w {:?}",
                xs, ws
            )));
        }
        let (n, t, cin) = (xs[0], xs[1], xs[2]);
        let (cout, k) = (ws[0], ws[1]);
        if let Some(b) = bias {
            if self.shape(b) != [cout] {
                return Err(DiffError::Shape(format!("conv1d bias {:?}", self.shape(b))));
            }
        }
        let tout = conv_geometry(t, k, stride, pad_l, pad_r)?;
        let row = k * cin;
        let cols = im2col(self.value(x).data(), n, t, cin, k, stride, pad_l, tout);
        let mut out = vec![T::zero(); n * tout * cout];
        gemm(
            n * tout,
            row,
            cout,
            T::one(),
            &cols,
            false,
            self.value(w).data(),
            true,
            T::zero(),
            &mut out,
        );
        if let Some(b) = bias {
            let bv = self.value(b).data();
            for r in out.chunks_exact_mut(cout) {
                for (o, &bb) in r.iter_mut().zip(bv) {
                    *o = *o + bb;
                }
            }
        }
        drop(cols);
        let out = Tensor::new(&[n, tout, cout], out)?;
        let mut inputs = vec![x, w];
        if let Some(b) = bias {
            inputs.push(b);
        }
        self.push(
            "conv1d",
            out,
            &inputs,
            Box::new(move |c| {
                let g = c.grad.data();
                let wv = c.inputs[1].data();
                let gx = c.needs[0].then(|| {
                    let mut dcols = vec![T::zero(); n * tout * row];
                    gemm(
                        n * tout,
                        cout,
                        row,
                        T::one(),
                        g,
                        false,
                        wv,
                        false,
                        T::zero(),
                        &mut dcols,
                    );
                    let mut dx = vec![T::zero(); n * t * cin];
                    for b in 0..n {
                        for o in 0..tout {
                            let src = &dcols[(b * tout + o) * row..(b * tout + o + 1) * row];
                            for kk in 0..k {
                                let ti = (o * stride + kk) as isize - pad_l as isize;
                                if ti < 0 || ti as usize >= t {
                                    continue;
                                }
                                let d = (b * t + ti as usize) * cin;
                                for (a, &v) in dx[d..d + cin]
                                    .iter_mut()
                                    .zip(&src[kk * cin..(kk + 1) * cin])
                                {
                                    *a = *a + v;
                                }
                            }
                        }
                    }
                    Tensor::new(&[n, t, cin], dx).expect("conv dx")
                });
                let gw = c.needs[1].then(|| {
                    let cols = im2col(c.inputs[0].data(), n, t, cin, k, stride, pad_l, tout);
                    let mut dw = vec![T::zero(); cout * row];
                    gemm(
                        cout,
                        n * tout,
                        row,
                        T::one(),
                        g,
                        true,
                        &cols,
                        false,
                        T::zero(),
                        &mut dw,
                    );
                    Tensor::new(&[cout, k, cin], dw).expect("conv dw")
                });
                let mut res = vec![gx, gw];
                if c.inputs.len() == 3 {
                    res.push(c.needs[2].then(|| {
                        let mut db = vec![T::zero(); cout];
                        for r in g.chunks_exact(cout) {
                            for (o, &v) in db.iter_mut().zip(r) {
                                *o = *o + v;
                            }
                        }
                        Tensor::new(&[cout], db).expect("conv db")
                    }));
                }
                res
            }),
        )
    }

    /// Normalize each last-axis slice to zero mean and unit variance, then
    /// apply the learned affine `gamma·x̂ + beta`.
    pub fn layer_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<Var, DiffError> {
        let c = *self
            .shape(x)
            .last()
            .ok_or_else(|| DiffError::Shape("layer_norm of scalar".into()))?;
        self.norm_span(x, gamma, beta, eps, c, "layer_norm")
    }

    /// Normalize over all time steps and channels of each batch item of
    /// `[n, T, C]` jointly, with a per-channel affine.
    pub fn global_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<Var, DiffError> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return Err(DiffError::Shape(format!(
                "global_norm expects [n, T, C], got {:?}",
                xs
            )));
        }
        self.norm_span(x, gamma, beta, eps, xs[1] * xs[2], "global_norm")
    }

    /// Statistics over contiguous runs of `span` values; affine over the last axis.
    fn norm_span(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        span: usize,
        op: &'static str,
    ) -> Result<Var, DiffError> {
        let xs = self.shape(x).to_vec();
        let c = *xs
            .last()
            .ok_or_else(|| DiffError::Shape(format!("{op} of scalar")))?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(DiffError::Shape(format!(
                "{op} affine {:?}/{:?} for width {}",
                self.shape(gamma),
                self.shape(beta),
                c
            )));
        }
        if span == 0 || c == 0 {
            return Err(DiffError::Shape(format!("{op} over an empty axis")));
        }
        let eps = T::from_f64c(eps);
        let sn = T::from_usize(span).unwrap();
        let xv = self.value(x).data();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let rows = xv.len() / span;
        let mut xhat = vec![T::zero(); xv.len()];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.len()];
        for r in 0..rows {
            let s = &xv[r * span..(r + 1) * span];
            let mean = s.iter().copied().sum::<T>() / sn;
            let var = s.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / sn;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for i in 0..span {
                let h = (s[i] - mean) * is;
                xhat[r * span + i] = h;
                out[r * span + i] = gv[i % c] * h + bv[i % c];
            }
        }
        let out = Tensor::new(&xs, out)?;
        self.push(
            op,
            out,
            &[x, gamma, beta],
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let gv = ctx.inputs[1].data();
                let gx = ctx.needs[0].then(|| {
                    let mut dx = vec![T::zero(); g.len()];
                    for r in 0..rows {
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for i in 0..span {
                            let d = g[r * span + i] * gv[i % c];
                            m1 = m1 + d;
                            m2 = m2 + d * xhat[r * span + i];
                        }
                        m1 = m1 / sn;
                        m2 = m2 / sn;
                        for i in 0..span {
                            let d = g[r * span + i] * gv[i % c];
                            dx[r * span + i] = inv_std[r] * (d - m1 - xhat[r * span + i] * m2);
                        }
                    }
                    Tensor::new(ctx.inputs[0].shape(), dx).expect("norm dx")
                });
                let (mut dg, mut db) = (vec![T::zero(); c], vec![T::zero(); c]);
                for (i, (&gi, &h)) in g.iter().zip(&xhat).enumerate() {
                    dg[i % c] = dg[i % c] + gi * h;
                    db[i % c] = db[i % c] + gi;
                }
                vec![
                    gx,
                    Some(Tensor::new(&[c], dg).expect("norm dg")),
                    Some(Tensor::new(&[c], db).expect("norm db")),
                ]
            }),
        )
    }

    /// Feature-wise modulation `out[b,t,c] = gamma[b,c]·x[b,t,c] + beta[b,c]`.
    pub fn film(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, DiffError> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3
            || self.shape(gamma) != [xs[0], xs[2]]
            || self.shape(beta) != [xs[0], xs[2]]
        {
            return Err(DiffError::Shape(format!(
                "film: x {:?}, gamma {:?}, beta {:?}",
                xs,
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let (n, t, c) = (xs[0], xs[1], xs[2]);
        let (xv, gv, bv) = (
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        let mut out = vec![T::zero(); xv.len()];
        for b in 0..n {
            for ti in 0..t {
                let o = (b * t + ti) * c;
                for i in 0..c {
                    out[o + i] = gv[b * c + i] * xv[o + i] + bv[b * c + i];
                }
            }
        }
        let out = Tensor::new(&xs, out)?;
        self.push(
            "film",
            out,
            &[x, gamma, beta],
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let (xv, gv) = (ctx.inputs[0].data(), ctx.inputs[1].data());
                let gx = ctx.needs[0].then(|| {
                    Tensor::from_fn(&[n, t, c], |idx| {
                        let b = idx / (t * c);
                        g[idx] * gv[b * c + idx % c]
                    })
                });
                let mut dg = vec![T::zero(); n * c];
                let mut db = vec![T::zero(); n * c];
                for b in 0..n {
                    for ti in 0..t {
                        let o = (b * t + ti) * c;
                        for i in 0..c {
                            dg[b * c + i] = dg[b * c + i] + g[o + i] * xv[o + i];
                            db[b * c + i] = db[b * c + i] + g[o + i];
                        }
                    }
                }
                vec![
                    gx,
                    Some(Tensor::new(&[n, c], dg).expect("film dg")),
                    Some(Tensor::new(&[n, c], db).expect("film db")),
                ]
            }),
        )
    }

    /// Sum 50%-style overlapping frames: `[n, T, L]` → `[n, (T−1)·hop + L]`.
    pub fn overlap_add(&mut self, frames: Var, hop: usize) -> Result<Var, DiffError> {
        let fs = self.shape(frames).to_vec();
        if fs.len() != 3 || fs[1] == 0 || hop == 0 {
            return Err(DiffError::Shape(format!(
                "overlap_add of {:?} with hop {}",
                fs, hop
            )));
        }
        let (n, t, l) = (fs[0], fs[1], fs[2]);
        let len = (t - 1) * hop + l;
        let fv = self.value(frames).data();
        let mut out = vec![T::zero(); n * len];
        for b in 0..n {
            for ti in 0..t {
                let src = &fv[(b * t + ti) * l..(b * t + ti + 1) * l];
                let dst = &mut out[b * len + ti * hop..b * len + ti * hop + l];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = *d + s;
                }
            }
        }
        let out = Tensor::new(&[n, len], out)?;
        self.push(
            "overlap_add",
            out,
            &[frames],
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                vec![Some(Tensor::from_fn(&[n, t, l], |idx| {
                    let b = idx / (t * l);
                    let ti = (idx / l) % t;
                    g[b * len + ti * hop + idx % l]
                }))]
            }),
        )
    }

    /// `[n, T, B]` → overlapping chunks `[n, K, P, B]` (hop K/2, zero tail padding).
    pub fn segment(&mut self, x: Var, k: usize) -> Result<(Var, SegmentGeometry), DiffError> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return Err(DiffError::Shape(format!(
                "segment expects [n, T, B], got {:?}",
                xs
            )));
        }
        let (n, t, c) = (xs[0], xs[1], xs[2]);
        let geo = SegmentGeometry::new(t, k)?;
        let p = geo.chunks;
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); n * k * p * c];
        for b in 0..n {
            for kk in 0..k {
                for pp in 0..p {
                    let ti = pp * geo.hop + kk;
                    if ti < t {
                        let d = ((b * k + kk) * p + pp) * c;
                        let s = (b * t + ti) * c;
                        out[d..d + c].copy_from_slice(&xv[s..s + c]);
                    }
                }
            }
        }
        let out = Tensor::new(&[n, k, p, c], out)?;
        let v = self.push(
            "segment",
            out,
            &[x],
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let mut dx = vec![T::zero(); n * t * c];
                for b in 0..n {
                    for kk in 0..k {
                        for pp in 0..p {
                            let ti = pp * geo.hop + kk;
                            if ti < t {
                                let s = ((b * k + kk) * p + pp) * c;
                                let d = (b * t + ti) * c;
                                for (a, &v) in dx[d..d + c].iter_mut().zip(&g[s..s + c]) {
                                    *a = *a + v;
                                }
                            }
                        }
                    }
                }
                vec![Some(Tensor::new(&[n, t, c], dx).expect("segment dx"))]
            }),
        )?;
        Ok((v, geo))
    }

    /// Inverse of [`Graph::segment`]: overlap-average chunks back to `[n, T, B]`.
    pub fn aggregate(&mut self, w: Var, geo: SegmentGeometry) -> Result<Var, DiffError> {
        let ws = self.shape(w).to_vec();
        if ws.len() != 4 || ws[1] != geo.k || ws[2] != geo.chunks {
            return Err(DiffError::Shape(format!(
                "aggregate of {:?} with {:?}",
                ws, geo
            )));
        }
        let (n, k, p, c) = (ws[0], ws[1], ws[2], ws[3]);
        let t = geo.len;
        let inv: Vec<T> = (0..t)
            .map(|ti| T::one() / T::from_usize(geo.coverage(ti)).unwrap())
            .collect();
        let wv = self.value(w).data();
        let mut out = vec![T::zero(); n * t * c];
        for b in 0..n {
            for kk in 0..k {
                for pp in 0..p {
                    let ti = pp * geo.hop + kk;
                    if ti < t {
                        let s = ((b * k + kk) * p + pp) * c;
                        let d = (b * t + ti) * c;
                        for (a, &v) in out[d..d + c].iter_mut().zip(&wv[s..s + c]) {
                            *a = *a + v;
                        }
                    }
                }
            }
        }
        for b in 0..n {
            for ti in 0..t {
                for v in out[(b * t + ti) * c..(b * t + ti + 1) * c].iter_mut() {
                    *v = *v * inv[ti];
                }
            }
        }
        let out = Tensor::new(&[n, t, c], out)?;
        self.push(
            "aggregate",
            out,
            &[w],
            Box::new(move |ctx| {
                let g = ctx.grad.data();
                let mut dw = vec![T::zero(); n * k * p * c];
                for b in 0..n {
                    for kk in 0..k {
                        for pp in 0..p {
                            let ti = pp * geo.hop + kk;
                            if ti < t {
                                let d = ((b * k + kk) * p + pp) * c;
                                let s = (b * t + ti) * c;
                                for (a, &v) in dw[d..d + c].iter_mut().zip(&g[s..s + c]) {
                                    *a = v * inv[ti];
                                }
                            }
                        }
                    }
                }
                vec![Some(Tensor::new(&[n, k, p, c], dw).expect("aggregate dw"))]
            }),
        )
    }
}
