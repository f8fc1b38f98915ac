use std::collections::HashMap;
use std::sync::Arc;

use super::params::{ParamId, ParamStore};
use super::scalar::{gemm, Scalar};
use super::tensor::{numel, Tensor};
use super::DiffError;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// What a backward closure sees: the output gradient plus forward values.
pub struct BackCtx<'a, T> {
    pub grad: &'a Tensor<T>,
    pub out: &'a Tensor<T>,
    pub inputs: Vec<&'a Tensor<T>>,
    pub needs: Vec<bool>,
}

pub(crate) type BackFn<T> = Box<dyn Fn(&BackCtx<T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    op: &'static str,
    value: Arc<Tensor<T>>,
    inputs: Vec<Var>,
    back: Option<BackFn<T>>,
    requires_grad: bool,
}

/// Reverse-mode tape. Every op records its output value together with a
/// closure mapping the output gradient to input gradients.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    param_vars: HashMap<ParamId, Var>,
    grads: Vec<Option<Tensor<T>>>,
    check_finite: bool,
    record: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            grads: Vec::new(),
            check_finite: true,
            record: true,
        }
    }

    /// A graph that keeps values only; `backward` is unavailable.
    pub fn inference() -> Self {
        Self {
            record: false,
            ..Self::new()
        }
    }

    /// Disable the per-op NaN/Inf scan (used by the gradient-check harness
    /// when probing deliberately broken functions).
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input (no gradient).
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.leaf(Arc::new(t), false)
    }

    /// Leaf whose gradient is tracked.
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.leaf(Arc::new(t), true)
    }

    fn leaf(&mut self, t: Arc<Tensor<T>>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op: "leaf",
            value: t,
            inputs: Vec::new(),
            back: None,
            requires_grad: requires_grad && self.record,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable parameter; repeated calls for the same id return the same leaf.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.leaf(store.value_arc(id), true);
        self.param_vars.insert(id, v);
        v
    }

    pub(crate) fn push(
        &mut self,
        op: &'static str,
        value: Tensor<T>,
        inputs: &[Var],
        back: BackFn<T>,
    ) -> Result<Var, DiffError> {
        if self.check_finite && !value.is_finite() {
            return Err(DiffError::NonFinite(op.to_string()));
        }
        let requires_grad = self.record && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            op,
            value: Arc::new(value),
            inputs: inputs.to_vec(),
            back: if requires_grad { Some(back) } else { None },
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Accumulate gradients of a single-element `loss` into every upstream node.
    pub fn backward(&mut self, loss: Var) -> Result<(), DiffError> {
        if !self.record {
            return Err(DiffError::Graph("backward on an inference graph".into()));
        }
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(DiffError::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            let back = match &node.back {
                Some(b) => b,
                None => continue,
            };
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            let ctx = BackCtx {
                grad: &g,
                out: &node.value,
                inputs: node
                    .inputs
                    .iter()
                    .map(|v| &*self.nodes[v.0].value)
                    .collect(),
                needs: node
                    .inputs
                    .iter()
                    .map(|v| self.nodes[v.0].requires_grad)
                    .collect(),
            };
            let in_grads = back(&ctx);
            debug_assert_eq!(in_grads.len(), node.inputs.len(), "op {}", node.op);
            for (v, gi) in node.inputs.iter().zip(in_grads) {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                if let Some(gi) = gi {
                    debug_assert_eq!(
                        gi.shape(),
                        self.nodes[v.0].value.shape(),
                        "grad shape from op {}",
                        node.op
                    );
                    match &mut grads[v.0] {
                        Some(acc) => acc.add_assign(&gi),
                        slot @ None => *slot = Some(gi),
                    }
                }
            }
            if self.check_finite {
                // leaf gradients are the ones callers read back
                for v in &node.inputs {
                    if let Some(gv) = &grads[v.0] {
                        // parameter leaves are checked by name by their consumer
                        let is_param = self.param_vars.values().any(|p| p == v);
                        if self.nodes[v.0].back.is_none() && !is_param && !gv.is_finite() {
                            return Err(DiffError::NonFinite(format!("gradient of {}", node.op)));
                        }
                    }
                }
            }
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient of a leaf after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradients for every parameter touched by this graph.
    pub fn param_grads(&self) -> Vec<(ParamId, Tensor<T>)> {
        let mut out: Vec<(ParamId, Tensor<T>)> = self
            .param_vars
            .iter()
            .map(|(&id, &v)| {
                let g = self
                    .grad(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(self.value(v).shape()));
                (id, g)
            })
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    fn check_same(&self, a: Var, b: Var, op: &str) -> Result<(), DiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(DiffError::Shape(format!(
                "{}: {:?} vs {:?}",
                op,
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    // ---- elementwise -------------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.check_same(a, b, "add")?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let out = Tensor::new(va.shape(), data)?;
        self.push(
            "add",
            out,
            &[a, b],
            Box::new(|c| vec![Some(c.grad.clone()), Some(c.grad.clone())]),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.check_same(a, b, "sub")?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| x - y)
            .collect();
        let out = Tensor::new(va.shape(), data)?;
        self.push(
            "sub",
            out,
            &[a, b],
            Box::new(|c| vec![Some(c.grad.clone()), Some(c.grad.map(|g| -g))]),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.check_same(a, b, "mul")?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::new(va.shape(), data)?;
        self.push(
            "mul",
            out,
            &[a, b],
            Box::new(|c| {
                let (x, y) = (c.inputs[0], c.inputs[1]);
                let ga = c.needs[0]
                    .then(|| Tensor::from_fn(x.shape(), |i| c.grad.data()[i] * y.data()[i]));
                let gb = c.needs[1]
                    .then(|| Tensor::from_fn(y.shape(), |i| c.grad.data()[i] * x.data()[i]));
                vec![ga, gb]
            }),
        )
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var, DiffError> {
        let k = T::from_f64c(k);
        let out = self.value(a).map(|x| x * k);
        self.push(
            "scale",
            out,
            &[a],
            Box::new(move |c| vec![Some(c.grad.map(|g| g * k))]),
        )
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Result<Var, DiffError> {
        let k = T::from_f64c(k);
        let out = self.value(a).map(|x| x + k);
        self.push(
            "add_scalar",
            out,
            &[a],
            Box::new(|c| vec![Some(c.grad.clone())]),
        )
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, DiffError> {
        let out = self
            .value(a)
            .map(|x| if x > T::zero() { x } else { T::zero() });
        self.push(
            "relu",
            out,
            &[a],
            Box::new(|c| {
                let x = c.inputs[0];
                vec![Some(Tensor::from_fn(x.shape(), |i| {
                    if x.data()[i] > T::zero() {
                        c.grad.data()[i]
                    } else {
                        T::zero()
                    }
                }))]
            }),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, DiffError> {
        let out = self.value(a).map(sigmoid);
        self.push(
            "sigmoid",
            out,
            &[a],
            Box::new(|c| {
                vec![Some(Tensor::from_fn(c.out.shape(), |i| {
                    let s = c.out.data()[i];
                    c.grad.data()[i] * s * (T::one() - s)
                }))]
            }),
        )
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, DiffError> {
        let out = self.value(a).map(|x| x.tanh());
        self.push(
            "tanh",
            out,
            &[a],
            Box::new(|c| {
                vec![Some(Tensor::from_fn(c.out.shape(), |i| {
                    let t = c.out.data()[i];
                    c.grad.data()[i] * (T::one() - t * t)
                }))]
            }),
        )
    }

    // ---- shape -------------------------------------------------------------

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, DiffError> {
        let src_shape = self.shape(a).to_vec();
        let out = self.value(a).clone().reshaped(shape)?;
        self.push(
            "reshape",
            out,
            &[a],
            Box::new(move |c| {
                vec![Some(
                    c.grad.clone().reshaped(&src_shape).expect("same numel"),
                )]
            }),
        )
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var, DiffError> {
        let out = self.value(a).permuted(axes)?;
        let mut inv = vec![0usize; axes.len()];
        for (i, &ax) in axes.iter().enumerate() {
            inv[ax] = i;
        }
        self.push(
            "permute",
            out,
            &[a],
            Box::new(move |c| vec![Some(c.grad.permuted(&inv).expect("valid inverse"))]),
        )
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(
        &mut self,
        a: Var,
        axis: usize,
        start: usize,
        len: usize,
    ) -> Result<Var, DiffError> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(DiffError::Shape(format!(
                "narrow axis {} [{}, {}) of {:?}",
                axis,
                start,
                start + len,
                shape
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis];
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let out = Tensor::new(&out_shape, data)?;
        self.push(
            "narrow",
            out,
            &[a],
            Box::new(move |c| {
                let mut g = Tensor::zeros(&shape);
                let gd = g.data_mut();
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    let src = &c.grad.data()[o * len * inner..(o + 1) * len * inner];
                    gd[base..base + len * inner].copy_from_slice(src);
                }
                vec![Some(g)]
            }),
        )
    }

    /// Concatenate along `axis`; all other dims must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, DiffError> {
        if parts.is_empty() {
            return Err(DiffError::Shape("concat of nothing".into()));
        }
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(DiffError::Shape(format!(
                "concat axis {} of {:?}",
                axis, first
            )));
        }
        let mut sizes = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len()
                || s.iter()
                    .enumerate()
                    .any(|(i, &d)| i != axis && d != first[i])
            {
                return Err(DiffError::Shape(format!("concat {:?} with {:?}", first, s)));
            }
            sizes.push(s[axis]);
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let total: usize = sizes.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&p, &sz) in parts.iter().zip(&sizes) {
                let src = self.value(p).data();
                data.extend_from_slice(&src[o * sz * inner..(o + 1) * sz * inner]);
            }
        }
        let mut out_shape = first.clone();
        out_shape[axis] = total;
        let out = Tensor::new(&out_shape, data)?;
        self.push(
            "concat",
            out,
            parts,
            Box::new(move |c| {
                let mut grads = Vec::with_capacity(sizes.len());
                let mut offset = 0;
                for (k, &sz) in sizes.iter().enumerate() {
                    if !c.needs[k] {
                        grads.push(None);
                        offset += sz;
                        continue;
                    }
                    let mut d = Vec::with_capacity(outer * sz * inner);
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        d.extend_from_slice(&c.grad.data()[base..base + sz * inner]);
                    }
                    let mut shp = c.inputs[k].shape().to_vec();
                    shp[axis] = sz;
                    grads.push(Some(Tensor::new(&shp, d).expect("concat grad")));
                    offset += sz;
                }
                grads
            }),
        )
    }

    // ---- linear algebra ----------------------------------------------------

    /// 2-D product `op(a) · op(b)`.
    pub fn matmul(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var, DiffError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 {
            return Err(DiffError::Shape(format!(
                "matmul needs 2-D, got {:?} {:?}",
                sa, sb
            )));
        }
        let (m, k) = if ta { (sa[1], sa[0]) } else { (sa[0], sa[1]) };
        let (k2, n) = if tb { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if k != k2 {
            return Err(DiffError::Shape(format!(
                "matmul inner dims {} vs {} ({:?}{} · {:?}{})",
                k,
                k2,
                sa,
                if ta { "ᵀ" } else { "" },
                sb,
                if tb { "ᵀ" } else { "" }
            )));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(
            m,
            k,
            n,
            T::one(),
            self.value(a).data(),
            ta,
            self.value(b).data(),
            tb,
            T::zero(),
            &mut out,
        );
        let out = Tensor::new(&[m, n], out)?;
        self.push(
            "matmul",
            out,
            &[a, b],
            Box::new(move |c| {
                let (va, vb) = (c.inputs[0].data(), c.inputs[1].data());
                let g = c.grad.data();
                // C = A·B  →  dA = dC·Bᵀ, dB = Aᵀ·dC (with transposes folded in)
                let ga = c.needs[0].then(|| {
                    let mut d = vec![T::zero(); m * k];
                    if ta {
                        // A stored k×m: dAᵀ = B·dCᵀ  →  dA(k×m) = op(B)·dCᵀ
                        gemm(k, n, m, T::one(), vb, tb, g, true, T::zero(), &mut d);
                        Tensor::new(&[k, m], d).expect("ga")
                    } else {
                        gemm(m, n, k, T::one(), g, false, vb, !tb, T::zero(), &mut d);
                        Tensor::new(&[m, k], d).expect("ga")
                    }
                });
                let gb = c.needs[1].then(|| {
                    let mut d = vec![T::zero(); k * n];
                    if tb {
                        // B stored n×k: dB = dCᵀ·op(A)
                        gemm(n, m, k, T::one(), g, true, va, ta, T::zero(), &mut d);
                        Tensor::new(&[n, k], d).expect("gb")
                    } else {
                        gemm(k, m, n, T::one(), va, !ta, g, false, T::zero(), &mut d);
                        Tensor::new(&[k, n], d).expect("gb")
                    }
                });
                vec![ga, gb]
            }),
        )
    }

    /// `x·Wᵀ + b` over the last axis; `w` is `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, DiffError> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let cin = *xs
            .last()
            .ok_or_else(|| DiffError::Shape("linear on scalar".into()))?;
        if ws.len() != 2 || ws[1] != cin {
            return Err(DiffError::Shape(format!(
                "linear: x {:?} with w {:?}",
                xs, ws
            )));
        }
        let cout = ws[0];
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(DiffError::Shape(format!(
                    "linear bias {:?}, expected [{}]",
                    self.shape(b),
                    cout
                )));
            }
        }
        let rows = numel(&xs) / cin.max(1);
        let mut out = vec![T::zero(); rows * cout];
        gemm(
            rows,
            cin,
            cout,
            T::one(),
            self.value(x).data(),
            false,
            self.value(w).data(),
            true,
            T::zero(),
            &mut out,
        );
        if let Some(b) = b {
            let bv = self.value(b).data();
            for r in out.chunks_exact_mut(cout) {
                for (o, &bb) in r.iter_mut().zip(bv) {
                    *o = *o + bb;
                }
            }
        }
        let mut os = xs.clone();
        *os.last_mut().unwrap() = cout;
        let out = Tensor::new(&os, out)?;
        let mut inputs = vec![x, w];
        if let Some(b) = b {
            inputs.push(b);
        }
        self.push(
            "linear",
            out,
            &inputs,
            Box::new(move |c| {
                let g = c.grad.data();
                let gx = c.needs[0].then(|| {
                    let mut d = vec![T::zero(); rows * cin];
                    gemm(
                        rows,
                        cout,
                        cin,
                        T::one(),
                        g,
                        false,
                        c.inputs[1].data(),
                        false,
                        T::zero(),
                        &mut d,
                    );
                    Tensor::new(c.inputs[0].shape(), d).expect("gx")
                });
                let gw = c.needs[1].then(|| {
                    let mut d = vec![T::zero(); cout * cin];
                    gemm(
                        cout,
                        rows,
                        cin,
                        T::one(),
                        g,
                        true,
                        c.inputs[0].data(),
                        false,
                        T::zero(),
                        &mut d,
                    );
                    Tensor::new(&[cout, cin], d).expect("gw")
                });
                let mut res = vec![gx, gw];
                if c.inputs.len() == 3 {
                    res.push(c.needs[2].then(|| {
                        let mut d = vec![T::zero(); cout];
                        for r in g.chunks_exact(cout) {
                            for (o, &v) in d.iter_mut().zip(r) {
                                *o = *o + v;
                            }
                        }
                        Tensor::new(&[cout], d).expect("gb")
                    }));
                }
                res
            }),
        )
    }

    // ---- reductions --------------------------------------------------------

    pub fn sum_all(&mut self, a: Var) -> Result<Var, DiffError> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(
            "sum",
            out,
            &[a],
            Box::new(|c| vec![Some(Tensor::full(c.inputs[0].shape(), c.grad.item()))]),
        )
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var, DiffError> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(DiffError::Shape("mean of empty tensor".into()));
        }
        let inv = T::one() / T::from_usize(n).unwrap();
        let out = Tensor::scalar(self.value(a).sum() * inv);
        self.push(
            "mean",
            out,
            &[a],
            Box::new(move |c| vec![Some(Tensor::full(c.inputs[0].shape(), c.grad.item() * inv))]),
        )
    }

    /// Mean over `axis`, removing it.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var, DiffError> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(DiffError::Shape(format!(
                "mean over axis {} of {:?}",
                axis, shape
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let n = shape[axis];
        let inv = T::one() / T::from_usize(n).unwrap();
        let src = self.value(a).data();
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let row = &src[(o * n + k) * inner..(o * n + k + 1) * inner];
                for (d, &v) in data[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *d = *d + v;
                }
            }
        }
        for d in data.iter_mut() {
            *d = *d * inv;
        }
        let mut os = shape.clone();
        os.remove(axis);
        let out = Tensor::new(&os, data)?;
        self.push(
            "mean_axis",
            out,
            &[a],
            Box::new(move |c| {
                let mut g = Tensor::zeros(&shape);
                let gd = g.data_mut();
                for o in 0..outer {
                    for k in 0..n {
                        for i in 0..inner {
                            gd[(o * n + k) * inner + i] = c.grad.data()[o * inner + i] * inv;
                        }
                    }
                }
                vec![Some(g)]
            }),
        )
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var, DiffError> {
        let shape = self.shape(a).to_vec();
        let n = *shape
            .last()
            .ok_or_else(|| DiffError::Shape("softmax of scalar".into()))?;
        if n == 0 {
            return Err(DiffError::Shape("softmax over empty axis".into()));
        }
        let mut out = self.value(a).clone();
        for row in out.data_mut().chunks_exact_mut(n) {
            softmax_in_place(row);
        }
        self.push(
            "softmax",
            out,
            &[a],
            Box::new(move |c| {
                let mut g = Tensor::zeros(c.out.shape());
                for ((gr, yr), dr) in g
                    .data_mut()
                    .chunks_exact_mut(n)
                    .zip(c.out.data().chunks_exact(n))
                    .zip(c.grad.data().chunks_exact(n))
                {
                    let dot: T = yr.iter().zip(dr).map(|(&y, &d)| y * d).sum();
                    for ((o, &y), &d) in gr.iter_mut().zip(yr).zip(dr) {
                        *o = y * (d - dot);
                    }
                }
                vec![Some(g)]
            }),
        )
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s = s + *v;
    }
    for v in row.iter_mut() {
        *v = *v / s;
    }
}
