//! Batched products and scaled dot-product attention.

use super::graph::{Graph, Var};
use super::scalar::{gemm, Scalar};
use super::tensor::Tensor;
use super::DiffError;

impl<T: Scalar> Graph<T> {
    /// Batched `op(a[i]) · op(b[i])` over a leading batch axis.
    pub fn bmm(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var, DiffError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(DiffError::Shape(format!(
                "bmm needs matching 3-D, got {:?} {:?}",
                sa, sb
            )));
        }
        let nb = sa[0];
        let (m, k) = if ta { (sa[2], sa[1]) } else { (sa[1], sa[2]) };
        let (k2, n) = if tb { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if k != k2 {
            return Err(DiffError::Shape(format!("bmm inner dims {} vs {}", k, k2)));
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); nb * m * n];
        for i in 0..nb {
            gemm(
                m,
                k,
                n,
                T::one(),
                &av[i * m * k..],
                ta,
                &bv[i * k * n..],
                tb,
                T::zero(),
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        let out = Tensor::new(&[nb, m, n], out)?;
        self.push(
            "bmm",
            out,
            &[a, b],
            Box::new(move |c| {
                let (va, vb, g) = (c.inputs[0].data(), c.inputs[1].data(), c.grad.data());
                let ga = c.needs[0].then(|| {
                    let mut d = vec![T::zero(); nb * m * k];
                    for i in 0..nb {
                        let (gi, bi) = (&g[i * m * n..], &vb[i * k * n..]);
                        let di = &mut d[i * m * k..(i + 1) * m * k];
                        if ta {
                            gemm(k, n, m, T::one(), bi, tb, gi, true, T::zero(), di);
                        } else {
                            gemm(m, n, k, T::one(), gi, false, bi, !tb, T::zero(), di);
                        }
                    }
                    Tensor::new(c.inputs[0].shape(), d).expect("bmm ga")
                });
                let gb = c.needs[1].then(|| {
                    let mut d = vec![T::zero(); nb * k * n];
                    for i in 0..nb {
                        let (gi, ai) = (&g[i * m * n..], &va[i * m * k..]);
                        let di = &mut d[i * k * n..(i + 1) * k * n];
                        if tb {
                            gemm(n, m, k, T::one(), gi, true, ai, ta, T::zero(), di);
                        } else {
                            gemm(k, m, n, T::one(), ai, !ta, gi, false, T::zero(), di);
                        }
                    }
                    Tensor::new(c.inputs[1].shape(), d).expect("bmm gb")
                });
                vec![ga, gb]
            }),
        )
    }

    /// `softmax(Q·Kᵀ/√d)·V` per batch item: `[b,nq,d] × [b,nk,d] × [b,nk,dv] → [b,nq,dv]`.
    pub fn scaled_dot_attention(&mut self, q: Var, k: Var, v: Var) -> Result<Var, DiffError> {
        let (sq, sk, sv) = (
            self.shape(q).to_vec(),
            self.shape(k).to_vec(),
            self.shape(v).to_vec(),
        );
        if sq.len() != 3
            || sk.len() != 3
            || sv.len() != 3
            || sq[2] != sk[2]
            || sk[1] != sv[1]
            || sq[2] == 0
        {
            return Err(DiffError::Shape(format!(
                "attention q {:?} k {:?} v {:?}",
                sq, sk, sv
            )));
        }
        let scores = self.bmm(q, false, k, true)?;
        let scores = self.scale(scores, 1.0 / (sq[2] as f64).sqrt())?;
        let w = self.softmax(scores)?;
        self.bmm(w, false, v, false)
    }
}
