//! Bidirectional LSTM over time-major input `[S, N, C]`.
//!
//! Gate order inside the `4H` axis is input, forget, cell, output.

use super::graph::{sigmoid, Graph, Var};
use super::scalar::{gemm, Scalar};
use super::tensor::Tensor;
use super::DiffError;

/// Per-direction weights: `w_ih [4H, C]`, `w_hh [4H, H]`, `b [4H]`.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    pub w_ih: Var,
    pub w_hh: Var,
    pub b: Var,
}

struct DirTrace<T> {
    /// gate activations per time index, `[S·N, 4H]`
    act: Vec<T>,
    /// cell state per time index, `[S·N, H]`
    cell: Vec<T>,
}

fn steps(s: usize, reverse: bool) -> Box<dyn Iterator<Item = usize>> {
    if reverse {
        Box::new((0..s).rev())
    } else {
        Box::new(0..s)
    }
}

#[allow(clippy::too_many_arguments)]
fn run_direction<T: Scalar>(
    x: &[T],
    (s, n, c, h): (usize, usize, usize, usize),
    w_ih: &[T],
    w_hh: &[T],
    b: &[T],
    reverse: bool,
    out: &mut [T],
    col: usize,
) -> DirTrace<T> {
    let g4 = 4 * h;
    let mut act = vec![T::zero(); s * n * g4];
    gemm(
        s * n,
        c,
        g4,
        T::one(),
        x,
        false,
        w_ih,
        true,
        T::zero(),
        &mut act,
    );
    for row in act.chunks_exact_mut(g4) {
        for (a, &bb) in row.iter_mut().zip(b) {
            *a = *a + bb;
        }
    }
    let mut cell = vec![T::zero(); s * n * h];
    let mut h_prev = vec![T::zero(); n * h];
    let mut c_prev = vec![T::zero(); n * h];
    for t in steps(s, reverse) {
        let pre = &mut act[t * n * g4..(t + 1) * n * g4];
        gemm(
            n,
            h,
            g4,
            T::one(),
            &h_prev,
            false,
            w_hh,
            true,
            T::one(),
            pre,
        );
        for bi in 0..n {
            let p = &mut pre[bi * g4..(bi + 1) * g4];
            for j in 0..h {
                let ig = sigmoid(p[j]);
                let fg = sigmoid(p[h + j]);
                let gg = p[2 * h + j].tanh();
                let og = sigmoid(p[3 * h + j]);
                p[j] = ig;
                p[h + j] = fg;
                p[2 * h + j] = gg;
                p[3 * h + j] = og;
                let cv = fg * c_prev[bi * h + j] + ig * gg;
                let hv = og * cv.tanh();
                cell[(t * n + bi) * h + j] = cv;
                c_prev[bi * h + j] = cv;
                h_prev[bi * h + j] = hv;
                out[(t * n + bi) * 2 * h + col + j] = hv;
            }
        }
    }
    DirTrace { act, cell }
}

struct DirGrads<T> {
    dx: Vec<T>,
    dw_ih: Vec<T>,
    dw_hh: Vec<T>,
    db: Vec<T>,
}

#[allow(clippy::too_many_arguments)]
fn back_direction<T: Scalar>(
    x: &[T],
    (s, n, c, h): (usize, usize, usize, usize),
    w_ih: &[T],
    w_hh: &[T],
    trace: &DirTrace<T>,
    out: &[T],
    gout: &[T],
    reverse: bool,
    col: usize,
) -> DirGrads<T> {
    let g4 = 4 * h;
    let order: Vec<usize> = steps(s, reverse).collect();
    let mut dpre = vec![T::zero(); s * n * g4];
    // hidden state that fed each time index, stacked for the weight GEMM
    let mut h_in = vec![T::zero(); s * n * h];
    for w in 1..order.len() {
        let (t, tp) = (order[w], order[w - 1]);
        for bi in 0..n {
            for j in 0..h {
                h_in[(t * n + bi) * h + j] = out[(tp * n + bi) * 2 * h + col + j];
            }
        }
    }
    let mut dh_next = vec![T::zero(); n * h];
    let mut dc_next = vec![T::zero(); n * h];
    for w in (0..order.len()).rev() {
        let t = order[w];
        let tp = if w > 0 { Some(order[w - 1]) } else { None };
        for bi in 0..n {
            let a = &trace.act[(t * n + bi) * g4..(t * n + bi + 1) * g4];
            let d = &mut dpre[(t * n + bi) * g4..(t * n + bi + 1) * g4];
            for j in 0..h {
                let (ig, fg, gg, og) = (a[j], a[h + j], a[2 * h + j], a[3 * h + j]);
                let cv = trace.cell[(t * n + bi) * h + j];
                let cp = tp.map_or(T::zero(), |tp| trace.cell[(tp * n + bi) * h + j]);
                let dh = gout[(t * n + bi) * 2 * h + col + j] + dh_next[bi * h + j];
                let tc = cv.tanh();
                let dov = dh * tc;
                let dc = dh * og * (T::one() - tc * tc) + dc_next[bi * h + j];
                dc_next[bi * h + j] = dc * fg;
                d[j] = dc * gg * ig * (T::one() - ig);
                d[h + j] = dc * cp * fg * (T::one() - fg);
                d[2 * h + j] = dc * ig * (T::one() - gg * gg);
                d[3 * h + j] = dov * og * (T::one() - og);
            }
        }
        let d = &dpre[t * n * g4..(t + 1) * n * g4];
        gemm(
            n,
            g4,
            h,
            T::one(),
            d,
            false,
            w_hh,
            false,
            T::zero(),
            &mut dh_next,
        );
    }
    let mut dx = vec![T::zero(); s * n * c];
    gemm(
        s * n,
        g4,
        c,
        T::one(),
        &dpre,
        false,
        w_ih,
        false,
        T::zero(),
        &mut dx,
    );
    let mut dw_ih = vec![T::zero(); g4 * c];
    gemm(
        g4,
        s * n,
        c,
        T::one(),
        &dpre,
        true,
        x,
        false,
        T::zero(),
        &mut dw_ih,
    );
    let mut dw_hh = vec![T::zero(); g4 * h];
    gemm(
        g4,
        s * n,
        h,
        T::one(),
        &dpre,
        true,
        &h_in,
        false,
        T::zero(),
        &mut dw_hh,
    );
    let mut db = vec![T::zero(); g4];
    for row in dpre.chunks_exact(g4) {
        for (o, &v) in db.iter_mut().zip(row) {
            *o = *o + v;
        }
    }
    DirGrads {
        dx,
        dw_ih,
        dw_hh,
        db,
    }
}

impl<T: Scalar> Graph<T> {
    /// Bidirectional LSTM: `[S, N, C]` → `[S, N, 2H]`, forward direction in
    /// the first `H` output channels.
    pub fn blstm(&mut self, x: Var, fwd: LstmWeights, bwd: LstmWeights) -> Result<Var, DiffError> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 || xs[0] == 0 {
            return Err(DiffError::Shape(format!(
                "blstm expects non-empty [S, N, C], got {:?}",
                xs
            )));
        }
        let (s, n, c) = (xs[0], xs[1], xs[2]);
        let h = self.shape(fwd.w_hh).get(1).copied().unwrap_or(0);
        for wts in [fwd, bwd] {
            if self.shape(wts.w_ih) != [4 * h, c]
                || self.shape(wts.w_hh) != [4 * h, h]
                || self.shape(wts.b) != [4 * h]
                || h == 0
            {
                return Err(DiffError::Shape(format!(
                    "blstm weights {:?}/{:?}/{:?} for input width {}",
                    self.shape(wts.w_ih),
                    self.shape(wts.w_hh),
                    self.shape(wts.b),
                    c
                )));
            }
        }
        let dims = (s, n, c, h);
        let mut out = vec![T::zero(); s * n * 2 * h];
        let xv = self.value(x).data();
        let tf = {
            let (a, b2, bb) = (
                self.value(fwd.w_ih),
                self.value(fwd.w_hh),
                self.value(fwd.b),
            );
            run_direction(xv, dims, a.data(), b2.data(), bb.data(), false, &mut out, 0)
        };
        let tb = {
            let (a, b2, bb) = (
                self.value(bwd.w_ih),
                self.value(bwd.w_hh),
                self.value(bwd.b),
            );
            run_direction(xv, dims, a.data(), b2.data(), bb.data(), true, &mut out, h)
        };
        let out = Tensor::new(&[s, n, 2 * h], out)?;
        self.push(
            "blstm",
            out,
            &[x, fwd.w_ih, fwd.w_hh, fwd.b, bwd.w_ih, bwd.w_hh, bwd.b],
            Box::new(move |ctx| {
                let xv = ctx.inputs[0].data();
                let (ov, g) = (ctx.out.data(), ctx.grad.data());
                let gf = back_direction(
                    xv,
                    dims,
                    ctx.inputs[1].data(),
                    ctx.inputs[2].data(),
                    &tf,
                    ov,
                    g,
                    false,
                    0,
                );
                let gb = back_direction(
                    xv,
                    dims,
                    ctx.inputs[4].data(),
                    ctx.inputs[5].data(),
                    &tb,
                    ov,
                    g,
                    true,
                    h,
                );
                let dx: Vec<T> = gf.dx.iter().zip(&gb.dx).map(|(&a, &b)| a + b).collect();
                let t = |sh: &[usize], v: Vec<T>| Some(Tensor::new(sh, v).expect("blstm grad"));
                vec![
                    t(&[s, n, c], dx),
                    t(&[4 * h, c], gf.dw_ih),
                    t(&[4 * h, h], gf.dw_hh),
                    t(&[4 * h], gf.db),
                    t(&[4 * h, c], gb.dw_ih),
                    t(&[4 * h, h], gb.dw_hh),
                    t(&[4 * h], gb.db),
                ]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn weights(g: &mut Graph<f64>, c: usize, h: usize, scale: f64, off: usize) -> LstmWeights {
        let f = |i: usize| ((i + off) as f64 * 0.731).sin() * scale;
        LstmWeights {
            w_ih: g.input(Tensor::from_fn(&[4 * h, c], f)),
            w_hh: g.input(Tensor::from_fn(&[4 * h, h], |i| f(i + 1000))),
            b: g.input(Tensor::zeros(&[4 * h])),
        }
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_output() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::zeros(&[6, 2, 3]));
        let (f, b) = (weights(&mut g, 3, 4, 0.5, 0), weights(&mut g, 3, 4, 0.5, 7));
        let y = g.blstm(x, f, b).unwrap();
        assert_eq!(g.shape(y), &[6, 2, 8]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_directions_agree_with_shared_weights() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_fn(&[1, 3, 2], |i| i as f64 * 0.3 - 0.4));
        let w = weights(&mut g, 2, 5, 0.7, 3);
        let y = g.blstm(x, w, w).unwrap();
        for row in g.value(y).data().chunks(10) {
            assert_eq!(&row[..5], &row[5..]);
        }
    }

    #[test]
    fn matches_direct_cell_recurrence() {
        // scalar oracle: one hidden unit, one channel, forward direction
        let (wi, wh) = ([0.3, -0.2, 0.5, 0.8], [0.1, 0.4, -0.6, 0.2]);
        let xs = [0.5, -1.0, 0.25];
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::new(&[3, 1, 1], xs.to_vec()).unwrap());
        let fw = LstmWeights {
            w_ih: g.input(Tensor::new(&[4, 1], wi.to_vec()).unwrap()),
            w_hh: g.input(Tensor::new(&[4, 1], wh.to_vec()).unwrap()),
            b: g.input(Tensor::new(&[4], vec![0.0, 1.0, 0.0, 0.0]).unwrap()),
        };
        let y = g.blstm(x, fw, fw).unwrap();
        let sg = |v: f64| 1.0 / (1.0 + (-v).exp());
        let (mut hh, mut cc) = (0.0, 0.0);
        for (t, &xv) in xs.iter().enumerate() {
            let i = sg(wi[0] * xv + wh[0] * hh);
            let f = sg(wi[1] * xv + wh[1] * hh + 1.0);
            let gg = (wi[2] * xv + wh[2] * hh).tanh();
            let o = sg(wi[3] * xv + wh[3] * hh);
            cc = f * cc + i * gg;
            hh = o * cc.tanh();
            assert!((g.value(y).data()[t * 2] - hh).abs() < 1e-14);
        }
    }
}
