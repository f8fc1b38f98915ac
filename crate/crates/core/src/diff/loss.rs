//! Training objectives: scale-invariant SDR and binary cross-entropy.

use super::graph::{Graph, Var};
use super::scalar::Scalar;
use super::tensor::Tensor;
use super::DiffError;

/// Energy guard for every ratio.
pub const EPS: f64 = 1e-8;
/// Clamp bound for SI-SDR and SDR in dB.
pub const DB_CLAMP: f64 = 60.0;
/// Probability clamp for BCE.
pub const BCE_EPS: f64 = 1e-7;

fn centered<T: Scalar>(v: &[T]) -> Vec<T> {
    let m = v.iter().copied().sum::<T>() / T::from_usize(v.len()).unwrap();
    v.iter().map(|&x| x - m).collect()
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Unclamped SI-SDR in dB of one zero-meaned pair, with the pieces needed
/// for the gradient.
struct SiParts<T> {
    e: Vec<T>,
    r: Vec<T>,
    a: T,
    p: T,
    rr: T,
    num: T,
    den: T,
    db: T,
}

fn si_parts<T: Scalar>(est: &[T], refr: &[T]) -> SiParts<T> {
    let eps = T::from_f64c(EPS);
    let e = centered(est);
    let r = centered(refr);
    let p = dot(&e, &r);
    let rr = dot(&r, &r);
    let a = p / (rr + eps);
    let num = a * a * rr;
    let den = e
        .iter()
        .zip(&r)
        .map(|(&ev, &rv)| (ev - a * rv) * (ev - a * rv))
        .sum::<T>();
    let db = T::from_f64c(10.0) * ((num + eps) / (den + eps)).log10();
    SiParts {
        e,
        r,
        a,
        p,
        rr,
        num,
        den,
        db,
    }
}

impl<T: Scalar> Graph<T> {
    /// Row-wise SI-SDR in dB: `[n, T] × [n, T] → [n]`, clamped to ±60.
    pub fn si_sdr(&mut self, est: Var, refr: Var) -> Result<Var, DiffError> {
        let (se, sr) = (self.shape(est).to_vec(), self.shape(refr).to_vec());
        if se.len() != 2 || se != sr || se[1] == 0 {
            return Err(DiffError::Shape(format!("si_sdr of {:?} vs {:?}", se, sr)));
        }
        let (n, t) = (se[0], se[1]);
        let (ev, rv) = (self.value(est).data(), self.value(refr).data());
        let lim = T::from_f64c(DB_CLAMP);
        let out: Vec<T> = (0..n)
            .map(|i| {
                let d = si_parts(&ev[i * t..(i + 1) * t], &rv[i * t..(i + 1) * t]).db;
                d.max(-lim).min(lim)
            })
            .collect();
        let out = Tensor::new(&[n], out)?;
        self.push(
            "si_sdr",
            out,
            &[est, refr],
            Box::new(move |c| {
                let eps = T::from_f64c(EPS);
                let k = T::from_f64c(10.0 / std::f64::consts::LN_10);
                let two = T::from_f64c(2.0);
                let mut ge = vec![T::zero(); n * t];
                let mut gr = vec![T::zero(); n * t];
                for i in 0..n {
                    let sp = si_parts(
                        &c.inputs[0].data()[i * t..(i + 1) * t],
                        &c.inputs[1].data()[i * t..(i + 1) * t],
                    );
                    if sp.db.abs() >= lim {
                        continue;
                    }
                    let up = c.grad.data()[i];
                    let cn = k / (sp.num + eps);
                    let cd = k / (sp.den + eps);
                    // s_t = a·r, res = e − s_t
                    let st: Vec<T> = sp.r.iter().map(|&rv| sp.a * rv).collect();
                    let res: Vec<T> = sp.e.iter().zip(&st).map(|(&ev, &s)| ev - s).collect();
                    let g_st: Vec<T> = st
                        .iter()
                        .zip(&res)
                        .map(|(&s, &r)| two * (s * cn + r * cd))
                        .collect();
                    let mut g_e: Vec<T> = res.iter().map(|&r| -two * r * cd).collect();
                    let g_a = dot(&g_st, &sp.r);
                    let g_p = g_a / (sp.rr + eps);
                    let g_rr = -g_a * sp.p / ((sp.rr + eps) * (sp.rr + eps));
                    let mut g_r: Vec<T> = g_st.iter().map(|&g| sp.a * g).collect();
                    for j in 0..t {
                        g_e[j] = g_e[j] + g_p * sp.r[j];
                        g_r[j] = g_r[j] + g_p * sp.e[j] + two * sp.r[j] * g_rr;
                    }
                    let me = g_e.iter().copied().sum::<T>() / T::from_usize(t).unwrap();
                    let mr = g_r.iter().copied().sum::<T>() / T::from_usize(t).unwrap();
                    for j in 0..t {
                        ge[i * t + j] = (g_e[j] - me) * up;
                        gr[i * t + j] = (g_r[j] - mr) * up;
                    }
                }
                vec![
                    Some(Tensor::new(&[n, t], ge).expect("si_sdr ge")),
                    Some(Tensor::new(&[n, t], gr).expect("si_sdr gr")),
                ]
            }),
        )
    }

    /// Mean binary cross-entropy of probabilities `p` against fixed labels.
    pub fn bce_mean(&mut self, p: Var, labels: &[T]) -> Result<Var, DiffError> {
        let pv = self.value(p).data();
        if pv.len() != labels.len() || pv.is_empty() {
            return Err(DiffError::Shape(format!(
                "bce: {} probabilities, {} labels",
                pv.len(),
                labels.len()
            )));
        }
        let eps = T::from_f64c(BCE_EPS);
        let hi = T::one() - eps;
        let nn = T::from_usize(pv.len()).unwrap();
        let loss = pv
            .iter()
            .zip(labels)
            .map(|(&q, &y)| {
                let q = q.max(eps).min(hi);
                -(y * q.ln() + (T::one() - y) * (T::one() - q).ln())
            })
            .sum::<T>()
            / nn;
        let labels = labels.to_vec();
        self.push(
            "bce",
            Tensor::scalar(loss),
            &[p],
            Box::new(move |c| {
                let up = c.grad.item() / nn;
                let g = c.inputs[0].data().iter().zip(&labels).map(|(&q, &y)| {
                    if q < eps || q > hi {
                        T::zero()
                    } else {
                        up * ((T::one() - y) / (T::one() - q) - y / q)
                    }
                });
                vec![Some(
                    Tensor::new(c.inputs[0].shape(), g.collect()).expect("bce grad"),
                )]
            }),
        )
    }
}

/// SI-SDR in dB of plain slices (no tape), clamped to ±60.
pub fn si_sdr_value(est: &[f64], refr: &[f64]) -> f64 {
    si_parts(est, refr).db.clamp(-DB_CLAMP, DB_CLAMP)
}
