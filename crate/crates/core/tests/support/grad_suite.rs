//! Finite-difference cases shared by the gradient tests and the acceptance run.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use textcue::diff::gradcheck::{grad_check, grad_check_params, CheckOpts, GradReport};
use textcue::diff::{DiffError, Graph, LstmWeights, ParamStore, SegmentGeometry, Tensor, Var};
use textcue::nets::{
    pit_loss, tpe_loss, tsr_loss, SepConfig, SepNet, TpeConfig, TpeNet, TsrConfig, TsrNet,
};

pub const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
pub const OP_TOL: f64 = 1e-4;
pub const TPE_TOL: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct Outcome {
    pub name: String,
    /// Worst relative error over all seeds.
    pub max_rel_err: f64,
    pub tol: f64,
    pub checked: usize,
    pub kinks: usize,
    /// Report of the worst seed.
    pub worst: Option<GradReport>,
}

impl Outcome {
    /// Within tolerance, with at most 1% of coordinates set aside as kinks.
    pub fn ok(&self) -> bool {
        self.max_rel_err <= self.tol && self.kinks * 100 <= self.checked + self.kinks
    }
}

fn fold(name: &str, tol: f64, reports: impl IntoIterator<Item = GradReport>) -> Outcome {
    let mut o = Outcome {
        name: name.to_string(),
        max_rel_err: 0.0,
        tol,
        checked: 0,
        kinks: 0,
        worst: None,
    };
    for r in reports {
        o.checked += r.checked;
        o.kinks += r.kinks;
        if o.worst.is_none() || r.max_rel_err > o.max_rel_err {
            o.max_rel_err = r.max_rel_err;
            o.worst = Some(r);
        }
    }
    o
}

fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Values bounded away from zero, for ops with a kink there.
fn rand_off_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

/// Reduce any output to a scalar through a fixed random weighting.
pub fn probe(g: &mut Graph<f64>, y: Var) -> Result<Var, DiffError> {
    let shape = g.shape(y).to_vec();
    let w = Tensor::from_fn(&shape, |i| ((i as f64 + 1.0) * 0.618).sin());
    let w = g.input(w);
    let m = g.mul(y, w)?;
    g.sum_all(m)
}

fn check<F>(name: &str, f: F, make: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>) -> Outcome
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, DiffError> + Copy,
{
    fold(
        name,
        OP_TOL,
        SEEDS.iter().map(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inputs = make(&mut rng);
            grad_check(
                f,
                &inputs,
                CheckOpts {
                    seed,
                    ..CheckOpts::default()
                },
            )
            .unwrap_or_else(|e| panic!("{name}: {e}"))
        }),
    )
}

pub fn elementwise() -> Vec<Outcome> {
    vec![
        check(
            "add",
            |g, v| {
                let y = g.add(v[0], v[1])?;
                probe(g, y)
            },
            |r| vec![rand_t(&[3, 4], r), rand_t(&[3, 4], r)],
        ),
        check(
            "sub",
            |g, v| {
                let y = g.sub(v[0], v[1])?;
                probe(g, y)
            },
            |r| vec![rand_t(&[3, 4], r), rand_t(&[3, 4], r)],
        ),
        check(
            "mul",
            |g, v| {
                let y = g.mul(v[0], v[1])?;
                probe(g, y)
            },
            |r| vec![rand_t(&[3, 4], r), rand_t(&[3, 4], r)],
        ),
        check(
            "scale",
            |g, v| {
                let y = g.scale(v[0], -1.7)?;
                probe(g, y)
            },
            |r| vec![rand_t(&[5], r)],
        ),
        check(
            "add_scalar",
            |g, v| {
                let y = g.add_scalar(v[0], 0.3)?;
                probe(g, y)
            },
            |r| vec![rand_t(&[5], r)],
        ),
        check(
            "relu",
            |g, v| {
                let y = g.relu(v[0])?;
                probe(g, y)
            },
            |r| vec![rand_off_zero(&[4, 3], r)],
        ),
        check(
            "sigmoid",
            |g, v| {
                let y = g.sigmoid(v[0])?;
                probe(g, y)
            },
            |r| vec![rand_t(&[4, 3], r)],
        ),
        check(
            "tanh",
            |g, v| {
                let y = g.tanh(v[0])?;
                probe(g, y)
            },
            |r| vec![rand_t(&[4, 3], r)],
        ),
    ]
}

pub fn shapes() -> Vec<Outcome> {
    vec![
        check(
            "reshape",
            |g, v| {
                let y = g.reshape(v[0], &[6, 2])?;
                probe(g, y)
            },
            |r| vec![rand_t(&[3, 4], r)],
        ),
        check(
            "permute",
            |g, v| {
                let y = g.permute(v[0], &[2, 0, 1])?;
                probe(g, y)
            },
            |r| vec![rand_t(&[2, 3, 4], r)],
        ),
        check(
            "narrow",
            |g, v| {
                let y = g.narrow(v[0], 1, 1, 2)?;
                probe(g, y)
            },
            |r| vec![rand_t(&[2, 4, 3], r)],
        ),
        check(
            "concat",
            |g, v| {
                let y = g.concat(&[v[0], v[1]], 1)?;
                probe(g, y)
            },
            |r| vec![rand_t(&[2, 3, 2], r), rand_t(&[2, 1, 2], r)],
        ),
    ]
}

pub fn products() -> Vec<Outcome> {
    let mut out = Vec::new();
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let sa: Vec<usize> = if ta { vec![4, 3] } else { vec![3, 4] };
        let sb: Vec<usize> = if tb { vec![5, 4] } else { vec![4, 5] };
        let (ba, bb) = ([&[2][..], &sa[..]].concat(), [&[2][..], &sb[..]].concat());
        out.push(check_mm(
            &format!("matmul {ta}/{tb}"),
            ta,
            tb,
            false,
            &sa,
            &sb,
        ));
        out.push(check_mm(&format!("bmm {ta}/{tb}"), ta, tb, true, &ba, &bb));
    }
    out.extend([
        check(
            "linear",
            |g, v| {
                let y = g.linear(v[0], v[1], Some(v[2]))?;
                probe(g, y)
            },
            |r| vec![rand_t(&[2, 3, 4], r), rand_t(&[5, 4], r), rand_t(&[5], r)],
        ),
        check(
            "sum_all",
            |g, v| {
                let y = g.sum_all(v[0])?;
                probe(g, y)
            },
            |r| vec![rand_t(&[3, 4], r)],
        ),
        check(
            "mean_all",
            |g, v| {
                let y = g.mean_all(v[0])?;
                probe(g, y)
            },
            |r| vec![rand_t(&[3, 4], r)],
        ),
        check(
            "mean_axis",
            |g, v| {
                let y = g.mean_axis(v[0], 1)?;
                probe(g, y)
            },
            |r| vec![rand_t(&[2, 3, 4], r)],
        ),
        check(
            "softmax",
            |g, v| {
                let y = g.softmax(v[0])?;
                probe(g, y)
            },
            |r| vec![rand_t(&[3, 5], r)],
        ),
    ]);
    out
}

fn check_mm(name: &str, ta: bool, tb: bool, batched: bool, sa: &[usize], sb: &[usize]) -> Outcome {
    fold(
        name,
        OP_TOL,
        SEEDS.iter().map(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inputs = vec![rand_t(sa, &mut rng), rand_t(sb, &mut rng)];
            grad_check(
                |g, v| {
                    let y = if batched {
                        g.bmm(v[0], ta, v[1], tb)?
                    } else {
                        g.matmul(v[0], ta, v[1], tb)?
                    };
                    probe(g, y)
                },
                &inputs,
                CheckOpts {
                    seed,
                    ..CheckOpts::default()
                },
            )
            .unwrap_or_else(|e| panic!("{name}: {e}"))
        }),
    )
}

pub fn convolution_and_norms() -> Vec<Outcome> {
    let mut out = Vec::new();
    for (stride, pl, pr) in [(1, 0, 0), (2, 0, 0), (1, 1, 2), (3, 2, 1)] {
        let name = format!("conv1d s{stride} p{pl}/{pr}");
        out.push(fold(
            &name,
            OP_TOL,
            SEEDS.iter().map(|&seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs = vec![
                    rand_t(&[2, 9, 3], &mut rng),
                    rand_t(&[4, 4, 3], &mut rng),
                    rand_t(&[4], &mut rng),
                ];
                grad_check(
                    |g, v| {
                        let y = g.conv1d(v[0], v[1], Some(v[2]), stride, pl, pr)?;
                        probe(g, y)
                    },
                    &inputs,
                    CheckOpts {
                        seed,
                        ..CheckOpts::default()
                    },
                )
                .unwrap_or_else(|e| panic!("{name}: {e}"))
            }),
        ));
    }
    out.extend([
        check(
            "layer_norm",
            |g, v| {
                let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
                probe(g, y)
            },
            |r| vec![rand_t(&[3, 2, 6], r), rand_t(&[6], r), rand_t(&[6], r)],
        ),
        check(
            "global_norm",
            |g, v| {
                let y = g.global_norm(v[0], v[1], v[2], 1e-5)?;
                probe(g, y)
            },
            |r| vec![rand_t(&[2, 4, 3], r), rand_t(&[3], r), rand_t(&[3], r)],
        ),
        check(
            "film",
            |g, v| {
                let y = g.film(v[0], v[1], v[2])?;
                probe(g, y)
            },
            |r| {
                vec![
                    rand_t(&[2, 5, 3], r),
                    rand_t(&[2, 3], r),
                    rand_t(&[2, 3], r),
                ]
            },
        ),
    ]);
    out
}

pub fn framing() -> Vec<Outcome> {
    vec![
        check(
            "overlap_add",
            |g, v| {
                let y = g.overlap_add(v[0], 3)?;
                probe(g, y)
            },
            |r| vec![rand_t(&[2, 5, 6], r)],
        ),
        check(
            "segment",
            |g, v| {
                let (y, _) = g.segment(v[0], 4)?;
                probe(g, y)
            },
            |r| vec![rand_t(&[2, 11, 3], r)],
        ),
        check(
            "aggregate",
            |g, v| {
                let geo = SegmentGeometry::new(11, 4)?;
                let y = g.aggregate(v[0], geo)?;
                probe(g, y)
            },
            |r| vec![rand_t(&[2, 4, 5, 3], r)],
        ),
    ]
}

pub fn recurrent_and_attention() -> Vec<Outcome> {
    vec![
        // T=5, C_in=3, H=4, batch 2
        check(
            "blstm",
            |g, v| {
                let f = LstmWeights {
                    w_ih: v[1],
                    w_hh: v[2],
                    b: v[3],
                };
                let b = LstmWeights {
                    w_ih: v[4],
                    w_hh: v[5],
                    b: v[6],
                };
                let y = g.blstm(v[0], f, b)?;
                probe(g, y)
            },
            |r| {
                vec![
                    rand_t(&[5, 2, 3], r),
                    rand_t(&[16, 3], r),
                    rand_t(&[16, 4], r),
                    rand_t(&[16], r),
                    rand_t(&[16, 3], r),
                    rand_t(&[16, 4], r),
                    rand_t(&[16], r),
                ]
            },
        ),
        check(
            "attention",
            |g, v| {
                let y = g.scaled_dot_attention(v[0], v[1], v[2])?;
                probe(g, y)
            },
            |r| {
                vec![
                    rand_t(&[2, 3, 4], r),
                    rand_t(&[2, 5, 4], r),
                    rand_t(&[2, 5, 6], r),
                ]
            },
        ),
    ]
}

pub fn losses() -> Vec<Outcome> {
    vec![
        check(
            "neg_si_sdr",
            |g, v| {
                let s = g.si_sdr(v[0], v[1])?;
                let m = g.mean_all(s)?;
                g.scale(m, -1.0)
            },
            |r| {
                let refr = rand_t(&[3, 32], r);
                let est = Tensor::from_fn(&[3, 32], |i| {
                    refr.data()[i] * 0.8 + r.random_range(-0.5..0.5)
                });
                vec![est, refr]
            },
        ),
        check(
            "bce",
            |g, v| {
                let p = g.sigmoid(v[0])?;
                g.bce_mean(p, &[1.0, 0.0, 0.0, 1.0, 0.0])
            },
            |r| vec![rand_t(&[5], r)],
        ),
    ]
}

pub fn all_ops() -> Vec<Outcome> {
    [
        elementwise(),
        shapes(),
        products(),
        convolution_and_norms(),
        framing(),
        recurrent_and_attention(),
        losses(),
    ]
    .concat()
}

/// Replace every parameter by a random draw so no gate or weight sits at a
/// special initial value.
fn randomize(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng, scale: f64) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let shape = store.value(id).shape().to_vec();
        store
            .set(
                id,
                Tensor::from_fn(&shape, |_| rng.random_range(-scale..scale)),
            )
            .unwrap();
    }
}

pub fn tiny_tpe_config() -> TpeConfig {
    TpeConfig {
        d: 8,
        b: 4,
        hidden: 3,
        l: 4,
        r: 1,
        k: 8,
        n: 1,
        d_emb: 6,
    }
}

/// 34 samples give 16 latent frames at L=4.
pub const TINY_SAMPLES: usize = 34;

pub fn tiny_tpe() -> Outcome {
    let cfg = tiny_tpe_config();
    fold(
        "tiny tpe",
        TPE_TOL,
        SEEDS.iter().map(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::<f64>::new(seed);
            let net = TpeNet::build(&cfg, &mut store).unwrap();
            randomize(&mut store, &mut rng, 0.6);
            let x = rand_t(&[2, TINY_SAMPLES], &mut rng);
            let s = Tensor::from_fn(&[2, TINY_SAMPLES], |i| {
                x.data()[i] * 0.5 + rng.random_range(-0.3..0.3)
            });
            let p = rand_t(&[2, 6], &mut rng);
            grad_check_params(
                |g: &mut Graph<f64>, st: &ParamStore<f64>| {
                    let (xv, pv, sv) = (g.input(x.clone()), g.input(p.clone()), g.input(s.clone()));
                    let y = net.forward(g, st, xv, pv)?;
                    tpe_loss(g, y, sv)
                },
                &store,
                CheckOpts {
                    seed,
                    ..CheckOpts::default()
                },
            )
            .unwrap()
        }),
    )
}

pub fn tiny_separator() -> Outcome {
    let cfg = SepConfig {
        d: 8,
        b: 4,
        hidden: 3,
        l: 4,
        r: 1,
        k: 8,
        streams: 2,
    };
    fold(
        "tiny separator + pit",
        TPE_TOL,
        SEEDS.iter().map(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::<f64>::new(seed);
            let net = SepNet::build(&cfg, &mut store).unwrap();
            randomize(&mut store, &mut rng, 0.6);
            let x = rand_t(&[2, TINY_SAMPLES], &mut rng);
            let refs = rand_t(&[2, 2, TINY_SAMPLES], &mut rng);
            grad_check_params(
                |g: &mut Graph<f64>, st: &ParamStore<f64>| {
                    let (xv, rv) = (g.input(x.clone()), g.input(refs.clone()));
                    let y = net.forward(g, st, xv)?;
                    Ok(pit_loss(g, y, rv)?.0)
                },
                &store,
                CheckOpts {
                    seed,
                    ..CheckOpts::default()
                },
            )
            .unwrap()
        }),
    )
}

pub fn matcher() -> Outcome {
    let cfg = TsrConfig {
        dim: 5,
        hidden: 7,
        heads: 1,
        k_neg: 0,
    };
    fold(
        "matcher + bce",
        OP_TOL,
        SEEDS.iter().map(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::<f64>::new(seed);
            let net = TsrNet::build(&cfg, &mut store).unwrap();
            randomize(&mut store, &mut rng, 0.5);
            let text = rand_t(&[2, 3, 5], &mut rng);
            let cands = rand_t(&[6, 4, 5], &mut rng);
            let labels = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
            grad_check_params(
                |g: &mut Graph<f64>, st: &ParamStore<f64>| {
                    let (t, c) = (g.input(text.clone()), g.input(cands.clone()));
                    let out = net.match_logits(g, st, t, c)?;
                    tsr_loss(g, out.probs, &labels)
                },
                &store,
                CheckOpts {
                    seed,
                    ..CheckOpts::default()
                },
            )
            .unwrap()
        }),
    )
}

pub fn all_models() -> Vec<Outcome> {
    vec![tiny_tpe(), tiny_separator(), matcher()]
}
