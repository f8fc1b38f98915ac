//! Central finite-difference gradient checker (float64).

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use super::DiffError;

/// Outcome of a check: the worst coordinate and its two estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub max_rel_err: f64,
    /// (input or parameter index, flat coordinate)
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Coordinates whose ±eps interval straddles a kink (see [`Worst::update`]);
    /// they are excluded from `max_rel_err`.
    pub kinks: usize,
}

/// Options shared by both entry points.
#[derive(Clone, Copy, Debug)]
pub struct CheckOpts {
    pub eps: f64,
    /// Denominator floor so near-zero gradients compare absolutely.
    pub floor: f64,
    /// Check at most this many coordinates per tensor (seeded choice).
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for CheckOpts {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            floor: 1e-6,
            max_coords: None,
            seed: 0,
        }
    }
}

/// Errors below this are never attributed to a kink.
const KINK_FLOOR: f64 = 1e-6;

fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

fn coords(len: usize, opts: &CheckOpts, salt: u64) -> Vec<usize> {
    match opts.max_coords {
        Some(m) if m < len => {
            let mut rng = ChaCha8Rng::seed_from_u64(crate::seed::mix(opts.seed, salt));
            let mut v = sample(&mut rng, len, m).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..len).collect(),
    }
}

fn scalar_of(g: &Graph<f64>, v: Var) -> Result<f64, DiffError> {
    let t = g.value(v);
    if t.len() != 1 {
        return Err(DiffError::Shape(format!(
            "grad_check needs a scalar function, got {:?}",
            t.shape()
        )));
    }
    Ok(t.item())
}

struct Worst {
    rep: GradReport,
}

impl Worst {
    fn new() -> Self {
        Self {
            rep: GradReport {
                max_rel_err: 0.0,
                worst: (0, 0),
                analytic: 0.0,
                numeric: 0.0,
                checked: 0,
                kinks: 0,
            },
        }
    }

    /// `f0`, `fp`, `fm` are f at x, x+eps, x−eps. A coordinate counts as a
    /// kink when the analytic value matches one of the one-sided slopes ten
    /// times better than the central difference: the function is piecewise
    /// smooth there and the analytic value is the slope of the piece holding x.
    /// On a smooth function both one-sided slopes sit next to the central one,
    /// so a wrong analytic gradient is never excused this way.
    fn update(
        &mut self,
        which: (usize, usize),
        a: f64,
        (f0, fp, fm): (f64, f64, f64),
        opts: &CheckOpts,
    ) {
        let n = (fp - fm) / (2.0 * opts.eps);
        let e = rel_err(a, n, opts.floor);
        let (dp, dm) = ((fp - f0) / opts.eps, (f0 - fm) / opts.eps);
        if e > KINK_FLOOR && (a - dp).abs().min((a - dm).abs()) <= 0.1 * (a - n).abs() {
            self.rep.kinks += 1;
            return;
        }
        self.rep.checked += 1;
        if e > self.rep.max_rel_err || self.rep.checked == 1 {
            self.rep.max_rel_err = e;
            self.rep.worst = which;
            self.rep.analytic = a;
            self.rep.numeric = n;
        }
    }
}

/// Check `f` with respect to every input tensor.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], opts: CheckOpts) -> Result<GradReport, DiffError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, DiffError>,
{
    let eval = |xs: &[Tensor<f64>]| -> Result<f64, DiffError> {
        let mut g = Graph::<f64>::inference();
        let vars: Vec<Var> = xs.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        scalar_of(&g, out)
    };
    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let f0 = scalar_of(&g, out)?;
    g.backward(out)?;
    let mut worst = Worst::new();
    let mut xs = inputs.to_vec();
    for (ti, v) in vars.iter().enumerate() {
        let analytic = g
            .grad(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[ti].shape()));
        for j in coords(inputs[ti].len(), &opts, ti as u64) {
            let orig = xs[ti].data()[j];
            xs[ti].data_mut()[j] = orig + opts.eps;
            let fp = eval(&xs)?;
            xs[ti].data_mut()[j] = orig - opts.eps;
            let fm = eval(&xs)?;
            xs[ti].data_mut()[j] = orig;
            worst.update((ti, j), analytic.data()[j], (f0, fp, fm), &opts);
        }
    }
    Ok(worst.rep)
}

/// Check `f` with respect to every parameter of `store`.
pub fn grad_check_params<F>(
    f: F,
    store: &ParamStore<f64>,
    opts: CheckOpts,
) -> Result<GradReport, DiffError>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var, DiffError>,
{
    let mut g = Graph::<f64>::new();
    let out = f(&mut g, store)?;
    let f0 = scalar_of(&g, out)?;
    g.backward(out)?;
    let grads: std::collections::HashMap<ParamId, Tensor<f64>> =
        g.param_grads().into_iter().collect();
    let mut worst = Worst::new();
    let mut st = store.clone();
    for id in store.ids() {
        let analytic = grads
            .get(&id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(store.value(id).shape()));
        for j in coords(store.value(id).len(), &opts, id.0 as u64) {
            let orig = st.value(id).data()[j];
            let probe = |d: f64, st: &mut ParamStore<f64>| -> Result<f64, DiffError> {
                st.value_mut(id).data_mut()[j] = orig + d;
                let mut g = Graph::<f64>::inference();
                let o = f(&mut g, st)?;
                scalar_of(&g, o)
            };
            let fp = probe(opts.eps, &mut st)?;
            let fm = probe(-opts.eps, &mut st)?;
            st.value_mut(id).data_mut()[j] = orig;
            worst.update((id.0, j), analytic.data()[j], (f0, fp, fm), &opts);
        }
    }
    Ok(worst.rep)
}
