//! Finite-difference checks for every differentiable op and the networks.

mod support;

use support::grad_suite::{self as suite, Outcome};
use textcue::diff::gradcheck::{grad_check, CheckOpts};
use textcue::diff::Tensor;

fn assert_all(outcomes: Vec<Outcome>) {
    for o in &outcomes {
        assert!(o.checked > 0, "{}: nothing checked", o.name);
        assert!(o.ok(), "{o:?}");
    }
}

#[test]
fn elementwise_ops() {
    assert_all(suite::elementwise());
}

#[test]
fn shape_ops() {
    assert_all(suite::shapes());
}

#[test]
fn products_and_reductions() {
    assert_all(suite::products());
}

#[test]
fn convolution_and_normalization() {
    assert_all(suite::convolution_and_norms());
}

#[test]
fn framing_ops() {
    assert_all(suite::framing());
}

#[test]
fn blstm_and_attention() {
    assert_all(suite::recurrent_and_attention());
}

#[test]
fn loss_gradients() {
    assert_all(suite::losses());
}

#[test]
fn tiny_tpe_end_to_end() {
    assert_eq!(
        suite::tiny_tpe_config().core().frames(suite::TINY_SAMPLES),
        16
    );
    let o = suite::tiny_tpe();
    assert!(o.checked > 500, "{o:?}");
    assert_all(vec![o]);
}

#[test]
fn tiny_separator_with_pit() {
    assert_all(vec![suite::tiny_separator()]);
}

#[test]
fn matcher_block_and_bce() {
    assert_all(vec![suite::matcher()]);
}

#[test]
fn harness_detects_a_wrong_gradient() {
    use textcue::diff::Scalar;
    let x = Tensor::from_fn(&[6], |i| 0.3 + i as f64 * 0.2);
    let r = grad_check(
        |g, v| {
            let sq = g.mul(v[0], v[0])?;
            let s = g.sum_all(sq)?;
            // forward value unchanged, gradient scaled by 1.1
            let up = g.scale(s, 1.1)?;
            let detached = g.input(Tensor::scalar(
                <f64 as Scalar>::from_f64c(-0.1) * g.value(s).item(),
            ));
            g.add(up, detached)
        },
        &[x],
        CheckOpts::default(),
    )
    .unwrap();
    assert!(r.max_rel_err >= 0.05, "{r:?}");
}
