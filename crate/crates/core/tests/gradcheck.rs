mod common;

use common::gradcheck::{max_rel_error, ModelCheck};
use common::gradcheck_suite::*;
use lvae_core::noise::{stream_rng, Stream};
use lvae_core::tensor::{Graph, Tensor, Var};

fn assert_ops(results: OpResults) {
    for (name, worst) in results {
        assert!(worst < OP_TOL, "{name}: max relative error {worst:e}");
    }
}

#[test]
fn matmul() {
    assert_ops(matmul_cases());
}

#[test]
fn binary_elementwise() {
    assert_ops(binary_cases());
}

#[test]
fn unary_elementwise() {
    assert_ops(unary_cases());
}

#[test]
fn activations() {
    assert_ops(activation_cases());
}

#[test]
fn reductions() {
    assert_ops(reduction_cases());
}

#[test]
fn composite_distribution_ops() {
    assert_ops(distribution_cases());
}

#[test]
fn mean_gradient_is_one_over_n() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::from_f64(&[2, 3], &[1.0, -2.0, 0.5, 3.0, 0.0, 9.0]).unwrap());
    let m = g.mean(x, None).unwrap();
    g.backward(m).unwrap();
    assert!(g.grad(x).unwrap().data().iter().all(|&v| (v - 1.0 / 6.0).abs() < 1e-15));
}

#[test]
fn backward_reaches_each_leaf_once_and_is_repeatable() {
    let mut rng = stream_rng(3, Stream::Diagnostics);
    let a_t = normal(&mut rng, &[3, 3]);
    let b_t = normal(&mut rng, &[3, 3]);
    let run = |g: &mut Graph<f64>, a: Var, b: Var| {
        // a is used twice; its gradient must sum both paths.
        let p = g.matmul(a, b).unwrap();
        let q = g.mul(p, a).unwrap();
        let l = g.sum(q, None).unwrap();
        g.backward(l).unwrap();
    };
    let mut g = Graph::new();
    let a = g.param(a_t.clone());
    let b = g.param(b_t.clone());
    run(&mut g, a, b);
    let first = (g.grad(a).unwrap().clone(), g.grad(b).unwrap().clone());
    let err = max_rel_error(&[a_t.clone(), b_t.clone()], |g, v| {
        let p = g.matmul(v[0], v[1]).unwrap();
        let q = g.mul(p, v[0]).unwrap();
        g.sum(q, None).unwrap()
    });
    assert!(err < OP_TOL, "{err:e}");

    g.zero_grad();
    let mut g2 = Graph::new();
    let a2 = g2.param(a_t);
    let b2 = g2.param(b_t);
    run(&mut g2, a2, b2);
    assert_eq!(g2.grad(a2).unwrap(), &first.0);
    assert_eq!(g2.grad(b2).unwrap(), &first.1);
}

fn assert_models(cases: Vec<(String, ModelCheck)>) {
    for (label, c) in cases {
        println!("{label}: worst {:.2e} ({}), {} checked, {} skipped", c.worst, c.worst_param, c.checked, c.skipped);
        assert!(c.worst < MODEL_TOL, "{label}: {:e} in {}", c.worst, c.worst_param);
        assert!(c.skipped * 100 <= c.checked, "{label}: {} of {} elements skipped", c.skipped, c.checked + c.skipped);
    }
}

#[test]
fn end_to_end_training_loss() {
    assert_models(training_loss_cases());
}

#[test]
fn end_to_end_importance_weighted_and_gaussian() {
    assert_models(iw_and_gaussian_cases());
}
