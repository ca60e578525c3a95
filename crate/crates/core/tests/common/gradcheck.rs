//! Central finite-difference oracle for tape gradients (64-bit).

use lvae_core::model::Hierarchy;
use lvae_core::noise::FrozenNoise;
use lvae_core::objectives::training_objective;
use lvae_core::tensor::{Graph, Tensor, Var};

pub const H: f64 = 1e-3;

/// ‖a − n‖ / max(‖a‖, ‖n‖) over one input tensor. Per-element ratios blow
/// up wherever the exact gradient nearly cancels, even though the absolute
/// truncation error of a central difference stays O(h²). The denominator is
/// floored at 1e-6 so identically zero gradients (a bias feeding batch
/// normalization) compare on absolute error.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(1e-6)
}

/// Largest relative error between tape gradients and central differences of
/// the scalar `f(inputs)` over every element of every input.
pub fn max_rel_error<F>(inputs: &[Tensor<f64>], f: F) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars);
    assert_eq!(g.value(loss).len(), 1, "loss must be a scalar");
    g.backward(loss).unwrap();
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .map(|&v| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(g.shape(v))))
        .collect();

    let eval = |inputs: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let l = f(&mut g, &vars);
        g.value(l).item()
    };
    let mut worst = 0.0f64;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, t) in inputs.iter().enumerate() {
        let mut numeric = Vec::with_capacity(t.len());
        for j in 0..t.len() {
            let x0 = t.data()[j];
            work[i].data_mut()[j] = x0 + H;
            let up = eval(&work);
            work[i].data_mut()[j] = x0 - H;
            let down = eval(&work);
            work[i].data_mut()[j] = x0;
            numeric.push((up - down) / (2.0 * H));
        }
        worst = worst.max(rel_err(analytic[i].data(), &numeric));
    }
    worst
}

/// Reduce `out` to a scalar with fixed random weights so every output element
/// receives a distinct upstream gradient.
pub fn weighted_sum(g: &mut Graph<f64>, out: Var, weights: &Tensor<f64>) -> Var {
    let w = g.constant(weights.reshape(g.shape(out)).unwrap());
    let p = g.mul(out, w).unwrap();
    g.sum(p, None).unwrap()
}

fn model_loss(
    model: &Hierarchy<f64>,
    noise: &mut FrozenNoise<f64>,
    x: &Tensor<f64>,
    samples: (usize, usize),
    beta: f64,
) -> (f64, Vec<u8>) {
    noise.rewind();
    let mut cx = model.session(noise);
    let obj = training_objective(model, &mut cx, x, samples.0, samples.1, beta).unwrap();
    (cx.graph.value(obj.loss).item(), cx.graph.branch_pattern())
}

pub struct ModelCheck {
    /// Largest per-parameter-tensor relative error.
    pub worst: f64,
    pub worst_param: String,
    pub checked: usize,
    /// Elements within 1e-7 of a leaky-ReLU or clamp breakpoint, where the
    /// loss has no derivative.
    pub skipped: usize,
}

/// Compare every parameter gradient of the full training loss against
/// central differences, with the sampling noise frozen so the loss is
/// deterministic. A step that would cross a breakpoint is shrunk by factors
/// of ten until both sides stay on the same smooth piece.
pub fn model_check(
    model: &mut Hierarchy<f64>,
    x: &Tensor<f64>,
    n_mc: usize,
    n_iw: usize,
    beta: f64,
    noise_seed: u64,
) -> ModelCheck {
    let mut noise = FrozenNoise::new(noise_seed);
    let (analytic, pattern) = {
        let mut cx = model.session(&mut noise);
        let obj = training_objective(model, &mut cx, x, n_mc, n_iw, beta).unwrap();
        cx.graph.backward(obj.loss).unwrap();
        (cx.param_grads(), cx.graph.branch_pattern())
    };
    let mut out = ModelCheck { worst: 0.0, worst_param: String::new(), checked: 0, skipped: 0 };
    for i in 0..model.params().len() {
        let (mut a, mut n) = (Vec::new(), Vec::new());
        for j in 0..model.params().tensors()[i].len() {
            let x0 = model.params().tensors()[i].data()[j];
            let mut h = H;
            let mut numeric = None;
            while h >= H * 1e-4 {
                model.params_mut().tensors_mut()[i].data_mut()[j] = x0 + h;
                let (up, p_up) = model_loss(model, &mut noise, x, (n_mc, n_iw), beta);
                model.params_mut().tensors_mut()[i].data_mut()[j] = x0 - h;
                let (down, p_down) = model_loss(model, &mut noise, x, (n_mc, n_iw), beta);
                if p_up == pattern && p_down == pattern {
                    numeric = Some((up - down) / (2.0 * h));
                    break;
                }
                h /= 10.0;
            }
            model.params_mut().tensors_mut()[i].data_mut()[j] = x0;
            match numeric {
                Some(v) => {
                    out.checked += 1;
                    a.push(analytic[i].data()[j]);
                    n.push(v);
                }
                None => out.skipped += 1,
            }
        }
        let err = rel_err(&a, &n);
        if err > out.worst {
            out.worst = err;
            out.worst_param = model.params().names()[i].clone();
        }
    }
    out
}
