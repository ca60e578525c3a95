//! The catalog of gradient checks: every tape op on random inputs, and the
//! full training loss of tiny models.

use lvae_core::distributions::{
    bernoulli_log_pmf, gaussian_log_pdf, kl_diag_gaussians, precision_weighted_fusion,
    reparam_sample, BernoulliParams, GaussianParams,
};
use lvae_core::model::{BnScope, Hierarchy, HierarchyConfig, InferenceKind, Nonlinearity, Observation};
use lvae_core::noise::{stream_rng, Stream};
use lvae_core::tensor::{Activation, Graph, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::gradcheck::{max_rel_error, model_check, weighted_sum, ModelCheck};

pub const TRIALS: u64 = 20;
pub const OP_TOL: f64 = 1e-4;
pub const MODEL_TOL: f64 = 1e-3;

/// (case name, worst relative error over the trials).
pub type OpResults = Vec<(String, f64)>;

pub fn normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

/// Values bounded away from zero (kinks and poles), either sign.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    normal(rng, shape).map(|v| v.signum() * (0.1 + v.abs()))
}

/// Positive values kept where central differences with h = 1e-3 are accurate
/// (terms like 1/var³ grow quickly near zero).
fn positive(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    normal(rng, shape).map(|v| 0.5 + v.abs())
}

/// Run a case for TRIALS seeds and record its worst error.
fn check_op<F>(out: &mut OpResults, name: &str, make: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>, op: F)
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var + Copy,
{
    let mut worst = 0.0f64;
    for seed in 0..TRIALS {
        let mut rng = stream_rng(seed, Stream::Diagnostics);
        let inputs = make(&mut rng);
        // Output shape from a dry run, then fixed random weights.
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let o = op(&mut g, &vars);
        let weights = normal(&mut rng, g.shape(o));
        let err = max_rel_error(&inputs, |g, v| {
            let o = op(g, v);
            weighted_sum(g, o, &weights)
        });
        worst = worst.max(err);
    }
    out.push((name.to_string(), worst));
}

pub fn matmul_cases() -> OpResults {
    let mut out = Vec::new();
    check_op(&mut out, "matmul", |r| vec![normal(r, &[3, 4]), normal(r, &[4, 2])], |g, v| {
        g.matmul(v[0], v[1]).unwrap()
    });
    check_op(&mut out, "matmul square", |r| vec![normal(r, &[3, 3]), normal(r, &[3, 3])], |g, v| {
        g.matmul(v[0], v[1]).unwrap()
    });
    out
}

pub fn binary_cases() -> OpResults {
    let mut out = Vec::new();
    let same = |r: &mut ChaCha8Rng| vec![normal(r, &[3, 4]), normal(r, &[3, 4])];
    let row = |r: &mut ChaCha8Rng| vec![normal(r, &[3, 4]), normal(r, &[4])];
    let one = |r: &mut ChaCha8Rng| vec![normal(r, &[3, 4]), normal(r, &[1])];
    for (label, make) in [
        ("same", &same as &dyn Fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>),
        ("row", &row),
        ("scalar", &one),
    ] {
        check_op(&mut out, &format!("add {label}"), make, |g, v| g.add(v[0], v[1]).unwrap());
        check_op(&mut out, &format!("sub {label}"), make, |g, v| g.sub(v[0], v[1]).unwrap());
        check_op(&mut out, &format!("mul {label}"), make, |g, v| g.mul(v[0], v[1]).unwrap());
    }
    check_op(
        &mut out,
        "div",
        |r| vec![normal(r, &[3, 4]), away_from_zero(r, &[3, 4])],
        |g, v| g.div(v[0], v[1]).unwrap(),
    );
    check_op(
        &mut out,
        "div row",
        |r| vec![normal(r, &[3, 4]), away_from_zero(r, &[4])],
        |g, v| g.div(v[0], v[1]).unwrap(),
    );
    out
}

pub fn unary_cases() -> OpResults {
    let mut out = Vec::new();
    let n = |r: &mut ChaCha8Rng| vec![normal(r, &[2, 5])];
    let p = |r: &mut ChaCha8Rng| vec![positive(r, &[2, 5])];
    let nz = |r: &mut ChaCha8Rng| vec![away_from_zero(r, &[2, 5])];
    check_op(&mut out, "exp", n, |g, v| g.exp(v[0]).unwrap());
    check_op(&mut out, "log", p, |g, v| g.log(v[0]).unwrap());
    check_op(&mut out, "neg", n, |g, v| g.neg(v[0]).unwrap());
    check_op(&mut out, "sqrt", p, |g, v| g.sqrt(v[0]).unwrap());
    check_op(&mut out, "square", n, |g, v| g.square(v[0]).unwrap());
    check_op(&mut out, "recip", nz, |g, v| g.recip(v[0]).unwrap());
    check_op(&mut out, "affine", n, |g, v| g.affine(v[0], -1.7, 0.3).unwrap());
    check_op(&mut out, "scale", n, |g, v| g.scale(v[0], 2.5).unwrap());
    check_op(&mut out, "clamp", n, |g, v| {
        // Interior points only: the clamp bounds sit outside the sampled range
        // of the shifted input.
        let s = g.scale(v[0], 0.01).unwrap();
        g.clamp(s, -0.5, 0.5).unwrap()
    });
    check_op(&mut out, "reshape", n, |g, v| {
        let r = g.reshape(v[0], &[5, 2]).unwrap();
        g.square(r).unwrap()
    });
    out
}

pub fn activation_cases() -> OpResults {
    let mut out = Vec::new();
    let nz = |r: &mut ChaCha8Rng| vec![away_from_zero(r, &[3, 4])];
    for (name, a) in [
        ("leaky_relu", Activation::LEAKY_RELU),
        ("tanh", Activation::Tanh),
        ("sigmoid", Activation::Sigmoid),
        ("softplus", Activation::Softplus),
    ] {
        check_op(&mut out, name, nz, move |g, v| g.activation(a, v[0]).unwrap());
    }
    out
}

pub fn reduction_cases() -> OpResults {
    let mut out = Vec::new();
    let n = |r: &mut ChaCha8Rng| vec![normal(r, &[4, 3])];
    for axis in [None, Some(0), Some(1)] {
        check_op(&mut out, &format!("sum {axis:?}"), n, move |g, v| g.sum(v[0], axis).unwrap());
        check_op(&mut out, &format!("mean {axis:?}"), n, move |g, v| g.mean(v[0], axis).unwrap());
    }
    for axis in [0, 1] {
        check_op(&mut out, &format!("logsumexp {axis}"), n, move |g, v| {
            g.logsumexp(v[0], axis).unwrap()
        });
    }
    out
}

fn gaussian(g: &mut Graph<f64>, mean: Var, var: Var) -> GaussianParams {
    GaussianParams::new(g, mean, var).unwrap()
}

pub fn distribution_cases() -> OpResults {
    let mut out = Vec::new();
    let shape = [3, 4];
    check_op(
        &mut out,
        "gaussian_log_pdf",
        |r| vec![normal(r, &shape), positive(r, &shape), normal(r, &shape)],
        |g, v| {
            let p = gaussian(g, v[0], v[1]);
            gaussian_log_pdf(g, &p, v[2]).unwrap()
        },
    );
    check_op(
        &mut out,
        "bernoulli_log_pmf",
        |r| {
            let probs = normal(r, &shape).map(|v| 0.1 + 0.8 / (1.0 + (-v).exp()));
            vec![probs]
        },
        |g, v| {
            let data: Vec<f64> = (0..12).map(|i| (i % 3 == 0) as u8 as f64).collect();
            let x = g.constant(Tensor::new(&[3, 4], data).unwrap());
            let p = BernoulliParams::from_probs(g, v[0]).unwrap();
            bernoulli_log_pmf(g, &p, x).unwrap()
        },
    );
    check_op(
        &mut out,
        "kl_diag_gaussians",
        |r| vec![normal(r, &shape), positive(r, &shape), normal(r, &shape), positive(r, &shape)],
        |g, v| {
            let q = gaussian(g, v[0], v[1]);
            let p = gaussian(g, v[2], v[3]);
            kl_diag_gaussians(g, &q, &p).unwrap()
        },
    );
    check_op(
        &mut out,
        "reparam_sample",
        |r| vec![normal(r, &shape), positive(r, &shape)],
        |g, v| {
            let p = gaussian(g, v[0], v[1]);
            let eps = Tensor::from_f64(&[3, 4], &[0.3, -1.1, 0.7, 2.0, -0.4, 0.9, 1.3, -0.2, 0.05, -1.6, 0.8, 0.1]).unwrap();
            reparam_sample(g, &p, eps).unwrap()
        },
    );
    for output in [0usize, 1] {
        check_op(
            &mut out,
            &format!("precision_weighted_fusion output {output}"),
            |r| vec![normal(r, &shape), positive(r, &shape), normal(r, &shape), positive(r, &shape)],
            move |g, v| {
                let l = gaussian(g, v[0], v[1]);
                let p = gaussian(g, v[2], v[3]);
                let f = precision_weighted_fusion(g, &l, &p).unwrap();
                if output == 0 {
                    f.mean
                } else {
                    f.var
                }
            },
        );
    }
    out
}

pub fn all_op_cases() -> OpResults {
    [matmul_cases, binary_cases, unary_cases, activation_cases, reduction_cases, distribution_cases]
        .iter()
        .flat_map(|f| f())
        .collect()
}

/// Latents 3-2, MLP width 8, six observed dimensions.
pub fn tiny(kind: InferenceKind, observation: Observation, bn: bool) -> HierarchyConfig {
    HierarchyConfig {
        x_dim: 6,
        latent_sizes: vec![3, 2],
        mlp_widths: vec![8, 8],
        inference: kind,
        observation,
        use_bn: bn,
        bn_scope: BnScope::All,
        nonlinearity: Nonlinearity::default_for(observation),
    }
}

/// Model at a generic parameter point. Zero-initialized biases put all-zero
/// inputs exactly on the leaky-ReLU kink, where the derivative is undefined.
pub fn jittered(cfg: HierarchyConfig, seed: u64) -> Hierarchy<f64> {
    let mut m = Hierarchy::<f64>::new(cfg, seed).unwrap();
    let mut rng = stream_rng(seed, Stream::Diagnostics);
    for t in m.params_mut().tensors_mut() {
        for v in t.data_mut() {
            *v += 0.1 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    m
}

fn binary_batch(rows: usize) -> Tensor<f64> {
    let mut rng = stream_rng(5, Stream::Binarize);
    let data = (0..rows * 6).map(|_| (rng.random::<f64>() < 0.4) as u8 as f64).collect();
    Tensor::new(&[rows, 6], data).unwrap()
}

/// Batch normalization over a handful of near-identical binary rows has
/// strong curvature; 32 rows keep the h = 1e-3 truncation error small.
pub const ROWS: usize = 32;

/// Training loss of both inference kinds, with and without batch norm.
pub fn training_loss_cases() -> Vec<(String, ModelCheck)> {
    let mut out = Vec::new();
    for kind in [InferenceKind::Vae, InferenceKind::Lvae] {
        for bn in [false, true] {
            let mut m = jittered(tiny(kind, Observation::Bernoulli, bn), 9);
            let c = model_check(&mut m, &binary_batch(ROWS), 1, 1, 0.7, 1);
            out.push((format!("{kind:?} bn={bn}"), c));
        }
    }
    out
}

/// Importance-weighted objective and a Gaussian observation model.
pub fn iw_and_gaussian_cases() -> Vec<(String, ModelCheck)> {
    let mut m = jittered(tiny(InferenceKind::Lvae, Observation::Bernoulli, true), 2);
    let iw = model_check(&mut m, &binary_batch(ROWS), 2, 3, 1.0, 4);

    let mut m = jittered(tiny(InferenceKind::Lvae, Observation::Gaussian, false), 3);
    let x = normal(&mut stream_rng(8, Stream::Synthetic), &[ROWS, 6]);
    let gauss = model_check(&mut m, &x, 1, 1, 1.0, 6);
    vec![("iw".into(), iw), ("gaussian".into(), gauss)]
}

pub fn model_passes(c: &ModelCheck) -> bool {
    c.worst < MODEL_TOL && c.skipped * 100 <= c.checked
}
