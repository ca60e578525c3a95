//! Linear, batch-norm, MLP and distribution-head building blocks.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Mode, ParamId, ParamStore, Session};
use crate::distributions::{BernoulliParams, GaussianParams, VAR_FLOOR};
use crate::error::Result;
use crate::tensor::{Activation, Scalar, Tensor, Var};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPSILON: f64 = 1e-4;

/// `x · W + b` with `W: [in × out]`, `b: [out]`.
#[derive(Clone, Debug)]
pub struct LinearLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl LinearLayer {
    /// Glorot-uniform weights and zero bias.
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        rng: &mut ChaCha8Rng,
        name: &str,
        fan_in: usize,
        fan_out: usize,
    ) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w: Vec<S> = (0..fan_in * fan_out)
            .map(|_| S::of(rng.random_range(-limit..limit)))
            .collect();
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::new(&[fan_in, fan_out], w).expect("positive extents"),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[fan_out]));
        LinearLayer {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward<S: Scalar>(&self, cx: &mut Session<'_, S>, x: Var) -> Result<Var> {
        let w = cx.var(self.weight);
        let b = cx.var(self.bias);
        let h = cx.graph.matmul(x, w)?;
        cx.graph.add(h, b)
    }
}

/// Running statistics of one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BnRunning<S> {
    pub mean: Tensor<S>,
    pub var: Tensor<S>,
}

#[derive(Clone, Debug)]
pub struct BatchNormLayer {
    pub gamma: ParamId,
    pub beta: ParamId,
    /// Index into the model's running-statistics table.
    pub slot: usize,
    pub dim: usize,
}

impl BatchNormLayer {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        running: &mut Vec<BnRunning<S>>,
        name: &str,
        dim: usize,
    ) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::ones(&[dim]));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[dim]));
        running.push(BnRunning {
            mean: Tensor::zeros(&[dim]),
            var: Tensor::ones(&[dim]),
        });
        BatchNormLayer {
            gamma,
            beta,
            slot: running.len() - 1,
            dim,
        }
    }

    pub fn forward<S: Scalar>(&self, cx: &mut Session<'_, S>, x: Var) -> Result<Var> {
        let gamma = cx.var(self.gamma);
        let beta = cx.var(self.beta);
        let normed = match cx.mode {
            Mode::Train => {
                let g = &mut cx.graph;
                let mean = g.mean(x, Some(0))?;
                let centered = g.sub(x, mean)?;
                let sq = g.square(centered)?;
                let var = g.mean(sq, Some(0))?;
                let shifted = g.affine(var, 1.0, BN_EPSILON)?;
                let sd = g.sqrt(shifted)?;
                let normed = g.div(centered, sd)?;
                let (bm, bv) = (g.value(mean).clone(), g.value(var).clone());
                cx.bn_updates.push((self.slot, bm, bv));
                normed
            }
            Mode::Eval => {
                let stats = &cx.running[self.slot];
                let eps = S::of(BN_EPSILON);
                let inv_sd = stats.var.map(|v| S::one() / (v + eps).sqrt());
                let m = cx.graph.constant(stats.mean.clone());
                let s = cx.graph.constant(inv_sd);
                let centered = cx.graph.sub(x, m)?;
                cx.graph.mul(centered, s)?
            }
        };
        let scaled = cx.graph.mul(normed, gamma)?;
        cx.graph.add(scaled, beta)
    }
}

impl<S: Scalar> BnRunning<S> {
    /// running ← (1 − momentum)·running + momentum·batch
    pub fn update(&mut self, batch_mean: &Tensor<S>, batch_var: &Tensor<S>) {
        let m = S::of(BN_MOMENTUM);
        let keep = S::one() - m;
        for (r, &b) in self.mean.data_mut().iter_mut().zip(batch_mean.data()) {
            *r = keep * *r + m * b;
        }
        for (r, &b) in self.var.data_mut().iter_mut().zip(batch_var.data()) {
            *r = keep * *r + m * b;
        }
    }
}

/// Two hidden layers: Linear → [BN] → activation, twice.
#[derive(Clone, Debug)]
pub struct MlpBlock {
    pub first: LinearLayer,
    pub first_bn: Option<BatchNormLayer>,
    pub second: LinearLayer,
    pub second_bn: Option<BatchNormLayer>,
    pub activation: Activation,
}

impl MlpBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        running: &mut Vec<BnRunning<S>>,
        rng: &mut ChaCha8Rng,
        name: &str,
        input: usize,
        width: usize,
        activation: Activation,
        batch_norm: bool,
    ) -> Self {
        let first = LinearLayer::new(store, rng, &format!("{name}.l1"), input, width);
        let first_bn =
            batch_norm.then(|| BatchNormLayer::new(store, running, &format!("{name}.bn1"), width));
        let second = LinearLayer::new(store, rng, &format!("{name}.l2"), width, width);
        let second_bn =
            batch_norm.then(|| BatchNormLayer::new(store, running, &format!("{name}.bn2"), width));
        MlpBlock {
            first,
            first_bn,
            second,
            second_bn,
            activation,
        }
    }

    pub fn width(&self) -> usize {
        self.second.fan_out
    }

    pub fn forward<S: Scalar>(&self, cx: &mut Session<'_, S>, x: Var) -> Result<Var> {
        let mut h = x;
        for (lin, bn) in [(&self.first, &self.first_bn), (&self.second, &self.second_bn)] {
            h = lin.forward(cx, h)?;
            if let Some(bn) = bn {
                h = bn.forward(cx, h)?;
            }
            h = cx.graph.activation(self.activation, h)?;
        }
        Ok(h)
    }
}

/// Separate linear maps for the mean and for the softplus variance.
#[derive(Clone, Debug)]
pub struct GaussianHead {
    pub mean: LinearLayer,
    pub var: LinearLayer,
}

impl GaussianHead {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        rng: &mut ChaCha8Rng,
        name: &str,
        input: usize,
        out: usize,
    ) -> Self {
        GaussianHead {
            mean: LinearLayer::new(store, rng, &format!("{name}.mean"), input, out),
            var: LinearLayer::new(store, rng, &format!("{name}.var"), input, out),
        }
    }

    pub fn forward<S: Scalar>(&self, cx: &mut Session<'_, S>, d: Var) -> Result<GaussianParams> {
        let mean = self.mean.forward(cx, d)?;
        let pre = self.var.forward(cx, d)?;
        let sp = cx.graph.activation(Activation::Softplus, pre)?;
        let var = cx.graph.affine(sp, 1.0, VAR_FLOOR)?;
        GaussianParams::new(&cx.graph, mean, var)
    }
}

/// Sigmoid output layer for binary observations.
#[derive(Clone, Debug)]
pub struct BernoulliHead {
    pub logits: LinearLayer,
}

impl BernoulliHead {
    pub fn forward<S: Scalar>(&self, cx: &mut Session<'_, S>, d: Var) -> Result<BernoulliParams> {
        let l = self.logits.forward(cx, d)?;
        let p = cx.graph.activation(Activation::Sigmoid, l)?;
        BernoulliParams::from_probs(&mut cx.graph, p)
    }
}
