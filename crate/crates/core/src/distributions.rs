//! Diagonal Gaussian and Bernoulli densities over graph values, the analytic
//! Gaussian KL divergence and reparameterized sampling.

use crate::error::{Error, Result};
use crate::tensor::{Graph, Scalar, Tensor, Var};

/// Lower bound added to every predicted variance.
pub const VAR_FLOOR: f64 = 1e-5;

/// Bernoulli means are kept inside `[EPS, 1 - EPS]`.
pub const BERNOULLI_EPS: f64 = 1e-6;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Fully factorized Gaussian; `var` is the variance, not the standard deviation.
#[derive(Clone, Copy, Debug)]
pub struct GaussianParams {
    pub mean: Var,
    pub var: Var,
}

impl GaussianParams {
    pub fn new<S: Scalar>(g: &Graph<S>, mean: Var, var: Var) -> Result<Self> {
        if g.shape(mean) != g.shape(var) {
            return Err(Error::config(format!(
                "gaussian mean {:?} and variance {:?} differ in shape",
                g.shape(mean),
                g.shape(var)
            )));
        }
        if let Some(pos) = g.value(var).data().iter().position(|v| *v <= S::zero()) {
            return Err(Error::numeric(
                "gaussian",
                format!("non-positive variance at index {pos}"),
            ));
        }
        Ok(GaussianParams { mean, var })
    }

    /// N(0, I) with the given shape, as graph constants.
    pub fn standard<S: Scalar>(g: &mut Graph<S>, rows: usize, cols: usize) -> Self {
        let mean = g.constant(Tensor::zeros(&[rows, cols]));
        let var = g.constant(Tensor::ones(&[rows, cols]));
        GaussianParams { mean, var }
    }
}

/// Bernoulli with success probability `mean`, strictly inside (0, 1).
#[derive(Clone, Copy, Debug)]
pub struct BernoulliParams {
    pub mean: Var,
}

impl BernoulliParams {
    /// Clamp a probability tensor away from {0, 1}.
    pub fn from_probs<S: Scalar>(g: &mut Graph<S>, probs: Var) -> Result<Self> {
        let mean = g.clamp(probs, BERNOULLI_EPS, 1.0 - BERNOULLI_EPS)?;
        Ok(BernoulliParams { mean })
    }
}

/// Per-element Gaussian log-density, `[batch × d]`.
pub fn gaussian_log_pdf_elements<S: Scalar>(
    g: &mut Graph<S>,
    p: &GaussianParams,
    x: Var,
) -> Result<Var> {
    if g.shape(x) != g.shape(p.mean) {
        return Err(Error::config(format!(
            "gaussian_log_pdf: x {:?} vs params {:?}",
            g.shape(x),
            g.shape(p.mean)
        )));
    }
    let diff = g.sub(x, p.mean)?;
    let sq = g.square(diff)?;
    let maha = g.div(sq, p.var)?;
    let logv = g.log(p.var)?;
    let e = g.add(maha, logv)?;
    g.affine(e, -0.5, -HALF_LN_2PI)
}

/// Σ_d log N(x_d | mean_d, var_d) per row, `[batch]`.
pub fn gaussian_log_pdf<S: Scalar>(g: &mut Graph<S>, p: &GaussianParams, x: Var) -> Result<Var> {
    let e = gaussian_log_pdf_elements(g, p, x)?;
    g.sum(e, Some(1))
}

/// Σ_d [x log m + (1 − x) log(1 − m)] per row. `x` must be binary.
pub fn bernoulli_log_pmf<S: Scalar>(
    g: &mut Graph<S>,
    p: &BernoulliParams,
    x: Var,
) -> Result<Var> {
    if g.shape(x) != g.shape(p.mean) {
        return Err(Error::config(format!(
            "bernoulli_log_pmf: x {:?} vs params {:?}",
            g.shape(x),
            g.shape(p.mean)
        )));
    }
    if let Some(pos) = g
        .value(x)
        .data()
        .iter()
        .position(|&v| v != S::zero() && v != S::one())
    {
        return Err(Error::Input(format!(
            "bernoulli observation must be 0 or 1, got {} at index {pos}",
            g.value(x).data()[pos]
        )));
    }
    let log_m = g.log(p.mean)?;
    let one_minus = g.affine(p.mean, -1.0, 1.0)?;
    let log_1m = g.log(one_minus)?;
    // x log m + (1 - x) log(1 - m) = log(1 - m) + x (log m - log(1 - m))
    let logit = g.sub(log_m, log_1m)?;
    let xl = g.mul(x, logit)?;
    let e = g.add(xl, log_1m)?;
    g.sum(e, Some(1))
}

/// Per-element KL(q ‖ p) for diagonal Gaussians, `[batch × d]`.
pub fn kl_diag_gaussians_elements<S: Scalar>(
    g: &mut Graph<S>,
    q: &GaussianParams,
    p: &GaussianParams,
) -> Result<Var> {
    if g.shape(q.mean) != g.shape(p.mean) {
        return Err(Error::config(format!(
            "kl: q {:?} vs p {:?}",
            g.shape(q.mean),
            g.shape(p.mean)
        )));
    }
    let log_vp = g.log(p.var)?;
    let log_vq = g.log(q.var)?;
    let log_ratio = g.sub(log_vp, log_vq)?;
    let diff = g.sub(q.mean, p.mean)?;
    let sq = g.square(diff)?;
    let num = g.add(q.var, sq)?;
    let frac = g.div(num, p.var)?;
    let s = g.add(log_ratio, frac)?;
    g.affine(s, 0.5, -0.5)
}

/// Analytic KL(q ‖ p) summed over dimensions, `[batch]`.
pub fn kl_diag_gaussians<S: Scalar>(
    g: &mut Graph<S>,
    q: &GaussianParams,
    p: &GaussianParams,
) -> Result<Var> {
    let e = kl_diag_gaussians_elements(g, q, p)?;
    g.sum(e, Some(1))
}

/// Single-sample Monte Carlo KL estimate log q(z) − log p(z) with z drawn
/// from q through `eps`. Fallback for pairs without a closed form.
pub fn kl_monte_carlo<S: Scalar>(
    g: &mut Graph<S>,
    q: &GaussianParams,
    p: &GaussianParams,
    eps: Tensor<S>,
) -> Result<Var> {
    let z = reparam_sample(g, q, eps)?;
    let lq = gaussian_log_pdf(g, q, z)?;
    let lp = gaussian_log_pdf(g, p, z)?;
    g.sub(lq, lp)
}

/// z = mean + sqrt(var) ∘ eps. `eps` enters as a constant, so gradients
/// reach only the distribution parameters.
pub fn reparam_sample<S: Scalar>(
    g: &mut Graph<S>,
    p: &GaussianParams,
    eps: Tensor<S>,
) -> Result<Var> {
    if eps.shape() != g.shape(p.mean) {
        return Err(Error::config(format!(
            "reparam_sample: eps {:?} vs mean {:?}",
            eps.shape(),
            g.shape(p.mean)
        )));
    }
    let e = g.constant(eps);
    let sd = g.sqrt(p.var)?;
    let noise = g.mul(sd, e)?;
    g.add(p.mean, noise)
}

/// Precision-weighted combination of two Gaussians over the same variable:
/// precisions add and the mean is the precision-weighted average.
pub fn precision_weighted_fusion<S: Scalar>(
    g: &mut Graph<S>,
    likelihood: &GaussianParams,
    prior: &GaussianParams,
) -> Result<GaussianParams> {
    let prec_l = g.recip(likelihood.var)?;
    let prec_p = g.recip(prior.var)?;
    let prec = g.add(prec_l, prec_p)?;
    let var = g.recip(prec)?;
    let wl = g.mul(likelihood.mean, prec_l)?;
    let wp = g.mul(prior.mean, prec_p)?;
    let num = g.add(wl, wp)?;
    let mean = g.mul(num, var)?;
    GaussianParams::new(g, mean, var)
}
