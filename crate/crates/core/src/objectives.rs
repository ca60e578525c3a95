//! Variational lower bound, its warm-up-scaled training loss, the
//! importance-weighted bound and the per-unit KL decomposition.
//!
//! Two estimators of the bound coexist on purpose. Training and the reported
//! ELBO use the analytic Gaussian KL per layer wherever the layer's prior is
//! conditioned on a sample drawn before it (every ladder layer, and the top
//! of a bottom-up encoder), and the sampled log-ratio elsewhere. The
//! importance-weighted bound needs joint densities for each sample, so it
//! uses log p(x, z) − log q(z | x) evaluated on the full chain.

use serde::{Deserialize, Serialize};

use crate::distributions::{
    bernoulli_log_pmf, gaussian_log_pdf, gaussian_log_pdf_elements, kl_diag_gaussians_elements,
};
use crate::error::{Error, Result};
use crate::model::{Hierarchy, LatentLayer, LatentPass, ObservationParams, Session};
use crate::tensor::{logsumexp_values, Graph, Scalar, Tensor, Var};

/// β(e) = min(1, e / n_t): zero at the first epoch, one from epoch n_t on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WarmupSchedule {
    pub epochs: usize,
}

impl WarmupSchedule {
    pub fn new(epochs: usize) -> Self {
        WarmupSchedule { epochs }
    }

    pub fn beta(&self, epoch: usize) -> f64 {
        if self.epochs == 0 {
            return 1.0;
        }
        (epoch as f64 / self.epochs as f64).clamp(0.0, 1.0)
    }
}

/// β for `epoch`, or 1 when warm-up is disabled.
pub fn beta_at(warmup: Option<&WarmupSchedule>, epoch: usize) -> f64 {
    warmup.map_or(1.0, |w| w.beta(epoch))
}

/// Bound value (β = 1) in nats per datapoint with its KL decomposition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundEstimate {
    pub elbo: f64,
    pub recon_term: f64,
    pub kl_total: f64,
    pub kl_per_layer: Vec<f64>,
    pub kl_per_unit: Vec<Vec<f64>>,
    pub beta: f64,
    /// Per-datapoint ELBO, averaged over the Monte Carlo samples.
    pub elbo_per_datapoint: Vec<f64>,
}

/// A differentiable training loss together with the bound it came from.
pub struct Objective {
    pub loss: Var,
    pub estimate: BoundEstimate,
}

/// log p(x | z1) per row.
pub fn reconstruction<S: Scalar>(g: &mut Graph<S>, pass: &LatentPass, x: Var) -> Result<Var> {
    match &pass.observation {
        ObservationParams::Bernoulli(p) => bernoulli_log_pmf(g, p, x),
        ObservationParams::Gaussian(p) => gaussian_log_pdf(g, p, x),
    }
}

/// Per-row, per-unit KL term of one layer: the closed form when the layer
/// allows it, otherwise log q(z) − log p(z) at the sampled z.
pub fn layer_kl_elements<S: Scalar>(g: &mut Graph<S>, layer: &LatentLayer) -> Result<Var> {
    if layer.analytic_kl {
        kl_diag_gaussians_elements(g, &layer.q, &layer.p)
    } else {
        let lq = gaussian_log_pdf_elements(g, &layer.q, layer.z)?;
        let lp = gaussian_log_pdf_elements(g, &layer.p, layer.z)?;
        g.sub(lq, lp)
    }
}

/// Per-unit KL terms averaged over rows, and their layer sums.
pub fn kl_decompose<S: Scalar>(g: &mut Graph<S>, pass: &LatentPass) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut per_layer = Vec::with_capacity(pass.layers.len());
    let mut per_unit = Vec::with_capacity(pass.layers.len());
    for layer in &pass.layers {
        let e = layer_kl_elements(g, layer)?;
        let units = column_means(g.value(e));
        per_layer.push(units.iter().sum());
        per_unit.push(units);
    }
    Ok((per_layer, per_unit))
}

fn column_means<S: Scalar>(t: &Tensor<S>) -> Vec<f64> {
    let (rows, cols) = (t.rows(), t.cols());
    let mut acc = vec![0.0f64; cols];
    for r in 0..rows {
        for (a, v) in acc.iter_mut().zip(t.row(r)) {
            *a += v.as_f64();
        }
    }
    acc.iter().map(|a| a / rows as f64).collect()
}

fn check_finite(what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::numeric("objective", format!("{what} is not finite ({v})")))
    }
}

/// Warm-up-scaled bound on a pass computed from `n_mc` stacked copies of a
/// batch (`x` has `n_mc · batch` rows, copy-major).
///
/// The loss is −mean(recon − β·KL); the reported ELBO always uses β = 1.
pub fn elbo<S: Scalar>(
    g: &mut Graph<S>,
    pass: &LatentPass,
    x: Var,
    n_mc: usize,
    beta: f64,
) -> Result<Objective> {
    if n_mc == 0 {
        return Err(Error::config("n_mc must be at least 1"));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::config(format!("beta must lie in [0, 1], got {beta}")));
    }
    let rows = g.shape(x)[0];
    if rows % n_mc != 0 {
        return Err(Error::config(format!("{rows} rows do not split into {n_mc} samples")));
    }
    let batch = rows / n_mc;

    let recon_rows = reconstruction(g, pass, x)?;
    let mut kl_rows: Option<Var> = None;
    let mut kl_per_layer = Vec::with_capacity(pass.layers.len());
    let mut kl_per_unit = Vec::with_capacity(pass.layers.len());
    for (i, layer) in pass.layers.iter().enumerate() {
        let e = layer_kl_elements(g, layer).map_err(|err| match err {
            Error::Numeric { detail, .. } => Error::numeric(format!("kl layer {}", i + 1), detail),
            other => other,
        })?;
        let units = column_means(g.value(e));
        let layer_sum: f64 = units.iter().sum();
        check_finite(&format!("KL of layer {}", i + 1), layer_sum)?;
        kl_per_layer.push(layer_sum);
        kl_per_unit.push(units);
        let r = g.sum(e, Some(1))?;
        kl_rows = Some(match kl_rows {
            None => r,
            Some(acc) => g.add(acc, r)?,
        });
    }
    let kl_rows = kl_rows.expect("at least one layer");

    let recon_v = g.value(recon_rows).to_f64_vec();
    let kl_v = g.value(kl_rows).to_f64_vec();
    let mut per_point = vec![0.0; batch];
    for r in 0..rows {
        per_point[r % batch] += (recon_v[r] - kl_v[r]) / n_mc as f64;
    }

    let recon = g.mean(recon_rows, None)?;
    let kl = g.mean(kl_rows, None)?;
    let recon_term = g.value(recon).item().as_f64();
    let kl_total = g.value(kl).item().as_f64();
    check_finite("reconstruction term", recon_term)?;
    check_finite("KL term", kl_total)?;

    let scaled = g.scale(kl, beta)?;
    let bound = g.sub(recon, scaled)?;
    let loss = g.neg(bound)?;

    Ok(Objective {
        loss,
        estimate: BoundEstimate {
            elbo: recon_term - kl_total,
            recon_term,
            kl_total,
            kl_per_layer,
            kl_per_unit,
            beta,
            elbo_per_datapoint: per_point,
        },
    })
}

/// Split log p(x, z) − log q(z | x) per row into the reconstruction term
/// and the latent log-ratio Σ_i [log p(z_i | ·) − log q(z_i | ·)].
pub fn log_weight_parts<S: Scalar>(g: &mut Graph<S>, pass: &LatentPass, x: Var) -> Result<(Var, Var)> {
    let recon = reconstruction(g, pass, x)?;
    let mut ratio: Option<Var> = None;
    for layer in &pass.layers {
        let lp = gaussian_log_pdf(g, &layer.p, layer.z)?;
        let lq = gaussian_log_pdf(g, &layer.q, layer.z)?;
        let d = g.sub(lp, lq)?;
        ratio = Some(match ratio {
            None => d,
            Some(acc) => g.add(acc, d)?,
        });
    }
    Ok((recon, ratio.expect("at least one layer")))
}

/// log w = log p(x, z) − log q(z | x) per row.
pub fn log_weights<S: Scalar>(g: &mut Graph<S>, pass: &LatentPass, x: Var) -> Result<Var> {
    let (recon, ratio) = log_weight_parts(g, pass, x)?;
    g.add(recon, ratio)
}

/// Importance-weighted training objective on `k · n_mc` stacked copies of a
/// batch, sample-major: row `s·batch + b` is sample `s` of datapoint `b`,
/// where `s = k_index · n_mc + m`. The latent log-ratio is scaled by β.
pub fn iw_objective<S: Scalar>(
    g: &mut Graph<S>,
    pass: &LatentPass,
    x: Var,
    n_mc: usize,
    k: usize,
    beta: f64,
) -> Result<Var> {
    let rows = g.shape(x)[0];
    if k == 0 || n_mc == 0 || rows % (k * n_mc) != 0 {
        return Err(Error::config(format!(
            "{rows} rows do not split into {k} importance x {n_mc} Monte Carlo samples"
        )));
    }
    let (recon, ratio) = log_weight_parts(g, pass, x)?;
    let scaled = g.scale(ratio, beta)?;
    let lw = g.add(recon, scaled)?;
    let grid = g.reshape(lw, &[k, rows / k])?;
    let lse = g.logsumexp(grid, 0)?;
    let bound = g.affine(lse, 1.0, -(k as f64).ln())?;
    let m = g.mean(bound, None)?;
    let v = g.value(m).item().as_f64();
    check_finite("importance-weighted bound", v)?;
    g.neg(m)
}

/// Draw `k` inference passes for each row of `x` and return the per-datapoint
/// importance-weighted bound log (1/k) Σ_k w_k.
pub fn iw_bound<S: Scalar>(model: &Hierarchy<S>, cx: &mut Session<'_, S>, x: &Tensor<S>, k: usize) -> Result<Vec<f64>> {
    let lw = sample_log_weights(model, cx, x, k)?;
    let batch = x.rows();
    Ok((0..batch)
        .map(|b| {
            let col: Vec<f64> = (0..k).map(|s| lw[s * batch + b]).collect();
            logsumexp_values(&col) - (k as f64).ln()
        })
        .collect())
}

/// Raw log-weights for `k` samples per datapoint, sample-major.
pub fn sample_log_weights<S: Scalar>(
    model: &Hierarchy<S>,
    cx: &mut Session<'_, S>,
    x: &Tensor<S>,
    k: usize,
) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::config("k must be at least 1"));
    }
    let xv = cx.graph.constant(x.tile_rows(k));
    let pass = model.infer(cx, xv)?;
    let lw = log_weights(&mut cx.graph, &pass, xv)?;
    Ok(cx.graph.value(lw).to_f64_vec())
}

/// Single-sample Monte Carlo ELBO, log p(x, z) − log q(z | x), per datapoint.
/// Averages `n` such estimates.
pub fn mc_elbo<S: Scalar>(model: &Hierarchy<S>, cx: &mut Session<'_, S>, x: &Tensor<S>, n: usize) -> Result<Vec<f64>> {
    let lw = sample_log_weights(model, cx, x, n)?;
    let batch = x.rows();
    Ok((0..batch)
        .map(|b| (0..n).map(|s| lw[s * batch + b]).sum::<f64>() / n as f64)
        .collect())
}

/// Forward a batch and build the training objective: analytic-KL ELBO when
/// `n_iw == 1`, otherwise the importance-weighted bound.
pub fn training_objective<S: Scalar>(
    model: &Hierarchy<S>,
    cx: &mut Session<'_, S>,
    x: &Tensor<S>,
    n_mc: usize,
    n_iw: usize,
    beta: f64,
) -> Result<Objective> {
    let copies = n_mc * n_iw;
    let xv = cx.graph.constant(x.tile_rows(copies));
    let pass = model.infer(cx, xv)?;
    let mut obj = elbo(&mut cx.graph, &pass, xv, copies, beta)?;
    if n_iw > 1 {
        obj.loss = iw_objective(&mut cx.graph, &pass, xv, n_mc, n_iw, beta)?;
    }
    Ok(obj)
}
