//! Importance-weighted log-likelihood, per-unit latent activity and PCA
//! projections of posterior samples.
//!
//! All routines run the model in eval mode with [`RowKeyedNoise`], so a
//! datapoint's estimate does not depend on which other datapoints share its
//! batch.

mod pca;
mod svg;

pub use pca::{pca_top2, Pca, POWER_MAX_ITERS, POWER_TOL};
pub use svg::{activity_svg, projection_svg};

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Hierarchy, Mode};
use crate::noise::{stream_rng, RowKeyedNoise, Stream};
use crate::objectives::{layer_kl_elements, log_weights};
use crate::tensor::{logsumexp_values, Scalar, Tensor};

/// Default active-unit threshold in nats.
pub const ACTIVE_TAU: f64 = 0.01;
/// Importance samples per forward pass.
pub const SAMPLE_CHUNK: usize = 100;
/// Upper bound on rows (samples × datapoints) per forward pass.
pub const MAX_ROWS: usize = 5000;

const LOG_KL_FLOOR: f64 = 1e-6;

/// Sum after sorting, so the result does not depend on input order.
pub fn ordered_sum(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    pairwise_sum(values)
}

pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

fn datapoint_chunk(samples_per_pass: usize) -> usize {
    (MAX_ROWS / samples_per_pass).max(1)
}

/// Log-weights log p(x, z) − log q(z | x) for `k` samples of every row of `x`,
/// returned per datapoint. Samples are drawn `SAMPLE_CHUNK` at a time.
fn log_weight_matrix<S: Scalar>(model: &Hierarchy<S>, x: &Tensor<S>, k: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if k == 0 {
        return Err(Error::config("K must be at least 1"));
    }
    let n = x.rows();
    let kc = k.min(SAMPLE_CHUNK);
    let mut out = vec![Vec::with_capacity(k); n];
    let idx: Vec<usize> = (0..n).collect();
    for rows in idx.chunks(datapoint_chunk(kc)) {
        let xb = x.select_rows(rows);
        let mut noise = RowKeyedNoise::new(seed, &xb);
        let mut done = 0;
        while done < k {
            let take = kc.min(k - done);
            let mut cx = model.session(&mut noise);
            cx.mode = Mode::Eval;
            let xv = cx.graph.constant(xb.tile_rows(take));
            let pass = model.infer(&mut cx, xv)?;
            let lw = log_weights(&mut cx.graph, &pass, xv)?;
            let vals = cx.graph.value(lw).data().to_vec();
            for s in 0..take {
                for (b, &i) in rows.iter().enumerate() {
                    out[i].push(vals[s * rows.len() + b].as_f64());
                }
            }
            done += take;
        }
    }
    Ok(out)
}

/// Mean and standard error of per-datapoint bound values.
#[derive(Clone, Debug, PartialEq)]
pub struct LoglikReport {
    pub k: usize,
    /// NaN where the estimate was non-finite.
    pub per_datapoint: Vec<f64>,
    pub mean: f64,
    pub stderr: f64,
    /// Datapoints excluded for non-finite weights.
    pub excluded: usize,
}

fn summarize(k: usize, values: Vec<f64>) -> Result<LoglikReport> {
    let mut finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let excluded = values.len() - finite.len();
    if finite.is_empty() {
        return Err(Error::numeric("eval_loglik", "no datapoint produced a finite bound"));
    }
    let m = finite.len() as f64;
    let mean = ordered_sum(&mut finite) / m;
    let mut sq: Vec<f64> = finite.iter().map(|v| (v - mean).powi(2)).collect();
    let var = if finite.len() > 1 {
        ordered_sum(&mut sq) / (m - 1.0)
    } else {
        0.0
    };
    let per_datapoint = values
        .into_iter()
        .map(|v| if v.is_finite() { v } else { f64::NAN })
        .collect();
    Ok(LoglikReport {
        k,
        per_datapoint,
        mean,
        stderr: (var / m).sqrt(),
        excluded,
    })
}

fn merge_logsumexp(acc: f64, chunk: &[f64]) -> f64 {
    let c = logsumexp_values(chunk);
    if acc == f64::NEG_INFINITY {
        c
    } else {
        logsumexp_values(&[acc, c])
    }
}

/// Importance-weighted bound log (1/K) Σ_k w_k per datapoint. Samples are
/// merged chunk by chunk with a running logsumexp.
pub fn eval_loglik<S: Scalar>(model: &Hierarchy<S>, x: &Tensor<S>, k: usize, seed: u64) -> Result<LoglikReport> {
    let lw = log_weight_matrix(model, x, k, seed)?;
    let ln_k = (k as f64).ln();
    let values = lw
        .iter()
        .map(|w| {
            if w.iter().any(|v| !v.is_finite()) {
                return f64::NAN;
            }
            let acc = w
                .chunks(SAMPLE_CHUNK)
                .fold(f64::NEG_INFINITY, merge_logsumexp);
            acc - ln_k
        })
        .collect();
    summarize(k, values)
}

/// Monte Carlo ELBO averaged over `n` samples per datapoint, with the same
/// noise as [`eval_loglik`] for the same seed.
pub fn eval_mc_elbo<S: Scalar>(model: &Hierarchy<S>, x: &Tensor<S>, n: usize, seed: u64) -> Result<LoglikReport> {
    let lw = log_weight_matrix(model, x, n, seed)?;
    let values = lw
        .into_iter()
        .map(|mut w| {
            if w.iter().any(|v| !v.is_finite()) {
                return f64::NAN;
            }
            ordered_sum(&mut w) / n as f64
        })
        .collect();
    summarize(n, values)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerActivity {
    /// KL per unit in nats, averaged over datapoints, natural order.
    pub kl_per_unit: Vec<f64>,
    /// `(unit, kl)` sorted by descending KL.
    pub sorted: Vec<(usize, f64)>,
    /// ln(max(kl, 1e-6)) per unit, natural order.
    pub log_kl: Vec<f64>,
    pub active_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActivityReport {
    pub tau: f64,
    pub epoch: Option<usize>,
    pub layers: Vec<LayerActivity>,
}

impl ActivityReport {
    pub fn layer_kl_profile(&self) -> Vec<f64> {
        self.layers
            .iter()
            .map(|l| pairwise_sum(&l.kl_per_unit))
            .collect()
    }

    pub fn kl_total(&self) -> f64 {
        self.layer_kl_profile().iter().sum()
    }

    pub fn active_counts(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.active_count).collect()
    }

    pub fn total_active(&self) -> usize {
        self.active_counts().iter().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,unit,kl_nats,log_kl,active\n");
        for (i, l) in self.layers.iter().enumerate() {
            for (u, (&kl, &lk)) in l.kl_per_unit.iter().zip(&l.log_kl).enumerate() {
                let _ = writeln!(s, "{},{},{},{},{}", i + 1, u + 1, kl, lk, kl > self.tau);
            }
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

fn layer_activity(kl_per_unit: Vec<f64>, tau: f64) -> LayerActivity {
    let mut sorted: Vec<(usize, f64)> = kl_per_unit.iter().copied().enumerate().collect();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    LayerActivity {
        log_kl: kl_per_unit.iter().map(|v| v.max(LOG_KL_FLOOR).ln()).collect(),
        active_count: kl_per_unit.iter().filter(|&&v| v > tau).count(),
        sorted,
        kl_per_unit,
    }
}

/// Per-unit KL term of the bound averaged over the rows of `x`: analytic
/// KL(q ‖ p) where the layer admits it, otherwise a one-sample estimate
/// (which can dip slightly below zero for a collapsed unit).
pub fn activity_report<S: Scalar>(model: &Hierarchy<S>, x: &Tensor<S>, tau: f64, seed: u64) -> Result<ActivityReport> {
    let lat = &model.config().latent_sizes;
    let n = x.rows();
    // values[layer][unit] holds one entry per datapoint.
    let mut values: Vec<Vec<Vec<f64>>> = lat.iter().map(|&d| vec![Vec::with_capacity(n); d]).collect();
    let idx: Vec<usize> = (0..n).collect();
    for rows in idx.chunks(datapoint_chunk(1)) {
        let xb = x.select_rows(rows);
        let mut noise = RowKeyedNoise::new(seed, &xb);
        let mut cx = model.session(&mut noise);
        cx.mode = Mode::Eval;
        let xv = cx.graph.constant(xb);
        let pass = model.infer(&mut cx, xv)?;
        for (li, layer) in pass.layers.iter().enumerate() {
            let e = layer_kl_elements(&mut cx.graph, layer)?;
            let t = cx.graph.value(e);
            for r in 0..rows.len() {
                for (u, v) in t.row(r).iter().enumerate() {
                    values[li][u].push(v.as_f64());
                }
            }
        }
    }
    let layers = values
        .into_iter()
        .map(|units| {
            let kl = units
                .into_iter()
                .map(|mut v| ordered_sum(&mut v) / n as f64)
                .collect();
            layer_activity(kl, tau)
        })
        .collect();
    Ok(ActivityReport {
        tau,
        epoch: None,
        layers,
    })
}

/// KL per layer, bottom to top.
pub fn layer_kl_profile<S: Scalar>(model: &Hierarchy<S>, x: &Tensor<S>, seed: u64) -> Result<Vec<f64>> {
    Ok(activity_report(model, x, ACTIVE_TAU, seed)?.layer_kl_profile())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentProjection {
    /// 1-based layer index.
    pub layer: usize,
    pub pca: Pca,
    pub labels: Option<Vec<u8>>,
}

impl LatentProjection {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,index,pc1,pc2,label\n");
        for (i, c) in self.pca.coords.iter().enumerate() {
            let label = self
                .labels
                .as_ref()
                .map(|l| l[i].to_string())
                .unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{},{}", self.layer, i, c[0], c[1], label);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// One posterior sample z_layer per row of `x` from the model's own
/// inference chain, projected on its top two principal directions.
pub fn pca_project<S: Scalar>(
    model: &Hierarchy<S>,
    x: &Tensor<S>,
    layer: usize,
    labels: Option<&[u8]>,
    seed: u64,
) -> Result<LatentProjection> {
    let depth = model.config().depth();
    if layer == 0 || layer > depth {
        return Err(Error::config(format!("layer {layer} outside 1..={depth}")));
    }
    if let Some(l) = labels {
        if l.len() != x.rows() {
            return Err(Error::config(format!("{} labels for {} rows", l.len(), x.rows())));
        }
    }
    let d = model.config().latent_sizes[layer - 1];
    let mut samples = Vec::with_capacity(x.rows() * d);
    let idx: Vec<usize> = (0..x.rows()).collect();
    for rows in idx.chunks(datapoint_chunk(1)) {
        let xb = x.select_rows(rows);
        let mut noise = RowKeyedNoise::new(seed, &xb);
        let mut cx = model.session(&mut noise);
        cx.mode = Mode::Eval;
        let xv = cx.graph.constant(xb);
        let pass = model.infer(&mut cx, xv)?;
        samples.extend(cx.graph.value(pass.layers[layer - 1].z).data().iter().map(|v| v.as_f64()));
    }
    let mut rng = stream_rng(seed, Stream::Diagnostics);
    Ok(LatentProjection {
        layer,
        pca: pca_top2(&samples, d, &mut rng),
        labels: labels.map(<[u8]>::to_vec),
    })
}
