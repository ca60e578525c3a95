#![allow(dead_code)]

pub mod gradcheck;
pub mod gradcheck_suite;
pub mod oracles;

use lvae_core::data::{make_synthetic_lg, SyntheticLGDataset};
use lvae_core::model::{BnScope, Hierarchy, HierarchyConfig, InferenceKind, Nonlinearity, Observation};
use lvae_core::noise::{stream_rng, Stream};
use lvae_core::trainer::{train, TrainData, TrainPlan};

/// Training samples and an independent test draw from the same generator.
pub fn synthetic_pair(dims: &[usize], n_train: usize, n_test: usize, seed: u64) -> (SyntheticLGDataset, SyntheticLGDataset) {
    let tr = make_synthetic_lg(dims, n_train, seed).unwrap();
    let te = SyntheticLGDataset::from_generator(
        tr.loadings.clone(),
        tr.noise_vars.clone(),
        n_test,
        &mut stream_rng(seed + 1000, Stream::Synthetic),
    )
    .unwrap();
    (tr, te)
}

pub fn gaussian_cfg(x_dim: usize, latents: &[usize], width: usize, kind: InferenceKind) -> HierarchyConfig {
    HierarchyConfig {
        x_dim,
        latent_sizes: latents.to_vec(),
        mlp_widths: vec![width; latents.len()],
        inference: kind,
        observation: Observation::Gaussian,
        use_bn: false,
        bn_scope: BnScope::All,
        nonlinearity: Nonlinearity::Tanh,
    }
}

pub fn train_on(cfg: HierarchyConfig, tr: &SyntheticLGDataset, te: &SyntheticLGDataset, epochs: usize, seed: u64) -> Hierarchy<f32> {
    let data = TrainData::new(tr.samples_f32(), te.samples_f32(), false).unwrap();
    let plan = TrainPlan {
        epochs,
        batch_size: 100,
        warmup: None,
        eval_every: epochs.max(1),
        seed,
        ..TrainPlan::default()
    };
    train(plan, cfg, &data, &mut ()).unwrap().checkpoint.model
}

/// Trained one-layer model on the 4-dimensional, 2-latent oracle.
pub fn trained_lg_model() -> (Hierarchy<f64>, SyntheticLGDataset) {
    let (tr, te) = synthetic_pair(&[4, 2], 2000, 1000, 1);
    let m = train_on(gaussian_cfg(4, &[2], 32, InferenceKind::Vae), &tr, &te, 200, 3);
    (m.cast(), te)
}

/// Largest |library − grid oracle| over `cases` random scalar fusions of a
/// prior N(μ_p, σ²_p) with a bottom-up term N(μ̂, σ̂²), together with whether
/// every case kept the fused variance below both inputs and the fused mean
/// between them.
pub fn fusion_against_grid(cases: usize, seed: u64) -> (f64, bool) {
    use lvae_core::distributions::{precision_weighted_fusion, GaussianParams};
    use lvae_core::tensor::{Graph, Tensor};
    use rand::Rng;
    use rand_distr::StandardNormal;

    let mut rng = stream_rng(seed, Stream::Diagnostics);
    let mut worst = 0.0f64;
    let mut ordered = true;
    for _ in 0..cases {
        let mu_l = 2.0 * rng.sample::<f64, _>(StandardNormal);
        let mu_p = 2.0 * rng.sample::<f64, _>(StandardNormal);
        let var_l = rng.random_range(0.1f64.ln()..10f64.ln()).exp();
        let var_p = rng.random_range(0.1f64.ln()..10f64.ln()).exp();

        let mut g = Graph::<f64>::new();
        let mut scalar = |v: f64| g.constant(Tensor::new(&[1, 1], vec![v]).unwrap());
        let (ml, vl, mp, vp) = (scalar(mu_l), scalar(var_l), scalar(mu_p), scalar(var_p));
        let l = GaussianParams::new(&g, ml, vl).unwrap();
        let p = GaussianParams::new(&g, mp, vp).unwrap();
        let f = precision_weighted_fusion(&mut g, &l, &p).unwrap();
        let (mean, var) = (g.value(f.mean).item(), g.value(f.var).item());

        let (om, ov) = oracles::grid_posterior(mu_l, var_l, mu_p, var_p);
        worst = worst.max((mean - om).abs()).max((var - ov).abs());
        ordered &= var <= var_l.min(var_p) && mean >= mu_l.min(mu_p) && mean <= mu_l.max(mu_p);
    }
    (worst, ordered)
}
