//! The top-down generative hierarchy and its two inference networks.
//!
//! The generative model is
//! p(x, z) = p(x | z1) · p(zL) · Π p(zi | zi+1) with p(zL) = N(0, I) and each
//! conditional a diagonal Gaussian produced by an MLP followed by separate
//! mean and softplus-variance linear heads.
//!
//! Two inference models share that generative model:
//!
//! * [`InferenceKind::Vae`] samples bottom-up, q(z1|x) Π q(zi|zi−1), each
//!   conditional computed by its own network with no information from the
//!   generative side.
//! * [`InferenceKind::Lvae`] first runs a deterministic upward pass
//!   d_i = MLP(d_{i−1}), d_0 = x, producing a Gaussian "likelihood" term
//!   (μ̂_i, σ̂²_i) per layer. It then samples top-down: the top layer uses
//!   (μ̂_L, σ̂²_L) directly, and every lower layer fuses its likelihood term
//!   with the generative conditional p(zi | zi+1) by adding precisions. The
//!   generative conditionals used in the fusion are the same graph values
//!   recorded as the pass's prior terms.

mod config;
mod layers;

pub use config::{BnScope, HierarchyConfig, InferenceKind, Nonlinearity, Observation};
pub use layers::{
    BatchNormLayer, BernoulliHead, BnRunning, GaussianHead, LinearLayer, MlpBlock, BN_EPSILON,
    BN_MOMENTUM,
};

use crate::distributions::{
    precision_weighted_fusion, reparam_sample, BernoulliParams, GaussianParams,
};
use crate::error::{Error, Result};
use crate::noise::{stream_rng, NoiseSource, Stream};
use crate::tensor::{Graph, Scalar, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm; running statistics are updated.
    Train,
    /// Running statistics only; forward is a deterministic per-row map.
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named trainable tensors in creation order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<S> {
    names: Vec<String>,
    tensors: Vec<Tensor<S>>,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn add(&mut self, name: String, t: Tensor<S>) -> ParamId {
        self.names.push(name);
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<S>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<S>] {
        &mut self.tensors
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.tensors[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Number of scalar parameters whose name starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.names
            .iter()
            .zip(&self.tensors)
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, t)| t.len())
            .sum()
    }
}

/// One forward computation over a model: the graph, the parameters bound to
/// it, the batch-norm mode and the noise used for sampling.
pub struct Session<'a, S: Scalar> {
    pub graph: Graph<S>,
    vars: Vec<Var>,
    running: &'a [BnRunning<S>],
    pub mode: Mode,
    noise: &'a mut dyn NoiseSource<S>,
    bn_updates: Vec<(usize, Tensor<S>, Tensor<S>)>,
}

impl<'a, S: Scalar> Session<'a, S> {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn param_vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn eps(&mut self, rows: usize, cols: usize) -> Tensor<S> {
        self.noise.standard_normal(rows, cols)
    }

    /// Gradients for every parameter in store order; zeros where unused.
    pub fn param_grads(&self) -> Vec<Tensor<S>> {
        self.vars
            .iter()
            .map(|&v| {
                self.graph
                    .grad(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(self.graph.shape(v)))
            })
            .collect()
    }

    /// Batch statistics observed in train mode, to be folded into the running
    /// averages with [`Hierarchy::apply_bn_updates`].
    pub fn take_bn_updates(&mut self) -> Vec<(usize, Tensor<S>, Tensor<S>)> {
        std::mem::take(&mut self.bn_updates)
    }
}

/// Per-layer record of one inference pass.
#[derive(Clone, Copy, Debug)]
pub struct LatentLayer {
    pub z: Var,
    pub q: GaussianParams,
    pub p: GaussianParams,
    /// Whether p's conditioning sample was drawn before z. Only then does
    /// E_q[log q(z) − log p(z)] equal the closed-form KL of the two
    /// conditionals; in bottom-up inference z_{i+1} is drawn from q(z_{i+1} | z_i)
    /// and the term must be estimated from the sample instead.
    pub analytic_kl: bool,
}

#[derive(Clone, Copy, Debug)]
pub enum ObservationParams {
    Bernoulli(BernoulliParams),
    Gaussian(GaussianParams),
}

/// Samples, posterior and prior parameters for every latent layer (bottom to
/// top) plus the observation model conditioned on z1.
#[derive(Clone, Debug)]
pub struct LatentPass {
    pub layers: Vec<LatentLayer>,
    pub observation: ObservationParams,
    /// Upward-pass Gaussian terms (μ̂, σ̂²) for ladder inference.
    pub bottom_up: Option<Vec<GaussianParams>>,
}

#[derive(Clone, Debug)]
struct PriorMap {
    mlp: MlpBlock,
    head: GaussianHead,
}

#[derive(Clone, Debug)]
enum ObservationHead {
    Bernoulli(BernoulliHead),
    Gaussian(GaussianHead),
}

#[derive(Clone, Debug)]
struct Generative {
    obs_mlp: MlpBlock,
    obs_head: ObservationHead,
    /// Entry k maps z_{k+1} to the parameters of z_k.
    prior_maps: Vec<PriorMap>,
}

#[derive(Clone, Debug)]
struct Inference {
    blocks: Vec<MlpBlock>,
    heads: Vec<GaussianHead>,
}

/// Generative model + inference network + parameters.
#[derive(Clone, Debug)]
pub struct Hierarchy<S: Scalar> {
    config: HierarchyConfig,
    params: ParamStore<S>,
    running: Vec<BnRunning<S>>,
    generative: Generative,
    inference: Inference,
    mode: Mode,
}

impl<S: Scalar> Hierarchy<S> {
    /// Build and initialize from `seed`. Identical seeds give bit-identical
    /// parameters.
    pub fn new(config: HierarchyConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(seed, Stream::Init);
        let mut params = ParamStore::default();
        let mut running = Vec::new();
        let act = config.nonlinearity.activation();
        let gen_bn = config.use_bn && config.bn_scope == BnScope::All;
        let inf_bn = config.use_bn;
        let (lat, widths) = (&config.latent_sizes, &config.mlp_widths);

        let obs_mlp = MlpBlock::new(
            &mut params,
            &mut running,
            &mut rng,
            "gen.x.mlp",
            lat[0],
            widths[0],
            act,
            gen_bn,
        );
        let obs_head = match config.observation {
            Observation::Bernoulli => ObservationHead::Bernoulli(BernoulliHead {
                logits: LinearLayer::new(&mut params, &mut rng, "gen.x.head", widths[0], config.x_dim),
            }),
            Observation::Gaussian => ObservationHead::Gaussian(GaussianHead::new(
                &mut params,
                &mut rng,
                "gen.x.head",
                widths[0],
                config.x_dim,
            )),
        };
        let mut prior_maps = Vec::new();
        for k in 0..config.depth().saturating_sub(1) {
            let name = format!("gen.z{}", k + 1);
            let mlp = MlpBlock::new(
                &mut params,
                &mut running,
                &mut rng,
                &format!("{name}.mlp"),
                lat[k + 1],
                widths[k + 1],
                act,
                gen_bn,
            );
            let head = GaussianHead::new(&mut params, &mut rng, &format!("{name}.head"), widths[k + 1], lat[k]);
            prior_maps.push(PriorMap { mlp, head });
        }

        let mut blocks = Vec::new();
        let mut heads = Vec::new();
        for k in 0..config.depth() {
            let input = match (k, config.inference) {
                (0, _) => config.x_dim,
                (_, InferenceKind::Vae) => lat[k - 1],
                (_, InferenceKind::Lvae) => widths[k - 1],
            };
            let name = format!("inf.z{}", k + 1);
            blocks.push(MlpBlock::new(
                &mut params,
                &mut running,
                &mut rng,
                &format!("{name}.mlp"),
                input,
                widths[k],
                act,
                inf_bn,
            ));
            heads.push(GaussianHead::new(&mut params, &mut rng, &format!("{name}.head"), widths[k], lat[k]));
        }

        Ok(Hierarchy {
            config,
            params,
            running,
            generative: Generative {
                obs_mlp,
                obs_head,
                prior_maps,
            },
            inference: Inference { blocks, heads },
            mode: Mode::Train,
        })
    }

    pub fn config(&self) -> &HierarchyConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[BnRunning<S>] {
        &self.running
    }

    pub fn running_stats_mut(&mut self) -> &mut [BnRunning<S>] {
        &mut self.running
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Switch every batch-norm layer between batch and running statistics.
    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn num_parameters(&self) -> usize {
        self.params.count()
    }

    /// Same architecture and values in another precision.
    pub fn cast<T: Scalar>(&self) -> Hierarchy<T> {
        let mut params = ParamStore::default();
        for (n, t) in self.params.names().iter().zip(self.params.tensors()) {
            params.add(n.clone(), t.cast());
        }
        Hierarchy {
            config: self.config.clone(),
            params,
            running: self
                .running
                .iter()
                .map(|r| BnRunning {
                    mean: r.mean.cast(),
                    var: r.var.cast(),
                })
                .collect(),
            generative: self.generative.clone(),
            inference: self.inference.clone(),
            mode: self.mode,
        }
    }

    /// Open a forward session in the model's current mode.
    pub fn session<'a>(&'a self, noise: &'a mut dyn NoiseSource<S>) -> Session<'a, S> {
        let mut graph = Graph::new();
        let vars = self
            .params
            .tensors()
            .iter()
            .map(|t| graph.param(t.clone()))
            .collect();
        Session {
            graph,
            vars,
            running: &self.running,
            mode: self.mode,
            noise,
            bn_updates: Vec::new(),
        }
    }

    pub fn apply_bn_updates(&mut self, updates: &[(usize, Tensor<S>, Tensor<S>)]) {
        for (slot, mean, var) in updates {
            self.running[*slot].update(mean, var);
        }
    }

    fn check_input(&self, cx: &Session<'_, S>, x: Var) -> Result<()> {
        let s = cx.graph.shape(x);
        if s.len() != 2 || s[1] != self.config.x_dim {
            return Err(Error::config(format!(
                "input shape {s:?} does not match observation dimension {}",
                self.config.x_dim
            )));
        }
        Ok(())
    }

    /// p(z_k | z_{k+1}) for k < L−1 (0-based), N(0, I) for the top layer.
    fn prior_for(&self, cx: &mut Session<'_, S>, k: usize, parent: Option<Var>, rows: usize) -> Result<GaussianParams> {
        match parent {
            None => Ok(GaussianParams::standard(&mut cx.graph, rows, self.config.latent_sizes[k])),
            Some(z) => {
                let map = &self.generative.prior_maps[k];
                let d = map.mlp.forward(cx, z)?;
                map.head.forward(cx, d)
            }
        }
    }

    fn observation_for(&self, cx: &mut Session<'_, S>, z1: Var) -> Result<ObservationParams> {
        let d = self.generative.obs_mlp.forward(cx, z1)?;
        Ok(match &self.generative.obs_head {
            ObservationHead::Bernoulli(h) => ObservationParams::Bernoulli(h.forward(cx, d)?),
            ObservationHead::Gaussian(h) => ObservationParams::Gaussian(h.forward(cx, d)?),
        })
    }

    /// Generative parameters for a full set of samples (bottom to top):
    /// the prior of every layer and the observation model on z1.
    pub fn generative_decode(
        &self,
        cx: &mut Session<'_, S>,
        zs: &[Var],
    ) -> Result<(Vec<GaussianParams>, ObservationParams)> {
        let depth = self.config.depth();
        if zs.len() != depth {
            return Err(Error::config(format!(
                "decode needs {depth} latent samples, got {}",
                zs.len()
            )));
        }
        let rows = cx.graph.shape(zs[0])[0];
        for (k, &z) in zs.iter().enumerate() {
            if cx.graph.shape(z) != [rows, self.config.latent_sizes[k]] {
                return Err(Error::config(format!(
                    "latent sample {} has shape {:?}, expected [{rows}, {}]",
                    k + 1,
                    cx.graph.shape(z),
                    self.config.latent_sizes[k]
                )));
            }
        }
        let mut priors = Vec::with_capacity(depth);
        for k in (0..depth).rev() {
            let parent = (k + 1 < depth).then(|| zs[k + 1]);
            priors.push(self.prior_for(cx, k, parent, rows)?);
        }
        priors.reverse();
        let obs = self.observation_for(cx, zs[0])?;
        Ok((priors, obs))
    }

    /// Ancestral sample from the prior: z_L ~ N(0, I) down to the observation
    /// parameters.
    pub fn sample_prior(&self, cx: &mut Session<'_, S>, n: usize) -> Result<ObservationParams> {
        let depth = self.config.depth();
        let mut z = None;
        for k in (0..depth).rev() {
            let p = self.prior_for(cx, k, z, n)?;
            let eps = cx.eps(n, self.config.latent_sizes[k]);
            z = Some(reparam_sample(&mut cx.graph, &p, eps)?);
        }
        self.observation_for(cx, z.expect("depth >= 1"))
    }

    /// Bottom-up inference followed by a generative decode of the sampled chain.
    pub fn vae_infer(&self, cx: &mut Session<'_, S>, x: Var) -> Result<LatentPass> {
        self.check_input(cx, x)?;
        let depth = self.config.depth();
        let rows = cx.graph.shape(x)[0];
        let mut input = x;
        let mut qs = Vec::with_capacity(depth);
        let mut zs = Vec::with_capacity(depth);
        for k in 0..depth {
            let d = self.inference.blocks[k].forward(cx, input)?;
            let q = self.inference.heads[k].forward(cx, d)?;
            let eps = cx.eps(rows, self.config.latent_sizes[k]);
            let z = reparam_sample(&mut cx.graph, &q, eps)?;
            qs.push(q);
            zs.push(z);
            input = z;
        }
        let (priors, observation) = self.generative_decode(cx, &zs)?;
        let layers = zs
            .into_iter()
            .zip(qs)
            .zip(priors)
            .enumerate()
            .map(|(k, ((z, q), p))| LatentLayer { z, q, p, analytic_kl: k + 1 == depth })
            .collect();
        Ok(LatentPass {
            layers,
            observation,
            bottom_up: None,
        })
    }

    /// Deterministic upward pass, then top-down sampling with
    /// precision-weighted fusion against the generative conditionals.
    pub fn lvae_infer(&self, cx: &mut Session<'_, S>, x: Var) -> Result<LatentPass> {
        self.check_input(cx, x)?;
        let depth = self.config.depth();
        let rows = cx.graph.shape(x)[0];
        let mut d = x;
        let mut bottom_up = Vec::with_capacity(depth);
        for k in 0..depth {
            d = self.inference.blocks[k].forward(cx, d)?;
            bottom_up.push(self.inference.heads[k].forward(cx, d)?);
        }

        let mut layers: Vec<LatentLayer> = Vec::with_capacity(depth);
        let mut parent: Option<Var> = None;
        for k in (0..depth).rev() {
            let p = self.prior_for(cx, k, parent, rows)?;
            let q = if parent.is_none() {
                bottom_up[k]
            } else {
                precision_weighted_fusion(&mut cx.graph, &bottom_up[k], &p)?
            };
            let eps = cx.eps(rows, self.config.latent_sizes[k]);
            let z = reparam_sample(&mut cx.graph, &q, eps)?;
            layers.push(LatentLayer { z, q, p, analytic_kl: true });
            parent = Some(z);
        }
        layers.reverse();
        let observation = self.observation_for(cx, layers[0].z)?;
        Ok(LatentPass {
            layers,
            observation,
            bottom_up: Some(bottom_up),
        })
    }

    /// Inference with the configured structure.
    pub fn infer(&self, cx: &mut Session<'_, S>, x: Var) -> Result<LatentPass> {
        match self.config.inference {
            InferenceKind::Vae => self.vae_infer(cx, x),
            InferenceKind::Lvae => self.lvae_infer(cx, x),
        }
    }
}
