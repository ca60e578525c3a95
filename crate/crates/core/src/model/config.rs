use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Activation;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InferenceKind {
    /// Bottom-up chain q(z1|x) Π q(zi|zi−1).
    Vae,
    /// Deterministic upward pass, then top-down precision-weighted fusion.
    Lvae,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Observation {
    Bernoulli,
    Gaussian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    LeakyRelu,
    Tanh,
}

impl Nonlinearity {
    pub fn activation(self) -> Activation {
        match self {
            Nonlinearity::LeakyRelu => Activation::LEAKY_RELU,
            Nonlinearity::Tanh => Activation::Tanh,
        }
    }

    /// Leaky rectifiers for binary data, tanh for continuous data.
    pub fn default_for(obs: Observation) -> Self {
        match obs {
            Observation::Bernoulli => Nonlinearity::LeakyRelu,
            Observation::Gaussian => Nonlinearity::Tanh,
        }
    }
}

/// Which MLP blocks carry batch normalization when it is enabled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BnScope {
    All,
    InferenceOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierarchyConfig {
    pub x_dim: usize,
    /// Latent layer sizes z1..zL, bottom to top.
    pub latent_sizes: Vec<usize>,
    /// Hidden width of the MLP on each connection: entry 0 joins x and z1,
    /// entry i joins zi and zi+1.
    pub mlp_widths: Vec<usize>,
    pub inference: InferenceKind,
    pub observation: Observation,
    pub use_bn: bool,
    pub bn_scope: BnScope,
    pub nonlinearity: Nonlinearity,
}

impl HierarchyConfig {
    /// The five-layer MNIST architecture: 64-32-16-8-4 latents with
    /// 512-256-128-64-32 hidden units.
    pub fn mnist(inference: InferenceKind) -> Self {
        HierarchyConfig {
            x_dim: 784,
            latent_sizes: vec![64, 32, 16, 8, 4],
            mlp_widths: vec![512, 256, 128, 64, 32],
            inference,
            observation: Observation::Bernoulli,
            use_bn: true,
            bn_scope: BnScope::All,
            nonlinearity: Nonlinearity::LeakyRelu,
        }
    }

    pub fn depth(&self) -> usize {
        self.latent_sizes.len()
    }

    /// Keeps the bottom `depth` latent layers, dropping the rest from the top.
    pub fn truncated(&self, depth: usize) -> Self {
        let mut c = self.clone();
        c.latent_sizes.truncate(depth);
        c.mlp_widths.truncate(depth);
        c
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.x_dim == 0 {
            problems.push("x_dim must be positive".to_string());
        }
        if self.latent_sizes.is_empty() {
            problems.push("latent_sizes must not be empty".to_string());
        }
        if self.latent_sizes.iter().any(|&s| s == 0) {
            problems.push("latent sizes must be positive".to_string());
        }
        if self.mlp_widths.iter().any(|&s| s == 0) {
            problems.push("mlp widths must be positive".to_string());
        }
        if self.mlp_widths.len() != self.latent_sizes.len() {
            problems.push(format!(
                "mlp_widths has {} entries but there are {} latent layers",
                self.mlp_widths.len(),
                self.latent_sizes.len()
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}
