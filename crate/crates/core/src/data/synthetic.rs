use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::noise::{stream_rng, Stream};
use crate::tensor::Tensor;

/// Noise variance used by [`make_synthetic_lg`] on every layer.
pub const DEFAULT_NOISE_VAR: f64 = 0.25;

/// Samples from a linear-Gaussian hierarchy together with their exact
/// marginal log-density.
///
/// `dims[0]` is the observed dimension and `dims[i]` the width of latent layer
/// `i`. `loadings[i]` maps layer `i + 1` to layer `i` (`dims[i] × dims[i + 1]`),
/// and `noise_vars[i]` is the isotropic noise variance added at layer `i`.
#[derive(Clone, Debug)]
pub struct SyntheticLGDataset {
    pub dims: Vec<usize>,
    pub loadings: Vec<DMatrix<f64>>,
    pub noise_vars: Vec<f64>,
    pub samples: Tensor<f64>,
    pub log_px: Vec<f64>,
    covariance: DMatrix<f64>,
    chol_l: DMatrix<f64>,
    log_det: f64,
}

impl SyntheticLGDataset {
    pub fn from_generator(
        loadings: Vec<DMatrix<f64>>,
        noise_vars: Vec<f64>,
        n: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if loadings.is_empty() || loadings.len() != noise_vars.len() {
            return Err(Error::Generation(format!(
                "need one noise variance per loading matrix ({} vs {})",
                noise_vars.len(),
                loadings.len()
            )));
        }
        if n == 0 {
            return Err(Error::Generation("sample count must be positive".into()));
        }
        let mut dims = vec![loadings[0].nrows()];
        for (i, w) in loadings.iter().enumerate() {
            if w.nrows() != dims[i] {
                return Err(Error::Generation(format!(
                    "loading {i} has {} rows, expected {}",
                    w.nrows(),
                    dims[i]
                )));
            }
            dims.push(w.ncols());
        }
        if let Some(v) = noise_vars.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Generation(format!("invalid noise variance {v}")));
        }

        let top = *dims.last().expect("non-empty");
        let mut cov = DMatrix::<f64>::identity(top, top);
        for (w, &s2) in loadings.iter().zip(&noise_vars).rev() {
            cov = w * cov * w.transpose();
            for j in 0..cov.nrows() {
                cov[(j, j)] += s2;
            }
        }
        let chol = cov.clone().cholesky().ok_or_else(|| {
            Error::Generation("marginal covariance is not positive definite".into())
        })?;
        let chol_l = chol.l();
        let log_det = 2.0 * chol_l.diagonal().iter().map(|v| v.ln()).sum::<f64>();

        let d = dims[0];
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            let mut z = DVector::<f64>::from_fn(top, |_, _| rng.sample(StandardNormal));
            for (w, &s2) in loadings.iter().zip(&noise_vars).rev() {
                let sd = s2.sqrt();
                z = w * z;
                for v in z.iter_mut() {
                    let e: f64 = rng.sample(StandardNormal);
                    *v += sd * e;
                }
            }
            data.extend(z.iter());
        }
        let samples = Tensor::new(&[n, d], data)?;
        let mut ds = SyntheticLGDataset {
            dims,
            loadings,
            noise_vars,
            samples,
            log_px: Vec::new(),
            covariance: cov,
            chol_l,
            log_det,
        };
        ds.log_px = (0..n).map(|i| ds.log_density(ds.samples.row(i))).collect();
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Exact log N(x; 0, Σ).
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let d = x.len();
        let v = DVector::from_column_slice(x);
        let y = self
            .chol_l
            .solve_lower_triangular(&v)
            .expect("Cholesky factor has positive diagonal");
        -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + self.log_det + y.norm_squared())
    }

    pub fn mean_log_px(&self) -> f64 {
        self.log_px.iter().sum::<f64>() / self.log_px.len() as f64
    }

    /// Samples as single-precision training data.
    pub fn samples_f32(&self) -> Tensor<f32> {
        self.samples.cast()
    }
}

/// Draw `n` samples from a random linear-Gaussian hierarchy. `dims` lists the
/// observed dimension first, then each latent width bottom to top.
pub fn make_synthetic_lg(dims: &[usize], n: usize, seed: u64) -> Result<SyntheticLGDataset> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::Generation(format!(
            "need an observed and at least one latent dimension, got {dims:?}"
        )));
    }
    let mut rng = stream_rng(seed, Stream::Synthetic);
    let loadings: Vec<DMatrix<f64>> = dims
        .windows(2)
        .map(|p| DMatrix::from_fn(p[0], p[1], |_, _| rng.sample(StandardNormal)))
        .collect();
    let noise_vars = vec![DEFAULT_NOISE_VAR; loadings.len()];
    SyntheticLGDataset::from_generator(loadings, noise_vars, n, &mut rng)
}
