//! Dataset ingestion, dynamic binarization and a synthetic linear-Gaussian
//! hierarchy with exact marginal likelihood.

pub mod idx;
mod synthetic;

pub use idx::{encode_idx, parse_idx, read_idx_file, write_idx_file, IdxArray};
pub use synthetic::{make_synthetic_lg, SyntheticLGDataset, DEFAULT_NOISE_VAR};

use std::env;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DATA_DIR_ENV: &str = "LVAE_DATA_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Images as an `n × d` matrix of intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageDataset {
    pub images: Tensor<f32>,
    pub labels: Option<Vec<u8>>,
    pub width: usize,
    pub height: usize,
    pub split: Split,
    pub source: String,
}

impl ImageDataset {
    pub fn len(&self) -> usize {
        self.images.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.images.cols()
    }

    /// Keep the first `n` images, in file order.
    pub fn take_first(&self, n: usize) -> Result<ImageDataset> {
        if n == 0 || n > self.len() {
            return Err(Error::config(format!(
                "subset size {n} outside 1..={}",
                self.len()
            )));
        }
        let idx: Vec<usize> = (0..n).collect();
        Ok(ImageDataset {
            images: self.images.select_rows(&idx),
            labels: self.labels.as_ref().map(|l| l[..n].to_vec()),
            source: format!("{} (first {n})", self.source),
            ..self.clone()
        })
    }
}

/// Read an IDX image file, scaling pixels by 1/255.
pub fn read_idx(path: &Path) -> Result<ImageDataset> {
    let arr = idx::read_idx_file(path)?;
    if arr.dims.len() != 3 {
        return Err(Error::Parse {
            offset: 0,
            message: format!("{} is not an image file (dims {:?})", path.display(), arr.dims),
        });
    }
    let (n, h, w) = (arr.dims[0], arr.dims[1], arr.dims[2]);
    let data = arr.data.iter().map(|&b| b as f32 / 255.0).collect();
    Ok(ImageDataset {
        images: Tensor::new(&[n, h * w], data)?,
        labels: None,
        width: w,
        height: h,
        split: Split::Train,
        source: path.display().to_string(),
    })
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let arr = idx::read_idx_file(path)?;
    if arr.dims.len() != 1 {
        return Err(Error::Parse {
            offset: 0,
            message: format!("{} is not a label file (dims {:?})", path.display(), arr.dims),
        });
    }
    Ok(arr.data)
}

/// Dataset root: `LVAE_DATA_DIR` if set, else `data/mnist` under the workspace.
pub fn default_data_dir() -> PathBuf {
    env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn find_file(dir: &Path, stem: &str) -> Result<PathBuf> {
    for name in [format!("{stem}.gz"), stem.to_string()] {
        let p = dir.join(name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::Input(format!(
        "missing {stem}[.gz] in {}",
        dir.display()
    )))
}

/// Load one MNIST split from `dir` using the standard file names. Labels are
/// attached when the label file is present.
pub fn load_mnist(dir: &Path, split: Split) -> Result<ImageDataset> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let mut ds = read_idx(&find_file(dir, &format!("{prefix}-images-idx3-ubyte"))?)?;
    ds.split = split;
    if let Ok(p) = find_file(dir, &format!("{prefix}-labels-idx1-ubyte")) {
        let labels = read_idx_labels(&p)?;
        if labels.len() != ds.len() {
            return Err(Error::Input(format!(
                "{} labels for {} images",
                labels.len(),
                ds.len()
            )));
        }
        ds.labels = Some(labels);
    }
    Ok(ds)
}

/// Sample each pixel as Bernoulli(intensity).
pub fn binarize(images: &Tensor<f32>, rng: &mut impl Rng) -> Result<Tensor<f32>> {
    if let Some((i, v)) = images
        .data()
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(Error::Input(format!(
            "pixel {i} has intensity {v}, outside [0, 1]"
        )));
    }
    let mut out = images.clone();
    for v in out.data_mut() {
        let u: f32 = rng.random();
        *v = if u < *v { 1.0 } else { 0.0 };
    }
    Ok(out)
}
