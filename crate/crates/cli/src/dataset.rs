use anyhow::{Context, Result};
use lvae_core::data::{load_mnist, make_synthetic_lg, SyntheticLGDataset, Split};
use lvae_core::noise::{keyed_rng, Stream};
use lvae_core::trainer::TrainData;

use crate::config::{DataConfig, Source};

pub struct Loaded {
    pub data: TrainData,
    pub test_labels: Option<Vec<u8>>,
}

pub fn load(cfg: &DataConfig) -> Result<Loaded> {
    match cfg.source {
        Source::Synthetic => {
            let train = make_synthetic_lg(&cfg.synthetic_dims, cfg.synthetic_train, cfg.seed)?;
            let test = SyntheticLGDataset::from_generator(
                train.loadings.clone(),
                train.noise_vars.clone(),
                cfg.synthetic_test,
                &mut keyed_rng(cfg.seed, Stream::Synthetic, 1),
            )?;
            Ok(Loaded {
                data: TrainData::new(train.samples_f32(), test.samples_f32(), cfg.binarize)?,
                test_labels: None,
            })
        }
        Source::Mnist => {
            let dir = &cfg.dir;
            let mut train = load_mnist(dir, Split::Train)
                .with_context(|| format!("loading MNIST from {} (set LVAE_DATA_DIR or data.dir)", dir.display()))?;
            if cfg.subset > 0 {
                train = train.take_first(cfg.subset)?;
            }
            let test = load_mnist(dir, Split::Test)?;
            Ok(Loaded {
                data: TrainData::new(train.images, test.images, cfg.binarize)?,
                test_labels: test.labels,
            })
        }
    }
}
