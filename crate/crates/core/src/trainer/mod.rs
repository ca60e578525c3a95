//! Adam, the epoch loop with warm-up and dynamic binarization, evaluation and
//! checkpointing.

mod adam;
mod checkpoint;
mod metrics;
mod plan;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainerRngs, FORMAT_VERSION};
pub use metrics::{csv_header, read_metrics_csv, MetricsRow, MetricsWriter};
pub use plan::{EpochSettings, FinetunePlan, TrainPlan};

use std::borrow::Cow;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::data::binarize;
use crate::error::{Error, Result};
use crate::model::{Hierarchy, HierarchyConfig, Mode, Observation};
use crate::noise::{keyed_rng, stream_rng, RngNoise, RngState, Stream};
use crate::objectives::{elbo, training_objective, BoundEstimate};
use crate::tensor::{Scalar, Tensor};

/// Training and test inputs. With `binarize`, both hold intensities in
/// `[0, 1]` that are sampled to binary values (training: every epoch; test:
/// once per seed).
#[derive(Clone, Debug)]
pub struct TrainData {
    pub train: Tensor<f32>,
    pub test: Tensor<f32>,
    pub binarize: bool,
}

impl TrainData {
    pub fn new(train: Tensor<f32>, test: Tensor<f32>, binarize: bool) -> Result<Self> {
        if train.shape().len() != 2 || test.shape().len() != 2 || train.cols() != test.cols() {
            return Err(Error::config(format!(
                "train {:?} and test {:?} must be matrices with equal width",
                train.shape(),
                test.shape()
            )));
        }
        Ok(TrainData {
            train,
            test,
            binarize,
        })
    }

    /// The test set as evaluated for `seed`: a single fixed binarization when
    /// the data is binarized.
    pub fn eval_test_set(&self, seed: u64) -> Result<Tensor<f32>> {
        if self.binarize {
            binarize(&self.test, &mut stream_rng(seed, Stream::TestBinarize))
        } else {
            Ok(self.test.clone())
        }
    }

    pub fn dim(&self) -> usize {
        self.train.cols()
    }
}

/// Callbacks invoked by [`Trainer::run`].
pub trait TrainHooks {
    fn on_eval(&mut self, _row: &MetricsRow) -> Result<()> {
        Ok(())
    }

    fn on_epoch_end(&mut self, _trainer: &Trainer) -> Result<()> {
        Ok(())
    }
}

impl TrainHooks for () {}

/// Collects evaluation rows in memory.
impl TrainHooks for Vec<MetricsRow> {
    fn on_eval(&mut self, row: &MetricsRow) -> Result<()> {
        self.push(row.clone());
        Ok(())
    }
}

impl TrainHooks for MetricsWriter {
    fn on_eval(&mut self, row: &MetricsRow) -> Result<()> {
        self.append(row)
    }
}

/// Single-sample ELBO (β = 1) with eval-mode batch norm, averaged over all
/// rows of `x` in chunks of `chunk` rows.
pub fn evaluate_elbo<S: Scalar>(
    model: &Hierarchy<S>,
    x: &Tensor<S>,
    chunk: usize,
    rng: &mut ChaCha8Rng,
) -> Result<BoundEstimate> {
    let n = x.rows();
    let depth = model.config().depth();
    let mut recon = 0.0;
    let mut kl_total = 0.0;
    let mut per_layer = vec![0.0; depth];
    let mut per_unit: Vec<Vec<f64>> = model
        .config()
        .latent_sizes
        .iter()
        .map(|&d| vec![0.0; d])
        .collect();
    let mut per_point = Vec::with_capacity(n);
    let idx: Vec<usize> = (0..n).collect();
    for rows in idx.chunks(chunk.max(1)) {
        let xb = x.select_rows(rows);
        let mut noise = RngNoise::new(rng);
        let mut cx = model.session(&mut noise);
        cx.mode = Mode::Eval;
        let xv = cx.graph.constant(xb);
        let pass = model.infer(&mut cx, xv)?;
        let est = elbo(&mut cx.graph, &pass, xv, 1, 1.0)?.estimate;
        let w = rows.len() as f64 / n as f64;
        recon += w * est.recon_term;
        kl_total += w * est.kl_total;
        for (acc, v) in per_layer.iter_mut().zip(&est.kl_per_layer) {
            *acc += w * v;
        }
        for (acc, units) in per_unit.iter_mut().zip(&est.kl_per_unit) {
            for (a, v) in acc.iter_mut().zip(units) {
                *a += w * v;
            }
        }
        per_point.extend(est.elbo_per_datapoint);
    }
    Ok(BoundEstimate {
        elbo: recon - kl_total,
        recon_term: recon,
        kl_total,
        kl_per_layer: per_layer,
        kl_per_unit: per_unit,
        beta: 1.0,
        elbo_per_datapoint: per_point,
    })
}

/// Mutable training state: model, optimizer, epoch counter and RNG streams.
pub struct Trainer {
    model: Hierarchy<f32>,
    plan: TrainPlan,
    adam: AdamState<f32>,
    epoch: usize,
    noise: ChaCha8Rng,
    binarize: ChaCha8Rng,
    shuffle: ChaCha8Rng,
    test_x: Tensor<f32>,
}

fn check_data(config: &HierarchyConfig, data: &TrainData) -> Result<()> {
    if data.dim() != config.x_dim {
        return Err(Error::config(format!(
            "dataset has dimension {}, model expects {}",
            data.dim(),
            config.x_dim
        )));
    }
    if data.binarize && config.observation != Observation::Bernoulli {
        return Err(Error::config(
            "binarized data needs the Bernoulli observation model",
        ));
    }
    Ok(())
}


impl Trainer {
    pub fn new(plan: TrainPlan, config: HierarchyConfig, data: &TrainData) -> Result<Self> {
        plan.validate()?;
        check_data(&config, data)?;
        let model = Hierarchy::new(config, plan.seed)?;
        let adam = AdamState::new(
            AdamConfig {
                lr: plan.lr,
                ..AdamConfig::default()
            },
            model.params(),
        );
        Ok(Trainer {
            test_x: data.eval_test_set(plan.seed)?,
            noise: stream_rng(plan.seed, Stream::Noise),
            binarize: stream_rng(plan.seed, Stream::Binarize),
            shuffle: stream_rng(plan.seed, Stream::Shuffle),
            model,
            plan,
            adam,
            epoch: 0,
        })
    }

    /// Continue from a checkpoint. `plan` may extend the stored plan (e.g. more
    /// epochs); the seed must match.
    pub fn from_checkpoint(ck: Checkpoint, plan: Option<TrainPlan>, data: &TrainData) -> Result<Self> {
        let seed = ck.plan.seed;
        let plan = plan.unwrap_or(ck.plan);
        plan.validate()?;
        if plan.seed != seed {
            return Err(Error::config("resume plan must keep the checkpoint seed"));
        }
        check_data(ck.model.config(), data)?;
        let restore = |r: &RngState| {
            r.restore()
                .ok_or_else(|| Error::Checkpoint(format!("invalid RNG position {}", r.word_pos)))
        };
        let mut model = ck.model;
        model.set_mode(Mode::Train);
        Ok(Trainer {
            test_x: data.eval_test_set(plan.seed)?,
            noise: restore(&ck.rngs.noise)?,
            binarize: restore(&ck.rngs.binarize)?,
            shuffle: restore(&ck.rngs.shuffle)?,
            model,
            plan,
            adam: ck.adam,
            epoch: ck.epoch,
        })
    }

    pub fn model(&self) -> &Hierarchy<f32> {
        &self.model
    }

    pub fn plan(&self) -> &TrainPlan {
        &self.plan
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.plan.total_epochs()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            plan: self.plan.clone(),
            adam: self.adam.clone(),
            epoch: self.epoch,
            rngs: TrainerRngs {
                noise: RngState::capture(&self.noise),
                binarize: RngState::capture(&self.binarize),
                shuffle: RngState::capture(&self.shuffle),
            },
        }
    }

    /// Test-set estimate for the current parameters using the evaluation
    /// noise of `epoch`.
    pub fn evaluate(&self, epoch: usize) -> Result<BoundEstimate> {
        let mut rng = keyed_rng(self.plan.seed, Stream::EvalNoise, epoch as u64);
        evaluate_elbo(&self.model, &self.test_x, self.plan.eval_chunk, &mut rng)
    }

    /// Train one epoch; returns the evaluation row when this epoch is logged.
    pub fn run_epoch(&mut self, data: &TrainData) -> Result<Option<MetricsRow>> {
        let e = self.epoch;
        let s = self.plan.settings(e);
        self.adam.config.lr = s.lr;

        let x: Cow<'_, Tensor<f32>> = if data.binarize {
            Cow::Owned(binarize(&data.train, &mut self.binarize)?)
        } else {
            Cow::Borrowed(&data.train)
        };
        let n = x.rows();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.shuffle);

        let mut train_elbo = 0.0;
        for rows in order.chunks(self.plan.batch_size) {
            let xb = x.select_rows(rows);
            let (grads, est, updates) = {
                let mut noise = RngNoise::new(&mut self.noise);
                let mut cx = self.model.session(&mut noise);
                let obj = training_objective(&self.model, &mut cx, &xb, s.n_mc, s.n_iw, s.beta)?;
                cx.graph.backward(obj.loss)?;
                (cx.param_grads(), obj.estimate, cx.take_bn_updates())
            };
            self.adam.step(self.model.params_mut(), &grads)?;
            self.model.apply_bn_updates(&updates);
            train_elbo += est.elbo * rows.len() as f64 / n as f64;
        }
        self.epoch += 1;

        if !self.plan.is_eval_epoch(e) {
            return Ok(None);
        }
        let test = self.evaluate(e)?;
        Ok(Some(MetricsRow {
            epoch: e,
            beta: s.beta,
            lr: s.lr,
            train_elbo,
            test_elbo: test.elbo,
            test_recon: test.recon_term,
            test_kl_total: test.kl_total,
            test_kl_per_layer: test.kl_per_layer,
            test_kl_per_unit: test.kl_per_unit,
        }))
    }

    /// Train to the end of the plan. A numeric failure returns
    /// [`Error::Diverged`] carrying the state from before the failing epoch.
    pub fn run(&mut self, data: &TrainData, hooks: &mut dyn TrainHooks) -> Result<Vec<MetricsRow>> {
        let mut rows = Vec::new();
        while !self.is_finished() {
            let last_good = self.checkpoint();
            match self.run_epoch(data) {
                Ok(row) => {
                    if let Some(r) = row {
                        hooks.on_eval(&r)?;
                        rows.push(r);
                    }
                    hooks.on_epoch_end(self)?;
                }
                Err(err @ Error::Numeric { .. }) => {
                    return Err(Error::Diverged {
                        epoch: last_good.epoch,
                        source: Box::new(err),
                        last_good: Box::new(last_good),
                    });
                }
                Err(err) => return Err(err),
            }
        }
        Ok(rows)
    }
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<MetricsRow>,
}

/// Train a fresh model under `plan`.
pub fn train(
    plan: TrainPlan,
    config: HierarchyConfig,
    data: &TrainData,
    hooks: &mut dyn TrainHooks,
) -> Result<TrainOutcome> {
    let mut t = Trainer::new(plan, config, data)?;
    let metrics = t.run(data, hooks)?;
    Ok(TrainOutcome {
        checkpoint: t.checkpoint(),
        metrics,
    })
}
