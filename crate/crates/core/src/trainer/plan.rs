use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{beta_at, WarmupSchedule};

/// Extra epochs after the base schedule with a stepped learning-rate decay
/// and more samples per datapoint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetunePlan {
    pub extra_epochs: usize,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub n_mc: usize,
    pub n_iw: usize,
}

impl Default for FinetunePlan {
    fn default() -> Self {
        FinetunePlan {
            extra_epochs: 2000,
            lr_decay: 0.75,
            decay_every: 200,
            n_mc: 10,
            n_iw: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainPlan {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup: Option<WarmupSchedule>,
    pub n_mc: usize,
    pub n_iw: usize,
    pub finetune: Option<FinetunePlan>,
    pub seed: u64,
    /// Evaluate when `epoch % eval_every == 0` and after the last epoch.
    pub eval_every: usize,
    /// Rows per forward pass during evaluation.
    pub eval_chunk: usize,
}

impl Default for TrainPlan {
    fn default() -> Self {
        TrainPlan {
            epochs: 2000,
            batch_size: 256,
            lr: 1e-3,
            warmup: Some(WarmupSchedule::new(200)),
            n_mc: 1,
            n_iw: 1,
            finetune: None,
            seed: 0,
            eval_every: 10,
            eval_chunk: 1000,
        }
    }
}

/// Per-epoch settings derived from a plan.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochSettings {
    pub beta: f64,
    pub lr: f64,
    pub n_mc: usize,
    pub n_iw: usize,
}

impl TrainPlan {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.batch_size == 0 {
            problems.push("batch_size must be positive".to_string());
        }
        if self.n_mc == 0 || self.n_iw == 0 {
            problems.push("n_mc and n_iw must be positive".to_string());
        }
        if self.eval_every == 0 || self.eval_chunk == 0 {
            problems.push("eval_every and eval_chunk must be positive".to_string());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            problems.push(format!("lr must be positive, got {}", self.lr));
        }
        if let Some(f) = &self.finetune {
            if f.decay_every == 0 || f.n_mc == 0 || f.n_iw == 0 {
                problems.push("fine-tune counts must be positive".to_string());
            }
            if !(f.lr_decay > 0.0 && f.lr_decay <= 1.0) {
                problems.push(format!("lr_decay must lie in (0, 1], got {}", f.lr_decay));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn total_epochs(&self) -> usize {
        self.epochs + self.finetune.map_or(0, |f| f.extra_epochs)
    }

    /// Settings for global epoch `e`; fine-tune epochs follow the base ones.
    pub fn settings(&self, e: usize) -> EpochSettings {
        match self.finetune {
            Some(f) if e >= self.epochs => {
                let fe = e - self.epochs;
                EpochSettings {
                    beta: 1.0,
                    lr: self.lr * f.lr_decay.powi((fe / f.decay_every) as i32),
                    n_mc: f.n_mc,
                    n_iw: f.n_iw,
                }
            }
            _ => EpochSettings {
                beta: beta_at(self.warmup.as_ref(), e),
                lr: self.lr,
                n_mc: self.n_mc,
                n_iw: self.n_iw,
            },
        }
    }

    pub fn is_eval_epoch(&self, e: usize) -> bool {
        e % self.eval_every == 0 || e + 1 == self.total_epochs()
    }
}
