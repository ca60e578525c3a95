//! Desk-scale MNIST experiments: four fixed configurations trained on a
//! 5000-image subset, compared across seeds.

use std::path::Path;

use crate::data::{load_mnist, Split};
use crate::diagnostics::{activity_report, ActivityReport, ACTIVE_TAU};
use crate::error::{Error, Result};
use crate::model::{HierarchyConfig, InferenceKind};
use crate::objectives::WarmupSchedule;
use crate::trainer::{train, Checkpoint, MetricsRow, TrainData, TrainHooks, TrainPlan};

pub const SUBSET: usize = 5000;
pub const EPOCHS: usize = 150;
pub const WARMUP_EPOCHS: usize = 40;
pub const BATCH: usize = 256;
pub const LATENTS: [usize; 2] = [16, 8];
pub const WIDTHS: [usize; 2] = [128, 64];
pub const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
/// Seed of the activity report's reparameterization noise.
const DIAG_SEED: u64 = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Preset {
    LvaeBnWu,
    VaeBnWu,
    /// Neither batch norm nor warm-up.
    VaePlain,
    VaeBnNoWu,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::LvaeBnWu, Preset::VaeBnWu, Preset::VaePlain, Preset::VaeBnNoWu];

    pub fn name(self) -> &'static str {
        match self {
            Preset::LvaeBnWu => "lvae-bn-wu",
            Preset::VaeBnWu => "vae-bn-wu",
            Preset::VaePlain => "vae",
            Preset::VaeBnNoWu => "vae-bn",
        }
    }

    pub fn from_name(name: &str) -> Result<Preset> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| {
                let known: Vec<_> = Preset::ALL.iter().map(|p| p.name()).collect();
                Error::config(format!("unknown preset {name:?}; expected one of {}", known.join(", ")))
            })
    }

    pub fn inference(self) -> InferenceKind {
        match self {
            Preset::LvaeBnWu => InferenceKind::Lvae,
            _ => InferenceKind::Vae,
        }
    }

    pub fn uses_bn(self) -> bool {
        self != Preset::VaePlain
    }

    pub fn uses_warmup(self) -> bool {
        matches!(self, Preset::LvaeBnWu | Preset::VaeBnWu)
    }

    pub fn config(self) -> HierarchyConfig {
        let mut c = HierarchyConfig::mnist(self.inference());
        c.latent_sizes = LATENTS.to_vec();
        c.mlp_widths = WIDTHS.to_vec();
        c.use_bn = self.uses_bn();
        c
    }

    pub fn plan(self, seed: u64) -> TrainPlan {
        TrainPlan {
            epochs: EPOCHS,
            batch_size: BATCH,
            warmup: self.uses_warmup().then(|| WarmupSchedule::new(WARMUP_EPOCHS)),
            eval_every: 10,
            seed,
            ..TrainPlan::default()
        }
    }
}

/// First [`SUBSET`] training images and the whole test split, dynamically
/// binarized.
pub fn mnist_subset(dir: &Path) -> Result<TrainData> {
    let train = load_mnist(dir, Split::Train)?.take_first(SUBSET)?;
    let test = load_mnist(dir, Split::Test)?;
    TrainData::new(train.images, test.images, true)
}

#[derive(Clone, Debug)]
pub struct ReproRun {
    pub preset: Preset,
    pub seed: u64,
    /// Test ELBO of the final evaluation.
    pub test_elbo: f64,
    /// Activity on the fixed binarized test set after the last epoch.
    pub activity: ActivityReport,
    pub metrics: Vec<MetricsRow>,
    pub checkpoint: Checkpoint,
}

impl ReproRun {
    pub fn top_layer_kl(&self) -> f64 {
        self.activity.layer_kl_profile().last().copied().unwrap_or(0.0)
    }

    pub fn active_units(&self) -> usize {
        self.activity.total_active()
    }
}

pub fn run_preset(preset: Preset, seed: u64, data: &TrainData, hooks: &mut dyn TrainHooks) -> Result<ReproRun> {
    run_plan(preset, preset.plan(seed), data, hooks)
}

/// Runs a preset's model under a modified plan (e.g. fewer epochs).
pub fn run_plan(preset: Preset, plan: TrainPlan, data: &TrainData, hooks: &mut dyn TrainHooks) -> Result<ReproRun> {
    let seed = plan.seed;
    let out = train(plan, preset.config(), data, hooks)?;
    let test_elbo = out
        .metrics
        .last()
        .map(|r| r.test_elbo)
        .ok_or_else(|| Error::config("repro run produced no evaluation"))?;
    let test_x = data.eval_test_set(seed)?;
    let activity = activity_report(&out.checkpoint.model, &test_x, ACTIVE_TAU, DIAG_SEED)?;
    Ok(ReproRun {
        preset,
        seed,
        test_elbo,
        activity: ActivityReport {
            epoch: Some(out.checkpoint.epoch),
            ..activity
        },
        metrics: out.metrics,
        checkpoint: out.checkpoint,
    })
}

/// Per-seed outcome of the directional comparisons.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedComparison {
    pub seed: u64,
    /// LVAE+BN+WU test ELBO minus VAE+BN+WU.
    pub ladder_gain: f64,
    /// VAE+BN+WU test ELBO minus plain VAE.
    pub bn_wu_gain: f64,
    /// Top-layer KL of LVAE+BN+WU and of the plain VAE.
    pub top_kl: (f64, f64),
    /// Active units of VAE+BN+WU and VAE+BN.
    pub active: (usize, usize),
}

impl SeedComparison {
    pub fn ladder_wins(&self) -> bool {
        self.ladder_gain >= 0.0
    }

    pub fn bn_wu_wins(&self) -> bool {
        self.bn_wu_gain >= 1.0
    }

    pub fn ladder_top_kl_higher(&self) -> bool {
        self.top_kl.0 > self.top_kl.1
    }

    pub fn warmup_keeps_units(&self) -> bool {
        self.active.0 >= self.active.1
    }
}

/// Compares the four presets for one seed. `None` when any is missing.
pub fn compare(runs: &[ReproRun], seed: u64) -> Option<SeedComparison> {
    let get = |p: Preset| runs.iter().find(|r| r.preset == p && r.seed == seed);
    let (l, v, plain, nowu) = (
        get(Preset::LvaeBnWu)?,
        get(Preset::VaeBnWu)?,
        get(Preset::VaePlain)?,
        get(Preset::VaeBnNoWu)?,
    );
    Some(SeedComparison {
        seed,
        ladder_gain: l.test_elbo - v.test_elbo,
        bn_wu_gain: v.test_elbo - plain.test_elbo,
        top_kl: (l.top_layer_kl(), plain.top_layer_kl()),
        active: (v.active_units(), nowu.active_units()),
    })
}

pub fn comparison_csv(rows: &[SeedComparison]) -> String {
    let mut s = String::from(
        "seed,ladder_gain,bn_wu_gain,lvae_top_kl,vae_top_kl,active_wu,active_no_wu\n",
    );
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.seed, r.ladder_gain, r.bn_wu_gain, r.top_kl.0, r.top_kl.1, r.active.0, r.active.1
        ));
    }
    s
}
