use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use lvae_core::diagnostics::{activity_report, activity_svg, eval_loglik, pca_project, projection_svg};
use lvae_core::model::HierarchyConfig;
use lvae_core::repro::{compare, comparison_csv, run_plan, run_preset, Preset, ReproRun, SeedComparison};
use lvae_core::trainer::{
    load_checkpoint, save_checkpoint, Checkpoint, MetricsRow, MetricsWriter, TrainData, TrainHooks, TrainPlan, Trainer,
};
use lvae_core::Error;

use crate::config::{ConfigSources, RunConfig, Source};
use crate::dataset::{load, Loaded};

pub enum Failure {
    /// Configuration problems, all of them.
    Invalid(Vec<String>),
    Diverged(String),
    Other(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Other(e.into())
    }
}

pub type Outcome = std::result::Result<(), Failure>;

fn resolve(sources: &ConfigSources) -> std::result::Result<RunConfig, Failure> {
    RunConfig::resolve(sources).map_err(Failure::Invalid)
}

/// Loads the dataset and fixes the observed width in the model config.
fn load_for(cfg: &mut RunConfig) -> std::result::Result<Loaded, Failure> {
    let loaded = load(&cfg.data)?;
    cfg.model.x_dim = loaded.data.dim();
    cfg.model.validate().map_err(|e| Failure::Invalid(vec![e.to_string()]))?;
    Ok(loaded)
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("epoch-{epoch:05}.ckpt")
}

fn latest_checkpoint(dir: &Path) -> anyhow::Result<Option<PathBuf>> {
    if !dir.is_dir() {
        return Ok(None);
    }
    let mut found: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("epoch-") && n.ends_with(".ckpt"))
        })
        .collect();
    found.sort();
    Ok(found.pop())
}

struct RunHooks {
    metrics: MetricsWriter,
    dir: PathBuf,
    every: usize,
    total: usize,
}

impl TrainHooks for RunHooks {
    fn on_eval(&mut self, row: &MetricsRow) -> lvae_core::Result<()> {
        eprintln!(
            "epoch {:>5}  beta {:.3}  train {:.3}  test {:.3}  kl {:.3}",
            row.epoch, row.beta, row.train_elbo, row.test_elbo, row.test_kl_total
        );
        self.metrics.append(row)
    }

    fn on_epoch_end(&mut self, t: &Trainer) -> lvae_core::Result<()> {
        let e = t.epoch();
        if e == self.total || (self.every > 0 && e % self.every == 0) {
            save_checkpoint(&t.checkpoint(), &self.dir.join(checkpoint_name(e)))?;
        }
        Ok(())
    }
}

pub fn train(sources: ConfigSources, out: &Path, resume: bool) -> Outcome {
    let mut cfg = resolve(&sources)?;
    let loaded = load_for(&mut cfg)?;
    let ck_dir = out.join("checkpoints");
    let metrics_path = out.join("metrics.csv");
    let depth = cfg.model.depth();

    let (mut trainer, metrics) = if resume {
        let path = latest_checkpoint(&ck_dir)?
            .ok_or_else(|| anyhow!("no checkpoint to resume in {}", ck_dir.display()))?;
        let ck = load_checkpoint(&path)?;
        if ck.config().latent_sizes != cfg.model.latent_sizes || ck.config().inference != cfg.model.inference {
            return Err(anyhow!("{} does not match the resolved model config", path.display()).into());
        }
        eprintln!("resuming from {}", path.display());
        let from = ck.epoch;
        let t = Trainer::from_checkpoint(ck, Some(cfg.plan.clone()), &loaded.data)?;
        (t, MetricsWriter::resume(&metrics_path, depth, from)?)
    } else {
        if metrics_path.exists() || latest_checkpoint(&ck_dir)?.is_some() {
            return Err(anyhow!("{} already holds a run; pass --resume or choose another --out", out.display()).into());
        }
        fs::create_dir_all(&ck_dir).with_context(|| format!("creating {}", ck_dir.display()))?;
        let t = Trainer::new(cfg.plan.clone(), cfg.model.clone(), &loaded.data)?;
        (t, MetricsWriter::create(&metrics_path, depth)?)
    };
    fs::write(out.join("config.json"), serde_json::to_string_pretty(&cfg.to_json())? + "\n")?;
    println!("{}", serde_json::to_string_pretty(&cfg.to_json())?);

    let total = cfg.plan.total_epochs();
    if trainer.epoch() == 0 && total == 0 {
        save_checkpoint(&trainer.checkpoint(), &ck_dir.join(checkpoint_name(0)))?;
    }
    let mut hooks = RunHooks {
        metrics,
        dir: ck_dir.clone(),
        every: cfg.checkpoint_every,
        total,
    };
    match trainer.run(&loaded.data, &mut hooks) {
        Ok(_) => {
            println!("finished {} epochs in {}", trainer.epoch(), out.display());
            Ok(())
        }
        Err(Error::Diverged {
            epoch,
            source,
            last_good,
        }) => {
            let path = ck_dir.join("last-good.ckpt");
            save_checkpoint(&last_good, &path)?;
            Err(Failure::Diverged(format!(
                "training diverged after epoch {epoch}: {source}; state saved to {}",
                path.display()
            )))
        }
        Err(e) => Err(e.into()),
    }
}

/// `config.json` of the run directory holding `checkpoints/<file>`.
fn run_config_of(checkpoint: &Path) -> Option<PathBuf> {
    let p = checkpoint.parent()?.parent()?.join("config.json");
    p.is_file().then_some(p)
}

/// The config to pair with a checkpoint: explicit file, else the run's own.
pub fn sources_for_checkpoint(
    config: Option<&Path>,
    checkpoint: &Path,
    flags: Vec<(String, String)>,
) -> std::result::Result<ConfigSources, Failure> {
    let file = config.map(Path::to_path_buf).or_else(|| run_config_of(checkpoint));
    let mut s = ConfigSources::with_file(file.as_deref()).map_err(Failure::Invalid)?;
    s.flags = flags;
    Ok(s)
}

fn check_against(ck: &Checkpoint, cfg: &RunConfig, data: &TrainData) -> std::result::Result<(), Failure> {
    let stored: &HierarchyConfig = ck.config();
    let mut problems = Vec::new();
    if cfg.explicit.contains("model.inference") && cfg.model.inference != stored.inference {
        problems.push(format!(
            "model.inference is {:?} but the checkpoint was trained with {:?}",
            cfg.model.inference, stored.inference
        ));
    }
    if cfg.explicit.contains("model.latents") && cfg.model.latent_sizes != stored.latent_sizes {
        problems.push(format!(
            "model.latents is {:?} but the checkpoint has {:?}",
            cfg.model.latent_sizes, stored.latent_sizes
        ));
    }
    if data.dim() != stored.x_dim {
        problems.push(format!(
            "dataset has {} columns but the checkpoint expects {}",
            data.dim(),
            stored.x_dim
        ));
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Failure::Invalid(problems))
    }
}

pub fn eval(sources: ConfigSources, checkpoint: &Path, csv: Option<&Path>) -> Outcome {
    let cfg = resolve(&sources)?;
    let ck = load_checkpoint(checkpoint)?;
    let loaded = load(&cfg.data)?;
    check_against(&ck, &cfg, &loaded.data)?;
    let x = loaded.data.eval_test_set(ck.plan.seed)?.cast::<f64>();
    let model = ck.model.cast::<f64>();
    let r = eval_loglik(&model, &x, cfg.eval_k, cfg.eval_seed)?;
    println!(
        "log p(x) >= {:.4} +/- {:.4} nats (K={}, n={}, excluded {})",
        r.mean,
        r.stderr,
        r.k,
        r.per_datapoint.len(),
        r.excluded
    );
    println!("k,n,mean,stderr\n{},{},{},{}", r.k, r.per_datapoint.len(), r.mean, r.stderr);
    let path = csv.map(Path::to_path_buf).unwrap_or_else(|| checkpoint.with_extension(format!("eval-k{}.csv", r.k)));
    let mut body = String::from("index,bound\n");
    for (i, v) in r.per_datapoint.iter().enumerate() {
        body.push_str(&format!("{i},{v}\n"));
    }
    fs::write(&path, body)?;
    println!("{}", path.display());
    Ok(())
}

pub fn diagnose(sources: ConfigSources, checkpoint: &Path, out: Option<&Path>) -> Outcome {
    let cfg = resolve(&sources)?;
    let ck = load_checkpoint(checkpoint)?;
    let loaded = load(&cfg.data)?;
    check_against(&ck, &cfg, &loaded.data)?;
    let out = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| checkpoint.with_extension("diagnostics"));
    fs::create_dir_all(&out)?;
    let x = loaded.data.eval_test_set(ck.plan.seed)?.cast::<f64>();
    let model = ck.model.cast::<f64>();

    let mut written = Vec::new();
    let activity = activity_report(&model, &x, cfg.tau, cfg.diag_seed)?;
    let p = out.join("activity.csv");
    activity.write_csv(&p)?;
    written.push(p);
    if cfg.svg {
        let p = out.join("activity.svg");
        fs::write(&p, activity_svg(&activity))?;
        written.push(p);
    }
    let labels = match cfg.data.source {
        Source::Mnist => loaded.test_labels.as_deref(),
        Source::Synthetic => None,
    };
    let mut profile = String::from("layer,kl_nats,active_units,pc1_var,pc2_var,projection_degenerate\n");
    let kl = activity.layer_kl_profile();
    let active = activity.active_counts();
    for layer in 1..=model.config().depth() {
        let proj = pca_project(&model, &x, layer, labels, cfg.diag_seed)?;
        profile.push_str(&format!(
            "{layer},{},{},{},{},{}\n",
            kl[layer - 1],
            active[layer - 1],
            proj.pca.variances[0],
            proj.pca.variances[1],
            proj.pca.degenerate
        ));
        let p = out.join(format!("projection_z{layer}.csv"));
        proj.write_csv(&p)?;
        written.push(p);
        if cfg.svg {
            let p = out.join(format!("projection_z{layer}.svg"));
            fs::write(&p, projection_svg(&proj))?;
            written.push(p);
        }
    }
    let p = out.join("layer_kl.csv");
    fs::write(&p, profile)?;
    written.push(p);
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

pub struct ReproArgs {
    pub presets: Vec<Preset>,
    pub seeds: Vec<u64>,
    pub epochs: Option<usize>,
    pub data_dir: PathBuf,
    pub out: PathBuf,
}

pub fn repro(args: ReproArgs) -> Outcome {
    let data = lvae_core::repro::mnist_subset(&args.data_dir)
        .with_context(|| format!("loading MNIST from {}", args.data_dir.display()))?;
    fs::create_dir_all(&args.out)?;
    let mut runs: Vec<ReproRun> = Vec::new();
    let mut summary = String::from("preset,seed,test_elbo,top_layer_kl,active_units\n");
    for &seed in &args.seeds {
        for &preset in &args.presets {
            let dir = args.out.join(preset.name()).join(format!("seed-{seed}"));
            fs::create_dir_all(&dir)?;
            let depth = preset.config().depth();
            let mut writer = MetricsWriter::create(&dir.join("metrics.csv"), depth)?;
            eprintln!("{} seed {seed}", preset.name());
            let run = match args.epochs {
                None => run_preset(preset, seed, &data, &mut writer)?,
                Some(epochs) => run_plan(preset, TrainPlan { epochs, ..preset.plan(seed) }, &data, &mut writer)?,
            };
            save_checkpoint(&run.checkpoint, &dir.join("final.ckpt"))?;
            run.activity.write_csv(&dir.join("activity.csv"))?;
            let line = format!(
                "{},{seed},{},{},{}",
                preset.name(),
                run.test_elbo,
                run.top_layer_kl(),
                run.active_units()
            );
            println!("{line}");
            summary.push_str(&line);
            summary.push('\n');
            runs.push(run);
        }
    }
    fs::write(args.out.join("summary.csv"), &summary)?;
    let rows: Vec<_> = args.seeds.iter().filter_map(|&s| compare(&runs, s)).collect();
    if !rows.is_empty() {
        fs::write(args.out.join("comparisons.csv"), comparison_csv(&rows))?;
        let count = |f: fn(&SeedComparison) -> bool| rows.iter().filter(|r| f(r)).count();
        let n = rows.len();
        println!("ladder ELBO >= bottom-up ELBO:        {}/{n}", count(|r| r.ladder_wins()));
        println!("BN+WU beats plain VAE by >= 1 nat:    {}/{n}", count(|r| r.bn_wu_wins()));
        println!("ladder top-layer KL > plain VAE's:    {}/{n}", count(|r| r.ladder_top_kl_higher()));
        println!("warm-up keeps at least as many units: {}/{n}", count(|r| r.warmup_keeps_units()));
    }
    Ok(())
}
