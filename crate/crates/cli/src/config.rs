//! Run configuration: flat dotted keys with defaults, overridden first by a
//! JSON file and then by command-line flags.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use lvae_core::data::default_data_dir;
use lvae_core::model::{BnScope, HierarchyConfig, InferenceKind, Nonlinearity, Observation};
use lvae_core::objectives::WarmupSchedule;
use lvae_core::trainer::{FinetunePlan, TrainPlan};
use serde_json::{json, Map, Value};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Kind {
    Bool,
    Int,
    Float,
    IntList,
    /// One of a fixed set of words.
    Choice(&'static [&'static str]),
    /// Free text; `null` allowed.
    Text,
    /// `true`, `false` or `"auto"`.
    AutoBool,
}

pub struct KeyDef {
    pub key: &'static str,
    pub kind: Kind,
    pub help: &'static str,
    default: fn() -> Value,
}

macro_rules! keys {
    ($( $key:literal : $kind:expr => $default:expr, $help:literal; )*) => {
        pub static KEYS: &[KeyDef] = &[
            $( KeyDef { key: $key, kind: $kind, help: $help, default: || json!($default) }, )*
        ];
    };
}

keys! {
    "data.source": Kind::Choice(&["mnist", "synthetic"]) => "mnist", "dataset";
    "data.dir": Kind::Text => Value::Null, "MNIST directory (default: LVAE_DATA_DIR or the bundled data)";
    "data.subset": Kind::Int => 0, "use only the first N training images (0 = all)";
    "data.binarize": Kind::AutoBool => "auto", "dynamic binarization (auto: on for MNIST)";
    "data.synthetic_dims": Kind::IntList => [32, 8, 4], "synthetic generator sizes, observed first";
    "data.synthetic_train": Kind::Int => 2000, "synthetic training points";
    "data.synthetic_test": Kind::Int => 500, "synthetic test points";
    "data.seed": Kind::Int => 0, "seed of the synthetic generator";
    "model.inference": Kind::Choice(&["vae", "lvae"]) => "lvae", "inference network";
    "model.latents": Kind::IntList => [64, 32, 16, 8, 4], "latent layer sizes, bottom to top";
    "model.widths": Kind::Text => "auto", "MLP widths, comma separated (auto: 8 x latent size)";
    "model.observation": Kind::Choice(&["auto", "bernoulli", "gaussian"]) => "auto", "observation model (auto: bernoulli for binarized data)";
    "model.nonlinearity": Kind::Choice(&["auto", "leaky_relu", "tanh"]) => "auto", "hidden activation (auto: from the observation model)";
    "model.batch_norm": Kind::Bool => true, "batch normalization";
    "model.bn_scope": Kind::Choice(&["all", "inference_only"]) => "all", "blocks that carry batch norm";
    "train.epochs": Kind::Int => 2000, "training epochs";
    "train.batch_size": Kind::Int => 256, "minibatch size";
    "train.lr": Kind::Float => 1e-3, "Adam learning rate";
    "train.warmup": Kind::Int => 200, "epochs of linear KL warm-up (0 = off)";
    "train.n_mc": Kind::Int => 1, "Monte Carlo samples per datapoint";
    "train.n_iw": Kind::Int => 1, "importance samples per datapoint";
    "train.seed": Kind::Int => 0, "run seed";
    "train.eval_every": Kind::Int => 10, "evaluate every N epochs";
    "train.eval_chunk": Kind::Int => 1000, "rows per evaluation pass";
    "train.checkpoint_every": Kind::Int => 100, "checkpoint every N epochs (0 = final only)";
    "train.finetune": Kind::Bool => false, "append the fine-tuning phase";
    "train.finetune_epochs": Kind::Int => 2000, "fine-tuning epochs";
    "train.finetune_lr_decay": Kind::Float => 0.75, "fine-tuning learning-rate factor";
    "train.finetune_decay_every": Kind::Int => 200, "epochs between decays";
    "train.finetune_n_mc": Kind::Int => 10, "fine-tuning Monte Carlo samples";
    "train.finetune_n_iw": Kind::Int => 10, "fine-tuning importance samples";
    "eval.k": Kind::Int => 5000, "importance samples for the log-likelihood bound";
    "eval.seed": Kind::Int => 0, "evaluation seed";
    "diag.tau": Kind::Float => 0.01, "active-unit threshold in nats";
    "diag.seed": Kind::Int => 0, "diagnostics seed";
    "diag.svg": Kind::Bool => false, "also write SVG renderings";
}

pub fn key_def(key: &str) -> Option<&'static KeyDef> {
    KEYS.iter().find(|d| d.key == key)
}

/// Short flag alias: the part after the dot.
pub fn leaf(key: &str) -> &str {
    key.rsplit('.').next().unwrap_or(key)
}

/// Leaves shared by several keys get no short alias.
pub fn unique_leaf(key: &str) -> Option<&str> {
    let l = leaf(key);
    (KEYS.iter().filter(|d| leaf(d.key) == l).count() == 1).then_some(l)
}

/// Aliases beyond the unique leaves.
pub const EXTRA_ALIASES: &[(&str, &str)] = &[("data", "data.source"), ("data-dir", "data.dir")];

fn check_value(kind: Kind, v: &Value) -> Result<(), String> {
    let ok = match kind {
        Kind::Bool => v.is_boolean(),
        Kind::Int => v.is_u64(),
        Kind::Float => v.is_number(),
        Kind::IntList => v.as_array().is_some_and(|a| a.iter().all(Value::is_u64)),
        Kind::Choice(words) => v.as_str().is_some_and(|s| words.contains(&s)),
        Kind::Text => v.is_string() || v.is_null(),
        Kind::AutoBool => v.is_boolean() || v.as_str() == Some("auto"),
    };
    if ok {
        Ok(())
    } else {
        Err(format!("expected {}, got {v}", describe(kind)))
    }
}

fn describe(kind: Kind) -> String {
    match kind {
        Kind::Bool => "true or false".into(),
        Kind::Int => "a non-negative integer".into(),
        Kind::Float => "a number".into(),
        Kind::IntList => "a list of non-negative integers".into(),
        Kind::Choice(words) => format!("one of {}", words.join(", ")),
        Kind::Text => "text".into(),
        Kind::AutoBool => "true, false or auto".into(),
    }
}

/// Parse a flag's text into the key's JSON type.
pub fn parse_flag(kind: Kind, text: &str) -> Result<Value, String> {
    let v = match kind {
        Kind::Bool | Kind::AutoBool => match text {
            "true" | "1" | "yes" => json!(true),
            "false" | "0" | "no" => json!(false),
            other => json!(other),
        },
        Kind::Int => text
            .parse::<u64>()
            .map(Value::from)
            .map_err(|_| format!("expected {}, got {text:?}", describe(kind)))?,
        Kind::Float => text
            .parse::<f64>()
            .map(Value::from)
            .map_err(|_| format!("expected {}, got {text:?}", describe(kind)))?,
        Kind::IntList => {
            let items: Result<Vec<u64>, _> = text.split(',').map(|s| s.trim().parse::<u64>()).collect();
            json!(items.map_err(|_| format!("expected comma-separated integers, got {text:?}"))?)
        }
        Kind::Choice(_) | Kind::Text => json!(text),
    };
    check_value(kind, &v)?;
    Ok(v)
}

/// Raw key/value layers before typing.
#[derive(Clone, Debug, Default)]
pub struct ConfigSources {
    pub file: Option<Map<String, Value>>,
    pub flags: Vec<(String, String)>,
}

impl ConfigSources {
    pub fn with_file(path: Option<&Path>) -> Result<Self, Vec<String>> {
        let Some(path) = path else {
            return Ok(ConfigSources::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| vec![format!("{}: {e}", path.display())])?;
        match serde_json::from_str::<Value>(&text) {
            Ok(Value::Object(m)) => Ok(ConfigSources {
                file: Some(flatten(m)),
                flags: Vec::new(),
            }),
            Ok(_) => Err(vec![format!("{}: expected a JSON object", path.display())]),
            Err(e) => Err(vec![format!("{}: {e}", path.display())]),
        }
    }
}

/// `{"train": {"lr": 1}}` becomes `{"train.lr": 1}`; flat keys pass through.
fn flatten(m: Map<String, Value>) -> Map<String, Value> {
    let mut out = Map::new();
    for (k, v) in m {
        match v {
            Value::Object(inner) => {
                for (ik, iv) in flatten(inner) {
                    out.insert(format!("{k}.{ik}"), iv);
                }
            }
            v => {
                out.insert(k, v);
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Synthetic,
    Mnist,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub source: Source,
    pub dir: PathBuf,
    pub subset: usize,
    pub binarize: bool,
    pub synthetic_dims: Vec<usize>,
    pub synthetic_train: usize,
    pub synthetic_test: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: HierarchyConfig,
    pub plan: TrainPlan,
    pub checkpoint_every: usize,
    pub eval_k: usize,
    pub eval_seed: u64,
    pub tau: f64,
    pub diag_seed: u64,
    pub svg: bool,
    /// Keys set by the file or a flag rather than left at their default.
    pub explicit: BTreeSet<String>,
}

/// Typed view over the merged key map that records every problem it meets.
struct Reader<'a> {
    map: &'a BTreeMap<String, Value>,
    errors: Vec<String>,
}

impl Reader<'_> {
    fn value(&self, key: &str) -> &Value {
        &self.map[key]
    }

    fn int(&mut self, key: &str) -> usize {
        self.value(key).as_u64().unwrap_or(0) as usize
    }

    fn positive(&mut self, key: &str) -> usize {
        let v = self.int(key);
        if v == 0 {
            self.errors.push(format!("{key}: must be positive"));
        }
        v
    }

    fn float(&mut self, key: &str) -> f64 {
        self.value(key).as_f64().unwrap_or(f64::NAN)
    }

    fn word(&self, key: &str) -> &str {
        self.value(key).as_str().unwrap_or("")
    }

    fn list(&mut self, key: &str) -> Vec<usize> {
        let v: Vec<usize> = self
            .value(key)
            .as_array()
            .map(|a| a.iter().filter_map(Value::as_u64).map(|v| v as usize).collect())
            .unwrap_or_default();
        if v.is_empty() || v.contains(&0) {
            self.errors.push(format!("{key}: needs at least one entry, all positive"));
        }
        v
    }

    fn flag(&self, key: &str) -> bool {
        self.value(key).as_bool().unwrap_or(false)
    }
}

impl RunConfig {
    /// Defaults, then the file, then flags. Every problem is reported.
    pub fn resolve(sources: &ConfigSources) -> Result<RunConfig, Vec<String>> {
        let mut errors = Vec::new();
        let mut map: BTreeMap<String, Value> = KEYS.iter().map(|d| (d.key.to_string(), (d.default)())).collect();
        let mut explicit = BTreeSet::new();
        if let Some(file) = &sources.file {
            for (k, v) in file {
                match key_def(k) {
                    None => errors.push(format!("unknown key {k:?}")),
                    Some(d) => match check_value(d.kind, v) {
                        Ok(()) => {
                            map.insert(k.clone(), v.clone());
                            explicit.insert(k.clone());
                        }
                        Err(e) => errors.push(format!("{k}: {e}")),
                    },
                }
            }
        }
        for (k, text) in &sources.flags {
            match key_def(k) {
                None => errors.push(format!("unknown key {k:?}")),
                Some(d) => match parse_flag(d.kind, text) {
                    Ok(v) => {
                        map.insert(k.clone(), v);
                        explicit.insert(k.clone());
                    }
                    Err(e) => errors.push(format!("--{k}: {e}")),
                },
            }
        }
        if !errors.is_empty() {
            return Err(errors);
        }

        let mut r = Reader { map: &map, errors };
        let source = match r.word("data.source") {
            "synthetic" => Source::Synthetic,
            _ => Source::Mnist,
        };
        let dir = match r.value("data.dir").as_str() {
            Some(s) => PathBuf::from(s),
            None => default_data_dir(),
        };
        let binarize = r.value("data.binarize").as_bool().unwrap_or(source == Source::Mnist);
        let synthetic_dims = r.list("data.synthetic_dims");
        if synthetic_dims.len() < 2 {
            r.errors.push("data.synthetic_dims: needs the observed size and at least one latent size".into());
        }
        let data = DataConfig {
            source,
            dir,
            subset: r.int("data.subset"),
            binarize,
            synthetic_dims,
            synthetic_train: r.positive("data.synthetic_train"),
            synthetic_test: r.positive("data.synthetic_test"),
            seed: r.int("data.seed") as u64,
        };

        let latents = r.list("model.latents");
        let widths = match r.word("model.widths") {
            "auto" => latents.iter().map(|&z| 8 * z).collect(),
            text => match text.split(',').map(|s| s.trim().parse::<usize>()).collect::<Result<Vec<_>, _>>() {
                Ok(w) if w.len() == latents.len() && !w.contains(&0) => w,
                Ok(w) => {
                    r.errors.push(format!(
                        "model.widths: {} positive entries needed (one per latent layer), got {w:?}",
                        latents.len()
                    ));
                    w
                }
                Err(_) => {
                    r.errors.push(format!("model.widths: expected auto or comma-separated integers, got {text:?}"));
                    Vec::new()
                }
            },
        };
        let observation = match r.word("model.observation") {
            "bernoulli" => Observation::Bernoulli,
            "gaussian" => Observation::Gaussian,
            _ if binarize => Observation::Bernoulli,
            _ => Observation::Gaussian,
        };
        if observation == Observation::Bernoulli && source == Source::Synthetic {
            r.errors.push("model.observation: bernoulli needs binary data; synthetic data is continuous".into());
        }
        let nonlinearity = match r.word("model.nonlinearity") {
            "leaky_relu" => Nonlinearity::LeakyRelu,
            "tanh" => Nonlinearity::Tanh,
            _ => Nonlinearity::default_for(observation),
        };
        let model = HierarchyConfig {
            // Filled in once the dataset is loaded.
            x_dim: 0,
            latent_sizes: latents,
            mlp_widths: widths,
            inference: match r.word("model.inference") {
                "vae" => InferenceKind::Vae,
                _ => InferenceKind::Lvae,
            },
            observation,
            use_bn: r.flag("model.batch_norm"),
            bn_scope: match r.word("model.bn_scope") {
                "inference_only" => BnScope::InferenceOnly,
                _ => BnScope::All,
            },
            nonlinearity,
        };

        let warmup = r.int("train.warmup");
        let finetune = r.flag("train.finetune").then(|| FinetunePlan {
            extra_epochs: r.int("train.finetune_epochs"),
            lr_decay: r.float("train.finetune_lr_decay"),
            decay_every: r.int("train.finetune_decay_every"),
            n_mc: r.int("train.finetune_n_mc"),
            n_iw: r.int("train.finetune_n_iw"),
        });
        let plan = TrainPlan {
            epochs: r.int("train.epochs"),
            batch_size: r.int("train.batch_size"),
            lr: r.float("train.lr"),
            warmup: (warmup > 0).then(|| WarmupSchedule::new(warmup)),
            n_mc: r.int("train.n_mc"),
            n_iw: r.int("train.n_iw"),
            finetune,
            seed: r.int("train.seed") as u64,
            eval_every: r.int("train.eval_every"),
            eval_chunk: r.int("train.eval_chunk"),
        };
        if let Err(e) = plan.validate() {
            r.errors.extend(e.to_string().trim_start_matches("configuration error: ").split("; ").map(str::to_string));
        }
        let eval_k = r.positive("eval.k");
        let tau = r.float("diag.tau");
        if !(tau > 0.0 && tau.is_finite()) {
            r.errors.push(format!("diag.tau: must be positive, got {tau}"));
        }
        let cfg = RunConfig {
            checkpoint_every: r.int("train.checkpoint_every"),
            eval_seed: r.int("eval.seed") as u64,
            diag_seed: r.int("diag.seed") as u64,
            svg: r.flag("diag.svg"),
            data,
            model,
            plan,
            eval_k,
            tau,
            explicit,
        };
        if r.errors.is_empty() {
            Ok(cfg)
        } else {
            Err(r.errors)
        }
    }

    /// Every key with its resolved value; reading it back gives the same run.
    pub fn to_json(&self) -> Value {
        let m = &self.model;
        let p = &self.plan;
        let f = p.finetune.unwrap_or_default();
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let mut out = Map::new();
        let mut put = |k: &str, v: Value| {
            out.insert(k.to_string(), v);
        };
        put("data.source", json!(match self.data.source {
            Source::Mnist => "mnist",
            Source::Synthetic => "synthetic",
        }));
        put("data.dir", json!(self.data.dir.to_string_lossy()));
        put("data.subset", json!(self.data.subset));
        put("data.binarize", json!(self.data.binarize));
        put("data.synthetic_dims", json!(self.data.synthetic_dims));
        put("data.synthetic_train", json!(self.data.synthetic_train));
        put("data.synthetic_test", json!(self.data.synthetic_test));
        put("data.seed", json!(self.data.seed));
        put("model.inference", serde_json::to_value(m.inference).unwrap_or(Value::Null));
        put("model.latents", json!(m.latent_sizes));
        put("model.widths", json!(join(&m.mlp_widths)));
        put("model.observation", serde_json::to_value(m.observation).unwrap_or(Value::Null));
        put("model.nonlinearity", serde_json::to_value(m.nonlinearity).unwrap_or(Value::Null));
        put("model.batch_norm", json!(m.use_bn));
        put("model.bn_scope", serde_json::to_value(m.bn_scope).unwrap_or(Value::Null));
        put("train.epochs", json!(p.epochs));
        put("train.batch_size", json!(p.batch_size));
        put("train.lr", json!(p.lr));
        put("train.warmup", json!(p.warmup.map_or(0, |w| w.epochs)));
        put("train.n_mc", json!(p.n_mc));
        put("train.n_iw", json!(p.n_iw));
        put("train.seed", json!(p.seed));
        put("train.eval_every", json!(p.eval_every));
        put("train.eval_chunk", json!(p.eval_chunk));
        put("train.checkpoint_every", json!(self.checkpoint_every));
        put("train.finetune", json!(p.finetune.is_some()));
        put("train.finetune_epochs", json!(f.extra_epochs));
        put("train.finetune_lr_decay", json!(f.lr_decay));
        put("train.finetune_decay_every", json!(f.decay_every));
        put("train.finetune_n_mc", json!(f.n_mc));
        put("train.finetune_n_iw", json!(f.n_iw));
        put("eval.k", json!(self.eval_k));
        put("eval.seed", json!(self.eval_seed));
        put("diag.tau", json!(self.tau));
        put("diag.seed", json!(self.diag_seed));
        put("diag.svg", json!(self.svg));
        Value::Object(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(pairs: &[(&str, &str)]) -> ConfigSources {
        ConfigSources {
            file: None,
            flags: pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    #[test]
    fn echo_covers_every_key() {
        let c = RunConfig::resolve(&ConfigSources::default()).unwrap();
        let echo = c.to_json();
        let keys: BTreeSet<_> = echo.as_object().unwrap().keys().cloned().collect();
        let expected: BTreeSet<_> = KEYS.iter().map(|d| d.key.to_string()).collect();
        assert_eq!(keys, expected);
    }

    #[test]
    fn echo_resolves_to_the_same_config() {
        let c = RunConfig::resolve(&flags(&[("data.source", "synthetic"), ("model.latents", "16,8")])).unwrap();
        let again = RunConfig::resolve(&ConfigSources {
            file: Some(c.to_json().as_object().unwrap().clone()),
            flags: Vec::new(),
        })
        .unwrap();
        assert_eq!(again.model, c.model);
        assert_eq!(again.plan, c.plan);
        assert_eq!(again.data, c.data);
        assert_eq!(again.to_json(), c.to_json());
    }

    #[test]
    fn defaults_are_the_five_layer_mnist_model() {
        let c = RunConfig::resolve(&ConfigSources::default()).unwrap();
        let mut m = c.model.clone();
        m.x_dim = 784;
        assert_eq!(m, HierarchyConfig::mnist(InferenceKind::Lvae));
        assert_eq!(c.plan.epochs, 2000);
        assert_eq!(c.plan.warmup.unwrap().epochs, 200);
        assert_eq!(c.eval_k, 5000);
        assert!(c.data.binarize);
    }

    #[test]
    fn synthetic_data_picks_gaussian_and_tanh() {
        let c = RunConfig::resolve(&flags(&[("data.source", "synthetic")])).unwrap();
        assert!(!c.data.binarize);
        assert_eq!(c.model.observation, Observation::Gaussian);
        assert_eq!(c.model.nonlinearity, Nonlinearity::Tanh);
    }

    #[test]
    fn nested_file_sections_flatten() {
        let m = json!({"train": {"lr": 0.01, "epochs": 3}, "model.inference": "vae"});
        let flat = flatten(m.as_object().unwrap().clone());
        assert_eq!(flat["train.lr"], json!(0.01));
        assert_eq!(flat["train.epochs"], json!(3));
        assert_eq!(flat["model.inference"], json!("vae"));
        assert_eq!(flat.len(), 3);
    }

    #[test]
    fn flags_override_file() {
        let mut file = Map::new();
        file.insert("train.epochs".into(), json!(7));
        file.insert("train.lr".into(), json!(0.01));
        let mut src = flags(&[("train.epochs", "3")]);
        src.file = Some(file);
        let c = RunConfig::resolve(&src).unwrap();
        assert_eq!(c.plan.epochs, 3);
        assert_eq!(c.plan.lr, 0.01);
        assert!(c.explicit.contains("train.lr"));
        assert!(!c.explicit.contains("model.inference"));
    }

    #[test]
    fn all_problems_are_listed() {
        let mut file = Map::new();
        file.insert("train.epoch".into(), json!(5));
        file.insert("model.inference".into(), json!("ladder"));
        let mut src = flags(&[("train.lr", "fast"), ("bogus.key", "1")]);
        src.file = Some(file);
        let errs = RunConfig::resolve(&src).unwrap_err();
        assert_eq!(errs.len(), 4, "{errs:?}");

        let errs = RunConfig::resolve(&flags(&[
            ("train.batch_size", "0"),
            ("model.widths", "10"),
            ("eval.k", "0"),
            ("diag.tau", "-1"),
        ]))
        .unwrap_err();
        assert_eq!(errs.len(), 4, "{errs:?}");
    }

    #[test]
    fn explicit_widths_must_match_depth() {
        let c = RunConfig::resolve(&flags(&[("model.latents", "16,8"), ("model.widths", "100,50")])).unwrap();
        assert_eq!(c.model.mlp_widths, vec![100, 50]);
        let auto = RunConfig::resolve(&flags(&[("model.latents", "16,8")])).unwrap();
        assert_eq!(auto.model.mlp_widths, vec![128, 64]);
    }

    #[test]
    fn short_aliases_exist_only_for_unique_leaves() {
        assert_eq!(unique_leaf("model.latents"), Some("latents"));
        assert_eq!(unique_leaf("train.epochs"), Some("epochs"));
        assert_eq!(unique_leaf("data.seed"), None);
        assert_eq!(unique_leaf("data.source"), Some("source"));
    }
}
