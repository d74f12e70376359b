//! `key=value` experiment configs.
//!
//! One or more whitespace-separated `key=value` pairs per line, `#` starts a
//! comment. Unset hyperparameters take the usual defaults for each optimizer.

use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use bng_core::optim::{
    DEFAULT_ADAGRAD_DELTA, DEFAULT_ADAGRAD_ETA, DEFAULT_ADAM_ALPHA, DEFAULT_ADAM_BETA1, DEFAULT_ADAM_BETA2,
    DEFAULT_ADAM_EPS, DEFAULT_SGDM_LR, DEFAULT_SGDM_MU,
};
use bng_core::transforms::{ClipScope, DEFAULT_ADAP_ALPHA, DEFAULT_CLIP_THRESHOLD};

use crate::error::ConfigError;

pub const MNIST_INPUT: usize = 784;
pub const MNIST_HIDDEN: usize = 100;
pub const MNIST_CLASSES: usize = 10;
pub const DEFAULT_EPOCHS: u64 = 50;
pub const DEFAULT_BATCH: usize = 100;
/// Harness default for the zero-block threshold: only exactly-zero blocks are
/// left unnormalized. Vanishing layers in deep sigmoid nets reach raw norms far
/// below the library default, and normalizing them is the point of NG.
pub const HARNESS_ZERO_EPS: f64 = 0.0;
/// Convex tasks: η for AdaGradBNG unless configured.
pub const DEFAULT_CONVEX_ETA: f64 = 0.1;

macro_rules! keyword_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(format!(
                        "expected one of {}",
                        [$($text),+].join(", ")
                    )),
                }
            }
        }
    };
}

keyword_enum!(Task {
    MnistMlp => "mnist-mlp",
    ConvexLogistic => "convex-logistic",
    ConvexLsq => "convex-lsq",
});

keyword_enum!(Optimizer {
    Sgdm => "sgdm",
    Adagrad => "adagrad",
    Adam => "adam",
    AdagradBng => "adagrad-bng",
});

keyword_enum!(Transform {
    Raw => "raw",
    Ng => "ng",
    Clip => "clip",
    NgAdap => "ng-adap",
});

impl Task {
    pub fn is_convex(self) -> bool {
        matches!(self, Task::ConvexLogistic | Task::ConvexLsq)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: Task,
    /// Layer widths including input and output; `depth = widths.len() − 1`.
    pub widths: Vec<usize>,
    pub optimizer: Optimizer,
    pub transform: Transform,
    pub lr: f64,
    pub mu: f64,
    pub eta: f64,
    pub delta: f64,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip: f64,
    pub clip_scope: ClipScope,
    pub adap_alpha: f64,
    pub zero_eps: f64,
    pub batch_size: usize,
    pub epochs: u64,
    /// Evaluate every this many epochs (and always after the last one).
    pub eval_every: u64,
    /// Convex tasks: number of AdaGradBNG steps `T`.
    pub steps: u64,
    pub seed: u64,
    pub data_dir: PathBuf,
    /// Train on the first `train_limit` examples only.
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    /// Convex tasks: examples, dimension and block sizes.
    pub n: usize,
    pub dim: usize,
    pub blocks: Vec<usize>,
    pub l2: f64,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn depth(&self) -> usize {
        self.widths.len() - 1
    }

    /// Short arm label, e.g. `adam-ng` or `sgdm-raw`.
    pub fn arm(&self) -> String {
        format!("{}-{}", self.optimizer, self.transform)
    }
}

/// Widths of a `depth`-layer MNIST network: 784, then `depth − 1` hidden layers of 100, then 10.
pub fn mnist_widths(depth: usize) -> Vec<usize> {
    let mut w = vec![MNIST_INPUT];
    w.extend(std::iter::repeat_n(MNIST_HIDDEN, depth.saturating_sub(1)));
    w.push(MNIST_CLASSES);
    w
}

const KEYS: &[&str] = &[
    "task", "depth", "widths", "optimizer", "transform", "lr", "mu", "eta", "delta", "alpha", "beta1", "beta2",
    "eps", "clip", "clip_scope", "adap_alpha", "zero_eps", "batch_size", "epochs", "eval_every", "steps", "seed",
    "data_dir", "train_limit", "test_limit", "n", "dim", "blocks", "l2", "out",
];

/// Splits config text into `(line, key, value)` triples.
pub(crate) fn tokenize(text: &str) -> Result<Vec<(usize, String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("");
        for pair in content.split_whitespace() {
            let Some((k, v)) = pair.split_once('=') else {
                return Err(ConfigError::new(line, format!("expected key=value, found `{pair}`")));
            };
            if k.is_empty() {
                return Err(ConfigError::new(line, "empty key"));
            }
            out.push((line, k.to_string(), v.to_string()));
        }
    }
    Ok(out)
}

fn parse_value<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    v.parse::<T>()
        .map_err(|e| ConfigError::new(line, format!("bad value `{v}` for {key}: {e}")))
}

fn parse_list(line: usize, key: &str, v: &str) -> Result<Vec<usize>, ConfigError> {
    v.split(',').map(|p| parse_value(line, key, p.trim())).collect()
}

fn parse_scope(line: usize, v: &str) -> Result<ClipScope, ConfigError> {
    match v {
        "block" => Ok(ClipScope::PerBlock),
        "global" => Ok(ClipScope::Global),
        _ => Err(ConfigError::new(line, format!("bad value `{v}` for clip_scope: expected block or global"))),
    }
}

fn scope_str(s: ClipScope) -> &'static str {
    match s {
        ClipScope::PerBlock => "block",
        ClipScope::Global => "global",
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let pairs = tokenize(text)?;
    let mut seen: Vec<(&str, usize, &str)> = Vec::new();
    for (line, k, v) in &pairs {
        let Some(key) = KEYS.iter().find(|c| **c == k.as_str()) else {
            return Err(ConfigError::new(*line, format!("unknown key `{k}`")));
        };
        if let Some((_, first, _)) = seen.iter().find(|(s, _, _)| s == key) {
            return Err(ConfigError::new(*line, format!("`{k}` already set on line {first}")));
        }
        seen.push((key, *line, v.as_str()));
    }
    let get = |key: &str| seen.iter().find(|(k, _, _)| *k == key).map(|(_, l, v)| (*l, *v));

    macro_rules! value {
        ($key:literal, $default:expr) => {
            match get($key) {
                Some((l, v)) => parse_value(l, $key, v)?,
                None => $default,
            }
        };
    }
    let line_of = |key: &str| get(key).map(|(l, _)| l).unwrap_or(0);

    let task: Task = value!("task", Task::MnistMlp);
    let optimizer: Optimizer = value!(
        "optimizer",
        if task.is_convex() { Optimizer::AdagradBng } else { Optimizer::Adam }
    );
    let transform: Transform = value!("transform", if task.is_convex() { Transform::Ng } else { Transform::Raw });

    let depth: Option<usize> = match get("depth") {
        Some((l, v)) => Some(parse_value(l, "depth", v)?),
        None => None,
    };
    let widths = match (get("widths"), depth) {
        (Some((l, v)), d) => {
            let w = parse_list(l, "widths", v)?;
            if w.len() < 2 || w.contains(&0) {
                return Err(ConfigError::new(l, "widths need at least two positive entries"));
            }
            if let Some(d) = d.filter(|d| *d != w.len() - 1) {
                return Err(ConfigError::new(l, format!("{} widths do not describe depth {d}", w.len())));
            }
            w
        }
        (None, Some(d)) => {
            if d == 0 {
                return Err(ConfigError::new(line_of("depth"), "depth must be at least 1"));
            }
            mnist_widths(d)
        }
        (None, None) => mnist_widths(6),
    };

    let default_eta = if task.is_convex() { DEFAULT_CONVEX_ETA } else { DEFAULT_ADAGRAD_ETA };
    let scope = match get("clip_scope") {
        Some((l, v)) => parse_scope(l, v)?,
        None => ClipScope::PerBlock,
    };
    let dim: usize = value!("dim", 10);
    let blocks = match get("blocks") {
        Some((l, v)) => parse_list(l, "blocks", v)?,
        None => vec![dim / 2, dim - dim / 2],
    };
    let opt_path = |key: &str| get(key).map(|(_, v)| PathBuf::from(v));

    let cfg = ExperimentConfig {
        task,
        widths,
        optimizer,
        transform,
        lr: value!("lr", DEFAULT_SGDM_LR),
        mu: value!("mu", DEFAULT_SGDM_MU),
        eta: value!("eta", default_eta),
        delta: value!("delta", DEFAULT_ADAGRAD_DELTA),
        alpha: value!("alpha", DEFAULT_ADAM_ALPHA),
        beta1: value!("beta1", DEFAULT_ADAM_BETA1),
        beta2: value!("beta2", DEFAULT_ADAM_BETA2),
        eps: value!("eps", DEFAULT_ADAM_EPS),
        clip: value!("clip", DEFAULT_CLIP_THRESHOLD),
        clip_scope: scope,
        adap_alpha: value!("adap_alpha", DEFAULT_ADAP_ALPHA),
        zero_eps: value!("zero_eps", HARNESS_ZERO_EPS),
        batch_size: value!("batch_size", if task.is_convex() { 1 } else { DEFAULT_BATCH }),
        epochs: value!("epochs", DEFAULT_EPOCHS),
        eval_every: value!("eval_every", 1),
        steps: value!("steps", 10_000),
        seed: value!("seed", 1),
        data_dir: opt_path("data_dir").unwrap_or_else(|| PathBuf::from("data/mnist")),
        train_limit: match get("train_limit") {
            Some((l, v)) => Some(parse_value(l, "train_limit", v)?),
            None => None,
        },
        test_limit: match get("test_limit") {
            Some((l, v)) => Some(parse_value(l, "test_limit", v)?),
            None => None,
        },
        n: value!("n", 200),
        dim,
        blocks,
        l2: value!("l2", bng_core::convex::DEFAULT_LOGISTIC_L2),
        out: opt_path("out"),
    };
    validate(&cfg, &line_of)?;
    Ok(cfg)
}

fn validate(cfg: &ExperimentConfig, line_of: &dyn Fn(&str) -> usize) -> Result<(), ConfigError> {
    let positive = [
        ("lr", cfg.lr),
        ("eta", cfg.eta),
        ("delta", cfg.delta),
        ("alpha", cfg.alpha),
        ("eps", cfg.eps),
        ("clip", cfg.clip),
        ("adap_alpha", cfg.adap_alpha),
        ("l2", cfg.l2),
    ];
    for (k, v) in positive {
        if !(v > 0.0 && v.is_finite()) {
            return Err(ConfigError::new(line_of(k), format!("{k} must be positive, got {v}")));
        }
    }
    for (k, v) in [("mu", cfg.mu), ("beta1", cfg.beta1), ("beta2", cfg.beta2)] {
        if !(0.0..1.0).contains(&v) {
            return Err(ConfigError::new(line_of(k), format!("{k} must lie in [0, 1), got {v}")));
        }
    }
    if !(cfg.zero_eps >= 0.0 && cfg.zero_eps.is_finite()) {
        return Err(ConfigError::new(line_of("zero_eps"), "zero_eps must be finite and nonnegative"));
    }
    for (k, v) in [("batch_size", cfg.batch_size as u64), ("epochs", cfg.epochs), ("eval_every", cfg.eval_every), ("steps", cfg.steps)] {
        if v == 0 {
            return Err(ConfigError::new(line_of(k), format!("{k} must be positive")));
        }
    }
    if cfg.task.is_convex() {
        if cfg.optimizer != Optimizer::AdagradBng || cfg.transform != Transform::Ng {
            return Err(ConfigError::new(
                line_of("optimizer").max(line_of("transform")),
                format!("task {} runs adagrad-bng with transform ng only", cfg.task),
            ));
        }
        if cfg.blocks.iter().sum::<usize>() != cfg.dim || cfg.blocks.contains(&0) {
            return Err(ConfigError::new(
                line_of("blocks"),
                format!("block sizes {:?} do not partition dim {}", cfg.blocks, cfg.dim),
            ));
        }
        if cfg.n < 2 || cfg.dim == 0 {
            return Err(ConfigError::new(line_of("n").max(line_of("dim")), "convex tasks need n ≥ 2 and dim ≥ 1"));
        }
    } else {
        if cfg.widths[0] != MNIST_INPUT || *cfg.widths.last().unwrap() != MNIST_CLASSES {
            return Err(ConfigError::new(
                line_of("widths"),
                format!("mnist-mlp widths must start at {MNIST_INPUT} and end at {MNIST_CLASSES}"),
            ));
        }
        if cfg.optimizer == Optimizer::AdagradBng && cfg.transform != Transform::Ng {
            return Err(ConfigError::new(line_of("transform"), "adagrad-bng requires transform ng"));
        }
    }
    Ok(())
}

/// Renders every field, so `parse_config(&render(&cfg)) == cfg`.
pub fn render(cfg: &ExperimentConfig) -> String {
    let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    let mut s = String::new();
    let mut kv = |k: &str, v: String| writeln!(s, "{k}={v}").unwrap();
    kv("task", cfg.task.to_string());
    kv("widths", list(&cfg.widths));
    kv("optimizer", cfg.optimizer.to_string());
    kv("transform", cfg.transform.to_string());
    // `{:?}` prints the shortest representation that parses back exactly.
    for (k, v) in [
        ("lr", cfg.lr),
        ("mu", cfg.mu),
        ("eta", cfg.eta),
        ("delta", cfg.delta),
        ("alpha", cfg.alpha),
        ("beta1", cfg.beta1),
        ("beta2", cfg.beta2),
        ("eps", cfg.eps),
        ("clip", cfg.clip),
    ] {
        kv(k, format!("{v:?}"));
    }
    kv("clip_scope", scope_str(cfg.clip_scope).into());
    kv("adap_alpha", format!("{:?}", cfg.adap_alpha));
    kv("zero_eps", format!("{:?}", cfg.zero_eps));
    kv("batch_size", cfg.batch_size.to_string());
    kv("epochs", cfg.epochs.to_string());
    kv("eval_every", cfg.eval_every.to_string());
    kv("steps", cfg.steps.to_string());
    kv("seed", cfg.seed.to_string());
    kv("data_dir", cfg.data_dir.display().to_string());
    if let Some(l) = cfg.train_limit {
        kv("train_limit", l.to_string());
    }
    if let Some(l) = cfg.test_limit {
        kv("test_limit", l.to_string());
    }
    kv("n", cfg.n.to_string());
    kv("dim", cfg.dim.to_string());
    kv("blocks", list(&cfg.blocks));
    kv("l2", format!("{:?}", cfg.l2));
    if let Some(o) = &cfg.out {
        kv("out", o.display().to_string());
    }
    s
}
