//! Training configuration: defaults, config file, environment, flags.
//!
//! Precedence is fixed: built-in defaults, then a `key = value` config file,
//! then `KGETOT_*` environment variables, then command-line overrides. The
//! fully resolved config is serialized into manifests and checkpoints.

use serde::{Deserialize, Serialize};

use crate::encoder::{Composition, EncoderConfig, ViewFlags};
use crate::error::{Error, Result};
use crate::loss::{LossConfig, WeightFn};
use crate::optim::AdamConfig;
use crate::ot::{OtaConfig, Projection, SinkhornConfig};
use crate::views::ClusterTokenizer;

/// All tunables of a training run, flat so every field maps to one
/// config-file key (and one `KGETOT_*` variable).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub lightgcn_layers: usize,
    pub compgcn_layers: usize,
    pub heads: usize,
    pub temperatures: Vec<f64>,
    pub batch_size: usize,
    pub eval_every: usize,
    pub sinkhorn_epsilon: f64,
    pub sinkhorn_max_iters: usize,
    pub sinkhorn_tol: f64,
    pub ot_cap: usize,
    pub ot_projection: Projection,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub theta: f64,
    pub weight_fn: String,
    pub weight_alpha: f64,
    pub weight_beta: f64,
    pub weight_location: f64,
    pub weight_scale: f64,
    pub swap_roles: bool,
    pub disable_view: String,
    pub composition: String,
    pub include_inverse_edges: bool,
    pub cluster_stoplist: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 100,
            learning_rate: 0.001,
            epochs: 100,
            seed: 42,
            lightgcn_layers: 4,
            compgcn_layers: 2,
            heads: 5,
            temperatures: vec![0.5, 1.0, 1.5, 2.0, 2.5],
            batch_size: 256,
            eval_every: 10,
            sinkhorn_epsilon: 0.05,
            sinkhorn_max_iters: 200,
            sinkhorn_tol: 1e-6,
            ot_cap: 4096,
            ot_projection: Projection::Barycentric,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            theta: 0.7,
            weight_fn: "beta".into(),
            weight_alpha: 2.0,
            weight_beta: 2.0,
            weight_location: 0.5,
            weight_scale: 1.0,
            swap_roles: false,
            disable_view: "none".into(),
            composition: "subtract".into(),
            include_inverse_edges: true,
            cluster_stoplist: vec![
                "wordnet".into(),
                "wikicat".into(),
                "base".into(),
                "freebase".into(),
            ],
        }
    }
}

/// Keys recognized in config files, the environment, and `--set`.
pub const CONFIG_KEYS: &[&str] = &[
    "preset",
    "dim",
    "learning_rate",
    "epochs",
    "seed",
    "lightgcn_layers",
    "compgcn_layers",
    "heads",
    "temperatures",
    "batch_size",
    "eval_every",
    "sinkhorn_epsilon",
    "sinkhorn_max_iters",
    "sinkhorn_tol",
    "ot_cap",
    "ot_projection",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "theta",
    "weight_fn",
    "weight_alpha",
    "weight_beta",
    "weight_location",
    "weight_scale",
    "swap_roles",
    "disable_view",
    "composition",
    "include_inverse_edges",
    "cluster_stoplist",
];

impl TrainConfig {
    /// Applies one `key = value` override.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("invalid {what} value '{value}'"));
        match key {
            "preset" => self.apply_preset(value)?,
            "dim" => self.dim = value.parse().map_err(|_| bad(key))?,
            "learning_rate" => self.learning_rate = value.parse().map_err(|_| bad(key))?,
            "epochs" => self.epochs = value.parse().map_err(|_| bad(key))?,
            "seed" => self.seed = value.parse().map_err(|_| bad(key))?,
            "lightgcn_layers" => self.lightgcn_layers = value.parse().map_err(|_| bad(key))?,
            "compgcn_layers" => self.compgcn_layers = value.parse().map_err(|_| bad(key))?,
            "heads" => self.heads = value.parse().map_err(|_| bad(key))?,
            "temperatures" => {
                self.temperatures = value
                    .split(',')
                    .map(|t| t.trim().parse().map_err(|_| bad(key)))
                    .collect::<Result<Vec<f64>>>()?
            }
            "batch_size" => self.batch_size = value.parse().map_err(|_| bad(key))?,
            "eval_every" => self.eval_every = value.parse().map_err(|_| bad(key))?,
            "sinkhorn_epsilon" => self.sinkhorn_epsilon = value.parse().map_err(|_| bad(key))?,
            "sinkhorn_max_iters" => {
                self.sinkhorn_max_iters = value.parse().map_err(|_| bad(key))?
            }
            "sinkhorn_tol" => self.sinkhorn_tol = value.parse().map_err(|_| bad(key))?,
            "ot_cap" => self.ot_cap = value.parse().map_err(|_| bad(key))?,
            "ot_projection" => {
                self.ot_projection = match value {
                    "barycentric" => Projection::Barycentric,
                    "literal" => Projection::Literal,
                    _ => return Err(bad(key)),
                }
            }
            "adam_beta1" => self.adam_beta1 = value.parse().map_err(|_| bad(key))?,
            "adam_beta2" => self.adam_beta2 = value.parse().map_err(|_| bad(key))?,
            "adam_eps" => self.adam_eps = value.parse().map_err(|_| bad(key))?,
            "theta" => self.theta = value.parse().map_err(|_| bad(key))?,
            "weight_fn" => self.weight_fn = value.to_string(),
            "weight_alpha" => self.weight_alpha = value.parse().map_err(|_| bad(key))?,
            "weight_beta" => self.weight_beta = value.parse().map_err(|_| bad(key))?,
            "weight_location" => self.weight_location = value.parse().map_err(|_| bad(key))?,
            "weight_scale" => self.weight_scale = value.parse().map_err(|_| bad(key))?,
            "swap_roles" => self.swap_roles = parse_bool(value).ok_or_else(|| bad(key))?,
            "disable_view" => self.disable_view = value.to_string(),
            "composition" => self.composition = value.to_string(),
            "include_inverse_edges" => {
                self.include_inverse_edges = parse_bool(value).ok_or_else(|| bad(key))?
            }
            "cluster_stoplist" => {
                self.cluster_stoplist = value
                    .split(',')
                    .map(|t| t.trim().to_string())
                    .filter(|t| !t.is_empty())
                    .collect()
            }
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Best-known settings per corpus.
    pub fn apply_preset(&mut self, name: &str) -> Result<()> {
        match name {
            "fb15ket" => {
                self.dim = 100;
                self.learning_rate = 0.001;
                self.lightgcn_layers = 4;
                self.compgcn_layers = 2;
                self.heads = 5;
                self.temperatures = vec![0.5, 1.0, 1.5, 2.0, 2.5];
                self.weight_alpha = 2.0;
                self.weight_beta = 2.0;
                self.theta = 0.7;
            }
            "yago43ket" => {
                self.dim = 100;
                self.learning_rate = 0.001;
                self.lightgcn_layers = 1;
                self.compgcn_layers = 2;
                self.heads = 5;
                self.temperatures = vec![0.5, 1.0, 1.5, 2.0, 2.5];
                self.weight_alpha = 2.0;
                self.weight_beta = 2.0;
                self.theta = 0.5;
            }
            other => return Err(Error::Config(format!("unknown preset '{other}'"))),
        }
        Ok(())
    }

    /// Applies a `key = value` config file (blank lines and `#` comments
    /// allowed).
    pub fn apply_file(&mut self, path: &std::path::Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "{}:{}: expected 'key = value'",
                    path.display(),
                    i + 1
                )));
            };
            self.apply_kv(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Applies `KGETOT_<KEY>` environment overrides for every known key.
    pub fn apply_env(&mut self) -> Result<()> {
        for key in CONFIG_KEYS {
            let var = format!("KGETOT_{}", key.to_uppercase());
            if let Ok(value) = std::env::var(&var) {
                self.apply_kv(key, &value)
                    .map_err(|e| Error::Config(format!("{var}: {e}")))?;
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive")))
            }
        };
        if self.dim == 0 || self.batch_size == 0 || self.eval_every == 0 || self.heads == 0 {
            return Err(Error::Config(
                "dim, batch_size, eval_every, and heads must be at least 1".into(),
            ));
        }
        positive(self.learning_rate, "learning_rate")?;
        positive(self.sinkhorn_epsilon, "sinkhorn_epsilon")?;
        positive(self.sinkhorn_tol, "sinkhorn_tol")?;
        positive(self.theta, "theta")?;
        if self.temperatures.len() != self.heads {
            return Err(Error::Config(format!(
                "heads = {} but {} temperatures given",
                self.heads,
                self.temperatures.len()
            )));
        }
        if self.temperatures.iter().any(|&t| t <= 0.0) {
            return Err(Error::Config("temperatures must be positive".into()));
        }
        self.view_flags()?.validate()?;
        if self.view_flags()?.tct && self.compgcn_layers == 0 {
            return Err(Error::Config("compgcn_layers must be at least 1".into()));
        }
        self.composition_enum()?;
        self.loss_config()?.validate()?;
        Ok(())
    }

    pub fn view_flags(&self) -> Result<ViewFlags> {
        let mut flags = ViewFlags::default();
        match self.disable_view.as_str() {
            "none" | "" => {}
            "e2t" => flags.e2t = false,
            "e2c" => flags.e2c = false,
            "tct" => flags.tct = false,
            other => {
                return Err(Error::Config(format!(
                    "disable_view must be none|e2t|e2c|tct, got '{other}'"
                )))
            }
        }
        Ok(flags)
    }

    pub fn composition_enum(&self) -> Result<Composition> {
        match self.composition.as_str() {
            "subtract" => Ok(Composition::Subtract),
            "multiply" => Ok(Composition::Multiply),
            other => Err(Error::Config(format!(
                "composition must be subtract|multiply, got '{other}'"
            ))),
        }
    }

    pub fn encoder_config(&self) -> Result<EncoderConfig> {
        Ok(EncoderConfig {
            dim: self.dim,
            lightgcn_layers: self.lightgcn_layers,
            compgcn_layers: self.compgcn_layers,
            composition: self.composition_enum()?,
            views: self.view_flags()?,
        })
    }

    pub fn ota_config(&self) -> OtaConfig {
        OtaConfig {
            sinkhorn: SinkhornConfig {
                epsilon: self.sinkhorn_epsilon,
                max_iters: self.sinkhorn_max_iters,
                tol: self.sinkhorn_tol,
            },
            cap: self.ot_cap,
            projection: self.ot_projection,
        }
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn loss_config(&self) -> Result<LossConfig> {
        let weight_fn = match self.weight_fn.as_str() {
            "beta" => WeightFn::Beta {
                alpha: self.weight_alpha,
                beta: self.weight_beta,
            },
            "cauchy" => WeightFn::Cauchy {
                location: self.weight_location,
                scale: self.weight_scale,
            },
            "gumbel" => WeightFn::Gumbel {
                location: self.weight_location,
                scale: self.weight_scale,
            },
            "laplace" => WeightFn::Laplace {
                location: self.weight_location,
                scale: self.weight_scale,
            },
            "constant" => WeightFn::Constant,
            other => {
                return Err(Error::Config(format!(
                    "weight_fn must be beta|cauchy|gumbel|laplace|constant, got '{other}'"
                )))
            }
        };
        Ok(LossConfig {
            theta: self.theta,
            weight_fn,
        })
    }

    pub fn tokenizer(&self) -> ClusterTokenizer {
        ClusterTokenizer::with_stoplist(self.cluster_stoplist.iter().cloned())
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Some(true),
        "false" | "0" | "no" | "off" => Some(false),
        _ => None,
    }
}
