//! Run configuration: flat `key = value` file, `--set key=value` flags
//! layered on top. Unknown keys are rejected up front.

use std::path::PathBuf;

use relmatch_core::model::{Hyper, ViewConfig};
use relmatch_core::optim::Method;
use relmatch_core::{Error, Result};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub embeddings: Option<PathBuf>,
    pub word_dim: usize,
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub profiles: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub metrics_json: Option<PathBuf>,
    pub strict_embeddings: bool,
    pub hyper: Hyper,
    pub views: ViewConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            embeddings: None,
            word_dim: 300,
            train: None,
            dev: None,
            profiles: None,
            checkpoint: None,
            metrics: None,
            metrics_json: None,
            strict_embeddings: false,
            hyper: Hyper::default(),
            views: ViewConfig::default(),
        }
    }
}

fn bad(key: &str, value: &str, want: &str) -> Error {
    Error::Config(format!("key `{key}`: cannot parse `{value}` as {want}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(bad(key, value, "a boolean")),
    }
}

impl RunConfig {
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let usize_of = |v: &str| v.parse::<usize>().map_err(|_| bad(key, v, "an integer"));
        let f64_of = |v: &str| v.parse::<f64>().map_err(|_| bad(key, v, "a number"));
        match key {
            "embeddings" => self.embeddings = Some(PathBuf::from(value)),
            "word_dim" => self.word_dim = usize_of(value)?,
            "train" => self.train = Some(PathBuf::from(value)),
            "dev" => self.dev = Some(PathBuf::from(value)),
            "profiles" => self.profiles = Some(PathBuf::from(value)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "metrics" => self.metrics = Some(PathBuf::from(value)),
            "metrics_json" => self.metrics_json = Some(PathBuf::from(value)),
            "strict_embeddings" => self.strict_embeddings = parse_bool(key, value)?,
            "d" => self.hyper.d = usize_of(value)?,
            "l" => self.hyper.l = usize_of(value)?,
            "d_agg" => self.hyper.d_agg = usize_of(value)?,
            "h_mlp" => self.hyper.h_mlp = usize_of(value)?,
            "d_char" => self.hyper.d_char = usize_of(value)?,
            "d_charh" => self.hyper.d_charh = usize_of(value)?,
            "margin" => self.hyper.margin = f64_of(value)?,
            "lr" => self.hyper.lr = f64_of(value)?,
            "epochs" => self.hyper.epochs = usize_of(value)?,
            "seed" => {
                self.hyper.seed = value
                    .parse::<u64>()
                    .map_err(|_| bad(key, value, "an unsigned integer"))?
            }
            "optimizer" => {
                self.hyper.optimizer = match value {
                    "adam" => Method::adam(),
                    "sgd" => Method::Sgd,
                    _ => return Err(bad(key, value, "`adam` or `sgd`")),
                }
            }
            "clip" => {
                self.hyper.clip = if value == "none" {
                    None
                } else {
                    Some(f64_of(value)?)
                }
            }
            "input_dropout" => self.hyper.input_dropout = f64_of(value)?,
            "init_bound" => self.hyper.init_bound = f64_of(value)?,
            "use_entity_pair" => self.views.use_entity_pair = parse_bool(key, value)?,
            "use_type_view" => self.views.use_type_view = parse_bool(key, value)?,
            "concat_relation_and_type" => {
                self.views.concat_relation_and_type = parse_bool(key, value)?
            }
            "abstract_question" => self.views.abstract_question = parse_bool(key, value)?,
            "use_char" => self.views.use_char = parse_bool(key, value)?,
            _ => return Err(Error::Config(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &std::path::Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                msg: "expected `key = value`".to_string(),
            })?;
            self.apply(key.trim(), value.trim()).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn apply_sets(&mut self, sets: &[String]) -> Result<()> {
        for s in sets {
            let (key, value) = s.split_once('=').ok_or_else(|| {
                Error::Config(format!("--set expects key=value, got `{s}`"))
            })?;
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.views.validate()?;
        if self.hyper.lr <= 0.0 {
            return Err(Error::Config("lr must be positive".to_string()));
        }
        if !(0.0..1.0).contains(&self.hyper.input_dropout) {
            return Err(Error::Config("input_dropout must be in [0, 1)".to_string()));
        }
        Ok(())
    }

    pub fn require(&self, what: &str, value: &Option<PathBuf>) -> Result<PathBuf> {
        value
            .clone()
            .ok_or_else(|| Error::Config(format!("missing required path `{what}`")))
    }
}
