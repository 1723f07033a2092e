//! Run configuration: a flat `key = value` file plus `KEY=VALUE` overrides.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use sentgram_core::training::{ModelConfig, ModelKind, TrainOptions};
use sentgram_core::treebank::TaskSpec;
use sentgram_core::{Error, Result};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub kind: ModelKind,
    pub task: String,
    pub subtypes: usize,
    pub dim: usize,
    pub components: usize,
    pub budget: Option<usize>,
    pub embed_dim: usize,
    pub hidden: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: f64,
    pub clip: f64,
    pub seed: u64,
    pub min_count: usize,
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            kind: ModelKind::Lveg,
            task: "sst5".into(),
            subtypes: 4,
            dim: 2,
            components: 1,
            budget: Some(50),
            embed_dim: 300,
            hidden: 300,
            lr: 0.001,
            batch_size: 32,
            epochs: 10,
            dropout: 0.5,
            clip: 5.0,
            seed: 1,
            min_count: 1,
            train: None,
            dev: None,
            test: None,
            embeddings: None,
            out_dir: PathBuf::from("run"),
        }
    }
}

/// Keys accepted in config files and overrides.
pub const KEYS: &[&str] = &[
    "kind", "task", "subtypes", "dim", "components", "budget", "embed_dim", "hidden", "lr",
    "batch_size", "epochs", "dropout", "clip", "seed", "min_count", "train", "dev", "test",
    "embeddings", "out_dir",
];

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse {value:?}")))
}

fn positive(key: &str, value: &str) -> Result<usize> {
    let n: usize = num(key, value)?;
    if n == 0 {
        return Err(Error::config(key, "must be at least 1"));
    }
    Ok(n)
}

fn path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

/// Parse `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Data {
                line: i + 1,
                message: format!("expected key = value, got {raw:?}"),
            });
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "kind" => self.kind = ModelKind::from_name(value)?,
            "task" => {
                TaskSpec::from_name(value)?;
                self.task = value.to_string();
            }
            "subtypes" => self.subtypes = positive(key, value)?,
            "dim" => self.dim = positive(key, value)?,
            "components" => self.components = positive(key, value)?,
            "budget" => {
                self.budget = match value {
                    "none" | "off" => None,
                    v => Some(positive(key, v)?),
                }
            }
            "embed_dim" => self.embed_dim = positive(key, value)?,
            "hidden" => self.hidden = positive(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "batch_size" => self.batch_size = positive(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "dropout" => self.dropout = num(key, value)?,
            "clip" => self.clip = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "min_count" => self.min_count = positive(key, value)?,
            "train" => self.train = path(value),
            "dev" => self.dev = path(value),
            "test" => self.test = path(value),
            "embeddings" => self.embeddings = path(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            other => {
                return Err(Error::config(
                    other,
                    format!("unknown key (expected one of {})", KEYS.join(", ")),
                ))
            }
        }
        Ok(())
    }

    /// Defaults, then the file (if any), then overrides.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(f) = file {
            let text = fs::read_to_string(f).map_err(|e| Error::io(f, e))?;
            for (k, v) in parse_pairs(&text)? {
                cfg.set(&k, &v)?;
            }
        }
        for o in overrides {
            let Some((k, v)) = o.split_once('=') else {
                return Err(Error::config(o, "override must look like KEY=VALUE"));
            };
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", "must lie in [0, 1)"));
        }
        if !(self.clip > 0.0) {
            return Err(Error::config("clip", "must be positive"));
        }
        Ok(())
    }

    pub fn require_train(&self) -> Result<&Path> {
        let p = self
            .train
            .as_deref()
            .ok_or_else(|| Error::config("train", "a training file is required"))?;
        if !p.is_file() {
            return Err(Error::config("train", format!("{} is not a readable file", p.display())));
        }
        Ok(p)
    }

    pub fn task_spec(&self) -> TaskSpec {
        TaskSpec::from_name(&self.task).expect("validated on set")
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            kind: self.kind,
            classes: self.task_spec().classes,
            subtypes: self.subtypes,
            dim: self.dim,
            components: self.components,
            budget: self.budget,
            embed_dim: self.embed_dim,
            hidden: self.hidden,
            dropout: self.dropout,
            seed: self.seed,
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            batch_size: self.batch_size,
            clip_norm: self.clip,
            seed: self.seed,
        }
    }

    /// Canonical `key=value` rendering, sorted by key.
    pub fn render(&self) -> String {
        let opt = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        let pairs: BTreeMap<&str, String> = [
            ("kind", self.kind.name().to_string()),
            ("task", self.task.clone()),
            ("subtypes", self.subtypes.to_string()),
            ("dim", self.dim.to_string()),
            ("components", self.components.to_string()),
            ("budget", self.budget.map_or("none".into(), |b| b.to_string())),
            ("embed_dim", self.embed_dim.to_string()),
            ("hidden", self.hidden.to_string()),
            ("lr", self.lr.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("dropout", self.dropout.to_string()),
            ("clip", self.clip.to_string()),
            ("seed", self.seed.to_string()),
            ("min_count", self.min_count.to_string()),
            ("train", opt(&self.train)),
            ("dev", opt(&self.dev)),
            ("test", opt(&self.test)),
            ("embeddings", opt(&self.embeddings)),
            ("out_dir", self.out_dir.display().to_string()),
        ]
        .into_iter()
        .collect();
        pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

pub fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_setup() {
        let c = RunConfig::default();
        assert_eq!((c.embed_dim, c.hidden, c.batch_size, c.subtypes, c.dim, c.components), (300, 300, 32, 4, 2, 1));
        assert_eq!(c.lr, 0.001);
        assert_eq!(c.dropout, 0.5);
    }

    #[test]
    fn overrides_win_and_render_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("run.cfg");
        fs::write(&f, "# comment\nkind = wg\nhidden = 16 # trailing\nepochs=3\n").unwrap();
        let c = RunConfig::load(Some(&f), &["hidden=8".into(), "budget=none".into()]).unwrap();
        assert_eq!(c.kind, ModelKind::Wg);
        assert_eq!(c.hidden, 8);
        assert_eq!(c.epochs, 3);
        assert_eq!(c.budget, None);
        let mut again = RunConfig::default();
        for (k, v) in parse_pairs(&c.render()).unwrap() {
            again.set(&k, &v).unwrap();
        }
        assert_eq!(again, c);
    }

    #[test]
    fn errors_name_the_field() {
        let err = RunConfig::load(None, &["hidden=0".into()]).unwrap_err();
        assert!(err.to_string().contains("`hidden`"));
        let err = RunConfig::load(None, &["colour=blue".into()]).unwrap_err();
        assert!(err.to_string().contains("`colour`"));
        let err = RunConfig::default().require_train().unwrap_err();
        assert!(err.to_string().contains("`train`"));
    }
}
