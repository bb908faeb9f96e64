//! Run configuration: a TOML file plus command-line overrides.
//!
//! ```toml
//! mode = "mtm-cw"
//! seed = 1
//! checkpoint = "model.json"
//! report = "report.jsonl"
//! embeddings = "vectors.txt"   # optional, word2vec text format
//! min_freq = 5
//! dictionary_mode = "off"      # off | feature | postprocess
//! constrained_decoding = false # forbid invalid IOBES transitions when tagging
//!
//! [dims]
//! word_hidden = 100
//!
//! [train]
//! max_epochs = 50
//!
//! [[tasks]]
//! name = "gene"
//! train = "gene/train.conll"
//! dev = "gene/dev.conll"
//! test = "gene/test.conll"     # optional
//! entity_types = ["GENE"]      # optional, read from the training tags
//! lambda = 1.0
//!
//! [[dictionaries]]
//! entity_type = "GENE"
//! path = "genes.txt"
//! ```
//!
//! Relative paths are resolved against the directory of the config file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use seqtag::model::{DictionaryMode, ModelDims, ShareMode};
use seqtag::train::TrainConfig;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: ShareMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_checkpoint")]
    pub checkpoint: PathBuf,
    #[serde(default)]
    pub report: Option<PathBuf>,
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
    #[serde(default = "default_min_freq")]
    pub min_freq: usize,
    #[serde(default)]
    pub dictionary_mode: DictionaryMode,
    #[serde(default)]
    pub constrained_decoding: bool,
    #[serde(default)]
    pub dims: ModelDims,
    #[serde(default)]
    pub train: TrainConfig,
    pub tasks: Vec<TaskEntry>,
    #[serde(default)]
    pub dictionaries: Vec<DictionaryEntry>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskEntry {
    pub name: String,
    pub train: PathBuf,
    pub dev: PathBuf,
    #[serde(default)]
    pub test: Option<PathBuf>,
    #[serde(default)]
    pub entity_types: Option<Vec<String>>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DictionaryEntry {
    pub entity_type: String,
    pub path: PathBuf,
}

fn default_checkpoint() -> PathBuf {
    PathBuf::from("model.json")
}

fn default_min_freq() -> usize {
    5
}

fn default_lambda() -> f64 {
    1.0
}

/// Flags that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub mode: Option<ShareMode>,
    pub seed: Option<u64>,
    pub checkpoint: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub max_epochs: Option<usize>,
    pub dictionary_mode: Option<DictionaryMode>,
}

impl RunConfig {
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).context("cannot parse config")?;
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).with_context(|| format!("in {}", path.display()))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.checkpoint);
        self.report.iter_mut().for_each(fix);
        self.embeddings.iter_mut().for_each(fix);
        for t in &mut self.tasks {
            fix(&mut t.train);
            fix(&mut t.dev);
            t.test.iter_mut().for_each(fix);
        }
        for d in &mut self.dictionaries {
            fix(&mut d.path);
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(m) = o.mode {
            self.mode = m;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.checkpoint {
            self.checkpoint = p.clone();
        }
        if let Some(p) = &o.report {
            self.report = Some(p.clone());
        }
        if let Some(e) = o.max_epochs {
            self.train.max_epochs = e;
        }
        if let Some(d) = o.dictionary_mode {
            self.dictionary_mode = d;
        }
    }

    /// `[train]` settings with the run seed; a `seed` key inside `[train]`
    /// is ignored.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// Checks everything that can be checked before any work starts.
    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            bail!("no tasks configured");
        }
        if self.mode == ShareMode::SingleTask && self.tasks.len() != 1 {
            bail!("mode stm needs exactly one task, got {}", self.tasks.len());
        }
        let mut names: Vec<&str> = self.tasks.iter().map(|t| t.name.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            bail!("duplicate task name '{}'", w[0]);
        }
        if self.min_freq == 0 {
            bail!("min_freq must be at least 1");
        }
        self.train.validate()?;
        if self.dictionary_mode != DictionaryMode::Off && self.dictionaries.is_empty() {
            bail!("dictionary_mode {:?} needs at least one [[dictionaries]] entry", self.dictionary_mode);
        }
        let mut paths: Vec<&Path> = Vec::new();
        for t in &self.tasks {
            paths.extend([t.train.as_path(), t.dev.as_path()]);
            paths.extend(t.test.as_deref());
        }
        paths.extend(self.embeddings.as_deref());
        paths.extend(self.dictionaries.iter().map(|d| d.path.as_path()));
        for p in paths {
            if !p.is_file() {
                bail!("file not found: {}", p.display());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
mode = "stm"
[[tasks]]
name = "gene"
train = "train.conll"
dev = "dev.conll"
"#;

    #[test]
    fn defaults_and_relative_paths() {
        let cfg = RunConfig::from_toml(MINIMAL, Path::new("/data")).unwrap();
        assert_eq!(cfg.mode, ShareMode::SingleTask);
        assert_eq!(cfg.min_freq, 5);
        assert_eq!(cfg.dims, ModelDims::default());
        assert_eq!(cfg.train, TrainConfig::default());
        assert_eq!(cfg.tasks[0].train, Path::new("/data/train.conll"));
        assert_eq!(cfg.checkpoint, Path::new("/data/model.json"));
        assert_eq!(cfg.tasks[0].lambda, 1.0);
    }

    #[test]
    fn flags_win() {
        let mut cfg = RunConfig::from_toml(MINIMAL, Path::new(".")).unwrap();
        cfg.apply(&Overrides {
            mode: Some(ShareMode::MtmCw),
            seed: Some(9),
            max_epochs: Some(3),
            ..Default::default()
        });
        assert_eq!(cfg.mode, ShareMode::MtmCw);
        assert_eq!(cfg.train_config().seed, 9);
        assert_eq!(cfg.train_config().max_epochs, 3);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_modes() {
        assert!(RunConfig::from_toml(&format!("{MINIMAL}\nbogus = 1"), Path::new(".")).is_err());
        assert!(RunConfig::from_toml(&MINIMAL.replace("stm", "mtm-x"), Path::new(".")).is_err());
    }

    #[test]
    fn stm_with_two_tasks_is_invalid() {
        let text = format!("{MINIMAL}\n[[tasks]]\nname = \"b\"\ntrain = \"t\"\ndev = \"d\"\n");
        let cfg = RunConfig::from_toml(&text, Path::new(".")).unwrap();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("exactly one task"), "{err}");
    }
}
