//! TOML run configuration: model, schedule, corpus paths and output paths.
//!
//! ```toml
//! [model]          # architecture; every key optional (desk defaults)
//! d = 64
//! [schedule]       # steps and optimiser; every key optional
//! phase1_steps = 100
//! [data]
//! structures = "structures"   # directory of .pdb/.tsv files
//! alignments = "alignments"   # directory of <EC>.fasta family alignments
//! substrates = "substrates.tsv"
//! pairs = "pairs.tsv"
//! [output]
//! dir = "run"
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::path::{Path, PathBuf};

use enzyme_core::data::CorpusSpec;
use enzyme_core::model::ModelConfig;
use enzyme_core::training::TrainSchedule;
use serde::Deserialize;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Architecture. `tag_vocab` is derived from the corpus and may not be set.
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub schedule: TrainSchedule,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Default `structures`.
    pub structures: PathBuf,
    /// Default `alignments`.
    pub alignments: PathBuf,
    /// Substrate atom file; none by default.
    pub substrates: Option<PathBuf>,
    /// `enzyme_id <tab> substrate_id <tab> label`; none by default.
    pub pairs: Option<PathBuf>,
    /// Precomputed site manifest; sites are mined at `tau` when absent.
    pub sites: Option<PathBuf>,
    /// Precomputed split manifest; records are clustered and split when absent.
    pub splits: Option<PathBuf>,
    /// Default 0.30.
    pub tau: f64,
    /// Default 0.1.
    pub valid_fraction: f64,
    /// Default 0.1.
    pub test_fraction: f64,
    /// Split and negative-sampling seed, default 0.
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            structures: "structures".into(),
            alignments: "alignments".into(),
            substrates: None,
            pairs: None,
            sites: None,
            splits: None,
            tau: 0.30,
            valid_fraction: 0.1,
            test_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Receives `checkpoint.bin`, `loss.tsv`, `pretrain_loss.tsv`, `sites.tsv`
    /// and `splits.tsv`. Default `run`.
    pub dir: PathBuf,
    /// Also write the checkpoint every this many steps; 0 (default) writes
    /// it only at the end.
    pub checkpoint_every: u64,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: "run".into(),
            checkpoint_every: 0,
        }
    }
}

fn usage(key: &str, why: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("config key `{key}`: {why}"))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let value: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::Usage(format!("config: {e}")))?;
        if value
            .get("model")
            .and_then(|m| m.as_table())
            .is_some_and(|m| m.contains_key("tag_vocab"))
        {
            return Err(usage("model.tag_vocab", "derived from the corpus; remove it"));
        }
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Read, resolve relative paths against the file's directory and check
    /// every invariant, including that input paths exist.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve(base);
        cfg.check_paths()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let d = &mut self.data;
        fix(&mut d.structures);
        fix(&mut d.alignments);
        for p in [&mut d.substrates, &mut d.pairs, &mut d.sites, &mut d.splits].into_iter().flatten() {
            fix(p);
        }
        fix(&mut self.output.dir);
    }

    fn check(&self) -> Result<(), CliError> {
        self.model.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        self.schedule.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        let d = &self.data;
        if !(d.tau > 0.0 && d.tau < 1.0) {
            return Err(usage("data.tau", "must be in (0, 1)"));
        }
        for (key, f) in [("data.valid_fraction", d.valid_fraction), ("data.test_fraction", d.test_fraction)] {
            if !(0.0..1.0).contains(&f) {
                return Err(usage(key, "must be in [0, 1)"));
            }
        }
        if d.valid_fraction + d.test_fraction >= 1.0 {
            return Err(usage("data.test_fraction", "valid and test fractions must leave a training set"));
        }
        Ok(())
    }

    fn check_paths(&self) -> Result<(), CliError> {
        let d = &self.data;
        for (key, p) in [("data.structures", &d.structures), ("data.alignments", &d.alignments)] {
            if !p.is_dir() {
                return Err(usage(key, format!("{} is not a directory", p.display())));
            }
        }
        for (key, p) in [
            ("data.substrates", &d.substrates),
            ("data.pairs", &d.pairs),
            ("data.sites", &d.sites),
            ("data.splits", &d.splits),
        ] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(usage(key, format!("{} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn corpus_spec(&self) -> CorpusSpec {
        let d = &self.data;
        CorpusSpec {
            structures: d.structures.clone(),
            alignments: d.alignments.clone(),
            substrates: d.substrates.clone(),
            pairs: d.pairs.clone(),
            sites: d.sites.clone(),
            splits: d.splits.clone(),
            tau: d.tau,
            valid_fraction: d.valid_fraction,
            test_fraction: d.test_fraction,
            seed: d.seed,
        }
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.output.dir.join("checkpoint.bin")
    }

    pub fn loss_log_path(&self) -> PathBuf {
        self.output.dir.join("loss.tsv")
    }

    pub fn pretrain_log_path(&self) -> PathBuf {
        self.output.dir.join("pretrain_loss.tsv")
    }
}
