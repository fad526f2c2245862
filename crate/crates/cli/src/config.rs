use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use geoasr::amsim::CorpusConfig;
use geoasr::decoder::DecodeConfig;
use geoasr::georegistry::ProvinceTable;
use geoasr::pipeline::{AcousticConfig, LmConfig, PipelineConfig};
use geoasr::rescore::InterpolationConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Every artifact lives below this directory.
    pub workdir: PathBuf,
    /// Province table file; the built-in table when absent.
    pub regions: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            workdir: PathBuf::from("work"),
            regions: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Run {
    /// Threads used for per-utterance work.
    pub workers: usize,
}

impl Default for Run {
    fn default() -> Self {
        Run { workers: 1 }
    }
}

/// The whole configuration file. Every section is optional.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub paths: Paths,
    pub run: Run,
    pub corpus: CorpusConfig,
    pub lm: LmConfig,
    pub acoustic: AcousticConfig,
    pub decode: DecodeConfig,
    pub interpolation: InterpolationConfig,
}

impl Config {
    /// Reads `path` (if any), applies `key.path=value` overrides and
    /// validates the result.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Config> {
        let mut doc = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                text.parse::<toml::Table>()
                    .with_context(|| format!("parsing config {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: Config = toml::Value::Table(doc).try_into().context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline().validate()?;
        if self.run.workers == 0 {
            bail!("run.workers must be at least 1");
        }
        if let Some(r) = &self.paths.regions {
            if !r.is_file() {
                bail!("province table {} does not exist", r.display());
            }
        }
        Ok(())
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            corpus: self.corpus.clone(),
            lm: self.lm.clone(),
            acoustic: self.acoustic,
            decode: self.decode,
            interpolation: self.interpolation,
        }
    }

    pub fn provinces(&self) -> Result<ProvinceTable> {
        match &self.paths.regions {
            None => Ok(ProvinceTable::builtin()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                Ok(ProvinceTable::parse(&text)?)
            }
        }
    }
}

/// Sets `a.b.c` in `doc`. The value is read as TOML when it parses as one
/// (numbers, booleans, arrays, quoted strings) and as a bare string otherwise.
fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .with_context(|| format!("override '{assignment}' is not key=value"))?;
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut table = doc;
    for p in parents {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .with_context(|| format!("override '{assignment}': '{p}' is not a section"))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}
