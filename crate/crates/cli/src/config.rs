use std::path::Path;

use anyhow::{Context, Result};
use serde::Deserialize;

use transbench::dataset::GenConfig;
use transbench::eval::EvalOptions;

/// Optional `--config` file. Every key is optional; flags win over it.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub gen: GenConfig,
    pub eval: EvalOptions,
    /// `eval.jobs` when the file sets it, so the logical-core default still
    /// applies otherwise.
    #[serde(skip)]
    pub eval_jobs: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let raw: toml::Table = toml::from_str(text)?;
        let eval_jobs = raw
            .get("eval")
            .and_then(|e| e.get("jobs"))
            .and_then(|j| j.as_integer())
            .map(|j| j.max(1) as usize);
        let mut cfg: FileConfig = toml::from_str(text)?;
        cfg.eval_jobs = eval_jobs;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_tables_keep_defaults() {
        let c = FileConfig::parse("[gen]\ncount = 7\n[gen.builder]\nn_max = 9\n[eval]\nreps = 5\njobs = 3\n").unwrap();
        assert_eq!(c.gen.count, 7);
        assert_eq!(c.gen.builder.n_max, 9);
        assert_eq!(c.gen.builder.d_max, 6);
        assert_eq!(c.eval.reps, 5);
        assert_eq!(c.eval.warmup, 2);
        assert_eq!(c.eval_jobs, Some(3));
        assert!(FileConfig::parse("[gen]\nbogus = 1\n").is_err());
    }
}
