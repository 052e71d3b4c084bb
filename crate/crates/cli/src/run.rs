//! Per-run output directory and provenance stamping.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use intentkit::analysis::Table;
use serde::Serialize;
use serde_json::Value;

use crate::config::RunConfig;

pub const TOOLKIT: &str = "intentkit";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub toolkit: &'static str,
    pub version: &'static str,
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn line(&self) -> String {
        format!(
            "{} {} config_hash={} seed={}",
            self.toolkit, self.version, self.config_hash, self.seed
        )
    }

    pub fn metadata(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("toolkit".to_string(), self.toolkit.to_string()),
            ("toolkit_version".to_string(), self.version.to_string()),
            ("config_hash".to_string(), self.config_hash.clone()),
            ("seed".to_string(), self.seed.to_string()),
        ])
    }
}

pub struct RunDir {
    pub dir: PathBuf,
    pub command: String,
    pub provenance: Provenance,
    artifacts: Vec<String>,
}

impl RunDir {
    /// `<out>/<command>-<config hash>`, created if missing.
    pub fn create(out: &Path, command: &str, cfg: &RunConfig) -> Result<Self> {
        let hash = cfg.hash(command);
        let dir = out.join(format!("{command}-{hash}"));
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        log::info!("run directory {}", dir.display());
        Ok(RunDir {
            dir,
            command: command.to_string(),
            provenance: Provenance {
                toolkit: TOOLKIT,
                version: VERSION,
                config_hash: hash,
                seed: cfg.seed,
            },
            artifacts: Vec::new(),
        })
    }

    /// Registers `rel` as an artifact and returns its absolute path.
    pub fn artifact(&mut self, rel: &str) -> Result<PathBuf> {
        let p = self.dir.join(rel);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
        if !self.artifacts.iter().any(|a| a == rel) {
            self.artifacts.push(rel.to_string());
        }
        Ok(p)
    }

    /// A JSON object with a leading `provenance` field.
    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<PathBuf> {
        let mut obj = serde_json::Map::new();
        obj.insert("provenance".into(), serde_json::to_value(&self.provenance)?);
        match serde_json::to_value(value)? {
            Value::Object(m) => obj.extend(m),
            other => {
                obj.insert("data".into(), other);
            }
        }
        let p = self.artifact(rel)?;
        let mut body = serde_json::to_string_pretty(&Value::Object(obj))?;
        body.push('\n');
        std::fs::write(&p, body).with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    }

    /// One JSON record per line after a `#` provenance line.
    pub fn write_jsonl<T: Serialize>(&mut self, rel: &str, records: &[T]) -> Result<PathBuf> {
        let mut body = format!("# {}\n", self.provenance.line());
        for r in records {
            body.push_str(&serde_json::to_string(r)?);
            body.push('\n');
        }
        let p = self.artifact(rel)?;
        std::fs::write(&p, body).with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    }

    /// `<stem>.csv` with a `#` provenance line and `<stem>.md` with an HTML
    /// comment.
    pub fn write_table(&mut self, stem: &str, table: &Table) -> Result<()> {
        let line = self.provenance.line();
        let csv = self.artifact(&format!("{stem}.csv"))?;
        std::fs::write(&csv, format!("# {line}\n{}", table.to_csv()))
            .with_context(|| format!("writing {}", csv.display()))?;
        let md = self.artifact(&format!("{stem}.md"))?;
        std::fs::write(&md, format!("<!-- {line} -->\n{}", table.to_markdown()))
            .with_context(|| format!("writing {}", md.display()))?;
        Ok(())
    }

    /// Puts a `#` provenance line at the top of a file written elsewhere.
    pub fn stamp(&mut self, rel: &str) -> Result<()> {
        let p = self.artifact(rel)?;
        let body =
            std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        std::fs::write(&p, format!("# {}\n{body}", self.provenance.line()))
            .with_context(|| format!("writing {}", p.display()))
    }

    /// `run_manifest.json`: provenance, the resolved config, the artifact
    /// list and deterministic results. No timestamps.
    pub fn finish(mut self, cfg: &RunConfig, results: Value) -> Result<PathBuf> {
        #[derive(Serialize)]
        struct Manifest<'a> {
            command: &'a str,
            device: &'a str,
            config: &'a RunConfig,
            artifacts: Vec<String>,
            results: Value,
        }
        let mut artifacts = self.artifacts.clone();
        artifacts.sort();
        let command = self.command.clone();
        let manifest = Manifest {
            command: &command,
            device: "cpu",
            config: cfg,
            artifacts,
            results,
        };
        self.write_json("run_manifest.json", &manifest)
    }
}
