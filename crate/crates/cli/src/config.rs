//! Run configuration: a TOML file, optionally patched by `--set key=value`
//! flags, resolved against the config file's directory.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use intentkit::analysis::{
    context_hash, AblationConfig, EvalProtocol, LabeledSweep, UnlabeledSweep,
};
use intentkit::corpus::{filter_domains, load_corpus, Corpus};
use intentkit::encoder::{EncoderConfig, EncoderState, Tokenizer};
use intentkit::pretrain::{JointTrainConfig, SupervisedTrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    pub path: PathBuf,
    #[serde(default = "yes")]
    pub labeled: bool,
    #[serde(default)]
    pub exclude_domains: Vec<String>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EncoderSource {
    /// An intentkit checkpoint, or a directory with a BERT-style export.
    Checkpoint { path: PathBuf },
    /// Fresh weights and a word-level vocabulary built from every dataset.
    Scratch {
        #[serde(default = "default_hidden")]
        hidden: usize,
        #[serde(default = "default_layers")]
        layers: usize,
        #[serde(default = "default_heads")]
        heads: usize,
        #[serde(default = "default_ffn")]
        ffn: usize,
        #[serde(default = "default_max_length")]
        max_length: usize,
        #[serde(default = "default_min_count")]
        min_count: usize,
    },
}

fn default_hidden() -> usize {
    32
}
fn default_layers() -> usize {
    2
}
fn default_heads() -> usize {
    4
}
fn default_ffn() -> usize {
    64
}
fn default_max_length() -> usize {
    32
}
fn default_min_count() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSection {
    pub source: String,
    pub validation: String,
    #[serde(default)]
    pub train: SupervisedTrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSection {
    pub source: String,
    pub target: String,
    #[serde(default)]
    pub train: JointTrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub datasets: Vec<String>,
    #[serde(default)]
    pub protocol: EvalProtocol,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledSweepSection {
    pub source: String,
    pub validation: String,
    pub targets: Vec<String>,
    #[serde(default)]
    pub axes: LabeledSweep,
    #[serde(default)]
    pub train: SupervisedTrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnlabeledSweepSection {
    pub source: String,
    pub target_unlabeled: String,
    pub target_test: String,
    #[serde(default)]
    pub axes: UnlabeledSweep,
    #[serde(default)]
    pub train: JointTrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_parallel")]
    pub parallel_cells: usize,
    #[serde(default)]
    pub eval: EvalProtocol,
    pub labeled: Option<LabeledSweepSection>,
    pub unlabeled: Option<UnlabeledSweepSection>,
}

fn default_reps() -> usize {
    3
}
fn default_parallel() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetPair {
    pub unlabeled: String,
    pub test: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateSection {
    pub source: String,
    pub validation: String,
    pub targets: Vec<TargetPair>,
    #[serde(default)]
    pub config: AblationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverlapSection {
    pub datasets: Vec<String>,
    /// `bundled`, `none`, or a path to a one-word-per-line file.
    #[serde(default = "default_stopwords")]
    pub stopwords: String,
}

fn default_stopwords() -> String {
    "bundled".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedSection {
    pub dataset: String,
    #[serde(default = "default_n_classes")]
    pub n_classes: usize,
    #[serde(default = "default_per_class")]
    pub per_class: usize,
}

fn default_n_classes() -> usize {
    10
}
fn default_per_class() -> usize {
    500
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Copied into every seed field below when the config is resolved.
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub datasets: Vec<DatasetManifest>,
    pub encoder: Option<EncoderSource>,
    pub pretrain: Option<PretrainSection>,
    pub joint: Option<JointSection>,
    pub eval: Option<EvalSection>,
    pub sweep: Option<SweepSection>,
    pub ablate: Option<AblateSection>,
    pub overlap: Option<OverlapSection>,
    pub embed: Option<EmbedSection>,
}

/// Replaces `a.b.c` in `root`, creating tables on the way. The value is
/// parsed as a TOML literal and falls back to a plain string.
fn set_key(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .with_context(|| format!("--set expects KEY=VALUE, got {assignment:?}"))?;
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        table = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .with_context(|| format!("--set {key}: {p:?} is not a table"))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut table: toml::Table =
            toml::from_str(&raw).with_context(|| format!("parsing {}", path.display()))?;
        for o in overrides {
            set_key(&mut table, o)?;
        }
        let mut cfg: RunConfig = table
            .try_into()
            .with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for d in &mut self.datasets {
            fix(&mut d.path);
        }
        if let Some(EncoderSource::Checkpoint { path }) = &mut self.encoder {
            fix(path);
        }
        if let Some(o) = &mut self.overlap {
            if !matches!(o.stopwords.as_str(), "bundled" | "none") {
                let mut p = PathBuf::from(&o.stopwords);
                fix(&mut p);
                o.stopwords = p.to_string_lossy().into_owned();
            }
        }
        if let Some(out) = &mut self.out_dir {
            fix(out);
        }
    }

    /// Copies the global seed into every section.
    pub fn propagate_seed(&mut self) {
        let s = self.seed;
        if let Some(p) = &mut self.pretrain {
            p.train.seed = s;
            p.train.validation.seed = s;
        }
        if let Some(j) = &mut self.joint {
            j.train.seed = s;
        }
        if let Some(e) = &mut self.eval {
            e.protocol.spec.seed = s;
        }
        if let Some(sw) = &mut self.sweep {
            sw.eval.spec.seed = s;
            if let Some(l) = &mut sw.labeled {
                l.train.validation.seed = s;
            }
        }
        if let Some(a) = &mut self.ablate {
            a.config.supervised.seed = s;
            a.config.supervised.validation.seed = s;
            a.config.mlm.seed = s;
            a.config.joint.seed = s;
            a.config.eval.spec.seed = s;
        }
    }

    /// Checks that every referenced path exists and every dataset name used
    /// by `command` is declared.
    pub fn validate(&self, command: &str) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for d in &self.datasets {
            ensure!(seen.insert(&d.name), "dataset {:?} declared twice", d.name);
            ensure!(
                d.path.exists(),
                "dataset {:?}: {} does not exist",
                d.name,
                d.path.display()
            );
        }
        if let Some(EncoderSource::Checkpoint { path }) = &self.encoder {
            ensure!(
                path.exists(),
                "encoder checkpoint {} does not exist",
                path.display()
            );
        }
        for name in self.referenced(command)? {
            ensure!(
                self.datasets.iter().any(|d| d.name == name),
                "[{command}] refers to undeclared dataset {name:?}"
            );
        }
        Ok(())
    }

    fn referenced(&self, command: &str) -> Result<Vec<String>> {
        fn need<T>(s: &Option<T>, name: &str) -> Result<T>
        where
            T: Clone,
        {
            s.clone()
                .with_context(|| format!("config has no [{name}] section"))
        }
        Ok(match command {
            "ingest" => Vec::new(),
            "pretrain" => {
                let p = need(&self.pretrain, "pretrain")?;
                vec![p.source, p.validation]
            }
            "joint" => {
                let j = need(&self.joint, "joint")?;
                vec![j.source, j.target]
            }
            "eval" => need(&self.eval, "eval")?.datasets,
            "sweep" => {
                let s = need(&self.sweep, "sweep")?;
                match (s.labeled, s.unlabeled) {
                    (Some(l), None) => [vec![l.source, l.validation], l.targets].concat(),
                    (None, Some(u)) => vec![u.source, u.target_unlabeled, u.target_test],
                    _ => bail!("[sweep] needs exactly one of [sweep.labeled] or [sweep.unlabeled]"),
                }
            }
            "ablate" => {
                let a = need(&self.ablate, "ablate")?;
                let mut v = vec![a.source, a.validation];
                for t in a.targets {
                    v.push(t.unlabeled);
                    v.push(t.test);
                }
                v
            }
            "overlap" => need(&self.overlap, "overlap")?.datasets,
            "embed" => vec![need(&self.embed, "embed")?.dataset],
            other => bail!("unknown command {other:?}"),
        })
    }

    /// 16 hex digits identifying the command and resolved config.
    pub fn hash(&self, command: &str) -> String {
        context_hash(&(command, self))
    }
}

/// Loads declared datasets on first use.
pub struct Datasets<'a> {
    manifests: &'a [DatasetManifest],
    loaded: HashMap<String, Corpus>,
}

impl<'a> Datasets<'a> {
    pub fn new(manifests: &'a [DatasetManifest]) -> Self {
        Datasets {
            manifests,
            loaded: HashMap::new(),
        }
    }

    pub fn get(&mut self, name: &str) -> Result<&Corpus> {
        if !self.loaded.contains_key(name) {
            let m = self
                .manifests
                .iter()
                .find(|m| m.name == name)
                .with_context(|| format!("undeclared dataset {name:?}"))?;
            let c = load_corpus(&m.path, m.labeled)
                .with_context(|| format!("loading dataset {name:?}"))?;
            let c = filter_domains(&c, &m.exclude_domains).renamed(name);
            log::info!("dataset {name}: {:?}", c.stats());
            self.loaded.insert(name.to_string(), c);
        }
        Ok(&self.loaded[name])
    }

    pub fn get_all(&mut self, names: &[String]) -> Result<Vec<Corpus>> {
        names.iter().map(|n| self.get(n).cloned()).collect()
    }
}

pub fn build_encoder(cfg: &RunConfig, data: &mut Datasets<'_>) -> Result<EncoderState> {
    match cfg
        .encoder
        .as_ref()
        .context("config has no [encoder] section")?
    {
        EncoderSource::Checkpoint { path } => EncoderState::load_pretrained(path)
            .with_context(|| format!("loading encoder {}", path.display())),
        EncoderSource::Scratch {
            hidden,
            layers,
            heads,
            ffn,
            max_length,
            min_count,
        } => {
            let mut texts: Vec<String> = Vec::new();
            for d in &cfg.datasets {
                texts.extend(data.get(&d.name)?.texts().map(str::to_string));
            }
            let tok = Tokenizer::build_word_level(
                texts.iter().map(String::as_str),
                *min_count,
                *max_length,
            )?;
            let mut ec = EncoderConfig::tiny(tok.vocab_size());
            ec.hidden = *hidden;
            ec.layers = *layers;
            ec.heads = *heads;
            ec.ffn = *ffn;
            ec.max_length = *max_length;
            Ok(EncoderState::init(ec, tok, cfg.seed)?)
        }
    }
}
