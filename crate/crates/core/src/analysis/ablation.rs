//! Joint versus two-stage pre-training, with the masked-LM term on source or
//! target text.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::table::Table;
use super::EvalProtocol;
use crate::corpus::Corpus;
use crate::encoder::EncoderState;
use crate::error::Result;
use crate::fewshot::{evaluate, EvalSummary};
use crate::pretrain::{
    joint_pretrain, mlm_pretrain, supervised_pretrain, JointTrainConfig, MlmTrainConfig,
    SupervisedTrainConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationScheme {
    /// Base encoder, then MLM on the target.
    BertThenMlmTarget,
    /// Supervised pre-training, then MLM on the target.
    IntentBertThenMlmTarget,
    /// Joint training with MLM on the (unlabeled) source text.
    IntentBertMlmSource,
    /// Joint training with MLM on the target.
    IntentBertMlmTarget,
}

impl AblationScheme {
    pub const ALL: [AblationScheme; 4] = [
        AblationScheme::BertThenMlmTarget,
        AblationScheme::IntentBertThenMlmTarget,
        AblationScheme::IntentBertMlmSource,
        AblationScheme::IntentBertMlmTarget,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            AblationScheme::BertThenMlmTarget => "BERT→MLM(target)",
            AblationScheme::IntentBertThenMlmTarget => "IntentBERT→MLM(target)",
            AblationScheme::IntentBertMlmSource => "IntentBERT+MLM(source)",
            AblationScheme::IntentBertMlmTarget => "IntentBERT+MLM(target)",
        }
    }
}

impl fmt::Display for AblationScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Where joint schemes start from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointInit {
    /// The encoder passed in, untouched.
    #[default]
    Base,
    /// The supervised pre-training result.
    IntentBert,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub schemes: Vec<AblationScheme>,
    pub supervised: SupervisedTrainConfig,
    pub mlm: MlmTrainConfig,
    pub joint: JointTrainConfig,
    pub joint_init: JointInit,
    pub eval: EvalProtocol,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            schemes: AblationScheme::ALL.to_vec(),
            supervised: SupervisedTrainConfig::default(),
            mlm: MlmTrainConfig::default(),
            joint: JointTrainConfig::default(),
            joint_init: JointInit::Base,
            eval: EvalProtocol::default(),
        }
    }
}

/// A target domain: unlabeled text for the MLM term and labeled test data.
#[derive(Debug, Clone, Copy)]
pub struct AblationTarget<'a> {
    pub unlabeled: &'a Corpus,
    pub test: &'a Corpus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub target: String,
    pub summary: Option<EvalSummary>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub scheme: AblationScheme,
    pub cells: Vec<AblationCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub targets: Vec<String>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn summary(&self, scheme: AblationScheme, target: &str) -> Option<&EvalSummary> {
        self.rows
            .iter()
            .find(|r| r.scheme == scheme)?
            .cells
            .iter()
            .find(|c| c.target == target)?
            .summary
            .as_ref()
    }

    /// Schemes down, targets across, `mean ± std` cells.
    pub fn to_table(&self) -> Table {
        let mut t =
            Table::new(std::iter::once("Scheme".to_string()).chain(self.targets.iter().cloned()));
        for r in &self.rows {
            let mut row = vec![r.scheme.label().to_string()];
            row.extend(r.cells.iter().map(|c| {
                c.summary
                    .as_ref()
                    .map_or_else(|| "failed".to_string(), EvalSummary::cell)
            }));
            t.push(row);
        }
        t
    }

    /// One line per (scheme, target) with raw numbers.
    pub fn to_long_table(&self) -> Table {
        let mut t = Table::new([
            "scheme",
            "target",
            "mean_accuracy",
            "std_accuracy",
            "n_episodes",
            "error",
        ]);
        for r in &self.rows {
            for c in &r.cells {
                match &c.summary {
                    Some(s) => t.push([
                        r.scheme.label().to_string(),
                        c.target.clone(),
                        format!("{:.6}", s.mean_accuracy),
                        format!("{:.6}", s.std_accuracy),
                        s.n_episodes.to_string(),
                        String::new(),
                    ]),
                    None => t.push([
                        r.scheme.label().to_string(),
                        c.target.clone(),
                        String::new(),
                        String::new(),
                        String::new(),
                        c.error.clone().unwrap_or_default(),
                    ]),
                }
            }
        }
        t
    }
}

fn cell(target: &Corpus, outcome: Result<EvalSummary>) -> AblationCell {
    match outcome {
        Ok(s) => AblationCell {
            target: target.name().to_string(),
            summary: Some(s),
            error: None,
        },
        Err(e) => {
            log::warn!("ablation cell on {:?} failed: {e}", target.name());
            AblationCell {
                target: target.name().to_string(),
                summary: None,
                error: Some(e.to_string()),
            }
        }
    }
}

/// Trains and evaluates every configured scheme. Failures are confined to
/// the affected cells.
pub fn ablation_suite(
    base: &EncoderState,
    source: &Corpus,
    val: &Corpus,
    targets: &[AblationTarget<'_>],
    cfg: &AblationConfig,
) -> Result<AblationTable> {
    cfg.eval.spec.validate()?;
    let needs_intentbert = cfg.schemes.iter().any(|s| match s {
        AblationScheme::IntentBertThenMlmTarget => true,
        AblationScheme::IntentBertMlmSource | AblationScheme::IntentBertMlmTarget => {
            cfg.joint_init == JointInit::IntentBert
        }
        AblationScheme::BertThenMlmTarget => false,
    });
    let intentbert: Option<std::result::Result<EncoderState, String>> =
        needs_intentbert.then(|| {
            supervised_pretrain(base.clone(), source, val, &cfg.supervised)
                .map(|(s, _)| s)
                .map_err(|e| e.to_string())
        });
    let intentbert_state = || -> Result<EncoderState> {
        match intentbert.as_ref().expect("computed when needed") {
            Ok(s) => Ok(s.clone()),
            Err(m) => Err(crate::Error::Config(format!(
                "supervised stage failed: {m}"
            ))),
        }
    };
    let joint_start = || -> Result<EncoderState> {
        match cfg.joint_init {
            JointInit::Base => Ok(base.clone()),
            JointInit::IntentBert => intentbert_state(),
        }
    };
    let eval = |state: &EncoderState, test: &Corpus| {
        evaluate(state, test, &cfg.eval.spec, cfg.eval.classifier)
    };

    let mut rows = Vec::new();
    for &scheme in &cfg.schemes {
        log::info!("ablation: {scheme}");
        let cells: Vec<AblationCell> = match scheme {
            AblationScheme::BertThenMlmTarget => targets
                .iter()
                .map(|t| {
                    cell(
                        t.test,
                        mlm_pretrain(base.clone(), t.unlabeled, &cfg.mlm)
                            .and_then(|(s, _)| eval(&s, t.test)),
                    )
                })
                .collect(),
            AblationScheme::IntentBertThenMlmTarget => targets
                .iter()
                .map(|t| {
                    let out = intentbert_state()
                        .and_then(|s| mlm_pretrain(s, t.unlabeled, &cfg.mlm))
                        .and_then(|(s, _)| eval(&s, t.test));
                    cell(t.test, out)
                })
                .collect(),
            AblationScheme::IntentBertMlmSource => {
                let stripped = source.strip_labels();
                let trained =
                    joint_start().and_then(|s| joint_pretrain(s, source, &stripped, &cfg.joint));
                match trained {
                    Ok((s, _)) => targets
                        .iter()
                        .map(|t| cell(t.test, eval(&s, t.test)))
                        .collect(),
                    Err(e) => {
                        let msg = e.to_string();
                        targets
                            .iter()
                            .map(|t| cell(t.test, Err(crate::Error::Config(msg.clone()))))
                            .collect()
                    }
                }
            }
            AblationScheme::IntentBertMlmTarget => targets
                .iter()
                .map(|t| {
                    let out = joint_start()
                        .and_then(|s| joint_pretrain(s, source, t.unlabeled, &cfg.joint))
                        .and_then(|(s, _)| eval(&s, t.test));
                    cell(t.test, out)
                })
                .collect(),
        };
        rows.push(AblationRow { scheme, cells });
    }
    Ok(AblationTable {
        targets: targets.iter().map(|t| t.test.name().to_string()).collect(),
        rows,
    })
}
