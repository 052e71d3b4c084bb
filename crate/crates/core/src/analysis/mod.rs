//! Vocabulary overlap, data-amount sweeps, the pre-training ablation grid and
//! embedding export.

mod ablation;
mod export;
mod overlap;
mod sweep;
mod table;

use serde::{Deserialize, Serialize};

use crate::corpus::EpisodeSpec;
use crate::fewshot::ClassifierKind;

pub use ablation::{
    ablation_suite, AblationCell, AblationConfig, AblationRow, AblationScheme, AblationTable,
    AblationTarget, JointInit,
};
pub use export::{export_embeddings, ExportReport};
pub use overlap::{overlap_matrix, vocab_overlap, word_set, StopWords};
pub use sweep::{
    context_hash, labeled_data_sweep, read_store, unlabeled_data_sweep, CellRecord, CellStatus,
    LabeledSweep, SweepGrid, SweepOptions, UnlabeledSweep,
};
pub use table::Table;

/// How a trained encoder is scored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalProtocol {
    pub spec: EpisodeSpec,
    pub classifier: ClassifierKind,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        EvalProtocol {
            spec: EpisodeSpec::new(5, 2),
            classifier: ClassifierKind::default(),
        }
    }
}
