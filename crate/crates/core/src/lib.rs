//! Few-shot intent classification toolkit.
//!
//! Supervised pre-training of a transformer encoder on labeled intent data,
//! joint pre-training with a masked-language-modeling objective on unlabeled
//! target utterances, and episodic C-way K-shot evaluation on frozen features.

pub mod analysis;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod fewshot;
pub mod math;
pub mod pretrain;
pub mod seeding;
pub mod synthetic;

pub use error::{Error, Result};
