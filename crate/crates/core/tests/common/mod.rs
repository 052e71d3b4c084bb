#![allow(dead_code)]

use intentkit::encoder::{EncoderConfig, EncoderState, Tokenizer};
use intentkit::synthetic::{generate, SyntheticConfig, SyntheticSuite};

pub fn small_suite(seed: u64) -> SyntheticSuite {
    generate(&SyntheticConfig {
        source_domains: 3,
        actions: 3,
        concepts_per_domain: 3,
        per_intent: 8,
        unlabeled_per_intent: 6,
        seed,
        ..SyntheticConfig::default()
    })
    .unwrap()
}

pub fn small_encoder(suite: &SyntheticSuite, seed: u64) -> EncoderState {
    let tok = Tokenizer::build_word_level(suite.all_texts(), 1, 24).unwrap();
    let mut cfg = EncoderConfig::tiny(tok.vocab_size());
    cfg.hidden = 16;
    cfg.heads = 2;
    cfg.ffn = 32;
    cfg.layers = 2;
    EncoderState::init(cfg, tok, seed).unwrap()
}
