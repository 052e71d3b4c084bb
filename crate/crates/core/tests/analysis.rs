mod common;

use std::collections::BTreeMap;

use common::{small_encoder, small_suite};
use intentkit::analysis::*;
use intentkit::corpus::{Corpus, EpisodeSpec, Utterance};
use intentkit::encoder::{EncoderConfig, EncoderState, Tokenizer};
use intentkit::fewshot::ClassifierKind;
use intentkit::pretrain::{JointTrainConfig, MlmTrainConfig, SupervisedTrainConfig};
use intentkit::synthetic::{generate, SyntheticConfig};

fn unlabeled(texts: &[&str]) -> Corpus {
    Corpus::new(
        "c",
        texts
            .iter()
            .map(|t| Utterance::unlabeled(*t, "d"))
            .collect(),
        false,
    )
    .unwrap()
}

#[test]
fn overlap_examples() {
    let none = StopWords::none();
    let a = unlabeled(&["red blue green"]);
    let b = unlabeled(&["blue green yellow"]);
    assert_eq!(vocab_overlap(&a, &b, &none).unwrap(), 0.5);
    assert_eq!(vocab_overlap(&a, &a, &none).unwrap(), 1.0);
    let c = unlabeled(&["a b"]);
    let d = unlabeled(&["c d"]);
    assert_eq!(vocab_overlap(&c, &d, &none).unwrap(), 0.0);
}

#[test]
fn synthetic_source_and_target_overlap_is_partial() {
    let s = small_suite(0);
    let v = vocab_overlap(&s.source, &s.target_test, &StopWords::bundled()).unwrap();
    assert!(v > 0.0 && v < 0.5, "{v}");
}

#[test]
fn export_is_deterministic_and_respects_counts() {
    let suite = small_suite(1);
    let enc = small_encoder(&suite, 1).freeze();
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    let r1 = export_embeddings(
        &*enc,
        &suite.target_test,
        4,
        5,
        9,
        &p("m1.txt"),
        &p("l1.tsv"),
    )
    .unwrap();
    let r2 = export_embeddings(
        &*enc,
        &suite.target_test,
        4,
        5,
        9,
        &p("m2.txt"),
        &p("l2.tsv"),
    )
    .unwrap();
    assert_eq!(r1, r2);
    assert_eq!(
        std::fs::read(p("m1.txt")).unwrap(),
        std::fs::read(p("m2.txt")).unwrap()
    );
    assert_eq!(
        std::fs::read(p("l1.tsv")).unwrap(),
        std::fs::read(p("l2.tsv")).unwrap()
    );
    assert_eq!(r1.rows, 20);
    assert_eq!(r1.dim, 16);
    let matrix = std::fs::read_to_string(p("m1.txt")).unwrap();
    assert_eq!(matrix.lines().count(), 20);
    assert!(matrix.lines().all(|l| l.split(' ').count() == 16));
    let labels = std::fs::read_to_string(p("l1.tsv")).unwrap();
    assert_eq!(labels.lines().count(), 21);

    let one = export_embeddings(
        &*enc,
        &suite.target_test,
        4,
        1,
        9,
        &p("m3.txt"),
        &p("l3.tsv"),
    )
    .unwrap();
    assert_eq!(one.rows, 4);
    // per-class cap larger than the class: every utterance, counts recorded
    let all = export_embeddings(
        &*enc,
        &suite.target_test,
        2,
        500,
        9,
        &p("m4.txt"),
        &p("l4.tsv"),
    )
    .unwrap();
    assert_eq!(
        all.classes.iter().map(|c| c.1).collect::<Vec<_>>(),
        vec![8, 8]
    );
    assert!(export_embeddings(
        &*enc,
        &suite.target_test,
        100,
        1,
        9,
        &p("m5.txt"),
        &p("l5.tsv")
    )
    .is_err());
}

fn quick_eval() -> EvalProtocol {
    EvalProtocol {
        spec: EpisodeSpec::new(5, 2).with_episodes(100).with_seed(3),
        classifier: ClassifierKind::default(),
    }
}

fn toy_sup() -> SupervisedTrainConfig {
    SupervisedTrainConfig {
        learning_rate: 1e-3,
        batch_size: 32,
        max_epochs: 6,
        validation: EpisodeSpec::new(5, 2).with_episodes(30),
        ..SupervisedTrainConfig::default()
    }
}

fn mid_suite(seed: u64) -> intentkit::synthetic::SyntheticSuite {
    generate(&SyntheticConfig {
        per_intent: 12,
        unlabeled_per_intent: 12,
        seed,
        ..SyntheticConfig::default()
    })
    .unwrap()
}

fn full_suite(seed: u64) -> intentkit::synthetic::SyntheticSuite {
    generate(&SyntheticConfig {
        seed,
        ..SyntheticConfig::default()
    })
    .unwrap()
}

fn mid_encoder(suite: &intentkit::synthetic::SyntheticSuite, seed: u64) -> EncoderState {
    let tok = Tokenizer::build_word_level(suite.all_texts(), 1, 32).unwrap();
    EncoderState::init(EncoderConfig::tiny(tok.vocab_size()), tok, seed).unwrap()
}

#[test]
fn single_scheme_ablation_is_one_run() {
    let suite = small_suite(2);
    let enc = small_encoder(&suite, 2);
    let cfg = AblationConfig {
        schemes: vec![AblationScheme::BertThenMlmTarget],
        mlm: MlmTrainConfig {
            epochs: 1,
            learning_rate: 1e-3,
            ..MlmTrainConfig::default()
        },
        eval: EvalProtocol {
            spec: EpisodeSpec::new(3, 1).with_episodes(10),
            classifier: ClassifierKind::NearestCentroid,
        },
        ..AblationConfig::default()
    };
    let targets = [AblationTarget {
        unlabeled: &suite.target_unlabeled,
        test: &suite.target_test,
    }];
    let t = ablation_suite(&enc, &suite.source, &suite.validation, &targets, &cfg).unwrap();
    assert_eq!(t.rows.len(), 1);
    assert_eq!(t.targets, vec![suite.target_test.name().to_string()]);
    let md = t.to_table().to_markdown();
    assert!(md.starts_with("| Scheme | synthetic-target |"));
    assert!(md.contains("BERT→MLM(target) |"));
    assert!(t
        .summary(AblationScheme::BertThenMlmTarget, "synthetic-target")
        .is_some());
}

#[test]
fn failing_row_leaves_others_intact() {
    let suite = small_suite(3);
    let enc = small_encoder(&suite, 3);
    let too_small = Corpus::new(
        "val-too-small",
        vec![Utterance::labeled("x", "a", "d")],
        true,
    )
    .unwrap();
    let cfg = AblationConfig {
        schemes: vec![
            AblationScheme::IntentBertThenMlmTarget,
            AblationScheme::IntentBertMlmTarget,
        ],
        joint: JointTrainConfig {
            epochs: 1,
            learning_rate: 1e-3,
            ..JointTrainConfig::default()
        },
        eval: EvalProtocol {
            spec: EpisodeSpec::new(3, 1).with_episodes(10),
            classifier: ClassifierKind::NearestCentroid,
        },
        ..AblationConfig::default()
    };
    let targets = [AblationTarget {
        unlabeled: &suite.target_unlabeled,
        test: &suite.target_test,
    }];
    let t = ablation_suite(&enc, &suite.source, &too_small, &targets, &cfg).unwrap();
    assert!(t.rows[0].cells[0].error.is_some());
    assert!(t.rows[1].cells[0].summary.is_some());
    let long = t.to_long_table().to_csv();
    assert_eq!(long.lines().count(), 3);
    assert!(t.to_table().to_markdown().contains("failed"));
}

#[test]
fn joint_target_beats_two_stage_target_on_toy_corpora() {
    let mut joint = 0.0;
    let mut two_stage = 0.0;
    for seed in 0..3 {
        let suite = full_suite(seed);
        let enc = mid_encoder(&suite, seed);
        let cfg = AblationConfig {
            schemes: vec![
                AblationScheme::IntentBertThenMlmTarget,
                AblationScheme::IntentBertMlmTarget,
            ],
            supervised: SupervisedTrainConfig {
                learning_rate: 1e-3,
                max_epochs: 10,
                seed,
                ..SupervisedTrainConfig::default()
            },
            mlm: MlmTrainConfig {
                epochs: 10,
                learning_rate: 1e-3,
                seed,
                ..MlmTrainConfig::default()
            },
            joint: JointTrainConfig {
                epochs: 10,
                learning_rate: 1e-3,
                seed,
                ..JointTrainConfig::default()
            },
            eval: quick_eval(),
            ..AblationConfig::default()
        };
        let targets = [AblationTarget {
            unlabeled: &suite.target_unlabeled,
            test: &suite.target_test,
        }];
        let t = ablation_suite(&enc, &suite.source, &suite.validation, &targets, &cfg).unwrap();
        let name = suite.target_test.name();
        two_stage += t
            .summary(AblationScheme::IntentBertThenMlmTarget, name)
            .unwrap()
            .mean_accuracy
            / 3.0;
        joint += t
            .summary(AblationScheme::IntentBertMlmTarget, name)
            .unwrap()
            .mean_accuracy
            / 3.0;
    }
    assert!(
        joint >= two_stage,
        "joint {joint:.3} vs two-stage {two_stage:.3}"
    );
}

#[test]
fn more_labeled_data_is_not_worse() {
    let suite = mid_suite(4);
    let enc = mid_encoder(&suite, 4);
    let axes = LabeledSweep {
        domain_counts: vec![1, 6],
        per_class_counts: vec![2, 12],
    };
    let opts = SweepOptions {
        reps: 3,
        seed: 4,
        parallel_cells: 2,
        store: None,
    };
    let g = labeled_data_sweep(
        &enc,
        &suite.source,
        &suite.validation,
        &[&suite.target_test],
        &axes,
        &toy_sup(),
        &quick_eval(),
        &opts,
    )
    .unwrap();
    assert_eq!(g.cells.len(), 12);
    assert!(g.cells.iter().all(|c| c.is_ok()));
    let at = |d: usize, k: usize| {
        BTreeMap::from([("domains".to_string(), d), ("per_class".to_string(), k)])
    };
    let full = g.mean_accuracy(&at(6, 12), "synthetic-target").unwrap();
    let minimal = g.mean_accuracy(&at(1, 2), "synthetic-target").unwrap();
    assert!(full >= minimal, "full {full:.3} vs minimal {minimal:.3}");
    assert_eq!(g.rep_seeds.len(), 3);
}

#[test]
fn infeasible_labeled_cells_are_recorded_as_failures() {
    let suite = small_suite(5);
    let enc = small_encoder(&suite, 5);
    let axes = LabeledSweep {
        domain_counts: vec![99],
        per_class_counts: vec![2],
    };
    let opts = SweepOptions {
        reps: 2,
        ..SweepOptions::default()
    };
    let g = labeled_data_sweep(
        &enc,
        &suite.source,
        &suite.validation,
        &[&suite.target_test],
        &axes,
        &toy_sup(),
        &quick_eval(),
        &opts,
    )
    .unwrap();
    assert_eq!(g.cells.len(), 2);
    assert!(g
        .cells
        .iter()
        .all(|c| matches!(c.status, CellStatus::Failed { .. })));
}

#[test]
fn larger_unlabeled_pool_is_not_much_worse() {
    let suite = full_suite(6);
    let enc = mid_encoder(&suite, 6);
    let axes = UnlabeledSweep {
        pool_sizes: vec![10, 200],
        include_full: false,
    };
    let joint = JointTrainConfig {
        epochs: 10,
        learning_rate: 1e-3,
        ..JointTrainConfig::default()
    };
    let opts = SweepOptions {
        reps: 3,
        seed: 6,
        parallel_cells: 2,
        store: None,
    };
    let g = unlabeled_data_sweep(
        &enc,
        &suite.source,
        &suite.target_unlabeled,
        &suite.target_test,
        &axes,
        &joint,
        &quick_eval(),
        &opts,
    )
    .unwrap();
    let at = |n: usize| BTreeMap::from([("pool_size".to_string(), n)]);
    let small = g.mean_accuracy(&at(10), "synthetic-target").unwrap();
    let large = g.mean_accuracy(&at(200), "synthetic-target").unwrap();
    assert!(large >= small - 0.02, "200: {large:.3}, 10: {small:.3}");
}

#[test]
fn full_pool_cell_is_added_and_oversized_pool_fails() {
    let suite = small_suite(7);
    let enc = small_encoder(&suite, 7);
    let axes = UnlabeledSweep {
        pool_sizes: vec![100_000],
        include_full: true,
    };
    let joint = JointTrainConfig {
        epochs: 1,
        learning_rate: 1e-3,
        ..JointTrainConfig::default()
    };
    let eval = EvalProtocol {
        spec: EpisodeSpec::new(3, 1).with_episodes(5),
        classifier: ClassifierKind::NearestCentroid,
    };
    let opts = SweepOptions {
        reps: 1,
        ..SweepOptions::default()
    };
    let g = unlabeled_data_sweep(
        &enc,
        &suite.source,
        &suite.target_unlabeled,
        &suite.target_test,
        &axes,
        &joint,
        &eval,
        &opts,
    )
    .unwrap();
    assert_eq!(g.cells.len(), 2);
    assert!(!g.cells[0].is_ok());
    assert!(g.cells[1].is_ok());
    assert_eq!(g.cells[1].params["pool_size"], suite.target_unlabeled.len());
}
