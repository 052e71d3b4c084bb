mod common;

use common::{small_encoder, small_suite};
use intentkit::corpus::{Corpus, EpisodeSpec, Utterance};
use intentkit::encoder::EncoderState;
use intentkit::fewshot::ClassifierKind;
use intentkit::math::argmax;
use intentkit::pretrain::*;
use intentkit::Error;

fn sup_cfg(epochs: usize) -> SupervisedTrainConfig {
    SupervisedTrainConfig {
        learning_rate: 1e-3,
        batch_size: 16,
        max_epochs: epochs,
        patience: 3,
        seed: 5,
        validation: EpisodeSpec::new(3, 1).with_queries(2).with_episodes(10),
        classifier: ClassifierKind::NearestCentroid,
    }
}

fn joint_cfg(lambda: f64, epochs: usize) -> JointTrainConfig {
    JointTrainConfig {
        lambda,
        epochs,
        learning_rate: 1e-3,
        batch_size: 16,
        seed: 5,
        ..JointTrainConfig::default()
    }
}

fn never_stop(_: &EncoderState, _: usize) -> intentkit::Result<f64> {
    Ok(0.5)
}

#[test]
fn early_stopping_returns_first_epoch_on_decreasing_scores() {
    let suite = small_suite(1);
    let enc = small_encoder(&suite, 1);
    let mut seen = Vec::new();
    let mut validator = |s: &EncoderState, epoch: usize| {
        seen.push(s.fingerprint());
        Ok(1.0 - epoch as f64 * 0.1)
    };
    let (out, report) =
        supervised_pretrain_with(enc, &suite.source, &mut validator, &sup_cfg(20)).unwrap();
    assert_eq!(report.stopped_epoch, 4);
    assert_eq!(report.best_epoch, Some(1));
    assert_eq!(report.epochs.len(), 4);
    assert_eq!(seen.len(), 4);
    assert_eq!(out.fingerprint(), seen[0]);
}

#[test]
fn early_stopping_tracks_a_late_peak() {
    let suite = small_suite(1);
    let enc = small_encoder(&suite, 1);
    let scores = [0.2, 0.3, 0.3, 0.5, 0.4, 0.45, 0.5, 0.1];
    let mut seen = Vec::new();
    let mut validator = |s: &EncoderState, epoch: usize| {
        seen.push(s.fingerprint());
        Ok(scores[epoch - 1])
    };
    let (out, report) =
        supervised_pretrain_with(enc, &suite.source, &mut validator, &sup_cfg(20)).unwrap();
    // ties do not count as improvement
    assert_eq!(report.best_epoch, Some(4));
    assert_eq!(report.stopped_epoch, 7);
    assert_eq!(out.fingerprint(), seen[3]);
}

#[test]
fn early_stopping_unit() {
    let mut es = EarlyStopping::new(2);
    assert!(es.observe(1, 0.5));
    assert!(!es.observe(2, 0.5));
    assert!(!es.should_stop());
    assert!(es.observe(3, 0.6));
    assert!(!es.observe(4, f64::NAN));
    assert!(!es.observe(5, 0.1));
    assert!(es.should_stop());
    assert_eq!((es.best_epoch(), es.best_score()), (Some(3), Some(0.6)));
}

fn heldout_split(c: &Corpus) -> (Corpus, Corpus) {
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (i, u) in c.utterances().iter().enumerate() {
        if i % 5 == 0 {
            b.push(u.clone())
        } else {
            a.push(u.clone())
        }
    }
    (
        Corpus::new("train", a, true).unwrap(),
        Corpus::new("heldout", b, true).unwrap(),
    )
}

fn head_accuracy(s: &EncoderState, c: &Corpus, train: &Corpus) -> f64 {
    let texts: Vec<&str> = c.texts().collect();
    let feats = s.embed_texts(&texts).unwrap();
    let mut correct = 0;
    for (i, u) in c.utterances().iter().enumerate() {
        let p = s.classify(feats.row(i)).unwrap();
        if train.label_vocab()[argmax(p.view())] == *u.label.as_ref().unwrap() {
            correct += 1;
        }
    }
    correct as f64 / c.len() as f64
}

#[test]
fn supervised_training_beats_untrained_head_on_heldout_source() {
    let suite = small_suite(2);
    let (train, heldout) = heldout_split(&suite.source);
    let mut enc = small_encoder(&suite, 2);
    enc.reset_cls_head(train.label_vocab(), 5);
    let before = head_accuracy(&enc, &heldout, &train);
    let mut cfg = sup_cfg(15);
    cfg.patience = 15;
    let mut rising = |_: &EncoderState, epoch: usize| Ok(epoch as f64);
    let (out, report) = supervised_pretrain_with(enc, &train, &mut rising, &cfg).unwrap();
    let after = head_accuracy(&out, &heldout, &train);
    assert!(after > before + 0.2, "before {before}, after {after}");
    assert!(report.steps.iter().all(|s| s.total.is_finite()));
    assert!(report.epochs.last().unwrap().mean_loss < report.epochs[0].mean_loss);
}

#[test]
fn supervised_errors() {
    let suite = small_suite(3);
    let enc = small_encoder(&suite, 3);
    let empty = Corpus::new("empty", vec![], true).unwrap();
    let cfg = sup_cfg(2);
    assert!(matches!(
        supervised_pretrain(enc.clone(), &empty, &suite.validation, &cfg),
        Err(Error::Corpus(_))
    ));
    assert!(matches!(
        supervised_pretrain(enc.clone(), &suite.source, &suite.source, &cfg),
        Err(Error::Config(_))
    ));
    let tiny_val = Corpus::new(
        "tiny",
        vec![
            Utterance::labeled("a", "x", "d"),
            Utterance::labeled("b", "y", "d"),
        ],
        true,
    )
    .unwrap();
    assert!(matches!(
        supervised_pretrain(enc.clone(), &suite.source, &tiny_val, &cfg),
        Err(Error::Sampling(_))
    ));
    let mut bad = cfg.clone();
    bad.patience = 0;
    assert!(supervised_pretrain(enc, &suite.source, &suite.validation, &bad).is_err());
}

#[test]
fn joint_with_zero_lambda_follows_supervised_steps() {
    let suite = small_suite(4);
    let enc = small_encoder(&suite, 4);
    let mut cfg = sup_cfg(2);
    cfg.patience = 10;
    let (_, sup) =
        supervised_pretrain_with(enc.clone(), &suite.source, &mut never_stop, &cfg).unwrap();
    let (_, joint) = joint_pretrain(
        enc,
        &suite.source,
        &suite.target_unlabeled,
        &joint_cfg(0.0, 2),
    )
    .unwrap();
    assert_eq!(sup.steps.len(), joint.steps.len());
    for (a, b) in sup.steps.iter().zip(&joint.steps) {
        let (ca, cb) = (a.ce.unwrap(), b.ce.unwrap());
        assert!(
            (ca - cb).abs() <= 1e-6 * ca.abs(),
            "step {}: {ca} vs {cb}",
            a.step
        );
        assert_eq!(b.total, cb);
    }
}

#[test]
fn joint_is_deterministic_and_runs_fixed_epochs() {
    let suite = small_suite(5);
    let enc = small_encoder(&suite, 5);
    let (a, ra) = joint_pretrain(
        enc.clone(),
        &suite.source,
        &suite.target_unlabeled,
        &joint_cfg(1.0, 3),
    )
    .unwrap();
    let (b, rb) = joint_pretrain(
        enc,
        &suite.source,
        &suite.target_unlabeled,
        &joint_cfg(1.0, 3),
    )
    .unwrap();
    assert_eq!(a.fingerprint(), b.fingerprint());
    assert_eq!(ra.steps, rb.steps);
    assert_eq!(ra.stopped_epoch, 3);
    assert_eq!(ra.epochs.len(), 3);
    assert!(ra.steps.iter().all(|s| s.mlm.unwrap().is_finite()));
    assert!(a.params.mlm_head.is_some() && a.params.cls_head.is_some());
}

#[test]
fn joint_rejects_empty_target() {
    let suite = small_suite(6);
    let enc = small_encoder(&suite, 6);
    let empty = Corpus::new("none", vec![], false).unwrap();
    assert!(joint_pretrain(enc, &suite.source, &empty, &joint_cfg(1.0, 1)).is_err());
}

#[test]
fn single_supervised_stage_matches_direct_call() {
    let suite = small_suite(7);
    let enc = small_encoder(&suite, 7);
    let cfg = sup_cfg(3);
    let (direct, _) =
        supervised_pretrain(enc.clone(), &suite.source, &suite.validation, &cfg).unwrap();
    let stages = [Stage::Supervised {
        source: &suite.source,
        val: &suite.validation,
        config: cfg,
    }];
    let (staged, reports) = two_stage_pretrain(enc, &stages).unwrap();
    assert_eq!(direct.fingerprint(), staged.fingerprint());
    assert_eq!(reports.len(), 1);
}

#[test]
fn mlm_stage_reduces_loss() {
    let suite = small_suite(8);
    let enc = small_encoder(&suite, 8);
    let cfg = MlmTrainConfig {
        epochs: 8,
        learning_rate: 3e-3,
        batch_size: 16,
        seed: 1,
        ..MlmTrainConfig::default()
    };
    let stages = [Stage::Mlm {
        corpus: &suite.target_unlabeled,
        config: cfg,
    }];
    let (_, reports) = two_stage_pretrain(enc, &stages).unwrap();
    let r = &reports[0];
    assert!(
        r.final_loss().unwrap() < r.epochs[0].mean_loss,
        "{}",
        r.summary()
    );
}

#[test]
fn supervised_then_mlm_keeps_both_heads() {
    let suite = small_suite(9);
    let enc = small_encoder(&suite, 9);
    let stages = [
        Stage::Supervised {
            source: &suite.source,
            val: &suite.validation,
            config: sup_cfg(1),
        },
        Stage::Mlm {
            corpus: &suite.target_unlabeled,
            config: MlmTrainConfig {
                epochs: 1,
                learning_rate: 1e-3,
                batch_size: 16,
                ..MlmTrainConfig::default()
            },
        },
    ];
    let (out, reports) = two_stage_pretrain(enc, &stages).unwrap();
    assert_eq!(
        reports.iter().map(|r| r.mode.as_str()).collect::<Vec<_>>(),
        ["supervised", "mlm"]
    );
    assert_eq!(out.labels, suite.source.label_vocab());
    assert!(out.params.mlm_head.is_some());
}

#[test]
fn report_serializes_one_line_per_epoch() {
    let suite = small_suite(10);
    let enc = small_encoder(&suite, 10);
    let (_, r) = joint_pretrain(
        enc,
        &suite.source,
        &suite.target_unlabeled,
        &joint_cfg(1.0, 2),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("report.jsonl");
    r.write_jsonl(&p).unwrap();
    let raw = std::fs::read_to_string(&p).unwrap();
    assert_eq!(raw.lines().count(), 2);
    let first: EpochRecord = serde_json::from_str(raw.lines().next().unwrap()).unwrap();
    assert_eq!(first.epoch, 1);
    assert!(r.summary().contains("epochs run: 2"));
}
