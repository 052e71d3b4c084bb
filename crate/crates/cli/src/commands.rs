use anyhow::{bail, Context, Result};
use intentkit::analysis::{
    ablation_suite, export_embeddings, labeled_data_sweep, overlap_matrix, unlabeled_data_sweep,
    AblationTarget, StopWords, SweepGrid, SweepOptions, Table,
};
use intentkit::corpus::Corpus;
use intentkit::encoder::EncoderState;
use intentkit::fewshot::evaluate;
use intentkit::pretrain::{joint_pretrain, supervised_pretrain, TrainReport};
use serde_json::{json, Value};

use crate::config::{build_encoder, Datasets, RunConfig};
use crate::run::RunDir;

/// Deterministic results recorded in the run manifest.
pub type Outcome = Result<Value>;

fn stats_row(c: &Corpus) -> Vec<String> {
    let s = c.stats();
    vec![
        c.name().to_string(),
        s.n_domains.to_string(),
        s.n_intents.to_string(),
        s.n_utterances.to_string(),
    ]
}

pub fn ingest(cfg: &RunConfig, run: &mut RunDir) -> Outcome {
    let mut data = Datasets::new(&cfg.datasets);
    let mut table = Table::new(["dataset", "domains", "intents", "utterances"]);
    let mut stats = serde_json::Map::new();
    for d in &cfg.datasets {
        let c = data.get(&d.name)?;
        table.push(stats_row(c));
        stats.insert(d.name.clone(), serde_json::to_value(c.stats())?);
        run.write_jsonl(&format!("corpora/{}.jsonl", d.name), c.utterances())?;
        println!("{}", table.rows.last().expect("just pushed").join("\t"));
    }
    run.write_table("stats", &table)?;
    Ok(json!({ "stats": stats }))
}

fn write_training(run: &mut RunDir, state: &EncoderState, report: &TrainReport) -> Result<Value> {
    let ckpt = run.artifact("encoder.safetensors")?;
    state.save_with_metadata(&ckpt, &run.provenance.metadata())?;
    run.write_jsonl("epochs.jsonl", &report.epochs)?;
    run.write_jsonl("steps.jsonl", &report.steps)?;
    run.write_json("train_report.json", report)?;
    eprintln!("{}", report.summary());
    Ok(json!({
        "final_loss": report.final_loss(),
        "epochs_run": report.stopped_epoch,
        "best_epoch": report.best_epoch,
        "steps": report.steps.len(),
        "fingerprint": state.fingerprint(),
    }))
}

pub fn pretrain(cfg: &RunConfig, run: &mut RunDir) -> Outcome {
    let sec = cfg
        .pretrain
        .as_ref()
        .context("config has no [pretrain] section")?;
    let mut data = Datasets::new(&cfg.datasets);
    let base = build_encoder(cfg, &mut data)?;
    let source = data.get(&sec.source)?.clone();
    let val = data.get(&sec.validation)?.clone();
    let (state, report) = supervised_pretrain(base, &source, &val, &sec.train)?;
    write_training(run, &state, &report)
}

pub fn joint(cfg: &RunConfig, run: &mut RunDir) -> Outcome {
    let sec = cfg
        .joint
        .as_ref()
        .context("config has no [joint] section")?;
    let mut data = Datasets::new(&cfg.datasets);
    let base = build_encoder(cfg, &mut data)?;
    let source = data.get(&sec.source)?.clone();
    let target = data.get(&sec.target)?.clone();
    let (state, report) = joint_pretrain(base, &source, &target, &sec.train)?;
    write_training(run, &state, &report)
}

pub fn eval(cfg: &RunConfig, run: &mut RunDir) -> Outcome {
    let sec = cfg.eval.as_ref().context("config has no [eval] section")?;
    let mut data = Datasets::new(&cfg.datasets);
    let enc = build_encoder(cfg, &mut data)?.freeze();
    let mut table = Table::new([
        "dataset",
        "ways",
        "shots",
        "episodes",
        "mean_accuracy",
        "std_accuracy",
        "cell",
    ]);
    let mut results = serde_json::Map::new();
    for name in &sec.datasets {
        let corpus = data.get(name)?;
        let s = evaluate(&enc, corpus, &sec.protocol.spec, sec.protocol.classifier)
            .with_context(|| format!("evaluating on {name:?}"))?;
        run.write_json(&format!("eval/{name}.json"), &s)?;
        table.push([
            name.clone(),
            s.spec.ways.to_string(),
            s.spec.shots.to_string(),
            s.n_episodes.to_string(),
            format!("{:.6}", s.mean_accuracy),
            format!("{:.6}", s.std_accuracy),
            s.cell(),
        ]);
        println!("{name}\t{}", s.cell());
        results.insert(
            name.clone(),
            json!({"mean_accuracy": s.mean_accuracy, "std_accuracy": s.std_accuracy}),
        );
    }
    run.write_table("eval", &table)?;
    Ok(Value::Object(results))
}

pub fn sweep(cfg: &RunConfig, run: &mut RunDir) -> Outcome {
    let sec = cfg
        .sweep
        .as_ref()
        .context("config has no [sweep] section")?;
    let mut data = Datasets::new(&cfg.datasets);
    let base = build_encoder(cfg, &mut data)?;
    let store = run.artifact("cells.jsonl")?;
    if !store.exists() {
        std::fs::write(&store, format!("# {}\n", run.provenance.line()))
            .with_context(|| format!("writing {}", store.display()))?;
    }
    let opts = SweepOptions {
        reps: sec.reps,
        seed: cfg.seed,
        parallel_cells: sec.parallel_cells,
        store: Some(store),
    };
    let grid: SweepGrid = match (&sec.labeled, &sec.unlabeled) {
        (Some(l), None) => {
            let source = data.get(&l.source)?.clone();
            let val = data.get(&l.validation)?.clone();
            let targets = data.get_all(&l.targets)?;
            let refs: Vec<&Corpus> = targets.iter().collect();
            labeled_data_sweep(
                &base, &source, &val, &refs, &l.axes, &l.train, &sec.eval, &opts,
            )?
        }
        (None, Some(u)) => {
            let source = data.get(&u.source)?.clone();
            let pool = data.get(&u.target_unlabeled)?.clone();
            let test = data.get(&u.target_test)?.clone();
            unlabeled_data_sweep(
                &base, &source, &pool, &test, &u.axes, &u.train, &sec.eval, &opts,
            )?
        }
        _ => bail!("[sweep] needs exactly one of [sweep.labeled] or [sweep.unlabeled]"),
    };
    let failed = grid.cells.iter().filter(|c| !c.is_ok()).count();
    eprintln!(
        "sweep {}: {} cells, {} computed this run, {} failed",
        grid.sweep,
        grid.cells.len(),
        grid.computed,
        failed
    );
    run.write_json("grid.json", &grid)?;
    run.write_table("summary", &grid.summary_table())?;
    Ok(json!({ "cells": grid.cells.len(), "failed": failed, "context": grid.context }))
}

pub fn ablate(cfg: &RunConfig, run: &mut RunDir) -> Outcome {
    let sec = cfg
        .ablate
        .as_ref()
        .context("config has no [ablate] section")?;
    let mut data = Datasets::new(&cfg.datasets);
    let base = build_encoder(cfg, &mut data)?;
    let source = data.get(&sec.source)?.clone();
    let val = data.get(&sec.validation)?.clone();
    let mut pairs = Vec::new();
    for t in &sec.targets {
        pairs.push((data.get(&t.unlabeled)?.clone(), data.get(&t.test)?.clone()));
    }
    let targets: Vec<AblationTarget<'_>> = pairs
        .iter()
        .map(|(u, t)| AblationTarget {
            unlabeled: u,
            test: t,
        })
        .collect();
    let table = ablation_suite(&base, &source, &val, &targets, &sec.config)?;
    run.write_json("ablation.json", &table)?;
    run.write_table("ablation", &table.to_table())?;
    run.write_table("ablation_long", &table.to_long_table())?;
    println!("{}", table.to_table().to_markdown());
    let failed = table
        .rows
        .iter()
        .flat_map(|r| &r.cells)
        .filter(|c| c.summary.is_none())
        .count();
    Ok(json!({ "failed_cells": failed }))
}

pub fn overlap(cfg: &RunConfig, run: &mut RunDir) -> Outcome {
    let sec = cfg
        .overlap
        .as_ref()
        .context("config has no [overlap] section")?;
    let stop = match sec.stopwords.as_str() {
        "bundled" => StopWords::bundled(),
        "none" => StopWords::none(),
        path => StopWords::parse(
            &std::fs::read_to_string(path).with_context(|| format!("reading stopwords {path}"))?,
        ),
    };
    let mut data = Datasets::new(&cfg.datasets);
    let corpora = data.get_all(&sec.datasets)?;
    let refs: Vec<&Corpus> = corpora.iter().collect();
    let m = overlap_matrix(&refs, &stop)?;
    let mut table =
        Table::new(std::iter::once("dataset".to_string()).chain(sec.datasets.iter().cloned()));
    for (name, row) in sec.datasets.iter().zip(&m) {
        table.push(std::iter::once(name.clone()).chain(row.iter().map(|v| format!("{v:.6}"))));
    }
    run.write_table("overlap", &table)?;
    println!("{}", table.to_markdown());
    Ok(json!({ "datasets": sec.datasets, "matrix": m }))
}

pub fn embed(cfg: &RunConfig, run: &mut RunDir) -> Outcome {
    let sec = cfg
        .embed
        .as_ref()
        .context("config has no [embed] section")?;
    let mut data = Datasets::new(&cfg.datasets);
    let enc = build_encoder(cfg, &mut data)?.freeze();
    let corpus = data.get(&sec.dataset)?;
    let matrix = run.artifact("embeddings.txt")?;
    let labels = run.artifact("labels.tsv")?;
    let report = export_embeddings(
        &enc,
        corpus,
        sec.n_classes,
        sec.per_class,
        cfg.seed,
        &matrix,
        &labels,
    )?;
    run.stamp("embeddings.txt")?;
    run.stamp("labels.tsv")?;
    run.write_json("export.json", &report)?;
    Ok(serde_json::to_value(&report)?)
}
