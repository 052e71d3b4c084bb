use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use intentkit::corpus::save_corpus;
use intentkit::encoder::read_tensor_file;
use intentkit::synthetic::{generate, SyntheticConfig};
use serde_json::Value;

fn intentkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_intentkit"))
        .args(args)
        .env_remove("INTENTKIT_DEVICE")
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Run directory printed on the last stdout line.
fn run_dir(o: &Output) -> PathBuf {
    assert!(o.status.success(), "command failed: {}", stderr(o));
    PathBuf::from(
        String::from_utf8_lossy(&o.stdout)
            .lines()
            .last()
            .unwrap()
            .trim(),
    )
}

const DATASETS: &str = r#"
[[datasets]]
name = "source"
path = "source.jsonl"

[[datasets]]
name = "val"
path = "val.jsonl"

[[datasets]]
name = "target_unlabeled"
path = "target_unlabeled.jsonl"
labeled = false

[[datasets]]
name = "target"
path = "target.jsonl"

[encoder]
kind = "scratch"
hidden = 16
heads = 2
ffn = 32
layers = 1
max_length = 24
"#;

/// Writes a small synthetic suite and a config with `extra` appended.
fn workspace(extra: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let suite = generate(&SyntheticConfig {
        source_domains: 3,
        actions: 3,
        concepts_per_domain: 3,
        per_intent: 8,
        unlabeled_per_intent: 6,
        ..SyntheticConfig::default()
    })
    .unwrap();
    for (name, c) in [
        ("source", &suite.source),
        ("val", &suite.validation),
        ("target_unlabeled", &suite.target_unlabeled),
        ("target", &suite.target_test),
    ] {
        save_corpus(c, dir.path().join(format!("{name}.jsonl"))).unwrap();
    }
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, format!("seed = 3\n{DATASETS}\n{extra}")).unwrap();
    (dir, cfg)
}

fn args<'a>(cmd: &'a str, cfg: &'a Path, out: &'a Path) -> Vec<&'a str> {
    vec![
        cmd,
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]
}

fn ce_steps(path: &Path) -> Vec<f64> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| {
            serde_json::from_str::<Value>(l).unwrap()["ce"]
                .as_f64()
                .unwrap()
        })
        .collect()
}

#[test]
fn ingest_applies_exclusions_and_leaves_inputs_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("oos_full.jsonl");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&data).unwrap());
    for d in 0..10 {
        for i in 0..15 {
            for k in 0..150 {
                writeln!(
                    f,
                    r#"{{"text":"utt {k}","label":"d{d}_i{i}","domain":"dom{d}"}}"#
                )
                .unwrap();
            }
        }
    }
    drop(f);
    let before = std::fs::read(&data).unwrap();
    let cfg = dir.path().join("ingest.toml");
    std::fs::write(
        &cfg,
        "[[datasets]]\nname = \"oos\"\npath = \"oos_full.jsonl\"\nexclude_domains = [\"dom0\", \"dom1\"]\n",
    )
    .unwrap();
    let out = dir.path().join("runs");
    let o = intentkit(&args("ingest", &cfg, &out));
    let run = run_dir(&o);
    let stats = std::fs::read_to_string(run.join("stats.csv")).unwrap();
    assert!(stats.starts_with("# intentkit "), "{stats}");
    assert!(stats.contains("\noos,8,120,18000\n"), "{stats}");
    assert!(std::fs::read_to_string(run.join("stats.md"))
        .unwrap()
        .starts_with("<!-- intentkit "));
    let canon = std::fs::read_to_string(run.join("corpora/oos.jsonl")).unwrap();
    assert_eq!(canon.lines().filter(|l| !l.starts_with('#')).count(), 18000);
    assert_eq!(std::fs::read(&data).unwrap(), before);
}

#[test]
fn ingest_malformed_record_cites_line() {
    let dir = tempfile::tempdir().unwrap();
    let mut body = String::new();
    for i in 0..6 {
        body.push_str(&format!(
            "{{\"text\":\"t{i}\",\"label\":\"a\",\"domain\":\"d\"}}\n"
        ));
    }
    body.push_str("{\"text\": \"broken\", \n");
    std::fs::write(dir.path().join("bad.jsonl"), body).unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[[datasets]]\nname = \"bad\"\npath = \"bad.jsonl\"\n").unwrap();
    let o = intentkit(&args("ingest", &cfg, &dir.path().join("runs")));
    assert!(!o.status.success());
    assert!(stderr(&o).contains("line 7"), "{}", stderr(&o));
}

#[test]
fn ingest_empty_manifest_warns_and_does_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "seed = 1\n").unwrap();
    let out = dir.path().join("runs");
    let o = intentkit(&args("ingest", &cfg, &out));
    assert!(o.status.success());
    assert!(stderr(&o).contains("nothing to ingest"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn missing_dataset_file_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[[datasets]]\nname = \"x\"\npath = \"nope.jsonl\"\n").unwrap();
    let o = intentkit(&args("ingest", &cfg, &dir.path().join("runs")));
    assert!(!o.status.success());
    assert!(stderr(&o).contains("does not exist"));
}

#[test]
fn unsupported_device_is_rejected() {
    let (dir, cfg) = workspace("");
    let o = Command::new(env!("CARGO_BIN_EXE_intentkit"))
        .args(args("ingest", &cfg, &dir.path().join("runs")))
        .env("INTENTKIT_DEVICE", "cuda")
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(stderr(&o).contains("only cpu"));
}

const PRETRAIN: &str = r#"
[pretrain]
source = "source"
validation = "val"

[pretrain.train]
learning_rate = 1e-3
max_epochs = 2
patience = 5
validation = { ways = 3, shots = 1, queries = 2, n_episodes = 10 }
"#;

#[test]
fn pretrain_rerun_gives_identical_manifest_and_stamped_artifacts() {
    let (dir, cfg) = workspace(PRETRAIN);
    let a = run_dir(&intentkit(&args("pretrain", &cfg, &dir.path().join("a"))));
    let b = run_dir(&intentkit(&args("pretrain", &cfg, &dir.path().join("b"))));
    assert_eq!(a.file_name(), b.file_name());
    let ma = std::fs::read(a.join("run_manifest.json")).unwrap();
    assert_eq!(ma, std::fs::read(b.join("run_manifest.json")).unwrap());

    let manifest: Value = serde_json::from_slice(&ma).unwrap();
    let hash = manifest["provenance"]["config_hash"]
        .as_str()
        .unwrap()
        .to_string();
    assert_eq!(manifest["provenance"]["seed"], 3);
    assert!(a.file_name().unwrap().to_str().unwrap().ends_with(&hash));
    assert!(manifest["results"]["final_loss"]
        .as_f64()
        .unwrap()
        .is_finite());
    let artifacts: Vec<&str> = manifest["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert_eq!(
        artifacts,
        [
            "encoder.safetensors",
            "epochs.jsonl",
            "steps.jsonl",
            "train_report.json"
        ]
    );

    let (meta, _) = read_tensor_file(&a.join("encoder.safetensors")).unwrap();
    assert_eq!(meta["config_hash"], hash);
    assert_eq!(meta["seed"], "3");
    for f in ["epochs.jsonl", "steps.jsonl"] {
        let first = std::fs::read_to_string(a.join(f))
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_string();
        assert!(
            first.contains(&format!("config_hash={hash} seed=3")),
            "{first}"
        );
    }
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("train_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["provenance"]["config_hash"], hash);
    assert_eq!(
        ce_steps(&a.join("steps.jsonl")),
        ce_steps(&b.join("steps.jsonl"))
    );

    let c = run_dir(&intentkit(
        &[
            args("pretrain", &cfg, &dir.path().join("a")),
            vec!["--seed", "4"],
        ]
        .concat(),
    ));
    assert_ne!(c.file_name(), a.file_name());
}

#[test]
fn joint_with_zero_lambda_logs_the_supervised_ce() {
    let joint = r#"
[joint]
source = "source"
target = "target_unlabeled"

[joint.train]
lambda = 0.0
epochs = 2
learning_rate = 1e-3
"#;
    let (dir, cfg) = workspace(&format!("{PRETRAIN}\n{joint}"));
    let out = dir.path().join("runs");
    let sup = run_dir(&intentkit(&args("pretrain", &cfg, &out)));
    let jnt = run_dir(&intentkit(&args("joint", &cfg, &out)));
    let a = ce_steps(&sup.join("steps.jsonl"));
    let b = ce_steps(&jnt.join("steps.jsonl"));
    assert!(!a.is_empty());
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-9 * x.abs(), "{x} vs {y}");
    }
}

#[test]
fn overlap_matrix_has_unit_diagonal() {
    let (dir, cfg) = workspace("[overlap]\ndatasets = [\"source\", \"target\", \"source\"]\n");
    let run = run_dir(&intentkit(&args("overlap", &cfg, &dir.path().join("runs"))));
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("run_manifest.json")).unwrap())
            .unwrap();
    let m = manifest["results"]["matrix"].as_array().unwrap();
    for (i, row) in m.iter().enumerate() {
        assert_eq!(row[i].as_f64(), Some(1.0));
    }
    assert_eq!(m[0][2].as_f64(), Some(1.0));
    assert!(m[0][1].as_f64().unwrap() < 1.0);
    let csv = std::fs::read_to_string(run.join("overlap.csv")).unwrap();
    assert!(csv
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("dataset,source,target,source"));
}

#[test]
fn sweep_resume_recomputes_only_missing_cells() {
    let sweep = r#"
[sweep]
reps = 2
eval = { spec = { ways = 3, shots = 1, queries = 2, n_episodes = 10 } }

[sweep.labeled]
source = "source"
validation = "val"
targets = ["target"]
axes = { domain_counts = [1, 3], per_class_counts = [2, 4] }
train = { learning_rate = 1e-3, max_epochs = 1, validation = { ways = 3, shots = 1, queries = 2, n_episodes = 5 } }
"#;
    let (dir, cfg) = workspace(sweep);
    let out = dir.path().join("runs");
    let run = run_dir(&intentkit(&args("sweep", &cfg, &out)));
    let store = run.join("cells.jsonl");
    let body = std::fs::read_to_string(&store).unwrap();
    let (header, records): (Vec<&str>, Vec<&str>) = body.lines().partition(|l| l.starts_with('#'));
    assert_eq!(header.len(), 1);
    assert_eq!(records.len(), 8);
    let grid = |run: &Path| -> Value {
        serde_json::from_str(&std::fs::read_to_string(run.join("grid.json")).unwrap()).unwrap()
    };
    assert_eq!(grid(&run)["computed"], 8);

    let kept: Vec<&str> = records.iter().step_by(2).copied().collect();
    std::fs::write(&store, format!("{}\n{}\n", header[0], kept.join("\n"))).unwrap();
    let again = run_dir(&intentkit(&args("sweep", &cfg, &out)));
    assert_eq!(again, run);
    let g = grid(&again);
    assert_eq!(g["computed"], 4);
    assert_eq!(g["cells"].as_array().unwrap().len(), 8);
    let lines = std::fs::read_to_string(&store)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .count();
    assert_eq!(lines, 8);
    let summary = std::fs::read_to_string(run.join("summary.md")).unwrap();
    assert!(summary.starts_with("<!-- intentkit "));
}

#[test]
fn eval_and_embed_write_stamped_outputs() {
    let extra = r#"
[eval]
datasets = ["target"]
protocol = { spec = { ways = 3, shots = 2, queries = 2, n_episodes = 20 } }

[embed]
dataset = "target"
n_classes = 3
per_class = 4
"#;
    let (dir, cfg) = workspace(extra);
    let out = dir.path().join("runs");
    let ev = run_dir(&intentkit(&args("eval", &cfg, &out)));
    let s: Value =
        serde_json::from_str(&std::fs::read_to_string(ev.join("eval/target.json")).unwrap())
            .unwrap();
    assert_eq!(s["n_episodes"], 20);
    assert!(s["provenance"]["config_hash"].is_string());
    assert!(std::fs::read_to_string(ev.join("eval.csv"))
        .unwrap()
        .contains("\ntarget,3,2,20,"));

    let em = run_dir(&intentkit(&args("embed", &cfg, &out)));
    let matrix = std::fs::read_to_string(em.join("embeddings.txt")).unwrap();
    let rows: Vec<&str> = matrix.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().all(|r| r.split(' ').count() == 16));
    let labels = std::fs::read_to_string(em.join("labels.tsv")).unwrap();
    assert_eq!(
        labels.lines().nth(1),
        Some("row\tlabel\tcorpus_index\ttext")
    );
}

#[test]
fn ablate_writes_scheme_table() {
    let extra = r#"
[ablate]
source = "source"
validation = "val"
targets = [{ unlabeled = "target_unlabeled", test = "target" }]

[ablate.config]
schemes = ["bert_then_mlm_target", "intent_bert_mlm_target"]
mlm = { epochs = 1, learning_rate = 1e-3 }
joint = { epochs = 1, learning_rate = 1e-3 }
eval = { spec = { ways = 3, shots = 1, queries = 2, n_episodes = 10 } }
"#;
    let (dir, cfg) = workspace(extra);
    let run = run_dir(&intentkit(&args("ablate", &cfg, &dir.path().join("runs"))));
    let t = std::fs::read_to_string(run.join("ablation.csv")).unwrap();
    assert!(t.contains("BERT→MLM(target)"));
    assert!(t.contains("IntentBERT+MLM(target)"));
    assert!(run.join("ablation_long.md").exists());
}

#[test]
fn set_flag_overrides_config_keys() {
    let (dir, cfg) = workspace("[overlap]\ndatasets = [\"source\"]\n");
    let out = dir.path().join("runs");
    let a = run_dir(&intentkit(&args("overlap", &cfg, &out)));
    let b = run_dir(&intentkit(
        &[
            args("overlap", &cfg, &out),
            vec!["--set", "overlap.stopwords=none"],
        ]
        .concat(),
    ));
    assert_ne!(a, b);
    let m: Value =
        serde_json::from_str(&std::fs::read_to_string(b.join("run_manifest.json")).unwrap())
            .unwrap();
    assert_eq!(m["config"]["overlap"]["stopwords"], "none");
}
