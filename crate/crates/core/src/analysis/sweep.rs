//! Data-amount sweeps with a resumable per-cell record store.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::table::Table;
use super::EvalProtocol;
use crate::corpus::{sample_pool, subsample, Corpus};
use crate::encoder::EncoderState;
use crate::error::{Error, Result};
use crate::fewshot::{evaluate, EvalSummary};
use crate::math::mean_std;
use crate::pretrain::{
    joint_pretrain, supervised_pretrain, JointTrainConfig, SupervisedTrainConfig,
};
use crate::seeding::mix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Failed { message: String },
}

/// Outcome of one (configuration, repetition) job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub key: String,
    pub sweep: String,
    pub params: BTreeMap<String, usize>,
    pub rep: usize,
    /// Drives subsampling and training; rerunning with it reproduces the cell.
    pub seed: u64,
    /// Hash of everything shared by all cells of the sweep.
    pub context: String,
    #[serde(flatten)]
    pub status: CellStatus,
    /// Summary per evaluation corpus name.
    pub results: BTreeMap<String, EvalSummary>,
}

impl CellRecord {
    pub fn is_ok(&self) -> bool {
        self.status == CellStatus::Ok
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub sweep: String,
    /// Values of every axis, in declaration order.
    pub axes: Vec<(String, Vec<usize>)>,
    pub rep_seeds: Vec<u64>,
    pub context: String,
    /// One record per declared cell, axis-major then repetition.
    pub cells: Vec<CellRecord>,
    /// Cells run in this invocation (the rest came from the store).
    pub computed: usize,
}

impl SweepGrid {
    /// Records sharing `params`, one per repetition.
    pub fn cells_at(&self, params: &BTreeMap<String, usize>) -> impl Iterator<Item = &CellRecord> {
        let params = params.clone();
        self.cells.iter().filter(move |c| c.params == params)
    }

    /// Mean over successful repetitions of the mean episode accuracy.
    pub fn mean_accuracy(&self, params: &BTreeMap<String, usize>, target: &str) -> Option<f64> {
        let accs: Vec<f64> = self
            .cells_at(params)
            .filter_map(|c| c.results.get(target).map(|s| s.mean_accuracy))
            .collect();
        (!accs.is_empty()).then(|| mean_std(&accs).0)
    }

    /// One row per (configuration, target): accuracy mean and std across reps.
    pub fn summary_table(&self) -> Table {
        let mut header: Vec<String> = self.axes.iter().map(|(n, _)| n.clone()).collect();
        header.extend(
            [
                "target",
                "reps_ok",
                "reps_failed",
                "mean_accuracy",
                "std_over_reps",
                "cell",
            ]
            .map(String::from),
        );
        let mut t = Table::new(header);
        let mut seen: Vec<&BTreeMap<String, usize>> = Vec::new();
        for c in &self.cells {
            if !seen.contains(&&c.params) {
                seen.push(&c.params);
            }
        }
        let targets: Vec<&String> = {
            let mut v: Vec<&String> = self.cells.iter().flat_map(|c| c.results.keys()).collect();
            v.sort();
            v.dedup();
            v
        };
        for params in seen {
            let group: Vec<&CellRecord> = self.cells_at(params).collect();
            let failed = group.iter().filter(|c| !c.is_ok()).count();
            for target in &targets {
                let accs: Vec<f64> = group
                    .iter()
                    .filter_map(|c| c.results.get(*target).map(|s| s.mean_accuracy))
                    .collect();
                let mut row: Vec<String> = self
                    .axes
                    .iter()
                    .map(|(n, _)| params[n].to_string())
                    .collect();
                row.push((*target).clone());
                row.push(accs.len().to_string());
                row.push(failed.to_string());
                if accs.is_empty() {
                    row.extend(["", "", "failed"].map(String::from));
                } else {
                    let (m, s) = mean_std(&accs);
                    row.push(format!("{m:.6}"));
                    row.push(format!("{s:.6}"));
                    row.push(format!("{:.1} ± {:.1}", m * 100.0, s * 100.0));
                }
                t.push(row);
            }
            if targets.is_empty() {
                let mut row: Vec<String> = self
                    .axes
                    .iter()
                    .map(|(n, _)| params[n].to_string())
                    .collect();
                row.extend(["", "0", &failed.to_string(), "", "", "failed"].map(String::from));
                t.push(row);
            }
        }
        t
    }
}

/// Execution settings shared by all sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepOptions {
    pub reps: usize,
    pub seed: u64,
    /// Cells run concurrently; each still parallelizes internally.
    pub parallel_cells: usize,
    /// JSONL file with one record per finished cell. Existing records whose
    /// key matches a declared cell are reused instead of recomputed.
    pub store: Option<PathBuf>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            reps: 3,
            seed: 0,
            parallel_cells: 1,
            store: None,
        }
    }
}

impl SweepOptions {
    pub fn rep_seeds(&self) -> Vec<u64> {
        (0..self.reps as u64).map(|r| mix(self.seed, r)).collect()
    }
}

/// Reads every parsable record of a store file. `#` comment lines are
/// ignored; a torn final line from an interrupted run is skipped with a
/// warning.
pub fn read_store(path: &Path) -> Result<Vec<CellRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        match serde_json::from_str::<CellRecord>(&line) {
            Ok(r) => out.push(r),
            Err(e) => log::warn!(
                "{}:{}: skipping unreadable cell record: {e}",
                path.display(),
                n + 1
            ),
        }
    }
    Ok(out)
}

/// First 8 bytes of the SHA-256 of the value's JSON form, as hex.
pub fn context_hash<T: Serialize>(value: &T) -> String {
    use sha2::{Digest, Sha256};
    let json = serde_json::to_vec(value).expect("serializable context");
    let digest = Sha256::digest(&json);
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn cell_key(sweep: &str, params: &BTreeMap<String, usize>, seed: u64, context: &str) -> String {
    let p: Vec<String> = params.iter().map(|(k, v)| format!("{k}={v}")).collect();
    format!("{sweep}|{}|seed={seed}|ctx={context}", p.join(","))
}

type Job<'a> =
    dyn Fn(&BTreeMap<String, usize>, u64) -> Result<BTreeMap<String, EvalSummary>> + Sync + 'a;

pub(crate) fn run_grid(
    sweep: &str,
    axes: Vec<(String, Vec<usize>)>,
    context: String,
    opts: &SweepOptions,
    job: &Job<'_>,
) -> Result<SweepGrid> {
    if opts.reps == 0 {
        return Err(Error::Config("reps must be >= 1".into()));
    }
    let rep_seeds = opts.rep_seeds();
    let mut declared: Vec<(BTreeMap<String, usize>, usize)> = vec![(BTreeMap::new(), 0)];
    for (name, values) in &axes {
        declared = declared
            .into_iter()
            .flat_map(|(p, _)| {
                values.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.insert(name.clone(), v);
                    (q, 0)
                })
            })
            .collect();
    }
    let declared: Vec<(BTreeMap<String, usize>, usize)> = declared
        .into_iter()
        .flat_map(|(p, _)| (0..opts.reps).map(move |r| (p.clone(), r)))
        .collect();

    let mut existing: HashMap<String, CellRecord> = HashMap::new();
    if let Some(path) = &opts.store {
        for r in read_store(path)? {
            existing.insert(r.key.clone(), r);
        }
    }
    let mut slots: Vec<Option<CellRecord>> = Vec::with_capacity(declared.len());
    let mut pending = Vec::new();
    for (i, (params, rep)) in declared.iter().enumerate() {
        let key = cell_key(sweep, params, rep_seeds[*rep], &context);
        match existing.remove(&key) {
            Some(r) => slots.push(Some(r)),
            None => {
                slots.push(None);
                pending.push(i);
            }
        }
    }
    log::info!(
        "{sweep} sweep: {} cells declared, {} to compute",
        declared.len(),
        pending.len()
    );

    let writer = match &opts.store {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            let torn = std::fs::read(path)
                .map(|b| b.last().is_some_and(|&c| c != b'\n'))
                .unwrap_or(false);
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            if torn {
                writeln!(f).map_err(|e| Error::io(path, e))?;
            }
            Some((Mutex::new(f), path.clone()))
        }
        None => None,
    };
    let next = AtomicUsize::new(0);
    let finished: Mutex<Vec<(usize, CellRecord)>> = Mutex::new(Vec::new());
    let io_error: Mutex<Option<Error>> = Mutex::new(None);
    let workers = opts.parallel_cells.clamp(1, pending.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let n = next.fetch_add(1, Ordering::SeqCst);
                let Some(&i) = pending.get(n) else { break };
                let (params, rep) = &declared[i];
                let seed = rep_seeds[*rep];
                let (status, results) = match job(params, seed) {
                    Ok(r) => (CellStatus::Ok, r),
                    Err(e) => {
                        log::warn!("{sweep} cell {params:?} rep {rep} failed: {e}");
                        (
                            CellStatus::Failed {
                                message: e.to_string(),
                            },
                            BTreeMap::new(),
                        )
                    }
                };
                let record = CellRecord {
                    key: cell_key(sweep, params, seed, &context),
                    sweep: sweep.to_string(),
                    params: params.clone(),
                    rep: *rep,
                    seed,
                    context: context.clone(),
                    status,
                    results,
                };
                if let Some((file, path)) = &writer {
                    let line = serde_json::to_string(&record).expect("serializable record");
                    let mut f = file.lock().expect("store lock");
                    if let Err(e) = writeln!(f, "{line}").and_then(|_| f.flush()) {
                        io_error
                            .lock()
                            .expect("error lock")
                            .get_or_insert(Error::io(path, e));
                    }
                }
                finished.lock().expect("results lock").push((i, record));
            });
        }
    });
    if let Some(e) = io_error.into_inner().expect("error lock") {
        return Err(e);
    }
    let computed = pending.len();
    for (i, r) in finished.into_inner().expect("results lock") {
        slots[i] = Some(r);
    }
    Ok(SweepGrid {
        sweep: sweep.to_string(),
        axes,
        rep_seeds,
        context,
        cells: slots
            .into_iter()
            .map(|s| s.expect("every cell filled"))
            .collect(),
        computed,
    })
}

fn evaluate_all(
    state: &EncoderState,
    targets: &[&Corpus],
    eval: &EvalProtocol,
) -> Result<BTreeMap<String, EvalSummary>> {
    targets
        .iter()
        .map(|t| {
            Ok((
                t.name().to_string(),
                evaluate(state, t, &eval.spec, eval.classifier)?,
            ))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabeledSweep {
    pub domain_counts: Vec<usize>,
    pub per_class_counts: Vec<usize>,
}

impl Default for LabeledSweep {
    fn default() -> Self {
        LabeledSweep {
            domain_counts: vec![1, 2, 4, 8],
            per_class_counts: vec![20, 50, 100, 150],
        }
    }
}

/// For every (domain count, per-class cap, repetition): subsample the
/// source, pre-train from `base`, and evaluate on each target.
#[allow(clippy::too_many_arguments)]
pub fn labeled_data_sweep(
    base: &EncoderState,
    source: &Corpus,
    val: &Corpus,
    targets: &[&Corpus],
    axes: &LabeledSweep,
    train: &SupervisedTrainConfig,
    eval: &EvalProtocol,
    opts: &SweepOptions,
) -> Result<SweepGrid> {
    let target_names: Vec<&str> = targets.iter().map(|t| t.name()).collect();
    let context = context_hash(&(
        "labeled",
        base.fingerprint(),
        source.name(),
        source.len(),
        val.name(),
        &target_names,
        train,
        eval,
    ));
    let job = |params: &BTreeMap<String, usize>, seed: u64| {
        let sub = subsample(source, params["domains"], params["per_class"], seed)?;
        let cfg = SupervisedTrainConfig {
            seed,
            ..train.clone()
        };
        let (state, _) = supervised_pretrain(base.clone(), &sub, val, &cfg)?;
        evaluate_all(&state, targets, eval)
    };
    run_grid(
        "labeled",
        vec![
            ("domains".into(), axes.domain_counts.clone()),
            ("per_class".into(), axes.per_class_counts.clone()),
        ],
        context,
        opts,
        &job,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnlabeledSweep {
    pub pool_sizes: Vec<usize>,
    /// Adds a cell with the whole unlabeled corpus.
    pub include_full: bool,
}

impl Default for UnlabeledSweep {
    fn default() -> Self {
        UnlabeledSweep {
            pool_sizes: vec![10, 100, 1000],
            include_full: true,
        }
    }
}

/// For every (pool size, repetition): draw a uniform pool from the unlabeled
/// target, joint pre-train from `base`, evaluate on `target_test`.
#[allow(clippy::too_many_arguments)]
pub fn unlabeled_data_sweep(
    base: &EncoderState,
    source: &Corpus,
    target_unlabeled: &Corpus,
    target_test: &Corpus,
    axes: &UnlabeledSweep,
    train: &JointTrainConfig,
    eval: &EvalProtocol,
    opts: &SweepOptions,
) -> Result<SweepGrid> {
    let mut sizes = axes.pool_sizes.clone();
    if axes.include_full && !sizes.contains(&target_unlabeled.len()) {
        sizes.push(target_unlabeled.len());
    }
    let context = context_hash(&(
        "unlabeled",
        base.fingerprint(),
        source.name(),
        source.len(),
        target_unlabeled.name(),
        target_unlabeled.len(),
        target_test.name(),
        train,
        eval,
    ));
    let job = |params: &BTreeMap<String, usize>, seed: u64| {
        let pool = sample_pool(target_unlabeled, params["pool_size"], seed)?;
        let cfg = JointTrainConfig {
            seed,
            ..train.clone()
        };
        let (state, _) = joint_pretrain(base.clone(), source, &pool, &cfg)?;
        evaluate_all(&state, &[target_test], eval)
    };
    run_grid(
        "unlabeled",
        vec![("pool_size".into(), sizes)],
        context,
        opts,
        &job,
    )
}
