//! Experiment configs, batch training across maps × reward machines × seeds,
//! and percentile aggregation of the resulting run logs.
//!
//! Config files use the same line style as `.dom` files:
//!
//! ```text
//! experiment bridge-desk
//! domain: ../domains/bridge.dom
//! task: bridge
//! maps: ../maps/bridge-15-0.map ../maps/bridge-15-1.map
//! rms: mprm pop:* seq:*
//! mode: qrm
//! seeds: 0 1 2 3 4
//! steps: 500000
//! alpha: 0.95
//! ```
//!
//! Relative paths are resolved against the config file's directory.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::craftworld::{parse_map, CraftWorld, MapParseError};
use crate::domain_io::{parse_domain, DomainParseError};
use crate::planning::PlanningTask;
use crate::pop::{enumerate_pops, PlanError, PlanSet};
use crate::reward_machine::{build_mprm, build_single_plan_rm, PlanRef, RewardMachine, RmError};
use crate::trainer::{train_setup, Hyperparams, RunLog, RunLogError, TrainError, TrainMode, TrainingSetup};

pub const WORKERS_ENV: &str = "POPMACHINE_WORKERS";
pub const AGGREGATE_CSV_HEADER: &str = "train_step,family,p25,p50,p75";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Config {
        path: PathBuf,
        #[source]
        source: ConfigParseError,
    },
    #[error("{path}: {source}")]
    Domain {
        path: PathBuf,
        #[source]
        source: DomainParseError,
    },
    #[error("{path}: {source}")]
    Map {
        path: PathBuf,
        #[source]
        source: MapParseError,
    },
    #[error("{path}: {source}")]
    RunLog {
        path: PathBuf,
        #[source]
        source: RunLogError,
    },
    #[error("no task `{0}` in the domain file")]
    UnknownTask(String),
    #[error("reward machine `{kind}` does not exist: the task has {available} such plans")]
    NoSuchPlan { kind: RmKind, available: usize },
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Rm(#[from] RmError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("{} run(s) failed: {}", .0.len(), .0.join("; "))]
    RunsFailed(Vec<String>),
    #[error("nothing to aggregate")]
    Empty,
    #[error("runs disagree on evaluation steps: {0}")]
    MismatchedGrid(String),
    #[error("could not start worker pool: {0}")]
    Pool(String),
}

/// Which reward machine to train with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RmKind {
    Mprm,
    /// The i-th plan of the canonical plan set.
    Pop(usize),
    /// The i-th sequential plan, in plan-set order.
    Seq(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Family {
    Mprm,
    Pop,
    Seq,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Mprm, Family::Pop, Family::Seq];

    /// The curve label, e.g. "QRM-MPRM" or "Aggregated-QRM-POP".
    pub fn label(self, mode: TrainMode) -> String {
        let m = match mode {
            TrainMode::Crm => "QRM",
            TrainMode::ProductQ => "ProductQ",
        };
        match self {
            Family::Mprm => format!("{m}-MPRM"),
            Family::Pop => format!("Aggregated-{m}-POP"),
            Family::Seq => format!("Aggregated-{m}-Seq"),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Family::Mprm => "mprm",
            Family::Pop => "pop",
            Family::Seq => "seq",
        }
    }
}

impl RmKind {
    pub fn parse(s: &str) -> Option<RmKind> {
        if s == "mprm" {
            return Some(RmKind::Mprm);
        }
        let (kind, idx) = s.split_once(':').or_else(|| s.split_once('-'))?;
        let idx = idx.parse().ok()?;
        match kind {
            "pop" => Some(RmKind::Pop(idx)),
            "seq" => Some(RmKind::Seq(idx)),
            _ => None,
        }
    }

    pub fn family(self) -> Family {
        match self {
            RmKind::Mprm => Family::Mprm,
            RmKind::Pop(_) => Family::Pop,
            RmKind::Seq(_) => Family::Seq,
        }
    }

    /// Form used in file names: `mprm`, `pop-0`, `seq-3`.
    pub fn file_tag(self) -> String {
        match self {
            RmKind::Mprm => "mprm".into(),
            RmKind::Pop(i) => format!("pop-{i}"),
            RmKind::Seq(i) => format!("seq-{i}"),
        }
    }
}

impl fmt::Display for RmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RmKind::Mprm => write!(f, "mprm"),
            RmKind::Pop(i) => write!(f, "pop:{i}"),
            RmKind::Seq(i) => write!(f, "seq:{i}"),
        }
    }
}

pub fn build_rm(task: &PlanningTask, plans: &PlanSet, kind: RmKind) -> Result<RewardMachine, ExperimentError> {
    match kind {
        RmKind::Mprm => Ok(build_mprm(plans, task)),
        RmKind::Pop(i) => {
            let p = plans.plans().get(i).ok_or(ExperimentError::NoSuchPlan { kind, available: plans.len() })?;
            Ok(build_single_plan_rm(PlanRef::PartialOrder(p), task)?)
        }
        RmKind::Seq(i) => {
            let seqs = plans.sequential_plans();
            let s = seqs.get(i).ok_or(ExperimentError::NoSuchPlan { kind, available: seqs.len() })?;
            Ok(build_single_plan_rm(PlanRef::Sequential(s), task)?)
        }
    }
}

/// Every reward machine kind for a plan set: the MPRM, each POP, each sequential plan.
pub fn all_kinds(plans: &PlanSet) -> Vec<RmKind> {
    let mut out = vec![RmKind::Mprm];
    out.extend((0..plans.len()).map(RmKind::Pop));
    out.extend((0..plans.sequential_plans().len()).map(RmKind::Seq));
    out
}

/// An `rms:` entry; the wildcards expand once plans are known.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RmSelector {
    Kind(RmKind),
    AllPop,
    AllSeq,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ConfigParseError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub domain: PathBuf,
    pub task: String,
    pub maps: Vec<PathBuf>,
    pub rms: Vec<RmSelector>,
    pub mode: TrainMode,
    pub seeds: Vec<u64>,
    /// Seed is taken from `seeds` per run.
    pub hyperparams: Hyperparams,
    pub max_action_repeats: usize,
    pub out: Option<PathBuf>,
}

pub fn parse_experiment_config(text: &str) -> Result<ExperimentConfig, ConfigParseError> {
    let err = |line: usize, message: String| ConfigParseError { line, message };
    let mut name = None;
    let mut fields: BTreeMap<&str, (usize, Vec<&str>)> = BTreeMap::new();
    const KEYS: [&str; 14] = [
        "domain", "task", "maps", "rms", "mode", "seeds", "steps", "alpha", "gamma", "epsilon",
        "episode-cap", "eval-every", "max-repeats", "out",
    ];
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if name.is_none() {
            let rest = line
                .strip_prefix("experiment")
                .filter(|r| r.starts_with(char::is_whitespace))
                .ok_or_else(|| err(n, "expected `experiment <name>` first".into()))?;
            let words: Vec<&str> = rest.split_whitespace().collect();
            if words.len() != 1 {
                return Err(err(n, "`experiment` takes exactly one name".into()));
            }
            name = Some(words[0].to_string());
            continue;
        }
        let (key, value) = line.split_once(':').ok_or_else(|| err(n, format!("expected `key: value`, found `{line}`")))?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(err(n, format!("unknown key `{key}`")));
        }
        if fields.insert(key, (n, value.split_whitespace().collect())).is_some() {
            return Err(err(n, format!("duplicate key `{key}`")));
        }
    }
    let name = name.ok_or_else(|| err(1, "empty config".into()))?;
    let last = text.lines().count().max(1);

    let required = |key: &str| -> Result<(usize, Vec<&str>), ConfigParseError> {
        match fields.get(key) {
            Some((n, v)) if v.is_empty() => Err(err(*n, format!("`{key}` needs a value"))),
            Some((n, v)) => Ok((*n, v.clone())),
            None => Err(err(last, format!("missing `{key}`"))),
        }
    };
    let single = |key: &str| -> Result<Option<(usize, &str)>, ConfigParseError> {
        match fields.get(key) {
            None => Ok(None),
            Some((n, v)) if v.len() == 1 => Ok(Some((*n, v[0]))),
            Some((n, _)) => Err(err(*n, format!("`{key}` takes exactly one value"))),
        }
    };
    fn num<T: std::str::FromStr>(n: usize, key: &str, v: &str) -> Result<T, ConfigParseError> {
        v.parse().map_err(|_| ConfigParseError { line: n, message: format!("bad value `{v}` for `{key}`") })
    }

    let domain = single("domain")?.ok_or_else(|| err(last, "missing `domain`".into()))?.1.into();
    let task = single("task")?.ok_or_else(|| err(last, "missing `task`".into()))?.1.to_string();
    let maps = required("maps")?.1.into_iter().map(PathBuf::from).collect();
    let (rn, rms) = required("rms")?;
    let rms = rms
        .into_iter()
        .map(|r| match r {
            "pop:*" => Ok(RmSelector::AllPop),
            "seq:*" => Ok(RmSelector::AllSeq),
            _ => RmKind::parse(r).map(RmSelector::Kind).ok_or_else(|| err(rn, format!("bad reward machine `{r}`"))),
        })
        .collect::<Result<_, _>>()?;
    let (sn, seeds) = required("seeds")?;
    let seeds = seeds.into_iter().map(|s| num(sn, "seeds", s)).collect::<Result<_, _>>()?;

    let mut hp = Hyperparams::default();
    let (n, v) = single("steps")?.ok_or_else(|| err(last, "missing `steps`".into()))?;
    hp.total_steps = num(n, "steps", v)?;
    if let Some((n, v)) = single("alpha")? {
        hp.alpha = num(n, "alpha", v)?;
    }
    if let Some((n, v)) = single("gamma")? {
        hp.gamma = num(n, "gamma", v)?;
    }
    if let Some((n, v)) = single("epsilon")? {
        hp.epsilon = num(n, "epsilon", v)?;
    }
    if let Some((n, v)) = single("episode-cap")? {
        hp.episode_cap = num(n, "episode-cap", v)?;
    }
    if let Some((n, v)) = single("eval-every")? {
        hp.eval_every = num(n, "eval-every", v)?;
    }
    hp.validate().map_err(|e| err(last, e.to_string()))?;
    let mode = match single("mode")? {
        None => TrainMode::Crm,
        Some((n, v)) => TrainMode::parse(v).ok_or_else(|| err(n, format!("bad mode `{v}`")))?,
    };
    let max_action_repeats = match single("max-repeats")? {
        None => 1,
        Some((n, v)) => num(n, "max-repeats", v)?,
    };
    let out = single("out")?.map(|(_, v)| PathBuf::from(v));
    Ok(ExperimentConfig { name, domain, task, maps, rms, mode, seeds, hyperparams: hp, max_action_repeats, out })
}

impl ExperimentConfig {
    /// Reads a config file and resolves its paths against the file's directory.
    pub fn load(path: &Path) -> Result<ExperimentConfig, ExperimentError> {
        let text = read(path)?;
        let mut cfg = parse_experiment_config(&text)
            .map_err(|source| ExperimentError::Config { path: path.to_path_buf(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.domain = base.join(&cfg.domain);
        cfg.maps = cfg.maps.iter().map(|m| base.join(m)).collect();
        cfg.out = cfg.out.map(|o| base.join(o));
        Ok(cfg)
    }

    pub fn load_task(&self) -> Result<PlanningTask, ExperimentError> {
        let text = read(&self.domain)?;
        let file = parse_domain(&text)
            .map_err(|source| ExperimentError::Domain { path: self.domain.clone(), source })?;
        file.task(&self.task).cloned().ok_or_else(|| ExperimentError::UnknownTask(self.task.clone()))
    }

    pub fn expand_kinds(&self, plans: &PlanSet) -> Vec<RmKind> {
        let mut out = Vec::new();
        for sel in &self.rms {
            let add: Vec<RmKind> = match *sel {
                RmSelector::Kind(k) => vec![k],
                RmSelector::AllPop => (0..plans.len()).map(RmKind::Pop).collect(),
                RmSelector::AllSeq => (0..plans.sequential_plans().len()).map(RmKind::Seq).collect(),
            };
            for k in add {
                if !out.contains(&k) {
                    out.push(k);
                }
            }
        }
        out
    }
}

fn read(path: &Path) -> Result<String, ExperimentError> {
    fs::read_to_string(path).map_err(|source| ExperimentError::Io { path: path.to_path_buf(), source })
}

fn write(path: &Path, text: &str) -> Result<(), ExperimentError> {
    fs::write(path, text).map_err(|source| ExperimentError::Io { path: path.to_path_buf(), source })
}

/// Identifies one run; also its file name.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RunId {
    pub map: String,
    pub kind: RmKind,
    pub mode: String,
    pub seed: u64,
}

impl RunId {
    pub fn file_name(&self) -> String {
        format!("{}.{}.{}.seed{}.csv", self.map, self.kind.file_tag(), self.mode, self.seed)
    }

    /// Inverse of [`RunId::file_name`].
    pub fn from_file_name(name: &str) -> Option<RunId> {
        let rest = name.strip_suffix(".csv")?;
        let mut parts = rest.rsplitn(4, '.');
        let seed = parts.next()?.strip_prefix("seed")?.parse().ok()?;
        let mode = parts.next()?;
        TrainMode::parse(mode)?;
        let kind = RmKind::parse(parts.next()?)?;
        let map = parts.next()?;
        if map.is_empty() {
            return None;
        }
        Some(RunId { map: map.into(), kind, mode: mode.into(), seed })
    }
}

/// Pool size: `POPMACHINE_WORKERS` if set, else available parallelism.
pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub runs: Vec<PathBuf>,
    pub aggregates: Vec<PathBuf>,
    pub rows: Vec<AggregateRow>,
}

/// Trains every (map, kind, seed) cell and writes `runs/<id>.csv` plus one
/// `aggregate-<family>.csv` per family present. Failed runs are reported
/// together after the others finish; their siblings' files are kept.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path, workers: usize) -> Result<ExperimentReport, ExperimentError> {
    let task = cfg.load_task()?;
    let plans = enumerate_pops(&task, cfg.max_action_repeats)?;
    let kinds = cfg.expand_kinds(&plans);
    let runs_dir = out_dir.join("runs");
    fs::create_dir_all(&runs_dir).map_err(|source| ExperimentError::Io { path: runs_dir.clone(), source })?;

    let mut setups = Vec::new();
    for map_path in &cfg.maps {
        let map = parse_map(&read(map_path)?)
            .map_err(|source| ExperimentError::Map { path: map_path.clone(), source })?;
        let world = CraftWorld::new(Arc::new(map), task.domain.clone());
        let stem = map_path.file_stem().and_then(|s| s.to_str()).unwrap_or("map").replace('.', "_");
        for &kind in &kinds {
            let rm = build_rm(&task, &plans, kind)?;
            setups.push((stem.clone(), kind, Arc::new(TrainingSetup::new(&world, &rm)?)));
        }
    }
    let mut jobs = Vec::new();
    for (stem, kind, setup) in &setups {
        for &seed in &cfg.seeds {
            let id = RunId { map: stem.clone(), kind: *kind, mode: cfg.mode.name().into(), seed };
            jobs.push((id, setup.clone()));
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| ExperimentError::Pool(e.to_string()))?;
    let results: Vec<Result<(RunId, RunLog), String>> = pool.install(|| {
        jobs.par_iter()
            .map(|(id, setup)| {
                let hp = Hyperparams { seed: id.seed, ..cfg.hyperparams.clone() };
                let (_, log) = train_setup(setup.clone(), &hp, cfg.mode).map_err(|e| format!("{}: {e}", id.file_name()))?;
                let path = runs_dir.join(id.file_name());
                write(&path, &log.to_csv()).map_err(|e| e.to_string())?;
                log::info!("finished {}", id.file_name());
                Ok((id.clone(), log))
            })
            .collect()
    });

    let mut failures = Vec::new();
    let mut done = Vec::new();
    for r in results {
        match r {
            Ok(x) => done.push(x),
            Err(e) => failures.push(e),
        }
    }
    if !failures.is_empty() {
        return Err(ExperimentError::RunsFailed(failures));
    }
    let runs = done.iter().map(|(id, _)| runs_dir.join(id.file_name())).collect();
    let (rows, aggregates) = write_family_aggregates(&done, cfg.mode, out_dir, StartReduce::Mean)?;
    Ok(ExperimentReport { runs, aggregates, rows })
}

fn write_family_aggregates(
    runs: &[(RunId, RunLog)],
    mode: TrainMode,
    out_dir: &Path,
    reduce: StartReduce,
) -> Result<(Vec<AggregateRow>, Vec<PathBuf>), ExperimentError> {
    let mut rows = Vec::new();
    let mut paths = Vec::new();
    for family in Family::ALL {
        let logs: Vec<&RunLog> = runs.iter().filter(|(id, _)| id.kind.family() == family).map(|(_, l)| l).collect();
        if logs.is_empty() {
            continue;
        }
        let fam_rows = aggregate(&logs, &family.label(mode), reduce)?;
        let path = out_dir.join(format!("aggregate-{}.csv", family.tag()));
        write(&path, &aggregate_csv(&fam_rows))?;
        paths.push(path);
        rows.extend(fam_rows);
    }
    Ok((rows, paths))
}

/// How the per-start returns of one evaluation are combined into one number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StartReduce {
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub train_step: u64,
    pub family: String,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
}

/// Linear interpolation between closest ranks; `values` must be sorted.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of nothing");
    let rank = p / 100.0 * (values.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    values[lo] + (values[hi] - values[lo]) * (rank - lo as f64)
}

/// Percentiles across runs at every evaluation step.
pub fn aggregate(runs: &[&RunLog], family: &str, reduce: StartReduce) -> Result<Vec<AggregateRow>, ExperimentError> {
    let first = runs.first().ok_or(ExperimentError::Empty)?;
    let steps: Vec<u64> = first.entries.iter().map(|(s, _)| *s).collect();
    for r in runs {
        let other: Vec<u64> = r.entries.iter().map(|(s, _)| *s).collect();
        if other != steps {
            return Err(ExperimentError::MismatchedGrid(format!("{steps:?} vs {other:?}")));
        }
    }
    let mut rows = Vec::with_capacity(steps.len());
    for (i, &step) in steps.iter().enumerate() {
        let mut vals: Vec<f64> = runs
            .iter()
            .map(|r| {
                let rets = &r.entries[i].1;
                let sum: f64 = rets.iter().sum();
                match reduce {
                    StartReduce::Sum => sum,
                    StartReduce::Mean => sum / rets.len().max(1) as f64,
                }
            })
            .collect();
        vals.sort_by(f64::total_cmp);
        rows.push(AggregateRow {
            train_step: step,
            family: family.to_string(),
            p25: percentile(&vals, 25.0),
            p50: percentile(&vals, 50.0),
            p75: percentile(&vals, 75.0),
        });
    }
    Ok(rows)
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = format!("{AGGREGATE_CSV_HEADER}\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{},{}\n", r.train_step, r.family, r.p25, r.p50, r.p75));
    }
    out
}

/// Reads every run CSV in `dir` (or `dir/runs` when present), grouped by
/// mode and family, and returns the combined aggregate rows.
pub fn aggregate_dir(dir: &Path, reduce: StartReduce) -> Result<Vec<AggregateRow>, ExperimentError> {
    let runs_dir = if dir.join("runs").is_dir() { dir.join("runs") } else { dir.to_path_buf() };
    let entries = fs::read_dir(&runs_dir).map_err(|source| ExperimentError::Io { path: runs_dir.clone(), source })?;
    let mut found: Vec<(RunId, PathBuf)> = Vec::new();
    for e in entries {
        let e = e.map_err(|source| ExperimentError::Io { path: runs_dir.clone(), source })?;
        let name = e.file_name();
        if let Some(id) = name.to_str().and_then(RunId::from_file_name) {
            found.push((id, e.path()));
        }
    }
    found.sort();
    let mut by_group: BTreeMap<(String, Family), Vec<RunLog>> = BTreeMap::new();
    for (id, path) in found {
        let file = fs::File::open(&path).map_err(|source| ExperimentError::Io { path: path.clone(), source })?;
        let log = RunLog::read_csv(std::io::BufReader::new(file))
            .map_err(|source| ExperimentError::RunLog { path: path.clone(), source })?;
        by_group.entry((id.mode.clone(), id.kind.family())).or_default().push(log);
    }
    if by_group.is_empty() {
        return Err(ExperimentError::Empty);
    }
    let mut rows = Vec::new();
    for ((mode, family), logs) in &by_group {
        let mode = TrainMode::parse(mode).expect("checked when parsing the file name");
        let refs: Vec<&RunLog> = logs.iter().collect();
        rows.extend(aggregate(&refs, &family.label(mode), reduce)?);
    }
    Ok(rows)
}

/// Median of the p50 curve over the last quarter of the training steps.
pub fn final_quarter_median(rows: &[AggregateRow]) -> Option<f64> {
    let last = rows.iter().map(|r| r.train_step).max()?;
    let mut vals: Vec<f64> = rows.iter().filter(|r| r.train_step * 4 > last * 3).map(|r| r.p50).collect();
    vals.sort_by(f64::total_cmp);
    Some(percentile(&vals, 50.0))
}
