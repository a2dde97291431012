//! Tabular benchmark: every architecture of a space trained standalone,
//! served by canonical hash.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_128;

use crate::cell::{CanonicalHash, CellGraph, MacroConfig, OpLabel, SearchSpace};
use crate::data::{DataSplits, DatasetConfig};
use crate::error::{Error, Result};
use crate::network::{evaluate, update_running_stats, BnMode, NetworkPlan};
use crate::tensor::{cosine_lr, write_atomic, RmsProp, RmsPropConfig, BN_MOMENTUM};

/// How training time is charged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostModel {
    /// Forward multiply-accumulates x 3 (forward plus backward) x this constant.
    Analytic { seconds_per_mac: f64 },
    /// Wall-clock of one forward+backward pass, averaged over `repeats` runs.
    Measured { repeats: usize },
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel::Analytic { seconds_per_mac: 1e-9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StandaloneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub optimizer: RmsPropConfig,
    pub bn_momentum: f64,
    pub eval_batch_size: usize,
    pub cost: CostModel,
}

impl Default for StandaloneConfig {
    fn default() -> Self {
        StandaloneConfig {
            epochs: 32,
            batch_size: 256,
            lr0: 0.2,
            optimizer: RmsPropConfig::default(),
            bn_momentum: BN_MOMENTUM,
            eval_batch_size: 256,
            cost: CostModel::default(),
        }
    }
}

/// Outcome of one standalone training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepeatResult {
    pub val_acc: f64,
    pub test_acc: f64,
    pub train_time_s: f64,
    pub diverged: bool,
}

/// Seconds charged for a single forward and backward pass of one batch.
pub fn pass_cost(plan: &NetworkPlan, data: &DataSplits, batch_size: usize, cost: CostModel) -> Result<f64> {
    match cost {
        CostModel::Analytic { seconds_per_mac } => {
            let macs = plan.forward_macs(data.config.image_size) as f64 * batch_size as f64;
            Ok(3.0 * macs * seconds_per_mac)
        }
        CostModel::Measured { repeats } => {
            let store = plan.standalone_store(0)?;
            let idx: Vec<usize> = (0..batch_size.min(data.train.len())).collect();
            let (x, labels) = data.train.batch(&idx);
            let mut total = 0.0;
            for _ in 0..repeats.max(1) {
                let start = Instant::now();
                let f = plan.forward(&store, x.clone(), BnMode::Batch)?;
                let _ = f.loss_and_grads(&store, &labels)?;
                total += start.elapsed().as_secs_f64();
            }
            Ok((total / repeats.max(1) as f64).max(f64::MIN_POSITIVE))
        }
    }
}

/// Optimizer steps of one standalone training.
pub fn passes_per_training(data: &DataSplits, cfg: &StandaloneConfig) -> usize {
    cfg.epochs * data.train.batches_per_epoch(cfg.batch_size)
}

/// Trains the network of `g` from a fresh initialization.
pub fn standalone_train(g: &CellGraph, data: &DataSplits, net: &MacroConfig, cfg: &StandaloneConfig, seed: u64) -> Result<RepeatResult> {
    let plan = NetworkPlan::new(g, *net, false)?;
    let steps = passes_per_training(data, cfg);
    if steps == 0 {
        return Err(Error::Config("standalone training has no steps".into()));
    }
    let train_time_s = pass_cost(&plan, data, cfg.batch_size, cfg.cost)? * steps as f64;
    let chance = 1.0 / net.num_classes as f64;
    let diverged = RepeatResult { val_acc: chance, test_acc: chance, train_time_s, diverged: true };
    let mut store = plan.standalone_store(seed)?;
    let opt = RmsProp::new(cfg.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_ba7c4e5);
    let mut t = 0;
    for _ in 0..cfg.epochs {
        for idx in data.train.shuffled_batches(cfg.batch_size, &mut rng) {
            let lr = cosine_lr(t, steps, cfg.lr0)?;
            let (x, labels) = data.train.batch(&idx);
            let f = plan.forward(&store, x, BnMode::Batch)?;
            let stats = f.batch_stats.clone();
            let grads = match f.loss_and_grads(&store, &labels) {
                Ok((_, g)) => g,
                Err(Error::Numerical(_)) => return Ok(diverged),
                Err(e) => return Err(e),
            };
            match grads.apply(&mut store, &opt, lr) {
                Ok(()) => {}
                Err(Error::Numerical(_)) => return Ok(diverged),
                Err(e) => return Err(e),
            }
            update_running_stats(&mut store, &stats, cfg.bn_momentum);
            t += 1;
        }
    }
    if store.params().values().any(|p| !p.value.is_finite()) {
        return Ok(diverged);
    }
    let val_acc = evaluate(&plan, &store, &data.valid, cfg.eval_batch_size, BnMode::Running)?;
    let test_acc = evaluate(&plan, &store, &data.test, cfg.eval_batch_size, BnMode::Running)?;
    Ok(RepeatResult { val_acc, test_acc, train_time_s, diverged: false })
}

/// Aggregated standalone metrics of one architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub hash: CanonicalHash,
    pub ops: String,
    pub adj: String,
    pub val_acc_mean: f64,
    pub val_acc_std: f64,
    pub test_acc_mean: f64,
    pub test_acc_std: f64,
    pub train_time_s: f64,
    pub repeats: usize,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub diverged: bool,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl MetricsRecord {
    pub fn from_repeats(g: &CellGraph, runs: &[RepeatResult]) -> Result<MetricsRecord> {
        if runs.is_empty() {
            return Err(Error::InsufficientData("no training repeats".into()));
        }
        let canon = g.canonical_form();
        let vals: Vec<f64> = runs.iter().map(|r| r.val_acc).collect();
        let tests: Vec<f64> = runs.iter().map(|r| r.test_acc).collect();
        let times: Vec<f64> = runs.iter().map(|r| r.train_time_s).collect();
        let (val_acc_mean, val_acc_std) = mean_std(&vals);
        let (test_acc_mean, test_acc_std) = mean_std(&tests);
        Ok(MetricsRecord {
            hash: canon.canonical_hash(),
            ops: canon.ops_string(),
            adj: canon.adjacency_bits(),
            val_acc_mean,
            val_acc_std,
            test_acc_mean,
            test_acc_std,
            train_time_s: mean_std(&times).0,
            repeats: runs.len(),
            diverged: runs.iter().any(|r| r.diverged),
        })
    }

    pub fn graph(&self) -> Result<CellGraph> {
        let ops = if self.ops.is_empty() {
            Vec::new()
        } else {
            self.ops.split(',').map(str::parse::<OpLabel>).collect::<Result<Vec<_>>>()?
        };
        CellGraph::from_bits(ops, &self.adj)
    }

    fn check(&self) -> std::result::Result<(), String> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.val_acc_mean) || !unit(self.test_acc_mean) {
            return Err("accuracies must lie in [0, 1]".into());
        }
        if !(self.train_time_s > 0.0) || !self.train_time_s.is_finite() {
            return Err("train_time_s must be positive".into());
        }
        if self.repeats == 0 {
            return Err("repeats must be at least 1".into());
        }
        if self.val_acc_std < 0.0 || self.test_acc_std < 0.0 {
            return Err("standard deviations must be non-negative".into());
        }
        let g = self.graph().map_err(|e| e.to_string())?;
        if g.canonical_hash() != self.hash {
            return Err(format!("hash {} does not match the encoded cell ({})", self.hash, g.canonical_hash()));
        }
        Ok(())
    }
}

/// First line of a table file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableHeader {
    pub format: String,
    pub fingerprint: String,
    /// Optimizer steps of one standalone training; `train_time_s` divided by
    /// this is the per-pass cost.
    pub passes_per_training: usize,
}

const TABLE_FORMAT: &str = "wsnas-bench-v1";

/// Canonical hash to standalone metrics, with the best mean accuracies.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchTable {
    fingerprint: String,
    passes_per_training: usize,
    records: Vec<MetricsRecord>,
    index: HashMap<CanonicalHash, usize>,
    best_val: f64,
    best_test: f64,
}

impl BenchTable {
    pub fn new(fingerprint: impl Into<String>, passes_per_training: usize) -> Self {
        BenchTable {
            fingerprint: fingerprint.into(),
            passes_per_training,
            records: Vec::new(),
            index: HashMap::new(),
            best_val: f64::NEG_INFINITY,
            best_test: f64::NEG_INFINITY,
        }
    }

    /// Adds or replaces the record for its hash.
    pub fn insert(&mut self, r: MetricsRecord) {
        self.best_val = self.best_val.max(r.val_acc_mean);
        self.best_test = self.best_test.max(r.test_acc_mean);
        match self.index.get(&r.hash) {
            Some(&i) => {
                self.records[i] = r;
                self.recompute_best();
            }
            None => {
                self.index.insert(r.hash, self.records.len());
                self.records.push(r);
            }
        }
    }

    fn recompute_best(&mut self) {
        self.best_val = self.records.iter().map(|r| r.val_acc_mean).fold(f64::NEG_INFINITY, f64::max);
        self.best_test = self.records.iter().map(|r| r.test_acc_mean).fold(f64::NEG_INFINITY, f64::max);
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn passes_per_training(&self) -> usize {
        self.passes_per_training
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[MetricsRecord] {
        &self.records
    }

    pub fn best_val(&self) -> f64 {
        self.best_val
    }

    pub fn best_test(&self) -> f64 {
        self.best_test
    }

    pub fn get(&self, hash: &CanonicalHash) -> Option<&MetricsRecord> {
        self.index.get(hash).map(|&i| &self.records[i])
    }

    pub fn contains(&self, hash: &CanonicalHash) -> bool {
        self.index.contains_key(hash)
    }

    /// Constant-time lookup by canonical hash.
    pub fn query(&self, g: &CellGraph) -> Result<&MetricsRecord> {
        self.query_hash(&g.canonical_hash())
    }

    pub fn query_hash(&self, hash: &CanonicalHash) -> Result<&MetricsRecord> {
        self.get(hash).ok_or_else(|| Error::UnknownArchitecture(hash.to_string()))
    }

    /// Record with the highest mean validation accuracy (first on ties).
    pub fn best_val_record(&self) -> Option<&MetricsRecord> {
        self.records.iter().reduce(|a, b| if b.val_acc_mean > a.val_acc_mean { b } else { a })
    }

    /// Errors unless `fingerprint` matches this table's.
    pub fn check_fingerprint(&self, fingerprint: &str) -> Result<()> {
        if self.fingerprint != fingerprint {
            return Err(Error::FingerprintMismatch { expected: fingerprint.to_string(), found: self.fingerprint.clone() });
        }
        Ok(())
    }

    fn header(&self) -> TableHeader {
        TableHeader {
            format: TABLE_FORMAT.into(),
            fingerprint: self.fingerprint.clone(),
            passes_per_training: self.passes_per_training,
        }
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = serde_json::to_string(&self.header())?;
        s.push('\n');
        for r in &self.records {
            s.push_str(&serde_json::to_string(r)?);
            s.push('\n');
        }
        Ok(s)
    }

    /// Writes the table atomically.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl()?.as_bytes())
    }

    /// Parses a header line followed by one record per line. Blank lines are
    /// skipped; a later record for the same hash replaces an earlier one.
    pub fn from_reader(reader: impl BufRead) -> Result<BenchTable> {
        let mut table: Option<BenchTable> = None;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            match &mut table {
                None => {
                    let h: TableHeader = serde_json::from_str(&line)
                        .map_err(|e| Error::Schema { line: no, message: format!("bad header: {e}") })?;
                    if h.format != TABLE_FORMAT {
                        return Err(Error::Schema { line: no, message: format!("unknown format {}", h.format) });
                    }
                    table = Some(BenchTable::new(h.fingerprint, h.passes_per_training));
                }
                Some(t) => {
                    let r: MetricsRecord =
                        serde_json::from_str(&line).map_err(|e| Error::Schema { line: no, message: e.to_string() })?;
                    r.check().map_err(|message| Error::Schema { line: no, message })?;
                    t.insert(r);
                }
            }
        }
        table.ok_or(Error::Schema { line: 1, message: "missing header line".into() })
    }

    pub fn load(path: &Path) -> Result<BenchTable> {
        BenchTable::from_reader(BufReader::new(fs::File::open(path)?))
    }

    /// Loads an externally produced table and checks it against `fingerprint`
    /// when one is given.
    pub fn import(path: &Path, fingerprint: Option<&str>) -> Result<BenchTable> {
        let t = BenchTable::load(path)?;
        if let Some(f) = fingerprint {
            t.check_fingerprint(f)?;
        }
        Ok(t)
    }
}

/// Everything that determines a table's contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub space: String,
    pub dataset: DatasetConfig,
    pub net: MacroConfig,
    pub standalone: StandaloneConfig,
    pub repeats: usize,
    pub seed: u64,
}

impl BuildConfig {
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("plain data serializes");
        format!("{:032x}", xxh3_128(json.as_bytes()))
    }
}

/// Trains `repeats` seeds of `g` and aggregates them.
pub fn train_record(g: &CellGraph, data: &DataSplits, cfg: &BuildConfig) -> Result<MetricsRecord> {
    let runs = (0..cfg.repeats)
        .map(|r| standalone_train(g, data, &cfg.net, &cfg.standalone, cfg.seed.wrapping_add(r as u64)))
        .collect::<Result<Vec<_>>>()?;
    MetricsRecord::from_repeats(g, &runs)
}

/// Builds the table for every member of `space`. With `progress`, records
/// already in that file are reused and new ones appended as they finish, so
/// an interrupted build resumes where it stopped. Work is spread over
/// `threads` workers; the result is independent of the thread count.
pub fn build_table(
    space: &SearchSpace,
    data: &DataSplits,
    cfg: &BuildConfig,
    progress: Option<&Path>,
    threads: usize,
) -> Result<BenchTable> {
    if cfg.repeats == 0 {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    let fingerprint = cfg.fingerprint();
    let passes = passes_per_training(data, &cfg.standalone);
    let mut done: HashMap<CanonicalHash, MetricsRecord> = HashMap::new();
    if let Some(path) = progress {
        if path.exists() {
            let prior = BenchTable::load(path)?;
            prior.check_fingerprint(&fingerprint)?;
            done.extend(prior.records.into_iter().map(|r| (r.hash, r)));
        } else {
            let header = serde_json::to_string(&TableHeader {
                format: TABLE_FORMAT.into(),
                fingerprint: fingerprint.clone(),
                passes_per_training: passes,
            })?;
            write_atomic(path, format!("{header}\n").as_bytes())?;
        }
    }
    let todo: Vec<usize> = (0..space.len()).filter(|&i| !done.contains_key(&space.hashes()[i])).collect();
    let sink = match progress {
        Some(p) => Some(Mutex::new(OpenOptions::new().append(true).open(p)?)),
        None => None,
    };
    let results: Mutex<Vec<(usize, Result<MetricsRecord>)>> = Mutex::new(Vec::new());
    let next = Mutex::new(0usize);
    std::thread::scope(|s| {
        for _ in 0..threads.max(1) {
            s.spawn(|| loop {
                let j = {
                    let mut n = next.lock().expect("poisoned");
                    let j = *n;
                    *n += 1;
                    j
                };
                let Some(&i) = todo.get(j) else { break };
                let r = train_record(&space.members()[i], data, cfg);
                if let (Ok(rec), Some(sink)) = (&r, &sink) {
                    let line = serde_json::to_string(rec).expect("record serializes");
                    let mut f = sink.lock().expect("poisoned");
                    let _ = writeln!(f, "{line}").and_then(|_| f.flush());
                }
                let failed = r.is_err();
                results.lock().expect("poisoned").push((i, r));
                if failed {
                    break;
                }
            });
        }
    });
    for (i, r) in results.into_inner().expect("poisoned") {
        done.insert(space.hashes()[i], r?);
    }
    let mut table = BenchTable::new(fingerprint, passes);
    for h in space.hashes() {
        let r = done.remove(h).ok_or_else(|| Error::UnknownArchitecture(h.to_string()))?;
        table.insert(r);
    }
    if let Some(path) = progress {
        table.save(path)?;
    }
    Ok(table)
}

/// Forward+backward cost of one pass for every member, in table order.
pub fn per_pass_costs(table: &BenchTable) -> Vec<f64> {
    let p = table.passes_per_training().max(1) as f64;
    table.records().iter().map(|r| r.train_time_s / p).collect()
}
