//! Resumable end-to-end experiment: benchmark table, super-nets, proxy
//! scores, correlation matrix, searches and reports under one directory.
//!
//! Layout under the output directory:
//!
//! ```text
//! manifest.json                         config and fingerprint
//! bench/table.jsonl                     standalone metrics of the base space
//! supernets/<space>/<variant>/seed<i>   checkpoint (.json + .bin) and .log.json
//! proxies/<space>/<variant>/seed<i>.jsonl
//! table1.{json,csv,md}                  correlation matrix
//! runs/<space>/{rs,re,ws}.jsonl
//! table2.{json,csv,md}                  effect reports per top-k budget
//! regret/<space>.{json,csv,svg}
//! scatter/<space>/<variant>/seed<i>_<scheme>.{json,csv,svg}
//! ```
//!
//! Every stage skips work whose output already exists, and every file is
//! written atomically, so an interrupted run resumes and a finished one
//! reruns to identical bytes.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bench::{build_table, BenchTable};
use crate::cell::{CanonicalHash, CellGraph, SearchSpace, SearchSpaceSpec};
use crate::config::ExperimentConfig;
use crate::data::DataSplits;
use crate::error::{Error, Result};
use crate::report::{
    emit_regret_plot, scatter_from_pairs, BudgetMarker, CorrelationCell, CorrelationTable, EffectTable, Predicate,
};
use crate::search::{
    load_runs, random_search, regret_at_time, regularized_evolution, save_runs, supernet_time_cost, topk_regret,
    ws_guided_search, ProxyCost, SearchRun, SuperNetScorer,
};
use crate::stats::{spearman_rho, two_sample_test, EffectRow};
use crate::supernet::{read_results, sampler_for, EvalScheme, ProxyResult, SuperNet, TrainLog, Variant, EVAL_BATCH};
use crate::tensor::write_atomic;

const MANIFEST_FORMAT: &str = "wsnas-experiment-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format: String,
    fingerprint: String,
    seed: u64,
    config: ExperimentConfig,
}

/// How a super-net run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    /// Training accuracy stayed at chance after the early check.
    Diverged,
    /// A step produced non-finite values; the last good weights were kept.
    Numerical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperNetRecord {
    pub fingerprint: String,
    pub space: String,
    pub variant: String,
    pub index: usize,
    pub init_seed: u64,
    pub train_seed: u64,
    pub status: RunStatus,
    pub message: Option<String>,
    pub log: Option<TrainLog>,
}

impl SuperNetRecord {
    pub fn usable(&self) -> bool {
        self.status == RunStatus::Converged
    }
}

/// A configured search space with its slice of the benchmark table.
pub struct SpaceView {
    pub name: String,
    pub space: SearchSpace,
    pub table: BenchTable,
}

pub struct Pipeline {
    cfg: ExperimentConfig,
    out: PathBuf,
    fingerprint: String,
    threads: usize,
    progress: Option<fn(&str)>,
    data: DataSplits,
    base: Option<SearchSpace>,
    table: Option<BenchTable>,
}

const RS_SEED_BASE: u64 = 1_000_000;
const RE_SEED_BASE: u64 = 2_000_000;
const WS_SEED_BASE: u64 = 3_000_000;
const SAMPLE_SEED: u64 = 0x5ca7_7e12;
const INIT_SEED_BASE: u64 = 100;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_text(path, &s)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    write_atomic(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Runs `f` over `items` on up to `threads` workers, keeping input order.
fn parallel_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    let slots: Vec<Mutex<Option<Result<R>>>> = items.iter().map(|_| Mutex::new(None)).collect();
    let next = Mutex::new(0usize);
    std::thread::scope(|s| {
        for _ in 0..threads.clamp(1, items.len().max(1)) {
            s.spawn(|| loop {
                let i = {
                    let mut n = next.lock().expect("poisoned");
                    let i = *n;
                    *n += 1;
                    i
                };
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                let failed = r.is_err();
                *slots[i].lock().expect("poisoned") = Some(r);
                if failed {
                    *next.lock().expect("poisoned") = items.len();
                }
            });
        }
    });
    let mut out = Vec::with_capacity(items.len());
    for slot in slots {
        match slot.into_inner().expect("poisoned") {
            Some(r) => out.push(r?),
            None => return Err(Error::InsufficientData("a parallel task did not run".into())),
        }
    }
    Ok(out)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

impl Pipeline {
    /// Opens (or creates) the output directory. An existing directory must
    /// have been produced by the same configuration.
    pub fn open(cfg: ExperimentConfig, out: &Path) -> Result<Pipeline> {
        cfg.validate()?;
        let fingerprint = cfg.fingerprint();
        let manifest_path = out.join("manifest.json");
        let mut stored = cfg.clone();
        stored.output_dir = None;
        stored.threads = None;
        let manifest = Manifest { format: MANIFEST_FORMAT.into(), fingerprint: fingerprint.clone(), seed: cfg.seed, config: stored };
        if manifest_path.exists() {
            let prior: Manifest = read_json(&manifest_path)?;
            if prior.fingerprint != fingerprint {
                return Err(Error::FingerprintMismatch { expected: fingerprint, found: prior.fingerprint });
            }
        } else {
            write_json(&manifest_path, &manifest)?;
        }
        let data = DataSplits::generate(&cfg.dataset)?;
        let threads = cfg.thread_count();
        Ok(Pipeline { cfg, out: out.to_path_buf(), fingerprint, threads, progress: None, data, base: None, table: None })
    }

    pub fn with_progress(mut self, f: fn(&str)) -> Self {
        self.progress = Some(f);
        self
    }

    fn note(&self, msg: &str) {
        if let Some(f) = self.progress {
            f(msg);
        }
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn output_dir(&self) -> &Path {
        &self.out
    }

    pub fn data(&self) -> &DataSplits {
        &self.data
    }

    pub fn table_path(&self) -> PathBuf {
        self.out.join("bench/table.jsonl")
    }

    fn supernet_base(&self, space: &str, variant: &str, i: usize) -> PathBuf {
        self.out.join(format!("supernets/{space}/{variant}/seed{i}"))
    }

    fn supernet_log_path(&self, space: &str, variant: &str, i: usize) -> PathBuf {
        self.out.join(format!("supernets/{space}/{variant}/seed{i}.log.json"))
    }

    fn proxy_path(&self, space: &str, variant: &str, i: usize) -> PathBuf {
        self.out.join(format!("proxies/{space}/{variant}/seed{i}.jsonl"))
    }

    fn runs_path(&self, space: &str, strategy: &str) -> PathBuf {
        self.out.join(format!("runs/{space}/{strategy}.jsonl"))
    }

    fn base_space(&mut self) -> Result<&SearchSpace> {
        if self.base.is_none() {
            let spec = self.cfg.base_spec()?;
            self.note(&format!("enumerating {}", spec.name()));
            self.base = Some(SearchSpace::build(&spec));
        }
        Ok(self.base.as_ref().expect("just built"))
    }

    /// Builds or resumes the standalone table over the base space.
    pub fn bench_table(&mut self) -> Result<&BenchTable> {
        if self.table.is_none() {
            let build = self.cfg.build_config()?;
            let threads = self.threads;
            let path = self.table_path();
            std::fs::create_dir_all(path.parent().expect("has parent"))?;
            let base = self.base_space()?.clone();
            self.note(&format!("benchmark table: {} architectures", base.len()));
            let table = build_table(&base, &self.data, &build, Some(&path), threads)?;
            self.table = Some(table);
        }
        Ok(self.table.as_ref().expect("just built"))
    }

    /// The configured space `name` with its own table slice, so best
    /// accuracies and regrets are relative to that space.
    pub fn space_view(&mut self, name: &str) -> Result<SpaceView> {
        let spec = SearchSpaceSpec::parse_name(name)?;
        self.bench_table()?;
        let base = self.base.as_ref().expect("built with the table");
        let table = self.table.as_ref().expect("built");
        let members: Vec<CellGraph> = base.members().iter().filter(|g| spec.contains(g)).cloned().collect();
        if members.is_empty() {
            return Err(Error::InsufficientData(format!("space {name} is empty")));
        }
        let space = SearchSpace::from_members(spec, members);
        let mut sub = BenchTable::new(table.fingerprint(), table.passes_per_training());
        for h in space.hashes() {
            sub.insert(table.query_hash(h)?.clone());
        }
        Ok(SpaceView { name: name.into(), space, table: sub })
    }

    fn seeds_for(&self, i: usize) -> (u64, u64) {
        let s = self.cfg.seed;
        (s.wrapping_add(INIT_SEED_BASE + i as u64), s.wrapping_add(i as u64))
    }

    /// Trains (or loads the record of) super-net `i` of `variant` on `view`.
    pub fn train_supernet(&self, view: &SpaceView, variant: &Variant, i: usize) -> Result<SuperNetRecord> {
        let vname = variant.name();
        let log_path = self.supernet_log_path(&view.name, &vname, i);
        if log_path.exists() {
            let rec: SuperNetRecord = read_json(&log_path)?;
            if rec.fingerprint != self.fingerprint {
                return Err(Error::FingerprintMismatch { expected: self.fingerprint.clone(), found: rec.fingerprint });
            }
            return Ok(rec);
        }
        self.note(&format!("super-net {}/{vname}/seed{i}", view.name));
        let (init_seed, train_seed) = self.seeds_for(i);
        let base = self.supernet_base(&view.name, &vname, i);
        std::fs::create_dir_all(base.parent().expect("has parent"))?;
        let mut sn = SuperNet::new(view.space.spec(), self.cfg.net, variant.single_kernel, init_seed)?;
        let sampler = sampler_for(&view.space, &self.cfg.net, variant)?;
        let mut train = self.cfg.supernet.train;
        train.variant = *variant;
        let (status, message, log) = match sn.train(&view.space, &self.data.train, &train, &sampler, train_seed, Some(&base)) {
            Ok(log) => {
                sn.save(&base, Some(&log))?;
                match &log.diverged {
                    Some(m) => (RunStatus::Diverged, Some(m.clone()), Some(log)),
                    None => (RunStatus::Converged, None, Some(log)),
                }
            }
            Err(Error::Numerical(m)) => (RunStatus::Numerical, Some(m), None),
            Err(e) => return Err(e),
        };
        let rec = SuperNetRecord {
            fingerprint: self.fingerprint.clone(),
            space: view.name.clone(),
            variant: vname,
            index: i,
            init_seed,
            train_seed,
            status,
            message,
            log,
        };
        write_json(&log_path, &rec)?;
        Ok(rec)
    }

    pub fn load_supernet(&self, space: &str, variant: &str, i: usize) -> Result<SuperNet> {
        Ok(SuperNet::load(&self.supernet_base(space, variant, i))?.0)
    }

    /// Architectures scored for correlations and scatter plots.
    pub fn correlation_sample(&self, view: &SpaceView) -> Result<Vec<usize>> {
        let n = self.cfg.supernet.correlation_sample.min(view.space.len());
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ SAMPLE_SEED);
        view.space.sample_indices(n, &mut rng)
    }

    /// Proxy accuracies of the correlation sample under every configured
    /// scheme, for super-net `i` of `variant`.
    pub fn proxies(&self, view: &SpaceView, variant: &Variant, i: usize) -> Result<Vec<ProxyResult>> {
        let vname = variant.name();
        let path = self.proxy_path(&view.name, &vname, i);
        if path.exists() {
            return read_results(&path);
        }
        self.note(&format!("proxy scores {}/{vname}/seed{i}", view.name));
        let sn = self.load_supernet(&view.name, &vname, i)?;
        let picks = self.correlation_sample(view)?;
        let (_, eval_seed) = self.seeds_for(i);
        let mut out = Vec::new();
        for scheme in self.cfg.schemes()? {
            let name = scheme.name();
            let scores = parallel_map(&picks, self.threads, |&k| {
                sn.proxy_eval(view.space.get(k), &self.data.valid, &self.data.train, scheme, self.cfg.supernet.calibration_batch, eval_seed)
            })?;
            for (&k, s) in picks.iter().zip(scores) {
                out.push(ProxyResult { hash: view.space.hashes()[k], scheme: name.clone(), proxy_acc: s, seed: eval_seed });
            }
        }
        let mut text = String::new();
        for r in &out {
            text.push_str(&serde_json::to_string(r)?);
            text.push('\n');
        }
        write_text(&path, &text)?;
        Ok(out)
    }

    /// Trains every super-net of `view` and scores its correlation sample.
    pub fn supernet_stage(&self, view: &SpaceView) -> Result<Vec<(SuperNetRecord, Option<Vec<ProxyResult>>)>> {
        let mut jobs = Vec::new();
        for v in self.cfg.variants()? {
            for i in 0..self.cfg.supernet.seeds {
                jobs.push((v, i));
            }
        }
        let records = parallel_map(&jobs, self.threads, |(v, i)| self.train_supernet(view, v, *i))?;
        let mut out = Vec::with_capacity(jobs.len());
        for ((v, i), rec) in jobs.iter().zip(records) {
            let proxies = if rec.usable() { Some(self.proxies(view, v, *i)?) } else { None };
            out.push((rec, proxies));
        }
        Ok(out)
    }

    fn scores_by_scheme(proxies: &[ProxyResult], scheme: &str) -> HashMap<CanonicalHash, f64> {
        proxies.iter().filter(|r| r.scheme == scheme).map(|r| (r.hash, r.proxy_acc)).collect()
    }

    /// Spearman correlation of proxy and true validation accuracy for every
    /// (space, variant, scheme) and super-net seed.
    pub fn correlation_table(&mut self) -> Result<CorrelationTable> {
        let mut cells = Vec::new();
        for name in self.cfg.spaces.clone() {
            let view = self.space_view(&name)?;
            let trained = self.supernet_stage(&view)?;
            let picks = self.correlation_sample(&view)?;
            let truth: Vec<f64> = picks.iter().map(|&k| view.table.query_hash(&view.space.hashes()[k]).map(|r| r.val_acc_mean)).collect::<Result<_>>()?;
            for v in self.cfg.variants()? {
                let vname = v.name();
                for scheme in &self.cfg.supernet.schemes {
                    let mut per_seed = Vec::new();
                    for (rec, proxies) in trained.iter().filter(|(r, _)| r.variant == vname) {
                        let rho = match proxies {
                            Some(p) if rec.usable() => {
                                let scores = Self::scores_by_scheme(p, scheme);
                                let proxy: Vec<f64> = picks
                                    .iter()
                                    .map(|&k| {
                                        let h = view.space.hashes()[k];
                                        scores.get(&h).copied().ok_or_else(|| Error::UnknownArchitecture(h.to_string()))
                                    })
                                    .collect::<Result<_>>()?;
                                spearman_rho(&proxy, &truth).ok()
                            }
                            _ => None,
                        };
                        per_seed.push(rho);
                    }
                    cells.push(CorrelationCell::new(&name, &vname, scheme, per_seed));
                }
            }
        }
        let t = CorrelationTable { fingerprint: self.fingerprint.clone(), seed: self.cfg.seed, spaces: self.cfg.spaces.clone(), cells };
        write_json(&self.out.join("table1.json"), &t)?;
        write_text(&self.out.join("table1.csv"), &t.to_csv())?;
        write_text(&self.out.join("table1.md"), &t.to_markdown())?;
        Ok(t)
    }

    fn cached_runs(&self, path: &Path, make: impl FnOnce() -> Result<Vec<SearchRun>>) -> Result<Vec<SearchRun>> {
        if path.exists() {
            return load_runs(path);
        }
        let runs = make()?;
        std::fs::create_dir_all(path.parent().expect("has parent"))?;
        save_runs(path, &runs)?;
        Ok(runs)
    }

    pub fn random_search_runs(&self, view: &SpaceView) -> Result<Vec<SearchRun>> {
        self.cached_runs(&self.runs_path(&view.name, "rs"), || {
            self.note(&format!("random search on {}", view.name));
            let n = self.cfg.search.rs_evaluations.min(view.space.len());
            let seeds: Vec<u64> = (0..self.cfg.search.rs_seeds as u64).map(|j| self.cfg.seed.wrapping_add(RS_SEED_BASE + j)).collect();
            parallel_map(&seeds, self.threads, |&s| random_search(&view.table, &view.space, n, s))
        })
    }

    pub fn evolution_runs(&self, view: &SpaceView) -> Result<Vec<SearchRun>> {
        self.cached_runs(&self.runs_path(&view.name, "re"), || {
            self.note(&format!("regularized evolution on {}", view.name));
            let seeds: Vec<u64> = (0..self.cfg.search.re_seeds as u64).map(|j| self.cfg.seed.wrapping_add(RE_SEED_BASE + j)).collect();
            parallel_map(&seeds, self.threads, |&s| regularized_evolution(&view.table, &view.space, &self.cfg.search.evolution, s))
        })
    }

    /// Seconds charged for training the super-net of `rec` on `view`.
    pub fn supernet_cost(&self, view: &SpaceView, rec: &SuperNetRecord) -> Result<f64> {
        let log = rec.log.as_ref().ok_or_else(|| Error::InsufficientData("super-net run without a log".into()))?;
        let batch_ratio = self.cfg.supernet.train.batch_size as f64 / self.cfg.standalone.batch_size as f64;
        supernet_time_cost(&view.space, &view.table, log.steps, log.samples_per_step, batch_ratio)
    }

    /// Per-architecture proxy evaluation charge of guided search.
    pub fn proxy_cost(&self) -> Result<ProxyCost> {
        let scheme = EvalScheme::parse(&self.cfg.search.ws_scheme)?;
        let valid_batches = self.data.valid.len().div_ceil(EVAL_BATCH);
        Ok(ProxyCost::new(scheme, valid_batches, EVAL_BATCH as f64 / self.cfg.standalone.batch_size as f64))
    }

    /// Guided runs; run `j` uses the `j`-th usable super-net of the
    /// configured variant, cycling through them.
    pub fn guided_runs(&self, view: &SpaceView) -> Result<Vec<SearchRun>> {
        let s = &self.cfg.search;
        let variant = Variant::parse(&s.ws_variant)?;
        let scheme = EvalScheme::parse(&s.ws_scheme)?;
        let mut usable = Vec::new();
        for i in 0..self.cfg.supernet.seeds {
            let rec = self.train_supernet(view, &variant, i)?;
            if rec.usable() {
                usable.push((i, rec));
            }
        }
        if usable.is_empty() {
            return Err(Error::InsufficientData(format!("no converged {} super-net on {}", s.ws_variant, view.name)));
        }
        self.cached_runs(&self.runs_path(&view.name, "ws"), || {
            self.note(&format!("guided search on {}", view.name));
            let n = s.ws_sample.min(view.space.len());
            let proxy_cost = self.proxy_cost()?;
            let mut loaded = Vec::new();
            for (i, rec) in &usable {
                let sn = self.load_supernet(&view.name, &variant.name(), *i)?;
                let cache = Self::scores_by_scheme(&self.proxies(view, &variant, *i)?, &scheme.name());
                let cost = self.supernet_cost(view, rec)?;
                loaded.push((sn, cache, cost, self.seeds_for(*i).1));
            }
            let jobs: Vec<u64> = (0..s.ws_seeds as u64).collect();
            parallel_map(&jobs, self.threads, |&j| {
                let (sn, cache, cost, eval_seed) = &loaded[j as usize % loaded.len()];
                let mut scorer = SuperNetScorer::new(sn, &self.data.valid, &self.data.train, scheme, self.cfg.supernet.calibration_batch, *eval_seed)
                    .with_cache(cache.clone());
                ws_guided_search(&mut scorer, &view.table, &view.space, n, *cost, proxy_cost, self.cfg.seed.wrapping_add(WS_SEED_BASE + j))
            })
        })
    }

    /// Top-k budgets of the guided runs: mean elapsed time after their
    /// k-th standalone evaluation.
    fn budgets(&self, view: &SpaceView, ws: &[SearchRun]) -> Result<Vec<(usize, Vec<f64>, f64)>> {
        let mut out = Vec::new();
        for &k in &self.cfg.search.topk {
            let mut regrets = Vec::with_capacity(ws.len());
            let mut times = Vec::with_capacity(ws.len());
            for run in ws {
                let (r, t) = topk_regret(run, k, &view.table)?;
                regrets.push(r);
                times.push(t);
            }
            out.push((k, regrets, mean(&times)));
        }
        Ok(out)
    }

    /// Effect reports comparing guided search and evolution against random
    /// search at each top-k budget; differences are `other - random`.
    pub fn effect_table(&mut self) -> Result<EffectTable> {
        let alpha = self.cfg.search.alpha;
        let mut rows = Vec::new();
        let mut budgets = Vec::new();
        for name in self.cfg.spaces.clone() {
            let view = self.space_view(&name)?;
            let rs = self.random_search_runs(&view)?;
            let re = self.evolution_runs(&view)?;
            let ws = self.guided_runs(&view)?;
            for (k, ws_regret, budget) in self.budgets(&view, &ws)? {
                budgets.push(BudgetMarker { label: format!("{name} top-{k}"), time_s: budget });
                let rs_regret: Vec<f64> = rs.iter().map(|r| regret_at_time(r, budget, &view.table)).collect();
                let re_regret: Vec<f64> = re.iter().map(|r| regret_at_time(r, budget, &view.table)).collect();
                for (label, other) in [("ws", &ws_regret), ("re", &re_regret)] {
                    let paradigm = format!("top-{k} {label}-rs");
                    match two_sample_test(other, &rs_regret) {
                        Ok(rep) => {
                            let mut row = EffectRow::new(&name, paradigm, &rep);
                            row.highlight = crate::stats::highlight(rep.cohens_d, rep.p_value, alpha).into();
                            rows.push(row);
                        }
                        Err(Error::Undefined(m)) => self.note(&format!("{name} {paradigm}: {m}")),
                        Err(e) => return Err(e),
                    }
                }
            }
        }
        let t = EffectTable { fingerprint: self.fingerprint.clone(), seed: self.cfg.seed, alpha, rows, budgets };
        write_json(&self.out.join("table2.json"), &t)?;
        write_text(&self.out.join("table2.csv"), &t.to_csv())?;
        write_text(&self.out.join("table2.md"), &t.to_markdown())?;
        Ok(t)
    }

    /// Mean regret curves of every strategy with the guided top-k budgets.
    pub fn regret_reports(&mut self) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        for name in self.cfg.spaces.clone() {
            let view = self.space_view(&name)?;
            let best = view.table.best_test();
            let rs = self.random_search_runs(&view)?;
            let re = self.evolution_runs(&view)?;
            let ws = self.guided_runs(&view)?;
            let markers = self
                .budgets(&view, &ws)?
                .into_iter()
                .map(|(k, _, t)| BudgetMarker { label: format!("top-{k}"), time_s: t })
                .collect();
            let curves = |runs: &[SearchRun]| runs.iter().map(|r| r.regret_curve(best)).collect::<Vec<_>>();
            let groups = vec![("rs".to_string(), curves(&rs)), ("re".to_string(), curves(&re)), ("ws".to_string(), curves(&ws))];
            let plot = emit_regret_plot(&name, &groups, markers, self.cfg.search.grid_points)?;
            let base = self.out.join(format!("regret/{name}"));
            write_json(&base.with_extension("json"), &serde_json::json!({"fingerprint": self.fingerprint, "seed": self.cfg.seed, "plot": plot}))?;
            write_text(&base.with_extension("csv"), &plot.to_csv())?;
            write_text(&base.with_extension("svg"), &plot.to_svg())?;
            written.push(base.with_extension("json"));
        }
        Ok(written)
    }

    /// One scatter report per usable super-net and scheme.
    pub fn scatter_reports(&mut self) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        for name in self.cfg.spaces.clone() {
            let view = self.space_view(&name)?;
            let picks = self.correlation_sample(&view)?;
            let cells: Vec<&CellGraph> = picks.iter().map(|&k| view.space.get(k)).collect();
            for (rec, proxies) in self.supernet_stage(&view)? {
                let Some(proxies) = proxies else { continue };
                for scheme in &self.cfg.supernet.schemes {
                    let scores = Self::scores_by_scheme(&proxies, scheme);
                    let pairs: Vec<(f64, f64)> = cells
                        .iter()
                        .map(|g| {
                            let h = g.canonical_hash();
                            let truth = view.table.query_hash(&h)?.val_acc_mean;
                            let proxy = scores.get(&h).copied().ok_or_else(|| Error::UnknownArchitecture(h.to_string()))?;
                            Ok((truth, proxy))
                        })
                        .collect::<Result<_>>()?;
                    let label = format!("{name} {} seed{} {scheme}", rec.variant, rec.index);
                    let report = scatter_from_pairs(&label, &cells, &pairs)?;
                    let base = self.out.join(format!("scatter/{name}/{}/seed{}_{scheme}", rec.variant, rec.index));
                    write_json(
                        &base.with_extension("json"),
                        &serde_json::json!({"fingerprint": self.fingerprint, "seed": rec.train_seed, "report": report}),
                    )?;
                    write_text(&base.with_extension("csv"), &report.to_csv())?;
                    let (pred, group) = if view.space.spec().residual.is_none() {
                        (Predicate::HasResidual, "residual")
                    } else {
                        (Predicate::FirstNodeOp, "conv3x3")
                    };
                    write_text(&base.with_extension("svg"), &report.to_svg(pred, group))?;
                    written.push(base.with_extension("json"));
                }
            }
        }
        Ok(written)
    }

    /// Every stage in dependency order.
    pub fn run(&mut self) -> Result<PipelineSummary> {
        self.bench_table()?;
        let table1 = self.correlation_table()?;
        let scatter = self.scatter_reports()?;
        let table2 = self.effect_table()?;
        let regret = self.regret_reports()?;
        Ok(PipelineSummary { table1, table2, scatter, regret })
    }
}

pub struct PipelineSummary {
    pub table1: CorrelationTable,
    pub table2: EffectTable,
    pub scatter: Vec<PathBuf>,
    pub regret: Vec<PathBuf>,
}

/// Opens `out` for `cfg` and runs every stage.
pub fn run_pipeline(cfg: ExperimentConfig, out: &Path) -> Result<PipelineSummary> {
    Pipeline::open(cfg, out)?.run()
}
