//! Random search, regularized evolution and super-net guided search over a
//! benchmark table, with test-regret accounting on a shared time axis.

use std::collections::{HashMap, VecDeque};
use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bench::BenchTable;
use crate::cell::{mutate, CanonicalHash, CellGraph, Mutant, SearchSpace};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::supernet::{EvalScheme, SuperNet};
use crate::tensor::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub elapsed_s: f64,
    pub hash: CanonicalHash,
    pub val_acc: f64,
    pub test_acc: f64,
}

/// Time-stamped standalone evaluations of one search run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRun {
    pub strategy: String,
    pub seed: u64,
    /// Fixed cost charged before the first evaluation (super-net training
    /// plus proxy evaluation for guided runs, zero otherwise).
    pub offset_s: f64,
    pub trace: Vec<TraceEntry>,
    /// Mutants rejected as invalid or outside the space.
    #[serde(default)]
    pub rejected: usize,
}

impl SearchRun {
    fn new(strategy: &str, seed: u64, offset_s: f64) -> SearchRun {
        SearchRun { strategy: strategy.into(), seed, offset_s, trace: Vec::new(), rejected: 0 }
    }

    fn push(&mut self, g: &CellGraph, table: &BenchTable) -> Result<()> {
        let r = table.query(g)?;
        let last = self.trace.last().map_or(self.offset_s, |e| e.elapsed_s);
        self.trace.push(TraceEntry {
            elapsed_s: last + r.train_time_s,
            hash: r.hash,
            val_acc: r.val_acc_mean,
            test_acc: r.test_acc_mean,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.trace.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trace.is_empty()
    }

    /// Index of the running best-validation entry after each evaluation.
    /// Only a strictly better validation accuracy replaces the incumbent.
    pub fn incumbents(&self) -> Vec<usize> {
        let mut best = 0;
        (0..self.trace.len())
            .map(|i| {
                if self.trace[i].val_acc > self.trace[best].val_acc {
                    best = i;
                }
                best
            })
            .collect()
    }

    /// Step function `(elapsed_s, regret)` after each evaluation.
    pub fn regret_curve(&self, best_test: f64) -> RegretCurve {
        let points = self
            .incumbents()
            .into_iter()
            .zip(&self.trace)
            .map(|(inc, e)| (e.elapsed_s, (best_test - self.trace[inc].test_acc).max(0.0)))
            .collect();
        RegretCurve { points, no_evaluation: best_test }
    }
}

/// Test regret over time: right-continuous steps at each evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretCurve {
    pub points: Vec<(f64, f64)>,
    /// Regret charged before the first evaluation completes.
    pub no_evaluation: f64,
}

impl RegretCurve {
    pub fn at(&self, t: f64) -> f64 {
        let n = self.points.partition_point(|&(time, _)| time <= t);
        if n == 0 {
            self.no_evaluation
        } else {
            self.points[n - 1].1
        }
    }

    pub fn final_regret(&self) -> f64 {
        self.points.last().map_or(self.no_evaluation, |p| p.1)
    }

    /// `time_s,regret` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("time_s,regret\n");
        for (t, r) in &self.points {
            s.push_str(&format!("{t},{r}\n"));
        }
        s
    }
}

/// Evaluates `n` unique architectures in random order.
pub fn random_search(table: &BenchTable, space: &SearchSpace, n: usize, seed: u64) -> Result<SearchRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut run = SearchRun::new("rs", seed, 0.0);
    for i in space.sample_indices(n, &mut rng)? {
        run.push(space.get(i), table)?;
    }
    Ok(run)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvolutionConfig {
    pub population_size: usize,
    pub tournament_size: usize,
    /// Valid evaluations before stopping.
    pub evaluations: usize,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig { population_size: 100, tournament_size: 10, evaluations: 10_000 }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size == 0 || self.tournament_size == 0 || self.tournament_size > self.population_size {
            return Err(Error::Config("need 1 <= tournament_size <= population_size".into()));
        }
        if self.population_size > self.evaluations {
            return Err(Error::Config("population_size exceeds the evaluation budget".into()));
        }
        Ok(())
    }
}

struct Member {
    raw: CellGraph,
    fitness: f64,
}

/// Aging evolution with the default single-edit mutation.
pub fn regularized_evolution(table: &BenchTable, space: &SearchSpace, cfg: &EvolutionConfig, seed: u64) -> Result<SearchRun> {
    let (nodes, edges) = (space.spec().max_nodes, space.spec().max_edges);
    regularized_evolution_with(table, space, cfg, seed, |g, rng| mutate(g, nodes, edges, rng))
}

/// Aging evolution: a random initial population, then repeated tournament
/// selection, mutation and eviction of the oldest member. Mutants that are
/// invalid or outside the space score 0, are not counted toward the budget
/// and are charged no time.
pub fn regularized_evolution_with(
    table: &BenchTable,
    space: &SearchSpace,
    cfg: &EvolutionConfig,
    seed: u64,
    mut mutator: impl FnMut(&CellGraph, &mut ChaCha8Rng) -> Mutant,
) -> Result<SearchRun> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut run = SearchRun::new("re", seed, 0.0);
    let mut population: VecDeque<Member> = VecDeque::with_capacity(cfg.population_size);
    for _ in 0..cfg.population_size {
        let g = space.get(rng.random_range(0..space.len()));
        run.push(g, table)?;
        population.push_back(Member { raw: g.clone(), fitness: run.trace.last().expect("pushed").val_acc });
    }
    let max_attempts = cfg.evaluations.saturating_mul(1000).max(100_000);
    let mut attempts = 0;
    while run.trace.len() < cfg.evaluations {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::Infeasible("mutation keeps producing invalid cells".into()));
        }
        let picks = sample(&mut rng, population.len(), cfg.tournament_size);
        let parent = picks
            .iter()
            .reduce(|a, b| if population[b].fitness > population[a].fitness { b } else { a })
            .expect("tournament is nonempty");
        let child = mutator(&population[parent].raw, &mut rng);
        let fitness = match child.pruned {
            Ok(g) if space.contains(&g) => {
                run.push(&g, table)?;
                run.trace.last().expect("pushed").val_acc
            }
            _ => {
                run.rejected += 1;
                0.0
            }
        };
        population.push_back(Member { raw: child.raw, fitness });
        population.pop_front();
    }
    Ok(run)
}

/// Proxy score used to order architectures before querying.
pub trait ProxyScorer {
    fn score(&mut self, g: &CellGraph) -> Result<f64>;
}

/// Proxy accuracy from a trained super-net.
pub struct SuperNetScorer<'a> {
    pub supernet: &'a SuperNet,
    pub valid: &'a Dataset,
    pub calibration: &'a Dataset,
    pub scheme: EvalScheme,
    pub calibration_batch: usize,
    pub seed: u64,
    cache: HashMap<CanonicalHash, f64>,
}

impl<'a> SuperNetScorer<'a> {
    pub fn new(supernet: &'a SuperNet, valid: &'a Dataset, calibration: &'a Dataset, scheme: EvalScheme, calibration_batch: usize, seed: u64) -> Self {
        SuperNetScorer { supernet, valid, calibration, scheme, calibration_batch, seed, cache: HashMap::new() }
    }

    /// Seeds the cache with scores computed earlier under the same settings.
    pub fn with_cache(mut self, cache: HashMap<CanonicalHash, f64>) -> Self {
        self.cache = cache;
        self
    }
}

impl ProxyScorer for SuperNetScorer<'_> {
    fn score(&mut self, g: &CellGraph) -> Result<f64> {
        let h = g.canonical_hash();
        if let Some(v) = self.cache.get(&h) {
            return Ok(*v);
        }
        let v = self.supernet.proxy_eval(g, self.valid, self.calibration, self.scheme, self.calibration_batch, self.seed)?;
        self.cache.insert(h, v);
        Ok(v)
    }
}

/// Scores looked up by canonical hash, e.g. proxies computed earlier.
pub struct FixedScorer(pub HashMap<CanonicalHash, f64>);

impl ProxyScorer for FixedScorer {
    fn score(&mut self, g: &CellGraph) -> Result<f64> {
        let h = g.canonical_hash();
        self.0.get(&h).copied().ok_or_else(|| Error::UnknownArchitecture(h.to_string()))
    }
}

/// The true mean validation accuracy.
pub struct OracleScorer<'a>(pub &'a BenchTable);

impl ProxyScorer for OracleScorer<'_> {
    fn score(&mut self, g: &CellGraph) -> Result<f64> {
        Ok(self.0.query(g)?.val_acc_mean)
    }
}

/// Negated validation accuracy.
pub struct AntiScorer<'a>(pub &'a BenchTable);

impl ProxyScorer for AntiScorer<'_> {
    fn score(&mut self, g: &CellGraph) -> Result<f64> {
        Ok(-self.0.query(g)?.val_acc_mean)
    }
}

pub struct ConstantScorer(pub f64);

impl ProxyScorer for ConstantScorer {
    fn score(&mut self, _: &CellGraph) -> Result<f64> {
        Ok(self.0)
    }
}

/// Seconds charged to proxy-evaluate one architecture: its per-pass cost
/// scaled to a forward pass only, times the forward passes used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxyCost {
    pub forward_passes: usize,
    /// Evaluation batch size over the standalone training batch size.
    pub batch_ratio: f64,
}

impl ProxyCost {
    pub fn new(scheme: EvalScheme, validation_batches: usize, batch_ratio: f64) -> ProxyCost {
        ProxyCost { forward_passes: scheme.forward_passes(validation_batches), batch_ratio }
    }

    pub fn seconds(&self, table: &BenchTable, g: &CellGraph) -> Result<f64> {
        let per_pass = table.query(g)?.train_time_s / table.passes_per_training().max(1) as f64;
        Ok(per_pass / 3.0 * self.forward_passes as f64 * self.batch_ratio)
    }
}

/// Samples `n` unique architectures, scores them all and then queries them
/// in decreasing score order; ties keep sampling order. The time axis starts
/// at `supernet_cost_s` plus the proxy evaluation time of the sample.
pub fn ws_guided_search(
    scorer: &mut dyn ProxyScorer,
    table: &BenchTable,
    space: &SearchSpace,
    n: usize,
    supernet_cost_s: f64,
    proxy_cost: ProxyCost,
    seed: u64,
) -> Result<SearchRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = space.sample_indices(n, &mut rng)?;
    let mut scored = Vec::with_capacity(picks.len());
    let mut proxy_time = 0.0;
    for (order, &i) in picks.iter().enumerate() {
        let g = space.get(i);
        let s = scorer.score(g)?;
        if !s.is_finite() {
            return Err(Error::Numerical(format!("non-finite proxy score for {}", g.encoding())));
        }
        proxy_time += proxy_cost.seconds(table, g)?;
        scored.push((s, order, i));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut run = SearchRun::new("ws", seed, supernet_cost_s + proxy_time);
    for (_, _, i) in scored {
        run.push(space.get(i), table)?;
    }
    Ok(run)
}

/// Training time charged for a super-net: the mean per-pass cost over the
/// space times the passes of the run (steps x samples per step), scaled by
/// the super-net to standalone batch-size ratio.
pub fn supernet_time_cost(space: &SearchSpace, table: &BenchTable, steps: usize, samples_per_step: usize, batch_ratio: f64) -> Result<f64> {
    if space.is_empty() {
        return Err(Error::InsufficientData("empty search space".into()));
    }
    let passes = table.passes_per_training().max(1) as f64;
    let mut total = 0.0;
    for g in space.members() {
        total += table.query(g)?.train_time_s / passes;
    }
    Ok(total / space.len() as f64 * (steps * samples_per_step) as f64 * batch_ratio)
}

/// Regret and elapsed time after the first `k` evaluations.
pub fn topk_regret(run: &SearchRun, k: usize, table: &BenchTable) -> Result<(f64, f64)> {
    if k == 0 || run.len() < k {
        return Err(Error::InsufficientData(format!("run has {} evaluations, {k} requested", run.len())));
    }
    let curve = run.regret_curve(table.best_test());
    Ok((curve.points[k - 1].1, run.trace[k - 1].elapsed_s))
}

/// Regret of the incumbent among evaluations finished by `t`.
pub fn regret_at_time(run: &SearchRun, t: f64, table: &BenchTable) -> f64 {
    run.regret_curve(table.best_test()).at(t)
}

/// One JSON object per run.
pub fn save_runs(path: &Path, runs: &[SearchRun]) -> Result<()> {
    let mut buf = Vec::new();
    for r in runs {
        writeln!(buf, "{}", serde_json::to_string(r)?)?;
    }
    write_atomic(path, &buf)
}

pub fn load_runs(path: &Path) -> Result<Vec<SearchRun>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Schema { line: i + 1, message: e.to_string() }))
        .collect()
}
