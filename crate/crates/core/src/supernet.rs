//! Weight-sharing super-net: one store of filter banks covering a whole
//! search space, from which each architecture reads leading-channel slices.

use std::collections::{BTreeMap, HashSet};
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cell::{CanonicalHash, CellGraph, MacroConfig, OpLabel, SearchSpace, SearchSpaceSpec};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::{evaluate, update_running_stats, BnMode, GradBuffer, NetworkPlan, ParamStore};
use crate::tensor::{
    cosine_lr, load_checkpoint, save_checkpoint, BatchNormState, BatchStats, RmsProp, RmsPropConfig, Tensor,
    BN_MOMENTUM,
};

/// Training-time variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    /// One 3x3 bank per node; 1x1 convolutions read its center taps.
    pub single_kernel: bool,
    /// Sample architectures in proportion to their parameter counts.
    pub pro_rata: bool,
    /// Architectures averaged per gradient step.
    pub samples_per_step: usize,
}

impl Default for Variant {
    fn default() -> Self {
        Variant { single_kernel: false, pro_rata: false, samples_per_step: 1 }
    }
}

impl Variant {
    /// `baseline`, `single-kernel`, `pro-rata`, `avg-3`, or `+`-joined combinations.
    pub fn name(&self) -> String {
        let mut parts = Vec::new();
        if self.single_kernel {
            parts.push("single-kernel".to_string());
        }
        if self.pro_rata {
            parts.push("pro-rata".to_string());
        }
        if self.samples_per_step > 1 {
            parts.push(format!("avg-{}", self.samples_per_step));
        }
        if parts.is_empty() {
            "baseline".into()
        } else {
            parts.join("+")
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        let mut v = Variant::default();
        if s == "baseline" {
            return Ok(v);
        }
        for part in s.split('+') {
            match part {
                "single-kernel" => v.single_kernel = true,
                "pro-rata" => v.pro_rata = true,
                p => {
                    let m = p
                        .strip_prefix("avg-")
                        .and_then(|m| m.parse::<usize>().ok())
                        .filter(|&m| m >= 1)
                        .ok_or_else(|| Error::Config(format!("unknown variant {p}")))?;
                    v.samples_per_step = m;
                }
            }
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub optimizer: RmsPropConfig,
    pub bn_momentum: f64,
    pub variant: Variant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 432,
            batch_size: 256,
            lr0: 0.2,
            optimizer: RmsPropConfig::default(),
            bn_momentum: BN_MOMENTUM,
            variant: Variant::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.variant.samples_per_step == 0 {
            return Err(Error::Config("epochs, batch size and samples per step must be positive".into()));
        }
        Ok(())
    }
}

/// Architecture distribution over the members of a space plus the number of
/// draws per gradient step.
#[derive(Debug, Clone)]
pub struct SamplerConfig {
    probabilities: Vec<f64>,
    index: WeightedIndex<f64>,
    samples_per_step: usize,
}

impl SamplerConfig {
    fn from_weights(weights: Vec<f64>, samples_per_step: usize) -> Result<SamplerConfig> {
        if weights.is_empty() {
            return Err(Error::InsufficientData("sampler over an empty space".into()));
        }
        if samples_per_step == 0 {
            return Err(Error::Config("at least one sample per step".into()));
        }
        let total: f64 = weights.iter().sum();
        let index = WeightedIndex::new(&weights).map_err(|e| Error::Config(e.to_string()))?;
        let probabilities = weights.iter().map(|w| w / total).collect();
        Ok(SamplerConfig { probabilities, index, samples_per_step })
    }

    pub fn uniform(space_size: usize, samples_per_step: usize) -> Result<SamplerConfig> {
        SamplerConfig::from_weights(vec![1.0; space_size], samples_per_step)
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn samples_per_step(&self) -> usize {
        self.samples_per_step
    }

    /// Member index drawn from the distribution.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.index.sample(rng)
    }

    /// One step's worth of independent draws.
    pub fn draw_step<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        (0..self.samples_per_step).map(|_| self.draw(rng)).collect()
    }
}

/// Probabilities proportional to standalone parameter counts.
pub fn make_pro_rata(space: &SearchSpace, net: &MacroConfig, samples_per_step: usize) -> Result<SamplerConfig> {
    let counts = space
        .members()
        .iter()
        .map(|g| g.param_count(net).map(|c| c as f64))
        .collect::<Result<Vec<_>>>()?;
    SamplerConfig::from_weights(counts, samples_per_step)
}

/// Sampler for a variant: uniform or pro-rata, with its sample count.
pub fn sampler_for(space: &SearchSpace, net: &MacroConfig, variant: &Variant) -> Result<SamplerConfig> {
    if variant.pro_rata {
        make_pro_rata(space, net, variant.samples_per_step)
    } else {
        SamplerConfig::uniform(space.len(), variant.samples_per_step)
    }
}

/// Unique architectures a run can possibly visit.
pub fn max_unique_architectures(epochs: usize, batches_per_epoch: usize, samples_per_step: usize) -> u64 {
    epochs as u64 * batches_per_epoch as u64 * samples_per_step as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvalScheme {
    /// Running statistics accumulated during super-net training.
    NoFt,
    /// Statistics recomputed for the architecture over `batches` mini-batches.
    BnsFt { batches: usize },
}

impl Default for EvalScheme {
    fn default() -> Self {
        EvalScheme::BnsFt { batches: 4 }
    }
}

impl EvalScheme {
    pub fn name(&self) -> String {
        match self {
            EvalScheme::NoFt => "no_ft".into(),
            EvalScheme::BnsFt { batches: 4 } => "bns_ft".into(),
            EvalScheme::BnsFt { batches } => format!("bns_ft{batches}"),
        }
    }

    pub fn parse(s: &str) -> Result<EvalScheme> {
        match s {
            "no_ft" => Ok(EvalScheme::NoFt),
            "bns_ft" => Ok(EvalScheme::BnsFt { batches: 4 }),
            _ => s
                .strip_prefix("bns_ft")
                .and_then(|k| k.parse().ok())
                .filter(|&k| k >= 1)
                .map(|batches| EvalScheme::BnsFt { batches })
                .ok_or_else(|| Error::Config(format!("unknown evaluation scheme {s}"))),
        }
    }

    /// Forward passes charged per evaluated architecture.
    pub fn forward_passes(&self, validation_batches: usize) -> usize {
        match self {
            EvalScheme::NoFt => validation_batches,
            EvalScheme::BnsFt { batches } => validation_batches + batches,
        }
    }
}

/// Centered `k x k` window of a `(out, in, K, K)` bank.
pub fn extract_subkernel(bank: &Tensor, k: usize) -> Result<Tensor> {
    let (o, i, kh, kw) = bank.dims4()?;
    if kh != kw || kh % 2 == 0 {
        return Err(Error::Shape(format!("bank {:?} is not an odd square kernel", bank.shape())));
    }
    if k % 2 == 0 || k > kh || k == 0 {
        return Err(Error::Shape(format!("cannot extract a {k}x{k} window from a {kh}x{kh} bank")));
    }
    let off = (kh - k) / 2;
    bank.block(&[0, 0, off, off], &[o, i, k, k])
}

/// Progress record of a super-net training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub samples_per_step: usize,
    pub steps: usize,
    pub unique_architectures: usize,
    pub unique_bound: u64,
    pub final_lr: f64,
    pub epoch_loss: Vec<f64>,
    pub epoch_train_acc: Vec<f64>,
    /// Set when the run was judged not to have converged.
    pub diverged: Option<String>,
}

/// Training accuracy at or below `1/classes + CHANCE_MARGIN` after a tenth
/// of the budget marks a run as failed.
pub const CHANCE_MARGIN: f64 = 0.05;

/// Batch size of fixed-statistics evaluation; it does not affect results.
pub const EVAL_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct SuperNet {
    spec: SearchSpaceSpec,
    net: MacroConfig,
    single_kernel: bool,
    store: ParamStore,
}

/// An architecture bound to the super-net's weights. Reading through it
/// never writes to the shared store.
pub struct ActiveNetwork<'a> {
    pub plan: NetworkPlan,
    pub store: &'a ParamStore,
}

impl ActiveNetwork<'_> {
    pub fn accuracy(&self, data: &Dataset, batch_size: usize, mode: BnMode<'_>) -> Result<f64> {
        evaluate(&self.plan, self.store, data, batch_size, mode)
    }
}

impl SuperNet {
    /// Allocates banks for every (cell position, node, op) the space can use.
    pub fn new(spec: &SearchSpaceSpec, net: MacroConfig, single_kernel: bool, seed: u64) -> Result<SuperNet> {
        let c = net.stem_channels;
        let mut store = ParamStore::new();
        store.ensure("stem/w", &[c, net.input_channels, 3, 3])?;
        store.ensure_bn("stem/bn", c)?;
        for p in 0..net.cell_repeats {
            for v in 1..spec.max_nodes.saturating_sub(1) {
                store.ensure(&format!("cell{p}/node{v}/proj/w"), &[c, c, 1, 1])?;
                store.ensure_bn(&format!("cell{p}/node{v}/proj/bn"), c)?;
                for op in [OpLabel::Conv3x3, OpLabel::Conv1x1] {
                    let k = op.kernel().expect("conv");
                    if single_kernel {
                        store.ensure(&format!("cell{p}/node{v}/conv/w"), &[c, c, 3, 3])?;
                    } else {
                        store.ensure(&format!("cell{p}/node{v}/{}/w", op.name()), &[c, c, k, k])?;
                    }
                    store.ensure_bn(&format!("cell{p}/node{v}/{}/bn", op.name()), c)?;
                }
            }
            store.ensure(&format!("cell{p}/out/proj/w"), &[c, c, 1, 1])?;
            store.ensure_bn(&format!("cell{p}/out/proj/bn"), c)?;
        }
        store.ensure("head/w", &[c, net.num_classes])?;
        store.ensure("head/b", &[net.num_classes])?;
        store.initialize(seed);
        Ok(SuperNet { spec: spec.clone(), net, single_kernel, store })
    }

    pub fn spec(&self) -> &SearchSpaceSpec {
        &self.spec
    }

    pub fn macro_config(&self) -> &MacroConfig {
        &self.net
    }

    pub fn single_kernel(&self) -> bool {
        self.single_kernel
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Size of the shared weight vector.
    pub fn parameter_count(&self) -> usize {
        self.store.scalar_count()
    }

    /// Binds `g` to the shared weights.
    pub fn activate(&self, g: &CellGraph) -> Result<ActiveNetwork<'_>> {
        if !self.spec.contains(g) {
            return Err(Error::NotInSpace(format!("{} is not in {}", g.encoding(), self.spec.name())));
        }
        let plan = NetworkPlan::new(g, self.net, self.single_kernel)?;
        Ok(ActiveNetwork { plan, store: &self.store })
    }

    /// Mean loss and mean gradient over `archs` on one batch, with the batch
    /// statistics of each architecture's pass.
    pub fn compute_gradients(&self, archs: &[CellGraph], x: &Tensor, labels: &[usize]) -> Result<StepGradients> {
        if archs.is_empty() || labels.is_empty() {
            return Err(Error::InsufficientData("gradient step needs an architecture and a nonempty batch".into()));
        }
        let w = 1.0 / archs.len() as f64;
        let mut grads = GradBuffer::new();
        let mut loss = 0.0;
        let mut correct = 0;
        let mut stats = Vec::with_capacity(archs.len());
        for g in archs {
            let net = self.activate(g)?;
            let f = net.plan.forward(&self.store, x.clone(), BnMode::Batch)?;
            correct += f.correct(labels);
            stats.push(f.batch_stats.clone());
            let (l, buf) = f.loss_and_grads(&self.store, labels)?;
            loss += w * l;
            grads.accumulate(&buf, w);
        }
        let accuracy = correct as f64 / (labels.len() * archs.len()) as f64;
        Ok(StepGradients { loss, accuracy, grads, stats })
    }

    /// One optimizer step on the mean gradient of `archs`. Entries that none
    /// of them read are left untouched, accumulators included.
    pub fn train_step(&mut self, archs: &[CellGraph], x: &Tensor, labels: &[usize], opt: &RmsProp, lr: f64, bn_momentum: f64) -> Result<StepGradients> {
        let step = self.compute_gradients(archs, x, labels)?;
        step.grads.apply(&mut self.store, opt, lr)?;
        for s in &step.stats {
            update_running_stats(&mut self.store, s, bn_momentum);
        }
        Ok(step)
    }

    /// Full cosine-annealed training. When a step fails numerically the last
    /// good state is written to `checkpoint` (if given) before the error is
    /// returned.
    pub fn train(
        &mut self,
        space: &SearchSpace,
        data: &Dataset,
        cfg: &TrainConfig,
        sampler: &SamplerConfig,
        seed: u64,
        checkpoint: Option<&Path>,
    ) -> Result<TrainLog> {
        cfg.validate()?;
        if sampler.probabilities().len() != space.len() {
            return Err(Error::Config("sampler and space sizes differ".into()));
        }
        let batches = data.batches_per_epoch(cfg.batch_size);
        let total = cfg.epochs * batches;
        if total == 0 {
            return Err(Error::InsufficientData("fewer training images than one batch".into()));
        }
        let opt = RmsProp::new(cfg.optimizer);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seen: HashSet<CanonicalHash> = HashSet::new();
        let check_at = total.div_ceil(10);
        let chance = 1.0 / self.net.num_classes as f64;
        let mut log = TrainLog {
            epochs: cfg.epochs,
            batches_per_epoch: batches,
            samples_per_step: sampler.samples_per_step(),
            steps: 0,
            unique_architectures: 0,
            unique_bound: max_unique_architectures(cfg.epochs, batches, sampler.samples_per_step()),
            final_lr: cfg.lr0,
            epoch_loss: Vec::new(),
            epoch_train_acc: Vec::new(),
            diverged: None,
        };
        let mut window: Vec<f64> = Vec::new();
        let mut last_good = self.store.clone();
        'epochs: for _ in 0..cfg.epochs {
            let (mut loss_sum, mut acc_sum) = (0.0, 0.0);
            let order = data.shuffled_batches(cfg.batch_size, &mut rng);
            for idx in &order {
                let picks = sampler.draw_step(&mut rng);
                let archs: Vec<CellGraph> = picks.iter().map(|&i| space.members()[i].clone()).collect();
                seen.extend(picks.iter().map(|&i| space.hashes()[i]));
                let lr = cosine_lr(log.steps, total, cfg.lr0)?;
                let (x, labels) = data.batch(idx);
                let step = match self.train_step(&archs, &x, &labels, &opt, lr, cfg.bn_momentum) {
                    Ok(s) => s,
                    Err(e @ Error::Numerical(_)) => {
                        self.store = last_good;
                        if let Some(p) = checkpoint {
                            self.save(p, Some(&log))?;
                        }
                        return Err(e);
                    }
                    Err(e) => return Err(e),
                };
                last_good.clone_from(&self.store);
                log.steps += 1;
                loss_sum += step.loss;
                acc_sum += step.accuracy;
                window.push(step.accuracy);
                if window.len() > batches {
                    window.remove(0);
                }
                if log.steps == check_at {
                    let recent = window.iter().sum::<f64>() / window.len() as f64;
                    if recent <= chance + CHANCE_MARGIN {
                        log.diverged = Some(format!("training accuracy {recent:.3} at chance after {check_at} steps"));
                        log.epoch_loss.push(loss_sum / window.len().max(1) as f64);
                        log.epoch_train_acc.push(recent);
                        break 'epochs;
                    }
                }
            }
            log.epoch_loss.push(loss_sum / order.len() as f64);
            log.epoch_train_acc.push(acc_sum / order.len() as f64);
        }
        log.unique_architectures = seen.len();
        log.final_lr = cosine_lr(log.steps, total, cfg.lr0)?;
        Ok(log)
    }

    /// Per-architecture statistics: the plain mean of batch statistics over
    /// the first `k` batches of a seeded shuffle of `data`.
    pub fn bns_finetune(&self, g: &CellGraph, data: &Dataset, k: usize, batch_size: usize, seed: u64) -> Result<BTreeMap<String, BatchNormState>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batches = data.shuffled_batches(batch_size, &mut rng);
        self.bns_from_batches(g, data, &batches, k)
    }

    /// As [`SuperNet::bns_finetune`] over explicit batches.
    pub fn bns_from_batches(&self, g: &CellGraph, data: &Dataset, batches: &[Vec<usize>], k: usize) -> Result<BTreeMap<String, BatchNormState>> {
        if k == 0 {
            return Err(Error::Config("recalibration needs at least one batch".into()));
        }
        if batches.len() < k {
            return Err(Error::InsufficientData(format!("{} batches available, {k} needed", batches.len())));
        }
        let net = self.activate(g)?;
        let mut sums: BTreeMap<String, BatchStats> = BTreeMap::new();
        for idx in &batches[..k] {
            let (x, _) = data.batch(idx);
            let f = net.plan.forward(&self.store, x, BnMode::Batch)?;
            for (key, s) in f.batch_stats {
                let e = sums
                    .entry(key)
                    .or_insert_with(|| BatchStats { mean: vec![0.0; s.mean.len()], var: vec![0.0; s.var.len()] });
                for (a, b) in e.mean.iter_mut().zip(&s.mean) {
                    *a += b;
                }
                for (a, b) in e.var.iter_mut().zip(&s.var) {
                    *a += b;
                }
            }
        }
        let kf = k as f64;
        Ok(sums
            .into_iter()
            .map(|(key, s)| {
                let state = BatchNormState {
                    running_mean: s.mean.iter().map(|m| m / kf).collect(),
                    running_var: s.var.iter().map(|v| v / kf).collect(),
                };
                (key, state)
            })
            .collect())
    }

    /// Accuracy of `g` on `valid` using shared weights. Under BNS_FT the
    /// statistics are first recalibrated on batches of `calibration_batch`
    /// images from `calibration`.
    pub fn proxy_eval(&self, g: &CellGraph, valid: &Dataset, calibration: &Dataset, scheme: EvalScheme, calibration_batch: usize, seed: u64) -> Result<f64> {
        if valid.is_empty() {
            return Err(Error::InsufficientData("empty validation set".into()));
        }
        let net = self.activate(g)?;
        match scheme {
            EvalScheme::NoFt => net.accuracy(valid, EVAL_BATCH, BnMode::Running),
            EvalScheme::BnsFt { batches } => {
                let stats = self.bns_finetune(g, calibration, batches, calibration_batch, seed)?;
                net.accuracy(valid, EVAL_BATCH, BnMode::Fixed(&stats))
            }
        }
    }

    /// Writes the shared weights with the space, macro layout and variant.
    pub fn save(&self, base: &Path, log: Option<&TrainLog>) -> Result<()> {
        let tensors = self.store.to_tensors();
        let refs: Vec<(String, &Tensor)> = tensors.iter().map(|(k, t)| (k.clone(), t)).collect();
        let extra = serde_json::json!({
            "space": self.spec.name(),
            "net": self.net,
            "single_kernel": self.single_kernel,
            "log": log,
        });
        save_checkpoint(base, &refs, extra)
    }

    pub fn load(base: &Path) -> Result<(SuperNet, Option<TrainLog>)> {
        let (tensors, extra) = load_checkpoint(base)?;
        let schema = |m: &str| Error::Schema { line: 0, message: m.to_string() };
        let spec = SearchSpaceSpec::parse_name(extra["space"].as_str().ok_or_else(|| schema("checkpoint lacks space"))?)?;
        let net: MacroConfig = serde_json::from_value(extra["net"].clone())?;
        let single_kernel = extra["single_kernel"].as_bool().ok_or_else(|| schema("checkpoint lacks single_kernel"))?;
        let log: Option<TrainLog> = serde_json::from_value(extra["log"].clone())?;
        let store = ParamStore::from_tensors(tensors)?;
        Ok((SuperNet { spec, net, single_kernel, store }, log))
    }
}

/// Result of [`SuperNet::compute_gradients`].
#[derive(Debug, Clone)]
pub struct StepGradients {
    pub loss: f64,
    pub accuracy: f64,
    pub grads: GradBuffer,
    pub stats: Vec<Vec<(String, BatchStats)>>,
}

/// One line of a proxy-evaluation results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyResult {
    pub hash: CanonicalHash,
    pub scheme: String,
    pub proxy_acc: f64,
    pub seed: u64,
}

pub fn append_results(path: &Path, results: &[ProxyResult]) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    for r in results {
        writeln!(f, "{}", serde_json::to_string(r)?)?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<ProxyResult>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(std::fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Schema { line: i + 1, message: e.to_string() })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> (SearchSpace, MacroConfig) {
        let spec = SearchSpaceSpec::full().with_bounds(3, 9);
        (SearchSpace::build(&spec), MacroConfig { input_channels: 1, stem_channels: 4, cell_repeats: 1, num_classes: 4 })
    }

    #[test]
    fn variant_names_round_trip() {
        for s in ["baseline", "single-kernel", "pro-rata", "avg-3", "single-kernel+pro-rata+avg-2"] {
            assert_eq!(Variant::parse(s).unwrap().name(), s);
        }
        assert!(Variant::parse("avg-0").is_err());
        for s in ["no_ft", "bns_ft", "bns_ft2"] {
            assert_eq!(EvalScheme::parse(s).unwrap().name(), s);
        }
    }

    #[test]
    fn subkernel_windows() {
        let bank = Tensor::new(vec![1, 1, 3, 3], (0..9).map(f64::from).collect()).unwrap();
        assert_eq!(extract_subkernel(&bank, 3).unwrap(), bank);
        assert_eq!(extract_subkernel(&bank, 1).unwrap().data(), &[4.0]);
        assert!(extract_subkernel(&bank, 2).is_err());
        assert!(extract_subkernel(&bank, 5).is_err());
    }

    #[test]
    fn pro_rata_is_proportional() {
        let (space, net) = tiny();
        let s = make_pro_rata(&space, &net, 1).unwrap();
        let counts: Vec<f64> = space.members().iter().map(|g| g.param_count(&net).unwrap() as f64).collect();
        let total: f64 = counts.iter().sum();
        for (p, c) in s.probabilities().iter().zip(&counts) {
            assert!((p - c / total).abs() < 1e-15);
        }
        assert!((s.probabilities().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_kernel_is_smaller() {
        let (space, net) = tiny();
        let a = SuperNet::new(space.spec(), net, true, 0).unwrap();
        let b = SuperNet::new(space.spec(), net, false, 0).unwrap();
        assert!(a.parameter_count() < b.parameter_count());
    }

    #[test]
    fn activation_rejects_foreign_cells() {
        let (space, net) = tiny();
        let s = SuperNet::new(space.spec(), net, false, 0).unwrap();
        let big = CellGraph::from_edges(4, &[(0, 1), (1, 2), (2, 3)], vec![OpLabel::Conv3x3, OpLabel::Conv1x1]).unwrap();
        assert!(matches!(s.activate(&big), Err(Error::NotInSpace(_))));
    }

    #[test]
    fn unique_bound_formula() {
        assert_eq!(max_unique_architectures(432, 157, 1), 67_824);
        assert_eq!(max_unique_architectures(40, 50, 1), 2_000);
    }
}
