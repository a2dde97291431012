//! Cell network construction over a named parameter store. The same forward
//! builder serves standalone networks (tensors allocated at exact shape) and
//! super-net views (leading-channel slices of shared banks).

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xxhash_rust::xxh3::Xxh3;

use crate::cell::{vertex_channels, CellGraph, MacroConfig, OpLabel};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::{
    block_indices, BatchNormState, BatchStats, RmsProp, Tape, Tensor, Var, BN_EPSILON,
};

/// A trainable tensor and its squared-gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub acc: Vec<f64>,
}

/// Trainable tensors plus batch-norm running statistics, keyed by layer path.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
    bn: BTreeMap<String, BatchNormState>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    /// Adds a zero tensor, or keeps the existing one when the shape agrees.
    pub fn ensure(&mut self, key: &str, shape: &[usize]) -> Result<()> {
        if let Some(p) = self.params.get(key) {
            if p.value.shape() != shape {
                return Err(Error::Shape(format!("{key} exists with shape {:?}, wanted {shape:?}", p.value.shape())));
            }
            return Ok(());
        }
        let value = Tensor::zeros(shape);
        let acc = vec![0.0; value.len()];
        self.params.insert(key.to_string(), Param { value, acc });
        Ok(())
    }

    /// Adds scale, shift and running statistics for a batch-norm layer.
    pub fn ensure_bn(&mut self, prefix: &str, channels: usize) -> Result<()> {
        self.ensure(&format!("{prefix}/gamma"), &[channels])?;
        self.ensure(&format!("{prefix}/beta"), &[channels])?;
        self.bn.entry(prefix.to_string()).or_insert_with(|| BatchNormState::new(channels));
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&Param> {
        self.params.get(key)
    }

    pub fn get_mut(&mut self, key: &str) -> Option<&mut Param> {
        self.params.get_mut(key)
    }

    pub fn params(&self) -> &BTreeMap<String, Param> {
        &self.params
    }

    pub fn bn(&self) -> &BTreeMap<String, BatchNormState> {
        &self.bn
    }

    pub fn bn_mut(&mut self) -> &mut BTreeMap<String, BatchNormState> {
        &mut self.bn
    }

    /// Number of trainable scalars.
    pub fn scalar_count(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    /// He-uniform kernels (`bound = sqrt(6 / fan_in)`), unit BN scale, zero
    /// shifts and biases. Visits keys in sorted order so the result depends
    /// only on `seed` and the key set.
    pub fn initialize(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (key, p) in self.params.iter_mut() {
            let shape = p.value.shape().to_vec();
            if key.ends_with("/gamma") {
                p.value.data_mut().fill(1.0);
            } else if key.ends_with("/w") {
                let fan_in: usize = if shape.len() == 2 { shape[0] } else { shape[1..].iter().product() };
                let bound = (6.0 / fan_in.max(1) as f64).sqrt();
                for v in p.value.data_mut() {
                    *v = rng.random_range(-bound..bound);
                }
            } else {
                p.value.data_mut().fill(0.0);
            }
            p.acc.fill(0.0);
        }
        for s in self.bn.values_mut() {
            *s = BatchNormState::new(s.channels());
        }
    }

    /// Digest of every value, accumulator and running statistic.
    pub fn checksum(&self) -> u128 {
        let mut h = Xxh3::new();
        for (k, p) in &self.params {
            h.update(k.as_bytes());
            for v in p.value.data().iter().chain(&p.acc) {
                h.update(&v.to_le_bytes());
            }
        }
        for (k, s) in &self.bn {
            h.update(k.as_bytes());
            for v in s.running_mean.iter().chain(&s.running_var) {
                h.update(&v.to_le_bytes());
            }
        }
        h.digest128()
    }

    /// Flattened for checkpointing: values as `<key>`, accumulators as
    /// `<key>#acc`, running statistics as `<prefix>#mean` / `<prefix>#var`.
    pub fn to_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (k, p) in &self.params {
            out.push((k.clone(), p.value.clone()));
            out.push((format!("{k}#acc"), Tensor::new(p.value.shape().to_vec(), p.acc.clone()).expect("same shape")));
        }
        for (k, s) in &self.bn {
            let n = s.channels();
            out.push((format!("{k}#mean"), Tensor::new(vec![n], s.running_mean.clone()).expect("1-d")));
            out.push((format!("{k}#var"), Tensor::new(vec![n], s.running_var.clone()).expect("1-d")));
        }
        out
    }

    pub fn from_tensors(tensors: Vec<(String, Tensor)>) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        let mut accs = BTreeMap::new();
        let mut means = BTreeMap::new();
        let mut vars = BTreeMap::new();
        for (k, t) in tensors {
            if let Some(base) = k.strip_suffix("#acc") {
                accs.insert(base.to_string(), t);
            } else if let Some(base) = k.strip_suffix("#mean") {
                means.insert(base.to_string(), t.into_data());
            } else if let Some(base) = k.strip_suffix("#var") {
                vars.insert(base.to_string(), t.into_data());
            } else {
                let acc = vec![0.0; t.len()];
                store.params.insert(k, Param { value: t, acc });
            }
        }
        for (k, t) in accs {
            let p = store.params.get_mut(&k).ok_or_else(|| Error::Schema { line: 0, message: format!("accumulator without tensor: {k}") })?;
            if t.len() != p.value.len() {
                return Err(Error::Shape(format!("accumulator size mismatch for {k}")));
            }
            p.acc = t.into_data();
        }
        for (k, running_mean) in means {
            let running_var = vars.remove(&k).ok_or_else(|| Error::Schema { line: 0, message: format!("mean without variance: {k}") })?;
            store.bn.insert(k, BatchNormState { running_mean, running_var });
        }
        Ok(store)
    }
}

/// Where one leaf of a forward pass reads from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamRequest {
    pub key: String,
    pub offsets: Vec<usize>,
    pub extents: Vec<usize>,
}

/// Batch-norm layer reference: prefix of its store entries and active width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BnRequest {
    pub prefix: String,
    pub channels: usize,
}

fn conv_key(position: usize, node: usize, op: OpLabel, single_kernel: bool) -> String {
    if single_kernel {
        format!("cell{position}/node{node}/conv/w")
    } else {
        format!("cell{position}/node{node}/{}/w", op.name())
    }
}

fn full(key: String, extents: Vec<usize>) -> ParamRequest {
    ParamRequest { key, offsets: vec![0; extents.len()], extents }
}

/// Channel layout of the network built from one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkPlan {
    graph: CellGraph,
    net: MacroConfig,
    widths: Vec<usize>,
    single_kernel: bool,
}

impl NetworkPlan {
    /// Uses the canonical form of `g`, so isomorphic cells build the same network.
    pub fn new(g: &CellGraph, net: MacroConfig, single_kernel: bool) -> Result<NetworkPlan> {
        let graph = g.canonical_form();
        let widths = vertex_channels(&graph, net.stem_channels, net.stem_channels)?;
        Ok(NetworkPlan { graph, net, widths, single_kernel })
    }

    pub fn graph(&self) -> &CellGraph {
        &self.graph
    }

    pub fn macro_config(&self) -> &MacroConfig {
        &self.net
    }

    /// Output width of every cell node.
    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn single_kernel(&self) -> bool {
        self.single_kernel
    }

    fn conv_request(&self, position: usize, v: usize) -> Option<ParamRequest> {
        let k = self.graph.op(v).kernel()?;
        let n = self.widths[v];
        let key = conv_key(position, v, self.graph.op(v), self.single_kernel);
        Some(if self.single_kernel && k == 1 {
            ParamRequest { key, offsets: vec![0, 0, 1, 1], extents: vec![n, n, 1, 1] }
        } else {
            full(key, vec![n, n, k, k])
        })
    }

    /// Every tensor and batch-norm layer the forward pass reads, with the
    /// shapes it reads them at.
    pub fn requests(&self) -> (Vec<ParamRequest>, Vec<BnRequest>) {
        let c = self.net.stem_channels;
        let g = &self.graph;
        let out = g.output();
        let mut params = vec![full("stem/w".into(), vec![c, self.net.input_channels, 3, 3])];
        let mut bns = vec![BnRequest { prefix: "stem/bn".into(), channels: c }];
        for p in 0..self.net.cell_repeats {
            for v in 1..out {
                let n = self.widths[v];
                if g.has_edge(0, v) {
                    params.push(full(format!("cell{p}/node{v}/proj/w"), vec![n, c, 1, 1]));
                    bns.push(BnRequest { prefix: format!("cell{p}/node{v}/proj/bn"), channels: n });
                }
                if let Some(r) = self.conv_request(p, v) {
                    params.push(r);
                    bns.push(BnRequest { prefix: format!("cell{p}/node{v}/{}/bn", g.op(v).name()), channels: n });
                }
            }
            if g.has_edge(0, out) {
                params.push(full(format!("cell{p}/out/proj/w"), vec![c, c, 1, 1]));
                bns.push(BnRequest { prefix: format!("cell{p}/out/proj/bn"), channels: c });
            }
        }
        params.push(full("head/w".into(), vec![c, self.net.num_classes]));
        params.push(full("head/b".into(), vec![self.net.num_classes]));
        for b in &bns {
            params.push(full(format!("{}/gamma", b.prefix), vec![b.channels]));
            params.push(full(format!("{}/beta", b.prefix), vec![b.channels]));
        }
        (params, bns)
    }

    /// Freshly initialized store holding exactly this network's tensors.
    pub fn standalone_store(&self, seed: u64) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        let (params, bns) = self.requests();
        for b in &bns {
            store.ensure_bn(&b.prefix, b.channels)?;
        }
        for r in &params {
            store.ensure(&r.key, &r.extents)?;
        }
        store.initialize(seed);
        Ok(store)
    }

    /// Multiply-accumulates (and elementwise operations) of one forward
    /// pass on a single `image_size` x `image_size` image.
    pub fn forward_macs(&self, image_size: usize) -> u64 {
        let hw = (image_size * image_size) as u64;
        let c = self.net.stem_channels as u64;
        let g = &self.graph;
        let out = g.output();
        let bn_relu = |n: u64| 2 * n * hw;
        let mut total = 9 * self.net.input_channels as u64 * c * hw + bn_relu(c);
        let mut cell = 0;
        for v in 1..out {
            let n = self.widths[v] as u64;
            if g.has_edge(0, v) {
                cell += c * n * hw + bn_relu(n);
            }
            let preds = g.predecessors(v).count() as u64;
            cell += preds.saturating_sub(1) * n * hw;
            cell += match g.op(v).kernel() {
                Some(k) => (k * k) as u64 * n * n * hw + bn_relu(n),
                None => 9 * n * hw,
            };
        }
        if g.has_edge(0, out) {
            cell += c * c * hw + bn_relu(c) + c * hw;
        }
        total += cell * self.net.cell_repeats as u64;
        total + c * hw + c * self.net.num_classes as u64
    }
}

/// Source of normalization statistics for a forward pass.
#[derive(Debug, Clone, Copy)]
pub enum BnMode<'a> {
    /// Normalize with batch statistics and report them.
    Batch,
    /// Use the store's running statistics.
    Running,
    /// Use statistics supplied by the caller, keyed like the store's.
    Fixed(&'a BTreeMap<String, BatchNormState>),
}

struct LeafUse {
    key: String,
    var: Var,
    indices: Option<Vec<usize>>,
}

/// A recorded forward pass.
pub struct Forward {
    pub tape: Tape,
    pub logits: Var,
    /// Batch statistics per normalization layer, in [`BnMode::Batch`].
    pub batch_stats: Vec<(String, BatchStats)>,
    leaves: Vec<LeafUse>,
}

struct Builder<'a> {
    store: &'a ParamStore,
    mode: BnMode<'a>,
    tape: Tape,
    leaves: Vec<LeafUse>,
    stats: Vec<(String, BatchStats)>,
}

impl Builder<'_> {
    fn param(&mut self, r: &ParamRequest) -> Result<Var> {
        let p = self.store.get(&r.key).ok_or_else(|| Error::NotInSpace(format!("missing parameter {}", r.key)))?;
        let shape = p.value.shape();
        let whole = shape == r.extents.as_slice() && r.offsets.iter().all(|&o| o == 0);
        let (t, indices) = if whole {
            (p.value.clone(), None)
        } else {
            let idx = block_indices(shape, &r.offsets, &r.extents)?;
            let data = idx.iter().map(|&i| p.value.data()[i]).collect();
            (Tensor::new(r.extents.clone(), data)?, Some(idx))
        };
        let var = self.tape.leaf(t);
        self.leaves.push(LeafUse { key: r.key.clone(), var, indices });
        Ok(var)
    }

    fn bn(&mut self, x: Var, prefix: &str, n: usize) -> Result<Var> {
        let gamma = self.param(&full(format!("{prefix}/gamma"), vec![n]))?;
        let beta = self.param(&full(format!("{prefix}/beta"), vec![n]))?;
        let fixed = match self.mode {
            BnMode::Batch => {
                let (y, stats) = self.tape.batch_norm_train(x, gamma, beta, BN_EPSILON)?;
                self.stats.push((prefix.to_string(), stats));
                return Ok(y);
            }
            BnMode::Running => self.store.bn().get(prefix),
            BnMode::Fixed(map) => map.get(prefix),
        };
        let s = fixed.ok_or_else(|| Error::NotInSpace(format!("no statistics for {prefix}")))?;
        if s.channels() < n {
            return Err(Error::Shape(format!("{prefix} holds {} channels, need {n}", s.channels())));
        }
        let (mean, var) = s.slice(n);
        self.tape.batch_norm_eval(x, gamma, beta, mean, var, BN_EPSILON)
    }

    fn conv_bn_relu(&mut self, x: Var, w: &ParamRequest, bn_prefix: &str) -> Result<Var> {
        let wv = self.param(w)?;
        let y = self.tape.conv2d(x, wv)?;
        let n = w.extents[0];
        let y = self.bn(y, bn_prefix, n)?;
        Ok(self.tape.relu(y))
    }
}

impl NetworkPlan {
    /// Records the forward pass on `x` (shape `(n, input_channels, s, s)`).
    pub fn forward(&self, store: &ParamStore, x: Tensor, mode: BnMode<'_>) -> Result<Forward> {
        let mut b = Builder { store, mode, tape: Tape::new(), leaves: Vec::new(), stats: Vec::new() };
        let c = self.net.stem_channels;
        let g = &self.graph;
        let out = g.output();
        let xv = b.tape.leaf(x);
        let mut h = b.conv_bn_relu(xv, &full("stem/w".into(), vec![c, self.net.input_channels, 3, 3]), "stem/bn")?;
        for p in 0..self.net.cell_repeats {
            let input = h;
            let mut node_out: Vec<Option<Var>> = vec![None; out + 1];
            node_out[0] = Some(input);
            for v in 1..out {
                let n = self.widths[v];
                let mut terms = Vec::new();
                if g.has_edge(0, v) {
                    let w = full(format!("cell{p}/node{v}/proj/w"), vec![n, c, 1, 1]);
                    terms.push(b.conv_bn_relu(input, &w, &format!("cell{p}/node{v}/proj/bn"))?);
                }
                for u in g.predecessors(v).filter(|&u| u != 0) {
                    let src = node_out[u].expect("topological order");
                    terms.push(b.tape.slice_channels(src, n)?);
                }
                let summed = if terms.len() == 1 { terms[0] } else { b.tape.add(&terms)? };
                let y = match self.conv_request(p, v) {
                    Some(w) => b.conv_bn_relu(summed, &w, &format!("cell{p}/node{v}/{}/bn", g.op(v).name()))?,
                    None => b.tape.maxpool3x3(summed)?,
                };
                node_out[v] = Some(y);
            }
            let feeders: Vec<Var> = (1..out).filter(|&v| g.has_edge(v, out)).map(|v| node_out[v].expect("built")).collect();
            let residual = if g.has_edge(0, out) {
                let w = full(format!("cell{p}/out/proj/w"), vec![c, c, 1, 1]);
                Some(b.conv_bn_relu(input, &w, &format!("cell{p}/out/proj/bn"))?)
            } else {
                None
            };
            h = match (feeders.is_empty(), residual) {
                (true, Some(r)) => r,
                (false, r) => {
                    let cat = if feeders.len() == 1 { feeders[0] } else { b.tape.concat_channels(&feeders)? };
                    match r {
                        Some(r) => b.tape.add(&[cat, r])?,
                        None => cat,
                    }
                }
                (true, None) => return Err(Error::invalid(crate::error::InvalidReason::Disconnected)),
            };
        }
        let pooled = b.tape.global_avg_pool(h)?;
        let w = b.param(&full("head/w".into(), vec![c, self.net.num_classes]))?;
        let bias = b.param(&full("head/b".into(), vec![self.net.num_classes]))?;
        let logits = b.tape.dense(pooled, w, bias)?;
        Ok(Forward { tape: b.tape, logits, batch_stats: b.stats, leaves: b.leaves })
    }
}

/// Gradient of one bank plus which of its entries were read.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGrad {
    pub grad: Vec<f64>,
    pub touched: Vec<bool>,
}

/// Store-shaped gradients of one or more forward passes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradBuffer {
    pub grads: BTreeMap<String, SparseGrad>,
}

impl GradBuffer {
    pub fn new() -> Self {
        GradBuffer::default()
    }

    /// `self += weight * other`, with the union of touched entries.
    pub fn accumulate(&mut self, other: &GradBuffer, weight: f64) {
        for (k, g) in &other.grads {
            let e = self.grads.entry(k.clone()).or_insert_with(|| SparseGrad {
                grad: vec![0.0; g.grad.len()],
                touched: vec![false; g.grad.len()],
            });
            for i in 0..g.grad.len() {
                e.grad[i] += weight * g.grad[i];
                e.touched[i] |= g.touched[i];
            }
        }
    }

    pub fn scale(&mut self, f: f64) {
        for g in self.grads.values_mut() {
            for v in &mut g.grad {
                *v *= f;
            }
        }
    }

    /// One optimizer step on touched entries.
    pub fn apply(&self, store: &mut ParamStore, opt: &RmsProp, lr: f64) -> Result<()> {
        for (k, g) in &self.grads {
            let p = store.get_mut(k).ok_or_else(|| Error::NotInSpace(format!("missing parameter {k}")))?;
            let Param { value, acc } = p;
            opt.step(value.data_mut(), &g.grad, acc, lr, Some(&g.touched))?;
        }
        Ok(())
    }
}

impl Forward {
    /// Mean cross-entropy and its gradient scattered into store shapes.
    pub fn loss_and_grads(mut self, store: &ParamStore, labels: &[usize]) -> Result<(f64, GradBuffer)> {
        let loss = self.tape.softmax_cross_entropy(self.logits, labels)?;
        let value = self.tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Numerical("non-finite loss".into()));
        }
        let mut grads = self.tape.backward(loss);
        let mut buf = GradBuffer::new();
        for leaf in self.leaves {
            let bank = store.get(&leaf.key).expect("read during forward");
            let size = bank.value.len();
            let e = buf.grads.entry(leaf.key).or_insert_with(|| SparseGrad { grad: vec![0.0; size], touched: vec![false; size] });
            let g = grads.take(leaf.var);
            match &leaf.indices {
                None => {
                    if let Some(g) = g {
                        for (a, b) in e.grad.iter_mut().zip(g.data()) {
                            *a += b;
                        }
                    }
                    e.touched.fill(true);
                }
                Some(idx) => {
                    for (j, &i) in idx.iter().enumerate() {
                        if let Some(g) = &g {
                            e.grad[i] += g.data()[j];
                        }
                        e.touched[i] = true;
                    }
                }
            }
        }
        Ok((value, buf))
    }

    /// Fraction of rows whose largest logit (first on ties) is the label.
    pub fn correct(&self, labels: &[usize]) -> usize {
        let logits = self.tape.value(self.logits);
        let k = logits.shape()[1];
        logits
            .data()
            .chunks(k)
            .zip(labels)
            .filter(|(row, &l)| argmax(row) == l)
            .count()
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Updates running statistics from one batch pass.
pub fn update_running_stats(store: &mut ParamStore, stats: &[(String, BatchStats)], momentum: f64) {
    for (k, s) in stats {
        if let Some(state) = store.bn_mut().get_mut(k) {
            state.update(s, momentum);
        }
    }
}

/// Accuracy over `data` in sequential batches of `batch_size`.
pub fn evaluate(plan: &NetworkPlan, store: &ParamStore, data: &Dataset, batch_size: usize, mode: BnMode<'_>) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InsufficientData("empty evaluation set".into()));
    }
    let mut correct = 0;
    for idx in data.sequential_batches(batch_size) {
        let (x, labels) = data.batch(&idx);
        let f = plan.forward(store, x, mode)?;
        correct += f.correct(&labels);
    }
    Ok(correct as f64 / data.len() as f64)
}
