#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wsnas::tensor::{Tape, Tensor, Var};

pub type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Var>;

pub struct Case {
    pub inputs: Vec<Tensor>,
    pub build: Build,
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero, for ops with a kink there.
pub fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let t = random_tensor(shape, rng);
    t.map(|v| if v >= 0.0 { v + 0.05 } else { v - 0.05 })
}

fn loss(case: &Case, inputs: &[Tensor], weights: &[f64]) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = (case.build)(&mut tape, &vars);
    let s = tape.weighted_sum(out, weights).unwrap();
    tape.value(s).item()
}

/// Largest relative error between reverse-mode and central-difference
/// gradients of `sum(w * f(inputs))` over every input element.
pub fn max_relative_error(case: &Case, rng: &mut ChaCha8Rng) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = case.inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = (case.build)(&mut tape, &vars);
    let weights: Vec<f64> = (0..tape.value(out).len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let s = tape.weighted_sum(out, &weights).unwrap();
    let grads = tape.backward(s);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (i, input) in case.inputs.iter().enumerate() {
        let analytic = grads.get(vars[i]).cloned().unwrap_or_else(|| Tensor::zeros(input.shape()));
        for j in 0..input.len() {
            let mut plus = case.inputs.clone();
            plus[i].data_mut()[j] += h;
            let mut minus = case.inputs.clone();
            minus[i].data_mut()[j] -= h;
            let numeric = (loss(case, &plus, &weights) - loss(case, &minus, &weights)) / (2.0 * h);
            let a = analytic.data()[j];
            let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-3);
            worst = worst.max(err);
        }
    }
    worst
}

pub const OPS: [&str; 12] = [
    "conv2d", "batch_norm_train", "batch_norm_eval", "relu", "maxpool3x3", "add",
    "concat_channels", "slice_channels", "global_avg_pool", "dense", "softmax_cross_entropy", "scale",
];

/// A random instance of `op`.
pub fn case(op: &str, rng: &mut ChaCha8Rng) -> Case {
    let n = rng.random_range(1..=3);
    let c = rng.random_range(1..=4);
    let h = rng.random_range(1..=5);
    let w = rng.random_range(1..=5);
    let x = [n, c, h, w];
    match op {
        "conv2d" => {
            let k = [1, 3, 5][rng.random_range(0..3)];
            let co = rng.random_range(1..=4);
            Case { inputs: vec![random_tensor(&x, rng), random_tensor(&[co, c, k, k], rng)], build: Box::new(|t, v| t.conv2d(v[0], v[1]).unwrap()) }
        }
        "batch_norm_train" => {
            let n = n.max(2);
            Case {
                inputs: vec![random_tensor(&[n, c, h, w], rng), random_tensor(&[c], rng), random_tensor(&[c], rng)],
                build: Box::new(|t, v| t.batch_norm_train(v[0], v[1], v[2], 1e-5).unwrap().0),
            }
        }
        "batch_norm_eval" => {
            let mean: Vec<f64> = (0..c).map(|_| rng.random_range(-0.5..0.5)).collect();
            let var: Vec<f64> = (0..c).map(|_| rng.random_range(0.2..2.0)).collect();
            Case {
                inputs: vec![random_tensor(&x, rng), random_tensor(&[c], rng), random_tensor(&[c], rng)],
                build: Box::new(move |t, v| t.batch_norm_eval(v[0], v[1], v[2], &mean, &var, 1e-5).unwrap()),
            }
        }
        "relu" => Case { inputs: vec![away_from_zero(&x, rng)], build: Box::new(|t, v| t.relu(v[0])) },
        "maxpool3x3" => Case { inputs: vec![random_tensor(&x, rng)], build: Box::new(|t, v| t.maxpool3x3(v[0]).unwrap()) },
        "add" => {
            let k = rng.random_range(1..=3);
            Case { inputs: (0..k).map(|_| random_tensor(&x, rng)).collect(), build: Box::new(|t, v| t.add(v).unwrap()) }
        }
        "concat_channels" => {
            let k = rng.random_range(1..=3);
            let inputs = (0..k).map(|_| random_tensor(&[n, rng.random_range(1..=3), h, w], rng)).collect();
            Case { inputs, build: Box::new(|t, v| t.concat_channels(v).unwrap()) }
        }
        "slice_channels" => {
            let keep = rng.random_range(1..=c);
            Case { inputs: vec![random_tensor(&x, rng)], build: Box::new(move |t, v| t.slice_channels(v[0], keep).unwrap()) }
        }
        "global_avg_pool" => Case { inputs: vec![random_tensor(&x, rng)], build: Box::new(|t, v| t.global_avg_pool(v[0]).unwrap()) },
        "dense" => {
            let k = rng.random_range(1..=5);
            Case {
                inputs: vec![random_tensor(&[n, c], rng), random_tensor(&[c, k], rng), random_tensor(&[k], rng)],
                build: Box::new(|t, v| t.dense(v[0], v[1], v[2]).unwrap()),
            }
        }
        "softmax_cross_entropy" => {
            let k = rng.random_range(2..=5);
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            Case {
                inputs: vec![random_tensor(&[n, k], rng).map(|v| 3.0 * v)],
                build: Box::new(move |t, v| t.softmax_cross_entropy(v[0], &labels).unwrap()),
            }
        }
        "scale" => {
            let f = rng.random_range(-2.0..2.0);
            Case { inputs: vec![random_tensor(&x, rng)], build: Box::new(move |t, v| t.scale(v[0], f)) }
        }
        other => panic!("unknown op {other}"),
    }
}

/// Worst relative error of each op over `shapes` random instances.
pub fn gradcheck_all(shapes: usize, seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    OPS.iter()
        .map(|&op| {
            let worst = (0..shapes).map(|_| max_relative_error(&case(op, &mut rng), &mut rng)).fold(0.0, f64::max);
            (op, worst)
        })
        .collect()
}

use std::collections::{HashMap, HashSet};
use wsnas::cell::{CanonicalHash, CellGraph, OpLabel, SearchSpaceSpec};

/// Node-relabeling invariant key computed by trying every permutation of
/// the interior nodes, triangular or not.
pub fn iso_key(g: &CellGraph) -> (Vec<(usize, usize)>, Vec<u8>) {
    let n = g.node_count();
    let k = n - 2;
    let edges = g.edges();
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best: Option<(Vec<(usize, usize)>, Vec<u8>)> = None;
    loop {
        let map = |v: usize| if v == 0 || v == n - 1 { v } else { perm[v - 1] + 1 };
        let mut e: Vec<(usize, usize)> = edges.iter().map(|&(a, b)| (map(a), map(b))).collect();
        e.sort_unstable();
        let mut ops = vec![0u8; k];
        for v in 1..n - 1 {
            ops[map(v) - 1] = g.op(v).code();
        }
        let key = (e, ops);
        if best.as_ref().is_none_or(|b| key < *b) {
            best = Some(key);
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    best.expect("at least the identity")
}

fn next_permutation(p: &mut [usize]) -> bool {
    if p.len() < 2 {
        return false;
    }
    let mut i = p.len() - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = p.len() - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Every raw labeled DAG with up to `max_nodes` nodes, pruned, grouped into
/// isomorphism classes by [`iso_key`]. Returns class key -> canonical hashes
/// seen for members of that class.
pub fn oracle_classes(max_nodes: usize, max_edges: usize) -> HashMap<(Vec<(usize, usize)>, Vec<u8>), HashSet<CanonicalHash>> {
    let mut classes: HashMap<_, HashSet<CanonicalHash>> = HashMap::new();
    for n in 2..=max_nodes {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        let labelings = 3usize.pow((n - 2) as u32);
        for mask in 0u32..(1 << pairs.len()) {
            let edges: Vec<(usize, usize)> = pairs.iter().enumerate().filter(|(b, _)| mask >> b & 1 == 1).map(|(_, &e)| e).collect();
            for lab in 0..labelings {
                let ops: Vec<OpLabel> = (0..n - 2).map(|i| OpLabel::ALL[lab / 3usize.pow(i as u32) % 3]).collect();
                let g = CellGraph::from_edges(n, &edges, ops).unwrap();
                let Ok(p) = g.validate_and_prune(max_nodes, max_edges) else { continue };
                classes.entry(iso_key(&p)).or_default().insert(p.canonical_hash());
            }
        }
    }
    classes
}

/// Spearman's rho straight from its definition: ranks by pairwise counting,
/// then the product-moment formula.
pub fn spearman_by_definition(a: &[f64], b: &[f64]) -> f64 {
    let rank = |xs: &[f64]| -> Vec<f64> {
        xs.iter()
            .map(|&x| {
                let below = xs.iter().filter(|&&y| y < x).count() as f64;
                let tied = xs.iter().filter(|&&y| y == x).count() as f64;
                below + (tied + 1.0) / 2.0
            })
            .collect()
    };
    let (ra, rb) = (rank(a), rank(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for i in 0..a.len() {
        num += (ra[i] - ma) * (rb[i] - mb);
        da += (ra[i] - ma).powi(2);
        db += (rb[i] - mb).powi(2);
    }
    num / (da * db).sqrt()
}

#[derive(serde::Deserialize)]
pub struct StatisticFixture {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

#[derive(serde::Deserialize)]
pub struct SampleFixture {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

#[derive(serde::Deserialize)]
pub struct TTestFixtures {
    pub statistics: Vec<StatisticFixture>,
    pub samples: Vec<SampleFixture>,
}

pub fn t_test_fixtures() -> TTestFixtures {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/t_test.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Largest p-value deviation from the fixture set.
pub fn t_test_fixture_error() -> f64 {
    let fx = t_test_fixtures();
    let mut worst: f64 = 0.0;
    for s in &fx.statistics {
        worst = worst.max((wsnas::stats::t_test_p_value(s.t, s.df) - s.p).abs());
    }
    for s in &fx.samples {
        let r = wsnas::stats::two_sample_test(&s.a, &s.b).unwrap();
        assert!((r.t - s.t).abs() < 1e-9 * s.t.abs().max(1.0), "t {} vs {}", r.t, s.t);
        assert_eq!(r.n_a + r.n_b - 2, s.df as usize);
        worst = worst.max((r.p_value - s.p).abs());
    }
    worst
}

/// Share of null-hypothesis simulations rejected at `alpha`.
pub fn null_rejection_rate(simulations: usize, n: usize, alpha: f64, seed: u64) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rejected = 0;
    for _ in 0..simulations {
        let a: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        if wsnas::stats::two_sample_test(&a, &b).unwrap().p_value < alpha {
            rejected += 1;
        }
    }
    rejected as f64 / simulations as f64
}

/// Share of simulations whose measured Cohen's d for groups of `n_a` and
/// `n_b` standard normals, shifted by `d`, lands in `[lo, hi]`.
pub fn effect_size_coverage(simulations: usize, n_a: usize, n_b: usize, d: f64, (lo, hi): (f64, f64), seed: u64) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inside = 0;
    for _ in 0..simulations {
        let a: Vec<f64> = (0..n_a).map(|_| StandardNormal.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..n_b).map(|_| d + Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
        let measured = wsnas::stats::two_sample_test(&b, &a).unwrap().cohens_d;
        if (lo..=hi).contains(&measured) {
            inside += 1;
        }
    }
    inside as f64 / simulations as f64
}

fn max_buffer_diff(a: &wsnas::network::GradBuffer, b: &wsnas::network::GradBuffer) -> f64 {
    let mut worst: f64 = 0.0;
    for (k, ga) in &a.grads {
        match b.grads.get(k) {
            Some(gb) => {
                for (x, y) in ga.grad.iter().zip(&gb.grad) {
                    worst = worst.max((x - y).abs());
                }
            }
            None => worst = worst.max(ga.grad.iter().fold(0.0, |m, x| m.max(x.abs()))),
        }
    }
    for (k, gb) in &b.grads {
        if !a.grads.contains_key(k) {
            worst = worst.max(gb.grad.iter().fold(0.0, |m, x| m.max(x.abs())));
        }
    }
    worst
}

/// Gradient estimator identities on every cell of `full@v3e9` at fixed
/// weights: (uniform average vs. probability-weighted expectation, mean of
/// three single-sample gradients vs. one three-sample step).
pub fn estimator_errors() -> (f64, f64) {
    use wsnas::cell::{MacroConfig, SearchSpace};
    use wsnas::data::Dataset;
    use wsnas::supernet::{SamplerConfig, SuperNet};

    let spec = SearchSpaceSpec::full().with_bounds(3, 9);
    let space = SearchSpace::build(&spec);
    assert!(space.len() <= 20);
    let net = MacroConfig { input_channels: 1, stem_channels: 4, cell_repeats: 1, num_classes: 4 };
    let sn = SuperNet::new(&spec, net, false, 3).unwrap();
    let data = Dataset::generate(6, 8, 0.3, 1).unwrap();
    let (x, labels) = data.batch(&(0..8).collect::<Vec<_>>());

    let sampler = SamplerConfig::uniform(space.len(), 1).unwrap();
    let mut expectation = wsnas::network::GradBuffer::new();
    for (g, p) in space.members().iter().zip(sampler.probabilities()) {
        let single = sn.compute_gradients(std::slice::from_ref(g), &x, &labels).unwrap();
        expectation.accumulate(&single.grads, *p);
    }
    let average = sn.compute_gradients(space.members(), &x, &labels).unwrap();
    let expectation_err = max_buffer_diff(&average.grads, &expectation);

    let picks = [space.get(0).clone(), space.get(3).clone(), space.get(5).clone()];
    let joint = sn.compute_gradients(&picks, &x, &labels).unwrap();
    let mut mean = wsnas::network::GradBuffer::new();
    for g in &picks {
        mean.accumulate(&sn.compute_gradients(std::slice::from_ref(g), &x, &labels).unwrap().grads, 1.0 / 3.0);
    }
    (expectation_err, max_buffer_diff(&joint.grads, &mean))
}

/// Pearson chi-square p-value of observed counts against probabilities.
pub fn chi_square_p(counts: &[usize], probabilities: &[f64]) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let n: usize = counts.iter().sum();
    let stat: f64 = counts
        .iter()
        .zip(probabilities)
        .map(|(&c, &p)| {
            let e = p * n as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(stat)
}

/// A table over `space` with seeded random accuracies and times, so that the
/// best-validation and best-test cells usually differ.
pub fn synthetic_table(space: &wsnas::cell::SearchSpace, seed: u64) -> wsnas::bench::BenchTable {
    use wsnas::bench::{BenchTable, MetricsRecord, RepeatResult};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = BenchTable::new(format!("synthetic-{seed}"), 1000);
    for g in space.members() {
        let skill: f64 = rng.random_range(0.5..0.9);
        let runs: Vec<RepeatResult> = (0..3)
            .map(|_| RepeatResult {
                val_acc: skill + rng.random_range(-0.02..0.02),
                test_acc: skill + rng.random_range(-0.05..0.05),
                train_time_s: rng.random_range(50.0..150.0),
                diverged: false,
            })
            .collect();
        table.insert(MetricsRecord::from_repeats(g, &runs).unwrap());
    }
    table
}
