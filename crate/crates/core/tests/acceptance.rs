//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! The desk experiment writes to `WSNAS_ACCEPTANCE_DIR` when set (and
//! resumes from it), otherwise to a fresh temporary directory.

mod common;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wsnas::bench::BenchTable;
use wsnas::cell::{channel_allocation, enumerate_unique, mutate, SearchSpaceSpec};
use wsnas::config::ExperimentConfig;
use wsnas::error::InvalidReason;
use wsnas::pipeline::{Pipeline, SpaceView, SuperNetRecord};
use wsnas::report::{emit_scatter, CorrelationTable, EffectTable, Predicate};
use wsnas::search::{
    random_search, regret_at_time, regularized_evolution_with, topk_regret, ws_guided_search, AntiScorer, OracleScorer,
    SearchRun,
};
use wsnas::stats::{required_sample_size, spearman_rho, superiority_probability, Alternative, Severity};
use wsnas::supernet::{max_unique_architectures, Variant};
use wsnas::tensor::cosine_lr;

const REFERENCE_CELLS: f64 = 423_000.0;
const COUNT_TOLERANCE: f64 = 0.01;
const ENUMERATION_LIMIT_S: f64 = 30.0 * 60.0;
const ORACLE_MAX_NODES: usize = 5;
const GRADIENT_TOLERANCE: f64 = 1e-5;
const GRADIENT_SHAPES: usize = 20;
const ESTIMATOR_TOLERANCE: f64 = 1e-12;
const MIN_BNS_SPEARMAN: f64 = 0.3;
const CORRELATION_LIMIT_S: f64 = 4.0 * 3600.0;
const SPEARMAN_TOLERANCE: f64 = 1e-12;
const P_VALUE_TOLERANCE: f64 = 1e-9;
const NULL_SIMULATIONS: usize = 10_000;
const NULL_RATE_RANGE: (f64, f64) = (0.03, 0.07);
const SUPERIORITY_TOLERANCE: f64 = 0.01;
const ORACLE_DEVIATION_TOLERANCE: f64 = 1e-12;
const PIPELINE_LIMIT_S: f64 = 8.0 * 3600.0;
const GUIDED_SEEDS: u64 = 30;
const ORACLE_SAMPLE: usize = 30;

#[derive(Default)]
struct Outcome {
    failed: Vec<String>,
    total: usize,
}

impl Outcome {
    fn record(&mut self, id: &str, ok: bool, detail: String) {
        self.total += 1;
        println!("{} {id}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failed.push(id.to_string());
        }
    }
}

fn enumeration(out: &mut Outcome) {
    let start = Instant::now();
    let count = enumerate_unique(&SearchSpaceSpec::full()).count();
    let secs = start.elapsed().as_secs_f64();
    let rel = (count as f64 - REFERENCE_CELLS).abs() / REFERENCE_CELLS;
    let mut oracle_ok = true;
    let mut oracle_detail = Vec::new();
    for v in 2..=ORACLE_MAX_NODES {
        let classes = common::oracle_classes(v, 9);
        let listed = enumerate_unique(&SearchSpaceSpec::full().with_bounds(v, 9)).count();
        let one_hash_each = classes.values().all(|h| h.len() == 1);
        let distinct: std::collections::HashSet<_> = classes.values().flatten().collect();
        oracle_ok &= listed == classes.len() && one_hash_each && distinct.len() == classes.len();
        oracle_detail.push(format!("V<={v}: {listed}/{}", classes.len()));
    }
    out.record(
        "1 enumeration",
        rel <= COUNT_TOLERANCE && secs < ENUMERATION_LIMIT_S && oracle_ok,
        format!(
            "{count} unique cells ({:.2}% from {REFERENCE_CELLS}) in {secs:.1}s; oracle {}",
            100.0 * rel,
            oracle_detail.join(", ")
        ),
    );
}

fn allocation(out: &mut Outcome) {
    let reference = channel_allocation(3, 128).ok();
    let mut worst = None;
    for b in 1..=7 {
        for c in b..=512 {
            let parts = channel_allocation(b, c).unwrap();
            let spread = parts.iter().max().unwrap() - parts.iter().min().unwrap();
            if parts.iter().sum::<usize>() != c || spread > 1 || parts.len() != b {
                worst.get_or_insert((b, c));
            }
        }
    }
    out.record(
        "2 channel allocation",
        reference.as_deref() == Some(&[42, 43, 43][..]) && worst.is_none(),
        format!("(3, 128) -> {reference:?}; violations at {worst:?} over b <= 7, C <= 512"),
    );
}

fn gradients(out: &mut Outcome) {
    let errors = common::gradcheck_all(GRADIENT_SHAPES, 7);
    let (op, worst) = errors.iter().copied().fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let start = cosine_lr(0, 1000, 0.2).unwrap();
    let end = cosine_lr(1000, 1000, 0.2).unwrap();
    out.record(
        "3 gradient integrity",
        worst < GRADIENT_TOLERANCE && start == 0.2 && end == 0.0,
        format!("{} ops x {GRADIENT_SHAPES} shapes, worst rel. err {worst:.2e} ({op}); lr(0) = {start}, lr(T) = {end}", errors.len()),
    );
}

fn estimator(out: &mut Outcome) {
    let (expectation, averaging) = common::estimator_errors();
    out.record(
        "4 gradient estimator",
        expectation < ESTIMATOR_TOLERANCE && averaging < ESTIMATOR_TOLERANCE,
        format!("uniform average vs expectation {expectation:.1e}; 3-sample step vs mean of singles {averaging:.1e}"),
    );
}

fn statistics(out: &mut Outcome) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut spearman_err: f64 = 0.0;
    for n in [5, 17, 100, 500] {
        for _ in 0..20 {
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(0..n / 2 + 2) as f64).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            if let Ok(rho) = spearman_rho(&a, &b) {
                spearman_err = spearman_err.max((rho - common::spearman_by_definition(&a, &b)).abs());
            }
        }
    }
    let p_err = common::t_test_fixture_error();
    let n = required_sample_size(0.5, 0.05, 0.8, 500, Alternative::OneSided);
    let (s39, s52) = (superiority_probability(0.39), superiority_probability(0.52));
    let rate = common::null_rejection_rate(NULL_SIMULATIONS, 30, 0.05, 3);
    let ok = spearman_err < SPEARMAN_TOLERANCE
        && p_err < P_VALUE_TOLERANCE
        && matches!(n, Ok(27..=33))
        && (s39 - 0.61).abs() <= SUPERIORITY_TOLERANCE
        && (s52 - 0.645).abs() <= SUPERIORITY_TOLERANCE
        && (NULL_RATE_RANGE.0..=NULL_RATE_RANGE.1).contains(&rate);
    out.record(
        "7 statistics",
        ok,
        format!(
            "spearman err {spearman_err:.1e}; p-value err {p_err:.1e}; n(0.5, .05, .8, 500) = {n:?}; \
             superiority {s39:.3} / {s52:.3}; null rejection {rate:.4}"
        ),
    );
}

struct Desk {
    pipeline: Pipeline,
    view: SpaceView,
    records: Vec<SuperNetRecord>,
    table1: CorrelationTable,
    table2: EffectTable,
    scatter: Vec<PathBuf>,
    regret: Vec<PathBuf>,
    rs: Vec<SearchRun>,
    re: Vec<SearchRun>,
    ws: Vec<SearchRun>,
    correlation_s: f64,
    total_s: f64,
    resumed: bool,
    _scratch: Option<tempfile::TempDir>,
}

fn progress(msg: &str) {
    eprintln!("[desk] {msg}");
}

fn desk() -> wsnas::Result<Desk> {
    let cfg = ExperimentConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml"))?;
    let (dir, scratch) = match std::env::var_os("WSNAS_ACCEPTANCE_DIR") {
        Some(d) => (PathBuf::from(d), None),
        None => {
            let t = tempfile::tempdir()?;
            (t.path().to_path_buf(), Some(t))
        }
    };
    let resumed = dir.join("manifest.json").exists();
    let start = Instant::now();
    let mut pipeline = Pipeline::open(cfg, &dir)?.with_progress(progress);
    let table1 = pipeline.correlation_table()?;
    let correlation_s = start.elapsed().as_secs_f64();
    let scatter = pipeline.scatter_reports()?;
    let table2 = pipeline.effect_table()?;
    let regret = pipeline.regret_reports()?;
    let total_s = start.elapsed().as_secs_f64();
    let name = pipeline.config().spaces[0].clone();
    let view = pipeline.space_view(&name)?;
    let mut records = Vec::new();
    for v in pipeline.config().variants()? {
        for i in 0..pipeline.config().supernet.seeds {
            records.push(pipeline.train_supernet(&view, &v, i)?);
        }
    }
    let rs = pipeline.random_search_runs(&view)?;
    let re = pipeline.evolution_runs(&view)?;
    let ws = pipeline.guided_runs(&view)?;
    Ok(Desk {
        pipeline,
        view,
        records,
        table1,
        table2,
        scatter,
        regret,
        rs,
        re,
        ws,
        correlation_s,
        total_s,
        resumed,
        _scratch: scratch,
    })
}

fn timing(secs: f64, resumed: bool) -> String {
    if resumed {
        format!("{secs:.0}s (resumed from existing outputs)")
    } else {
        format!("{secs:.0}s")
    }
}

fn correlations(d: &Desk, out: &mut Outcome) {
    let space = &d.view.name;
    let seeds = d.pipeline.config().supernet.seeds;
    let bns = d.table1.cell(space, "baseline", "bns_ft");
    let plain = d.table1.cell(space, "baseline", "no_ft");
    let (mut every_seed, mut detail) = (false, String::from("baseline cells missing"));
    let mut mean_ok = false;
    if let (Some(b), Some(n)) = (bns, plain) {
        let pairs: Vec<String> = b
            .per_seed
            .iter()
            .zip(&n.per_seed)
            .map(|(x, y)| format!("{}/{}", x.map_or("-".into(), |v| format!("{v:.3}")), y.map_or("-".into(), |v| format!("{v:.3}"))))
            .collect();
        every_seed = b.per_seed.len() == seeds
            && b.per_seed.iter().zip(&n.per_seed).all(|(x, y)| matches!((x, y), (Some(x), Some(y)) if x > y));
        mean_ok = b.excluded() == 0 && b.mean.is_some_and(|m| m >= MIN_BNS_SPEARMAN);
        detail = format!("bns_ft/no_ft per seed [{}], bns_ft mean {}", pairs.join(", "), b.display());
    }
    let md = d.table1.to_markdown();
    let mut variants_ok = true;
    let mut variant_detail = Vec::new();
    for v in ["single-kernel", "pro-rata", "avg-3"] {
        for scheme in ["no_ft", "bns_ft"] {
            let cell = d.table1.cell(space, v, scheme);
            let ok = cell.is_some_and(|c| c.per_seed.len() == seeds && c.per_seed.iter().any(Option::is_some))
                && md.contains(&format!("| {v} | {scheme} |"));
            variants_ok &= ok;
            if scheme == "bns_ft" {
                variant_detail.push(format!("{v} {}", cell.map_or("-".into(), |c| c.display())));
            }
        }
    }
    out.record(
        "5 correlation ordering",
        every_seed && mean_ok && variants_ok && d.correlation_s < CORRELATION_LIMIT_S,
        format!("{detail}; variants (bns_ft) {}; table + super-nets {}", variant_detail.join(", "), timing(d.correlation_s, d.resumed)),
    );
}

fn unique_bound(d: &Desk, out: &mut Outcome) {
    let formula = max_unique_architectures(432, 157, 1);
    let mut ok = formula == 67_824;
    let mut worst = (0usize, 0u64);
    let mut logged = 0;
    for r in &d.records {
        if let Some(log) = &r.log {
            logged += 1;
            let bound = max_unique_architectures(log.epochs, log.batches_per_epoch, log.samples_per_step);
            ok &= log.unique_bound == bound && log.unique_architectures as u64 <= bound;
            if log.unique_architectures > worst.0 {
                worst = (log.unique_architectures, bound);
            }
        }
    }
    ok &= logged > 0;
    out.record(
        "6 unique-architecture bound",
        ok,
        format!("{logged} logged runs, largest {} seen of bound {}; 432 x 157 x 1 = {formula}", worst.0, worst.1),
    );
}

fn best_val_scan(table: &BenchTable) -> (f64, Vec<f64>) {
    let best = table.records().iter().map(|r| r.val_acc_mean).fold(f64::MIN, f64::max);
    let tests = table.records().iter().filter(|r| r.val_acc_mean == best).map(|r| r.test_acc_mean).collect();
    (best, tests)
}

fn search(d: &Desk, out: &mut Outcome) -> wsnas::Result<()> {
    let (table, space) = (&d.view.table, &d.view.space);
    let best_test = table.best_test();
    let (best_val, tied_tests) = best_val_scan(table);

    let mut rs_ok = true;
    for seed in 0..20 {
        let run = random_search(table, space, space.len(), seed)?;
        let inc = &run.trace[*run.incumbents().last().expect("nonempty")];
        let regret = run.regret_curve(best_test).final_regret();
        let first_tied = run.trace.iter().find(|e| e.val_acc == best_val).map(|e| e.test_acc);
        rs_ok &= inc.val_acc == best_val
            && Some(inc.test_acc) == first_tied
            && (regret - (best_test - inc.test_acc)).abs() < 1e-15
            && tied_tests.contains(&inc.test_acc);
    }

    let mut re_ok = d.re.iter().map(|r| r.rejected).sum::<usize>() > 0;
    for run in &d.re {
        for i in run.incumbents() {
            re_ok &= table.contains(&run.trace[i].hash) && run.trace[i].val_acc > 0.0;
        }
    }
    let (n, e) = (space.spec().max_nodes, space.spec().max_edges);
    let evo = d.pipeline.config().search.evolution;
    for seed in 0..20 {
        let run = regularized_evolution_with(table, space, &evo, seed, |g, rng| {
            let mut m = mutate(g, n, e, rng);
            if rng.random_bool(0.5) {
                m.pruned = Err(InvalidReason::Disconnected);
            }
            m
        })?;
        re_ok &= run.rejected > 0 && run.incumbents().iter().all(|&i| table.contains(&run.trace[i].hash));
    }

    let baseline = d.records.iter().find(|r| r.variant == Variant::default().name() && r.usable());
    let offset = match baseline {
        Some(r) => d.pipeline.supernet_cost(&d.view, r)?,
        None => 0.0,
    };
    let proxy_cost = d.pipeline.proxy_cost()?;
    let mut oracle_ok = true;
    for seed in 0..GUIDED_SEEDS {
        let run = ws_guided_search(&mut OracleScorer(table), table, space, ORACLE_SAMPLE, offset, proxy_cost, seed)?;
        let curve = run.regret_curve(best_test);
        let sample_best_val = run.trace.iter().map(|t| t.val_acc).fold(f64::MIN, f64::max);
        oracle_ok &= run.trace[0].val_acc == sample_best_val && curve.points[0].1 == curve.final_regret();
    }

    let ws_sample = d.pipeline.config().search.ws_sample.min(space.len());
    let mut anti = Vec::new();
    let mut budgets = Vec::new();
    for seed in 0..GUIDED_SEEDS {
        let run = ws_guided_search(&mut AntiScorer(table), table, space, ws_sample, offset, proxy_cost, seed)?;
        let (r, t) = topk_regret(&run, 1, table)?;
        anti.push(r);
        budgets.push(t);
    }
    let budget = budgets.iter().sum::<f64>() / budgets.len() as f64;
    let anti_mean = anti.iter().sum::<f64>() / anti.len() as f64;
    let rs_mean = d.rs.iter().map(|r| regret_at_time(r, budget, table)).sum::<f64>() / d.rs.len() as f64;

    out.record(
        "8 search correctness",
        rs_ok && re_ok && oracle_ok && anti_mean >= rs_mean,
        format!(
            "exhaustive RS incumbent regret {:.4} (scan); RE invalid mutants rejected {} across {} runs, none incumbent: {re_ok}; \
             oracle first step minimal: {oracle_ok}; anti top-1 regret {anti_mean:.4} vs RS {rs_mean:.4} at {budget:.0}s",
            best_test - tied_tests.iter().copied().fold(f64::MIN, f64::max),
            d.re.iter().map(|r| r.rejected).sum::<usize>(),
            d.re.len()
        ),
    );
    Ok(())
}

fn effects(d: &Desk, out: &mut Outcome) {
    let s = &d.pipeline.config().search;
    let mut missing = Vec::new();
    let mut labels_ok = true;
    for &k in &[1, 10, 20] {
        for p in ["ws", "re"] {
            let paradigm = format!("top-{k} {p}-rs");
            match d.table2.rows.iter().find(|r| r.paradigm == paradigm && r.space == d.view.name) {
                Some(r) => {
                    labels_ok &= r.severity_label == Severity::of(r.d).label()
                        && r.mean_diff_x100.is_finite()
                        && r.ci95_x100.is_finite()
                        && (0.0..=1.0).contains(&r.p)
                }
                None => missing.push(paradigm),
            }
        }
    }
    let thresholds = [(0.19, "small"), (0.2, "slight"), (0.49, "slight"), (0.5, "mild"), (0.8, "mild"), (0.81, "important")]
        .iter()
        .all(|&(x, l)| Severity::of(x).label() == l && Severity::of(-x).label() == l);
    let counts = d.rs.len() == 500 && d.re.len() == 500 && d.ws.len() == 30 && s.rs_seeds == 500 && s.re_seeds == 500 && s.ws_seeds == 30;
    let files = d.pipeline.output_dir().join("table2.md").exists() && !d.regret.is_empty();
    let rows: Vec<String> = d
        .table2
        .rows
        .iter()
        .map(|r| format!("{} {:+.2}±{:.2} p={:.3} d={:+.2} {}", r.paradigm, r.mean_diff_x100, r.ci95_x100, r.p, r.d, r.severity_label))
        .collect();
    out.record(
        "9 effect report",
        missing.is_empty() && labels_ok && thresholds && counts && files && d.total_s < PIPELINE_LIMIT_S,
        format!(
            "runs rs/re/ws = {}/{}/{}; rows [{}]; missing {missing:?}; total {}",
            d.rs.len(),
            d.re.len(),
            d.ws.len(),
            rows.join("; "),
            timing(d.total_s, d.resumed)
        ),
    );
}

fn bias(d: &Desk, out: &mut Outcome) -> wsnas::Result<()> {
    let (table, space) = (&d.view.table, &d.view.space);
    let report = emit_scatter("oracle", &mut OracleScorer(table), table, space, space.len(), 5)?;
    let mut ok = !d.scatter.is_empty();
    let mut worst: f64 = 0.0;
    let mut groups = Vec::new();
    for pred in Predicate::ALL {
        let gs: Vec<_> = report.groups.iter().filter(|g| g.predicate == pred).collect();
        ok &= gs.len() >= 2 && gs.iter().map(|g| g.count).sum::<usize>() == report.points.len();
        for g in gs {
            worst = worst.max(g.mean_deviation.abs());
            groups.push(format!("{}={}", g.group, g.count));
        }
    }
    ok &= worst <= ORACLE_DEVIATION_TOLERANCE;
    out.record(
        "10 bias report",
        ok,
        format!(
            "{} points, groups [{}], worst oracle deviation {worst:.1e}; {} desk scatter reports",
            report.points.len(),
            groups.join(", "),
            d.scatter.len()
        ),
    );
    Ok(())
}

fn main() {
    let mut out = Outcome::default();
    enumeration(&mut out);
    allocation(&mut out);
    gradients(&mut out);
    estimator(&mut out);
    match desk() {
        Ok(d) => {
            correlations(&d, &mut out);
            unique_bound(&d, &mut out);
            statistics(&mut out);
            if let Err(e) = search(&d, &mut out) {
                out.record("8 search correctness", false, format!("error: {e}"));
            }
            effects(&d, &mut out);
            if let Err(e) = bias(&d, &mut out) {
                out.record("10 bias report", false, format!("error: {e}"));
            }
        }
        Err(e) => {
            for id in ["5 correlation ordering", "6 unique-architecture bound", "8 search correctness", "9 effect report", "10 bias report"] {
                out.record(id, false, format!("desk experiment failed: {e}"));
            }
            statistics(&mut out);
        }
    }
    println!("acceptance: {}/{} criteria passed", out.total - out.failed.len(), out.total);
    if !out.failed.is_empty() {
        std::process::exit(1);
    }
}
