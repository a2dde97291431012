//! Report data behind the correlation matrix, effect tables, scatter and
//! regret figures, with CSV and static SVG renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bench::BenchTable;
use crate::cell::{CanonicalHash, CellGraph, SearchSpace};
use crate::error::{Error, Result};
use crate::search::{ProxyScorer, RegretCurve};
use crate::stats::{format_ci, mean_ci95, EffectRow};

/// Spearman coefficients of one (space, variant, scheme) cell, one entry per
/// super-net seed. `None` marks a seed excluded because its run diverged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCell {
    pub space: String,
    pub variant: String,
    pub scheme: String,
    pub per_seed: Vec<Option<f64>>,
    pub mean: Option<f64>,
    pub ci95: Option<f64>,
}

impl CorrelationCell {
    pub fn new(space: &str, variant: &str, scheme: &str, per_seed: Vec<Option<f64>>) -> CorrelationCell {
        let kept: Vec<f64> = per_seed.iter().flatten().copied().collect();
        let (mean, ci95) = match kept.len() {
            0 => (None, None),
            1 => (Some(kept[0]), None),
            _ => {
                let (m, h) = mean_ci95(&kept).expect("two or more values");
                (Some(m), Some(h))
            }
        };
        CorrelationCell { space: space.into(), variant: variant.into(), scheme: scheme.into(), per_seed, mean, ci95 }
    }

    /// `mean ± ci`, `mean` for a single seed, `-` when every seed diverged;
    /// a `*` marks cells with excluded seeds.
    pub fn display(&self) -> String {
        let mut s = match (self.mean, self.ci95) {
            (Some(m), Some(h)) => format_ci(m, h, 2),
            (Some(m), None) => format!("{m:.2}"),
            _ => "-".into(),
        };
        if self.per_seed.iter().any(Option::is_none) {
            s.push('*');
        }
        s
    }

    pub fn excluded(&self) -> usize {
        self.per_seed.iter().filter(|v| v.is_none()).count()
    }
}

/// Correlation matrix: rows are (variant, scheme), columns are spaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTable {
    pub fingerprint: String,
    pub seed: u64,
    pub spaces: Vec<String>,
    pub cells: Vec<CorrelationCell>,
}

impl CorrelationTable {
    fn rows(&self) -> Vec<(String, String)> {
        let mut rows: Vec<(String, String)> = Vec::new();
        for c in &self.cells {
            let key = (c.variant.clone(), c.scheme.clone());
            if !rows.contains(&key) {
                rows.push(key);
            }
        }
        rows
    }

    pub fn cell(&self, space: &str, variant: &str, scheme: &str) -> Option<&CorrelationCell> {
        self.cells.iter().find(|c| c.space == space && c.variant == variant && c.scheme == scheme)
    }

    /// Long format: one line per seed.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("space,variant,scheme,seed,spearman\n");
        for c in &self.cells {
            for (i, v) in c.per_seed.iter().enumerate() {
                let v = v.map_or(String::new(), |v| v.to_string());
                let _ = writeln!(s, "{},{},{},{i},{v}", c.space, c.variant, c.scheme);
            }
        }
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut s = format!("| variant | scheme | {} |\n", self.spaces.join(" | "));
        let _ = writeln!(s, "|---|---|{}", "---|".repeat(self.spaces.len()));
        for (variant, scheme) in self.rows() {
            let cols: Vec<String> = self
                .spaces
                .iter()
                .map(|sp| self.cell(sp, &variant, &scheme).map_or("".into(), CorrelationCell::display))
                .collect();
            let _ = writeln!(s, "| {variant} | {scheme} | {} |", cols.join(" | "));
        }
        s
    }
}

/// Effect rows for every space, comparison and top-k budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectTable {
    pub fingerprint: String,
    pub seed: u64,
    pub alpha: f64,
    pub rows: Vec<EffectRow>,
    /// Mean guided-search time after k standalone trainings, per space and k.
    pub budgets: Vec<BudgetMarker>,
}

impl EffectTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("space,paradigm,mean_diff_x100,ci95_x100,p,d,severity_label,highlight\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.space, r.paradigm, r.mean_diff_x100, r.ci95_x100, r.p, r.d, r.severity_label, r.highlight
            );
        }
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| space | paradigm | diff x100 | p | d | severity | highlight |\n|---|---|---|---|---|---|---|\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {:.3} | {:.2} | {} | {} |",
                r.space,
                r.paradigm,
                format_ci(r.mean_diff_x100, r.ci95_x100, 2),
                r.p,
                r.d,
                r.severity_label,
                r.highlight
            );
        }
        s
    }
}

/// Structural split of scatter points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    HasResidual,
    /// Op of the first interior node of the canonical form.
    FirstNodeOp,
}

impl Predicate {
    pub const ALL: [Predicate; 2] = [Predicate::HasResidual, Predicate::FirstNodeOp];

    pub fn name(self) -> &'static str {
        match self {
            Predicate::HasResidual => "has_residual",
            Predicate::FirstNodeOp => "first_node_op",
        }
    }

    pub fn group(self, g: &CellGraph) -> String {
        match self {
            Predicate::HasResidual => if g.has_residual() { "residual" } else { "no-residual" }.into(),
            Predicate::FirstNodeOp => g.canonical_form().ops().first().map_or("none", |o| o.name()).into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub hash: CanonicalHash,
    pub encoding: String,
    pub true_acc: f64,
    pub proxy_acc: f64,
    pub has_residual: String,
    pub first_node_op: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// `bins` equal-width bins over `[lo, hi]`; the last bin is closed.
    pub fn new(values: &[f64], lo: f64, hi: f64, bins: usize) -> Histogram {
        let bins = bins.max(1);
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let b = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
            counts[b] += 1;
        }
        Histogram { edges, counts }
    }
}

/// Mean proxy minus true accuracy over one predicate group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDeviation {
    pub predicate: Predicate,
    pub group: String,
    pub count: usize,
    pub mean_true: f64,
    pub mean_proxy: f64,
    pub mean_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterReport {
    pub label: String,
    pub points: Vec<ScatterPoint>,
    pub true_histogram: Histogram,
    pub proxy_histogram: Histogram,
    pub groups: Vec<GroupDeviation>,
}

pub const HISTOGRAM_BINS: usize = 20;

/// Scores `min(n, |space|)` unique sampled architectures with `scorer` and
/// pairs them with their true mean validation accuracy.
pub fn emit_scatter(
    label: &str,
    scorer: &mut dyn ProxyScorer,
    table: &BenchTable,
    space: &SearchSpace,
    n: usize,
    seed: u64,
) -> Result<ScatterReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = space.sample_indices(n.min(space.len()), &mut rng)?;
    let cells: Vec<&CellGraph> = picks.iter().map(|&i| space.get(i)).collect();
    let mut pairs = Vec::with_capacity(cells.len());
    for g in &cells {
        let r = table.query(g)?;
        pairs.push((r.val_acc_mean, scorer.score(g)?));
    }
    scatter_from_pairs(label, &cells, &pairs)
}

/// Builds a report from already scored cells, `pairs[i] = (true, proxy)`.
pub fn scatter_from_pairs(label: &str, cells: &[&CellGraph], pairs: &[(f64, f64)]) -> Result<ScatterReport> {
    if cells.is_empty() || cells.len() != pairs.len() {
        return Err(Error::InsufficientData("scatter needs one score pair per architecture".into()));
    }
    let points: Vec<ScatterPoint> = cells
        .iter()
        .zip(pairs)
        .map(|(g, &(t, p))| ScatterPoint {
            hash: g.canonical_hash(),
            encoding: g.encoding(),
            true_acc: t,
            proxy_acc: p,
            has_residual: Predicate::HasResidual.group(g),
            first_node_op: Predicate::FirstNodeOp.group(g),
        })
        .collect();
    let all: Vec<f64> = pairs.iter().flat_map(|&(t, p)| [t, p]).collect();
    let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let trues: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let proxies: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut groups = Vec::new();
    for pred in Predicate::ALL {
        let mut acc: BTreeMap<String, (usize, f64, f64)> = BTreeMap::new();
        for pt in &points {
            let key = match pred {
                Predicate::HasResidual => &pt.has_residual,
                Predicate::FirstNodeOp => &pt.first_node_op,
            };
            let e = acc.entry(key.clone()).or_default();
            e.0 += 1;
            e.1 += pt.true_acc;
            e.2 += pt.proxy_acc;
        }
        for (group, (count, t, p)) in acc {
            let (mean_true, mean_proxy) = (t / count as f64, p / count as f64);
            groups.push(GroupDeviation { predicate: pred, group, count, mean_true, mean_proxy, mean_deviation: mean_proxy - mean_true });
        }
    }
    Ok(ScatterReport {
        label: label.into(),
        true_histogram: Histogram::new(&trues, lo, hi, HISTOGRAM_BINS),
        proxy_histogram: Histogram::new(&proxies, lo, hi, HISTOGRAM_BINS),
        points,
        groups,
    })
}

impl ScatterReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("hash,encoding,true_acc,proxy_acc,has_residual,first_node_op\n");
        for p in &self.points {
            let _ = writeln!(s, "{},\"{}\",{},{},{},{}", p.hash, p.encoding, p.true_acc, p.proxy_acc, p.has_residual, p.first_node_op);
        }
        s
    }

    /// Scatter with marginal histograms; points in `dark_group` of
    /// `predicate` are drawn darker.
    pub fn to_svg(&self, predicate: Predicate, dark_group: &str) -> String {
        let (size, margin, hist) = (360.0, 40.0, 60.0);
        let edges = &self.true_histogram.edges;
        let (lo, hi) = (edges[0], edges[edges.len() - 1]);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let x = |v: f64| margin + (v - lo) / span * size;
        let y = |v: f64| margin + hist + size - (v - lo) / span * size;
        let mut svg = Canvas::new(margin * 2.0 + size + hist, margin * 2.0 + size + hist);
        svg.text(margin, 20.0, &self.label);
        svg.rect_outline(margin, margin + hist, size, size);
        for p in &self.points {
            let g = match predicate {
                Predicate::HasResidual => &p.has_residual,
                Predicate::FirstNodeOp => &p.first_node_op,
            };
            let fill = if g == dark_group { "#1f3b73" } else { "#9db4e0" };
            svg.circle(x(p.true_acc), y(p.proxy_acc), 2.5, fill);
        }
        let bar = |h: &Histogram| h.counts.iter().copied().max().unwrap_or(1).max(1) as f64;
        let (tmax, pmax) = (bar(&self.true_histogram), bar(&self.proxy_histogram));
        let bw = size / self.true_histogram.counts.len() as f64;
        for (i, &c) in self.true_histogram.counts.iter().enumerate() {
            let h = c as f64 / tmax * (hist - 5.0);
            svg.rect(margin + i as f64 * bw, margin + hist - h, bw, h, "#888888");
        }
        for (i, &c) in self.proxy_histogram.counts.iter().enumerate() {
            let w = c as f64 / pmax * (hist - 5.0);
            svg.rect(margin + size, margin + hist + size - (i + 1) as f64 * bw, w, bw, "#888888");
        }
        svg.text(margin + size / 2.0 - 40.0, margin * 2.0 + size + hist - 10.0, "true validation accuracy");
        svg.finish()
    }
}

/// Mean regret of one strategy on the shared grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretSeries {
    pub strategy: String,
    pub runs: usize,
    pub mean: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetMarker {
    pub label: String,
    pub time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretPlot {
    pub label: String,
    pub x_scale: String,
    pub y_scale: String,
    pub grid: Vec<f64>,
    pub series: Vec<RegretSeries>,
    pub markers: Vec<BudgetMarker>,
}

/// Resamples every curve onto a log-spaced grid ending at the latest
/// evaluation time, so each curve's final regret is the last grid value.
pub fn emit_regret_plot(
    label: &str,
    groups: &[(String, Vec<RegretCurve>)],
    markers: Vec<BudgetMarker>,
    grid_points: usize,
) -> Result<RegretPlot> {
    if groups.is_empty() {
        return Err(Error::InsufficientData("no runs to plot".into()));
    }
    if let Some((name, _)) = groups.iter().find(|(_, c)| c.len() < 2) {
        return Err(Error::InsufficientData(format!("strategy {name} has fewer than two runs")));
    }
    let times = || groups.iter().flat_map(|(_, cs)| cs.iter().flat_map(|c| c.points.iter().map(|p| p.0)));
    let t_max = times().fold(f64::NEG_INFINITY, f64::max);
    let t_min = times().filter(|&t| t > 0.0).fold(f64::INFINITY, f64::min);
    if !t_max.is_finite() || !t_min.is_finite() {
        return Err(Error::InsufficientData("runs contain no timed evaluations".into()));
    }
    let grid = log_grid(t_min, t_max, grid_points.max(2));
    let mut series = Vec::with_capacity(groups.len());
    for (strategy, curves) in groups {
        let (mut mean, mut lo, mut hi) = (Vec::new(), Vec::new(), Vec::new());
        for &t in &grid {
            let vals: Vec<f64> = curves.iter().map(|c| c.at(t)).collect();
            let (m, h) = mean_ci95(&vals)?;
            mean.push(m);
            lo.push(m - h);
            hi.push(m + h);
        }
        series.push(RegretSeries { strategy: strategy.clone(), runs: curves.len(), mean, ci_low: lo, ci_high: hi });
    }
    Ok(RegretPlot { label: label.into(), x_scale: "log".into(), y_scale: "log".into(), grid, series, markers })
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if hi <= lo {
        return vec![hi];
    }
    let (a, b) = (lo.ln(), hi.ln());
    let mut g: Vec<f64> = (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect();
    g[0] = lo;
    g[n - 1] = hi;
    g
}

impl RegretPlot {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("strategy,time_s,mean_regret,ci_low,ci_high\n");
        for ser in &self.series {
            for (i, t) in self.grid.iter().enumerate() {
                let _ = writeln!(s, "{},{t},{},{},{}", ser.strategy, ser.mean[i], ser.ci_low[i], ser.ci_high[i]);
            }
        }
        s
    }

    /// Log-log rendering; regrets at or below `1e-4` sit on the bottom axis.
    pub fn to_svg(&self) -> String {
        let (w, h, m) = (520.0, 320.0, 50.0);
        let floor = 1e-4_f64;
        let ymax = self
            .series
            .iter()
            .flat_map(|s| s.ci_high.iter().copied())
            .fold(floor * 10.0, f64::max);
        let (x0, x1) = (self.grid[0].ln(), self.grid[self.grid.len() - 1].ln());
        let xs = if x1 > x0 { x1 - x0 } else { 1.0 };
        let (y0, y1) = (floor.ln(), ymax.ln());
        let x = |t: f64| m + (t.ln() - x0) / xs * w;
        let y = |r: f64| m + h - (r.max(floor).ln() - y0) / (y1 - y0) * h;
        let palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];
        let mut svg = Canvas::new(w + 2.0 * m + 120.0, h + 2.0 * m);
        svg.text(m, 20.0, &self.label);
        svg.rect_outline(m, m, w, h);
        for (k, s) in self.series.iter().enumerate() {
            let color = palette[k % palette.len()];
            let mut band: Vec<(f64, f64)> = self.grid.iter().zip(&s.ci_high).map(|(&t, &r)| (x(t), y(r))).collect();
            band.extend(self.grid.iter().zip(&s.ci_low).rev().map(|(&t, &r)| (x(t), y(r))));
            svg.polygon(&band, color, 0.2);
            let line: Vec<(f64, f64)> = self.grid.iter().zip(&s.mean).map(|(&t, &r)| (x(t), y(r))).collect();
            svg.polyline(&line, color);
            svg.text(m + w + 10.0, m + 15.0 + 18.0 * k as f64, &s.strategy);
        }
        for mk in &self.markers {
            if mk.time_s > 0.0 {
                let xm = x(mk.time_s.clamp(self.grid[0], self.grid[self.grid.len() - 1]));
                svg.polyline(&[(xm, m), (xm, m + h)], "#555555");
                svg.text(xm + 2.0, m + 12.0, &mk.label);
            }
        }
        svg.text(m + w / 2.0 - 30.0, h + 2.0 * m - 10.0, "time (s)");
        svg.finish()
    }
}

/// Minimal SVG writer.
struct Canvas {
    body: String,
}

impl Canvas {
    fn new(w: f64, h: f64) -> Canvas {
        Canvas {
            body: format!(
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
            ),
        }
    }

    fn circle(&mut self, x: f64, y: f64, r: f64, fill: &str) {
        let _ = writeln!(self.body, "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"{r}\" fill=\"{fill}\"/>");
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        let _ = writeln!(self.body, "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{w:.2}\" height=\"{h:.2}\" fill=\"{fill}\"/>");
    }

    fn rect_outline(&mut self, x: f64, y: f64, w: f64, h: f64) {
        let _ = writeln!(self.body, "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{w:.2}\" height=\"{h:.2}\" fill=\"none\" stroke=\"black\"/>");
    }

    fn points(pts: &[(f64, f64)]) -> String {
        pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect::<Vec<_>>().join(" ")
    }

    fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str) {
        let _ = writeln!(self.body, "<polyline points=\"{}\" fill=\"none\" stroke=\"{stroke}\" stroke-width=\"1.5\"/>", Self::points(pts));
    }

    fn polygon(&mut self, pts: &[(f64, f64)], fill: &str, opacity: f64) {
        let _ = writeln!(self.body, "<polygon points=\"{}\" fill=\"{fill}\" fill-opacity=\"{opacity}\" stroke=\"none\"/>", Self::points(pts));
    }

    fn text(&mut self, x: f64, y: f64, s: &str) {
        let esc = s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
        let _ = writeln!(self.body, "<text x=\"{x:.2}\" y=\"{y:.2}\">{esc}</text>");
    }

    fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}
