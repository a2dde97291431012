use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use wsnas::bench::BenchTable;
use wsnas::cell::{CellGraph, SearchSpace, SearchSpaceSpec, MAX_SUPPORTED_NODES};
use wsnas::config::ExperimentConfig;
use wsnas::pipeline::{Pipeline, SpaceView};
use wsnas::search::SearchRun;
use wsnas::supernet::Variant;
use wsnas::Error;

/// Weight-sharing appraisal toolkit: benchmark tables, super-nets, searches and reports.
#[derive(Parser)]
#[command(name = "wsnas", version)]
struct Cli {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Output root; falls back to the config's `output_dir`, then `wsnas-out`.
    #[arg(long, global = true, env = "WSNAS_OUT")]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Suppress progress messages on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Count the unique cells of a space and optionally list them.
    Enumerate {
        #[arg(long, default_value = "full")]
        space: String,
        /// Write `hash encoding` lines here.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    #[command(subcommand)]
    Bench(BenchCommand),
    #[command(subcommand)]
    Supernet(SupernetCommand),
    /// Correlation matrix of proxy and standalone accuracies.
    Correlate,
    #[command(subcommand)]
    Search(SearchCommand),
    #[command(subcommand)]
    Report(ReportCommand),
    /// Every stage, resuming from existing outputs.
    Run,
    /// Print the effective configuration.
    Config,
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Train every architecture of the base space (resumable).
    Build,
    /// Validate a table file and install it as this experiment's table.
    Import {
        file: PathBuf,
        /// Expected fingerprint; defaults to the configuration's.
        #[arg(long)]
        fingerprint: Option<String>,
    },
    /// Look up one architecture by its `ops=...;adj=...` encoding.
    Query {
        encoding: String,
        /// Table file; defaults to the experiment's table.
        #[arg(long)]
        table: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum SupernetCommand {
    /// Train super-nets; all configured spaces, variants and seeds unless narrowed.
    Train(Selection),
    /// Score the correlation sample with trained super-nets.
    Eval(Selection),
}

#[derive(clap::Args)]
struct Selection {
    #[arg(long)]
    space: Option<String>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    seed: Option<usize>,
}

#[derive(Subcommand)]
enum SearchCommand {
    /// Random search.
    Rs(SpaceArg),
    /// Regularized evolution.
    Re(SpaceArg),
    /// Super-net guided search.
    Ws(SpaceArg),
}

#[derive(clap::Args)]
struct SpaceArg {
    #[arg(long)]
    space: Option<String>,
}

#[derive(Subcommand)]
enum ReportCommand {
    Table1,
    Table2,
    Scatter,
    Regret,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::FingerprintMismatch { .. } | Error::Infeasible(_) => EXIT_CONFIG,
        Error::Numerical(_) | Error::Undefined(_) => EXIT_NUMERICAL,
        _ => EXIT_DATA,
    }
}

fn progress(msg: &str) {
    eprintln!("[wsnas] {msg}");
}

fn load_config(cli: &Cli) -> wsnas::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    Ok(cfg)
}

fn output_root(cli: &Cli, cfg: &ExperimentConfig) -> PathBuf {
    cli.out.clone().or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("wsnas-out"))
}

fn open(cli: &Cli) -> wsnas::Result<Pipeline> {
    let cfg = load_config(cli)?;
    let out = output_root(cli, &cfg);
    let p = Pipeline::open(cfg, &out)?;
    Ok(if cli.quiet { p } else { p.with_progress(progress) })
}

fn views(p: &mut Pipeline, space: &Option<String>) -> wsnas::Result<Vec<SpaceView>> {
    let names = match space {
        Some(s) => {
            if !p.config().spaces.contains(s) {
                return Err(Error::Config(format!("space {s} is not configured")));
            }
            vec![s.clone()]
        }
        None => p.config().spaces.clone(),
    };
    names.iter().map(|n| p.space_view(n)).collect()
}

fn summarize(view: &SpaceView, runs: &[SearchRun], out: &mut impl Write) -> wsnas::Result<()> {
    let best = view.table.best_test();
    let finals: Vec<f64> = runs.iter().map(|r| r.regret_curve(best).final_regret()).collect();
    let mean = finals.iter().sum::<f64>() / finals.len().max(1) as f64;
    let strategy = runs.first().map_or("-", |r| r.strategy.as_str());
    writeln!(out, "{}\t{strategy}\truns={}\tmean_final_regret={mean:.6}", view.name, runs.len())?;
    Ok(())
}

fn supernets(p: &mut Pipeline, sel: &Selection, eval: bool, out: &mut impl Write) -> wsnas::Result<()> {
    let variants: Vec<Variant> = match &sel.variant {
        Some(v) => vec![Variant::parse(v)?],
        None => p.config().variants()?,
    };
    let seeds: Vec<usize> = match sel.seed {
        Some(i) if i >= p.config().supernet.seeds => return Err(Error::Config(format!("seed index {i} is beyond the configured seeds"))),
        Some(i) => vec![i],
        None => (0..p.config().supernet.seeds).collect(),
    };
    for view in views(p, &sel.space)? {
        for v in &variants {
            for &i in &seeds {
                let rec = p.train_supernet(&view, v, i)?;
                let mut line = format!("{}\t{}\tseed{i}\t{:?}", view.name, rec.variant, rec.status);
                if let Some(log) = &rec.log {
                    line.push_str(&format!("\tsteps={}\tunique={}/{}", log.steps, log.unique_architectures, log.unique_bound));
                }
                if eval && rec.usable() {
                    let n = p.proxies(&view, v, i)?.len();
                    line.push_str(&format!("\tproxies={n}"));
                }
                writeln!(out, "{line}")?;
            }
        }
    }
    Ok(())
}

fn enumerate(space: &str, output: Option<&Path>, out: &mut impl Write) -> wsnas::Result<()> {
    let spec = SearchSpaceSpec::parse_name(space)?;
    let start = Instant::now();
    let s = SearchSpace::build(&spec);
    writeln!(out, "{}\t{} unique cells\t{:.1}s", spec.name(), s.len(), start.elapsed().as_secs_f64())?;
    if let Some(path) = output {
        let mut buf = String::with_capacity(s.len() * 64);
        for (g, h) in s.members().iter().zip(s.hashes()) {
            buf.push_str(&format!("{h} {}\n", g.encoding()));
        }
        std::fs::write(path, buf)?;
    }
    Ok(())
}

fn execute(cli: &Cli) -> wsnas::Result<()> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match &cli.command {
        Command::Enumerate { space, output } => enumerate(space, output.as_deref(), &mut out)?,
        Command::Config => {
            let cfg = load_config(cli)?;
            write!(out, "{}", cfg.to_toml()?)?;
            writeln!(out, "# fingerprint {}", cfg.fingerprint())?;
        }
        Command::Bench(BenchCommand::Build) => {
            let mut p = open(cli)?;
            let n = p.bench_table()?.len();
            writeln!(out, "{n} records in {}", p.table_path().display())?;
        }
        Command::Bench(BenchCommand::Import { file, fingerprint }) => {
            let p = open(cli)?;
            let expected = match fingerprint {
                Some(f) => f.clone(),
                None => p.config().build_config()?.fingerprint(),
            };
            let table = BenchTable::import(file, Some(&expected))?;
            let dest = p.table_path();
            std::fs::create_dir_all(dest.parent().expect("has parent"))?;
            table.save(&dest)?;
            writeln!(out, "imported {} records into {}", table.len(), dest.display())?;
        }
        Command::Bench(BenchCommand::Query { encoding, table }) => {
            let path = match table {
                Some(t) => t.clone(),
                None => {
                    let cfg = load_config(cli)?;
                    output_root(cli, &cfg).join("bench/table.jsonl")
                }
            };
            let t = BenchTable::load(&path)?;
            let g = CellGraph::parse_encoding(encoding)?.validate_and_prune(MAX_SUPPORTED_NODES, usize::MAX)?;
            writeln!(out, "{}", serde_json::to_string_pretty(t.query(&g)?)?)?;
        }
        Command::Supernet(SupernetCommand::Train(sel)) => supernets(&mut open(cli)?, sel, false, &mut out)?,
        Command::Supernet(SupernetCommand::Eval(sel)) => supernets(&mut open(cli)?, sel, true, &mut out)?,
        Command::Correlate | Command::Report(ReportCommand::Table1) => {
            let t = open(cli)?.correlation_table()?;
            write!(out, "{}", t.to_markdown())?;
        }
        Command::Search(cmd) => {
            let mut p = open(cli)?;
            let (space, strategy) = match cmd {
                SearchCommand::Rs(a) => (&a.space, "rs"),
                SearchCommand::Re(a) => (&a.space, "re"),
                SearchCommand::Ws(a) => (&a.space, "ws"),
            };
            for view in views(&mut p, space)? {
                let runs = match strategy {
                    "rs" => p.random_search_runs(&view)?,
                    "re" => p.evolution_runs(&view)?,
                    _ => p.guided_runs(&view)?,
                };
                summarize(&view, &runs, &mut out)?;
            }
        }
        Command::Report(ReportCommand::Table2) => {
            let t = open(cli)?.effect_table()?;
            write!(out, "{}", t.to_markdown())?;
        }
        Command::Report(ReportCommand::Scatter) => {
            for path in open(cli)?.scatter_reports()? {
                writeln!(out, "{}", path.display())?;
            }
        }
        Command::Report(ReportCommand::Regret) => {
            for path in open(cli)?.regret_reports()? {
                writeln!(out, "{}", path.display())?;
            }
        }
        Command::Run => {
            let mut p = open(cli)?;
            let summary = p.run()?;
            write!(out, "{}\n{}", summary.table1.to_markdown(), summary.table2.to_markdown())?;
            writeln!(out, "outputs in {}", p.output_dir().display())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
