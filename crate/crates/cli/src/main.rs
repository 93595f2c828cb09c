use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use ndn_reuse::config::{parse_value, resolve_key, with_override, ExperimentConfig};
use ndn_reuse::metrics::{self, MeanStd, MetricsReport};
use ndn_reuse::sim::{self, write_trace};

#[derive(Parser)]
#[command(name = "ndn-reuse", version, about = "Run computation-reuse edge experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one config over one or more seeds.
    Run(RunArgs),
    /// Run a config once per value of one parameter.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Dotted config key or alias, e.g. similarity_threshold or hash.num_tables.
        #[arg(long)]
        key: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
    },
    /// Check a config and report every problem found.
    Validate {
        #[arg(short, long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(short, long)]
    config: PathBuf,
    #[arg(short, long, default_value = "out")]
    out: PathBuf,
    /// Seeds: `7`, `1,2,5` or an inclusive range `1..50`. Defaults to the config seed.
    #[arg(long)]
    seeds: Option<String>,
    /// Write an NDJSON event trace per seed.
    #[arg(long)]
    trace: bool,
    /// Compute LSH recall against brute force (slower).
    #[arg(long)]
    recall: bool,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(short, long)]
    jobs: Option<usize>,
}

fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let spec = spec.trim();
    if let Some((a, b)) = spec.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
        if a > b {
            bail!("empty seed range {spec}");
        }
        return Ok((a..=b).collect());
    }
    spec.split(',')
        .map(|s| s.trim().parse::<u64>().with_context(|| format!("bad seed {s:?}")))
        .collect()
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    let source = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    ExperimentConfig::from_toml_str(&source).map_err(|e| {
        let lines: Vec<String> = e.diagnostics.iter().map(|d| format!("{}: {d}", path.display())).collect();
        anyhow::anyhow!(lines.join("\n"))
    })
}

fn write_csv(path: &Path, f: impl FnOnce(BufWriter<File>) -> csv::Result<()>) -> Result<()> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    f(BufWriter::new(file)).with_context(|| format!("writing {}", path.display()))
}

/// Runs one seed and writes its directory.
fn run_seed(cfg: &ExperimentConfig, seed: u64, dir: &Path, recall: bool) -> Result<MetricsReport> {
    let output = sim::run(cfg, seed).with_context(|| format!("seed {seed}"))?;
    let report = metrics::report(&output, recall || cfg.output.measure_recall);
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    fs::write(dir.join("summary.txt"), report.summary_text())?;
    write_csv(&dir.join("completion.csv"), |w| metrics::write_completion_csv(&report, w))?;
    write_csv(&dir.join("breakdown.csv"), |w| metrics::write_breakdown_csv(&report, w))?;
    write_csv(&dir.join("summary.csv"), |w| metrics::write_summary_csv(&report, w))?;
    write_csv(&dir.join("per_en.csv"), |w| metrics::write_per_en_csv(&report, w))?;
    write_csv(&dir.join("sessions.csv"), |w| metrics::write_sessions_csv(&output.sessions, w))?;
    if cfg.output.trace {
        let file = File::create(dir.join("trace.ndjson"))?;
        write_trace(&output.trace, BufWriter::new(file))?;
    }
    Ok(report)
}

fn run_all(cfg: &ExperimentConfig, seeds: &[u64], out: &Path, recall: bool) -> Result<Vec<MetricsReport>> {
    let reports: Vec<MetricsReport> = seeds
        .par_iter()
        .map(|&seed| run_seed(cfg, seed, &out.join(format!("seed-{seed}")), recall))
        .collect::<Result<_>>()?;
    let agg = metrics::aggregate(&reports);
    write_csv(&out.join("aggregate.csv"), |w| metrics::write_aggregate_csv(&agg, w))?;
    Ok(reports)
}

fn prepare(args: &RunArgs) -> Result<(ExperimentConfig, Vec<u64>)> {
    let mut cfg = load(&args.config)?;
    cfg.output.trace |= args.trace;
    let seeds = match &args.seeds {
        Some(s) => parse_seeds(s)?,
        None => vec![cfg.seed],
    };
    if let Some(j) = args.jobs {
        // Only the first call can configure the global pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global();
    }
    Ok((cfg, seeds))
}

fn print_aggregate(agg: &std::collections::BTreeMap<String, MeanStd>) {
    for key in ["percent_reuse", "accuracy", "forwarding_error_rate", "lsh_recall", "mean_ms_all"] {
        if let Some(m) = agg.get(key) {
            println!("  {key:<22} {:.4} ± {:.4} (n={})", m.mean, m.std, m.n);
        }
    }
}

const SWEEP_COLUMNS: [&str; 13] = [
    "percent_reuse",
    "accuracy",
    "forwarding_error_rate",
    "lsh_recall",
    "mean_ms_all",
    "ratio_scratch_over_cs",
    "ratio_scratch_over_en_reuse",
    "scratch_executions",
    "pct_local_cs",
    "pct_network_cs",
    "pct_pit_aggregate",
    "pct_en_reuse",
    "pct_en_scratch",
];

fn sweep(args: &RunArgs, key: &str, values: &[String]) -> Result<()> {
    if values.is_empty() {
        bail!("sweep over {key} needs at least one value (--values a,b,c)");
    }
    let (base, seeds) = prepare(args)?;
    let configs: Vec<(String, ExperimentConfig)> = values
        .iter()
        .map(|v| {
            with_override(&base, key, parse_value(v))
                .map(|c| (v.clone(), c))
                .map_err(|e| anyhow::anyhow!("{}: {e}", args.config.display()))
        })
        .collect::<Result<_>>()?;
    fs::create_dir_all(&args.out)?;
    let path = resolve_key(key);
    let mut w = csv::Writer::from_path(args.out.join("sweep.csv"))?;
    let mut header = vec![path.to_string(), "seeds".to_string()];
    for c in SWEEP_COLUMNS {
        header.push(format!("{c}_mean"));
        header.push(format!("{c}_std"));
    }
    w.write_record(&header)?;
    for (value, cfg) in &configs {
        let dir = args.out.join(format!("{path}={value}"));
        let reports = run_all(cfg, &seeds, &dir, args.recall)?;
        let agg = metrics::aggregate(&reports);
        println!("{path} = {value}");
        print_aggregate(&agg);
        let mut row = vec![value.clone(), seeds.len().to_string()];
        for c in SWEEP_COLUMNS {
            match agg.get(c) {
                Some(m) => row.extend([m.mean.to_string(), m.std.to_string()]),
                None => row.extend([String::new(), String::new()]),
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { config } => load(&config).map(|cfg| {
            println!(
                "{}: ok ({} services, {} tables of {} bits)",
                config.display(),
                cfg.services.len(),
                cfg.hash.num_tables,
                cfg.hash.bits_per_table
            );
        }),
        Command::Run(args) => prepare(&args).and_then(|(cfg, seeds)| {
            let reports = run_all(&cfg, &seeds, &args.out, args.recall)?;
            if let [single] = reports.as_slice() {
                print!("{}", single.summary_text());
            } else {
                println!("{} seeds", reports.len());
                print_aggregate(&metrics::aggregate(&reports));
            }
            Ok(())
        }),
        Command::Sweep { run, key, values } => sweep(&run, &key, &values),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
