//! `microgrid` command line: `train`, `compare` and `export-plots`.
//!
//! Exit codes: 0 on success, 1 for usage or configuration errors, 2 for
//! failures during a run. `MICROGRID_OUT` sets the default output root.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{PricingMode, SetupConfig};
use crate::error::{Error, Result};
use crate::plot;
use crate::sim::{compare_policies, Simulation};

pub const OUT_ENV: &str = "MICROGRID_OUT";
const DEFAULT_OUT: &str = "runs";

#[derive(Debug, Parser)]
#[command(name = "microgrid", version, about = "Microgrid energy-trading simulator with deep Q-learning agents")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one seeded run and write its artifacts.
    Train(TrainArgs),
    /// Train all-dynamic and all-constant variants and tabulate the winner per grid.
    Compare(CompareArgs),
    /// Turn a run directory's CSVs into plot-ready summaries and SVG charts.
    ExportPlots(ExportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PricingArg {
    Dynamic,
    Constant,
    PerConfig,
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub iterations: Option<u64>,
    /// Output root; the run goes in `<out>/<name>-seed<seed>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "per-config")]
    pub pricing: PricingArg,
    #[arg(long)]
    pub debug_asserts: bool,
}

#[derive(Debug, clap::Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Comma-separated seeds; defaults to the config's list.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub debug_asserts: bool,
}

#[derive(Debug, clap::Args)]
pub struct ExportArgs {
    pub run_dir: PathBuf,
}

/// Contents of `manifest.toml` in every run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_path: String,
    /// SHA-256 of the config file as read.
    pub config_sha256: String,
    /// SHA-256 of `config.toml` in the run directory, overrides applied.
    pub effective_config_sha256: String,
    pub seed: u64,
    pub iterations: u64,
    pub version: String,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub out_dir: String,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::config("manifest", e.to_string()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn out_root(out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn load_config(path: &Path, iterations: Option<u64>, debug_asserts: bool) -> Result<(SetupConfig, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::config("config", format!("config not found: {}", path.display())),
        _ => Error::Io(e),
    })?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| Error::config("config", "not valid UTF-8"))?;
    let mut config = SetupConfig::from_toml(&text)?;
    if let Some(n) = iterations {
        config.training.iterations = n;
    }
    config.training.debug_asserts |= debug_asserts;
    config.validate()?;
    Ok((config, bytes))
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a).map(|dir| println!("{}", dir.display())),
        Command::Compare(a) => cmd_compare(a).map(|path| println!("{}", path.display())),
        Command::ExportPlots(a) => cmd_export_plots(&a.run_dir).map(|_| ()),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } => 1,
        _ => 2,
    }
}

/// Trains and writes the run directory, which is returned.
pub fn cmd_train(args: TrainArgs) -> Result<PathBuf> {
    let (mut config, bytes) = load_config(&args.config, args.iterations, args.debug_asserts)?;
    match args.pricing {
        PricingArg::Dynamic => config = config.with_pricing(PricingMode::Dynamic),
        PricingArg::Constant => config = config.with_pricing(PricingMode::Constant),
        PricingArg::PerConfig => {}
    }
    let seed = args.seed.or_else(|| config.training.seeds.first().copied()).unwrap_or(0);
    let run_id = format!("{}-seed{seed}", config.name);
    let dir = out_root(args.out).join(&run_id);
    fs::create_dir_all(dir.join("checkpoints"))?;

    let effective = config.to_toml();
    fs::write(dir.join("config.toml"), &effective)?;
    let mut manifest = RunManifest {
        config_path: args.config.display().to_string(),
        config_sha256: sha256_hex(&bytes),
        effective_config_sha256: sha256_hex(effective.as_bytes()),
        seed,
        iterations: config.training.iterations,
        version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix: now(),
        finished_unix: None,
        out_dir: dir.display().to_string(),
    };
    write_manifest(&dir, &manifest)?;

    let mut sim = Simulation::new(&config, seed)?;
    let mut metrics = sim.new_metrics();
    sim.run(config.training.iterations, &mut metrics)?;
    metrics.write_csvs(&dir)?;
    for agent in sim.agents() {
        let path = dir.join("checkpoints").join(format!("{run_id}-grid{}.ckpt", agent.id));
        let mut w = BufWriter::new(fs::File::create(path)?);
        agent.write_checkpoint(&mut w, sim.iteration())?;
    }

    manifest.finished_unix = Some(now());
    write_manifest(&dir, &manifest)?;
    Ok(dir)
}

fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    let text = toml::to_string(manifest).map_err(|e| Error::config("manifest", e.to_string()))?;
    fs::write(dir.join("manifest.toml"), text)?;
    Ok(())
}

/// Writes `comparison.csv` and returns its path.
pub fn cmd_compare(args: CompareArgs) -> Result<PathBuf> {
    let (config, _) = load_config(&args.config, args.iterations, args.debug_asserts)?;
    let seeds = args.seeds.unwrap_or_else(|| config.training.seeds.clone());
    let table = compare_policies(&config, &seeds)?;
    let dir = out_root(args.out).join(format!("{}-compare", config.name));
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.toml"), config.to_toml())?;
    let path = dir.join("comparison.csv");
    fs::write(&path, table.to_csv())?;
    Ok(path)
}

fn read_rows(path: &Path, header: &str) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::config("run_dir", format!("missing {}", path.display())),
        _ => Error::Io(e),
    })?;
    let mut lines = text.lines();
    if lines.next() != Some(header) {
        return Err(Error::config("run_dir", format!("{} has an unexpected header", path.display())));
    }
    Ok(lines
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect())
}

fn parse<T: std::str::FromStr>(field: &str, path: &Path) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::config("run_dir", format!("bad value {field:?} in {}", path.display())))
}

/// Aggregated CSVs and SVG charts from a run directory. Returns the files
/// written.
pub fn cmd_export_plots(dir: &Path) -> Result<Vec<PathBuf>> {
    let config = SetupConfig::load(&dir.join("config.toml"))
        .map_err(|_| Error::config("run_dir", format!("no readable config.toml in {}", dir.display())))?;
    let names: Vec<String> = config.grids.iter().map(|g| g.name.clone()).collect();
    let window = config.training.window;
    let mut written = Vec::new();

    let path = dir.join("rewards.csv");
    let mut rewards: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for row in read_rows(&path, "iteration,grid,reward")? {
        let g: usize = parse(&row[1], &path)?;
        let r: f64 = parse(&row[2], &path)?;
        rewards
            .get_mut(g)
            .ok_or_else(|| Error::config("run_dir", format!("grid {g} not in config")))?
            .push(r);
    }
    let mut curve = String::from("grid,iteration,mean_reward\n");
    let mut series = Vec::new();
    for (g, r) in rewards.iter().enumerate() {
        let points = smoothed(r, window);
        for &(i, m) in &points {
            curve.push_str(&format!("{g},{i},{m}\n"));
        }
        series.push((names[g].clone(), points.iter().map(|&(i, m)| (i as f64, m)).collect()));
    }
    written.push(write(dir, "reward_curve.csv", &curve)?);
    written.push(write(dir, "reward_curve.svg", &plot::line_chart("Moving-average reward", &series))?);

    let path = dir.join("price_hist.csv");
    let mut prices: BTreeMap<(usize, String), u64> = BTreeMap::new();
    for row in read_rows(&path, "grid,step,price,count")? {
        *prices.entry((parse(&row[0], &path)?, row[2].clone())).or_default() += parse::<u64>(&row[3], &path)?;
    }
    let labels: Vec<String> = (config.env.min_price()..=config.env.grid_price)
        .map(|p| p.to_string())
        .chain(["none".to_string()])
        .collect();
    let mut agg = String::from("grid,price,count\n");
    let mut bars = Vec::new();
    for (g, name) in names.iter().enumerate() {
        let counts: Vec<f64> = labels
            .iter()
            .map(|p| prices.get(&(g, p.clone())).copied().unwrap_or(0))
            .map(|c| c as f64)
            .collect();
        for (p, c) in labels.iter().zip(&counts) {
            agg.push_str(&format!("{g},{p},{c}\n"));
        }
        bars.push((name.clone(), counts));
    }
    written.push(write(dir, "price_summary.csv", &agg)?);
    written.push(write(dir, "price_hist.svg", &plot::bar_chart("Sell price frequency", &labels, &bars))?);

    let path = dir.join("adl_hist.csv");
    let t = config.env.steps_per_day;
    let mut completed = vec![vec![0u64; t]; names.len()];
    let mut expired = vec![vec![0u64; t]; names.len()];
    for row in read_rows(&path, "grid,job,outcome,step,count")? {
        let g: usize = parse(&row[0], &path)?;
        let step: usize = parse(&row[3], &path)?;
        let c: u64 = parse(&row[4], &path)?;
        let target = if row[2] == "expired" { &mut expired } else { &mut completed };
        if g >= names.len() || step >= t {
            return Err(Error::config("run_dir", format!("row out of range in {}", path.display())));
        }
        target[g][step] += c;
    }
    let mut agg = String::from("grid,step,completed,expired\n");
    for g in 0..names.len() {
        for s in 0..t {
            agg.push_str(&format!("{g},{s},{},{}\n", completed[g][s], expired[g][s]));
        }
    }
    written.push(write(dir, "adl_summary.csv", &agg)?);
    let steps: Vec<String> = (0..t).map(|s| format!("t={s}")).collect();
    let bars: Vec<(String, Vec<f64>)> = names
        .iter()
        .zip(&completed)
        .map(|(n, c)| (n.clone(), c.iter().map(|&v| v as f64).collect()))
        .collect();
    written.push(write(dir, "adl_hist.svg", &plot::bar_chart("ADL completions by step", &steps, &bars))?);
    Ok(written)
}

/// Trailing mean over up to `window` rewards, sampled every `window / 10`
/// iterations and at the last one.
pub fn smoothed(rewards: &[f64], window: usize) -> Vec<(usize, f64)> {
    let window = window.max(1);
    let stride = (window / 10).max(1);
    let n = rewards.len();
    let mut ends: Vec<usize> = (1..=n / stride).map(|k| k * stride).collect();
    if n > 0 && ends.last() != Some(&n) {
        ends.push(n);
    }
    ends.into_iter()
        .map(|end| {
            let start = end.saturating_sub(window);
            (end, rewards[start..end].iter().sum::<f64>() / (end - start) as f64)
        })
        .collect()
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, contents)?;
    Ok(path)
}
