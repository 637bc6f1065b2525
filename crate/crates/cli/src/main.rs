use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use incastlab_core::experiment::{
    pool_summaries, replay, run_experiment_with, ExperimentConfig, Fixture, Preset, ReplayRow,
};
use incastlab_core::hypothesis::{
    cost, optimal_threshold_closed_form, optimal_threshold_grid, roc_point, CostParams,
    HypothesisParams, DEFAULT_LAMBDA_FLOOR_PER_NS,
};
use incastlab_core::metrics::{compute_metrics, summary_csv_row, MetricsSummary, SUMMARY_CSV_HEADER};
use incastlab_core::model::FlowArrival;
use incastlab_core::netsim::{parse_trace, SimOutput};
use incastlab_core::sampling::{sample_exponential, sample_half_normal, seeded_rng, HalfNormalScale};

#[derive(Parser, Debug)]
#[command(name = "incastlab", version, about = "Incast detection experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON configuration file
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed override (base seed for simulations, sampling seed for `roc`)
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Omit the generation-time header line from JSONL outputs
    #[arg(long, global = true)]
    no_timestamp: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Cost-optimal interval threshold: closed form, grid oracle and cost curve
    Optimize,
    /// Analytic ROC curves, optionally with Monte-Carlo estimates
    Roc,
    /// Run a simulation experiment from a config file or a preset
    Simulate {
        /// Built-in experiment set: table3-incast-only or table4-mixed
        #[arg(long, conflicts_with = "config")]
        preset: Option<String>,
    },
    /// Replay a built-in verdict fixture (table1 or table2)
    Replay { fixture: String },
    /// Recompute the summary of a `simulate` output directory from its traces
    Report {
        /// Directory written by `simulate` for one experiment
        dir: PathBuf,
    },
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
enum Failure {
    Mismatch(String),
    Usage(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Usage(e)
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Optimize => cmd_optimize(&cli.common),
        Command::Roc => cmd_roc(&cli.common),
        Command::Simulate { preset } => cmd_simulate(&cli.common, preset.as_deref()),
        Command::Replay { fixture } => cmd_replay(fixture),
        Command::Report { dir } => cmd_report(&cli.common, dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Mismatch(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn require_config(common: &Common, cmd: &str) -> anyhow::Result<PathBuf> {
    common.config.clone().ok_or_else(|| anyhow!("`{cmd}` needs --config PATH"))
}

fn create_out(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn create_file(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn header_line(common: &Common) -> Option<String> {
    (!common.no_timestamp)
        .then(|| format!("# generated by incastlab at {}", chrono::Utc::now().to_rfc3339()))
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizeParams {
    lambda11_per_ns: f64,
    card_i: u32,
    sigma_ns: f64,
    #[serde(default = "default_floor")]
    lambda_floor_per_ns: f64,
    c_fn: f64,
    c_fp: f64,
    /// Upper end of the search and of the cost curve (default 20 sigma).
    gamma_max_ns: Option<f64>,
    #[serde(default = "default_grid_steps")]
    grid_steps: usize,
    #[serde(default = "default_curve_points")]
    curve_points: usize,
    /// EWMA weight of a detector that will use the threshold; checked only.
    alpha: Option<f64>,
}

fn default_floor() -> f64 {
    DEFAULT_LAMBDA_FLOOR_PER_NS
}

fn default_grid_steps() -> usize {
    1000
}

fn default_curve_points() -> usize {
    201
}

#[derive(Debug, Serialize)]
struct OptimizeReport {
    closed_form_eps_ns: Option<f64>,
    closed_form_note: Option<String>,
    grid_eps_ns: f64,
    relative_gap: Option<f64>,
    in_regime: bool,
    min_cost: f64,
}

fn cmd_optimize(common: &Common) -> CmdResult {
    let path = require_config(common, "optimize")?;
    let cfg: OptimizeParams = read_json(&path)?;
    if let Some(a) = cfg.alpha {
        if !(a > 0.0 && a < 1.0) {
            return Err(anyhow!("alpha must lie in (0, 1), got {a}").into());
        }
    }
    let p = HypothesisParams::with_floor(cfg.lambda11_per_ns, cfg.card_i, cfg.sigma_ns, cfg.lambda_floor_per_ns)
        .map_err(anyhow::Error::from)?;
    let c = CostParams::new(cfg.c_fn, cfg.c_fp).map_err(anyhow::Error::from)?;
    if cfg.curve_points < 2 {
        return Err(anyhow!("curve_points must be >= 2").into());
    }
    let gamma_max = cfg.gamma_max_ns.unwrap_or(20.0 * p.sigma_ns);
    let grid = optimal_threshold_grid(&p, &c, gamma_max, cfg.grid_steps).map_err(anyhow::Error::from)?;
    let (closed, note) = match optimal_threshold_closed_form(&p, &c) {
        Ok(e) => (Some(e), None),
        Err(e) => (None, Some(format!("{e}; falling back to the grid optimum"))),
    };
    let report = OptimizeReport {
        closed_form_eps_ns: closed,
        closed_form_note: note.clone(),
        grid_eps_ns: grid,
        relative_gap: closed.map(|e| (grid - e).abs() / e),
        in_regime: p.in_regime(),
        min_cost: cost(closed.unwrap_or(grid), &p, &c),
    };

    create_out(&common.out)?;
    let curve_path = common.out.join("cost_curve.csv");
    let mut w = create_file(&curve_path)?;
    writeln!(w, "gamma_ns,cost,fpr,tpr").context("writing cost curve")?;
    for i in 0..cfg.curve_points {
        let g = gamma_max * i as f64 / (cfg.curve_points - 1) as f64;
        let r = roc_point(g, &p);
        writeln!(w, "{g},{},{},{}", cost(g, &p, &c), r.fpr, r.tpr).context("writing cost curve")?;
    }
    w.flush().context("writing cost curve")?;
    let json_path = common.out.join("optimize.json");
    fs::write(&json_path, serde_json::to_string_pretty(&report).context("encoding report")? + "\n")
        .with_context(|| format!("writing {}", json_path.display()))?;

    match closed {
        Some(e) => println!("closed-form eps* = {e:.6} ns"),
        None => println!("closed-form eps* unavailable: {}", note.unwrap_or_default()),
    }
    match report.relative_gap {
        Some(gap) => println!("grid eps*        = {grid:.6} ns (relative gap {gap:.2e})"),
        None => println!("grid eps*        = {grid:.6} ns"),
    }
    if !p.in_regime() {
        println!("note: sigma * lambda / |I| = {:.3e} is outside the small-offset regime", p.sigma_ns * p.beta());
    }
    println!("cost curve: {}", curve_path.display());
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RocParams {
    lambda11_per_ns: OneOrMany,
    card_i: u32,
    sigma_ns: f64,
    #[serde(default = "default_floor")]
    lambda_floor_per_ns: f64,
    /// Upper end of the gamma grid (default 10 sigma).
    gamma_max_ns: Option<f64>,
    #[serde(default = "default_curve_points")]
    points: usize,
    /// Samples per hypothesis for the Monte-Carlo columns; none when absent.
    monte_carlo_samples: Option<usize>,
}

/// Fraction of sorted `samples` that are `<= x`.
fn empirical_cdf(sorted: &[f64], x: f64) -> f64 {
    sorted.partition_point(|&v| v <= x) as f64 / sorted.len() as f64
}

fn cmd_roc(common: &Common) -> CmdResult {
    let path = require_config(common, "roc")?;
    let cfg: RocParams = read_json(&path)?;
    let lambdas = match cfg.lambda11_per_ns {
        OneOrMany::One(l) => vec![l],
        OneOrMany::Many(v) => v,
    };
    if lambdas.is_empty() {
        return Err(anyhow!("lambda11_per_ns list is empty").into());
    }
    if cfg.points < 2 {
        return Err(anyhow!("points must be >= 2").into());
    }
    let seed = common.seed.unwrap_or(1);
    create_out(&common.out)?;
    let csv_path = common.out.join("roc.csv");
    let mut w = create_file(&csv_path)?;
    let mc = cfg.monte_carlo_samples;
    if mc == Some(0) {
        return Err(anyhow!("monte_carlo_samples must be > 0").into());
    }
    let header = if mc.is_some() {
        "lambda11_per_ns,gamma_ns,fpr,tpr,fpr_mc,tpr_mc"
    } else {
        "lambda11_per_ns,gamma_ns,fpr,tpr"
    };
    writeln!(w, "{header}").context("writing roc")?;
    for (k, &lambda) in lambdas.iter().enumerate() {
        let p = HypothesisParams::with_floor(lambda, cfg.card_i, cfg.sigma_ns, cfg.lambda_floor_per_ns)
            .map_err(anyhow::Error::from)?;
        let gamma_max = cfg.gamma_max_ns.unwrap_or(10.0 * p.sigma_ns);
        let samples = match mc {
            Some(n) => {
                let mut rng = seeded_rng(seed, 2 * k as u64);
                let mut h0 = (0..n)
                    .map(|_| sample_exponential(p.beta(), &mut rng))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(anyhow::Error::from)?;
                let scale = HalfNormalScale::new(p.sigma_ns).map_err(anyhow::Error::from)?;
                let mut rng = seeded_rng(seed, 2 * k as u64 + 1);
                let mut h1: Vec<f64> = (0..n).map(|_| sample_half_normal(scale, &mut rng)).collect();
                h0.sort_by(f64::total_cmp);
                h1.sort_by(f64::total_cmp);
                Some((h0, h1))
            }
            None => None,
        };
        for i in 0..cfg.points {
            let g = gamma_max * i as f64 / (cfg.points - 1) as f64;
            let r = roc_point(g, &p);
            let mut line = format!("{lambda},{g},{},{}", r.fpr, r.tpr);
            if let Some((h0, h1)) = &samples {
                // the empty acceptance region of gamma = 0 holds no samples
                let (f, t) = if g == 0.0 { (0.0, 0.0) } else { (empirical_cdf(h0, g), empirical_cdf(h1, g)) };
                line.push_str(&format!(",{f},{t}"));
            }
            writeln!(w, "{line}").context("writing roc")?;
        }
    }
    w.flush().context("writing roc")?;
    println!("{} curve(s) x {} points: {}", lambdas.len(), cfg.points, csv_path.display());
    Ok(())
}

fn experiment_dir_name(cfg: &ExperimentConfig) -> String {
    cfg.name.clone().unwrap_or_else(|| "experiment".into())
}

fn trace_file(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("trace_seed{seed}.jsonl"))
}

fn flows_file(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("flows_seed{seed}.jsonl"))
}

/// Where an experiment's traces and summary go.
struct Layout {
    dir: PathBuf,
    traces: PathBuf,
    summary_csv: PathBuf,
}

impl Layout {
    fn new(out: &Path, cfg: &ExperimentConfig) -> Self {
        let dir = out.join(experiment_dir_name(cfg));
        let traces = cfg.outputs.trace_path.as_ref().map(PathBuf::from).unwrap_or_else(|| dir.clone());
        let summary_csv = cfg
            .outputs
            .summary_path
            .as_ref()
            .map(PathBuf::from)
            .unwrap_or_else(|| dir.join("summary.csv"));
        Layout { dir, traces, summary_csv }
    }
}

/// Writes the trace and flow files of one seed and scores the trace as
/// written, so that `report` reproduces the summary exactly.
fn write_output(
    common: &Common,
    cfg: &ExperimentConfig,
    traces: &Path,
    seed: u64,
    out: &SimOutput,
) -> anyhow::Result<MetricsSummary> {
    let header = header_line(common);
    let mut text = String::new();
    for e in &out.trace {
        text.push_str(&e.to_json_line());
        text.push('\n');
    }
    let mut w = create_file(&trace_file(traces, seed))?;
    if let Some(h) = &header {
        writeln!(w, "{h}")?;
    }
    w.write_all(text.as_bytes())?;
    w.flush()?;
    let mut w = create_file(&flows_file(traces, seed))?;
    if let Some(h) = &header {
        writeln!(w, "{h}")?;
    }
    for f in &out.flows {
        writeln!(w, "{}", serde_json::to_string(f)?)?;
    }
    w.flush()?;
    let written = parse_trace(&text)?;
    Ok(compute_metrics(&written, &out.flows, &cfg.sim.detectors)?)
}

fn summary_csv(m: &MetricsSummary) -> String {
    let mut s = String::from(SUMMARY_CSV_HEADER);
    s.push('\n');
    for d in &m.detectors {
        s.push_str(&summary_csv_row(d));
        s.push('\n');
    }
    s
}

#[derive(Debug, Serialize)]
struct SummaryFile<'a> {
    name: &'a str,
    seeds: Vec<u64>,
    pooled: &'a MetricsSummary,
    per_seed: Vec<SeedSummary<'a>>,
}

#[derive(Debug, Serialize)]
struct SeedSummary<'a> {
    seed: u64,
    metrics: &'a MetricsSummary,
}

fn print_summary(name: &str, m: &MetricsSummary) {
    println!("== {name} ({} flows)", m.flows);
    println!("{:<7} {:>12} {:>8} {:>8} {:>14} {:>9}", "detector", "threshold", "tpr", "fpr", "mean lat ns", "detected");
    for d in &m.detectors {
        let rate = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        println!(
            "{:<7} {:>12} {:>8} {:>8} {:>14} {:>5}/{}",
            d.detector.as_str(),
            d.threshold,
            rate(d.tpr),
            rate(d.fpr),
            d.latency.mean_ns.map_or("-".to_string(), |x| format!("{x:.1}")),
            d.detected_incasts,
            d.total_incasts
        );
    }
}

fn cmd_simulate(common: &Common, preset: Option<&str>) -> CmdResult {
    let mut configs = match (preset, &common.config) {
        (Some(name), _) => {
            let p: Preset = name.parse().map_err(anyhow::Error::from)?;
            p.experiments().map_err(anyhow::Error::from)?
        }
        (None, Some(path)) => vec![read_json::<ExperimentConfig>(path)?],
        (None, None) => return Err(anyhow!("`simulate` needs --config PATH or --preset NAME").into()),
    };
    if let Some(seed) = common.seed {
        for c in &mut configs {
            c.seeds = None;
            c.base_seed = Some(seed);
        }
    }
    for cfg in &configs {
        cfg.validate().map_err(anyhow::Error::from)?;
    }
    for cfg in &configs {
        let layout = Layout::new(&common.out, cfg);
        create_out(&layout.dir)?;
        create_out(&layout.traces)?;
        if let Some(parent) = layout.summary_csv.parent() {
            create_out(parent)?;
        }
        let resolved = serde_json::to_string_pretty(cfg).context("encoding config")?;
        fs::write(layout.dir.join("config.json"), resolved + "\n").context("writing config.json")?;

        let mut per_seed: Vec<(u64, MetricsSummary)> = Vec::new();
        run_experiment_with(cfg, |seed, _, out| {
            let m = write_output(common, cfg, &layout.traces, seed, out).map_err(|e| {
                incastlab_core::Error::Config(format!("writing outputs of seed {seed}: {e:#}"))
            })?;
            per_seed.push((seed, m));
            Ok(())
        })
        .map_err(anyhow::Error::from)?;
        let parts: Vec<MetricsSummary> = per_seed.iter().map(|(_, m)| m.clone()).collect();
        let pooled = pool_summaries(&parts).map_err(anyhow::Error::from)?;
        let name = experiment_dir_name(cfg);

        fs::write(&layout.summary_csv, summary_csv(&pooled))
            .with_context(|| format!("writing {}", layout.summary_csv.display()))?;
        let mut per_seed_csv = String::from("seed,");
        per_seed_csv.push_str(SUMMARY_CSV_HEADER);
        per_seed_csv.push('\n');
        for (seed, m) in &per_seed {
            for d in &m.detectors {
                per_seed_csv.push_str(&format!("{seed},{}\n", summary_csv_row(d)));
            }
        }
        fs::write(layout.dir.join("per_seed.csv"), per_seed_csv).context("writing per_seed.csv")?;
        let file = SummaryFile {
            name: &name,
            seeds: per_seed.iter().map(|(s, _)| *s).collect(),
            pooled: &pooled,
            per_seed: per_seed.iter().map(|(seed, metrics)| SeedSummary { seed: *seed, metrics }).collect(),
        };
        let json = serde_json::to_string_pretty(&file).context("encoding summary")?;
        fs::write(layout.summary_csv.with_extension("json"), json + "\n").context("writing summary json")?;
        print_summary(&name, &pooled);
    }
    Ok(())
}

fn verdict_cell(verdict: incastlab_core::didie::Verdict, revised: bool) -> String {
    if revised {
        format!("{} (backfilled)", verdict.as_str())
    } else {
        verdict.as_str().to_string()
    }
}

fn cmd_replay(fixture: &str) -> CmdResult {
    let fixture: Fixture = fixture.parse().map_err(anyhow::Error::from)?;
    let outcome = replay(fixture).map_err(anyhow::Error::from)?;
    println!(
        "{:>2} {:>8} {:>6} {:>4} {:>4} {:<20} {:<20} ok",
        "k", "t_ns", "dt_ns", "sip", "dip", "verdict", "expected"
    );
    let mut diffs = Vec::new();
    for r in &outcome.rows {
        let ReplayRow { k, t_ns, dt_ns, sip, dip, verdict, revised, expected, expected_revised } = r;
        let got = verdict_cell(*verdict, *revised);
        let want = verdict_cell(*expected, *expected_revised);
        println!(
            "{k:>2} {t_ns:>8} {:>6} {:>4} {:>4} {got:<20} {want:<20} {}",
            dt_ns.map_or("-".to_string(), |d| d.to_string()),
            format!("S{}", sip + 1),
            format!("S{}", dip + 1),
            if r.matches() { "yes" } else { "NO" }
        );
        if !r.matches() {
            diffs.push(format!("k={k}: got {got}, expected {want}"));
        }
    }
    let m = outcome.metrics().map_err(anyhow::Error::from)?;
    if let Some(d) = m.detectors.first() {
        println!("tpr {}  fpr {}", cell(d.tpr), cell(d.fpr));
    }
    if diffs.is_empty() {
        println!("replay matches");
        Ok(())
    } else {
        Err(Failure::Mismatch(format!("replay mismatch:\n{}", diffs.join("\n"))))
    }
}

fn read_lines_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<Vec<T>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| {
            serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1))
        })
        .collect()
}

fn cmd_report(common: &Common, dir: &Path) -> CmdResult {
    let cfg_path = common.config.clone().unwrap_or_else(|| dir.join("config.json"));
    let cfg: ExperimentConfig = read_json(&cfg_path)?;
    let traces = cfg.outputs.trace_path.as_ref().map(PathBuf::from).unwrap_or_else(|| dir.to_path_buf());
    let seeds = match common.seed {
        Some(s) => vec![s],
        None => cfg.seeds().map_err(anyhow::Error::from)?,
    };
    let mut parts = Vec::new();
    for seed in seeds {
        let path = trace_file(&traces, seed);
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let trace = parse_trace(&text).with_context(|| format!("parsing {}", path.display()))?;
        let flows: Vec<FlowArrival> = read_lines_json(&flows_file(&traces, seed))?;
        let m = compute_metrics(&trace, &flows, &cfg.sim.detectors)
            .with_context(|| format!("scoring seed {seed}"))?;
        parts.push(m);
    }
    let pooled = pool_summaries(&parts).map_err(anyhow::Error::from)?;
    let csv = summary_csv(&pooled);
    let out_dir = if common.out == Path::new("out") { dir.to_path_buf() } else { common.out.clone() };
    create_out(&out_dir)?;
    let path = out_dir.join("report.csv");
    fs::write(&path, &csv).with_context(|| format!("writing {}", path.display()))?;
    print!("{csv}");
    Ok(())
}
