//! `polymodel` command-line runner.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use polymodel::backtest::{compute_metrics_with, run_backtest, FilterFeature, FilterSpec, WeightScheme};
use polymodel::panel::save_panel;
use polymodel::pipeline::{
    backtest_span, files, fit_panel, load_references, Pipeline, RunConfig, Stage,
};
use polymodel::synth::{generate_synthetic, SyntheticSpec};
use polymodel::trend::index_predictions;
use polymodel::{Error, Result};

/// `println!` that exits quietly when stdout is a closed pipe (`polymodel report | head`).
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write;
        if let Err(e) = writeln!(std::io::stdout().lock(), $($arg)*) {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                std::process::exit(0);
            }
            panic!("failed printing to stdout: {e}");
        }
    }};
}

/// Environment variable naming the default output root.
const OUT_ENV: &str = "POLYMODEL_OUT";

#[derive(Parser)]
#[command(name = "polymodel", version, about = "PolyModel fund analytics: fits, scores, features, trend model and backtests")]
struct Cli {
    /// Worker threads for fits, shuffles and grid cells.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Log progress to stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config and $POLYMODEL_OUT.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Shuffles per permutation test; overrides the config.
    #[arg(long)]
    shuffles: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic panel (fund and factor CSVs).
    Synth {
        /// Synthetic spec JSON.
        #[arg(long, conflicts_with = "desk")]
        spec: Option<PathBuf>,
        /// Use the built-in planted-exposure desk spec instead of a file.
        #[arg(long)]
        desk: bool,
        #[arg(long, default_value_t = 50)]
        funds: usize,
        #[arg(long, default_value_t = 20)]
        factors: usize,
        #[arg(long, default_value_t = 120)]
        months: usize,
        /// Data seed; defaults to the spec's own seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Load and validate the panel, caching it in the output directory.
    Ingest(Common),
    /// Ridge fits on every rolling window (no shuffling).
    Fit(Common),
    /// Rolling fits with target-shuffling P-Value Scores.
    Score(Common),
    /// The SVaR / LTA / LTR / LTS / MRaR / Sharpe feature table.
    Features(Common),
    /// Monthly trend probabilities from the moving-window model.
    Predict(Common),
    /// Backtest one filter/weighting cell, or the whole grid without a manifest.
    Backtest {
        #[command(flatten)]
        common: Common,
        /// Comma-separated filters (LTS, Sharpe, MRaR); "none" for no filter.
        #[arg(long)]
        filters: Option<String>,
        /// Require p > p_threshold.
        #[arg(long)]
        ml: bool,
        /// AUM-weighted instead of even allocation.
        #[arg(long)]
        weighted: bool,
    },
    /// Every stage plus the 32-cell grid report and a manifest.
    Run(Common),
    /// Print the group-mean tables of a finished run.
    Report {
        /// Run directory containing report.json.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Resolve the run directory from this config instead.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn output_dir(flag: Option<&Path>, config: &RunConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| config.output_dir.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("polymodel-out"))
}

fn load_config(c: &Common, workers: Option<usize>) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = RunConfig::from_path(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(n) = c.shuffles {
        cfg.n_shuffles = n;
    }
    if workers.is_some() {
        cfg.workers = workers;
    }
    let out = output_dir(c.out.as_deref(), &cfg);
    Ok((cfg, out))
}

fn pipeline(c: &Common, workers: Option<usize>) -> Result<Pipeline> {
    let (cfg, out) = load_config(c, workers)?;
    set_workers(cfg.workers);
    Pipeline::new(cfg, out)
}

fn set_workers(n: Option<usize>) {
    if let Some(n) = n {
        // the global pool can only be built once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> Result<()> {
    if let Some(d) = path.parent() {
        fs::create_dir_all(d).map_err(|e| io_err(d, e))?;
    }
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source: e,
    }
}

fn parse_filters(s: &str) -> Result<Vec<FilterFeature>> {
    if s.trim().eq_ignore_ascii_case("none") || s.trim().is_empty() {
        return Ok(vec![]);
    }
    s.split(',').map(str::parse).collect()
}

fn print_table(title: &str, axis: &str, rows: &[Value]) {
    out!("{title}");
    for r in rows {
        let Value::Object(m) = r else { continue };
        out!("  {axis} = {}", m.get(axis).map(Value::to_string).unwrap_or_default());
        for (k, v) in m {
            if k == axis {
                continue;
            }
            match v.as_f64() {
                Some(x) => out!("    {k:<28}{x:>14.6}"),
                None => out!("    {k:<28}{v:>14}"),
            }
        }
    }
}

fn cmd_report(dir: &Path) -> Result<()> {
    let path = dir.join(files::REPORT);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let report: Value = serde_json::from_str(&text)?;
    let empty = vec![];
    let arr = |k: &str| report.get(k).and_then(Value::as_array).unwrap_or(&empty).clone();
    print_table("Machine learning", "Using Machine Learning", &arr("by_machine_learning"));
    print_table("Filters", "Filters", &arr("by_filters"));
    print_table("Weighting", "Weighted", &arr("by_weighting"));
    if let Some(best) = report.get("best_performer") {
        print_table("Best performer", "Filters", std::slice::from_ref(best));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let workers = cli.workers;
    match cli.cmd {
        Command::Synth {
            spec,
            desk,
            funds,
            factors,
            months,
            seed,
            out,
        } => {
            set_workers(workers);
            let spec = match (spec, desk) {
                (Some(p), false) => SyntheticSpec::from_path(p)?,
                (None, true) => SyntheticSpec::planted_desk(funds, factors, months, seed.unwrap_or(0)),
                _ => return Err(Error::InvalidArgument("give exactly one of --spec or --desk".into())),
            };
            let seed = seed.unwrap_or(spec.seed);
            let panel = generate_synthetic(&spec, seed)?;
            fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
            save_panel(&panel, out.join("funds.csv"), out.join("factors.csv"))?;
            write_json(&out.join("spec.json"), &SyntheticSpec { seed, ..spec })?;
            out!(
                "wrote {} funds x {} factors x {} months to {}",
                panel.funds.len(),
                panel.factors.len(),
                panel.n_months(),
                out.display()
            );
        }
        Command::Ingest(c) => {
            let mut p = pipeline(&c, workers)?;
            let art = p.run_until(Stage::Ingest)?;
            let panel = art.panel.expect("panel");
            out!(
                "panel {}..{}: {} funds, {} factors -> {}",
                panel.span.0,
                panel.span.1,
                panel.funds.len(),
                panel.factors.len(),
                p.path("panel").display()
            );
        }
        Command::Fit(c) => {
            let mut p = pipeline(&c, workers)?;
            let panel = p.run_until(Stage::Ingest)?.panel.expect("panel");
            let fits = fit_panel(&panel, p.config.regression_window, p.config.lambda);
            let path = p.path("fits.json");
            write_json(&path, &fits)?;
            out!("{} window fits -> {}", fits.len(), path.display());
        }
        Command::Score(c) => {
            let mut p = pipeline(&c, workers)?;
            let scored = p.run_until(Stage::Scores)?.scored.expect("scores");
            out!("{} scored windows -> {}", scored.len(), p.path(files::SCORES).display());
        }
        Command::Features(c) => {
            let mut p = pipeline(&c, workers)?;
            let t = p.run_until(Stage::Features)?.features.expect("features");
            out!("{} feature rows -> {}", t.len(), p.path(files::FEATURES).display());
        }
        Command::Predict(c) => {
            let mut p = pipeline(&c, workers)?;
            let preds = p.run_until(Stage::Predictions)?.predictions.expect("predictions");
            out!("{} predictions -> {}", preds.len(), p.path(files::PREDICTIONS).display());
        }
        Command::Backtest {
            common,
            filters,
            ml,
            weighted,
        } => {
            let mut p = pipeline(&common, workers)?;
            match filters {
                None if !ml && !weighted => {
                    p.run_until(Stage::Grid)?;
                    out!("grid report -> {}", p.path(files::REPORT).display());
                }
                f => {
                    let enabled = parse_filters(f.as_deref().unwrap_or("none"))?;
                    let art = p.run_until(Stage::Predictions)?;
                    let (panel, features, preds) = (
                        art.panel.expect("panel"),
                        art.features.expect("features"),
                        art.predictions.expect("predictions"),
                    );
                    let spec =
                        FilterSpec::with_thresholds(enabled, ml, &p.config.thresholds, p.config.p_threshold);
                    let scheme = if weighted { WeightScheme::AumWeighted } else { WeightScheme::Even };
                    let span = backtest_span(&preds)?;
                    let result = run_backtest(&panel, &features, &index_predictions(&preds), &spec, scheme, span)?;
                    let (bench, rf) = load_references(&p.config)?;
                    let metrics = compute_metrics_with(&result, &bench, rf.as_ref(), false)?;
                    let dir = p.path("backtest");
                    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
                    let csv_path = dir.join("value_path.csv");
                    let file = fs::File::create(&csv_path).map_err(|e| io_err(&csv_path, e))?;
                    result.write_value_path_csv(file)?;
                    let mut m = serde_json::Map::new();
                    m.insert("Filters".into(), spec.label().into());
                    m.insert("Using Machine Learning".into(), ml.into());
                    m.insert("Weighted".into(), weighted.into());
                    m.extend(metrics.table_rows());
                    write_json(&dir.join("metrics.json"), &m)?;
                    out!("{}", serde_json::to_string_pretty(&m)?);
                }
            }
        }
        Command::Run(c) => {
            let mut p = pipeline(&c, workers)?;
            let (_, manifest) = p.run()?;
            let cached: Vec<&str> = manifest
                .stages
                .iter()
                .filter(|s| s.cached)
                .map(|s| s.stage.as_str())
                .collect();
            out!(
                "report -> {}\nmanifest -> {}{}",
                p.path(files::REPORT).display(),
                p.path(files::MANIFEST).display(),
                if cached.is_empty() {
                    String::new()
                } else {
                    format!(" (cached: {})", cached.join(", "))
                }
            );
        }
        Command::Report { out, config } => {
            let dir = match (out, config) {
                (Some(d), _) => d,
                (None, Some(c)) => output_dir(None, &RunConfig::from_path(c)?),
                (None, None) => output_dir(None, &RunConfig::default()),
            };
            cmd_report(&dir)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
