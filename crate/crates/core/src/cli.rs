//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::ScenarioFile;
use crate::error::{Error, Result};
use crate::gib;
use crate::output::{self, fmt_f64, CsvTrace};
use crate::sim::{self, SweepGrid};
use crate::surrogate::{self, FitSample};

#[derive(Debug, Parser)]
#[command(name = "goalnet", version, about = "Goal-oriented edge-network resource allocation")]
pub struct Cli {
    /// Scenario file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `scenario.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Worker threads for per-slot device solves and sweeps.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tabulate the relevance/complexity frontier of a source.
    GibFrontier(FrontierArgs),
    /// Run one scenario; writes trace.csv, summary.txt and summary.toml.
    Simulate,
    /// Run a grid of scenarios; writes sweep.csv.
    Sweep(SweepArgs),
    /// Fit the distortion surrogate to measured (m_x, m_s, distortion) samples.
    FitSurrogate(FitArgs),
    /// Check a scenario file and print it with all defaults filled in.
    Validate,
}

#[derive(Debug, Args)]
pub struct FrontierArgs {
    /// Source name under `[gib.sources]`; defaults to the first.
    #[arg(long)]
    pub source: Option<String>,
    #[arg(long, default_value_t = 100)]
    pub beta_count: usize,
    #[arg(long, default_value_t = 1.0)]
    pub beta_min: f64,
    /// Defaults to ten times the largest usable critical value.
    #[arg(long)]
    pub beta_max: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_delimiter = ',')]
    pub d_avg: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub g_avg: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub gamma: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub v: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// CSV with header `m_x,m_s,distortion`.
    #[arg(long)]
    pub data: PathBuf,
}

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_INFEASIBLE: u8 = 3;
pub const EXIT_NUMERICAL: u8 = 4;

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::InvalidSource(_) | Error::Domain(_) | Error::EmptyGrid | Error::Io(_) => {
            EXIT_CONFIG
        }
        Error::IllConditioned { .. } | Error::Numerical(_) | Error::Fit(_) => EXIT_NUMERICAL,
    }
}

/// Parses `args` (program name first) and runs the command; returns the exit status.
pub fn main_with<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads.unwrap_or(0)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return EXIT_CONFIG;
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn load(cli: &Cli) -> Result<ScenarioFile> {
    let path = cli.config.as_deref().ok_or_else(|| Error::config("--config", "a scenario file is required"))?;
    let mut file = ScenarioFile::load(path)?;
    if let Some(seed) = cli.seed {
        file.set_seed(seed)?;
    }
    Ok(file)
}

fn out_dir(cli: &Cli) -> Result<&Path> {
    std::fs::create_dir_all(&cli.out)
        .map_err(|e| Error::config("--out", format!("cannot create {}: {e}", cli.out.display())))?;
    Ok(&cli.out)
}

fn dispatch(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::GibFrontier(a) => gib_frontier(cli, a),
        Command::Simulate => simulate(cli),
        Command::Sweep(a) => sweep(cli, a),
        Command::FitSurrogate(a) => fit_surrogate(cli, a),
        Command::Validate => validate(cli),
    }
}

fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

fn gib_frontier(cli: &Cli, a: &FrontierArgs) -> Result<u8> {
    let file = load(cli)?;
    let (name, source) = file.source(a.source.as_deref())?;
    let spectrum = gib::compute_spectrum(&source)?;
    let usable = spectrum.usable_components();
    if usable == 0 {
        return Err(Error::EmptyGrid);
    }
    let beta_max = a.beta_max.unwrap_or(10.0 * spectrum.critical_betas[usable - 1]);
    if a.beta_count == 0 || !(a.beta_min > 0.0 && beta_max >= a.beta_min && beta_max.is_finite()) {
        return Err(Error::config("--beta-min/--beta-max/--beta-count", "need 0 < beta-min ≤ beta-max and a positive count"));
    }
    let rows = log_spaced(a.beta_min, beta_max, a.beta_count)
        .into_iter()
        .map(|b| gib::rate_point(&source, &spectrum, b))
        .map(|p| p.map(|p| vec![fmt_f64(p.beta), fmt_f64(p.i_xz_bits), fmt_f64(p.i_zy_bits), fmt_f64(p.nmse), fmt_f64(p.entropy_bits)]))
        .collect::<Result<Vec<_>>>()?;
    let dest = out_dir(cli)?.join("frontier.csv");
    output::write_csv(&dest, &["beta", "i_xz_bits", "i_zy_bits", "nmse", "entropy_bits"], &rows)?;
    eprintln!("{} rows for source `{name}` written to {}", rows.len(), dest.display());
    Ok(EXIT_OK)
}

fn simulate(cli: &Cli) -> Result<u8> {
    let scenario = load(cli)?.build()?;
    let dir = out_dir(cli)?;
    let mut trace = CsvTrace::create(&dir.join("trace.csv"))?;
    let summary = sim::run_with_sink(&scenario, &mut trace)?;
    trace.finish()?;
    output::write_atomic(&dir.join("summary.txt"), &output::summary_text(&summary))?;
    output::write_atomic(&dir.join("summary.toml"), &output::summary_toml(&summary)?)?;
    eprintln!(
        "{} after {} slots: p_total = {} W",
        summary.verdict,
        summary.slots_run,
        fmt_f64(summary.p_total)
    );
    Ok(if summary.feasible { EXIT_OK } else { EXIT_INFEASIBLE })
}

fn sweep(cli: &Cli, a: &SweepArgs) -> Result<u8> {
    let file = load(cli)?;
    let from_flags = SweepGrid {
        d_avg: a.d_avg.clone(),
        g_avg: a.g_avg.clone(),
        gamma: a.gamma.clone(),
        v: a.v.clone(),
    };
    let grid = if from_flags.is_empty() {
        file.sweep.clone().unwrap_or_default()
    } else {
        from_flags
    };
    if grid.is_empty() {
        return Err(Error::config("sweep", "empty grid: give --d-avg/--g-avg/--gamma/--v or a [sweep] table"));
    }
    let scenario = file.build()?;
    let rows = sim::sweep(&scenario, &grid).map_err(|e| Error::config("sweep", e.to_string()))?;
    let dest = out_dir(cli)?.join("sweep.csv");
    output::write_csv(&dest, &output::SWEEP_HEADER, &output::sweep_rows(&rows))?;
    let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
    eprintln!("{} grid points ({} failed) written to {}", rows.len(), failed, dest.display());
    Ok(if failed == rows.len() { EXIT_NUMERICAL } else { EXIT_OK })
}

fn fit_surrogate(cli: &Cli, a: &FitArgs) -> Result<u8> {
    let mut reader = csv::Reader::from_path(&a.data).map_err(|e| Error::config("--data", e.to_string()))?;
    let samples = reader
        .deserialize::<FitSample>()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| Error::config(format!("--data row {}", i + 1), e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let p = surrogate::fit(&samples)?;
    let text = format!(
        "a = {}\nb = {}\nc = {}\nfit_residual = {}\n",
        fmt_f64(p.a),
        fmt_f64(p.b),
        fmt_f64(p.c),
        fmt_f64(p.fit_residual.unwrap_or(f64::NAN))
    );
    output::write_atomic(&out_dir(cli)?.join("surrogate.toml"), &text)?;
    print!("{text}");
    Ok(EXIT_OK)
}

fn validate(cli: &Cli) -> Result<u8> {
    let file = load(cli)?;
    if file.scenario.is_some() {
        file.build()?;
    } else {
        for name in file.gib.sources.keys() {
            file.source(Some(name))?;
        }
    }
    print!("{}", file.to_toml()?);
    Ok(EXIT_OK)
}
