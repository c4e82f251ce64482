mod commands;
mod config;
mod output;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::Settings;
use output::{Outputs, RunManifest};

/// Configuration or usage problem; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Output root used when `--out` is absent.
pub const OUT_ENV: &str = "BFAMILY_OUT";
const DEFAULT_SEED: u64 = 20240611;

#[derive(Parser, Debug)]
#[command(name = "bfamily", version, about = "Lefton simulations and verification suites for the b-family equation")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evolve the nonlinear or linearized flow and export the trajectory.
    Evolve(Common),
    /// Assemble the Schrödinger-form operator and report its low spectrum and coercivity.
    Spectrum(Common),
    /// Run the operator-identity and composition suite.
    Verify(Common),
    /// Decompose a stored trajectory into modulation parameters and defect.
    Modulate(Common),
    /// Perturbed-lefton stability experiment.
    Stability(Common),
    /// Gaussian data in the peakon, ramp-cliff and lefton regimes.
    Regimes(Common),
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    #[arg(long, allow_hyphen_values = true)]
    b: Option<f64>,
    #[arg(long = "A", allow_hyphen_values = true)]
    amplitude: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    xstar: Option<f64>,
    #[arg(long)]
    length: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long = "T")]
    t_final: Option<f64>,
    /// Steps between stored snapshots.
    #[arg(long)]
    stride: Option<usize>,
    /// Half-width of the weighted window.
    #[arg(long)]
    window: Option<f64>,
    /// Output directory (default: $BFAMILY_OUT/<command> or ./bfamily-out/<command>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Flat key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Stored trajectory (`modulate`).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Also write SVG plots.
    #[arg(long)]
    svg: bool,
}

impl Common {
    fn settings(&self) -> Result<Settings> {
        let flags = Settings {
            b: self.b,
            amplitude: self.amplitude,
            x_star: self.xstar,
            length: self.length,
            n: self.n,
            dt: self.dt,
            t_final: self.t_final,
            stride: self.stride,
            window: self.window,
            seed: self.seed,
            input: self.input.clone(),
            svg: self.svg.then_some(true),
            ..Default::default()
        };
        Ok(match &self.config {
            Some(path) => flags.or(Settings::read(path)?),
            None => flags,
        })
    }
}

fn output_dir(common: &Common, command: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| {
        let root = std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("bfamily-out"));
        root.join(command)
    })
}

fn run(cli: Cli) -> Result<bool> {
    let (name, common) = match &cli.command {
        Command::Evolve(c) => ("evolve", c),
        Command::Spectrum(c) => ("spectrum", c),
        Command::Verify(c) => ("verify", c),
        Command::Modulate(c) => ("modulate", c),
        Command::Stability(c) => ("stability", c),
        Command::Regimes(c) => ("regimes", c),
    };
    let settings = common.settings()?;
    let seed = settings.seed.unwrap_or(DEFAULT_SEED);
    let dir = output_dir(common, name);
    let mut out = Outputs::create(&dir, settings.svg.unwrap_or(false))?;
    let outcome = match &cli.command {
        Command::Evolve(_) => commands::evolve_cmd(&settings, &mut out)?,
        Command::Spectrum(_) => commands::spectrum_cmd(&settings, &mut out)?,
        Command::Verify(_) => commands::verify_cmd(&settings, seed, &mut out)?,
        Command::Modulate(_) => commands::modulate_cmd(&settings, &mut out)?,
        Command::Stability(_) => commands::stability_cmd(&settings, &mut out)?,
        Command::Regimes(_) => commands::regimes_cmd(&settings, &mut out)?,
    };
    let manifest = RunManifest {
        command: name.to_string(),
        config_path: common.config.as_ref().map(|p| p.display().to_string()),
        output_dir: out.dir().display().to_string(),
        seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        grid: outcome.grid,
        scheme: outcome.schemes,
        passed: outcome.passed,
        files: Vec::new(),
    };
    let manifest = out.finish(manifest)?;
    println!(
        "{name}: {} ({} files in {})",
        if outcome.passed { "pass" } else { "FAIL" },
        manifest.files.len(),
        manifest.output_dir
    );
    Ok(outcome.passed)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.downcast_ref::<UsageError>().is_some()) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
