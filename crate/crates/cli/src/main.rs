use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use lpdini::harness::{cli_run, CampaignConfig};

/// Numerical verification campaigns for Littlewood-Paley square functions
/// with Dini-continuous kernels.
#[derive(Parser)]
#[command(name = "lpdini", version)]
struct Cli {
    /// JSON campaign configuration; command-line flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Force direct summation everywhere.
    #[arg(long, global = true)]
    oracle: bool,
    #[command(flatten)]
    over: Overrides,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct Overrides {
    #[arg(long, global = true)]
    kernel: Option<String>,
    #[arg(long, global = true)]
    modulus: Option<String>,
    #[arg(long, global = true)]
    function: Option<String>,
    /// Aperture; repeat or comma-separate for several.
    #[arg(long, global = true, value_delimiter = ',')]
    alpha: Vec<f64>,
    #[arg(long, global = true)]
    lambda: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Dini constant of a modulus and the inequality suite.
    Dini,
    /// Sampled kernel conditions and the Fourier decay profile.
    KernelCheck,
    /// Evaluate an operator on the configured input.
    Eval { which: EvalKind },
    /// Calderón-Zygmund decomposition at each height of `rho_grid`.
    Cz {
        #[arg(long, value_delimiter = ',')]
        rho: Vec<f64>,
    },
    /// Build a sparse family for the configured input.
    Sparse,
    /// Run a verification campaign.
    Verify {
        which: VerifyKind,
        /// Sparse family JSON for `verify sparse`.
        #[arg(long)]
        family: Option<PathBuf>,
    },
    /// Time the direct and FFT paths on the configured input.
    Bench,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalKind {
    S,
    Gstar,
}

#[derive(Clone, Copy, ValueEnum)]
enum VerifyKind {
    Sparse,
    Weak,
    Aperture,
    Domination,
    Weighted,
    Marcinkiewicz,
}

fn configure(cli: &Cli) -> anyhow::Result<CampaignConfig> {
    let mut cfg = match &cli.config {
        Some(p) => CampaignConfig::load(p)?,
        None => CampaignConfig::default(),
    };
    cfg.campaign = match &cli.cmd {
        Command::Dini => "dini",
        Command::KernelCheck => "kernel-check",
        Command::Eval { which: EvalKind::S } => "eval-s",
        Command::Eval { which: EvalKind::Gstar } => "eval-gstar",
        Command::Cz { .. } => "cz",
        Command::Sparse => "sparse",
        Command::Verify { which, .. } => match which {
            VerifyKind::Sparse => "verify-sparse",
            VerifyKind::Weak => "verify-weak",
            VerifyKind::Aperture => "verify-aperture",
            VerifyKind::Domination => "verify-domination",
            VerifyKind::Weighted => "verify-weighted",
            VerifyKind::Marcinkiewicz => "verify-marcinkiewicz",
        },
        Command::Bench => "bench",
    }
    .to_string();
    let o = &cli.over;
    if let Some(v) = &o.kernel {
        cfg.kernel = v.clone();
    }
    if let Some(v) = &o.modulus {
        cfg.modulus = v.clone();
    }
    if let Some(v) = &o.function {
        cfg.function = v.clone();
    }
    if !o.alpha.is_empty() {
        cfg.alpha = o.alpha.clone();
    }
    if let Some(v) = o.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = &o.out {
        cfg.out_dir = v.clone();
    }
    match &cli.cmd {
        Command::Cz { rho } if !rho.is_empty() => cfg.rho_grid = rho.clone(),
        Command::Verify { family: Some(f), .. } => cfg.family = Some(f.clone()),
        _ => {}
    }
    Ok(cfg)
}

fn run() -> anyhow::Result<bool> {
    let cli = Cli::parse();
    if let Ok(t) = std::env::var("LPDINI_THREADS") {
        let n: usize = t.parse().context("LPDINI_THREADS must be a positive integer")?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let cfg = configure(&cli)?;
    let summary = cli_run(&cfg, cli.oracle)?;
    if matches!(cli.cmd, Command::Dini) {
        // ten significant digits hide quadrature noise
        let v = summary.items[0].value;
        if !v.is_finite() || v == 0.0 {
            println!("{v:?}");
            report_failures(&summary.failures());
            return Ok(summary.passed);
        }
        let digits = 9 - v.abs().log10().floor() as i32;
        let scale = 10f64.powi(digits);
        println!("{:?}", (v * scale).round() / scale);
    } else {
        for item in &summary.items {
            println!("{} {} {:?} {}", if item.passed { "PASS" } else { "FAIL" }, item.name, item.value, item.detail);
        }
        println!("wrote {}", cfg.out_dir.join("summary.json").display());
    }
    report_failures(&summary.failures());
    Ok(summary.passed)
}

fn report_failures(failed: &[String]) {
    if !failed.is_empty() {
        eprintln!("failing criteria: {}", failed.join(", "));
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
