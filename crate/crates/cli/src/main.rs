use std::path::PathBuf;
use std::process::ExitCode;

use bigjump::experiments::{
    cmd_classify, cmd_estimate, cmd_h, cmd_ratio_scan, cmd_reproduce, load_config, run_and_emit, CommandOutput, Emit,
    ExampleId, ExperimentSpec, Format, Outcome,
};
use bigjump::sim::WalkConfig;
use bigjump::Error;
use clap::{Args, Parser, Subcommand};

const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "bigjump", version, about = "Boundary-crossing tails of heavy-tailed random walks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Data file format.
    #[arg(long, default_value = "csv", value_parser = ["csv", "json"])]
    format: String,
    /// Also write SVG plots.
    #[arg(long)]
    svg: bool,
}

#[derive(Args)]
struct Configured {
    /// JSON config file.
    #[arg(long)]
    config: PathBuf,
    /// Master seed, replacing the config's.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand)]
enum Command {
    /// Numerical L / S / S* diagnostics for an increment law.
    Classify {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Tabulate H(x) on a grid.
    H(Configured),
    /// Monte Carlo crossing probabilities.
    Estimate(Configured),
    /// Crossing probabilities joined with H(x).
    RatioScan(Configured),
    /// Run a frozen example scenario and judge it.
    Reproduce {
        /// 1..7, `custom` (needs --config) or `all`.
        #[arg(long)]
        example: String,
        /// Replaces the frozen config.
        #[arg(long)]
        config: Option<PathBuf>,
        /// JSON merge patch applied to the config.
        #[arg(long = "set")]
        overrides: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
}

fn emit_opts(common: &Common, default_dir: &str, verdict_file: bool) -> Result<Emit, Error> {
    Ok(Emit {
        out_dir: common.out.clone().unwrap_or_else(|| PathBuf::from("out").join(default_dir)),
        format: common.format.parse::<Format>()?,
        svg: common.svg,
        verdict_file,
    })
}

fn report(out: &CommandOutput, opts: &Emit) {
    println!("{}", out.verdict_text().trim_end());
    println!("  wrote {}", opts.out_dir.display());
}

fn run(cli: Cli) -> Result<Outcome, Error> {
    match cli.command {
        Command::Classify { config, common } => {
            let cfg = load_config(&config)?;
            let opts = emit_opts(&common, "classify", false)?;
            let (out, _) = run_and_emit(|| cmd_classify(&cfg), &opts)?;
            report(&out, &opts);
            Ok(out.outcome)
        }
        Command::H(c) => {
            let cfg = load_config(&c.config)?;
            let opts = emit_opts(&c.common, "h", false)?;
            let (out, _) = run_and_emit(|| cmd_h(&cfg, c.seed), &opts)?;
            report(&out, &opts);
            Ok(out.outcome)
        }
        Command::Estimate(c) => {
            let cfg: WalkConfig = load_config(&c.config)?;
            let opts = emit_opts(&c.common, "estimate", false)?;
            let (out, _) = run_and_emit(|| cmd_estimate(&cfg, c.seed), &opts)?;
            report(&out, &opts);
            Ok(out.outcome)
        }
        Command::RatioScan(c) => {
            let cfg = load_config(&c.config)?;
            let opts = emit_opts(&c.common, "ratio-scan", false)?;
            let (out, _) = run_and_emit(|| cmd_ratio_scan(&cfg, c.seed), &opts)?;
            report(&out, &opts);
            Ok(out.outcome)
        }
        Command::Reproduce {
            example,
            config,
            overrides,
            seed,
            common,
        } => {
            let patch = overrides
                .map(|s| serde_json::from_str(&s).map_err(|e| Error::Config(format!("--set: {e}"))))
                .transpose()?;
            let ids: Vec<ExampleId> = if example == "all" {
                if config.is_some() {
                    return Err(Error::Config("--config cannot be combined with --example all".into()));
                }
                (1..=7).map(ExampleId::Example).collect()
            } else {
                vec![example.parse()?]
            };
            let mut worst = Outcome::Pass;
            for id in ids {
                let spec = ExperimentSpec {
                    example: id,
                    overrides: patch.clone(),
                    config_path: config.clone(),
                    seed,
                };
                let mut opts = emit_opts(&common, &id.to_string(), true)?;
                if example == "all" {
                    opts.out_dir = common.out.clone().unwrap_or_else(|| PathBuf::from("out")).join(id.to_string());
                }
                let (out, _) = run_and_emit(|| cmd_reproduce(&spec), &opts)?;
                report(&out, &opts);
                worst = match (worst, out.outcome) {
                    (Outcome::Fail, _) | (_, Outcome::Fail) => Outcome::Fail,
                    (Outcome::Inconclusive, _) | (_, Outcome::Inconclusive) => Outcome::Inconclusive,
                    _ => Outcome::Pass,
                };
            }
            Ok(worst)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(outcome) => ExitCode::from(outcome.exit_code() as u8),
        Err(e @ (Error::Config(_) | Error::InvalidArgument(_) | Error::Json(_))) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
