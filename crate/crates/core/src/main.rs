use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use natcity::pipeline::{
    load_config, run_classify, run_ntl_pipeline, run_overlay, run_powerlaw, run_street_pipeline, ClassifyConfig, NtlRunConfig, OverlayConfig,
    PipelineError, PowerLawConfig, RunConfig, StreetRunConfig,
};
use natcity::rastergrid::Connectivity;

#[derive(Parser)]
#[command(name = "natcity", version, about = "Natural-city extraction from nighttime lights and street networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Nighttime-light pipeline.
    Ntl {
        #[command(subcommand)]
        action: NtlAction,
    },
    /// Street-network pipeline.
    Streets {
        #[command(subcommand)]
        action: StreetsAction,
    },
    /// Head/tail breaks on a CSV column.
    Headtail {
        #[command(subcommand)]
        action: HeadtailAction,
    },
    /// Power-law fit with bootstrap goodness of fit.
    Powerlaw {
        #[command(subcommand)]
        action: PowerlawAction,
    },
    /// Compare clusters with a reference urban layer.
    Compare {
        #[command(subcommand)]
        action: CompareAction,
    },
}

#[derive(Args)]
struct Common {
    /// JSON config file; relative paths inside it resolve against its directory.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum NtlAction {
    Run {
        #[command(flatten)]
        common: Common,
        /// Bootstrap seed (overrides `seed`).
        #[arg(long)]
        seed: Option<u64>,
        /// Cell adjacency: `four` or `eight`.
        #[arg(long, value_parser = parse_connectivity)]
        connectivity: Option<Connectivity>,
        /// Use this DN threshold instead of selecting one.
        #[arg(long)]
        threshold: Option<u8>,
        /// Reuse intact stage files from a previous run in the same directory.
        #[arg(long)]
        resume: bool,
    },
}

#[derive(Subcommand)]
enum StreetsAction {
    Run {
        #[command(flatten)]
        common: Common,
        /// Bootstrap seed (overrides `seed`).
        #[arg(long)]
        seed: Option<u64>,
        /// Build clusters from the Delaunay dual.
        #[arg(long)]
        dual_mode: bool,
        /// Use this head/tail level instead of selecting one.
        #[arg(long)]
        level: Option<usize>,
        /// Reuse intact stage files from a previous run in the same directory.
        #[arg(long)]
        resume: bool,
    },
}

#[derive(Subcommand)]
enum HeadtailAction {
    Classify {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Subcommand)]
enum PowerlawAction {
    Fit {
        #[command(flatten)]
        common: Common,
        /// Bootstrap seed (overrides `seed`).
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Subcommand)]
enum CompareAction {
    Overlay {
        #[command(flatten)]
        common: Common,
    },
}

fn parse_connectivity(s: &str) -> Result<Connectivity, String> {
    match s {
        "four" | "4" => Ok(Connectivity::Four),
        "eight" | "8" => Ok(Connectivity::Eight),
        _ => Err(format!("expected `four` or `eight`, got `{s}`")),
    }
}

fn load<C: RunConfig>(path: &Path, apply: impl FnOnce(&mut C)) -> Result<C, PipelineError> {
    let mut cfg: C = load_config(path)?;
    apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

// Output errors (e.g. a closed pipe) are ignored: the run's files are already written.
fn say(text: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn print_json<T: serde::Serialize>(value: &T) {
    say(&serde_json::to_string_pretty(value).expect("serialisable"));
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Ntl { action: NtlAction::Run { common, seed, connectivity, threshold, resume } } => {
            let cfg: NtlRunConfig = load(&common.config, |c: &mut NtlRunConfig| {
                c.out_dir = common.out_dir.or(c.out_dir.take());
                c.seed = seed.unwrap_or(c.seed);
                c.connectivity = connectivity.unwrap_or(c.connectivity);
                if let Some(t) = threshold {
                    c.candidate_override = Some(vec![t]);
                }
                c.resume |= resume;
            })?;
            let out = run_ntl_pipeline(&cfg)?;
            say(&format!("chosen threshold: DN > {} (evaluated on {})", out.chosen_threshold, out.evaluation_year));
            print_json(&out.summary);
        }
        Command::Streets { action: StreetsAction::Run { common, seed, dual_mode, level, resume } } => {
            let cfg: StreetRunConfig = load(&common.config, |c: &mut StreetRunConfig| {
                c.out_dir = common.out_dir.or(c.out_dir.take());
                c.seed = seed.unwrap_or(c.seed);
                c.dual_mode |= dual_mode;
                c.level_override = level.or(c.level_override);
                c.resume |= resume;
            })?;
            let out = run_street_pipeline(&cfg)?;
            say(&format!("chosen level: {} (area > {} km²)", out.chosen_level, out.hierarchy.levels[out.chosen_level].mean));
            print_json(&out.summary);
        }
        Command::Headtail { action: HeadtailAction::Classify { common } } => {
            let cfg: ClassifyConfig = load(&common.config, |c: &mut ClassifyConfig| c.out_dir = common.out_dir.or(c.out_dir.take()))?;
            let h = run_classify(&cfg)?;
            let _ = h.write_csv(std::io::stdout().lock());
        }
        Command::Powerlaw { action: PowerlawAction::Fit { common, seed } } => {
            let cfg: PowerLawConfig = load(&common.config, |c: &mut PowerLawConfig| {
                c.out_dir = common.out_dir.or(c.out_dir.take());
                c.seed = seed.unwrap_or(c.seed);
            })?;
            print_json(&run_powerlaw(&cfg)?);
        }
        Command::Compare { action: CompareAction::Overlay { common } } => {
            let cfg: OverlayConfig = load(&common.config, |c: &mut OverlayConfig| c.out_dir = common.out_dir.or(c.out_dir.take()))?;
            print_json(&run_overlay(&cfg)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // Usage errors exit with clap's code 2, matching config errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
