//! `kgalign`: entity alignment with reliable path reasoning and a
//! relation-aware heterogeneous graph transformer.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

mod commands;
mod config;
mod dataset;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use kgalign_core::KgError;

use commands::Run;
use config::{Settings, UsageError, SEED_ENV};
use dataset::Checkpoint;

#[derive(Parser, Debug)]
#[command(name = "kgalign", version, about = "Knowledge graph entity alignment")]
struct Cli {
    /// Worker threads; 0 uses every core. `--threads 1` is bit-exact.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Validate inputs and write only the run manifest.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Mine reliable relation paths from the training seeds.
    MinePaths {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        tau_sim: Option<f64>,
        /// Count threshold; `inf` keeps nothing.
        #[arg(long)]
        tau_path: Option<String>,
        /// Walk inverse edges as well.
        #[arg(long)]
        inverse: bool,
        /// Print mining statistics as JSON.
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Train the encoders and write a checkpoint directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Output of `mine-paths`, or `none` for relation-only training.
        #[arg(long)]
        paths: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Write the top candidates for every unaligned first-graph entity.
    Align {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long)]
        theta_inf: Option<f64>,
        /// Defaults to `<ckpt>/alignment.tsv`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Rank the test links and report Hits@k and MRR.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        theta_inf: Option<f64>,
        /// `all` or `test`.
        #[arg(long)]
        candidates: Option<String>,
        /// Keep only this fraction of test links, least similar names first.
        #[arg(long)]
        harder: Option<f64>,
        #[arg(long)]
        json: bool,
        /// Defaults to `<ckpt>/eval.manifest.json`.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Build a dataset from the links with the least similar names.
    HarderSplit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        fraction: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

/// Applies file, environment and flag layers on top of `settings`.
fn layer(settings: &mut Settings, common: &Common, flags: &[(&str, Option<String>)]) -> Result<()> {
    if let Some(path) = &common.config {
        settings.apply_file(path)?;
    }
    settings.apply_env(std::env::var(SEED_ENV).ok().as_deref())?;
    settings.apply_pairs(&common.set)?;
    if let Some(seed) = common.seed {
        settings.set("seed", &seed.to_string())?;
    }
    for (key, value) in flags {
        if let Some(v) = value {
            settings.set(key, v)?;
        }
    }
    Ok(())
}

fn fresh(common: &Common, flags: &[(&str, Option<String>)]) -> Result<Settings> {
    let mut s = Settings::default();
    layer(&mut s, common, flags)?;
    Ok(s)
}

fn from_ckpt(dir: &Path, common: &Common, flags: &[(&str, Option<String>)]) -> Result<Checkpoint> {
    Checkpoint::load(dir, |s| layer(s, common, flags))
}

fn opt<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(T::to_string)
}

fn execute(cli: Cli) -> Result<()> {
    let threads = rayon::current_num_threads();
    let run = |settings: Settings, common: &Common| Run {
        settings,
        threads,
        dry_run: common.dry_run,
    };
    match cli.command {
        Command::MinePaths {
            data,
            out,
            tau_sim,
            tau_path,
            inverse,
            json,
            common,
        } => {
            let inverse = inverse.then(|| "true".to_owned());
            let s = fresh(&common, &[("tau_sim", opt(&tau_sim)), ("tau_path", tau_path), ("inverse", inverse)])?;
            commands::mine_paths(&run(s, &common), &data, &out, json)
        }
        Command::Train {
            data,
            paths,
            out,
            epochs,
            common,
        } => {
            let mut s = fresh(&common, &[("epochs", opt(&epochs))])?;
            let paths = if paths == "none" {
                s.use_paths = false;
                None
            } else {
                Some(PathBuf::from(paths))
            };
            commands::train(&run(s, &common), &data, paths.as_deref(), &out)
        }
        Command::Align {
            ckpt,
            data,
            top_k,
            theta_inf,
            out,
            common,
        } => {
            let c = from_ckpt(&ckpt, &common, &[("top_k", opt(&top_k)), ("theta_inf", opt(&theta_inf))])?;
            let out = out.unwrap_or_else(|| ckpt.join("alignment.tsv"));
            commands::align(&run(c.settings.clone(), &common), &c, &data, &out)
        }
        Command::Eval {
            ckpt,
            data,
            theta_inf,
            candidates,
            harder,
            json,
            manifest,
            common,
        } => {
            let flags = [
                ("theta_inf", opt(&theta_inf)),
                ("candidates", candidates),
                ("harder", opt(&harder)),
            ];
            let c = from_ckpt(&ckpt, &common, &flags)?;
            let manifest = manifest.unwrap_or_else(|| ckpt.join("eval.manifest.json"));
            commands::eval(&run(c.settings.clone(), &common), &c, &data, &manifest, json)
        }
        Command::HarderSplit {
            data,
            fraction,
            out,
            common,
        } => {
            let s = fresh(&common, &[("harder", opt(&fraction))])?;
            commands::harder_split(&run(s, &common), &data, &out)
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(KgError::Diverged { .. }) = cause.downcast_ref::<KgError>() {
            return 3;
        }
        if cause.is::<UsageError>() {
            return 1;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("error: {e:#}");
            if code == 1 {
                eprintln!("run `kgalign --help` for usage");
            }
            ExitCode::from(code)
        }
    }
}
