//! The `canopy` command line: one subcommand per pipeline stage.
//!
//! Exit codes: 0 on success, 1 for I/O or data errors, 2 for usage errors.
//! Every run that succeeds writes a `.log` sidecar next to its main output
//! listing the resolved parameters.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::config::{ConfigError, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DATA: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "canopy",
    version,
    about = "Canopy height mapping from LiDAR and satellite imagery"
)]
pub struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "CANOPY_THREADS")]
    pub threads: Option<usize>,

    /// Flat `key = value` file supplying defaults for this subcommand's flags.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Point cloud (PCB) to a u8 canopy height model (RSF).
    Chm(commands::ChmArgs),
    /// Zero CHM pixels inside or near building footprints.
    MaskBuildings(commands::MaskArgs),
    /// 4-band 12-bit imagery to 8 bits.
    Scale(commands::ScaleArgs),
    /// Training patches, manifest and validation split from a CHM and images.
    Dataset(commands::DatasetArgs),
    /// Train a U-Net on a patch manifest.
    Train(commands::TrainArgs),
    /// Predict height maps for one quad or a quad manifest.
    Predict(commands::PredictArgs),
    /// Per-pixel mean height and observation count over dates.
    Composite(commands::CompositeArgs),
    /// Per-tile statistics and area-wide weighted summary.
    Stats(commands::StatsArgs),
    /// Height difference between two dates.
    Diff(commands::DiffArgs),
    /// Time series of one pixel with drop and regrowth events.
    Series(commands::SeriesArgs),
    /// Compare predicted and observed height maps.
    Eval(commands::EvalArgs),
}

/// Where an argument vector asks for a config file, if anywhere.
fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

/// Index of the subcommand token and its name.
fn subcommand_at(args: &[OsString]) -> Option<(usize, String)> {
    let cmd = Cli::command();
    args.iter().enumerate().skip(1).find_map(|(i, a)| {
        let s = a.to_str()?;
        cmd.find_subcommand(s).map(|_| (i, s.to_string()))
    })
}

fn has_flag(args: &[OsString], long: &str) -> bool {
    let flag = format!("--{long}");
    let eq = format!("--{long}=");
    args.iter().any(|a| {
        let s = a.to_string_lossy();
        s == flag.as_str() || s.starts_with(eq.as_str())
    })
}

/// Inserts config entries as flags after the subcommand token, skipping
/// flags already on the command line.
fn merge_config(mut args: Vec<OsString>, cfg: &RunConfig) -> Result<Vec<OsString>, ConfigError> {
    let Some((at, name)) = subcommand_at(&args) else {
        return Ok(args);
    };
    let cmd = Cli::command();
    let sub = cmd.find_subcommand(&name).expect("known subcommand");
    let mut allowed: Vec<String> = sub
        .get_arguments()
        .chain(cmd.get_arguments())
        .filter_map(|a| a.get_long().map(str::to_string))
        .filter(|l| l != "config" && l != "help" && l != "version")
        .collect();
    allowed.sort();
    cfg.check_keys(&allowed, &name)?;
    let mut extra = Vec::new();
    for (k, v) in cfg.iter() {
        if !has_flag(&args, k) {
            extra.push(OsString::from(format!("--{k}")));
            extra.push(OsString::from(v));
        }
    }
    args.splice(at + 1..at + 1, extra);
    Ok(args)
}

/// `key=value` lines for every argument of the chosen subcommand.
fn describe(matches: &clap::ArgMatches) -> String {
    let mut out = String::new();
    let Some((name, sub)) = matches.subcommand() else {
        return out;
    };
    out.push_str(&format!("canopy {}\ncommand={name}\n", env!("CARGO_PKG_VERSION")));
    let mut has_seed = false;
    let mut ids: Vec<&str> = sub.ids().map(|i| i.as_str()).collect();
    ids.sort();
    for id in ids {
        if let Ok(Some(raw)) = sub.try_get_raw(id) {
            let vals: Vec<String> = raw.map(|v| v.to_string_lossy().into_owned()).collect();
            out.push_str(&format!("{id}={}\n", vals.join(",")));
            has_seed |= id == "seed";
        }
    }
    if !has_seed {
        out.push_str("seed=none\n");
    }
    out
}

pub(crate) fn write_sidecar(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).map_err(|e| anyhow::anyhow!("cannot write log {}: {e}", path.display()))
}

/// Runs the CLI on `args` (including the program name) and returns the
/// exit code. Errors go to standard error.
pub fn run(args: Vec<OsString>) -> i32 {
    let args = match config_path(&args) {
        Some(path) => {
            let cfg = match RunConfig::load(&path) {
                Ok(c) => c,
                Err(e @ ConfigError::Read { .. }) => {
                    eprintln!("error: {e}");
                    return EXIT_DATA;
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_USAGE;
                }
            };
            match merge_config(args, &cfg) {
                Ok(a) => a,
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_USAGE;
                }
            }
        }
        None => args,
    };
    let matches = match Cli::command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return EXIT_USAGE;
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return EXIT_USAGE;
        }
        // A pool may already exist when run() is called twice in-process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut log_text = describe(&matches);
    log_text.push_str(&format!("threads={}\n", rayon::current_num_threads()));
    match commands::dispatch(&cli.command, &log_text) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_DATA
        }
    }
}
