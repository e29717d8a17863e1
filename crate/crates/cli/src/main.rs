//! `anticipatr` command-line front end.

mod config;
mod eval;
mod explain;
mod gaze_cmds;
mod synth;
mod train;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

/// Explainable accident anticipation: synthesis, training, saliency and evaluation.
#[derive(Debug, Parser)]
#[command(name = "anticipatr", version)]
pub struct Cli {
    /// key=value file supplying flag defaults; flags on the command line win.
    /// Keys may be scoped to one subcommand as `train.lr = 1e-3`.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with planted risk patterns and gaze logs.
    Synth(synth::SynthArgs),
    /// Train the anticipation network on a manifest.
    Train(train::TrainArgs),
    /// Write probability curves and saliency maps for every video.
    Explain(explain::ExplainArgs),
    /// Anticipation metrics (AP, mTTA, P@80R, TTA@80R) on a manifest.
    Eval(eval::EvalArgs),
    /// Score saliency maps against gaze-derived fixation maps.
    XaiEval(gaze_cmds::XaiEvalArgs),
    /// Render gaze attention and fixation maps.
    Attention(gaze_cmds::AttentionArgs),
}

/// Invocation problems that are not caught by clap itself.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn parse_cli() -> anyhow::Result<Cli> {
    let raw: Vec<String> = std::env::args_os().map(|a| a.to_string_lossy().into_owned()).collect();
    let command = Cli::command().mut_subcommands(|c| c.args_override_self(true));
    let args = config::inject(&command, raw)?;
    match command.try_get_matches_from(args) {
        Ok(m) => Ok(Cli::from_arg_matches(&m)?),
        Err(e) => e.exit(),
    }
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(value) = std::env::var("ANTICIPATR_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage(format!("ANTICIPATR_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run() -> anyhow::Result<()> {
    let cli = parse_cli()?;
    init_threads()?;
    match cli.command {
        Command::Synth(a) => synth::run(a),
        Command::Train(a) => train::run(a),
        Command::Explain(a) => explain::run(a),
        Command::Eval(a) => eval::run(a),
        Command::XaiEval(a) => gaze_cmds::run_xai_eval(a),
        Command::Attention(a) => gaze_cmds::run_attention(a),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

/// Parses `HxW`.
pub fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let h: usize = h.trim().parse().map_err(|_| format!("bad height in {s:?}"))?;
    let w: usize = w.trim().parse().map_err(|_| format!("bad width in {s:?}"))?;
    if h == 0 || w == 0 {
        return Err(format!("size must be positive, got {s:?}"));
    }
    Ok((h, w))
}

/// `frame_007` style stem shared by every per-frame artifact.
pub fn frame_stem(t: usize) -> String {
    format!("frame_{t:03}")
}

pub fn write_file(path: &std::path::Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| anticipatr::Error::Io { path: dir.into(), source: e })?;
    }
    std::fs::write(path, contents).map_err(|e| anticipatr::Error::Io { path: path.into(), source: e })?;
    Ok(())
}

pub fn create_dir(path: &std::path::Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(path).map_err(|e| anticipatr::Error::Io { path: path.into(), source: e })?;
    Ok(())
}
