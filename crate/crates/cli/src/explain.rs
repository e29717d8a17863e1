use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anticipatr::antnet::{forward_video, Class, NetParams};
use anticipatr::datasets::{load_videos, read_manifest, Video};
use anticipatr::trainer::load_checkpoint;
use anticipatr::xai::{explain, export_saliency, CamMethod};
use clap::{Args, ValueEnum};
use rayon::prelude::*;

use crate::{frame_stem, parse_size};

/// Comma-separated method list.
#[derive(Clone, Debug)]
pub struct Methods(pub Vec<CamMethod>);

pub fn parse_methods(s: &str) -> Result<Methods, String> {
    let mut out: Vec<CamMethod> = Vec::new();
    for name in s.split(',').filter(|n| !n.trim().is_empty()) {
        let m: CamMethod = name.parse().map_err(|e: anticipatr::Error| e.to_string())?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err("no methods given".into());
    }
    Ok(Methods(out))
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ClassArg {
    Accident,
    NoAccident,
}

impl From<ClassArg> for Class {
    fn from(c: ClassArg) -> Self {
        match c {
            ClassArg::Accident => Class::Accident,
            ClassArg::NoAccident => Class::NoAccident,
        }
    }
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output directory; one subdirectory per video.
    #[arg(long)]
    out: PathBuf,
    /// Any of grad-cam, grad-cam++, xgrad-cam, eigen-cam, comma-separated.
    #[arg(long, value_parser = parse_methods, default_value = "grad-cam")]
    methods: Methods,
    /// Directory holding `<video>/frame_NNN.ppm`; enables heat overlays.
    #[arg(long)]
    frames_dir: Option<PathBuf>,
    /// Saliency output size, `HxW`.
    #[arg(long, value_parser = parse_size, default_value = "224x224")]
    size: (usize, usize),
    /// Score to explain.
    #[arg(long, value_enum, default_value_t = ClassArg::Accident)]
    class: ClassArg,
}

struct Timing {
    frames: usize,
    forward: Duration,
    methods: Vec<Duration>,
}

fn explain_video(a: &ExplainArgs, params: &NetParams, video: &Video) -> anyhow::Result<Timing> {
    let id = &video.record.id;
    let dir = a.out.join(id);
    let start = Instant::now();
    let (series, acts) = forward_video(&video.features, params)?;
    let forward = start.elapsed();

    let mut csv = String::from("frame,probability\n");
    for (t, p) in series.probs.iter().enumerate() {
        let _ = writeln!(csv, "{t},{p}");
    }
    crate::write_file(&dir.join("probs.csv"), csv)?;

    let frame_image = |t: usize| -> Option<PathBuf> {
        a.frames_dir.as_ref().map(|d| d.join(id).join(format!("{}.ppm", frame_stem(t))))
    };
    let mut methods = Vec::with_capacity(a.methods.0.len());
    for &method in &a.methods.0 {
        let mdir = dir.join(method.name());
        crate::create_dir(&mdir)?;
        let mut spent = Duration::ZERO;
        for t in 0..series.len() {
            let start = Instant::now();
            let map = explain(method, &acts, t, a.class.into(), a.size)?;
            spent += start.elapsed();
            export_saliency(&map, frame_image(t).as_deref(), &mdir.join(frame_stem(t)))?;
        }
        methods.push(spent);
    }
    Ok(Timing {
        frames: series.len(),
        forward,
        methods,
    })
}

fn per_frame_ms(d: Duration, frames: usize) -> f64 {
    d.as_secs_f64() * 1e3 / frames.max(1) as f64
}

pub fn run(a: ExplainArgs) -> anyhow::Result<()> {
    let params = load_checkpoint(&a.checkpoint)?;
    let videos = load_videos(&read_manifest(&a.manifest)?)?;
    check_frames_dir(a.frames_dir.as_deref())?;
    let timings: Vec<anyhow::Result<Timing>> = videos.par_iter().map(|v| explain_video(&a, &params, v)).collect();

    let mut frames = 0;
    let mut forward = Duration::ZERO;
    let mut methods = vec![Duration::ZERO; a.methods.0.len()];
    for t in timings {
        let t = t?;
        frames += t.frames;
        forward += t.forward;
        for (acc, d) in methods.iter_mut().zip(t.methods) {
            *acc += d;
        }
    }
    let fwd_ms = per_frame_ms(forward, frames);
    eprintln!(
        "forward pass: {fwd_ms:.3} ms/frame ({:.1} frames/s) over {frames} frames",
        1e3 / fwd_ms.max(1e-9)
    );
    for (m, d) in a.methods.0.iter().zip(methods) {
        eprintln!("{}: {:.3} ms/frame", m.name(), per_frame_ms(d, frames));
    }
    Ok(())
}

fn check_frames_dir(dir: Option<&Path>) -> anyhow::Result<()> {
    match dir {
        Some(d) if !d.is_dir() => Err(crate::usage(format!("--frames-dir {} is not a directory", d.display()))),
        _ => Ok(()),
    }
}
