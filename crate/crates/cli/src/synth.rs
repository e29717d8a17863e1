use std::path::PathBuf;

use anticipatr::datasets::{synth_generate, write_synth, SynthConfig};
use clap::Args;

/// Candidate patch sites: `random` or `r:c,r:c,...` (top-left cells).
#[derive(Clone, Debug)]
pub struct Sites(Vec<(usize, usize)>);

fn parse_sites(s: &str) -> Result<Sites, String> {
    if s.trim() == "random" {
        return Ok(Sites(Vec::new()));
    }
    s.split(',')
        .map(|p| {
            let (r, c) = p.split_once(':').ok_or_else(|| format!("expected r:c, got {p:?}"))?;
            let r = r.trim().parse().map_err(|_| format!("bad row in {p:?}"))?;
            let c = c.trim().parse().map_err(|_| format!("bad column in {p:?}"))?;
            Ok((r, c))
        })
        .collect::<Result<_, _>>()
        .map(Sites)
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    positives: Option<usize>,
    #[arg(long)]
    negatives: Option<usize>,
    /// Frames per video (T).
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    fps: Option<f64>,
    /// Feature map channels (K).
    #[arg(long)]
    channels: Option<usize>,
    /// Feature map height (U).
    #[arg(long)]
    height: Option<usize>,
    /// Feature map width (V).
    #[arg(long)]
    width: Option<usize>,
    /// Peak value of the planted risk pattern.
    #[arg(long)]
    amplitude: Option<f64>,
    /// Frames before the accident at which the pattern starts ramping in.
    #[arg(long)]
    lead_frames: Option<usize>,
    /// Standard deviation of the background noise.
    #[arg(long)]
    noise: Option<f64>,
    /// Side of the square risk patch in cells.
    #[arg(long)]
    patch: Option<usize>,
    #[arg(long, value_parser = parse_sites)]
    patch_sites: Option<Sites>,
    /// Fraction of trailing frames the accident frame is drawn from.
    #[arg(long)]
    tau_window: Option<f64>,
    /// Frame size for gaze coordinates, `HxW`.
    #[arg(long, value_parser = crate::parse_size)]
    frame_size: Option<(usize, usize)>,
    #[arg(long)]
    participants: Option<usize>,
    /// Gaze samples per participant per frame.
    #[arg(long)]
    gaze_per_frame: Option<usize>,
    /// Held-out share of each class written to test.csv.
    #[arg(long, default_value_t = 0.3)]
    test_fraction: f64,
}

impl SynthArgs {
    fn config(&self) -> SynthConfig {
        let mut c = SynthConfig {
            seed: self.seed,
            ..SynthConfig::default()
        };
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { c.$f = v; })* };
        }
        set!(positives, negatives, frames, fps, channels, height, width, amplitude, lead_frames, noise, patch, tau_window, participants, gaze_per_frame);
        if let Some(Sites(s)) = &self.patch_sites {
            c.patch_sites = s.clone();
        }
        if let Some((h, w)) = self.frame_size {
            c.frame_height = h;
            c.frame_width = w;
        }
        c
    }
}

pub fn run(a: SynthArgs) -> anyhow::Result<()> {
    if !(0.0..=1.0).contains(&a.test_fraction) {
        return Err(crate::usage(format!("--test-fraction must lie in [0, 1], got {}", a.test_fraction)));
    }
    let config = a.config();
    if config.positives == 0 {
        eprintln!("warning: no positive videos; anticipation metrics on this data will fail");
    }
    let data = synth_generate(&config)?;
    let manifest = write_synth(&a.out, &data, a.test_fraction, config.seed)?;
    println!("{}", manifest.display());
    Ok(())
}
