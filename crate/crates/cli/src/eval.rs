use std::path::PathBuf;

use anticipatr::antnet::forward_video;
use anticipatr::datasets::{load_videos, read_manifest};
use anticipatr::metrics::{anticipation_summary_csv, anticipation_videos_csv, evaluate_anticipation, VideoPrediction};
use anticipatr::trainer::load_checkpoint;
use clap::Args;
use rayon::prelude::*;

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Manifest of the videos to score, normally the held-out split.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output directory for summary.csv and videos.csv.
    #[arg(long)]
    out: PathBuf,
}

pub fn run(a: EvalArgs) -> anyhow::Result<()> {
    let params = load_checkpoint(&a.checkpoint)?;
    let videos = load_videos(&read_manifest(&a.manifest)?)?;
    let preds = videos
        .par_iter()
        .map(|v| {
            let (series, _) = forward_video(&v.features, &params)?;
            Ok(VideoPrediction {
                id: v.record.id.clone(),
                positive: v.record.positive,
                tau: v.record.tau,
                fps: v.record.fps,
                probs: series.probs,
            })
        })
        .collect::<anticipatr::Result<Vec<_>>>()?;
    let report = evaluate_anticipation(&preds)?;
    crate::write_file(&a.out.join("summary.csv"), anticipation_summary_csv(&report))?;
    crate::write_file(&a.out.join("videos.csv"), anticipation_videos_csv(&preds, &report))?;
    eprintln!(
        "AP {:.4}  mTTA {:.3} s  P@80R {:.4}  TTA@80R {:.3} s  ({} positive, {} negative)",
        report.ap, report.mtta, report.p_at_80r, report.tta_at_80r, report.positives, report.negatives
    );
    Ok(())
}
