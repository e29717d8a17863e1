use std::fmt::Write as _;
use std::path::PathBuf;

use anticipatr::antnet::NetConfig;
use anticipatr::datasets::{load_videos, read_manifest};
use anticipatr::trainer::{load_checkpoint, save_checkpoint, train, train_with_validation, TrainConfig};
use anticipatr::Error;
use clap::Args;

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for model.antn and loss.csv.
    #[arg(long)]
    out: PathBuf,
    /// Start from this checkpoint; its network shape is kept.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Manifest whose loss drives the plateau schedule instead of the training loss.
    #[arg(long)]
    val_manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 10)]
    batch_size: usize,
    /// Stale epochs before the learning rate is cut.
    #[arg(long, default_value_t = 3)]
    patience: usize,
    /// Factor applied to the learning rate on a plateau.
    #[arg(long, default_value_t = 0.5)]
    decay: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Dense projection width (d).
    #[arg(long)]
    feature_dim: Option<usize>,
    /// GRU state width (h).
    #[arg(long)]
    hidden_dim: Option<usize>,
    /// Past hidden states averaged into the recurrent input (M).
    #[arg(long)]
    history: Option<usize>,
}

pub fn run(a: TrainArgs) -> anyhow::Result<()> {
    let videos = load_videos(&read_manifest(&a.manifest)?)?;
    let Some([k, u, v]) = videos.first().and_then(|v| v.features.map_shape()) else {
        return Err(Error::Data(format!("{} lists no videos", a.manifest.display())).into());
    };
    let (net, init) = match &a.resume {
        Some(path) => {
            let params = load_checkpoint(path)?;
            let c = params.config;
            for (flag, given, have) in [
                ("--feature-dim", a.feature_dim, c.feature_dim),
                ("--hidden-dim", a.hidden_dim, c.hidden_dim),
                ("--history", a.history, c.history),
            ] {
                if given.is_some_and(|g| g != have) {
                    return Err(crate::usage(format!(
                        "{flag} {} conflicts with checkpoint {} ({have})",
                        given.unwrap(),
                        path.display()
                    )));
                }
            }
            (c, Some(params))
        }
        None => {
            let desk = NetConfig::desk();
            let net = NetConfig {
                channels: k,
                height: u,
                width: v,
                feature_dim: a.feature_dim.unwrap_or(desk.feature_dim),
                hidden_dim: a.hidden_dim.unwrap_or(desk.hidden_dim),
                history: a.history.unwrap_or(desk.history),
            };
            (net, None)
        }
    };
    let config = TrainConfig {
        learning_rate: a.lr,
        batch_size: a.batch_size,
        epochs: a.epochs,
        patience: a.patience,
        decay: a.decay,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let outcome = match &a.val_manifest {
        Some(path) => {
            let val = load_videos(&read_manifest(path)?)?;
            train_with_validation(&videos, &val, net, &config, init)?
        }
        None => train(&videos, net, &config, init)?,
    };

    crate::create_dir(&a.out)?;
    save_checkpoint(&a.out.join("model.antn"), &outcome.params)?;
    let with_val = !outcome.validation_losses.is_empty();
    let mut csv = String::from(if with_val {
        "epoch,loss,learning_rate,val_loss\n"
    } else {
        "epoch,loss,learning_rate\n"
    });
    for (i, (loss, lr)) in outcome.epoch_losses.iter().zip(&outcome.learning_rates).enumerate() {
        let _ = write!(csv, "{},{loss},{lr}", i + 1);
        if with_val {
            let _ = write!(csv, ",{}", outcome.validation_losses[i]);
        }
        csv.push('\n');
    }
    crate::write_file(&a.out.join("loss.csv"), csv)?;
    if let Some(last) = outcome.epoch_losses.last() {
        eprintln!("trained {} epochs, final loss {last:.6}", outcome.epoch_losses.len());
    }
    Ok(())
}
