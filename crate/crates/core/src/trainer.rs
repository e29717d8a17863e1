//! Training with the early-anticipation cross entropy, Adam, and a
//! plateau learning-rate schedule; plus the `ANTN` checkpoint format.
//!
//! Per video the loss is `-Σ_t log(1 - â_t)` for negatives and
//! `-Σ_t exp(-max((τ - t)/f, 0)) log â_t` for positives, with 0-based
//! frames. A batch minimises the mean over its videos.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::antnet::{forward_video, NetActivations, NetConfig, NetParams, PARAM_COUNT};
use crate::datasets::{FeatureMapSeq, Video};
use crate::error::{Error, Result};
use crate::tensorkit::{Tape, Tensor, Var};

/// Weight of frame `t` in a positive video's loss.
pub fn frame_weight(t: usize, tau: usize, fps: f64) -> f64 {
    let lead = (tau as f64 - t as f64) / fps;
    (-lead.max(0.0)).exp()
}

/// Loss of one video from its probability series.
pub fn video_loss(probs: &[f64], positive: bool, tau: Option<usize>, fps: f64) -> Result<f64> {
    if let Some((t, p)) = probs.iter().enumerate().find(|(_, p)| !(**p > 0.0 && **p < 1.0)) {
        return Err(Error::contract(format!("probability {p} at frame {t} outside (0, 1)")));
    }
    if positive {
        let tau = tau.ok_or_else(|| Error::contract("positive video without tau"))?;
        Ok(-probs
            .iter()
            .enumerate()
            .map(|(t, p)| frame_weight(t, tau, fps) * p.ln())
            .sum::<f64>())
    } else {
        Ok(-probs.iter().map(|p| (1.0 - p).ln()).sum::<f64>())
    }
}

/// Records the video loss on the activations' tape and returns its node.
///
/// `log â_t` is taken as `log σ(y^c - y^{!c})` (and `log(1 - â_t)` as
/// `log σ(y^{!c} - y^c)`), which equals the softmax form without the
/// cancellation in `1 - â_t`.
pub fn video_loss_on(acts: &mut NetActivations, positive: bool, tau: Option<usize>, fps: f64) -> Result<Var> {
    if positive && tau.is_none() {
        return Err(Error::contract("positive video without tau"));
    }
    let sign = if positive { 1.0 } else { -1.0 };
    let tape: &mut Tape = &mut acts.tape;
    let diff = tape.constant(Tensor::from_raw(vec![1, 2], vec![sign, -sign]));
    let mut total: Option<Var> = None;
    for (t, frame) in acts.frames.iter().enumerate() {
        let margin = tape.matvec(diff, frame.scores)?;
        let prob = tape.sigmoid(margin);
        let log_p = tape.log(prob)?;
        let w = match tau {
            Some(tau) if positive => frame_weight(t, tau, fps),
            _ => 1.0,
        };
        let term = tape.scale(log_p, -w);
        total = Some(match total {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
    }
    let total = total.ok_or_else(|| Error::contract("loss of an empty video"))?;
    Ok(tape.sum(total))
}

/// Loss and parameter gradients of one video.
pub fn video_loss_and_grads(
    features: &FeatureMapSeq,
    positive: bool,
    tau: Option<usize>,
    fps: f64,
    params: &NetParams,
) -> Result<(f64, Vec<Tensor>)> {
    let (_, mut acts) = forward_video(features, params)?;
    let loss = video_loss_on(&mut acts, positive, tau, fps)?;
    let grads = acts.tape.backward(loss)?;
    let value = acts.tape.value(loss).item()?;
    Ok((value, acts.params.vars().iter().map(|&v| grads.get(v)).collect()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub patience: usize,
    pub decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 10,
            epochs: 30,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            patience: 3,
            decay: 0.5,
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::contract(format!("TrainConfig: {m}")));
        if !(self.learning_rate > 0.0) {
            return fail("learning rate must be positive");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return fail("betas must lie in (0, 1)");
        }
        if self.batch_size == 0 {
            return fail("batch size must be positive");
        }
        if self.patience == 0 {
            return fail("patience must be at least 1");
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return fail("decay must lie in (0, 1]");
        }
        if !(self.eps > 0.0) {
            return fail("eps must be positive");
        }
        Ok(())
    }
}

/// Adam moments and the current learning rate.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
    pub step: u64,
    pub learning_rate: f64,
}

impl OptimState {
    pub fn new(params: &NetParams, learning_rate: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
        Self {
            first: zeros.clone(),
            second: zeros,
            step: 0,
            learning_rate,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &NetParams, grads: &[Tensor], state: &mut OptimState, config: &TrainConfig) -> Result<NetParams> {
    let current = params.tensors();
    if grads.len() != PARAM_COUNT {
        return Err(Error::contract(format!("expected {PARAM_COUNT} gradients, got {}", grads.len())));
    }
    for (p, g) in current.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::shape("adam_step", p.shape(), g.shape()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    let lr = state.learning_rate;
    let mut updated = Vec::with_capacity(PARAM_COUNT);
    for (i, (p, g)) in current.iter().zip(grads).enumerate() {
        let m = &mut state.first[i];
        let v = &mut state.second[i];
        let mut data = p.to_vec();
        for (j, (&gj, x)) in g.data().iter().zip(data.iter_mut()).enumerate() {
            m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * gj;
            v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *x -= lr * m_hat / (v_hat.sqrt() + config.eps);
        }
        updated.push(Tensor::from_raw(p.shape().to_vec(), data));
    }
    NetParams::from_tensors(params.config, updated)
}

/// Tracks the best epoch loss and how long it has stood.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauState {
    pub best: f64,
    pub stale_epochs: usize,
}

impl Default for PlateauState {
    fn default() -> Self {
        Self {
            best: f64::INFINITY,
            stale_epochs: 0,
        }
    }
}

/// Feeds one epoch loss to the schedule. Once the best loss has stood for
/// `patience` further epochs the learning rate is multiplied by `decay` and
/// the count restarts. Returns whether the rate was reduced.
pub fn reduce_lr_on_plateau(loss: f64, plateau: &mut PlateauState, optim: &mut OptimState, config: &TrainConfig) -> bool {
    if loss < plateau.best {
        plateau.best = loss;
        plateau.stale_epochs = 0;
        return false;
    }
    plateau.stale_epochs += 1;
    if plateau.stale_epochs >= config.patience {
        optim.learning_rate *= config.decay;
        plateau.stale_epochs = 0;
        return true;
    }
    false
}

/// Final parameters with the loss and learning rate of every epoch.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: NetParams,
    /// Mean video loss over each epoch's training set.
    pub epoch_losses: Vec<f64>,
    /// Learning rate in effect during each epoch.
    pub learning_rates: Vec<f64>,
    /// Mean validation loss after each epoch; empty without a validation set.
    pub validation_losses: Vec<f64>,
}

/// Mini-batch Adam over `videos`, starting from `init` (or a fresh seeded
/// initialisation). Videos are reshuffled each epoch from the seeded stream.
/// The plateau schedule watches the training loss.
pub fn train(videos: &[Video], net: NetConfig, config: &TrainConfig, init: Option<NetParams>) -> Result<TrainOutcome> {
    run_training(videos, None, net, config, init)
}

/// [`train`], with the plateau schedule watching the mean loss on
/// `validation` instead.
pub fn train_with_validation(
    videos: &[Video],
    validation: &[Video],
    net: NetConfig,
    config: &TrainConfig,
    init: Option<NetParams>,
) -> Result<TrainOutcome> {
    if validation.is_empty() {
        return Err(Error::Data("validation set is empty".into()));
    }
    run_training(videos, Some(validation), net, config, init)
}

/// Mean video loss of `params` over `videos`, forward pass only.
pub fn mean_loss(videos: &[Video], params: &NetParams) -> Result<f64> {
    let losses: Vec<Result<f64>> = videos
        .par_iter()
        .map(|v| {
            let (probs, _) = forward_video(&v.features, params)?;
            video_loss(&probs.probs, v.record.positive, v.record.tau, v.record.fps)
        })
        .collect();
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / videos.len() as f64)
}

fn run_training(
    videos: &[Video],
    validation: Option<&[Video]>,
    net: NetConfig,
    config: &TrainConfig,
    init: Option<NetParams>,
) -> Result<TrainOutcome> {
    config.validate()?;
    net.validate()?;
    if videos.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let first = &videos[0].record;
    for v in videos {
        if v.record.frames != first.frames || v.features.len() != first.frames {
            return Err(Error::Data(format!(
                "video {} has {} frames, dataset uses {}",
                v.record.id,
                v.features.len(),
                first.frames
            )));
        }
        if v.record.fps != first.fps {
            return Err(Error::Data(format!(
                "video {} has fps {}, dataset uses {}",
                v.record.id, v.record.fps, first.fps
            )));
        }
        if v.features.map_shape() != Some(net.feature_shape()) {
            return Err(Error::Data(format!(
                "video {} has map shape {:?}, network expects {:?}",
                v.record.id,
                v.features.map_shape(),
                net.feature_shape()
            )));
        }
    }

    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    init_rng.set_stream(1);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(2);

    let mut params = match init {
        Some(p) if p.config == net => p,
        Some(p) => {
            return Err(Error::contract(format!(
                "initial parameters have config {:?}, expected {:?}",
                p.config, net
            )))
        }
        None => NetParams::init(net, &mut init_rng),
    };
    let mut optim = OptimState::new(&params, config.learning_rate);
    let mut plateau = PlateauState::default();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut learning_rates = Vec::with_capacity(config.epochs);
    let mut validation_losses = Vec::new();
    let mut order: Vec<usize> = (0..videos.len()).collect();

    for _ in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        learning_rates.push(optim.learning_rate);
        let mut epoch_total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let results: Vec<Result<(f64, Vec<Tensor>)>> = batch
                .par_iter()
                .map(|&i| {
                    let v = &videos[i];
                    video_loss_and_grads(&v.features, v.record.positive, v.record.tau, v.record.fps, &params)
                })
                .collect();
            let scale = 1.0 / batch.len() as f64;
            let mut sums: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
            for r in results {
                let (loss, grads) = r?;
                epoch_total += loss;
                for (acc, g) in sums.iter_mut().zip(&grads) {
                    for (a, x) in acc.iter_mut().zip(g.data()) {
                        *a += x;
                    }
                }
            }
            let grads: Vec<Tensor> = sums
                .into_iter()
                .zip(params.tensors())
                .map(|(s, p)| Tensor::from_raw(p.shape().to_vec(), s.into_iter().map(|x| x * scale).collect()))
                .collect();
            params = adam_step(&params, &grads, &mut optim, config)?;
        }
        let epoch_loss = epoch_total / videos.len() as f64;
        epoch_losses.push(epoch_loss);
        let monitored = match validation {
            Some(val) => {
                let l = mean_loss(val, &params)?;
                validation_losses.push(l);
                l
            }
            None => epoch_loss,
        };
        reduce_lr_on_plateau(monitored, &mut plateau, &mut optim, config);
    }

    Ok(TrainOutcome {
        params,
        epoch_losses,
        learning_rates,
        validation_losses,
    })
}

// ----------------------------------------------------------------------------
// Checkpoints
// ----------------------------------------------------------------------------

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ANTN";
pub const CHECKPOINT_VERSION: u32 = 1;

/// `b"ANTN"`, `u32` version, six `u64` config integers (K, U, V, d, h, M),
/// then every parameter tensor in checkpoint order as `f64`, all
/// little-endian.
pub fn encode_checkpoint(params: &NetParams) -> Vec<u8> {
    let c = params.config;
    let mut out = Vec::with_capacity(56 + 8 * params.count());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for n in [c.channels, c.height, c.width, c.feature_dim, c.hidden_dim, c.history] {
        out.extend_from_slice(&(n as u64).to_le_bytes());
    }
    for t in params.tensors() {
        for &x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<NetParams> {
    const HEADER: usize = 8 + 6 * 8;
    if bytes.len() < HEADER {
        return Err(Error::format(path, bytes.len() as u64, "truncated checkpoint header"));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::format(path, 0, "bad magic, expected \"ANTN\""));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(path, 4, format!("unsupported checkpoint version {version}")));
    }
    let dim = |i: usize| u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().unwrap()) as usize;
    let config = NetConfig {
        channels: dim(0),
        height: dim(1),
        width: dim(2),
        feature_dim: dim(3),
        hidden_dim: dim(4),
        history: dim(5),
    };
    config.validate().map_err(|e| Error::format(path, 8, e.to_string()))?;
    let shapes = NetParams::shapes(&config);
    let total: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
    if bytes.len() != HEADER + 8 * total {
        return Err(Error::format(
            path,
            bytes.len().min(HEADER + 8 * total) as u64,
            format!("checkpoint has {} bytes, config implies {}", bytes.len(), HEADER + 8 * total),
        ));
    }
    let mut off = HEADER;
    let mut tensors = Vec::with_capacity(PARAM_COUNT);
    for shape in shapes {
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let x = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
            if !x.is_finite() {
                return Err(Error::format(path, off as u64, "non-finite parameter"));
            }
            data.push(x);
            off += 8;
        }
        tensors.push(Tensor::from_raw(shape, data));
    }
    NetParams::from_tensors(config, tensors)
}

pub fn save_checkpoint(path: &Path, params: &NetParams) -> Result<()> {
    fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<NetParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}
