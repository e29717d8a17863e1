//! The anticipation network: a dense projection of each frame's feature map,
//! a GRU whose recurrent input is the mean of the last `M` hidden states,
//! and a two-way classifier whose softmax is the accident probability.

use rand::Rng;

use crate::datasets::FeatureMapSeq;
use crate::error::{Error, Result};
use crate::tensorkit::{softmax2, Tape, Tensor, Var};

/// Network dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetConfig {
    /// Feature-map channels `K`.
    pub channels: usize,
    /// Feature-map height `U`.
    pub height: usize,
    /// Feature-map width `V`.
    pub width: usize,
    /// Projected feature dimension `d`.
    pub feature_dim: usize,
    /// GRU hidden dimension.
    pub hidden_dim: usize,
    /// Number of past hidden states averaged into the recurrent input (`M`).
    pub history: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl NetConfig {
    /// Small configuration that trains in seconds on a laptop.
    pub fn desk() -> Self {
        Self {
            channels: 8,
            height: 14,
            width: 14,
            feature_dim: 32,
            hidden_dim: 16,
            history: 3,
        }
    }

    /// Dimensions reported for the full-size model.
    pub fn full_scale() -> Self {
        Self {
            channels: 512,
            height: 14,
            width: 14,
            feature_dim: 2048,
            hidden_dim: 256,
            history: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("channels", self.channels),
            ("height", self.height),
            ("width", self.width),
            ("feature_dim", self.feature_dim),
            ("hidden_dim", self.hidden_dim),
            ("history", self.history),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::contract(format!("NetConfig.{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Length of a flattened feature map, `K·U·V`.
    pub fn flat_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn feature_shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }
}

/// Which of the two output scores to explain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Class {
    Accident,
    NoAccident,
}

impl Class {
    pub fn index(self) -> usize {
        match self {
            Class::Accident => 0,
            Class::NoAccident => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Class::Accident => "accident",
            Class::NoAccident => "no-accident",
        }
    }
}

pub const PARAM_COUNT: usize = 10;

/// Parameter names in checkpoint order.
pub const PARAM_NAMES: [&str; PARAM_COUNT] = [
    "w_dense", "b_dense", "w_reset", "b_reset", "w_cand", "b_cand", "w_update", "b_update", "w_out",
    "b_out",
];

/// All learnable weights.
///
/// Gate input matrices are `h×d`, recurrent matrices `h×h`, the classifier
/// `2×h`. Row 0 of the classifier scores the accident class.
#[derive(Clone, Debug, PartialEq)]
pub struct NetParams {
    pub config: NetConfig,
    pub w_dense: Tensor,
    pub b_dense: Tensor,
    pub w_reset: Tensor,
    pub b_reset: Tensor,
    pub w_cand: Tensor,
    pub b_cand: Tensor,
    pub w_update: Tensor,
    pub b_update: Tensor,
    pub w_out: Tensor,
    pub b_out: Tensor,
}

impl NetParams {
    /// Shapes of each tensor, in checkpoint order.
    pub fn shapes(config: &NetConfig) -> [Vec<usize>; PARAM_COUNT] {
        let (d, h, n) = (config.feature_dim, config.hidden_dim, config.flat_len());
        [
            vec![d, n],
            vec![d],
            vec![h, d],
            vec![h, h],
            vec![h, d],
            vec![h, h],
            vec![h, d],
            vec![h, h],
            vec![2, h],
            vec![2],
        ]
    }

    pub fn zeros(config: NetConfig) -> Self {
        let tensors = Self::shapes(&config).map(|s| Tensor::zeros(&s));
        Self::from_array(config, tensors)
    }

    /// Uniform initialisation in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, where a
    /// bias shares the fan-in of the matrix it accompanies.
    pub fn init(config: NetConfig, rng: &mut impl Rng) -> Self {
        let fan_in = [
            config.flat_len(),
            config.flat_len(),
            config.feature_dim,
            config.hidden_dim,
            config.feature_dim,
            config.hidden_dim,
            config.feature_dim,
            config.hidden_dim,
            config.hidden_dim,
            config.hidden_dim,
        ];
        let shapes = Self::shapes(&config);
        let mut tensors = Vec::with_capacity(PARAM_COUNT);
        for (shape, fan) in shapes.iter().zip(fan_in) {
            let bound = 1.0 / (fan as f64).sqrt();
            let n = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
            tensors.push(Tensor::from_raw(shape.clone(), data));
        }
        Self::from_tensors(config, tensors).expect("shapes generated from config")
    }

    pub fn tensors(&self) -> [&Tensor; PARAM_COUNT] {
        [
            &self.w_dense,
            &self.b_dense,
            &self.w_reset,
            &self.b_reset,
            &self.w_cand,
            &self.b_cand,
            &self.w_update,
            &self.b_update,
            &self.w_out,
            &self.b_out,
        ]
    }

    /// Reassembles parameters, checking every shape against `config`.
    pub fn from_tensors(config: NetConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let arr: [Tensor; PARAM_COUNT] = tensors.try_into().map_err(|v: Vec<Tensor>| {
            Error::contract(format!("expected {PARAM_COUNT} parameter tensors, got {}", v.len()))
        })?;
        for ((t, shape), name) in arr.iter().zip(Self::shapes(&config)).zip(PARAM_NAMES) {
            if t.shape() != shape.as_slice() {
                return Err(Error::Shape {
                    op: name,
                    left: t.shape().to_vec(),
                    right: shape,
                });
            }
        }
        Ok(Self::from_array(config, arr))
    }

    fn from_array(config: NetConfig, arr: [Tensor; PARAM_COUNT]) -> Self {
        let [w_dense, b_dense, w_reset, b_reset, w_cand, b_cand, w_update, b_update, w_out, b_out] =
            arr;
        Self {
            config,
            w_dense,
            b_dense,
            w_reset,
            b_reset,
            w_cand,
            b_cand,
            w_update,
            b_update,
            w_out,
            b_out,
        }
    }

    /// Total number of scalar weights.
    pub fn count(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }
}

/// Parameter handles on a tape, in checkpoint order.
#[derive(Clone, Copy, Debug)]
pub struct ParamVars {
    pub w_dense: Var,
    pub b_dense: Var,
    pub w_reset: Var,
    pub b_reset: Var,
    pub w_cand: Var,
    pub b_cand: Var,
    pub w_update: Var,
    pub b_update: Var,
    pub w_out: Var,
    pub b_out: Var,
}

impl ParamVars {
    /// Registers parameters as differentiable leaves (`trainable`) or as
    /// constants.
    pub fn register(tape: &mut Tape, params: &NetParams, trainable: bool) -> Self {
        let mut put = |t: &Tensor| {
            if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        Self {
            w_dense: put(&params.w_dense),
            b_dense: put(&params.b_dense),
            w_reset: put(&params.w_reset),
            b_reset: put(&params.b_reset),
            w_cand: put(&params.w_cand),
            b_cand: put(&params.b_cand),
            w_update: put(&params.w_update),
            b_update: put(&params.b_update),
            w_out: put(&params.w_out),
            b_out: put(&params.b_out),
        }
    }

    pub fn vars(&self) -> [Var; PARAM_COUNT] {
        [
            self.w_dense,
            self.b_dense,
            self.w_reset,
            self.b_reset,
            self.w_cand,
            self.b_cand,
            self.w_update,
            self.b_update,
            self.w_out,
            self.b_out,
        ]
    }
}

/// Tape handles for one GRU step.
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    pub pooled_history: Var,
    pub reset_gate: Var,
    pub candidate: Var,
    pub update_gate: Var,
    pub hidden: Var,
}

/// Tape handles and probability for one frame.
#[derive(Clone, Copy, Debug)]
pub struct FrameActivations {
    pub feature_map: Var,
    pub features: Var,
    pub gru: GruVars,
    pub scores: Var,
    pub prob: f64,
}

/// Per-frame accident probabilities of one video.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilitySeries {
    pub probs: Vec<f64>,
}

impl ProbabilitySeries {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Everything a forward pass leaves behind for training and explanation.
#[derive(Clone, Debug)]
pub struct NetActivations {
    pub tape: Tape,
    pub params: ParamVars,
    pub frames: Vec<FrameActivations>,
    weights: NetParams,
    feature_maps: Vec<Tensor>,
}

impl NetActivations {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn weights(&self) -> &NetParams {
        &self.weights
    }

    /// The `K×U×V` input of frame `t`.
    pub fn feature_map(&self, t: usize) -> &Tensor {
        &self.feature_maps[t]
    }

    /// `h'_{t-1}` as used at frame `t`.
    pub fn pooled_history(&self, t: usize) -> &Tensor {
        self.tape.value(self.frames[t].gru.pooled_history)
    }

    pub fn hidden(&self, t: usize) -> &Tensor {
        self.tape.value(self.frames[t].gru.hidden)
    }

    /// `[y^c_t, y^{!c}_t]`.
    pub fn scores(&self, t: usize) -> [f64; 2] {
        let s = self.tape.value(self.frames[t].scores).data();
        [s[0], s[1]]
    }
}

fn affine(tape: &mut Tape, w: Var, x: Var, b: Var) -> Result<Var> {
    let wx = tape.matvec(w, x)?;
    tape.add(wx, b)
}

/// Records `W_dense · flatten(A_t) + B_dense`.
pub fn project_features_on(tape: &mut Tape, p: &ParamVars, flat_map: Var) -> Result<Var> {
    affine(tape, p.w_dense, flat_map, p.b_dense)
}

/// Records one GRU step. `history` holds the previous hidden states to be
/// averaged; an empty history means a zero recurrent input.
pub fn gru_step_on(tape: &mut Tape, p: &ParamVars, x: Var, history: &[Var]) -> Result<GruVars> {
    let hidden_dim = tape.value(p.b_reset).shape()[0];
    for &h in history {
        let shape = tape.value(h).shape();
        if shape != [hidden_dim] {
            return Err(Error::shape("gru_step", shape, &[hidden_dim]));
        }
    }
    let pooled = if history.is_empty() {
        tape.constant(Tensor::zeros(&[hidden_dim]))
    } else {
        tape.avgpool(history)?
    };

    let gate = |tape: &mut Tape, w: Var, b: Var, h: Var| -> Result<Var> {
        let wx = tape.matvec(w, x)?;
        let bh = tape.matvec(b, h)?;
        tape.add(wx, bh)
    };

    let pre = gate(tape, p.w_reset, p.b_reset, pooled)?;
    let reset_gate = tape.sigmoid(pre);

    let gated = tape.mul(reset_gate, pooled)?;
    let pre = gate(tape, p.w_cand, p.b_cand, gated)?;
    let candidate = tape.tanh(pre);

    let pre = gate(tape, p.w_update, p.b_update, pooled)?;
    let update_gate = tape.sigmoid(pre);

    let ones = tape.constant(Tensor::full(&[hidden_dim], 1.0));
    let neg = tape.scale(update_gate, -1.0);
    let keep = tape.add(ones, neg)?;
    let fresh = tape.mul(keep, candidate)?;
    let carried = tape.mul(update_gate, pooled)?;
    let hidden = tape.add(fresh, carried)?;

    Ok(GruVars {
        pooled_history: pooled,
        reset_gate,
        candidate,
        update_gate,
        hidden,
    })
}

/// Records `W_0 h_t + B_0`.
pub fn classify_on(tape: &mut Tape, p: &ParamVars, hidden: Var) -> Result<Var> {
    affine(tape, p.w_out, hidden, p.b_out)
}

fn check_map(params: &NetParams, map: &Tensor) -> Result<()> {
    let expected = params.config.feature_shape();
    if map.shape() != expected {
        return Err(Error::shape("project_features", map.shape(), &expected));
    }
    Ok(())
}

/// Feature vector `x_t` for one `K×U×V` map.
pub fn project_features(map: &Tensor, params: &NetParams) -> Result<Tensor> {
    check_map(params, map)?;
    let mut tape = Tape::new();
    let p = ParamVars::register(&mut tape, params, false);
    let flat = tape.constant(map.reshape(vec![params.config.flat_len()])?);
    let x = project_features_on(&mut tape, &p, flat)?;
    Ok(tape.value(x).clone())
}

/// Hidden state `h_t` for one step, given the previous hidden states.
pub fn gru_step(x: &Tensor, history: &[Tensor], params: &NetParams) -> Result<Tensor> {
    if x.shape() != [params.config.feature_dim] {
        return Err(Error::shape("gru_step", x.shape(), &[params.config.feature_dim]));
    }
    let mut tape = Tape::new();
    let p = ParamVars::register(&mut tape, params, false);
    let xv = tape.constant(x.clone());
    let hist: Vec<Var> = history.iter().map(|h| tape.constant(h.clone())).collect();
    let g = gru_step_on(&mut tape, &p, xv, &hist)?;
    Ok(tape.value(g.hidden).clone())
}

/// Class scores `ŷ_t` for one hidden state.
pub fn classify(hidden: &Tensor, params: &NetParams) -> Result<Tensor> {
    if hidden.shape() != [params.config.hidden_dim] {
        return Err(Error::shape("classify", hidden.shape(), &[params.config.hidden_dim]));
    }
    let mut tape = Tape::new();
    let p = ParamVars::register(&mut tape, params, false);
    let h = tape.constant(hidden.clone());
    let y = classify_on(&mut tape, &p, h)?;
    Ok(tape.value(y).clone())
}

/// Runs the network over a whole video, recording every step on a fresh tape
/// with the parameters as differentiable leaves.
///
/// Before frame `M` the history buffer is padded with zero vectors, so the
/// pooled recurrent input is always a mean over exactly `M` entries.
pub fn forward_video(
    seq: &FeatureMapSeq,
    params: &NetParams,
) -> Result<(ProbabilitySeries, NetActivations)> {
    let cfg = params.config;
    if seq.is_empty() {
        return Err(Error::contract("forward_video on an empty sequence"));
    }
    let mut tape = Tape::new();
    let p = ParamVars::register(&mut tape, params, true);
    let zero = tape.constant(Tensor::zeros(&[cfg.hidden_dim]));
    let mut history: Vec<Var> = vec![zero; cfg.history];
    let mut frames = Vec::with_capacity(seq.len());
    let mut probs = Vec::with_capacity(seq.len());
    let mut maps = Vec::with_capacity(seq.len());

    for map in seq.frames() {
        check_map(params, map)?;
        let flat = tape.constant(map.reshape(vec![cfg.flat_len()])?);
        let x = project_features_on(&mut tape, &p, flat)?;
        let gru = gru_step_on(&mut tape, &p, x, &history)?;
        let scores = classify_on(&mut tape, &p, gru.hidden)?;
        let s = tape.value(scores).data();
        let prob = softmax2([s[0], s[1]]);
        probs.push(prob);
        frames.push(FrameActivations {
            feature_map: flat,
            features: x,
            gru,
            scores,
            prob,
        });
        maps.push(map.clone());
        history.rotate_right(1);
        history[0] = gru.hidden;
    }

    Ok((
        ProbabilitySeries { probs },
        NetActivations {
            tape,
            params: p,
            frames,
            weights: params.clone(),
            feature_maps: maps,
        },
    ))
}

/// Exact gradient `∂y^class_t / ∂A_t` as a `K×U×V` tensor.
///
/// `h'_{t-1}` depends only on earlier frames, so the frame-`t` map reaches the
/// score solely through `x_t`; the pass is rebuilt on a single-frame tape with
/// the cached pooled history held constant.
pub fn grad_score_wrt_feature_map(acts: &NetActivations, t: usize, class: Class) -> Result<Tensor> {
    if t >= acts.len() {
        return Err(Error::contract(format!(
            "frame {t} out of range for a {}-frame video",
            acts.len()
        )));
    }
    let params = acts.weights();
    let cfg = params.config;
    let mut tape = Tape::new();
    let p = ParamVars::register(&mut tape, params, false);
    let map = tape.leaf(acts.feature_map(t).reshape(vec![cfg.flat_len()])?);
    let pooled = tape.constant(acts.pooled_history(t).clone());
    let x = project_features_on(&mut tape, &p, map)?;
    let gru = gru_step_on(&mut tape, &p, x, &[pooled])?;
    let scores = classify_on(&mut tape, &p, gru.hidden)?;
    let mut pick = [0.0; 2];
    pick[class.index()] = 1.0;
    let pick = tape.constant(Tensor::from_raw(vec![2], pick.to_vec()));
    let chosen = tape.mul(scores, pick)?;
    let score = tape.sum(chosen);
    let grads = tape.backward(score)?;
    grads.get(map).reshape(cfg.feature_shape().to_vec())
}
