//! Independent reference implementations used by the integration and
//! acceptance tests. Nothing here calls into the tape or the metric code
//! under test; everything is written as plain loops.
#![allow(dead_code)]

use anticipatr::antnet::{NetConfig, NetParams};
use anticipatr::tensorkit::Tensor;
use rand::Rng;

/// Central finite difference of `f` at `x`.
pub fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| rel_err(x, y, floor)).fold(0.0, f64::max)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn random_vec(n: usize, scale: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn random_config(rng: &mut impl Rng) -> NetConfig {
    NetConfig {
        channels: rng.random_range(1..=4),
        height: rng.random_range(1..=4),
        width: rng.random_range(1..=4),
        feature_dim: rng.random_range(1..=8),
        hidden_dim: rng.random_range(1..=8),
        history: rng.random_range(1..=3),
    }
}

/// Parameters with every entry uniform in `±scale`.
pub fn random_params(cfg: NetConfig, scale: f64, rng: &mut impl Rng) -> NetParams {
    let tensors = NetParams::shapes(&cfg)
        .into_iter()
        .map(|shape| {
            let n = shape.iter().product();
            Tensor::new(shape, random_vec(n, scale, rng)).unwrap()
        })
        .collect();
    NetParams::from_tensors(cfg, tensors).unwrap()
}

pub fn random_maps(cfg: &NetConfig, frames: usize, rng: &mut impl Rng) -> Vec<Tensor> {
    (0..frames)
        .map(|_| Tensor::new(cfg.feature_shape().to_vec(), random_vec(cfg.flat_len(), 1.0, rng)).unwrap())
        .collect()
}

/// Flat copy of every parameter, in checkpoint order.
pub fn flatten_params(p: &NetParams) -> Vec<f64> {
    p.tensors().iter().flat_map(|t| t.data().to_vec()).collect()
}

pub fn unflatten_params(cfg: NetConfig, flat: &[f64]) -> NetParams {
    let mut at = 0;
    let tensors = NetParams::shapes(&cfg)
        .into_iter()
        .map(|shape| {
            let n: usize = shape.iter().product();
            let t = Tensor::new(shape, flat[at..at + n].to_vec()).unwrap();
            at += n;
            t
        })
        .collect();
    NetParams::from_tensors(cfg, tensors).unwrap()
}

fn matvec(w: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    w.chunks(n).map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One recurrent step written out directly.
pub fn gru_oracle(p: &NetParams, x: &[f64], pooled: &[f64]) -> Vec<f64> {
    let h = pooled.len();
    let add = |a: Vec<f64>, b: Vec<f64>| a.iter().zip(&b).map(|(x, y)| x + y).collect::<Vec<f64>>();
    let r: Vec<f64> = add(matvec(p.w_reset.data(), x), matvec(p.b_reset.data(), pooled))
        .into_iter()
        .map(sig)
        .collect();
    let gated: Vec<f64> = (0..h).map(|i| r[i] * pooled[i]).collect();
    let c: Vec<f64> = add(matvec(p.w_cand.data(), x), matvec(p.b_cand.data(), &gated))
        .into_iter()
        .map(f64::tanh)
        .collect();
    let u: Vec<f64> = add(matvec(p.w_update.data(), x), matvec(p.b_update.data(), pooled))
        .into_iter()
        .map(sig)
        .collect();
    (0..h).map(|i| (1.0 - u[i]) * c[i] + u[i] * pooled[i]).collect()
}

/// Per-frame scores, accident probabilities and pooled histories.
pub struct OracleRun {
    pub scores: Vec<[f64; 2]>,
    pub probs: Vec<f64>,
    pub pooled: Vec<Vec<f64>>,
}

/// Whole-video forward pass with a zero-padded history of `M` states.
pub fn forward_oracle(p: &NetParams, maps: &[Vec<f64>]) -> OracleRun {
    let cfg = p.config;
    let mut history: Vec<Vec<f64>> = vec![vec![0.0; cfg.hidden_dim]; cfg.history];
    let mut run = OracleRun {
        scores: vec![],
        probs: vec![],
        pooled: vec![],
    };
    for a in maps {
        let (y, pooled, h) = frame_oracle(p, a, &history);
        run.scores.push(y);
        run.probs.push(1.0 / (1.0 + (y[1] - y[0]).exp()));
        run.pooled.push(pooled);
        history.insert(0, h);
        history.truncate(cfg.history);
    }
    run
}

fn frame_oracle(p: &NetParams, a: &[f64], history: &[Vec<f64>]) -> ([f64; 2], Vec<f64>, Vec<f64>) {
    let cfg = p.config;
    let x: Vec<f64> = matvec(p.w_dense.data(), a)
        .iter()
        .zip(p.b_dense.data())
        .map(|(v, b)| v + b)
        .collect();
    let pooled: Vec<f64> = (0..cfg.hidden_dim)
        .map(|i| history.iter().map(|h| h[i]).sum::<f64>() / history.len() as f64)
        .collect();
    let h = gru_oracle(p, &x, &pooled);
    let y = matvec(p.w_out.data(), &h);
    ([y[0] + p.b_out.data()[0], y[1] + p.b_out.data()[1]], pooled, h)
}

/// Score of `class` at one frame as a function of that frame's map alone,
/// with the pooled history held fixed.
pub fn frame_score_oracle(p: &NetParams, a: &[f64], pooled: &[f64], class: usize) -> f64 {
    let (y, _, _) = frame_oracle(p, a, &[pooled.to_vec()]);
    y[class]
}

/// Loss computed from scratch: weights `exp(-max((τ-t)/f, 0))`, natural logs.
pub fn loss_oracle(probs: &[f64], positive: bool, tau: Option<usize>, fps: f64) -> f64 {
    let mut total = 0.0;
    for (t, &p) in probs.iter().enumerate() {
        if positive {
            let tau = tau.unwrap() as f64;
            let lead = ((tau - t as f64) / fps).max(0.0);
            total -= (-lead).exp() * p.ln();
        } else {
            total -= (1.0 - p).ln();
        }
    }
    total
}

// ---------------------------------------------------------------------------
// Metrics by brute force
// ---------------------------------------------------------------------------

/// `(recall, precision)` for every distinct score used as an inclusive
/// threshold, highest first.
pub fn pr_brute(scores: &[f64], labels: &[bool]) -> Vec<(f64, f64)> {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let positives = labels.iter().filter(|&&l| l).count() as f64;
    thresholds
        .iter()
        .map(|&thr| {
            let mut tp = 0.0;
            let mut flagged = 0.0;
            for (s, &l) in scores.iter().zip(labels) {
                if *s >= thr {
                    flagged += 1.0;
                    if l {
                        tp += 1.0;
                    }
                }
            }
            (tp / positives, tp / flagged)
        })
        .collect()
}

pub fn ap_brute(points: &[(f64, f64)]) -> f64 {
    let mut area = 0.0;
    let mut prev = (0.0, points[0].1);
    for &(r, p) in points {
        area += (r - prev.0) * (p + prev.1) / 2.0;
        prev = (r, p);
    }
    area
}

pub fn tta_brute(probs: &[f64], tau: usize, fps: f64, thr: f64) -> Option<f64> {
    for t in 0..=tau.min(probs.len() - 1) {
        if probs[t] > thr {
            return Some((tau - t) as f64 / fps);
        }
    }
    None
}

pub fn nss_brute(s: &[f64], f: &[f64]) -> f64 {
    let n = s.len() as f64;
    let mean = s.iter().sum::<f64>() / n;
    let std = (s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let fixated: Vec<f64> = s.iter().zip(f).filter(|(_, &fv)| fv > 0.0).map(|(&sv, _)| (sv - mean) / std).collect();
    fixated.iter().sum::<f64>() / fixated.len() as f64
}

/// AUC-Judd by counting, quadratic time.
pub fn auc_judd_brute(s: &[f64], f: &[f64]) -> f64 {
    let mut fix: Vec<f64> = s.iter().zip(f).filter(|(_, &fv)| fv > 0.0).map(|(&v, _)| v).collect();
    let rest: Vec<f64> = s.iter().zip(f).filter(|(_, &fv)| fv <= 0.0).map(|(&v, _)| v).collect();
    fix.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut xs = vec![0.0];
    let mut ys = vec![0.0];
    for (i, &thr) in fix.iter().enumerate() {
        ys.push((i + 1) as f64 / fix.len() as f64);
        xs.push(rest.iter().filter(|&&v| v >= thr).count() as f64 / rest.len() as f64);
    }
    xs.push(1.0);
    ys.push(1.0);
    (1..xs.len()).map(|i| (xs[i] - xs[i - 1]) * (ys[i] + ys[i - 1]) / 2.0).sum()
}

/// Probability that a fixated value beats a non-fixated one, ties counted half.
pub fn rank_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &p in pos {
        for &n in neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

pub fn kl_brute(s: &[f64], f: &[f64], eps: f64) -> f64 {
    let ss: f64 = s.iter().sum();
    let fs: f64 = f.iter().sum();
    let mut total = 0.0;
    for (a, b) in s.iter().zip(f) {
        let q = b / fs;
        let p = a / ss;
        total += q * (eps + q / (eps + p)).ln();
    }
    total
}

/// Dominant right singular vector of the `rows × cols` column-major matrix
/// by power iteration on `MᵀM`.
pub fn top_right_singular(m: &[f64], rows: usize, cols: usize, iters: usize) -> Vec<f64> {
    let col = |j: usize| &m[j * rows..(j + 1) * rows];
    let gram: Vec<f64> = (0..cols)
        .flat_map(|i| (0..cols).map(move |j| (i, j)))
        .map(|(i, j)| col(i).iter().zip(col(j)).map(|(a, b)| a * b).sum())
        .collect();
    let mut v: Vec<f64> = (0..cols).map(|i| 1.0 + 0.1 * i as f64).collect();
    for _ in 0..iters {
        let next: Vec<f64> = (0..cols).map(|i| (0..cols).map(|j| gram[i * cols + j] * v[j]).sum()).collect();
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = next.iter().map(|x| x / norm).collect();
    }
    v
}
