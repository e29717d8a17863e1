//! Anticipation metrics (precision/recall, AP, P@80R, TTA, mTTA) and
//! saliency agreement metrics (NSS, AUC-Judd, AUC-Borji, KL).

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensorkit::Tensor;

/// Probability series of one video together with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoPrediction {
    pub id: String,
    pub positive: bool,
    pub tau: Option<usize>,
    pub fps: f64,
    pub probs: Vec<f64>,
}

impl VideoPrediction {
    /// Frames that count toward a detection: `t ≤ τ` for positives, every
    /// frame for negatives.
    pub fn decision_window(&self) -> &[f64] {
        match (self.positive, self.tau) {
            (true, Some(tau)) => &self.probs[..(tau + 1).min(self.probs.len())],
            _ => &self.probs,
        }
    }

    /// The video is flagged at threshold `a` iff this score exceeds `a`.
    pub fn decision_score(&self) -> f64 {
        self.decision_window()
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// One point of the precision–recall curve. A video is predicted positive
/// at this point iff its decision score is strictly above `threshold`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    pub threshold: f64,
}

fn check_predictions(preds: &[VideoPrediction]) -> Result<(usize, usize)> {
    let positives = preds.iter().filter(|p| p.positive).count();
    let negatives = preds.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Metric(format!(
            "precision/recall needs both classes, got {positives} positive and {negatives} negative videos"
        )));
    }
    for p in preds {
        if p.probs.is_empty() {
            return Err(Error::Metric(format!("video {} has no frames", p.id)));
        }
        if let Some(v) = p.probs.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Metric(format!("video {}: probability {v} outside [0, 1]", p.id)));
        }
        if p.positive && p.tau.is_none() {
            return Err(Error::Metric(format!("positive video {} has no tau", p.id)));
        }
    }
    Ok((positives, negatives))
}

/// Precision/recall at every distinct decision score, highest threshold
/// first.
pub fn pr_points(preds: &[VideoPrediction]) -> Result<Vec<PrPoint>> {
    let (positives, _) = check_predictions(preds)?;
    let mut scored: Vec<(f64, bool)> = preds.iter().map(|p| (p.decision_score(), p.positive)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < scored.len() {
        let score = scored[i].0;
        while i < scored.len() && scored[i].0 == score {
            if scored[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        // Below the lowest score the cut must still sit strictly under it.
        let floor = if score > 0.0 { 0.0 } else { score - 1.0 };
        let next = scored.get(i).map_or(floor, |s| s.0);
        points.push(PrPoint {
            recall: tp as f64 / positives as f64,
            precision: tp as f64 / (tp + fp) as f64,
            threshold: threshold_between(score, next),
        });
    }
    Ok(points)
}

/// A value `a` with `next ≤ a < score`, so that `x > a ⟺ x ≥ score` for
/// every decision score `x`.
fn threshold_between(score: f64, next: f64) -> f64 {
    let mid = 0.5 * (score + next);
    if mid < score {
        mid
    } else {
        next
    }
}

/// Area under the PR curve by the trapezoid rule over recall, starting from
/// `(R = 0, P = first precision)`.
pub fn average_precision(points: &[PrPoint]) -> f64 {
    let Some(first) = points.first() else {
        return 0.0;
    };
    let mut area = 0.0;
    let (mut r0, mut p0) = (0.0, first.precision);
    for pt in points {
        area += (pt.recall - r0) * (pt.precision + p0) / 2.0;
        r0 = pt.recall;
        p0 = pt.precision;
    }
    area.clamp(0.0, 1.0)
}

/// Precision at the first (highest-threshold) point with recall ≥ `target`,
/// and that point's threshold.
pub fn precision_at_recall(points: &[PrPoint], target: f64) -> Result<(f64, f64)> {
    points
        .iter()
        .find(|p| p.recall >= target)
        .map(|p| (p.precision, p.threshold))
        .ok_or_else(|| {
            let best = points.iter().map(|p| p.recall).fold(0.0, f64::max);
            Error::Metric(format!("curve never reaches recall {target} (max {best})"))
        })
}

/// Time-to-accident of one positive video at one threshold.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tta {
    pub seconds: f64,
    /// No frame at or before `τ` crossed the threshold.
    pub missed: bool,
}

/// `(τ - t_first) / fps`, with `t_first` the earliest frame `t ≤ τ` whose
/// probability exceeds `threshold`.
pub fn tta(probs: &[f64], tau: usize, fps: f64, threshold: f64) -> Tta {
    let window = &probs[..(tau + 1).min(probs.len())];
    match window.iter().position(|&p| p > threshold) {
        Some(t) => Tta {
            seconds: (tau - t) as f64 / fps,
            missed: false,
        },
        None => Tta {
            seconds: 0.0,
            missed: true,
        },
    }
}

/// Mean TTA over positives that cross `threshold`, with the number of
/// positives that crossed. `None` when no positive crosses.
pub fn mean_tta_at(preds: &[VideoPrediction], threshold: f64) -> Option<(f64, usize)> {
    let mut sum = 0.0;
    let mut n = 0;
    for p in preds.iter().filter(|p| p.positive) {
        let tau = p.tau?;
        let r = tta(&p.probs, tau, p.fps, threshold);
        if !r.missed {
            sum += r.seconds;
            n += 1;
        }
    }
    (n > 0).then(|| (sum / n as f64, n))
}

/// `{0.01, 0.02, …, 0.99}`.
pub fn threshold_grid() -> Vec<f64> {
    (1..=99).map(|i| f64::from(i) / 100.0).collect()
}

/// Mean of [`mean_tta_at`] over the grid points where some positive crosses.
pub fn mtta(preds: &[VideoPrediction], grid: &[f64]) -> Result<f64> {
    if !preds.iter().any(|p| p.positive) {
        return Err(Error::Metric("mTTA needs at least one positive video".into()));
    }
    let per_threshold: Vec<f64> = grid
        .iter()
        .filter_map(|&a| mean_tta_at(preds, a).map(|(s, _)| s))
        .collect();
    if per_threshold.is_empty() {
        return Err(Error::Metric("no positive video crosses any threshold".into()));
    }
    Ok(per_threshold.iter().sum::<f64>() / per_threshold.len() as f64)
}

/// Headline anticipation numbers.
#[derive(Clone, Debug, PartialEq)]
pub struct AnticipationReport {
    pub ap: f64,
    pub mtta: f64,
    pub p_at_80r: f64,
    pub tta_at_80r: f64,
    /// Threshold achieving the 80 % recall point.
    pub threshold_80r: f64,
    pub positives: usize,
    pub negatives: usize,
    /// Positives that never cross the 80 % recall threshold before `τ`.
    pub missed_at_80r: usize,
}

pub fn evaluate_anticipation(preds: &[VideoPrediction]) -> Result<AnticipationReport> {
    let (positives, negatives) = check_predictions(preds)?;
    let points = pr_points(preds)?;
    let ap = average_precision(&points);
    let (p_at_80r, threshold_80r) = precision_at_recall(&points, 0.8)?;
    let (tta_at_80r, crossed) = mean_tta_at(preds, threshold_80r).unwrap_or((0.0, 0));
    Ok(AnticipationReport {
        ap,
        mtta: mtta(preds, &threshold_grid())?,
        p_at_80r,
        tta_at_80r,
        threshold_80r,
        positives,
        negatives,
        missed_at_80r: positives - crossed,
    })
}

pub const ANTICIPATION_HEADER: &str = "AP,mTTA,P@80R,TTA@80R";

/// Summary CSV in `AP,mTTA,P@80R,TTA@80R` order (fractions and seconds).
pub fn anticipation_summary_csv(report: &AnticipationReport) -> String {
    format!(
        "{ANTICIPATION_HEADER}\n{:.6},{:.6},{:.6},{:.6}\n",
        report.ap, report.mtta, report.p_at_80r, report.tta_at_80r
    )
}

/// Per-video CSV: decision score and TTA at the 80 % recall threshold.
pub fn anticipation_videos_csv(preds: &[VideoPrediction], report: &AnticipationReport) -> String {
    let mut s = String::from("id,label,tau,score,tta_80r,missed_80r\n");
    for p in preds {
        let (tta_s, missed) = match (p.positive, p.tau) {
            (true, Some(tau)) => {
                let r = tta(&p.probs, tau, p.fps, report.threshold_80r);
                (format!("{:.6}", r.seconds), u8::from(r.missed).to_string())
            }
            _ => (String::new(), String::new()),
        };
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{},{}",
            p.id,
            u8::from(p.positive),
            p.tau.map(|t| t.to_string()).unwrap_or_default(),
            p.decision_score(),
            tta_s,
            missed
        );
    }
    s
}

// ----------------------------------------------------------------------------
// Saliency agreement
// ----------------------------------------------------------------------------

fn check_pair(s: &Tensor, f: &Tensor) -> Result<()> {
    if s.shape() != f.shape() {
        return Err(Error::shape("saliency metric", s.shape(), f.shape()));
    }
    Ok(())
}

fn split_by_fixation(s: &Tensor, f: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    check_pair(s, f)?;
    let mut fix = Vec::new();
    let mut rest = Vec::new();
    for (&sv, &fv) in s.data().iter().zip(f.data()) {
        if fv > 0.0 {
            fix.push(sv);
        } else {
            rest.push(sv);
        }
    }
    if fix.is_empty() {
        return Err(Error::Metric("no fixations".into()));
    }
    Ok((fix, rest))
}

/// Normalised scanpath saliency: mean z-scored saliency over fixated
/// pixels, standardising with the population standard deviation.
pub fn nss(s: &Tensor, f: &Tensor) -> Result<f64> {
    check_pair(s, f)?;
    let n = s.numel() as f64;
    let mean = s.sum() / n;
    let var = s.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let fixated = f.data().iter().filter(|&&v| v > 0.0).count();
    if fixated == 0 {
        return Err(Error::Metric("no fixations".into()));
    }
    if !(std > 0.0) {
        return Err(Error::Metric("degenerate saliency".into()));
    }
    let total: f64 = s
        .data()
        .iter()
        .zip(f.data())
        .filter(|(_, &fv)| fv > 0.0)
        .map(|(&sv, _)| (sv - mean) / std)
        .sum();
    Ok(total / fixated as f64)
}

/// AUC-Judd. Each fixated pixel contributes one threshold (its saliency,
/// visited in descending order); after the `i`-th of `n` thresholds the true
/// positive rate is `i / n` and the false positive rate is the fraction of
/// non-fixated pixels with saliency at or above it.
pub fn auc_judd(s: &Tensor, f: &Tensor) -> Result<f64> {
    let (mut fix, mut rest) = split_by_fixation(s, f)?;
    if rest.is_empty() {
        return Err(Error::Metric("every pixel is fixated".into()));
    }
    fix.sort_by(|a, b| b.total_cmp(a));
    rest.sort_by(|a, b| b.total_cmp(a));
    let (n, m) = (fix.len() as f64, rest.len() as f64);
    let mut area = 0.0;
    let (mut x0, mut y0) = (0.0, 0.0);
    let mut above = 0;
    for (i, &thr) in fix.iter().enumerate() {
        while above < rest.len() && rest[above] >= thr {
            above += 1;
        }
        let (x, y) = (above as f64 / m, (i + 1) as f64 / n);
        area += (x - x0) * (y + y0) / 2.0;
        x0 = x;
        y0 = y;
    }
    area += (1.0 - x0) * (1.0 + y0) / 2.0;
    Ok(area)
}

/// ROC area for a threshold sweep over every distinct value of `pos ∪ neg`,
/// with rates counted as `≥ threshold` and endpoints `(0,0)`, `(1,1)`.
pub fn sweep_auc(pos: &mut [f64], neg: &mut [f64]) -> f64 {
    pos.sort_by(|a, b| b.total_cmp(a));
    neg.sort_by(|a, b| b.total_cmp(a));
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut area = 0.0;
    let (mut x0, mut y0) = (0.0, 0.0);
    while i < pos.len() || j < neg.len() {
        let thr = match (pos.get(i), neg.get(j)) {
            (Some(&a), Some(&b)) => a.max(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => unreachable!(),
        };
        while i < pos.len() && pos[i] >= thr {
            i += 1;
        }
        while j < neg.len() && neg[j] >= thr {
            j += 1;
        }
        let (x, y) = (j as f64 / nn, i as f64 / np);
        area += (x - x0) * (y + y0) / 2.0;
        x0 = x;
        y0 = y;
    }
    area + (1.0 - x0) * (1.0 + y0) / 2.0
}

/// AUC-Borji: mean over `n_splits` of the threshold-sweep AUC between the
/// fixated pixels and an equally sized sample (with replacement) of
/// non-fixated pixels drawn from a generator seeded by `seed`.
pub fn auc_borji(s: &Tensor, f: &Tensor, n_splits: usize, seed: u64) -> Result<f64> {
    if n_splits == 0 {
        return Err(Error::Metric("n_splits must be at least 1".into()));
    }
    let (fix, rest) = split_by_fixation(s, f)?;
    if rest.is_empty() {
        return Err(Error::Metric("every pixel is fixated".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    let mut pos = fix.clone();
    let mut neg = vec![0.0; fix.len()];
    for _ in 0..n_splits {
        for slot in neg.iter_mut() {
            *slot = rest[rng.random_range(0..rest.len())];
        }
        pos.copy_from_slice(&fix);
        total += sweep_auc(&mut pos, &mut neg);
    }
    Ok(total / n_splits as f64)
}

/// `Σ F_i log(ε + F_i / (ε + S_i))` after normalising both maps to unit
/// sum; an all-zero map stays all zero.
pub fn kl_div(s: &Tensor, f: &Tensor, eps: f64) -> Result<f64> {
    check_pair(s, f)?;
    let norm = |t: &Tensor| -> Vec<f64> {
        let total = t.sum();
        if total > 0.0 {
            t.data().iter().map(|v| v / total).collect()
        } else {
            vec![0.0; t.numel()]
        }
    };
    let (sn, fn_) = (norm(s), norm(f));
    Ok(sn
        .iter()
        .zip(&fn_)
        .map(|(&sv, &fv)| fv * (eps + fv / (eps + sv)).ln())
        .sum())
}

pub const DEFAULT_KL_EPS: f64 = 1e-7;
pub const DEFAULT_BORJI_SPLITS: usize = 100;

/// All four agreement scores for one saliency/fixation pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SaliencyScores {
    pub nss: f64,
    pub auc_judd: f64,
    pub auc_borji: f64,
    pub kl: f64,
}

pub fn score_saliency(s: &Tensor, f: &Tensor, borji_splits: usize, seed: u64, kl_eps: f64) -> Result<SaliencyScores> {
    Ok(SaliencyScores {
        nss: nss(s, f)?,
        auc_judd: auc_judd(s, f)?,
        auc_borji: auc_borji(s, f, borji_splits, seed)?,
        kl: kl_div(s, f, kl_eps)?,
    })
}

/// Running per-method, per-class means for the comparison table.
#[derive(Clone, Debug, Default)]
pub struct SaliencyTable {
    rows: Vec<(String, [Accum; 2])>,
}

#[derive(Clone, Copy, Debug, Default)]
struct Accum {
    n: usize,
    nss: f64,
    auc_judd: f64,
    auc_borji: f64,
    kl: f64,
}

impl SaliencyTable {
    pub fn add(&mut self, method: &str, positive: bool, s: &SaliencyScores) {
        let idx = match self.rows.iter().position(|(m, _)| m == method) {
            Some(i) => i,
            None => {
                self.rows.push((method.to_string(), [Accum::default(); 2]));
                self.rows.len() - 1
            }
        };
        let a = &mut self.rows[idx].1[usize::from(!positive)];
        a.n += 1;
        a.nss += s.nss;
        a.auc_judd += s.auc_judd;
        a.auc_borji += s.auc_borji;
        a.kl += s.kl;
    }

    /// Class means for `method`: `[positive, negative]`, `None` where a class
    /// had no scored frames.
    pub fn means(&self, method: &str) -> Option<[Option<SaliencyScores>; 2]> {
        let (_, acc) = self.rows.iter().find(|(m, _)| m == method)?;
        Some(acc.map(|a| {
            (a.n > 0).then(|| {
                let n = a.n as f64;
                SaliencyScores {
                    nss: a.nss / n,
                    auc_judd: a.auc_judd / n,
                    auc_borji: a.auc_borji / n,
                    kl: a.kl / n,
                }
            })
        }))
    }

    pub fn methods(&self) -> impl Iterator<Item = &str> {
        self.rows.iter().map(|(m, _)| m.as_str())
    }

    /// Methods as rows; NSS, AUC-J, AUC-B, KL columns, each split into
    /// positive and negative. Empty cells where a class had no frames.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,NSS_pos,NSS_neg,AUC-J_pos,AUC-J_neg,AUC-B_pos,AUC-B_neg,KL_pos,KL_neg\n");
        for method in self.methods() {
            let [p, n] = self.means(method).expect("listed method");
            let cell = |x: Option<SaliencyScores>, f: fn(&SaliencyScores) -> f64| {
                x.map(|v| format!("{:.6}", f(&v))).unwrap_or_default()
            };
            let _ = writeln!(
                s,
                "{method},{},{},{},{},{},{},{},{}",
                cell(p, |v| v.nss),
                cell(n, |v| v.nss),
                cell(p, |v| v.auc_judd),
                cell(n, |v| v.auc_judd),
                cell(p, |v| v.auc_borji),
                cell(n, |v| v.auc_borji),
                cell(p, |v| v.kl),
                cell(n, |v| v.kl),
            );
        }
        s
    }
}
