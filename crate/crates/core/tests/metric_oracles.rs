mod oracles;

use anticipatr::metrics::*;
use anticipatr::tensorkit::Tensor;
use oracles::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_preds(rng: &mut impl Rng) -> Vec<VideoPrediction> {
    let n = rng.random_range(2..30);
    let frames = rng.random_range(1..15);
    // Coarse probabilities so ties between videos actually happen.
    let levels = rng.random_range(3..50);
    let mut preds: Vec<VideoPrediction> = (0..n)
        .map(|i| {
            let positive = i % 2 == 0 || rng.random_bool(0.3);
            VideoPrediction {
                id: format!("v{i}"),
                positive,
                tau: positive.then(|| rng.random_range(0..frames)),
                fps: 10.0,
                probs: (0..frames).map(|_| f64::from(rng.random_range(0..=levels)) / f64::from(levels)).collect(),
            }
        })
        .collect();
    preds[1].positive = false;
    preds[1].tau = None;
    preds
}

fn brute_scores(preds: &[VideoPrediction]) -> (Vec<f64>, Vec<bool>) {
    let scores = preds
        .iter()
        .map(|p| {
            let end = if p.positive { p.tau.unwrap() + 1 } else { p.probs.len() };
            p.probs[..end.min(p.probs.len())].iter().cloned().fold(f64::MIN, f64::max)
        })
        .collect();
    (scores, preds.iter().map(|p| p.positive).collect())
}

#[test]
fn pr_curve_ap_and_p80r_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..200 {
        let preds = random_preds(&mut rng);
        let (scores, labels) = brute_scores(&preds);
        let brute = pr_brute(&scores, &labels);
        let points = pr_points(&preds).unwrap();
        assert_eq!(points.len(), brute.len());
        let mut distinct = scores.clone();
        distinct.sort_by(|a, b| b.partial_cmp(a).unwrap());
        distinct.dedup();
        for ((pt, &(r, p)), &cut) in points.iter().zip(&brute).zip(&distinct) {
            assert_eq!((pt.recall, pt.precision), (r, p));
            // The stored threshold reproduces the same decision set with `>`.
            let flagged = scores.iter().filter(|&&s| s > pt.threshold).count();
            let inclusive = scores.iter().filter(|&&s| s >= cut).count();
            assert_eq!(flagged, inclusive);
        }
        assert!((average_precision(&points) - ap_brute(&brute)).abs() < 1e-12);
        let want = brute.iter().find(|(r, _)| *r >= 0.8).unwrap().1;
        assert_eq!(precision_at_recall(&points, 0.8).unwrap().0, want);
    }
}

#[test]
fn tta_and_mtta_match_scans() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let grid = threshold_grid();
    assert_eq!(grid.len(), 99);
    for _ in 0..200 {
        let preds = random_preds(&mut rng);
        let mut per_threshold = vec![];
        for &a in &grid {
            let crossed: Vec<f64> = preds
                .iter()
                .filter(|p| p.positive)
                .filter_map(|p| tta_brute(&p.probs, p.tau.unwrap(), p.fps, a))
                .collect();
            for p in preds.iter().filter(|p| p.positive) {
                let got = tta(&p.probs, p.tau.unwrap(), p.fps, a);
                match tta_brute(&p.probs, p.tau.unwrap(), p.fps, a) {
                    Some(s) => assert!(!got.missed && (got.seconds - s).abs() < 1e-12),
                    None => assert!(got.missed),
                }
            }
            if !crossed.is_empty() {
                let mean = crossed.iter().sum::<f64>() / crossed.len() as f64;
                let (got, n) = mean_tta_at(&preds, a).unwrap();
                assert_eq!(n, crossed.len());
                assert!((got - mean).abs() < 1e-12);
                per_threshold.push(mean);
            } else {
                assert!(mean_tta_at(&preds, a).is_none());
            }
        }
        match mtta(&preds, &grid) {
            Ok(m) => assert!((m - per_threshold.iter().sum::<f64>() / per_threshold.len() as f64).abs() < 1e-12),
            Err(_) => assert!(per_threshold.is_empty()),
        }
    }
}

#[test]
fn walkthrough_tta() {
    let mut probs = vec![0.1; 50];
    for p in &mut probs[7..] {
        *p = 0.9;
    }
    let r = tta(&probs, 38, 10.0, 0.5);
    assert!(!r.missed);
    assert!((r.seconds - 3.1).abs() < 1e-12);
}

#[test]
fn random_scores_give_ap_near_positive_fraction() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let mut total = 0.0;
    let runs = 200;
    for _ in 0..runs {
        let preds: Vec<VideoPrediction> = (0..200)
            .map(|i| VideoPrediction {
                id: format!("v{i}"),
                positive: i % 2 == 0,
                tau: (i % 2 == 0).then_some(0),
                fps: 1.0,
                probs: vec![rng.random::<f64>()],
            })
            .collect();
        total += average_precision(&pr_points(&preds).unwrap());
    }
    let mean = total / runs as f64;
    assert!((mean - 0.5).abs() < 0.02, "{mean}");
}

#[test]
fn perfect_ranking_has_unit_ap() {
    let preds: Vec<VideoPrediction> = (0..10)
        .map(|i| VideoPrediction {
            id: format!("v{i}"),
            positive: i < 4,
            tau: (i < 4).then_some(2),
            fps: 1.0,
            probs: vec![if i < 4 { 0.9 } else { 0.1 }; 3],
        })
        .collect();
    let r = evaluate_anticipation(&preds).unwrap();
    assert_eq!(r.ap, 1.0);
    assert_eq!(r.p_at_80r, 1.0);
    assert_eq!(r.missed_at_80r, 0);
}

#[test]
fn single_class_is_a_metric_error() {
    let preds = vec![VideoPrediction {
        id: "a".into(),
        positive: false,
        tau: None,
        fps: 1.0,
        probs: vec![0.3],
    }];
    assert!(matches!(pr_points(&preds), Err(anticipatr::Error::Metric(_))));
}

fn random_maps(rng: &mut impl Rng, structured: bool) -> (Tensor, Tensor) {
    let (h, w) = (rng.random_range(3..12), rng.random_range(3..12));
    let n = h * w;
    let levels = rng.random_range(4..40);
    let s: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..levels))).collect();
    let mut f: Vec<f64> = (0..n).map(|i| if structured && s[i] > f64::from(levels) * 0.6 { 1.0 } else { 0.0 }).collect();
    if !structured {
        for v in f.iter_mut() {
            *v = if rng.random_bool(0.2) { 1.0 } else { 0.0 };
        }
    }
    f[0] = 1.0;
    f[n - 1] = 0.0;
    (Tensor::new(vec![h, w], s).unwrap(), Tensor::new(vec![h, w], f).unwrap())
}

#[test]
fn saliency_metrics_match_definitions() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for i in 0..300 {
        let (s, f) = random_maps(&mut rng, i % 2 == 0);
        if s.data().iter().all(|&v| v == s.data()[0]) {
            continue;
        }
        assert!((nss(&s, &f).unwrap() - nss_brute(s.data(), f.data())).abs() < 1e-12);
        assert!((auc_judd(&s, &f).unwrap() - auc_judd_brute(s.data(), f.data())).abs() < 1e-12);
        assert!((kl_div(&s, &f, 1e-7).unwrap() - kl_brute(s.data(), f.data(), 1e-7)).abs() < 1e-12);
    }
}

#[test]
fn sweep_auc_is_the_rank_statistic() {
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    for _ in 0..200 {
        let pos: Vec<f64> = (0..rng.random_range(1..30)).map(|_| f64::from(rng.random_range(0..10))).collect();
        let neg: Vec<f64> = (0..rng.random_range(1..30)).map(|_| f64::from(rng.random_range(0..10))).collect();
        let want = rank_auc(&pos, &neg);
        let got = sweep_auc(&mut pos.clone(), &mut neg.clone());
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn auc_borji_is_seeded_and_tracks_auc_judd() {
    let mut rng = ChaCha8Rng::seed_from_u64(46);
    let mut gap = 0.0;
    let n = 100;
    for seed in 0..n {
        // Unstructured continuous maps: no ties, fixations uncorrelated.
        let s = Tensor::new(vec![20, 20], (0..400).map(|_| rng.random::<f64>()).collect()).unwrap();
        let f = Tensor::new(vec![20, 20], (0..400).map(|i| if i % 7 == 0 { 1.0 } else { 0.0 }).collect()).unwrap();
        let a = auc_borji(&s, &f, 100, seed).unwrap();
        assert_eq!(a.to_bits(), auc_borji(&s, &f, 100, seed).unwrap().to_bits());
        gap += a - auc_judd(&s, &f).unwrap();
    }
    assert!((gap / n as f64).abs() < 0.02);
}

#[test]
fn fixations_as_saliency_are_perfect() {
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    for _ in 0..50 {
        let (_, f) = random_maps(&mut rng, false);
        assert_eq!(auc_judd(&f, &f).unwrap(), 1.0);
        assert_eq!(auc_borji(&f, &f, 10, 1).unwrap(), 1.0);
    }
}

#[test]
fn kl_of_identical_maps_vanishes() {
    let f = Tensor::new(vec![2, 3], vec![1.0, 0.0, 2.0, 0.0, 1.0, 4.0]).unwrap();
    let small = kl_div(&f, &f, 1e-12).unwrap();
    assert!(small.abs() < 1e-9, "{small}");
    assert!(kl_div(&f, &f, 1e-7).unwrap().abs() < 1e-5);
}

#[test]
fn degenerate_inputs_are_errors() {
    let s = Tensor::full(&[3, 3], 0.5);
    let mut fd = vec![0.0; 9];
    fd[4] = 1.0;
    let f = Tensor::new(vec![3, 3], fd).unwrap();
    assert!(nss(&s, &f).unwrap_err().to_string().contains("degenerate"));
    let empty = Tensor::zeros(&[3, 3]);
    let s2 = Tensor::new(vec![3, 3], (0..9).map(f64::from).collect()).unwrap();
    assert!(nss(&s2, &empty).unwrap_err().to_string().contains("no fixations"));
    assert!(auc_judd(&s2, &empty).is_err());
    assert!(nss(&s2, &Tensor::zeros(&[2, 2])).is_err());
}

proptest! {
    #[test]
    fn nss_is_affine_invariant(
        data in prop::collection::vec(0.0f64..1.0, 16),
        mask in prop::collection::vec(any::<bool>(), 16),
        a in 0.01f64..100.0,
        b in -50.0f64..50.0,
    ) {
        let mut mask = mask;
        mask[0] = true;
        let s = Tensor::new(vec![4, 4], data).unwrap();
        prop_assume!(s.data().iter().any(|&v| (v - s.data()[0]).abs() > 1e-6));
        let f = Tensor::new(vec![4, 4], mask.iter().map(|&m| f64::from(u8::from(m))).collect()).unwrap();
        let base = nss(&s, &f).unwrap();
        let moved = nss(&s.map(|v| a * v + b), &f).unwrap();
        prop_assert!((base - moved).abs() < 1e-12 * base.abs().max(1.0) * 10.0);
    }

    #[test]
    fn auc_judd_is_monotone_invariant(
        data in prop::collection::vec(-2.0f64..2.0, 16),
        mask in prop::collection::vec(any::<bool>(), 16),
    ) {
        let mut mask = mask;
        mask[0] = true;
        mask[15] = false;
        let s = Tensor::new(vec![4, 4], data).unwrap();
        let f = Tensor::new(vec![4, 4], mask.iter().map(|&m| f64::from(u8::from(m))).collect()).unwrap();
        let base = auc_judd(&s, &f).unwrap();
        prop_assert_eq!(base, auc_judd(&s.map(|v| v * v * v + v), &f).unwrap());
        prop_assert_eq!(base, auc_judd(&s.map(|v| 3.0 * v + 1.0), &f).unwrap());
        prop_assert!((0.0..=1.0).contains(&base));
    }

    #[test]
    fn tta_is_nonincreasing_in_threshold(
        probs in prop::collection::vec(0.0f64..1.0, 1..20),
        tau_frac in 0.0f64..1.0,
        a in 0.0f64..1.0,
        b in 0.0f64..1.0,
    ) {
        let tau = ((probs.len() - 1) as f64 * tau_frac) as usize;
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let r_lo = tta(&probs, tau, 10.0, lo);
        let r_hi = tta(&probs, tau, 10.0, hi);
        if !r_hi.missed {
            prop_assert!(!r_lo.missed);
            prop_assert!(r_hi.seconds <= r_lo.seconds);
        }
    }

    #[test]
    fn ap_lies_in_unit_interval(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let preds = random_preds(&mut rng);
        let ap = average_precision(&pr_points(&preds).unwrap());
        prop_assert!((0.0..=1.0).contains(&ap));
    }
}
