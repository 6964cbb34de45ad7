use entangle_core::archive::AuxFields;
use entangle_core::linalg::{dot, Matrix};
use entangle_core::rng::Rng;
use entangle_core::selective::*;
use proptest::prelude::*;

/// Pair counting: wins plus half of ties over all positive/negative pairs.
fn auroc_oracle(scores: &[f64], labels: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / pairs
}

fn digits(mut code: usize, base: usize, n: usize) -> Vec<usize> {
    (0..n)
        .map(|_| {
            let d = code % base;
            code /= base;
            d
        })
        .collect()
}

#[test]
fn auroc_equals_pair_counting_on_every_six_point_dataset() {
    let mut checked = 0;
    for s in 0..3usize.pow(6) {
        let scores: Vec<f64> = digits(s, 3, 6).into_iter().map(|d| d as f64).collect();
        for l in 1..63usize {
            let labels: Vec<bool> = (0..6).map(|b| (l >> b) & 1 == 1).collect();
            let got = auroc(&scores, &labels).unwrap();
            assert_eq!(got, auroc_oracle(&scores, &labels), "{scores:?} {labels:?}");
            let cubed: Vec<f64> = scores.iter().map(|x| x * x * x + 2.0 * x - 7.0).collect();
            assert_eq!(auroc(&cubed, &labels).unwrap(), got);
            checked += 1;
        }
    }
    assert_eq!(checked, 729 * 62);
    assert!(auroc(&[1.0, 2.0], &[true, true]).is_err());
}

proptest! {
    #[test]
    fn auroc_is_exact_under_monotone_maps(
        data in prop::collection::vec((-100i32..100, any::<bool>()), 2..40)
    ) {
        let scores: Vec<f64> = data.iter().map(|d| f64::from(d.0) / 4.0).collect();
        let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let a = auroc(&scores, &labels).unwrap();
        let warped: Vec<f64> = scores.iter().map(|s| (s / 10.0).exp()).collect();
        prop_assert_eq!(auroc(&warped, &labels).unwrap(), a);
        let flipped: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert!((auroc(&flipped, &labels).unwrap() + a - 1.0).abs() < 1e-12);
    }
}

fn traces(scores: &[f64], correct: &[bool]) -> Vec<ScoredTrace> {
    scores
        .iter()
        .zip(correct)
        .enumerate()
        .map(|(i, (&score, &is_correct))| ScoredTrace { trace_id: format!("t{i:05}"), score, is_correct })
        .collect()
}

#[test]
fn indicator_score_is_perfect_up_to_prevalence() {
    let correct: Vec<bool> = (0..200).map(|i| i % 5 < 2).collect();
    let scores: Vec<f64> = correct.iter().map(|&c| f64::from(u8::from(c))).collect();
    let t = traces(&scores, &correct);
    let curve = coverage_curve(&t, &[0.1, 0.2, 0.3, 0.4, 0.5, 1.0]).unwrap();
    for p in &curve[..4] {
        assert_eq!(p.accuracy, 1.0, "q={}", p.coverage);
    }
    assert_eq!(curve[4].accuracy, 0.8);
    assert_eq!(curve[5].accuracy, 0.4);
    assert_eq!(curve[5].delta_pp, 0.0);
    assert!((curve[0].delta_pp - 60.0).abs() < 1e-9);
}

#[test]
fn full_coverage_is_dataset_accuracy() {
    let mut rng = Rng::new(2);
    for n in [1usize, 7, 333] {
        let correct: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.6).collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let p = accuracy_at_coverage(&traces(&scores, &correct), 1.0).unwrap();
        assert_eq!(p.kept, n);
        assert_eq!(p.accuracy, correct.iter().filter(|&&c| c).count() as f64 / n as f64);
    }
}

#[test]
fn random_scores_track_base_accuracy() {
    let mut rng = Rng::new(8);
    let n = 2000;
    let correct: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.65).collect();
    let scores: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
    for p in coverage_curve(&traces(&scores, &correct), &default_coverage_grid()).unwrap() {
        assert!(p.delta_pp.abs() <= 3.0, "q={} delta={}", p.coverage, p.delta_pp);
    }
}

#[test]
fn coverage_ties_break_by_trace_id_and_kept_rounds_up() {
    let t = traces(&[1.0, 1.0, 1.0, 0.0], &[false, true, true, true]);
    // kept = ⌈0.5·4⌉ = 2 → t00000 (wrong) and t00001 (right)
    let p = accuracy_at_coverage(&t, 0.5).unwrap();
    assert_eq!(p.kept, 2);
    assert_eq!(p.accuracy, 0.5);
    assert_eq!(accuracy_at_coverage(&t, 0.26).unwrap().kept, 2);
    let ten: Vec<ScoredTrace> = traces(&[0.0; 1000], &[true; 1000]);
    assert_eq!(accuracy_at_coverage(&ten, 0.6).unwrap().kept, 600);
    assert!(coverage_curve(&t, &[0.0]).is_err());
}

/// Exhaustive split search: every cut at or below each observed value, both
/// orientations, plus the constant classifiers.
fn threshold_oracle(x: &[f64], y: &[bool]) -> f64 {
    let n = x.len() as f64;
    let mut cuts: Vec<f64> = x.to_vec();
    cuts.push(f64::NEG_INFINITY);
    let mut best: f64 = 0.0;
    for &c in &cuts {
        let above = x.iter().zip(y).filter(|(v, l)| (**v > c) == **l).count() as f64 / n;
        best = best.max(above).max(1.0 - above);
    }
    best
}

#[test]
fn a_lin_matches_exhaustive_threshold_oracle_on_five_points() {
    for s in 0..4usize.pow(5) {
        let proj: Vec<f64> = digits(s, 4, 5).into_iter().map(|d| d as f64 - 1.5).collect();
        let states = Matrix::from_rows(&proj.iter().map(|p| [*p, 0.0]).collect::<Vec<_>>()).unwrap();
        for l in 1..31usize {
            let labels: Vec<bool> = (0..5).map(|b| (l >> b) & 1 == 1).collect();
            let got = lap_a_lin(&states, &labels, &[1.0, 0.0]).unwrap();
            assert_eq!(got, threshold_oracle(&proj, &labels), "{proj:?} {labels:?}");
            let t = best_threshold(&proj, &labels).unwrap();
            let hits = proj.iter().zip(&labels).filter(|(p, l)| t.predict(**p) == **l).count();
            assert_eq!(hits as f64 / 5.0, got);
        }
    }
}

#[test]
fn heldout_threshold_is_scored_on_the_other_split() {
    let train = Matrix::from_rows(&[[0.0], [1.0], [2.0], [3.0]]).unwrap();
    let test = Matrix::from_rows(&[[0.4], [1.6], [2.6]]).unwrap();
    let a = lap_a_lin_heldout(&train, &[false, false, true, true], &test, &[false, false, true], &[1.0]).unwrap();
    assert!((a - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn top_tokens_match_selection_sort_oracle() {
    let mut rng = Rng::new(4);
    let w_rows: Vec<Vec<f64>> = (0..12).map(|i| if i % 4 == 0 { vec![1.0, 1.0, 0.0] } else { (0..3).map(|_| rng.normal()).collect() }).collect();
    let w = Matrix::from_rows(&w_rows).unwrap();
    let vocab: Vec<String> = (0..12).map(|i| format!("tok{i}")).collect();
    let dir = [0.6, 0.8, 0.0];
    let got = lap_top_tokens(&dir, Some(&w), &vocab, 5).unwrap();

    let scores: Vec<f64> = w_rows.iter().map(|r| dot(r, &dir)).collect();
    let mut taken = [false; 12];
    for (rank, r) in got.iter().enumerate() {
        let mut best: Option<usize> = None;
        for i in 0..12 {
            if !taken[i] && best.is_none_or(|b| scores[i] > scores[b]) {
                best = Some(i);
            }
        }
        let b = best.unwrap();
        taken[b] = true;
        assert_eq!(r.index, b, "rank {rank}");
        assert_eq!(r.token, vocab[b]);
        assert_eq!(r.score, scores[b]);
    }
    assert!(lap_top_tokens(&dir, None, &vocab, 5).is_err());
}

#[test]
fn baselines_derive_from_option_probs() {
    let aux = AuxFields { option_probs: Some(vec![0.5, 0.25, 0.25]), ..AuxFields::default() };
    let b = baselines(Some(&aux), Some(&[3.0, 4.0])).unwrap();
    let ne = 0.5 * 0.5f64.ln() + 2.0 * 0.25 * 0.25f64.ln();
    assert!((b.neg_entropy.unwrap() - ne).abs() < 1e-15);
    assert_eq!(b.max_prob, Some(0.5));
    assert_eq!(b.logit_margin, Some(0.25));
    assert_eq!(b.hidden_norm, Some(5.0));
    assert!(b.missing.is_empty());

    let none = baselines(None, None).unwrap();
    assert_eq!(none.missing.len(), 4);
    let bad = AuxFields { option_probs: Some(vec![0.5, 0.6]), ..AuxFields::default() };
    assert!(baselines(Some(&bad), None).is_err());
}

/// Best in-sample accuracy of any linear rule on 2-D points. An optimal
/// boundary can be rotated until it passes through two points, so normals
/// to every pair difference, nudged both ways, cover all distinct splits.
fn best_linear_2d(pts: &[[f64; 2]], y: &[bool]) -> f64 {
    let mut best: f64 = 0.0;
    let mut angles = vec![0.0, core::f64::consts::FRAC_PI_2];
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            let (dx, dy) = (pts[j][0] - pts[i][0], pts[j][1] - pts[i][1]);
            let normal = dy.atan2(-dx);
            angles.extend([normal, normal - 1e-7, normal + 1e-7]);
        }
    }
    for t in angles {
        let (c, s) = (t.cos(), t.sin());
        let proj: Vec<f64> = pts.iter().map(|p| c * p[0] + s * p[1]).collect();
        best = best.max(threshold_oracle(&proj, y));
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn a_lin_never_beats_optimal_rule_on_a_nested_feature_set(
        data in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, any::<bool>()), 3..12)
    ) {
        let y: Vec<bool> = data.iter().map(|d| d.2).collect();
        prop_assume!(y.iter().any(|&l| l) && y.iter().any(|&l| !l));
        let pts: Vec<[f64; 2]> = data.iter().map(|d| [d.0, d.1]).collect();
        let x = Matrix::from_rows(&pts).unwrap();
        let a_lin = lap_a_lin(&x, &y, &[1.0, 0.0]).unwrap();
        prop_assert!(a_lin <= best_linear_2d(&pts, &y));
    }
}

#[test]
fn lap_profile_records_gap() {
    let mut p = LapProfile::default();
    p.push(3, 0.55, 0.8, Vec::new());
    assert_eq!(p.layers[0].layer, 3);
    assert!((p.layers[0].gap - 0.25).abs() < 1e-15);
}
