use entangle_core::stats::*;
use proptest::prelude::*;

fn choose(n: u64, k: u64) -> u128 {
    let mut r: u128 = 1;
    for i in 0..k as u128 {
        r = r * (n as u128 - i) / (i + 1);
    }
    r
}

/// Exact two-sided McNemar p from integer binomial coefficients.
fn mcnemar_oracle(b: u64, c: u64) -> f64 {
    let n = b + c;
    let lo = b.min(c);
    let tail: u128 = (0..=lo).map(|j| choose(n, j)).sum();
    (2.0 * tail as f64 / 2f64.powi(n as i32)).min(1.0)
}

#[test]
fn exact_mcnemar_matches_integer_binomial() {
    for b in 0..=25u64 {
        for c in 0..=(25 - b) {
            if b + c == 0 {
                continue;
            }
            let got = mcnemar_two_sided(b, c);
            let want = mcnemar_oracle(b, c);
            assert!((got - want).abs() < 1e-12 * want.max(1e-300) + 1e-15, "b={b} c={c}: {got} vs {want}");
        }
    }
    assert_eq!(mcnemar_two_sided(0, 0), 1.0);
}

#[test]
fn exact_and_asymptotic_agree_at_the_switch() {
    // b + c = 25 is exact, 26 uses the continuity-corrected chi-square
    for b in 8..=12u64 {
        let exact = mcnemar_oracle(b, 25 - b);
        let d = (25 - 2 * b as i64).unsigned_abs() as f64 - 1.0;
        let chi = chi2_sf_1(d.max(0.0).powi(2) / 25.0);
        assert!((exact - chi).abs() < 0.02, "b={b}: {exact} vs {chi}");
        let next = mcnemar_two_sided(b, 26 - b);
        assert!((next - mcnemar_oracle(b, 26 - b)).abs() < 0.02, "b={b}");
    }
}

#[test]
fn chi2_tail_matches_known_quantiles() {
    assert!((chi2_sf_1(3.841458820694124) - 0.05).abs() < 1e-9);
    assert!((chi2_sf_1(6.634896601021214) - 0.01).abs() < 1e-9);
    assert_eq!(chi2_sf_1(0.0), 1.0);
}

#[test]
fn sign_test_counts_upper_tail() {
    // 9 of 10 positive: (C(10,9) + C(10,10)) / 1024
    assert!((sign_test_one_sided(9, 1) - 11.0 / 1024.0).abs() < 1e-15);
    assert_eq!(sign_test_one_sided(0, 5), 1.0);
    assert!((sign_test_one_sided(5, 0) - 1.0 / 32.0).abs() < 1e-15);
}

#[test]
fn normal_quantile_inverts_cdf() {
    for i in 1..200 {
        let p = i as f64 / 200.0;
        assert!((normal_cdf(normal_quantile(p)) - p).abs() < 1e-12);
    }
    assert!((normal_quantile(0.975) - 1.959963984540054).abs() < 1e-9);
}

#[test]
fn holm_hand_case() {
    // sorted: 0.001 ≤ .05/4, 0.012 ≤ .05/3, 0.03 > .05/2 stops, 0.04 kept
    let h = holm_correct(&[0.04, 0.001, 0.03, 0.012], 0.05);
    assert_eq!(h.reject, vec![false, true, false, true]);
    assert_eq!(h.rank1_threshold, 0.0125);
    // boundary equality rejects
    assert_eq!(holm_correct(&[0.025, 0.05], 0.05).reject, vec![true, true]);
}

proptest! {
    #[test]
    fn holm_rejections_grow_with_alpha(
        p in prop::collection::vec(0.0f64..1.0, 1..12), a1 in 0.001f64..0.5, a2 in 0.001f64..0.5
    ) {
        let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
        let small = holm_correct(&p, lo);
        let big = holm_correct(&p, hi);
        for (s, b) in small.reject.iter().zip(&big.reject) {
            prop_assert!(!s || *b);
        }
    }

    #[test]
    fn paired_outcomes_delta_is_discordant_balance(
        pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..60)
    ) {
        let (base, treat): (Vec<bool>, Vec<bool>) = pairs.iter().copied().unzip();
        let o = PairedOutcomes::from_pairs(&base, &treat).unwrap();
        let n = pairs.len() as f64;
        prop_assert_eq!(o.n(), pairs.len() as u64);
        prop_assert!((o.delta() - (o.corrections() as f64 - o.damages() as f64) / n).abs() < 1e-12);
        prop_assert!((o.treated_accuracy() - o.baseline_accuracy() - o.delta()).abs() < 1e-12);
    }
}

#[test]
fn exhaustive_bootstrap_matches_nested_enumeration() {
    let data = [1.0, 2.0, 4.0, 7.0, 11.0];
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let mut stats = Vec::with_capacity(3125);
    for a in data {
        for b in data {
            for c in data {
                for d in data {
                    for e in data {
                        stats.push((a + b + c + d + e) / 5.0);
                    }
                }
            }
        }
    }
    stats.sort_by(f64::total_cmp);
    // type-7 positions for 2.5% and 97.5% over 3125 values
    let at = |q: f64| {
        let h = 3124.0 * q;
        let lo = h.floor() as usize;
        stats[lo] + (h - lo as f64) * (stats[lo + 1] - stats[lo])
    };
    let ci = bootstrap_ci_exhaustive(&data, mean, 0.95).unwrap();
    assert!((ci.estimate - 5.0).abs() < 1e-12);
    assert!((ci.lo - at(0.025)).abs() < 1e-12);
    assert!((ci.hi - at(0.975)).abs() < 1e-12);

    let mc = bootstrap_ci(&data, mean, 4000, 0.95, 5).unwrap();
    assert!((mc.lo - ci.lo).abs() < 0.25 && (mc.hi - ci.hi).abs() < 0.25);
}

#[test]
fn bootstrap_is_reproducible_and_rejects_tiny_samples() {
    let data = [0.3, 0.1, 0.9, 0.4, 0.7, 0.2];
    let med = |xs: &[f64]| {
        let mut v = xs.to_vec();
        v.sort_by(f64::total_cmp);
        quantile_sorted(&v, 0.5)
    };
    assert_eq!(bootstrap_ci(&data, med, 500, 0.9, 1).unwrap(), bootstrap_ci(&data, med, 500, 0.9, 1).unwrap());
    assert!(bootstrap_ci(&[1.0], med, 10, 0.9, 1).is_err());
    assert!(bootstrap_ci_exhaustive(&[0.0; 8], med, 0.9).is_err());
}

#[test]
fn tost_toy_cases() {
    let inside = tost_equivalence(0.004, (-0.01, 0.015), 0.02).unwrap();
    assert!(inside.equivalent);
    let straddle = tost_equivalence(0.01, (-0.005, 0.025), 0.02).unwrap();
    assert!(!straddle.equivalent);

    // 1000 pairs, 10 corrections and 10 damages: δ = 0, se = sqrt(0.02/1000)
    let o = PairedOutcomes { n00: 200, n01: 10, n10: 10, n11: 780 };
    let t = tost_paired(&o, 0.02).unwrap();
    let se = (0.02f64 / 1000.0).sqrt();
    assert!((t.ci90.1 - 1.6448536269514722 * se).abs() < 1e-9);
    assert!(t.equivalent);
    assert!((t.p.unwrap() - (1.0 - normal_cdf(0.02 / se))).abs() < 1e-12);

    let z = tost_paired(&PairedOutcomes { n00: 5, n01: 0, n10: 0, n11: 5 }, 0.02).unwrap();
    assert!(z.zero_variance && z.equivalent && z.p.is_none());
    assert!(tost_equivalence(0.0, (0.0, 0.0), 0.0).is_err());
}

#[test]
fn delta_auroc_cases() {
    let labels = [false, false, false, true, true, true, false, true];
    let perfect = [0.1, 0.2, 0.3, 0.7, 0.8, 0.9, 0.15, 0.95];
    let reversed: Vec<f64> = perfect.iter().map(|s| -s).collect();
    let r = paired_bootstrap_delta_auroc(&perfect, &reversed, &labels, 300, 4).unwrap();
    assert_eq!(r.auroc_a, 1.0);
    assert_eq!(r.auroc_b, 0.0);
    assert_eq!(r.delta, 1.0);
    assert!((r.p - 1.0 / (r.n_used as f64 + 1.0)).abs() < 1e-15);
    assert!(r.n_used > 250 && r.n_used <= 300);

    let same = paired_bootstrap_delta_auroc(&perfect, &perfect, &labels, 100, 4).unwrap();
    assert_eq!(same.delta, 0.0);
    assert_eq!(same.p, 1.0);
}

#[test]
fn rank_correlations() {
    assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 25.0, 100.0]).unwrap() - 1.0).abs() < 1e-12);
    assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
    assert_eq!(midranks(&[5.0, 1.0, 5.0, 3.0]), vec![3.5, 1.0, 3.5, 2.0]);
    assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 7.0]).unwrap() - 0.9933992677987828).abs() < 1e-12);
}
