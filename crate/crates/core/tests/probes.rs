use entangle_core::linalg::{dot, Matrix};
use entangle_core::probes::*;
use entangle_core::rng::Rng;
use proptest::prelude::*;

fn classes(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("c{i}")).collect()
}

fn gaussian(rng: &mut Rng, n: usize, d: usize) -> Matrix {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.normal()).collect()).collect();
    Matrix::from_rows(&rows).unwrap()
}

/// Objective written out directly with the naive softplus.
fn objective_oracle(pts: &[(f64, bool)], w: f64, b: f64, c: f64) -> f64 {
    0.5 * w * w / c
        + pts
            .iter()
            .map(|&(x, y)| {
                let s = if y { 1.0 } else { -1.0 };
                (1.0 + (-s * (w * x + b)).exp()).ln()
            })
            .sum::<f64>()
}

#[test]
fn logreg_matches_refined_grid_search() {
    let pts = [
        (-2.0, false),
        (-1.2, false),
        (-0.5, true),
        (-0.3, false),
        (0.1, false),
        (0.4, true),
        (1.1, true),
        (2.3, true),
    ];
    let z = Matrix::from_rows(&pts.iter().map(|p| [p.0]).collect::<Vec<_>>()).unwrap();
    let y: Vec<bool> = pts.iter().map(|p| p.1).collect();
    let fit = fit_logreg(&z, &y, &LogregConfig::default()).unwrap();
    assert!(fit.converged);

    let (mut cw, mut cb, mut span) = (0.0, 0.0, 8.0);
    for _ in 0..12 {
        let mut best = (f64::INFINITY, cw, cb);
        for i in 0..=40 {
            for j in 0..=40 {
                let w = cw - span + 2.0 * span * i as f64 / 40.0;
                let b = cb - span + 2.0 * span * j as f64 / 40.0;
                let f = objective_oracle(&pts, w, b, 1.0);
                if f < best.0 {
                    best = (f, w, b);
                }
            }
        }
        cw = best.1;
        cb = best.2;
        span /= 4.0;
    }
    assert!((fit.weights[0] - cw).abs() < 1e-3, "w {} vs {}", fit.weights[0], cw);
    assert!((fit.bias - cb).abs() < 1e-3, "b {} vs {}", fit.bias, cb);
    let lib = logistic_objective(&z, &y, &fit.weights, fit.bias, 1.0);
    assert!((lib - objective_oracle(&pts, fit.weights[0], fit.bias, 1.0)).abs() < 1e-9);
}

#[test]
fn fitted_objective_never_exceeds_zero_start() {
    let mut rng = Rng::new(4);
    for trial in 0..10 {
        let z = gaussian(&mut rng, 60, 5);
        let y: Vec<bool> = (0..60).map(|_| rng.uniform() < 0.4).collect();
        let cfg = LogregConfig { c: 0.1 + trial as f64, ..LogregConfig::default() };
        let fit = fit_logreg(&z, &y, &cfg).unwrap();
        let at_zero = logistic_objective(&z, &y, &[0.0; 5], 0.0, cfg.c);
        assert!(logistic_objective(&z, &y, &fit.weights, fit.bias, cfg.c) <= at_zero);
    }
}

#[test]
fn wide_features_use_quasi_newton_and_still_converge() {
    let mut rng = Rng::new(8);
    let d = NEWTON_MAX_FEATURES + 20;
    let z = gaussian(&mut rng, 80, d);
    let y: Vec<bool> = (0..80).map(|i| i % 2 == 0).collect();
    let fit = fit_logreg(&z, &y, &LogregConfig::default()).unwrap();
    assert!(fit.converged);
    let (gw, gb) = logistic_gradient(&z, &y, &fit.weights, fit.bias, 1.0);
    let gmax = gw.iter().fold(gb.abs(), |m, g| m.max(g.abs()));
    assert!(gmax < 1e-4, "gradient {gmax}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradient_matches_central_differences(
        seed in any::<u64>(), c in 0.05f64..10.0, b in -2.0f64..2.0
    ) {
        let mut rng = Rng::new(seed);
        let z = gaussian(&mut rng, 12, 3);
        let y: Vec<bool> = (0..12).map(|_| rng.uniform() < 0.5).collect();
        let w: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let (gw, gb) = logistic_gradient(&z, &y, &w, b, c);
        let h = 1e-6;
        for j in 0..3 {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[j] += h;
            wm[j] -= h;
            let fd = (logistic_objective(&z, &y, &wp, b, c) - logistic_objective(&z, &y, &wm, b, c)) / (2.0 * h);
            prop_assert!((fd - gw[j]).abs() < 1e-5 * (1.0 + fd.abs()));
        }
        let fd = (logistic_objective(&z, &y, &w, b + h, c) - logistic_objective(&z, &y, &w, b - h, c)) / (2.0 * h);
        prop_assert!((fd - gb).abs() < 1e-5 * (1.0 + fd.abs()));
    }

    #[test]
    fn ablation_is_idempotent_and_annihilates(seed in any::<u64>(), k in 1usize..4) {
        let mut rng = Rng::new(seed);
        let x = gaussian(&mut rng, 10, 6);
        let dirs: Vec<Vec<f64>> = (0..k).map(|_| (0..6).map(|_| rng.normal()).collect()).collect();
        let once = ablate_directions(&x, &dirs).unwrap();
        let twice = ablate_directions(&once.matrix, &dirs).unwrap();
        prop_assert!(once.matrix.max_abs_diff(&twice.matrix) < 1e-9);
        for row in once.matrix.iter_rows() {
            for d in &dirs {
                prop_assert!(dot(row, d).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn standardized_columns_have_zero_mean_unit_sd() {
    let mut rng = Rng::new(2);
    let rows: Vec<Vec<f64>> = (0..50).map(|_| vec![3.0 + 2.0 * rng.normal(), -1.0 + 0.1 * rng.normal(), 7.0]).collect();
    let x = Matrix::from_rows(&rows).unwrap();
    let s = fit_standardizer(&x).unwrap();
    let xs = s.apply(&x).unwrap();
    for j in 0..2 {
        let col: Vec<f64> = (0..50).map(|i| xs.get(i, j)).collect();
        let m = col.iter().sum::<f64>() / 50.0;
        let v = col.iter().map(|c| (c - m) * (c - m)).sum::<f64>() / 50.0;
        assert!(m.abs() < 1e-12);
        assert!((v - 1.0).abs() < 1e-12);
    }
    assert!((0..50).all(|i| xs.get(i, 2) == 0.0));
}

#[test]
fn pca_is_orthonormal_and_full_rank_reconstructs() {
    let mut rng = Rng::new(3);
    for &(n, d) in &[(40usize, 6usize), (5, 12)] {
        let x = gaussian(&mut rng, n, d);
        let k = d.min(n - 1);
        let p = fit_pca(&x, k).unwrap();
        let g = p.components.matmul(&p.components.transpose()).unwrap();
        assert!(g.max_abs_diff(&Matrix::identity(k)) < 1e-9);
        for w in p.explained_variance.windows(2) {
            assert!(w[0] >= w[1] - 1e-12);
        }
        let back = p.reconstruct(&p.transform(&x).unwrap()).unwrap();
        assert!(back.max_abs_diff(&x) < 1e-8, "n={n} d={d}");
    }
}

#[test]
fn raw_direction_reproduces_pipeline_decisions() {
    let mut rng = Rng::new(12);
    let n = 200;
    let d = 8;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let l = i % 2;
        let mut r: Vec<f64> = (0..d).map(|j| rng.normal() * (1.0 + j as f64)).collect();
        r[0] += if l == 1 { 1.5 } else { -1.5 };
        rows.push(r);
        labels.push(l);
    }
    let x = Matrix::from_rows(&rows).unwrap();
    let cfg = ProbeConfig { pca_components: Some(5), ..ProbeConfig::default() };
    let model = fit_probe(&x, &labels, &classes(2), &cfg).unwrap();
    let (w, b) = model.raw_decision(0).unwrap();
    let dir = probe_direction(&model).unwrap();
    let scale = dot(&w, &dir);
    assert!(scale > 0.0);
    let probe = gaussian(&mut rng, 100, d);
    let scores = model.scores(&probe).unwrap();
    let predicted = model.predict(&probe).unwrap();
    for (i, row) in probe.iter_rows().enumerate() {
        let raw = dot(&w, row) + b;
        assert!((raw - scores[i][0]).abs() < 1e-9);
        assert_eq!(usize::from(scale * dot(&dir, row) + b > 0.0), predicted[i]);
    }
}

#[test]
fn label_noise_stays_in_chance_band() {
    let mut rng = Rng::new(31);
    let x = gaussian(&mut rng, 400, 20);
    let labels: Vec<usize> = (0..400).map(|_| usize::from(rng.uniform() < 0.5)).collect();
    let r = cross_validate(&x, &labels, &classes(2), 5, &CvScheme::Stratified, 7, &ProbeConfig::default()).unwrap();
    assert!((r.mean_balanced_accuracy - 0.5).abs() < 0.08, "{}", r.mean_balanced_accuracy);
}

#[test]
fn cross_validation_is_deterministic_per_seed() {
    let mut rng = Rng::new(9);
    let x = gaussian(&mut rng, 90, 4);
    let labels: Vec<usize> = (0..90).map(|i| i % 3).collect();
    let cfg = ProbeConfig::default();
    let a = cross_validate(&x, &labels, &classes(3), 5, &CvScheme::Stratified, 11, &cfg).unwrap();
    let b = cross_validate(&x, &labels, &classes(3), 5, &CvScheme::Stratified, 11, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(stratified_folds(&labels, 5, 11).unwrap(), stratified_folds(&labels, 5, 11).unwrap());
}

#[test]
fn stratified_folds_partition_and_balance() {
    let labels: Vec<usize> = (0..103).map(|i| usize::from(i % 4 == 0)).collect();
    let folds = stratified_folds(&labels, 5, 3).unwrap();
    let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..103).collect::<Vec<_>>());
    for f in &folds {
        let pos = f.iter().filter(|&&i| labels[i] == 1).count();
        assert!((5..=6).contains(&pos));
        assert!((20..=21).contains(&f.len()));
    }
}

#[test]
fn group_cv_exposes_question_leakage() {
    // every question owns a random signature shared by all its traces and a
    // single label, so row-level splits can memorise the signature
    let mut rng = Rng::new(17);
    let d = 30;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut groups = Vec::new();
    for q in 0..40 {
        let sig: Vec<f64> = (0..d).map(|_| 3.0 * rng.normal()).collect();
        let l = usize::from(rng.uniform() < 0.5);
        for _ in 0..10 {
            rows.push(sig.iter().map(|s| s + 0.3 * rng.normal()).collect::<Vec<f64>>());
            labels.push(l);
            groups.push(format!("q{q}"));
        }
    }
    let x = Matrix::from_rows(&rows).unwrap();
    let cfg = ProbeConfig { pca_components: None, ..ProbeConfig::default() };
    let strat = cross_validate(&x, &labels, &classes(2), 5, &CvScheme::Stratified, 1, &cfg).unwrap();
    let grouped = cross_validate(&x, &labels, &classes(2), 5, &CvScheme::Group(groups), 1, &cfg).unwrap();
    assert!(
        strat.mean_balanced_accuracy - grouped.mean_balanced_accuracy >= 0.3,
        "{} vs {}",
        strat.mean_balanced_accuracy,
        grouped.mean_balanced_accuracy
    );
}

#[test]
fn ablating_the_signal_axis_hurts_more_than_a_random_axis() {
    let mut rng = Rng::new(23);
    let d = 10;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for i in 0..300 {
        let l = i % 2;
        let mut r: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        r[0] += if l == 1 { 2.0 } else { -2.0 };
        rows.push(r);
        labels.push(l);
    }
    let x = Matrix::from_rows(&rows).unwrap();
    let cfg = ProbeConfig { pca_components: None, ..ProbeConfig::default() };
    let mut e1 = vec![0.0; d];
    e1[0] = 1.0;
    let random = Rng::new(99).unit_vector(d);
    let run = |dir: Vec<f64>| {
        ablation_cv(&x, &labels, &classes(2), 5, &CvScheme::Stratified, 3, &cfg, AblationMode::InSample, |_, _| {
            Ok(vec![dir.clone()])
        })
        .unwrap()
    };
    let (signal, rank) = run(e1);
    let (rand, _) = run(random);
    assert_eq!(rank, 1);
    assert!(signal.mean_balanced_accuracy < 0.6, "{}", signal.mean_balanced_accuracy);
    assert!(rand.mean_balanced_accuracy > 0.85, "{}", rand.mean_balanced_accuracy);
}

#[test]
fn balanced_accuracy_reports_absent_classes() {
    let m = evaluate(&[0, 0, 1, 1], &[0, 0, 0, 1], 3).unwrap();
    assert_eq!(m.accuracy, 0.75);
    assert!((m.balanced_accuracy - (2.0 / 3.0 + 1.0) / 2.0).abs() < 1e-15);
    assert_eq!(m.absent_classes, vec![2]);
}
