use entangle_core::intervene::*;
use entangle_core::linalg::{dot, gram_schmidt, norm, Matrix};
use entangle_core::rng::Rng;
use proptest::prelude::*;

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v);
    v.into_iter().map(|x| x / n).collect()
}

fn nonzero_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, dim).prop_filter("nonzero", |v| norm(v) > 1e-2)
}

proptest! {
    #[test]
    fn erasure_annihilates_and_is_idempotent(d in nonzero_vec(6), h in prop::collection::vec(-50.0f64..50.0, 6)) {
        let e = erasure_projector(&unit(d)).unwrap();
        let once = e.apply(&h);
        prop_assert!(dot(&once, &e.direction).abs() < 1e-7);
        let twice = e.apply(&once);
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn rank_k_projection_is_non_expansive(seed in any::<u64>(), k in 1usize..4, v in prop::collection::vec(-5.0f64..5.0, 7)) {
        let mut rng = Rng::new(seed);
        let rows: Vec<Vec<f64>> = (0..4).map(|_| (0..7).map(|_| rng.normal()).collect()).collect();
        let b = rank_k_basis(&Matrix::from_rows(&rows).unwrap(), k).unwrap();
        let p = project_correction(&v, &b.basis).unwrap();
        prop_assert!(norm(&p) <= norm(&v) + 1e-9);
    }

    #[test]
    fn gates_do_not_increase_with_confidence(p1 in 0.0f64..=1.0, p2 in 0.0f64..=1.0, theta in 0.0f64..=1.0) {
        let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
        for mode in [GateMode::Binary, GateMode::Scaled, GateMode::Threshold] {
            let g = Gate { mode, theta };
            prop_assert!(probe_gate(hi, &g).unwrap() <= probe_gate(lo, &g).unwrap());
        }
    }

    #[test]
    fn additive_steer_is_linear_in_alpha(
        h in prop::collection::vec(-5.0f64..5.0, 5), v in prop::collection::vec(-5.0f64..5.0, 5),
        a in -3.0f64..3.0, b in -3.0f64..3.0
    ) {
        let lhs = additive_steer(&additive_steer(&h, &v, a), &v, b);
        let rhs = additive_steer(&h, &v, a + b);
        for (x, y) in lhs.iter().zip(&rhs) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}

/// `I − Σ q qᵀ` for an orthonormal row set.
fn projector(rows: &[Vec<f64>], d: usize) -> Vec<Vec<f64>> {
    (0..d)
        .map(|i| (0..d).map(|j| rows.iter().map(|q| q[i] * q[j]).sum::<f64>()).collect())
        .collect()
}

#[test]
fn rank_k_span_matches_gram_schmidt_oracle() {
    // three rows spanning a plane: r3 = 2 r1 − r2
    let r1 = vec![1.0, 0.0, 2.0, -1.0];
    let r2 = vec![0.0, 1.0, 1.0, 3.0];
    let r3: Vec<f64> = r1.iter().zip(&r2).map(|(a, b)| 2.0 * a - b).collect();
    let m = Matrix::from_rows(&[r1.clone(), r2.clone(), r3]).unwrap();
    let b = rank_k_basis(&m, 3).unwrap();
    assert!(b.truncated);
    assert_eq!(b.basis.rows(), 2);

    // oracle: classical Gram–Schmidt written out by hand
    let q1 = unit(r1);
    let c = dot(&r2, &q1);
    let q2 = unit(r2.iter().zip(&q1).map(|(x, q)| x - c * q).collect());
    let want = projector(&[q1, q2], 4);
    let got_rows: Vec<Vec<f64>> = b.basis.iter_rows().map(<[f64]>::to_vec).collect();
    let got = projector(&got_rows, 4);
    // the projector difference bounds the sine of the largest principal angle
    let diff = (0..4).flat_map(|i| (0..4).map(move |j| (i, j))).map(|(i, j)| (got[i][j] - want[i][j]).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-6, "{diff}");
}

#[test]
fn rank_k_top_direction_is_dominant_singular_vector() {
    let m = Matrix::from_rows(&[vec![3.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]).unwrap();
    let b = rank_k_basis(&m, 1).unwrap();
    assert!(!b.truncated);
    assert!((b.basis.get(0, 0).abs() - 1.0).abs() < 1e-12);
    let single = rank_k_basis(&Matrix::from_rows(&[vec![3.0, 4.0]]).unwrap(), 1).unwrap();
    let p = project_correction(&[3.0, 4.0], &single.basis).unwrap();
    assert!((p[0] - 3.0).abs() < 1e-12 && (p[1] - 4.0).abs() < 1e-12);
}

#[test]
fn whitened_direction_on_diagonal_covariance() {
    let sigma = Matrix::from_rows(&[vec![4.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let w = whitened_direction(&[2.0, 1.0], &sigma, WHITEN_EPS).unwrap();
    let r = 1.0 / 2f64.sqrt();
    assert!((w.direction[0] - r).abs() < 1e-9);
    assert!((w.direction[1] - r).abs() < 1e-9);
    assert_eq!(w.floored, 0);

    let singular = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
    let f = whitened_direction(&[1.0, 0.0], &singular, WHITEN_EPS).unwrap();
    assert_eq!(f.floored, 1);
    assert!((norm(&f.direction) - 1.0).abs() < 1e-12);

    let skew = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.0, 1.0]]).unwrap();
    assert!(whitened_direction(&[1.0, 0.0], &skew, WHITEN_EPS).is_err());
}

#[test]
fn erasure_input_checks() {
    assert!(Erasure::new(&[1.0005, 0.0]).unwrap().renormalized);
    assert!(Erasure::new(&[1.1, 0.0]).is_err());
    let e = Erasure::new(&[0.6, 0.8]).unwrap();
    let w = e.apply(&[-0.8, 0.6]);
    assert!((w[0] + 0.8).abs() < 1e-15 && (w[1] - 0.6).abs() < 1e-15);
}

#[test]
fn adapter_starts_as_identity() {
    let a = MlpAdapter::new(5, 3, 0.01, 9);
    let h = [0.3, -1.0, 2.0, 0.0, 7.5];
    assert_eq!(a.forward(&h).unwrap(), h.to_vec());
}

#[test]
fn adapter_hand_evaluated_forward() {
    let mut a = MlpAdapter::new(2, 1, 0.0, 0);
    a.w1 = Matrix::from_rows(&[vec![1.0, -1.0]]).unwrap();
    a.b1 = vec![0.5];
    a.w2 = Matrix::from_rows(&[vec![2.0], vec![-1.0]]).unwrap();
    a.b2 = vec![0.1, 0.0];
    // z = 1 − 0 + 0.5 = 1.5, gelu(1.5) = 1.5·Φ(1.5)
    let g = 1.5 * 0.9331927987311419;
    let out = a.forward(&[1.0, 0.0]).unwrap();
    assert!((out[0] - (1.0 + 2.0 * g + 0.1)).abs() < 1e-6);
    assert!((out[1] - (0.0 - g)).abs() < 1e-6);
}

#[test]
fn adapter_gradient_matches_central_differences() {
    let mut rng = Rng::new(3);
    let d = 4;
    let mut a = MlpAdapter::new(d, 3, 0.5, 1);
    // move off the zero-W2 start so every block has signal
    let mut p = a.params();
    for x in p.iter_mut() {
        *x += 0.3 * rng.normal();
    }
    a.set_params(&p).unwrap();
    let rows = |rng: &mut Rng, n: usize| {
        Matrix::from_rows(&(0..n).map(|_| (0..d).map(|_| rng.normal()).collect::<Vec<f64>>()).collect::<Vec<_>>()).unwrap()
    };
    let ot = rows(&mut rng, 6);
    let correct = rows(&mut rng, 5);
    let mu = vec![1.0, -0.5, 0.2, 0.0];
    let (_, g) = a.loss_and_grad(&ot, &correct, &mu).unwrap();
    let flat = g.flatten();
    let h = 1e-6;
    for _ in 0..5 {
        let i = rng.below(p.len());
        let mut plus = a.clone();
        let mut minus = a.clone();
        let mut pp = p.clone();
        pp[i] += h;
        plus.set_params(&pp).unwrap();
        pp[i] -= 2.0 * h;
        minus.set_params(&pp).unwrap();
        let fd = (plus.loss(&ot, &correct, &mu).unwrap() - minus.loss(&ot, &correct, &mu).unwrap()) / (2.0 * h);
        let rel = (fd - flat[i]).abs() / fd.abs().max(flat[i].abs()).max(1e-8);
        assert!(rel <= 1e-4, "param {i}: fd {fd} vs {}", flat[i]);
    }
}

fn constant_rows(point: &[f64], n: usize) -> Matrix {
    Matrix::from_rows(&vec![point.to_vec(); n]).unwrap()
}

#[test]
fn zero_noise_toy_reaches_target_centroid() {
    let mu = vec![0.0, 0.0, 0.0, 0.0];
    let start = vec![1.0, -0.5, 0.5, 0.0];
    let ot = constant_rows(&start, 40);
    let correct = constant_rows(&mu, 40);
    let cfg = MlpTrainConfig { bottleneck: 16, ..MlpTrainConfig::default() };
    let run = mlp_train(&ot, &correct, &mu, &cfg).unwrap();
    let r = centroid_distance_reduction(&run.adapter, &ot, &mu).unwrap();
    assert!(r >= 0.9, "reduction {r}");

    // recompute the reduction from its definition
    let moved = run.adapter.forward(&start).unwrap();
    let oracle = 1.0 - norm(&moved) / norm(&start);
    assert!((r - oracle).abs() < 1e-12);
    assert!(run.train_loss[run.best_epoch] <= run.train_loss[0]);
    assert_eq!(run.train_loss.len(), cfg.epochs + 1);
}

#[test]
fn huge_penalty_keeps_correct_states_fixed() {
    let mut rng = Rng::new(6);
    let d = 4;
    let mk = |rng: &mut Rng, shift: f64| {
        Matrix::from_rows(&(0..50).map(|_| (0..d).map(|_| shift + rng.normal()).collect::<Vec<f64>>()).collect::<Vec<_>>()).unwrap()
    };
    let ot = mk(&mut rng, 2.0);
    let correct = mk(&mut rng, 0.0);
    let cfg = MlpTrainConfig { bottleneck: 8, lambda_reg: 1e9, ..MlpTrainConfig::default() };
    let run = mlp_train(&ot, &correct, &correct.column_means(), &cfg).unwrap();
    for h in correct.iter_rows() {
        let f = run.adapter.perturbation(h).unwrap();
        assert!(norm(&f) < 1e-3, "{}", norm(&f));
    }
}

#[test]
fn best_snapshot_never_worse_than_start() {
    let mut rng = Rng::new(14);
    for trial in 0..3u64 {
        let ot = Matrix::from_rows(&(0..30).map(|_| (0..3).map(|_| 1.0 + rng.normal()).collect::<Vec<f64>>()).collect::<Vec<_>>()).unwrap();
        let correct = Matrix::from_rows(&(0..30).map(|_| (0..3).map(|_| rng.normal()).collect::<Vec<f64>>()).collect::<Vec<_>>()).unwrap();
        let cfg = MlpTrainConfig { bottleneck: 4, epochs: 20, seed: trial, ..MlpTrainConfig::default() };
        let run = mlp_train(&ot, &correct, &[0.0; 3], &cfg).unwrap();
        assert!(run.val_loss[run.best_epoch] <= run.val_loss[0]);
        assert!(run.train_loss[run.best_epoch] <= run.train_loss[0] + 1e-12);
    }
}

#[test]
fn centroid_reduction_edges() {
    let a = MlpAdapter::new(2, 2, 0.0, 0);
    let ot = Matrix::from_rows(&[vec![1.0, 1.0], vec![3.0, 1.0]]).unwrap();
    assert_eq!(centroid_distance_reduction(&a, &ot, &[0.0, 0.0]).unwrap(), 0.0);
    let mut shift = a.clone();
    shift.b2 = vec![-2.0, -1.0];
    assert!(centroid_distance_reduction(&shift, &ot, &[0.0, 0.0]).unwrap().abs() > 1.0 - 1e-12);
    assert!(centroid_distance_reduction(&a, &ot, &[2.0, 1.0]).is_err());
}

#[test]
fn multi_layer_targets_are_centered() {
    assert_eq!(multi_layer_targets(15, 3, 2, 32).unwrap(), vec![13, 15, 17]);
    assert!(multi_layer_targets(15, 2, 2, 32).is_err());
    assert!(multi_layer_targets(1, 3, 2, 32).is_err());
}

#[test]
fn orthonormal_basis_projection_keeps_span() {
    let basis = gram_schmidt(&[vec![1.0, 1.0, 0.0], vec![0.0, 1.0, 1.0]], 1e-8);
    let b = Matrix::from_rows(&basis).unwrap();
    let v = [2.0, 5.0, 3.0];
    let p = project_correction(&v, &b).unwrap();
    for (x, y) in p.iter().zip(&v) {
        assert!((x - y).abs() < 1e-12);
    }
}
