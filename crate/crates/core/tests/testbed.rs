use entangle_core::archive::Mode;
use entangle_core::intervene::{InterventionKind, InterventionSpec};
use entangle_core::linalg::{dot, norm};
use entangle_core::testbed::*;
use proptest::prelude::*;

fn world(rho: f64) -> SyntheticWorld {
    build_world(&WorldConfig { rho, ..WorldConfig::default() }).unwrap()
}

fn spec(kind: InterventionKind, alpha: f64) -> InterventionSpec {
    InterventionSpec { kind, layers: vec![0], alpha, direction_name: "d_f".into(), k: None, gate: None }
}

/// Squared norm of the projection onto the task rows, summed coordinate by
/// coordinate.
fn task_energy(w: &SyntheticWorld, v: &[f64]) -> f64 {
    w.task.iter_rows().map(|t| dot(t, v).powi(2)).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn planted_direction_splits_by_rho(rho in 0.0f64..=1.0, seed in any::<u64>()) {
        let w = build_world(&WorldConfig { rho, seed, ..WorldConfig::default() }).unwrap();
        prop_assert!((norm(&w.d_f) - 1.0).abs() < 1e-12);
        prop_assert!((task_energy(&w, &w.d_f) - (1.0 - rho)).abs() < 1e-9);
        prop_assert!(task_energy(&w, &w.u_perp) < 1e-18);
    }
}

#[test]
fn rho_endpoints() {
    let off = world(1.0);
    for t in off.task.iter_rows() {
        assert!(dot(t, &off.d_f).abs() < 1e-12);
    }
    assert!((task_energy(&world(0.0), &world(0.0).d_f) - 1.0).abs() < 1e-12);
    assert!((task_energy(&world(0.5), &world(0.5).d_f) - 0.5).abs() < 1e-9);
}

#[test]
fn noiseless_means_read_out_as_labelled() {
    for rho in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let w = world(rho);
        let data = sample_dataset(&w, 40, 40, 0.0, 1).unwrap();
        for i in 0..data.kind.len() {
            let should = data.kind[i] == TraceKind::Correct;
            assert_eq!(data.mean_correct[i], should, "rho={rho} row {i}");
            assert_eq!(data.realized_correct[i], should);
        }
    }
}

#[test]
fn sampling_is_seed_deterministic() {
    let w = world(0.3);
    let a = sample_dataset(&w, 30, 20, 0.35, 9).unwrap();
    let b = sample_dataset(&w, 30, 20, 0.35, 9).unwrap();
    assert_eq!(a.states, b.states);
    assert_ne!(a.states, sample_dataset(&w, 30, 20, 0.35, 10).unwrap().states);
}

#[test]
fn removing_off_task_offset_fixes_every_noiseless_failure() {
    let w = world(1.0);
    let data = sample_dataset(&w, 100, 100, 0.0, 3).unwrap();
    let g = w.config.g;
    let r = run_experiment(&w, &data, &spec(InterventionKind::Additive, -g), &DirectionSource::Oracle, Targets::Failures).unwrap();
    assert_eq!(r.outcomes.corrections(), 100);
    assert_eq!(r.correction_rate, 1.0);
    assert_eq!(r.outcomes.damages(), 0);
    assert_eq!(r.treated_accuracy, 1.0);
}

#[test]
fn zero_amplitude_is_a_no_op() {
    let w = world(0.5);
    let data = sample_dataset(&w, 200, 100, 0.35, 4).unwrap();
    let r = run_experiment(&w, &data, &spec(InterventionKind::Additive, 0.0), &DirectionSource::Estimated, Targets::All).unwrap();
    assert_eq!(r.delta_pp, 0.0);
    assert_eq!(r.outcomes.corrections() + r.outcomes.damages(), 0);
    assert_eq!(r.p_mcnemar, 1.0);
}

#[test]
fn erasing_the_entangled_direction_costs_accuracy() {
    let w = world(0.0);
    let data = sample_dataset(&w, 300, 100, 0.35, 5).unwrap();
    let r = run_experiment(&w, &data, &spec(InterventionKind::Erase, 0.0), &DirectionSource::Oracle, Targets::All).unwrap();
    // recompute the treated readout directly
    let mut hits = 0;
    for (i, h) in data.states.iter_rows().enumerate() {
        let c = dot(h, &w.d_f);
        let e: Vec<f64> = h.iter().zip(&w.d_f).map(|(x, d)| x - c * d).collect();
        hits += usize::from(w.readout(&e) == data.option[i]);
    }
    assert!((r.treated_accuracy - hits as f64 / 400.0).abs() < 1e-15);
    assert!(r.treated_accuracy < r.baseline_accuracy);
}

#[test]
fn uniform_steering_hurts_when_entangled() {
    let w = world(0.0);
    let data = sample_dataset(&w, 1400, 600, 0.35, 6).unwrap();
    let (_, gap) = estimated_direction(&data).unwrap();
    let r = run_experiment(&w, &data, &spec(InterventionKind::Additive, gap), &DirectionSource::Estimated, Targets::All).unwrap();
    assert!(r.delta_pp < -5.0 && r.p_mcnemar < 0.05, "{} {}", r.delta_pp, r.p_mcnemar);
}

#[test]
fn planted_specificity_is_recovered() {
    for rho in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let w = world(rho);
        let data = sample_modes(&w, &[(TraceKind::Correct, 2000), (TraceKind::Ot, 2000), (TraceKind::Kd, 2000)], 0.35, 8).unwrap();
        let s = measured_specificity(&data).unwrap();
        assert!((s - rho).abs() <= 0.05, "rho={rho}: {s}");
    }
}

#[test]
fn exported_archive_is_valid_and_labelled() {
    let w = world(0.12);
    let data = sample_modes(&w, &[(TraceKind::Correct, 60), (TraceKind::Ot, 30), (TraceKind::Kd, 30)], 0.35, 2).unwrap();
    let a = export_archive(&w, &data).unwrap();
    a.validate().unwrap();
    assert_eq!(a.records.len(), 120);
    assert_eq!(a.records.iter().filter(|r| r.mode == Mode::Ot).count(), 30);
    let rows = a.unembedding.as_ref().unwrap().len() / w.config.hidden_dim;
    assert_eq!(rows, w.config.n_options + 2);
    assert_eq!(a.vocab.as_ref().unwrap().len(), rows);
}

#[test]
fn world_config_rejects_bad_shapes() {
    for bad in [
        WorldConfig { task_rank: 64, ..WorldConfig::default() },
        WorldConfig { n_options: 8, ..WorldConfig::default() },
        WorldConfig { rho: 1.5, ..WorldConfig::default() },
        WorldConfig { sigma: -1.0, ..WorldConfig::default() },
    ] {
        assert!(build_world(&bad).is_err(), "{bad:?}");
    }
}
