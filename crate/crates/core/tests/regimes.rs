use std::collections::BTreeSet;

use entangle_core::archive::{Mode, TraceRecord};
use entangle_core::regimes::*;
use proptest::prelude::*;

fn record(q: &str, i: usize, correct: bool, n_tokens: u32) -> TraceRecord {
    TraceRecord {
        trace_id: format!("{q}-{i}"),
        question_id: q.into(),
        mode: if correct { Mode::Correct } else { Mode::Unclear },
        is_correct: correct,
        n_tokens,
        answer: if correct { 'A' } else { 'B' },
        correct_answer: 'A',
        aux: None,
    }
}

/// Ten traces: `correct` right answers, then wrong ones. The first wrong
/// trace has `probe_len` tokens, the rest stay short.
fn question(q: &str, correct: usize, probe_len: u32) -> Vec<TraceRecord> {
    (0..10)
        .map(|i| {
            let ok = i < correct;
            let len = if !ok && i == correct { probe_len } else { 50 };
            record(q, i, ok, len.max(1))
        })
        .collect()
}

#[test]
fn rule_table_over_the_full_grid() {
    let cfg = RegimeConfig::default();
    for correct in 0..=10usize {
        for len in 0..=400u32 {
            let recs = question("q", correct, len);
            let lab = label_regimes(&recs, &cfg).unwrap();
            if correct == 10 {
                assert!(lab.regimes.iter().all(|&r| r == Regime::Correct));
                continue;
            }
            // integer form of the rule: 10·correct ≥ 6·10 and length > 200
            let want = if correct * 10 >= 60 && len.max(1) > 200 { Regime::Ot } else { Regime::NonOtIncorrect };
            assert_eq!(lab.regimes[correct], want, "correct={correct} len={len}");
            assert_eq!(lab.ot_flag["q"], want == Regime::Ot);
        }
    }
}

/// Three questions whose OT membership changes across the sweep grid.
fn sweep_corpus() -> Vec<TraceRecord> {
    let mut r = question("q1", 7, 250); // OT at default, lost at length 300 or rate 0.75
    r.extend(question("q2", 5, 350)); // OT only once the rate drops to 0.5
    r.extend(question("q3", 6, 150)); // OT only once the gate drops to 100
    r
}

#[test]
fn sweep_jaccard_matches_hand_sets() {
    let rows = threshold_sweep(&sweep_corpus(), &[0.5, 0.6, 0.7], &[100, 200, 300], &RegimeConfig::default()).unwrap();
    let set = |names: &[&str]| names.iter().map(|s| s.to_string()).collect::<BTreeSet<String>>();
    let hand = |rate: f64, len: u32| -> BTreeSet<String> {
        let mut s = BTreeSet::new();
        if rate <= 0.7 && len < 250 {
            s.insert("q1".to_string());
        }
        if rate <= 0.5 && len < 350 {
            s.insert("q2".to_string());
        }
        if rate <= 0.6 && len < 150 {
            s.insert("q3".to_string());
        }
        s
    };
    let reference = set(&["q1"]);
    assert_eq!(hand(0.6, 200), reference);
    for row in &rows {
        let h = hand(row.rate, row.length);
        let inter = h.intersection(&reference).count() as f64;
        let union = h.union(&reference).count() as f64;
        let j = if union == 0.0 { 1.0 } else { inter / union };
        assert_eq!(row.ot_count, h.len(), "{row:?}");
        assert_eq!(row.jaccard, j, "{row:?}");
    }
    let empty = threshold_sweep(&sweep_corpus(), &[1.01], &[0], &RegimeConfig::default()).unwrap();
    assert_eq!(empty[0].ot_count, 0);
}

fn corpus_strategy() -> impl Strategy<Value = Vec<TraceRecord>> {
    prop::collection::vec(prop::collection::vec((any::<bool>(), 1u32..400), 1..10), 1..8).prop_map(|qs| {
        qs.into_iter()
            .enumerate()
            .flat_map(|(qi, traces)| {
                traces
                    .into_iter()
                    .enumerate()
                    .map(move |(i, (ok, len))| record(&format!("q{qi}"), i, ok, len))
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn raising_the_rate_never_adds_ot_questions(recs in corpus_strategy(), lo in 0.05f64..0.95, bump in 0.0f64..0.5) {
        let hi = (lo + bump).min(0.99);
        let a = label_regimes(&recs, &RegimeConfig { correct_rate_threshold: lo, ..RegimeConfig::default() }).unwrap();
        let b = label_regimes(&recs, &RegimeConfig { correct_rate_threshold: hi, ..RegimeConfig::default() }).unwrap();
        prop_assert!(b.ot_questions().is_subset(&a.ot_questions()));
    }

    #[test]
    fn ot_labels_are_sound(recs in corpus_strategy()) {
        let cfg = RegimeConfig::default();
        let lab = label_regimes(&recs, &cfg).unwrap();
        for (i, r) in recs.iter().enumerate() {
            if lab.regimes[i] == Regime::Ot {
                let group: Vec<&TraceRecord> = recs.iter().filter(|x| x.question_id == r.question_id).collect();
                let ok = group.iter().filter(|x| x.is_correct).count();
                prop_assert!(ok * 10 >= 6 * group.len());
                prop_assert!(!r.is_correct && r.n_tokens > cfg.length_threshold);
                prop_assert!(lab.ot_flag[&r.question_id]);
            }
        }
    }

    #[test]
    fn majority_vote_recovers_a_qualifying_answer(n_right in 6usize..=10, wrong in prop::collection::vec(0u8..4, 0..4)) {
        let mut answers = vec!['C'; n_right];
        answers.extend(wrong.iter().take(10 - n_right).map(|w| b"ABDE"[*w as usize] as char));
        prop_assert_eq!(majority_vote(&answers).unwrap(), 'C');
    }
}

#[test]
fn vote_and_selection_tie_rules() {
    assert_eq!(majority_vote(&['B', 'A']).unwrap(), 'A');
    assert_eq!(majority_vote(&['C', 'B', 'B', 'C']).unwrap(), 'B');
    let answers = ['D', 'A', 'C', 'B', 'A'];
    let scores = [0.2, 0.7, 0.7, 0.1, 0.5];
    // argmax by scanning for the first maximum
    let oracle = (0..5).fold(0, |b, i| if scores[i] > scores[b] { i } else { b });
    assert_eq!(best_of_n(&answers, &scores).unwrap(), answers[oracle]);
    assert!(best_of_n(&answers, &scores[..3]).is_err());
}

#[test]
fn purity_counts_mixed_questions() {
    let mut recs = question("a", 7, 300);
    recs.extend(question("b", 7, 300));
    let lab = label_regimes(&recs, &RegimeConfig::default()).unwrap();
    let p = within_question_purity(&lab, &recs).unwrap();
    // each question has one OT trace and two short non-OT wrong traces
    assert_eq!(p.overall, Some(0.0));
    let only_long: Vec<TraceRecord> = recs.iter().filter(|r| r.is_correct || r.n_tokens > 200).cloned().collect();
    let lab2 = label_regimes(&only_long, &RegimeConfig::default()).unwrap();
    assert_eq!(within_question_purity(&lab2, &only_long).unwrap().overall, Some(1.0));
}
