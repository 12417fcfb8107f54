use smdm_core::evaluation::{prequential_step, synth_campaign_stream, PrequentialState, DEFAULT_WINDOW};
use smdm_core::learners::{HoeffdingConfig, Learner, LearnerKind};
use smdm_core::schema::builtin_bank_marketing_schema;

fn final_accuracy(kind: LearnerKind, n: u64, seed: u64, noise: f64) -> f64 {
    let schema = builtin_bank_marketing_schema();
    let mut model = Learner::new(kind, &schema, HoeffdingConfig::default()).unwrap();
    let mut state = PrequentialState::new(schema.num_classes(), DEFAULT_WINDOW).unwrap();
    for inst in synth_campaign_stream(n, seed, noise).unwrap() {
        prequential_step(&mut state, &mut model, &inst).unwrap();
    }
    state.cumulative_accuracy().unwrap()
}

#[test]
fn tree_and_bayes_beat_majority() {
    let n = 50_000;
    let majority = final_accuracy(LearnerKind::Majority, n, 7, 0.1);
    let nb = final_accuracy(LearnerKind::NaiveBayes, n, 7, 0.1);
    let ht = final_accuracy(LearnerKind::Hoeffding, n, 7, 0.1);
    println!("majority {majority:.4} nb {nb:.4} ht {ht:.4}");
    assert!(ht >= majority + 0.05);
    assert!(nb >= majority + 0.05);
    assert!(ht > nb - 0.02);
}

#[test]
fn majority_tracks_class_prior() {
    let n = 50_000;
    let yes = synth_campaign_stream(n, 7, 0.1)
        .unwrap()
        .filter(|i| i.label == Some(1))
        .count() as f64
        / n as f64;
    let prior = yes.max(1.0 - yes);
    let majority = final_accuracy(LearnerKind::Majority, n, 7, 0.1);
    assert!((majority - prior).abs() <= 0.05);
}
