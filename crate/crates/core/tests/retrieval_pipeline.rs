mod common;

use std::time::Instant;

use astra_core::index::FlatIndex;
use astra_core::retrieval::{
    gate, retrieve, to_query_vector, GateConfig, GateDecision, HashingEmbedder, Normalization,
    RetrievalOutcome, Retriever, TextEmbedder, UserPrompt, DEFAULT_ALPHA_U,
};
use proptest::prelude::*;

fn passthrough(prompt: &str, index: &FlatIndex) -> RetrievalOutcome {
    retrieve(
        &UserPrompt::new(prompt).unwrap(),
        index,
        &Normalization::Passthrough,
        &HashingEmbedder,
        &GateConfig::default(),
    )
    .unwrap()
}

#[test]
fn stored_prompt_retrieves_itself() {
    let records = common::fixture_records();
    let index = common::fixture_index();
    assert_eq!(index.len(), 100);
    let target = &records[42];
    let start = Instant::now();
    let out = passthrough(&target.prompt, &index);
    let elapsed = start.elapsed();
    match out {
        RetrievalOutcome::Hit {
            id,
            pose_ref,
            score,
            prompt,
            ..
        } => {
            assert_eq!(id, 42);
            assert_eq!(pose_ref, target.pose_ref);
            assert!((score - 1.0).abs() < 1e-6);
            assert_eq!(prompt, target.prompt);
        }
        other => panic!("expected a hit, got {other:?}"),
    }
    assert!(elapsed.as_millis() < 50, "{elapsed:?}");
}

#[test]
fn out_of_distribution_prompt_is_bypassed() {
    let index = common::fixture_index();
    let prompt = "quarterly spreadsheet reconciliation invoice";
    let q = to_query_vector(HashingEmbedder.embed(prompt).unwrap()).unwrap();
    let scores = index.scores(&q).unwrap();
    assert!(scores.iter().all(|&s| s < DEFAULT_ALPHA_U));
    match passthrough(prompt, &index) {
        RetrievalOutcome::Bypassed { best_score, .. } => {
            let best = scores.iter().cloned().fold(f64::MIN, f64::max);
            assert_eq!(best_score, Some(best));
        }
        other => panic!("expected bypass, got {other:?}"),
    }
}

#[test]
fn empty_index_bypasses() {
    let index = FlatIndex::build(Vec::new()).unwrap();
    match passthrough("anything", &index) {
        RetrievalOutcome::Bypassed { best_score, .. } => assert_eq!(best_score, None),
        other => panic!("{other:?}"),
    }
}

#[test]
fn retriever_is_stateless() {
    let index = common::fixture_index();
    let r = Retriever::new(
        Normalization::Passthrough,
        Box::new(HashingEmbedder),
        GateConfig::default(),
    );
    let p = UserPrompt::new("three dancers doing a cartwheel").unwrap();
    let a = r.retrieve(&p, &index).unwrap();
    let b = r.retrieve(&p, &index).unwrap();
    assert_eq!(a, b);
    let json = serde_json::to_value(&a).unwrap();
    assert_eq!(json["kind"], "hit");
    assert_eq!(json["canonical_query"]["source"], "passthrough");
}

#[test]
fn gate_boundary() {
    let cfg = GateConfig::default();
    assert_eq!(cfg.alpha_u(), 0.55);
    assert_eq!(gate(0.55, &cfg), GateDecision::Bypass);
    assert_eq!(gate(0.5500001, &cfg), GateDecision::Accept);
    assert!(GateConfig::new(1.5).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn gate_is_monotone(s in -1.0f64..=1.0, ds in 0.0f64..1.0, a in 0.0f64..=1.0) {
        let cfg = GateConfig::new(a).unwrap();
        if gate(s, &cfg) == GateDecision::Accept {
            prop_assert_eq!(gate(s + ds, &cfg), GateDecision::Accept);
        }
        prop_assert_eq!(gate(s, &cfg) == GateDecision::Accept, s > a);
    }
}
