use std::sync::Arc;
use std::thread;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use grammar_steer_core::corpus::builtin;
use grammar_steer_core::earley::{EarleyParser, Recognition};
use grammar_steer_core::lm::{
    truncate_at_stop, AdversarialLm, Gateway, LanguageModel, LmError, LmRequest, OracleLm,
    ScoreRequest, ScriptedLm, TranscriptCache,
};

fn oracle() -> Arc<dyn LanguageModel> {
    Arc::new(OracleLm::new(builtin("calendar").unwrap().grammar, 1))
}

proptest! {
    #[test]
    fn stop_truncation_is_a_prefix_without_stops(text in "[ab\\n]{0,20}", stop in "[ab\\n]{1,3}") {
        let out = truncate_at_stop(&text, std::slice::from_ref(&stop));
        prop_assert!(text.starts_with(&out));
        prop_assert!(!out.contains(&stop));
    }

    #[test]
    fn adversarial_output_differs_but_is_deterministic(seed in any::<u64>(), rate in 0.05f64..1.0) {
        let lm = AdversarialLm::new(oracle(), rate, seed);
        let req = LmRequest::new(format!("prompt {seed}"));
        let a = lm.complete(&req).unwrap().text;
        prop_assert_eq!(&a, &lm.complete(&req).unwrap().text);
        let clean = oracle().complete(&req).unwrap().text;
        prop_assert_ne!(a, clean);
    }
}

#[test]
fn oracle_emits_sentences() {
    let c = builtin("calendar").unwrap();
    let p = EarleyParser::new(&c.grammar).unwrap();
    let lm = OracleLm::new(c.grammar.clone(), 4);
    for i in 0..20 {
        let y = lm.complete(&LmRequest::new(format!("q{i}"))).unwrap().text;
        assert_eq!(p.recognize(&y), Recognition::Complete, "{y}");
    }
}

#[test]
fn corrupt_with_zero_rate_is_identity() {
    let lm = AdversarialLm::new(oracle(), 0.0, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(
        lm.corrupt("QueryEvent((start_? Friday))", &mut rng),
        "QueryEvent((start_? Friday))"
    );
}

#[test]
fn cache_replays_across_gateways() {
    let dir = tempfile::tempdir().unwrap();
    let req = LmRequest::new("p").with_stop(["\n"]);
    let score = ScoreRequest {
        prompt: "p".into(),
        continuation: "Jean".into(),
    };
    let first = {
        let g = Gateway::new(ScriptedLm::new(["one\ntwo"]).with_score("Jean", -1.5))
            .with_cache(TranscriptCache::open(dir.path()).unwrap());
        let r = g.complete(&req).unwrap();
        assert_eq!(g.score(&score).unwrap(), -1.5);
        assert_eq!(g.stats().provider_calls, 2);
        r
    };
    assert_eq!(first.text, "one");
    assert!(!first.cached);

    // a different provider with the same name replays the transcript
    let g = Gateway::new(ScriptedLm::new(["other"]).with_score("Jean", 9.0))
        .with_cache(TranscriptCache::open(dir.path()).unwrap());
    let again = g.complete(&req).unwrap();
    assert_eq!(again.text, "one");
    assert!(again.cached);
    assert_eq!(g.score(&score).unwrap(), -1.5);
    let s = g.stats();
    assert_eq!(
        (
            s.provider_calls,
            s.cache_hits,
            s.complete_calls,
            s.score_calls
        ),
        (0, 2, 1, 1)
    );
}

#[test]
fn cache_hits_still_count_against_the_budget() {
    let cache = TranscriptCache::in_memory();
    let g = Gateway::new(ScriptedLm::new(["a"]))
        .with_cache(cache)
        .with_budget(1);
    g.complete(&LmRequest::new("p")).unwrap();
    assert_eq!(
        g.complete(&LmRequest::new("p")),
        Err(LmError::BudgetExceeded { cap: 1 })
    );
}

#[test]
fn counters_are_exact_under_threads() {
    let g = Arc::new(Gateway::from_arc(oracle()));
    let handles: Vec<_> = (0..8)
        .map(|t| {
            let g = Arc::clone(&g);
            thread::spawn(move || {
                let mut ids = Vec::new();
                for i in 0..50 {
                    ids.push(
                        g.complete(&LmRequest::new(format!("{t}-{i}")))
                            .unwrap()
                            .call_id,
                    );
                    g.score(&ScoreRequest {
                        prompt: "p".into(),
                        continuation: "x".into(),
                    })
                    .unwrap();
                }
                ids
            })
        })
        .collect();
    let mut ids: Vec<u64> = handles
        .into_iter()
        .flat_map(|h| h.join().unwrap())
        .collect();
    ids.sort_unstable();
    ids.dedup();
    assert_eq!(ids.len(), 400);
    let s = g.stats();
    assert_eq!((s.complete_calls, s.score_calls), (400, 400));
}
