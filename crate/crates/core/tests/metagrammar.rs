use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use grammar_steer_core::corpus::builtins;
use grammar_steer_core::earley::Recognition;
use grammar_steer_core::grammar::{is_subset, parse_bnf, Alternative, Symbol};
use grammar_steer_core::metagrammar::{
    build_metagrammar, build_metagrammar_with, MetaConfig, MetaError,
};
use grammar_steer_core::sample::{random_grammar, random_subset, RandomGrammarConfig};
use grammar_steer_core::specialize::specialize;

fn small() -> RandomGrammarConfig {
    RandomGrammarConfig {
        max_rules: 4,
        max_alternatives: 3,
        max_items: 3,
        ..RandomGrammarConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_subsets_are_members_and_round_trip(seed in any::<u64>()) {
        let g = random_grammar(&mut ChaCha8Rng::seed_from_u64(seed), &small());
        let meta = build_metagrammar_with(&g, MetaConfig { max_rep: Some(3) }).unwrap();
        let mp = meta.parser().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(!seed);
        for _ in 0..4 {
            let sub = random_subset(&mut rng, &g, meta.max_rep);
            let text = sub.to_string();
            let back = meta.parse_candidate_with(&mp, &text);
            prop_assert!(back.as_ref().is_ok_and(|b| *b == sub), "{}\n--\n{}\n{:?}", g, text, back);
        }
    }

    #[test]
    fn foreign_alternatives_are_rejected(seed in any::<u64>()) {
        let g = random_grammar(&mut ChaCha8Rng::seed_from_u64(seed), &small());
        let meta = build_metagrammar_with(&g, MetaConfig { max_rep: Some(3) }).unwrap();
        let mut sub = random_subset(&mut ChaCha8Rng::seed_from_u64(seed ^ 5), &g, 3);
        sub.rules[0].alternatives.push(Alternative::concrete([Symbol::terminal("zzz")]));
        prop_assert!(!is_subset(&sub, &g));
        prop_assert_ne!(meta.recognize(&sub.to_string()), Recognition::Complete);
    }
}

#[test]
fn corpus_specializations_are_members() {
    for c in builtins() {
        let meta = build_metagrammar(&c.grammar).unwrap();
        let mp = meta.parser().unwrap();
        for e in &c.examples {
            let spec = specialize(&e.y_gold, &c.grammar).unwrap().grammar;
            let back = meta.parse_candidate_with(&mp, &spec.to_string()).unwrap();
            assert_eq!(back, spec, "{}: {}", c.name, e.y_gold);
        }
    }
}

#[test]
fn start_block_is_mandatory_and_blocks_are_ordered() {
    let g = parse_bnf(r#"s ::= "a" t | "b" ;; t ::= "c""#).unwrap();
    let meta = build_metagrammar(&g).unwrap();
    assert_eq!(meta.recognize("s ::= \"b\""), Recognition::Complete);
    assert_eq!(
        meta.recognize("s ::= \"a\" t\nt ::= \"c\""),
        Recognition::Complete
    );
    assert_ne!(meta.recognize("t ::= \"c\""), Recognition::Complete);
    assert_ne!(
        meta.recognize("t ::= \"c\"\ns ::= \"a\" t"),
        Recognition::Complete
    );
    assert_ne!(
        meta.recognize("s ::= \"b\" | \"a\" t"),
        Recognition::Complete
    );
}

#[test]
fn repetition_needs_a_bound() {
    let g = parse_bnf(r#"s ::= "a"*"#).unwrap();
    assert_eq!(
        build_metagrammar_with(&g, MetaConfig { max_rep: None }).unwrap_err(),
        MetaError::RepetitionBoundRequired
    );
    let meta = build_metagrammar_with(&g, MetaConfig { max_rep: Some(2) }).unwrap();
    assert_eq!(meta.recognize("s ::= \"a\" \"a\""), Recognition::Complete);
    assert_ne!(
        meta.recognize("s ::= \"a\" \"a\" \"a\""),
        Recognition::Complete
    );
}
