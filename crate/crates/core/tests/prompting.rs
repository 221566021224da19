use grammar_steer_core::corpus::builtin;
use grammar_steer_core::earley::EarleyParser;
use grammar_steer_core::prompt::{
    build_prompt, delinearize, load_exemplars, program_suffix, split_output, ExemplarTriple,
    PromptConfig, PromptError, PromptMode, SectionLabels,
};

fn calendar_exemplars() -> Vec<ExemplarTriple> {
    let c = builtin("calendar").unwrap();
    let p = EarleyParser::new(&c.grammar).unwrap();
    c.train()
        .iter()
        .take(3)
        .map(|e| ExemplarTriple::from_program(&e.x, &e.y_gold, &p).unwrap())
        .collect()
}

#[test]
fn grammar_prompt_interleaves_rules_and_ends_at_rules_label() {
    let ex = calendar_exemplars();
    let cfg = PromptConfig::default();
    let prompt = build_prompt(&cfg, &ex, "meet Jean", None).unwrap();
    assert!(prompt.ends_with("query: meet Jean\nBNF grammar rules:\n"));
    assert_eq!(
        prompt.matches("\nBNF grammar rules:\n").count(),
        ex.len() + 1
    );
    assert_eq!(
        prompt
            .matches("program based on the BNF grammar rules:\n")
            .count(),
        ex.len()
    );
    for e in &ex {
        let rules = e.spec_grammar.as_ref().unwrap().to_string();
        assert!(prompt.contains(rules.trim_end()));
        assert!(prompt.contains(&e.y));
    }
}

#[test]
fn standard_prompt_has_no_rules() {
    let ex = calendar_exemplars();
    let prompt = build_prompt(
        &PromptConfig::with_mode(PromptMode::Standard),
        &ex,
        "meet Jean",
        None,
    )
    .unwrap();
    assert!(!prompt.contains("::="));
    assert!(prompt.ends_with("query: meet Jean\nprogram:\n"));
}

#[test]
fn derivation_tree_prompt_round_trips_programs() {
    let ex = calendar_exemplars();
    let prompt = build_prompt(
        &PromptConfig::with_mode(PromptMode::DerivationTree),
        &ex,
        "q",
        None,
    )
    .unwrap();
    for e in &ex {
        let d = e.deriv_linearized.as_ref().unwrap();
        assert!(prompt.contains(d.as_str()));
        let back: String = delinearize(d).unwrap().split_whitespace().collect();
        let gold: String = e.y.split_whitespace().collect();
        assert_eq!(back, gold);
    }
}

#[test]
fn full_grammar_block_needs_a_grammar() {
    let ex = calendar_exemplars();
    let cfg = PromptConfig {
        include_full_grammar: true,
        ..PromptConfig::default()
    };
    assert!(matches!(
        build_prompt(&cfg, &ex, "q", None),
        Err(PromptError::MissingFullGrammar)
    ));
    let g = builtin("calendar").unwrap().grammar;
    let prompt = build_prompt(&cfg, &ex, "q", Some(&g)).unwrap();
    assert!(prompt.contains("[BEGIN RULES]\n"));
    assert!(prompt.contains("[END RULES]"));
}

#[test]
fn empty_exemplars_are_an_error() {
    assert!(matches!(
        build_prompt(&PromptConfig::default(), &[], "q", None),
        Err(PromptError::NoExemplars)
    ));
}

#[test]
fn split_recovers_grammar_and_program() {
    let cfg = PromptConfig::default();
    let text = "event ::= \"X\"\nprogram based on the BNF grammar rules:\nX\n\nquery: next";
    let s = split_output(text, &cfg).unwrap();
    assert_eq!(s.grammar_text.as_deref(), Some("event ::= \"X\""));
    assert_eq!(s.program_text, "X");
    assert!(matches!(
        split_output("event ::= \"X\"", &cfg),
        Err(PromptError::LabelNotFound(_))
    ));

    let plain = split_output(
        "X(1)\nquery: more",
        &PromptConfig::with_mode(PromptMode::Standard),
    )
    .unwrap();
    assert_eq!(plain.grammar_text, None);
    assert_eq!(plain.program_text, "X(1)");
}

#[test]
fn program_suffix_continues_the_prompt() {
    let cfg = PromptConfig::default();
    assert_eq!(
        program_suffix(&cfg, "s ::= \"a\"\n\n"),
        "s ::= \"a\"\nprogram based on the BNF grammar rules:\n"
    );
}

#[test]
fn pddl_labels_and_config_files() {
    let cfg = PromptConfig {
        labels: SectionLabels::preset("pddl").unwrap(),
        ..PromptConfig::default()
    };
    let ex = vec![ExemplarTriple::plain("x", "y")];
    assert!(matches!(
        build_prompt(&cfg, &ex, "q", None),
        Err(PromptError::MissingGrammar(0))
    ));

    let toml = "mode = \"standard\"\nseparator = \"\\n---\\n\"\n[labels]\nquery = \"Q:\"\n";
    let cfg = PromptConfig::from_toml(toml).unwrap();
    assert_eq!(cfg.mode, PromptMode::Standard);
    assert_eq!(cfg.labels.query, "Q:");
    assert_eq!(cfg.labels.plain_program, "program:");
    let prompt = build_prompt(&cfg, &ex, "q", None).unwrap();
    assert!(prompt.contains("\n---\nQ: x\nprogram:\ny"));
    assert_eq!(
        PromptConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap(),
        cfg
    );
}

#[test]
fn exemplar_lines_get_grammars_from_the_full_grammar() {
    let c = builtin("calendar").unwrap();
    let jsonl = format!(
        "{}\n\n{}\n",
        serde_json::json!({"x": "a", "y": c.examples[0].y_gold}),
        serde_json::json!({"x": "b", "y": c.examples[1].y_gold, "grammar": "event ::= \"custom\""}),
    );
    let ex = load_exemplars(&jsonl, Some(&c.grammar)).unwrap();
    assert_eq!(ex.len(), 2);
    assert!(ex[0].spec_grammar.is_some() && ex[0].deriv_linearized.is_some());
    assert_eq!(ex[1].grammar_text.as_deref(), Some("event ::= \"custom\""));

    let err = load_exemplars("{\"x\": 1}", None).unwrap_err();
    assert!(matches!(err, PromptError::Exemplars { line: 1, .. }));
}
