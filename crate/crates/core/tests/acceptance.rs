//! Exit-gate checks. Prints one PASS/FAIL line per criterion and fails if
//! any criterion fails. Run with `--nocapture` to see the lines on success.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use grammar_steer_core::corpus::{builtins, figures, Corpus};
use grammar_steer_core::decode::{
    constrained_decode_with, decode_grammar_with, standard_decode, DecodeConfig, DecodeTrace,
    StepKind,
};
use grammar_steer_core::earley::{
    enumerate_language, linearize_derivation, EarleyError, EarleyParser, Recognition,
};
use grammar_steer_core::eval::{run_eval, EvalConfig, Method};
use grammar_steer_core::grammar::{canonical_form, is_subset, parse_bnf, Grammar};
use grammar_steer_core::lm::{AdversarialLm, Gateway, GoldLm, LanguageModel, OracleLm, ScriptedLm};
use grammar_steer_core::metagrammar::build_metagrammar;
use grammar_steer_core::prompt::{
    build_prompt, split_output, ExemplarTriple, PromptConfig, PromptMode,
};
use grammar_steer_core::sample::{random_grammar, random_subset, RandomGrammarConfig};
use grammar_steer_core::specialize::{check_property1, check_property2, specialize};

const ORACLE_GRAMMARS: usize = 50;
const ORACLE_MAX_LEN: usize = 12;
const ORACLE_TIME_LIMIT: Duration = Duration::from_secs(60);
const FUZZ_SESSIONS: usize = 1000;
const FUZZ_TIME_LIMIT: Duration = Duration::from_secs(300);
const SUBSETS_PER_CORPUS: usize = 100;
const FOOTNOTE_SUBPROGRAM: &str = "(attendee_? FindManager(Jean))";
/// The printed linearization, with the figure's double space collapsed.
const FOOTNOTE_LINEARIZATION: &str =
    r#"[constraint "(attendee_?" [attendee "FindManager(" [attendee "Jean" ")"] ")"]"#;
const FIG3_PREDICTION: &str =
    "CreateEvent((& (start_? Wednesday NumberPM(3)) (attendee_? Jean's Manager)))";

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn corpora() -> Vec<Corpus> {
    builtins()
}

fn exemplars(c: &Corpus) -> Vec<ExemplarTriple> {
    let parser = EarleyParser::new(&c.grammar).unwrap();
    c.train()
        .iter()
        .map(|e| ExemplarTriple::from_program(&e.x, &e.y_gold, &parser).unwrap())
        .collect()
}

fn adversarial_gold(c: &Corpus, rate: f64, seed: u64) -> Gateway {
    let gold: Arc<dyn LanguageModel> =
        Arc::new(GoldLm::from_corpus(c, Default::default()).unwrap());
    Gateway::new(AdversarialLm::new(gold, rate, seed))
}

const RATES: [f64; 4] = [0.1, 0.3, 0.6, 1.0];

fn binary_strings(max_len: usize) -> Vec<String> {
    let mut out = vec![String::new()];
    let mut layer = vec![String::new()];
    for _ in 0..max_len {
        layer = layer
            .iter()
            .flat_map(|s| [format!("{s}a"), format!("{s}b")])
            .collect();
        out.extend(layer.iter().cloned());
    }
    out
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let strings = binary_strings(ORACLE_MAX_LEN);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = RandomGrammarConfig::default();
    let mut grammars = Vec::new();
    let mut skipped = 0;
    while grammars.len() < ORACLE_GRAMMARS {
        let g = random_grammar(&mut rng, &cfg);
        match EarleyParser::new(&g) {
            Ok(_) => grammars.push(g),
            Err(EarleyError::EmptyLanguage) => skipped += 1,
            Err(e) => panic!("random grammar rejected: {e}"),
        }
    }
    let results: Vec<Result<usize, String>> = grammars
        .par_iter()
        .map(|g| {
            let lang = enumerate_language(g, ORACLE_MAX_LEN).map_err(|e| e.to_string())?;
            let parser = EarleyParser::new(g).unwrap();
            Ok(strings
                .iter()
                .filter(|s| parser.is_member(s) != lang.contains(s.as_str()))
                .count())
        })
        .collect();
    let errors: Vec<&String> = results.iter().filter_map(|r| r.as_ref().err()).collect();
    let disagreements: usize = results.iter().filter_map(|r| r.as_ref().ok()).sum();
    let elapsed = start.elapsed();
    outcome(
        errors.is_empty() && disagreements == 0 && elapsed < ORACLE_TIME_LIMIT,
        format!(
            "{} grammars ({skipped} empty-language skipped), {} strings each, {disagreements} disagreements, {} oracle errors, {:.1}s",
            grammars.len(),
            strings.len(),
            errors.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_2() -> Outcome {
    let mut pairs = 0;
    let mut failures = Vec::new();
    for c in corpora() {
        for e in &c.examples {
            pairs += 1;
            match specialize(&e.y_gold, &c.grammar) {
                Ok(spec) => {
                    let ok = check_property1(&spec, &e.y_gold)
                        && check_property2(&spec, &e.y_gold)
                        && is_subset(&spec.grammar, &c.grammar);
                    if !ok {
                        failures.push(format!("{}: {}", c.name, e.y_gold));
                    }
                }
                Err(err) => failures.push(format!("{}: {} ({err})", c.name, e.y_gold)),
            }
        }
    }
    outcome(
        pairs >= 60 && failures.is_empty(),
        format!("{pairs} pairs, {} failures {:?}", failures.len(), failures),
    )
}

fn criterion_3() -> Outcome {
    let g = parse_bnf(corpora()[0].grammar.to_string().as_str()).unwrap();
    let spec = specialize(figures::CALENDAR_EXEMPLAR_PROGRAM, &g).unwrap();
    let printed = parse_bnf(figures::CALENDAR_EXEMPLAR_SPEC).unwrap();
    let spec_ok = canonical_form(&spec.grammar) == canonical_form(&printed);

    let panel_grammar = figures::CALENDAR_OUTPUT
        .split("\n\n")
        .next()
        .unwrap()
        .trim();
    let split = split_output(
        figures::CALENDAR_OUTPUT,
        &PromptConfig::with_mode(PromptMode::Grammar),
    );
    let split_ok = match &split {
        Ok(s) => {
            s.grammar_text.as_deref() == Some(panel_grammar)
                && s.program_text == figures::CALENDAR_OUTPUT_PROGRAM
        }
        Err(_) => false,
    };
    outcome(
        spec_ok && split_ok,
        format!("specialized grammar matches printed: {spec_ok}; output panel split exactly: {split_ok}"),
    )
}

fn criterion_4() -> Outcome {
    let full = corpora()[0].grammar.clone();
    let g_hat = specialize(figures::CALENDAR_OUTPUT_PROGRAM, &full)
        .unwrap()
        .grammar;
    let expect = |xs: &[&str]| {
        xs.iter()
            .map(|s| s.to_string())
            .collect::<BTreeSet<String>>()
    };

    let hat = EarleyParser::new(&g_hat)
        .unwrap()
        .longest_valid_prefix(FIG3_PREDICTION);
    let hat_ok = hat.prefix.ends_with("(attendee_? ")
        && hat.continuations == expect(&["Jean", "FindManager("]);
    let fullp = EarleyParser::new(&full)
        .unwrap()
        .longest_valid_prefix(FIG3_PREDICTION);
    let full_ok = fullp.prefix.ends_with("(attendee_? ")
        && fullp.continuations == expect(&["Bob", "Carol", "FindManager(", "Jean"]);

    let gw = Gateway::new(
        ScriptedLm::new([FIG3_PREDICTION, "Jean))))"])
            .with_score("FindManager(", -0.4)
            .with_score("Jean", -2.0),
    );
    let parser = EarleyParser::new(&g_hat).unwrap();
    let (y, trace) =
        constrained_decode_with("prompt\n", &parser, &gw, &DecodeConfig::default()).unwrap();
    let corrections: Vec<_> = trace
        .steps
        .iter()
        .filter(|s| s.kind == StepKind::Correct)
        .collect();
    let loop_ok = corrections.len() == 1
        && corrections[0].chosen.as_deref() == Some("FindManager(")
        && corrections[0].candidate_count == 2
        && y == figures::CALENDAR_OUTPUT_PROGRAM;
    outcome(
        hat_ok && full_ok && loop_ok,
        format!(
            "prefix `{}`; continuations under G-hat {:?} ({hat_ok}), under G {:?} ({full_ok}); scored winner appended: {loop_ok}",
            hat.prefix, hat.continuations, fullp.continuations
        ),
    )
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let mut details = Vec::new();
    let mut pass = true;
    for c in corpora() {
        let ex = exemplars(&c);
        let tests = c.test();
        let parser = EarleyParser::new(&c.grammar).unwrap();
        let cfg = PromptConfig::with_mode(PromptMode::Standard);
        let dc = DecodeConfig::default();
        let results: Vec<(bool, bool)> = (0..FUZZ_SESSIONS)
            .into_par_iter()
            .map(|i| {
                let e = tests[i % tests.len()];
                let prompt = build_prompt(&cfg, &ex, &e.x, None).unwrap();
                let gw = adversarial_gold(&c, RATES[i % RATES.len()], i as u64);
                match constrained_decode_with(&prompt, &parser, &gw, &dc) {
                    Ok((y, trace)) => (parser.is_member(&y), trace.used_fallback()),
                    Err(_) => (false, false),
                }
            })
            .collect();
        let valid = results.iter().filter(|r| r.0).count();
        let fallbacks = results.iter().filter(|r| r.1).count();
        pass &= valid == FUZZ_SESSIONS;
        details.push(format!(
            "{} {valid}/{FUZZ_SESSIONS} valid ({fallbacks} via fallback)",
            c.name
        ));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < FUZZ_TIME_LIMIT;
    outcome(
        pass,
        format!("{}; {:.1}s", details.join(", "), elapsed.as_secs_f64()),
    )
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let mut pass = true;
    let mut details = Vec::new();
    let all = corpora();
    let per = FUZZ_SESSIONS.div_ceil(all.len());
    let mut sessions = 0;
    for c in &all {
        let ex = exemplars(c);
        let tests = c.test();
        let meta = build_metagrammar(&c.grammar).unwrap();
        let mp = meta.parser().unwrap();
        let cfg = PromptConfig::with_mode(PromptMode::Grammar);
        let mut dc = DecodeConfig::default();
        dc.stop.push(format!("\n{}", cfg.labels.program));
        let ok = (0..per)
            .into_par_iter()
            .filter(|&i| {
                let e = tests[i % tests.len()];
                let prompt = build_prompt(&cfg, &ex, &e.x, None).unwrap();
                let gw = adversarial_gold(c, RATES[i % RATES.len()], 7000 + i as u64);
                decode_grammar_with(&prompt, &meta, &mp, &gw, &dc)
                    .is_ok_and(|(g, _)| is_subset(&g, &c.grammar))
            })
            .count();
        sessions += per;
        pass &= ok == per;

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let complete = (0..SUBSETS_PER_CORPUS)
            .filter(|_| {
                let sub = random_subset(&mut rng, &c.grammar, meta.max_rep);
                meta.recognize(&sub.to_string()) == Recognition::Complete
            })
            .count();
        pass &= complete == SUBSETS_PER_CORPUS;
        details.push(format!(
            "{} {ok}/{per} subset, completeness {complete}/{SUBSETS_PER_CORPUS}",
            c.name
        ));
    }
    outcome(
        pass && sessions >= FUZZ_SESSIONS,
        format!(
            "{sessions} sessions: {}; {:.1}s",
            details.join(", "),
            start.elapsed().as_secs_f64()
        ),
    )
}

/// Score calls made before each correction or truncation.
fn score_calls_per_correction(trace: &DecodeTrace) -> Vec<usize> {
    let mut out = Vec::new();
    let mut n = 0;
    for s in &trace.steps {
        match s.kind {
            StepKind::Score => n += 1,
            StepKind::Correct | StepKind::Truncate => {
                out.push(n);
                n = 0;
            }
            _ => {}
        }
    }
    out
}

fn criterion_7() -> Outcome {
    let dc = DecodeConfig::default();
    let mut std_calls = Vec::new();
    let mut violations = Vec::new();
    let (mut constrained_calls, mut clean_calls) = (Vec::new(), Vec::new());
    for c in corpora() {
        let ex = exemplars(&c);
        let parser = EarleyParser::new(&c.grammar).unwrap();
        let cfg = PromptConfig::with_mode(PromptMode::Standard);
        for (i, e) in c.test().iter().enumerate() {
            let prompt = build_prompt(&cfg, &ex, &e.x, None).unwrap();
            for (rate, sink) in [(0.0, &mut clean_calls), (0.5, &mut constrained_calls)] {
                let gw = adversarial_gold(&c, rate, i as u64);
                let (_, t) = standard_decode(&prompt, &gw, &dc).unwrap();
                std_calls.push(t.complete_calls);
                let (_, t) = constrained_decode_with(&prompt, &parser, &gw, &dc).unwrap();
                if t.complete_calls != 1 + t.corrections() as u64 {
                    violations.push(format!(
                        "{}#{i}: {} calls, {} corrections",
                        c.name,
                        t.complete_calls,
                        t.corrections()
                    ));
                }
                if score_calls_per_correction(&t)
                    .iter()
                    .any(|&n| n > dc.prefilter_k)
                {
                    violations.push(format!("{}#{i}: prefilter bound exceeded", c.name));
                }
                let stats = gw.stats();
                if stats.complete_calls != 1 + t.complete_calls
                    || stats.score_calls != t.score_calls
                {
                    violations.push(format!(
                        "{}#{i}: gateway counters disagree with trace",
                        c.name
                    ));
                }
                sink.push(t.complete_calls);
            }
        }
    }
    let mean = |v: &[u64]| v.iter().sum::<u64>() as f64 / v.len() as f64;
    let (ms, mc, mk) = (
        mean(&std_calls),
        mean(&clean_calls),
        mean(&constrained_calls),
    );
    outcome(
        ms == 1.0 && mc == 1.0 && mk > 1.0 && violations.is_empty(),
        format!(
            "unconstrained {ms:.2} calls/example; constrained {mc:.2} on clean output, {mk:.2} on corrupted; violations {violations:?}"
        ),
    )
}

fn criterion_8() -> Outcome {
    let all = corpora();
    let mut figure_grammars: Vec<Grammar> = all.iter().map(|c| c.grammar.clone()).collect();
    for text in [
        figures::CALENDAR_EXEMPLAR_SPEC,
        figures::GEOQUERY_HAWAII_SPEC,
        figures::BLOCKS_EXEMPLAR_SPEC,
        figures::BLOCKS_OUTPUT_SPEC,
    ] {
        figure_grammars.push(parse_bnf(text).unwrap());
    }
    let bnf_ok = figure_grammars
        .iter()
        .all(|g| parse_bnf(&g.to_string()).is_ok_and(|h| &h.with_start(g.start.clone()) == g));

    let mut meta_ok = 0;
    let mut meta_total = 0;
    for c in &all {
        let meta = build_metagrammar(&c.grammar).unwrap();
        let mp = meta.parser().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..SUBSETS_PER_CORPUS {
            let sub = random_subset(&mut rng, &c.grammar, meta.max_rep);
            meta_total += 1;
            if meta
                .parse_candidate_with(&mp, &sub.to_string())
                .is_ok_and(|g| g == sub)
            {
                meta_ok += 1;
            }
        }
    }

    let cal = &all[0].grammar;
    let tree = EarleyParser::new(cal)
        .unwrap()
        .parse(figures::CALENDAR_OUTPUT_PROGRAM)
        .unwrap()
        .tree;
    let ours = tree
        .find_subtree("constraint", FOOTNOTE_SUBPROGRAM)
        .map(linearize_derivation)
        .unwrap_or_default();
    let footnote_ok = ours == FOOTNOTE_LINEARIZATION;
    outcome(
        bnf_ok && meta_ok == meta_total && footnote_ok,
        format!(
            "grammar round trip: {bnf_ok}; metagrammar round trip {meta_ok}/{meta_total}; footnote linearization exact: {footnote_ok} (ours `{ours}`, printed `{FOOTNOTE_LINEARIZATION}`)"
        ),
    )
}

fn criterion_9() -> Outcome {
    let methods = [
        Method::Grammar,
        Method::GrammarSubsetConstraint,
        Method::GrammarBothConstraints,
        Method::GrammarOracle,
    ];
    let mut pass = true;
    let mut details = Vec::new();
    for c in corpora() {
        let mocks: Vec<(String, Gateway)> = vec![
            ("gold".into(), adversarial_gold(&c, 0.0, 0)),
            ("adversarial-0.3".into(), adversarial_gold(&c, 0.3, 5)),
            ("adversarial-1.0".into(), adversarial_gold(&c, 1.0, 5)),
            (
                "oracle".into(),
                Gateway::new(OracleLm::new(c.grammar.clone(), 5)),
            ),
        ];
        for (name, gw) in mocks {
            let report = run_eval(&c, &methods, &gw, &EvalConfig::default()).unwrap();
            let acc = |m| report.row(m).unwrap().program_accuracy;
            let oracle = acc(Method::GrammarOracle);
            let best_predicted = methods[..3].iter().map(|&m| acc(m)).fold(0.0, f64::max);
            pass &= oracle >= best_predicted;
            details.push(format!(
                "{}/{name} {oracle:.2}>={best_predicted:.2}",
                c.name
            ));
        }
    }
    outcome(pass, details.join(", "))
}

#[test]
fn acceptance() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 9] = [
        ("earley oracle equivalence", criterion_1),
        ("specialization properties", criterion_2),
        ("worked-example grammar and output split", criterion_3),
        ("correction step mechanics", criterion_4),
        ("validity under adversarial output", criterion_5),
        ("subset guarantee and metagrammar completeness", criterion_6),
        ("call accounting", criterion_7),
        ("round trips", criterion_8),
        ("oracle grammar ordering", criterion_9),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {} [{tag}] {name}: {}", i + 1, o.detail);
        if !o.pass {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
