//! Python bindings. Grammars are passed as BNF text; structured results
//! come back as tuples or JSON strings.

use std::sync::Arc;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use grammar_steer_core::corpus;
use grammar_steer_core::decode::{constrained_decode_with, decode_grammar_with, DecodeConfig};
use grammar_steer_core::earley::{EarleyParser, Recognition};
use grammar_steer_core::eval::{parse_methods, run_eval, EvalConfig};
use grammar_steer_core::grammar::{is_subset, parse_bnf, validate as validate_grammar, Grammar};
use grammar_steer_core::lm::{AdversarialLm, Gateway, GoldLm, LanguageModel, OracleLm, ScriptedLm};
use grammar_steer_core::metagrammar::build_metagrammar;
use grammar_steer_core::prompt::{build_prompt as build, load_exemplars, PromptConfig, PromptMode};
use grammar_steer_core::specialize::specialize as specialize_program;

fn err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn grammar(text: &str) -> PyResult<Grammar> {
    parse_bnf(text).map_err(err)
}

fn parser(text: &str) -> PyResult<EarleyParser> {
    EarleyParser::new(&grammar(text)?).map_err(err)
}

/// Canonical text of a grammar.
#[pyfunction]
fn parse_grammar(text: &str) -> PyResult<String> {
    Ok(grammar(text)?.to_string())
}

/// Problems found in a grammar, one message each.
#[pyfunction]
fn validate(text: &str) -> PyResult<Vec<String>> {
    Ok(validate_grammar(&grammar(text)?)
        .iter()
        .map(|d| d.to_string())
        .collect())
}

/// "complete", "viable_prefix" or "invalid".
#[pyfunction]
fn recognize(grammar_text: &str, s: &str) -> PyResult<&'static str> {
    Ok(match parser(grammar_text)?.recognize(s) {
        Recognition::Complete => "complete",
        Recognition::ViablePrefix => "viable_prefix",
        Recognition::Invalid => "invalid",
    })
}

/// `(prefix, continuations, failure_index)`.
#[pyfunction]
fn longest_valid_prefix(
    grammar_text: &str,
    s: &str,
) -> PyResult<(String, Vec<String>, Option<usize>)> {
    let a = parser(grammar_text)?.longest_valid_prefix(s);
    Ok((
        a.prefix,
        a.continuations.into_iter().collect(),
        a.failure_index,
    ))
}

/// Minimal specialized grammar of a program.
#[pyfunction]
fn specialize(grammar_text: &str, program: &str) -> PyResult<String> {
    Ok(specialize_program(program, &grammar(grammar_text)?)
        .map_err(err)?
        .grammar
        .to_string())
}

#[pyfunction]
fn metagrammar(grammar_text: &str) -> PyResult<String> {
    Ok(build_metagrammar(&grammar(grammar_text)?)
        .map_err(err)?
        .grammar
        .to_string())
}

/// True if `candidate` is a specialized grammar of `grammar_text`.
#[pyfunction]
fn is_specialization(grammar_text: &str, candidate: &str) -> PyResult<bool> {
    let g = grammar(grammar_text)?;
    let meta = build_metagrammar(&g).map_err(err)?;
    Ok(meta
        .parse_candidate(candidate)
        .is_ok_and(|sub| is_subset(&sub, &g)))
}

#[pyfunction]
#[pyo3(signature = (exemplars_jsonl, query, grammar_text=None, mode="grammar"))]
fn build_prompt(
    exemplars_jsonl: &str,
    query: &str,
    grammar_text: Option<&str>,
    mode: &str,
) -> PyResult<String> {
    let mode = match mode {
        "grammar" => PromptMode::Grammar,
        "standard" => PromptMode::Standard,
        "derivation_tree" => PromptMode::DerivationTree,
        other => return Err(err(format!("unknown mode `{other}`"))),
    };
    let g = grammar_text.map(grammar).transpose()?;
    let ex = load_exemplars(exemplars_jsonl, g.as_ref()).map_err(err)?;
    build(&PromptConfig::with_mode(mode), &ex, query, g.as_ref()).map_err(err)
}

fn mock(
    kind: &str,
    g: &Grammar,
    seed: u64,
    rate: f64,
    script: Option<Vec<String>>,
) -> PyResult<Gateway> {
    let oracle: Arc<dyn LanguageModel> = Arc::new(OracleLm::new(g.clone(), seed));
    Ok(match kind {
        "oracle" => Gateway::from_arc(oracle),
        "adversarial" => Gateway::new(AdversarialLm::new(oracle, rate, seed)),
        "scripted" => Gateway::new(ScriptedLm::new(
            script.ok_or_else(|| err("scripted mock needs `script`"))?,
        )),
        other => return Err(err(format!("unknown mock `{other}`"))),
    })
}

/// Constrained decoding against a mock model.
/// Returns `(program, complete_calls, score_calls)`.
#[pyfunction]
#[pyo3(signature = (grammar_text, prompt, mock_kind="adversarial", seed=0, rate=0.3, script=None))]
fn decode(
    grammar_text: &str,
    prompt: &str,
    mock_kind: &str,
    seed: u64,
    rate: f64,
    script: Option<Vec<String>>,
) -> PyResult<(String, u64, u64)> {
    let g = grammar(grammar_text)?;
    let p = EarleyParser::new(&g).map_err(err)?;
    let gw = mock(mock_kind, &g, seed, rate, script)?;
    let (y, t) = constrained_decode_with(prompt, &p, &gw, &DecodeConfig::default()).map_err(err)?;
    Ok((y, t.complete_calls, t.score_calls))
}

/// Grammar decoding constrained to specializations of `grammar_text`.
#[pyfunction]
#[pyo3(signature = (grammar_text, prompt, script))]
fn decode_grammar(grammar_text: &str, prompt: &str, script: Vec<String>) -> PyResult<String> {
    let g = grammar(grammar_text)?;
    let meta = build_metagrammar(&g).map_err(err)?;
    let mp = meta.parser().map_err(err)?;
    let gw = Gateway::new(ScriptedLm::new(script));
    let (sub, _) =
        decode_grammar_with(prompt, &meta, &mp, &gw, &DecodeConfig::default()).map_err(err)?;
    Ok(sub.to_string())
}

/// Evaluation report as JSON for a bundled corpus or corpus directory.
#[pyfunction]
#[pyo3(signature = (corpus_name, methods="all", mock_kind="gold", seed=0, rate=0.3))]
fn evaluate(
    corpus_name: &str,
    methods: &str,
    mock_kind: &str,
    seed: u64,
    rate: f64,
) -> PyResult<String> {
    let c = corpus::load(std::path::Path::new(corpus_name)).map_err(err)?;
    let methods = parse_methods(methods).map_err(err)?;
    let gold = || -> PyResult<Arc<dyn LanguageModel>> {
        Ok(Arc::new(
            GoldLm::from_corpus(&c, Default::default()).map_err(err)?,
        ))
    };
    let gw = match mock_kind {
        "gold" => Gateway::from_arc(gold()?),
        "adversarial" => Gateway::new(AdversarialLm::new(gold()?, rate, seed)),
        "oracle" => Gateway::new(OracleLm::new(c.grammar.clone(), seed)),
        other => return Err(err(format!("unknown mock `{other}`"))),
    };
    let report = run_eval(&c, &methods, &gw, &EvalConfig::default()).map_err(err)?;
    serde_json::to_string(&report).map_err(err)
}

#[pymodule]
fn grammar_steer(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(parse_grammar, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(recognize, m)?)?;
    m.add_function(wrap_pyfunction!(longest_valid_prefix, m)?)?;
    m.add_function(wrap_pyfunction!(specialize, m)?)?;
    m.add_function(wrap_pyfunction!(metagrammar, m)?)?;
    m.add_function(wrap_pyfunction!(is_specialization, m)?)?;
    m.add_function(wrap_pyfunction!(build_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    m.add_function(wrap_pyfunction!(decode_grammar, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
