//! Speculative constrained decoding with Earley-based correction.
//!
//! The model is asked for a whole continuation. If prefix plus continuation
//! is a sentence it is returned; otherwise the longest viable prefix is kept,
//! the best next terminal is chosen by scoring, and the model is asked again
//! from the extended prefix.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::earley::{is_word_char, EarleyError, EarleyParser, Recognition, WhitespacePolicy};
use crate::grammar::Grammar;
use crate::lm::{cosine, Gateway, LmError, LmRequest, Sampling, ScoreRequest};
use crate::metagrammar::{build_metagrammar, MetaError, MetaGrammar};
use crate::prompt::{program_suffix, PromptConfig};

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("no valid output after {rounds} correction rounds (prefix `{prefix}`)")]
    DecodeFailed {
        rounds: usize,
        prefix: String,
        trace: DecodeTrace,
    },
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Grammar(#[from] EarleyError),
    #[error(transparent)]
    Meta(#[from] MetaError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    None,
    #[default]
    FullGrammar,
    PredictedGrammar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    Fail,
    #[default]
    ShortestCompletion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub max_correction_rounds: usize,
    pub prefilter_k: usize,
    pub constraint: Constraint,
    pub fallback: Fallback,
    /// Stop sequences for each speculation.
    pub stop: Vec<String>,
    pub max_new_text: usize,
    pub sampling: Sampling,
    pub seed: Option<u64>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            max_correction_rounds: 20,
            prefilter_k: 16,
            constraint: Constraint::FullGrammar,
            fallback: Fallback::ShortestCompletion,
            stop: vec!["\n\n".into()],
            max_new_text: 512,
            sampling: Sampling::default(),
            seed: None,
        }
    }
}

impl DecodeConfig {
    fn request(&self, prompt: String) -> LmRequest {
        LmRequest {
            prompt,
            stop: self.stop.clone(),
            max_new_text: self.max_new_text,
            sampling: self.sampling,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Speculate,
    /// A terminal was appended to the prefix and the model asked again.
    Correct,
    /// The invalid tail was dropped because the prefix was already a
    /// sentence and ending there scored best.
    Truncate,
    Score,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub kind: StepKind,
    /// Characters of accepted prefix when the step ran.
    pub prefix_len: usize,
    pub candidate_count: usize,
    pub chosen: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DecodeTrace {
    pub steps: Vec<TraceStep>,
    pub complete_calls: u64,
    pub score_calls: u64,
}

impl DecodeTrace {
    pub fn corrections(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| s.kind == StepKind::Correct)
            .count()
    }

    pub fn used_fallback(&self) -> bool {
        self.steps.iter().any(|s| s.kind == StepKind::Fallback)
    }

    pub fn absorb(&mut self, other: DecodeTrace) {
        self.steps.extend(other.steps);
        self.complete_calls += other.complete_calls;
        self.score_calls += other.score_calls;
    }

    fn push(
        &mut self,
        kind: StepKind,
        prefix_len: usize,
        candidate_count: usize,
        chosen: Option<String>,
    ) {
        self.steps.push(TraceStep {
            kind,
            prefix_len,
            candidate_count,
            chosen,
        });
    }
}

/// One model call, no validity check.
pub fn standard_decode(
    prompt: &str,
    lm: &Gateway,
    cfg: &DecodeConfig,
) -> Result<(String, DecodeTrace), DecodeError> {
    let mut trace = DecodeTrace::default();
    let resp = lm.complete(&cfg.request(prompt.to_string()))?;
    trace.complete_calls += 1;
    trace.push(StepKind::Speculate, 0, 0, None);
    Ok((resp.text.trim().to_string(), trace))
}

pub fn constrained_decode(
    prompt: &str,
    g: &Grammar,
    lm: &Gateway,
    cfg: &DecodeConfig,
) -> Result<(String, DecodeTrace), DecodeError> {
    constrained_decode_with(prompt, &EarleyParser::new(g)?, lm, cfg)
}

/// Next piece of output chosen during a correction.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Choice {
    Terminal(String),
    /// Stop: the prefix is already a sentence.
    End,
}

pub fn constrained_decode_with(
    prompt: &str,
    parser: &EarleyParser,
    lm: &Gateway,
    cfg: &DecodeConfig,
) -> Result<(String, DecodeTrace), DecodeError> {
    let policy = parser.policy();
    let mut trace = DecodeTrace::default();
    let mut prefix = String::new();
    let mut seen: HashSet<String> = HashSet::new();
    let mut rounds = 0;

    loop {
        let resp = lm.complete(&cfg.request(format!("{prompt}{prefix}")))?;
        trace.complete_calls += 1;
        let spec = resp.text.trim_end().to_string();
        let candidate = format!("{prefix}{spec}");
        let floor = prefix.chars().count();
        trace.push(StepKind::Speculate, floor, 0, None);
        if parser.recognize(&candidate) == Recognition::Complete {
            return Ok((policy.normalize(&candidate), trace));
        }
        if rounds >= cfg.max_correction_rounds.max(1) {
            break;
        }

        // A speculation seen before would lead to the same cut; advance
        // from the current prefix instead.
        let repeated = !seen.insert(spec);
        let analysis = if repeated {
            parser.longest_valid_prefix_from(&prefix, floor)
        } else {
            parser.longest_valid_prefix_from(&candidate, floor)
        };
        let bad = policy.normalize_prefix(&candidate);
        let at_end = parser.recognize(&analysis.prefix) == Recognition::Complete;
        if analysis.continuations.is_empty() {
            if at_end {
                return Ok((policy.normalize(&analysis.prefix), trace));
            }
            break;
        }
        let choice = choose(
            prompt,
            &analysis.prefix,
            &analysis.continuations,
            at_end,
            &bad,
            policy,
            lm,
            cfg,
            &mut trace,
        )?;
        rounds += 1;
        match choice {
            Choice::End => {
                trace.push(
                    StepKind::Truncate,
                    analysis.prefix.chars().count(),
                    analysis.continuations.len() + 1,
                    None,
                );
                return Ok((policy.normalize(&analysis.prefix), trace));
            }
            Choice::Terminal(w) => {
                trace.push(
                    StepKind::Correct,
                    analysis.prefix.chars().count(),
                    analysis.continuations.len() + usize::from(at_end),
                    Some(w.clone()),
                );
                prefix = policy.normalize_prefix(&join(&analysis.prefix, &w, &bad, policy));
            }
        }
    }

    let len = prefix.chars().count();
    match cfg.fallback {
        Fallback::Fail => Err(DecodeError::DecodeFailed {
            rounds,
            prefix,
            trace,
        }),
        Fallback::ShortestCompletion => {
            let y = complete_shortest(parser, &prefix)?;
            trace.push(StepKind::Fallback, len, 0, Some(y.clone()));
            Ok((y, trace))
        }
    }
}

/// `prefix` extended by its shortest completion into a sentence.
fn complete_shortest(parser: &EarleyParser, prefix: &str) -> Result<String, DecodeError> {
    let policy = parser.policy();
    let tail = parser.shortest_completion(prefix)?;
    let base = prefix.trim_end();
    let spaced = join(base, &tail, "", policy);
    for y in [spaced, format!("{base}{tail}")] {
        if parser.recognize(&y) == Recognition::Complete {
            return Ok(policy.normalize(&y));
        }
    }
    Err(EarleyError::NoParse.into())
}

/// Appends a chosen terminal, inserting a space where the rejected output
/// had one at the same point, or where two words would otherwise merge.
fn join(prefix: &str, w: &str, bad: &str, policy: WhitespacePolicy) -> String {
    if policy == WhitespacePolicy::Exact
        || prefix.is_empty()
        || prefix.ends_with(' ')
        || w.starts_with(' ')
    {
        return format!("{prefix}{w}");
    }
    let cut = prefix.chars().count();
    let model_spaced = bad.chars().nth(cut).is_some_and(char::is_whitespace);
    let merges = prefix.chars().last().is_some_and(is_word_char)
        && w.chars().next().is_some_and(is_word_char);
    if model_spaced || merges {
        format!("{prefix} {w}")
    } else {
        format!("{prefix}{w}")
    }
}

/// Picks the terminal to append after `prefix`. Above `prefilter_k`
/// candidates, only the `k` most similar to the rejected output (by
/// embedding) are scored; without log-probabilities the most similar one
/// wins. Ties go to the lexicographically smallest terminal.
pub fn select_candidate(
    prompt: &str,
    prefix: &str,
    candidates: &BTreeSet<String>,
    bad_prediction: &str,
    lm: &Gateway,
    cfg: &DecodeConfig,
) -> Result<(String, DecodeTrace), DecodeError> {
    assert!(!candidates.is_empty(), "select_candidate needs candidates");
    let mut trace = DecodeTrace::default();
    let choice = choose(
        prompt,
        prefix,
        candidates,
        false,
        bad_prediction,
        WhitespacePolicy::Flexible,
        lm,
        cfg,
        &mut trace,
    )?;
    match choice {
        Choice::Terminal(w) => Ok((w, trace)),
        Choice::End => unreachable!("end is only offered when allowed"),
    }
}

#[allow(clippy::too_many_arguments)]
fn choose(
    prompt: &str,
    prefix: &str,
    candidates: &BTreeSet<String>,
    allow_end: bool,
    bad: &str,
    policy: WhitespacePolicy,
    lm: &Gateway,
    cfg: &DecodeConfig,
    trace: &mut DecodeTrace,
) -> Result<Choice, DecodeError> {
    let mut options: Vec<Choice> = candidates.iter().cloned().map(Choice::Terminal).collect();
    if allow_end {
        options.push(Choice::End);
    }
    if options.len() == 1 {
        return Ok(options.pop().expect("one option"));
    }

    let k = cfg.prefilter_k.max(1);
    let logprobs = lm.capabilities().logprobs;
    if options.len() > k || !logprobs {
        let target = lm.embed(bad)?;
        let mut ranked: Vec<(f64, Choice)> = Vec::with_capacity(options.len());
        for o in options {
            let text = match &o {
                Choice::Terminal(w) => join(prefix, w, bad, policy),
                Choice::End => prefix.to_string(),
            };
            ranked.push((cosine(&lm.embed(&text)?, &target), o));
        }
        // stable sort keeps the lexicographic order among equal scores
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
        ranked.truncate(k);
        options = ranked.into_iter().map(|(_, o)| o).collect();
        if !logprobs {
            let top = options.swap_remove(0);
            trace.push(
                StepKind::Score,
                prefix.chars().count(),
                candidates.len(),
                label(&top),
            );
            return Ok(top);
        }
    }

    let context = format!("{prompt}{prefix}");
    let mut best: Option<(f64, Choice)> = None;
    for o in options {
        let continuation = match &o {
            Choice::Terminal(w) => join(prefix, w, bad, policy)[prefix.len()..].to_string(),
            Choice::End => "\n".to_string(),
        };
        let s = lm.score(&ScoreRequest {
            prompt: context.clone(),
            continuation,
        })?;
        trace.score_calls += 1;
        trace.push(StepKind::Score, prefix.chars().count(), 1, label(&o));
        if best.as_ref().is_none_or(|(b, _)| s > *b) {
            best = Some((s, o));
        }
    }
    Ok(best.expect("at least one option").1)
}

fn label(c: &Choice) -> Option<String> {
    match c {
        Choice::Terminal(w) => Some(w.clone()),
        Choice::End => None,
    }
}

/// Grammar prediction constrained to sub-grammars of `g_full`.
pub fn decode_grammar(
    prompt: &str,
    g_full: &Grammar,
    lm: &Gateway,
    cfg: &DecodeConfig,
) -> Result<(Grammar, DecodeTrace), DecodeError> {
    let meta = build_metagrammar(g_full)?;
    let parser = meta.parser()?;
    decode_grammar_with(prompt, &meta, &parser, lm, cfg)
}

/// [`decode_grammar`] with a prebuilt metagrammar and its parser.
pub fn decode_grammar_with(
    prompt: &str,
    meta: &MetaGrammar,
    meta_parser: &EarleyParser,
    lm: &Gateway,
    cfg: &DecodeConfig,
) -> Result<(Grammar, DecodeTrace), DecodeError> {
    let (text, trace) = constrained_decode_with(prompt, meta_parser, lm, cfg)?;
    let g = meta.parse_candidate_with(meta_parser, &text)?;
    Ok((g, trace))
}

/// Output of grammar-prompted decoding: a predicted grammar, then a program.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrammarPrompted {
    pub grammar: Grammar,
    pub program: String,
    pub trace: DecodeTrace,
}

/// Predicts a grammar constrained to sub-grammars of the full grammar, then
/// a program. `prompt` must end where the grammar begins. The program is
/// unconstrained for [`Constraint::None`], must be in the full grammar's
/// language for [`Constraint::FullGrammar`], and in the predicted grammar's
/// language for [`Constraint::PredictedGrammar`]. A predicted grammar with
/// no usable language falls back to the full grammar.
pub fn grammar_prompted_decode(
    prompt: &str,
    prompt_cfg: &PromptConfig,
    full_parser: &EarleyParser,
    meta: &MetaGrammar,
    meta_parser: &EarleyParser,
    lm: &Gateway,
    cfg: &DecodeConfig,
) -> Result<GrammarPrompted, DecodeError> {
    let mut gcfg = cfg.clone();
    gcfg.stop.push(format!("\n{}", prompt_cfg.labels.program));
    let (grammar, mut trace) = decode_grammar_with(prompt, meta, meta_parser, lm, &gcfg)?;
    let program_prompt = format!(
        "{prompt}{}",
        program_suffix(prompt_cfg, &grammar.to_string())
    );
    let (program, t) = decode_program(&program_prompt, &grammar, full_parser, lm, cfg)?;
    trace.absorb(t);
    Ok(GrammarPrompted {
        grammar,
        program,
        trace,
    })
}

/// Decodes a program after a grammar section, applying `cfg.constraint`.
pub fn decode_program(
    prompt: &str,
    g_hat: &Grammar,
    full_parser: &EarleyParser,
    lm: &Gateway,
    cfg: &DecodeConfig,
) -> Result<(String, DecodeTrace), DecodeError> {
    match cfg.constraint {
        Constraint::None => {
            let (text, trace) = standard_decode(prompt, lm, cfg)?;
            let first = text
                .split("\n\n")
                .next()
                .unwrap_or_default()
                .trim()
                .to_string();
            Ok((first, trace))
        }
        Constraint::FullGrammar => constrained_decode_with(prompt, full_parser, lm, cfg),
        Constraint::PredictedGrammar => {
            match EarleyParser::with_policy(g_hat, full_parser.policy()) {
                Ok(p) => constrained_decode_with(prompt, &p, lm, cfg),
                Err(e) => {
                    log::debug!(
                        "predicted grammar unusable ({e}); constraining by the full grammar"
                    );
                    constrained_decode_with(prompt, full_parser, lm, cfg)
                }
            }
        }
    }
}
