//! Batch evaluation of prompting and decoding methods on a corpus.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, EvalExample};
use crate::decode::{
    constrained_decode_with, decode_program, grammar_prompted_decode, standard_decode, Constraint,
    DecodeConfig, DecodeError, DecodeTrace,
};
use crate::earley::{EarleyError, EarleyParser, WhitespacePolicy};
use crate::grammar::Grammar;
use crate::lm::Gateway;
use crate::metagrammar::{build_metagrammar, MetaError, MetaGrammar};
use crate::prompt::{
    build_prompt, delinearize, program_suffix, split_output, ExemplarTriple, PromptConfig,
    PromptError, PromptMode, SplitOutput,
};
use crate::specialize::specialize_parsed;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Grammar(#[from] EarleyError),
    #[error(transparent)]
    Meta(#[from] MetaError),
    #[error("corpus has no training examples to use as exemplars")]
    NoExemplars,
    #[error("unknown method `{0}`")]
    UnknownMethod(String),
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Standard,
    StandardFullConstraint,
    DerivationTree,
    Grammar,
    GrammarSubsetConstraint,
    GrammarBothConstraints,
    GrammarOracle,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Standard,
        Method::StandardFullConstraint,
        Method::DerivationTree,
        Method::Grammar,
        Method::GrammarSubsetConstraint,
        Method::GrammarBothConstraints,
        Method::GrammarOracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Standard => "standard",
            Method::StandardFullConstraint => "standard-full-constraint",
            Method::DerivationTree => "derivation-tree",
            Method::Grammar => "grammar",
            Method::GrammarSubsetConstraint => "grammar-subset-constraint",
            Method::GrammarBothConstraints => "grammar-both-constraints",
            Method::GrammarOracle => "grammar-oracle",
        }
    }

    /// Short description of the constraint in force.
    pub fn constraint_setting(self) -> &'static str {
        match self {
            Method::Standard | Method::DerivationTree | Method::Grammar => "none",
            Method::StandardFullConstraint => "y in L(G)",
            Method::GrammarSubsetConstraint => "G' subset of G",
            Method::GrammarBothConstraints => "G' subset of G, y in L(G')",
            Method::GrammarOracle => "G' = G[y], y in L(G')",
        }
    }

    fn prompt_mode(self) -> PromptMode {
        match self {
            Method::Standard | Method::StandardFullConstraint => PromptMode::Standard,
            Method::DerivationTree => PromptMode::DerivationTree,
            _ => PromptMode::Grammar,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| EvalError::UnknownMethod(s.to_string()))
    }
}

/// Parses a comma-separated method list; `all` selects every method.
pub fn parse_methods(list: &str) -> Result<Vec<Method>, EvalError> {
    if list.trim() == "all" {
        return Ok(Method::ALL.to_vec());
    }
    list.split(',').map(|m| m.trim().parse()).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub prompt: PromptConfig,
    pub decode: DecodeConfig,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
    /// Caps the number of test examples.
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleResult {
    pub x: String,
    pub y_gold: String,
    pub y_pred: Option<String>,
    pub grammar_pred: Option<String>,
    pub correct: bool,
    pub valid: bool,
    pub complete_calls: u64,
    pub score_calls: u64,
    pub corrections: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: Method,
    pub constraint_setting: String,
    pub program_accuracy: f64,
    /// Fraction of predictions in the language of the full grammar.
    pub validity: f64,
    pub mean_complete_calls: f64,
    pub mean_score_calls: f64,
    pub examples: Vec<ExampleResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub corpus: String,
    pub provider: String,
    /// Always "program"; execution accuracy is not computed.
    pub metric: String,
    pub rows: Vec<MethodRow>,
}

impl EvalReport {
    pub fn row(&self, m: Method) -> Option<&MethodRow> {
        self.rows.iter().find(|r| r.method == m)
    }

    /// Aligned text table, one line per method.
    pub fn table(&self) -> String {
        let headers = [
            "method",
            "constraint",
            "accuracy",
            "validity",
            "calls",
            "scores",
        ];
        let mut lines: Vec<[String; 6]> = vec![headers.map(String::from)];
        for r in &self.rows {
            lines.push([
                r.method.to_string(),
                r.constraint_setting.clone(),
                format!("{:.3}", r.program_accuracy),
                format!("{:.3}", r.validity),
                format!("{:.2}", r.mean_complete_calls),
                format!("{:.2}", r.mean_score_calls),
            ]);
        }
        let widths: Vec<usize> = (0..6)
            .map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = format!(
            "corpus: {}  provider: {}  metric: {} accuracy\n",
            self.corpus, self.provider, self.metric
        );
        for l in &lines {
            let cells: Vec<String> = l
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (cell, w))| {
                    if c < 2 {
                        format!("{cell:<w$}")
                    } else {
                        format!("{cell:>w$}")
                    }
                })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

/// Whitespace-normalized equality, or equal derivation trees when both
/// programs parse under `g`.
pub fn exact_match(y_pred: &str, y_gold: &str, g: &Grammar) -> bool {
    match EarleyParser::new(g) {
        Ok(p) => exact_match_with(y_pred, y_gold, &p),
        Err(_) => {
            WhitespacePolicy::Flexible.normalize(y_pred)
                == WhitespacePolicy::Flexible.normalize(y_gold)
        }
    }
}

pub fn exact_match_with(y_pred: &str, y_gold: &str, parser: &EarleyParser) -> bool {
    let norm = WhitespacePolicy::Flexible;
    if norm.normalize(y_pred) == norm.normalize(y_gold) {
        return true;
    }
    match (parser.parse(y_pred), parser.parse(y_gold)) {
        (Ok(a), Ok(b)) => a.tree == b.tree,
        _ => false,
    }
}

/// Shared state for evaluating one corpus.
struct Session<'a> {
    corpus: &'a Corpus,
    parser: EarleyParser,
    meta: MetaGrammar,
    meta_parser: EarleyParser,
    exemplars: Vec<ExemplarTriple>,
    cfg: &'a EvalConfig,
}

struct Prediction {
    program: String,
    grammar: Option<String>,
    trace: DecodeTrace,
}

impl Session<'_> {
    fn prompt(&self, method: Method, x: &str) -> Result<String, PromptError> {
        let mut pc = self.cfg.prompt.clone();
        pc.mode = method.prompt_mode();
        build_prompt(&pc, &self.exemplars, x, Some(&self.corpus.grammar))
    }

    fn grammar_cfg(&self) -> PromptConfig {
        let mut pc = self.cfg.prompt.clone();
        pc.mode = PromptMode::Grammar;
        pc
    }

    fn predict(
        &self,
        method: Method,
        ex: &EvalExample,
        gw: &Gateway,
    ) -> Result<Prediction, String> {
        let prompt = self.prompt(method, &ex.x).map_err(|e| e.to_string())?;
        let dc = &self.cfg.decode;
        let err = |e: DecodeError| e.to_string();
        let done = |program: String, grammar: Option<String>, trace| Prediction {
            program,
            grammar,
            trace,
        };
        match method {
            Method::Standard | Method::DerivationTree => {
                let (text, trace) = standard_decode(&prompt, gw, dc).map_err(err)?;
                let mut pc = self.cfg.prompt.clone();
                pc.mode = method.prompt_mode();
                let body = split_output(&text, &pc)
                    .map_err(|e| e.to_string())?
                    .program_text;
                let program = if method == Method::DerivationTree {
                    delinearize(&body).unwrap_or(body)
                } else {
                    body
                };
                Ok(done(program, None, trace))
            }
            Method::StandardFullConstraint => {
                let (y, trace) =
                    constrained_decode_with(&prompt, &self.parser, gw, dc).map_err(err)?;
                Ok(done(y, None, trace))
            }
            Method::Grammar => {
                let (text, trace) = standard_decode(&prompt, gw, dc).map_err(err)?;
                // without a program label the whole reply counts as the program
                let out = split_output(&text, &self.grammar_cfg()).unwrap_or(SplitOutput {
                    grammar_text: None,
                    program_text: text.trim().to_string(),
                });
                Ok(done(out.program_text, out.grammar_text, trace))
            }
            Method::GrammarSubsetConstraint | Method::GrammarBothConstraints => {
                let mut dc = dc.clone();
                dc.constraint = if method == Method::GrammarSubsetConstraint {
                    Constraint::None
                } else {
                    Constraint::PredictedGrammar
                };
                let out = grammar_prompted_decode(
                    &prompt,
                    &self.grammar_cfg(),
                    &self.parser,
                    &self.meta,
                    &self.meta_parser,
                    gw,
                    &dc,
                )
                .map_err(err)?;
                Ok(done(
                    out.program,
                    Some(out.grammar.to_string().trim_end().to_string()),
                    out.trace,
                ))
            }
            Method::GrammarOracle => {
                let spec = specialize_parsed(&ex.y_gold, &self.parser, Default::default())
                    .map_err(|e| e.to_string())?;
                let g_text = spec.grammar.to_string();
                let program_prompt =
                    format!("{prompt}{}", program_suffix(&self.grammar_cfg(), &g_text));
                let mut dc = dc.clone();
                dc.constraint = Constraint::PredictedGrammar;
                let (y, trace) =
                    decode_program(&program_prompt, &spec.grammar, &self.parser, gw, &dc)
                        .map_err(err)?;
                Ok(done(y, Some(g_text.trim_end().to_string()), trace))
            }
        }
    }

    fn run(&self, method: Method, ex: &EvalExample, gw: &Gateway) -> ExampleResult {
        let mut r = ExampleResult {
            x: ex.x.clone(),
            y_gold: ex.y_gold.clone(),
            y_pred: None,
            grammar_pred: None,
            correct: false,
            valid: false,
            complete_calls: 0,
            score_calls: 0,
            corrections: 0,
            error: None,
        };
        match self.predict(method, ex, gw) {
            Ok(p) => {
                r.correct = exact_match_with(&p.program, &ex.y_gold, &self.parser);
                r.valid = self.parser.is_member(&p.program);
                r.complete_calls = p.trace.complete_calls;
                r.score_calls = p.trace.score_calls;
                r.corrections = p.trace.corrections();
                r.y_pred = Some(p.program);
                r.grammar_pred = p.grammar;
            }
            Err(e) => r.error = Some(e),
        }
        r
    }
}

/// Runs every method on the test split, using the training split as
/// exemplars.
pub fn run_eval(
    corpus: &Corpus,
    methods: &[Method],
    gw: &Gateway,
    cfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    corpus.verify()?;
    let parser = EarleyParser::new(&corpus.grammar)?;
    let exemplars = corpus
        .train()
        .iter()
        .map(|e| ExemplarTriple::from_program(&e.x, &e.y_gold, &parser))
        .collect::<Result<Vec<_>, _>>()?;
    if exemplars.is_empty() {
        return Err(EvalError::NoExemplars);
    }
    let meta = build_metagrammar(&corpus.grammar)?;
    let meta_parser = meta.parser()?;
    let session = Session {
        corpus,
        parser,
        meta,
        meta_parser,
        exemplars,
        cfg,
    };
    let mut tests = corpus.test();
    if let Some(n) = cfg.limit {
        tests.truncate(n);
    }

    let evaluate = || -> Vec<MethodRow> {
        methods
            .iter()
            .map(|&m| {
                let examples: Vec<ExampleResult> =
                    tests.par_iter().map(|ex| session.run(m, ex, gw)).collect();
                summarize(m, examples)
            })
            .collect()
    };
    let rows = match cfg.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| EvalError::Pool(e.to_string()))?
            .install(evaluate),
        None => evaluate(),
    };
    Ok(EvalReport {
        corpus: corpus.name.clone(),
        provider: gw.provider().name(),
        metric: "program".into(),
        rows,
    })
}

fn summarize(method: Method, examples: Vec<ExampleResult>) -> MethodRow {
    let n = examples.len().max(1) as f64;
    let frac =
        |f: &dyn Fn(&ExampleResult) -> bool| examples.iter().filter(|e| f(e)).count() as f64 / n;
    let mean = |f: &dyn Fn(&ExampleResult) -> u64| examples.iter().map(f).sum::<u64>() as f64 / n;
    MethodRow {
        method,
        constraint_setting: method.constraint_setting().into(),
        program_accuracy: frac(&|e| e.correct),
        validity: frac(&|e| e.valid),
        mean_complete_calls: mean(&|e| e.complete_calls),
        mean_score_calls: mean(&|e| e.score_calls),
        examples,
    }
}
