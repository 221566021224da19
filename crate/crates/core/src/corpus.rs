//! Bundled evaluation corpora and loaders for corpus directories.
//!
//! A corpus directory holds `grammar.bnf` and `examples.jsonl`, one
//! `{"x": ..., "y": ..., "split": ...}` object per line.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::earley::{EarleyParser, Recognition};
use crate::grammar::{parse_bnf, validate, Diagnostic, Grammar, ParseError};

pub const BUILTIN_NAMES: [&str; 3] = ["calendar", "geoquery", "blocks"];

const CALENDAR_BNF: &str = include_str!("../corpora/calendar/grammar.bnf");
const CALENDAR_JSONL: &str = include_str!("../corpora/calendar/examples.jsonl");
const GEOQUERY_BNF: &str = include_str!("../corpora/geoquery/grammar.bnf");
const GEOQUERY_JSONL: &str = include_str!("../corpora/geoquery/examples.jsonl");
const BLOCKS_BNF: &str = include_str!("../corpora/blocks/grammar.bnf");
const BLOCKS_JSONL: &str = include_str!("../corpora/blocks/examples.jsonl");

/// Grammars and transcripts reproduced from worked examples.
pub mod figures {
    pub const CALENDAR_EXEMPLAR_QUERY: &str = "find the meeting on Wednesday with Bob and Carol";
    pub const CALENDAR_EXEMPLAR_PROGRAM: &str =
        "QueryEvent((& (start_? Wednesday) (attendee_? Bob Carol)))";
    pub const CALENDAR_EXEMPLAR_SPEC: &str =
        include_str!("../corpora/figures/calendar_exemplar_spec.bnf");
    pub const CALENDAR_TEST_QUERY: &str = "Add meeting with Jean's manager on Wednesday at 3PM";
    pub const CALENDAR_OUTPUT: &str = include_str!("../corpora/figures/calendar_output.txt");
    pub const CALENDAR_OUTPUT_PROGRAM: &str =
        "CreateEvent((& (start_? Wednesday NumberPM(3)) (attendee_? FindManager(Jean))))";

    pub const GEOQUERY_HAWAII_QUERY: &str = "what states border hawaii ?";
    pub const GEOQUERY_HAWAII_PROGRAM: &str = "answer(state(next_to_2(stateid('hawaii'))))";
    pub const GEOQUERY_HAWAII_SPEC: &str =
        include_str!("../corpora/figures/geoquery_hawaii_spec.bnf");
    pub const GEOQUERY_ARIZONA_OUTPUT: &str =
        include_str!("../corpora/figures/geoquery_arizona_output.txt");
    pub const GEOQUERY_ARIZONA_PROGRAM: &str =
        "answer(count(major(city(loc_2(stateid('arizona'))))))";

    pub const BLOCKS_EXEMPLAR_PROGRAM: &str =
        "(listValue (aggregate avg (getProperty (getProperty (singleton en.block) !type) width)))";
    pub const BLOCKS_EXEMPLAR_SPEC: &str =
        include_str!("../corpora/figures/blocks_exemplar_spec.bnf");
    pub const BLOCKS_OUTPUT_PROGRAM: &str = "(listValue (filter (filter (getProperty (singleton en.block) !type) is_special) (reverse left) = en.block.block1))";
    pub const BLOCKS_OUTPUT_SPEC: &str = include_str!("../corpora/figures/blocks_output_spec.bnf");
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("unknown corpus `{0}`")]
    Unknown(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("grammar: {0}")]
    Grammar(#[from] ParseError),
    #[error("grammar is invalid: {0:?}")]
    Invalid(Vec<Diagnostic>),
    #[error("examples line {line}: {message}")]
    Examples { line: usize, message: String },
    #[error("gold program of example {index} is not in the language: {y}")]
    GoldNotInLanguage { index: usize, y: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalExample {
    pub x: String,
    #[serde(rename = "y")]
    pub y_gold: String,
    #[serde(rename = "split", default = "default_split")]
    pub split_tag: String,
}

fn default_split() -> String {
    "test".to_string()
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub name: String,
    pub grammar: Grammar,
    pub examples: Vec<EvalExample>,
}

impl Corpus {
    pub fn from_texts(name: &str, bnf: &str, jsonl: &str) -> Result<Self, CorpusError> {
        let grammar = parse_bnf(bnf)?;
        let examples = parse_examples(jsonl)?;
        Ok(Corpus {
            name: name.to_string(),
            grammar,
            examples,
        })
    }

    pub fn split(&self, tag: &str) -> impl Iterator<Item = &EvalExample> {
        let tag = tag.to_string();
        self.examples.iter().filter(move |e| e.split_tag == tag)
    }

    pub fn train(&self) -> Vec<&EvalExample> {
        self.split("train").collect()
    }

    pub fn test(&self) -> Vec<&EvalExample> {
        self.split("test").collect()
    }

    /// The grammar validates and every gold program is a sentence of it.
    pub fn verify(&self) -> Result<(), CorpusError> {
        let diags = validate(&self.grammar);
        if !diags.is_empty() {
            return Err(CorpusError::Invalid(diags));
        }
        let parser = EarleyParser::new(&self.grammar).map_err(|_| CorpusError::Invalid(vec![]))?;
        for (index, e) in self.examples.iter().enumerate() {
            if parser.recognize(&e.y_gold) != Recognition::Complete {
                return Err(CorpusError::GoldNotInLanguage {
                    index,
                    y: e.y_gold.clone(),
                });
            }
        }
        Ok(())
    }
}

pub fn parse_examples(jsonl: &str) -> Result<Vec<EvalExample>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in jsonl.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let e: EvalExample = serde_json::from_str(line).map_err(|e| CorpusError::Examples {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(e);
    }
    Ok(out)
}

pub fn builtin(name: &str) -> Result<Corpus, CorpusError> {
    let (bnf, jsonl) = match name {
        "calendar" => (CALENDAR_BNF, CALENDAR_JSONL),
        "geoquery" => (GEOQUERY_BNF, GEOQUERY_JSONL),
        "blocks" => (BLOCKS_BNF, BLOCKS_JSONL),
        _ => return Err(CorpusError::Unknown(name.to_string())),
    };
    Corpus::from_texts(name, bnf, jsonl)
}

pub fn builtins() -> Vec<Corpus> {
    BUILTIN_NAMES
        .iter()
        .map(|n| builtin(n).expect("bundled corpora parse"))
        .collect()
}

/// Loads a corpus directory, or a bundled corpus when `dir` names one and
/// no such directory exists.
pub fn load(dir: &Path) -> Result<Corpus, CorpusError> {
    if !dir.exists() {
        if let Some(name) = dir.to_str().filter(|n| BUILTIN_NAMES.contains(n)) {
            return builtin(name);
        }
    }
    let read = |file: &str| {
        let path = dir.join(file);
        fs::read_to_string(&path).map_err(|source| CorpusError::Io { path, source })
    };
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Corpus::from_texts(&name, &read("grammar.bnf")?, &read("examples.jsonl")?)
}
