//! Scannerless Earley recognition over characters.
//!
//! The grammar is desugared (repetition operators become right-recursive
//! auxiliary rules) and pruned of unproductive alternatives before use, so
//! every live chart item can still be extended to a complete parse. That
//! makes "the chart is non-empty" the same test as "the input is a viable
//! prefix".
//!
//! Terminals are matched character by character, so overlapping terminals
//! such as `(` and `(start_?` need no lexer. Under the default
//! [`WhitespacePolicy::Flexible`] the input has whitespace runs collapsed to
//! one space, terminals are compared after the same normalization, and a
//! single space may appear in front of any terminal.

mod chart;
mod enumerate;
mod prefix;
mod tree;

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::{desugar, AltRef, Desugared, Grammar, Symbol};

pub use chart::Chart;
pub use enumerate::{enumerate_language, enumerate_language_with, DEFAULT_NODE_CAP};
pub use prefix::PrefixAnalysis;
pub use tree::{linearize_derivation, DerivationTree, ParseOutcome};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EarleyError {
    #[error("grammar generates no strings")]
    EmptyLanguage,
    #[error("input is not in the language")]
    NoParse,
    #[error("`{0}` is not a viable prefix")]
    NotViable(String),
    #[error("enumeration exceeded {cap} strings")]
    BudgetExceeded { cap: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recognition {
    Complete,
    ViablePrefix,
    Invalid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WhitespacePolicy {
    /// Collapse whitespace runs, trim, and allow one space before any
    /// terminal.
    #[default]
    Flexible,
    /// Characters must match terminal text exactly.
    Exact,
}

impl WhitespacePolicy {
    /// Normalizes a complete input.
    pub fn normalize(self, s: &str) -> String {
        match self {
            WhitespacePolicy::Exact => s.to_string(),
            WhitespacePolicy::Flexible => collapse(s).trim_end().to_string(),
        }
    }

    /// Normalizes an input that may continue; a trailing space is kept.
    pub fn normalize_prefix(self, s: &str) -> String {
        match self {
            WhitespacePolicy::Exact => s.to_string(),
            WhitespacePolicy::Flexible => collapse(s),
        }
    }
}

/// Collapses whitespace runs to one space and drops leading whitespace.
fn collapse(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut pending_space = false;
    for c in s.chars() {
        if c.is_whitespace() {
            pending_space = !out.is_empty();
        } else {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.push(c);
        }
    }
    if pending_space {
        out.push(' ');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub(crate) enum CSym {
    T(u32),
    N(u32),
}

#[derive(Debug, Clone)]
pub(crate) struct CAlt {
    pub lhs: u32,
    pub syms: Vec<CSym>,
    /// Index of this alternative in its rule of the desugared grammar.
    pub index: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct CTerminal {
    pub raw: String,
    pub chars: Vec<char>,
}

/// A grammar prepared for Earley parsing. Build once, reuse for many inputs.
#[derive(Debug, Clone)]
pub struct EarleyParser {
    source: Grammar,
    desugared: Desugared,
    policy: WhitespacePolicy,
    pub(crate) nts: Vec<String>,
    pub(crate) alts: Vec<CAlt>,
    pub(crate) by_lhs: Vec<Vec<u32>>,
    pub(crate) nullable: Vec<bool>,
    pub(crate) terminals: Vec<CTerminal>,
    pub(crate) start: u32,
}

impl EarleyParser {
    pub fn new(g: &Grammar) -> Result<Self, EarleyError> {
        Self::with_policy(g, WhitespacePolicy::default())
    }

    pub fn with_policy(g: &Grammar, policy: WhitespacePolicy) -> Result<Self, EarleyError> {
        let desugared = desugar(g);
        let dg = &desugared.grammar;

        let productive = crate::grammar::productive_nonterminals(dg);
        if !productive.contains(&dg.start) {
            return Err(EarleyError::EmptyLanguage);
        }

        let mut nts: Vec<String> = Vec::new();
        let mut nt_index: HashMap<String, u32> = HashMap::new();
        for rule in &dg.rules {
            if productive.contains(&rule.lhs) {
                nt_index.insert(rule.lhs.clone(), nts.len() as u32);
                nts.push(rule.lhs.clone());
            }
        }

        let mut terminals: Vec<CTerminal> = Vec::new();
        let mut term_index: HashMap<String, u32> = HashMap::new();
        let mut alts = Vec::new();
        let mut by_lhs = vec![Vec::new(); nts.len()];
        for rule in &dg.rules {
            let Some(&lhs) = nt_index.get(&rule.lhs) else {
                continue;
            };
            'alts: for (index, alt) in rule.alternatives.iter().enumerate() {
                let mut syms = Vec::with_capacity(alt.len());
                for sym in alt.symbols() {
                    match sym {
                        Symbol::Nonterminal(n) => match nt_index.get(n) {
                            Some(&i) => syms.push(CSym::N(i)),
                            None => continue 'alts,
                        },
                        Symbol::Terminal(t) => {
                            let id = *term_index.entry(t.clone()).or_insert_with(|| {
                                terminals.push(CTerminal {
                                    raw: t.clone(),
                                    chars: policy.normalize(t).chars().collect(),
                                });
                                (terminals.len() - 1) as u32
                            });
                            syms.push(CSym::T(id));
                        }
                    }
                }
                by_lhs[lhs as usize].push(alts.len() as u32);
                alts.push(CAlt { lhs, syms, index });
            }
        }

        let mut nullable = vec![false; nts.len()];
        loop {
            let mut changed = false;
            for alt in &alts {
                if nullable[alt.lhs as usize] {
                    continue;
                }
                let all = alt.syms.iter().all(|s| match *s {
                    CSym::T(t) => terminals[t as usize].chars.is_empty(),
                    CSym::N(n) => nullable[n as usize],
                });
                if all {
                    nullable[alt.lhs as usize] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }

        let start = nt_index[&dg.start];
        Ok(EarleyParser {
            source: g.clone(),
            desugared,
            policy,
            nts,
            alts,
            by_lhs,
            nullable,
            terminals,
            start,
        })
    }

    pub fn grammar(&self) -> &Grammar {
        &self.source
    }

    pub fn policy(&self) -> WhitespacePolicy {
        self.policy
    }

    pub(crate) fn desugared(&self) -> &Desugared {
        &self.desugared
    }

    /// Fresh chart positioned before the first character.
    pub fn chart(&self) -> Chart<'_> {
        Chart::new(self)
    }

    /// Chart after feeding `s` (already normalized), or the number of
    /// characters accepted before the input died.
    pub fn chart_for(&self, s: &str) -> Result<Chart<'_>, usize> {
        let mut chart = self.chart();
        for (i, c) in s.chars().enumerate() {
            if !chart.push(c) {
                return Err(i);
            }
        }
        Ok(chart)
    }

    pub fn recognize(&self, s: &str) -> Recognition {
        match self.chart_for(&self.policy.normalize(s)) {
            Err(_) => Recognition::Invalid,
            Ok(chart) if chart.is_accepting() => Recognition::Complete,
            Ok(_) => Recognition::ViablePrefix,
        }
    }

    pub fn is_member(&self, s: &str) -> bool {
        self.recognize(s) == Recognition::Complete
    }

    pub(crate) fn terminal_text(&self, t: u32) -> &str {
        &self.terminals[t as usize].raw
    }

    pub(crate) fn alt_ref(&self, alt: u32) -> AltRef {
        let a = &self.alts[alt as usize];
        AltRef::new(self.nts[a.lhs as usize].clone(), a.index)
    }
}

pub fn recognize(s: &str, g: &Grammar) -> Recognition {
    match EarleyParser::new(g) {
        Ok(p) => p.recognize(s),
        Err(_) => Recognition::Invalid,
    }
}

pub fn parse(s: &str, g: &Grammar) -> Result<ParseOutcome, EarleyError> {
    EarleyParser::new(g)?.parse(s)
}

pub fn longest_valid_prefix(s: &str, g: &Grammar) -> Result<PrefixAnalysis, EarleyError> {
    Ok(EarleyParser::new(g)?.longest_valid_prefix(s))
}

pub fn valid_continuations(prefix: &str, g: &Grammar) -> Result<BTreeSet<String>, EarleyError> {
    EarleyParser::new(g)?.valid_continuations(prefix)
}

pub fn shortest_completion(prefix: &str, g: &Grammar) -> Result<String, EarleyError> {
    EarleyParser::new(g)?.shortest_completion(prefix)
}

/// Characters that glue into one word; a prefix is never cut between two of
/// them, so `Jean's` is not split into `Jean` + `'s`.
pub fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '\''
}
