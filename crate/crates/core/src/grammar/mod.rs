//! Extended-BNF grammars: the data model shared by every other module.
//!
//! A [`Grammar`] is an ordered list of [`Rule`]s, one per left-hand side,
//! plus a start nonterminal. Alternatives are sequences of [`Item`]s, each a
//! [`Symbol`] with an optional repetition operator (`?`, `*`, `+`).
//!
//! Grammars are plain values: immutable once built, cheap to clone, and
//! compared structurally (rule order and alternative order both matter).

mod desugar;
mod parse;
pub(crate) mod serialize;
mod subset;
mod validate;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use desugar::{desugar, Desugared};
pub use parse::{parse_bnf, parse_bnf_with, ParseError, ParseOptions};
pub use serialize::{escape_terminal, serialize};
pub use subset::{canonical_form, is_concretization, is_subset, repetition_counts};
pub use validate::{productive_nonterminals, validate, Diagnostic};

/// A terminal literal or a nonterminal reference.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "text", rename_all = "snake_case")]
pub enum Symbol {
    Terminal(String),
    Nonterminal(String),
}

impl Symbol {
    pub fn terminal(text: impl Into<String>) -> Self {
        Symbol::Terminal(text.into())
    }

    pub fn nonterminal(name: impl Into<String>) -> Self {
        Symbol::Nonterminal(name.into())
    }

    pub fn text(&self) -> &str {
        match self {
            Symbol::Terminal(t) | Symbol::Nonterminal(t) => t,
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, Symbol::Terminal(_))
    }
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Repetition {
    #[default]
    Once,
    Optional,
    Star,
    Plus,
}

impl Repetition {
    pub fn suffix(self) -> &'static str {
        match self {
            Repetition::Once => "",
            Repetition::Optional => "?",
            Repetition::Star => "*",
            Repetition::Plus => "+",
        }
    }

    /// Smallest number of copies the operator admits.
    pub fn min_count(self) -> usize {
        match self {
            Repetition::Once | Repetition::Plus => 1,
            Repetition::Optional | Repetition::Star => 0,
        }
    }

    /// Largest number of copies, `None` when unbounded.
    pub fn max_count(self) -> Option<usize> {
        match self {
            Repetition::Once | Repetition::Optional => Some(1),
            Repetition::Star | Repetition::Plus => None,
        }
    }

    pub fn admits(self, count: usize) -> bool {
        count >= self.min_count() && self.max_count().is_none_or(|max| count <= max)
    }
}

/// One symbol occurrence inside an alternative.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Item {
    pub symbol: Symbol,
    #[serde(default, skip_serializing_if = "is_once")]
    pub repetition: Repetition,
}

fn is_once(r: &Repetition) -> bool {
    *r == Repetition::Once
}

impl Item {
    pub fn new(symbol: Symbol, repetition: Repetition) -> Self {
        Item { symbol, repetition }
    }

    pub fn once(symbol: Symbol) -> Self {
        Item::new(symbol, Repetition::Once)
    }
}

/// A sequence of items. An empty sequence derives the empty string.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Alternative {
    pub items: Vec<Item>,
}

impl Alternative {
    pub fn new(items: Vec<Item>) -> Self {
        Alternative { items }
    }

    /// Builds a concrete alternative (every item `Once`) from symbols.
    pub fn concrete(symbols: impl IntoIterator<Item = Symbol>) -> Self {
        Alternative {
            items: symbols.into_iter().map(Item::once).collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    /// True if any item carries a repetition operator.
    pub fn is_extended(&self) -> bool {
        self.items.iter().any(|i| i.repetition != Repetition::Once)
    }

    pub fn symbols(&self) -> impl Iterator<Item = &Symbol> {
        self.items.iter().map(|i| &i.symbol)
    }
}

impl FromIterator<Item> for Alternative {
    fn from_iter<T: IntoIterator<Item = Item>>(iter: T) -> Self {
        Alternative {
            items: iter.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rule {
    pub lhs: String,
    pub alternatives: Vec<Alternative>,
}

impl Rule {
    pub fn new(lhs: impl Into<String>, alternatives: Vec<Alternative>) -> Self {
        Rule {
            lhs: lhs.into(),
            alternatives,
        }
    }

    /// Appends an alternative unless an identical one is already present.
    /// Returns whether it was added.
    pub fn push_alternative(&mut self, alt: Alternative) -> bool {
        if self.alternatives.contains(&alt) {
            false
        } else {
            self.alternatives.push(alt);
            true
        }
    }
}

/// Stable identity of one alternative: `(lhs, index)` into the owning
/// grammar's rule for `lhs`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AltRef {
    pub lhs: String,
    pub index: usize,
}

impl AltRef {
    pub fn new(lhs: impl Into<String>, index: usize) -> Self {
        AltRef {
            lhs: lhs.into(),
            index,
        }
    }
}

impl fmt::Display for AltRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.lhs, self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grammar {
    pub rules: Vec<Rule>,
    pub start: String,
}

impl Grammar {
    /// Builds a grammar from rules, merging rules that share a left-hand
    /// side. The start symbol is the first rule's lhs.
    pub fn from_rules(rules: impl IntoIterator<Item = Rule>) -> Self {
        let mut merged: Vec<Rule> = Vec::new();
        for rule in rules {
            match merged.iter_mut().find(|r| r.lhs == rule.lhs) {
                Some(existing) => {
                    for alt in rule.alternatives {
                        existing.push_alternative(alt);
                    }
                }
                None => {
                    let mut fresh = Rule::new(rule.lhs, Vec::new());
                    for alt in rule.alternatives {
                        fresh.push_alternative(alt);
                    }
                    merged.push(fresh);
                }
            }
        }
        let start = merged.first().map(|r| r.lhs.clone()).unwrap_or_default();
        Grammar {
            rules: merged,
            start,
        }
    }

    /// Same rules, different start symbol.
    pub fn with_start(mut self, start: impl Into<String>) -> Self {
        self.start = start.into();
        self
    }

    pub fn rule(&self, lhs: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.lhs == lhs)
    }

    pub fn rule_index(&self, lhs: &str) -> Option<usize> {
        self.rules.iter().position(|r| r.lhs == lhs)
    }

    pub fn alternative(&self, alt: &AltRef) -> Option<&Alternative> {
        self.rule(&alt.lhs)?.alternatives.get(alt.index)
    }

    pub fn alt_refs(&self) -> impl Iterator<Item = AltRef> + '_ {
        self.rules
            .iter()
            .flat_map(|r| (0..r.alternatives.len()).map(move |i| AltRef::new(r.lhs.clone(), i)))
    }

    pub fn alternative_count(&self) -> usize {
        self.rules.iter().map(|r| r.alternatives.len()).sum()
    }

    /// Distinct terminal texts in first-occurrence order.
    pub fn terminals(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for rule in &self.rules {
            for alt in &rule.alternatives {
                for sym in alt.symbols() {
                    if let Symbol::Terminal(t) = sym {
                        if !out.contains(t) {
                            out.push(t.clone());
                        }
                    }
                }
            }
        }
        out
    }

    pub fn is_extended(&self) -> bool {
        self.rules
            .iter()
            .any(|r| r.alternatives.iter().any(Alternative::is_extended))
    }

    /// Copy of the grammar without one alternative; the rule is dropped
    /// when its last alternative goes.
    pub fn without_alternative(&self, alt: &AltRef) -> Grammar {
        let mut rules = Vec::with_capacity(self.rules.len());
        for rule in &self.rules {
            if rule.lhs == alt.lhs {
                let kept: Vec<Alternative> = rule
                    .alternatives
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != alt.index)
                    .map(|(_, a)| a.clone())
                    .collect();
                if !kept.is_empty() {
                    rules.push(Rule::new(rule.lhs.clone(), kept));
                }
            } else {
                rules.push(rule.clone());
            }
        }
        Grammar {
            rules,
            start: self.start.clone(),
        }
    }
}

impl fmt::Display for Grammar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize(self))
    }
}

impl std::str::FromStr for Grammar {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_bnf(s)
    }
}

/// Nonterminal names that serialize without angle brackets.
pub(crate) fn is_plain_name(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-'))
}

/// Nonterminal names accepted anywhere (inside `<...>` when not plain).
pub(crate) fn is_valid_name(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '?' | '!' | '.' | '-'))
}
