//! Minimal specialized grammars: the alternatives a program actually uses.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::earley::{DerivationTree, EarleyError, EarleyParser, Recognition};
use crate::grammar::{repetition_counts, AltRef, Alternative, Grammar, Rule, Symbol};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpecializeError {
    #[error("program is not in the language of the grammar")]
    NoParse,
    #[error("grammar generates no strings")]
    EmptyLanguage,
}

impl From<EarleyError> for SpecializeError {
    fn from(e: EarleyError) -> Self {
        match e {
            EarleyError::EmptyLanguage => SpecializeError::EmptyLanguage,
            _ => SpecializeError::NoParse,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecializeOptions {
    /// Keep an extended alternative as written instead of replacing it by
    /// the arity the program used.
    pub keep_extended: bool,
}

/// One instantiation of an extended alternative.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concretization {
    pub source: AltRef,
    /// Copies used of each item of the source alternative.
    pub counts: Vec<usize>,
    pub alternative: Alternative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecializationResult {
    pub grammar: Grammar,
    pub used_alts: BTreeSet<AltRef>,
    pub concretized: Vec<Concretization>,
    pub tree: DerivationTree,
}

pub fn specialize(y: &str, g_full: &Grammar) -> Result<SpecializationResult, SpecializeError> {
    specialize_with(y, g_full, SpecializeOptions::default())
}

pub fn specialize_with(
    y: &str,
    g_full: &Grammar,
    opts: SpecializeOptions,
) -> Result<SpecializationResult, SpecializeError> {
    let parser = EarleyParser::new(g_full)?;
    specialize_parsed(y, &parser, opts)
}

/// [`specialize_with`] against an already compiled grammar.
pub fn specialize_parsed(
    y: &str,
    parser: &EarleyParser,
    opts: SpecializeOptions,
) -> Result<SpecializationResult, SpecializeError> {
    let g_full = parser.grammar();
    let tree = parser.parse(y)?.tree;

    let mut used_alts = BTreeSet::new();
    let mut concretized: Vec<Concretization> = Vec::new();
    let mut stack = vec![&tree];
    while let Some(t) = stack.pop() {
        let DerivationTree::Node { alt, children } = t else {
            continue;
        };
        used_alts.insert(alt.clone());
        let source = g_full
            .alternative(alt)
            .expect("derivation refers to grammar alternatives");
        if source.is_extended() && !opts.keep_extended {
            let symbols: Vec<Symbol> = children
                .iter()
                .map(|c| match c {
                    DerivationTree::Leaf(text) => Symbol::Terminal(text.clone()),
                    DerivationTree::Node { alt, .. } => Symbol::Nonterminal(alt.lhs.clone()),
                })
                .collect();
            let counts = repetition_counts(&symbols, source)
                .expect("children of a node instantiate its alternative");
            let alternative = Alternative::concrete(symbols);
            if !concretized
                .iter()
                .any(|c| c.source == *alt && c.alternative == alternative)
            {
                concretized.push(Concretization {
                    source: alt.clone(),
                    counts,
                    alternative,
                });
            }
        }
        stack.extend(children.iter().rev());
    }

    // Rules and alternatives follow the full grammar's order so the result
    // is in the metagrammar's canonical form; concretizations of one
    // extended alternative appear in order of first use.
    let mut rules = Vec::new();
    for rule in &g_full.rules {
        let mut alts = Vec::new();
        for (index, alt) in rule.alternatives.iter().enumerate() {
            let r = AltRef::new(rule.lhs.clone(), index);
            if !used_alts.contains(&r) {
                continue;
            }
            if alt.is_extended() && !opts.keep_extended {
                alts.extend(
                    concretized
                        .iter()
                        .filter(|c| c.source == r)
                        .map(|c| c.alternative.clone()),
                );
            } else {
                alts.push(alt.clone());
            }
        }
        if !alts.is_empty() {
            rules.push(Rule::new(rule.lhs.clone(), alts));
        }
    }

    Ok(SpecializationResult {
        grammar: Grammar {
            rules,
            start: g_full.start.clone(),
        },
        used_alts,
        concretized,
        tree,
    })
}

/// `y` is a sentence of the specialized grammar.
pub fn check_property1(spec: &SpecializationResult, y: &str) -> bool {
    crate::earley::recognize(y, &spec.grammar) == Recognition::Complete
}

/// No single alternative can be removed from the specialized grammar
/// without losing `y`. A rule whose last alternative is removed is dropped.
pub fn check_property2(spec: &SpecializationResult, y: &str) -> bool {
    removable_alternatives(&spec.grammar, y).is_empty()
}

/// Alternatives of `g` whose removal keeps `y` a sentence.
pub fn removable_alternatives(g: &Grammar, y: &str) -> Vec<AltRef> {
    g.alt_refs()
        .filter(|r| crate::earley::recognize(y, &g.without_alternative(r)) == Recognition::Complete)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::parse_bnf;

    #[test]
    fn nothing_removable_in_single_rule() {
        let g = parse_bnf(r#"s ::= "a""#).unwrap();
        let spec = specialize("a", &g).unwrap();
        assert_eq!(spec.grammar, g);
        assert!(check_property1(&spec, "a"));
        assert!(check_property2(&spec, "a"));
    }

    #[test]
    fn concretizes_repetition() {
        let g = parse_bnf(
            r#"c ::= "(attendee_?" attendee+ ")" | "(x" ")" ;; attendee ::= "Bob" | "Carol" | "Jean""#,
        )
        .unwrap();
        let spec = specialize("(attendee_? Bob Carol)", &g).unwrap();
        assert_eq!(
            spec.grammar,
            parse_bnf(
                r#"c ::= "(attendee_?" attendee attendee ")" ;; attendee ::= "Bob" | "Carol""#
            )
            .unwrap()
        );
        assert_eq!(spec.concretized.len(), 1);
        assert_eq!(spec.concretized[0].counts, vec![1, 2, 1]);

        let kept = specialize_with(
            "(attendee_? Bob Carol)",
            &g,
            SpecializeOptions {
                keep_extended: true,
            },
        )
        .unwrap();
        assert_eq!(
            kept.grammar,
            parse_bnf(r#"c ::= "(attendee_?" attendee+ ")" ;; attendee ::= "Bob" | "Carol""#)
                .unwrap()
        );
    }

    #[test]
    fn property2_detects_alias() {
        let g = parse_bnf(r#"s ::= "a" | a_alias ;; a_alias ::= "a""#).unwrap();
        assert_eq!(
            removable_alternatives(&g, "a"),
            vec![
                AltRef::new("s", 0),
                AltRef::new("s", 1),
                AltRef::new("a_alias", 0)
            ]
        );
    }

    #[test]
    fn nullable_start_with_empty_program() {
        let g = parse_bnf(r#"s ::= "a" s | """#).unwrap();
        let spec = specialize("", &g).unwrap();
        assert_eq!(spec.grammar, parse_bnf(r#"s ::= """#).unwrap());
        assert!(check_property1(&spec, ""));
        assert!(check_property2(&spec, ""));
    }

    #[test]
    fn not_a_member() {
        let g = parse_bnf(r#"s ::= "a""#).unwrap();
        assert_eq!(specialize("b", &g), Err(SpecializeError::NoParse));
    }
}
