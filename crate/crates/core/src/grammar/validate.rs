//! Static checks that do not stop a grammar from being used.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Grammar, Symbol};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diagnostic {
    MissingStart { name: String },
    EmptyRule { name: String },
    UndefinedNonterminal { name: String, referenced_by: String },
    Unreachable { name: String },
    Unproductive { name: String },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::MissingStart { name } => write!(f, "start symbol `{name}` has no rule"),
            Diagnostic::EmptyRule { name } => write!(f, "rule `{name}` has no alternatives"),
            Diagnostic::UndefinedNonterminal {
                name,
                referenced_by,
            } => write!(f, "`{name}` is used in `{referenced_by}` but never defined"),
            Diagnostic::Unreachable { name } => {
                write!(f, "`{name}` is not reachable from the start symbol")
            }
            Diagnostic::Unproductive { name } => write!(f, "`{name}` derives no terminal string"),
        }
    }
}

/// Reports problems in rule order. An empty result means the grammar is
/// clean. Undefined nonterminals are reported once each and are treated as
/// productive for the productivity check, so one missing rule does not
/// cascade into a diagnostic for every rule above it.
pub fn validate(g: &Grammar) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let defined: HashSet<&str> = g.rules.iter().map(|r| r.lhs.as_str()).collect();

    if !defined.contains(g.start.as_str()) {
        out.push(Diagnostic::MissingStart {
            name: g.start.clone(),
        });
    }

    let mut undefined_seen = HashSet::new();
    for rule in &g.rules {
        if rule.alternatives.is_empty() {
            out.push(Diagnostic::EmptyRule {
                name: rule.lhs.clone(),
            });
        }
        for alt in &rule.alternatives {
            for sym in alt.symbols() {
                if let Symbol::Nonterminal(n) = sym {
                    if !defined.contains(n.as_str()) && undefined_seen.insert(n.clone()) {
                        out.push(Diagnostic::UndefinedNonterminal {
                            name: n.clone(),
                            referenced_by: rule.lhs.clone(),
                        });
                    }
                }
            }
        }
    }

    let reachable = reachable_from(g, &g.start);
    for rule in &g.rules {
        if !reachable.contains(rule.lhs.as_str()) {
            out.push(Diagnostic::Unreachable {
                name: rule.lhs.clone(),
            });
        }
    }

    let productive = productive_set(g, true);
    for rule in &g.rules {
        if !productive.contains(rule.lhs.as_str()) {
            out.push(Diagnostic::Unproductive {
                name: rule.lhs.clone(),
            });
        }
    }
    out
}

/// Nonterminals that derive at least one terminal string; undefined
/// nonterminals count as unproductive.
pub fn productive_nonterminals(g: &Grammar) -> HashSet<String> {
    productive_set(g, false)
}

pub(crate) fn reachable_from<'g>(g: &'g Grammar, start: &str) -> BTreeSet<&'g str> {
    let mut seen = BTreeSet::new();
    let mut stack = Vec::new();
    if let Some(rule) = g.rule(start) {
        seen.insert(rule.lhs.as_str());
        stack.push(rule);
    }
    while let Some(rule) = stack.pop() {
        for alt in &rule.alternatives {
            for sym in alt.symbols() {
                if let Symbol::Nonterminal(n) = sym {
                    if let Some(r) = g.rule(n) {
                        if seen.insert(r.lhs.as_str()) {
                            stack.push(r);
                        }
                    }
                }
            }
        }
    }
    seen
}

/// Nonterminals deriving at least one terminal string. Items that admit zero
/// copies never block productivity.
pub(crate) fn productive_set(g: &Grammar, undefined_productive: bool) -> HashSet<String> {
    let defined: HashSet<&str> = g.rules.iter().map(|r| r.lhs.as_str()).collect();
    let mut productive: HashSet<String> = HashSet::new();
    loop {
        let mut changed = false;
        for rule in &g.rules {
            if productive.contains(&rule.lhs) {
                continue;
            }
            let ok = rule.alternatives.iter().any(|alt| {
                alt.items.iter().all(|item| {
                    item.repetition.min_count() == 0
                        || match &item.symbol {
                            Symbol::Terminal(_) => true,
                            Symbol::Nonterminal(n) => {
                                productive.contains(n)
                                    || (undefined_productive && !defined.contains(n.as_str()))
                            }
                        }
                })
            });
            if ok {
                productive.insert(rule.lhs.clone());
                changed = true;
            }
        }
        if !changed {
            return productive;
        }
    }
}
