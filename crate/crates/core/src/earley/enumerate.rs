use std::collections::{BTreeSet, HashMap, HashSet};

use super::EarleyError;
use crate::grammar::{desugar, Grammar, Symbol};

pub const DEFAULT_NODE_CAP: usize = 200_000;

/// Every sentence of `g` with at most `max_len` characters, terminals
/// concatenated with no whitespace between them.
pub fn enumerate_language(g: &Grammar, max_len: usize) -> Result<BTreeSet<String>, EarleyError> {
    enumerate_language_with(g, max_len, DEFAULT_NODE_CAP)
}

/// Computes the length-bounded language of each nonterminal as a least
/// fixpoint, with strings bucketed by character count. Fails once more than
/// `cap` strings are held in total.
pub fn enumerate_language_with(
    g: &Grammar,
    max_len: usize,
    cap: usize,
) -> Result<BTreeSet<String>, EarleyError> {
    let dg = desugar(g).grammar;
    let empty = || -> Buckets { vec![HashSet::new(); max_len + 1] };
    let mut lang: HashMap<&str, Buckets> =
        dg.rules.iter().map(|r| (r.lhs.as_str(), empty())).collect();
    let mut total = 0usize;
    loop {
        let mut changed = false;
        for rule in &dg.rules {
            for alt in &rule.alternatives {
                let mut partial = empty();
                partial[0].insert(String::new());
                for sym in alt.symbols() {
                    let mut next = empty();
                    let single;
                    let options: &Buckets = match sym {
                        Symbol::Terminal(t) => {
                            single = {
                                let mut b = empty();
                                if let Some(slot) = b.get_mut(t.chars().count()) {
                                    slot.insert(t.clone());
                                }
                                b
                            };
                            &single
                        }
                        Symbol::Nonterminal(n) => match lang.get(n.as_str()) {
                            Some(o) => o,
                            None => {
                                partial = empty();
                                break;
                            }
                        },
                    };
                    let mut held = 0;
                    for (lp, ps) in partial.iter().enumerate() {
                        for p in ps {
                            for (lo, os) in options.iter().enumerate().take(max_len + 1 - lp) {
                                for o in os {
                                    if next[lp + lo].insert(format!("{p}{o}")) {
                                        held += 1;
                                    }
                                }
                            }
                        }
                    }
                    if held > cap {
                        return Err(EarleyError::BudgetExceeded { cap });
                    }
                    partial = next;
                    if held == 0 {
                        break;
                    }
                }
                let target = lang.get_mut(rule.lhs.as_str()).expect("rule lhs present");
                for (l, bucket) in partial.into_iter().enumerate() {
                    for s in bucket {
                        if target[l].insert(s) {
                            changed = true;
                            total += 1;
                            if total > cap {
                                return Err(EarleyError::BudgetExceeded { cap });
                            }
                        }
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    Ok(lang
        .remove(dg.start.as_str())
        .unwrap_or_default()
        .into_iter()
        .flatten()
        .collect())
}

type Buckets = Vec<HashSet<String>>;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::parse_bnf;

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn unary_language() {
        let g = parse_bnf(r#"s ::= "a" | "a" s"#).unwrap();
        assert_eq!(enumerate_language(&g, 3).unwrap(), set(&["a", "aa", "aaa"]));
    }

    #[test]
    fn optional() {
        let g = parse_bnf(r#"s ::= "ab"?"#).unwrap();
        assert_eq!(enumerate_language(&g, 2).unwrap(), set(&["", "ab"]));
    }

    #[test]
    fn budget() {
        let g = parse_bnf(r#"s ::= c* ;; c ::= "a" | "b" | "c" | "d""#).unwrap();
        assert_eq!(
            enumerate_language_with(&g, 12, 1000),
            Err(EarleyError::BudgetExceeded { cap: 1000 })
        );
    }
}
