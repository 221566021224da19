//! Rewrites repetition operators into plain recursive rules.

use std::collections::{HashMap, HashSet};

use super::{AltRef, Alternative, Grammar, Item, Repetition, Rule, Symbol};

/// A repetition-free grammar plus enough bookkeeping to map derivations in
/// it back onto the source grammar.
///
/// Non-auxiliary rules keep their lhs, position and alternative indices, so
/// an [`AltRef`] into a non-auxiliary rule means the same alternative in both
/// grammars.
#[derive(Debug, Clone)]
pub struct Desugared {
    pub grammar: Grammar,
    /// Auxiliary nonterminal → the source item it stands for.
    pub aux: HashMap<String, AuxOrigin>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuxOrigin {
    pub owner: AltRef,
    pub item_index: usize,
    pub repetition: Repetition,
}

impl Desugared {
    pub fn is_aux(&self, name: &str) -> bool {
        self.aux.contains_key(name)
    }
}

/// `x?` becomes `aux ::= x | ""`, `x*` becomes `aux ::= x aux | ""` and
/// `x+` becomes `aux ::= x aux | x`. Auxiliary rules are named
/// `<lhs>__rep<N>` and placed directly after their owner.
pub fn desugar(g: &Grammar) -> Desugared {
    let mut taken: HashSet<String> = g.rules.iter().map(|r| r.lhs.clone()).collect();
    for rule in &g.rules {
        for alt in &rule.alternatives {
            for sym in alt.symbols() {
                if let Symbol::Nonterminal(n) = sym {
                    taken.insert(n.clone());
                }
            }
        }
    }

    let mut rules = Vec::with_capacity(g.rules.len());
    let mut aux = HashMap::new();
    for rule in &g.rules {
        let mut counter = 0usize;
        let mut extra = Vec::new();
        let mut alts = Vec::with_capacity(rule.alternatives.len());
        for (ai, alt) in rule.alternatives.iter().enumerate() {
            let mut items = Vec::with_capacity(alt.len());
            for (ii, item) in alt.items.iter().enumerate() {
                if item.repetition == Repetition::Once {
                    items.push(item.clone());
                    continue;
                }
                let name = loop {
                    let candidate = format!("{}__rep{}", rule.lhs, counter);
                    counter += 1;
                    if taken.insert(candidate.clone()) {
                        break candidate;
                    }
                };
                let x = Item::once(item.symbol.clone());
                let me = Item::once(Symbol::Nonterminal(name.clone()));
                let aux_alts = match item.repetition {
                    Repetition::Optional => vec![Alternative::new(vec![x]), Alternative::default()],
                    Repetition::Star => vec![Alternative::new(vec![x, me]), Alternative::default()],
                    Repetition::Plus => {
                        vec![
                            Alternative::new(vec![x.clone(), me]),
                            Alternative::new(vec![x]),
                        ]
                    }
                    Repetition::Once => unreachable!(),
                };
                extra.push(Rule::new(name.clone(), aux_alts));
                aux.insert(
                    name.clone(),
                    AuxOrigin {
                        owner: AltRef::new(rule.lhs.clone(), ai),
                        item_index: ii,
                        repetition: item.repetition,
                    },
                );
                items.push(Item::once(Symbol::Nonterminal(name)));
            }
            alts.push(Alternative::new(items));
        }
        rules.push(Rule::new(rule.lhs.clone(), alts));
        rules.extend(extra);
    }
    Desugared {
        grammar: Grammar {
            rules,
            start: g.start.clone(),
        },
        aux,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{parse_bnf, serialize};

    #[test]
    fn plus_becomes_right_recursion() {
        let g = parse_bnf(r#"s ::= "a"+"#).unwrap();
        let d = desugar(&g);
        assert_eq!(
            d.grammar,
            parse_bnf(r#"s ::= s__rep0 ;; s__rep0 ::= "a" s__rep0 | "a""#).unwrap()
        );
        assert!(d.is_aux("s__rep0"));
    }

    #[test]
    fn identity_without_operators() {
        let g = parse_bnf(r#"s ::= "a" t | "" ;; t ::= "b""#).unwrap();
        let d = desugar(&g);
        assert_eq!(d.grammar, g);
        assert!(d.aux.is_empty());
    }

    #[test]
    fn aux_names_avoid_collisions() {
        let g = parse_bnf(r#"s ::= x? s__rep0 ;; s__rep0 ::= "z" ;; x ::= "x""#).unwrap();
        let d = desugar(&g);
        assert_eq!(
            serialize(&d.grammar),
            "s ::= s__rep1 s__rep0\ns__rep1 ::= x | \"\"\ns__rep0 ::= \"z\"\nx ::= \"x\"\n"
        );
    }

    #[test]
    fn star_and_optional() {
        let g = parse_bnf(r#"s ::= "a"* "b"?"#).unwrap();
        let d = desugar(&g);
        assert_eq!(
            serialize(&d.grammar),
            "s ::= s__rep0 s__rep1\ns__rep0 ::= \"a\" s__rep0 | \"\"\ns__rep1 ::= \"b\" | \"\"\n"
        );
    }
}
