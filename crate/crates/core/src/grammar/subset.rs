//! The sub-grammar relation used to check predicted grammars.

use super::{Alternative, Grammar, Item, Repetition, Rule, Symbol};

/// True if `candidate` instantiates `pattern`: every `Once` item matches
/// exactly, and each repeated item of `pattern` is matched either by the
/// identical repeated item or by a number of plain copies its operator admits.
pub fn is_concretization(candidate: &Alternative, pattern: &Alternative) -> bool {
    let p = &pattern.items;
    let c = &candidate.items;
    // reach[j]: the first i pattern items can cover c[..j]
    let mut reach = vec![false; c.len() + 1];
    reach[0] = true;
    for item in p {
        let mut next = vec![false; c.len() + 1];
        for j in 0..=c.len() {
            if !reach[j] {
                continue;
            }
            if c.get(j) == Some(item) {
                next[j + 1] = true;
            }
            if item.repetition == Repetition::Once {
                continue;
            }
            let copy = Item::once(item.symbol.clone());
            let mut k = 0;
            loop {
                if item.repetition.admits(k) {
                    next[j + k] = true;
                }
                if item.repetition.max_count().is_some_and(|m| k >= m) {
                    break;
                }
                if c.get(j + k) != Some(&copy) {
                    break;
                }
                k += 1;
            }
        }
        reach = next;
    }
    reach[c.len()]
}

/// Copies of each `pattern` item used by the plain symbol sequence
/// `concrete`, or `None` if `concrete` does not instantiate `pattern`. When
/// several splits exist, earlier items take as many copies as possible.
pub fn repetition_counts(concrete: &[Symbol], pattern: &Alternative) -> Option<Vec<usize>> {
    fn go(c: &[Symbol], p: &[Item], out: &mut Vec<usize>) -> bool {
        let Some((item, rest)) = p.split_first() else {
            return c.is_empty();
        };
        let run = c.iter().take_while(|s| **s == item.symbol).count();
        let max = item.repetition.max_count().map_or(run, |m| m.min(run));
        for k in (item.repetition.min_count()..=max).rev() {
            out.push(k);
            if go(&c[k..], rest, out) {
                return true;
            }
            out.pop();
        }
        false
    }
    let mut out = Vec::with_capacity(pattern.len());
    go(concrete, &pattern.items, &mut out).then_some(out)
}

/// True if every alternative of `g_sub` is an alternative of the same lhs
/// in `g_full`, or a concretization of one.
pub fn is_subset(g_sub: &Grammar, g_full: &Grammar) -> bool {
    g_sub.rules.iter().all(|rule| match g_full.rule(&rule.lhs) {
        None => false,
        Some(full) => rule.alternatives.iter().all(|alt| {
            full.alternatives
                .iter()
                .any(|pat| is_concretization(alt, pat))
        }),
    })
}

/// Rules sorted by lhs, alternatives sorted within each rule. Two grammars
/// with the same alternative sets have equal canonical forms.
pub fn canonical_form(g: &Grammar) -> Grammar {
    let mut rules: Vec<Rule> = g
        .rules
        .iter()
        .map(|r| {
            let mut alts = r.alternatives.clone();
            alts.sort();
            alts.dedup();
            Rule::new(r.lhs.clone(), alts)
        })
        .collect();
    rules.sort_by(|a, b| a.lhs.cmp(&b.lhs));
    Grammar {
        rules,
        start: g.start.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::parse_bnf;

    fn alt(text: &str) -> Alternative {
        parse_bnf(&format!("x ::= {text}")).unwrap().rules[0].alternatives[0].clone()
    }

    #[test]
    fn concretization_counts() {
        let pat = alt(r#""(attendee_?" attendee+ ")""#);
        assert!(is_concretization(
            &alt(r#""(attendee_?" attendee attendee ")""#),
            &pat
        ));
        assert!(is_concretization(
            &alt(r#""(attendee_?" attendee ")""#),
            &pat
        ));
        assert!(is_concretization(&pat, &pat));
        assert!(!is_concretization(&alt(r#""(attendee_?" ")""#), &pat));
        assert!(!is_concretization(
            &alt(r#""(attendee_?" attendee* ")""#),
            &pat
        ));
    }

    #[test]
    fn optional_admits_zero_or_one() {
        let pat = alt(r#""(" date time? ")""#);
        assert!(is_concretization(&alt(r#""(" date ")""#), &pat));
        assert!(is_concretization(&alt(r#""(" date time ")""#), &pat));
        assert!(!is_concretization(&alt(r#""(" date time time ")""#), &pat));
    }

    #[test]
    fn adjacent_repeats_of_same_symbol() {
        let pat = alt(r#"a* a+"#);
        assert!(is_concretization(&alt("a"), &pat));
        assert!(is_concretization(&alt("a a a"), &pat));
        assert!(!is_concretization(&Alternative::default(), &pat));
    }

    #[test]
    fn counts_for_concrete_sequences() {
        let pat = alt(r#""(" x+ y? ")""#);
        let sym = |s: &str| {
            if s.starts_with('"') {
                Symbol::terminal(s.trim_matches('"'))
            } else {
                Symbol::nonterminal(s)
            }
        };
        let seq = |s: &str| s.split(' ').map(sym).collect::<Vec<_>>();
        assert_eq!(
            repetition_counts(&seq(r#""(" x x ")""#), &pat),
            Some(vec![1, 2, 0, 1])
        );
        assert_eq!(
            repetition_counts(&seq(r#""(" x y ")""#), &pat),
            Some(vec![1, 1, 1, 1])
        );
        assert_eq!(repetition_counts(&seq(r#""(" y ")""#), &pat), None);
    }

    #[test]
    fn subset_rejects_foreign_alternative() {
        let full = parse_bnf(r#"s ::= d ;; d ::= "Mon" | "Wed""#).unwrap();
        assert!(is_subset(
            &parse_bnf(r#"s ::= d ;; d ::= "Wed""#).unwrap(),
            &full
        ));
        assert!(!is_subset(
            &parse_bnf(r#"s ::= d ;; d ::= "Fri""#).unwrap(),
            &full
        ));
        assert!(!is_subset(
            &parse_bnf(r#"s ::= d ;; e ::= "Wed""#).unwrap(),
            &full
        ));
    }
}
