//! Canonical text form: one rule per line, rules in definition order,
//! alternatives joined by ` | `.

use super::{is_plain_name, Alternative, Grammar, Item, Symbol};

pub fn serialize(g: &Grammar) -> String {
    let mut out = String::new();
    for rule in &g.rules {
        out.push_str(&format_name(&rule.lhs));
        out.push_str(" ::=");
        for (i, alt) in rule.alternatives.iter().enumerate() {
            if i > 0 {
                out.push_str(" |");
            }
            out.push(' ');
            push_alternative(&mut out, alt);
        }
        out.push('\n');
    }
    out
}

/// Quotes a terminal, escaping `"`, `\`, newlines and tabs.
pub fn escape_terminal(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + 2);
    out.push('"');
    for c in text.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

pub(crate) fn format_name(name: &str) -> String {
    if is_plain_name(name) {
        name.to_string()
    } else {
        format!("<{name}>")
    }
}

pub(crate) fn format_item(item: &Item) -> String {
    let mut s = match &item.symbol {
        Symbol::Terminal(t) => escape_terminal(t),
        Symbol::Nonterminal(n) => format_name(n),
    };
    s.push_str(item.repetition.suffix());
    s
}

fn push_alternative(out: &mut String, alt: &Alternative) {
    if alt.is_empty() {
        out.push_str("\"\"");
        return;
    }
    for (i, item) in alt.items.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&format_item(item));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::parse_bnf;

    #[test]
    fn single_rule() {
        let g = parse_bnf(r#"s ::= "a""#).unwrap();
        assert_eq!(serialize(&g), "s ::= \"a\"\n");
    }

    #[test]
    fn order_sensitive() {
        let a = parse_bnf(r#"s ::= "a" | "b""#).unwrap();
        let b = parse_bnf(r#"s ::= "b" | "a""#).unwrap();
        assert_ne!(serialize(&a), serialize(&b));
    }

    #[test]
    fn escapes_round_trip() {
        let g =
            parse_bnf(r#"s ::= "q\"uote" | "back\\slash" t? | "" ;; <t?> ::= "x" ;; t ::= <t?>*"#)
                .unwrap();
        let text = serialize(&g);
        assert_eq!(
            text,
            "s ::= \"q\\\"uote\" | \"back\\\\slash\" t? | \"\"\n<t?> ::= \"x\"\nt ::= <t?>*\n"
        );
        assert_eq!(parse_bnf(&text).unwrap(), g);
    }
}
