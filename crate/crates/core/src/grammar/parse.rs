//! Text → [`Grammar`].
//!
//! Accepted syntax, informally:
//!
//! ```text
//! grammar  := (rule | ";" | ";;")*
//! rule     := name "::=" ["|"] seq ("|" seq)*
//! seq      := item*
//! item     := primary ["?" | "*" | "+"]
//! primary  := name | <name> | "terminal" | "a".."z" | "(" ["|"] seq ("|" seq)* ")"
//! ```
//!
//! `||` is read as `|`. `""` is the empty string. `#` starts a comment that
//! runs to the end of the line. Character ranges and parenthesised groups are
//! sugar: a range or group that forms a whole alternative is spliced into the
//! rule's alternatives; one that appears inside a longer sequence (or carries
//! a repetition operator) becomes an auxiliary rule named `<lhs>__grp<N>`.

use thiserror::Error;

use super::{is_valid_name, Alternative, Grammar, Item, Repetition, Rule, Symbol};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("{line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{line}:{column}: rule `{name}` is defined more than once")]
    DuplicateRule {
        name: String,
        line: usize,
        column: usize,
    },
    #[error("grammar text contains no rules")]
    Empty,
    #[error("start symbol `{0}` has no rule")]
    UnknownStart(String),
}

#[derive(Debug, Clone)]
pub struct ParseOptions {
    /// Merge repeated `lhs ::=` blocks in source order. When false a repeated
    /// lhs is an error.
    pub merge_duplicates: bool,
    /// Start symbol; defaults to the first rule's lhs.
    pub start: Option<String>,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            merge_duplicates: true,
            start: None,
        }
    }
}

pub fn parse_bnf(text: &str) -> Result<Grammar, ParseError> {
    parse_bnf_with(text, &ParseOptions::default())
}

pub fn parse_bnf_with(text: &str, opts: &ParseOptions) -> Result<Grammar, ParseError> {
    let tokens = lex(text)?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        rules: Vec::new(),
        group_counters: Vec::new(),
        opts,
    };
    parser.grammar()?;
    let rules = parser.rules;
    if rules.is_empty() {
        return Err(ParseError::Empty);
    }
    let start = match &opts.start {
        Some(s) => {
            if !rules.iter().any(|r| &r.lhs == s) {
                return Err(ParseError::UnknownStart(s.clone()));
            }
            s.clone()
        }
        None => rules[0].lhs.clone(),
    };
    Ok(Grammar { rules, start })
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Name(String),
    Terminal(String),
    Define,
    Bar,
    Semi,
    LParen,
    RParen,
    Range,
    Question,
    Star,
    Plus,
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> ParseError {
    ParseError::Syntax {
        line,
        column,
        message: message.into(),
    }
}

fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let mut line = 1;
    let mut col = 1;

    macro_rules! bump {
        () => {{
            if chars[i] == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
            i += 1;
        }};
    }

    while i < chars.len() {
        let c = chars[i];
        let (tl, tc) = (line, col);
        if c.is_whitespace() {
            bump!();
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                bump!();
            }
            continue;
        }
        let tok = match c {
            '"' => {
                bump!();
                let mut s = String::new();
                loop {
                    if i >= chars.len() {
                        return Err(syntax(tl, tc, "unterminated terminal literal"));
                    }
                    let ch = chars[i];
                    if ch == '"' {
                        bump!();
                        break;
                    }
                    if ch == '\\' {
                        bump!();
                        if i >= chars.len() {
                            return Err(syntax(tl, tc, "unterminated escape in terminal"));
                        }
                        let esc = chars[i];
                        match esc {
                            '"' => s.push('"'),
                            '\\' => s.push('\\'),
                            'n' => s.push('\n'),
                            't' => s.push('\t'),
                            other => {
                                s.push('\\');
                                s.push(other);
                            }
                        }
                        bump!();
                        continue;
                    }
                    s.push(ch);
                    bump!();
                }
                Tok::Terminal(s)
            }
            '<' => {
                bump!();
                let mut s = String::new();
                while i < chars.len() && chars[i] != '>' {
                    if chars[i] == '\n' {
                        return Err(syntax(tl, tc, "unterminated <name>"));
                    }
                    s.push(chars[i]);
                    bump!();
                }
                if i >= chars.len() {
                    return Err(syntax(tl, tc, "unterminated <name>"));
                }
                bump!();
                let s = s.trim().to_string();
                if !is_valid_name(&s) {
                    return Err(syntax(tl, tc, format!("invalid nonterminal name `{s}`")));
                }
                Tok::Name(s)
            }
            ':' => {
                if chars.get(i + 1) == Some(&':') && chars.get(i + 2) == Some(&'=') {
                    bump!();
                    bump!();
                    bump!();
                    Tok::Define
                } else {
                    return Err(syntax(tl, tc, "expected `::=`"));
                }
            }
            '|' => {
                bump!();
                if i < chars.len() && chars[i] == '|' {
                    bump!();
                }
                Tok::Bar
            }
            ';' => {
                bump!();
                if i < chars.len() && chars[i] == ';' {
                    bump!();
                }
                Tok::Semi
            }
            '(' => {
                bump!();
                Tok::LParen
            }
            ')' => {
                bump!();
                Tok::RParen
            }
            '?' => {
                bump!();
                Tok::Question
            }
            '*' => {
                bump!();
                Tok::Star
            }
            '+' => {
                bump!();
                Tok::Plus
            }
            '.' if chars.get(i + 1) == Some(&'.') => {
                bump!();
                bump!();
                Tok::Range
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut s = String::new();
                while i < chars.len() {
                    let ch = chars[i];
                    let continues = ch.is_ascii_alphanumeric()
                        || ch == '_'
                        || ch == '-'
                        || (ch == '.' && chars.get(i + 1) != Some(&'.'));
                    if !continues {
                        break;
                    }
                    s.push(ch);
                    bump!();
                }
                Tok::Name(s)
            }
            other => return Err(syntax(tl, tc, format!("unexpected character `{other}`"))),
        };
        out.push(Token {
            tok,
            line: tl,
            column: tc,
        });
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        column: col,
    });
    Ok(out)
}

/// Intermediate form before ranges and groups are lowered.
#[derive(Debug, Clone)]
enum Prim {
    Sym(Symbol),
    Choice(Vec<Vec<PItem>>),
}

#[derive(Debug, Clone)]
struct PItem {
    prim: Prim,
    rep: Repetition,
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    rules: Vec<Rule>,
    /// Next `__grp` index per owning lhs.
    group_counters: Vec<(String, usize)>,
    opts: &'a ParseOptions,
}

impl Parser<'_> {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.tokens[(self.pos + k).min(self.tokens.len() - 1)].tok
    }

    fn advance(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn err_here(&self, message: impl Into<String>) -> ParseError {
        let t = self.peek();
        syntax(t.line, t.column, message)
    }

    fn grammar(&mut self) -> Result<(), ParseError> {
        loop {
            match &self.peek().tok {
                Tok::Eof => return Ok(()),
                Tok::Semi => {
                    self.advance();
                }
                Tok::Name(_) => self.rule()?,
                other => return Err(self.err_here(format!("expected a rule, found {other:?}"))),
            }
        }
    }

    fn rule(&mut self) -> Result<(), ParseError> {
        let head = self.advance();
        let Tok::Name(lhs) = head.tok else {
            unreachable!("rule() called on non-name token")
        };
        if self.peek().tok != Tok::Define {
            return Err(self.err_here(format!("expected `::=` after `{lhs}`")));
        }
        self.advance();

        let existing = self.rules.iter().position(|r| r.lhs == lhs);
        if existing.is_some() && !self.opts.merge_duplicates {
            return Err(ParseError::DuplicateRule {
                name: lhs,
                line: head.line,
                column: head.column,
            });
        }
        let index = match existing {
            Some(i) => i,
            None => {
                self.rules.push(Rule::new(lhs.clone(), Vec::new()));
                self.rules.len() - 1
            }
        };

        let alts = self.alternatives(false)?;
        for alt in alts {
            for lowered in self.lower_alternative(&lhs, alt) {
                self.rules[index].push_alternative(lowered);
            }
        }
        Ok(())
    }

    /// Parses `["|"] seq ("|" seq)*`, stopping at `)` when `in_group`.
    fn alternatives(&mut self, in_group: bool) -> Result<Vec<Vec<PItem>>, ParseError> {
        if self.peek().tok == Tok::Bar {
            self.advance();
        }
        let mut alts = Vec::new();
        loop {
            let at = self.peek().clone();
            let seq = self.sequence()?;
            let has_epsilon_marker = matches!(self.tokens[self.pos.saturating_sub(1)].tok, Tok::Terminal(ref t) if t.is_empty());
            if seq.is_empty() && !has_epsilon_marker {
                return Err(syntax(
                    at.line,
                    at.column,
                    "empty alternative (write \"\" for the empty string)",
                ));
            }
            alts.push(seq);
            match &self.peek().tok {
                Tok::Bar => {
                    self.advance();
                }
                Tok::RParen if in_group => return Ok(alts),
                Tok::RParen => return Err(self.err_here("unbalanced `)`")),
                _ if in_group => return Err(self.err_here("expected `)` to close group")),
                _ => return Ok(alts),
            }
        }
    }

    fn sequence(&mut self) -> Result<Vec<PItem>, ParseError> {
        let mut items = Vec::new();
        loop {
            let prim = match self.peek().tok.clone() {
                Tok::Name(name) => {
                    if *self.peek_at(1) == Tok::Define {
                        break;
                    }
                    self.advance();
                    Prim::Sym(Symbol::Nonterminal(name))
                }
                Tok::Terminal(text) => {
                    let at = self.advance();
                    if self.peek().tok == Tok::Range {
                        self.advance();
                        let hi = self.advance();
                        let Tok::Terminal(hi_text) = hi.tok else {
                            return Err(syntax(hi.line, hi.column, "expected terminal after `..`"));
                        };
                        Prim::Choice(char_range(&text, &hi_text, at.line, at.column)?)
                    } else if text.is_empty() {
                        // epsilon: contributes nothing to the sequence
                        continue;
                    } else {
                        Prim::Sym(Symbol::Terminal(text))
                    }
                }
                Tok::LParen => {
                    self.advance();
                    let inner = self.alternatives(true)?;
                    self.advance(); // ')'
                    Prim::Choice(inner)
                }
                _ => break,
            };
            let rep = match self.peek().tok {
                Tok::Question => Repetition::Optional,
                Tok::Star => Repetition::Star,
                Tok::Plus => Repetition::Plus,
                _ => Repetition::Once,
            };
            if rep != Repetition::Once {
                self.advance();
            }
            items.push(PItem { prim, rep });
        }
        Ok(items)
    }

    fn fresh_group_name(&mut self, owner: &str) -> String {
        let slot = match self.group_counters.iter().position(|(o, _)| o == owner) {
            Some(i) => i,
            None => {
                self.group_counters.push((owner.to_string(), 0));
                self.group_counters.len() - 1
            }
        };
        loop {
            let n = self.group_counters[slot].1;
            self.group_counters[slot].1 += 1;
            let name = format!("{owner}__grp{n}");
            if !self.rules.iter().any(|r| r.lhs == name) && !self.name_used_later(&name) {
                return name;
            }
        }
    }

    fn name_used_later(&self, name: &str) -> bool {
        self.tokens
            .iter()
            .any(|t| matches!(&t.tok, Tok::Name(n) if n == name))
    }

    /// Lowers one parsed alternative into one or more concrete
    /// [`Alternative`]s, emitting auxiliary group rules as needed.
    fn lower_alternative(&mut self, owner: &str, alt: Vec<PItem>) -> Vec<Alternative> {
        if alt.len() == 1 && alt[0].rep == Repetition::Once {
            if let Prim::Choice(inner) = &alt[0].prim {
                let inner = inner.clone();
                return inner
                    .into_iter()
                    .flat_map(|a| self.lower_alternative(owner, a))
                    .collect();
            }
        }
        let mut items = Vec::new();
        for pitem in alt {
            match pitem.prim {
                Prim::Sym(sym) => items.push(Item::new(sym, pitem.rep)),
                Prim::Choice(inner) if pitem.rep == Repetition::Once && inner.len() == 1 => {
                    let only = inner.into_iter().next().unwrap_or_default();
                    for lowered in self.lower_alternative(owner, only) {
                        items.extend(lowered.items);
                    }
                }
                Prim::Choice(inner) => {
                    let simple = (inner.len() == 1 && inner[0].len() == 1)
                        .then(|| match &inner[0][0] {
                            PItem {
                                prim: Prim::Sym(s),
                                rep: Repetition::Once,
                            } => Some(s.clone()),
                            _ => None,
                        })
                        .flatten();
                    if let Some(sym) = simple {
                        items.push(Item::new(sym, pitem.rep));
                        continue;
                    }
                    let name = self.fresh_group_name(owner);
                    self.rules.push(Rule::new(name.clone(), Vec::new()));
                    let idx = self.rules.len() - 1;
                    for a in inner {
                        for lowered in self.lower_alternative(owner, a) {
                            self.rules[idx].push_alternative(lowered);
                        }
                    }
                    items.push(Item::new(Symbol::Nonterminal(name), pitem.rep));
                }
            }
        }
        vec![Alternative::new(items)]
    }
}

fn char_range(
    lo: &str,
    hi: &str,
    line: usize,
    column: usize,
) -> Result<Vec<Vec<PItem>>, ParseError> {
    let mut lo_chars = lo.chars();
    let mut hi_chars = hi.chars();
    let (Some(a), None, Some(b), None) = (
        lo_chars.next(),
        lo_chars.next(),
        hi_chars.next(),
        hi_chars.next(),
    ) else {
        return Err(syntax(
            line,
            column,
            "range bounds must be single characters",
        ));
    };
    if a > b {
        return Err(syntax(line, column, format!("empty range {a:?}..{b:?}")));
    }
    Ok((a..=b)
        .map(|c| {
            vec![PItem {
                prim: Prim::Sym(Symbol::Terminal(c.to_string())),
                rep: Repetition::Once,
            }]
        })
        .collect())
}
