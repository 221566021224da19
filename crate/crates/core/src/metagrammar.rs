//! The grammar of specialized grammars.
//!
//! For a full grammar `G`, [`build_metagrammar`] produces a grammar whose
//! sentences are exactly the serialized sub-grammars of `G`: blocks in `G`'s
//! rule order (each optional except the start rule's), every block holding a
//! non-empty selection of that rule's alternatives in `G`'s order. An
//! extended alternative may be written as is or as any number of
//! concretizations with at most `max_rep` copies per repeated item.
//!
//! Every metagrammar terminal is a whole piece of rule text carrying its own
//! leading space, so concatenating the leaves of a meta-parse gives the
//! canonical serialization of the denoted grammar. That is how
//! [`MetaGrammar::extract_grammar`] works.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::earley::{DerivationTree, EarleyError, EarleyParser, Recognition};
use crate::grammar::serialize::{format_item, format_name};
use crate::grammar::{
    parse_bnf_with, Alternative, Grammar, Item, ParseError, ParseOptions, Repetition, Rule, Symbol,
};

pub const DEFAULT_MAX_REP: usize = 8;
const START: &str = "meta__grammar";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetaError {
    #[error("grammar uses repetition operators; a positive repetition bound is required")]
    RepetitionBoundRequired,
    #[error("start symbol `{0}` has no rule")]
    MissingStart(String),
    #[error("candidate is not a sub-grammar: {0}")]
    Rejected(String),
    #[error(transparent)]
    Earley(#[from] EarleyError),
    #[error("extracted text does not parse: {0}")]
    Extract(#[from] ParseError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaConfig {
    /// Largest number of copies a concretization may give one `*`/`+` item.
    pub max_rep: Option<usize>,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            max_rep: Some(DEFAULT_MAX_REP),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MetaGrammar {
    pub grammar: Grammar,
    pub source: Grammar,
    pub max_rep: usize,
}

pub fn build_metagrammar(g_full: &Grammar) -> Result<MetaGrammar, MetaError> {
    build_metagrammar_with(g_full, MetaConfig::default())
}

pub fn build_metagrammar_with(g_full: &Grammar, cfg: MetaConfig) -> Result<MetaGrammar, MetaError> {
    let max_rep = match cfg.max_rep {
        Some(k) if k > 0 => k,
        _ if g_full.is_extended() => return Err(MetaError::RepetitionBoundRequired),
        _ => 1,
    };
    if g_full.rule(&g_full.start).is_none() {
        return Err(MetaError::MissingStart(g_full.start.clone()));
    }

    let mut b = Builder {
        rules: Vec::new(),
        max_rep,
    };
    let mut top = Vec::new();
    for (r, rule) in g_full.rules.iter().enumerate() {
        let block = b.block(r, rule);
        let rep = if rule.lhs == g_full.start {
            Repetition::Once
        } else {
            Repetition::Optional
        };
        top.push(Item::new(nt(&block), rep));
    }
    b.rules
        .insert(0, Rule::new(START, vec![Alternative::new(top)]));

    Ok(MetaGrammar {
        grammar: Grammar {
            rules: b.rules,
            start: START.to_string(),
        },
        source: g_full.clone(),
        max_rep,
    })
}

impl MetaGrammar {
    pub fn parser(&self) -> Result<EarleyParser, EarleyError> {
        EarleyParser::new(&self.grammar)
    }

    pub fn recognize(&self, candidate: &str) -> Recognition {
        crate::earley::recognize(candidate, &self.grammar)
    }

    /// The grammar a meta-parse denotes.
    pub fn extract_grammar(&self, meta_parse: &DerivationTree) -> Result<Grammar, MetaError> {
        let text = meta_parse.leaves().concat();
        let opts = ParseOptions {
            merge_duplicates: true,
            start: Some(self.source.start.clone()),
        };
        Ok(parse_bnf_with(&text, &opts)?)
    }

    /// Parses candidate grammar text under the metagrammar and extracts it.
    pub fn parse_candidate(&self, candidate: &str) -> Result<Grammar, MetaError> {
        self.parse_candidate_with(&self.parser()?, candidate)
    }

    /// [`Self::parse_candidate`] with a parser already built from
    /// [`Self::parser`].
    pub fn parse_candidate_with(
        &self,
        parser: &EarleyParser,
        candidate: &str,
    ) -> Result<Grammar, MetaError> {
        let outcome = parser
            .parse(candidate)
            .map_err(|_| MetaError::Rejected(parser.longest_valid_prefix(candidate).prefix))?;
        self.extract_grammar(&outcome.tree)
    }
}

fn nt(name: &str) -> Symbol {
    Symbol::Nonterminal(name.to_string())
}

fn t(text: impl Into<String>) -> Item {
    Item::once(Symbol::Terminal(text.into()))
}

fn n(name: &str) -> Item {
    Item::once(nt(name))
}

struct Builder {
    rules: Vec<Rule>,
    max_rep: usize,
}

impl Builder {
    fn push(&mut self, name: String, alts: Vec<Alternative>) -> String {
        self.rules.push(Rule::new(name.clone(), alts));
        name
    }

    /// `lhs ::=` followed by a non-empty ordered selection of alternatives.
    ///
    /// `first_i` chooses the first alternative written, from slot `i` on;
    /// `rest_i` writes further ` | alt` pieces from slot `i` on. Slots of
    /// extended alternatives may be used repeatedly.
    fn block(&mut self, r: usize, rule: &Rule) -> String {
        let block = format!("meta__block{r}");
        let m = rule.alternatives.len();
        let block_index = self.rules.len();
        self.push(block.clone(), Vec::new());

        let opts: Vec<String> = rule
            .alternatives
            .iter()
            .enumerate()
            .map(|(i, alt)| self.options(r, i, alt))
            .collect();

        let rest = |i: usize| format!("meta__rest{r}_{i}");
        let first = |i: usize| format!("meta__first{r}_{i}");
        for i in (0..=m).rev() {
            if i == m {
                self.push(rest(i), vec![Alternative::default()]);
                continue;
            }
            let again = if rule.alternatives[i].is_extended() {
                rest(i)
            } else {
                rest(i + 1)
            };
            self.push(
                rest(i),
                vec![
                    Alternative::new(vec![n(&rest(i + 1))]),
                    Alternative::new(vec![t(" |"), n(&opts[i]), n(&again)]),
                ],
            );
            let mut first_alts = vec![Alternative::new(vec![n(&opts[i]), n(&again)])];
            if i + 1 < m {
                first_alts.push(Alternative::new(vec![n(&first(i + 1))]));
            }
            self.push(first(i), first_alts);
        }

        self.rules[block_index].alternatives = vec![Alternative::new(vec![
            t(format!("{} ::=", format_name(&rule.lhs))),
            n(&first(0)),
            t("\n"),
        ])];
        block
    }

    /// Ways of writing alternative `i` of rule `r`.
    fn options(&mut self, r: usize, i: usize, alt: &Alternative) -> String {
        let name = format!("meta__alt{r}_{i}");
        let mut out = vec![Alternative::new(vec![t(literal(alt))])];
        if alt.is_extended() {
            let all_optional = alt.items.iter().all(|it| it.repetition.min_count() == 0);
            if all_optional {
                // Zero copies of everything, or the first item with copies is j.
                out.push(Alternative::new(vec![t(" \"\"")]));
                for j in 0..alt.len() {
                    out.push(self.concretization(r, i, alt, Some(j)));
                }
            } else {
                out.push(self.concretization(r, i, alt, None));
            }
        }
        let index = self.rules.len();
        self.push(name.clone(), Vec::new());
        self.rules[index].alternatives = out;
        name
    }

    /// A concretization of `alt` as pieces. With `first_nonempty = Some(j)`,
    /// items before `j` get no copies and item `j` gets at least one.
    fn concretization(
        &mut self,
        r: usize,
        i: usize,
        alt: &Alternative,
        first_nonempty: Option<usize>,
    ) -> Alternative {
        let mut items = Vec::new();
        let mut chunk: Vec<String> = Vec::new();
        let flush = |chunk: &mut Vec<String>, items: &mut Vec<Item>| {
            if !chunk.is_empty() {
                items.push(t(format!(" {}", chunk.join(" "))));
                chunk.clear();
            }
        };
        for (j, item) in alt.items.iter().enumerate() {
            let piece = format_item(&Item::once(item.symbol.clone()));
            if item.repetition == Repetition::Once {
                chunk.push(piece);
                continue;
            }
            if first_nonempty.is_some_and(|f| j < f) {
                continue;
            }
            flush(&mut chunk, &mut items);
            let max = item.repetition.max_count().unwrap_or(self.max_rep);
            let forced = item
                .repetition
                .min_count()
                .max(usize::from(first_nonempty == Some(j)));
            for _ in 0..forced {
                items.push(t(format!(" {piece}")));
            }
            if max > forced {
                let chain = self.chain(r, i, j, &piece, max - forced);
                items.push(n(&chain));
            }
        }
        flush(&mut chunk, &mut items);
        Alternative::new(items)
    }

    /// `meta__rep{r}_{i}_{j}_{k}`: between zero and `k` copies of `piece`.
    fn chain(&mut self, r: usize, i: usize, j: usize, piece: &str, k: usize) -> String {
        let name = |k: usize| format!("meta__rep{r}_{i}_{j}_{k}");
        for level in 1..=k {
            if self.rules.iter().any(|rule| rule.lhs == name(level)) {
                continue;
            }
            let mut more = vec![t(format!(" {piece}"))];
            if level > 1 {
                more.push(n(&name(level - 1)));
            }
            self.push(
                name(level),
                vec![Alternative::new(more), Alternative::default()],
            );
        }
        name(k)
    }
}

/// The alternative as written in a serialized grammar, with leading space.
fn literal(alt: &Alternative) -> String {
    if alt.is_empty() {
        return " \"\"".to_string();
    }
    let mut s = String::new();
    for item in &alt.items {
        s.push(' ');
        s.push_str(&format_item(item));
    }
    s
}
