//! Random sentences, random grammars and random specialized subsets.
//!
//! Used by the mock language models and by the property tests.

use std::collections::HashMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::grammar::{Alternative, Grammar, Item, Repetition, Rule, Symbol};

/// Derivation height of the shallowest derivation per nonterminal. Missing
/// entries derive nothing.
fn min_heights(g: &Grammar) -> HashMap<&str, usize> {
    let mut h: HashMap<&str, usize> = HashMap::new();
    loop {
        let mut changed = false;
        for rule in &g.rules {
            for alt in &rule.alternatives {
                let Some(d) = alt_height(alt, &h) else {
                    continue;
                };
                if h.get(rule.lhs.as_str()).is_none_or(|&cur| d < cur) {
                    h.insert(&rule.lhs, d);
                    changed = true;
                }
            }
        }
        if !changed {
            return h;
        }
    }
}

fn alt_height(alt: &Alternative, h: &HashMap<&str, usize>) -> Option<usize> {
    // items that may be skipped never count: they are skipped once the
    // depth budget runs out
    let mut d = 1;
    for item in alt.items.iter().filter(|i| i.repetition.min_count() > 0) {
        if let Symbol::Nonterminal(n) = &item.symbol {
            d = d.max(h.get(n.as_str())? + 1);
        }
    }
    Some(d)
}

/// Samples sentences of a grammar by random top-down expansion.
pub struct SentenceSampler<'g> {
    grammar: &'g Grammar,
    heights: HashMap<&'g str, usize>,
    /// Depth budget; once exhausted only the shallowest alternatives are used.
    pub max_depth: usize,
    /// Upper bound on extra copies drawn for `*` and `+` items.
    pub max_repeat: usize,
    /// Text placed between consecutive terminals.
    pub separator: String,
}

impl<'g> SentenceSampler<'g> {
    pub fn new(grammar: &'g Grammar) -> Self {
        SentenceSampler {
            grammar,
            heights: min_heights(grammar),
            max_depth: 8,
            max_repeat: 3,
            separator: " ".to_string(),
        }
    }

    /// Whether the start symbol derives anything.
    pub fn is_productive(&self) -> bool {
        self.heights.contains_key(self.grammar.start.as_str())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<String> {
        let mut out = Vec::new();
        self.sample_terminals(rng, &mut out)?;
        Some(out.join(&self.separator))
    }

    /// Samples one sentence as its sequence of terminals.
    pub fn sample_terminals<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        out: &mut Vec<String>,
    ) -> Option<()> {
        if !self.is_productive() {
            return None;
        }
        self.expand(&self.grammar.start, self.max_depth, rng, out);
        Some(())
    }

    fn expand<R: Rng + ?Sized>(&self, nt: &str, budget: usize, rng: &mut R, out: &mut Vec<String>) {
        let rule = self
            .grammar
            .rule(nt)
            .expect("productive nonterminal has a rule");
        let viable: Vec<(&Alternative, usize)> = rule
            .alternatives
            .iter()
            .filter_map(|a| alt_height(a, &self.heights).map(|d| (a, d)))
            .collect();
        let fitting: Vec<&(&Alternative, usize)> =
            viable.iter().filter(|(_, d)| *d <= budget).collect();
        let alt = if fitting.is_empty() {
            viable.iter().min_by_key(|(_, d)| *d).expect("productive").0
        } else {
            fitting.choose(rng).expect("non-empty").0
        };
        for item in &alt.items {
            let productive = match &item.symbol {
                Symbol::Terminal(_) => true,
                Symbol::Nonterminal(n) => self.heights.contains_key(n.as_str()),
            };
            let min = item.repetition.min_count();
            let count = if !productive || budget <= 1 {
                min
            } else {
                let max = item.repetition.max_count().unwrap_or(min + self.max_repeat);
                rng.random_range(min..=max)
            };
            for _ in 0..count {
                match &item.symbol {
                    Symbol::Terminal(t) => out.push(t.clone()),
                    Symbol::Nonterminal(n) => self.expand(n, budget.saturating_sub(1), rng, out),
                }
            }
        }
    }
}

/// Shape of grammars produced by [`random_grammar`].
#[derive(Debug, Clone)]
pub struct RandomGrammarConfig {
    pub max_rules: usize,
    pub max_alternatives: usize,
    pub max_items: usize,
    pub alphabet: Vec<char>,
    pub max_terminal_len: usize,
    /// Chance that an item carries a repetition operator.
    pub extended_rate: f64,
    /// Chance that an alternative is empty.
    pub epsilon_rate: f64,
}

impl Default for RandomGrammarConfig {
    fn default() -> Self {
        RandomGrammarConfig {
            max_rules: 8,
            max_alternatives: 4,
            max_items: 4,
            alphabet: vec!['a', 'b'],
            max_terminal_len: 2,
            extended_rate: 0.15,
            epsilon_rate: 0.1,
        }
    }
}

/// A random grammar over rules `r0..rN`. It may contain unproductive or
/// unreachable rules.
pub fn random_grammar<R: Rng + ?Sized>(rng: &mut R, cfg: &RandomGrammarConfig) -> Grammar {
    let n = rng.random_range(1..=cfg.max_rules);
    let mut rules = Vec::with_capacity(n);
    for r in 0..n {
        let alt_count = rng.random_range(1..=cfg.max_alternatives);
        let mut rule = Rule::new(format!("r{r}"), Vec::new());
        for _ in 0..alt_count {
            let alt = if rng.random_bool(cfg.epsilon_rate) {
                Alternative::default()
            } else {
                let len = rng.random_range(1..=cfg.max_items);
                Alternative::new(
                    (0..len)
                        .map(|_| {
                            let symbol = if rng.random_bool(0.5) {
                                let tl = rng.random_range(1..=cfg.max_terminal_len);
                                Symbol::Terminal(
                                    (0..tl)
                                        .map(|_| *cfg.alphabet.choose(rng).expect("alphabet"))
                                        .collect(),
                                )
                            } else {
                                Symbol::Nonterminal(format!("r{}", rng.random_range(0..n)))
                            };
                            let repetition = if rng.random_bool(cfg.extended_rate) {
                                *[Repetition::Optional, Repetition::Star, Repetition::Plus]
                                    .choose(rng)
                                    .expect("non-empty")
                            } else {
                                Repetition::Once
                            };
                            Item::new(symbol, repetition)
                        })
                        .collect(),
                )
            };
            rule.push_alternative(alt);
        }
        rules.push(rule);
    }
    Grammar::from_rules(rules)
}

/// A random concretization of `alt` with at most `max_rep` copies of each
/// repeated item.
pub fn random_concretization<R: Rng + ?Sized>(
    rng: &mut R,
    alt: &Alternative,
    max_rep: usize,
) -> Alternative {
    let mut symbols = Vec::new();
    for item in &alt.items {
        let min = item.repetition.min_count();
        let max = item
            .repetition
            .max_count()
            .unwrap_or(max_rep)
            .min(max_rep)
            .max(min);
        let count = rng.random_range(min..=max);
        symbols.extend(std::iter::repeat_n(item.symbol.clone(), count));
    }
    Alternative::concrete(symbols)
}

/// A random specialized subset of `g`: the start rule plus a random choice
/// of other rules, each keeping a non-empty random subset of alternatives
/// in `g`'s order. Extended alternatives are replaced by one to three
/// concretizations.
pub fn random_subset<R: Rng + ?Sized>(rng: &mut R, g: &Grammar, max_rep: usize) -> Grammar {
    let mut rules = Vec::new();
    for rule in &g.rules {
        if rule.lhs != g.start && rng.random_bool(0.4) {
            continue;
        }
        let mut picks: Vec<usize> = (0..rule.alternatives.len()).collect();
        picks.shuffle(rng);
        let keep = rng.random_range(1..=picks.len());
        picks.truncate(keep);
        picks.sort_unstable();
        let mut out = Rule::new(rule.lhs.clone(), Vec::new());
        for i in picks {
            let alt = &rule.alternatives[i];
            if alt.is_extended() {
                for _ in 0..rng.random_range(1..=3) {
                    out.push_alternative(random_concretization(rng, alt, max_rep));
                }
            } else {
                out.push_alternative(alt.clone());
            }
        }
        rules.push(out);
    }
    Grammar {
        rules,
        start: g.start.clone(),
    }
}
