use rustc_hash::{FxHashMap as HashMap, FxHashSet as HashSet};

use super::{CSym, EarleyParser, WhitespacePolicy};

/// `dot` indexes the alternative's symbols; when the symbol after the dot is
/// a terminal, `off` counts how many of its characters are already matched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub(crate) struct Item {
    pub alt: u32,
    pub dot: u16,
    pub off: u16,
    pub origin: u32,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct ItemSet {
    pub items: Vec<Item>,
    seen: HashSet<Item>,
    /// Nonterminal → items in this set whose dot is right before it.
    waiting: HashMap<u32, Vec<Item>>,
}

impl ItemSet {
    fn insert(&mut self, item: Item) -> bool {
        if self.seen.insert(item) {
            self.items.push(item);
            true
        } else {
            false
        }
    }
}

/// Incremental Earley chart: one item set per consumed character plus the
/// initial set. Characters are pushed one at a time; a push that would leave
/// no live items is refused and leaves the chart unchanged.
#[derive(Debug, Clone)]
pub struct Chart<'g> {
    pub(crate) parser: &'g EarleyParser,
    pub(crate) input: Vec<char>,
    pub(crate) sets: Vec<ItemSet>,
}

impl<'g> Chart<'g> {
    pub(crate) fn new(parser: &'g EarleyParser) -> Self {
        let mut chart = Chart {
            parser,
            input: Vec::new(),
            sets: Vec::new(),
        };
        let mut set = ItemSet::default();
        for &alt in &parser.by_lhs[parser.start as usize] {
            set.insert(Item {
                alt,
                dot: 0,
                off: 0,
                origin: 0,
            });
        }
        chart.sets.push(set);
        chart.close(0);
        chart
    }

    /// Characters consumed so far.
    pub fn len(&self) -> usize {
        self.input.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input.is_empty()
    }

    pub fn input(&self) -> String {
        self.input.iter().collect()
    }

    /// Feeds one character. Returns false, leaving the chart as it was, if
    /// the extended input is not a viable prefix.
    pub fn push(&mut self, c: char) -> bool {
        let p = self.parser;
        let i = self.sets.len() - 1;
        let mut next = ItemSet::default();
        let skip_space = p.policy() == WhitespacePolicy::Flexible && c == ' ';
        for item in &self.sets[i].items {
            let alt = &p.alts[item.alt as usize];
            let Some(CSym::T(t)) = alt.syms.get(item.dot as usize) else {
                continue;
            };
            let chars = &p.terminals[*t as usize].chars;
            if chars.is_empty() {
                continue;
            }
            if chars[item.off as usize] == c {
                let advanced = if item.off as usize + 1 == chars.len() {
                    Item {
                        dot: item.dot + 1,
                        off: 0,
                        ..*item
                    }
                } else {
                    Item {
                        off: item.off + 1,
                        ..*item
                    }
                };
                next.insert(advanced);
            } else if skip_space && item.off == 0 {
                next.insert(*item);
            }
        }
        if next.items.is_empty() {
            return false;
        }
        self.sets.push(next);
        self.input.push(c);
        self.close(i + 1);
        true
    }

    /// Feeds every character of `s`; on failure the chart keeps the longest
    /// accepted prefix and the number of accepted characters is returned.
    pub fn push_str(&mut self, s: &str) -> Result<(), usize> {
        for (k, c) in s.chars().enumerate() {
            if !self.push(c) {
                return Err(k);
            }
        }
        Ok(())
    }

    /// Drops everything after the first `len` characters.
    pub fn truncate(&mut self, len: usize) {
        if len < self.input.len() {
            self.input.truncate(len);
            self.sets.truncate(len + 1);
        }
    }

    /// True if the consumed input is a complete sentence.
    pub fn is_accepting(&self) -> bool {
        self.accepting_at(self.sets.len() - 1)
    }

    pub(crate) fn accepting_at(&self, k: usize) -> bool {
        let p = self.parser;
        self.sets[k].items.iter().any(|it| {
            let alt = &p.alts[it.alt as usize];
            it.origin == 0 && alt.lhs == p.start && it.dot as usize == alt.syms.len()
        })
    }

    /// True if position `k` sits between whole terminals: some item is
    /// about to start a terminal there, or the input up to `k` is complete.
    pub fn is_boundary(&self, k: usize) -> bool {
        let p = self.parser;
        self.sets[k].items.iter().any(|it| {
            it.off == 0
                && matches!(
                    p.alts[it.alt as usize].syms.get(it.dot as usize),
                    Some(CSym::T(t)) if !p.terminals[*t as usize].chars.is_empty()
                )
        }) || self.accepting_at(k)
    }

    /// Ids of non-empty terminals that an item at the last position is
    /// about to scan from their first character.
    pub(crate) fn startable_terminals(&self) -> impl Iterator<Item = u32> + '_ {
        let p = self.parser;
        let k = self.sets.len() - 1;
        let mut seen = Vec::new();
        for it in &self.sets[k].items {
            if it.off != 0 {
                continue;
            }
            if let Some(&CSym::T(t)) = p.alts[it.alt as usize].syms.get(it.dot as usize) {
                if !p.terminals[t as usize].chars.is_empty() && !seen.contains(&t) {
                    seen.push(t);
                }
            }
        }
        seen.into_iter()
    }

    /// Characters that may come next.
    pub fn next_chars(&self) -> Vec<char> {
        let p = self.parser;
        let k = self.sets.len() - 1;
        let mut out: Vec<char> = Vec::new();
        for it in &self.sets[k].items {
            if let Some(CSym::T(t)) = p.alts[it.alt as usize].syms.get(it.dot as usize) {
                if let Some(&c) = p.terminals[*t as usize].chars.get(it.off as usize) {
                    if !out.contains(&c) {
                        out.push(c);
                    }
                }
            }
        }
        out
    }

    /// Prediction and completion to a fixpoint, with nullable nonterminals
    /// stepped over at prediction time.
    fn close(&mut self, k: usize) {
        let p = self.parser;
        let mut cursor = 0;
        while cursor < self.sets[k].items.len() {
            let item = self.sets[k].items[cursor];
            cursor += 1;
            let alt = &p.alts[item.alt as usize];
            match alt.syms.get(item.dot as usize) {
                None => {
                    let origin = item.origin as usize;
                    let lhs = alt.lhs;
                    if origin == k {
                        // the waiting list can grow while we walk it
                        let mut w = 0;
                        while let Some(&parent) =
                            self.sets[k].waiting.get(&lhs).and_then(|v| v.get(w))
                        {
                            w += 1;
                            self.sets[k].insert(Item {
                                dot: parent.dot + 1,
                                off: 0,
                                ..parent
                            });
                        }
                    } else {
                        let (before, after) = self.sets.split_at_mut(k);
                        let here = &mut after[0];
                        for parent in before[origin].waiting.get(&lhs).into_iter().flatten() {
                            here.insert(Item {
                                dot: parent.dot + 1,
                                off: 0,
                                ..*parent
                            });
                        }
                    }
                }
                Some(&CSym::N(n)) => {
                    self.sets[k].waiting.entry(n).or_default().push(item);
                    for &a in &p.by_lhs[n as usize] {
                        self.sets[k].insert(Item {
                            alt: a,
                            dot: 0,
                            off: 0,
                            origin: k as u32,
                        });
                    }
                    if p.nullable[n as usize] {
                        self.sets[k].insert(Item {
                            dot: item.dot + 1,
                            off: 0,
                            ..item
                        });
                    }
                }
                Some(&CSym::T(t)) => {
                    if p.terminals[t as usize].chars.is_empty() {
                        self.sets[k].insert(Item {
                            dot: item.dot + 1,
                            off: 0,
                            ..item
                        });
                    }
                }
            }
        }
    }
}
