use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::chart::Chart;
use super::{CSym, EarleyError, EarleyParser, WhitespacePolicy};
use crate::grammar::{escape_terminal, AltRef};

/// A derivation over the source grammar (repetition operators already
/// folded back: the children of an alternative `"(" x+ ")"` are the `(`
/// leaf, one subtree per `x`, and the `)` leaf).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivationTree {
    /// A terminal, with its text as written in the grammar.
    Leaf(String),
    Node {
        alt: AltRef,
        children: Vec<DerivationTree>,
    },
}

impl DerivationTree {
    pub fn lhs(&self) -> Option<&str> {
        match self {
            DerivationTree::Leaf(_) => None,
            DerivationTree::Node { alt, .. } => Some(&alt.lhs),
        }
    }

    pub fn children(&self) -> &[DerivationTree] {
        match self {
            DerivationTree::Leaf(_) => &[],
            DerivationTree::Node { children, .. } => children,
        }
    }

    /// Terminal texts in order.
    pub fn leaves(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            DerivationTree::Leaf(t) => out.push(t),
            DerivationTree::Node { children, .. } => {
                for c in children {
                    c.collect_leaves(out);
                }
            }
        }
    }

    /// Leaves joined with single spaces.
    pub fn yield_text(&self) -> String {
        self.leaves()
            .into_iter()
            .filter(|l| !l.trim().is_empty())
            .map(str::trim)
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Every alternative used, in pre-order (first use first).
    pub fn alt_refs(&self) -> Vec<&AltRef> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(t) = stack.pop() {
            if let DerivationTree::Node { alt, children } = t {
                out.push(alt);
                stack.extend(children.iter().rev());
            }
        }
        out
    }

    pub fn interior_count(&self) -> usize {
        self.alt_refs().len()
    }

    /// First subtree (pre-order) whose lhs is `lhs` and whose leaves
    /// spell `text` under whitespace-insensitive comparison.
    pub fn find_subtree(&self, lhs: &str, text: &str) -> Option<&DerivationTree> {
        let target: String = text.chars().filter(|c| !c.is_whitespace()).collect();
        let mut stack = vec![self];
        while let Some(t) = stack.pop() {
            if t.lhs() == Some(lhs) {
                let spelled: String = t
                    .leaves()
                    .concat()
                    .chars()
                    .filter(|c| !c.is_whitespace())
                    .collect();
                if spelled == target {
                    return Some(t);
                }
            }
            stack.extend(t.children().iter().rev());
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseOutcome {
    pub tree: DerivationTree,
    /// More than one derivation exists; `tree` is the first one.
    pub ambiguous: bool,
}

/// `[lhs child ...]` with terminal leaves quoted.
pub fn linearize_derivation(t: &DerivationTree) -> String {
    let mut out = String::new();
    linearize_into(t, &mut out);
    out
}

fn linearize_into(t: &DerivationTree, out: &mut String) {
    match t {
        DerivationTree::Leaf(text) => out.push_str(&escape_terminal(text)),
        DerivationTree::Node { alt, children } => {
            out.push('[');
            out.push_str(&alt.lhs);
            for c in children {
                out.push(' ');
                linearize_into(c, out);
            }
            out.push(']');
        }
    }
}

/// Derivation over the compiled (desugared) grammar.
enum Raw {
    Leaf(u32),
    Node { alt: u32, children: Vec<Raw> },
}

/// Completed-item index of a full chart.
struct Spans<'c, 'g> {
    chart: &'c Chart<'g>,
    /// (nonterminal, start) → ends, ascending.
    ends: HashMap<(u32, u32), Vec<u32>>,
    /// (nonterminal, start, end) → alternatives, ascending.
    alts: HashMap<(u32, u32, u32), Vec<u32>>,
    cycle_hits: usize,
    failed_seq: HashSet<(u32, u16, u32, u32)>,
    active: HashSet<(u32, u32, u32)>,
    counts_nt: HashMap<(u32, u32, u32), u8>,
    counts_seq: HashMap<(u32, u16, u32, u32), u8>,
}

impl<'c, 'g> Spans<'c, 'g> {
    fn new(chart: &'c Chart<'g>) -> Self {
        let p = chart.parser;
        let mut ends: HashMap<(u32, u32), Vec<u32>> = HashMap::new();
        let mut alts: HashMap<(u32, u32, u32), Vec<u32>> = HashMap::new();
        for (end, set) in chart.sets.iter().enumerate() {
            for it in &set.items {
                let alt = &p.alts[it.alt as usize];
                if it.dot as usize != alt.syms.len() {
                    continue;
                }
                let key = (alt.lhs, it.origin, end as u32);
                let list = alts.entry(key).or_default();
                if list.is_empty() {
                    ends.entry((alt.lhs, it.origin))
                        .or_default()
                        .push(end as u32);
                }
                list.push(it.alt);
            }
        }
        for list in alts.values_mut() {
            list.sort_unstable();
            list.dedup();
        }
        for list in ends.values_mut() {
            list.sort_unstable();
            list.dedup();
        }
        Spans {
            chart,
            ends,
            alts,
            cycle_hits: 0,
            failed_seq: HashSet::new(),
            active: HashSet::new(),
            counts_nt: HashMap::new(),
            counts_seq: HashMap::new(),
        }
    }

    /// Positions after terminal `t` when it starts at `pos`.
    fn match_terminal(&self, t: u32, pos: u32) -> Option<u32> {
        let p = self.chart.parser;
        let chars = &p.terminals[t as usize].chars;
        if chars.is_empty() {
            return Some(pos);
        }
        let input = &self.chart.input;
        let mut at = pos as usize;
        if p.policy() == WhitespacePolicy::Flexible && input.get(at) == Some(&' ') {
            at += 1;
        }
        let end = at + chars.len();
        (end <= input.len() && input[at..end] == chars[..]).then_some(end as u32)
    }

    /// First derivation of `nt` over `a..b`: lowest alternative index.
    fn derive_nt(&mut self, nt: u32, a: u32, b: u32) -> Option<Raw> {
        let candidates = self.alts.get(&(nt, a, b)).cloned().unwrap_or_default();
        candidates
            .into_iter()
            .find_map(|alt| self.derive_alt(nt, alt, a, b))
    }

    fn derive_alt(&mut self, nt: u32, alt: u32, a: u32, b: u32) -> Option<Raw> {
        let key = (nt, a, b);
        if self.active.contains(&key) {
            self.cycle_hits += 1;
            return None;
        }
        self.active.insert(key);
        let children = self.derive_seq(alt, 0, a, b);
        self.active.remove(&key);
        children.map(|children| Raw::Node { alt, children })
    }

    /// Children for `alt` from `dot` on, covering `pos..b`. A nonterminal
    /// child prefers its lowest alternative index, then its shortest span.
    fn derive_seq(&mut self, alt: u32, dot: u16, pos: u32, b: u32) -> Option<Vec<Raw>> {
        let p = self.chart.parser;
        let syms = &p.alts[alt as usize].syms;
        if dot as usize == syms.len() {
            return (pos == b).then(Vec::new);
        }
        let key = (alt, dot, pos, b);
        if self.failed_seq.contains(&key) {
            return None;
        }
        let hits_before = self.cycle_hits;
        let result = match syms[dot as usize] {
            CSym::T(t) => self
                .match_terminal(t, pos)
                .filter(|&e| e <= b)
                .and_then(|e| {
                    let mut rest = self.derive_seq(alt, dot + 1, e, b)?;
                    rest.insert(0, Raw::Leaf(t));
                    Some(rest)
                }),
            CSym::N(n) => {
                let ends = self.ends.get(&(n, pos)).cloned().unwrap_or_default();
                let mut options: Vec<(u32, u32)> = Vec::new();
                for e in ends.into_iter().take_while(|&e| e <= b) {
                    for &child in self
                        .alts
                        .get(&(n, pos, e))
                        .map(Vec::as_slice)
                        .unwrap_or(&[])
                    {
                        options.push((child, e));
                    }
                }
                options.sort_unstable();
                let mut out = None;
                for (child, e) in options {
                    if self.failed_seq.contains(&(alt, dot + 1, e, b)) {
                        continue;
                    }
                    let Some(sub) = self.derive_alt(n, child, pos, e) else {
                        continue;
                    };
                    if let Some(mut rest) = self.derive_seq(alt, dot + 1, e, b) {
                        rest.insert(0, sub);
                        out = Some(rest);
                        break;
                    }
                }
                out
            }
        };
        // failures caused by the cycle guard depend on the caller's stack
        if result.is_none() && self.cycle_hits == hits_before {
            self.failed_seq.insert(key);
        }
        result
    }

    /// Number of derivations, saturating at 2.
    fn count_nt(&mut self, nt: u32, a: u32, b: u32) -> u8 {
        let key = (nt, a, b);
        if let Some(&c) = self.counts_nt.get(&key) {
            return c;
        }
        if self.active.contains(&key) {
            // a cycle through the same span means unboundedly many trees
            return 2;
        }
        self.active.insert(key);
        let mut total = 0u8;
        for alt in self.alts.get(&key).cloned().unwrap_or_default() {
            total = total.saturating_add(self.count_seq(alt, 0, a, b)).min(2);
            if total >= 2 {
                break;
            }
        }
        self.active.remove(&key);
        self.counts_nt.insert(key, total);
        total
    }

    fn count_seq(&mut self, alt: u32, dot: u16, pos: u32, b: u32) -> u8 {
        let p = self.chart.parser;
        let syms = &p.alts[alt as usize].syms;
        if dot as usize == syms.len() {
            return u8::from(pos == b);
        }
        let key = (alt, dot, pos, b);
        if let Some(&c) = self.counts_seq.get(&key) {
            return c;
        }
        let total = match syms[dot as usize] {
            CSym::T(t) => match self.match_terminal(t, pos) {
                Some(e) if e <= b => self.count_seq(alt, dot + 1, e, b),
                _ => 0,
            },
            CSym::N(n) => {
                let mut total = 0u8;
                let ends = self.ends.get(&(n, pos)).cloned().unwrap_or_default();
                for e in ends.into_iter().take_while(|&e| e <= b) {
                    let rest = self.count_seq(alt, dot + 1, e, b);
                    if rest == 0 {
                        continue;
                    }
                    let here = self.count_nt(n, pos, e);
                    total = total.saturating_add(here.saturating_mul(rest)).min(2);
                    if total >= 2 {
                        break;
                    }
                }
                total
            }
        };
        self.counts_seq.insert(key, total);
        total
    }
}

impl EarleyParser {
    /// First derivation of `s`: lowest alternative index first, then the
    /// shortest span for each leftmost child.
    pub fn parse(&self, s: &str) -> Result<ParseOutcome, EarleyError> {
        let normalized = self.policy().normalize(s);
        let chart = self
            .chart_for(&normalized)
            .map_err(|_| EarleyError::NoParse)?;
        if !chart.is_accepting() {
            return Err(EarleyError::NoParse);
        }
        let n = chart.len() as u32;
        let mut spans = Spans::new(&chart);
        let raw = spans
            .derive_nt(self.start, 0, n)
            .ok_or(EarleyError::NoParse)?;
        let ambiguous = spans.count_nt(self.start, 0, n) > 1;
        let mut converted = self.convert(raw);
        let tree = converted.pop().ok_or(EarleyError::NoParse)?;
        Ok(ParseOutcome { tree, ambiguous })
    }

    /// Maps a compiled derivation back to the source grammar; auxiliary
    /// repetition nodes dissolve into their parent's children.
    fn convert(&self, raw: Raw) -> Vec<DerivationTree> {
        match raw {
            Raw::Leaf(t) => vec![DerivationTree::Leaf(self.terminals[t as usize].raw.clone())],
            Raw::Node { alt, children } => {
                let kids: Vec<DerivationTree> =
                    children.into_iter().flat_map(|c| self.convert(c)).collect();
                let lhs = &self.nts[self.alts[alt as usize].lhs as usize];
                if self.desugared().is_aux(lhs) {
                    kids
                } else {
                    vec![DerivationTree::Node {
                        alt: self.alt_ref(alt),
                        children: kids,
                    }]
                }
            }
        }
    }
}
