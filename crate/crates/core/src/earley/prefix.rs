use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::chart::Chart;
use super::{is_word_char, CSym, EarleyError, EarleyParser};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefixAnalysis {
    /// Longest viable prefix of the (normalized) input that ends between
    /// whole terminals.
    pub prefix: String,
    /// Terminals `w` (grammar text) such that `prefix + w` is viable.
    pub continuations: BTreeSet<String>,
    /// Number of characters of the normalized input that were viable;
    /// `None` when the whole input is viable.
    pub failure_index: Option<usize>,
}

impl EarleyParser {
    pub fn longest_valid_prefix(&self, s: &str) -> PrefixAnalysis {
        self.longest_valid_prefix_from(s, 0)
    }

    /// Like [`Self::longest_valid_prefix`], but never cuts below `floor`
    /// characters of the normalized input. The first `floor` characters must
    /// already be a viable prefix.
    pub fn longest_valid_prefix_from(&self, s: &str, floor: usize) -> PrefixAnalysis {
        let normalized = self.policy().normalize_prefix(s);
        let chars: Vec<char> = normalized.chars().collect();
        let mut chart = self.chart();
        let failure_index = chart.push_str(&normalized).err();
        let viable = chart.len();

        // Cutting at the failure point is refused when it falls inside a
        // word: for `Jean's` the prefix should stop before `Jean`, not
        // after it. Earlier positions were consumed, so they are fine.
        let admissible = |j: usize| {
            j < viable
                || j == 0
                || j >= chars.len()
                || !(is_word_char(chars[j - 1]) && is_word_char(chars[j]))
        };
        let floor = floor.min(viable);
        let mut cut = floor;
        for j in (floor..=viable).rev() {
            if chart.is_boundary(j) && admissible(j) {
                cut = j;
                break;
            }
        }
        chart.truncate(cut);
        let continuations = self.continuations_at(&mut chart);
        PrefixAnalysis {
            prefix: chars[..cut].iter().collect(),
            continuations,
            failure_index,
        }
    }

    pub fn valid_continuations(&self, prefix: &str) -> Result<BTreeSet<String>, EarleyError> {
        let normalized = self.policy().normalize_prefix(prefix);
        let mut chart = self.chart();
        chart
            .push_str(&normalized)
            .map_err(|_| EarleyError::NotViable(prefix.to_string()))?;
        Ok(self.continuations_at(&mut chart))
    }

    /// Whole terminals that some item is ready to start at the end of
    /// `chart`. A terminal that merely matches the rest of a partly
    /// scanned one (`)` inside `))`) does not count.
    pub(crate) fn continuations_at(&self, chart: &mut Chart<'_>) -> BTreeSet<String> {
        chart
            .startable_terminals()
            .map(|t| self.terminal_text(t).to_string())
            .collect()
    }

    /// Shortest string `s` (ties broken by character order) such that
    /// `prefix + s` is a sentence. Terminals are concatenated with no
    /// separating whitespace.
    pub fn shortest_completion(&self, prefix: &str) -> Result<String, EarleyError> {
        let normalized = self.policy().normalize_prefix(prefix);
        let mut chart = self.chart();
        chart
            .push_str(&normalized)
            .map_err(|_| EarleyError::NotViable(prefix.to_string()))?;
        // Dropping a trailing separator can give a shorter completion, but
        // only if that completion does not rely on gluing onto a terminal
        // the space had closed off.
        if let Some(trimmed_text) = normalized.strip_suffix(' ') {
            let mut trimmed = self.chart();
            if trimmed.push_str(trimmed_text).is_ok() {
                let rest = self.completion_of(&trimmed);
                if self.is_member(&format!("{normalized}{rest}")) {
                    return Ok(rest);
                }
            }
        }
        Ok(self.completion_of(&chart))
    }

    pub(crate) fn completion_of(&self, chart: &Chart<'_>) -> String {
        let min = self.min_yields();
        let rest_of = |alt: u32, dot: usize, off: usize| -> String {
            let syms = &self.alts[alt as usize].syms;
            let mut s = String::new();
            for (k, sym) in syms.iter().enumerate().skip(dot) {
                match *sym {
                    CSym::T(t) => {
                        let chars = &self.terminals[t as usize].chars;
                        let from = if k == dot { off } else { 0 };
                        s.extend(&chars[from..]);
                    }
                    CSym::N(n) => s.push_str(&min[n as usize]),
                }
            }
            s
        };

        // after[j][n]: cheapest text that finishes the sentence once a
        // nonterminal n started at position j has been completed.
        let mut after: Vec<HashMap<u32, String>> = Vec::with_capacity(chart.sets.len());
        for (j, set) in chart.sets.iter().enumerate() {
            let mut here: HashMap<u32, String> = HashMap::new();
            if j == 0 {
                here.insert(self.start, String::new());
            }
            loop {
                let mut changed = false;
                for it in &set.items {
                    let alt = &self.alts[it.alt as usize];
                    let Some(&CSym::N(n)) = alt.syms.get(it.dot as usize) else {
                        continue;
                    };
                    let parent_tail = if it.origin as usize == j {
                        here.get(&alt.lhs).cloned()
                    } else {
                        after[it.origin as usize].get(&alt.lhs).cloned()
                    };
                    let Some(parent_tail) = parent_tail else {
                        continue;
                    };
                    let candidate = rest_of(it.alt, it.dot as usize + 1, 0) + &parent_tail;
                    if better(&candidate, here.get(&n)) {
                        here.insert(n, candidate);
                        changed = true;
                    }
                }
                if !changed {
                    break;
                }
            }
            after.push(here);
        }

        let last = chart.sets.len() - 1;
        let mut best: Option<String> = None;
        for it in &chart.sets[last].items {
            let lhs = self.alts[it.alt as usize].lhs;
            let tail = if it.origin as usize == last {
                after[last].get(&lhs)
            } else {
                after[it.origin as usize].get(&lhs)
            };
            let Some(tail) = tail else { continue };
            let candidate = rest_of(it.alt, it.dot as usize, it.off as usize) + tail;
            if better(&candidate, best.as_ref()) {
                best = Some(candidate);
            }
        }
        best.unwrap_or_default()
    }

    /// Shortest yield of every nonterminal, ties broken by character order.
    fn min_yields(&self) -> Vec<String> {
        let mut min: Vec<Option<String>> = vec![None; self.nts.len()];
        loop {
            let mut changed = false;
            for alt in &self.alts {
                let mut s = String::new();
                let mut ok = true;
                for sym in &alt.syms {
                    match *sym {
                        CSym::T(t) => s.extend(&self.terminals[t as usize].chars),
                        CSym::N(n) => match &min[n as usize] {
                            Some(y) => s.push_str(y),
                            None => {
                                ok = false;
                                break;
                            }
                        },
                    }
                }
                if ok && better(&s, min[alt.lhs as usize].as_ref()) {
                    min[alt.lhs as usize] = Some(s);
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        min.into_iter().map(Option::unwrap_or_default).collect()
    }
}

fn better(candidate: &str, current: Option<&String>) -> bool {
    match current {
        None => true,
        Some(c) => (candidate.chars().count(), candidate) < (c.chars().count(), c.as_str()),
    }
}
