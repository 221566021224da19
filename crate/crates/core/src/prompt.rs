//! Prompt assembly for standard, grammar and derivation-tree prompting, and
//! splitting of model output back into grammar and program text.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::earley::{linearize_derivation, EarleyParser};
use crate::grammar::{parse_bnf, Grammar, ParseError};
use crate::specialize::{specialize_parsed, SpecializeError, SpecializeOptions};

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("no exemplars given")]
    NoExemplars,
    #[error("exemplar {0} has no specialized grammar")]
    MissingGrammar(usize),
    #[error("exemplar {0} has no linearized derivation")]
    MissingLinearization(usize),
    #[error("full grammar requested but none supplied")]
    MissingFullGrammar,
    #[error("program label `{0}` not found in output")]
    LabelNotFound(String),
    #[error("exemplars line {line}: {message}")]
    Exemplars { line: usize, message: String },
    #[error("exemplar grammar: {0}")]
    Grammar(#[from] ParseError),
    #[error("exemplar program: {0}")]
    Specialize(#[from] SpecializeError),
    #[error("config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    Standard,
    #[default]
    Grammar,
    DerivationTree,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SectionLabels {
    pub query: String,
    pub rules: String,
    /// Program label after a grammar section.
    pub program: String,
    /// Program label in standard and derivation-tree prompts.
    pub plain_program: String,
    pub begin_rules: String,
    pub end_rules: String,
}

impl Default for SectionLabels {
    fn default() -> Self {
        SectionLabels {
            query: "query:".into(),
            rules: "BNF grammar rules:".into(),
            program: "program based on the BNF grammar rules:".into(),
            plain_program: "program:".into(),
            begin_rules: "[BEGIN RULES]".into(),
            end_rules: "[END RULES]".into(),
        }
    }
}

impl SectionLabels {
    /// Labels used for planning-domain prompts.
    pub fn pddl() -> Self {
        SectionLabels {
            query: "Q:".into(),
            rules: "DSL:".into(),
            program: "A:".into(),
            plain_program: "A:".into(),
            ..SectionLabels::default()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "default" | "semantic_parsing" => Some(SectionLabels::default()),
            "pddl" => Some(SectionLabels::pddl()),
            _ => None,
        }
    }
}

pub const DEFAULT_GRAMMAR_INSTRUCTION: &str = "Translate each query into a program. \
Start by listing the BNF rules the program needs, taken from the language's grammar, \
then write a program that uses only those rules.";
pub const DEFAULT_STANDARD_INSTRUCTION: &str = "Translate each query into a program.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptConfig {
    pub mode: PromptMode,
    /// Empty means the mode's default instruction.
    pub instruction: String,
    pub include_full_grammar: bool,
    pub labels: SectionLabels,
    /// Text between exemplars.
    pub separator: String,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            mode: PromptMode::Grammar,
            instruction: String::new(),
            include_full_grammar: false,
            labels: SectionLabels::default(),
            separator: "\n\n".into(),
        }
    }
}

impl PromptConfig {
    pub fn with_mode(mode: PromptMode) -> Self {
        PromptConfig {
            mode,
            ..PromptConfig::default()
        }
    }

    pub fn instruction_text(&self) -> &str {
        if !self.instruction.is_empty() {
            &self.instruction
        } else if self.mode == PromptMode::Grammar {
            DEFAULT_GRAMMAR_INSTRUCTION
        } else {
            DEFAULT_STANDARD_INSTRUCTION
        }
    }

    /// The label that introduces the program in this mode.
    pub fn program_label(&self) -> &str {
        match self.mode {
            PromptMode::Grammar => &self.labels.program,
            PromptMode::Standard | PromptMode::DerivationTree => &self.labels.plain_program,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, PromptError> {
        serde_json::from_str(text).map_err(|e| PromptError::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self, PromptError> {
        toml::from_str(text).map_err(|e| PromptError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExemplarTriple {
    pub x: String,
    pub spec_grammar: Option<Grammar>,
    /// Verbatim grammar text shown instead of the serialized
    /// `spec_grammar`, e.g. rules annotated with comments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grammar_text: Option<String>,
    pub y: String,
    pub deriv_linearized: Option<String>,
}

impl ExemplarTriple {
    pub fn plain(x: impl Into<String>, y: impl Into<String>) -> Self {
        ExemplarTriple {
            x: x.into(),
            spec_grammar: None,
            grammar_text: None,
            y: y.into(),
            deriv_linearized: None,
        }
    }

    /// Fills in the specialized grammar and linearized derivation of `y`.
    pub fn from_program(x: &str, y: &str, parser: &EarleyParser) -> Result<Self, PromptError> {
        let spec = specialize_parsed(y, parser, SpecializeOptions::default())?;
        Ok(ExemplarTriple {
            x: x.to_string(),
            deriv_linearized: Some(linearize_derivation(&spec.tree)),
            spec_grammar: Some(spec.grammar),
            grammar_text: None,
            y: y.to_string(),
        })
    }

    fn rules_text(&self) -> Option<String> {
        match (&self.grammar_text, &self.spec_grammar) {
            (Some(t), _) => Some(t.trim_end().to_string()),
            (None, Some(g)) => Some(g.to_string().trim_end().to_string()),
            (None, None) => None,
        }
    }
}

#[derive(Debug, Deserialize)]
struct ExemplarRecord {
    x: String,
    y: String,
    grammar: Option<String>,
    deriv: Option<String>,
}

/// Reads exemplars from JSON lines `{x, y, grammar?, deriv?}`. When a full
/// grammar is given, missing grammars and derivations are computed from it.
pub fn load_exemplars(
    jsonl: &str,
    g_full: Option<&Grammar>,
) -> Result<Vec<ExemplarTriple>, PromptError> {
    let parser = g_full
        .map(EarleyParser::new)
        .transpose()
        .map_err(SpecializeError::from)?;
    let mut out = Vec::new();
    for (i, line) in jsonl.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ExemplarRecord =
            serde_json::from_str(line).map_err(|e| PromptError::Exemplars {
                line: i + 1,
                message: e.to_string(),
            })?;
        let mut ex = match &parser {
            Some(p) => ExemplarTriple::from_program(&rec.x, &rec.y, p)?,
            None => ExemplarTriple::plain(&rec.x, &rec.y),
        };
        if let Some(text) = rec.grammar {
            ex.spec_grammar = Some(parse_bnf(&text)?);
            ex.grammar_text = Some(text);
        }
        if let Some(d) = rec.deriv {
            ex.deriv_linearized = Some(d);
        }
        out.push(ex);
    }
    Ok(out)
}

/// Assembles a prompt. In grammar mode the prompt ends with the rules
/// label, so the model continues with a grammar; otherwise it ends with the
/// program label.
pub fn build_prompt(
    cfg: &PromptConfig,
    exemplars: &[ExemplarTriple],
    x_test: &str,
    g_full: Option<&Grammar>,
) -> Result<String, PromptError> {
    if exemplars.is_empty() {
        return Err(PromptError::NoExemplars);
    }
    let l = &cfg.labels;
    let mut blocks = vec![cfg.instruction_text().to_string()];
    if cfg.include_full_grammar {
        let g = g_full.ok_or(PromptError::MissingFullGrammar)?;
        blocks.push(format!("{}\n{}{}", l.begin_rules, g, l.end_rules));
    }
    for (i, ex) in exemplars.iter().enumerate() {
        let body = match cfg.mode {
            PromptMode::Standard => ex.y.clone(),
            PromptMode::DerivationTree => ex
                .deriv_linearized
                .clone()
                .ok_or(PromptError::MissingLinearization(i))?,
            PromptMode::Grammar => {
                let rules = ex.rules_text().ok_or(PromptError::MissingGrammar(i))?;
                format!("{}\n{}\n{}\n{}", l.rules, rules, l.program, ex.y)
            }
        };
        blocks.push(match cfg.mode {
            PromptMode::Grammar => format!("{} {}\n{}", l.query, ex.x, body),
            _ => format!("{} {}\n{}\n{}", l.query, ex.x, l.plain_program, body),
        });
    }
    let tail = match cfg.mode {
        PromptMode::Grammar => &l.rules,
        _ => &l.plain_program,
    };
    blocks.push(format!("{} {}\n{}\n", l.query, x_test, tail));
    Ok(blocks.join(&cfg.separator))
}

/// Text appended to a grammar-mode prompt once the grammar is known, so
/// the model continues with the program.
pub fn program_suffix(cfg: &PromptConfig, grammar_text: &str) -> String {
    format!("{}\n{}\n", grammar_text.trim_end(), cfg.labels.program)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitOutput {
    pub grammar_text: Option<String>,
    pub program_text: String,
}

/// Splits model output into grammar and program text. In grammar mode a
/// missing program label is [`PromptError::LabelNotFound`].
pub fn split_output(text: &str, cfg: &PromptConfig) -> Result<SplitOutput, PromptError> {
    let l = &cfg.labels;
    if cfg.mode != PromptMode::Grammar {
        let body = strip_prefix_label(text.trim_start(), &l.plain_program);
        return Ok(SplitOutput {
            grammar_text: None,
            program_text: first_block(body, &l.query),
        });
    }
    let at = text
        .find(&l.program)
        .ok_or_else(|| PromptError::LabelNotFound(l.program.clone()))?;
    let mut grammar = strip_prefix_label(text[..at].trim(), &l.rules).trim();
    grammar = strip_prefix_label(grammar, &l.begin_rules).trim();
    if let Some(g) = grammar.strip_suffix(l.end_rules.as_str()) {
        grammar = g.trim_end();
    }
    Ok(SplitOutput {
        grammar_text: Some(grammar.to_string()),
        program_text: first_block(&text[at + l.program.len()..], &l.query),
    })
}

fn strip_prefix_label<'a>(text: &'a str, label: &str) -> &'a str {
    text.strip_prefix(label).unwrap_or(text)
}

/// The program: everything up to a blank line or the next query label.
fn first_block(text: &str, query_label: &str) -> String {
    let text = text.trim_start();
    let mut end = text.find("\n\n").unwrap_or(text.len());
    if let Some(q) = text.find(&format!("\n{query_label}")) {
        end = end.min(q);
    }
    text[..end].trim().to_string()
}

/// Whitespace word count, used as a rough prompt-size measure.
pub fn estimate_tokens(prompt: &str) -> usize {
    prompt.split_whitespace().count()
}

/// Recovers the program text from a linearized derivation by joining its
/// quoted leaves with single spaces.
pub fn delinearize(text: &str) -> Option<String> {
    let mut leaves = Vec::new();
    let mut depth = 0i64;
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        match c {
            '[' => {
                depth += 1;
                // skip the node label
                for n in chars.by_ref() {
                    if n == ' ' || n == ']' {
                        if n == ']' {
                            depth -= 1;
                        }
                        break;
                    }
                }
            }
            ']' => depth -= 1,
            '"' => {
                let mut leaf = String::new();
                loop {
                    match chars.next()? {
                        '"' => break,
                        '\\' => match chars.next()? {
                            'n' => leaf.push('\n'),
                            't' => leaf.push('\t'),
                            other => leaf.push(other),
                        },
                        ch => leaf.push(ch),
                    }
                }
                leaves.push(leaf);
            }
            _ => {}
        }
        if depth < 0 {
            return None;
        }
    }
    (depth == 0 && !leaves.is_empty()).then(|| leaves.join(" "))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn calendar() -> Grammar {
        parse_bnf(
            r#"event ::= "QueryEvent(" constraint ")" ;; constraint ::= "(attendee_?" attendee+ ")" ;; attendee ::= "Bob" | "Carol""#,
        )
        .unwrap()
    }

    #[test]
    fn grammar_layout() {
        let g = calendar();
        let p = EarleyParser::new(&g).unwrap();
        let ex = ExemplarTriple::from_program("who", "QueryEvent((attendee_? Bob))", &p).unwrap();
        let prompt = build_prompt(&PromptConfig::default(), &[ex], "and Carol?", Some(&g)).unwrap();
        let expected = format!(
            "{DEFAULT_GRAMMAR_INSTRUCTION}\n\nquery: who\nBNF grammar rules:\n\
             event ::= \"QueryEvent(\" constraint \")\"\n\
             constraint ::= \"(attendee_?\" attendee \")\"\n\
             attendee ::= \"Bob\"\n\
             program based on the BNF grammar rules:\nQueryEvent((attendee_? Bob))\n\n\
             query: and Carol?\nBNF grammar rules:\n"
        );
        assert_eq!(prompt, expected);
    }

    #[test]
    fn standard_layout_and_full_grammar() {
        let g = calendar();
        let ex = ExemplarTriple::plain("who", "QueryEvent((attendee_? Bob))");
        let cfg = PromptConfig::with_mode(PromptMode::Standard);
        let prompt = build_prompt(&cfg, std::slice::from_ref(&ex), "q", None).unwrap();
        assert_eq!(
            prompt,
            format!("{DEFAULT_STANDARD_INSTRUCTION}\n\nquery: who\nprogram:\nQueryEvent((attendee_? Bob))\n\nquery: q\nprogram:\n")
        );
        let cfg = PromptConfig {
            include_full_grammar: true,
            ..cfg
        };
        assert!(matches!(
            build_prompt(&cfg, std::slice::from_ref(&ex), "q", None),
            Err(PromptError::MissingFullGrammar)
        ));
        let prompt = build_prompt(&cfg, &[ex], "q", Some(&g)).unwrap();
        let begin = prompt.find("[BEGIN RULES]").unwrap();
        assert!(begin < prompt.find("query:").unwrap());
    }

    #[test]
    fn missing_fields() {
        let ex = ExemplarTriple::plain("a", "b");
        assert!(matches!(
            build_prompt(
                &PromptConfig::default(),
                std::slice::from_ref(&ex),
                "q",
                None
            ),
            Err(PromptError::MissingGrammar(0))
        ));
        assert!(matches!(
            build_prompt(
                &PromptConfig::with_mode(PromptMode::DerivationTree),
                &[ex],
                "q",
                None
            ),
            Err(PromptError::MissingLinearization(0))
        ));
        assert!(matches!(
            build_prompt(&PromptConfig::default(), &[], "q", None),
            Err(PromptError::NoExemplars)
        ));
    }

    #[test]
    fn split_grammar_output() {
        let cfg = PromptConfig::default();
        let out = "BNF grammar rules:\ns ::= \"a\"\nprogram based on the BNF grammar rules:\n a \n\nquery: next";
        let s = split_output(out, &cfg).unwrap();
        assert_eq!(s.grammar_text.as_deref(), Some("s ::= \"a\""));
        assert_eq!(s.program_text, "a");
        assert!(matches!(
            split_output("s ::= \"a\"", &cfg),
            Err(PromptError::LabelNotFound(_))
        ));
    }

    #[test]
    fn split_standard_output() {
        let cfg = PromptConfig::with_mode(PromptMode::Standard);
        let s = split_output("  answer(x)\n", &cfg).unwrap();
        assert_eq!(s.grammar_text, None);
        assert_eq!(s.program_text, "answer(x)");
    }

    #[test]
    fn config_files() {
        let cfg =
            PromptConfig::from_toml("mode = \"standard\"\n[labels]\nquery = \"Q:\"\n").unwrap();
        assert_eq!(cfg.mode, PromptMode::Standard);
        assert_eq!(cfg.labels.query, "Q:");
        assert_eq!(cfg.labels.rules, "BNF grammar rules:");
        let cfg = PromptConfig::from_json(r#"{"mode": "derivation_tree"}"#).unwrap();
        assert_eq!(cfg.mode, PromptMode::DerivationTree);
        assert!(PromptConfig::from_json(r#"{"mode": "chat"}"#).is_err());
    }

    #[test]
    fn delinearize_leaves() {
        assert_eq!(
            delinearize(r#"[c "(attendee_?" [a "FindManager(" [a "Jean"] ")"] ")"]"#).as_deref(),
            Some("(attendee_? FindManager( Jean ) )")
        );
        assert_eq!(delinearize("[c \"x\""), None);
        assert_eq!(delinearize("nothing"), None);
    }

    #[test]
    fn token_estimate() {
        assert_eq!(estimate_tokens("a b\n c  "), 3);
    }
}
