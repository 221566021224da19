use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{Capabilities, Completion, LanguageModel, LmError, LmRequest, ScoreRequest};
use crate::corpus::Corpus;
use crate::earley::{linearize_derivation, EarleyParser};
use crate::grammar::Grammar;
use crate::prompt::SectionLabels;
use crate::sample::SentenceSampler;
use crate::specialize::{specialize_parsed, SpecializeError, SpecializeOptions};

fn derive_seed(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

fn request_rng(req: &LmRequest, seed: u64) -> ChaCha8Rng {
    let s = derive_seed(&[
        req.prompt.as_bytes(),
        &req.seed.unwrap_or(0).to_le_bytes(),
        &seed.to_le_bytes(),
    ]);
    ChaCha8Rng::seed_from_u64(s)
}

/// Replays fixed responses in order; the last one repeats once the script
/// runs out. Scores come from a table or default to a constant per-token
/// log-probability.
pub struct ScriptedLm {
    responses: Vec<String>,
    next: Mutex<usize>,
    scores: HashMap<String, f64>,
    prompt_scores: HashMap<(String, String), f64>,
    token_logprob: f64,
    logprobs: bool,
}

impl ScriptedLm {
    pub fn new(responses: impl IntoIterator<Item = impl Into<String>>) -> Self {
        ScriptedLm {
            responses: responses.into_iter().map(Into::into).collect(),
            next: Mutex::new(0),
            scores: HashMap::new(),
            prompt_scores: HashMap::new(),
            token_logprob: -1.0,
            logprobs: true,
        }
    }

    /// Reads a transcript: JSON lines with a `response` (or `text`) field,
    /// or plain JSON strings.
    pub fn from_transcript(jsonl: &str) -> Result<Self, LmError> {
        let mut responses = Vec::new();
        for (i, line) in jsonl.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let v: serde_json::Value = serde_json::from_str(line)
                .map_err(|e| LmError::InvalidRequest(format!("transcript line {}: {e}", i + 1)))?;
            let text = match &v {
                serde_json::Value::String(s) => Some(s.clone()),
                serde_json::Value::Object(o) => {
                    o.get("response").or_else(|| o.get("text")).and_then(|t| {
                        t.as_str()
                            .map(String::from)
                            .or_else(|| t.get("text")?.as_str().map(String::from))
                    })
                }
                _ => None,
            };
            responses.push(text.ok_or_else(|| {
                LmError::InvalidRequest(format!("transcript line {}: no response text", i + 1))
            })?);
        }
        Ok(ScriptedLm::new(responses))
    }

    /// Score for a continuation regardless of prompt.
    pub fn with_score(mut self, continuation: impl Into<String>, score: f64) -> Self {
        self.scores.insert(continuation.into(), score);
        self
    }

    pub fn with_prompt_score(
        mut self,
        prompt: impl Into<String>,
        continuation: impl Into<String>,
        score: f64,
    ) -> Self {
        self.prompt_scores
            .insert((prompt.into(), continuation.into()), score);
        self
    }

    pub fn with_token_logprob(mut self, lp: f64) -> Self {
        self.token_logprob = lp;
        self
    }

    pub fn without_logprobs(mut self) -> Self {
        self.logprobs = false;
        self
    }
}

impl LanguageModel for ScriptedLm {
    fn name(&self) -> String {
        "scripted".into()
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            logprobs: self.logprobs,
        }
    }

    fn complete(&self, _req: &LmRequest) -> Result<Completion, LmError> {
        let mut next = self.next.lock().expect("script lock");
        let text = self
            .responses
            .get(*next)
            .or(self.responses.last())
            .cloned()
            .unwrap_or_default();
        *next += 1;
        Ok(Completion::text(text))
    }

    fn score(&self, req: &ScoreRequest) -> Result<f64, LmError> {
        if !self.logprobs {
            return Err(LmError::CapabilityUnavailable("score continuations"));
        }
        if let Some(&s) = self
            .prompt_scores
            .get(&(req.prompt.clone(), req.continuation.clone()))
            .or_else(|| self.scores.get(&req.continuation))
        {
            return Ok(s);
        }
        // mean of identical per-token values
        Ok(self.token_logprob)
    }
}

/// Emits random sentences of a grammar, ignoring the prompt's content
/// except as a source of randomness.
pub struct OracleLm {
    grammar: Grammar,
    seed: u64,
    /// Per-character penalty used by `score`.
    pub char_penalty: f64,
}

impl OracleLm {
    pub fn new(grammar: Grammar, seed: u64) -> Self {
        OracleLm {
            grammar,
            seed,
            char_penalty: 0.1,
        }
    }

    pub fn grammar(&self) -> &Grammar {
        &self.grammar
    }
}

impl LanguageModel for OracleLm {
    fn name(&self) -> String {
        format!("oracle-{}", self.seed)
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { logprobs: true }
    }

    fn complete(&self, req: &LmRequest) -> Result<Completion, LmError> {
        let mut rng = request_rng(req, self.seed);
        let text = SentenceSampler::new(&self.grammar)
            .sample(&mut rng)
            .unwrap_or_default();
        Ok(Completion::text(text))
    }

    fn score(&self, req: &ScoreRequest) -> Result<f64, LmError> {
        Ok(-self.char_penalty * req.continuation.chars().count() as f64)
    }
}

/// What [`GoldLm`] should produce for one query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldTarget {
    pub grammar_text: String,
    pub program: String,
    pub derivation: String,
}

/// Answers every known query with its gold grammar and program in the
/// prompt layout, continuing from whatever part of the answer the prompt
/// already contains.
pub struct GoldLm {
    targets: HashMap<String, GoldTarget>,
    labels: SectionLabels,
}

impl GoldLm {
    pub fn new(targets: HashMap<String, GoldTarget>, labels: SectionLabels) -> Self {
        GoldLm { targets, labels }
    }

    pub fn from_corpus(corpus: &Corpus, labels: SectionLabels) -> Result<Self, SpecializeError> {
        let parser = EarleyParser::new(&corpus.grammar)?;
        let mut targets = HashMap::new();
        for e in &corpus.examples {
            let spec = specialize_parsed(&e.y_gold, &parser, SpecializeOptions::default())?;
            targets.insert(
                e.x.clone(),
                GoldTarget {
                    grammar_text: spec.grammar.to_string().trim_end().to_string(),
                    program: e.y_gold.clone(),
                    derivation: linearize_derivation(&spec.tree),
                },
            );
        }
        Ok(GoldLm::new(targets, labels))
    }

    /// The text the model "wants" to write after `prompt`.
    fn remainder(&self, prompt: &str) -> String {
        let marker = format!("{} ", self.labels.query);
        let line_start = match prompt.rfind(&format!("\n{marker}")) {
            Some(i) => i + 1,
            None if prompt.starts_with(&marker) => 0,
            None => return String::new(),
        };
        let rest = &prompt[line_start + marker.len()..];
        let (x, after) = rest.split_once('\n').unwrap_or((rest, ""));
        let Some(t) = self.targets.get(x.trim()) else {
            return String::new();
        };
        let l = &self.labels;
        if after.starts_with(l.rules.as_str()) {
            let program_at = format!("\n{}\n", l.program);
            if let Some(i) = after.find(&program_at) {
                return continue_from(&after[i + program_at.len()..], &format!("{}\n", t.program));
            }
            let full = format!(
                "{}\n{}\n{}\n{}\n",
                l.rules, t.grammar_text, l.program, t.program
            );
            return continue_from(after, &full);
        }
        let body = if prompt.contains(&format!("\n{}\n[", l.plain_program)) {
            &t.derivation
        } else {
            &t.program
        };
        continue_from(after, &format!("{}\n{body}\n", l.plain_program))
    }
}

/// The part of `target` after its longest common prefix with `written`.
fn continue_from(written: &str, target: &str) -> String {
    let common: usize = written
        .chars()
        .zip(target.chars())
        .take_while(|(a, b)| a == b)
        .map(|(a, _)| a.len_utf8())
        .sum();
    target[common..].to_string()
}

impl LanguageModel for GoldLm {
    fn name(&self) -> String {
        "gold".into()
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { logprobs: true }
    }

    fn complete(&self, req: &LmRequest) -> Result<Completion, LmError> {
        Ok(Completion::text(self.remainder(&req.prompt)))
    }

    fn score(&self, req: &ScoreRequest) -> Result<f64, LmError> {
        let want = self.remainder(&req.prompt);
        if want.trim_start().starts_with(req.continuation.trim_start()) {
            Ok(-0.1)
        } else {
            Ok(-5.0)
        }
    }
}

/// Junk spliced into outputs by [`AdversarialLm`].
pub const CORRUPTION_TOKENS: [&str; 10] = [
    "Friday", "@@", "(", ")", "???", "'", "\"", "NULL", "::=", "Jean's",
];

/// Wraps another model and corrupts its completions.
pub struct AdversarialLm {
    inner: Arc<dyn LanguageModel>,
    /// Chance of corrupting each whitespace-separated piece.
    pub rate: f64,
    seed: u64,
}

impl AdversarialLm {
    pub fn new(inner: Arc<dyn LanguageModel>, rate: f64, seed: u64) -> Self {
        AdversarialLm {
            inner,
            rate: rate.clamp(0.0, 1.0),
            seed,
        }
    }

    pub fn corrupt<R: Rng + ?Sized>(&self, text: &str, rng: &mut R) -> String {
        let mut pieces: Vec<String> = text.split(' ').map(String::from).collect();
        let mut changed = false;
        let mut i = 0;
        while i < pieces.len() {
            if rng.random_bool(self.rate) {
                changed = true;
                let junk = CORRUPTION_TOKENS
                    .choose(rng)
                    .expect("non-empty")
                    .to_string();
                match rng.random_range(0..5) {
                    0 => pieces.insert(i, junk),
                    1 => {
                        pieces.remove(i);
                        continue;
                    }
                    2 => pieces[i] = junk,
                    3 => {
                        let p = &mut pieces[i];
                        if let Some((at, _)) = p
                            .char_indices()
                            .nth(rng.random_range(0..p.chars().count().max(1)))
                        {
                            p.remove(at);
                        }
                    }
                    _ => {
                        pieces.truncate(i);
                        break;
                    }
                }
                i += 1;
            }
            i += 1;
        }
        if !changed && self.rate > 0.0 {
            pieces.push(
                CORRUPTION_TOKENS
                    .choose(rng)
                    .expect("non-empty")
                    .to_string(),
            );
        }
        pieces.join(" ")
    }
}

impl LanguageModel for AdversarialLm {
    fn name(&self) -> String {
        format!(
            "adversarial-{}-{}-{}",
            self.rate,
            self.seed,
            self.inner.name()
        )
    }

    fn capabilities(&self) -> Capabilities {
        self.inner.capabilities()
    }

    fn complete(&self, req: &LmRequest) -> Result<Completion, LmError> {
        let clean = self.inner.complete(req)?;
        if self.rate == 0.0 {
            return Ok(clean);
        }
        let mut rng = request_rng(req, self.seed);
        Ok(Completion::text(self.corrupt(&clean.text, &mut rng)))
    }

    fn score(&self, req: &ScoreRequest) -> Result<f64, LmError> {
        self.inner.score(req)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, LmError> {
        self.inner.embed(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::earley::{recognize, Recognition};
    use crate::grammar::parse_bnf;
    use crate::lm::Gateway;
    use crate::prompt::{build_prompt, ExemplarTriple, PromptConfig, PromptMode};

    #[test]
    fn scripted_scores() {
        let lm = ScriptedLm::new(["x"]).with_prompt_score("p", "c", -0.5);
        let req = |p: &str, c: &str| ScoreRequest {
            prompt: p.into(),
            continuation: c.into(),
        };
        assert_eq!(lm.score(&req("p", "c")).unwrap(), -0.5);
        assert_eq!(lm.score(&req("q", "c d e")).unwrap(), -1.0);
    }

    #[test]
    fn transcript_formats() {
        let lm = ScriptedLm::from_transcript(
            "\"a\"\n{\"response\": \"b\"}\n{\"response\": {\"text\": \"c\"}}\n",
        )
        .unwrap();
        assert_eq!(lm.responses, vec!["a", "b", "c"]);
        assert!(ScriptedLm::from_transcript("{\"other\": 1}").is_err());
    }

    #[test]
    fn oracle_outputs_are_members() {
        let g = parse_bnf(r#"s ::= "(" s* ")" | "x""#).unwrap();
        let gw = Gateway::new(OracleLm::new(g.clone(), 5));
        for i in 0..50 {
            let r = gw.complete(&LmRequest::new(format!("p{i}"))).unwrap();
            assert_eq!(recognize(&r.text, &g), Recognition::Complete, "{}", r.text);
        }
    }

    #[test]
    fn adversarial_always_changes_at_full_rate() {
        let g = parse_bnf(r#"s ::= "a" "b" "c""#).unwrap();
        let lm = AdversarialLm::new(Arc::new(OracleLm::new(g, 1)), 1.0, 9);
        for i in 0..20 {
            let out = lm.complete(&LmRequest::new(format!("p{i}"))).unwrap().text;
            assert_ne!(out, "a b c");
        }
    }

    #[test]
    fn gold_follows_layout() {
        let corpus = crate::corpus::builtin("calendar").unwrap();
        let gold = GoldLm::from_corpus(&corpus, SectionLabels::default()).unwrap();
        let parser = EarleyParser::new(&corpus.grammar).unwrap();
        let train: Vec<ExemplarTriple> = corpus
            .train()
            .iter()
            .map(|e| ExemplarTriple::from_program(&e.x, &e.y_gold, &parser).unwrap())
            .collect();
        let test = &corpus.test()[0];
        let cfg = PromptConfig::default();
        let prompt = build_prompt(&cfg, &train, &test.x, None).unwrap();
        let out = gold.complete(&LmRequest::new(prompt.clone())).unwrap().text;
        let split = crate::prompt::split_output(&out, &cfg).unwrap();
        assert_eq!(split.program_text, test.y_gold);

        // continuing a partial program
        let partial = format!(
            "{prompt}{}",
            crate::prompt::program_suffix(&cfg, split.grammar_text.as_deref().unwrap())
        );
        let out = gold
            .complete(&LmRequest::new(format!("{partial}CreateEvent(")))
            .unwrap()
            .text;
        assert_eq!(format!("CreateEvent({}", out.trim_end()), test.y_gold);

        let cfg = PromptConfig::with_mode(PromptMode::DerivationTree);
        let prompt = build_prompt(&cfg, &train, &test.x, None).unwrap();
        let out = gold.complete(&LmRequest::new(prompt)).unwrap().text;
        assert!(out.starts_with("[event"), "{out}");
    }
}
