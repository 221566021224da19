use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use grammar_steer_core::corpus::{self, Corpus};
use grammar_steer_core::decode::{
    constrained_decode, grammar_prompted_decode, standard_decode, Constraint, DecodeTrace,
};
use grammar_steer_core::earley::{EarleyParser, Recognition};
use grammar_steer_core::eval::{parse_methods, run_eval, EvalConfig};
use grammar_steer_core::grammar::{parse_bnf, validate, Grammar};
use grammar_steer_core::lm::{
    AdversarialLm, Gateway, GoldLm, HttpConfig, HttpProvider, LanguageModel, OracleLm, ScriptedLm,
    TranscriptCache,
};
use grammar_steer_core::metagrammar::{build_metagrammar_with, MetaConfig};
use grammar_steer_core::prompt::{build_prompt, load_exemplars, split_output, PromptMode};
use grammar_steer_core::specialize::{
    check_property1, check_property2, specialize_with, SpecializeOptions,
};

#[derive(Parser)]
#[command(
    name = "grammar-steer",
    version,
    about = "Specialized-grammar prompting and constrained decoding"
)]
struct Cli {
    /// Machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Directory for the LM transcript cache.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// TOML (or .json) file with `prompt` and `decode` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mock {
    Scripted,
    Oracle,
    Adversarial,
    Gold,
    Http,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DecodeMode {
    Standard,
    Grammar,
}

#[derive(clap::Args)]
struct ProviderArgs {
    #[arg(long, value_enum, default_value = "oracle")]
    mock: Mock,
    /// Transcript for the scripted mock: JSON lines of strings or {response}.
    #[arg(long)]
    transcript: Option<PathBuf>,
    /// Corruption rate of the adversarial mock.
    #[arg(long, default_value_t = 0.3)]
    rate: f64,
    /// Stop after this many completion calls.
    #[arg(long)]
    budget: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse a grammar file and print it in canonical form.
    Parse { grammar: PathBuf },
    /// Report undefined, unreachable and unproductive symbols.
    Validate { grammar: PathBuf },
    /// Print the minimal specialized grammar of a program.
    Specialize {
        grammar: PathBuf,
        program: PathBuf,
        /// Also verify that the program parses and no rule is removable.
        #[arg(long)]
        check: bool,
        #[arg(long)]
        keep_extended: bool,
    },
    /// Print the metagrammar, or check a candidate grammar against it.
    Metagrammar {
        grammar: PathBuf,
        #[arg(long)]
        check: Option<PathBuf>,
        #[arg(long)]
        max_rep: Option<usize>,
    },
    /// Longest valid prefix of a string and the terminals that may follow.
    Prefix { grammar: PathBuf, string: String },
    /// Check that a program file is in the grammar's language.
    Check { grammar: PathBuf, program: PathBuf },
    /// Build a few-shot prompt.
    Prompt {
        #[arg(long)]
        exemplars: PathBuf,
        #[arg(long)]
        query: String,
        /// Full grammar, used to fill in missing exemplar grammars.
        #[arg(long)]
        grammar: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<PromptModeArg>,
    },
    /// Decode a program for one query.
    Decode {
        #[arg(long, value_enum, default_value = "grammar")]
        mode: DecodeMode,
        #[arg(long)]
        grammar: PathBuf,
        #[arg(long)]
        exemplars: PathBuf,
        #[arg(long)]
        query: String,
        #[command(flatten)]
        provider: ProviderArgs,
    },
    /// Evaluate methods on a corpus directory or bundled corpus name.
    Eval {
        #[arg(long)]
        corpus: String,
        #[arg(long, default_value = "all")]
        methods: String,
        #[command(flatten)]
        provider: ProviderArgs,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        limit: Option<usize>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PromptModeArg {
    Standard,
    Grammar,
    DerivationTree,
}

impl From<PromptModeArg> for PromptMode {
    fn from(m: PromptModeArg) -> Self {
        match m {
            PromptModeArg::Standard => PromptMode::Standard,
            PromptModeArg::Grammar => PromptMode::Grammar,
            PromptModeArg::DerivationTree => PromptMode::DerivationTree,
        }
    }
}

/// A failure with its exit code and optional JSON payload for stdout.
struct Failure {
    code: u8,
    message: String,
    payload: Option<serde_json::Value>,
}

impl Failure {
    fn domain(message: impl ToString) -> Self {
        Failure {
            code: 1,
            message: message.to_string(),
            payload: None,
        }
    }

    fn usage(message: impl ToString) -> Self {
        Failure {
            code: 2,
            message: message.to_string(),
            payload: None,
        }
    }
}

type Outcome = Result<String, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    env_logger::Builder::new()
        .filter_level(cli.log_level)
        .init();
    match run(&cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            if let Some(p) = f.payload {
                println!("{}", serde_json::to_string_pretty(&p).expect("json"));
            }
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    if path == Path::new("-") {
        let mut s = String::new();
        io::stdin()
            .read_to_string(&mut s)
            .map_err(Failure::domain)?;
        return Ok(s);
    }
    fs::read_to_string(path).map_err(|e| Failure::domain(format!("{}: {e}", path.display())))
}

fn read_grammar(path: &Path) -> Result<Grammar, Failure> {
    parse_bnf(&read(path)?).map_err(|e| Failure::domain(format!("{}: {e}", path.display())))
}

fn read_program(path: &Path) -> Result<String, Failure> {
    Ok(read(path)?.trim().to_string())
}

fn pretty(v: &impl serde::Serialize) -> String {
    format!("{}\n", serde_json::to_string_pretty(v).expect("json"))
}

fn load_config(cli: &Cli) -> Result<EvalConfig, Failure> {
    let Some(path) = &cli.config else {
        return Ok(EvalConfig::default());
    };
    let text = read(path)?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    let mut cfg: EvalConfig =
        parsed.map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    if cfg.decode.max_correction_rounds == 0 || cfg.decode.prefilter_k == 0 {
        return Err(Failure::usage(
            "max_correction_rounds and prefilter_k must be at least 1",
        ));
    }
    if cfg.decode.seed.is_none() {
        cfg.decode.seed = Some(cli.seed);
    }
    Ok(cfg)
}

fn gateway(
    cli: &Cli,
    args: &ProviderArgs,
    grammar: &Grammar,
    corpus: Option<&Corpus>,
) -> Result<Gateway, Failure> {
    let gold = || -> Result<Arc<dyn LanguageModel>, Failure> {
        let c = corpus.ok_or_else(|| Failure::usage("the gold mock needs a corpus (eval only)"))?;
        Ok(Arc::new(
            GoldLm::from_corpus(c, load_config(cli)?.prompt.labels).map_err(Failure::domain)?,
        ))
    };
    let lm: Arc<dyn LanguageModel> = match args.mock {
        Mock::Scripted => {
            let path = args
                .transcript
                .as_ref()
                .ok_or_else(|| Failure::usage("--mock scripted needs --transcript"))?;
            Arc::new(ScriptedLm::from_transcript(&read(path)?).map_err(Failure::domain)?)
        }
        Mock::Oracle => Arc::new(OracleLm::new(grammar.clone(), cli.seed)),
        Mock::Gold => gold()?,
        Mock::Adversarial => {
            let inner = match corpus {
                Some(_) => gold()?,
                None => Arc::new(OracleLm::new(grammar.clone(), cli.seed)),
            };
            Arc::new(AdversarialLm::new(inner, args.rate, cli.seed))
        }
        Mock::Http => Arc::new(HttpProvider::new(
            HttpConfig::from_env().map_err(Failure::usage)?,
        )),
    };
    let mut gw = Gateway::from_arc(lm);
    if let Some(dir) = &cli.cache_dir {
        gw = gw.with_cache(
            TranscriptCache::open(dir)
                .map_err(|e| Failure::domain(format!("{}: {e}", dir.display())))?,
        );
    }
    if let Some(b) = args.budget {
        gw = gw.with_budget(b);
    }
    Ok(gw)
}

fn run(cli: &Cli) -> Outcome {
    match &cli.cmd {
        Cmd::Parse { grammar } => {
            let g = read_grammar(grammar)?;
            Ok(if cli.json { pretty(&g) } else { g.to_string() })
        }
        Cmd::Validate { grammar } => {
            let g = read_grammar(grammar)?;
            let diags = validate(&g);
            let out = if cli.json {
                pretty(&diags)
            } else {
                diags.iter().map(|d| format!("{d}\n")).collect()
            };
            if diags.is_empty() {
                Ok(if cli.json { out } else { "ok\n".into() })
            } else {
                Err(Failure {
                    code: 1,
                    message: format!("{} problem(s)\n{}", diags.len(), out.trim_end()),
                    payload: cli
                        .json
                        .then(|| serde_json::to_value(&diags).expect("json")),
                })
            }
        }
        Cmd::Specialize {
            grammar,
            program,
            check,
            keep_extended,
        } => {
            let g = read_grammar(grammar)?;
            let y = read_program(program)?;
            let opts = SpecializeOptions {
                keep_extended: *keep_extended,
            };
            let spec = specialize_with(&y, &g, opts).map_err(Failure::domain)?;
            if *check {
                let (p1, p2) = (check_property1(&spec, &y), check_property2(&spec, &y));
                if !(p1 && p2) {
                    return Err(Failure::domain(format!(
                        "property check failed (derivable: {p1}, minimal: {p2})"
                    )));
                }
            }
            Ok(if cli.json {
                pretty(&json!({
                    "grammar": spec.grammar.to_string(),
                    "used_alts": spec.used_alts.iter().map(|a| a.to_string()).collect::<Vec<_>>(),
                    "checked": check,
                }))
            } else {
                spec.grammar.to_string()
            })
        }
        Cmd::Metagrammar {
            grammar,
            check,
            max_rep,
        } => {
            let g = read_grammar(grammar)?;
            let cfg = match max_rep {
                Some(k) => MetaConfig { max_rep: Some(*k) },
                None => MetaConfig::default(),
            };
            let meta = build_metagrammar_with(&g, cfg).map_err(Failure::domain)?;
            let Some(candidate) = check else {
                return Ok(if cli.json {
                    pretty(&json!({ "metagrammar": meta.grammar.to_string() }))
                } else {
                    meta.grammar.to_string()
                });
            };
            let text = read(candidate)?;
            match meta.parse_candidate(&text) {
                Ok(sub) => Ok(if cli.json {
                    pretty(&json!({ "member": true, "grammar": sub.to_string() }))
                } else {
                    "ok\n".into()
                }),
                Err(e) => {
                    let analysis = meta
                        .parser()
                        .map_err(Failure::domain)?
                        .longest_valid_prefix(&text);
                    Err(Failure {
                        code: 1,
                        message: format!("not a specialized grammar of {}: {e}", grammar.display()),
                        payload: Some(serde_json::to_value(&analysis).expect("json")),
                    })
                }
            }
        }
        Cmd::Prefix { grammar, string } => {
            let p = EarleyParser::new(&read_grammar(grammar)?).map_err(Failure::domain)?;
            Ok(pretty(&p.longest_valid_prefix(string)))
        }
        Cmd::Check { grammar, program } => {
            let p = EarleyParser::new(&read_grammar(grammar)?).map_err(Failure::domain)?;
            let y = read_program(program)?;
            match p.recognize(&y) {
                Recognition::Complete => Ok(if cli.json {
                    pretty(&json!({ "member": true }))
                } else {
                    "ok\n".into()
                }),
                r => Err(Failure {
                    code: 1,
                    message: match r {
                        Recognition::ViablePrefix => "program is incomplete".into(),
                        _ => "program is not in the language".to_string(),
                    },
                    payload: Some(serde_json::to_value(p.longest_valid_prefix(&y)).expect("json")),
                }),
            }
        }
        Cmd::Prompt {
            exemplars,
            query,
            grammar,
            mode,
        } => {
            let mut cfg = load_config(cli)?.prompt;
            if let Some(m) = mode {
                cfg.mode = (*m).into();
            }
            let g = grammar.as_deref().map(read_grammar).transpose()?;
            let ex = load_exemplars(&read(exemplars)?, g.as_ref()).map_err(Failure::domain)?;
            let prompt = build_prompt(&cfg, &ex, query, g.as_ref()).map_err(Failure::domain)?;
            Ok(if cli.json {
                pretty(&json!({ "prompt": prompt }))
            } else {
                prompt
            })
        }
        Cmd::Decode {
            mode,
            grammar,
            exemplars,
            query,
            provider,
        } => decode(cli, *mode, grammar, exemplars, query, provider),
        Cmd::Eval {
            corpus,
            methods,
            provider,
            workers,
            limit,
        } => {
            let c = corpus::load(Path::new(corpus)).map_err(Failure::domain)?;
            let methods = parse_methods(methods).map_err(Failure::usage)?;
            let mut cfg = load_config(cli)?;
            cfg.workers = workers.or(cfg.workers);
            cfg.limit = limit.or(cfg.limit);
            let gw = gateway(cli, provider, &c.grammar, Some(&c))?;
            let report = run_eval(&c, &methods, &gw, &cfg).map_err(Failure::domain)?;
            Ok(if cli.json {
                pretty(&report)
            } else {
                report.table()
            })
        }
    }
}

fn decode(
    cli: &Cli,
    mode: DecodeMode,
    grammar: &Path,
    exemplars: &Path,
    query: &str,
    provider: &ProviderArgs,
) -> Outcome {
    let g = read_grammar(grammar)?;
    let mut cfg = load_config(cli)?;
    cfg.prompt.mode = match mode {
        DecodeMode::Standard => PromptMode::Standard,
        DecodeMode::Grammar => PromptMode::Grammar,
    };
    let ex = load_exemplars(&read(exemplars)?, Some(&g)).map_err(Failure::domain)?;
    let prompt = build_prompt(&cfg.prompt, &ex, query, Some(&g)).map_err(Failure::domain)?;
    let gw = gateway(cli, provider, &g, None)?;
    let dc = &cfg.decode;

    let (grammar_out, program, trace): (Option<String>, String, DecodeTrace) =
        match (mode, dc.constraint) {
            (DecodeMode::Standard, Constraint::None) => {
                let (text, trace) = standard_decode(&prompt, &gw, dc).map_err(Failure::domain)?;
                let y = split_output(&text, &cfg.prompt)
                    .map_err(Failure::domain)?
                    .program_text;
                (None, y, trace)
            }
            (DecodeMode::Standard, _) => {
                let (y, trace) =
                    constrained_decode(&prompt, &g, &gw, dc).map_err(Failure::domain)?;
                (None, y, trace)
            }
            (DecodeMode::Grammar, Constraint::None) => {
                let (text, trace) = standard_decode(&prompt, &gw, dc).map_err(Failure::domain)?;
                let out = split_output(&text, &cfg.prompt).map_err(Failure::domain)?;
                (out.grammar_text, out.program_text, trace)
            }
            (DecodeMode::Grammar, _) => {
                let parser = EarleyParser::new(&g).map_err(Failure::domain)?;
                let meta =
                    build_metagrammar_with(&g, MetaConfig::default()).map_err(Failure::domain)?;
                let meta_parser = meta.parser().map_err(Failure::domain)?;
                let out = grammar_prompted_decode(
                    &prompt,
                    &cfg.prompt,
                    &parser,
                    &meta,
                    &meta_parser,
                    &gw,
                    dc,
                )
                .map_err(Failure::domain)?;
                (Some(out.grammar.to_string()), out.program, out.trace)
            }
        };
    Ok(if cli.json {
        pretty(&json!({ "grammar": grammar_out, "program": program, "trace": trace }))
    } else {
        let mut s = String::new();
        if let Some(gt) = grammar_out {
            s.push_str(gt.trim_end());
            s.push_str("\n\n");
        }
        s.push_str(&program);
        s.push('\n');
        s
    })
}
