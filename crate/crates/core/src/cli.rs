//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use crate::ast::{serialize, Ast, TokenSeq};
use crate::engine::{Engine, InferConfig, Mode};
use crate::error::{Error, Result};
use crate::eval::{evaluate_grid, to_csv, write_csv, EvalConfig, Method};
use crate::grammar::Grammar;
use crate::guider::{load_model, read_model, save_model, train, AdamConfig, TrainConfig};
use crate::reference::reference_parse;
use crate::sampler::{curriculum_schedule, extract_training_pairs, write_corpus, write_dataset, SampleBucket, Sampler};
use crate::search::{iddfs_parse_with, GrammarBounds, SearchConfig, SearchOutcome};

#[derive(Parser, Debug)]
#[command(name = "ngsi", version, about = "Neurally guided parsing for a small imperative language")]
#[command(args_override_self = true)]
pub struct Cli {
    /// File of `key=value` lines used as default flags; flags on the command line win
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice of the run
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for corpus-level work in gen and eval
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample programs into a corpus file and optionally a training-pair dataset
    Gen(GenArgs),
    /// Run curriculum training and write a model file
    Train(TrainArgs),
    /// Parse token lines from stdin with a trained guider
    Infer(InferArgs),
    /// Parse token lines from stdin with the exhaustive baseline
    Search(SearchArgs),
    /// Accuracy and latency over a depth/length grid
    Eval(EvalArgs),
    /// Parse token lines with the reference parser (or a model)
    Parse(ParseArgs),
    /// Print the rule table
    InspectGrammar,
    /// Print tensor names and shapes of a model file
    InspectModel(InspectModelArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// min_len:max_len:min_depth:max_depth
    #[arg(long, default_value = "5:15:1:9")]
    pub bucket: String,
    #[arg(long, short, default_value_t = 1000)]
    pub n: usize,
    /// Corpus output path (stdout when absent)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the training pairs of every program here
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Training log CSV
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Stages per curriculum cycle
    #[arg(long, default_value_t = 4)]
    pub stages: usize,
    #[arg(long, default_value_t = 2000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub beta1: f64,
    #[arg(long, default_value_t = 0.9)]
    pub beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub eps: f64,
    #[arg(long, default_value_t = 64)]
    pub embedding: usize,
    #[arg(long, default_value_t = 256)]
    pub hidden: usize,
    #[arg(long, default_value_t = 250)]
    pub eval_every: usize,
    /// Held-out programs per stage
    #[arg(long, default_value_t = 200)]
    pub heldout: usize,
    #[arg(long, default_value_t = 0.995)]
    pub early_stop: f64,
    #[arg(long)]
    pub no_early_stop: bool,
    #[arg(long, default_value_t = 4)]
    pub programs_per_batch: usize,
    #[arg(long, default_value_t = 2048)]
    pub pool: usize,
    #[arg(long)]
    pub verbose: bool,
}

#[derive(Args, Debug)]
pub struct EngineArgs {
    #[arg(long, default_value = "fallback")]
    pub mode: Mode,
    #[arg(long, default_value_t = 4)]
    pub beam_width: usize,
    #[arg(long, default_value_t = 64)]
    pub max_recursion_depth: usize,
    /// Skip the final reconstruction check
    #[arg(long)]
    pub no_verify: bool,
}

impl EngineArgs {
    fn config(&self) -> InferConfig {
        InferConfig {
            mode: self.mode,
            beam_width: self.beam_width,
            max_recursion_depth: self.max_recursion_depth,
            verify_reconstruction: !self.no_verify,
        }
    }
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub engine: EngineArgs,
    /// Nonterminal the input derives from
    #[arg(long, default_value = "Stmt")]
    pub nt: String,
    /// Read lines from this file instead of stdin
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SearchArgs {
    #[arg(long, default_value_t = 64)]
    pub max_depth: usize,
    /// Seconds per program
    #[arg(long, default_value_t = 60.0)]
    pub time_limit: f64,
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Comma-separated: ngsi, ngsi-greedy, ngsi-beam, search, oracle
    #[arg(long, default_value = "ngsi")]
    pub methods: String,
    /// Inclusive range `a..b`
    #[arg(long, default_value = "6..11")]
    pub depths: String,
    #[arg(long, default_value = "15..30")]
    pub lengths: String,
    #[arg(long, default_value_t = 1)]
    pub length_step: usize,
    #[arg(long, default_value_t = 100)]
    pub per_cell: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub beam_width: usize,
    #[arg(long, default_value_t = 64)]
    pub max_recursion_depth: usize,
    /// Search baseline seconds per program
    #[arg(long, default_value_t = 60.0)]
    pub time_limit: f64,
    #[arg(long, default_value_t = 64)]
    pub search_max_depth: usize,
    /// Leave the timing columns empty so that output is reproducible
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Args, Debug)]
pub struct ParseArgs {
    /// Use the reference recursive-descent parser
    #[arg(long)]
    pub oracle: bool,
    /// Use a trained guider in fallback mode instead
    #[arg(long, conflicts_with = "oracle")]
    pub model: Option<PathBuf>,
    #[arg(long, default_value = "Stmt")]
    pub nt: String,
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InspectModelArgs {
    #[arg(long)]
    pub model: PathBuf,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(Error::Io(e))
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

const VALUE_FLAGS: [&str; 3] = ["--config", "--seed", "--jobs"];

/// Moves the subcommand to the front and splices the config file's flags in
/// right after it, so that explicit flags (which come later) take precedence.
fn expand_config(args: Vec<OsString>) -> CliResult<Vec<OsString>> {
    let mut rest: Vec<OsString> = Vec::new();
    let mut config: Option<PathBuf> = None;
    let mut sub: Option<OsString> = None;
    let mut it = args.into_iter();
    let program = it.next().unwrap_or_else(|| "ngsi".into());
    while let Some(a) = it.next() {
        let s = a.to_string_lossy().into_owned();
        if s == "--config" {
            config = it.next().map(PathBuf::from);
            if config.is_none() {
                rest.push(a);
            }
        } else if let Some(v) = s.strip_prefix("--config=") {
            config = Some(PathBuf::from(v));
        } else if sub.is_none() && VALUE_FLAGS.contains(&s.as_str()) {
            rest.push(a);
            rest.extend(it.next());
        } else if sub.is_none() && !s.starts_with('-') {
            sub = Some(a);
        } else {
            rest.push(a);
        }
    }
    let mut out = vec![program];
    out.extend(sub);
    if let Some(path) = config {
        let text = fs::read_to_string(&path)
            .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Failure::Usage(format!("{}:{}: expected key=value", path.display(), i + 1)))?;
            let (k, v) = (k.trim().replace('_', "-"), v.trim());
            match v {
                "true" => out.push(format!("--{k}").into()),
                "false" => {}
                _ => {
                    out.push(format!("--{k}").into());
                    out.push(v.into());
                }
            }
        }
    }
    out.extend(rest);
    Ok(out)
}

fn parse_range(s: &str) -> CliResult<RangeInclusive<usize>> {
    let bad = || Failure::Usage(format!("bad range `{s}` (expected a..b)"));
    let (a, b) = match s.split_once("..") {
        Some((a, b)) => (a, b.trim_start_matches('=')),
        None => (s, s),
    };
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim().parse().map_err(|_| bad())?;
    if a > b {
        return Err(bad());
    }
    Ok(a..=b)
}

fn seconds(s: f64) -> CliResult<Duration> {
    Duration::try_from_secs_f64(s).map_err(|_| Failure::Usage(format!("bad time limit {s}")))
}

fn input_lines(path: &Option<PathBuf>, stdin: &mut dyn BufRead) -> CliResult<Vec<String>> {
    let lines: std::io::Result<Vec<String>> = match path {
        Some(p) => BufReader::new(fs::File::open(p).map_err(|e| Error::Io(e).at(p))?).lines().collect(),
        None => stdin.lines().collect(),
    };
    // corpus files carry the tree after a tab
    Ok(lines?
        .into_iter()
        .map(|l| l.split('\t').next().unwrap_or_default().trim().to_string())
        .filter(|l| !l.is_empty())
        .collect())
}

fn answer(g: &Grammar, out: &mut dyn Write, result: Result<Ast>) -> CliResult {
    match result {
        Ok(t) => writeln!(out, "{}", serialize(g, &t))?,
        Err(e) => writeln!(out, "ERROR {}", e.kind())?,
    }
    Ok(())
}

fn for_each_line(
    g: &Grammar,
    lines: &[String],
    out: &mut dyn Write,
    mut f: impl FnMut(&TokenSeq) -> Result<Ast>,
) -> CliResult {
    for line in lines {
        let result = TokenSeq::parse(g, line).and_then(|t| f(&t));
        answer(g, out, result)?;
    }
    Ok(())
}

fn dispatch(cli: &Cli, stdin: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let g = Grammar::builtin();
    match &cli.command {
        Command::Gen(a) => {
            let bucket = SampleBucket::parse(&a.bucket, cli.seed).map_err(|e| Failure::Usage(e.to_string()))?;
            let programs = Sampler::new(g, bucket)?.corpus(a.n, cli.jobs);
            match &a.out {
                Some(p) => write_corpus(g, p, &programs).map_err(|e| e.at(p))?,
                None => {
                    for (tokens, tree) in &programs {
                        writeln!(out, "{}\t{}", tokens.to_text(g), serialize(g, tree))?;
                    }
                }
            }
            if let Some(p) = &a.dataset {
                let pairs: Vec<_> = programs.iter().flat_map(|(_, t)| extract_training_pairs(g, t)).collect();
                write_dataset(g, p, &pairs).map_err(|e| e.at(p))?;
            }
        }
        Command::Train(a) => {
            if a.stages == 0 {
                return Err(Failure::Usage("--stages must be at least 1".into()));
            }
            let cfg = TrainConfig {
                seed: cli.seed,
                embedding: a.embedding,
                hidden: a.hidden,
                batch_size: a.batch_size,
                iterations_per_stage: a.iterations,
                adam: AdamConfig { lr: a.lr, beta1: a.beta1, beta2: a.beta2, eps: a.eps },
                eval_every: a.eval_every,
                heldout_programs: a.heldout,
                early_stop_accuracy: (!a.no_early_stop).then_some(a.early_stop),
                programs_per_batch: a.programs_per_batch,
                pool_capacity: a.pool,
                verbose: a.verbose,
            };
            let (model, log) = train(g, &curriculum_schedule(a.stages), &cfg)?;
            save_model(&model, &a.out).map_err(|e| e.at(&a.out))?;
            if let Some(p) = &a.log {
                fs::write(p, log.to_csv()).map_err(|e| Error::Io(e).at(p))?;
            }
            for (stage, acc) in log.stage_accuracy() {
                writeln!(err, "stage {stage}: held-out step accuracy {acc:.4}")?;
            }
        }
        Command::Infer(a) => {
            let nt = g.nonterminal_by_name(&a.nt)?;
            let model = load_model(&a.model, g).map_err(|e| e.at(&a.model))?;
            let engine = Engine::with_model(g, &model, a.engine.config())?;
            let lines = input_lines(&a.input, stdin)?;
            for_each_line(g, &lines, out, |t| engine.infer(t.as_slice(), nt))?;
        }
        Command::Search(a) => {
            let cfg = SearchConfig { max_depth: a.max_depth, time_limit: seconds(a.time_limit)? };
            let bounds = GrammarBounds::of(g);
            let lines = input_lines(&a.input, stdin)?;
            for_each_line(g, &lines, out, |t| match iddfs_parse_with(g, &bounds, t.as_slice(), g.start(), &cfg)?.0 {
                SearchOutcome::Found(tree) => Ok(tree),
                SearchOutcome::Timeout => Err(Error::Timeout(a.time_limit)),
                SearchOutcome::Exhausted => Err(Error::Unparseable { furthest: 0, found: None }),
            })?;
        }
        Command::Eval(a) => {
            let methods = a
                .methods
                .split(',')
                .map(|m| m.trim().parse::<Method>())
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Failure::Usage(e.to_string()))?;
            let model = match &a.model {
                Some(p) => Some(load_model(p, g).map_err(|e| e.at(p))?),
                None if methods.iter().any(Method::needs_model) => {
                    return Err(Failure::Usage("--model is required for ngsi methods".into()))
                }
                None => None,
            };
            if a.length_step == 0 {
                return Err(Failure::Usage("--length-step must be positive".into()));
            }
            let cfg = EvalConfig {
                methods,
                depths: parse_range(&a.depths)?,
                lengths: parse_range(&a.lengths)?.step_by(a.length_step).collect(),
                per_cell: a.per_cell,
                seed: cli.seed,
                infer: InferConfig {
                    beam_width: a.beam_width,
                    max_recursion_depth: a.max_recursion_depth,
                    ..InferConfig::default()
                },
                search: SearchConfig { max_depth: a.search_max_depth, time_limit: seconds(a.time_limit)? },
                jobs: cli.jobs,
                timing: !a.no_timing,
            };
            let records = evaluate_grid(g, model.as_ref(), &cfg)?;
            match &a.out {
                Some(p) => write_csv(&records, p).map_err(|e| e.at(p))?,
                None => out.write_all(to_csv(&records).as_bytes())?,
            }
        }
        Command::Parse(a) => {
            let nt = g.nonterminal_by_name(&a.nt)?;
            let lines = input_lines(&a.input, stdin)?;
            match (&a.model, a.oracle) {
                (None, true) => for_each_line(g, &lines, out, |t| reference_parse(g, t.as_slice(), nt))?,
                (Some(p), false) => {
                    let model = load_model(p, g).map_err(|e| e.at(p))?;
                    let engine = Engine::with_model(g, &model, InferConfig::default())?;
                    for_each_line(g, &lines, out, |t| engine.infer(t.as_slice(), nt))?;
                }
                _ => return Err(Failure::Usage("parse needs --oracle or --model".into())),
            }
        }
        Command::InspectGrammar => out.write_all(g.rule_table().as_bytes())?,
        Command::InspectModel(a) => inspect_model(g, &a.model, out)?,
    }
    Ok(())
}

fn inspect_model(g: &Grammar, path: &Path, out: &mut dyn Write) -> CliResult {
    let file = fs::File::open(path).map_err(|e| Error::Io(e).at(path))?;
    let m = read_model(BufReader::new(file))?;
    writeln!(out, "grammar_fingerprint\t{:016x}", m.grammar_fingerprint)?;
    writeln!(out, "vocab_fingerprint\t{:016x}", m.vocab_fingerprint)?;
    writeln!(out, "matches_builtin_grammar\t{}", m.check_grammar(g).is_ok())?;
    for (name, shape, _) in m.params.tensors() {
        let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
        writeln!(out, "{name}\t{}", dims.join("x"))?;
    }
    writeln!(out, "parameters\t{}", m.params.parameter_count())?;
    Ok(())
}

/// Runs the program on `args` (including the program name) and returns the
/// exit code: 0 on success, 1 on a usage error, 2 on a runtime error.
pub fn run<I, T>(args: I, stdin: &mut dyn BufRead, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args = match expand_config(args.into_iter().map(Into::into).collect()) {
        Ok(a) => a,
        Err(Failure::Usage(msg)) | Err(Failure::Runtime(Error::InvalidArgument(msg))) => {
            let _ = writeln!(stderr, "error: {msg}");
            return 1;
        }
        Err(Failure::Runtime(e)) => {
            let _ = writeln!(stderr, "error: {e}");
            return 2;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = stdout.write_all(text.as_bytes());
                    0
                }
                _ => {
                    let _ = stderr.write_all(text.as_bytes());
                    1
                }
            };
        }
    };
    let _ = writeln!(stderr, "config: {cli:?}");
    match dispatch(&cli, stdin, stdout, stderr) {
        Ok(()) => match stdout.flush() {
            Ok(()) => 0,
            Err(e) => {
                let _ = writeln!(stderr, "error: {e}");
                2
            }
        },
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            1
        }
        Err(Failure::Runtime(e)) => {
            let _ = writeln!(stderr, "error: {e}");
            2
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str], input: &str) -> (i32, String, String) {
        let mut stdin = input.as_bytes();
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(std::iter::once("ngsi").chain(args.iter().copied()), &mut stdin, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn inspect_grammar_lists_every_rule() {
        let (code, out, _) = call(&["inspect-grammar"], "");
        assert_eq!(code, 0);
        assert_eq!(out.lines().count(), Grammar::builtin().rule_count());
    }

    #[test]
    fn unknown_flag_is_a_usage_error() {
        let (code, _, err) = call(&["gen", "--frobnicate"], "");
        assert_eq!(code, 1);
        assert!(err.contains("Usage"));
        assert_eq!(call(&[], "").0, 1);
    }

    #[test]
    fn oracle_parse_reports_errors_per_line() {
        let (code, out, _) = call(&["parse", "--oracle"], "v0 = 1 ;\nv0 = = ;\n\nv0 = x ;\n");
        assert_eq!(code, 0);
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines, ["(S2 (A1 (V1) (E3 (T2 (F3 (C2))))))", "ERROR unparseable", "ERROR unknown-token"]);
        assert_eq!(call(&["parse"], "v0 = 1 ;").0, 1);
    }

    #[test]
    fn missing_model_is_a_runtime_error() {
        let (code, _, err) = call(&["infer", "--model", "/nonexistent/model.bin"], "v0 = 1 ;");
        assert_eq!(code, 2);
        let last = err.lines().last().unwrap();
        assert!(last.starts_with("error: /nonexistent/model.bin: "), "{last}");
    }

    #[test]
    fn config_file_supplies_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        fs::write(&cfg, "# comment\nn = 3\nbucket=5:9:1:9\nseed=4\n").unwrap();
        let c = cfg.to_str().unwrap();
        let (code, from_cfg, _) = call(&["--config", c, "gen"], "");
        assert_eq!(code, 0);
        assert_eq!(from_cfg.lines().count(), 3);
        let (_, explicit, _) = call(&["gen", "--n", "3", "--bucket", "5:9:1:9", "--seed", "4"], "");
        assert_eq!(from_cfg, explicit);
        let (_, overridden, _) = call(&["--seed", "5", "gen", "--config", c, "--n", "2"], "");
        let (_, direct, _) = call(&["gen", "--n", "2", "--bucket", "5:9:1:9", "--seed", "5"], "");
        assert_eq!(overridden, direct);
    }

    #[test]
    fn ranges() {
        assert_eq!(parse_range("6..11").ok(), Some(6..=11));
        assert_eq!(parse_range("7").ok(), Some(7..=7));
        assert_eq!(parse_range("3..=4").ok(), Some(3..=4));
        assert!(parse_range("9..2").is_err());
    }
}
